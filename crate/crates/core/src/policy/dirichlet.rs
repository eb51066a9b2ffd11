//! Dirichlet distribution over kernel rows.
//!
//! Samples are produced in log space: a Gamma(a) variate is generated as
//! Gamma(a + 1) * U^(1/a), whose logarithm stays finite even when `a` is
//! small enough that the variate itself would underflow.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

use super::grid::DistortionGrid;

/// One sampled kernel row together with its density under `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletAction {
    pub alpha: Vec<f64>,
    pub sampled_simplex: Vec<f64>,
    /// Log of each simplex entry, exact even where the entry underflows.
    pub log_simplex: Vec<f64>,
    pub log_density: f64,
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::Domain("empty concentration vector".into()));
    }
    if let Some((k, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("concentration {k} is {a}, must be positive")));
    }
    Ok(())
}

pub fn sample_kernel_row<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<DirichletAction> {
    check_alpha(alpha)?;
    let log_g: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            let g: f64 = Gamma::new(a + 1.0, 1.0)
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(rng);
            // 1 - U lies in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            Ok(g.ln() + u.ln() / a)
        })
        .collect::<Result<_>>()?;
    let log_simplex = log_normalize(&log_g);
    let sampled_simplex = log_simplex.iter().map(|l| l.exp()).collect();
    let log_density = log_density(alpha, &log_simplex);
    Ok(DirichletAction {
        alpha: alpha.to_vec(),
        sampled_simplex,
        log_simplex,
        log_density,
    })
}

fn log_normalize(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logs.iter().map(|l| l - lse).collect()
}

/// Log-density of a simplex point given through its logarithms.
pub fn log_density(alpha: &[f64], log_simplex: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let norm = ln_gamma(total) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    norm + alpha.iter().zip(log_simplex).map(|(a, l)| (a - 1.0) * l).sum::<f64>()
}

/// Gradient of [`log_density`] with respect to each concentration.
pub fn log_density_grad(alpha: &[f64], log_simplex: &[f64]) -> Vec<f64> {
    let psi_total = digamma(alpha.iter().sum());
    alpha
        .iter()
        .zip(log_simplex)
        .map(|(&a, l)| psi_total - digamma(a) + l)
        .collect()
}

/// Dirichlet mean `alpha / sum(alpha)`; the marginal law of a cell drawn
/// from a sampled row.
pub fn mean_kernel_row(alpha: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let total: f64 = alpha.iter().sum();
    Ok(alpha.iter().map(|a| a / total).collect())
}

/// A shared datum: grid cell plus the `(velocity, spacing)` it stands for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub cell: usize,
    pub v: f64,
    pub s: f64,
}

/// Categorical draw of a grid cell from a kernel row.
pub fn emit_distorted<R: Rng + ?Sized>(kernel_row: &[f64], grid: &DistortionGrid, rng: &mut R) -> Emission {
    let total: f64 = kernel_row.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut cell = kernel_row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    for (k, p) in kernel_row.iter().enumerate() {
        cum += p;
        if target < cum {
            cell = k;
            break;
        }
    }
    let (v, s) = grid.cell(cell);
    Emission { cell, v, s }
}
