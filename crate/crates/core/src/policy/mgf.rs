use crate::belief::ParticleBelief;
use crate::error::{Error, Result};

use super::PolicyParams;

/// Per-particle feature vector `h = (m, n, s, v)`, standardized.
pub const PARTICLE_DIM: usize = 4;

/// Largest exponent accepted inside the MGF sum.
const MAX_EXPONENT: f64 = 700.0;

/// Permutation-invariant summary of a particle belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfFeatures {
    /// Weighted particle mean (standardized).
    pub mean: [f64; PARTICLE_DIM],
    /// `M(v_j) = sum_i w_i exp(v_j . h_i)` for every learned location.
    pub mgf: Vec<f64>,
    /// `dM(v_j)/dv_j = sum_i w_i exp(v_j . h_i) h_i`; lets the encoder be
    /// trained without keeping the particle set around.
    pub mgf_jacobian: Vec<[f64; PARTICLE_DIM]>,
}

pub fn mgf_features(belief: &ParticleBelief, params: &PolicyParams) -> Result<MgfFeatures> {
    let m = params.shape.n_features;
    let locs: Vec<&[f64]> = params.locations.data.chunks(PARTICLE_DIM).collect();
    let mut mean = [0.0; PARTICLE_DIM];
    let mut mgf = vec![0.0; m];
    let mut jac = vec![[0.0; PARTICLE_DIM]; m];
    for (i, (p, w)) in belief.particles().iter().zip(belief.weights()).enumerate() {
        if *w == 0.0 {
            continue;
        }
        let h = params.standardizer.features(belief.theta_of(i), &p.state);
        for k in 0..PARTICLE_DIM {
            mean[k] += w * h[k];
        }
        for j in 0..m {
            let e: f64 = locs[j].iter().zip(&h).map(|(a, b)| a * b).sum();
            if e > MAX_EXPONENT {
                return Err(Error::Numeric(format!("MGF exponent {e} overflows")));
            }
            let term = w * e.exp();
            mgf[j] += term;
            for k in 0..PARTICLE_DIM {
                jac[j][k] += term * h[k];
            }
        }
    }
    Ok(MgfFeatures {
        mean,
        mgf,
        mgf_jacobian: jac,
    })
}
