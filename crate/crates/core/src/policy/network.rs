//! Forward and backward passes of the encoder, actor and critic.
//!
//! Belief summary: `[mean(4), relu(W_enc * mgf + b_enc)]`.
//! Actor: `[summary, h(theta, x)] -> relu dense -> softplus dense -> alpha`.
//! Critic: `summary -> relu dense -> linear scalar`.

use crate::belief::ParticleBelief;
use crate::dynamics::{HdvState, ThetaParams};
use crate::error::{Error, Result};
use crate::exec::Exec;

use super::dirichlet::{log_density, log_density_grad};
use super::mgf::{MgfFeatures, PARTICLE_DIM};
use super::tensor::{dot, relu_in_place, sigmoid, softplus};
use super::PolicyParams;

/// Rows per batched matrix product. Fixed so results do not depend on the
/// thread count.
const BLOCK_ROWS: usize = 64;

struct Summary {
    enc_pre: Vec<f64>,
    values: Vec<f64>,
}

fn summarize(features: &MgfFeatures, params: &PolicyParams) -> Result<Summary> {
    if features.mgf.len() != params.shape.n_features {
        return Err(Error::Domain(format!(
            "{} MGF features for an encoder expecting {}",
            features.mgf.len(),
            params.shape.n_features
        )));
    }
    let mut enc_pre = vec![0.0; params.shape.n_features];
    params.encoder.forward(&features.mgf, &mut enc_pre);
    let mut values = Vec::with_capacity(params.shape.summary_dim());
    values.extend_from_slice(&features.mean);
    values.extend(enc_pre.iter().map(|z| z.max(0.0)));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite belief summary".into()));
    }
    Ok(Summary { enc_pre, values })
}

/// Concentrations for a batch of `(theta, x)` inputs, row-major
/// `inputs.len() x n_cells`. Each input is the standardized `(m, n, s, v)`.
pub fn alpha_rows(
    features: &MgfFeatures,
    inputs: &[[f64; PARTICLE_DIM]],
    params: &PolicyParams,
    exec: Exec,
) -> Result<Vec<f64>> {
    let summary = summarize(features, params)?;
    let hidden = params.shape.hidden;
    let cells = params.shape.n_cells;
    let in_dim = params.shape.actor_input_dim();
    let sd = params.shape.summary_dim();
    let w1 = &params.actor_hidden.weight.data;
    let b1 = &params.actor_hidden.bias.data;
    let w2 = &params.actor_out.weight.data;
    let b2 = &params.actor_out.bias.data;
    let floor = params.alpha_floor;

    // the summary part of the first layer is shared by every row
    let base: Vec<f64> = (0..hidden)
        .map(|o| b1[o] + dot(&w1[o * in_dim..o * in_dim + sd], &summary.values))
        .collect();

    let mut out = vec![0.0; inputs.len() * cells];
    exec.for_each_block(&mut out, cells, BLOCK_ROWS, |row0, chunk| {
        let rows = chunk.len() / cells;
        let mut h = vec![0.0; rows * hidden];
        for r in 0..rows {
            let x = &inputs[row0 + r];
            for o in 0..hidden {
                let w = &w1[o * in_dim + sd..(o + 1) * in_dim];
                h[r * hidden + o] = (base[o] + dot(w, x)).max(0.0);
            }
        }
        // chunk = h * W2^T, W2 stored [cells, hidden]
        unsafe {
            matrixmultiply::dgemm(
                rows,
                hidden,
                cells,
                1.0,
                h.as_ptr(),
                hidden as isize,
                1,
                w2.as_ptr(),
                1,
                hidden as isize,
                0.0,
                chunk.as_mut_ptr(),
                cells as isize,
                1,
            );
        }
        for row in chunk.chunks_mut(cells) {
            for (a, b) in row.iter_mut().zip(b2) {
                *a = softplus(*a + b).max(floor);
            }
        }
    });
    if out.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric("non-finite Dirichlet concentration".into()));
    }
    Ok(out)
}

/// Dirichlet concentrations for one `(theta, x)`.
pub fn actor_forward(
    features: &MgfFeatures,
    theta: &ThetaParams,
    x: &HdvState,
    params: &PolicyParams,
) -> Result<Vec<f64>> {
    let h = params.standardizer.features(theta, x);
    alpha_rows(features, &[h], params, Exec::Sequential)
}

/// Mean kernel row `alpha / sum(alpha)` for every particle of `belief`,
/// row-major `belief.len() x n_cells`.
pub fn kernel_rows(
    features: &MgfFeatures,
    belief: &ParticleBelief,
    params: &PolicyParams,
    exec: Exec,
) -> Result<Vec<f64>> {
    let inputs: Vec<[f64; PARTICLE_DIM]> = (0..belief.len())
        .map(|i| {
            params
                .standardizer
                .features(belief.theta_of(i), &belief.particles()[i].state)
        })
        .collect();
    let mut rows = alpha_rows(features, &inputs, params, exec)?;
    for row in rows.chunks_mut(params.shape.n_cells) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|a| *a /= total);
    }
    Ok(rows)
}

pub fn critic_forward(features: &MgfFeatures, params: &PolicyParams) -> Result<f64> {
    let summary = summarize(features, params)?;
    let mut h = vec![0.0; params.shape.hidden];
    params.critic_hidden.forward(&summary.values, &mut h);
    relu_in_place(&mut h);
    let mut v = [0.0];
    params.critic_out.forward(&h, &mut v);
    if !v[0].is_finite() {
        return Err(Error::Numeric("non-finite critic value".into()));
    }
    Ok(v[0])
}

fn encoder_backward(
    features: &MgfFeatures,
    summary: &Summary,
    d_summary: &[f64],
    params: &PolicyParams,
    grads: &mut PolicyParams,
) {
    let d_pre: Vec<f64> = d_summary[PARTICLE_DIM..]
        .iter()
        .zip(&summary.enc_pre)
        .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
        .collect();
    let mut d_mgf = vec![0.0; params.shape.n_features];
    params
        .encoder
        .backward(&features.mgf, &d_pre, &mut grads.encoder, Some(&mut d_mgf));
    for (j, d) in d_mgf.iter().enumerate() {
        for k in 0..PARTICLE_DIM {
            grads.locations.data[j * PARTICLE_DIM + k] += d * features.mgf_jacobian[j][k];
        }
    }
}

/// Accumulates the gradient of `-coeff * ln Dir(simplex | alpha(params))`
/// into `grads` (actor and encoder tensors) and returns the loss.
pub fn actor_backward(
    features: &MgfFeatures,
    theta: &ThetaParams,
    x: &HdvState,
    params: &PolicyParams,
    log_simplex: &[f64],
    coeff: f64,
    grads: &mut PolicyParams,
) -> Result<f64> {
    let summary = summarize(features, params)?;
    let mut input = summary.values.clone();
    input.extend_from_slice(&params.standardizer.features(theta, x));

    let mut pre = vec![0.0; params.shape.hidden];
    params.actor_hidden.forward(&input, &mut pre);
    let mut h = pre.clone();
    relu_in_place(&mut h);
    let mut z = vec![0.0; params.shape.n_cells];
    params.actor_out.forward(&h, &mut z);
    let alpha: Vec<f64> = z.iter().map(|z| softplus(*z).max(params.alpha_floor)).collect();
    let loss = -coeff * log_density(&alpha, log_simplex);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite actor loss".into()));
    }

    let d_alpha = log_density_grad(&alpha, log_simplex);
    let dz: Vec<f64> = z
        .iter()
        .zip(&d_alpha)
        .map(|(z, g)| {
            if softplus(*z) > params.alpha_floor {
                -coeff * g * sigmoid(*z)
            } else {
                0.0
            }
        })
        .collect();
    let mut dh = vec![0.0; params.shape.hidden];
    params.actor_out.backward(&h, &dz, &mut grads.actor_out, Some(&mut dh));
    let d_pre: Vec<f64> = dh
        .iter()
        .zip(&pre)
        .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
        .collect();
    let mut d_input = vec![0.0; input.len()];
    params
        .actor_hidden
        .backward(&input, &d_pre, &mut grads.actor_hidden, Some(&mut d_input));
    encoder_backward(
        features,
        &summary,
        &d_input[..params.shape.summary_dim()],
        params,
        grads,
    );
    Ok(loss)
}

/// Accumulates the gradient of `(target - V)^2` into `grads` (critic and
/// encoder tensors). Returns `(loss, value)`.
pub fn critic_backward(
    features: &MgfFeatures,
    params: &PolicyParams,
    target: f64,
    grads: &mut PolicyParams,
) -> Result<(f64, f64)> {
    let summary = summarize(features, params)?;
    let mut pre = vec![0.0; params.shape.hidden];
    params.critic_hidden.forward(&summary.values, &mut pre);
    let mut h = pre.clone();
    relu_in_place(&mut h);
    let mut v = [0.0];
    params.critic_out.forward(&h, &mut v);
    let delta = target - v[0];
    let loss = delta * delta;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite critic loss".into()));
    }

    let mut dh = vec![0.0; params.shape.hidden];
    params
        .critic_out
        .backward(&h, &[-2.0 * delta], &mut grads.critic_out, Some(&mut dh));
    let d_pre: Vec<f64> = dh
        .iter()
        .zip(&pre)
        .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
        .collect();
    let mut d_summary = vec![0.0; summary.values.len()];
    params
        .critic_hidden
        .backward(&summary.values, &d_pre, &mut grads.critic_hidden, Some(&mut d_summary));
    encoder_backward(features, &summary, &d_summary, params, grads);
    Ok((loss, v[0]))
}
