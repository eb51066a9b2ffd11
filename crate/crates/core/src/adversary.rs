//! Inference attacks on the driver parameters and the privacy metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{assimilate, FilterConfig, ParticleBelief};
use crate::dynamics::{desired_velocity, FvdThresholds, HdvState, Scenario, ThetaParams};
use crate::error::Result;
use crate::exec::Exec;
use crate::policy::{kernel_rows, mgf_features, PolicyParams};

/// Recursive least squares with exponential forgetting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsState {
    pub theta_hat: [f64; 2],
    pub p: [[f64; 2]; 2],
    pub forgetting: f64,
    pub delta: f64,
}

impl Default for RlsState {
    fn default() -> Self {
        RlsState::new(0.99, 1.0)
    }
}

impl RlsState {
    /// Zero estimate and `P = I / delta`.
    pub fn new(forgetting: f64, delta: f64) -> Self {
        RlsState {
            theta_hat: [0.0; 2],
            p: [[1.0 / delta, 0.0], [0.0, 1.0 / delta]],
            forgetting,
            delta,
        }
    }

    pub fn update(&mut self, x: [f64; 2], y: f64) {
        *self = rls_update(self, x, y);
    }
}

pub fn rls_update(state: &RlsState, x: [f64; 2], y: f64) -> RlsState {
    let p = &state.p;
    let lam = state.forgetting;
    let px = [p[0][0] * x[0] + p[0][1] * x[1], p[1][0] * x[0] + p[1][1] * x[1]];
    let denom = lam + x[0] * px[0] + x[1] * px[1];
    let k = [px[0] / denom, px[1] / denom];
    let err = y - (x[0] * state.theta_hat[0] + x[1] * state.theta_hat[1]);
    let theta_hat = [state.theta_hat[0] + k[0] * err, state.theta_hat[1] + k[1] * err];
    // x^T P
    let xp = [x[0] * p[0][0] + x[1] * p[1][0], x[0] * p[0][1] + x[1] * p[1][1]];
    let mut np = [[0.0; 2]; 2];
    for (i, row) in np.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (p[i][j] - k[i] * xp[j]) / lam;
        }
    }
    let off = 0.5 * (np[0][1] + np[1][0]);
    np[0][1] = off;
    np[1][0] = off;
    RlsState {
        theta_hat,
        p: np,
        ..*state
    }
}

/// What an eavesdropper sees of one sharing instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackObservation {
    pub v_hdv: f64,
    pub s_hdv: f64,
    pub v_cav: f64,
    pub dt: f64,
}

/// Regressor and target of the FVD law from two consecutive observations:
/// `x = (V(s) - v, v_cav - v)` at the earlier one, `y` the finite-difference
/// acceleration.
pub fn rls_regressor(prev: &AttackObservation, curr: &AttackObservation, thr: &FvdThresholds) -> ([f64; 2], f64) {
    let x = [desired_velocity(prev.s_hdv, thr) - prev.v_hdv, prev.v_cav - prev.v_hdv];
    (x, (curr.v_hdv - prev.v_hdv) / curr.dt)
}

/// Root mean square error over the two parameters.
pub fn estimation_rmse(theta_hat: [f64; 2], theta: &ThetaParams) -> f64 {
    let dm = theta_hat[0] - theta.m;
    let dn = theta_hat[1] - theta.n;
    ((dm * dm + dn * dn) / 2.0).sqrt()
}

pub fn success_rate(sigma_e: f64) -> f64 {
    (-sigma_e).exp()
}

/// Observation-noise scales of the attacker reading true data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsNoise {
    pub sigma_v: f64,
    pub sigma_s: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        ObsNoise {
            sigma_v: 0.3,
            sigma_s: 0.3,
        }
    }
}

/// `exp(-2 (e_v^2 / sigma_v^2 + e_s^2 / sigma_s^2))`.
pub fn real_likelihood(x: &HdvState, obs: (f64, f64), noise: &ObsNoise) -> f64 {
    let ev = obs.0 - x.v;
    let es = obs.1 - x.s;
    (-2.0 * (ev * ev / (noise.sigma_v * noise.sigma_v) + es * es / (noise.sigma_s * noise.sigma_s))).exp()
}

/// Reweights by the true-data likelihood of `obs = (v, s)`. Degenerate
/// evidence resets the weights to uniform.
pub fn bayes_attack_real_step(belief: &mut ParticleBelief, obs: (f64, f64), noise: &ObsNoise) -> Result<()> {
    let lik: Vec<f64> = belief
        .particles()
        .iter()
        .map(|p| real_likelihood(&p.state, obs, noise))
        .collect();
    belief.reweight_or_reset(&lik)?;
    Ok(())
}

/// Likelihood of the shared `cell` for every particle under the public
/// policy: the particle's mean kernel row evaluated at that cell.
pub fn filtered_likelihoods(
    belief: &ParticleBelief,
    params: &PolicyParams,
    cell: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    let features = mgf_features(belief, params)?;
    let rows = kernel_rows(&features, belief, params, exec)?;
    let cells = params.shape.n_cells;
    Ok((0..belief.len()).map(|i| rows[i * cells + cell]).collect())
}

/// A full filter cycle of either attacker: reweight, propagate with the
/// observed CAV velocity, resample when needed.
#[derive(Debug, Clone)]
pub struct BayesAttacker<'a> {
    pub scenario: &'a Scenario,
    pub filter: &'a FilterConfig,
    pub exec: Exec,
}

impl BayesAttacker<'_> {
    pub fn observe_real<R: Rng + ?Sized>(
        &self,
        belief: &mut ParticleBelief,
        obs: (f64, f64),
        v_cav: f64,
        noise: &ObsNoise,
        rng: &mut R,
    ) -> Result<()> {
        let lik: Vec<f64> = belief
            .particles()
            .iter()
            .map(|p| real_likelihood(&p.state, obs, noise))
            .collect();
        assimilate(belief, &lik, self.scenario, v_cav, self.filter, rng, self.exec)?;
        Ok(())
    }

    pub fn observe_filtered<R: Rng + ?Sized>(
        &self,
        belief: &mut ParticleBelief,
        cell: usize,
        v_cav: f64,
        params: &PolicyParams,
        rng: &mut R,
    ) -> Result<()> {
        let lik = filtered_likelihoods(belief, params, cell, self.exec)?;
        assimilate(belief, &lik, self.scenario, v_cav, self.filter, rng, self.exec)?;
        Ok(())
    }
}

/// RLS attack over a stream of observations. Returns the estimate after
/// every transition (one fewer than observations).
pub fn rls_attack(stream: &[AttackObservation], thr: &FvdThresholds, init: RlsState) -> Vec<[f64; 2]> {
    let mut rls = init;
    stream
        .windows(2)
        .map(|w| {
            let (x, y) = rls_regressor(&w[0], &w[1], thr);
            rls.update(x, y);
            rls.theta_hat
        })
        .collect()
}
