//! Weighted particle approximation of the joint posterior over the driver
//! parameters and the HDV state.
//!
//! Each particle carries an index into the belief's theta grid rather than
//! the parameter values themselves, so resampling can only ever duplicate
//! grid values.

pub mod exact;

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{hdv_transition, HdvState, Scenario, ThetaParams};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub use exact::{exact_belief_update, DiscreteBelief, EmissionTable, TransitionTable};

/// Tolerance on the weight normalization invariant.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Header of the columnar belief snapshot format.
pub const SNAPSHOT_HEADER: &str = "theta_m,theta_n,s,v,weight";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle<S = HdvState> {
    /// Index into [`ParticleBelief::thetas`].
    pub theta: usize,
    pub state: S,
}

#[derive(Debug, Clone)]
pub struct ParticleBelief<S = HdvState> {
    thetas: Vec<ThetaParams>,
    particles: Vec<Particle<S>>,
    weights: Vec<f64>,
    n_eff_threshold: f64,
    degenerate_events: u64,
    resamples: u64,
}

impl<S: Clone + Send + Sync> ParticleBelief<S> {
    /// One particle per (theta, state, copy) with uniform weights and the
    /// resampling threshold at a third of the particle count.
    pub fn init(theta_grid: &[ThetaParams], state_grid: &[S], count_per_cell: usize) -> Result<Self> {
        if theta_grid.is_empty() || state_grid.is_empty() || count_per_cell == 0 {
            return Err(Error::Config(format!(
                "belief initialization needs nonempty grids (thetas: {}, states: {}, copies: {})",
                theta_grid.len(),
                state_grid.len(),
                count_per_cell
            )));
        }
        let mut particles = Vec::with_capacity(theta_grid.len() * state_grid.len() * count_per_cell);
        for theta in 0..theta_grid.len() {
            for state in state_grid {
                for _ in 0..count_per_cell {
                    particles.push(Particle {
                        theta,
                        state: state.clone(),
                    });
                }
            }
        }
        let n = particles.len();
        Ok(ParticleBelief {
            thetas: theta_grid.to_vec(),
            particles,
            weights: vec![1.0 / n as f64; n],
            n_eff_threshold: n as f64 / 3.0,
            degenerate_events: 0,
            resamples: 0,
        })
    }

    pub fn from_parts(thetas: Vec<ThetaParams>, particles: Vec<Particle<S>>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} particles but {} weights",
                particles.len(),
                weights.len()
            )));
        }
        if let Some(p) = particles.iter().find(|p| p.theta >= thetas.len()) {
            return Err(Error::Config(format!(
                "particle theta index {} outside grid of {}",
                p.theta,
                thetas.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!(
                "weights must be nonnegative and sum to 1 (sum = {total})"
            )));
        }
        let n = particles.len();
        Ok(ParticleBelief {
            thetas,
            particles,
            weights,
            n_eff_threshold: n as f64 / 3.0,
            degenerate_events: 0,
            resamples: 0,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.n_eff_threshold = threshold;
        self
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn thetas(&self) -> &[ThetaParams] {
        &self.thetas
    }

    pub fn particles(&self) -> &[Particle<S>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_eff_threshold(&self) -> f64 {
        self.n_eff_threshold
    }

    pub fn theta_of(&self, i: usize) -> &ThetaParams {
        &self.thetas[self.particles[i].theta]
    }

    /// Number of times evidence was degenerate and weights were reset.
    pub fn degenerate_events(&self) -> u64 {
        self.degenerate_events
    }

    pub fn resamples(&self) -> u64 {
        self.resamples
    }

    /// Moves every particle with `transition(theta, state, noise)`. The noise
    /// for all particles is drawn sequentially from `rng` first, so the
    /// result does not depend on `exec`. Weights are untouched.
    pub fn propagate_with<R, N, D, F>(&mut self, rng: &mut R, mut draw: D, transition: F, exec: Exec)
    where
        R: Rng + ?Sized,
        N: Send + Sync,
        D: FnMut(&mut R) -> N,
        F: Fn(&ThetaParams, &S, &N) -> S + Sync + Send,
    {
        let noise: Vec<N> = (0..self.particles.len()).map(|_| draw(rng)).collect();
        let thetas = &self.thetas;
        exec.for_each_mut(&mut self.particles, |i, p| {
            p.state = transition(&thetas[p.theta], &p.state, &noise[i]);
        });
    }

    /// Multiplies each weight by its likelihood and renormalizes.
    ///
    /// Fails with [`Error::DegenerateEvidence`] (weights untouched) when the
    /// weighted likelihood mass is zero.
    pub fn reweight(&mut self, likelihoods: &[f64]) -> Result<()> {
        if likelihoods.len() != self.weights.len() {
            return Err(Error::Domain(format!(
                "{} likelihoods for {} particles",
                likelihoods.len(),
                self.weights.len()
            )));
        }
        if let Some(bad) = likelihoods.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::Domain(format!("invalid likelihood {bad}")));
        }
        let updated: Vec<f64> = self.weights.iter().zip(likelihoods).map(|(w, l)| w * l).collect();
        let total: f64 = updated.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateEvidence);
        }
        self.weights = updated.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    pub fn reweight_with<F>(&mut self, likelihood: F, exec: Exec) -> Result<()>
    where
        F: Fn(&ThetaParams, &S) -> f64 + Sync + Send,
    {
        let thetas = &self.thetas;
        let particles = &self.particles;
        let l = exec.map_indexed(particles.len(), |i| {
            likelihood(&thetas[particles[i].theta], &particles[i].state)
        });
        self.reweight(&l)
    }

    /// [`reweight`](Self::reweight), but degenerate evidence resets the
    /// weights to uniform and bumps [`degenerate_events`](Self::degenerate_events).
    /// Returns whether the reset happened.
    pub fn reweight_or_reset(&mut self, likelihoods: &[f64]) -> Result<bool> {
        match self.reweight(likelihoods) {
            Ok(()) => Ok(false),
            Err(Error::DegenerateEvidence) => {
                let n = self.weights.len();
                self.weights.fill(1.0 / n as f64);
                self.degenerate_events += 1;
                log::debug!("degenerate evidence, weights reset to uniform");
                Ok(true)
            }
            Err(e) => Err(e),
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Systematic resampling when the effective sample size is at or below
    /// the threshold. Returns whether a resample happened.
    pub fn maybe_resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.effective_sample_size() > self.n_eff_threshold {
            return false;
        }
        self.resample(rng);
        true
    }

    /// Draws N particles proportionally to weight with a single uniform
    /// offset and resets the weights to 1/N.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let idx = systematic_indices(&self.weights, rng.random::<f64>());
        self.particles = idx.iter().map(|&i| self.particles[i].clone()).collect();
        let n = self.particles.len();
        self.weights.fill(1.0 / n as f64);
        self.resamples += 1;
    }

    /// Posterior mass per theta grid entry.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.thetas.len()];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            out[p.theta] += w;
        }
        out
    }

    pub fn weighted_mean<F: Fn(&Particle<S>) -> f64>(&self, f: F) -> f64 {
        self.particles.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Index of the most probable theta.
    pub fn map_theta(&self) -> usize {
        let marg = self.theta_marginal();
        let mut best = 0;
        for (i, p) in marg.iter().enumerate() {
            if *p > marg[best] {
                best = i;
            }
        }
        best
    }
}

/// Indices selected by systematic resampling with offset `u` in [0, 1).
///
/// Zero-weight entries are never selected.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(n - 1);
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights[0];
    for k in 0..n {
        let pos = (u + k as f64) * step;
        while cum <= pos && i < last_positive {
            i += 1;
            cum += weights[i];
        }
        // a trailing zero-weight run can only be reached through round-off
        let pick = if weights[i] > 0.0 { i } else { last_positive };
        out.push(pick);
    }
    out
}

/// Particle layout and resampling settings of an HDV belief.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Lattice points along the spacing axis.
    pub n_s: usize,
    /// Lattice points along the velocity axis.
    pub n_v: usize,
    pub s_half: f64,
    pub v_half: f64,
    /// Particles per (theta, lattice point) pair.
    pub count_per_cell: usize,
    /// Resample when `N_eff <= fraction * N`.
    pub resample_fraction: f64,
    /// Std of the state jitter applied after a resample; 0 disables it.
    pub roughen_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_s: 9,
            n_v: 9,
            s_half: 4.0,
            v_half: 2.0,
            count_per_cell: 1,
            resample_fraction: 1.0 / 3.0,
            roughen_sigma: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_v == 0 || self.count_per_cell == 0 {
            return Err(Error::Config(
                "filter.n_s, filter.n_v and filter.count_per_cell must be positive".into(),
            ));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(Error::Config("filter.resample_fraction must lie in (0, 1]".into()));
        }
        if !(self.s_half >= 0.0 && self.v_half >= 0.0 && self.roughen_sigma >= 0.0) {
            return Err(Error::Config(
                "filter.s_half, filter.v_half and filter.roughen_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn particle_count(&self, n_theta: usize) -> usize {
        n_theta * self.n_s * self.n_v * self.count_per_cell
    }

    /// Uniform prior over `thetas x lattice`.
    pub fn build(&self, scenario: &Scenario, thetas: &[ThetaParams]) -> Result<ParticleBelief> {
        self.validate()?;
        let states = ParticleBelief::state_lattice(scenario, self.n_s, self.n_v, self.s_half, self.v_half);
        let b = ParticleBelief::init(thetas, &states, self.count_per_cell)?;
        let threshold = self.resample_fraction * b.len() as f64;
        Ok(b.with_threshold(threshold))
    }
}

/// One filter cycle after a datum has been observed: reweight by
/// `likelihoods`, propagate with the CAV velocity, resample if needed.
/// Returns whether a resample happened.
pub fn assimilate<R: Rng + ?Sized>(
    belief: &mut ParticleBelief,
    likelihoods: &[f64],
    scenario: &Scenario,
    cav_velocity: f64,
    cfg: &FilterConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<bool> {
    belief.reweight_or_reset(likelihoods)?;
    belief.propagate(scenario, cav_velocity, scenario.dt, rng, exec);
    let resampled = belief.maybe_resample(rng);
    if resampled {
        belief.roughen(cfg.roughen_sigma, rng);
    }
    Ok(resampled)
}

impl ParticleBelief<HdvState> {
    /// Uniform lattice of `n_s x n_v` HDV states centered on the scenario
    /// equilibrium, spanning `s* +- s_half` and `v* +- v_half`.
    pub fn state_lattice(scenario: &Scenario, n_s: usize, n_v: usize, s_half: f64, v_half: f64) -> Vec<HdvState> {
        let axis = |center: f64, half: f64, k: usize| -> Vec<f64> {
            if k == 1 {
                return vec![center];
            }
            (0..k)
                .map(|i| center - half + 2.0 * half * i as f64 / (k - 1) as f64)
                .collect()
        };
        let ss = axis(scenario.eq.s_star, s_half, n_s);
        let vs = axis(scenario.eq.v_star, v_half, n_v);
        ss.iter()
            .flat_map(|&s| vs.iter().map(move |&v| HdvState::new(s, v)))
            .collect()
    }

    /// Advances every particle through the HDV dynamics given the CAV's
    /// public velocity, drawing fresh disturbances per particle.
    pub fn propagate<R: Rng + ?Sized>(
        &mut self,
        scenario: &Scenario,
        cav_velocity: f64,
        dt: f64,
        rng: &mut R,
        exec: Exec,
    ) {
        let k = scenario.substeps.max(1) as usize;
        let h = dt / k as f64;
        let thr = scenario.thresholds;
        let sd_a = scenario.noise.sigma_ga_sq.max(0.0).sqrt();
        let sd_s = scenario.noise.sigma_gs_sq.max(0.0).sqrt();
        self.propagate_with(
            rng,
            |r| {
                (0..k)
                    .map(|_| {
                        let za: f64 = r.sample(StandardNormal);
                        let zs: f64 = r.sample(StandardNormal);
                        [sd_a * za, sd_s * zs]
                    })
                    .collect::<Vec<_>>()
            },
            |theta, x, noise| {
                noise
                    .iter()
                    .fold(*x, |x, g| hdv_transition(theta, x, cav_velocity, h, &thr, g[0], g[1]))
            },
            exec,
        );
    }

    /// Gaussian roughening of the continuous state, typically applied right
    /// after a resample.
    pub fn roughen<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) {
        if sigma <= 0.0 {
            return;
        }
        for p in &mut self.particles {
            let zs: f64 = rng.sample(StandardNormal);
            let zv: f64 = rng.sample(StandardNormal);
            p.state.s = (p.state.s + sigma * zs).max(0.0);
            p.state.v = (p.state.v + sigma * zv).max(0.0);
        }
    }

    /// Writes one row per particle: `theta_m,theta_n,s,v,weight`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SNAPSHOT_HEADER}")?;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let t = &self.thetas[p.theta];
            writeln!(out, "{},{},{},{},{}", t.m, t.n, p.state.s, p.state.v, w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoiseSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_belief(n_states: usize) -> ParticleBelief {
        let sc = Scenario::default();
        let states = ParticleBelief::state_lattice(&sc, n_states, 1, 4.0, 2.0);
        ParticleBelief::init(&ThetaParams::GRID, &states, 1).unwrap()
    }

    fn sum(xs: &[f64]) -> f64 {
        xs.iter().sum()
    }

    #[test]
    fn init_counts() {
        let sc = Scenario::default();
        let b = ParticleBelief::init(
            &ThetaParams::GRID,
            &ParticleBelief::state_lattice(&sc, 9, 9, 4.0, 2.0),
            1,
        )
        .unwrap();
        assert_eq!(b.len(), 324);
        assert!(b.weights().iter().all(|w| *w == 1.0 / 324.0));
        assert_abs_diff_eq!(b.n_eff_threshold(), 108.0);

        let one = ParticleBelief::init(&ThetaParams::GRID[..1], &[HdvState::new(20.0, 15.0)], 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.weights(), &[1.0]);

        let big = ParticleBelief::init(
            &ThetaParams::GRID,
            &ParticleBelief::state_lattice(&sc, 36, 36, 4.0, 2.0),
            1,
        )
        .unwrap();
        assert_eq!(big.len(), 5184);
    }

    #[test]
    fn lattice_extent() {
        let sc = Scenario::default();
        let states = ParticleBelief::state_lattice(&sc, 9, 9, 4.0, 2.0);
        assert_eq!(states.len(), 81);
        assert_eq!(states[0], HdvState::new(16.0, 13.0));
        assert_eq!(states[80], HdvState::new(24.0, 17.0));
    }

    #[test]
    fn init_rejects_empty() {
        let r = ParticleBelief::<HdvState>::init(&[], &[HdvState::default()], 1);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = ParticleBelief::<HdvState>::init(&ThetaParams::GRID, &[], 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn propagate_examples() {
        let sc = Scenario {
            noise: NoiseSpec::disabled(),
            ..Scenario::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParticleBelief::init(&ThetaParams::GRID, &[HdvState::new(20.0, 15.0)], 3).unwrap();
        let before = b.clone();
        b.propagate(&sc, 15.0, 0.2, &mut rng, Exec::default());
        assert_eq!(b.particles(), before.particles());
        assert_eq!(b.weights(), before.weights());

        let mut one = ParticleBelief::init(&ThetaParams::GRID[2..3], &[HdvState::new(20.0, 14.0)], 1).unwrap();
        one.propagate(&sc, 15.0, 0.2, &mut rng, Exec::default());
        let x = one.particles()[0].state;
        assert_abs_diff_eq!(x.s, 20.2, epsilon = 1e-12);
        assert_abs_diff_eq!(x.v, 14.42, epsilon = 1e-12);
    }

    #[test]
    fn propagate_keeps_weights_and_thetas() {
        let sc = Scenario::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = grid_belief(5);
        b.reweight(&(0..20).map(|i| 1.0 + i as f64).collect::<Vec<_>>())
            .unwrap();
        let w = b.weights().to_vec();
        let thetas: Vec<usize> = b.particles().iter().map(|p| p.theta).collect();
        b.propagate(&sc, 15.3, 0.2, &mut rng, Exec::default());
        assert_eq!(b.weights(), &w[..]);
        assert_eq!(b.particles().iter().map(|p| p.theta).collect::<Vec<_>>(), thetas);
    }

    #[test]
    fn propagate_independent_of_exec() {
        let sc = Scenario::default();
        let mut a = grid_belief(100);
        let mut b = a.clone();
        a.propagate(&sc, 15.2, 0.2, &mut ChaCha8Rng::seed_from_u64(9), Exec::Sequential);
        b.propagate(&sc, 15.2, 0.2, &mut ChaCha8Rng::seed_from_u64(9), Exec::Parallel);
        assert_eq!(a.particles(), b.particles());
    }

    #[test]
    fn reweight_examples() {
        let mut b = grid_belief(2);
        let before = b.weights().to_vec();
        b.reweight(&[0.3; 8]).unwrap();
        for (x, y) in b.weights().iter().zip(&before) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }

        let pair = ParticleBelief::init(&ThetaParams::GRID[..2], &[HdvState::default()], 1).unwrap();
        let mut pair2 = pair.clone();
        pair2.reweight(&[0.2, 0.1]).unwrap();
        assert_abs_diff_eq!(pair2.weights()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pair2.weights()[1], 1.0 / 3.0, epsilon = 1e-15);

        let mut pair3 = pair.clone();
        pair3.reweight(&[0.5, 0.0]).unwrap();
        assert_eq!(pair3.weights()[1], 0.0);
    }

    #[test]
    fn degenerate_evidence() {
        let mut b = grid_belief(2);
        let before = b.weights().to_vec();
        assert!(matches!(b.reweight(&[0.0; 8]), Err(Error::DegenerateEvidence)));
        assert_eq!(b.weights(), &before[..]);

        b.reweight(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(b.reweight_or_reset(&[0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap());
        assert_eq!(b.degenerate_events(), 1);
        assert!(b.weights().iter().all(|w| *w == 0.125));
    }

    #[test]
    fn constant_factor_is_irrelevant() {
        // per-particle likelihood vs the same likelihood times a shared factor
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let l: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let c = rng.random_range(1e-6..1e6);
            let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
            let mut a = grid_belief(2);
            let mut b = a.clone();
            a.reweight(&l).unwrap();
            b.reweight(&scaled).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
            let order = |w: &[f64]| {
                let mut idx: Vec<usize> = (0..w.len()).collect();
                idx.sort_by(|&i, &j| w[i].total_cmp(&w[j]));
                idx
            };
            assert_eq!(order(a.weights()), order(b.weights()));
        }
    }

    #[test]
    fn ess_examples() {
        let b = grid_belief(25);
        assert_abs_diff_eq!(b.effective_sample_size(), 100.0, epsilon = 1e-9);

        let mut one = grid_belief(1);
        one.reweight(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(one.effective_sample_size(), 1.0);

        let mut half = grid_belief(1);
        half.reweight(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(half.effective_sample_size(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn resample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = grid_belief(25);
        let before = b.clone();
        assert!(!b.maybe_resample(&mut rng));
        assert_eq!(b.particles(), before.particles());

        let mut l = vec![1e-9; 100];
        l[17] = 1.0;
        b.reweight(&l).unwrap();
        assert!(b.maybe_resample(&mut rng));
        assert!(b.weights().iter().all(|w| *w == 0.01));
        assert_eq!(b.resamples(), 1);

        let mut z = grid_belief(25);
        let mut l = vec![0.0; 100];
        for i in (0..100).step_by(7) {
            l[i] = 1.0 + i as f64;
        }
        z.reweight(&l).unwrap();
        let positive: Vec<Particle> = (0..100).filter(|i| l[*i] > 0.0).map(|i| z.particles()[i]).collect();
        z.resample(&mut rng);
        assert!(z.particles().iter().all(|p| positive.contains(p)));
    }

    #[test]
    fn resample_preserves_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sc = Scenario::default();
        let states = ParticleBelief::state_lattice(&sc, 5, 5, 4.0, 2.0);
        let mut b = ParticleBelief::init(&ThetaParams::GRID, &states, 1).unwrap();
        let l: Vec<f64> = (0..b.len()).map(|_| rng.random::<f64>().powi(3)).collect();
        b.reweight(&l).unwrap();
        let stat = |p: &Particle| p.state.s * p.state.v;
        let target = b.weighted_mean(stat);

        let draws = 2000;
        let means: Vec<f64> = (0..draws)
            .map(|_| {
                let mut c = b.clone();
                c.resample(&mut rng);
                c.weighted_mean(stat)
            })
            .collect();
        let avg = means.iter().sum::<f64>() / draws as f64;
        let var = means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((avg - target).abs() <= 3.0 * se, "avg {avg} target {target} se {se}");
    }

    #[test]
    fn theta_marginal_examples() {
        let b = grid_belief(3);
        for p in b.theta_marginal() {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
        }
        let mut one = grid_belief(3);
        let l: Vec<f64> = (0..12)
            .map(|i| if one.particles()[i].theta == 2 { 1.0 } else { 0.0 })
            .collect();
        one.reweight(&l).unwrap();
        assert_eq!(one.theta_marginal(), vec![0.0, 0.0, 1.0, 0.0]);

        let mut two = ParticleBelief::init(&ThetaParams::GRID[..2], &[HdvState::default()], 2).unwrap();
        two.reweight(&[0.3, 0.3, 0.2, 0.2]).unwrap();
        let m = two.theta_marginal();
        assert_abs_diff_eq!(m[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn snapshot_format() {
        let b = ParticleBelief::init(&ThetaParams::GRID[..1], &[HdvState::new(20.0, 15.0)], 2).unwrap();
        let mut buf = Vec::new();
        b.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "theta_m,theta_n,s,v,weight\n0.4,0.5,20,15,0.5\n0.4,0.5,20,15,0.5\n"
        );
    }

    proptest! {
        #[test]
        fn operations_keep_normalization(seed in 0u64..500, steps in 1usize..20) {
            let sc = Scenario::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = grid_belief(10);
            for _ in 0..steps {
                let l: Vec<f64> = (0..b.len()).map(|_| rng.random::<f64>()).collect();
                b.reweight_or_reset(&l).unwrap();
                prop_assert!((sum(b.weights()) - 1.0).abs() < WEIGHT_SUM_TOL);
                b.propagate(&sc, 15.0, 0.2, &mut rng, Exec::default());
                b.maybe_resample(&mut rng);
                prop_assert!((sum(b.weights()) - 1.0).abs() < WEIGHT_SUM_TOL);
                prop_assert!((sum(&b.theta_marginal()) - 1.0).abs() < WEIGHT_SUM_TOL);
                prop_assert!(b.particles().iter().all(|p| p.theta < 4));
            }
        }

        #[test]
        fn ess_within_bounds(ws in proptest::collection::vec(0.0..1.0f64, 1..50)) {
            prop_assume!(ws.iter().sum::<f64>() > 0.0);
            let n = ws.len();
            let states = vec![HdvState::default(); n];
            let mut b = ParticleBelief::init(&ThetaParams::GRID[..1], &states, 1).unwrap();
            b.reweight(&ws).unwrap();
            let ess = b.effective_sample_size();
            prop_assert!(ess >= 1.0 - 1e-9 && ess <= n as f64 + 1e-9);
        }
    }
}
