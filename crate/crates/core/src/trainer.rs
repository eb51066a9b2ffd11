//! Online advantage actor-critic training of the distortion policy.
//!
//! Each step the CAV's filter summarizes its belief, the actor proposes a
//! kernel row for the true driver and HDV state, a datum is shared, and the
//! step cost charges the mutual information leaked at the current belief,
//! the HDV's fuel rate and the distortion above the per-step budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{assimilate, FilterConfig, ParticleBelief};
use crate::dynamics::{cav_control, fuel_rate, weighted_distortion, HdvState, PlatoonState, Scenario, ThetaParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::network::{actor_backward, critic_backward};
use crate::policy::{
    actor_forward, critic_forward, emit_distorted, kernel_rows, mgf_features, sample_kernel_row, DirichletAction,
    DistortionGrid, Emission, MgfFeatures, PolicyParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the mutual-information term.
    pub rho: f64,
    /// Lagrange multiplier of the distortion constraint.
    pub lambda: f64,
    /// Total distortion budget over an episode.
    pub d_hat_total: f64,
    /// Steps per episode.
    pub horizon: usize,
    pub episodes: usize,
    pub discount: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Set by the experiment seed, not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    /// Global-norm clip applied separately to the actor and critic gradients.
    pub grad_clip: f64,
    /// Episodes between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 1.0,
            lambda: 1.0,
            d_hat_total: 800.0,
            horizon: 200,
            episodes: 10_000,
            discount: 0.99,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            seed: 0,
            grad_clip: 5.0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Per-step share of the distortion budget.
    pub fn d_hat_step(&self) -> f64 {
        self.d_hat_total / self.horizon as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("training.horizon must be positive".into()));
        }
        for (key, v) in [
            ("training.rho", self.rho),
            ("training.lambda", self.lambda),
            ("training.d_hat_total", self.d_hat_total),
            ("training.lr_actor", self.lr_actor),
            ("training.lr_critic", self.lr_critic),
            ("training.grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{key} must be finite and nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "training.discount must lie in [0, 1], got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCost {
    pub mi: f64,
    /// HDV fuel rate (mL/s).
    pub control: f64,
    /// Weighted distance between true and shared state.
    pub distortion_penalty: f64,
    pub total: f64,
}

pub fn step_cost(mi: f64, fuel: f64, dist: f64, cfg: &TrainConfig) -> StepCost {
    StepCost {
        mi,
        control: fuel,
        distortion_penalty: dist,
        total: cfg.rho * mi + fuel + cfg.lambda * (dist - cfg.d_hat_step()),
    }
}

/// `delta = -cost + discount * V(next) - V`, with the bootstrap dropped on
/// terminal steps.
pub fn td_error(cost: &StepCost, value: f64, next_value: f64, discount: f64, terminal: bool) -> f64 {
    let boot = if terminal { 0.0 } else { discount * next_value };
    -cost.total + boot - value
}

/// Mutual information between theta and the shared cell under the current
/// belief, with `kernels` holding one row of `n_cells` probabilities per
/// particle.
pub fn mutual_info_step<S: Clone + Send + Sync>(belief: &ParticleBelief<S>, kernels: &[f64], n_cells: usize) -> f64 {
    let n_theta = belief.thetas().len();
    // joint[theta][y]
    let mut joint = vec![0.0; n_theta * n_cells];
    for (i, (p, w)) in belief.particles().iter().zip(belief.weights()).enumerate() {
        if *w == 0.0 {
            continue;
        }
        let row = &kernels[i * n_cells..(i + 1) * n_cells];
        let dst = &mut joint[p.theta * n_cells..(p.theta + 1) * n_cells];
        for (d, k) in dst.iter_mut().zip(row) {
            *d += w * k;
        }
    }
    let p_theta: Vec<f64> = joint.chunks(n_cells).map(|r| r.iter().sum()).collect();
    let mut p_y = vec![0.0; n_cells];
    for r in joint.chunks(n_cells) {
        for (py, j) in p_y.iter_mut().zip(r) {
            *py += j;
        }
    }
    let mut mi = 0.0;
    for (t, r) in joint.chunks(n_cells).enumerate() {
        for (y, j) in r.iter().enumerate() {
            if *j > 0.0 {
                mi += j * (j / (p_theta[t] * p_y[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub features: MgfFeatures,
    pub theta_true: ThetaParams,
    pub x_true: HdvState,
    pub action: DirichletAction,
    pub cost: StepCost,
    pub next_features: MgfFeatures,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub delta: f64,
    pub value: f64,
    /// Norms before clipping.
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// Actor and critic gradients for one transition, unclipped.
pub fn a2c_gradients(
    tr: &Transition,
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, PolicyParams, f64, f64)> {
    let value = critic_forward(&tr.features, params)?;
    let next_value = if tr.terminal {
        0.0
    } else {
        critic_forward(&tr.next_features, params)?
    };
    let delta = td_error(&tr.cost, value, next_value, cfg.discount, tr.terminal);
    // fixed bootstrap target, so (target - V)^2 = delta^2
    let target = delta + value;

    let mut g_actor = params.zeros_like();
    actor_backward(
        &tr.features,
        &tr.theta_true,
        &tr.x_true,
        params,
        &tr.action.log_simplex,
        delta,
        &mut g_actor,
    )?;
    let mut g_critic = params.zeros_like();
    critic_backward(&tr.features, params, target, &mut g_critic)?;
    Ok((g_actor, g_critic, delta, value))
}

/// One plain-SGD step: actor tensors by `-lr_actor * grad L_a`, critic
/// tensors by `-lr_critic * grad L_c`, the shared encoder by both. A
/// non-finite gradient leaves `params` untouched.
pub fn a2c_update(tr: &Transition, params: &mut PolicyParams, cfg: &TrainConfig) -> Result<UpdateStats> {
    let (mut g_actor, mut g_critic, delta, value) = a2c_gradients(tr, params, cfg)?;
    if !g_actor.is_finite() || !g_critic.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let actor_grad_norm = g_actor.clip_norm(cfg.grad_clip);
    let critic_grad_norm = g_critic.clip_norm(cfg.grad_clip);
    params.axpy(-cfg.lr_actor, &g_actor);
    params.axpy(-cfg.lr_critic, &g_critic);
    Ok(UpdateStats {
        delta,
        value,
        actor_grad_norm,
        critic_grad_norm,
    })
}

/// Everything an episode needs besides parameters and random streams.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSetup<'a> {
    pub scenario: &'a Scenario,
    pub filter: &'a FilterConfig,
    pub grid: &'a DistortionGrid,
    pub thetas: &'a [ThetaParams],
    pub exec: Exec,
}

/// Independent random streams, so that e.g. changing the policy does not
/// shift the environment noise.
#[derive(Debug, Clone)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub policy: ChaCha8Rng,
    pub filter: ChaCha8Rng,
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            env: stream(seed, 1),
            policy: stream(seed, 2),
            filter: stream(seed, 3),
        }
    }
}

/// Platoon at equilibrium except for an HDV state drawn uniformly from the
/// filter's prior box.
pub fn initial_state<R: Rng + ?Sized>(scenario: &Scenario, filter: &FilterConfig, rng: &mut R) -> PlatoonState {
    let mut st = PlatoonState::at_equilibrium(&scenario.eq);
    let draw = |rng: &mut R, c: f64, h: f64| if h > 0.0 { rng.random_range(c - h..=c + h) } else { c };
    st.s[2] = draw(rng, scenario.eq.s_star, filter.s_half);
    st.v[2] = draw(rng, scenario.eq.v_star, filter.v_half);
    st
}

/// Outcome of one policy-driven sharing step.
#[derive(Debug, Clone)]
pub struct SharedStep {
    pub features: MgfFeatures,
    pub action: DirichletAction,
    pub emission: Emission,
    /// Mean kernel rows of every particle, row-major.
    pub kernels: Vec<f64>,
    pub next_state: PlatoonState,
    pub mi: f64,
    pub fuel: f64,
    pub distortion: f64,
}

/// Shares one datum under `params`, advances the platoon and updates the
/// public belief. Used by both training and evaluation.
pub fn policy_step(
    setup: &EpisodeSetup<'_>,
    params: &PolicyParams,
    theta: &ThetaParams,
    state: &PlatoonState,
    belief: &mut ParticleBelief,
    streams: &mut Streams,
) -> Result<SharedStep> {
    let sc = setup.scenario;
    let features = mgf_features(belief, params)?;
    let x = state.hdv();
    let alpha = actor_forward(&features, theta, &x, params)?;
    let action = sample_kernel_row(&alpha, &mut streams.policy)?;
    let emission = emit_distorted(&action.sampled_simplex, setup.grid, &mut streams.policy);

    let u = cav_control(state, &sc.gains, &sc.eq, (emission.v, emission.s), &sc.thresholds);
    let next_state = sc.step(state, theta, u, &mut streams.env);

    let cells = setup.grid.len();
    let kernels = kernel_rows(&features, belief, params, setup.exec)?;
    let mi = mutual_info_step(belief, &kernels, cells);
    let fuel = hdv_fuel(state, &next_state, sc.dt);
    let distortion = weighted_distortion((x.v, x.s), (emission.v, emission.s), sc.distortion_weights);

    let likelihoods: Vec<f64> = (0..belief.len()).map(|i| kernels[i * cells + emission.cell]).collect();
    assimilate(
        belief,
        &likelihoods,
        sc,
        state.cav_velocity(),
        setup.filter,
        &mut streams.filter,
        setup.exec,
    )?;
    Ok(SharedStep {
        features,
        action,
        emission,
        kernels,
        next_state,
        mi,
        fuel,
        distortion,
    })
}

/// HDV fuel rate over a step: velocity at its start, realized acceleration.
pub fn hdv_fuel(state: &PlatoonState, next: &PlatoonState, dt: f64) -> f64 {
    fuel_rate(state.v[2], (next.v[2] - state.v[2]) / dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeDiagnostics {
    pub reward: f64,
    pub mi_sum: f64,
    pub fuel_sum: f64,
    pub distortion_sum: f64,
    pub resamples: u64,
    pub skipped_updates: u64,
    /// Posterior mass on the true theta at the end of the episode.
    pub final_p_true: f64,
}

pub fn run_training_episode(
    cfg: &TrainConfig,
    setup: &EpisodeSetup<'_>,
    params: &mut PolicyParams,
    theta_index: usize,
    streams: &mut Streams,
) -> Result<EpisodeDiagnostics> {
    let theta = setup.thetas[theta_index];
    let mut belief = setup.filter.build(setup.scenario, setup.thetas)?;
    let mut state = initial_state(setup.scenario, setup.filter, &mut streams.env);
    let mut diag = EpisodeDiagnostics::default();

    for t in 0..cfg.horizon {
        let x = state.hdv();
        let step = policy_step(setup, params, &theta, &state, &mut belief, streams)?;
        let cost = step_cost(step.mi, step.fuel, step.distortion, cfg);
        if !cost.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite step cost at step {t}")));
        }
        diag.reward -= cost.total;
        diag.mi_sum += cost.mi;
        diag.fuel_sum += cost.control;
        diag.distortion_sum += cost.distortion_penalty;

        let tr = Transition {
            features: step.features,
            theta_true: theta,
            x_true: x,
            action: step.action,
            cost,
            next_features: mgf_features(&belief, params)?,
            terminal: t + 1 == cfg.horizon,
        };
        match a2c_update(&tr, params, cfg) {
            Ok(_) => {}
            Err(Error::Numeric(msg)) => {
                log::warn!("update skipped at step {t}: {msg}");
                diag.skipped_updates += 1;
            }
            Err(e) => return Err(e),
        }
        state = step.next_state;
    }
    diag.resamples = belief.resamples();
    diag.final_p_true = belief.theta_marginal()[theta_index];
    Ok(diag)
}

/// One row of the reward curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub theta_index: usize,
    pub diag: EpisodeDiagnostics,
}

/// Runs `cfg.episodes` episodes with the driver drawn uniformly from the
/// theta grid each time. `on_checkpoint(episodes_done, params)` fires every
/// `cfg.checkpoint_every` episodes.
pub fn train<F>(
    cfg: &TrainConfig,
    setup: &EpisodeSetup<'_>,
    mut params: PolicyParams,
    mut on_checkpoint: F,
) -> Result<(PolicyParams, Vec<EpisodeRecord>)>
where
    F: FnMut(usize, &PolicyParams) -> Result<()>,
{
    cfg.validate()?;
    if setup.thetas.is_empty() {
        return Err(Error::Config("empty theta grid".into()));
    }
    let mut pick = stream(cfg.seed, 0);
    let mut streams = Streams::new(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let theta_index = pick.random_range(0..setup.thetas.len());
        let diag = run_training_episode(cfg, setup, &mut params, theta_index, &mut streams)?;
        log::debug!("episode {episode}: reward {:.3}", diag.reward);
        curve.push(EpisodeRecord {
            episode,
            theta_index,
            diag,
        });
        if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(episode + 1, &params)?;
        }
    }
    Ok((params, curve))
}
