//! Experiment protocol: training runs, the evaluation of a trained policy
//! against both attackers, and offline replay of shared-data traces.

pub mod config;
pub mod files;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::adversary::{estimation_rmse, rls_attack, success_rate, AttackObservation, BayesAttacker, RlsState};
use crate::belief::ParticleBelief;
use crate::dynamics::{cav_control, Scenario, ThetaParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::{DistortionGrid, PolicyParams};
use crate::trainer::{hdv_fuel, initial_state, policy_step, stream, train, EpisodeRecord, EpisodeSetup, Streams};

pub use config::ExperimentConfig;
use files::{
    belief_header, num, opt, Checkpoint, CsvDoc, SharedRow, SharedTrace, ATTACK_HEADER, ATTACK_SCHEMA, BELIEF_SCHEMA,
    METRICS_HEADER, METRICS_SCHEMA, REPETITIONS_HEADER, REPETITIONS_SCHEMA, REWARD_HEADER, REWARD_SCHEMA,
};

/// Posterior mass on the true driver type that counts as identified.
pub const CONCENTRATION_LEVEL: f64 = 0.9;

/// Stream id of the policy initialization draw.
const INIT_STREAM: u64 = 4;

/// Seed of one evaluation run. Distinct for every (theta, repetition) and
/// independent of how many runs are scheduled.
pub fn run_seed(seed: u64, theta_index: usize, repetition: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((theta_index as u64 + 1) << 32) ^ (repetition as u64 + 1)
}

/// How the HDV's data reaches the CAV and the public.
#[derive(Debug, Clone, Copy)]
pub enum Sharing<'a> {
    /// True state.
    Identity,
    Policy(&'a PolicyParams),
}

impl Sharing<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Sharing::Identity => "real",
            Sharing::Policy(_) => "filtered",
        }
    }
}

/// Everything one simulated run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub theta_index: usize,
    pub run_seed: u64,
    pub rows: Vec<SharedRow>,
    /// Attacker's theta marginal before any datum, then after each one.
    pub marginals: Vec<Vec<f64>>,
    /// HDV fuel rate (mL/s) of every step.
    pub fuel: Vec<f64>,
    pub degenerate_events: u64,
}

impl RunTrace {
    pub fn p_true(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m[self.theta_index]).collect()
    }

    pub fn final_p_true(&self) -> f64 {
        self.marginals.last().map_or(f64::NAN, |m| m[self.theta_index])
    }

    /// Number of data after which the true type first passes
    /// [`CONCENTRATION_LEVEL`].
    pub fn cross_step(&self) -> Option<usize> {
        self.p_true().iter().position(|p| *p > CONCENTRATION_LEVEL)
    }

    pub fn mean_fuel(&self) -> f64 {
        mean(&self.fuel)
    }

    pub fn shared_trace(&self, sharing: &str) -> SharedTrace {
        let mut meta = BTreeMap::new();
        meta.insert("run_seed".to_string(), self.run_seed.to_string());
        meta.insert("sharing".to_string(), sharing.to_string());
        SharedTrace {
            meta,
            rows: self.rows.clone(),
        }
    }

    pub fn belief_doc(&self) -> CsvDoc {
        let n = self.marginals.first().map_or(0, Vec::len);
        let mut doc = CsvDoc::new(
            BELIEF_SCHEMA,
            &[("run_seed", self.run_seed.to_string())],
            &belief_header(n),
        );
        for (k, m) in self.marginals.iter().enumerate() {
            doc.row(std::iter::once(k.to_string()).chain(m.iter().map(|p| num(*p))));
        }
        doc
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// RLS estimate after each datum; the first datum only seeds the regressor.
pub fn rls_track(rows: &[SharedRow], scenario: &Scenario, init: RlsState) -> Vec<[f64; 2]> {
    let obs: Vec<AttackObservation> = rows
        .iter()
        .map(|r| AttackObservation {
            v_hdv: r.v_shared,
            s_hdv: r.s_shared,
            v_cav: r.v_cav,
            dt: scenario.dt,
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    if !rows.is_empty() {
        out.push(init.theta_hat);
    }
    out.extend(rls_attack(&obs, &scenario.thresholds, init));
    out
}

/// Per-repetition evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionRow {
    pub theta_index: usize,
    pub repetition: usize,
    pub run_seed: u64,
    pub sigma_e_real: f64,
    pub sigma_e_filtered: f64,
    pub sigma_e_real_mean: f64,
    pub sigma_e_filtered_mean: f64,
    pub fuel_real: f64,
    pub fuel_filtered: f64,
    pub p_true_real: f64,
    pub p_true_filtered: f64,
    pub cross_step_real: Option<usize>,
    pub cross_step_filtered: Option<usize>,
    pub degenerate_real: u64,
    pub degenerate_filtered: u64,
}

/// Per-theta summary, averaged over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub theta_index: usize,
    pub theta: ThetaParams,
    pub sigma_e_real: f64,
    pub sr_real: f64,
    pub sigma_e_filtered: f64,
    pub sr_filtered: f64,
    pub fuel_real: f64,
    pub fuel_filtered: f64,
    pub delta_pct: f64,
    pub p_true_real: f64,
    pub p_true_filtered: f64,
}

impl MetricsRow {
    pub fn label(&self) -> String {
        format!("theta{}", self.theta_index + 1)
    }
}

/// One evaluation run pair with both traces kept for export.
#[derive(Debug, Clone)]
pub struct RunPair {
    pub row: RepetitionRow,
    pub real: RunTrace,
    pub filtered: RunTrace,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Vec<MetricsRow>,
    pub runs: Vec<RunPair>,
}

/// One replayed datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackRow {
    pub step: usize,
    pub p_true_theta: f64,
    pub theta_hat: [f64; 2],
    pub sigma_e: f64,
}

/// A validated configuration with its derived objects built once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub scenario: Scenario,
    pub grid: DistortionGrid,
    pub thetas: Vec<ThetaParams>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Experiment {
            scenario: cfg.scenario()?,
            grid: cfg.grid(),
            thetas: cfg.thetas()?,
            cfg,
        })
    }

    pub fn init_params(&self) -> PolicyParams {
        let mut p = PolicyParams::init(
            self.cfg.policy.shape(),
            self.cfg.standardizer(),
            &mut stream(self.cfg.seed, INIT_STREAM),
        );
        p.alpha_floor = self.cfg.policy.alpha_floor;
        p
    }

    /// Trains from freshly initialized parameters.
    /// `on_checkpoint(episodes_done, params)` fires per the training config.
    pub fn train<F>(&self, exec: Exec, on_checkpoint: F) -> Result<(PolicyParams, Vec<EpisodeRecord>)>
    where
        F: FnMut(usize, &PolicyParams) -> Result<()>,
    {
        let setup = EpisodeSetup {
            scenario: &self.scenario,
            filter: &self.cfg.train_filter,
            grid: &self.grid,
            thetas: &self.thetas,
            exec,
        };
        train(&self.cfg.train_config(), &setup, self.init_params(), on_checkpoint)
    }

    /// Runs the platoon for `steps` shared data. The attacker belief uses
    /// the evaluation filter and the run's filter stream; under a policy it
    /// is also the belief the policy conditions on.
    pub fn simulate(
        &self,
        sharing: Sharing<'_>,
        theta_index: usize,
        run_seed: u64,
        steps: usize,
        exec: Exec,
    ) -> Result<RunTrace> {
        let sc = &self.scenario;
        let filter = &self.cfg.filter;
        let theta = *self
            .thetas
            .get(theta_index)
            .ok_or_else(|| Error::Domain(format!("theta index {theta_index} outside the grid")))?;
        let mut streams = Streams::new(run_seed);
        let mut state = initial_state(sc, filter, &mut streams.env);
        let mut belief = filter.build(sc, &self.thetas)?;
        let attacker = BayesAttacker {
            scenario: sc,
            filter,
            exec,
        };
        let noise = self.cfg.evaluation.obs_noise();
        let setup = EpisodeSetup {
            scenario: sc,
            filter,
            grid: &self.grid,
            thetas: &self.thetas,
            exec,
        };

        let mut rows = Vec::with_capacity(steps);
        let mut marginals = Vec::with_capacity(steps + 1);
        let mut fuel = Vec::with_capacity(steps);
        marginals.push(belief.theta_marginal());
        for step in 0..steps {
            let v_cav = state.cav_velocity();
            let (row, next) = match sharing {
                Sharing::Identity => {
                    let x = state.hdv();
                    attacker.observe_real(&mut belief, (x.v, x.s), v_cav, &noise, &mut streams.filter)?;
                    let u = cav_control(&state, &sc.gains, &sc.eq, (x.v, x.s), &sc.thresholds);
                    let next = sc.step(&state, &theta, u, &mut streams.env);
                    let row = SharedRow {
                        step,
                        theta,
                        v_cav,
                        v_shared: x.v,
                        s_shared: x.s,
                        cell: None,
                    };
                    (row, next)
                }
                Sharing::Policy(params) => {
                    let out = policy_step(&setup, params, &theta, &state, &mut belief, &mut streams)?;
                    let row = SharedRow {
                        step,
                        theta,
                        v_cav,
                        v_shared: out.emission.v,
                        s_shared: out.emission.s,
                        cell: Some(out.emission.cell),
                    };
                    (row, out.next_state)
                }
            };
            fuel.push(hdv_fuel(&state, &next, sc.dt));
            marginals.push(belief.theta_marginal());
            rows.push(row);
            state = next;
        }
        Ok(RunTrace {
            theta_index,
            run_seed,
            rows,
            marginals,
            fuel,
            degenerate_events: belief.degenerate_events(),
        })
    }

    fn sigma_e_track(&self, trace: &RunTrace) -> Vec<f64> {
        let theta = self.thetas[trace.theta_index];
        rls_track(&trace.rows, &self.scenario, self.cfg.evaluation.rls_init())
            .iter()
            .map(|est| estimation_rmse(*est, &theta))
            .collect()
    }

    fn repetition(&self, params: &PolicyParams, theta_index: usize, repetition: usize, exec: Exec) -> Result<RunPair> {
        let seed = run_seed(self.cfg.seed, theta_index, repetition);
        let steps = self.cfg.evaluation.steps;
        let real = self.simulate(Sharing::Identity, theta_index, seed, steps, exec)?;
        let filtered = self.simulate(Sharing::Policy(params), theta_index, seed, steps, exec)?;
        let (se_real, se_filt) = (self.sigma_e_track(&real), self.sigma_e_track(&filtered));
        let last = |xs: &[f64]| xs.last().copied().unwrap_or(f64::NAN);
        let row = RepetitionRow {
            theta_index,
            repetition,
            run_seed: seed,
            sigma_e_real: last(&se_real),
            sigma_e_filtered: last(&se_filt),
            sigma_e_real_mean: mean(&se_real),
            sigma_e_filtered_mean: mean(&se_filt),
            fuel_real: real.mean_fuel(),
            fuel_filtered: filtered.mean_fuel(),
            p_true_real: real.final_p_true(),
            p_true_filtered: filtered.final_p_true(),
            cross_step_real: real.cross_step(),
            cross_step_filtered: filtered.cross_step(),
            degenerate_real: real.degenerate_events,
            degenerate_filtered: filtered.degenerate_events,
        };
        Ok(RunPair { row, real, filtered })
    }

    /// A real and a filtered run for every listed theta and repetition.
    /// Runs are independent and may execute in parallel; results come back
    /// sorted by (theta, repetition).
    pub fn evaluate(&self, params: &PolicyParams, exec: Exec) -> Result<Evaluation> {
        let ev = &self.cfg.evaluation;
        let jobs: Vec<(usize, usize)> = ev
            .thetas
            .iter()
            .flat_map(|k| (0..ev.repetitions).map(move |r| (k - 1, r)))
            .collect();
        let results = exec.map_indexed(jobs.len(), |j| self.repetition(params, jobs[j].0, jobs[j].1, exec));
        let runs: Vec<RunPair> = results.into_iter().collect::<Result<_>>()?;

        let mut metrics = Vec::new();
        if ev.repetitions > 0 {
            for &k in &ev.thetas {
                let ti = k - 1;
                let reps: Vec<&RepetitionRow> = runs.iter().map(|r| &r.row).filter(|r| r.theta_index == ti).collect();
                let avg = |f: fn(&RepetitionRow) -> f64| mean(&reps.iter().map(|r| f(r)).collect::<Vec<_>>());
                let sigma_e_real = avg(|r| r.sigma_e_real);
                let sigma_e_filtered = avg(|r| r.sigma_e_filtered);
                let fuel_real = avg(|r| r.fuel_real);
                let fuel_filtered = avg(|r| r.fuel_filtered);
                metrics.push(MetricsRow {
                    theta_index: ti,
                    theta: self.thetas[ti],
                    sigma_e_real,
                    sr_real: success_rate(sigma_e_real),
                    sigma_e_filtered,
                    sr_filtered: success_rate(sigma_e_filtered),
                    fuel_real,
                    fuel_filtered,
                    delta_pct: 100.0 * (fuel_filtered - fuel_real) / fuel_real,
                    p_true_real: avg(|r| r.p_true_real),
                    p_true_filtered: avg(|r| r.p_true_filtered),
                });
            }
        }
        Ok(Evaluation { metrics, runs })
    }

    /// Replays both attackers over a shared-data trace. The Bayesian
    /// attacker draws from the filter stream of the trace's `run_seed`
    /// (the experiment seed if absent), so replaying an evaluation trace
    /// reproduces the evaluation-time belief exactly.
    pub fn replay(&self, trace: &SharedTrace, params: Option<&PolicyParams>, exec: Exec) -> Result<Vec<AttackRow>> {
        let sc = &self.scenario;
        let filter = &self.cfg.filter;
        let mut rng = Streams::new(trace.run_seed().unwrap_or(self.cfg.seed)).filter;
        let mut belief: ParticleBelief = filter.build(sc, &self.thetas)?;
        let attacker = BayesAttacker {
            scenario: sc,
            filter,
            exec,
        };
        let noise = self.cfg.evaluation.obs_noise();
        let estimates = rls_track(&trace.rows, sc, self.cfg.evaluation.rls_init());
        let mut out = Vec::with_capacity(trace.rows.len());
        for (row, est) in trace.rows.iter().zip(estimates) {
            let ti = self.thetas.iter().position(|t| *t == row.theta).ok_or_else(|| {
                Error::Domain(format!(
                    "trace step {}: theta ({}, {}) is not in scenario.theta_grid",
                    row.step, row.theta.m, row.theta.n
                ))
            })?;
            match row.cell {
                None => {
                    attacker.observe_real(&mut belief, (row.v_shared, row.s_shared), row.v_cav, &noise, &mut rng)?
                }
                Some(cell) => {
                    let params = params.ok_or_else(|| {
                        Error::Config(format!(
                            "trace step {} carries a grid cell; replaying policy-shared data needs a checkpoint",
                            row.step
                        ))
                    })?;
                    if cell >= self.grid.len() {
                        return Err(Error::Domain(format!(
                            "trace step {}: cell {cell} outside the {}-cell grid",
                            row.step,
                            self.grid.len()
                        )));
                    }
                    attacker.observe_filtered(&mut belief, cell, row.v_cav, params, &mut rng)?;
                }
            }
            out.push(AttackRow {
                step: row.step,
                p_true_theta: belief.theta_marginal()[ti],
                theta_hat: est,
                sigma_e: estimation_rmse(est, &row.theta),
            });
        }
        Ok(out)
    }
}

// ------------------------------------------------------------------ commands

pub fn reward_doc(curve: &[EpisodeRecord]) -> CsvDoc {
    let mut doc = CsvDoc::new(REWARD_SCHEMA, &[], &REWARD_HEADER);
    for r in curve {
        doc.row([
            r.episode.to_string(),
            num(r.diag.reward),
            num(r.diag.mi_sum),
            num(r.diag.fuel_sum),
            num(r.diag.distortion_sum),
        ]);
    }
    doc
}

pub fn metrics_doc(metrics: &[MetricsRow]) -> CsvDoc {
    let mut doc = CsvDoc::new(METRICS_SCHEMA, &[], &METRICS_HEADER);
    for m in metrics {
        doc.row([
            m.label(),
            num(m.theta.m),
            num(m.theta.n),
            num(m.sigma_e_real),
            num(m.sr_real),
            num(m.sigma_e_filtered),
            num(m.sr_filtered),
            num(m.fuel_real),
            num(m.fuel_filtered),
            num(m.delta_pct),
            num(m.p_true_real),
            num(m.p_true_filtered),
        ]);
    }
    doc
}

pub fn repetitions_doc(runs: &[RunPair]) -> CsvDoc {
    let mut doc = CsvDoc::new(REPETITIONS_SCHEMA, &[], &REPETITIONS_HEADER);
    for RunPair { row: r, .. } in runs {
        doc.row([
            format!("theta{}", r.theta_index + 1),
            r.repetition.to_string(),
            r.run_seed.to_string(),
            num(r.sigma_e_real),
            num(r.sigma_e_filtered),
            num(r.sigma_e_real_mean),
            num(r.sigma_e_filtered_mean),
            num(r.fuel_real),
            num(r.fuel_filtered),
            num(r.p_true_real),
            num(r.p_true_filtered),
            opt(r.cross_step_real),
            opt(r.cross_step_filtered),
            r.degenerate_real.to_string(),
            r.degenerate_filtered.to_string(),
        ]);
    }
    doc
}

pub fn attack_doc(rows: &[AttackRow]) -> CsvDoc {
    let mut doc = CsvDoc::new(ATTACK_SCHEMA, &[], &ATTACK_HEADER);
    for r in rows {
        doc.row([
            r.step.to_string(),
            num(r.p_true_theta),
            num(r.theta_hat[0]),
            num(r.theta_hat[1]),
            num(r.sigma_e),
        ]);
    }
    doc
}

/// Trace file name of one evaluation run.
pub fn trace_name(kind: &str, theta_index: usize, repetition: usize, sharing: &str) -> String {
    format!("{kind}_theta{}_rep{repetition:02}_{sharing}.csv", theta_index + 1)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub curve: Vec<EpisodeRecord>,
    pub checkpoint: PathBuf,
}

/// Trains and writes `reward.csv`, `checkpoint_<episodes>.txt` at every
/// checkpoint interval and the final `checkpoint.txt` into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<TrainOutput> {
    let exp = Experiment::new(cfg.clone())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    log::info!(
        "training {} episodes, seed {}, {} particles",
        cfg.training.episodes,
        cfg.seed,
        cfg.train_filter.particle_count(exp.thetas.len())
    );
    let (params, curve) = exp.train(exec, |done, params| {
        log::info!("checkpoint after {done} episodes");
        Checkpoint {
            episodes_done: done,
            config: cfg.clone(),
            params: params.clone(),
        }
        .save(&out.join(format!("checkpoint_{done}.txt")))
    })?;
    reward_doc(&curve).write(&out.join("reward.csv"))?;
    let checkpoint = out.join("checkpoint.txt");
    Checkpoint {
        episodes_done: curve.len(),
        config: cfg.clone(),
        params: params.clone(),
    }
    .save(&checkpoint)?;
    Ok(TrainOutput {
        params,
        curve,
        checkpoint,
    })
}

/// Evaluates a checkpoint; writes `metrics.csv`, `metrics_repetitions.csv`
/// and, if enabled, per-run belief and shared-data traces under `traces/`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, exec: Exec) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_compatible(cfg)?;
    let exp = Experiment::new(cfg.clone())?;
    log::info!(
        "evaluating {} thetas x {} repetitions x {} steps",
        cfg.evaluation.thetas.len(),
        cfg.evaluation.repetitions,
        cfg.evaluation.steps
    );
    let ev = exp.evaluate(&ck.params, exec)?;
    metrics_doc(&ev.metrics).write(&out.join("metrics.csv"))?;
    repetitions_doc(&ev.runs).write(&out.join("metrics_repetitions.csv"))?;
    if cfg.evaluation.write_traces {
        let dir = out.join("traces");
        for pair in &ev.runs {
            let (ti, rep) = (pair.row.theta_index, pair.row.repetition);
            for (trace, sharing) in [(&pair.real, "real"), (&pair.filtered, "filtered")] {
                trace
                    .belief_doc()
                    .write(&dir.join(trace_name("belief", ti, rep, sharing)))?;
                trace
                    .shared_trace(sharing)
                    .to_doc()
                    .write(&dir.join(trace_name("shared", ti, rep, sharing)))?;
            }
        }
    }
    Ok(ev)
}

/// Replays a shared-data trace and writes `attack_<trace stem>.csv`.
pub fn cmd_attack(
    cfg: &ExperimentConfig,
    trace: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    exec: Exec,
) -> Result<(PathBuf, Vec<AttackRow>)> {
    let params = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(cfg)?;
            Some(ck.params)
        }
        None => None,
    };
    let exp = Experiment::new(cfg.clone())?;
    let shared = SharedTrace::load(trace)?;
    let rows = exp.replay(&shared, params.as_ref(), exec)?;
    let stem = trace.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let path = out.join(format!("attack_{stem}.csv"));
    attack_doc(&rows).write(&path)?;
    Ok((path, rows))
}
