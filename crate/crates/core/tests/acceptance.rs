//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//!
//! Criteria are reported rather than asserted: a FAIL line is a measured
//! result, not a broken build. Setting `PLATOON_ACCEPTANCE_QUICK=1` shrinks
//! the training and evaluation criteria for a smoke run; those lines are
//! marked as not authoritative.
//!
//! Lines go straight to the stderr handle so they show up even when the
//! harness captures the output of passing tests.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{gradient_probe, random_channel, toy_filter_vs_exact};
use platoon_privacy::adversary::{estimation_rmse, rls_update, success_rate, RlsState};
use platoon_privacy::belief::{Particle, ParticleBelief};
use platoon_privacy::dynamics::{
    cav_control, desired_velocity, fuel_rate, ControllerGains, EquilibriumPoint, FvdThresholds, HdvState, PlatoonState,
    ThetaParams,
};
use platoon_privacy::experiment::{
    cmd_attack, cmd_eval, cmd_train, rls_track, run_seed, trace_name, Experiment, ExperimentConfig, Sharing,
};
use platoon_privacy::policy::{grad_check, LossKind};
use platoon_privacy::trainer::mutual_info_step;
use platoon_privacy::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, pass: bool, detail: String, started: Instant) {
        let line = format!(
            "{} criterion {id}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        emit(&line);
        self.lines.push((id, pass, line));
    }
}

fn emit(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn quick() -> bool {
    std::env::var("PLATOON_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1")
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::load::<&str>(&path, &[]).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn formulas() -> (bool, String) {
    let thr = FvdThresholds::default();
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if !close(got, want, tol) {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };

    check("fuel_rate(10,-2)", fuel_rate(10.0, -2.0), 0.444, 1e-12);
    check("fuel_rate(15,0)", fuel_rate(15.0, 0.0), 1.2216, 1e-9);
    check("fuel_rate(15,1)", fuel_rate(15.0, 1.0), 3.6516, 1e-9);

    check("desired_velocity(5)", desired_velocity(5.0, &thr), 0.0, 1e-12);
    check("desired_velocity(35)", desired_velocity(35.0, &thr), 30.0, 1e-12);
    check("desired_velocity(20)", desired_velocity(20.0, &thr), 15.0, 1e-9);

    // literal tabulated gains, not the stabilized scenario default
    let gains = ControllerGains::default();
    let eq = EquilibriumPoint::default();
    let st = PlatoonState {
        s: [20.0, 20.0, 21.0],
        v: [15.0; 3],
        step: 0,
    };
    check(
        "cav_control hdv spacing",
        cav_control(&st, &gains, &eq, (st.v[2], st.s[2]), &thr),
        -0.2,
        1e-12,
    );
    let st = PlatoonState {
        s: [20.0; 3],
        v: [15.0, 16.0, 15.0],
        step: 0,
    };
    check(
        "cav_control cav velocity",
        cav_control(&st, &gains, &eq, (st.v[2], st.s[2]), &thr),
        0.5,
        1e-12,
    );

    let rls = rls_update(&RlsState::new(0.99, 1.0), [1.0, 0.0], 1.0);
    check("rls_update m", (rls.theta_hat[0] * 1e5).round() / 1e5, 0.50251, 1e-12);
    check("rls_update n", rls.theta_hat[1], 0.0, 1e-12);

    let particles: Vec<Particle> = (0..4)
        .map(|i| Particle {
            theta: 0,
            state: HdvState::new(20.0 + i as f64, 15.0),
        })
        .collect();
    let belief = ParticleBelief::from_parts(vec![ThetaParams::GRID[0]], particles, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    check("N_eff(0.5,0.5,0,0)", belief.effective_sample_size(), 2.0, 1e-12);

    check(
        "rmse",
        estimation_rmse([1.4, 1.1], &ThetaParams::new(1.0, 1.1).unwrap()),
        0.08f64.sqrt(),
        1e-12,
    );

    // (sigma_e, SR) columns of the published comparison table
    let table = [
        (0.0019, 0.9981),
        (2.928, 0.0535),
        (0.0075, 0.9925),
        (3.581, 0.0278),
        (0.0024, 0.9976),
        (2.280, 0.1023),
        (0.0030, 0.9970),
        (2.454, 0.0859),
    ];
    let mut worst: f64 = 0.0;
    for (sigma, sr) in table {
        worst = worst.max((success_rate(sigma) - sr).abs());
        check("success_rate", success_rate(sigma), sr, 5e-3);
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("formula examples reproduced; worst SR gap over 8 table pairs {worst:.2e}")
    } else {
        failures.join("; ")
    };
    (pass, detail)
}

fn filter_vs_exact() -> (bool, String) {
    let tvs: Vec<f64> = (0..20)
        .map(|seed| toy_filter_vs_exact(seed, 4, 9, 3, 50, 278).tv)
        .collect();
    let mean = common::mean(&tvs);
    let worst = tvs.iter().cloned().fold(0.0, f64::max);
    (
        mean < 0.02,
        format!(
            "4 thetas x 9 states, N=10008, 50 steps: mean TV {mean:.4} over 20 seeds (max {worst:.4}), need < 0.02"
        ),
    )
}

fn mutual_information() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (belief, kernels) = random_channel(&mut rng, 1 + case % 4, 2 + case % 5, 2 + case % 7);
        let cells = kernels.len() / belief.len();
        let oracle = common::entropy_mi(&common::joint_table(&belief, &kernels, cells));
        worst = worst.max((mutual_info_step(&belief, &kernels, cells) - oracle).abs());
    }

    // every particle shares one row
    let (belief, kernels) = random_channel(&mut rng, 4, 5, 6);
    let row = kernels[..6].to_vec();
    let same: Vec<f64> = (0..belief.len()).flat_map(|_| row.clone()).collect();
    let independent = mutual_info_step(&belief, &same, 6);

    // each theta group emits its own cell
    let thetas = ThetaParams::GRID.to_vec();
    let lossless_belief = ParticleBelief::init(&thetas, &[HdvState::new(20.0, 15.0)], 3).unwrap();
    let lossless: Vec<f64> = lossless_belief
        .particles()
        .iter()
        .flat_map(|p| (0..4).map(move |y| if y == p.theta { 1.0 } else { 0.0 }))
        .collect();
    let ln4 = mutual_info_step(&lossless_belief, &lossless, 4);

    let pass = worst < 1e-12 && independent.abs() < 1e-12 && (ln4 - 4f64.ln()).abs() < 1e-12;
    (
        pass,
        format!(
            "max gap to joint-table MI {worst:.1e} over 100 instances; theta-independent kernels {independent:.1e}; lossless {ln4:.15} vs ln 4"
        ),
    )
}

fn gradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = [0.0f64; 2];
    for seed in 0..20 {
        let (params, probe) = gradient_probe(1000 + seed);
        for (k, kind) in [LossKind::Actor, LossKind::Critic].into_iter().enumerate() {
            worst[k] = worst[k].max(grad_check(&params, &probe, kind, &mut rng).unwrap());
        }
    }
    (
        worst[0] < 1e-4 && worst[1] < 1e-4,
        format!(
            "max relative error over 20 probes: actor+encoder {:.2e}, critic+encoder {:.2e}, need < 1e-4",
            worst[0], worst[1]
        ),
    )
}

/// True-data runs on the evaluation filter, one per grid driver, seeded as
/// repetition 0 of experiment seed 0.
fn true_data_baselines(report: &mut Report) {
    let started = Instant::now();
    let exp = Experiment::new(desk_config()).unwrap();
    let mut sigma = Vec::new();
    let mut cross = Vec::new();
    for ti in 0..exp.thetas.len() {
        let run = exp
            .simulate(
                Sharing::Identity,
                ti,
                run_seed(exp.cfg.seed, ti, 0),
                1200,
                Exec::default(),
            )
            .unwrap();
        let est = rls_track(&run.rows, &exp.scenario, exp.cfg.evaluation.rls_init());
        let per_step: Vec<f64> = est.iter().map(|e| estimation_rmse(*e, &exp.thetas[ti])).collect();
        let min = per_step.iter().skip(1).cloned().fold(f64::INFINITY, f64::min);
        sigma.push((*per_step.last().unwrap(), min));
        cross.push((run.cross_step(), run.final_p_true()));
    }

    let rls_pass = sigma.iter().all(|(last, _)| *last < 0.05);
    let detail = sigma
        .iter()
        .enumerate()
        .map(|(k, (last, min))| format!("theta{} {last:.4} (SR {:.4}, min {min:.4})", k + 1, success_rate(*last)))
        .collect::<Vec<_>>()
        .join(", ");
    report.record(
        5,
        rls_pass,
        format!("RLS sigma_e at step 1200 on true data, need < 0.05: {detail}"),
        started,
    );

    let bayes_pass = cross.iter().all(|(c, _)| c.is_some_and(|s| s <= 200));
    let detail = cross
        .iter()
        .enumerate()
        .map(|(k, (c, p))| {
            format!(
                "theta{} {} (final {p:.3})",
                k + 1,
                c.map_or("never".to_string(), |s| format!("step {s}"))
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    report.record(
        6,
        bayes_pass,
        format!("first step with p(theta*) > 0.9 on true data, need <= 200: {detail}"),
        started,
    );
}

fn training_and_privacy(report: &mut Report) {
    let quick = quick();
    let tag = if quick { " [quick mode, not authoritative]" } else { "" };
    let mut cfg = desk_config();
    if quick {
        cfg.training.episodes = 1000;
        cfg.training.checkpoint_every = 0;
        cfg.evaluation.repetitions = 2;
    }
    let window = (cfg.training.episodes / 10).min(1000);

    let started = Instant::now();
    let mut first_policy = None;
    let mut trends = Vec::new();
    for seed in 0..3 {
        let mut c = cfg.clone();
        c.seed = seed;
        let exp = Experiment::new(c).unwrap();
        let (params, curve) = exp.train(Exec::default(), |_, _| Ok(())).unwrap();
        let rewards: Vec<f64> = curve.iter().map(|r| r.diag.reward).collect();
        let lead = common::mean(&rewards[..window]);
        let trail = common::mean(&rewards[rewards.len() - window..]);
        trends.push((seed, lead, trail));
        if seed == 0 {
            first_policy = Some(params);
        }
    }
    let pass = trends.iter().all(|(_, lead, trail)| trail > lead);
    let detail = trends
        .iter()
        .map(|(s, lead, trail)| format!("seed {s} {lead:.2} -> {trail:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    report.record(
        7,
        pass,
        format!(
            "{} episodes, mean reward of leading vs trailing {window}: {detail}{tag}",
            cfg.training.episodes
        ),
        started,
    );

    let started = Instant::now();
    let exp = Experiment::new(cfg).unwrap();
    let ev = exp.evaluate(first_policy.as_ref().unwrap(), Exec::default()).unwrap();
    let a = ev
        .metrics
        .iter()
        .all(|m| m.p_true_filtered < 0.5 && m.p_true_real > 0.9);
    let b = ev.metrics.iter().all(|m| m.sigma_e_filtered > 10.0 * m.sigma_e_real);
    let c = ev.metrics.iter().all(|m| m.delta_pct < 10.0);
    let rows = ev
        .metrics
        .iter()
        .map(|m| {
            format!(
                "{} p(F) {:.3} p(R) {:.3} sigma_e(F) {:.3} sigma_e(R) {:.4} fuel +{:.2}%",
                m.label(),
                m.p_true_filtered,
                m.p_true_real,
                m.sigma_e_filtered,
                m.sigma_e_real,
                m.delta_pct
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report.record(
        8,
        a && b && c,
        format!(
            "seed-0 policy, {} repetitions: (a) {} (b) {} (c) {}; {rows}{tag}",
            exp.cfg.evaluation.repetitions,
            if a { "ok" } else { "fails" },
            if b { "ok" } else { "fails" },
            if c { "ok" } else { "fails" }
        ),
        started,
    );
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> (bool, String) {
    let mut cfg = ExperimentConfig::default();
    cfg.filter.n_s = 9;
    cfg.filter.n_v = 9;
    cfg.train_filter.n_s = 3;
    cfg.train_filter.n_v = 3;
    cfg.training.episodes = 20;
    cfg.training.horizon = 40;
    cfg.training.checkpoint_every = 10;
    cfg.evaluation.steps = 60;
    cfg.evaluation.repetitions = 2;

    let run = |root: &Path| {
        let tr = cmd_train(&cfg, &root.join("train"), Exec::default()).unwrap();
        cmd_eval(&cfg, &tr.checkpoint, &root.join("eval"), Exec::default()).unwrap();
        let trace = root.join("eval/traces").join(trace_name("shared", 2, 1, "filtered"));
        cmd_attack(
            &cfg,
            &trace,
            Some(&tr.checkpoint),
            &root.join("attack"),
            Exec::default(),
        )
        .unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let csv = sa.keys().filter(|k| k.extension().is_some_and(|e| e == "csv")).count();
    (
        differing.is_empty(),
        format!(
            "train, eval and attack run twice: {} files compared ({csv} CSV), {} differ {:?}",
            sa.len(),
            differing.len(),
            differing
        ),
    )
}

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new() };
    let run = |report: &mut Report, id: usize, f: fn() -> (bool, String)| {
        let started = Instant::now();
        let (pass, detail) = f();
        report.record(id, pass, detail, started);
    };
    run(&mut report, 1, formulas);
    run(&mut report, 2, filter_vs_exact);
    run(&mut report, 3, mutual_information);
    run(&mut report, 4, gradients);
    true_data_baselines(&mut report);
    training_and_privacy(&mut report);
    run(&mut report, 9, determinism);

    report.lines.sort_by_key(|(id, _, _)| *id);
    let passed = report.lines.iter().filter(|(_, p, _)| *p).count();
    emit(&format!("\nacceptance summary: {passed}/{} criteria pass", report.lines.len()));
    for (_, _, line) in &report.lines {
        emit(&format!("  {line}"));
    }
}
