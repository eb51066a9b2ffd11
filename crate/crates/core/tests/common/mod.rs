//! Shared oracles and scenario drivers for the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use platoon_privacy::belief::{exact_belief_update, DiscreteBelief, EmissionTable, ParticleBelief, TransitionTable};
use platoon_privacy::dynamics::{HdvState, Scenario, ThetaParams};
use platoon_privacy::policy::{
    actor_forward, mgf_features, sample_kernel_row, GradProbe, PolicyParams, PolicyShape, Standardizer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random row-stochastic table with strictly positive entries.
pub fn stochastic_rows(rng: &mut ChaCha8Rng, rows: usize, width: usize, sharpness: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..width).map(|_| rng.random::<f64>().powf(sharpness) + 0.02).collect();
        let total: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|r| r / total));
    }
    out
}

fn draw_index(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    inverse_cdf(row, rng.random::<f64>())
}

fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, p) in row.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    row.len() - 1
}

pub struct ToyOutcome {
    pub tv: f64,
    pub exact: Vec<f64>,
    pub particle: Vec<f64>,
}

/// Particle filter against the exact recursion on a random discrete model
/// with `n_theta` types, `n_state` states and `n_obs` symbols, after
/// `steps` observations drawn from the model itself.
pub fn toy_filter_vs_exact(
    seed: u64,
    n_theta: usize,
    n_state: usize,
    n_obs: usize,
    steps: usize,
    per_cell: usize,
) -> ToyOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emission = EmissionTable {
        n_theta,
        n_state,
        n_obs,
        p: stochastic_rows(&mut rng, n_theta * n_state, n_obs, 2.0),
    };
    let transition = TransitionTable {
        n_theta,
        n_state,
        p: stochastic_rows(&mut rng, n_theta * n_state, n_state, 2.0),
    };

    // observations from a hidden trajectory
    let true_theta = rng.random_range(0..n_theta);
    let mut x = rng.random_range(0..n_state);
    let mut ys = Vec::with_capacity(steps);
    for _ in 0..steps {
        ys.push(draw_index(&mut rng, emission.row(true_theta, x)));
        x = draw_index(&mut rng, transition.row(true_theta, x));
    }

    let mut exact = DiscreteBelief::uniform(n_theta, n_state);
    for &y in &ys {
        exact = exact_belief_update(&exact, y, &emission, &transition).unwrap();
    }

    let thetas: Vec<ThetaParams> = (0..n_theta)
        .map(|k| ThetaParams::new(1.0 + k as f64, 1.0).unwrap())
        .collect();
    let index_of = |t: &ThetaParams| (t.m - 1.0).round() as usize;
    let states: Vec<usize> = (0..n_state).collect();
    let mut pf = ParticleBelief::init(&thetas, &states, per_cell).unwrap();
    let threshold = pf.len() as f64 / 3.0;
    pf = pf.with_threshold(threshold);
    let mut frng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for &y in &ys {
        let lik: Vec<f64> = (0..pf.len())
            .map(|i| emission.prob(pf.particles()[i].theta, pf.particles()[i].state, y))
            .collect();
        pf.reweight_or_reset(&lik).unwrap();
        pf.propagate_with(
            &mut frng,
            |r: &mut ChaCha8Rng| r.random::<f64>(),
            |t, x, u| inverse_cdf(transition.row(index_of(t), *x), *u),
            platoon_privacy::Exec::default(),
        );
        pf.maybe_resample(&mut frng);
    }
    let e = exact.theta_marginal();
    let p = pf.theta_marginal();
    let tv = 0.5 * e.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>();
    ToyOutcome {
        tv,
        exact: e,
        particle: p,
    }
}

/// `H(Y) - H(Y | Theta)` for a joint table `joint[theta][y]`.
pub fn entropy_mi(joint: &[Vec<f64>]) -> f64 {
    let h = |p: &[f64]| -> f64 { p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum() };
    let n_y = joint[0].len();
    let p_y: Vec<f64> = (0..n_y).map(|y| joint.iter().map(|row| row[y]).sum()).collect();
    let mut cond = 0.0;
    for row in joint {
        let pt: f64 = row.iter().sum();
        if pt > 0.0 {
            let c: Vec<f64> = row.iter().map(|x| x / pt).collect();
            cond += pt * h(&c);
        }
    }
    h(&p_y) - cond
}

/// Random belief with theta groups plus one kernel row per particle.
pub fn random_channel(rng: &mut ChaCha8Rng, n_theta: usize, n: usize, cells: usize) -> (ParticleBelief, Vec<f64>) {
    let thetas = ThetaParams::GRID[..n_theta].to_vec();
    let states: Vec<HdvState> = (0..n).map(|i| HdvState::new(20.0 + i as f64 * 0.1, 15.0)).collect();
    let base = ParticleBelief::init(&thetas, &states, 1).unwrap();
    let raw: Vec<f64> = (0..base.len()).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let belief = ParticleBelief::from_parts(
        thetas,
        base.particles().to_vec(),
        raw.iter().map(|w| w / total).collect(),
    )
    .unwrap();
    let kernels = stochastic_rows(rng, belief.len(), cells, 3.0);
    (belief, kernels)
}

/// Joint table of (theta, datum) implied by a belief and its kernel rows.
pub fn joint_table(belief: &ParticleBelief, kernels: &[f64], cells: usize) -> Vec<Vec<f64>> {
    let mut joint = vec![vec![0.0; cells]; belief.thetas().len()];
    for (i, p) in belief.particles().iter().enumerate() {
        for y in 0..cells {
            joint[p.theta][y] += belief.weights()[i] * kernels[i * cells + y];
        }
    }
    joint
}

/// Parameters with a nonzero critic head plus a probe at a random belief.
pub fn gradient_probe(seed: u64) -> (PolicyParams, GradProbe) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::init(PolicyShape::default(), Standardizer::default(), &mut rng);
    let head = params.critic_out.weight.data.len();
    params.critic_out.weight.data = (0..head).map(|_| rng.random_range(-0.2..0.2)).collect();
    let sc = Scenario::default();
    let mut belief = ParticleBelief::init(
        &ThetaParams::GRID,
        &ParticleBelief::state_lattice(&sc, 9, 9, 4.0, 2.0),
        1,
    )
    .unwrap();
    let lik: Vec<f64> = (0..belief.len()).map(|_| rng.random_range(0.1..1.0)).collect();
    belief.reweight(&lik).unwrap();
    let theta = ThetaParams::GRID[rng.random_range(0..4)];
    let x = HdvState::new(rng.random_range(16.0..24.0), rng.random_range(13.0..17.0));
    let f = mgf_features(&belief, &params).unwrap();
    let alpha = actor_forward(&f, &theta, &x, &params).unwrap();
    let action = sample_kernel_row(&alpha, &mut rng).unwrap();
    let probe = GradProbe {
        belief,
        theta,
        x,
        log_simplex: action.log_simplex,
        delta: rng.random_range(-2.0..2.0),
        target: rng.random_range(-3.0..3.0),
    };
    (params, probe)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
