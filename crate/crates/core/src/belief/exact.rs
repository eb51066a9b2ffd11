//! Exact Bayes recursion on a finite (theta, state) support. Used as the
//! reference the particle filter is validated against.

use crate::error::{Error, Result};

/// Joint probability table over `n_theta x n_state` cells, theta-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBelief {
    pub n_theta: usize,
    pub n_state: usize,
    pub probs: Vec<f64>,
}

impl DiscreteBelief {
    pub fn uniform(n_theta: usize, n_state: usize) -> Self {
        let n = n_theta * n_state;
        DiscreteBelief {
            n_theta,
            n_state,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn get(&self, theta: usize, x: usize) -> f64 {
        self.probs[theta * self.n_state + x]
    }

    pub fn theta_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.n_state).map(|row| row.iter().sum()).collect()
    }
}

/// `K(y | theta, x)`, stored `[theta][x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    pub n_theta: usize,
    pub n_state: usize,
    pub n_obs: usize,
    pub p: Vec<f64>,
}

impl EmissionTable {
    pub fn prob(&self, theta: usize, x: usize, y: usize) -> f64 {
        self.p[(theta * self.n_state + x) * self.n_obs + y]
    }

    pub fn row(&self, theta: usize, x: usize) -> &[f64] {
        let start = (theta * self.n_state + x) * self.n_obs;
        &self.p[start..start + self.n_obs]
    }
}

/// `T(x' | theta, x)`, stored `[theta][x][x']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub n_theta: usize,
    pub n_state: usize,
    pub p: Vec<f64>,
}

impl TransitionTable {
    pub fn prob(&self, theta: usize, x: usize, x_next: usize) -> f64 {
        self.p[(theta * self.n_state + x) * self.n_state + x_next]
    }

    pub fn row(&self, theta: usize, x: usize) -> &[f64] {
        let start = (theta * self.n_state + x) * self.n_state;
        &self.p[start..start + self.n_state]
    }

    pub fn identity(n_theta: usize, n_state: usize) -> Self {
        let mut p = vec![0.0; n_theta * n_state * n_state];
        for t in 0..n_theta {
            for x in 0..n_state {
                p[(t * n_state + x) * n_state + x] = 1.0;
            }
        }
        TransitionTable { n_theta, n_state, p }
    }
}

/// One step of the filtering recursion: weight by the emission probability
/// of `y` at the current state, push through the transition, normalize.
///
/// `beta'(theta, x') ∝ sum_x T(x' | theta, x) K(y | theta, x) beta(theta, x)`
pub fn exact_belief_update(
    belief: &DiscreteBelief,
    y: usize,
    kernel: &EmissionTable,
    transition: &TransitionTable,
) -> Result<DiscreteBelief> {
    let (nt, ns) = (belief.n_theta, belief.n_state);
    if kernel.n_theta != nt || kernel.n_state != ns || transition.n_theta != nt || transition.n_state != ns {
        return Err(Error::Domain("table shapes do not match the belief support".into()));
    }
    if y >= kernel.n_obs {
        return Err(Error::Domain(format!(
            "observation {y} outside {} symbols",
            kernel.n_obs
        )));
    }
    let mut next = vec![0.0; nt * ns];
    for t in 0..nt {
        for x in 0..ns {
            let mass = belief.get(t, x) * kernel.prob(t, x, y);
            if mass == 0.0 {
                continue;
            }
            for (x2, p) in transition.row(t, x).iter().enumerate() {
                next[t * ns + x2] += p * mass;
            }
        }
    }
    let z: f64 = next.iter().sum();
    if !(z > 0.0) {
        return Err(Error::DegenerateEvidence);
    }
    next.iter_mut().for_each(|p| *p /= z);
    Ok(DiscreteBelief {
        n_theta: nt,
        n_state: ns,
        probs: next,
    })
}
