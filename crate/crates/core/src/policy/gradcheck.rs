//! Central finite-difference check of the hand-written gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::belief::ParticleBelief;
use crate::dynamics::{HdvState, ThetaParams};
use crate::error::Result;

use super::dirichlet::log_density;
use super::mgf::mgf_features;
use super::network::{actor_backward, actor_forward, critic_backward, critic_forward};
use super::{ParamGroup, PolicyParams};

pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared in absolute terms. The
/// actor loss is a 121-cell Dirichlet log-density of magnitude ~1e2, so the
/// round-off of a central difference at `FD_STEP` is ~1e-8 absolute.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Entries drawn from each parameter group that the loss depends on.
const ENTRIES_PER_GROUP: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `-delta * ln Dir(simplex | alpha)`.
    Actor,
    /// `(target - V)^2`.
    Critic,
}

/// Everything a loss evaluation needs besides the parameters.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub belief: ParticleBelief,
    pub theta: ThetaParams,
    pub x: HdvState,
    pub log_simplex: Vec<f64>,
    pub delta: f64,
    pub target: f64,
}

pub fn loss(params: &PolicyParams, probe: &GradProbe, kind: LossKind) -> Result<f64> {
    let f = mgf_features(&probe.belief, params)?;
    Ok(match kind {
        LossKind::Actor => {
            let alpha = actor_forward(&f, &probe.theta, &probe.x, params)?;
            -probe.delta * log_density(&alpha, &probe.log_simplex)
        }
        LossKind::Critic => {
            let d = probe.target - critic_forward(&f, params)?;
            d * d
        }
    })
}

pub fn analytic_grad(params: &PolicyParams, probe: &GradProbe, kind: LossKind) -> Result<PolicyParams> {
    let f = mgf_features(&probe.belief, params)?;
    let mut g = params.zeros_like();
    match kind {
        LossKind::Actor => {
            actor_backward(
                &f,
                &probe.theta,
                &probe.x,
                params,
                &probe.log_simplex,
                probe.delta,
                &mut g,
            )?;
        }
        LossKind::Critic => {
            critic_backward(&f, params, probe.target, &mut g)?;
        }
    }
    Ok(g)
}

fn relevant(kind: LossKind, group: ParamGroup) -> bool {
    matches!(
        (kind, group),
        (_, ParamGroup::Encoder) | (LossKind::Actor, ParamGroup::Actor) | (LossKind::Critic, ParamGroup::Critic)
    )
}

/// Largest relative error `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)` over a
/// random subset of parameter entries from every group the loss touches.
pub fn grad_check<R: Rng + ?Sized>(
    params: &PolicyParams,
    probe: &GradProbe,
    kind: LossKind,
    rng: &mut R,
) -> Result<f64> {
    grad_check_with(params, probe, kind, FD_STEP, REL_ERR_FLOOR, rng)
}

pub fn grad_check_with<R: Rng + ?Sized>(
    params: &PolicyParams,
    probe: &GradProbe,
    kind: LossKind,
    step: f64,
    floor: f64,
    rng: &mut R,
) -> Result<f64> {
    let analytic = analytic_grad(params, probe, kind)?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();

    let mut entries = Vec::new();
    for group in [ParamGroup::Encoder, ParamGroup::Actor, ParamGroup::Critic] {
        if !relevant(kind, group) {
            continue;
        }
        let flat: Vec<(usize, usize)> = (0..sizes.len())
            .filter(|&t| PolicyParams::group_of(t) == group)
            .flat_map(|t| (0..sizes[t]).map(move |i| (t, i)))
            .collect();
        let take = ENTRIES_PER_GROUP.min(flat.len());
        entries.extend(sample(rng, flat.len(), take).into_iter().map(|k| flat[k]));
    }

    let mut worst: f64 = 0.0;
    let mut work = params.clone();
    for (t, i) in entries {
        let orig = params.tensors()[t].data[i];
        work.tensors_mut()[t].data[i] = orig + step;
        let up = loss(&work, probe, kind)?;
        work.tensors_mut()[t].data[i] = orig - step;
        let dn = loss(&work, probe, kind)?;
        work.tensors_mut()[t].data[i] = orig;
        let numeric = (up - dn) / (2.0 * step);
        let a = analytic.tensors()[t].data[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}
