//! The data-distortion policy: a moment-generating-function encoder of the
//! particle belief, a Dirichlet actor over the distortion grid and a scalar
//! critic, with hand-written backpropagation for these three fixed networks.

pub mod checkpoint;
pub mod dirichlet;
pub mod gradcheck;
pub mod grid;
pub mod mgf;
pub mod network;
pub mod tensor;

use rand::Rng;
use rand_distr::StandardNormal;

pub use dirichlet::{
    emit_distorted, log_density, log_density_grad, mean_kernel_row, sample_kernel_row, DirichletAction, Emission,
};
pub use gradcheck::{grad_check, GradProbe, LossKind};
pub use grid::{DistortionGrid, Standardizer};
pub use mgf::{mgf_features, MgfFeatures, PARTICLE_DIM};
pub use network::{actor_backward, actor_forward, alpha_rows, critic_backward, critic_forward, kernel_rows};
pub use tensor::{Dense, Tensor};

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    /// Number of learned MGF locations.
    pub n_features: usize,
    pub hidden: usize,
    /// Actor output width; equals the distortion grid size.
    pub n_cells: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            n_features: 10,
            hidden: 64,
            n_cells: 121,
        }
    }
}

impl PolicyShape {
    /// Width of the belief summary `[mean, encoded mgf]`.
    pub fn summary_dim(&self) -> usize {
        PARTICLE_DIM + self.n_features
    }

    /// Width of the actor input `[summary, theta, x]`.
    pub fn actor_input_dim(&self) -> usize {
        self.summary_dim() + PARTICLE_DIM
    }
}

pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-3;

/// All policy parameters. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub standardizer: Standardizer,
    pub alpha_floor: f64,
    /// `[n_features, 4]` MGF evaluation points.
    pub locations: Tensor,
    pub encoder: Dense,
    pub actor_hidden: Dense,
    pub actor_out: Dense,
    pub critic_hidden: Dense,
    pub critic_out: Dense,
}

/// Which part of the parameter set a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Actor,
    Critic,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "mgf.locations",
    "mgf.encoder.weight",
    "mgf.encoder.bias",
    "actor.hidden.weight",
    "actor.hidden.bias",
    "actor.out.weight",
    "actor.out.bias",
    "critic.hidden.weight",
    "critic.hidden.bias",
    "critic.out.weight",
    "critic.out.bias",
];

impl PolicyParams {
    /// Fan-in scaled uniform weights, zero biases, MGF locations from
    /// N(0, 0.5) and a zero critic head.
    pub fn init<R: Rng + ?Sized>(shape: PolicyShape, standardizer: Standardizer, rng: &mut R) -> Self {
        let loc_sd = 0.5f64.sqrt();
        let locations = Tensor {
            shape: vec![shape.n_features, PARTICLE_DIM],
            data: (0..shape.n_features * PARTICLE_DIM)
                .map(|_| loc_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        PolicyParams {
            shape,
            standardizer,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            locations,
            encoder: Dense::init(shape.n_features, shape.n_features, rng),
            actor_hidden: Dense::init(shape.actor_input_dim(), shape.hidden, rng),
            actor_out: Dense::init(shape.hidden, shape.n_cells, rng),
            critic_hidden: Dense::init(shape.summary_dim(), shape.hidden, rng),
            critic_out: Dense::zeros(shape.hidden, 1),
        }
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.locations,
            &self.encoder.weight,
            &self.encoder.bias,
            &self.actor_hidden.weight,
            &self.actor_hidden.bias,
            &self.actor_out.weight,
            &self.actor_out.bias,
            &self.critic_hidden.weight,
            &self.critic_hidden.bias,
            &self.critic_out.weight,
            &self.critic_out.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.locations,
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.actor_hidden.weight,
            &mut self.actor_hidden.bias,
            &mut self.actor_out.weight,
            &mut self.actor_out.bias,
            &mut self.critic_hidden.weight,
            &mut self.critic_hidden.bias,
            &mut self.critic_out.weight,
            &mut self.critic_out.bias,
        ]
    }

    pub fn group_of(tensor_index: usize) -> ParamGroup {
        match tensor_index {
            0..=2 => ParamGroup::Encoder,
            3..=6 => ParamGroup::Actor,
            _ => ParamGroup::Critic,
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &PolicyParams) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            t.data.iter_mut().zip(&o.data).for_each(|(x, y)| *x += a * y);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= a);
        }
    }

    /// Rescales to global norm `max_norm` if larger. Returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.sq_norm().sqrt();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}
