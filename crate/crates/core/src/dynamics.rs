//! Three-vehicle mixed-autonomy platoon: lead vehicle, CAV, trailing HDV.
//!
//! Vehicle indices follow the platoon order: 0 is the lead, 1 the CAV and
//! 2 the HDV. Spacing `s[0]` is the lead's gap to a virtual reference point
//! that moves at the equilibrium velocity, so the first controller term is
//! zero at equilibrium.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Car-following sensitivities of the human driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Sensitivity to the spacing error (1/s).
    pub m: f64,
    /// Sensitivity to the velocity difference (1/s).
    pub n: f64,
}

impl ThetaParams {
    /// The four driver types used throughout the experiments.
    pub const GRID: [ThetaParams; 4] = [
        ThetaParams { m: 0.4, n: 0.5 },
        ThetaParams { m: 0.7, n: 0.8 },
        ThetaParams { m: 1.0, n: 1.1 },
        ThetaParams { m: 1.3, n: 1.4 },
    ];

    pub fn new(m: f64, n: f64) -> Result<Self> {
        if !(m > 0.0 && n > 0.0 && m.is_finite() && n.is_finite()) {
            return Err(Error::Domain(format!(
                "theta must be positive and finite, got ({m}, {n})"
            )));
        }
        Ok(ThetaParams { m, n })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.m, self.n]
    }
}

/// HDV spacing (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HdvState {
    pub s: f64,
    pub v: f64,
}

impl HdvState {
    pub fn new(s: f64, v: f64) -> Self {
        HdvState { s, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatoonState {
    /// Spacing per vehicle (m).
    pub s: [f64; 3],
    /// Velocity per vehicle (m/s).
    pub v: [f64; 3],
    pub step: u64,
}

impl PlatoonState {
    pub fn at_equilibrium(eq: &EquilibriumPoint) -> Self {
        PlatoonState {
            s: [eq.s_star; 3],
            v: [eq.v_star; 3],
            step: 0,
        }
    }

    pub fn hdv(&self) -> HdvState {
        HdvState::new(self.s[2], self.v[2])
    }

    pub fn cav_velocity(&self) -> f64 {
        self.v[1]
    }
}

/// Linear feedback gains of the CAV controller, one pair per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub mu: [f64; 3],
    pub eta: [f64; 3],
}

impl Default for ControllerGains {
    /// The tabulated gains `(0.1, 0)`, `(-0.5, 0.5)`, `(-0.2, 0.2)`.
    fn default() -> Self {
        ControllerGains {
            mu: [0.1, -0.5, -0.2],
            eta: [0.0, 0.5, 0.2],
        }
    }
}

impl ControllerGains {
    /// Tabulated gains with the CAV's own-state feedback sign flipped.
    ///
    /// The literal gains put a positive real eigenvalue (about +1/s) in the
    /// linearized closed loop; this set is stable for every grid driver.
    pub fn stabilized() -> Self {
        ControllerGains {
            mu: [0.1, 0.5, -0.2],
            eta: [0.0, -0.5, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub s_star: f64,
    pub v_star: f64,
}

impl Default for EquilibriumPoint {
    fn default() -> Self {
        EquilibriumPoint {
            s_star: 20.0,
            v_star: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvdThresholds {
    pub s_st: f64,
    pub s_go: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for FvdThresholds {
    fn default() -> Self {
        FvdThresholds {
            s_st: 5.0,
            s_go: 35.0,
            v_max: 30.0,
            a_min: -5.0,
            a_max: 5.0,
        }
    }
}

impl FvdThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_st < self.s_go) {
            return Err(Error::Config(format!(
                "scenario.s_st ({}) must be less than scenario.s_go ({})",
                self.s_st, self.s_go
            )));
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return Err(Error::Config(format!(
                "scenario.a_min ({}) must be negative and scenario.a_max ({}) positive",
                self.a_min, self.a_max
            )));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config(format!(
                "scenario.v_max ({}) must be positive",
                self.v_max
            )));
        }
        Ok(())
    }

    pub fn clamp_accel(&self, a: f64) -> f64 {
        a.clamp(self.a_min, self.a_max)
    }
}

/// Variances of the three disturbance processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_lead_sq: f64,
    pub sigma_ga_sq: f64,
    pub sigma_gs_sq: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_lead_sq: 0.1,
            sigma_ga_sq: 0.1,
            sigma_gs_sq: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn disabled() -> Self {
        NoiseSpec {
            sigma_lead_sq: 0.0,
            sigma_ga_sq: 0.0,
            sigma_gs_sq: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeadModel {
    /// `v_lead = v* + eps`, eps ~ N(0, sigma_lead_sq).
    SpeedTracking,
    /// `dv_lead/dt = w`, w ~ N(bias, variance).
    AccelDisturbance { variance: f64, bias: f64 },
}

/// Everything needed to advance the platoon by one sharing interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub eq: EquilibriumPoint,
    pub thresholds: FvdThresholds,
    pub gains: ControllerGains,
    pub noise: NoiseSpec,
    pub lead: LeadModel,
    /// Sharing interval (s).
    pub dt: f64,
    /// Euler sub-steps per sharing interval.
    pub substeps: u32,
    /// Per-dimension weights (velocity, spacing) of the distortion measure.
    pub distortion_weights: [f64; 2],
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            eq: EquilibriumPoint::default(),
            thresholds: FvdThresholds::default(),
            gains: ControllerGains::stabilized(),
            noise: NoiseSpec::default(),
            lead: LeadModel::SpeedTracking,
            dt: 0.2,
            substeps: 1,
            distortion_weights: [1.0, 1.0],
        }
    }
}

/// Spacing-dependent desired velocity of the FVD model.
pub fn desired_velocity(s: f64, thr: &FvdThresholds) -> f64 {
    if s <= thr.s_st {
        0.0
    } else if s >= thr.s_go {
        thr.v_max
    } else {
        let frac = (s - thr.s_st) / (thr.s_go - thr.s_st);
        0.5 * thr.v_max * (1.0 - (PI * frac).cos())
    }
}

/// FVD acceleration clamped to the actuator limits.
pub fn fvd_accel(theta: &ThetaParams, s: f64, v_self: f64, v_lead: f64, thr: &FvdThresholds) -> f64 {
    thr.clamp_accel(fvd_raw(theta, s, v_self, v_lead, thr))
}

fn fvd_raw(theta: &ThetaParams, s: f64, v_self: f64, v_lead: f64, thr: &FvdThresholds) -> f64 {
    theta.m * (desired_velocity(s, thr) - v_self) + theta.n * (v_lead - v_self)
}

/// Linear CAV controller. `shared_hdv` is the `(velocity, spacing)` the HDV
/// reported, and replaces the true vehicle-3 state in the sum.
pub fn cav_control(
    state: &PlatoonState,
    gains: &ControllerGains,
    eq: &EquilibriumPoint,
    shared_hdv: (f64, f64),
    thr: &FvdThresholds,
) -> f64 {
    let (v_hdv, s_hdv) = shared_hdv;
    let s = [state.s[0], state.s[1], s_hdv];
    let v = [state.v[0], state.v[1], v_hdv];
    let u: f64 = (0..3)
        .map(|i| gains.mu[i] * (s[i] - eq.s_star) + gains.eta[i] * (v[i] - eq.v_star))
        .sum();
    thr.clamp_accel(u)
}

/// One explicit-Euler step of the HDV alone.
///
/// `g_a` and `g_s` are the already-drawn acceleration and spacing-rate
/// disturbances; the particle filter and the platoon share this routine so
/// the two models can never drift apart.
pub fn hdv_transition(
    theta: &ThetaParams,
    x: HdvState,
    v_lead: f64,
    dt: f64,
    thr: &FvdThresholds,
    g_a: f64,
    g_s: f64,
) -> HdvState {
    let a = thr.clamp_accel(fvd_raw(theta, x.s, x.v, v_lead, thr) + g_a);
    HdvState {
        s: (x.s + dt * (v_lead - x.v + g_s)).max(0.0),
        v: (x.v + dt * a).clamp(0.0, thr.v_max),
    }
}

impl Scenario {
    /// Advances the platoon one sharing interval with CAV input `u_cav`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &PlatoonState,
        theta: &ThetaParams,
        u_cav: f64,
        rng: &mut R,
    ) -> PlatoonState {
        self.step_dt(state, theta, u_cav, self.dt, rng)
    }

    pub fn step_dt<R: Rng + ?Sized>(
        &self,
        state: &PlatoonState,
        theta: &ThetaParams,
        u_cav: f64,
        dt: f64,
        rng: &mut R,
    ) -> PlatoonState {
        let k = self.substeps.max(1);
        let h = dt / f64::from(k);
        let mut next = *state;
        for _ in 0..k {
            next = self.euler(&next, theta, u_cav, h, rng);
        }
        next.step = state.step + 1;
        next
    }

    fn euler<R: Rng + ?Sized>(
        &self,
        st: &PlatoonState,
        theta: &ThetaParams,
        u_cav: f64,
        h: f64,
        rng: &mut R,
    ) -> PlatoonState {
        let thr = &self.thresholds;
        let eq = &self.eq;
        if h <= 0.0 {
            return *st;
        }
        let lead_noise = draw(rng, self.noise.sigma_lead_sq);
        let g_a = draw(rng, self.noise.sigma_ga_sq);
        let g_s = draw(rng, self.noise.sigma_gs_sq);

        let v_lead = match self.lead {
            LeadModel::SpeedTracking => eq.v_star + lead_noise,
            LeadModel::AccelDisturbance { variance, bias } => {
                let w = bias + variance.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal);
                st.v[0] + h * thr.clamp_accel(w)
            }
        };
        let hdv = hdv_transition(theta, st.hdv(), st.v[1], h, thr, g_a, g_s);

        PlatoonState {
            s: [
                (st.s[0] + h * (eq.v_star - st.v[0])).max(0.0),
                (st.s[1] + h * (st.v[0] - st.v[1])).max(0.0),
                hdv.s,
            ],
            v: [
                v_lead.clamp(0.0, thr.v_max),
                (st.v[1] + h * thr.clamp_accel(u_cav)).clamp(0.0, thr.v_max),
                hdv.v,
            ],
            step: st.step,
        }
    }
}

/// Zero-mean Gaussian draw with the given variance. Always consumes one
/// normal from the stream so disabling noise keeps streams aligned.
fn draw<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    variance.max(0.0).sqrt() * z
}

/// Instantaneous fuel consumption (mL/s).
pub fn fuel_rate(v: f64, a: f64) -> f64 {
    let r = 0.333 + 0.00108 * v * v + 1.200 * a;
    if r <= 0.0 {
        return 0.444;
    }
    let accel_term = if a > 0.0 { 0.054 * a * a * v } else { 0.0 };
    0.444 + 0.090 * r * v + accel_term
}

/// Euclidean distance between true and shared `(velocity, spacing)`.
pub fn distortion(true_state: (f64, f64), shared: (f64, f64)) -> f64 {
    weighted_distortion(true_state, shared, [1.0, 1.0])
}

pub fn weighted_distortion(true_state: (f64, f64), shared: (f64, f64), w: [f64; 2]) -> f64 {
    let dv = true_state.0 - shared.0;
    let ds = true_state.1 - shared.1;
    (w[0] * dv * dv + w[1] * ds * ds).sqrt()
}
