use crate::dynamics::{EquilibriumPoint, HdvState, ThetaParams};

/// Discrete set of shareable `(velocity, spacing)` values.
///
/// Cells are numbered velocity-major: `cell = iv * s_values.len() + is`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionGrid {
    pub v_values: Vec<f64>,
    pub s_values: Vec<f64>,
}

impl Default for DistortionGrid {
    fn default() -> Self {
        DistortionGrid::centered(&EquilibriumPoint::default(), 2.5, 5.0, 11)
    }
}

impl DistortionGrid {
    /// `points` equispaced values on `v* +- v_half` and `s* +- s_half`.
    pub fn centered(eq: &EquilibriumPoint, v_half: f64, s_half: f64, points: usize) -> Self {
        let axis = |c: f64, h: f64| -> Vec<f64> {
            if points == 1 {
                return vec![c];
            }
            (0..points)
                .map(|i| c - h + 2.0 * h * i as f64 / (points - 1) as f64)
                .collect()
        };
        DistortionGrid {
            v_values: axis(eq.v_star, v_half),
            s_values: axis(eq.s_star, s_half),
        }
    }

    pub fn len(&self) -> usize {
        self.v_values.len() * self.s_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, iv: usize, is: usize) -> usize {
        iv * self.s_values.len() + is
    }

    /// `(velocity, spacing)` of a cell.
    pub fn cell(&self, cell: usize) -> (f64, f64) {
        let ns = self.s_values.len();
        (self.v_values[cell / ns], self.s_values[cell % ns])
    }

    /// Cell closest to `(v, s)` along each axis.
    pub fn nearest(&self, v: f64, s: f64) -> usize {
        fn closest(values: &[f64], x: f64) -> usize {
            let mut best = 0;
            for (i, val) in values.iter().enumerate() {
                if (val - x).abs() < (values[best] - x).abs() {
                    best = i;
                }
            }
            best
        }
        self.index(closest(&self.v_values, v), closest(&self.s_values, s))
    }
}

/// Affine map of particle features `(m, n, s, v)` to unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub center: [f64; 4],
    pub scale: [f64; 4],
}

impl Standardizer {
    pub fn for_equilibrium(eq: &EquilibriumPoint) -> Self {
        Standardizer {
            center: [1.0, 1.0, eq.s_star, eq.v_star],
            scale: [0.5, 0.5, 4.0, 2.0],
        }
    }

    pub fn features(&self, theta: &ThetaParams, x: &HdvState) -> [f64; 4] {
        let raw = [theta.m, theta.n, x.s, x.v];
        std::array::from_fn(|k| (raw[k] - self.center[k]) / self.scale[k])
    }
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer::for_equilibrium(&EquilibriumPoint::default())
    }
}
