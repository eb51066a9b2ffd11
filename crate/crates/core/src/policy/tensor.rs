use rand::Rng;

/// Dense row-major array of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, x: f64) {
        self.data.fill(x);
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Fully connected layer `y = W x + b` with `W` shaped `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Weights uniform in `+-1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Dense {
            weight: Tensor::uniform(&[n_out, n_in], bound, rng),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[n_out, n_in]),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        let n_in = self.n_in();
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight.data[o * n_in..(o + 1) * n_in];
            *out = self.bias.data[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` and, if requested,
    /// writes the input gradient `W^T dy` into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        let n_in = self.n_in();
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias.data[o] += g;
            let row = &mut grad.weight.data[o * n_in..(o + 1) * n_in];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight.data[o * n_in..(o + 1) * n_in];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dense_forward_backward() {
        let layer = Dense {
            weight: Tensor {
                shape: vec![2, 3],
                data: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0],
            },
            bias: Tensor {
                shape: vec![2],
                data: vec![0.1, -0.2],
            },
        };
        let x = [1.0, -1.0, 2.0];
        let mut y = [0.0; 2];
        layer.forward(&x, &mut y);
        assert_abs_diff_eq!(y[0], 5.1, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], -1.7, epsilon = 1e-12);

        let mut g = Dense::zeros(3, 2);
        let mut dx = [0.0; 3];
        layer.backward(&x, &[1.0, 2.0], &mut g, Some(&mut dx));
        assert_eq!(g.bias.data, vec![1.0, 2.0]);
        assert_eq!(g.weight.data, vec![1.0, -1.0, 2.0, 2.0, -2.0, 4.0]);
        assert_eq!(dx, [-1.0, 3.0, 3.0]);
    }

    #[test]
    fn softplus_stable() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_abs_diff_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
