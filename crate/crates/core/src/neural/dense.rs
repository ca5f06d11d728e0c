//! Fully connected layers (weights and biases), with ReLU support.

use crate::matrix::Matrix;
use crate::rng::SplitMix64;

use super::INIT_RANGE;

/// One affine layer: `y = W x + b`, with `W` shaped out×in and `b` stored
/// as a 1×out matrix so optimizers can treat it like any other tensor.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w: Matrix::random_uniform(output, input, -INIT_RANGE, INIT_RANGE, rng),
            b: Matrix::zeros(1, output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: Matrix::zeros(1, self.b.cols()),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    /// Affine forward pass (no activation).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (yi, bi) in y.iter_mut().zip(self.b.as_slice()) {
            *yi += bi;
        }
        y
    }

    /// Accumulates gradients given the upstream gradient `dy` and the
    /// input that produced the forward pass; returns `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        grads.w.add_outer(dy, x, 1.0);
        for (gb, d) in grads.b.as_mut_slice().iter_mut().zip(dy) {
            *gb += d;
        }
        self.w.matvec_t(dy)
    }
}

/// Rectified linear activation.
pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Chain-rule step through ReLU: passes the gradient where the
/// pre-activation was strictly positive.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect()
}
