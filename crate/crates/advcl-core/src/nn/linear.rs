//! Affine layer `y = x W + b`.

use super::Params;
use crate::rng::gauss;
use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,      // (d_in, d_out)
    pub b: Array2<f64>,      // (1, d_out)
    pub w_grad: Array2<f64>,
    pub b_grad: Array2<f64>,
}

/// Input rows saved for the backward pass.
pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    /// Gaussian init scaled by `1/sqrt(d_in)`, zero bias.
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let w = Array2::from_shape_fn((d_in, d_out), |_| gauss(rng) * scale);
        Linear {
            w,
            b: Array2::zeros((1, d_out)),
            w_grad: Array2::zeros((d_in, d_out)),
            b_grad: Array2::zeros((1, d_out)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let y = x.dot(&self.w) + &self.b;
        (y, LinearCache { x: x.clone() })
    }

    /// Output without recording a cache, for inference-only paths.
    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        self.w_grad += &cache.x.t().dot(dy);
        self.b_grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        vec![&self.w_grad, &self.b_grad]
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w_grad, &mut self.b_grad]
    }
}
