//! Position-wise feed-forward sublayer: linear → GELU → linear.

use super::linear::{Linear, LinearCache};
use super::Params;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU, smooth everywhere.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x.powi(3))).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct FeedForwardCache {
    c1: LinearCache,
    pre_act: Array2<f64>,
    c2: LinearCache,
}

impl FeedForward {
    pub fn new(d: usize, d_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            lin1: Linear::new(d, d_hidden, rng),
            lin2: Linear::new(d_hidden, d, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let (pre_act, c1) = self.lin1.forward(x);
        let act = pre_act.mapv(gelu);
        let (y, c2) = self.lin2.forward(&act);
        (y, FeedForwardCache { c1, pre_act, c2 })
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Array2<f64>) -> Array2<f64> {
        let dact = self.lin2.backward(&cache.c2, dy);
        let dpre = &dact * &cache.pre_act.mapv(gelu_prime);
        self.lin1.backward(&cache.c1, &dpre)
    }
}

impl Params for FeedForward {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = self.lin1.params();
        v.extend(self.lin2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.lin1.params_mut();
        v.extend(self.lin2.params_mut());
        v
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        let mut v = self.lin1.grads();
        v.extend(self.lin2.grads());
        v
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.lin1.grads_mut();
        v.extend(self.lin2.grads_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{check_input_grad, check_param_grads, rel_err, sum_squares_loss};
    use crate::rng::{gauss, stage_rng};

    #[test]
    fn gelu_matches_known_values() {
        assert!(gelu(0.0).abs() < 1e-12);
        // gelu(x) → x for large x, → 0 for very negative x.
        assert!((gelu(6.0) - 6.0).abs() < 1e-6);
        assert!(gelu(-6.0).abs() < 1e-6);
        // Smooth midpoint value of the tanh approximation.
        assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
    }

    #[test]
    fn gelu_prime_matches_finite_differences() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.5, 2.0, 4.0] {
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                rel_err(gelu_prime(x), numeric) < 1e-8,
                "x={x}: {} vs {numeric}",
                gelu_prime(x)
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stage_rng(8, "ff-gc");
        let layer = FeedForward::new(4, 7, &mut rng);
        let x = ndarray::Array2::from_shape_fn((3, 4), |_| gauss(&mut rng));
        check_param_grads(
            layer,
            &x,
            |l, x| {
                let (y, cache) = l.forward(x);
                let (loss, dy) = sum_squares_loss(&y);
                l.backward(&cache, &dy);
                loss
            },
            1e-5,
        );
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = stage_rng(9, "ff-gx");
        let mut layer = FeedForward::new(4, 6, &mut rng);
        let x = ndarray::Array2::from_shape_fn((2, 4), |_| gauss(&mut rng));
        let analytic = {
            let (y, cache) = layer.forward(&x);
            let (_, dy) = sum_squares_loss(&y);
            layer.backward(&cache, &dy)
        };
        check_input_grad(
            &x,
            &analytic,
            |x| {
                let (y, _) = layer.forward(x);
                sum_squares_loss(&y).0
            },
            1e-5,
        );
    }
}
