//! Row-wise layer normalization with learned scale and shift.

use super::Params;
use ndarray::{Array2, Axis};

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array2<f64>, // (1, d)
    pub beta: Array2<f64>,  // (1, d)
    pub eps: f64,
    pub gamma_grad: Array2<f64>,
    pub beta_grad: Array2<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_sigma: Vec<f64>, // per row
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array2::ones((1, d)),
            beta: Array2::zeros((1, d)),
            eps: 1e-5,
            gamma_grad: Array2::zeros((1, d)),
            beta_grad: Array2::zeros((1, d)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_sigma = Vec::with_capacity(x.nrows());
        for (row, mut out) in x.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_sigma.push(inv);
            for (o, v) in out.iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_sigma })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.ncols() as f64;
        self.gamma_grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta_grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));

        let mut dx = Array2::zeros(dy.raw_dim());
        for ((dy_row, xhat_row), (mut dx_row, &inv)) in dy
            .outer_iter()
            .zip(cache.xhat.outer_iter())
            .zip(dx.outer_iter_mut().zip(&cache.inv_sigma))
        {
            // dxhat = dy * gamma; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            let gamma = self.gamma.row(0);
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for ((dyv, g), xh) in dy_row.iter().zip(gamma.iter()).zip(xhat_row.iter()) {
                let dxhat = dyv * g;
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xh;
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            for (((dxv, dyv), g), xh) in dx_row
                .iter_mut()
                .zip(dy_row.iter())
                .zip(gamma.iter())
                .zip(xhat_row.iter())
            {
                let dxhat = dyv * g;
                *dxv = inv * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        vec![&self.gamma_grad, &self.beta_grad]
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.gamma_grad, &mut self.beta_grad]
    }
}
