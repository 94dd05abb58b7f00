//! Lookup-table embedding with scatter-add backward.

use super::Params;
use crate::rng::gauss;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Array2<f64>, // (n_entries, d)
    pub table_grad: Array2<f64>,
}

impl Embedding {
    pub fn new(n_entries: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = Array2::from_shape_fn((n_entries, d), |_| 0.1 * gauss(rng));
        Embedding {
            table_grad: Array2::zeros(table.raw_dim()),
            table,
        }
    }

    pub fn n_entries(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// Gather rows for `ids` into an `(ids.len(), d)` block.
    pub fn forward(&self, ids: &[u32]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&self.table.row(id as usize));
        }
        out
    }

    /// Scatter-add `dy` rows back into the table gradient.
    pub fn backward(&mut self, ids: &[u32], dy: &Array2<f64>) {
        assert_eq!(ids.len(), dy.nrows(), "ids and gradient rows disagree");
        for (i, &id) in ids.iter().enumerate() {
            let mut g = self.table_grad.row_mut(id as usize);
            g += &dy.row(i);
        }
    }
}

impl Params for Embedding {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.table]
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        vec![&self.table_grad]
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.table_grad]
    }
}
