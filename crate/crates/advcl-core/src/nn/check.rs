//! Finite-difference gradient probes.
//!
//! Central differences with a step scaled to the entry's magnitude. These
//! back every layer's unit tests and the whole-model probes in the
//! integration suite, so backward passes are never trusted on faith.

use super::Params;
use ndarray::Array2;

/// Relative error with a unit floor, so tiny gradients don't blow it up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// `0.5 * Σ y²` and its gradient — a cheap strictly-curved probe loss.
pub fn sum_squares_loss(y: &Array2<f64>) -> (f64, Array2<f64>) {
    let loss = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
    (loss, y.clone())
}

/// Indices to probe in a tensor of `len` entries: all of them when small,
/// otherwise an evenly spaced subsample.
pub fn probe_indices(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        (0..cap).map(|i| i * len / cap).collect()
    }
}

/// Check a layer's accumulated parameter gradients against central
/// differences of `run`, which must zero nothing, compute the loss, and
/// accumulate gradients exactly once.
pub fn check_param_grads<L, F>(mut layer: L, x: &Array2<f64>, mut run: F, tol: f64)
where
    L: Params,
    F: FnMut(&mut L, &Array2<f64>) -> f64,
{
    layer.zero_grads();
    run(&mut layer, x);
    let analytic: Vec<Array2<f64>> = layer.grads().iter().map(|g| (*g).clone()).collect();

    for p_idx in 0..analytic.len() {
        let len = analytic[p_idx].len();
        for flat in probe_indices(len, 64) {
            let orig = {
                let params = layer.params();
                *params[p_idx].as_slice().expect("standard layout")
                    .get(flat)
                    .expect("flat index in range")
            };
            let h = 1e-5 * orig.abs().max(1.0);

            set_entry(&mut layer, p_idx, flat, orig + h);
            let up = run(&mut layer, x);
            set_entry(&mut layer, p_idx, flat, orig - h);
            let down = run(&mut layer, x);
            set_entry(&mut layer, p_idx, flat, orig);

            let numeric = (up - down) / (2.0 * h);
            let got = analytic[p_idx].as_slice().expect("standard layout")[flat];
            let err = rel_err(got, numeric);
            assert!(
                err <= tol,
                "param {p_idx} entry {flat}: analytic {got}, numeric {numeric}, rel err {err}"
            );
        }
    }
}

fn set_entry<L: Params>(layer: &mut L, p_idx: usize, flat: usize, value: f64) {
    let mut params = layer.params_mut();
    params[p_idx]
        .as_slice_mut()
        .expect("standard layout")[flat] = value;
}

/// Compare a precomputed analytic input gradient against central
/// differences of `loss`.
pub fn check_input_grad<FL>(x: &Array2<f64>, analytic: &Array2<f64>, mut loss: FL, tol: f64)
where
    FL: FnMut(&Array2<f64>) -> f64,
{
    assert_eq!(analytic.shape(), x.shape(), "input gradient shape mismatch");
    let mut probe = x.clone();
    for flat in probe_indices(x.len(), 64) {
        let orig = probe.as_slice().expect("standard layout")[flat];
        let h = 1e-5 * orig.abs().max(1.0);

        probe.as_slice_mut().unwrap()[flat] = orig + h;
        let up = loss(&probe);
        probe.as_slice_mut().unwrap()[flat] = orig - h;
        let down = loss(&probe);
        probe.as_slice_mut().unwrap()[flat] = orig;

        let numeric = (up - down) / (2.0 * h);
        let got = analytic.as_slice().expect("standard layout")[flat];
        let err = rel_err(got, numeric);
        assert!(
            err <= tol,
            "input entry {flat}: analytic {got}, numeric {numeric}, rel err {err}"
        );
    }
}
