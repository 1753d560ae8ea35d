use alloc::vec::Vec;

use super::ParamStore;

/// Gradient entries smaller than this in magnitude are compared absolutely;
/// finite differences cannot resolve relative error below the roundoff floor.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central differences of `f` at `x`.
pub fn finite_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Compares the analytic gradient that `loss_fn` accumulates into `store`
/// against central finite differences, returning the worst relative error
/// over all scalar parameters.
///
/// `loss_fn` must return the loss and add its gradient into the store's
/// accumulators; the store's gradients are zeroed before the analytic pass.
/// Parameter values are restored before returning.
pub fn grad_check<F>(mut loss_fn: F, store: &mut ParamStore, step: f64) -> f64
where
    F: FnMut(&mut ParamStore) -> f64,
{
    store.zero_grads();
    loss_fn(store);
    let analytic: Vec<Vec<f64>> = store.grads().iter().map(|g| g.data().to_vec()).collect();
    let mut worst = 0.0f64;
    for p in 0..store.len() {
        for i in 0..store.value(p).len() {
            let orig = store.value(p).data()[i];
            store.value_mut(p).data_mut()[i] = orig + step;
            let up = loss_fn(store);
            store.value_mut(p).data_mut()[i] = orig - step;
            let down = loss_fn(store);
            store.value_mut(p).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[p][i], numeric));
        }
    }
    store.zero_grads();
    worst
}
