//! Finite-difference gradient checking used by the test suites.

use ndarray::Array4;

use crate::layer::Layer;

/// Central finite difference of a scalar loss w.r.t. one slot of a tensor.
pub fn central_diff(mut f: impl FnMut(&Array4<f32>) -> f64, x: &Array4<f32>, idx: usize, h: f32) -> f64 {
    let mut xp = x.clone();
    xp.as_slice_mut().unwrap()[idx] += h;
    let fp = f(&xp);
    let mut xm = x.clone();
    xm.as_slice_mut().unwrap()[idx] -= h;
    let fm = f(&xm);
    (fp - fm) / (2.0 * h as f64)
}

/// Central difference that reports None when the two one-sided differences
/// disagree, i.e. the perturbation straddles a ReLU-style kink where finite
/// differences are meaningless.
fn stable_diff(fp: f64, f0: f64, fm: f64, h: f64) -> Option<f64> {
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    let scale = fwd.abs().max(bwd.abs()).max(1e-2);
    if (fwd - bwd).abs() / scale > 0.02 {
        return None;
    }
    Some((fp - fm) / (2.0 * h))
}

/// Checks a layer's input gradient and parameter gradients against central
/// differences, using `loss(y) = sum(coeffs * y)` whose gradient is `coeffs`.
/// Returns the worst relative error seen over kink-free sample points.
pub fn check_layer(layer: &mut dyn Layer, x: &Array4<f32>, train: bool) -> f64 {
    let y = layer.forward(x, train);
    // fixed pseudo-random coefficients keep the loss sensitive to every output
    let coeffs = {
        let mut c = y.clone();
        let mut state = 0x9E3779B97F4A7C15u64;
        c.mapv_inplace(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f32 / 16777216.0) - 0.5
        });
        c
    };
    let loss_of = |out: &Array4<f32>| -> f64 {
        out.iter().zip(coeffs.iter()).map(|(a, b)| *a as f64 * *b as f64).sum()
    };
    let base_loss = loss_of(&y);
    layer.zero_grads();
    let dx = layer.backward(&coeffs);

    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let h = 5e-3f32;

    // input gradient: sample a handful of slots
    let n = x.len();
    let step = (n / 17).max(1);
    for idx in (0..n).step_by(step) {
        let mut eval_at = |delta: f32| -> f64 {
            let mut xv = x.clone();
            xv.as_slice_mut().unwrap()[idx] += delta;
            let out = layer.forward(&xv, train);
            loss_of(&out)
        };
        let fp = eval_at(h);
        let fm = eval_at(-h);
        if let Some(num) = stable_diff(fp, base_loss, fm, h as f64) {
            let ana = dx.as_slice().unwrap()[idx] as f64;
            worst = worst.max(rel_err(ana, num));
            checked += 1;
        }
    }
    // re-run forward/backward to restore caches and grads for param check
    layer.forward(x, train);
    layer.zero_grads();
    layer.backward(&coeffs);

    let grads: Vec<Vec<f32>> = layer
        .params()
        .iter()
        .map(|p| p.grad.as_slice().unwrap().to_vec())
        .collect();
    let n_params = grads.len();
    for pi in 0..n_params {
        let len = grads[pi].len();
        let step = (len / 7).max(1);
        for idx in (0..len).step_by(step) {
            let orig = {
                let params = layer.params();
                params[pi].value.as_slice().unwrap()[idx]
            };
            let eval = |layer: &mut dyn Layer, v: f32| -> f64 {
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = v;
                let out = layer.forward(x, train);
                loss_of(&out)
            };
            let fp = eval(layer, orig + h);
            let fm = eval(layer, orig - h);
            layer.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig;
            if let Some(num) = stable_diff(fp, base_loss, fm, h as f64) {
                worst = worst.max(rel_err(grads[pi][idx] as f64, num));
                checked += 1;
            }
        }
    }
    assert!(checked > 8, "too few kink-free finite-difference points");
    worst
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}
