//! Loss functions returning (scalar loss, gradient w.r.t. the input).
//! Scalars accumulate in f64; gradients are f32 like the activations.

use ndarray::{Array2, Array3, Array4};

/// Mean squared error over all elements.
pub fn mse(pred: &Array4<f32>, target: &Array4<f32>) -> (f64, Array4<f32>) {
    assert_eq!(pred.dim(), target.dim(), "mse shape mismatch");
    let n = pred.len() as f64;
    let mut loss = 0f64;
    let mut grad = pred.clone();
    grad.zip_mut_with(target, |p, t| {
        let d = (*p - *t) as f64;
        loss += d * d;
        *p = (2.0 * d / n) as f32;
    });
    (loss / n, grad)
}

/// Mean squared error against a constant target (LSGAN objective).
pub fn mse_const(pred: &Array4<f32>, target: f32) -> (f64, Array4<f32>) {
    let n = pred.len() as f64;
    let mut loss = 0f64;
    let grad = pred.mapv(|p| {
        let d = (p - target) as f64;
        loss += d * d;
        (2.0 * d / n) as f32
    });
    (loss / n, grad)
}

/// Mean absolute error over all elements.
pub fn l1(pred: &Array4<f32>, target: &Array4<f32>) -> (f64, Array4<f32>) {
    assert_eq!(pred.dim(), target.dim(), "l1 shape mismatch");
    let n = pred.len() as f64;
    let mut loss = 0f64;
    let mut grad = pred.clone();
    grad.zip_mut_with(target, |p, t| {
        let d = (*p - *t) as f64;
        loss += d.abs();
        *p = (d.signum() / n) as f32;
    });
    (loss / n, grad)
}

/// Per-sample weighted cross-entropy terms `w[y_i] * (-log softmax(logits_i)[y_i])`,
/// computed in f64 with a log-sum-exp stabilizer.
pub fn weighted_ce_terms(logits: &Array2<f32>, labels: &[usize], weights: &[f32]) -> Vec<f64> {
    let (n, c) = logits.dim();
    assert_eq!(labels.len(), n, "label count");
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let lse = row.iter().map(|&v| ((v as f64) - max).exp()).sum::<f64>().ln() + max;
        let y = labels[i];
        assert!(y < c, "label out of range");
        let ce = lse - logits[(i, y)] as f64;
        terms.push(weights[y] as f64 * ce);
    }
    terms
}

/// Weighted cross-entropy normalized by the sum of applied weights, so equal
/// weights reduce to the plain mean cross-entropy. Returns the loss and the
/// gradient w.r.t. the logits.
pub fn weighted_cross_entropy(
    logits: &Array2<f32>,
    labels: &[usize],
    weights: &[f32],
) -> (f64, Array2<f32>) {
    let (n, c) = logits.dim();
    let terms = weighted_ce_terms(logits, labels, weights);
    let w_sum: f64 = labels.iter().map(|&y| weights[y] as f64).sum();
    let loss = terms.iter().sum::<f64>() / w_sum;

    let mut grad = Array2::<f32>::zeros((n, c));
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let exps: Vec<f64> = row.iter().map(|&v| ((v as f64) - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let y = labels[i];
        let scale = weights[y] as f64 / w_sum;
        for j in 0..c {
            let soft = exps[j] / z;
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad[(i, j)] = (scale * (soft - onehot)) as f32;
        }
    }
    (loss, grad)
}

/// Per-pixel 3+-class cross-entropy averaged over batch and pixels.
/// `labels` holds class indices per pixel.
pub fn pixel_cross_entropy(scores: &Array4<f32>, labels: &Array3<u8>) -> (f64, Array4<f32>) {
    let (n, c, h, w) = scores.dim();
    assert_eq!(labels.dim(), (n, h, w), "label map shape");
    let m = (n * h * w) as f64;
    let mut loss = 0f64;
    let mut grad = Array4::<f32>::zeros((n, c, h, w));
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let lab = labels[(ni, y, x)] as usize;
                assert!(lab < c, "pixel label out of range");
                let mut max = f64::NEG_INFINITY;
                for ci in 0..c {
                    max = max.max(scores[(ni, ci, y, x)] as f64);
                }
                let mut z = 0f64;
                for ci in 0..c {
                    z += ((scores[(ni, ci, y, x)] as f64) - max).exp();
                }
                loss += z.ln() + max - scores[(ni, lab, y, x)] as f64;
                for ci in 0..c {
                    let soft = ((scores[(ni, ci, y, x)] as f64) - max).exp() / z;
                    let onehot = if ci == lab { 1.0 } else { 0.0 };
                    grad[(ni, ci, y, x)] = ((soft - onehot) / m) as f32;
                }
            }
        }
    }
    (loss / m, grad)
}

/// Softmax along a class axis of length `c` for a (c, h, w) score map.
pub fn softmax_map(scores: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = scores.dim();
    let mut out = scores.clone();
    for y in 0..h {
        for x in 0..w {
            let mut max = f32::NEG_INFINITY;
            for ci in 0..c {
                max = max.max(scores[(ci, y, x)]);
            }
            let mut z = 0f32;
            for ci in 0..c {
                let e = (scores[(ci, y, x)] - max).exp();
                out[(ci, y, x)] = e;
                z += e;
            }
            for ci in 0..c {
                out[(ci, y, x)] /= z;
            }
        }
    }
    out
}

/// Softmax over a score vector.
pub fn softmax_vec(scores: &[f32]) -> Vec<f32> {
    let max = scores.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f32> = scores.iter().map(|&v| (v - max).exp()).collect();
    let z: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
