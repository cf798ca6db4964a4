use ndarray::{Array2, ArrayView1};

use super::Scalar;
use crate::error::{Error, Result};

/// Numerically stable softmax of one logit row, computed in `f64`.
pub fn softmax_row<F: Scalar>(logits: ArrayView1<'_, F>) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
    let mut out: Vec<f64> = logits.iter().map(|&v| (v.to_f64() - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Mean of `-log softmax(logits)[target]` over rows where `mask` is set.
pub fn masked_cross_entropy<F: Scalar>(logits: &Array2<F>, targets: &[usize], mask: &[bool]) -> Result<f64> {
    masked_cross_entropy_impl(logits, targets, mask, false).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `logits` (zero on masked-off rows).
pub fn masked_cross_entropy_grad<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, Array2<F>)> {
    masked_cross_entropy_impl(logits, targets, mask, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn masked_cross_entropy_impl<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
    mask: &[bool],
    want_grad: bool,
) -> Result<(f64, Option<Array2<F>>)> {
    if targets.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(Error::Invariant("logits, targets and mask lengths differ".into()));
    }
    let n_on = mask.iter().filter(|&&m| m).count();
    if n_on == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / n_on as f64;
    let mut grad = want_grad.then(|| Array2::<F>::zeros(logits.dim()));
    let mut total = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let p = softmax_row(row);
        let t = targets[i];
        if t >= p.len() {
            return Err(Error::Invariant(format!("target {t} outside {} classes", p.len())));
        }
        total -= p[t].max(f64::MIN_POSITIVE).ln();
        if let Some(g) = grad.as_mut() {
            let mut grow = g.row_mut(i);
            for (v, (&pv, gv)) in p.iter().zip(grow.iter_mut()).enumerate() {
                let onehot = if v == t { 1.0 } else { 0.0 };
                *gv = F::of((pv - onehot) * inv);
            }
        }
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(Error::numeric("cross-entropy loss"));
    }
    Ok((loss, grad))
}
