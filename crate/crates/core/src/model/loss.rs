use ndarray::ArrayView2;

use super::forward::clamp_frame;
use crate::error::{Error, Result};
use crate::neural::Scalar;

/// Target stack for step `t`: clean frames `t - tau ..= t + tau`, edge-replicated, row-major.
pub fn pri_target<F: Scalar>(clean: ArrayView2<'_, F>, t: usize, tau: usize) -> Vec<F> {
    let tau_i = tau as isize;
    let mut out = Vec::with_capacity((2 * tau + 1) * clean.ncols());
    for m in -tau_i..=tau_i {
        out.extend(clean.row(clamp_frame(t as isize + m, clean.nrows())).iter().copied());
    }
    out
}

/// Frame-averaged loss terms; `total = post + lambda * pri`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MolLoss {
    pub total: f64,
    pub post: f64,
    pub pri: f64,
}

/// Mean over frames of `||x_hat - x||^2 + lambda ||X_bar - X||_F^2`.
///
/// Posterior arrays are `T x N`; prior arrays hold one flattened
/// `(2 tau + 1) x N` stack per row.
pub fn mol_loss(
    post_pred: ArrayView2<'_, f64>,
    post_target: ArrayView2<'_, f64>,
    pri_pred: ArrayView2<'_, f64>,
    pri_target: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<MolLoss> {
    let mask = vec![true; post_pred.nrows()];
    mol_loss_masked(post_pred, post_target, pri_pred, pri_target, lambda, &mask)
}

/// As [`mol_loss`], averaging only over frames with `mask[t]` set.
pub fn mol_loss_masked(
    post_pred: ArrayView2<'_, f64>,
    post_target: ArrayView2<'_, f64>,
    pri_pred: ArrayView2<'_, f64>,
    pri_target: ArrayView2<'_, f64>,
    lambda: f64,
    mask: &[bool],
) -> Result<MolLoss> {
    if post_pred.dim() != post_target.dim() {
        return Err(Error::shape(
            format!("{:?}", post_pred.dim()),
            format!("{:?}", post_target.dim()),
        ));
    }
    if pri_pred.dim() != pri_target.dim() {
        return Err(Error::shape(
            format!("{:?}", pri_pred.dim()),
            format!("{:?}", pri_target.dim()),
        ));
    }
    if pri_pred.nrows() != post_pred.nrows() || mask.len() != post_pred.nrows() {
        return Err(Error::shape(
            format!("{} frames", post_pred.nrows()),
            format!("{} prior frames, {} mask entries", pri_pred.nrows(), mask.len()),
        ));
    }
    let sq = |a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, t: usize| -> f64 {
        a.row(t)
            .iter()
            .zip(b.row(t))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };
    let (mut post, mut pri, mut count) = (0.0, 0.0, 0usize);
    for t in (0..mask.len()).filter(|&t| mask[t]) {
        post += sq(post_pred, post_target, t);
        pri += sq(pri_pred, pri_target, t);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySignal);
    }
    let (post, pri) = (post / count as f64, pri / count as f64);
    Ok(MolLoss {
        total: post + lambda * pri,
        post,
        pri,
    })
}
