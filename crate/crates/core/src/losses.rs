//! Training losses on field planes, with analytic gradients for verification.
//!
//! Every term is a mean over its contributing cells; a term with no contributing
//! cells is 0 and carries a zero count.

use crate::error::{Error, Result};
use crate::types::FieldGrid;

/// Confidence predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;
/// Lower clamp for the Laplace spread.
pub const MIN_LAPLACE_B: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerm {
    pub value: f64,
    pub count: usize,
}

impl LossTerm {
    fn mean(sum: f64, count: usize) -> Self {
        let value = if count == 0 { 0.0 } else { sum / count as f64 };
        Self { value, count }
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

fn bce_cell(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn bce_sum(pred: &[f64], target: &[f64], ignore: &[bool]) -> Result<(f64, usize)> {
    check_len(pred.len(), target.len())?;
    check_len(pred.len(), ignore.len())?;
    let mut sum = 0.0;
    let mut count = 0;
    for ((&p, &t), &ig) in pred.iter().zip(target).zip(ignore) {
        if !ig {
            sum += bce_cell(p, t);
            count += 1;
        }
    }
    Ok((sum, count))
}

/// Mean binary cross-entropy over non-ignored cells.
pub fn bce_confidence(pred: &[f64], target: &[f64], ignore: &[bool]) -> Result<LossTerm> {
    let (sum, count) = bce_sum(pred, target, ignore)?;
    Ok(LossTerm::mean(sum, count))
}

/// Gradient of [`bce_confidence`] with respect to each prediction.
pub fn bce_confidence_grad(pred: &[f64], target: &[f64], ignore: &[bool]) -> Result<Vec<f64>> {
    check_len(pred.len(), target.len())?;
    check_len(pred.len(), ignore.len())?;
    let n = ignore.iter().filter(|&&x| !x).count();
    Ok(pred
        .iter()
        .zip(target)
        .zip(ignore)
        .map(|((&p, &t), &ig)| {
            if ig || !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / n as f64
            }
        })
        .collect())
}

/// Laplace negative log-likelihood `|x − μ| / b + ln(2b)`.
pub fn laplace_loss(pred: f64, mu: f64, b: f64) -> f64 {
    let b = b.max(MIN_LAPLACE_B);
    (pred - mu).abs() / b + (2.0 * b).ln()
}

/// `(∂L/∂pred, ∂L/∂b)` of [`laplace_loss`].
pub fn laplace_grad(pred: f64, mu: f64, b: f64) -> (f64, f64) {
    let r = pred - mu;
    if b < MIN_LAPLACE_B {
        return (r.signum() / MIN_LAPLACE_B, 0.0);
    }
    (r.signum() / b, -r.abs() / (b * b) + 1.0 / b)
}

/// Laplace loss on both vector components, summed per cell and averaged over masked cells.
///
/// One spread `b` per cell serves both components; a missing spread channel means `b = 1`.
pub fn laplace_vector_loss(
    pred_vx: &[f64],
    pred_vy: &[f64],
    target_vx: &[f64],
    target_vy: &[f64],
    b: Option<&[f64]>,
    mask: &[bool],
) -> Result<LossTerm> {
    let n = mask.len();
    for len in [pred_vx.len(), pred_vy.len(), target_vx.len(), target_vy.len()] {
        check_len(n, len)?;
    }
    if let Some(b) = b {
        check_len(n, b.len())?;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for k in (0..n).filter(|&k| mask[k]) {
        let bk = b.map_or(1.0, |b| b[k]);
        sum += laplace_loss(pred_vx[k], target_vx[k], bk) + laplace_loss(pred_vy[k], target_vy[k], bk);
        count += 1;
    }
    Ok(LossTerm::mean(sum, count))
}

/// Mean absolute error over masked cells, averaged over both size channels.
pub fn l1_size(
    pred_w: &[f64],
    pred_h: &[f64],
    target_w: &[f64],
    target_h: &[f64],
    mask: &[bool],
) -> Result<LossTerm> {
    let n = mask.len();
    for len in [pred_w.len(), pred_h.len(), target_w.len(), target_h.len()] {
        check_len(n, len)?;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for k in (0..n).filter(|&k| mask[k]) {
        sum += (pred_w[k] - target_w[k]).abs() + (pred_h[k] - target_h[k]).abs();
        count += 1;
    }
    Ok(LossTerm {
        value: if count == 0 { 0.0 } else { sum / (2 * count) as f64 },
        count,
    })
}

/// Gradients of [`l1_size`] with respect to the width and height predictions.
pub fn l1_size_grad(
    pred_w: &[f64],
    pred_h: &[f64],
    target_w: &[f64],
    target_h: &[f64],
    mask: &[bool],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = mask.len();
    for len in [pred_w.len(), pred_h.len(), target_w.len(), target_h.len()] {
        check_len(n, len)?;
    }
    let count = mask.iter().filter(|&&m| m).count();
    let scale = if count == 0 { 0.0 } else { 1.0 / (2 * count) as f64 };
    let grad = |pred: &[f64], target: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|k| if mask[k] { (pred[k] - target[k]).signum() * scale } else { 0.0 })
            .collect()
    };
    Ok((grad(pred_w, target_w), grad(pred_h, target_h)))
}

/// `Σ exp(−s_k)·L_k + s_k` with caller-supplied log-variances `s_k`.
pub fn combine_homoscedastic(terms: &[f64], log_vars: &[f64]) -> Result<f64> {
    check_len(terms.len(), log_vars.len())?;
    Ok(terms.iter().zip(log_vars).map(|(&l, &s)| (-s).exp() * l + s).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub conf_loss: f64,
    pub vec_loss: f64,
    pub size_loss: f64,
    pub total: f64,
    pub conf_count: usize,
    pub vec_count: usize,
    pub size_count: usize,
}

/// All three losses of `pred` against encoder targets, combined with log-variances
/// `[confidence, vector, size]`. Terms without contributing cells are left out of the total.
pub fn field_losses(pred: &FieldGrid, target: &FieldGrid, log_vars: [f64; 3]) -> Result<LossBreakdown> {
    if (pred.num_classes(), pred.grid_h(), pred.grid_w()) != (target.num_classes(), target.grid_h(), target.grid_w()) {
        return Err(Error::ShapeMismatch {
            expected: target.num_classes() * target.grid_h() * target.grid_w(),
            actual: pred.num_classes() * pred.grid_h() * pred.grid_w(),
        });
    }
    let (mut conf_sum, mut conf_n) = (0.0, 0);
    let (mut vec_sum, mut vec_n) = (0.0, 0);
    let (mut size_sum, mut size_n) = (0.0, 0);
    for (pp, tp) in pred.planes().iter().zip(target.planes()) {
        let (s, n) = bce_sum(pp.p(), tp.p(), tp.ignore())?;
        conf_sum += s;
        conf_n += n;

        let mask: Vec<bool> = tp.p().iter().zip(tp.ignore()).map(|(&p, &ig)| p == 1.0 && !ig).collect();
        let v = laplace_vector_loss(pp.vx(), pp.vy(), tp.vx(), tp.vy(), pp.b(), &mask)?;
        vec_sum += v.value * v.count as f64;
        vec_n += v.count;
        let l = l1_size(pp.w_log(), pp.h_log(), tp.w_log(), tp.h_log(), &mask)?;
        size_sum += l.value * l.count as f64;
        size_n += l.count;
    }
    let conf = LossTerm::mean(conf_sum, conf_n);
    let vec = LossTerm::mean(vec_sum, vec_n);
    let size = LossTerm::mean(size_sum, size_n);

    let (mut terms, mut vars) = (Vec::new(), Vec::new());
    for (term, s) in [conf, vec, size].iter().zip(log_vars) {
        if term.count > 0 {
            terms.push(term.value);
            vars.push(s);
        }
    }
    Ok(LossBreakdown {
        conf_loss: conf.value,
        vec_loss: vec.value,
        size_loss: size.value,
        total: combine_homoscedastic(&terms, &vars)?,
        conf_count: conf.count,
        vec_count: vec.count,
        size_count: size.count,
    })
}
