use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Row-wise softmax, computed in f64 and stored back in `T`.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for (r, row) in logits.row_iter().enumerate() {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(r).iter_mut().zip(exps) {
            *o = T::from_f64(e / total);
        }
    }
    out
}

/// Maps a gradient on softmax outputs to a gradient on its logits.
pub fn softmax_backward<T: Scalar>(probs: &Matrix<T>, grad_probs: &Matrix<T>) -> Result<Matrix<T>> {
    if probs.shape() != grad_probs.shape() {
        return Err(Error::Shape(format!(
            "softmax backward {:?} vs {:?}",
            probs.shape(),
            grad_probs.shape()
        )));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad_probs.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        for ((o, &pj), &gj) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = T::from_f64(pj.as_f64() * (gj.as_f64() - dot));
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and its
/// gradient with respect to the logits.
pub fn softmax_nll<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(f64, Matrix<T>)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let classes = logits.cols();
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    for (r, (row, &y)) in logits.row_iter().zip(labels).enumerate() {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = row.iter().map(|v| v.as_f64() - max).collect();
        let log_total = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
        loss -= shifted[y] - log_total;
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (shifted[j] - log_total).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            *g = T::from_f64((p - target) / n);
        }
    }
    Ok((loss / n, grad))
}
