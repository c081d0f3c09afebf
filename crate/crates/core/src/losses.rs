//! Objective terms beyond plain NLL: correlation alignment between feature
//! batches, the indicator-gated divergence that pairs source classifiers,
//! and the medium-classifier loss.
//!
//! Every loss returns a [`LossValue`] holding gradients keyed by the role of
//! each input. Detached inputs still get an (all-zero) gradient entry and are
//! listed in `detached`, so callers can assert that nothing flows into them.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Clamping floor for probabilities in the denominator of a KL term.
pub const KL_FLOOR: f64 = 1e-7;

/// How far a row may be from summing to one before `kl_rows` rejects it.
const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Looser row-sum check used inside the composite losses, whose inputs come
/// from a softmax but may be perturbed by finite-difference probes.
const LOSS_ROW_SUM_TOLERANCE: f64 = 1e-3;

/// Which input tensor a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    /// Encoded source batch.
    Source,
    /// Encoded target batch.
    Target,
    /// Probabilities emitted by source classifier `k` on the target batch.
    SourceProbs(usize),
    /// Probabilities emitted by medium classifier `e` on the target batch.
    MediumProbs(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: BTreeMap<Role, Matrix>,
    pub detached: BTreeSet<Role>,
}

impl LossValue {
    pub fn grad(&self, role: Role) -> Option<&Matrix> {
        self.grads.get(&role)
    }

    pub fn is_detached(&self, role: Role) -> bool {
        self.detached.contains(&role)
    }
}

fn centered(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut c = Vec::with_capacity(n * d);
    for row in x.row_iter() {
        c.extend(row.iter().zip(&mean).map(|(&v, m)| f64::from(v) - m));
    }
    (c, mean)
}

/// `(n-1)`-denominator covariance of a centered `n × d` block, row-major `d × d`.
fn covariance_of_centered(c: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = &c[r * d..(r + 1) * d];
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += ri * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for v in &mut cov {
        *v /= denom;
    }
    cov
}

/// Correlation alignment: `‖Cov(src) − Cov(tgt)‖²_F / (4d²)` with sample
/// covariances, and gradients for both blocks.
pub fn coral_loss(src: &Matrix, tgt: &Matrix) -> Result<LossValue> {
    let d = src.cols();
    if d == 0 || tgt.cols() != d {
        return Err(Error::Shape(format!(
            "coral needs equal non-zero widths, got {} and {}",
            d,
            tgt.cols()
        )));
    }
    if src.rows() < 2 || tgt.rows() < 2 {
        return Err(Error::Degenerate(format!(
            "coral needs at least 2 rows per batch, got {} and {}",
            src.rows(),
            tgt.rows()
        )));
    }
    let (cs, _) = centered(src);
    let (ct, _) = centered(tgt);
    let cov_s = covariance_of_centered(&cs, src.rows(), d);
    let cov_t = covariance_of_centered(&ct, tgt.rows(), d);
    let delta: Vec<f64> = cov_s.iter().zip(&cov_t).map(|(a, b)| a - b).collect();
    let scale = 1.0 / (4.0 * (d * d) as f64);
    let value = scale * delta.iter().map(|v| v * v).sum::<f64>();

    // dL/dX = (2 / (n-1)) · X_c · dL/dC, with dL/dC = 2·scale·Δ (Δ symmetric).
    let grad_block = |c: &[f64], n: usize, sign: f64| -> Result<Matrix> {
        let factor = sign * 4.0 * scale / (n - 1) as f64;
        let mut out = vec![0.0f32; n * d];
        for r in 0..n {
            let row = &c[r * d..(r + 1) * d];
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += row[i] * delta[i * d + j];
                }
                out[r * d + j] = (factor * acc) as f32;
            }
        }
        Matrix::from_vec(n, d, out)
    };
    let mut grads = BTreeMap::new();
    grads.insert(Role::Source, grad_block(&cs, src.rows(), 1.0)?);
    grads.insert(Role::Target, grad_block(&ct, tgt.rows(), -1.0)?);
    Ok(LossValue {
        value,
        grads,
        detached: BTreeSet::new(),
    })
}

fn check_prob_rows(m: &Matrix, tolerance: f64, what: &str) -> Result<()> {
    for (r, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(format!("{what} row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
        if (s - 1.0).abs() > tolerance {
            return Err(Error::Input(format!("{what} row {r} sums to {s}")));
        }
    }
    Ok(())
}

#[inline]
fn kl_row(p: &[f32], q: &[f32]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pj, &qj)| {
            let pj = f64::from(pj);
            if pj <= 0.0 {
                0.0
            } else {
                pj * (pj.ln() - f64::from(qj).max(KL_FLOOR).ln())
            }
        })
        .sum()
}

/// Adds `scale · ∂KL(p‖q)/∂q` for one row into `out`.
#[inline]
fn add_kl_grad_q(p: &[f32], q: &[f32], scale: f64, out: &mut [f32]) {
    for ((o, &pj), &qj) in out.iter_mut().zip(p).zip(q) {
        let qj = f64::from(qj);
        if qj > KL_FLOOR {
            *o += (-scale * f64::from(pj) / qj) as f32;
        }
    }
}

/// Row-wise `KL(p‖q)` in nats, with `0·ln 0 = 0` and `q` clamped at [`KL_FLOOR`].
pub fn kl_rows(p: &Matrix, q: &Matrix) -> Result<Vec<f64>> {
    if p.shape() != q.shape() {
        return Err(Error::Shape(format!("kl {:?} vs {:?}", p.shape(), q.shape())));
    }
    check_prob_rows(p, ROW_SUM_TOLERANCE, "p")?;
    check_prob_rows(q, ROW_SUM_TOLERANCE, "q")?;
    Ok(p.row_iter().zip(q.row_iter()).map(|(a, b)| kl_row(a, b)).collect())
}

fn check_batch(probs: &[Matrix], what: &str) -> Result<(usize, usize)> {
    let shape = probs[0].shape();
    for (k, m) in probs.iter().enumerate() {
        if m.shape() != shape {
            return Err(Error::Shape(format!(
                "{what} {k} is {:?}, expected {:?}",
                m.shape(),
                shape
            )));
        }
        check_prob_rows(m, LOSS_ROW_SUM_TOLERANCE, what)?;
    }
    Ok(shape)
}

/// Pairing objective for source `i`:
/// `Σ_d I(i, d) · Σ_{k≠i} KL(C_i(x_d) ‖ C_k(x_d))`.
///
/// `C_i` acts as the teacher and is detached; gradients reach only the other
/// classifiers, and only on rows whose indicator is 1.
pub fn divergence_psi(i: usize, class_probs: &[Matrix], indicator: &[u8]) -> Result<LossValue> {
    let m = class_probs.len();
    if m < 2 {
        return Err(Error::Config(format!("pairing needs at least 2 sources, got {m}")));
    }
    if i >= m {
        return Err(Error::Input(format!("source {i} out of range for {m} sources")));
    }
    let (b, l) = check_batch(class_probs, "classifier")?;
    if indicator.len() != b {
        return Err(Error::Shape(format!(
            "indicator has {} entries for a batch of {b}",
            indicator.len()
        )));
    }
    if indicator.iter().any(|&v| v > 1) {
        return Err(Error::Input("indicator entries must be 0 or 1".into()));
    }

    let teacher = &class_probs[i];
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (k, student) in class_probs.iter().enumerate() {
        let mut g = Matrix::zeros(b, l);
        if k != i {
            for d in (0..b).filter(|&d| indicator[d] == 1) {
                value += kl_row(teacher.row(d), student.row(d));
                add_kl_grad_q(teacher.row(d), student.row(d), 1.0, g.row_mut(d));
            }
        }
        grads.insert(Role::SourceProbs(k), g);
    }
    Ok(LossValue {
        value,
        grads,
        detached: BTreeSet::from([Role::SourceProbs(i)]),
    })
}

/// `Σ_i Ψ(S_i) / (M − 1)`; gradients are combined the same way.
pub fn divergence_loss(psis: &[LossValue]) -> Result<LossValue> {
    let m = psis.len();
    if m < 2 {
        return Err(Error::Config(format!("divergence loss needs at least 2 sources, got {m}")));
    }
    let norm = 1.0 / (m - 1) as f64;
    let mut grads: BTreeMap<Role, Matrix> = BTreeMap::new();
    for psi in psis {
        for (role, g) in &psi.grads {
            match grads.get_mut(role) {
                Some(acc) => acc.add_assign(g)?,
                None => {
                    grads.insert(*role, g.clone());
                }
            }
        }
    }
    for g in grads.values_mut() {
        g.scale(norm as f32);
    }
    let detached = psis
        .iter()
        .map(|p| p.detached.clone())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .unwrap_or_default();
    Ok(LossValue {
        value: psis.iter().map(|p| p.value).sum::<f64>() * norm,
        grads,
        detached,
    })
}

/// Trains each medium head toward every source classifier:
/// `(1/(G·M)) Σ_e Σ_k mean_rows KL(C_k ‖ M_e)` with all `C_k` detached.
pub fn medium_loss(medium_probs: &[Matrix], source_probs: &[Matrix]) -> Result<LossValue> {
    let g = medium_probs.len();
    let m = source_probs.len();
    if g == 0 || m == 0 {
        return Err(Error::Config(format!(
            "medium loss needs at least one medium head and one source, got {g} and {m}"
        )));
    }
    let (b, l) = check_batch(source_probs, "classifier")?;
    if check_batch(medium_probs, "medium")? != (b, l) {
        return Err(Error::Shape("medium and source probabilities differ in shape".into()));
    }
    let scale = 1.0 / (g * m * b) as f64;
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (e, student) in medium_probs.iter().enumerate() {
        let mut grad = Matrix::zeros(b, l);
        for teacher in source_probs {
            for d in 0..b {
                value += scale * kl_row(teacher.row(d), student.row(d));
                add_kl_grad_q(teacher.row(d), student.row(d), scale, grad.row_mut(d));
            }
        }
        grads.insert(Role::MediumProbs(e), grad);
    }
    let mut detached = BTreeSet::new();
    for k in 0..m {
        grads.insert(Role::SourceProbs(k), Matrix::zeros(b, l));
        detached.insert(Role::SourceProbs(k));
    }
    Ok(LossValue {
        value,
        grads,
        detached,
    })
}
