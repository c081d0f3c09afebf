//! Central finite-difference verification of analytic gradients.

/// How perturbed parameters are represented when the loss is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    /// Perturbed values are rounded to f32 and the realised step is used as
    /// the denominator, so f32-stored inputs can be checked without the
    /// rounding of `x ± h` polluting the estimate.
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error of near-zero components.
    pub floor: f64,
    pub precision: Precision,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the gradient returned by `loss_fn` at `params` with central
/// differences of its value. `loss_fn` returns `(value, gradient)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], cfg: GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let round = |v: f64| match cfg.precision {
        Precision::F64 => v,
        Precision::F32 => f64::from(v as f32),
    };
    let base: Vec<f64> = params.iter().map(|&v| round(v)).collect();
    let (_, analytic) = loss_fn(&base);
    assert_eq!(analytic.len(), base.len(), "gradient length must match params");

    let mut probe = base.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for i in 0..base.len() {
        let plus = round(base[i] + cfg.step);
        let minus = round(base[i] - cfg.step);
        probe[i] = plus;
        let (f_plus, _) = loss_fn(&probe);
        probe[i] = minus;
        let (f_minus, _) = loss_fn(&probe);
        probe[i] = base[i];

        let numeric = (f_plus - f_minus) / (plus - minus);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_index: worst,
        checked: base.len(),
        passed: max_rel < cfg.tolerance,
    }
}
