//! Per-document source reliability: covariance-based transformation costs,
//! discriminator-based density ratios, and the one-hot indicator that picks
//! one source classifier per target document.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Lower bound applied to costs before taking `1/d`.
pub const COST_FLOOR: f64 = 1e-6;
/// Discriminator probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStats {
    pub mean: Vec<f64>,
    pub full_cov: Matrix<f64>,
    pub n: usize,
}

fn column_mean(x: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn need_two_rows(x: &Matrix, what: &str) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::Degenerate(format!(
            "{what} covariance needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    Ok(())
}

/// Sample covariance (`n − 1` denominator) of encoded source documents.
pub fn source_covariance(encodings: &Matrix) -> Result<CovarianceStats> {
    need_two_rows(encodings, "source")?;
    let (n, d) = encodings.shape();
    let mean = column_mean(encodings);
    let mut cov = Matrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in encodings.row_iter() {
        for ((c, &v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = f64::from(v) - m;
        }
        for a in 0..d {
            let ca = centered[a];
            for (o, &cb) in cov.row_mut(a).iter_mut().zip(&centered) {
                *o += ca * cb;
            }
        }
    }
    cov.scale(1.0 / (n - 1) as f64);
    Ok(CovarianceStats {
        mean,
        full_cov: cov,
        n,
    })
}

/// Contribution of target row `r` to the target sample covariance:
/// `(x_r − μ)ᵀ(x_r − μ) / (n − 1)`, with `μ` the mean over all rows.
pub fn pointwise_target_covariance(encodings: &Matrix, r: usize) -> Result<Matrix<f64>> {
    need_two_rows(encodings, "target")?;
    if r >= encodings.rows() {
        return Err(Error::Input(format!(
            "row {r} out of range for {} rows",
            encodings.rows()
        )));
    }
    let mean = column_mean(encodings);
    Ok(outer_scaled(
        encodings.row(r),
        &mean,
        1.0 / (encodings.rows() - 1) as f64,
    ))
}

fn outer_scaled(x: &[f32], mean: &[f64], scale: f64) -> Matrix<f64> {
    let d = x.len();
    let v: Vec<f64> = x.iter().zip(mean).map(|(&a, m)| f64::from(a) - m).collect();
    let mut out = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            out.set(a, b, scale * v[a] * v[b]);
        }
    }
    out
}

/// Squared Frobenius distance `‖C_r − C_s‖²_F`.
pub fn transformation_cost(c_r: &Matrix<f64>, c_s: &Matrix<f64>) -> Result<f64> {
    if c_r.shape() != c_s.shape() {
        return Err(Error::Input(format!(
            "cost between {:?} and {:?} matrices",
            c_r.shape(),
            c_s.shape()
        )));
    }
    Ok(c_r
        .as_slice()
        .iter()
        .zip(c_s.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Costs of every target row against one source covariance.
///
/// Expands `‖c·vvᵀ − C‖²_F = c²‖v‖⁴ − 2c·vᵀCv + ‖C‖²_F` so no `d × d`
/// matrix is built per row. Rounding can push an exact zero slightly
/// negative, so results are clamped at 0.
pub fn target_costs(target: &Matrix, source: &CovarianceStats) -> Result<Vec<f64>> {
    need_two_rows(target, "target")?;
    let d = target.cols();
    if source.full_cov.shape() != (d, d) {
        return Err(Error::Input(format!(
            "target dim {d} vs source covariance {:?}",
            source.full_cov.shape()
        )));
    }
    let mean = column_mean(target);
    let c = 1.0 / (target.rows() - 1) as f64;
    let cov = &source.full_cov;
    let cov_sq: f64 = cov.as_slice().iter().map(|v| v * v).sum();
    Ok(target
        .row_iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().zip(&mean).map(|(&a, m)| f64::from(a) - m).collect();
            let norm_sq: f64 = v.iter().map(|x| x * x).sum();
            let quad: f64 = (0..d)
                .map(|a| v[a] * cov.row(a).iter().zip(&v).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            (c * c * norm_sq * norm_sq - 2.0 * c * quad + cov_sq).max(0.0)
        })
        .collect())
}

/// Logistic regression separating source (label 1) from target (label 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDiscriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.1,
            l2: 1e-4,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DomainDiscriminator {
    /// `P(source | x)`, unclamped.
    pub fn prob_source(&self, x: &[f32]) -> f64 {
        let z: f64 = self
            .weights
            .iter()
            .zip(x)
            .map(|(w, &v)| w * f64::from(v))
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

/// Full-batch gradient descent on mean log-loss plus `(l2/2)‖w‖²`, from zero
/// weights. Deterministic, so no random stream is needed.
pub fn train_discriminator(
    source: &Matrix,
    target: &Matrix,
    cfg: DiscriminatorConfig,
) -> Result<DomainDiscriminator> {
    if source.cols() != target.cols() {
        return Err(Error::Input(format!(
            "discriminator blocks have {} and {} columns",
            source.cols(),
            target.cols()
        )));
    }
    if source.rows() < 2 || target.rows() < 2 {
        return Err(Error::Degenerate(
            "discriminator needs at least 2 rows per domain".into(),
        ));
    }
    let d = source.cols();
    let n = (source.rows() + target.rows()) as f64;
    let rows: Vec<(&[f32], f64)> = source
        .row_iter()
        .map(|r| (r, 1.0))
        .chain(target.row_iter().map(|r| (r, 0.0)))
        .collect();
    let mut disc = DomainDiscriminator {
        weights: vec![0.0; d],
        bias: 0.0,
        final_loss: f64::NAN,
        epochs: cfg.epochs,
    };
    let mut loss = 0.0;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        loss = 0.0;
        for &(x, y) in &rows {
            let p = disc.prob_source(x);
            let pc = p.clamp(1e-12, 1.0 - 1e-12);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let err = p - y;
            for (g, &v) in gw.iter_mut().zip(x) {
                *g += err * f64::from(v);
            }
            gb += err;
        }
        loss /= n;
        loss += 0.5 * cfg.l2 * disc.weights.iter().map(|w| w * w).sum::<f64>();
        for (w, g) in disc.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * (g / n + cfg.l2 * *w);
        }
        disc.bias -= cfg.lr * gb / n;
    }
    if !disc.weights.iter().all(|w| w.is_finite()) || !disc.bias.is_finite() {
        return Err(Error::Training("discriminator weights diverged".into()));
    }
    disc.final_loss = loss;
    Ok(disc)
}

/// `q = P(T)·P(S|x) / (P(S)·P(T|x))` with domain priors from the sample sizes.
pub fn density_ratio_from_prob(p_source: f64, n_s: usize, n_t: usize) -> f64 {
    let p = p_source.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let total = (n_s + n_t) as f64;
    let prior_t = n_t as f64 / total;
    let prior_s = n_s as f64 / total;
    (prior_t * p) / (prior_s * (1.0 - p))
}

pub fn density_ratio(disc: &DomainDiscriminator, x: &[f32], n_s: usize, n_t: usize) -> f64 {
    density_ratio_from_prob(disc.prob_source(x), n_s, n_t)
}

/// Log of `q · e^{1/d}`; the cost is floored at [`COST_FLOOR`].
pub fn reliability_score(q: f64, d: f64) -> f64 {
    q.ln() + 1.0 / d.max(COST_FLOOR)
}

/// Which factors enter the score; the partial modes serve ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    Full,
    /// `1/d` only.
    CostOnly,
    /// `ln q` only.
    CapacityOnly,
}

impl ScoreMode {
    pub fn score(self, q: f64, d: f64) -> f64 {
        match self {
            ScoreMode::Full => reliability_score(q, d),
            ScoreMode::CostOnly => 1.0 / d.max(COST_FLOOR),
            ScoreMode::CapacityOnly => q.ln(),
        }
    }
}

/// Argmax per row, ties toward the lowest column.
pub fn build_indicator(scores: &Matrix<f64>) -> Result<Vec<usize>> {
    if scores.rows() == 0 || scores.cols() == 0 {
        return Err(Error::Input("empty score table".into()));
    }
    if scores.as_slice().iter().any(|v| v.is_nan()) {
        return Err(Error::Input("NaN in score table".into()));
    }
    Ok(scores.argmax_rows())
}

/// Per-document, per-source costs, capacities, scores and the selected source.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityTable {
    pub doc_ids: Vec<String>,
    pub sources: Vec<String>,
    pub cost: Matrix<f64>,
    pub q: Matrix<f64>,
    pub log_score: Matrix<f64>,
    /// Index of the source whose indicator is 1, per document.
    pub assignment: Vec<usize>,
}

/// Encodings a source contributes to the table.
#[derive(Debug, Clone, Copy)]
pub struct SourceEncodings<'a> {
    /// Source and target through the source-only encoder (for costs).
    pub cost_source: &'a Matrix,
    pub cost_target: &'a Matrix,
    /// Source and target through the coordination encoder (for capacities).
    pub capacity_source: &'a Matrix,
    pub capacity_target: &'a Matrix,
}

impl ReliabilityTable {
    pub fn from_parts(
        doc_ids: Vec<String>,
        sources: Vec<String>,
        cost: Matrix<f64>,
        q: Matrix<f64>,
        mode: ScoreMode,
    ) -> Result<Self> {
        let shape = (doc_ids.len(), sources.len());
        if cost.shape() != shape || q.shape() != shape {
            return Err(Error::Shape(format!(
                "table for {shape:?} got costs {:?} and capacities {:?}",
                cost.shape(),
                q.shape()
            )));
        }
        if cost.as_slice().iter().any(|&d| d.is_nan() || d < 0.0) {
            return Err(Error::Input("costs must be >= 0".into()));
        }
        if q.as_slice().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Input("capacities must be positive and finite".into()));
        }
        let mut log_score = Matrix::zeros(shape.0, shape.1);
        for r in 0..shape.0 {
            for i in 0..shape.1 {
                log_score.set(r, i, mode.score(q.get(r, i), cost.get(r, i)));
            }
        }
        let assignment = build_indicator(&log_score)?;
        Ok(Self {
            doc_ids,
            sources,
            cost,
            q,
            log_score,
            assignment,
        })
    }

    /// Builds the table from each source's encodings; sources run in parallel.
    pub fn compute(
        doc_ids: Vec<String>,
        sources: Vec<String>,
        encodings: &[SourceEncodings<'_>],
        disc_cfg: DiscriminatorConfig,
        mode: ScoreMode,
    ) -> Result<Self> {
        if encodings.len() != sources.len() {
            return Err(Error::Shape("one encoding set per source required".into()));
        }
        let n = doc_ids.len();
        let columns = encodings
            .par_iter()
            .map(|enc| -> Result<(Vec<f64>, Vec<f64>)> {
                if enc.cost_target.rows() != n || enc.capacity_target.rows() != n {
                    return Err(Error::Shape("target encodings do not cover every document".into()));
                }
                let stats = source_covariance(enc.cost_source)?;
                let costs = target_costs(enc.cost_target, &stats)?;
                let disc = train_discriminator(enc.capacity_source, enc.capacity_target, disc_cfg)?;
                let n_s = enc.capacity_source.rows();
                let qs = enc
                    .capacity_target
                    .row_iter()
                    .map(|x| density_ratio(&disc, x, n_s, n))
                    .collect();
                Ok((costs, qs))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = sources.len();
        let mut cost = Matrix::zeros(n, m);
        let mut q = Matrix::zeros(n, m);
        for (i, (c, v)) in columns.into_iter().enumerate() {
            for r in 0..n {
                cost.set(r, i, c[r]);
                q.set(r, i, v[r]);
            }
        }
        Self::from_parts(doc_ids, sources, cost, q, mode)
    }

    /// Same costs and capacities rescored under another mode.
    pub fn rescored(&self, mode: ScoreMode) -> Result<Self> {
        Self::from_parts(
            self.doc_ids.clone(),
            self.sources.clone(),
            self.cost.clone(),
            self.q.clone(),
            mode,
        )
    }

    pub fn indicator(&self, doc: usize, source: usize) -> u8 {
        u8::from(self.assignment[doc] == source)
    }

    /// Number of documents assigned to each source.
    pub fn counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.sources.len()];
        for &a in &self.assignment {
            out[a] += 1;
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["doc_id", "source", "cost", "q", "log_score", "indicator"])
            .map_err(|e| csv_error(path, e))?;
        for (r, id) in self.doc_ids.iter().enumerate() {
            for (i, s) in self.sources.iter().enumerate() {
                w.write_record([
                    id.clone(),
                    s.clone(),
                    self.cost.get(r, i).to_string(),
                    self.q.get(r, i).to_string(),
                    self.log_score.get(r, i).to_string(),
                    self.indicator(r, i).to_string(),
                ])
                .map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`save_csv`](Self::save_csv). Rows must be
    /// grouped by document with sources in one consistent order, and the
    /// stored indicator must match the stored scores.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.iter().collect::<Vec<_>>() != ["doc_id", "source", "cost", "q", "log_score", "indicator"] {
            return Err(Error::Format(format!("{}: unexpected header", path.display())));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let num = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| {
                    Error::Format(format!("{}: bad number {:?}", path.display(), &rec[k]))
                })
            };
            let ind: u8 = rec[5]
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad indicator", path.display())))?;
            rows.push((rec[0].to_owned(), rec[1].to_owned(), num(2)?, num(3)?, num(4)?, ind));
        }
        let mut sources: Vec<String> = Vec::new();
        for row in &rows {
            if sources.contains(&row.1) {
                break;
            }
            sources.push(row.1.clone());
        }
        let m = sources.len();
        if m == 0 || rows.len() % m != 0 {
            return Err(Error::Format(format!("{}: incomplete table", path.display())));
        }
        let n = rows.len() / m;
        let mut doc_ids = Vec::with_capacity(n);
        let mut cost = Matrix::zeros(n, m);
        let mut q = Matrix::zeros(n, m);
        let mut log_score = Matrix::zeros(n, m);
        let mut assignment = Vec::with_capacity(n);
        for (r, chunk) in rows.chunks(m).enumerate() {
            let id = &chunk[0].0;
            let mut chosen = None;
            for (i, row) in chunk.iter().enumerate() {
                if &row.0 != id || row.1 != sources[i] {
                    return Err(Error::Format(format!(
                        "{}: rows for document {id:?} are not grouped in source order",
                        path.display()
                    )));
                }
                cost.set(r, i, row.2);
                q.set(r, i, row.3);
                log_score.set(r, i, row.4);
                if row.5 == 1 {
                    if chosen.is_some() {
                        return Err(Error::Format(format!("{}: {id:?} has two indicators", path.display())));
                    }
                    chosen = Some(i);
                }
            }
            doc_ids.push(id.clone());
            assignment.push(chosen.ok_or_else(|| {
                Error::Format(format!("{}: {id:?} has no indicator", path.display()))
            })?);
        }
        if build_indicator(&log_score)? != assignment {
            return Err(Error::Format(format!(
                "{}: indicator does not sit at the best score",
                path.display()
            )));
        }
        Ok(Self {
            doc_ids,
            sources,
            cost,
            q,
            log_score,
            assignment,
        })
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn source_covariance_by_hand() {
        let s = source_covariance(&col(&[0.0, 2.0])).unwrap();
        assert_eq!(s.full_cov.get(0, 0), 2.0);
        assert!(matches!(source_covariance(&col(&[1.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identical_rows_zero_covariance() {
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(source_covariance(&x).unwrap().full_cov.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pointwise_by_hand() {
        let c = pointwise_target_covariance(&col(&[0.0, 2.0]), 0).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        let at_mean = pointwise_target_covariance(&col(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert_eq!(at_mean.get(0, 0), 0.0);
    }

    #[test]
    fn cost_examples() {
        let one = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let two = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert_eq!(transformation_cost(&one, &two).unwrap(), 1.0);
        assert_eq!(transformation_cost(&two, &two).unwrap(), 0.0);
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -2.0]).unwrap();
        assert_eq!(transformation_cost(&a, &Matrix::zeros(2, 2)).unwrap(), 5.0);
        assert!(matches!(transformation_cost(&a, &one), Err(Error::Input(_))));
    }

    #[test]
    fn density_ratio_examples() {
        assert!((density_ratio_from_prob(0.5, 10, 10) - 1.0).abs() < 1e-12);
        assert!((density_ratio_from_prob(0.75, 30, 10) - 1.0).abs() < 1e-12);
        assert!((density_ratio_from_prob(0.9, 10, 10) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn score_examples() {
        assert_eq!(reliability_score(1.0, 1.0), 1.0);
        assert!(reliability_score(1.0, 1e12).abs() < 1e-11);
        assert!(reliability_score(1.0, 0.0).is_finite());
    }

    #[test]
    fn indicator_examples() {
        let s = Matrix::from_rows(&[vec![0.2, 0.9], vec![0.5, 0.5]]).unwrap();
        assert_eq!(build_indicator(&s).unwrap(), vec![1, 0]);
        assert!(matches!(
            build_indicator(&Matrix::<f64>::zeros(0, 2)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn discriminator_separates_blocks() {
        let n = 100;
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for i in 0..n {
            let jitter = ((i * 37 % 17) as f32 - 8.0) / 8.0;
            src.extend([5.0 + jitter, jitter]);
            tgt.extend([-5.0 - jitter, -jitter]);
        }
        let s = Matrix::from_vec(n, 2, src).unwrap();
        let t = Matrix::from_vec(n, 2, tgt).unwrap();
        let disc = train_discriminator(&s, &t, DiscriminatorConfig::default()).unwrap();
        let correct = s.row_iter().filter(|x| disc.prob_source(x) > 0.5).count()
            + t.row_iter().filter(|x| disc.prob_source(x) < 0.5).count();
        assert!(correct as f64 / (2 * n) as f64 >= 0.95);
        let again = train_discriminator(&s, &t, DiscriminatorConfig::default()).unwrap();
        assert_eq!(disc, again);
    }

    #[test]
    fn discriminator_inseparable_stays_near_half() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, -1.0, 0.5]).unwrap();
        let disc = train_discriminator(&x, &x, DiscriminatorConfig::default()).unwrap();
        for r in x.row_iter() {
            let p = disc.prob_source(r);
            assert!((0.4..=0.6).contains(&p), "{p}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let cost = Matrix::from_rows(&[vec![0.5, 0.25], vec![1.0, 3.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.1], vec![2.0, 0.7]]).unwrap();
        let t = ReliabilityTable::from_parts(
            vec!["a".into(), "b,c".into()],
            vec!["s0".into(), "s1".into()],
            cost,
            q,
            ScoreMode::Full,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("table.csv");
        t.save_csv(&p).unwrap();
        assert_eq!(ReliabilityTable::load_csv(&p).unwrap(), t);
    }
}
