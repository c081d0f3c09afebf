//! Choosing a CORAL scale factor per source by pseudo-label agreement, and
//! grouping sources that end up with the same factor onto one encoder.
//!
//! Every `(source, λ, repeat)` cell is one single-source training run. Runs
//! depend only on their own source and λ, so the search over joint λ
//! assignments is evaluated from cached pseudo-labels without retraining.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::metrics::f1_metrics;
use crate::nn::Matrix;
use crate::rng::derive_seed;
use crate::trainer::{
    train_engine, EngineOptions, EngineSource, RunStreams, TrainConfig, TrainOutput, CLASSES,
};

pub const DEFAULT_GRID: [f64; 5] = [1.0, 0.1, 0.01, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinationConfig {
    pub grid: Vec<f64>,
    pub repeats: usize,
    /// Minimum gain in normalized agreement needed to move a source to its next λ.
    pub threshold: f64,
    /// JS distances closer than this to the start of their run count as
    /// tied and keep grid order.
    pub js_tolerance: f64,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.to_vec(),
            repeats: 5,
            threshold: 0.005,
            js_tolerance: 1e-3,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid)?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config("threshold must be finite and >= 0".into()));
        }
        if !(self.js_tolerance >= 0.0 && self.js_tolerance.is_finite()) {
            return Err(Error::Config("js_tolerance must be finite and >= 0".into()));
        }
        Ok(())
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty λ grid".into()));
    }
    for (k, &v) in grid.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("grid value {v} must be positive and finite")));
        }
        if grid[..k].contains(&v) {
            return Err(Error::Config(format!("grid value {v} repeated")));
        }
    }
    Ok(())
}

/// Outcome of training one source alone at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSourceRun {
    pub source: String,
    pub lambda: f64,
    pub pseudo_labels: Vec<u8>,
    pub target_label_distribution: Vec<f64>,
    pub source_encodings: Matrix,
    pub target_encodings: Matrix,
    pub js_to_source: f64,
}

/// Trains one encoder and classifier on a single source with NLL plus
/// `λ`·CORAL against the target.
pub fn train_single_source_model(
    source: &DomainDataset,
    target: &DomainDataset,
    lambda: f64,
    cfg: &TrainConfig,
    streams: &RunStreams,
) -> Result<TrainOutput> {
    let src = [EngineSource {
        data: source,
        lambda,
        stream: streams.source.clone(),
    }];
    let opts = EngineOptions {
        groups: &[0],
        assignment: None,
        alpha0: 0.0,
        medium: false,
    };
    train_engine(&src, target, &streams.target, &opts, cfg)
}

fn label_distribution(labels: &[u8]) -> Vec<f64> {
    let mut out = vec![0.0; CLASSES];
    for &l in labels {
        out[usize::from(l)] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

pub fn train_single_source(
    source: &DomainDataset,
    target: &DomainDataset,
    lambda: f64,
    cfg: &TrainConfig,
    streams: &RunStreams,
) -> Result<SingleSourceRun> {
    let out = train_single_source_model(source, target, lambda, cfg, streams)?;
    let model = &out.model;
    let target_encodings = model.encode(0, &target.features)?;
    let source_encodings = model.encode(0, &source.features)?;
    let pseudo_labels: Vec<u8> = model.classifiers[0]
        .predict(&target_encodings)?
        .argmax_rows()
        .into_iter()
        .map(|c| c as u8)
        .collect();
    let source_labels: Vec<u8> = source.class_labels()?.into_iter().map(|y| y as u8).collect();
    let target_label_distribution = label_distribution(&pseudo_labels);
    let js_to_source = js_distance(&label_distribution(&source_labels), &target_label_distribution)?;
    Ok(SingleSourceRun {
        source: source.name.clone(),
        lambda,
        pseudo_labels,
        target_label_distribution,
        source_encodings,
        target_encodings,
        js_to_source,
    })
}

/// `Σ_i Σ_{j≠i} F1(set_i as gold, set_j as prediction)` over ordered pairs.
pub fn pairwise_agreement(label_sets: &[&[u8]]) -> Result<f64> {
    if label_sets.len() < 2 {
        return Err(Error::Input("agreement needs at least 2 label sets".into()));
    }
    let n = label_sets[0].len();
    if label_sets.iter().any(|s| s.len() != n) {
        return Err(Error::Input("label sets differ in length".into()));
    }
    let mut total = 0.0;
    for (i, gold) in label_sets.iter().enumerate() {
        for (j, pred) in label_sets.iter().enumerate() {
            if i != j {
                total += f1_metrics(gold, pred)?.f1;
            }
        }
    }
    Ok(total)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("{p:?} is not a probability vector")));
    }
    Ok(())
}

/// Square root of the base-2 Jensen–Shannon divergence.
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Input("distributions differ in length".into()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let kl_to_mid = |a: &[f64]| -> f64 {
        a.iter()
            .zip(p.iter().zip(q))
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, (&pp, &qq))| x * (2.0 * x / (pp + qq)).log2())
            .sum()
    };
    let jsd = 0.5 * kl_to_mid(p) + 0.5 * kl_to_mid(q);
    Ok(jsd.clamp(0.0, 1.0).sqrt())
}

/// Pseudo-labels and JS distance of one `(source, λ, repeat)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub source: usize,
    pub lambda_index: usize,
    pub repeat: usize,
    pub pseudo_labels: Vec<u8>,
    pub js_to_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationPlan {
    pub sources: Vec<String>,
    pub grid: Vec<f64>,
    /// Selected λ per source, in source order.
    pub lambda_star: Vec<f64>,
    /// Sources sharing an encoder, ordered by first member.
    pub groups: Vec<Vec<usize>>,
    /// Mean JS distance per source and grid value.
    pub js: Vec<Vec<f64>>,
    /// Normalized agreement at the JS-minimizing start and at the end.
    pub corr_initial: Option<f64>,
    pub corr_final: Option<f64>,
    /// Seed of each repeat.
    pub seeds: Vec<u64>,
}

impl CoordinationPlan {
    /// A plan with given λ values, grouped by equality; no search diagnostics.
    pub fn from_lambdas(sources: Vec<String>, grid: Vec<f64>, lambda_star: Vec<f64>) -> Result<Self> {
        if sources.len() != lambda_star.len() {
            return Err(Error::Config("one λ per source required".into()));
        }
        let m = sources.len();
        let groups = group_by_lambda(&lambda_star);
        Ok(Self {
            sources,
            grid,
            lambda_star,
            groups,
            js: vec![Vec::new(); m],
            corr_initial: None,
            corr_final: None,
            seeds: Vec::new(),
        })
    }

    /// Encoder index of each source.
    pub fn encoder_of(&self) -> Vec<usize> {
        group_encoders(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.sources.len();
        if self.lambda_star.len() != m {
            return Err(Error::Config("plan needs one λ per source".into()));
        }
        if self.groups != group_by_lambda(&self.lambda_star) {
            return Err(Error::Config("plan groups do not match λ equality classes".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }
}

fn group_by_lambda(lambdas: &[f64]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, &l) in lambdas.iter().enumerate() {
        match groups.iter_mut().find(|(v, _)| *v == l) {
            Some((_, members)) => members.push(i),
            None => groups.push((l, vec![i])),
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Maps each source to its encoder: sources with equal λ* share one.
pub fn group_encoders(plan: &CoordinationPlan) -> Vec<usize> {
    let mut out = vec![0; plan.sources.len()];
    for (e, members) in plan.groups.iter().enumerate() {
        for &i in members {
            out[i] = e;
        }
    }
    out
}

/// Searches λ assignments from cached cell results.
///
/// Each source starts at its JS-minimizing λ. Sources are then visited in
/// order and moved to their next λ in ascending-JS order when that raises
/// mean pairwise agreement by more than `threshold`; passes repeat until
/// none moves.
pub fn select_lambdas(
    sources: &[String],
    grid: &[f64],
    cfg: &CoordinationConfig,
    cells: &[CellResult],
) -> Result<CoordinationPlan> {
    validate_grid(grid)?;
    let (repeats, threshold) = (cfg.repeats, cfg.threshold);
    let (m, k) = (sources.len(), grid.len());
    if m < 2 {
        return Err(Error::Config(format!("coordination needs at least 2 sources, got {m}")));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut table: Vec<Option<&CellResult>> = vec![None; m * k * repeats];
    for c in cells {
        if c.source >= m || c.lambda_index >= k || c.repeat >= repeats {
            return Err(Error::Config(format!(
                "cell ({}, {}, {}) outside the grid",
                c.source, c.lambda_index, c.repeat
            )));
        }
        table[(c.source * k + c.lambda_index) * repeats + c.repeat] = Some(c);
    }
    let cell = |i: usize, l: usize, r: usize| table[(i * k + l) * repeats + r].unwrap();
    if let Some(pos) = table.iter().position(Option::is_none) {
        let (i, l, r) = (pos / (k * repeats), (pos / repeats) % k, pos % repeats);
        return Err(Error::Config(format!(
            "missing cell for source {i}, λ {}, repeat {r}",
            grid[l]
        )));
    }

    // f1[i][a][j][b]: mean over repeats of F1(labels(i, a) as gold, labels(j, b) as prediction).
    let idx = |i: usize, a: usize, j: usize, b: usize| ((i * k + a) * m + j) * k + b;
    let mut f1 = vec![0.0; m * k * m * k];
    for i in 0..m {
        for a in 0..k {
            for j in (0..m).filter(|&j| j != i) {
                for b in 0..k {
                    let mut acc = 0.0;
                    for r in 0..repeats {
                        acc += f1_metrics(&cell(i, a, r).pseudo_labels, &cell(j, b, r).pseudo_labels)?.f1;
                    }
                    f1[idx(i, a, j, b)] = acc / repeats as f64;
                }
            }
        }
    }
    let norm = (m * (m - 1)) as f64;
    let corr = |choice: &[usize]| -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                total += f1[idx(i, choice[i], j, choice[j])];
            }
        }
        total / norm
    };

    let js: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..k)
                .map(|l| (0..repeats).map(|r| cell(i, l, r).js_to_source).sum::<f64>() / repeats as f64)
                .collect()
        })
        .collect();
    let order: Vec<Vec<usize>> = js.iter().map(|row| js_order(row, cfg.js_tolerance)).collect();

    let mut pos = vec![0usize; m];
    let choice = |pos: &[usize]| -> Vec<usize> { (0..m).map(|i| order[i][pos[i]]).collect() };
    let corr_initial = corr(&choice(&pos));
    let mut current = corr_initial;
    loop {
        let mut moved = false;
        for i in 0..m {
            if pos[i] + 1 >= k {
                continue;
            }
            let mut next = pos.clone();
            next[i] += 1;
            let value = corr(&choice(&next));
            if value > current + threshold {
                pos = next;
                current = value;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let chosen = choice(&pos);
    let lambda_star: Vec<f64> = chosen.iter().map(|&l| grid[l]).collect();
    Ok(CoordinationPlan {
        sources: sources.to_vec(),
        grid: grid.to_vec(),
        groups: group_by_lambda(&lambda_star),
        lambda_star,
        js,
        corr_initial: Some(corr_initial),
        corr_final: Some(current),
        seeds: Vec::new(),
    })
}

/// Grid indices in ascending JS order. Walking the sorted values, each run
/// of values within `tol` of the run's first value is a tie and is
/// reordered by grid position.
fn js_order(js: &[f64], tol: f64) -> Vec<usize> {
    let mut sorted: Vec<usize> = (0..js.len()).collect();
    sorted.sort_by(|&a, &b| js[a].total_cmp(&js[b]));
    let mut out = Vec::with_capacity(js.len());
    let mut start = 0;
    while start < sorted.len() {
        let base = js[sorted[start]];
        let mut end = start + 1;
        while end < sorted.len() && js[sorted[end]] - base <= tol {
            end += 1;
        }
        let mut run = sorted[start..end].to_vec();
        run.sort_unstable();
        out.extend(run);
        start = end;
    }
    out
}

/// Coordination result plus the λ* runs of the first repeat, whose
/// encodings feed the capacity estimates.
#[derive(Debug, Clone)]
pub struct CoordinationOutcome {
    pub plan: CoordinationPlan,
    pub selected_runs: Vec<SingleSourceRun>,
    pub training_calls: usize,
}

pub fn repeat_seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|r| derive_seed(seed, r)).collect()
}

/// Trains every `(source, λ, repeat)` cell in parallel and selects λ*.
pub fn run_coordination(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &CoordinationConfig,
    train: &TrainConfig,
) -> Result<CoordinationOutcome> {
    cfg.validate()?;
    train.validate()?;
    let (m, k, repeats) = (sources.len(), cfg.grid.len(), cfg.repeats);
    if m < 2 {
        return Err(Error::Config(format!("coordination needs at least 2 sources, got {m}")));
    }
    let seeds = repeat_seeds(train.seed, repeats);
    let jobs: Vec<(usize, usize, usize)> = (0..m)
        .flat_map(|i| (0..k).flat_map(move |l| (0..repeats).map(move |r| (i, l, r))))
        .collect();
    let calls = AtomicUsize::new(0);
    let runs = jobs
        .par_iter()
        .map(|&(i, l, r)| {
            calls.fetch_add(1, Ordering::Relaxed);
            let streams = RunStreams::for_source(seeds[r], i);
            train_single_source(&sources[i], target, cfg.grid[l], train, &streams)
                .map(|run| (i, l, r, run))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<CellResult> = runs
        .iter()
        .map(|(i, l, r, run)| CellResult {
            source: *i,
            lambda_index: *l,
            repeat: *r,
            pseudo_labels: run.pseudo_labels.clone(),
            js_to_source: run.js_to_source,
        })
        .collect();
    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();
    let mut plan = select_lambdas(&names, &cfg.grid, cfg, &cells)?;
    plan.seeds = seeds;

    let mut selected: Vec<Option<SingleSourceRun>> = vec![None; m];
    for (i, l, r, run) in runs {
        if r == 0 && cfg.grid[l] == plan.lambda_star[i] {
            selected[i] = Some(run);
        }
    }
    Ok(CoordinationOutcome {
        plan,
        selected_runs: selected.into_iter().map(|r| r.expect("selected run")).collect(),
        training_calls: calls.into_inner(),
    })
}

/// Retrains the first-repeat λ* run of every source, reproducing the
/// encodings a full coordination run would have kept.
pub fn rebuild_selected_runs(
    plan: &CoordinationPlan,
    sources: &[DomainDataset],
    target: &DomainDataset,
    train: &TrainConfig,
) -> Result<Vec<SingleSourceRun>> {
    let seed = *plan
        .seeds
        .first()
        .ok_or_else(|| Error::Config("plan records no seeds".into()))?;
    sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            train_single_source(s, target, plan.lambda_star[i], train, &RunStreams::for_source(seed, i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agreement_examples() {
        let a: &[u8] = &[1, 0, 1, 1];
        assert_eq!(pairwise_agreement(&[a, a, a]).unwrap(), 6.0);
        let x: &[u8] = &[1, 1, 0, 0];
        let y: &[u8] = &[1, 0, 0, 0];
        assert!((pairwise_agreement(&[x, y]).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        let p: &[u8] = &[1, 0];
        let q: &[u8] = &[0, 1];
        assert_eq!(pairwise_agreement(&[p, q]).unwrap(), 0.0);
        assert!(matches!(pairwise_agreement(&[p, &[1]]), Err(Error::Input(_))));
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        let d = js_distance(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        // 0.5·log2(4/3) + 0.25·log2(2/3) + 0.25·log2(2)
        let jsd = 0.5 * (4.0f64 / 3.0).log2() + 0.25 * (2.0f64 / 3.0).log2() + 0.25;
        assert!((d - jsd.sqrt()).abs() < 1e-12);
        assert!((d - 0.5579).abs() < 1e-4);
        assert!(matches!(js_distance(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::Input(_))));
    }

    fn cells_from(labels: &[Vec<Vec<u8>>], js: &[Vec<f64>]) -> Vec<CellResult> {
        let mut out = Vec::new();
        for (i, per_l) in labels.iter().enumerate() {
            for (l, lab) in per_l.iter().enumerate() {
                out.push(CellResult {
                    source: i,
                    lambda_index: l,
                    repeat: 0,
                    pseudo_labels: lab.clone(),
                    js_to_source: js[i][l],
                });
            }
        }
        out
    }

    fn one_repeat() -> CoordinationConfig {
        CoordinationConfig {
            repeats: 1,
            ..CoordinationConfig::default()
        }
    }

    #[test]
    fn js_ties_keep_grid_order() {
        assert_eq!(js_order(&[0.3, 0.1, 0.2], 0.0), vec![1, 2, 0]);
        assert_eq!(js_order(&[0.1004, 0.1, 0.2, 0.1009], 1e-3), vec![0, 1, 3, 2]);
        assert_eq!(js_order(&[0.1, 0.1, 0.1], 0.0), vec![0, 1, 2]);
    }

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn identical_cells_keep_js_minimum() {
        let lab = vec![1, 0, 1, 0];
        let labels = vec![vec![lab.clone(); 3], vec![lab.clone(); 3]];
        let js = vec![vec![0.3, 0.1, 0.2], vec![0.05, 0.2, 0.1]];
        let plan = select_lambdas(&names(2), &[1.0, 0.1, 0.01], &one_repeat(), &cells_from(&labels, &js)).unwrap();
        assert_eq!(plan.lambda_star, vec![0.1, 1.0]);
        assert_eq!(plan.corr_final, plan.corr_initial);
    }

    #[test]
    fn agreeing_lambda_selected() {
        let truth = vec![1, 1, 0, 0, 0, 0];
        let all_pos = vec![1; 6];
        // Source 0 starts at its degenerate λ (lowest JS) and should move.
        let labels = vec![vec![all_pos, truth.clone()], vec![truth.clone(), truth]];
        let js = vec![vec![0.1, 0.2], vec![0.1, 0.2]];
        let plan = select_lambdas(&names(2), &[1.0, 0.1], &one_repeat(), &cells_from(&labels, &js)).unwrap();
        assert_eq!(plan.lambda_star, vec![0.1, 1.0]);
        assert_eq!(plan.corr_final, Some(1.0));
    }

    #[test]
    fn missing_cell_is_config_error() {
        let labels = vec![vec![vec![1, 0]], vec![vec![1, 0]]];
        let mut cells = cells_from(&labels, &[vec![0.0], vec![0.0]]);
        cells.pop();
        assert!(matches!(
            select_lambdas(&names(2), &[1.0], &one_repeat(), &cells),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn grouping_examples() {
        let plan = CoordinationPlan::from_lambdas(names(3), DEFAULT_GRID.to_vec(), vec![0.1, 0.1, 1.0]).unwrap();
        assert_eq!(plan.groups, vec![vec![0, 1], vec![2]]);
        assert_eq!(group_encoders(&plan), vec![0, 0, 1]);
        let same = CoordinationPlan::from_lambdas(names(3), DEFAULT_GRID.to_vec(), vec![1.0; 3]).unwrap();
        assert_eq!(same.groups.len(), 1);
        let distinct =
            CoordinationPlan::from_lambdas(names(3), DEFAULT_GRID.to_vec(), vec![1.0, 0.1, 0.01]).unwrap();
        assert_eq!(group_encoders(&distinct), vec![0, 1, 2]);
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[0.0]).is_err());
        assert!(validate_grid(&DEFAULT_GRID).is_ok());
    }
}
