//! End-to-end experiments: the training pipeline, baselines, ablations,
//! multi-seed benchmarks and their reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coordination::{
    rebuild_selected_runs, repeat_seeds, run_coordination, train_single_source,
    train_single_source_model, CoordinationConfig, CoordinationPlan, SingleSourceRun,
};
use crate::data::{DomainDataset, LoadedDomains, TargetDomain};
use crate::error::{Error, Result};
use crate::metrics::{f1_metrics, F1Metrics};
use crate::reliability::{DiscriminatorConfig, ReliabilityTable, ScoreMode, SourceEncodings};
use crate::trainer::{predict_majority, train_cepc, Prediction, RunStreams, TrainConfig, TrainOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub coordination: CoordinationConfig,
    pub discriminator: DiscriminatorConfig,
    pub score_mode: ScoreMode,
}

impl ExperimentConfig {
    /// Reads a JSON config; missing fields take their defaults.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.coordination.validate()
    }

    /// Hex SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.train.seed = seed;
        cfg
    }
}

/// Everything the pipeline produced for one target domain.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub plan: CoordinationPlan,
    pub table: ReliabilityTable,
    pub output: TrainOutput,
    pub prediction: Prediction,
    pub metrics: Option<F1Metrics>,
    /// Source-only (λ = 0) runs used for costs; their pseudo-labels are the
    /// source-only predictions on the target.
    pub source_only: Vec<SingleSourceRun>,
}

fn source_only_runs(
    sources: &[DomainDataset],
    target: &DomainDataset,
    plan: &CoordinationPlan,
    train: &TrainConfig,
) -> Result<Vec<SingleSourceRun>> {
    let seed = plan.seeds.first().copied().unwrap_or(train.seed);
    sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| train_single_source(s, target, 0.0, train, &RunStreams::for_source(seed, i)))
        .collect()
}

/// Builds the reliability table from source-only and λ* encodings.
pub fn reliability_table(
    target: &DomainDataset,
    source_only: &[SingleSourceRun],
    selected: &[SingleSourceRun],
    cfg: &ExperimentConfig,
) -> Result<ReliabilityTable> {
    let encodings: Vec<SourceEncodings> = source_only
        .iter()
        .zip(selected)
        .map(|(c, s)| SourceEncodings {
            cost_source: &c.source_encodings,
            cost_target: &c.target_encodings,
            capacity_source: &s.source_encodings,
            capacity_target: &s.target_encodings,
        })
        .collect();
    ReliabilityTable::compute(
        target.ids.clone(),
        source_only.iter().map(|r| r.source.clone()).collect(),
        &encodings,
        cfg.discriminator,
        cfg.score_mode,
    )
}

/// Coordinate, score reliability, train, predict and (given gold labels) score.
/// A cached plan skips the coordination search.
pub fn run_pipeline(
    sources: &[DomainDataset],
    target: &TargetDomain,
    cfg: &ExperimentConfig,
    cached_plan: Option<&CoordinationPlan>,
) -> Result<PipelineArtifacts> {
    cfg.validate()?;
    let tgt = &target.data;
    let (plan, selected) = match cached_plan {
        Some(plan) => {
            plan.validate().map_err(|e| e.in_stage("coordination"))?;
            let runs = rebuild_selected_runs(plan, sources, tgt, &cfg.train)
                .map_err(|e| e.in_stage("coordination"))?;
            (plan.clone(), runs)
        }
        None => {
            let out = run_coordination(sources, tgt, &cfg.coordination, &cfg.train)
                .map_err(|e| e.in_stage("coordination"))?;
            (out.plan, out.selected_runs)
        }
    };
    let source_only =
        source_only_runs(sources, tgt, &plan, &cfg.train).map_err(|e| e.in_stage("reliability"))?;
    let table = reliability_table(tgt, &source_only, &selected, cfg)
        .map_err(|e| e.in_stage("reliability"))?;
    let output = train_cepc(sources, tgt, &plan, &table, &cfg.train).map_err(|e| e.in_stage("training"))?;
    let prediction =
        predict_majority(&output.model, &tgt.features).map_err(|e| e.in_stage("prediction"))?;
    let metrics = target
        .gold
        .as_ref()
        .map(|g| f1_metrics(g, &prediction.labels))
        .transpose()
        .map_err(|e| e.in_stage("metrics"))?;
    Ok(PipelineArtifacts {
        plan,
        table,
        output,
        prediction,
        metrics,
        source_only,
    })
}

/// One scored method on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// λ per source, where the method chooses them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
}

impl MethodResult {
    fn new(method: impl Into<String>, m: F1Metrics, lambdas: Option<Vec<f64>>) -> Self {
        Self {
            method: method.into(),
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            lambdas,
        }
    }
}

fn gold_of(target: &TargetDomain) -> Result<&[u8]> {
    target
        .gold
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{}: scoring needs gold labels", target.data.name)))
}

fn cepc_with(
    sources: &[DomainDataset],
    target: &TargetDomain,
    plan: &CoordinationPlan,
    table: &ReliabilityTable,
    train: &TrainConfig,
) -> Result<F1Metrics> {
    let out = train_cepc(sources, &target.data, plan, table, train)?;
    let pred = predict_majority(&out.model, &target.data.features)?;
    f1_metrics(gold_of(target)?, &pred.labels)
}

/// Source-only per source plus the oracle-selected best, source-combined,
/// CEPC at each fixed λ, and leave-one-source-out λ tuning.
pub fn run_baselines(
    sources: &[DomainDataset],
    target: &TargetDomain,
    art: &PipelineArtifacts,
    cfg: &ExperimentConfig,
) -> Result<Vec<MethodResult>> {
    let gold = gold_of(target)?;
    let tgt = &target.data;
    let mut rows = Vec::new();

    let mut best: Option<MethodResult> = None;
    for run in &art.source_only {
        let m = f1_metrics(gold, &run.pseudo_labels)?;
        let row = MethodResult::new(format!("source-only:{}", run.source), m, None);
        if best.as_ref().is_none_or(|b| m.f1 > b.f1) {
            best = Some(row.clone());
        }
        rows.push(row);
    }
    if let Some(b) = best {
        rows.push(MethodResult {
            method: "source-best (oracle-selected)".into(),
            ..b
        });
    }

    let parts: Vec<&DomainDataset> = sources.iter().collect();
    let pooled = DomainDataset::pooled("combined", &parts)?;
    let combined = train_single_source_model(
        &pooled,
        tgt,
        0.0,
        &cfg.train,
        &RunStreams::for_source(cfg.train.seed, 0),
    )?;
    let pred = predict_majority(&combined.model, &tgt.features)?;
    rows.push(MethodResult::new("source-combined", f1_metrics(gold, &pred.labels)?, None));

    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();
    let grid = &cfg.coordination.grid;
    let fixed = grid
        .par_iter()
        .map(|&lam| {
            let plan = CoordinationPlan::from_lambdas(names.clone(), grid.clone(), vec![lam; names.len()])?;
            cepc_with(sources, target, &plan, &art.table, &cfg.train)
                .map(|m| MethodResult::new(format!("fixed-lambda:{lam}"), m, Some(vec![lam; names.len()])))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.extend(fixed);

    let lambdas = meta_target_lambdas(sources, &cfg.coordination, &cfg.train)?;
    let plan = CoordinationPlan::from_lambdas(names, grid.clone(), lambdas.clone())?;
    rows.push(MethodResult::new(
        "meta-target",
        cepc_with(sources, target, &plan, &art.table, &cfg.train)?,
        Some(lambdas),
    ));
    Ok(rows)
}

/// For each source, the λ whose single-source model scores the best mean
/// F1 when every other source in turn plays the (labeled) target.
pub fn meta_target_lambdas(
    sources: &[DomainDataset],
    coord: &CoordinationConfig,
    train: &TrainConfig,
) -> Result<Vec<f64>> {
    let m = sources.len();
    let k = coord.grid.len();
    let seed = repeat_seeds(train.seed, 1)[0];
    let held_out = sources
        .iter()
        .map(|s| s.clone().into_target())
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..m)
        .flat_map(|i| (0..k).flat_map(move |l| (0..m).filter(move |&h| h != i).map(move |h| (i, l, h))))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(i, l, h)| {
            let (tgt, gold) = &held_out[h];
            let run = train_single_source(&sources[i], tgt, coord.grid[l], train, &RunStreams::for_source(seed, i))?;
            Ok(f1_metrics(gold, &run.pseudo_labels)?.f1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut mean = vec![vec![0.0; k]; m];
    for (&(i, l, _), s) in jobs.iter().zip(scores) {
        mean[i][l] += s / (m - 1) as f64;
    }
    Ok(mean
        .iter()
        .map(|row| {
            let mut best = 0;
            for l in 1..k {
                if row[l] > row[best] {
                    best = l;
                }
            }
            coord.grid[best]
        })
        .collect())
}

/// Ablations on the pipeline's plan and table: no pairing or medium losses,
/// scores from costs only, scores from capacities only.
pub fn run_ablations(
    sources: &[DomainDataset],
    target: &TargetDomain,
    art: &PipelineArtifacts,
    cfg: &ExperimentConfig,
) -> Result<Vec<MethodResult>> {
    let unpaired = TrainConfig {
        alpha0: 0.0,
        medium: false,
        ..cfg.train.clone()
    };
    let cost_only = art.table.rescored(ScoreMode::CostOnly)?;
    let capacity_only = art.table.rescored(ScoreMode::CapacityOnly)?;
    let jobs: [(&str, &ReliabilityTable, &TrainConfig); 3] = [
        ("ablation:w/o-paired", &art.table, &unpaired),
        ("ablation:w/o-capacity", &cost_only, &cfg.train),
        ("ablation:w/o-cost", &capacity_only, &cfg.train),
    ];
    jobs.par_iter()
        .map(|(name, table, train)| {
            cepc_with(sources, target, &art.plan, table, train).map(|m| MethodResult::new(*name, m, None))
        })
        .collect()
}

/// Results of one seed on one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub target: String,
    pub plan: CoordinationPlan,
    pub rows: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-method statistics over seeds of the target-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub f1: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub targets: Vec<String>,
    pub runs: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

impl MetricsReport {
    /// Assembles a report; the summary is recomputed from `runs`.
    pub fn new(config_hash: String, runs: Vec<RunReport>) -> Self {
        let mut seeds: Vec<u64> = Vec::new();
        let mut targets: Vec<String> = Vec::new();
        for r in &runs {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
            if !targets.contains(&r.target) {
                targets.push(r.target.clone());
            }
        }
        let summary = summarize(&runs);
        Self {
            config_hash,
            seeds,
            targets,
            runs,
            summary,
        }
    }
}

fn summarize(runs: &[RunReport]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    // method -> seed -> per-target metrics
    let mut by: BTreeMap<&str, BTreeMap<u64, Vec<&MethodResult>>> = BTreeMap::new();
    for run in runs {
        for row in &run.rows {
            if !order.contains(&row.method) {
                order.push(row.method.clone());
            }
            by.entry(row.method.as_str()).or_default().entry(run.seed).or_default().push(row);
        }
    }
    order
        .iter()
        .map(|method| {
            let per_seed = &by[method.as_str()];
            let avg = |f: fn(&MethodResult) -> f64| -> Vec<f64> {
                per_seed
                    .values()
                    .map(|rows| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64)
                    .collect()
            };
            SummaryRow {
                method: method.clone(),
                f1: Stat::of(&avg(|r| r.f1)),
                precision: Stat::of(&avg(|r| r.precision)),
                recall: Stat::of(&avg(|r| r.recall)),
                seeds: per_seed.len(),
            }
        })
        .collect()
}

/// Runs the pipeline for `seeds` consecutive seeds starting at the
/// configured one, on every target, optionally with baselines and ablations.
pub fn run_bench(
    domains: &LoadedDomains,
    cfg: &ExperimentConfig,
    seeds: usize,
    baselines: bool,
    ablations: bool,
) -> Result<MetricsReport> {
    if seeds == 0 {
        return Err(Error::Config("bench needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for s in 0..seeds as u64 {
        let seed = cfg.train.seed.wrapping_add(s);
        let cfg = cfg.with_seed(seed);
        for target in &domains.targets {
            let art = run_pipeline(&domains.sources, target, &cfg, None)?;
            let m = art
                .metrics
                .ok_or_else(|| Error::Config(format!("{}: bench needs gold labels", target.data.name)))?;
            let mut rows = vec![MethodResult::new("cepc", m, Some(art.plan.lambda_star.clone()))];
            if baselines {
                rows.extend(run_baselines(&domains.sources, target, &art, &cfg).map_err(|e| e.in_stage("baselines"))?);
            }
            if ablations {
                rows.extend(run_ablations(&domains.sources, target, &art, &cfg).map_err(|e| e.in_stage("ablations"))?);
            }
            runs.push(RunReport {
                seed,
                target: target.data.name.clone(),
                plan: art.plan,
                rows,
            });
        }
    }
    Ok(MetricsReport::new(cfg.hash(), runs))
}

/// Aligned text table of the summary: mean ± std over seeds.
pub fn render_table(report: &MetricsReport) -> String {
    let width = report
        .summary
        .iter()
        .map(|r| r.method.chars().count())
        .max()
        .unwrap_or(6)
        .max(6);
    let cell = |s: &Stat| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>15}  {:>15}  {:>15}  seeds",
        "method", "F1", "precision", "recall"
    );
    for r in &report.summary {
        let _ = writeln!(
            out,
            "{:<width$}  {:>15}  {:>15}  {:>15}  {}",
            r.method,
            cell(&r.f1),
            cell(&r.precision),
            cell(&r.recall),
            r.seeds
        );
    }
    out
}

/// Human-readable table and pretty JSON for a report.
pub fn render_report(report: &MetricsReport) -> Result<(String, String)> {
    let json = serde_json::to_string_pretty(report)? + "\n";
    Ok((render_table(report), json))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, f1: f64) -> MethodResult {
        MethodResult {
            method: method.into(),
            f1,
            precision: f1,
            recall: f1,
            lambdas: None,
        }
    }

    fn run(seed: u64, rows: Vec<MethodResult>) -> RunReport {
        RunReport {
            seed,
            target: "t".into(),
            plan: CoordinationPlan::from_lambdas(vec!["a".into(), "b".into()], vec![1.0], vec![1.0, 1.0])
                .unwrap(),
            rows,
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = MetricsReport::new("h".into(), vec![run(1, vec![row("cepc", 0.5)])]);
        assert_eq!(r.summary[0].f1.std, 0.0);
        assert!(render_table(&r).contains("0.00"));
    }

    #[test]
    fn mean_over_seeds() {
        let vals = [0.1, 0.4, 0.35, 0.8, 0.55];
        let runs = vals.iter().enumerate().map(|(s, &v)| run(s as u64, vec![row("cepc", v)])).collect();
        let r = MetricsReport::new("h".into(), runs);
        let mean = vals.iter().sum::<f64>() / 5.0;
        assert!((r.summary[0].f1.mean - mean).abs() < 1e-9);
        assert_eq!(r.summary[0].seeds, 5);
    }

    #[test]
    fn json_round_trip_is_stable() {
        let r = MetricsReport::new(
            "h".into(),
            vec![run(3, vec![row("cepc", 0.25), row("source-combined", 1.0 / 3.0)])],
        );
        let (table, json) = render_report(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        let (table2, json2) = render_report(&back).unwrap();
        assert_eq!(json, json2);
        assert_eq!(table, table2);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), a.with_seed(9).hash());
        assert_eq!(a.hash().len(), 64);
    }
}
