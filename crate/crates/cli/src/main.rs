use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cepc::coordination::run_coordination;
use cepc::data::{load_dataset, write_synthetic, LoadedDomains, Manifest, SynthSpec};
use cepc::eval::{render_report, run_bench, run_pipeline};
use cepc::metrics::{f1_metrics, F1Metrics};
use cepc::trainer::{
    load_checkpoint, load_predictions_csv, predict_majority, save_checkpoint, save_predictions_csv, save_trace_csv,
    train_cepc,
};
use cepc::{CoordinationPlan, Error, ExperimentConfig, ReliabilityTable, Result, TargetDomain};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cepc", version, about = "Multi-source domain adaptation with coordinated encoders and paired classifiers")]
struct Cli {
    /// Overrides the seed in the config (or synthetic spec).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark; the last domain of the spec is the target.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the λ grid search and write the coordination plan.
    Coordinate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the joint model and write checkpoint, table, trace and predictions.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        plan: PathBuf,
        /// Reliability table to reuse instead of computing one.
        #[arg(long)]
        reliability: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Majority-vote predictions of a checkpoint on a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file against a labeled dataset.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Full pipeline over several seeds, with optional baselines and ablations.
    Bench {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        ablations: bool,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target domain name; defaults to the first target in the manifest.
    #[arg(long)]
    target: Option<String>,
}

struct Experiment {
    domains: LoadedDomains,
    cfg: ExperimentConfig,
    target: usize,
}

impl ExperimentArgs {
    fn load(&self, seed: Option<u64>) -> Result<Experiment> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        let domains = Manifest::load(&self.manifest)?.load_domains()?;
        let target = match &self.target {
            None => 0,
            Some(name) => domains
                .targets
                .iter()
                .position(|t| &t.data.name == name)
                .ok_or_else(|| Error::Config(format!("no target domain named {name:?}")))?,
        };
        Ok(Experiment { domains, cfg, target })
    }
}

impl Experiment {
    fn target(&self) -> &TargetDomain {
        &self.domains.targets[self.target]
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn metrics_json(m: &F1Metrics) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)? + "\n")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let mut spec: SynthSpec = serde_json::from_str(&text)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let manifest = write_synthetic(&spec, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Coordinate { exp, out } => {
            let e = exp.load(cli.seed)?;
            let result = run_coordination(&e.domains.sources, &e.target().data, &e.cfg.coordination, &e.cfg.train)?;
            result.plan.save(&out)?;
            println!(
                "λ* = {:?}, groups = {:?} ({} training runs)",
                result.plan.lambda_star, result.plan.groups, result.training_calls
            );
        }
        Command::Train { exp, plan, reliability, out } => {
            let e = exp.load(cli.seed)?;
            let plan = CoordinationPlan::load(&plan)?;
            create_dir(&out)?;
            let target = e.target();
            let (output, table) = match reliability {
                Some(path) => {
                    let table = ReliabilityTable::load_csv(&path)?;
                    let output = train_cepc(&e.domains.sources, &target.data, &plan, &table, &e.cfg.train)?;
                    (output, table)
                }
                None => {
                    let art = run_pipeline(&e.domains.sources, target, &e.cfg, Some(&plan))?;
                    (art.output, art.table)
                }
            };
            let prediction = predict_majority(&output.model, &target.data.features)?;
            save_checkpoint(&output.model, out.join("model.ckpt"))?;
            table.save_csv(out.join("reliability.csv"))?;
            save_trace_csv(&output.trace, out.join("trace.csv"))?;
            plan.save(out.join("plan.json"))?;
            save_predictions_csv(&target.data.ids, &prediction, out.join("predictions.csv"))?;
            if let Some(gold) = &target.gold {
                let m = f1_metrics(gold, &prediction.labels)?;
                write_text(&out.join("metrics.json"), &metrics_json(&m)?)?;
                println!("F1 {:.4}  precision {:.4}  recall {:.4}", m.f1, m.precision, m.recall);
            }
            println!("wrote {}", out.display());
        }
        Command::Predict { model, target, out } => {
            let model = load_checkpoint(&model)?;
            let data = load_dataset(&target)?;
            let prediction = predict_majority(&model, &data.features)?;
            save_predictions_csv(&data.ids, &prediction, &out)?;
            println!("wrote {} predictions to {}", data.len(), out.display());
        }
        Command::Eval { gold, pred } => {
            let gold = load_dataset(&gold)?;
            let labels = gold.class_labels()?;
            let rows = load_predictions_csv(&pred)?;
            let by_id: HashMap<&str, u8> = rows.iter().map(|r| (r.doc_id.as_str(), r.label)).collect();
            if by_id.len() != rows.len() || rows.len() != gold.len() {
                return Err(Error::Data(format!(
                    "{} predictions for {} gold documents",
                    rows.len(),
                    gold.len()
                )));
            }
            let pred = gold
                .ids
                .iter()
                .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("no prediction for {id}"))))
                .collect::<Result<Vec<u8>>>()?;
            let gold: Vec<u8> = labels.into_iter().map(|y| y as u8).collect();
            print!("{}", metrics_json(&f1_metrics(&gold, &pred)?)?);
        }
        Command::Bench { exp, seeds, baselines, ablations, out } => {
            let e = exp.load(cli.seed)?;
            let report = run_bench(&e.domains, &e.cfg, seeds, baselines, ablations)?;
            let (table, json) = render_report(&report)?;
            print!("{table}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_text(&dir.join("report.json"), &json)?;
                write_text(&dir.join("report.txt"), &table)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
