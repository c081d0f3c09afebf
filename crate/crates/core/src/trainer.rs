//! Joint training of encoders, per-source classifiers and medium heads,
//! majority-vote inference, and model checkpoints.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coordination::CoordinationPlan;
use crate::data::{ByteReader, DomainDataset, DomainRole};
use crate::error::{Error, Result};
use crate::losses::{coral_loss, divergence_loss, divergence_psi, medium_loss, Role};
use crate::nn::{
    init_params, softmax_nll, AdamConfig, ForwardTrace, Matrix, Mlp, MlpGrads, NetSpec,
    OptimizerState,
};
use crate::reliability::{csv_error, ReliabilityTable};
use crate::rng::RngStream;

pub const CHECKPOINT_VERSION: u16 = 1;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial weight of the pairing loss; decays linearly to 0.
    pub alpha0: f64,
    pub lr: f64,
    /// Encoder output width; `None` uses the feature dimension.
    pub encoder_width: Option<usize>,
    pub classifier_hidden: usize,
    /// Train one medium head per encoder.
    pub medium: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            epochs: 3,
            alpha0: 0.9,
            lr: 1e-3,
            encoder_width: None,
            classifier_hidden: 64,
            medium: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Config("alpha0 must be finite and >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.classifier_hidden == 0 || self.encoder_width == Some(0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Random streams for one source's initialisation and batches, plus the
/// target-batch stream shared by every source of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStreams {
    pub source: RngStream,
    pub target: RngStream,
}

impl RunStreams {
    pub fn for_source(seed: u64, index: usize) -> Self {
        Self {
            source: RngStream::new(seed, format!("source{index}")),
            target: RngStream::new(seed, "target"),
        }
    }
}

/// Encoders (one per group), one classifier per source, one medium head per encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CepcModel {
    pub source_names: Vec<String>,
    /// Encoder index of each source.
    pub groups: Vec<usize>,
    pub encoders: Vec<Mlp>,
    pub classifiers: Vec<Mlp>,
    pub mediums: Vec<Mlp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub nll: f64,
    /// `Σ λ_i · coral_i`.
    pub coral: f64,
    pub l_div: f64,
    pub l_med: f64,
    pub alpha: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: CepcModel,
    pub trace: Vec<TraceRow>,
}

fn class_indices(ds: &DomainDataset) -> Result<[Vec<usize>; 2]> {
    let classes = ds.class_indices()?;
    for (c, idx) in classes.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::Data(format!("{}: class {c} has no documents", ds.name)));
        }
    }
    Ok(classes)
}

fn balanced_from(classes: &[Vec<usize>; 2], batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    let half = batch / 2;
    let mut out = Vec::with_capacity(batch);
    for idx in classes {
        out.extend((0..half).map(|_| idx[rng.random_range(0..idx.len())]));
    }
    out
}

/// `batch / 2` indices from each class, drawn with replacement.
pub fn balanced_batch(ds: &DomainDataset, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if batch < 2 || !batch.is_multiple_of(2) {
        return Err(Error::Config(format!("batch size {batch} is not even and >= 2")));
    }
    Ok(balanced_from(&class_indices(ds)?, batch, rng))
}

/// Linear decay `α₀ · (1 − step / total_steps)`.
pub fn alpha_schedule(step: usize, total_steps: usize, alpha0: f64) -> f64 {
    let total = total_steps.max(1);
    alpha0 * (1.0 - step.min(total) as f64 / total as f64)
}

/// One source as seen by the training loop.
pub(crate) struct EngineSource<'a> {
    pub data: &'a DomainDataset,
    pub lambda: f64,
    pub stream: RngStream,
}

pub(crate) struct EngineOptions<'a> {
    pub groups: &'a [usize],
    /// Selected source per target document; enables the pairing loss.
    pub assignment: Option<&'a [usize]>,
    pub alpha0: f64,
    pub medium: bool,
}

fn check_groups(groups: &[usize], m: usize) -> Result<usize> {
    if groups.len() != m {
        return Err(Error::Config(format!("{} group entries for {m} sources", groups.len())));
    }
    let g = groups.iter().max().map_or(0, |&v| v + 1);
    for e in 0..g {
        if !groups.contains(&e) {
            return Err(Error::Config(format!("encoder {e} has no source")));
        }
    }
    Ok(g)
}

/// Training loop shared by single-source runs and the joint model.
pub(crate) fn train_engine(
    sources: &[EngineSource<'_>],
    target: &DomainDataset,
    target_stream: &RngStream,
    opts: &EngineOptions<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let m = sources.len();
    if m == 0 {
        return Err(Error::Config("no source domains".into()));
    }
    if target.role != DomainRole::Target || target.is_empty() {
        return Err(Error::Data(format!("{}: expected an unlabeled target domain", target.name)));
    }
    let dim = target.dim();
    for s in sources {
        if s.data.role != DomainRole::Source {
            return Err(Error::Data(format!("{}: source domain is unlabeled", s.data.name)));
        }
        if s.data.dim() != dim {
            return Err(Error::Data(format!(
                "{} has dim {}, target has {dim}",
                s.data.name,
                s.data.dim()
            )));
        }
        if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
            return Err(Error::Config(format!("invalid scale factor {}", s.lambda)));
        }
    }
    let n_groups = check_groups(opts.groups, m)?;
    if let Some(a) = opts.assignment {
        if a.len() != target.len() || a.iter().any(|&i| i >= m) {
            return Err(Error::Config("assignment does not match target and sources".into()));
        }
    }
    let use_div = m >= 2 && opts.assignment.is_some() && opts.alpha0 > 0.0;

    let width = cfg.encoder_width.unwrap_or(dim);
    let enc_spec = NetSpec::encoder(dim, width);
    let cls_spec = NetSpec::classifier(width, cfg.classifier_hidden, CLASSES);
    let first_of: Vec<usize> = (0..n_groups)
        .map(|e| opts.groups.iter().position(|&g| g == e).unwrap())
        .collect();
    let mut encoders = first_of
        .iter()
        .map(|&i| init_params(&enc_spec, &sources[i].stream.sub("encoder")))
        .collect::<Result<Vec<Mlp>>>()?;
    let mut classifiers = sources
        .iter()
        .map(|s| init_params(&cls_spec, &s.stream.sub("classifier")))
        .collect::<Result<Vec<Mlp>>>()?;
    let mut mediums = if opts.medium {
        first_of
            .iter()
            .map(|&i| init_params(&cls_spec, &sources[i].stream.sub("medium")))
            .collect::<Result<Vec<Mlp>>>()?
    } else {
        Vec::new()
    };
    let adam = cfg.adam();
    let mut enc_opt: Vec<_> = encoders.iter().map(|n| OptimizerState::new(n, adam)).collect();
    let mut cls_opt: Vec<_> = classifiers.iter().map(|n| OptimizerState::new(n, adam)).collect();
    let mut med_opt: Vec<_> = mediums.iter().map(|n| OptimizerState::new(n, adam)).collect();

    let classes = sources
        .iter()
        .map(|s| class_indices(s.data))
        .collect::<Result<Vec<_>>>()?;
    let labels = sources
        .iter()
        .map(|s| s.data.class_labels())
        .collect::<Result<Vec<_>>>()?;
    let mut src_rngs: Vec<_> = sources.iter().map(|s| s.stream.sub("batches").rng()).collect();
    let mut tgt_rng = target_stream.rng();

    let b = cfg.batch_size;
    let max_n = sources.iter().map(|s| s.data.len()).max().unwrap();
    let total_steps = cfg.epochs * max_n.div_ceil(b);
    let mut trace = Vec::with_capacity(total_steps);

    for step in 0..total_steps {
        let alpha = if total_steps == 1 {
            0.0
        } else {
            alpha_schedule(step, total_steps - 1, opts.alpha0)
        };
        let tb: Vec<usize> = (0..b).map(|_| tgt_rng.random_range(0..target.len())).collect();
        let tgt_x = target.features.select_rows(&tb);
        let tgt_traces = encoders
            .iter()
            .map(|e| e.forward(&tgt_x))
            .collect::<Result<Vec<ForwardTrace>>>()?;
        let mut tgt_dh: Vec<Matrix> = (0..n_groups).map(|_| Matrix::zeros(b, width)).collect();
        let mut enc_grads: Vec<_> = encoders.iter().map(MlpGrads::zeros_like).collect();
        let mut cls_grads: Vec<_> = classifiers.iter().map(MlpGrads::zeros_like).collect();
        let mut med_grads: Vec<_> = mediums.iter().map(MlpGrads::zeros_like).collect();
        let (mut nll_sum, mut coral_sum, mut l_div, mut l_med) = (0.0, 0.0, 0.0, 0.0);

        for (i, src) in sources.iter().enumerate() {
            let g = opts.groups[i];
            let sb = balanced_from(&classes[i], b, &mut src_rngs[i]);
            let x = src.data.features.select_rows(&sb);
            let y: Vec<usize> = sb.iter().map(|&r| labels[i][r]).collect();
            let st = encoders[g].forward(&x)?;
            let ct = classifiers[i].forward(&st.outputs)?;
            let (nll, dlogits) = softmax_nll(ct.logits(), &y)?;
            nll_sum += nll;
            let (cg, mut dh) = classifiers[i].backward_logits(&ct, &dlogits, false)?;
            cls_grads[i].add_assign(&cg)?;
            if src.lambda != 0.0 {
                let c = coral_loss(&st.outputs, &tgt_traces[g].outputs)?;
                coral_sum += src.lambda * c.value;
                let lam = src.lambda as f32;
                dh.add_scaled(c.grad(Role::Source).expect("source gradient"), lam)?;
                tgt_dh[g].add_scaled(c.grad(Role::Target).expect("target gradient"), lam)?;
            }
            let (eg, _) = encoders[g].backward(&st, &dh, true)?;
            enc_grads[g].add_assign(&eg)?;
        }

        if use_div || opts.medium {
            let cls_traces = (0..m)
                .map(|i| classifiers[i].forward(&tgt_traces[opts.groups[i]].outputs))
                .collect::<Result<Vec<ForwardTrace>>>()?;
            let probs: Vec<Matrix> = cls_traces.iter().map(|t| t.outputs.clone()).collect();

            if use_div {
                let assign = opts.assignment.unwrap();
                let psis = (0..m)
                    .map(|i| {
                        let ind: Vec<u8> = tb.iter().map(|&r| u8::from(assign[r] == i)).collect();
                        divergence_psi(i, &probs, &ind)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let div = divergence_loss(&psis)?;
                l_div = div.value;
                if alpha > 0.0 {
                    for k in 0..m {
                        let Some(gp) = div.grad(Role::SourceProbs(k)) else {
                            continue;
                        };
                        let mut gp = gp.clone();
                        gp.scale(alpha as f32);
                        let (cg, dh) = classifiers[k].backward(&cls_traces[k], &gp, false)?;
                        cls_grads[k].add_assign(&cg)?;
                        tgt_dh[opts.groups[k]].add_assign(&dh)?;
                    }
                }
            }

            if opts.medium {
                let med_traces = mediums
                    .iter()
                    .zip(&tgt_traces)
                    .map(|(h, t)| h.forward(&t.outputs))
                    .collect::<Result<Vec<ForwardTrace>>>()?;
                let med_probs: Vec<Matrix> = med_traces.iter().map(|t| t.outputs.clone()).collect();
                let med = medium_loss(&med_probs, &probs)?;
                l_med = med.value;
                for (e, mt) in med_traces.iter().enumerate() {
                    let gp = med.grad(Role::MediumProbs(e)).expect("medium gradient");
                    let (mg, dh) = mediums[e].backward(mt, gp, false)?;
                    med_grads[e].add_assign(&mg)?;
                    tgt_dh[e].add_assign(&dh)?;
                }
            }
        }

        for (e, dh) in tgt_dh.iter().enumerate() {
            if dh.as_slice().iter().all(|v| *v == 0.0) {
                continue;
            }
            let (eg, _) = encoders[e].backward(&tgt_traces[e], dh, true)?;
            enc_grads[e].add_assign(&eg)?;
        }

        let total = nll_sum + coral_sum + alpha * l_div + l_med;
        let row = TraceRow {
            step,
            nll: nll_sum,
            coral: coral_sum,
            l_div,
            l_med,
            alpha,
            total,
        };
        if !total.is_finite() {
            return Err(Error::Training(format!("non-finite loss at step {step}: {row:?}")));
        }
        trace.push(row);

        let fail = |e: Error| Error::Training(format!("step {step}: {e}"));
        for (net, (opt, g)) in encoders.iter_mut().zip(enc_opt.iter_mut().zip(&enc_grads)) {
            opt.step(net, g).map_err(fail)?;
        }
        for (net, (opt, g)) in classifiers.iter_mut().zip(cls_opt.iter_mut().zip(&cls_grads)) {
            opt.step(net, g).map_err(fail)?;
        }
        for (net, (opt, g)) in mediums.iter_mut().zip(med_opt.iter_mut().zip(&med_grads)) {
            opt.step(net, g).map_err(fail)?;
        }
    }

    Ok(TrainOutput {
        model: CepcModel {
            source_names: sources.iter().map(|s| s.data.name.clone()).collect(),
            groups: opts.groups.to_vec(),
            encoders,
            classifiers,
            mediums,
        },
        trace,
    })
}

/// Trains the joint model: per-source NLL and scaled CORAL, the
/// indicator-gated pairing loss weighted by a decaying `α`, and the medium
/// loss. Source `i` draws from [`RunStreams::for_source`]`(cfg.seed, i)`.
pub fn train_cepc(
    sources: &[DomainDataset],
    target: &DomainDataset,
    plan: &CoordinationPlan,
    table: &ReliabilityTable,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let m = sources.len();
    if m < 2 {
        return Err(Error::Config(format!("joint training needs at least 2 sources, got {m}")));
    }
    let names: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
    if plan.sources.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Config(format!(
            "plan covers {:?}, training sources are {names:?}",
            plan.sources
        )));
    }
    if table.sources.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Config("reliability table sources differ from training sources".into()));
    }
    if table.doc_ids != target.ids {
        return Err(Error::Config("reliability table does not cover the target documents".into()));
    }
    let groups = plan.encoder_of();
    let engine_sources: Vec<EngineSource> = sources
        .iter()
        .enumerate()
        .map(|(i, data)| EngineSource {
            data,
            lambda: plan.lambda_star[i],
            stream: RunStreams::for_source(cfg.seed, i).source,
        })
        .collect();
    let opts = EngineOptions {
        groups: &groups,
        assignment: Some(&table.assignment),
        alpha0: cfg.alpha0,
        medium: cfg.medium,
    };
    train_engine(
        &engine_sources,
        target,
        &RunStreams::for_source(cfg.seed, 0).target,
        &opts,
        cfg,
    )
}

/// Majority-vote output with the votes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    /// `votes[i][r]`: class chosen by source classifier `i` for document `r`.
    pub votes: Vec<Vec<u8>>,
    /// Mean positive-class probability across source classifiers.
    pub mean_positive: Vec<f64>,
}

impl CepcModel {
    pub fn num_sources(&self) -> usize {
        self.classifiers.len()
    }

    pub fn dim(&self) -> usize {
        self.encoders[0].in_dim()
    }

    /// Features through source `i`'s encoder.
    pub fn encode(&self, i: usize, features: &Matrix) -> Result<Matrix> {
        self.encoders[self.groups[i]].predict(features)
    }

    /// Class probabilities from source `i`'s classifier on its own encoder.
    pub fn source_probs(&self, i: usize, features: &Matrix) -> Result<Matrix> {
        self.classifiers[i].predict(&self.encode(i, features)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.classifiers.len();
        if m == 0 || self.source_names.len() != m {
            return Err(Error::Config("model needs one name per source classifier".into()));
        }
        let g = check_groups(&self.groups, m)?;
        if self.encoders.len() != g || !(self.mediums.is_empty() || self.mediums.len() == g) {
            return Err(Error::Config("encoder and medium counts do not match groups".into()));
        }
        let dim = self.encoders[0].in_dim();
        for net in self.encoders.iter().chain(&self.classifiers).chain(&self.mediums) {
            net.validate()?;
        }
        for e in &self.encoders {
            if e.in_dim() != dim {
                return Err(Error::Shape("encoders disagree on input dim".into()));
            }
        }
        for (i, c) in self.classifiers.iter().enumerate() {
            if c.in_dim() != self.encoders[self.groups[i]].out_dim() || c.out_dim() != CLASSES {
                return Err(Error::Shape(format!("classifier {i} does not fit its encoder")));
            }
        }
        Ok(())
    }
}

/// Votes each source classifier through its own encoder; exact ties go to
/// the class with the larger mean probability, then the lower class.
pub fn predict_majority(model: &CepcModel, features: &Matrix) -> Result<Prediction> {
    if features.cols() != model.dim() {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {}",
            features.cols(),
            model.dim()
        )));
    }
    let m = model.num_sources();
    let n = features.rows();
    let probs = (0..m)
        .map(|i| model.source_probs(i, features))
        .collect::<Result<Vec<_>>>()?;
    let votes: Vec<Vec<u8>> = probs
        .iter()
        .map(|p| p.argmax_rows().into_iter().map(|c| c as u8).collect())
        .collect();
    let mut labels = Vec::with_capacity(n);
    let mut mean_positive = Vec::with_capacity(n);
    for r in 0..n {
        let ones = votes.iter().filter(|v| v[r] == 1).count();
        let p1 = probs.iter().map(|p| f64::from(p.get(r, 1))).sum::<f64>() / m as f64;
        let p0 = probs.iter().map(|p| f64::from(p.get(r, 0))).sum::<f64>() / m as f64;
        mean_positive.push(p1);
        labels.push(majority(ones, m, p1, p0));
    }
    Ok(Prediction {
        labels,
        votes,
        mean_positive,
    })
}

fn majority(ones: usize, m: usize, p1: f64, p0: f64) -> u8 {
    match (2 * ones).cmp(&m) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => u8::from(p1 > p0),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    sources: Vec<String>,
    groups: Vec<usize>,
    encoders: Vec<NetSpec>,
    classifiers: Vec<NetSpec>,
    mediums: Vec<NetSpec>,
}

/// Serialises a model: `b"CEPC"`, `u16` version, a `u32`-length-prefixed
/// JSON architecture block, then every parameter block (encoders,
/// classifiers, mediums; per layer weight then bias) as a `u32` count
/// followed by little-endian `f32` values. Optimizer state is not stored.
pub fn encode_checkpoint(model: &CepcModel) -> Result<Vec<u8>> {
    model.validate()?;
    let arch = Architecture {
        sources: model.source_names.clone(),
        groups: model.groups.clone(),
        encoders: model.encoders.iter().map(Mlp::spec).collect(),
        classifiers: model.classifiers.iter().map(Mlp::spec).collect(),
        mediums: model.mediums.iter().map(Mlp::spec).collect(),
    };
    let json = serde_json::to_vec(&arch)?;
    let mut out = Vec::new();
    out.extend_from_slice(crate::data::MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for net in model.encoders.iter().chain(&model.classifiers).chain(&model.mediums) {
        for block in net.blocks() {
            out.extend_from_slice(&(block.len() as u32).to_le_bytes());
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CepcModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != crate::data::MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("architecture length")? as usize;
    let arch: Architecture = serde_json::from_slice(r.take(len, "architecture")?)
        .map_err(|e| Error::Format(format!("architecture block: {e}")))?;
    let build = |specs: &[NetSpec]| -> Result<Vec<Mlp>> {
        specs
            .iter()
            .map(|s| Mlp::zeros(s).map_err(|e| Error::Format(e.to_string())))
            .collect()
    };
    let mut model = CepcModel {
        source_names: arch.sources,
        groups: arch.groups,
        encoders: build(&arch.encoders)?,
        classifiers: build(&arch.classifiers)?,
        mediums: build(&arch.mediums)?,
    };
    for net in model
        .encoders
        .iter_mut()
        .chain(model.classifiers.iter_mut())
        .chain(model.mediums.iter_mut())
    {
        for block in net.blocks_mut() {
            let count = r.u32("block length")? as usize;
            if count != block.len() {
                return Err(Error::Format(format!(
                    "parameter block holds {count} values, architecture needs {}",
                    block.len()
                )));
            }
            let raw = r.take(count * 4, "parameters")?;
            for (v, c) in block.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(c.try_into().unwrap());
            }
        }
    }
    r.finish()?;
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint(model: &CepcModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CepcModel> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes the loss trace as CSV: `step,nll,coral,l_div,l_med,alpha,total`.
pub fn save_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in trace {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub doc_id: String,
    pub label: u8,
    pub mean_positive: f64,
}

/// Writes `doc_id,label,mean_positive` rows in document order.
pub fn save_predictions_csv(ids: &[String], pred: &Prediction, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != pred.labels.len() {
        return Err(Error::Shape(format!("{} ids for {} predictions", ids.len(), pred.labels.len())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for ((id, &label), &p) in ids.iter().zip(&pred.labels).zip(&pred.mean_positive) {
        let row = PredictionRow {
            doc_id: id.clone(),
            label,
            mean_positive: p,
        };
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<PredictionRow>, _>>()
        .map_err(|e| csv_error(path, e))?;
    if let Some(r) = rows.iter().find(|r| r.label > 1) {
        return Err(Error::Format(format!("{}: label {} for {}", path.display(), r.label, r.doc_id)));
    }
    Ok(rows)
}
