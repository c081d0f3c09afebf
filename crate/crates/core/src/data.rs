//! Domain datasets, their on-disk formats, and the synthetic shift generator.
//!
//! Two file formats hold a dataset:
//!
//! * JSONL, one `{"id": str, "label": 0|1|null, "features": [..]}` per line.
//! * Binary: `b"CEPC"`, `u16` version (1), `u32` rows, `u32` cols, row-major
//!   little-endian `f32` features, one `i8` label per row (`-1` = unlabeled),
//!   then each id as a `u32` byte length followed by UTF-8 bytes.
//!
//! Loaders reject malformed input instead of repairing it.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::RngStream;

pub const MAGIC: &[u8; 4] = b"CEPC";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

/// Labeled (source) or unlabeled (target) documents as fixed-width feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub role: DomainRole,
    pub ids: Vec<String>,
    pub labels: Vec<Option<u8>>,
    pub features: Matrix,
}

impl DomainDataset {
    /// Builds and validates a dataset; the role follows from the labels.
    pub fn new(
        name: impl Into<String>,
        ids: Vec<String>,
        labels: Vec<Option<u8>>,
        features: Matrix,
    ) -> Result<Self> {
        let role = match (labels.iter().all(Option::is_some), labels.iter().all(Option::is_none)) {
            (true, false) => DomainRole::Source,
            (false, true) => DomainRole::Target,
            (true, true) => return Err(Error::Data("dataset has no documents".into())),
            (false, false) => {
                return Err(Error::Data(
                    "dataset mixes labeled and unlabeled documents".into(),
                ))
            }
        };
        let ds = Self {
            name: name.into(),
            role,
            ids,
            labels,
            features,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if n == 0 {
            return Err(Error::Data(format!("{}: no documents", self.name)));
        }
        if self.features.cols() == 0 {
            return Err(Error::Data(format!("{}: zero feature dimension", self.name)));
        }
        if self.ids.len() != n || self.labels.len() != n {
            return Err(Error::Data(format!(
                "{}: {} ids and {} labels for {n} feature rows",
                self.name,
                self.ids.len(),
                self.labels.len()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Data(format!("{}: non-finite feature value", self.name)));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("{}: duplicate id {id:?}", self.name)));
            }
        }
        for (i, l) in self.labels.iter().enumerate() {
            match (self.role, l) {
                (DomainRole::Source, Some(0 | 1)) | (DomainRole::Target, None) => {}
                (DomainRole::Source, Some(v)) => {
                    return Err(Error::Data(format!("{}: label {v} at row {i}", self.name)))
                }
                (DomainRole::Source, None) => {
                    return Err(Error::Data(format!("{}: unlabeled source row {i}", self.name)))
                }
                (DomainRole::Target, Some(_)) => {
                    return Err(Error::Data(format!("{}: labeled target row {i}", self.name)))
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Class indices of a source dataset.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                l.map(usize::from)
                    .ok_or_else(|| Error::Data(format!("{}: dataset is unlabeled", self.name)))
            })
            .collect()
    }

    /// Indices of the documents in each class, `[negatives, positives]`.
    pub fn class_indices(&self) -> Result<[Vec<usize>; 2]> {
        let mut out = [Vec::new(), Vec::new()];
        for (i, y) in self.class_labels()?.into_iter().enumerate() {
            out[y].push(i);
        }
        Ok(out)
    }

    /// Splits a labeled dataset into an unlabeled copy and its hidden labels.
    pub fn into_target(self) -> Result<(DomainDataset, Vec<u8>)> {
        let gold = self
            .class_labels()?
            .into_iter()
            .map(|y| y as u8)
            .collect::<Vec<_>>();
        let n = self.len();
        let ds = DomainDataset {
            name: self.name,
            role: DomainRole::Target,
            ids: self.ids,
            labels: vec![None; n],
            features: self.features,
        };
        Ok((ds, gold))
    }

    /// Pools several labeled datasets into one; ids are prefixed with the domain name.
    pub fn pooled(name: &str, parts: &[&DomainDataset]) -> Result<DomainDataset> {
        let feats: Vec<&Matrix> = parts.iter().map(|d| &d.features).collect();
        let features = Matrix::vstack(&feats)?;
        let ids = parts
            .iter()
            .flat_map(|d| d.ids.iter().map(move |id| format!("{}:{id}", d.name)))
            .collect();
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        DomainDataset::new(name, ids, labels, features)
    }

    pub fn subset(&self, name: &str, rows: &[usize]) -> Result<DomainDataset> {
        DomainDataset::new(
            name,
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
            self.features.select_rows(rows),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDoc {
    id: String,
    label: Option<u8>,
    features: Vec<f32>,
}

fn name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let doc: JsonDoc = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{lineno}: malformed record: {e}", path.display()))
        })?;
        match dim {
            None => dim = Some(doc.features.len()),
            Some(d) if d != doc.features.len() => {
                return Err(Error::Data(format!(
                    "{}:{lineno}: {} features, earlier lines have {d}",
                    path.display(),
                    doc.features.len()
                )))
            }
            _ => {}
        }
        if let Some(l) = doc.label.filter(|&l| l > 1) {
            return Err(Error::Data(format!(
                "{}:{lineno}: label {l} is not 0, 1 or null",
                path.display()
            )));
        }
        if doc.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{}:{lineno}: feature out of f32 range",
                path.display()
            )));
        }
        ids.push(doc.id);
        labels.push(doc.label);
        data.extend(doc.features);
    }
    let rows = ids.len();
    let features = Matrix::from_vec(rows, dim.unwrap_or(0), data)?;
    DomainDataset::new(name_from_path(path), ids, labels, features)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn save_jsonl(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..ds.len() {
        let doc = JsonDoc {
            id: ds.ids[i].clone(),
            label: ds.labels[i],
            features: ds.features.row(i).to_vec(),
        };
        serde_json::to_writer(&mut w, &doc)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_binary(ds: &DomainDataset) -> Result<Vec<u8>> {
    let rows = u32::try_from(ds.len()).map_err(|_| Error::Data("too many rows".into()))?;
    let cols = u32::try_from(ds.dim()).map_err(|_| Error::Data("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.features.as_slice().len() * 4 + ds.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in ds.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &ds.labels {
        let b: i8 = match l {
            None => -1,
            Some(v) => *v as i8,
        };
        out.push(b as u8);
    }
    for id in &ds.ids {
        let len = u32::try_from(id.len()).map_err(|_| Error::Data("id too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    Ok(out)
}

/// Little-endian cursor that reports truncation as a format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_binary(name: &str, bytes: &[u8]) -> Result<DomainDataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let n_values = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let raw = r.take(n_values.saturating_mul(4), "features")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = r
        .take(rows, "labels")?
        .iter()
        .map(|&b| match b as i8 {
            -1 => Ok(None),
            v @ (0 | 1) => Ok(Some(v as u8)),
            v => Err(Error::Format(format!("invalid label byte {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = r.u32("id length")? as usize;
        let raw = r.take(len, "id")?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::Format("id is not UTF-8".into()))?
            .to_owned();
        ids.push(id);
    }
    r.finish()?;
    let features = Matrix::from_vec(rows, cols, data)?;
    DomainDataset::new(name, ids, labels, features).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_binary(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(ds)?).map_err(|e| Error::io(path, e))
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_binary(&name_from_path(path), &bytes)
}

/// Loads a dataset by extension: `.jsonl` or `.bin`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => load_jsonl(path),
        Some("bin") => load_binary(path),
        _ => Err(Error::Input(format!(
            "{}: expected a .jsonl or .bin dataset",
            path.display()
        ))),
    }
}

pub fn save_dataset(ds: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => save_jsonl(ds, path),
        Some("bin") => save_binary(ds, path),
        _ => Err(Error::Input(format!(
            "{}: expected a .jsonl or .bin dataset",
            path.display()
        ))),
    }
}

/// One entry of an experiment manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub role: DomainRole,
    pub path: PathBuf,
    pub dim: usize,
    /// Labeled copy of a target domain, used only for scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domains: Vec<ManifestEntry>,
}

/// A target domain with its optional gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDomain {
    pub data: DomainDataset,
    pub gold: Option<Vec<u8>>,
}

/// Every dataset named by a manifest, loaded and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDomains {
    pub sources: Vec<DomainDataset>,
    pub targets: Vec<TargetDomain>,
}

impl Manifest {
    /// Reads a manifest; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.domains {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
            if let Some(g) = d.gold.as_mut().filter(|g| g.is_relative()) {
                *g = base.join(&*g);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_domains(&self) -> Result<LoadedDomains> {
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut names = HashSet::new();
        for entry in &self.domains {
            if !names.insert(entry.name.as_str()) {
                return Err(Error::Config(format!("domain {:?} listed twice", entry.name)));
            }
            let mut ds = load_dataset(&entry.path)?;
            ds.name = entry.name.clone();
            if ds.dim() != entry.dim {
                return Err(Error::Data(format!(
                    "{}: manifest says dim {}, file has {}",
                    entry.name,
                    entry.dim,
                    ds.dim()
                )));
            }
            if ds.role != entry.role {
                return Err(Error::Data(format!(
                    "{}: manifest role {:?} but file is {:?}",
                    entry.name, entry.role, ds.role
                )));
            }
            match entry.role {
                DomainRole::Source => sources.push(ds),
                DomainRole::Target => {
                    let gold = match &entry.gold {
                        Some(p) => Some(load_gold(p, &ds)?),
                        None => None,
                    };
                    targets.push(TargetDomain { data: ds, gold });
                }
            }
        }
        if sources.len() < 2 || targets.is_empty() {
            return Err(Error::Config(format!(
                "manifest needs at least 2 sources and 1 target, has {} and {}",
                sources.len(),
                targets.len()
            )));
        }
        let dim = sources[0].dim();
        if sources.iter().chain(targets.iter().map(|t| &t.data)).any(|d| d.dim() != dim) {
            return Err(Error::Data("domains disagree on feature dimension".into()));
        }
        Ok(LoadedDomains { sources, targets })
    }
}

/// Reads gold labels for `target` from a labeled dataset file with the same ids.
pub fn load_gold(path: &Path, target: &DomainDataset) -> Result<Vec<u8>> {
    let gold = load_dataset(path)?;
    if gold.ids != target.ids {
        return Err(Error::Data(format!(
            "{}: gold ids do not match target {:?}",
            path.display(),
            target.name
        )));
    }
    Ok(gold.class_labels()?.into_iter().map(|y| y as u8).collect())
}

/// Shape of one synthetic domain relative to the shared base distribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShape {
    /// Mean shift along a direction orthogonal to the class axis.
    #[serde(default)]
    pub shift: f64,
    /// Rotation (radians) of the class axis toward a second orthogonal direction.
    #[serde(default)]
    pub rotation: f64,
    /// Swap the class-conditional means, inverting the label relationship.
    #[serde(default)]
    pub adversarial: bool,
}

/// Parameters of the synthetic domain-shift generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub domains: Vec<DomainShape>,
    pub docs_per_domain: usize,
    pub dim: usize,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    /// Distance of each class mean from the origin along the class axis.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_positive_rate() -> f64 {
    0.2
}

fn default_separation() -> f64 {
    2.0
}

fn default_noise() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("synthetic spec has no domains".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("synthetic data needs dim >= 2".into()));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config("positive rate must lie in (0, 1)".into()));
        }
        if self.docs_per_domain < 2 {
            return Err(Error::Config("need at least 2 documents per domain".into()));
        }
        if !(self.noise >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("noise must be >= 0 and separation finite".into()));
        }
        Ok(())
    }
}

/// Directions shared by all domains of a spec: class axis, rotation partner,
/// shift direction. In two dimensions the shift reuses the partner axis.
fn base_axes(dim: usize, rng: &RngStream) -> [Vec<f64>; 3] {
    let mut r = rng.rng();
    let wanted = dim.min(3);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(3);
    while axes.len() < wanted {
        let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        for a in &axes {
            let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(a) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            axes.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let shift = axes.get(2).unwrap_or(&axes[1]).clone();
    [axes[0].clone(), axes[1].clone(), shift]
}

/// Generates one labeled dataset per entry of `spec.domains`, named `domain{k}`.
///
/// Class-conditional Gaussians sit at `±separation` on a shared class axis
/// with isotropic noise. Each domain then rotates the class axis, shifts the
/// mean and, when adversarial, swaps the class means. Exactly
/// `floor(n · positive_rate)` documents are positive.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let root = RngStream::new(spec.seed, "synthetic");
    let [class_axis, partner, shift_dir] = base_axes(spec.dim, &root.sub("axes"));
    let n = spec.docs_per_domain;
    let n_pos = (n as f64 * spec.positive_rate).floor() as usize;

    spec.domains
        .iter()
        .enumerate()
        .map(|(k, shape)| {
            let mut r = root.sub(format!("domain{k}")).rng();
            let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
            labels.shuffle(&mut r);

            let (sin, cos) = shape.rotation.sin_cos();
            let axis: Vec<f64> = class_axis
                .iter()
                .zip(&partner)
                .map(|(a, p)| cos * a + sin * p)
                .collect();
            let flip = if shape.adversarial { -1.0 } else { 1.0 };

            let mut data = Vec::with_capacity(n * spec.dim);
            for &y in &labels {
                let sign = flip * if y == 1 { 1.0 } else { -1.0 };
                for j in 0..spec.dim {
                    let noise: f64 = r.sample(StandardNormal);
                    let v = sign * spec.separation * axis[j]
                        + shape.shift * shift_dir[j]
                        + spec.noise * noise;
                    data.push(v as f32);
                }
            }
            DomainDataset::new(
                format!("domain{k}"),
                (0..n).map(|i| format!("d{k}-{i:05}")).collect(),
                labels.into_iter().map(Some).collect(),
                Matrix::from_vec(n, spec.dim, data)?,
            )
        })
        .collect()
}

/// Synthetic domains with the last one as the unlabeled target.
pub fn synthetic_split(spec: &SynthSpec) -> Result<(Vec<DomainDataset>, TargetDomain)> {
    let mut domains = gen_synthetic(spec)?;
    if domains.len() < 3 {
        return Err(Error::Config(format!(
            "synthetic benchmark needs at least 2 sources and a target, got {} domains",
            domains.len()
        )));
    }
    let (data, gold) = domains.pop().expect("checked above").into_target()?;
    Ok((domains, TargetDomain { data, gold: Some(gold) }))
}

/// Writes a synthetic benchmark to `dir` as binary datasets, the target's
/// gold copy and `manifest.json`; returns the manifest path.
pub fn write_synthetic(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (sources, target) = synthetic_split(spec)?;
    let mut entries = Vec::new();
    for ds in &sources {
        let file = format!("{}.bin", ds.name);
        save_binary(ds, dir.join(&file))?;
        entries.push(ManifestEntry {
            name: ds.name.clone(),
            role: DomainRole::Source,
            path: file.into(),
            dim: ds.dim(),
            gold: None,
        });
    }
    let t = &target.data;
    let gold_labels = target.gold.as_ref().expect("synthetic targets carry gold");
    let labeled = DomainDataset::new(
        t.name.clone(),
        t.ids.clone(),
        gold_labels.iter().map(|&y| Some(y)).collect(),
        t.features.clone(),
    )?;
    let file = format!("{}.bin", t.name);
    let gold_file = format!("{}.gold.bin", t.name);
    save_binary(t, dir.join(&file))?;
    save_binary(&labeled, dir.join(&gold_file))?;
    entries.push(ManifestEntry {
        name: t.name.clone(),
        role: DomainRole::Target,
        path: file.into(),
        dim: t.dim(),
        gold: Some(gold_file.into()),
    });
    let path = dir.join("manifest.json");
    Manifest { domains: entries }.save(&path)?;
    Ok(path)
}

/// Stratified split keeping `fraction` of each class in the first part.
pub fn split_oracle(
    ds: &DomainDataset,
    fraction: f64,
    rng: &RngStream,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config("split fraction must lie in (0, 1)".into()));
    }
    let mut r = rng.rng();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in ds.class_indices()?.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "{}: class {class} has {} documents, too few to stratify",
                ds.name,
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        ds.subset(&format!("{}-train", ds.name), &train)?,
        ds.subset(&format!("{}-test", ds.name), &test)?,
    ))
}
