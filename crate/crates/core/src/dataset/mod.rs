//! Dataset manifests (JSON Lines), directory scanning, stratified
//! splitting, batch loading and the synthetic corpus generator.

mod loader;
mod preprocess;
mod synthetic;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Prng;

pub use loader::{load_batch, normalize_to_tensor, Batch, SplitData};
pub use preprocess::{preprocess, FileReport, Preprocessed};
pub use synthetic::{generate_synthetic, Corruption, SyntheticCorpus, SyntheticParams, SyntheticSample};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    Defective,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Defective];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Defective => "defective",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

/// One manifest line. Paths are resolved against the manifest's directory
/// when read and made relative to it again when written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub rgb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sil: Option<PathBuf>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default)]
    pub fruit: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub provenance: Provenance,
}

/// `manifest.jsonl` -> `manifest.provenance.json`.
pub fn provenance_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.provenance.json"))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `path` relative to `base`, climbing with `..` when the two share at least
/// one leading directory; otherwise `path` unchanged.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    if let Ok(p) = path.strip_prefix(base) {
        return p.to_path_buf();
    }
    let (pc, bc): (Vec<Component>, Vec<Component>) = (path.components().collect(), base.components().collect());
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let shared_dir = pc[..common].iter().any(|c| matches!(c, Component::Normal(_)));
    if !shared_dir || !bc[common..].iter().all(|c| matches!(c, Component::Normal(_))) {
        return path.to_path_buf();
    }
    let mut out: PathBuf = bc[common..].iter().map(|_| Component::ParentDir).collect();
    out.extend(&pc[common..]);
    out
}

/// Lexically folds `.` and `..` components.
fn normalize(path: &Path) -> PathBuf {
    let mut out: Vec<Component> = Vec::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    if out.is_empty() {
        PathBuf::from(".")
    } else {
        out.iter().collect()
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, in manifest order.
    pub fn split_records(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn class_counts(&self, split: Option<Split>) -> [usize; 2] {
        let mut c = [0; 2];
        for r in self.records.iter().filter(|r| split.is_none() || r.split == split) {
            c[r.label.index()] += 1;
        }
        c
    }

    /// JSON Lines text with paths made relative to `base`.
    pub fn to_jsonl(&self, base: &Path) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let mut r = r.clone();
            r.rgb = relative_to(&r.rgb, base);
            r.sil = r.sil.map(|s| relative_to(&s, base));
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses JSON Lines, resolving relative paths against `base`.
    pub fn from_jsonl(text: &str, base: &Path) -> Result<Self> {
        let mut records: Vec<SampleRecord> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut r: SampleRecord =
                serde_json::from_str(line).map_err(|e| Error::data(format!("manifest line {}: {e}", i + 1)))?;
            r.rgb = normalize(&base.join(&r.rgb));
            r.sil = r.sil.map(|s| normalize(&base.join(s)));
            records.push(r);
        }
        let m = DatasetManifest { records, provenance: Provenance::default() };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.rgb) {
                return Err(Error::data(format!("duplicate manifest path {}", r.rgb.display())));
            }
        }
        Ok(())
    }

    /// Writes the manifest and, next to it, its provenance sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = parent_dir(path);
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl(&base)?.as_bytes())?;
        let prov = serde_json::to_string_pretty(&self.provenance)? + "\n";
        fs::write(provenance_path(path), prov)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        let mut m = Self::from_jsonl(&text, &parent_dir(path))?;
        let prov = provenance_path(path);
        if prov.exists() {
            m.provenance = serde_json::from_str(&fs::read_to_string(prov)?)
                .map_err(|e| Error::data(format!("manifest provenance: {e}")))?;
        }
        Ok(m)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pnm" | "pgm"))
}

/// One record per image under `root/healthy` and `root/defective`, healthy
/// first, each class in lexicographic file-name order.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    let fruit = root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut records = Vec::new();
    for label in Label::ALL {
        let dir = root.join(label.name());
        if !dir.is_dir() {
            return Err(Error::data(format!("missing class directory {}", dir.display())));
        }
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_file() && is_image(&p) {
                files.push(p);
            }
        }
        if files.is_empty() {
            return Err(Error::data(format!("class directory {} has no images", dir.display())));
        }
        files.sort();
        records.extend(files.into_iter().map(|rgb| SampleRecord {
            rgb,
            sil: None,
            label,
            split: None,
            fruit: fruit.clone(),
        }));
    }
    let provenance = Provenance { source_dir: Some(root.display().to_string()), seed: None, ratios: None };
    Ok(DatasetManifest { records, provenance })
}

/// Stratified split: each class is shuffled (Fisher-Yates, one SplitMix64
/// stream seeded with `seed`, healthy first) and cut at
/// `floor(r_train*n)`, `floor(r_val*n)`, remainder test. Record order is kept.
pub fn split_manifest(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut out = manifest.clone();
    let mut prng = Prng::new(seed);
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..out.records.len()).filter(|&i| out.records[i].label == label).collect();
        let n = idx.len();
        if n < 3 {
            return Err(Error::data(format!("class {label} has {n} samples; at least 3 are needed to split")));
        }
        prng.shuffle(&mut idx);
        let n_train = (ratios[0] * n as f64 + 1e-9).floor() as usize;
        let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = Some(if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    out.provenance.seed = Some(seed);
    out.provenance.ratios = Some(ratios);
    Ok(out)
}
