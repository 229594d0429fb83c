use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::image::{read_image, write_image, Image};
use crate::silhouette::{extract_silhouette, RefinementReport, SilhouetteParams};

/// One line of the refinement report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: PathBuf,
    #[serde(flatten)]
    pub report: RefinementReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// Accepted records only, each with its silhouette path filled in.
    pub manifest: DatasetManifest,
    /// One entry per input record, in manifest order.
    pub reports: Vec<FileReport>,
}

/// Extracts a silhouette for every record, writing accepted ones to
/// `out_dir/<label>/<stem>.pgm`. Rejected images are left out of the
/// returned manifest but keep their report line.
pub fn preprocess(manifest: &DatasetManifest, out_dir: &Path, params: &SilhouetteParams) -> Result<Preprocessed> {
    params.validate()?;
    let mut kept = Vec::new();
    let mut reports = Vec::with_capacity(manifest.len());
    let mut written = std::collections::HashSet::new();
    for r in &manifest.records {
        let rgb = read_image(&r.rgb)?.into_rgb();
        let e = extract_silhouette(&rgb, params)?;
        if e.report.accepted() {
            let dir = out_dir.join(r.label.name());
            fs::create_dir_all(&dir)?;
            let stem = r.rgb.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let sil = dir.join(format!("{stem}.pgm"));
            if !written.insert(sil.clone()) {
                return Err(Error::data(format!("two records map to silhouette {}", sil.display())));
            }
            write_image(&sil, &Image::Gray(e.silhouette))?;
            kept.push(SampleRecord { sil: Some(sil), ..r.clone() });
        }
        reports.push(FileReport { file: r.rgb.clone(), report: e.report });
    }
    let manifest = DatasetManifest { records: kept, provenance: manifest.provenance.clone() };
    Ok(Preprocessed { manifest, reports })
}

impl Preprocessed {
    /// JSON Lines, file paths relative to `base` where possible.
    pub fn reports_jsonl(&self, base: &Path) -> Result<String> {
        let mut out = String::new();
        for r in &self.reports {
            let file = r.file.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| r.file.clone());
            out.push_str(&serde_json::to_string(&FileReport { file, report: r.report })?);
            out.push('\n');
        }
        Ok(out)
    }
}
