use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Label, Provenance, SampleRecord};
use crate::error::{Error, Result};
use crate::image::{write_image, Image, RgbImage};
use crate::tensor::Prng;

/// Generator settings. Lengths are fractions of the image side so the same
/// corpus shape scales with `image_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub image_size: usize,
    pub per_class: usize,
    /// Inclusive gray-level range of the uniform background.
    pub background: [u8; 2],
    /// Target luminance range of the fruit colour.
    pub fruit_luminance: [f64; 2],
    /// Fruit ellipse semi-axis range.
    pub fruit_axis: [f64; 2],
    pub blob_count: [usize; 2],
    /// Defect blob semi-axis range.
    pub blob_axis: [f64; 2],
    /// Blob colour = `defect_contrast * fruit colour`, per channel.
    pub defect_contrast: f64,
    /// Fraction of each class rendered as segmentation failures.
    pub corrupt_frac: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            image_size: 64,
            per_class: 10,
            background: [170, 235],
            fruit_luminance: [70.0, 130.0],
            fruit_axis: [12.0 / 64.0, 22.0 / 64.0],
            blob_count: [1, 3],
            blob_axis: [2.0 / 64.0, 4.5 / 64.0],
            defect_contrast: 0.15,
            corrupt_frac: 0.0,
        }
    }
}

/// Margin between the fruit and the image border, and between a blob and
/// the fruit edge, in pixels.
const FRUIT_MARGIN: f64 = 3.0;
const BLOB_MARGIN: f64 = 3.5;

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1];
        if self.image_size < 16 {
            return Err(Error::invalid("synthetic image size must be at least 16"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("per-class count must be positive"));
        }
        if self.background[0] > self.background[1]
            || !ordered(self.fruit_luminance)
            || !ordered(self.fruit_axis)
            || !ordered(self.blob_axis)
            || self.blob_count[0] == 0
            || self.blob_count[0] > self.blob_count[1]
        {
            return Err(Error::invalid("synthetic parameter ranges must be non-empty and positive"));
        }
        let s = self.image_size as f64;
        if self.fruit_axis[1] * s + FRUIT_MARGIN >= s / 2.0 {
            return Err(Error::invalid("fruit axes do not fit inside the image"));
        }
        if (self.blob_axis[1] * s + BLOB_MARGIN) >= self.fruit_axis[0] * s {
            return Err(Error::invalid("defect blobs do not fit inside the smallest fruit"));
        }
        if !(self.defect_contrast > 0.0 && self.defect_contrast < 1.0) {
            return Err(Error::invalid("defect_contrast must lie in (0,1)"));
        }
        if !(0.0..=1.0).contains(&self.corrupt_frac) {
            return Err(Error::invalid("corrupt_frac must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Fruit far below the refinement filter's minimum area.
    Tiny,
    /// Large fruit centred on an image edge.
    BorderClipped,
}

/// Ground truth for one generated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub rgb: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
    pub background: u8,
    pub fruit_rgb: [u8; 3],
    /// Colour of the defect blobs; `None` when none were drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_rgb: Option<[u8; 3]>,
    pub blob_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub samples: Vec<SyntheticSample>,
}

#[derive(Serialize)]
struct CorpusDescription<'a> {
    seed: u64,
    params: &'a SyntheticParams,
    samples: Vec<SyntheticSample>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalised radius of `(x, y)`; `<= 1` is inside.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    fn extent(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            (self.a * self.a * c * c + self.b * self.b * s * s).sqrt(),
            (self.a * self.a * s * s + self.b * self.b * c * c).sqrt(),
        )
    }

    /// Points on the boundary of this ellipse grown by `margin`.
    fn grown_boundary(&self, margin: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (s, c) = self.theta.sin_cos();
        (0..32).map(move |k| {
            let phi = k as f64 * PI / 16.0;
            let (u, v) = ((self.a + margin) * phi.cos(), (self.b + margin) * phi.sin());
            (self.cx + u * c - v * s, self.cy + u * s + v * c)
        })
    }

    fn paint(&self, img: &mut RgbImage, rgb: [u8; 3]) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                if self.radius(x as f64 + 0.5, y as f64 + 0.5) <= 1.0 {
                    img.put(x, y, rgb);
                }
            }
        }
    }
}

fn fruit_colour(p: &SyntheticParams, prng: &mut Prng) -> [u8; 3] {
    let target = prng.uniform(p.fruit_luminance[0], p.fruit_luminance[1]);
    let w = [prng.uniform(0.5, 1.5), prng.uniform(0.5, 1.5), prng.uniform(0.5, 1.5)];
    let k = target / (0.299 * w[0] + 0.587 * w[1] + 0.114 * w[2]);
    w.map(|c| (c * k).round().clamp(1.0, 255.0) as u8)
}

fn render(p: &SyntheticParams, label: Label, corruption: Option<Corruption>, prng: &mut Prng) -> (RgbImage, SyntheticSample) {
    let s = p.image_size as f64;
    let bg = prng.range_inclusive(p.background[0] as u64, p.background[1] as u64) as u8;
    let fruit_rgb = fruit_colour(p, prng);
    let mut img = RgbImage::filled(p.image_size, p.image_size, [bg; 3]);
    let mut sample = SyntheticSample {
        rgb: PathBuf::new(),
        label,
        corruption,
        background: bg,
        fruit_rgb,
        blob_rgb: None,
        blob_count: 0,
    };
    match corruption {
        Some(Corruption::Tiny) => {
            let a = prng.uniform(2.5, 4.5) * s / 64.0;
            let b = prng.uniform(2.5, 4.5) * s / 64.0;
            let m = a.max(b) + FRUIT_MARGIN;
            let e = Ellipse { cx: prng.uniform(m, s - m), cy: prng.uniform(m, s - m), a, b, theta: 0.0 };
            e.paint(&mut img, fruit_rgb);
        }
        Some(Corruption::BorderClipped) => {
            let a = prng.uniform(16.0, 24.0) * s / 64.0;
            let b = prng.uniform(16.0, 24.0) * s / 64.0;
            // Centre sits on one edge's middle section; `depth` keeps the
            // chord along that edge at least ~2 * 0.97 * b.
            let depth = prng.uniform(0.0, 0.25);
            let along = s / 2.0 + prng.uniform(-s / 16.0, s / 16.0);
            let (cx, cy, a, b) = match prng.below(4) {
                0 => (depth * a, along, a, b),
                1 => (s - depth * a, along, a, b),
                2 => (along, depth * b, b, a),
                _ => (along, s - depth * b, b, a),
            };
            Ellipse { cx, cy, a, b, theta: 0.0 }.paint(&mut img, fruit_rgb);
        }
        None => {
            let a = prng.uniform(p.fruit_axis[0], p.fruit_axis[1]) * s;
            let b = prng.uniform(p.fruit_axis[0], p.fruit_axis[1]) * s;
            let theta = prng.uniform(0.0, PI);
            let mut fruit = Ellipse { cx: 0.0, cy: 0.0, a, b, theta };
            let (ex, ey) = fruit.extent();
            fruit.cx = prng.uniform(ex + FRUIT_MARGIN, s - ex - FRUIT_MARGIN);
            fruit.cy = prng.uniform(ey + FRUIT_MARGIN, s - ey - FRUIT_MARGIN);
            fruit.paint(&mut img, fruit_rgb);
            if label == Label::Defective {
                let blob_rgb = fruit_rgb.map(|c| (p.defect_contrast * c as f64).round() as u8);
                let n = prng.range_inclusive(p.blob_count[0] as u64, p.blob_count[1] as u64) as usize;
                for _ in 0..n {
                    place_blob(p, &fruit, prng).paint(&mut img, blob_rgb);
                }
                sample.blob_rgb = Some(blob_rgb);
                sample.blob_count = n;
            }
        }
    }
    (img, sample)
}

/// Rejection-samples a blob whose `BLOB_MARGIN`-grown outline stays inside
/// the fruit; falls back to the fruit centre, which always fits.
fn place_blob(p: &SyntheticParams, fruit: &Ellipse, prng: &mut Prng) -> Ellipse {
    let s = p.image_size as f64;
    let a = prng.uniform(p.blob_axis[0], p.blob_axis[1]) * s;
    let b = prng.uniform(p.blob_axis[0], p.blob_axis[1]) * s;
    let theta = prng.uniform(0.0, PI);
    let (ex, ey) = fruit.extent();
    for _ in 0..256 {
        let blob = Ellipse {
            cx: prng.uniform(fruit.cx - ex, fruit.cx + ex),
            cy: prng.uniform(fruit.cy - ey, fruit.cy + ey),
            a,
            b,
            theta,
        };
        if blob.grown_boundary(BLOB_MARGIN).all(|(x, y)| fruit.radius(x, y) <= 1.0) {
            return blob;
        }
    }
    Ellipse { cx: fruit.cx, cy: fruit.cy, a, b, theta }
}

/// Writes `out_dir/{healthy,defective}/NNNNN.ppm`, `out_dir/manifest.jsonl`
/// and `out_dir/synthetic.json` (seed, parameters and per-image ground
/// truth). Every byte is a function of `params` and `seed`.
///
/// Exactly `round(corrupt_frac * per_class)` images of each class are
/// corrupted, alternating tiny and border-clipped; they carry no blobs.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64, out_dir: &Path) -> Result<SyntheticCorpus> {
    params.validate()?;
    let root = Prng::new(seed);
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for label in Label::ALL {
        let dir = out_dir.join(label.name());
        fs::create_dir_all(&dir)?;
        let n_bad = (params.corrupt_frac * params.per_class as f64).round() as usize;
        let mut order: Vec<usize> = (0..params.per_class).collect();
        root.derive(0xBAD0 + label.index() as u64).shuffle(&mut order);
        let mut corruption = vec![None; params.per_class];
        for (k, &i) in order[..n_bad].iter().enumerate() {
            corruption[i] = Some(if k % 2 == 0 { Corruption::Tiny } else { Corruption::BorderClipped });
        }
        for (i, &c) in corruption.iter().enumerate() {
            let mut prng = root.derive(((label.index() as u64 + 1) << 32) | i as u64);
            let (img, mut sample) = render(params, label, c, &mut prng);
            let path = dir.join(format!("{i:05}.ppm"));
            write_image(&path, &Image::Rgb(img))?;
            sample.rgb = PathBuf::from(label.name()).join(format!("{i:05}.ppm"));
            records.push(SampleRecord { rgb: path, sil: None, label, split: None, fruit: "synthetic".into() });
            samples.push(sample);
        }
    }
    let manifest = DatasetManifest { records, provenance: Provenance { source_dir: None, seed: Some(seed), ratios: None } };
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    let desc = CorpusDescription { seed, params, samples: samples.clone() };
    fs::write(out_dir.join("synthetic.json"), serde_json::to_string_pretty(&desc)? + "\n")?;
    for s in &mut samples {
        s.rgb = out_dir.join(&s.rgb);
    }
    Ok(SyntheticCorpus { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SyntheticParams::default().validate().unwrap();
        let bad = SyntheticParams { defect_contrast: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SyntheticParams { blob_count: [3, 1], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blobs_stay_inside_the_fruit() {
        let p = SyntheticParams::default();
        let mut prng = Prng::new(11);
        for _ in 0..200 {
            let fruit = Ellipse { cx: 32.0, cy: 30.0, a: 12.0, b: 14.0, theta: prng.uniform(0.0, PI) };
            let blob = place_blob(&p, &fruit, &mut prng);
            assert!(blob.grown_boundary(BLOB_MARGIN).all(|(x, y)| fruit.radius(x, y) <= 1.0));
        }
    }
}
