//! Classical fruit segmentation: Otsu threshold, morphology, component
//! analysis, relative-darkness defect detection and a rule-based
//! refinement filter.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// Two-valued image; `true` is foreground (255 when rendered).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != bits.len() {
            return Err(Error::invalid(format!("mask {width}x{height} does not match {} pixels", bits.len())));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask { width, height, bits: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn to_gray(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::new(self.width, self.height, px).expect("mask dimensions are valid")
    }

    /// Foreground wherever the gray value is non-zero.
    pub fn from_gray(g: &GrayImage) -> Self {
        Mask { width: g.width(), height: g.height(), bits: g.pixels().iter().map(|&v| v != 0).collect() }
    }

    fn border_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let (w, h) = (self.width, self.height);
        (0..w * h).filter(move |&i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x == w - 1 || y == h - 1
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    FgAbove,
    FgBelow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Open,
    Close,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SilhouetteParams {
    pub morph_radius: usize,
    pub defect_alpha: f64,
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub max_border_contact_frac: f64,
}

impl Default for SilhouetteParams {
    fn default() -> Self {
        SilhouetteParams {
            morph_radius: 1,
            defect_alpha: 0.5,
            min_area_frac: 0.05,
            max_area_frac: 0.90,
            max_border_contact_frac: 0.05,
        }
    }
}

impl SilhouetteParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.defect_alpha > 0.0 && self.defect_alpha < 1.0) {
            return Err(Error::invalid(format!("defect_alpha must lie in (0,1), got {}", self.defect_alpha)));
        }
        if !(0.0 < self.min_area_frac && self.min_area_frac < self.max_area_frac && self.max_area_frac <= 1.0) {
            return Err(Error::invalid("area fractions must satisfy 0 < min < max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.max_border_contact_frac) {
            return Err(Error::invalid("max_border_contact_frac must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Ok,
    MaskTooSmall,
    MaskTooLarge,
    MaskTouchesBorder,
    DegenerateImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub verdict: Verdict,
    pub reason: RejectReason,
    pub area_frac: f64,
    pub defect_frac: f64,
}

impl RefinementReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

pub fn luminance(rgb: &RgbImage) -> GrayImage {
    let px = rgb
        .pixels()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(rgb.width(), rgb.height(), px).expect("same dimensions as the source")
}

/// Threshold maximising between-class variance, with class 0 = `{p <= t}`.
/// Comparisons are exact so ties resolve to the smallest `t`.
pub fn otsu_threshold(gray: &GrayImage) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &p in gray.pixels() {
        hist[p as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateImage("image has fewer than two distinct values".into()));
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    // Between-class variance times total^2 equals d^2 / (n0 * n1) with
    // d = total * s0 - total_sum * n0.
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..255usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (total as i128 * s0 as i128 - total_sum as i128 * n0 as i128).unsigned_abs();
        let num = d * d;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => exceeds(num, den, bn, bd),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    Ok(best.expect("two distinct values give a valid split").0)
}

/// `a/b > c/d` for positive denominators, exactly when the products fit.
fn exceeds(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(l), Some(r)) => l > r,
        _ => (a as f64 / b as f64) > (c as f64 / d as f64),
    }
}

pub fn binarize(gray: &GrayImage, t: u8, polarity: Polarity) -> Mask {
    let bits = gray
        .pixels()
        .iter()
        .map(|&p| match polarity {
            Polarity::FgAbove => p > t,
            Polarity::FgBelow => p <= t,
        })
        .collect();
    Mask { width: gray.width(), height: gray.height(), bits }
}

/// Square `(2r+1)^2` min/max filter; the window is clipped to the image.
fn morph_filter(mask: &Mask, r: usize, erode: bool) -> Mask {
    let (w, h) = (mask.width, mask.height);
    // Separable: rows then columns.
    let pass = |src: &[bool], len: usize, lines: usize, step: usize, stride: usize| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for line in 0..lines {
            let base = line * stride;
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(len - 1);
                let mut it = (lo..=hi).map(|j| src[base + j * step]);
                out[base + i * step] = if erode { it.all(|b| b) } else { it.any(|b| b) };
            }
        }
        out
    };
    let rows = pass(&mask.bits, w, h, 1, w);
    let bits = pass(&rows, h, w, w, 1);
    Mask { width: w, height: h, bits }
}

pub fn morph(mask: &Mask, op: MorphOp, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    match op {
        MorphOp::Open => morph_filter(&morph_filter(mask, radius, true), radius, false),
        MorphOp::Close => morph_filter(&morph_filter(mask, radius, false), radius, true),
    }
}

/// Labels 4-connected components of pixels equal to `value`, in raster
/// order of their first pixel. Returns per-pixel labels (`usize::MAX` for
/// other pixels) and component sizes.
fn label_components(mask: &Mask, value: bool) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.bits[start] != value || labels[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if mask.bits[j] == value && labels[j] == usize::MAX {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 4-connected foreground component; ties go to the
/// component whose first pixel comes first in raster order.
pub fn largest_component(mask: &Mask) -> Result<Mask> {
    let (labels, sizes) = label_components(mask, true);
    let mut keep: Option<usize> = None;
    for (id, &s) in sizes.iter().enumerate() {
        if keep.map_or(true, |k| s > sizes[k]) {
            keep = Some(id);
        }
    }
    let keep = keep.ok_or_else(|| Error::DegenerateImage("mask has no foreground".into()))?;
    let bits = labels.iter().map(|&l| l == keep).collect();
    Ok(Mask { width: mask.width, height: mask.height, bits })
}

/// Background components that do not reach the image border become foreground.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (labels, sizes) = label_components(mask, false);
    let mut outside = vec![false; sizes.len()];
    for i in mask.border_indices() {
        if labels[i] != usize::MAX {
            outside[labels[i]] = true;
        }
    }
    let bits = mask.bits.iter().zip(&labels).map(|(&b, &l)| b || !outside[l]).collect();
    Mask { width: mask.width, height: mask.height, bits }
}

/// Rules are checked in the order border contact, too small, too large.
pub fn refine_check(fruit_mask: &Mask, params: &SilhouetteParams) -> RefinementReport {
    let total = fruit_mask.bits.len() as f64;
    let area_frac = fruit_mask.area() as f64 / total;
    let (mut border, mut border_fg) = (0usize, 0usize);
    for i in fruit_mask.border_indices() {
        border += 1;
        border_fg += fruit_mask.bits[i] as usize;
    }
    let contact = border_fg as f64 / border as f64;
    let reason = if contact > params.max_border_contact_frac {
        RejectReason::MaskTouchesBorder
    } else if area_frac < params.min_area_frac {
        RejectReason::MaskTooSmall
    } else if area_frac > params.max_area_frac {
        RejectReason::MaskTooLarge
    } else {
        RejectReason::Ok
    };
    let verdict = if reason == RejectReason::Ok { Verdict::Accept } else { Verdict::Reject };
    RefinementReport { verdict, reason, area_frac, defect_frac: 0.0 }
}

/// Picks the polarity that makes the border-adjacent class background: a
/// vote of the four corners, then of all border pixels, then `FgAbove`.
fn choose_polarity(gray: &GrayImage, t: u8) -> Polarity {
    let (w, h) = (gray.width(), gray.height());
    let corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
    let above = corners.iter().filter(|&&(x, y)| gray.get(x, y) > t).count();
    let bg_above = match above {
        3 | 4 => true,
        0 | 1 => false,
        _ => {
            let m = Mask::filled(w, h, false);
            let (mut n, mut up) = (0usize, 0usize);
            for i in m.border_indices() {
                n += 1;
                up += (gray.pixels()[i] > t) as usize;
            }
            2 * up > n
        }
    };
    if bg_above {
        Polarity::FgBelow
    } else {
        Polarity::FgAbove
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub silhouette: GrayImage,
    pub fruit_mask: Mask,
    pub defect_mask: Mask,
    pub report: RefinementReport,
}

fn fruit_mask_of(gray: &GrayImage, r: usize) -> Result<Mask> {
    let t = otsu_threshold(gray)?;
    let m = binarize(gray, t, choose_polarity(gray, t));
    let m = morph(&morph(&m, MorphOp::Open, r), MorphOp::Close, r);
    Ok(fill_holes(&largest_component(&m)?))
}

/// Full pipeline. Degenerate inputs yield a rejected report and an
/// all-black silhouette rather than an error.
pub fn extract_silhouette(rgb: &RgbImage, params: &SilhouetteParams) -> Result<Extraction> {
    params.validate()?;
    let gray = luminance(rgb);
    let (w, h) = (gray.width(), gray.height());
    let fruit = match fruit_mask_of(&gray, params.morph_radius) {
        Ok(m) => m,
        Err(Error::DegenerateImage(_)) => {
            let empty = Mask::filled(w, h, false);
            return Ok(Extraction {
                silhouette: empty.to_gray(),
                fruit_mask: empty.clone(),
                defect_mask: empty,
                report: RefinementReport {
                    verdict: Verdict::Reject,
                    reason: RejectReason::DegenerateImage,
                    area_frac: 0.0,
                    defect_frac: 0.0,
                },
            });
        }
        Err(e) => return Err(e),
    };
    let area = fruit.area();
    let lum_sum: u64 = gray.pixels().iter().zip(&fruit.bits).filter(|(_, &b)| b).map(|(&p, _)| p as u64).sum();
    let cut = params.defect_alpha * lum_sum as f64 / area as f64;
    let defect_bits: Vec<bool> = gray.pixels().iter().zip(&fruit.bits).map(|(&p, &b)| b && (p as f64) < cut).collect();
    let defects = defect_bits.iter().filter(|&&b| b).count();
    let defect_mask = Mask { width: w, height: h, bits: defect_bits };
    let sil_bits = fruit.bits.iter().zip(&defect_mask.bits).map(|(&f, &d)| f && !d).collect();
    let silhouette = Mask { width: w, height: h, bits: sil_bits }.to_gray();
    let mut report = refine_check(&fruit, params);
    report.defect_frac = defects as f64 / area as f64;
    Ok(Extraction { silhouette, fruit_mask: fruit, defect_mask, report })
}
