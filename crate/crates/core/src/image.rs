//! 8-bit raster images and the binary PNM codec (P5 gray, P6 RGB).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// 8-bit single channel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn check_dims(width: usize, height: usize, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
    }
    let want = width.checked_mul(height).and_then(|n| n.checked_mul(channels));
    if want != Some(len) {
        return Err(Error::invalid(format!("{width}x{height}x{channels} image needs {want:?} bytes, got {len}")));
    }
    Ok(())
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, pixels.len(), 3)?;
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbImage::new(width, height, pixels).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Gray replicated into all three channels.
    pub fn from_gray(g: &GrayImage) -> Self {
        let pixels = g.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        RgbImage { width: g.width, height: g.height, pixels }
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let pixels = resize_bilinear(&self.pixels, self.width, self.height, 3, out_h, out_w)?;
        Ok(RgbImage { width: out_w, height: out_h, pixels })
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, pixels.len(), 1)?;
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, v: u8) -> Self {
        GrayImage::new(width, height, vec![v; width * height]).expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let pixels = resize_bilinear(&self.pixels, self.width, self.height, 1, out_h, out_w)?;
        Ok(GrayImage { width: out_w, height: out_h, pixels })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Image {
    Rgb(RgbImage),
    Gray(GrayImage),
}

impl Image {
    pub fn width(&self) -> usize {
        match self {
            Image::Rgb(i) => i.width,
            Image::Gray(i) => i.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Image::Rgb(i) => i.height,
            Image::Gray(i) => i.height,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Image::Rgb(_) => 3,
            Image::Gray(_) => 1,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        match self {
            Image::Rgb(i) => &i.pixels,
            Image::Gray(i) => &i.pixels,
        }
    }

    /// Gray images are promoted by channel replication.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            Image::Rgb(i) => i,
            Image::Gray(g) => RgbImage::from_gray(&g),
        }
    }

    pub fn into_gray(self) -> Result<GrayImage> {
        match self {
            Image::Gray(g) => Ok(g),
            Image::Rgb(_) => Err(Error::data("expected a single-channel (P5) image, found RGB")),
        }
    }

    /// Canonical binary PNM encoding.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels() == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend_from_slice(self.bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut p = HeaderParser { bytes, pos: 0 };
        let channels = match p.bytes.get(..2) {
            Some(b"P6") => 3,
            Some(b"P5") => 1,
            _ => return Err(Error::format("unknown image magic (expected binary P5 or P6)")),
        };
        p.pos = 2;
        let width = p.number("width")?;
        let height = p.number("height")?;
        let maxval = p.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::format(format!("invalid image dimensions {width}x{height}")));
        }
        if maxval != 255 {
            return Err(Error::format(format!("unsupported maxval {maxval} (only 255 is accepted)")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match p.bytes.get(p.pos) {
            Some(c) if c.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(Error::format("missing whitespace after maxval")),
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::format("image dimensions overflow"))?;
        let raster = bytes
            .get(p.pos..p.pos + need)
            .ok_or_else(|| Error::format(format!("short image data: need {need} bytes, have {}", bytes.len() - p.pos)))?
            .to_vec();
        Ok(if channels == 3 {
            Image::Rgb(RgbImage { width, height, pixels: raster })
        } else {
            Image::Gray(GrayImage { width, height, pixels: raster })
        })
    }
}

impl From<RgbImage> for Image {
    fn from(i: RgbImage) -> Self {
        Image::Rgb(i)
    }
}

impl From<GrayImage> for Image {
    fn from(i: GrayImage) -> Self {
        Image::Gray(i)
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        self.skip_space_and_comments();
        if self.pos == start {
            return Err(Error::format(format!("expected whitespace before {what}")));
        }
        let digits_start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[digits_start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("invalid {what} in image header")))
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    Image::decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, image.encode())?;
    Ok(())
}

/// Bilinear resampling with half-pixel centres: source coordinate
/// `(i + 0.5) * in/out - 0.5`, clamped to the image, rounded to nearest.
pub fn resize_bilinear(
    src: &[u8],
    in_w: usize,
    in_h: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<u8>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target must be positive, got {out_w}x{out_h}")));
    }
    check_dims(in_w, in_h, src.len(), channels)?;
    if (in_w, in_h) == (out_w, out_h) {
        return Ok(src.to_vec());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let xs = taps(in_w, out_w);
    let ys = taps(in_h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let px = |x: usize, y: usize| src[(y * in_w + x) * channels + c] as f64;
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}
