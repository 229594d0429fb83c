use super::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::image::{read_image, Image};
use crate::tensor::{Scalar, Tensor};

/// Channel-first `C x H x W` tensor with values `pixel / 255`.
pub fn normalize_to_tensor<T: Scalar>(image: &Image) -> Tensor<T> {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut out = vec![T::zero(); c * h * w];
    write_chw(image.bytes(), c, &mut out);
    Tensor::new(&[c, h, w], out).expect("buffer sized from the image")
}

fn write_chw<T: Scalar>(interleaved: &[u8], channels: usize, out: &mut [T]) {
    let plane = interleaved.len() / channels;
    let scale = T::one() / T::lit(255.0);
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * plane + i] = T::from_u8(v).unwrap() * scale;
        }
    }
}

/// A batch of paired inputs in NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub rgb: Tensor<T>,
    pub sil: Option<Tensor<T>>,
    pub labels: Vec<usize>,
}

fn load_rgb<T: Scalar>(r: &SampleRecord, size: usize, out: &mut [T]) -> Result<()> {
    let img = read_image(&r.rgb)?.into_rgb();
    let img = if (img.width(), img.height()) == (size, size) { img } else { img.resize(size, size)? };
    write_chw(img.pixels(), 3, out);
    Ok(())
}

fn load_sil<T: Scalar>(r: &SampleRecord, size: usize, out: &mut [T]) -> Result<()> {
    let path = r
        .sil
        .as_ref()
        .ok_or_else(|| Error::data(format!("record {} has no silhouette", r.rgb.display())))?;
    let img = match read_image(path) {
        Ok(i) => i,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::data(format!(
                "silhouette {} of record {} does not exist",
                path.display(),
                r.rgb.display()
            )))
        }
        Err(e) => return Err(e),
    };
    let g = img.into_gray().map_err(|_| Error::data(format!("silhouette of record {} is not P5", r.rgb.display())))?;
    let g = if (g.width(), g.height()) == (size, size) { g } else { g.resize(size, size)? };
    write_chw(g.pixels(), 1, out);
    Ok(())
}

/// Every record of one split decoded, resized and normalised up front.
#[derive(Clone, Debug)]
pub struct SplitData<T> {
    size: usize,
    rgb: Vec<T>,
    sil: Option<Vec<T>>,
    labels: Vec<usize>,
}

impl<T: Scalar> SplitData<T> {
    pub fn load(manifest: &DatasetManifest, split: Split, size: usize, with_sil: bool) -> Result<Self> {
        let records = manifest.split_records(split);
        Self::from_records(&records, size, with_sil)
    }

    fn from_records(records: &[&SampleRecord], size: usize, with_sil: bool) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let plane = size * size;
        let mut rgb = vec![T::zero(); records.len() * 3 * plane];
        let mut sil = with_sil.then(|| vec![T::zero(); records.len() * plane]);
        for (i, r) in records.iter().enumerate() {
            load_rgb(r, size, &mut rgb[i * 3 * plane..(i + 1) * 3 * plane])?;
            if let Some(s) = sil.as_mut() {
                load_sil(r, size, &mut s[i * plane..(i + 1) * plane])?;
            }
        }
        Ok(SplitData { size, rgb, sil, labels: records.iter().map(|r| r.label.index()).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn has_sil(&self) -> bool {
        self.sil.is_some()
    }

    /// Gathers `indices` (positions within this split) into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        let plane = self.size * self.size;
        let n = indices.len();
        let mut rgb = Vec::with_capacity(n * 3 * plane);
        let mut sil = self.sil.as_ref().map(|_| Vec::with_capacity(n * plane));
        let mut labels = Vec::with_capacity(n);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("batch index {i} out of range for a split of {}", self.len())));
            }
            rgb.extend_from_slice(&self.rgb[i * 3 * plane..(i + 1) * 3 * plane]);
            if let (Some(dst), Some(src)) = (sil.as_mut(), self.sil.as_ref()) {
                dst.extend_from_slice(&src[i * plane..(i + 1) * plane]);
            }
            labels.push(self.labels[i]);
        }
        let s = self.size;
        Ok(Batch {
            rgb: Tensor::new(&[n, 3, s, s], rgb)?,
            sil: sil.map(|v| Tensor::new(&[n, 1, s, s], v)).transpose()?,
            labels,
        })
    }
}

/// Loads the given positions of `split`, with silhouettes, at `size x size`.
pub fn load_batch<T: Scalar>(
    manifest: &DatasetManifest,
    split: Split,
    indices: &[usize],
    image_size: usize,
) -> Result<Batch<T>> {
    let records = manifest.split_records(split);
    let chosen = indices
        .iter()
        .map(|&i| {
            records.get(i).copied().ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for {} split of {}", split.name(), records.len()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = SplitData::from_records(&chosen, image_size, true)?;
    data.batch(&(0..chosen.len()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{GrayImage, RgbImage};

    #[test]
    fn normalisation_is_channel_first() {
        let img = Image::from(RgbImage::new(2, 1, vec![255, 0, 51, 0, 255, 102]).unwrap());
        let t: Tensor<f64> = normalize_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
        let g: Tensor<f32> = normalize_to_tensor(&Image::from(GrayImage::filled(3, 2, 0)));
        assert_eq!(g.shape(), &[1, 2, 3]);
    }
}
