//! Labeled image datasets: IDX (MNIST-format) files and a built-in synthetic
//! shape generator that keeps the full pipeline runnable without downloads.

use rand::Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    /// Number of classes; every label is strictly below it.
    pub m: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, m: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::InvalidInput(format!("label {bad} >= class count {m}")));
        }
        if let Some(first) = images.first() {
            let shape = first.shape();
            if images.iter().any(|im| im.shape() != shape) {
                return Err(Error::InvalidInput("images differ in shape".into()));
            }
        }
        Ok(Self { images, labels, m })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| im.shape())
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::IdxTruncated {
                path: self.path.to_path_buf(),
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a big-endian IDX image/label pair. Pixel bytes are normalized from
/// `[0,255]` to `[0,1]`; the class count is the largest label plus one.
pub fn load_idx_dataset<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img_bytes = std::fs::read(images_path)?;
    let mut r = IdxReader {
        bytes: &img_bytes,
        pos: 0,
        path: images_path,
    };
    let magic = r.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::IdxMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let payload = r.take(count * rows * cols)?;

    let lbl_bytes = std::fs::read(labels_path)?;
    let mut r = IdxReader {
        bytes: &lbl_bytes,
        pos: 0,
        path: labels_path,
    };
    let magic = r.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::IdxMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let label_count = r.u32_be()? as usize;
    if label_count != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let label_payload = r.take(count)?;

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * rows * cols;
        let data: Vec<f64> = payload[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(Image::new(rows, cols, 1, data)?);
    }
    let labels: Vec<usize> = label_payload.iter().map(|&b| b as usize).collect();
    let m = labels.iter().copied().max().map_or(1, |mx| mx + 1);
    LabeledDataset::new(images, labels, m)
}

/// Writes a grayscale dataset as an IDX image/label pair, quantizing
/// intensities back to bytes with `round(255 v)`.
pub fn write_idx_dataset<P: AsRef<Path>>(
    ds: &LabeledDataset,
    images_path: P,
    labels_path: P,
) -> Result<()> {
    let (h, w, q) = ds
        .shape()
        .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
    if q != 1 {
        return Err(Error::InvalidInput(format!(
            "IDX output supports single-channel images, got q={q}"
        )));
    }
    let mut img_bytes = Vec::with_capacity(16 + ds.len() * h * w);
    img_bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(h as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for im in &ds.images {
        img_bytes.extend(im.data().iter().map(|&v| (255.0 * v).round() as u8));
    }
    std::fs::write(images_path, img_bytes)?;

    let mut lbl_bytes = Vec::with_capacity(8 + ds.len());
    lbl_bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl_bytes.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lbl_bytes.extend(ds.labels.iter().map(|&l| l as u8));
    std::fs::write(labels_path, lbl_bytes)?;
    Ok(())
}

/// Order-preserving slice of a dataset.
pub fn subset(ds: &LabeledDataset, start: usize, count: usize) -> Result<LabeledDataset> {
    if start + count > ds.len() {
        return Err(Error::Bounds(format!(
            "subset {start}..{} of dataset with {} items",
            start + count,
            ds.len()
        )));
    }
    LabeledDataset::new(
        ds.images[start..start + count].to_vec(),
        ds.labels[start..start + count].to_vec(),
        ds.m,
    )
}

const GLYPH_NOISE: f64 = 0.1;

/// Generates class-identified glyphs (horizontal bar, vertical bar, cross,
/// hollow box) with jittered placement, a one-pixel soft rim and per-glyph
/// pixel noise of magnitude at most 0.1. The background stays exactly zero.
/// Deterministic under a fixed seed.
pub fn synthetic_shapes<R: Rng>(
    count: usize,
    h: usize,
    w: usize,
    m: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidConfig(format!(
            "synthetic images need h,w >= 8, got {h}x{w}"
        )));
    }
    if m == 0 || m > 4 {
        return Err(Error::InvalidConfig(format!(
            "synthetic classes must be in 1..=4, got {m}"
        )));
    }
    let jitter = (h.min(w) as i64 / 6).max(1);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % m;
        let mut mask = vec![0.0f64; h * w];
        let jr = rng.gen_range(-jitter..=jitter);
        let jc = rng.gen_range(-jitter..=jitter);
        let cy = (h as i64 / 2 + jr).clamp(0, h as i64 - 1) as usize;
        let cx = (w as i64 / 2 + jc).clamp(0, w as i64 - 1) as usize;
        let half = (h.min(w) as i64 / 5 + rng.gen_range(-1i64..=1)).max(2) as usize;
        let thick = 1usize;
        match label {
            0 => draw_hbar(&mut mask, h, w, cy, cx, half, thick),
            1 => draw_vbar(&mut mask, h, w, cy, cx, half, thick),
            2 => {
                draw_hbar(&mut mask, h, w, cy, cx, half, thick);
                draw_vbar(&mut mask, h, w, cy, cx, half, thick);
            }
            _ => draw_box(&mut mask, h, w, cy, cx, half, thick),
        }
        let soft = soften_rim(&mask, h, w);
        let data: Vec<f64> = soft
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    let u: f64 = rng.gen();
                    v * (1.0 - u * GLYPH_NOISE)
                } else {
                    0.0
                }
            })
            .collect();
        images.push(Image::new(h, w, 1, data)?);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, m)
}

fn draw_hbar(mask: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, half: usize, thick: usize) {
    for r in cy.saturating_sub(thick)..=(cy + thick).min(h - 1) {
        for c in cx.saturating_sub(half)..=(cx + half).min(w - 1) {
            mask[r * w + c] = 1.0;
        }
    }
}

fn draw_vbar(mask: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, half: usize, thick: usize) {
    for r in cy.saturating_sub(half)..=(cy + half).min(h - 1) {
        for c in cx.saturating_sub(thick)..=(cx + thick).min(w - 1) {
            mask[r * w + c] = 1.0;
        }
    }
}

fn draw_box(mask: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, half: usize, thick: usize) {
    let r0 = cy.saturating_sub(half);
    let r1 = (cy + half).min(h - 1);
    let c0 = cx.saturating_sub(half);
    let c1 = (cx + half).min(w - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let on_edge = r < r0 + thick || r + thick > r1 || c < c0 + thick || c + thick > c1;
            if on_edge {
                mask[r * w + c] = 1.0;
            }
        }
    }
}

/// One-pixel antialiasing rim: background pixels 4-adjacent to the glyph get
/// a fractional intensity, everything else keeps its binary value.
fn soften_rim(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = mask.to_vec();
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] > 0.0 {
                continue;
            }
            let mut lit = 0;
            if r > 0 && mask[(r - 1) * w + c] > 0.0 {
                lit += 1;
            }
            if r + 1 < h && mask[(r + 1) * w + c] > 0.0 {
                lit += 1;
            }
            if c > 0 && mask[r * w + c - 1] > 0.0 {
                lit += 1;
            }
            if c + 1 < w && mask[r * w + c + 1] > 0.0 {
                lit += 1;
            }
            if lit > 0 {
                out[r * w + c] = 0.25 + 0.1 * lit as f64;
            }
        }
    }
    out
}
