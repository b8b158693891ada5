//! Image container, patch geometry and portable image output.
//!
//! Images hold intensities in `[0,1]`, row-major with interleaved channels.
//! Patches come in two flavours: disjoint `s x s` tiles over a zero-padded
//! grid, and stride-1 sliding windows. The coverage map records, for every
//! pixel, which sliding patches contain it and at which in-patch offset.

use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// An image with `h * w` pixels and `q` interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    q: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, validating shape and the `[0,1]` intensity range.
    pub fn new(h: usize, w: usize, q: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || q == 0 {
            return Err(Error::Geometry(format!(
                "image dimensions must be positive, got {h}x{w}x{q}"
            )));
        }
        if data.len() != h * w * q {
            return Err(Error::Geometry(format!(
                "data length {} does not match {h}x{w}x{q}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Geometry(
                "intensity outside [0,1] or non-finite".into(),
            ));
        }
        Ok(Self { h, w, q, data })
    }

    /// Builds an image from arbitrary finite values, clamping into `[0,1]`.
    pub fn from_raw_clamped(h: usize, w: usize, q: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(h, w, q, data)
    }

    pub fn zeros(h: usize, w: usize, q: usize) -> Self {
        Self {
            h,
            w,
            q,
            data: vec![0.0; h * w * q],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.q
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.q)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of `(row, col, channel)`.
    pub fn idx(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.w + c) * self.q + ch
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.idx(r, c, ch)]
    }
}

pub fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// One `s x s` patch flattened to `q * s^2` values, laid out like the image:
/// row-major pixels, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Vec<f64>,
    pub side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    Disjoint,
    Sliding,
}

/// Ordered patches with their top-left anchors.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub origins: Vec<(usize, usize)>,
    pub mode: PatchMode,
    /// Shape the patches tile: padded for disjoint mode, original for sliding.
    pub padded_shape: (usize, usize),
    pub channels: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn side(&self) -> usize {
        self.patches.first().map_or(0, |p| p.side)
    }
}

/// Pixel -> covering sliding patches, as `(patch index, in-patch pixel offset)`
/// pairs. The offset addresses an `s^2` pixel slot; channel values of slot `o`
/// live at `o * q + ch` in the patch vector.
#[derive(Debug, Clone)]
pub struct CoverageMap {
    entries: Vec<Vec<(usize, usize)>>,
    h: usize,
    w: usize,
    side: usize,
}

impl CoverageMap {
    pub fn covering(&self, r: usize, c: usize) -> &[(usize, usize)] {
        &self.entries[r * self.w + c]
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

fn round_up(v: usize, s: usize) -> usize {
    v.div_ceil(s) * s
}

/// Tiles the image with disjoint `s x s` patches, zero-padding bottom/right
/// so the grid divides evenly. Patches are in raster order of their anchors.
pub fn extract_disjoint_patches(img: &Image, s: usize) -> Result<PatchSet> {
    let (h, w, q) = img.shape();
    if s == 0 || s > h.max(w) {
        return Err(Error::InvalidConfig(format!(
            "patch side {s} invalid for {h}x{w} image"
        )));
    }
    let hp = round_up(h, s);
    let wp = round_up(w, s);
    let mut patches = Vec::with_capacity((hp / s) * (wp / s));
    let mut origins = Vec::with_capacity(patches.capacity());
    for pr in (0..hp).step_by(s) {
        for pc in (0..wp).step_by(s) {
            let mut values = vec![0.0; q * s * s];
            for dr in 0..s {
                for dc in 0..s {
                    let (r, c) = (pr + dr, pc + dc);
                    if r < h && c < w {
                        for ch in 0..q {
                            values[(dr * s + dc) * q + ch] = img.get(r, c, ch);
                        }
                    }
                }
            }
            patches.push(Patch { values, side: s });
            origins.push((pr, pc));
        }
    }
    Ok(PatchSet {
        patches,
        origins,
        mode: PatchMode::Disjoint,
        padded_shape: (hp, wp),
        channels: q,
    })
}

/// Extracts all stride-1 `s x s` windows, `(h-s+1)(w-s+1)` of them, anchors in
/// raster order. No padding.
pub fn extract_sliding_patches(img: &Image, s: usize) -> Result<PatchSet> {
    let (h, w, q) = img.shape();
    if s == 0 || s > h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "window side {s} invalid for {h}x{w} image"
        )));
    }
    let n = (h - s + 1) * (w - s + 1);
    let mut patches = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for pr in 0..=(h - s) {
        for pc in 0..=(w - s) {
            let mut values = Vec::with_capacity(q * s * s);
            for dr in 0..s {
                for dc in 0..s {
                    for ch in 0..q {
                        values.push(img.get(pr + dr, pc + dc, ch));
                    }
                }
            }
            patches.push(Patch { values, side: s });
            origins.push((pr, pc));
        }
    }
    Ok(PatchSet {
        patches,
        origins,
        mode: PatchMode::Sliding,
        padded_shape: (h, w),
        channels: q,
    })
}

/// Complete pixel -> sliding-patch incidence for an `h x w` image.
pub fn coverage_map(shape: (usize, usize, usize), s: usize) -> Result<CoverageMap> {
    let (h, w, _q) = shape;
    if s == 0 || s > h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "window side {s} invalid for {h}x{w} image"
        )));
    }
    let cols = w - s + 1;
    let mut entries = vec![Vec::new(); h * w];
    for r in 0..h {
        let pr_lo = r.saturating_sub(s - 1);
        let pr_hi = r.min(h - s);
        for c in 0..w {
            let pc_lo = c.saturating_sub(s - 1);
            let pc_hi = c.min(w - s);
            let list = &mut entries[r * w + c];
            for pr in pr_lo..=pr_hi {
                for pc in pc_lo..=pc_hi {
                    let patch_idx = pr * cols + pc;
                    let offset = (r - pr) * s + (c - pc);
                    list.push((patch_idx, offset));
                }
            }
        }
    }
    Ok(CoverageMap {
        entries,
        h,
        w,
        side: s,
    })
}

/// Writes each disjoint patch back at its anchor, crops the padding and clamps
/// intensities into `[0,1]`.
pub fn reassemble_disjoint(set: &PatchSet, shape: (usize, usize, usize)) -> Result<Image> {
    let (h, w, q) = shape;
    if set.mode != PatchMode::Disjoint {
        return Err(Error::Geometry("patch set is not in disjoint mode".into()));
    }
    let s = set.side();
    let (hp, wp) = set.padded_shape;
    if q != set.channels || hp != round_up(h, s) || wp != round_up(w, s) {
        return Err(Error::Geometry(format!(
            "patch set (padded {hp}x{wp}, q={}) does not match target {h}x{w}x{q}",
            set.channels
        )));
    }
    let mut data = vec![0.0; h * w * q];
    for (patch, &(pr, pc)) in set.patches.iter().zip(&set.origins) {
        for dr in 0..s {
            for dc in 0..s {
                let (r, c) = (pr + dr, pc + dc);
                if r < h && c < w {
                    for ch in 0..q {
                        data[(r * w + c) * q + ch] = clamp01(patch.values[(dr * s + dc) * q + ch]);
                    }
                }
            }
        }
    }
    Image::new(h, w, q, data)
}

/// Adds independent `N(0, std^2)` noise to every coordinate. Draws are
/// consumed patch-major then coordinate-minor, so two quantizers seeing the
/// same patch sequence consume identical streams. `std = 0` is an exact copy.
pub fn add_gaussian_noise<R: Rng>(set: &PatchSet, std: f64, rng: &mut R) -> Result<PatchSet> {
    if !(std >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise std {std} is negative")));
    }
    let mut out = set.clone();
    if std == 0.0 {
        return Ok(out);
    }
    for patch in &mut out.patches {
        for v in &mut patch.values {
            let z: f64 = rng.sample(StandardNormal);
            *v += std * z;
        }
    }
    Ok(out)
}

/// Writes binary PGM (q=1) or PPM (q=3), maxval 255, intensity `round(255 v)`.
pub fn write_ppm<P: AsRef<Path>>(img: &Image, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    encode_ppm(img, &mut writer)
}

pub fn encode_ppm<W: Write>(img: &Image, out: &mut W) -> Result<()> {
    let (h, w, q) = img.shape();
    let tag = match q {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::InvalidConfig(format!(
                "PGM/PPM output supports 1 or 3 channels, got {q}"
            )))
        }
    };
    write!(out, "{tag}\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| (255.0 * v).round() as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn image_from(h: usize, w: usize, vals: &[f64]) -> Image {
        Image::new(h, w, 1, vals.to_vec()).unwrap()
    }

    fn ramp_image(h: usize, w: usize, q: usize) -> Image {
        let n = h * w * q;
        let data: Vec<f64> = (0..n).map(|i| (i % 97) as f64 / 96.0).collect();
        Image::new(h, w, q, data).unwrap()
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![-0.1]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn disjoint_4x4_s2_tiles() {
        let img = ramp_image(4, 4, 1);
        let set = extract_disjoint_patches(&img, 2).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.origins, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert!(set.patches.iter().all(|p| p.values.len() == 4));
        assert_eq!(set.padded_shape, (4, 4));
    }

    #[test]
    fn disjoint_5x5_s2_pads_with_zeros() {
        let img = Image::new(5, 5, 1, vec![1.0; 25]).unwrap();
        let set = extract_disjoint_patches(&img, 2).unwrap();
        assert_eq!(set.padded_shape, (6, 6));
        assert_eq!(set.len(), 9);
        // bottom-right patch covers one real pixel and three padded zeros
        let last = set.patches.last().unwrap();
        assert_eq!(last.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn disjoint_28x28_s2_count() {
        let img = ramp_image(28, 28, 1);
        let set = extract_disjoint_patches(&img, 2).unwrap();
        assert_eq!(set.len(), 196);
        assert!(set.patches.iter().all(|p| p.values.len() == 4));
    }

    #[test]
    fn disjoint_rejects_oversized_side() {
        let img = ramp_image(4, 6, 1);
        assert!(extract_disjoint_patches(&img, 7).is_err());
        assert!(extract_disjoint_patches(&img, 0).is_err());
        assert!(extract_disjoint_patches(&img, 6).is_ok());
    }

    #[test]
    fn sliding_28x28_s2_count() {
        let img = ramp_image(28, 28, 1);
        let set = extract_sliding_patches(&img, 2).unwrap();
        assert_eq!(set.len(), 729);
    }

    #[test]
    fn sliding_s1_is_pixels() {
        let img = ramp_image(5, 7, 2);
        let set = extract_sliding_patches(&img, 1).unwrap();
        assert_eq!(set.len(), 35);
        assert!(set.patches.iter().all(|p| p.values.len() == 2));
    }

    #[test]
    fn sliding_full_window_is_whole_image() {
        let img = ramp_image(3, 3, 1);
        let set = extract_sliding_patches(&img, 3).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.patches[0].values, img.data());
        assert!(extract_sliding_patches(&img, 4).is_err());
    }

    #[test]
    fn coverage_counts() {
        let cm = coverage_map((8, 8, 1), 2).unwrap();
        assert_eq!(cm.covering(3, 3).len(), 4);
        assert_eq!(cm.covering(0, 0).len(), 1);
        assert_eq!(cm.covering(0, 1).len(), 2);
        assert_eq!(cm.covering(7, 7).len(), 1);
    }

    #[test]
    fn coverage_offsets_address_the_right_pixel() {
        let img = ramp_image(6, 5, 1);
        let set = extract_sliding_patches(&img, 3).unwrap();
        let cm = coverage_map(img.shape(), 3).unwrap();
        for r in 0..6 {
            for c in 0..5 {
                for &(pi, off) in cm.covering(r, c) {
                    let patch = &set.patches[pi];
                    assert_eq!(patch.values[off], img.get(r, c, 0), "pixel ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn reassemble_crops_and_clamps() {
        let img = Image::new(5, 5, 1, vec![0.5; 25]).unwrap();
        let mut set = extract_disjoint_patches(&img, 2).unwrap();
        let out = reassemble_disjoint(&set, img.shape()).unwrap();
        assert_eq!(out.shape(), (5, 5, 1));
        assert_eq!(out, img);
        // out-of-range values clamp on write
        set.patches[0].values[0] = 1.2;
        set.patches[0].values[1] = -0.4;
        let out = reassemble_disjoint(&set, img.shape()).unwrap();
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(0, 1, 0), 0.0);
    }

    #[test]
    fn reassemble_rejects_mismatched_shape() {
        let img = ramp_image(4, 4, 1);
        let set = extract_disjoint_patches(&img, 2).unwrap();
        assert!(reassemble_disjoint(&set, (6, 6, 1)).is_err());
        let sliding = extract_sliding_patches(&img, 2).unwrap();
        assert!(reassemble_disjoint(&sliding, img.shape()).is_err());
    }

    #[test]
    fn noise_zero_std_is_identity() {
        let img = ramp_image(6, 6, 1);
        let set = extract_sliding_patches(&img, 2).unwrap();
        let mut rng = rng_from_seed(1);
        let noisy = add_gaussian_noise(&set, 0.0, &mut rng).unwrap();
        for (a, b) in noisy.patches.iter().zip(&set.patches) {
            assert_eq!(a.values, b.values);
        }
        assert!(add_gaussian_noise(&set, -0.1, &mut rng).is_err());
    }

    #[test]
    fn noise_is_deterministic_under_seed() {
        let img = ramp_image(6, 6, 1);
        let set = extract_sliding_patches(&img, 2).unwrap();
        let a = add_gaussian_noise(&set, 0.3, &mut rng_from_seed(9)).unwrap();
        let b = add_gaussian_noise(&set, 0.3, &mut rng_from_seed(9)).unwrap();
        for (x, y) in a.patches.iter().zip(&b.patches) {
            assert_eq!(x.values, y.values);
        }
    }

    // Law-of-large-numbers oracle: over 1e5 draws the sample mean of the
    // injected noise stays within 3 sigma/sqrt(n) of zero and the sample std
    // within 2% of the requested value.
    #[test]
    fn noise_moments_match_request() {
        let n_px = 100_000usize;
        let img = Image::zeros(250, 400, 1);
        let set = extract_sliding_patches(&img, 1).unwrap();
        assert_eq!(set.len(), n_px);
        let std = 0.1;
        let noisy = add_gaussian_noise(&set, std, &mut rng_from_seed(2024)).unwrap();
        let deltas: Vec<f64> = noisy.patches.iter().map(|p| p.values[0]).collect();
        let mean = deltas.iter().sum::<f64>() / n_px as f64;
        let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n_px as f64;
        assert!(mean.abs() <= 3.0 * std / (n_px as f64).sqrt(), "mean {mean}");
        assert!((var.sqrt() - std).abs() <= 0.02 * std, "std {}", var.sqrt());
    }

    #[test]
    fn ppm_encoding_rules() {
        let mut buf = Vec::new();
        encode_ppm(&Image::new(1, 1, 1, vec![1.0]).unwrap(), &mut buf).unwrap();
        assert_eq!(buf, b"P5\n1 1\n255\n\xff");
        buf.clear();
        encode_ppm(&Image::new(1, 1, 1, vec![0.0]).unwrap(), &mut buf).unwrap();
        assert_eq!(buf, b"P5\n1 1\n255\n\x00");
        buf.clear();
        encode_ppm(&Image::zeros(2, 2, 1), &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n2 2\n255\n"));
        buf.clear();
        encode_ppm(&Image::zeros(2, 2, 3), &mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n2 2\n255\n"));
        assert!(encode_ppm(&Image::zeros(2, 2, 2), &mut Vec::new()).is_err());
    }

    proptest! {
        // Disjoint extraction followed by reassembly is the identity.
        #[test]
        fn disjoint_round_trip(h in 1usize..12, w in 1usize..12, q in 1usize..3, s in 1usize..5, seed in 0u64..1000) {
            prop_assume!(s <= h.max(w));
            let mut rng = rng_from_seed(seed);
            let data: Vec<f64> = (0..h * w * q).map(|_| rng.gen::<f64>()).collect();
            let img = Image::new(h, w, q, data).unwrap();
            let set = extract_disjoint_patches(&img, s).unwrap();
            let back = reassemble_disjoint(&set, img.shape()).unwrap();
            prop_assert_eq!(back, img);
        }

        // Sliding patch count is (h-s+1)(w-s+1).
        #[test]
        fn sliding_count_formula(h in 1usize..16, w in 1usize..16, s in 1usize..6) {
            prop_assume!(s <= h.min(w));
            let img = Image::zeros(h, w, 1);
            let set = extract_sliding_patches(&img, s).unwrap();
            prop_assert_eq!(set.len(), (h - s + 1) * (w - s + 1));
        }

        // Summing an indicator over every patch footprint reproduces the
        // coverage-map cardinality at every pixel.
        #[test]
        fn coverage_consistency(h in 2usize..10, w in 2usize..10, s in 1usize..4) {
            prop_assume!(s <= h.min(w));
            let img = Image::zeros(h, w, 1);
            let set = extract_sliding_patches(&img, s).unwrap();
            let cm = coverage_map(img.shape(), s).unwrap();
            let mut counts = vec![0usize; h * w];
            for &(pr, pc) in &set.origins {
                for dr in 0..s {
                    for dc in 0..s {
                        counts[(pr + dr) * w + (pc + dc)] += 1;
                    }
                }
            }
            for r in 0..h {
                for c in 0..w {
                    prop_assert_eq!(counts[r * w + c], cm.covering(r, c).len());
                }
            }
        }
    }

    #[test]
    fn image_from_helper_used() {
        let img = image_from(1, 2, &[0.25, 0.75]);
        assert_eq!(img.get(0, 1, 0), 0.75);
    }
}
