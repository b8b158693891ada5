//! The three randomized quantization defenses.
//!
//! All of them build a per-input codebook by clustering noisy patches, then
//! snap fresh-noised patches to their nearest centers:
//!
//! * `randdisc` quantizes single pixels (`s = 1`),
//! * `prd` quantizes disjoint `s x s` patches and writes the winning center
//!   back over each patch,
//! * `swrd` quantizes every stride-1 window and rebuilds each pixel as a
//!   softmax-weighted average of the covering quantized windows.

use rand::Rng;
use std::fmt;
use std::str::FromStr;

use crate::clustering::{assign_nearest, kmeans, Codebook, KMEANS_MAX_ITER, KMEANS_TOL};
use crate::error::{Error, Result};
use crate::imaging::{
    add_gaussian_noise, clamp01, coverage_map, extract_disjoint_patches, extract_sliding_patches,
    reassemble_disjoint, Image, PatchSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseMode {
    RandDisc,
    Prd,
    Swrd,
}

impl fmt::Display for DefenseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DefenseMode::RandDisc => "randdisc",
            DefenseMode::Prd => "prd",
            DefenseMode::Swrd => "swrd",
        };
        f.write_str(name)
    }
}

impl FromStr for DefenseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "randdisc" => Ok(DefenseMode::RandDisc),
            "prd" => Ok(DefenseMode::Prd),
            "swrd" => Ok(DefenseMode::Swrd),
            other => Err(Error::InvalidConfig(format!("unknown defense '{other}'"))),
        }
    }
}

/// Everything that determines the quantization channel for one input.
///
/// `sigma` is the noise injected before clustering (codebook phase), `tau`
/// the fresh noise injected before each nearest-center lookup (quantization
/// phase). Both are intensity units on the `[0,1]` scale.
#[derive(Debug, Clone)]
pub struct QuantizerConfig {
    pub mode: DefenseMode,
    pub s: usize,
    pub k: usize,
    pub sigma: f64,
    pub tau: f64,
    pub beta: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl QuantizerConfig {
    pub fn new(
        mode: DefenseMode,
        s: usize,
        k: usize,
        sigma: f64,
        tau: f64,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        // randdisc is the pixel-level special case
        let s = if mode == DefenseMode::RandDisc { 1 } else { s };
        let cfg = Self {
            mode,
            s,
            k,
            sigma,
            tau,
            beta,
            kmeans_max_iter: KMEANS_MAX_ITER,
            kmeans_tol: KMEANS_TOL,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn randdisc(k: usize, sigma: f64, tau: f64, seed: u64) -> Result<Self> {
        Self::new(DefenseMode::RandDisc, 1, k, sigma, tau, 0.0, seed)
    }

    pub fn prd(s: usize, k: usize, sigma: f64, tau: f64, seed: u64) -> Result<Self> {
        Self::new(DefenseMode::Prd, s, k, sigma, tau, 0.0, seed)
    }

    pub fn swrd(s: usize, k: usize, sigma: f64, tau: f64, beta: f64, seed: u64) -> Result<Self> {
        Self::new(DefenseMode::Swrd, s, k, sigma, tau, beta, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::InvalidConfig("patch side must be >= 1".into()));
        }
        if self.mode == DefenseMode::RandDisc && self.s != 1 {
            return Err(Error::InvalidConfig("randdisc requires s = 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("cluster count must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) || !(self.tau >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig(
                "sigma, tau and beta must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Softmax weights per pixel over its covering windows, plus the raw
/// per-window scores. Exposed so tests can check the simplex and convexity
/// properties directly.
#[derive(Debug, Clone)]
pub struct PixelWeights {
    /// Indexed by `r * w + c`; entry order matches `CoverageMap::covering`.
    pub per_pixel: Vec<Vec<f64>>,
    /// One score per sliding window.
    pub patch_scores: Vec<f64>,
}

fn extract_for_mode(img: &Image, cfg: &QuantizerConfig) -> Result<PatchSet> {
    match cfg.mode {
        DefenseMode::Swrd => extract_sliding_patches(img, cfg.s),
        DefenseMode::Prd | DefenseMode::RandDisc => extract_disjoint_patches(img, cfg.s),
    }
}

/// Codebook phase: extract patches, add `N(0, sigma^2)` noise, cluster.
pub fn build_codebook<R: Rng>(img: &Image, cfg: &QuantizerConfig, rng: &mut R) -> Result<Codebook> {
    cfg.validate()?;
    let patches = extract_for_mode(img, cfg)?;
    let noisy = add_gaussian_noise(&patches, cfg.sigma, rng)?;
    let points: Vec<Vec<f64>> = noisy.patches.into_iter().map(|p| p.values).collect();
    kmeans(&points, cfg.k, cfg.kmeans_max_iter, cfg.kmeans_tol, rng)
}

/// Quantization phase for one patch: fresh `N(0, tau^2)` noise, then the
/// nearest-center index. Draws are coordinate-minor within the patch.
pub fn assign_with_noise<R: Rng>(
    values: &[f64],
    cb: &Codebook,
    tau: f64,
    rng: &mut R,
) -> Result<usize> {
    if tau == 0.0 {
        return assign_nearest(values, cb);
    }
    let noisy: Vec<f64> = values
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            v + tau * z
        })
        .collect();
    assign_nearest(&noisy, cb)
}

/// pRD quantization phase under a fixed codebook.
pub fn quantize_prd_with_codebook<R: Rng>(
    img: &Image,
    cb: &Codebook,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<Image> {
    let mut patches = extract_disjoint_patches(img, cfg.s)?;
    for patch in &mut patches.patches {
        let idx = assign_with_noise(&patch.values, cb, cfg.tau, rng)?;
        patch.values.copy_from_slice(&cb.centers[idx]);
    }
    reassemble_disjoint(&patches, img.shape())
}

/// Builds the codebook and quantizes the disjoint patches (Eq.-style
/// nearest-center replacement). `randdisc` is this with `s = 1`.
pub fn quantize_prd<R: Rng>(img: &Image, cfg: &QuantizerConfig, rng: &mut R) -> Result<Image> {
    let cb = build_codebook(img, cfg, rng)?;
    quantize_prd_with_codebook(img, &cb, cfg, rng)
}

/// Numerically stable softmax.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// swRD quantization phase under a fixed codebook: quantize every window,
/// score it by `-beta * ||p - p_hat||^2` against the noiseless window, then
/// rebuild each pixel as the softmax-weighted average over its covers.
pub fn quantize_swrd_with_codebook<R: Rng>(
    img: &Image,
    cb: &Codebook,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<(Image, PixelWeights)> {
    let (h, w, q) = img.shape();
    let windows = extract_sliding_patches(img, cfg.s)?;
    let cover = coverage_map(img.shape(), cfg.s)?;

    let mut quantized: Vec<Vec<f64>> = Vec::with_capacity(windows.len());
    let mut scores = Vec::with_capacity(windows.len());
    for patch in &windows.patches {
        let idx = assign_with_noise(&patch.values, cb, cfg.tau, rng)?;
        let snapped: Vec<f64> = cb.centers[idx].iter().map(|&v| clamp01(v)).collect();
        let dist2: f64 = patch
            .values
            .iter()
            .zip(&snapped)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        scores.push(-cfg.beta * dist2);
        quantized.push(snapped);
    }

    let mut data = vec![0.0; h * w * q];
    let mut per_pixel = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let covers = cover.covering(r, c);
            let local: Vec<f64> = covers.iter().map(|&(pi, _)| scores[pi]).collect();
            let weights = softmax(&local);
            for ch in 0..q {
                let mut acc = 0.0;
                for (&(pi, off), &wgt) in covers.iter().zip(&weights) {
                    acc += wgt * quantized[pi][off * q + ch];
                }
                data[(r * w + c) * q + ch] = clamp01(acc);
            }
            per_pixel.push(weights);
        }
    }
    let out = Image::new(h, w, q, data)?;
    Ok((
        out,
        PixelWeights {
            per_pixel,
            patch_scores: scores,
        },
    ))
}

/// Builds the codebook from sliding windows and runs the swRD phase.
pub fn quantize_swrd<R: Rng>(
    img: &Image,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<(Image, PixelWeights)> {
    let cb = build_codebook(img, cfg, rng)?;
    quantize_swrd_with_codebook(img, &cb, cfg, rng)
}

/// Mode dispatch. `randdisc` routes to the pRD path with `s = 1`.
pub fn quantize<R: Rng>(img: &Image, cfg: &QuantizerConfig, rng: &mut R) -> Result<Image> {
    match cfg.mode {
        DefenseMode::Prd | DefenseMode::RandDisc => quantize_prd(img, cfg, rng),
        DefenseMode::Swrd => quantize_swrd(img, cfg, rng).map(|(img, _)| img),
    }
}
