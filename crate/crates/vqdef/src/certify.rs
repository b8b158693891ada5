//! Certified prediction machinery.
//!
//! Majority voting over repeated quantize-then-classify runs gives a
//! probabilistic correctness guarantee once
//! `delta = margin^2 / 2 - KL(Q_out(x) || Q_out(x_adv))` is non-negative; the
//! wrong-majority probability is then at most `m * exp(-2 t delta^2)`.
//!
//! The KL term is bounded by a codebook-distribution term plus a conditional
//! output term. The first is estimated by sampling center sets, mapping each
//! to a sorted center vector, fitting diagonal GMMs to both inputs' vectors
//! and running a Monte-Carlo divergence estimate between the fits. The
//! second, empirically negligible, is estimated per patch (categorical over
//! centers) or per pixel (histogram) under fixed sampled codebooks.

use rand::Rng;
use rayon::prelude::*;

use crate::classifier::{margin_of_probs, Model};
use crate::clustering::{gmm_fit, mc_kl, Codebook, KMEANS_MAX_ITER, KMEANS_TOL};
use crate::error::{Error, Result};
use crate::imaging::{extract_disjoint_patches, Image};
use crate::quantize::{
    build_codebook, quantize, quantize_swrd_with_codebook, DefenseMode, QuantizerConfig,
};
use crate::seeding::{derive_seed, rng_from_seed};

/// Flattened codebook with centers in ascending l2-norm order (ties broken
/// lexicographically), which makes the set-valued codebook distribution
/// comparable as a vector distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterVector {
    pub values: Vec<f64>,
}

pub fn center_vector(cb: &Codebook) -> CenterVector {
    let mut order: Vec<&Vec<f64>> = cb.centers.iter().collect();
    order.sort_by(|a, b| {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        na.partial_cmp(&nb)
            .unwrap()
            .then_with(|| a.partial_cmp(b).unwrap())
    });
    let mut values = Vec::with_capacity(cb.k() * cb.dim());
    for c in order {
        values.extend_from_slice(c);
    }
    CenterVector { values }
}

/// Sampling budgets for the KL bound estimator. Defaults are desk scale;
/// `full_scale` switches to the large budgets.
#[derive(Debug, Clone)]
pub struct KlEstimatorConfig {
    /// Codebook draws per input for the GMM fit of the first term.
    pub n_center_samples: usize,
    /// Monte-Carlo draws for the divergence between the fitted mixtures.
    pub n_mc: usize,
    pub k_gmm: usize,
    pub include_second_term: bool,
    /// Fresh-noise draws per patch/pixel in the second term.
    pub n_noise_samples: usize,
    /// Codebook draws `u` the second term averages over.
    pub n_second_term_sets: usize,
    pub seed: u64,
}

impl Default for KlEstimatorConfig {
    fn default() -> Self {
        Self {
            n_center_samples: 1_000,
            n_mc: 10_000,
            k_gmm: 2,
            include_second_term: false,
            n_noise_samples: 1_000,
            n_second_term_sets: 10,
            seed: 0,
        }
    }
}

impl KlEstimatorConfig {
    pub fn full_scale() -> Self {
        Self {
            n_center_samples: 10_000,
            n_mc: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_center_samples == 0
            || self.n_mc == 0
            || self.k_gmm == 0
            || self.n_noise_samples == 0
            || self.n_second_term_sets == 0
        {
            return Err(Error::InvalidConfig(
                "estimator sample counts must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn sample_center_vectors_with_base(
    img: &Image,
    qcfg: &QuantizerConfig,
    count: usize,
    base: u64,
) -> Result<Vec<CenterVector>> {
    if count == 0 {
        return Err(Error::InvalidConfig("need at least one center sample".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|j| {
            let mut r = rng_from_seed(derive_seed(base, j as u64));
            build_codebook(img, qcfg, &mut r).map(|cb| center_vector(&cb))
        })
        .collect()
}

/// `count` independent codebook builds (fresh codebook-phase noise each),
/// mapped through `center_vector`. Parallel over derived seeds.
pub fn sample_center_vectors<R: Rng>(
    img: &Image,
    qcfg: &QuantizerConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<CenterVector>> {
    sample_center_vectors_with_base(img, qcfg, count, rng.next_u64())
}

fn first_term_from_vectors_with_base(
    clean: &[CenterVector],
    adv: &[CenterVector],
    ecfg: &KlEstimatorConfig,
    base: u64,
) -> Result<f64> {
    ecfg.validate()?;
    let to_points = |vs: &[CenterVector]| -> Vec<Vec<f64>> {
        vs.iter().map(|v| v.values.clone()).collect()
    };
    // the two fits share one init stream: identical samples then give
    // identical mixtures and an exactly zero divergence estimate
    let fit_seed = derive_seed(base, 1);
    let p = gmm_fit(
        &to_points(clean),
        ecfg.k_gmm,
        KMEANS_MAX_ITER,
        KMEANS_TOL,
        &mut rng_from_seed(fit_seed),
    )?;
    let q = gmm_fit(
        &to_points(adv),
        ecfg.k_gmm,
        KMEANS_MAX_ITER,
        KMEANS_TOL,
        &mut rng_from_seed(fit_seed),
    )?;
    Ok(mc_kl(&p, &q, ecfg.n_mc, &mut rng_from_seed(derive_seed(base, 2))))
}

/// GMM-fit-plus-Monte-Carlo divergence between two center-vector samples.
/// Split out from `kl_bound_first_term` so planted distributions can stand in
/// for the sampling stage.
pub fn first_term_from_vectors<R: Rng>(
    clean: &[CenterVector],
    adv: &[CenterVector],
    ecfg: &KlEstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    first_term_from_vectors_with_base(clean, adv, ecfg, rng.next_u64())
}

/// Estimate of the codebook-distribution divergence between the quantizer's
/// behavior on `x` and on `x_adv`. The two inputs' sampling stages share one
/// noise stream (common random numbers): identical inputs produce identical
/// center-vector samples and an exactly zero estimate.
pub fn kl_bound_first_term<R: Rng>(
    x: &Image,
    x_adv: &Image,
    qcfg: &QuantizerConfig,
    ecfg: &KlEstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    if x.shape() != x_adv.shape() {
        return Err(Error::Geometry("image shapes differ".into()));
    }
    ecfg.validate()?;
    let base = rng.next_u64();
    let sample_seed = derive_seed(base, 1);
    let clean = sample_center_vectors_with_base(x, qcfg, ecfg.n_center_samples, sample_seed)?;
    let adv = sample_center_vectors_with_base(x_adv, qcfg, ecfg.n_center_samples, sample_seed)?;
    first_term_from_vectors_with_base(&clean, &adv, ecfg, derive_seed(base, 2))
}

const KL_SMOOTHING: f64 = 1e-9;
const PIXEL_HIST_BINS: usize = 32;

fn smoothed_kl(counts_p: &[f64], counts_q: &[f64]) -> f64 {
    let np: f64 = counts_p.iter().sum();
    let nq: f64 = counts_q.iter().sum();
    let bins = counts_p.len() as f64;
    let mut kl = 0.0;
    for (&cp, &cq) in counts_p.iter().zip(counts_q) {
        let p = (cp + KL_SMOOTHING) / (np + bins * KL_SMOOTHING);
        let q = (cq + KL_SMOOTHING) / (nq + bins * KL_SMOOTHING);
        kl += p * (p / q).ln();
    }
    kl.max(0.0)
}

/// Per-patch categorical distributions over codebook indices, estimated by
/// fresh quantization-phase noise on each of `n_samples` repetitions.
fn prd_patch_counts(
    img: &Image,
    cb: &Codebook,
    qcfg: &QuantizerConfig,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let patches = extract_disjoint_patches(img, qcfg.s)?;
    let k = cb.k();
    patches
        .patches
        .par_iter()
        .enumerate()
        .map(|(i, patch)| {
            let mut rng = rng_from_seed(derive_seed(base_seed, i as u64));
            let mut counts = vec![0.0; k];
            for _ in 0..n_samples {
                let idx =
                    crate::quantize::assign_with_noise(&patch.values, cb, qcfg.tau, &mut rng)?;
                counts[idx] += 1.0;
            }
            Ok(counts)
        })
        .collect()
}

/// Per-pixel 32-bin histograms of swRD outputs under a fixed codebook.
fn swrd_pixel_counts(
    img: &Image,
    cb: &Codebook,
    qcfg: &QuantizerConfig,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (h, w, q) = img.shape();
    let n_px = h * w * q;
    let chunk = (n_samples / 16).max(16);
    let reps: Vec<usize> = (0..n_samples).collect();
    let partial: Vec<Vec<Vec<f64>>> = reps
        .par_chunks(chunk)
        .map(|chunk_reps| {
            let mut counts = vec![vec![0.0; PIXEL_HIST_BINS]; n_px];
            for &rep in chunk_reps {
                let mut rng = rng_from_seed(derive_seed(base_seed, rep as u64));
                let (out, _) = quantize_swrd_with_codebook(img, cb, qcfg, &mut rng)?;
                for (px, &v) in out.data().iter().enumerate() {
                    let bin = ((v * PIXEL_HIST_BINS as f64) as usize).min(PIXEL_HIST_BINS - 1);
                    counts[px][bin] += 1.0;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![vec![0.0; PIXEL_HIST_BINS]; n_px];
    for chunk in partial {
        for (t, c) in total.iter_mut().zip(chunk) {
            for (a, b) in t.iter_mut().zip(c) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// Conditional output divergence under one fixed codebook: summed categorical
/// KL over disjoint patches for pRD, summed histogram KL over pixels for
/// swRD. Both use additive smoothing 1e-9. The clean and adversarial sides
/// share one noise stream (common random numbers), so identical inputs give
/// identical counts and exactly zero divergence.
pub fn second_term_with_codebook(
    x: &Image,
    x_adv: &Image,
    cb: &Codebook,
    qcfg: &QuantizerConfig,
    n_noise_samples: usize,
    base_seed: u64,
) -> Result<f64> {
    let noise_seed = derive_seed(base_seed, 1);
    match qcfg.mode {
        DefenseMode::Prd | DefenseMode::RandDisc => {
            let p = prd_patch_counts(x, cb, qcfg, n_noise_samples, noise_seed)?;
            let q = prd_patch_counts(x_adv, cb, qcfg, n_noise_samples, noise_seed)?;
            Ok(p.iter().zip(&q).map(|(a, b)| smoothed_kl(a, b)).sum())
        }
        DefenseMode::Swrd => {
            let p = swrd_pixel_counts(x, cb, qcfg, n_noise_samples, noise_seed)?;
            let q = swrd_pixel_counts(x_adv, cb, qcfg, n_noise_samples, noise_seed)?;
            Ok(p.iter().zip(&q).map(|(a, b)| smoothed_kl(a, b)).sum())
        }
    }
}

/// Second summand of the KL chain bound: the conditional output divergence
/// averaged over codebooks drawn from the clean input's codebook phase.
pub fn kl_bound_second_term<R: Rng>(
    x: &Image,
    x_adv: &Image,
    qcfg: &QuantizerConfig,
    ecfg: &KlEstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    if x.shape() != x_adv.shape() {
        return Err(Error::Geometry("image shapes differ".into()));
    }
    ecfg.validate()?;
    let base = rng.next_u64();
    let terms: Vec<f64> = (0..ecfg.n_second_term_sets)
        .map(|j| {
            let set_seed = derive_seed(base, j as u64);
            let mut r = rng_from_seed(set_seed);
            let cb = build_codebook(x, qcfg, &mut r)?;
            second_term_with_codebook(x, x_adv, &cb, qcfg, ecfg.n_noise_samples, set_seed)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `t` independent quantize-then-classify runs; modal label, ties to the
/// lowest index.
pub fn majority_vote_predict<R: Rng>(
    model: &Model,
    qcfg: &QuantizerConfig,
    img: &Image,
    t: usize,
    rng: &mut R,
) -> Result<(usize, Vec<usize>)> {
    if t == 0 {
        return Err(Error::InvalidConfig("majority vote needs t >= 1".into()));
    }
    let base = rng.next_u64();
    let preds: Vec<usize> = (0..t)
        .into_par_iter()
        .map(|j| {
            let mut r = rng_from_seed(derive_seed(base, j as u64));
            let quantized = quantize(img, qcfg, &mut r)?;
            model.predict(&quantized)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; model.classes()];
    for p in preds {
        counts[p] += 1;
    }
    Ok((modal_label(&counts), counts))
}

fn modal_label(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginAggregate {
    Mean,
    /// Strictly safer: certify against the worst quantized copy.
    Min,
}

#[derive(Debug, Clone)]
pub struct CertificationResult {
    pub margin: f64,
    pub kl_estimate: f64,
    pub delta: f64,
    pub t: usize,
    pub m: usize,
    pub certified: bool,
    pub probability_bound: f64,
    pub majority_label: usize,
    pub vote_counts: Vec<usize>,
}

/// The certification formula alone: `delta = margin^2 / 2 - kl`; certified
/// when `delta >= 0` and the margin is positive; the correct-majority
/// probability is then at least `1 - m exp(-2 t delta^2)`.
pub fn certification_outcome(margin: f64, kl: f64, t: usize, m: usize) -> (f64, bool, f64) {
    let delta = 0.5 * margin * margin - kl;
    let certified = delta >= 0.0 && margin > 0.0;
    let bound = if certified {
        (1.0 - m as f64 * (-2.0 * t as f64 * delta * delta).exp()).max(0.0)
    } else {
        0.0
    };
    (delta, certified, bound)
}

/// Full certification run. Margins come from `t` quantized copies of the
/// clean input (the certificate's premise is that quantized clean copies are
/// classified with a gap); the majority vote, whose error probability the
/// certificate bounds, runs on `t` quantized copies of the adversarial input.
#[allow(clippy::too_many_arguments)]
pub fn certify<R: Rng>(
    model: &Model,
    x: &Image,
    x_adv: &Image,
    label: usize,
    qcfg: &QuantizerConfig,
    t: usize,
    ecfg: &KlEstimatorConfig,
    aggregate: MarginAggregate,
    rng: &mut R,
) -> Result<CertificationResult> {
    if t == 0 {
        return Err(Error::InvalidConfig("certification needs t >= 1".into()));
    }
    let base = rng.next_u64();
    let margins: Vec<f64> = (0..t)
        .into_par_iter()
        .map(|j| {
            let mut r = rng_from_seed(derive_seed(base, 2 * j as u64));
            let quantized = quantize(x, qcfg, &mut r)?;
            let probs = model.forward(&quantized)?;
            Ok(margin_of_probs(&probs, label))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = (0..t)
        .into_par_iter()
        .map(|j| {
            let mut r = rng_from_seed(derive_seed(base, 2 * j as u64 + 1));
            let quantized = quantize(x_adv, qcfg, &mut r)?;
            model.predict(&quantized)
        })
        .collect::<Result<_>>()?;

    let margin = match aggregate {
        MarginAggregate::Mean => margins.iter().sum::<f64>() / t as f64,
        MarginAggregate::Min => margins.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let mut vote_counts = vec![0usize; model.classes()];
    for &pred in &preds {
        vote_counts[pred] += 1;
    }

    let mut kl = kl_bound_first_term(x, x_adv, qcfg, ecfg, rng)?;
    if ecfg.include_second_term {
        kl += kl_bound_second_term(x, x_adv, qcfg, ecfg, rng)?;
    }
    let kl = kl.max(0.0);

    let (delta, certified, probability_bound) =
        certification_outcome(margin, kl, t, model.classes());
    Ok(CertificationResult {
        margin,
        kl_estimate: kl,
        delta,
        t,
        m: model.classes(),
        certified,
        probability_bound,
        majority_label: modal_label(&vote_counts),
        vote_counts,
    })
}
