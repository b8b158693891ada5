//! Runs the three quantization channels on one synthetic image and prints
//! what each does to it.

use vqdef::datasets::synthetic_shapes;
use vqdef::imaging::extract_disjoint_patches;
use vqdef::quantize::{build_codebook, quantize, quantize_swrd, QuantizerConfig};
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(4, 28, 28, 4, &mut rng_from_seed(1)).unwrap();
    let img = &ds.images[2];
    let sigma = 4.0 / 255.0;

    for cfg in [
        QuantizerConfig::randdisc(2, sigma, sigma, 0).unwrap(),
        QuantizerConfig::prd(2, 2, sigma, sigma, 0).unwrap(),
        QuantizerConfig::swrd(2, 2, sigma, sigma, 1.0, 0).unwrap(),
    ] {
        let mut rng = rng_from_seed(7);
        let cb = build_codebook(img, &cfg, &mut rng).unwrap();
        let out = quantize(img, &cfg, &mut rng_from_seed(7)).unwrap();
        let dist: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        println!(
            "{:8}  s={} k={}  centers={}  ||x_hat - x||_2 = {dist:.4}",
            cfg.mode.to_string(),
            cfg.s,
            cfg.k,
            cb.k()
        );
    }

    // pRD output blocks always come from the codebook
    let cfg = QuantizerConfig::prd(2, 2, sigma, sigma, 0).unwrap();
    let out = quantize(img, &cfg, &mut rng_from_seed(7)).unwrap();
    let blocks = extract_disjoint_patches(&out, 2).unwrap();
    let distinct: std::collections::HashSet<Vec<u64>> = blocks
        .patches
        .iter()
        .map(|p| p.values.iter().map(|v| v.to_bits()).collect())
        .collect();
    println!("prd output uses {} distinct block values (k = 2)", distinct.len());

    // swRD per-pixel weights sit on the probability simplex
    let cfg = QuantizerConfig::swrd(2, 2, sigma, sigma, 1.0, 0).unwrap();
    let (_, weights) = quantize_swrd(img, &cfg, &mut rng_from_seed(7)).unwrap();
    let worst: f64 = weights
        .per_pixel
        .iter()
        .map(|w| (w.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("swrd worst |weight sum - 1| = {worst:.2e}");
}
