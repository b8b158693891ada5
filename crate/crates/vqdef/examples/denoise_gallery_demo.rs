//! Writes a PGM tile gallery: rows of clean / quantized-clean / adversarial /
//! quantized-adversarial images, one column per defense.

use vqdef::attack::AttackConfig;
use vqdef::classifier::{train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::harness::denoise_gallery;
use vqdef::quantize::QuantizerConfig;
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(1200, 28, 28, 4, &mut rng_from_seed(42)).unwrap();
    let train = subset(&ds, 0, 1000).unwrap();
    let test = subset(&ds, 1000, 200).unwrap();
    let mut model = Model::new(28, 28, 1, 4, &mut rng_from_seed(7)).unwrap();
    train_sgd(&mut model, &train, &TrainConfig::default()).unwrap();

    let sigma = 4.0 / 255.0;
    let qcfgs = vec![
        QuantizerConfig::randdisc(2, sigma, sigma, 0).unwrap(),
        QuantizerConfig::prd(2, 2, sigma, sigma, 0).unwrap(),
        QuantizerConfig::swrd(2, 2, sigma, sigma, 1.0, 0).unwrap(),
    ];
    let attack = AttackConfig::pgd(0.3, 40, 0);
    let out = std::env::temp_dir().join("vqdef-gallery.pgm");
    denoise_gallery(&model, &test, &qcfgs, &attack, &[0, 1, 2], &out, 5).unwrap();
    println!("gallery written to {}", out.display());
    println!("rows per image: clean, quantized clean, adversarial, quantized adversarial");
    println!("columns: randdisc, prd, swrd");
}
