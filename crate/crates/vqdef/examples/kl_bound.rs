//! Estimates the codebook-distribution KL bound for one clean/adversarial
//! pair under each defense, plus the (much smaller at matched radii) second
//! chain-bound term.

use vqdef::attack::{pgd, AttackConfig};
use vqdef::certify::{kl_bound_first_term, kl_bound_second_term, KlEstimatorConfig};
use vqdef::classifier::{train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::quantize::QuantizerConfig;
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(1200, 28, 28, 4, &mut rng_from_seed(42)).unwrap();
    let train = subset(&ds, 0, 1000).unwrap();
    let test = subset(&ds, 1000, 200).unwrap();
    let mut model = Model::new(28, 28, 1, 4, &mut rng_from_seed(7)).unwrap();
    train_sgd(&mut model, &train, &TrainConfig::default()).unwrap();

    let sigma = 4.0 / 255.0;
    let ecfg = KlEstimatorConfig::default();
    let x = &test.images[0];
    let label = test.labels[0];

    for eps in [2.0 / 255.0, 0.3] {
        let attack = AttackConfig::pgd(eps, 40, 0);
        let adv = pgd(&model, x, label, &attack, &mut rng_from_seed(11)).unwrap();
        println!("eps = {eps:.4}:");
        for (name, q) in [
            ("randdisc k=4", QuantizerConfig::randdisc(4, sigma, sigma, 0).unwrap()),
            ("prd s=2 k=4", QuantizerConfig::prd(2, 4, sigma, sigma, 0).unwrap()),
            ("swrd s=2 k=4", QuantizerConfig::swrd(2, 4, sigma, sigma, 1.0, 0).unwrap()),
        ] {
            let first = kl_bound_first_term(x, &adv, &q, &ecfg, &mut rng_from_seed(13)).unwrap();
            let second = kl_bound_second_term(x, &adv, &q, &ecfg, &mut rng_from_seed(17)).unwrap();
            println!("  {name:14} first term {first:10.3}   second term {second:10.4}");
        }
    }
}
