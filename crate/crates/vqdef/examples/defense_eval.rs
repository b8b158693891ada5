//! Robust-accuracy comparison of the three defenses under a PGD attack,
//! reproducing the qualitative ordering at desk scale.

use vqdef::attack::AttackConfig;
use vqdef::classifier::{accuracy, train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::harness::evaluate;
use vqdef::quantize::QuantizerConfig;
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(4500, 28, 28, 4, &mut rng_from_seed(42)).unwrap();
    let train = subset(&ds, 0, 4000).unwrap();
    let test = subset(&ds, 4000, 500).unwrap();
    let mut model = Model::new(28, 28, 1, 4, &mut rng_from_seed(7)).unwrap();
    train_sgd(&mut model, &train, &TrainConfig::default()).unwrap();
    println!("natural accuracy: {:.3}", accuracy(&model, &test).unwrap());

    let sigma = 4.0 / 255.0;
    let attack = AttackConfig::pgd(0.3, 40, 0);
    let configs = [
        ("none", None),
        ("randdisc k=2", Some(QuantizerConfig::randdisc(2, sigma, sigma, 0).unwrap())),
        ("prd s=2 k=2", Some(QuantizerConfig::prd(2, 2, sigma, sigma, 0).unwrap())),
        ("swrd s=2 k=2", Some(QuantizerConfig::swrd(2, 2, sigma, sigma, 1.0, 0).unwrap())),
    ];
    println!("PGD40 at eps = 0.3, 200 test images:");
    for (name, qcfg) in configs {
        let rec = evaluate(&model, qcfg.as_ref(), &test, Some(&attack), 200, 5).unwrap();
        println!("  {name:14} robust accuracy {:.3} ({} ms)", rec.accuracy, rec.wall_ms);
    }
}
