//! Majority-vote certification of a few images against small PGD
//! perturbations.

use vqdef::attack::{pgd, AttackConfig};
use vqdef::certify::{certify, KlEstimatorConfig, MarginAggregate};
use vqdef::classifier::{train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::quantize::QuantizerConfig;
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(2200, 28, 28, 4, &mut rng_from_seed(42)).unwrap();
    let train = subset(&ds, 0, 2000).unwrap();
    let test = subset(&ds, 2000, 200).unwrap();
    let mut model = Model::new(28, 28, 1, 4, &mut rng_from_seed(7)).unwrap();
    train_sgd(&mut model, &train, &TrainConfig::default()).unwrap();

    let sigma = 4.0 / 255.0;
    let qcfg = QuantizerConfig::swrd(2, 4, sigma, sigma, 1.0, 0).unwrap();
    let ecfg = KlEstimatorConfig::default();
    let attack = AttackConfig::pgd(0.5 / 255.0, 40, 0);

    println!("swrd s=2 k=4, t=40 votes, eps = 0.5/255:");
    for i in 0..6 {
        let x = &test.images[i];
        let label = test.labels[i];
        let adv = pgd(&model, x, label, &attack, &mut rng_from_seed(100 + i as u64)).unwrap();
        let res = certify(
            &model,
            x,
            &adv,
            label,
            &qcfg,
            40,
            &ecfg,
            MarginAggregate::Mean,
            &mut rng_from_seed(200 + i as u64),
        )
        .unwrap();
        println!(
            "  image {i}: margin {:6.3}  kl {:8.4}  delta {:8.4}  certified {:5}  bound {:.6}  votes {:?}",
            res.margin, res.kl_estimate, res.delta, res.certified, res.probability_bound, res.vote_counts
        );
    }
}
