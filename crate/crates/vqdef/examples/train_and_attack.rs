//! Trains the small CNN on synthetic shapes, then shows FGSM and PGD driving
//! its accuracy down.

use vqdef::attack::{fgsm, pgd, AttackConfig};
use vqdef::classifier::{accuracy, train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(1200, 28, 28, 4, &mut rng_from_seed(3)).unwrap();
    let train = subset(&ds, 0, 1000).unwrap();
    let test = subset(&ds, 1000, 200).unwrap();

    let mut model = Model::new(28, 28, 1, 4, &mut rng_from_seed(0)).unwrap();
    let losses = train_sgd(&mut model, &train, &TrainConfig::default()).unwrap();
    println!("epoch losses: {losses:?}");
    println!("clean accuracy: {:.3}", accuracy(&model, &test).unwrap());

    for eps in [0.05, 0.1, 0.3] {
        let mut fgsm_ok = 0;
        let mut pgd_ok = 0;
        let cfg = AttackConfig::pgd(eps, 40, 0);
        for (i, (img, &label)) in test.images.iter().zip(&test.labels).enumerate() {
            if model
                .predict(&fgsm(&model, img, label, eps).unwrap())
                .unwrap()
                == label
            {
                fgsm_ok += 1;
            }
            let adv = pgd(&model, img, label, &cfg, &mut rng_from_seed(i as u64)).unwrap();
            if model.predict(&adv).unwrap() == label {
                pgd_ok += 1;
            }
        }
        println!(
            "eps {eps:4}: fgsm accuracy {:.3}, pgd40 accuracy {:.3}",
            fgsm_ok as f64 / test.len() as f64,
            pgd_ok as f64 / test.len() as f64
        );
    }
}
