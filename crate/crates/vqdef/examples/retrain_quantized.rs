//! Retrains the classifier on quantized training data and compares defended
//! natural accuracy against the naturally trained model.

use vqdef::classifier::{train_sgd, Model, TrainConfig};
use vqdef::datasets::{subset, synthetic_shapes};
use vqdef::harness::{evaluate, train_quantized};
use vqdef::quantize::QuantizerConfig;
use vqdef::seeding::rng_from_seed;

fn main() {
    let ds = synthetic_shapes(4500, 28, 28, 4, &mut rng_from_seed(42)).unwrap();
    let train = subset(&ds, 0, 4000).unwrap();
    let test = subset(&ds, 4000, 500).unwrap();
    let tcfg = TrainConfig::default();

    let mut natural = Model::new(28, 28, 1, 4, &mut rng_from_seed(7)).unwrap();
    train_sgd(&mut natural, &train, &tcfg).unwrap();

    // a harsh channel: big windows, two centers, heavy noise
    let qcfg = QuantizerConfig::swrd(4, 2, 0.25, 0.25, 0.0, 99).unwrap();
    let (tuned, _) = train_quantized(&train, &qcfg, &tcfg).unwrap();

    let base = evaluate(&natural, Some(&qcfg), &test, None, 500, 5).unwrap();
    let retrained = evaluate(&tuned, Some(&qcfg), &test, None, 500, 5).unwrap();
    println!("defended natural accuracy, swrd s=4 k=2 sigma=tau=0.25 beta=0:");
    println!("  naturally trained model: {:.3}", base.accuracy);
    println!("  retrained on quantized:  {:.3}", retrained.accuracy);
    println!(
        "  gain: {:.1} points",
        100.0 * (retrained.accuracy - base.accuracy)
    );
}
