//! Experiment driver for the vector-quantization defenses.
//!
//! Numeric noise and radius flags accept either plain decimals or the
//! `NUM/DEN` form, e.g. `--eps 16/255`.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use vqdef::attack::{AttackConfig, StepSize};
use vqdef::certify::{
    certify, kl_bound_first_term, kl_bound_second_term, KlEstimatorConfig, MarginAggregate,
};
use vqdef::classifier::{accuracy, load_model, save_model, train_sgd, Model, TrainConfig};
use vqdef::datasets::{load_idx_dataset, synthetic_shapes, LabeledDataset};
use vqdef::error::{Error, Result};
use vqdef::harness::{
    append_csv, denoise_gallery, evaluate, parse_grid, parse_intensity, parse_quantizer_spec,
    sweep, train_quantized, with_workers,
};
use vqdef::quantize::{DefenseMode, QuantizerConfig};
use vqdef::seeding::rng_from_seed;

#[derive(Parser)]
#[command(name = "vqdef", about = "Vector-quantization adversarial defenses", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledDataset> {
        match (&self.images, &self.labels) {
            (Some(i), Some(l)) => load_idx_dataset(i, l),
            _ => Err(Error::InvalidConfig(
                "--images and --labels are required".into(),
            )),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            batch: self.batch,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct QuantArgs {
    /// none | randdisc | prd | swrd
    #[arg(long, default_value = "none")]
    defense: String,
    /// patch / window side
    #[arg(long)]
    s: Option<usize>,
    /// cluster count
    #[arg(long)]
    k: Option<usize>,
    /// codebook-phase noise std (accepts N/255)
    #[arg(long)]
    sigma: Option<String>,
    /// quantization-phase noise std (accepts N/255)
    #[arg(long)]
    tau: Option<String>,
    /// swrd weight sharpness
    #[arg(long)]
    beta: Option<f64>,
}

impl QuantArgs {
    fn config(&self, profile: Option<&Profile>, seed: u64) -> Result<Option<QuantizerConfig>> {
        if self.defense == "none" {
            return Ok(None);
        }
        let mode: DefenseMode = self.defense.parse()?;
        let sigma = match &self.sigma {
            Some(v) => parse_intensity(v)?,
            None => profile.map_or(4.0 / 255.0, |p| p.sigma),
        };
        let tau = match &self.tau {
            Some(v) => parse_intensity(v)?,
            None => profile.map_or(4.0 / 255.0, |p| p.tau),
        };
        let beta = self.beta.unwrap_or(profile.map_or(1.0, |p| p.beta));
        let cfg = QuantizerConfig::new(
            mode,
            self.s.unwrap_or(2),
            self.k.unwrap_or(2),
            sigma,
            tau,
            beta,
            seed,
        )?;
        Ok(Some(cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier on an IDX dataset or the synthetic shape set
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// generate N synthetic images instead of loading files
        #[arg(long)]
        synthetic: Option<usize>,
        /// synthetic classes (<= 4)
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// synthetic image height and width
        #[arg(long, default_value_t = 28)]
        side: usize,
        /// output model path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Natural / robust accuracy of a model behind an optional defense
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quant: QuantArgs,
        /// none | fgsm | pgd
        #[arg(long, default_value = "none")]
        attack: String,
        /// perturbation radius (accepts N/255)
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// auto | explicit value (accepts N/255)
        #[arg(long, default_value = "auto")]
        alpha: String,
        #[arg(long)]
        no_random_start: bool,
        #[arg(long, default_value_t = 100)]
        n_eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output path (appended)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// named preset: mnist-pgd40 | cifar-pgd20 | svhn-pgd20
        #[arg(long)]
        profile: Option<String>,
        /// rayon worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Cross-product hyperparameter sweep from a grid file
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// grid file: one `param=v1,v2,...` per line
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train a fresh model on a quantized copy of the training set
    TrainQuantized {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quant: QuantArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// KL divergence bound between codebook distributions of a clean image
    /// and its PGD adversary
    Klbound {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// image index in the dataset
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "0.3")]
        eps: String,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[command(flatten)]
        quant: QuantArgs,
        #[arg(long, default_value_t = 1000)]
        n_centers: usize,
        #[arg(long, default_value_t = 10000)]
        n_mc: usize,
        #[arg(long, default_value_t = 2)]
        kgmm: usize,
        #[arg(long)]
        second_term: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Majority-vote certification of one image
    Certify {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "0.3")]
        eps: String,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[command(flatten)]
        quant: QuantArgs,
        #[arg(long, default_value_t = 1000)]
        n_centers: usize,
        #[arg(long, default_value_t = 10000)]
        n_mc: usize,
        #[arg(long, default_value_t = 2)]
        kgmm: usize,
        #[arg(long)]
        second_term: bool,
        /// vote repetitions
        #[arg(long, default_value_t = 40)]
        t: usize,
        /// aggregate margins with min instead of mean
        #[arg(long)]
        min_margin: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PGM/PPM gallery of clean, quantized, adversarial and denoised tiles
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// comma-separated image indices
        #[arg(long)]
        indices: String,
        /// file with one quantizer spec per line
        /// (`mode=swrd s=2 k=2 sigma=4/255 tau=4/255 beta=1`)
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, default_value = "0.3")]
        eps: String,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Profile {
    steps: usize,
    sigma: f64,
    tau: f64,
    beta: f64,
}

fn profile_by_name(name: &str) -> Result<Profile> {
    match name {
        "mnist-pgd40" => Ok(Profile {
            steps: 40,
            sigma: 4.0 / 255.0,
            tau: 4.0 / 255.0,
            beta: 1.0,
        }),
        "cifar-pgd20" => Ok(Profile {
            steps: 20,
            sigma: 4.0 / 255.0,
            tau: 4.0 / 255.0,
            beta: 0.1,
        }),
        "svhn-pgd20" => Ok(Profile {
            steps: 20,
            sigma: 4.0 / 255.0,
            tau: 4.0 / 255.0,
            beta: 0.5,
        }),
        other => Err(Error::InvalidConfig(format!("unknown profile '{other}'"))),
    }
}

fn load_pair(model: &PathBuf, data: &DataArgs) -> Result<(Model, LabeledDataset)> {
    Ok((load_model(model)?, data.load()?))
}

fn adversary_for(
    model: &Model,
    ds: &LabeledDataset,
    index: usize,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<vqdef::imaging::Image> {
    if index >= ds.len() {
        return Err(Error::Bounds(format!("index {index} out of range")));
    }
    if eps == 0.0 {
        return Ok(ds.images[index].clone());
    }
    let cfg = AttackConfig::pgd(eps, steps, seed);
    let mut rng = rng_from_seed(seed);
    vqdef::attack::pgd(model, &ds.images[index], ds.labels[index], &cfg, &mut rng)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            data,
            synthetic,
            classes,
            side,
            out,
            train,
        } => {
            let ds = match synthetic {
                Some(n) => {
                    let mut rng = rng_from_seed(train.seed);
                    synthetic_shapes(n, side, side, classes, &mut rng)?
                }
                None => data.load()?,
            };
            let (h, w, q) = ds
                .shape()
                .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
            let mut model = Model::new(h, w, q, ds.m, &mut rng_from_seed(train.seed))?;
            let losses = train_sgd(&mut model, &ds, &train.config())?;
            for (epoch, loss) in losses.iter().enumerate() {
                println!("epoch {} mean loss {loss:.6}", epoch + 1);
            }
            let train_acc = accuracy(&model, &ds)?;
            println!("training accuracy {train_acc:.4}");
            save_model(&model, &out)?;
            println!("model written to {}", out.display());
        }
        Command::Eval {
            model,
            data,
            quant,
            attack,
            eps,
            steps,
            alpha,
            no_random_start,
            n_eval,
            seed,
            csv,
            profile,
            workers,
        } => {
            let profile = profile.as_deref().map(profile_by_name).transpose()?;
            let (model, ds) = load_pair(&model, &data)?;
            let qcfg = quant.config(profile.as_ref(), seed)?;
            let attack_cfg = match attack.as_str() {
                "none" => None,
                "pgd" | "fgsm" => {
                    let epsilon = parse_intensity(eps.as_deref().unwrap_or("0"))?;
                    let steps = steps.unwrap_or(profile.as_ref().map_or(40, |p| p.steps));
                    let alpha = match alpha.as_str() {
                        "auto" => StepSize::Auto,
                        v => StepSize::Fixed(parse_intensity(v)?),
                    };
                    // fgsm is a single full-size step without random start
                    let (steps, alpha) = if attack == "fgsm" {
                        (1, StepSize::Fixed(epsilon.max(f64::MIN_POSITIVE)))
                    } else {
                        (steps, alpha)
                    };
                    Some(AttackConfig {
                        epsilon,
                        steps,
                        alpha,
                        random_start: !no_random_start && attack == "pgd",
                        seed,
                    })
                }
                other => {
                    return Err(Error::InvalidConfig(format!("unknown attack '{other}'")))
                }
            };
            let record = with_workers(workers, || {
                evaluate(&model, qcfg.as_ref(), &ds, attack_cfg.as_ref(), n_eval, seed)
            })?;
            println!(
                "defense={} eps={} accuracy={:.4} ({}/{}) wall_ms={}",
                record.defense,
                record.epsilon,
                record.accuracy,
                record.correct,
                record.n_eval,
                record.wall_ms
            );
            if let Some(path) = csv {
                append_csv(&path, std::slice::from_ref(&record))?;
                println!("csv row appended to {}", path.display());
            }
        }
        Command::Sweep {
            model,
            data,
            grid,
            csv,
            seed,
            workers,
        } => {
            let (model, ds) = load_pair(&model, &data)?;
            let grid = parse_grid(&std::fs::read_to_string(&grid)?)?;
            let records = with_workers(workers, || sweep(&model, &ds, &grid, &csv, seed))?;
            println!(
                "swept {} points, rows appended to {}",
                records.len(),
                csv.display()
            );
        }
        Command::TrainQuantized {
            data,
            quant,
            out,
            train,
        } => {
            let ds = data.load()?;
            let qcfg = quant
                .config(None, train.seed)?
                .ok_or_else(|| Error::InvalidConfig("--defense must not be none".into()))?;
            if qcfg.mode == DefenseMode::RandDisc {
                return Err(Error::InvalidConfig(
                    "train-quantized supports prd and swrd".into(),
                ));
            }
            let (model, losses) = train_quantized(&ds, &qcfg, &train.config())?;
            for (epoch, loss) in losses.iter().enumerate() {
                println!("epoch {} mean loss {loss:.6}", epoch + 1);
            }
            save_model(&model, &out)?;
            println!("model written to {}", out.display());
        }
        Command::Klbound {
            model,
            data,
            index,
            eps,
            steps,
            quant,
            n_centers,
            n_mc,
            kgmm,
            second_term,
            seed,
        } => {
            let (model, ds) = load_pair(&model, &data)?;
            let qcfg = quant
                .config(None, seed)?
                .ok_or_else(|| Error::InvalidConfig("--defense must not be none".into()))?;
            let eps = parse_intensity(&eps)?;
            if index >= ds.len() {
                return Err(Error::Bounds(format!("index {index} out of range")));
            }
            let x = &ds.images[index];
            let x_adv = adversary_for(&model, &ds, index, eps, steps, seed)?;
            let ecfg = KlEstimatorConfig {
                n_center_samples: n_centers,
                n_mc,
                k_gmm: kgmm,
                include_second_term: second_term,
                seed,
                ..Default::default()
            };
            let mut rng = rng_from_seed(seed);
            let first = kl_bound_first_term(x, &x_adv, &qcfg, &ecfg, &mut rng)?;
            println!("first_term={first}");
            let mut total = first;
            if second_term {
                let second = kl_bound_second_term(x, &x_adv, &qcfg, &ecfg, &mut rng)?;
                println!("second_term={second}");
                total += second;
            }
            println!("kl_bound={}", total.max(0.0));
        }
        Command::Certify {
            model,
            data,
            index,
            eps,
            steps,
            quant,
            n_centers,
            n_mc,
            kgmm,
            second_term,
            t,
            min_margin,
            seed,
        } => {
            let (model, ds) = load_pair(&model, &data)?;
            let qcfg = quant
                .config(None, seed)?
                .ok_or_else(|| Error::InvalidConfig("--defense must not be none".into()))?;
            let eps = parse_intensity(&eps)?;
            if index >= ds.len() {
                return Err(Error::Bounds(format!("index {index} out of range")));
            }
            let x = &ds.images[index];
            let label = ds.labels[index];
            let x_adv = adversary_for(&model, &ds, index, eps, steps, seed)?;
            let ecfg = KlEstimatorConfig {
                n_center_samples: n_centers,
                n_mc,
                k_gmm: kgmm,
                include_second_term: second_term,
                seed,
                ..Default::default()
            };
            let aggregate = if min_margin {
                MarginAggregate::Min
            } else {
                MarginAggregate::Mean
            };
            let mut rng = rng_from_seed(seed);
            let res = certify(&model, x, &x_adv, label, &qcfg, t, &ecfg, aggregate, &mut rng)?;
            println!("label={label}");
            println!("majority_label={}", res.majority_label);
            println!("vote_counts={:?}", res.vote_counts);
            println!("margin={}", res.margin);
            println!("kl_estimate={}", res.kl_estimate);
            println!("delta={}", res.delta);
            println!("certified={}", res.certified);
            println!("probability_bound={}", res.probability_bound);
        }
        Command::Denoise {
            model,
            data,
            indices,
            configs,
            eps,
            steps,
            out,
            seed,
        } => {
            let (model, ds) = load_pair(&model, &data)?;
            let indices: Vec<usize> = indices
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidConfig(format!("bad index '{v}'")))
                })
                .collect::<Result<_>>()?;
            let qcfgs: Vec<QuantizerConfig> = std::fs::read_to_string(&configs)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| parse_quantizer_spec(l, seed))
                .collect::<Result<_>>()?;
            let eps = parse_intensity(&eps)?;
            let attack = AttackConfig::pgd(eps, steps, seed);
            denoise_gallery(&model, &ds, &qcfgs, &attack, &indices, &out, seed)?;
            println!("gallery written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
