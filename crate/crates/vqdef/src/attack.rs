//! White-box l-infinity attacks on the base classifier: single-step FGSM and
//! multi-step PGD with optional random start. Gradients go through the
//! classifier only; the randomized quantizer in front of it is not attacked.

use rand::Rng;

use crate::classifier::Model;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Step size when `alpha` is left on auto: `2 eps / steps`, which gives
/// `eps/20` at 40 steps and `eps/10` at 20.
pub fn auto_alpha(epsilon: f64, steps: usize) -> f64 {
    2.0 * epsilon / steps as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// l-infinity radius in intensity units.
    pub epsilon: f64,
    pub steps: usize,
    pub alpha: StepSize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn pgd(epsilon: f64, steps: usize, seed: u64) -> Self {
        Self {
            epsilon,
            steps,
            alpha: StepSize::Auto,
            random_start: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("attack needs steps >= 1".into()));
        }
        if let StepSize::Fixed(a) = self.alpha {
            if !(a > 0.0) {
                return Err(Error::InvalidConfig("explicit alpha must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        match self.alpha {
            StepSize::Auto => auto_alpha(self.epsilon, self.steps),
            StepSize::Fixed(a) => a,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single signed-gradient step: `clip_[0,1](x + eps * sign(grad))`.
pub fn fgsm(model: &Model, img: &Image, label: usize, epsilon: f64) -> Result<Image> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
    }
    let grad = model.loss_grad_input(img, label)?;
    let (h, w, q) = img.shape();
    let data: Vec<f64> = img
        .data()
        .iter()
        .zip(&grad)
        .map(|(&x, &g)| (x + epsilon * sign(g)).clamp(0.0, 1.0))
        .collect();
    Image::new(h, w, q, data)
}

/// Projected gradient descent: optional uniform start inside the eps-ball,
/// then exactly `cfg.steps` signed-gradient steps, each projected back into
/// the ball around the original image intersected with the `[0,1]` box.
pub fn pgd<R: Rng>(
    model: &Model,
    img: &Image,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Image> {
    cfg.validate()?;
    let (h, w, q) = img.shape();
    let origin = img.data();
    let alpha = cfg.step_size();

    let mut x: Vec<f64> = origin.to_vec();
    if cfg.random_start && cfg.epsilon > 0.0 {
        for (v, &o) in x.iter_mut().zip(origin) {
            let u: f64 = rng.gen_range(-cfg.epsilon..=cfg.epsilon);
            *v = (o + u).clamp(0.0, 1.0);
        }
    }

    for _ in 0..cfg.steps {
        let current = Image::new(h, w, q, x.clone())?;
        let grad = model.loss_grad_input(&current, label)?;
        for ((v, &g), &o) in x.iter_mut().zip(&grad).zip(origin) {
            let stepped = *v + alpha * sign(g);
            *v = stepped
                .clamp(o - cfg.epsilon, o + cfg.epsilon)
                .clamp(0.0, 1.0);
        }
    }
    Image::new(h, w, q, x)
}
