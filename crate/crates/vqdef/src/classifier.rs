//! Small convolutional classifier with hand-rolled forward and backward
//! passes: conv(3x3,16) -> relu -> maxpool(2) -> conv(3x3,32) -> relu ->
//! maxpool(2) -> dense(m) -> softmax. Everything is f64 so finite-difference
//! gradient checks have headroom.
//!
//! Activations use channel-major planes internally; images enter and
//! gradients leave in the `Image` layout (row-major, channels interleaved).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::seeding::{derive_seed, rng_from_seed};

const CONV1_OUT: usize = 16;
const CONV2_OUT: usize = 32;
const KSIZE: usize = 3;

const MODEL_MAGIC: &[u8; 4] = b"VQDM";
const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// [out_ch][in_ch][KSIZE][KSIZE]
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// [out_dim][in_dim]
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    in_h: usize,
    in_w: usize,
    in_ch: usize,
    m: usize,
    conv1: ConvLayer,
    conv2: ConvLayer,
    dense: DenseLayer,
}

/// Sizes of every intermediate activation.
#[derive(Debug, Clone, Copy)]
struct Plan {
    c1: (usize, usize), // after conv1
    p1: (usize, usize), // after pool1
    c2: (usize, usize),
    p2: (usize, usize),
    flat: usize,
}

fn plan(in_h: usize, in_w: usize) -> Result<Plan> {
    if in_h < KSIZE || in_w < KSIZE {
        return Err(Error::Geometry(format!("input {in_h}x{in_w} too small")));
    }
    let c1 = (in_h - (KSIZE - 1), in_w - (KSIZE - 1));
    let p1 = (c1.0 / 2, c1.1 / 2);
    if p1.0 < KSIZE || p1.1 < KSIZE {
        return Err(Error::Geometry(format!(
            "input {in_h}x{in_w} too small after first pooling stage"
        )));
    }
    let c2 = (p1.0 - (KSIZE - 1), p1.1 - (KSIZE - 1));
    let p2 = (c2.0 / 2, c2.1 / 2);
    if p2.0 == 0 || p2.1 == 0 {
        return Err(Error::Geometry(format!(
            "input {in_h}x{in_w} too small after second pooling stage"
        )));
    }
    Ok(Plan {
        c1,
        p1,
        c2,
        p2,
        flat: p2.0 * p2.1 * CONV2_OUT,
    })
}

impl Model {
    /// He-initialized model for `in_h x in_w x in_ch` inputs and `m` classes.
    pub fn new<R: Rng>(
        in_h: usize,
        in_w: usize,
        in_ch: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        let plan = plan(in_h, in_w)?;
        let mut he = |fan_in: usize, count: usize| -> Vec<f64> {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..count)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    std * z
                })
                .collect()
        };
        let conv1 = ConvLayer {
            in_ch,
            out_ch: CONV1_OUT,
            weights: he(in_ch * KSIZE * KSIZE, CONV1_OUT * in_ch * KSIZE * KSIZE),
            bias: vec![0.0; CONV1_OUT],
        };
        let conv2 = ConvLayer {
            in_ch: CONV1_OUT,
            out_ch: CONV2_OUT,
            weights: he(CONV1_OUT * KSIZE * KSIZE, CONV2_OUT * CONV1_OUT * KSIZE * KSIZE),
            bias: vec![0.0; CONV2_OUT],
        };
        let dense = DenseLayer {
            in_dim: plan.flat,
            out_dim: m,
            weights: he(plan.flat, m * plan.flat),
            bias: vec![0.0; m],
        };
        Ok(Self {
            in_h,
            in_w,
            in_ch,
            m,
            conv1,
            conv2,
            dense,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.in_h, self.in_w, self.in_ch)
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn parameter_count(&self) -> usize {
        self.conv1.weights.len()
            + self.conv1.bias.len()
            + self.conv2.weights.len()
            + self.conv2.bias.len()
            + self.dense.weights.len()
            + self.dense.bias.len()
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        if img.shape() != (self.in_h, self.in_w, self.in_ch) {
            return Err(Error::Geometry(format!(
                "input shape {:?} does not match model {:?}",
                img.shape(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.m {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {} classes",
                self.m
            )));
        }
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn forward(&self, img: &Image) -> Result<Vec<f64>> {
        self.check_input(img)?;
        let cache = self.forward_cache(interleaved_to_planes(img.data(), self.in_h, self.in_w, self.in_ch));
        Ok(cache.probs)
    }

    pub fn predict(&self, img: &Image) -> Result<usize> {
        let probs = self.forward(img)?;
        Ok(argmax(&probs))
    }

    fn forward_cache(&self, input: Vec<f64>) -> ForwardCache {
        let plan = plan(self.in_h, self.in_w).expect("validated at construction");
        let mut a1 = conv_forward(&input, self.in_h, self.in_w, &self.conv1);
        relu_inplace(&mut a1);
        let (pl1, arg1) = maxpool_forward(&a1, plan.c1.0, plan.c1.1, CONV1_OUT);
        let mut a2 = conv_forward(&pl1, plan.p1.0, plan.p1.1, &self.conv2);
        relu_inplace(&mut a2);
        let (pl2, arg2) = maxpool_forward(&a2, plan.c2.0, plan.c2.1, CONV2_OUT);
        debug_assert_eq!(pl2.len(), plan.p2.0 * plan.p2.1 * CONV2_OUT);
        let logits = dense_forward(&pl2, &self.dense);
        let probs = softmax_probs(&logits);
        ForwardCache {
            input,
            a1,
            pl1,
            arg1,
            a2,
            pl2,
            arg2,
            logits,
            probs,
        }
    }

    /// Cross-entropy of the true label, computed from logits with a
    /// log-sum-exp shift.
    pub fn cross_entropy(&self, img: &Image, label: usize) -> Result<f64> {
        self.check_label(label)?;
        self.check_input(img)?;
        let cache = self.forward_cache(interleaved_to_planes(img.data(), self.in_h, self.in_w, self.in_ch));
        Ok(ce_from_logits(&cache.logits, label))
    }

    /// Loss, input gradient (image layout) and parameter gradients from one
    /// full backward pass.
    pub fn backprop(&self, img: &Image, label: usize) -> Result<(f64, Gradients)> {
        self.check_label(label)?;
        self.check_input(img)?;
        let plan = plan(self.in_h, self.in_w).expect("validated at construction");
        let cache = self.forward_cache(interleaved_to_planes(img.data(), self.in_h, self.in_w, self.in_ch));
        let loss = ce_from_logits(&cache.logits, label);

        let mut dlogits = cache.probs.clone();
        dlogits[label] -= 1.0;

        let (dpl2, dw_dense, db_dense) = dense_backward(&cache.pl2, &self.dense, &dlogits);
        let mut da2 = maxpool_backward(&dpl2, &cache.arg2, plan.c2.0, plan.c2.1, CONV2_OUT);
        relu_backward(&cache.a2, &mut da2);
        let (dpl1, dw2, db2) = conv_backward(&cache.pl1, plan.p1.0, plan.p1.1, &self.conv2, &da2);
        let mut da1 = maxpool_backward(&dpl1, &cache.arg1, plan.c1.0, plan.c1.1, CONV1_OUT);
        relu_backward(&cache.a1, &mut da1);
        let (dinput, dw1, db1) =
            conv_backward(&cache.input, self.in_h, self.in_w, &self.conv1, &da1);

        Ok((
            loss,
            Gradients {
                conv1_w: dw1,
                conv1_b: db1,
                conv2_w: dw2,
                conv2_b: db2,
                dense_w: dw_dense,
                dense_b: db_dense,
                input: planes_to_interleaved(&dinput, self.in_h, self.in_w, self.in_ch),
            },
        ))
    }

    /// Gradient of the cross-entropy at the input pixels, image layout.
    pub fn loss_grad_input(&self, img: &Image, label: usize) -> Result<Vec<f64>> {
        self.backprop(img, label).map(|(_, g)| g.input)
    }
}

struct ForwardCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    pl1: Vec<f64>,
    arg1: Vec<usize>,
    a2: Vec<f64>,
    pl2: Vec<f64>,
    arg2: Vec<usize>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
    /// Image-layout gradient with respect to the input pixels.
    pub input: Vec<f64>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Self {
            conv1_w: vec![0.0; model.conv1.weights.len()],
            conv1_b: vec![0.0; model.conv1.bias.len()],
            conv2_w: vec![0.0; model.conv2.weights.len()],
            conv2_b: vec![0.0; model.conv2.bias.len()],
            dense_w: vec![0.0; model.dense.weights.len()],
            dense_b: vec![0.0; model.dense.bias.len()],
            input: Vec::new(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.slots_mut().into_iter().zip(other.slots()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for slot in self.slots_mut() {
            for x in slot.iter_mut() {
                *x *= factor;
            }
        }
    }

    fn slots(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    fn slots_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }
}

fn interleaved_to_planes(data: &[f64], h: usize, w: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * q];
    for ch in 0..q {
        for r in 0..h {
            for c in 0..w {
                out[ch * h * w + r * w + c] = data[(r * w + c) * q + ch];
            }
        }
    }
    out
}

fn planes_to_interleaved(planes: &[f64], h: usize, w: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * q];
    for ch in 0..q {
        for r in 0..h {
            for c in 0..w {
                out[(r * w + c) * q + ch] = planes[ch * h * w + r * w + c];
            }
        }
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn conv_forward(input: &[f64], ih: usize, iw: usize, layer: &ConvLayer) -> Vec<f64> {
    let (oh, ow) = (ih - (KSIZE - 1), iw - (KSIZE - 1));
    let mut out = vec![0.0; layer.out_ch * oh * ow];
    for oc in 0..layer.out_ch {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(layer.bias[oc]);
        for ic in 0..layer.in_ch {
            let in_plane = &input[ic * ih * iw..(ic + 1) * ih * iw];
            for kr in 0..KSIZE {
                for kc in 0..KSIZE {
                    let wgt = layer.weights[((oc * layer.in_ch + ic) * KSIZE + kr) * KSIZE + kc];
                    for orow in 0..oh {
                        let base = (orow + kr) * iw + kc;
                        let src = &in_plane[base..base + ow];
                        let dst = &mut plane[orow * ow..orow * ow + ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    input: &[f64],
    ih: usize,
    iw: usize,
    layer: &ConvLayer,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (ih - (KSIZE - 1), iw - (KSIZE - 1));
    let mut grad_in = vec![0.0; layer.in_ch * ih * iw];
    let mut grad_w = vec![0.0; layer.weights.len()];
    let mut grad_b = vec![0.0; layer.out_ch];
    for oc in 0..layer.out_ch {
        let gplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        grad_b[oc] = gplane.iter().sum();
        for ic in 0..layer.in_ch {
            let in_plane = &input[ic * ih * iw..(ic + 1) * ih * iw];
            let gin_plane = &mut grad_in[ic * ih * iw..(ic + 1) * ih * iw];
            for kr in 0..KSIZE {
                for kc in 0..KSIZE {
                    let widx = ((oc * layer.in_ch + ic) * KSIZE + kr) * KSIZE + kc;
                    let wgt = layer.weights[widx];
                    let mut wacc = 0.0;
                    for orow in 0..oh {
                        let grow = &gplane[orow * ow..orow * ow + ow];
                        let base = (orow + kr) * iw + kc;
                        let src = &in_plane[base..base + ow];
                        for (g, s) in grow.iter().zip(src) {
                            wacc += g * s;
                        }
                        let dst = &mut gin_plane[base..base + ow];
                        for (d, g) in dst.iter_mut().zip(grow) {
                            *d += wgt * g;
                        }
                    }
                    grad_w[widx] = wacc;
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2; a trailing odd row/column is dropped.
/// Returns pooled values and the flat input index of each maximum.
fn maxpool_forward(input: &[f64], h: usize, w: usize, ch: usize) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; ch * ph * pw];
    let mut arg = vec![0usize; ch * ph * pw];
    for c in 0..ch {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for pr in 0..ph {
            for pc in 0..pw {
                let mut best_idx = (2 * pr) * w + 2 * pc;
                let mut best = plane[best_idx];
                for dr in 0..2 {
                    for dc in 0..2 {
                        let idx = (2 * pr + dr) * w + 2 * pc + dc;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[c * ph * pw + pr * pw + pc] = best;
                arg[c * ph * pw + pr * pw + pc] = c * h * w + best_idx;
            }
        }
    }
    (out, arg)
}

fn maxpool_backward(grad_out: &[f64], arg: &[usize], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; ch * h * w];
    for (g, &idx) in grad_out.iter().zip(arg) {
        grad_in[idx] += g;
    }
    grad_in
}

fn dense_forward(input: &[f64], layer: &DenseLayer) -> Vec<f64> {
    debug_assert_eq!(layer.weights.len(), layer.out_dim * layer.in_dim);
    let mut out = layer.bias.clone();
    for (o, row) in out.iter_mut().zip(layer.weights.chunks_exact(layer.in_dim)) {
        for (w, x) in row.iter().zip(input) {
            *o += w * x;
        }
    }
    out
}

fn dense_backward(
    input: &[f64],
    layer: &DenseLayer,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut grad_in = vec![0.0; layer.in_dim];
    let mut grad_w = vec![0.0; layer.weights.len()];
    for ((&o, g_row), w_row) in grad_out
        .iter()
        .zip(grad_w.chunks_exact_mut(layer.in_dim))
        .zip(layer.weights.chunks_exact(layer.in_dim))
    {
        for (((gw, &w), gi), &x) in g_row
            .iter_mut()
            .zip(w_row)
            .zip(grad_in.iter_mut())
            .zip(input)
        {
            *gw = o * x;
            *gi += o * w;
        }
    }
    (grad_in, grad_w, grad_out.to_vec())
}

pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn ce_from_logits(logits: &[f64], label: usize) -> f64 {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// True-class probability minus the best wrong-class probability.
pub fn margin_of_probs(probs: &[f64], label: usize) -> f64 {
    let best_other = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    probs[label] - best_other
}

pub fn margin(model: &Model, img: &Image, label: usize) -> Result<f64> {
    model.check_label(label)?;
    let probs = model.forward(img)?;
    Ok(margin_of_probs(&probs, label))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.05,
            momentum: 0.9,
            batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("epochs and batch must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Mean-of-batch gradients; per-sample backprops run in parallel and are
/// reduced in index order so the result is scheduling independent.
fn batch_gradients(
    model: &Model,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<(f64, Gradients)> {
    let per_sample: Vec<Result<(f64, Gradients)>> = indices
        .par_iter()
        .map(|&i| model.backprop(&ds.images[i], ds.labels[i]))
        .collect();
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for res in per_sample {
        let (l, g) = res?;
        loss += l;
        total.add(&g);
    }
    total.scale(1.0 / indices.len() as f64);
    Ok((loss / indices.len() as f64, total))
}

/// Minibatch SGD with momentum and seeded shuffling. Returns the mean loss
/// of each epoch.
pub fn train_sgd(model: &mut Model, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut velocity = Gradients::zeros_like(model);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch) {
            let (loss, grads) = batch_gradients(model, ds, batch)?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            for ((param, grad), vel) in [
                &mut model.conv1.weights,
                &mut model.conv1.bias,
                &mut model.conv2.weights,
                &mut model.conv2.bias,
                &mut model.dense.weights,
                &mut model.dense.bias,
            ]
            .into_iter()
            .zip(grads.slots())
            .zip(velocity.slots_mut())
            {
                for ((p, &g), v) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.lr * *v;
                }
            }
        }
        epoch_losses.push(epoch_loss / seen as f64);
    }
    Ok(epoch_losses)
}

/// Fraction of dataset items the model labels correctly.
pub fn accuracy(model: &Model, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let correct: usize = ds
        .images
        .par_iter()
        .zip(&ds.labels)
        .map(|(img, &label)| match model.predict(img) {
            Ok(p) if p == label => 1usize,
            _ => 0,
        })
        .sum();
    Ok(correct as f64 / ds.len() as f64)
}

pub fn save_model<P: AsRef<Path>>(model: &Model, path: P) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    for dim in [
        model.in_h,
        model.in_w,
        model.in_ch,
        model.m,
        model.conv1.out_ch,
        model.conv2.out_ch,
        KSIZE,
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for slot in [
        &model.conv1.weights,
        &model.conv1.bias,
        &model.conv2.weights,
        &model.conv2.bias,
        &model.dense.weights,
        &model.dense.bias,
    ] {
        for v in slot.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::ModelTruncated);
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    let magic = take(&mut pos, 4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelMagic);
    }
    let version = take(&mut pos, 1)?[0];
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        let b = take(&mut pos, 4)?;
        *d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    }
    let [in_h, in_w, in_ch, m, c1_out, c2_out, ksize] = dims;
    if ksize != KSIZE || c1_out != CONV1_OUT || c2_out != CONV2_OUT {
        return Err(Error::InvalidConfig(format!(
            "model file architecture {c1_out}/{c2_out}/k{ksize} not supported"
        )));
    }
    let p = plan(in_h, in_w)?;
    let read_slot = |pos: &mut usize, len: usize| -> Result<Vec<f64>> {
        let b = take(pos, len * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    };
    let conv1 = ConvLayer {
        in_ch,
        out_ch: c1_out,
        weights: read_slot(&mut pos, c1_out * in_ch * KSIZE * KSIZE)?,
        bias: read_slot(&mut pos, c1_out)?,
    };
    let conv2 = ConvLayer {
        in_ch: c1_out,
        out_ch: c2_out,
        weights: read_slot(&mut pos, c2_out * c1_out * KSIZE * KSIZE)?,
        bias: read_slot(&mut pos, c2_out)?,
    };
    let dense = DenseLayer {
        in_dim: p.flat,
        out_dim: m,
        weights: read_slot(&mut pos, m * p.flat)?,
        bias: read_slot(&mut pos, m)?,
    };
    Ok(Model {
        in_h,
        in_w,
        in_ch,
        m,
        conv1,
        conv2,
        dense,
    })
}
