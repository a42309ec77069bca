//! Multi-hypothesis pose regressor: a small fully connected network with M
//! heads of 4 rotation numbers and 1 depth, trained with the relaxed
//! winner-take-all objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{rotation_loss_with_grad, UnitQuaternion};
use crate::toy::ToySample;

pub const OUTPUTS_PER_HEAD: usize = 5;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const MODEL_VERSION: &str = "mhp-model/1";

/// Below this raw norm a head's rotation output falls back to identity.
const MIN_RAW_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub rotations: Vec<UnitQuaternion>,
    pub depths: Vec<f64>,
}

impl HypothesisSet {
    pub fn new(rotations: Vec<UnitQuaternion>, depths: Vec<f64>) -> Result<Self> {
        if rotations.is_empty() {
            return Err(Error::EmptyInput("hypotheses"));
        }
        if rotations.len() != depths.len() {
            return Err(Error::WidthMismatch {
                expected: rotations.len(),
                got: depths.len(),
            });
        }
        let rotations = rotations.into_iter().map(|q| q.to_hemisphere()).collect();
        Ok(Self { rotations, depths })
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }
}

/// Missing fields take their defaults when deserialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub lambda_depth: f64,
    pub dropout_p: f64,
    pub seed: u64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`;
    /// epochs in between interpolate geometrically. 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-4,
            epsilon_start: 0.05,
            epsilon_end: 0.01,
            lambda_depth: 3.0,
            dropout_p: 0.5,
            seed: 0,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if eps < 0.0 || (m > 1 && eps >= (m - 1) as f64 / m as f64) {
                return bad(format!("epsilon {eps} outside [0, (M-1)/M) for M = {m}"));
            }
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            ));
        }
        if self.lambda_depth < 0.0 {
            return bad(format!("lambda_depth must be non-negative, got {}", self.lambda_depth));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(t)
    }

    /// Relaxation weight for a given epoch, linear from start to end.
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.epsilon_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Rotation loss plus weighted smooth-L1 depth loss.
pub fn pose_loss(
    hyp: (&UnitQuaternion, f64),
    gt: (&UnitQuaternion, f64),
    lambda: f64,
) -> f64 {
    crate::rotation::rotation_loss(hyp.0, gt.0) + lambda * smooth_l1(hyp.1 - gt.1)
}

/// Weights of the winner and of every other active hypothesis.
pub fn meta_weights(active: usize, epsilon: f64) -> (f64, f64) {
    if active <= 1 {
        return (1.0, 0.0);
    }
    let a = active as f64;
    let other = epsilon / (a - 1.0);
    (1.0 - epsilon * a / (a - 1.0) + other, other)
}

/// Relaxed minimum over the active per-hypothesis losses. Returns the loss
/// and the lowest-index argmin.
pub fn meta_loss_from(losses: &[f64], epsilon: f64, active: &[bool]) -> Result<(f64, usize)> {
    let mut winner: Option<usize> = None;
    let mut count = 0usize;
    let mut sum = 0.0;
    for (j, (&l, &on)) in losses.iter().zip(active).enumerate() {
        if !on {
            continue;
        }
        count += 1;
        sum += l;
        if winner.map_or(true, |w| l < losses[w]) {
            winner = Some(j);
        }
    }
    let w = winner.ok_or(Error::NoActiveHypotheses)?;
    if count == 1 {
        return Ok((losses[w], w));
    }
    let a = count as f64;
    let loss = (1.0 - epsilon * a / (a - 1.0)) * losses[w] + epsilon / (a - 1.0) * sum;
    Ok((loss, w))
}

pub fn meta_loss(
    hyps: &HypothesisSet,
    gt: (&UnitQuaternion, f64),
    epsilon: f64,
    lambda: f64,
    active: &[bool],
) -> Result<(f64, usize)> {
    if active.len() != hyps.len() {
        return Err(Error::WidthMismatch {
            expected: hyps.len(),
            got: active.len(),
        });
    }
    let losses: Vec<f64> = hyps
        .rotations
        .iter()
        .zip(&hyps.depths)
        .map(|(q, &d)| pose_loss((q, d), gt, lambda))
        .collect();
    meta_loss_from(&losses, epsilon, active)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    /// Input, hidden..., output widths.
    pub layer_sizes: Vec<usize>,
    pub m: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    /// Per layer: weights (out x in, row-major) then biases.
    pub params: Vec<f64>,
}

/// Forward pass intermediates for backpropagation.
struct Tape {
    /// Inputs to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl RegressorModel {
    /// He-initialized network with zero biases.
    pub fn new(input: usize, hidden: &[usize], m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("hypothesis count must be at least 1".into()));
        }
        if input == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(m * OUTPUTS_PER_HEAD);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            layer_sizes,
            m,
            seed,
            leaky_slope: LEAKY_SLOPE,
            params,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.layer_sizes.windows(2) {
            off.push(off.last().unwrap() + w[0] * w[1] + w[1]);
        }
        off
    }

    /// Sets the depth bias of every head.
    pub fn set_depth_bias(&mut self, depth: f64) {
        let off = *self.layer_offsets().iter().rev().nth(1).unwrap();
        let n = self.layer_sizes.len();
        let (fan_in, fan_out) = (self.layer_sizes[n - 2], self.layer_sizes[n - 1]);
        let bias = off + fan_in * fan_out;
        for j in 0..self.m {
            self.params[bias + j * OUTPUTS_PER_HEAD + 4] = depth;
        }
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::WidthMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Tape {
        let offsets = self.layer_offsets();
        let layers = self.layer_sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut cur = x.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offsets[l]..offsets[l] + fan_in * fan_out];
            let b = &self.params[offsets[l] + fan_in * fan_out..offsets[l + 1]];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
            }
            inputs.push(cur);
            if l + 1 < layers {
                let act = z
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { self.leaky_slope * v })
                    .collect();
                pre.push(z);
                cur = act;
            } else {
                cur = z;
            }
        }
        Tape {
            inputs,
            pre,
            output: cur,
        }
    }

    /// Raw network output, width M*5.
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(self.run(x).output)
    }

    pub fn forward(&self, x: &[f64]) -> Result<HypothesisSet> {
        let raw = self.forward_raw(x)?;
        Ok(decode_heads(&raw))
    }

    /// Meta-loss of one sample and its gradient with respect to all parameters.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        gt: (&UnitQuaternion, f64),
        epsilon: f64,
        lambda: f64,
        active: &[bool],
    ) -> Result<Gradient> {
        self.check_width(x)?;
        if active.len() != self.m {
            return Err(Error::WidthMismatch {
                expected: self.m,
                got: active.len(),
            });
        }
        let tape = self.run(x);
        let gq = gt.0.as_array();
        let mut losses = vec![0.0; self.m];
        let mut head_grads = vec![[0.0; OUTPUTS_PER_HEAD]; self.m];
        for j in 0..self.m {
            if !active[j] {
                continue;
            }
            let r = &tape.output[j * OUTPUTS_PER_HEAD..j * OUTPUTS_PER_HEAD + 4];
            let d = tape.output[j * OUTPUTS_PER_HEAD + 4];
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dd = d - gt.1;
            let depth_loss = lambda * smooth_l1(dd);
            head_grads[j][4] = lambda * smooth_l1_grad(dd);
            if norm < MIN_RAW_NORM {
                let (l, _) = rotation_loss_with_grad(UnitQuaternion::IDENTITY.as_array(), gq);
                losses[j] = l + depth_loss;
                continue;
            }
            // the hemisphere flip is a constant sign and the loss is even in q,
            // so it can be skipped here
            let u = [r[0] / norm, r[1] / norm, r[2] / norm, r[3] / norm];
            let (l, g) = rotation_loss_with_grad(&u, gq);
            losses[j] = l + depth_loss;
            let ug: f64 = (0..4).map(|k| u[k] * g[k]).sum();
            for k in 0..4 {
                head_grads[j][k] = (g[k] - u[k] * ug) / norm;
            }
        }
        let (loss, winner) = meta_loss_from(&losses, epsilon, active)?;
        let count = active.iter().filter(|&&a| a).count();
        let (w_win, w_other) = meta_weights(count, epsilon);
        let mut d_out = vec![0.0; tape.output.len()];
        for j in 0..self.m {
            if !active[j] {
                continue;
            }
            let w = if j == winner { w_win } else { w_other };
            for k in 0..OUTPUTS_PER_HEAD {
                d_out[j * OUTPUTS_PER_HEAD + k] = w * head_grads[j][k];
            }
        }
        let grad = self.backprop(&tape, d_out);
        Ok(Gradient {
            loss,
            winner,
            grad,
        })
    }

    fn backprop(&self, tape: &Tape, mut delta: Vec<f64>) -> Vec<f64> {
        let offsets = self.layer_offsets();
        let layers = self.layer_sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &tape.inputs[l];
            let base = offsets[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, &wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wv;
                }
            }
            for (p, &z) in prev.iter_mut().zip(&tape.pre[l - 1]) {
                if z <= 0.0 {
                    *p *= self.leaky_slope;
                }
            }
            delta = prev;
        }
        grad
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Splits raw outputs into normalized, hemisphere-mapped rotations and depths.
pub fn decode_heads(raw: &[f64]) -> HypothesisSet {
    let m = raw.len() / OUTPUTS_PER_HEAD;
    let mut rotations = Vec::with_capacity(m);
    let mut depths = Vec::with_capacity(m);
    for j in 0..m {
        let h = &raw[j * OUTPUTS_PER_HEAD..(j + 1) * OUTPUTS_PER_HEAD];
        let q = UnitQuaternion::normalize([h[0], h[1], h[2], h[3]])
            .unwrap_or(UnitQuaternion::IDENTITY);
        rotations.push(q.to_hemisphere());
        depths.push(h[4]);
    }
    HypothesisSet { rotations, depths }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub winner: usize,
    pub grad: Vec<f64>,
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: [usize; 2],
    pub m: usize,
}

impl ModelSpec {
    pub fn new(m: usize) -> Self {
        Self {
            hidden: [128, 128],
            m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub epsilon: f64,
    pub mean_loss: f64,
    /// How often each head won, indexed by head.
    pub winners: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// Draws a dropout mask; at least one head stays active.
pub fn dropout_mask(m: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..m).map(|_| rng.gen::<f64>() >= p).collect();
    if !mask.iter().any(|&a| a) {
        mask[rng.gen_range(0..m)] = true;
    }
    mask
}

/// Trains a fresh model on `data`. Reproducible for a fixed config and dataset.
pub fn train(
    data: &[ToySample],
    spec: ModelSpec,
    config: &TrainConfig,
) -> Result<(RegressorModel, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    config.validate(spec.m)?;
    let width = data[0].observation.len();
    let mut model = RegressorModel::new(width, &spec.hidden, spec.m, config.seed)?;
    let mut depths: Vec<f64> = data.iter().map(|s| s.gt_depth).collect();
    depths.sort_by(f64::total_cmp);
    model.set_depth_bias(depths[depths.len() / 2]);
    let log = train_model(&mut model, data, config)?;
    Ok((model, log))
}

/// Continues training an existing model.
pub fn train_model(
    model: &mut RegressorModel,
    data: &[ToySample],
    config: &TrainConfig,
) -> Result<TrainingLog> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    config.validate(model.m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e);
    let mut adam = Adam::new(model.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog { epochs: Vec::new() };
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let epsilon = config.epsilon_at(epoch);
        adam.lr = config.learning_rate_at(epoch);
        shuffle(&mut order, &mut rng);
        let mut winners = vec![0usize; model.m];
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.param_count()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &data[i];
                let mask = dropout_mask(model.m, config.dropout_p, &mut rng);
                let g = model.loss_and_grad(
                    &s.observation,
                    (&s.gt_rotation, s.gt_depth),
                    epsilon,
                    config.lambda_depth,
                    &mask,
                )?;
                winners[g.winner] += 1;
                batch_loss += g.loss;
                for (a, b) in grad.iter_mut().zip(&g.grad) {
                    *a += b;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            adam.step(&mut model.params, &grad);
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            total += batch_loss;
            step += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            epsilon,
            mean_loss: total / data.len() as f64,
            winners,
        });
    }
    Ok(log)
}

fn shuffle(order: &mut [usize], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    order.shuffle(rng);
}

/// On-disk model: header fields plus the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub layer_sizes: Vec<usize>,
    pub m: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    pub config: Option<TrainConfig>,
    pub params: Vec<f64>,
}

impl ModelFile {
    pub fn new(model: &RegressorModel, config: Option<TrainConfig>) -> Self {
        Self {
            version: MODEL_VERSION.to_string(),
            layer_sizes: model.layer_sizes.clone(),
            m: model.m,
            seed: model.seed,
            leaky_slope: model.leaky_slope,
            config,
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<RegressorModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::Version {
                expected: MODEL_VERSION.to_string(),
                found: self.version,
            });
        }
        let expected: usize = self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if self.layer_sizes.len() < 2
            || self.params.len() != expected
            || *self.layer_sizes.last().unwrap() != self.m * OUTPUTS_PER_HEAD
        {
            return Err(Error::Config(format!(
                "model layout mismatch: {} parameters for sizes {:?} and M = {}",
                self.params.len(),
                self.layer_sizes,
                self.m
            )));
        }
        Ok(RegressorModel {
            layer_sizes: self.layer_sizes,
            m: self.m,
            seed: self.seed,
            leaky_slope: self.leaky_slope,
            params: self.params,
        })
    }
}
