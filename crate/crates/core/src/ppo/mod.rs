//! Proximal policy optimization for continuous actions.
//!
//! Actor and critic share a tanh trunk; the policy is a diagonal Gaussian
//! with a state-independent log standard deviation. All weights live in one
//! flat `Vec<f64>` and are read through matrix views, which keeps Adam,
//! checkpoints and gradient checks trivial.
//!
//! Rollouts start every worker from a fresh episode and derive all random
//! draws from `(seed, update, worker)`, so a checkpoint of weights, optimizer
//! and normalizer is enough to resume bit-identically.

pub mod checkpoint;
pub mod toy;

use std::path::PathBuf;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::endoscope::ACTION_LIMIT;
use crate::env::{EnvError, Environment};
use crate::seed::{derive, substream};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_HIDDEN: [usize; 4] = [256, 128, 64, 32];
const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss in update {update}, minibatch {minibatch}; dump:\n{dump}")]
    NonFinite { update: usize, minibatch: usize, dump: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config hash mismatch: checkpoint {checkpoint}, current {current}")]
    ConfigMismatch { checkpoint: String, current: String },
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_timesteps: usize,
    /// Steps per update summed over workers.
    pub rollout_len: usize,
    pub num_envs: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Rewards are multiplied by this before learning; curves stay raw.
    pub reward_scale: f64,
    pub init_log_std: f64,
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 300_000,
            rollout_len: 2048,
            num_envs: 8,
            minibatch_size: 256,
            epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            learning_rate: 3e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 1e-3,
            init_log_std: (0.2f64).ln(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Usage(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if self.num_envs == 0 || self.rollout_len < self.num_envs {
            return bad("rollout_len must be at least num_envs >= 1");
        }
        if self.minibatch_size == 0 || self.epochs == 0 {
            return bad("minibatch_size and epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.reward_scale > 0.0) {
            return bad("learning_rate and reward_scale must be > 0");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        Ok(())
    }

    pub fn steps_per_worker(&self) -> usize {
        self.rollout_len / self.num_envs
    }

    pub fn steps_per_update(&self) -> usize {
        self.steps_per_worker() * self.num_envs
    }

    pub fn total_updates(&self) -> usize {
        self.total_timesteps.div_ceil(self.steps_per_update())
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.b + self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    trunk: Vec<Dense>,
    policy: Dense,
    value: Dense,
    log_std: usize,
    len: usize,
}

impl Layout {
    fn new(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        let mut off = 0;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let d = Dense {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            };
            off = d.end();
            d
        };
        let mut trunk = Vec::new();
        let mut prev = obs_dim;
        for &h in hidden {
            trunk.push(dense(prev, h));
            prev = h;
        }
        let policy = dense(prev, act_dim);
        let value = dense(prev, 1);
        let log_std = off;
        Self {
            trunk,
            policy,
            value,
            log_std,
            len: log_std + act_dim,
        }
    }
}

/// Network weights: trunk, policy-mean head, value head and log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub data: Vec<f64>,
    layout: Layout,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each trunk layer's output, one column per sample.
    pub activations: Vec<DMatrix<f64>>,
    pub mean: DMatrix<f64>,
    pub value: DVector<f64>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let tall = rows.max(cols);
    let short = rows.min(cols);
    let g = DMatrix::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    m * gain
}

impl PolicyParams {
    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        let layout = Layout::new(obs_dim, act_dim, hidden);
        Self {
            obs_dim,
            act_dim,
            hidden: hidden.to_vec(),
            data: vec![0.0; layout.len],
            layout,
        }
    }

    /// Orthogonal weights (gain sqrt 2 in the trunk, 0.01 on the policy head,
    /// 1 on the value head), zero biases.
    pub fn init(obs_dim: usize, act_dim: usize, hidden: &[usize], log_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(obs_dim, act_dim, hidden);
        let mut layers: Vec<(Dense, f64)> = p.layout.trunk.iter().map(|&d| (d, std::f64::consts::SQRT_2)).collect();
        layers.push((p.layout.policy, 0.01));
        layers.push((p.layout.value, 1.0));
        for (d, gain) in layers {
            let w = orthogonal(d.fan_out, d.fan_in, gain, rng);
            p.data[d.w..d.b].copy_from_slice(w.as_slice());
        }
        let ls = p.layout.log_std;
        p.data[ls..ls + act_dim].fill(log_std.clamp(LOG_STD_MIN, LOG_STD_MAX));
        p
    }

    pub fn from_data(obs_dim: usize, act_dim: usize, hidden: &[usize], data: Vec<f64>) -> Result<Self, PpoError> {
        let mut p = Self::zeros(obs_dim, act_dim, hidden);
        if data.len() != p.data.len() {
            return Err(PpoError::Usage(format!("expected {} parameters, got {}", p.data.len(), data.len())));
        }
        p.data = data;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.data[self.layout.log_std..]
    }

    fn log_std_range(&self) -> std::ops::Range<usize> {
        self.layout.log_std..self.layout.len
    }

    fn weights(&self, d: &Dense) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data[d.w..d.b], d.fan_out, d.fan_in)
    }

    fn bias(&self, d: &Dense) -> &[f64] {
        &self.data[d.b..d.end()]
    }

    /// `W x + b` per column with a fixed summation order, so a batch and
    /// its rows evaluated one at a time agree bit for bit.
    fn affine(&self, d: &Dense, x: &DMatrix<f64>) -> DMatrix<f64> {
        let w = &self.data[d.w..d.b];
        let b = self.bias(d);
        let mut z = DMatrix::zeros(d.fan_out, x.ncols());
        for (mut zc, xc) in z.column_iter_mut().zip(x.column_iter()) {
            let zc = zc.as_mut_slice();
            zc.copy_from_slice(b);
            for (i, &xi) in xc.iter().enumerate() {
                let col = &w[i * d.fan_out..(i + 1) * d.fan_out];
                for (zo, wo) in zc.iter_mut().zip(col) {
                    *zo += wo * xi;
                }
            }
        }
        z
    }

    /// Batched forward pass; `x` holds one observation per column.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<ForwardCache, PpoError> {
        if x.nrows() != self.obs_dim {
            return Err(PpoError::Usage(format!("observation has {} components, expected {}", x.nrows(), self.obs_dim)));
        }
        let mut activations = Vec::with_capacity(self.layout.trunk.len() + 1);
        activations.push(x.clone());
        for d in &self.layout.trunk {
            let z = self.affine(d, activations.last().unwrap());
            activations.push(z.map(f64::tanh));
        }
        let h = activations.last().unwrap();
        let mean = self.affine(&self.layout.policy, h);
        let value = DVector::from_iterator(h.ncols(), self.affine(&self.layout.value, h).iter().copied());
        Ok(ForwardCache { activations, mean, value })
    }

    /// `(mean, log_std, value)` for a single observation.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64), PpoError> {
        let x = DMatrix::from_column_slice(obs.len(), 1, obs);
        let c = self.forward_batch(&x)?;
        Ok((c.mean.as_slice().to_vec(), self.log_std().to_vec(), c.value[0]))
    }

    /// Gradient of a scalar loss given its derivatives with respect to the
    /// means, values and log-std.
    pub fn backward(&self, cache: &ForwardCache, d_mean: &DMatrix<f64>, d_value: &DVector<f64>, d_log_std: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.data.len()];
        let n = self.layout.trunk.len();
        let h = &cache.activations[n];
        let d_value_row = d_value.transpose();
        let mut upstream = self.weights(&self.layout.policy).transpose() * d_mean;
        upstream += self.weights(&self.layout.value).transpose() * &d_value_row;
        for (d, delta) in [(&self.layout.policy, d_mean.clone()), (&self.layout.value, DMatrix::from_row_slice(1, d_value.len(), d_value.as_slice()))] {
            let gw = &delta * h.transpose();
            g[d.w..d.b].copy_from_slice(gw.as_slice());
            for (k, row) in delta.row_iter().enumerate() {
                g[d.b + k] = row.sum();
            }
        }
        for l in (0..n).rev() {
            let d = &self.layout.trunk[l];
            let out = &cache.activations[l + 1];
            let dz = upstream.zip_map(out, |u, y| u * (1.0 - y * y));
            let gw = &dz * cache.activations[l].transpose();
            g[d.w..d.b].copy_from_slice(gw.as_slice());
            for (k, row) in dz.row_iter().enumerate() {
                g[d.b + k] = row.sum();
            }
            if l > 0 {
                upstream = self.weights(d).transpose() * dz;
            }
        }
        let r = self.log_std_range();
        g[r].copy_from_slice(d_log_std);
        g
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + LOG_2PI)).sum()
}

/// Draws `clamp(mean + sigma z)`; the log-probability is that of the
/// unclamped draw.
pub fn sample_action(params: &PolicyParams, obs: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, f64), PpoError> {
    let (mean, log_std, _) = params.forward(obs)?;
    let (raw, lp) = sample_raw(&mean, &log_std, rng);
    Ok((clamp_action(&raw), lp))
}

pub fn clamp_action(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|a| a.clamp(-ACTION_LIMIT, ACTION_LIMIT)).collect()
}

/// Unclamped Gaussian draw and its log-probability. Learners store this
/// draw; the environment receives its clamp.
pub fn sample_raw(mean: &[f64], log_std: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let z: f64 = StandardNormal.sample(rng);
            m + ls.exp() * z
        })
        .collect();
    let lp = gaussian_log_prob(&raw, mean, log_std);
    (raw, lp)
}

/// Running mean and variance of observations (parallel Welford merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const NORM_CLIP: f64 = 10.0;

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 1e-4,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.mean.len();
        let mut bm = vec![0.0; dim];
        for o in batch {
            for (m, v) in bm.iter_mut().zip(o) {
                *m += v / n;
            }
        }
        let mut bv = vec![0.0; dim];
        for o in batch {
            for ((s, v), m) in bv.iter_mut().zip(o).zip(&bm) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = bm[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bv[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((o, m), v)| ((o - m) / (v + 1e-8).sqrt()).clamp(-NORM_CLIP, NORM_CLIP))
            .collect()
    }
}

/// Trained policy plus the observation statistics it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub params: PolicyParams,
    pub normalizer: Normalizer,
}

impl Agent {
    /// Deterministic action: clamped mean.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, PpoError> {
        let (mean, _, _) = self.params.forward(&self.normalizer.apply(obs))?;
        Ok(clamp_action(&mean))
    }
}

/// Transitions from one rollout, worker segments stored back to back.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Episode segment ends without termination (time limit or rollout end);
    /// the return is bootstrapped from `next_values`.
    pub truncated: Vec<bool>,
    pub next_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>, log_prob: f64, reward: f64, value: f64) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.terminated.push(false);
        self.truncated.push(false);
        self.next_values.push(0.0);
    }

    pub fn append(&mut self, other: RolloutBuffer) {
        self.obs.extend(other.obs);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.terminated.extend(other.terminated);
        self.truncated.extend(other.truncated);
        self.next_values.extend(other.next_values);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    fn check(&self) -> Result<(), PpoError> {
        let n = self.len();
        let lens = [
            self.obs.len(),
            self.actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.terminated.len(),
            self.truncated.len(),
            self.next_values.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(PpoError::Usage("rollout buffer arrays differ in length".into()));
        }
        if n > 0 && !(self.terminated[n - 1] || self.truncated[n - 1]) {
            return Err(PpoError::Usage("last step must end its segment".into()));
        }
        Ok(())
    }
}

/// GAE: `delta_t = r_t + gamma V_{t+1} (1 - done) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done) A_{t+1}`. Terminated steps do not
/// bootstrap; truncated ones bootstrap from their stored next value.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64) -> Result<(), PpoError> {
    buf.check()?;
    let n = buf.len();
    buf.advantages = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, cont) = if buf.terminated[t] {
            (0.0, 0.0)
        } else if buf.truncated[t] {
            (buf.next_values[t], 0.0)
        } else {
            (buf.values[t + 1], 1.0)
        };
        let delta = buf.rewards[t] + gamma * next_value - buf.values[t];
        carry = delta + gamma * lambda * cont * carry;
        buf.advantages[t] = carry;
    }
    buf.returns = buf.advantages.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
    Ok(())
}

/// Shifts and scales to mean 0, std 1 (std floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Clip fraction of the very first minibatch (ratio is exactly 1 there).
    pub first_clip_fraction: f64,
}

/// Loss terms and gradient for one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchLoss {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad: Vec<f64>,
}

/// Clipped-surrogate loss `-E[min(rA, clip(r)A)] + c_v E[(V-R)^2] - c_e H`
/// and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_loss(
    params: &PolicyParams,
    obs: &DMatrix<f64>,
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    clip_eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<MinibatchLoss, PpoError> {
    let b = obs.ncols();
    let bf = b as f64;
    let cache = params.forward_batch(obs)?;
    let log_std = params.log_std().to_vec();
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let act_dim = params.act_dim;
    let mut d_mean = DMatrix::zeros(act_dim, b);
    let mut d_value = DVector::zeros(b);
    let mut d_log_std = vec![0.0; act_dim];
    let (mut pl, mut vl, mut clipped, mut kl) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..b {
        let mean = cache.mean.column(i);
        let lp = gaussian_log_prob(&actions[i], mean.as_slice(), &log_std);
        let ratio = (lp - old_log_probs[i]).exp();
        let a = advantages[i];
        let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let (s1, s2) = (ratio * a, clipped_ratio * a);
        pl -= s1.min(s2) / bf;
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1.0 / bf;
        }
        kl += ((ratio - 1.0) - (lp - old_log_probs[i])) / bf;
        // the unclipped branch carries gradient unless the clipped one is
        // strictly smaller
        let d_lp = if s1 <= s2 { -a * ratio / bf } else { 0.0 };
        if d_lp != 0.0 {
            for j in 0..act_dim {
                let diff = actions[i][j] - mean[j];
                d_mean[(j, i)] = d_lp * diff * inv_var[j];
                d_log_std[j] += d_lp * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let err = cache.value[i] - returns[i];
        vl += err * err / bf;
        d_value[i] = value_coef * 2.0 * err / bf;
    }
    let entropy = gaussian_entropy(&log_std);
    for g in &mut d_log_std {
        *g -= entropy_coef;
    }
    let grad = params.backward(&cache, &d_mean, &d_value, &d_log_std);
    Ok(MinibatchLoss {
        total: pl + value_coef * vl - entropy_coef * entropy,
        policy_loss: pl,
        value_loss: vl,
        entropy,
        clip_fraction: clipped,
        approx_kl: kl,
        grad,
    })
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-12);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

fn dump_minibatch(idx: &[usize], buf: &RolloutBuffer) -> String {
    let rows: Vec<serde_json::Value> = idx
        .iter()
        .map(|&i| {
            serde_json::json!({
                "index": i,
                "obs": buf.obs[i],
                "action": buf.actions[i],
                "log_prob": buf.log_probs[i],
                "advantage": buf.advantages[i],
                "return": buf.returns[i],
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).unwrap_or_default()
}

/// Several epochs of minibatch Adam on the clipped objective. `update` only
/// names the minibatch shuffling stream.
pub fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &TrainConfig,
    update: usize,
) -> Result<UpdateMetrics, PpoError> {
    let n = buf.len();
    if n == 0 || buf.advantages.len() != n || buf.returns.len() != n {
        return Err(PpoError::Usage("rollout buffer lacks advantages; run compute_gae first".into()));
    }
    let mut adv = buf.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut adv);
    }
    let mut rng = substream(cfg.seed, "minibatch", update as u64);
    let mut order: Vec<usize> = (0..n).collect();
    let mut m = UpdateMetrics::default();
    let mut batches = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (k, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let obs = DMatrix::from_fn(params.obs_dim, idx.len(), |r, c| buf.obs[idx[c]][r]);
            let actions: Vec<Vec<f64>> = idx.iter().map(|&i| buf.actions[i].clone()).collect();
            let old: Vec<f64> = idx.iter().map(|&i| buf.log_probs[i]).collect();
            let a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| buf.returns[i]).collect();
            let mut loss = minibatch_loss(params, &obs, &actions, &old, &a, &ret, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)?;
            if !loss.total.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
                return Err(PpoError::NonFinite {
                    update,
                    minibatch: epoch * n.div_ceil(cfg.minibatch_size) + k,
                    dump: dump_minibatch(idx, buf),
                });
            }
            if epoch == 0 && k == 0 {
                m.first_clip_fraction = loss.clip_fraction;
            }
            clip_grad_norm(&mut loss.grad, cfg.max_grad_norm);
            adam.step(&mut params.data, &loss.grad, cfg.learning_rate);
            let r = params.log_std_range();
            for ls in &mut params.data[r] {
                *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
            m.policy_loss += loss.policy_loss;
            m.value_loss += loss.value_loss;
            m.entropy += loss.entropy;
            m.clip_fraction += loss.clip_fraction;
            m.approx_kl += loss.approx_kl;
            batches += 1.0;
        }
    }
    m.policy_loss /= batches;
    m.value_loss /= batches;
    m.entropy /= batches;
    m.clip_fraction /= batches;
    m.approx_kl /= batches;
    if !params.all_finite() {
        return Err(PpoError::NonFinite {
            update,
            minibatch: 0,
            dump: "parameters became non-finite".into(),
        });
    }
    Ok(m)
}

/// One learning-curve row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timestep: usize,
    /// Mean raw episode reward over episodes finished in this rollout
    /// (NaN when none finished).
    pub mean_reward: f64,
    /// Success rate in percent over the same episodes.
    pub sr: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

pub const CURVE_HEADER: &str = "timestep,mean_reward,sr,episodes,policy_loss,value_loss,entropy,clip_fraction,approx_kl";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.timestep, p.mean_reward, p.sr, p.episodes, p.policy_loss, p.value_loss, p.entropy, p.clip_fraction, p.approx_kl
        ));
    }
    s
}

/// Finished-episode summary from a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub reward: f64,
    pub success: bool,
}

/// Collects `steps` transitions from one worker starting with a fresh
/// episode. Rewards in the buffer are scaled; episode stats are raw.
pub fn collect_segment<E: Environment>(
    env: &mut E,
    agent: &Agent,
    steps: usize,
    reward_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutBuffer, Vec<EpisodeStat>, Vec<Vec<f64>>), PpoError> {
    let mut buf = RolloutBuffer::default();
    let mut stats = Vec::new();
    let mut raw_obs = Vec::with_capacity(steps);
    let mut obs = env.reset(rng.random())?;
    let mut ep_reward = 0.0;
    for t in 0..steps {
        let x = agent.normalizer.apply(&obs);
        let (mean, log_std, value) = agent.params.forward(&x)?;
        let (action, lp) = sample_raw(&mean, &log_std, rng);
        let tr = env.step(&clamp_action(&action))?;
        raw_obs.push(obs.clone());
        ep_reward += tr.reward;
        buf.push(x, action, lp, tr.reward * reward_scale, value);
        let last = t + 1 == steps;
        if tr.terminated {
            *buf.terminated.last_mut().unwrap() = true;
        } else if tr.truncated || last {
            *buf.truncated.last_mut().unwrap() = true;
            let (_, _, v) = agent.params.forward(&agent.normalizer.apply(&tr.obs))?;
            *buf.next_values.last_mut().unwrap() = v;
        }
        if tr.terminated || tr.truncated {
            stats.push(EpisodeStat {
                reward: ep_reward,
                success: tr.success,
            });
            ep_reward = 0.0;
            if !last {
                obs = env.reset(rng.random())?;
            }
        } else {
            obs = tr.obs;
        }
    }
    Ok((buf, stats, raw_obs))
}

/// Complete learner state between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub agent: Agent,
    pub adam: Adam,
    pub update: usize,
    pub timestep: usize,
    pub curve: Vec<CurvePoint>,
}

impl TrainState {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: &TrainConfig) -> Self {
        let mut rng = substream(cfg.seed, "policy_init", 0);
        let params = PolicyParams::init(obs_dim, act_dim, &cfg.hidden, cfg.init_log_std, &mut rng);
        let n = params.len();
        Self {
            agent: Agent {
                params,
                normalizer: Normalizer::new(obs_dim),
            },
            adam: Adam::new(n),
            update: 0,
            timestep: 0,
            curve: Vec::new(),
        }
    }
}

/// Runs rollouts on `workers` (one env each), in worker order.
fn rollout<E: Environment + Send>(
    envs: &mut [E],
    agent: &Agent,
    cfg: &TrainConfig,
    update: usize,
    parallel: bool,
) -> Result<Vec<(RolloutBuffer, Vec<EpisodeStat>, Vec<Vec<f64>>)>, PpoError> {
    let steps = cfg.steps_per_worker();
    let run = |(w, env): (usize, &mut E)| {
        let mut rng = substream(cfg.seed, "rollout", (update as u64) << 20 | w as u64);
        collect_segment(env, agent, steps, cfg.reward_scale, &mut rng)
    };
    if parallel {
        use rayon::prelude::*;
        envs.par_iter_mut().enumerate().map(run).collect()
    } else {
        envs.iter_mut().enumerate().map(run).collect()
    }
}

/// Hooks and limits for [`train`].
pub struct TrainOptions<'a> {
    /// Called after each update with the new state (checkpointing, logging).
    pub on_update: Option<&'a mut dyn FnMut(&TrainState) -> Result<(), PpoError>>,
    /// Stop after this many updates in total (simulated interruption).
    pub stop_after: Option<usize>,
    /// Collect worker rollouts on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            on_update: None,
            stop_after: None,
            parallel: false,
        }
    }
}

/// PPO training loop. `factory(w)` builds the scene for worker `w`; pass a
/// `state` to resume.
pub fn train<E, F>(factory: F, cfg: &TrainConfig, state: Option<TrainState>, mut opts: TrainOptions<'_>) -> Result<TrainState, PpoError>
where
    E: Environment + Send,
    F: Fn(usize) -> Result<E, EnvError>,
{
    cfg.validate()?;
    let mut envs: Vec<E> = (0..cfg.num_envs).map(&factory).collect::<Result<_, _>>()?;
    let (obs_dim, act_dim) = (envs[0].obs_dim(), envs[0].act_dim());
    let mut st = state.unwrap_or_else(|| TrainState::new(obs_dim, act_dim, cfg));
    if st.agent.params.obs_dim != obs_dim || st.agent.params.act_dim != act_dim {
        return Err(PpoError::Usage("policy dimensions do not match the environment".into()));
    }
    let total = cfg.total_updates();
    while st.update < total && opts.stop_after.is_none_or(|s| st.update < s) {
        let parts = rollout(&mut envs, &st.agent, cfg, st.update, opts.parallel)?;
        let mut buf = RolloutBuffer::default();
        let mut stats = Vec::new();
        let mut raw = Vec::new();
        for (b, s, r) in parts {
            buf.append(b);
            stats.extend(s);
            raw.extend(r);
        }
        compute_gae(&mut buf, cfg.gamma, cfg.gae_lambda)?;
        let m = ppo_update(&mut st.agent.params, &mut st.adam, &buf, cfg, st.update)?;
        st.agent.normalizer.update(&raw);
        st.timestep += buf.len();
        st.update += 1;
        let episodes = stats.len();
        let (mean_reward, sr) = if episodes == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                stats.iter().map(|s| s.reward).sum::<f64>() / episodes as f64,
                100.0 * stats.iter().filter(|s| s.success).count() as f64 / episodes as f64,
            )
        };
        st.curve.push(CurvePoint {
            timestep: st.timestep,
            mean_reward,
            sr,
            episodes,
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            entropy: m.entropy,
            clip_fraction: m.clip_fraction,
            approx_kl: m.approx_kl,
        });
        if let Some(cb) = opts.on_update.as_mut() {
            cb(&st)?;
        }
    }
    Ok(st)
}

/// Seed used for the `k`-th evaluation episode of a run.
pub fn eval_seed(seed: u64, k: usize) -> u64 {
    derive(seed, "eval", k as u64)
}
