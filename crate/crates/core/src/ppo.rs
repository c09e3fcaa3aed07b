//! Rollouts, advantage estimation and the PPO update.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{COMMAND_DIM, GAIT_DESCRIPTOR_DIM};
use crate::nets::{actor_input, BundleSpec, gaussian_log_prob, gaussian_sample, Adam, BundleGrads, NetworkBundle, ACTION_DIM, LATENT_DIM, VELOCITY_DIM};
use crate::obsbuild::{CRITIC_DIM, HISTORY_DIM};
use crate::rewards::{NUM_REWARD_ROWS, REWARD_ROW_NAMES};
use crate::sim::VecEnv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    /// Scale the learning rate to keep the per-minibatch KL near `desired_kl`.
    pub adaptive_kl: bool,
    pub desired_kl: f64,
    pub min_learning_rate: f64,
    pub max_learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub estimator_coef: f64,
    pub max_grad_norm: f64,
    /// Multiplies env rewards before they enter returns and advantages. Logged
    /// rewards are unscaled.
    pub reward_scale: f64,
    pub normalize_advantages: bool,
    /// Aborted (non-finite) updates in a row before training stops.
    pub max_bad_updates: usize,
    /// Rows per gradient chunk; chunks are reduced in a fixed order.
    pub grad_chunk: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            horizon: 24,
            learning_rate: 1e-3,
            adaptive_kl: true,
            desired_kl: 0.01,
            min_learning_rate: 1e-5,
            max_learning_rate: 1e-2,
            value_coef: 1.0,
            entropy_coef: 0.01,
            estimator_coef: 1.0,
            max_grad_norm: 1.0,
            reward_scale: 0.02,
            normalize_advantages: true,
            max_bad_updates: 3,
            grad_chunk: 1536,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, num_envs: usize) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err("gamma and lambda must lie in (0, 1]".into());
        }
        if !(self.clip > 0.0) {
            return Err("clip must be > 0".into());
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.grad_chunk == 0 {
            return Err("epochs, minibatches, horizon and grad_chunk must be > 0".into());
        }
        if num_envs * self.horizon < self.minibatches {
            return Err(format!("{num_envs} envs x {} steps cannot fill {} minibatches", self.horizon, self.minibatches));
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err("learning_rate, max_grad_norm and reward_scale must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("training stopped after {count} consecutive non-finite updates at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, count: usize, detail: String },
    #[error("metrics sink failed: {0}")]
    Sink(String),
}

/// One horizon of experience. Sample `t·N + i` belongs to step `t` of env `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub num_envs: usize,
    pub horizon: usize,
    pub history: Array2<f64>,
    pub command: Array2<f64>,
    pub gait: Array2<f64>,
    pub critic: Array2<f64>,
    pub lin_vel: Array2<f64>,
    pub actions: Array2<f64>,
    pub means: Array2<f64>,
    pub log_std: Array1<f64>,
    pub log_probs: Array1<f64>,
    /// `(horizon, num_envs)`; timeouts already include the bootstrap term.
    pub rewards: Array2<f64>,
    pub values: Array2<f64>,
    pub dones: Array2<f64>,
    pub bootstrap: Array1<f64>,
    pub stats: RolloutStats,
}

impl RolloutBatch {
    /// `(num_envs, horizon)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.num_envs, self.horizon)
    }

    pub fn len(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Environment-side statistics gathered while collecting a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutStats {
    pub row_sums: [f64; NUM_REWARD_ROWS],
    pub group_sums: [f64; 4],
    pub total_sum: f64,
    pub samples: usize,
    pub finished_lengths: Vec<usize>,
    pub finished_returns: Vec<f64>,
    pub running_lengths: Vec<usize>,
    pub failures: usize,
}

impl RolloutStats {
    pub fn mean_episode_len(&self) -> f64 {
        let lens = if self.finished_lengths.is_empty() { &self.running_lengths } else { &self.finished_lengths };
        if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<usize>() as f64 / lens.len() as f64
        }
    }
}

fn observation_batch(venv: &VecEnv) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = venv.len();
    let mut history = Array2::zeros((n, HISTORY_DIM));
    let mut command = Array2::zeros((n, COMMAND_DIM));
    let mut gait = Array2::zeros((n, GAIT_DESCRIPTOR_DIM));
    let mut critic = Array2::zeros((n, CRITIC_DIM));
    let mut lin_vel = Array2::zeros((n, VELOCITY_DIM));
    for (i, obs) in venv.observations().enumerate() {
        history.row_mut(i).assign(&ArrayView1::from(&obs.history[..]));
        command.row_mut(i).assign(&ArrayView1::from(&obs.command[..]));
        gait.row_mut(i).assign(&ArrayView1::from(&obs.gait[..]));
        critic.row_mut(i).assign(&ArrayView1::from(&obs.critic[..]));
        lin_vel.row_mut(i).assign(&ArrayView1::from(&obs.lin_vel[..]));
    }
    (history, command, gait, critic, lin_vel)
}

/// Step every env `horizon` times with actions sampled from the current policy.
/// Actions are drawn on the calling thread in env order, so the batch is a
/// deterministic function of the env states, the bundle and `rng`.
pub fn collect_rollout(venv: &mut VecEnv, bundle: &NetworkBundle, horizon: usize, gamma: f64, reward_scale: f64, rng: &mut ChaCha8Rng) -> RolloutBatch {
    let n = venv.len();
    let total = n * horizon;
    let mut batch = RolloutBatch {
        num_envs: n,
        horizon,
        history: Array2::zeros((total, HISTORY_DIM)),
        command: Array2::zeros((total, COMMAND_DIM)),
        gait: Array2::zeros((total, GAIT_DESCRIPTOR_DIM)),
        critic: Array2::zeros((total, CRITIC_DIM)),
        lin_vel: Array2::zeros((total, VELOCITY_DIM)),
        actions: Array2::zeros((total, ACTION_DIM)),
        means: Array2::zeros((total, ACTION_DIM)),
        log_std: bundle.log_std.clone(),
        log_probs: Array1::zeros(total),
        rewards: Array2::zeros((horizon, n)),
        values: Array2::zeros((horizon, n)),
        dones: Array2::zeros((horizon, n)),
        bootstrap: Array1::zeros(n),
        stats: RolloutStats::default(),
    };
    for t in 0..horizon {
        let (history, command, gait, critic, lin_vel) = observation_batch(venv);
        let out = bundle.policy_forward(history.view(), command.view(), gait.view());
        let values = bundle.critic_forward(critic.view());
        let mut actions = Vec::with_capacity(n);
        let rows = t * n..(t + 1) * n;
        for i in 0..n {
            let a = gaussian_sample(out.mean.row(i), bundle.log_std.view(), rng);
            batch.log_probs[t * n + i] = gaussian_log_prob(a.view(), out.mean.row(i), bundle.log_std.view());
            batch.actions.row_mut(t * n + i).assign(&a);
            actions.push(std::array::from_fn(|j| a[j]));
        }
        batch.history.slice_mut(s![rows.clone(), ..]).assign(&history);
        batch.command.slice_mut(s![rows.clone(), ..]).assign(&command);
        batch.gait.slice_mut(s![rows.clone(), ..]).assign(&gait);
        batch.critic.slice_mut(s![rows.clone(), ..]).assign(&critic);
        batch.lin_vel.slice_mut(s![rows.clone(), ..]).assign(&lin_vel);
        batch.means.slice_mut(s![rows, ..]).assign(&out.mean);
        batch.values.row_mut(t).assign(&values);

        let records = venv.step(&actions);
        let stats = &mut batch.stats;
        for (i, rec) in records.iter().enumerate() {
            let mut r = reward_scale * rec.reward.total;
            if rec.timed_out() {
                r += gamma * values[i];
            }
            batch.rewards[[t, i]] = r;
            batch.dones[[t, i]] = if rec.done.is_some() { 1.0 } else { 0.0 };
            for (acc, row) in stats.row_sums.iter_mut().zip(rec.reward.rows) {
                *acc += row;
            }
            for (acc, g) in stats.group_sums.iter_mut().zip([rec.reward.r_g, rec.reward.r_l, rec.reward.r_s, rec.reward.r_c]) {
                *acc += g;
            }
            stats.total_sum += rec.reward.total;
            stats.samples += 1;
            if rec.done.is_some() {
                stats.finished_lengths.push(rec.episode_len);
                stats.finished_returns.push(rec.episode_return);
                if !rec.timed_out() {
                    stats.failures += 1;
                }
            }
        }
    }
    let (_, _, _, critic, _) = observation_batch(venv);
    batch.bootstrap = bundle.critic_forward(critic.view());
    batch.stats.running_lengths = venv.envs.iter().map(|e| e.state.step_count).collect();
    batch
}

/// Generalized advantage estimation over `(T, N)` arrays. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: ArrayView2<f64>,
    values: ArrayView2<f64>,
    dones: ArrayView2<f64>,
    bootstrap: ArrayView1<f64>,
    gamma: f64,
    lambda: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (t_len, n) = rewards.dim();
    let mut adv = Array2::zeros((t_len, n));
    for i in 0..n {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[i];
        for t in (0..t_len).rev() {
            let live = 1.0 - dones[[t, i]];
            let delta = rewards[[t, i]] + gamma * next_value * live - values[[t, i]];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[[t, i]] = next_adv;
            next_value = values[[t, i]];
        }
    }
    let returns = &adv + &values;
    (adv, returns)
}

/// Shift and scale to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut Array1<f64>) {
    let n = adv.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = adv.sum() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.mapv_inplace(|a| (a - mean) / std);
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1±ε)A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Training tensors for one minibatch.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub history: Array2<f64>,
    pub command: Array2<f64>,
    pub gait: Array2<f64>,
    pub critic: Array2<f64>,
    pub lin_vel: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_means: Array2<f64>,
    pub old_log_std: Array1<f64>,
    pub old_log_probs: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.history.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, range: std::ops::Range<usize>) -> Minibatch {
        let r = s![range.clone(), ..];
        Minibatch {
            history: self.history.slice(r).to_owned(),
            command: self.command.slice(r).to_owned(),
            gait: self.gait.slice(r).to_owned(),
            critic: self.critic.slice(r).to_owned(),
            lin_vel: self.lin_vel.slice(r).to_owned(),
            actions: self.actions.slice(r).to_owned(),
            old_means: self.old_means.slice(r).to_owned(),
            old_log_std: self.old_log_std.clone(),
            old_log_probs: self.old_log_probs.slice(s![range.clone()]).to_owned(),
            advantages: self.advantages.slice(s![range.clone()]).to_owned(),
            returns: self.returns.slice(s![range]).to_owned(),
        }
    }

    /// Gather rows `idx` of a rollout with precomputed advantages and returns (flattened `t·N + i`).
    pub fn gather(batch: &RolloutBatch, advantages: &Array1<f64>, returns: &Array1<f64>, idx: &[usize]) -> Minibatch {
        Minibatch {
            history: batch.history.select(Axis(0), idx),
            command: batch.command.select(Axis(0), idx),
            gait: batch.gait.select(Axis(0), idx),
            critic: batch.critic.select(Axis(0), idx),
            lin_vel: batch.lin_vel.select(Axis(0), idx),
            actions: batch.actions.select(Axis(0), idx),
            old_means: batch.means.select(Axis(0), idx),
            old_log_std: batch.log_std.clone(),
            old_log_probs: batch.log_probs.select(Axis(0), idx),
            advantages: advantages.select(Axis(0), idx),
            returns: returns.select(Axis(0), idx),
        }
    }
}

/// Minibatch losses (means over the minibatch) and their gradients.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub estimator_loss: f64,
    pub total: f64,
    /// Mean KL(old ‖ new) of the action distributions.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grads: BundleGrads,
}

impl LossOutput {
    pub fn is_finite(&self) -> bool {
        [self.policy_loss, self.value_loss, self.entropy, self.estimator_loss, self.total, self.approx_kl].iter().all(|x| x.is_finite())
    }
}

/// Sums over one chunk, each already divided by the full minibatch size.
struct ChunkResult {
    policy: f64,
    value: f64,
    estimator: f64,
    kl: f64,
    clipped: f64,
    grads: BundleGrads,
}

fn chunk_losses(bundle: &NetworkBundle, mb: &Minibatch, cfg: &PpoConfig, scale: f64) -> ChunkResult {
    let m = mb.len();
    let mut grads = BundleGrads::zeros_like(bundle);
    let std = bundle.std();
    let old_std = mb.old_log_std.mapv(f64::exp);

    let enc_tape = bundle.encoder.forward_tape(mb.history.view());
    let est_tape = bundle.estimator.forward_tape(mb.history.view());
    // the velocity estimate reaches the actor as a constant
    let input = actor_input(&enc_tape.output.view(), &est_tape.output.view(), &mb.command.view(), &mb.gait.view());
    let act_tape = bundle.actor.forward_tape(input.view());
    let crit_tape = bundle.critic.forward_tape(mb.critic.view());

    let mut d_mean = Array2::zeros((m, ACTION_DIM));
    let (mut policy, mut kl, mut clipped) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let mean = act_tape.output.row(i);
        let a = mb.actions.row(i);
        let logp = gaussian_log_prob(a, mean, bundle.log_std.view());
        let ratio = (logp - mb.old_log_probs[i]).exp();
        let adv = mb.advantages[i];
        policy -= clipped_objective(ratio, adv, cfg.clip) * scale;
        let outside = (adv >= 0.0 && ratio > 1.0 + cfg.clip) || (adv < 0.0 && ratio < 1.0 - cfg.clip);
        if outside {
            clipped += scale;
        } else {
            // d(−ρA)/d logπ = −ρA
            let d_logp = -ratio * adv * scale;
            for j in 0..ACTION_DIM {
                let z = (a[j] - mean[j]) / std[j];
                d_mean[[i, j]] += d_logp * z / std[j];
                grads.log_std[j] += d_logp * (z * z - 1.0);
            }
        }
        for j in 0..ACTION_DIM {
            let dm = mb.old_means[[i, j]] - mean[j];
            kl += scale
                * (bundle.log_std[j] - mb.old_log_std[j] + (old_std[j] * old_std[j] + dm * dm) / (2.0 * std[j] * std[j]) - 0.5);
        }
    }
    let g_input = bundle.actor.backward(&act_tape, d_mean.view(), &mut grads.actor);
    bundle.encoder.backward_params(&enc_tape, g_input.slice(s![.., 0..LATENT_DIM]), &mut grads.encoder);

    let mut value = 0.0;
    let mut d_value = Array2::zeros((m, 1));
    for i in 0..m {
        let e = crit_tape.output[[i, 0]] - mb.returns[i];
        value += e * e * scale;
        d_value[[i, 0]] = 2.0 * e * scale * cfg.value_coef;
    }
    bundle.critic.backward_params(&crit_tape, d_value.view(), &mut grads.critic);

    let diff = &est_tape.output - &mb.lin_vel;
    let estimator = diff.iter().map(|x| x * x).sum::<f64>() * scale;
    let d_est = diff * (2.0 * scale * cfg.estimator_coef);
    bundle.estimator.backward_params(&est_tape, d_est.view(), &mut grads.estimator);

    ChunkResult { policy, value, estimator, kl, clipped, grads }
}

/// PPO, value, entropy and estimator losses with gradients of
/// `policy + value_coef·value − entropy_coef·entropy + estimator_coef·estimator`.
pub fn ppo_losses(bundle: &NetworkBundle, mb: &Minibatch, cfg: &PpoConfig) -> LossOutput {
    let m = mb.len();
    let scale = 1.0 / m.max(1) as f64;
    let chunks: Vec<std::ops::Range<usize>> = (0..m).step_by(cfg.grad_chunk.max(1)).map(|a| a..(a + cfg.grad_chunk).min(m)).collect();
    let parts: Vec<ChunkResult> = chunks.into_par_iter().map(|r| chunk_losses(bundle, &mb.rows(r), cfg, scale)).collect();

    let mut grads = BundleGrads::zeros_like(bundle);
    let (mut policy, mut value, mut estimator, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &parts {
        policy += p.policy;
        value += p.value;
        estimator += p.estimator;
        kl += p.kl;
        clipped += p.clipped;
        grads.encoder.add_assign(&p.grads.encoder);
        grads.estimator.add_assign(&p.grads.estimator);
        grads.actor.add_assign(&p.grads.actor);
        grads.critic.add_assign(&p.grads.critic);
        grads.log_std += &p.grads.log_std;
    }
    let entropy = crate::nets::gaussian_entropy(bundle.log_std.view());
    grads.log_std -= cfg.entropy_coef;
    let total = policy + cfg.value_coef * value - cfg.entropy_coef * entropy + cfg.estimator_coef * estimator;
    LossOutput { policy_loss: policy, value_loss: value, entropy, estimator_loss: estimator, total, approx_kl: kl, clip_fraction: clipped, grads }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub steps: usize,
    pub mean_r_t: f64,
    pub mean_r_g: f64,
    pub mean_r_l: f64,
    pub mean_r_s: f64,
    pub mean_r_c: f64,
    pub rows: [f64; NUM_REWARD_ROWS],
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub estimator_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub learning_rate: f64,
    pub mean_episode_len: f64,
    pub episodes_finished: usize,
    pub failures: usize,
    pub skipped_updates: usize,
}

impl IterationMetrics {
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["iteration", "steps", "mean_r_t", "mean_r_g", "mean_r_l", "mean_r_s", "mean_r_c"].map(String::from).to_vec();
        h.extend(REWARD_ROW_NAMES.iter().map(|n| format!("row_{n}")));
        h.extend(
            [
                "policy_loss",
                "value_loss",
                "entropy",
                "estimator_loss",
                "approx_kl",
                "clip_fraction",
                "learning_rate",
                "mean_episode_len",
                "episodes_finished",
                "failures",
                "skipped_updates",
            ]
            .map(String::from),
        );
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![self.iteration.to_string(), self.steps.to_string()];
        r.extend([self.mean_r_t, self.mean_r_g, self.mean_r_l, self.mean_r_s, self.mean_r_c].map(|x| x.to_string()));
        r.extend(self.rows.iter().map(|x| x.to_string()));
        r.extend(
            [self.policy_loss, self.value_loss, self.entropy, self.estimator_loss, self.approx_kl, self.clip_fraction, self.learning_rate, self.mean_episode_len]
                .map(|x| x.to_string()),
        );
        r.extend([self.episodes_finished, self.failures, self.skipped_updates].map(|x| x.to_string()));
        r
    }
}

/// Receives every iteration's metrics and the current parameters.
pub trait TrainSink {
    fn on_iteration(&mut self, metrics: &IterationMetrics, bundle: &NetworkBundle) -> Result<(), String>;

    fn on_finish(&mut self, _bundle: &NetworkBundle) -> Result<(), String> {
        Ok(())
    }
}

impl TrainSink for Vec<IterationMetrics> {
    fn on_iteration(&mut self, metrics: &IterationMetrics, _bundle: &NetworkBundle) -> Result<(), String> {
        self.push(metrics.clone());
        Ok(())
    }
}

// Env `i` draws from stream `i` of the run seed; the trainer keeps clear of those.
const SAMPLING_STREAM: u64 = u64::MAX;
const INIT_STREAM: u64 = u64::MAX - 1;

/// Freshly initialized networks for a run seed.
pub fn init_bundle(spec: &BundleSpec, seed: u64) -> NetworkBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    NetworkBundle::new(spec, &mut rng)
}

/// PPO state across iterations.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: PpoConfig,
    pub bundle: NetworkBundle,
    pub venv: VecEnv,
    adam: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    steps: usize,
    bad_updates: usize,
}

impl Trainer {
    pub fn new(cfg: PpoConfig, bundle: NetworkBundle, venv: VecEnv, seed: u64) -> Result<Self, TrainError> {
        cfg.validate(venv.len()).map_err(TrainError::Config)?;
        let adam = Adam::new(cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLING_STREAM);
        Ok(Trainer { cfg, bundle, venv, adam, rng, iteration: 0, steps: 0, bad_updates: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam.lr
    }

    /// Collect one rollout and run the PPO epochs on it.
    pub fn iterate(&mut self) -> Result<IterationMetrics, TrainError> {
        let cfg = self.cfg.clone();
        let batch = collect_rollout(&mut self.venv, &self.bundle, cfg.horizon, cfg.gamma, cfg.reward_scale, &mut self.rng);
        self.steps += batch.len();
        let (adv, ret) = compute_gae(batch.rewards.view(), batch.values.view(), batch.dones.view(), batch.bootstrap.view(), cfg.gamma, cfg.lambda);
        let mut adv = Array1::from_iter(adv.iter().copied());
        let ret = Array1::from_iter(ret.iter().copied());
        if cfg.normalize_advantages {
            normalize_advantages(&mut adv);
        }

        let total = batch.len();
        let mb_size = total / cfg.minibatches;
        let mut indices: Vec<usize> = (0..total).collect();
        let mut sums = [0.0; 6];
        let mut updates = 0usize;
        let mut skipped = 0usize;
        for _ in 0..cfg.epochs {
            indices.shuffle(&mut self.rng);
            for k in 0..cfg.minibatches {
                let idx = &indices[k * mb_size..(k + 1) * mb_size];
                let mb = Minibatch::gather(&batch, &adv, &ret, idx);
                let mut out = ppo_losses(&self.bundle, &mb, &cfg);
                let grad_norm = out.grads.global_norm();
                if !out.is_finite() || !grad_norm.is_finite() {
                    skipped += 1;
                    self.bad_updates += 1;
                    if self.bad_updates >= cfg.max_bad_updates {
                        return Err(TrainError::NonFinite {
                            iteration: self.iteration,
                            count: self.bad_updates,
                            detail: format!(
                                "policy {} value {} entropy {} estimator {} kl {} grad norm {}",
                                out.policy_loss, out.value_loss, out.entropy, out.estimator_loss, out.approx_kl, grad_norm
                            ),
                        });
                    }
                    continue;
                }
                self.bad_updates = 0;
                if cfg.adaptive_kl {
                    if out.approx_kl > 2.0 * cfg.desired_kl {
                        self.adam.lr = (self.adam.lr / 1.5).max(cfg.min_learning_rate);
                    } else if out.approx_kl < 0.5 * cfg.desired_kl && out.approx_kl > 0.0 {
                        self.adam.lr = (self.adam.lr * 1.5).min(cfg.max_learning_rate);
                    }
                }
                out.grads.clip_global_norm(cfg.max_grad_norm);
                let grads = out.grads.slices();
                self.adam.step(self.bundle.param_slices_mut(), &grads);
                self.bundle.round_to_f32();
                for (acc, x) in sums.iter_mut().zip([out.policy_loss, out.value_loss, out.entropy, out.estimator_loss, out.approx_kl, out.clip_fraction]) {
                    *acc += x;
                }
                updates += 1;
            }
        }

        let st = &batch.stats;
        let per = |x: f64| x / st.samples.max(1) as f64;
        let upd = |x: f64| if updates > 0 { x / updates as f64 } else { f64::NAN };
        let metrics = IterationMetrics {
            iteration: self.iteration,
            steps: self.steps,
            mean_r_t: per(st.total_sum),
            mean_r_g: per(st.group_sums[0]),
            mean_r_l: per(st.group_sums[1]),
            mean_r_s: per(st.group_sums[2]),
            mean_r_c: per(st.group_sums[3]),
            rows: st.row_sums.map(per),
            policy_loss: upd(sums[0]),
            value_loss: upd(sums[1]),
            entropy: upd(sums[2]),
            estimator_loss: upd(sums[3]),
            approx_kl: upd(sums[4]),
            clip_fraction: upd(sums[5]),
            learning_rate: self.adam.lr,
            mean_episode_len: st.mean_episode_len(),
            episodes_finished: st.finished_lengths.len(),
            failures: st.failures,
            skipped_updates: skipped,
        };
        self.iteration += 1;
        Ok(metrics)
    }
}

/// Run `iterations` PPO iterations, reporting each to `sink`.
pub fn train(trainer: &mut Trainer, iterations: usize, sink: &mut dyn TrainSink) -> Result<(), TrainError> {
    for _ in 0..iterations {
        let metrics = trainer.iterate()?;
        sink.on_iteration(&metrics, &trainer.bundle).map_err(TrainError::Sink)?;
    }
    sink.on_finish(&trainer.bundle).map_err(TrainError::Sink)
}
