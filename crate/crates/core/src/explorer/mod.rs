//! The push policy and its training by proximal policy optimization against
//! a frozen predictor. The per-step reward is `1 − β‖m − m̂_t‖₁`, so the
//! policy is paid for pushes that make the predictor's current estimate
//! accurate.

mod policy;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{l1_distance, pose_features, step_input, PredictorNet};
use crate::interaction::{
    ActionSource, EpisodeTrajectory, PushAction, PushEnv, PushParams, EPISODE_SCHEMA_VERSION,
};
use crate::neural::{Adam, AdamConfig, Gradients, LstmState};
use crate::seeding::{episode_id, stream, Purpose};
use crate::ChainModel;

pub use policy::{
    gaussian_entropy, squash_log_jacobian, squashed_log_prob, ActionSample, PolicyConfig,
    PolicyNet, PolicyTrace,
};

/// `1 − β‖m_true − m_hat‖₁`.
pub fn reward(m_true: &[f64], m_hat: &[f64], beta: f64) -> f64 {
    1.0 - beta * l1_distance(m_true, m_hat)
}

/// Generalized advantage estimation over one episode. `bootstrap` is the
/// value after the last step (zero for a terminal state).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Rescales to zero mean and unit variance (left centred only when the
/// spread is negligible).
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 1e-16 { 1.0 / var.sqrt() } else { 1.0 };
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

/// One episode as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRollout {
    pub initial_state: LstmState<f64>,
    pub observations: Vec<Vec<f64>>,
    pub raw_actions: Vec<[f64; 2]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Predictor L1 error after each push.
    pub errors: Vec<f64>,
    pub trajectory: EpisodeTrajectory,
}

impl EpisodeRollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// The world the policy acts in: how chains are drawn and how pushes and
/// observations behave.
pub struct RolloutEnv<'a> {
    pub predictor: &'a PredictorNet,
    pub sample_model: &'a (dyn Fn(&mut ChaCha8Rng) -> Result<ChainModel> + Sync),
    pub pushes: usize,
    pub noise_std: f64,
    pub push: PushParams,
    pub beta: f64,
}

/// Episodes that fail to settle are redrawn from the same stream, at most
/// this many times.
const MAX_ATTEMPTS: usize = 10;

/// Plays one episode, retrying with a fresh chain if the simulation fails.
pub fn rollout_policy_episode(
    policy: &PolicyNet,
    env: &RolloutEnv,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRollout> {
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let model = (env.sample_model)(rng)?;
        match play(policy, env, &model, deterministic, rng) {
            Ok(r) => return Ok(r),
            Err(e @ Error::EpisodeFailure(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::CollectionStalled { failures: MAX_ATTEMPTS, requested: 1 }))
}

fn play(
    policy: &PolicyNet,
    env: &RolloutEnv,
    model: &ChainModel,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRollout> {
    let mut world = PushEnv::new(model, env.push, env.noise_std, rng);
    let m_true = model.mass_distribution();
    let initial_state = policy.initial_state();
    let mut state = initial_state.clone();
    let mut belief = env.predictor.initial_state();
    let mut q_seq = vec![world.observe(rng)];
    let mut a_seq = Vec::with_capacity(env.pushes);
    let mut out = EpisodeRollout {
        initial_state,
        observations: Vec::new(),
        raw_actions: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
        rewards: Vec::new(),
        errors: Vec::new(),
        trajectory: EpisodeTrajectory {
            schema_version: EPISODE_SCHEMA_VERSION,
            n: model.links(),
            mu: model.mu,
            lengths: model.lengths.clone(),
            m_true: m_true.clone(),
            q_seq: Vec::new(),
            a_seq: Vec::new(),
            seed: 0,
            settle_steps: Vec::new(),
            config_hash: None,
        },
    };
    for t in 0..env.pushes {
        let obs = pose_features(&q_seq[t], &q_seq[0]);
        let sample = policy.sample_action(&obs, &state, deterministic, rng)?;
        state = sample.state;
        let (_, steps) = world.push(sample.action, rng)?;
        q_seq.push(world.observe(rng));
        a_seq.push(sample.action.to_array());
        let x = step_input(&q_seq, &a_seq, t);
        let m_hat = env.predictor.step(&mut belief, &x)?;
        let err = l1_distance(&m_true, &m_hat);
        out.observations.push(obs);
        out.raw_actions.push(sample.raw);
        out.log_probs.push(sample.log_prob);
        out.values.push(sample.value);
        out.rewards.push(1.0 - env.beta * err);
        out.errors.push(err);
        out.trajectory.settle_steps.push(steps);
    }
    out.trajectory.q_seq = q_seq;
    out.trajectory.a_seq = a_seq;
    Ok(out)
}

/// Plays one episode per id in parallel. Each episode draws from its own
/// stream, so the result does not depend on the worker count.
pub fn collect_rollouts(
    policy: &PolicyNet,
    env: &RolloutEnv,
    run_seed: u64,
    purpose: Purpose,
    indices: std::ops::Range<u64>,
    deterministic: bool,
    pool: &rayon::ThreadPool,
) -> Result<Vec<EpisodeRollout>> {
    pool.install(|| {
        indices
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(run_seed, purpose, i);
                let mut r = rollout_policy_episode(policy, env, deterministic, &mut rng)?;
                r.trajectory.seed = episode_id(purpose, i);
                Ok(r)
            })
            .collect()
    })
}

/// Adapts a policy to the generic rollout loop.
pub struct PolicySource<'a> {
    pub policy: &'a PolicyNet,
    pub deterministic: bool,
    state: LstmState<f64>,
}

impl<'a> PolicySource<'a> {
    pub fn new(policy: &'a PolicyNet, deterministic: bool) -> Self {
        PolicySource { policy, deterministic, state: policy.initial_state() }
    }
}

impl ActionSource for PolicySource<'_> {
    fn reset(&mut self) {
        self.state = self.policy.initial_state();
    }

    fn act(&mut self, observations: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> PushAction {
        let obs = pose_features(observations.last().expect("at least one observation"), &observations[0]);
        let sample = self
            .policy
            .sample_action(&obs, &self.state, self.deterministic, rng)
            .expect("observation shape matches the policy");
        self.state = sample.state;
        sample.action
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    /// Environment steps (pushes) per meta-iteration.
    pub total_env_steps: usize,
    pub episodes_per_update: usize,
    pub minibatch_episodes: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            epochs: 4,
            lr: 3e-3,
            gamma: 0.99,
            lambda: 0.95,
            beta: 1.0,
            total_env_steps: 20_000,
            episodes_per_update: 100,
            minibatch_episodes: 10,
            max_grad_norm: 0.5,
        }
    }
}

/// Per-episode advantage and return targets, advantages normalized over the
/// whole batch.
pub fn advantages(batch: &[EpisodeRollout], config: &PpoConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut adv = Vec::with_capacity(batch.len());
    let mut ret = Vec::with_capacity(batch.len());
    for ep in batch {
        let (a, r) = compute_gae(&ep.rewards, &ep.values, 0.0, config.gamma, config.lambda);
        adv.push(a);
        ret.push(r);
    }
    let mut flat: Vec<f64> = adv.iter().flatten().copied().collect();
    normalize(&mut flat);
    let mut it = flat.into_iter();
    for a in &mut adv {
        for x in a.iter_mut() {
            *x = it.next().expect("same length");
        }
    }
    (adv, ret)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Clipped-surrogate actor-critic loss over whole episodes, with its
/// gradient accumulated into `grads` (which is cleared first). Means are
/// taken over all steps of the minibatch.
pub fn ppo_loss(
    policy: &PolicyNet,
    episodes: &[&EpisodeRollout],
    advantages: &[&[f64]],
    returns: &[&[f64]],
    config: &PpoConfig,
    grads: &mut Gradients<f64>,
) -> Result<LossStats> {
    grads.fill_zero();
    let steps: usize = episodes.iter().map(|e| e.len()).sum();
    let inv = 1.0 / steps.max(1) as f64;
    let log_std: Vec<f64> = policy.log_std().to_vec();
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut stats = LossStats::default();
    let mut g_log_std = [0.0; 2];
    for ((ep, adv), ret) in episodes.iter().zip(advantages).zip(returns) {
        let trace = policy.forward(&ep.observations, &ep.initial_state)?;
        let mut g_means = Vec::with_capacity(ep.len());
        let mut g_values = Vec::with_capacity(ep.len());
        for t in 0..ep.len() {
            let mean = trace.means[t];
            let raw = ep.raw_actions[t];
            let logp = squashed_log_prob(&raw, &mean, &log_std);
            let ratio = (logp - ep.log_probs[t]).exp();
            let a = adv[t];
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * a;
            let g_logp = if unclipped <= clipped { -unclipped * inv } else { 0.0 };
            stats.policy_loss -= unclipped.min(clipped) * inv;
            if (ratio - 1.0).abs() > config.clip {
                stats.clip_fraction += inv;
            }
            stats.approx_kl += (ep.log_probs[t] - logp) * inv;
            let mut gm = [0.0; 2];
            for d in 0..2 {
                let diff = raw[d] - mean[d];
                gm[d] = g_logp * diff * inv_var[d];
                g_log_std[d] += g_logp * (diff * diff * inv_var[d] - 1.0);
            }
            g_means.push(gm);
            let err = trace.values[t] - ret[t];
            stats.value_loss += config.value_coef * err * err * inv;
            g_values.push(2.0 * config.value_coef * err * inv);
        }
        policy.backward(&trace, &g_means, &g_values, grads)?;
    }
    stats.entropy = gaussian_entropy(&log_std);
    let id = policy.log_std_id();
    for (g, extra) in grads.get_mut(id).iter_mut().zip(g_log_std) {
        // The entropy bonus is subtracted from the loss; d(entropy)/d(log σ) = 1.
        *g += extra - config.entropy_coef;
    }
    stats.loss = stats.policy_loss + stats.value_loss - config.entropy_coef * stats.entropy;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_prediction_error: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
}

/// Several epochs of minibatch Adam steps on one batch of episodes. The
/// predictor is not touched.
pub fn ppo_update(
    policy: &mut PolicyNet,
    adam: &mut Adam<f64>,
    batch: &[EpisodeRollout],
    config: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<LossStats> {
    let (adv, ret) = advantages(batch, config);
    let mut grads = policy.params.zero_grads();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut last = LossStats::default();
    let mut sum = LossStats::default();
    let mut count = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_episodes.max(1)) {
            let eps: Vec<&EpisodeRollout> = chunk.iter().map(|&i| &batch[i]).collect();
            let a: Vec<&[f64]> = chunk.iter().map(|&i| adv[i].as_slice()).collect();
            let r: Vec<&[f64]> = chunk.iter().map(|&i| ret[i].as_slice()).collect();
            last = ppo_loss(policy, &eps, &a, &r, config, &mut grads)?;
            grads.clip_norm(config.max_grad_norm);
            adam.step(&mut policy.params, &grads)?;
            policy.clamp_log_std();
            sum.clip_fraction += last.clip_fraction;
            sum.approx_kl += last.approx_kl;
            sum.policy_loss += last.policy_loss;
            sum.value_loss += last.value_loss;
            count += 1.0;
        }
    }
    Ok(LossStats {
        loss: last.loss,
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: gaussian_entropy(policy.log_std()),
        clip_fraction: sum.clip_fraction / count,
        approx_kl: sum.approx_kl / count,
    })
}

pub fn new_optimizer(policy: &PolicyNet, config: &PpoConfig) -> Adam<f64> {
    Adam::new(&policy.params, AdamConfig { lr: config.lr, ..AdamConfig::default() })
}

/// Runs PPO for `config.total_env_steps` pushes of meta-iteration
/// `iteration`, returning one metrics row per update.
pub fn train_policy(
    policy: &mut PolicyNet,
    env: &RolloutEnv,
    config: &PpoConfig,
    run_seed: u64,
    iteration: u32,
    pool: &rayon::ThreadPool,
) -> Result<Vec<UpdateMetrics>> {
    let per_update = config.episodes_per_update.max(1);
    let steps_per_update = per_update * env.pushes.max(1);
    let updates = config.total_env_steps.div_ceil(steps_per_update).max(1);
    let mut adam = new_optimizer(policy, config);
    let mut rng = stream(run_seed, Purpose::Optimizer(0x80 + iteration), 0);
    let mut history = Vec::with_capacity(updates);
    for u in 0..updates {
        let start = (u * per_update) as u64;
        let batch = collect_rollouts(
            policy,
            env,
            run_seed,
            Purpose::PolicyRollout(iteration),
            start..start + per_update as u64,
            false,
            pool,
        )?;
        let steps: usize = batch.iter().map(|e| e.len()).sum();
        let mean_reward = batch.iter().flat_map(|e| &e.rewards).sum::<f64>() / steps as f64;
        let mean_error = batch.iter().flat_map(|e| &e.errors).sum::<f64>() / steps as f64;
        let stats = ppo_update(policy, &mut adam, &batch, config, &mut rng)?;
        history.push(UpdateMetrics {
            update: u,
            episodes: batch.len(),
            mean_reward,
            mean_prediction_error: mean_error,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
        });
    }
    Ok(history)
}
