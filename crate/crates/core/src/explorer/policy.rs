use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::pose_feature_len;
use crate::interaction::PushAction;
use crate::neural::{
    Activation, Dense, DenseCache, Gradients, Lstm, LstmState, LstmStepCache, NetworkParams,
    ParamId,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub recurrent: usize,
    pub init_log_std: f64,
    pub min_log_std: f64,
    pub max_log_std: f64,
    /// Scale applied to the actor's initial weights so the first policy is
    /// centred on the middle of the action square.
    pub actor_init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 64,
            recurrent: 64,
            init_log_std: -0.5,
            min_log_std: -5.0,
            max_log_std: 1.0,
            actor_init_scale: 0.01,
        }
    }
}

/// Recurrent actor-critic. The actor is a diagonal Gaussian over
/// pre-squash actions `u` with a state-independent log-std; the emitted
/// action is `tanh(u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub params: NetworkParams<f64>,
    pub links: usize,
    pub config: PolicyConfig,
    enc1: Dense,
    enc2: Dense,
    core: Lstm,
    actor: Dense,
    critic: Dense,
    log_std: ParamId,
}

pub struct PolicyTrace {
    pub means: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    enc1: Vec<DenseCache<f64>>,
    enc2: Vec<DenseCache<f64>>,
    core: Vec<LstmStepCache<f64>>,
    actor: Vec<DenseCache<f64>>,
    critic: Vec<DenseCache<f64>>,
}

/// `log(1 − tanh(u)²)` without cancellation for large `|u|`.
pub fn squash_log_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

/// Log-density of the squashed action whose pre-squash value is `raw`.
pub fn squashed_log_prob(raw: &[f64; 2], mean: &[f64; 2], log_std: &[f64]) -> f64 {
    (0..2)
        .map(|d| {
            let z = (raw[d] - mean[d]) * (-log_std[d]).exp();
            -0.5 * z * z - log_std[d] - 0.5 * LN_2PI - squash_log_jacobian(raw[d])
        })
        .sum()
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub action: PushAction,
    pub raw: [f64; 2],
    pub log_prob: f64,
    pub value: f64,
    pub state: LstmState<f64>,
}

impl PolicyNet {
    pub fn new(links: usize, config: PolicyConfig, rng: &mut impl Rng) -> Self {
        let mut params = NetworkParams::new();
        let obs = pose_feature_len(links);
        let enc1 = Dense::new(&mut params, "policy.enc1", obs, config.hidden, Activation::Relu, rng);
        let enc2 = Dense::new(&mut params, "policy.enc2", config.hidden, config.hidden, Activation::Relu, rng);
        let core = Lstm::new(&mut params, "policy.core", config.hidden, config.recurrent, rng);
        let actor = Dense::new(&mut params, "policy.actor", config.recurrent, 2, Activation::Identity, rng);
        for w in &mut params.block_mut(actor.weight).data {
            *w *= config.actor_init_scale;
        }
        let critic = Dense::new(&mut params, "policy.critic", config.recurrent, 1, Activation::Identity, rng);
        let log_std = params.add("policy.log_std", 2, 1, vec![config.init_log_std; 2]);
        PolicyNet { params, links, config, enc1, enc2, core, actor, critic, log_std }
    }

    pub fn observation_len(&self) -> usize {
        self.enc1.inputs
    }

    pub fn initial_state(&self) -> LstmState<f64> {
        LstmState::zeros(self.core.hidden)
    }

    pub fn log_std(&self) -> &[f64] {
        self.params.data(self.log_std)
    }

    pub fn log_std_id(&self) -> ParamId {
        self.log_std
    }

    pub fn set_log_std(&mut self, values: [f64; 2]) {
        self.params.block_mut(self.log_std).data.copy_from_slice(&values);
    }

    /// Keeps the log-std inside its configured bounds.
    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (self.config.min_log_std, self.config.max_log_std);
        for s in &mut self.params.block_mut(self.log_std).data {
            *s = s.clamp(lo, hi);
        }
    }

    /// Gaussian mean and value estimate for one observation.
    pub fn step(&self, obs: &[f64], state: &LstmState<f64>) -> Result<([f64; 2], f64, LstmState<f64>)> {
        let e1 = self.enc1.forward(&self.params, obs)?;
        let e2 = self.enc2.forward(&self.params, &e1.output)?;
        let (next, _) = self.core.step(&self.params, &e2.output, state)?;
        let mean = self.actor.forward(&self.params, &next.hidden)?.output;
        let value = self.critic.forward(&self.params, &next.hidden)?.output[0];
        Ok(([mean[0], mean[1]], value, next))
    }

    pub fn sample_action(
        &self,
        obs: &[f64],
        state: &LstmState<f64>,
        deterministic: bool,
        rng: &mut (impl Rng + ?Sized),
    ) -> Result<ActionSample> {
        let (mean, value, next) = self.step(obs, state)?;
        let log_std = self.log_std();
        let raw = if deterministic {
            mean
        } else {
            let mut raw = [0.0; 2];
            for d in 0..2 {
                let eps: f64 = rng.sample(StandardNormal);
                raw[d] = mean[d] + log_std[d].exp() * eps;
            }
            raw
        };
        Ok(ActionSample {
            action: PushAction::new(raw[0].tanh(), raw[1].tanh()),
            raw,
            log_prob: squashed_log_prob(&raw, &mean, log_std),
            value,
            state: next,
        })
    }

    /// Full-sequence forward pass from `initial`, keeping caches for BPTT.
    pub fn forward(&self, observations: &[Vec<f64>], initial: &LstmState<f64>) -> Result<PolicyTrace> {
        let enc1 = observations
            .iter()
            .map(|o| self.enc1.forward(&self.params, o))
            .collect::<Result<Vec<_>>>()?;
        let enc2 = enc1
            .iter()
            .map(|c| self.enc2.forward(&self.params, &c.output))
            .collect::<Result<Vec<_>>>()?;
        let encoded: Vec<Vec<f64>> = enc2.iter().map(|c| c.output.clone()).collect();
        let (hidden, core) = self.core.forward_sequence(&self.params, &encoded, initial)?;
        let mut actor = Vec::with_capacity(hidden.len());
        let mut critic = Vec::with_capacity(hidden.len());
        for h in &hidden {
            actor.push(self.actor.forward(&self.params, h)?);
            critic.push(self.critic.forward(&self.params, h)?);
        }
        let means = actor.iter().map(|c| [c.output[0], c.output[1]]).collect();
        let values = critic.iter().map(|c| c.output[0]).collect();
        Ok(PolicyTrace { means, values, enc1, enc2, core, actor, critic })
    }

    /// Backpropagates loss gradients w.r.t. per-step means and values. The
    /// log-std gradient is added by the caller directly.
    pub fn backward(
        &self,
        trace: &PolicyTrace,
        grad_means: &[[f64; 2]],
        grad_values: &[f64],
        grads: &mut Gradients<f64>,
    ) -> Result<()> {
        let steps = trace.means.len();
        if grad_means.len() != steps || grad_values.len() != steps {
            return Err(Error::ShapeMismatch("policy backward: step counts differ".into()));
        }
        let mut grad_hidden = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut gh = self.actor.backward(&self.params, grads, &trace.actor[t], &grad_means[t])?;
            let gv = self.critic.backward(&self.params, grads, &trace.critic[t], &[grad_values[t]])?;
            for (a, b) in gh.iter_mut().zip(gv) {
                *a += b;
            }
            grad_hidden.push(gh);
        }
        let g_enc = self.core.backward_sequence(&self.params, grads, &trace.core, &grad_hidden)?;
        for t in 0..steps {
            let g1 = self.enc2.backward(&self.params, grads, &trace.enc2[t], &g_enc[t])?;
            self.enc1.backward(&self.params, grads, &trace.enc1[t], &g1)?;
        }
        Ok(())
    }
}
