//! The mass-distribution predictor: a recurrent network reading
//! `(q_t, a_t, q_{t+1})` per push and emitting a simplex estimate after
//! every push, trained by minibatch SGD on the per-step Euclidean error.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::EpisodeTrajectory;
use crate::neural::{
    sgd_update, softmax, softmax_backward, Activation, Dense, DenseCache, Gradients, Lstm,
    LstmState, LstmStepCache, NetworkParams,
};

/// Root translations are multiplied by this before entering a network, so a
/// typical displacement of a few centimeters maps to O(0.1–1).
pub const TRANSLATION_SCALE: f64 = 10.0;

/// Features of pose `q` expressed in the frame of `origin`: planar offset
/// rotated into the origin's heading, then `(sin, cos)` of the relative yaw
/// and of every joint angle.
pub fn pose_features(q: &[f64], origin: &[f64]) -> Vec<f64> {
    let (s0, c0) = origin[2].sin_cos();
    let dx = q[0] - origin[0];
    let dy = q[1] - origin[1];
    let mut out = Vec::with_capacity(2 * q.len() - 2);
    out.push((c0 * dx + s0 * dy) * TRANSLATION_SCALE);
    out.push((-s0 * dx + c0 * dy) * TRANSLATION_SCALE);
    let (s, c) = (q[2] - origin[2]).sin_cos();
    out.extend([s, c]);
    for &theta in &q[3..] {
        let (s, c) = theta.sin_cos();
        out.extend([s, c]);
    }
    out
}

pub fn pose_feature_len(links: usize) -> usize {
    2 * links + 2
}

pub fn step_input_len(links: usize) -> usize {
    2 * pose_feature_len(links) + 2
}

/// Network input for push `t`, framed at the episode's first observation.
pub fn step_input(q_seq: &[Vec<f64>], a_seq: &[[f64; 2]], t: usize) -> Vec<f64> {
    let origin = &q_seq[0];
    let mut x = pose_features(&q_seq[t], origin);
    x.extend_from_slice(&a_seq[t]);
    x.extend(pose_features(&q_seq[t + 1], origin));
    x
}

pub fn step_inputs(q_seq: &[Vec<f64>], a_seq: &[[f64; 2]]) -> Vec<Vec<f64>> {
    (0..a_seq.len()).map(|t| step_input(q_seq, a_seq, t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub encoder: usize,
    pub recurrent: usize,
    pub head: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { encoder: 32, recurrent: 64, head: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorNet {
    pub params: NetworkParams<f64>,
    pub links: usize,
    encoder: Dense,
    core: Lstm,
    head: Dense,
    out: Dense,
}

/// Everything the backward pass needs from one forward sequence.
pub struct PredictorTrace {
    pub predictions: Vec<Vec<f64>>,
    encoder: Vec<DenseCache<f64>>,
    core: Vec<LstmStepCache<f64>>,
    head: Vec<DenseCache<f64>>,
    out: Vec<DenseCache<f64>>,
}

impl PredictorNet {
    pub fn new(links: usize, config: PredictorConfig, rng: &mut impl Rng) -> Self {
        let mut params = NetworkParams::new();
        let encoder = Dense::new(
            &mut params,
            "predictor.encoder",
            step_input_len(links),
            config.encoder,
            Activation::Relu,
            rng,
        );
        let core = Lstm::new(&mut params, "predictor.core", config.encoder, config.recurrent, rng);
        let head = Dense::new(&mut params, "predictor.head", config.recurrent, config.head, Activation::Relu, rng);
        let out = Dense::new(&mut params, "predictor.out", config.head, links, Activation::Identity, rng);
        PredictorNet { params, links, encoder, core, head, out }
    }

    pub fn input_len(&self) -> usize {
        self.encoder.inputs
    }

    /// Zeroes the output layer, making every estimate uniform.
    pub fn zero_output_layer(&mut self) {
        self.params.block_mut(self.out.weight).data.fill(0.0);
        self.params.block_mut(self.out.bias).data.fill(0.0);
    }

    pub fn initial_state(&self) -> LstmState<f64> {
        LstmState::zeros(self.core.hidden)
    }

    /// Advances the recurrent state by one push and returns the estimate.
    pub fn step(&self, state: &mut LstmState<f64>, input: &[f64]) -> Result<Vec<f64>> {
        let e = self.encoder.forward(&self.params, input)?;
        let (next, _) = self.core.step(&self.params, &e.output, state)?;
        let h = self.head.forward(&self.params, &next.hidden)?;
        let logits = self.out.forward(&self.params, &h.output)?;
        *state = next;
        Ok(softmax(&logits.output))
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<PredictorTrace> {
        let encoder = inputs
            .iter()
            .map(|x| self.encoder.forward(&self.params, x))
            .collect::<Result<Vec<_>>>()?;
        let encoded: Vec<Vec<f64>> = encoder.iter().map(|c| c.output.clone()).collect();
        let (hidden, core) = self.core.forward_sequence(&self.params, &encoded, &self.initial_state())?;
        let mut head = Vec::with_capacity(inputs.len());
        let mut out = Vec::with_capacity(inputs.len());
        let mut predictions = Vec::with_capacity(inputs.len());
        for h in &hidden {
            let hc = self.head.forward(&self.params, h)?;
            let oc = self.out.forward(&self.params, &hc.output)?;
            predictions.push(softmax(&oc.output));
            head.push(hc);
            out.push(oc);
        }
        Ok(PredictorTrace { predictions, encoder, core, head, out })
    }

    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(inputs)?.predictions)
    }

    /// One estimate per push of `episode`, each conditioned on everything up
    /// to and including that push's outcome.
    pub fn predict_sequence(&self, episode: &EpisodeTrajectory) -> Result<Vec<Vec<f64>>> {
        if episode.n != self.links {
            return Err(Error::ShapeMismatch(format!(
                "predictor built for {} links, episode has {}",
                self.links, episode.n
            )));
        }
        episode.validate()?;
        self.predict(&step_inputs(&episode.q_seq, &episode.a_seq))
    }

    /// Accumulates parameter gradients given the loss gradient w.r.t. each
    /// step's probabilities.
    pub fn backward(
        &self,
        trace: &PredictorTrace,
        grad_predictions: &[Vec<f64>],
        grads: &mut Gradients<f64>,
    ) -> Result<()> {
        let steps = trace.predictions.len();
        if grad_predictions.len() != steps {
            return Err(Error::ShapeMismatch("predictor backward: step counts differ".into()));
        }
        let mut grad_hidden = Vec::with_capacity(steps);
        for t in 0..steps {
            let g_logits = softmax_backward(&trace.predictions[t], &grad_predictions[t]);
            let g_head = self.out.backward(&self.params, grads, &trace.out[t], &g_logits)?;
            grad_hidden.push(self.head.backward(&self.params, grads, &trace.head[t], &g_head)?);
        }
        let g_encoded = self.core.backward_sequence(&self.params, grads, &trace.core, &grad_hidden)?;
        for (cache, g) in trace.encoder.iter().zip(&g_encoded) {
            self.encoder.backward(&self.params, grads, cache, g)?;
        }
        Ok(())
    }
}

/// Mean over steps of `‖m_true − m̂_t‖₂`.
pub fn sequence_loss(predictions: &[Vec<f64>], m_true: &[f64]) -> f64 {
    let total: f64 = predictions.iter().map(|p| l2_distance(p, m_true)).sum();
    total / predictions.len() as f64
}

/// Loss and its gradient w.r.t. each prediction. The norm is not
/// differentiable at a perfect prediction; the gradient there is taken as 0.
pub fn sequence_loss_grad(predictions: &[Vec<f64>], m_true: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let steps = predictions.len() as f64;
    let mut loss = 0.0;
    let grads = predictions
        .iter()
        .map(|p| {
            let d = l2_distance(p, m_true);
            loss += d;
            if d > 0.0 {
                p.iter().zip(m_true).map(|(a, b)| (a - b) / (d * steps)).collect()
            } else {
                vec![0.0; p.len()]
            }
        })
        .collect();
    (loss / steps, grads)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Network inputs and target of one episode, precomputed for training.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedEpisode {
    pub inputs: Vec<Vec<f64>>,
    pub m_true: Vec<f64>,
}

impl EncodedEpisode {
    pub fn new(episode: &EpisodeTrajectory) -> Self {
        EncodedEpisode { inputs: step_inputs(&episode.q_seq, &episode.a_seq), m_true: episode.m_true.clone() }
    }
}

pub fn encode_dataset(episodes: &[EpisodeTrajectory]) -> Vec<EncodedEpisode> {
    episodes.iter().map(EncodedEpisode::new).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Episodes of one split together with the policy that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDataset {
    pub episodes: Vec<EpisodeTrajectory>,
    pub split: Split,
    pub provenance: String,
}

/// Mean L1 error per push index over a dataset.
pub fn per_step_l1(net: &PredictorNet, data: &[EncodedEpisode]) -> Result<Vec<f64>> {
    let steps = data.iter().map(|e| e.inputs.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; steps];
    let mut counts = vec![0usize; steps];
    for ep in data {
        for (t, p) in net.predict(&ep.inputs)?.iter().enumerate() {
            sums[t] += l1_distance(p, &ep.m_true);
            counts[t] += 1;
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect())
}

/// Mean L1 error of the final estimate of each episode.
pub fn final_step_l1(net: &PredictorNet, data: &[EncodedEpisode]) -> Result<f64> {
    let mut total = 0.0;
    for ep in data {
        let preds = net.predict(&ep.inputs)?;
        let last = preds.last().ok_or_else(|| Error::ShapeMismatch("episode without pushes".into()))?;
        total += l1_distance(last, &ep.m_true);
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// The learning rate halves every this many steps.
    pub halving_period: usize,
    /// Validation interval in steps.
    pub eval_every: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_steps: 50_000,
            batch_size: 16,
            lr0: 0.1,
            halving_period: 16_600,
            eval_every: 1_000,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainSchedule {
    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr0 * 0.5f64.powi((step / self.halving_period.max(1)) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_l1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<MetricsRow>,
    pub best_step: usize,
    pub best_val_l1: f64,
}

/// Loss and gradient of one minibatch, averaged over its episodes.
pub fn batch_gradient(
    net: &PredictorNet,
    batch: &[&EncodedEpisode],
    grads: &mut Gradients<f64>,
) -> Result<f64> {
    grads.fill_zero();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for ep in batch {
        let trace = net.forward(&ep.inputs)?;
        let (l, mut g) = sequence_loss_grad(&trace.predictions, &ep.m_true);
        for row in &mut g {
            row.iter_mut().for_each(|x| *x *= scale);
        }
        net.backward(&trace, &g, grads)?;
        loss += l * scale;
    }
    Ok(loss)
}

/// Minibatch SGD on the per-step loss with a halving learning rate. The
/// parameters with the best validation error are restored at the end, and
/// also when a non-finite gradient aborts training.
pub fn train_predictor(
    net: &mut PredictorNet,
    train: &[EncodedEpisode],
    validation: &[EncodedEpisode],
    schedule: &TrainSchedule,
    rng: &mut impl Rng,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let score = |net: &PredictorNet| -> Result<f64> {
        if validation.is_empty() { final_step_l1(net, train) } else { final_step_l1(net, validation) }
    };
    let mut best_params = net.params.clone();
    let mut best_val = score(net)?;
    let mut best_step = 0;
    let mut history = Vec::new();
    let mut grads = net.params.zero_grads();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut running = 0.0;
    let mut running_count = 0usize;
    for step in 1..=schedule.total_steps {
        let batch: Vec<&EncodedEpisode> = (0..schedule.batch_size)
            .map(|_| {
                if cursor == order.len() {
                    order.shuffle(rng);
                    cursor = 0;
                }
                cursor += 1;
                &train[order[cursor - 1]]
            })
            .collect();
        let loss = batch_gradient(net, &batch, &mut grads)?;
        if let Some(max) = schedule.clip_norm {
            grads.clip_norm(max);
        }
        let lr = schedule.learning_rate(step - 1);
        if let Err(e) = sgd_update(&mut net.params, &grads, lr) {
            net.params = best_params;
            return Err(e);
        }
        running += loss;
        running_count += 1;
        if step % schedule.eval_every.max(1) == 0 || step == schedule.total_steps {
            let val = score(net)?;
            history.push(MetricsRow { step, train_loss: running / running_count as f64, val_l1: val, lr });
            running = 0.0;
            running_count = 0;
            if val < best_val {
                best_val = val;
                best_step = step;
                best_params = net.params.clone();
            }
        }
    }
    net.params = best_params;
    Ok(TrainReport { history, best_step, best_val_l1: best_val })
}

#[cfg(test)]
mod tests;
