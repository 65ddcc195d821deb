//! Push actions, a kinematic velocity-imposing pusher, and episode rollouts
//! of the push–settle–observe loop.

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{
    advance_velocity, capsule_contacts, resolve_constraints, settle_with, Kinematics, SimParams,
    VelocityConstraint,
};
use crate::{ChainModel, ChainState};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

/// Two-dimensional policy action. `a1` picks the struck face by sign and the
/// push speed by magnitude; `a2` picks the link and the point along it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushAction {
    pub a1: f64,
    pub a2: f64,
}

impl PushAction {
    pub fn new(a1: f64, a2: f64) -> Self {
        PushAction { a1, a2 }
    }

    pub fn clamped(self) -> Self {
        PushAction { a1: self.a1.clamp(-1.0, 1.0), a2: self.a2.clamp(-1.0, 1.0) }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.a1, self.a2]
    }
}

/// A decoded push in physical terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushCommand {
    pub link: usize,
    /// Distance along the link's long axis from its COM, meters.
    pub local_offset: f64,
    /// `+1` strikes the face on the link's local `+y` side, `-1` the other one.
    pub side: f64,
    pub speed: f64,
    /// Unit push direction in the world frame, pointing into the link.
    pub direction: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PushParams {
    pub min_speed: f64,
    pub max_speed: f64,
    /// Contact points stay within this fraction of the half-length.
    pub offset_fraction: f64,
    /// Control steps the pusher holds its velocity.
    pub control_steps: usize,
    /// Dynamics steps per control step.
    pub substeps: usize,
    pub dt: f64,
    /// Slack on the one-sided contact test, meters.
    pub contact_tolerance: f64,
}

impl Default for PushParams {
    fn default() -> Self {
        PushParams {
            min_speed: 0.1,
            max_speed: 1.0,
            offset_fraction: 0.9,
            control_steps: 10,
            substeps: 10,
            dt: 1e-3,
            contact_tolerance: 1e-5,
        }
    }
}

impl PushParams {
    pub fn sim(&self) -> SimParams<f64> {
        SimParams { dt: self.dt, ..SimParams::default() }
    }
}

/// Maps an action onto a physical push. `a2` is split into one equal
/// sub-interval per link; within a sub-interval the position maps affinely
/// onto `[-f, f] * length / 2`.
pub fn resolve_action(
    model: &ChainModel,
    q: &DVector<f64>,
    action: PushAction,
    params: &PushParams,
) -> PushCommand {
    let PushAction { a1, a2 } = action.clamped();
    let n = model.links();
    let pos = (a2 + 1.0) * 0.5 * n as f64;
    let link = (pos.floor() as usize).min(n - 1);
    let within = pos - link as f64;
    let half = model.lengths[link] * 0.5;
    let local_offset = (2.0 * within - 1.0) * params.offset_fraction * half;
    let side = if a1 >= 0.0 { 1.0 } else { -1.0 };
    let speed = params.min_speed + (params.max_speed - params.min_speed) * a1.abs();
    let kin = Kinematics::new(model, q);
    let u = kin.axis[link];
    let outward = Vector2::new(-u.y, u.x) * side;
    PushCommand { link, local_offset, side, speed, direction: -outward }
}

/// Result of one push: the new equilibrium and contact diagnostics.
#[derive(Clone, Debug)]
pub struct PushOutcome {
    pub state: ChainState,
    pub settle_steps: usize,
    /// Sub-steps during which the pusher touched the chain.
    pub contact_steps: usize,
    /// Smallest contact impulse seen along the push direction; never negative.
    pub min_impulse: f64,
}

/// Drives the struck point with a kinematic pusher moving at
/// `command.speed` along `command.direction` for the control window, then
/// lets the chain settle. The pusher only pushes: an impulse is applied
/// only when the contact point lags the pusher.
pub fn execute_push(
    model: &ChainModel,
    state: &ChainState,
    command: &PushCommand,
    params: &PushParams,
) -> Result<PushOutcome> {
    let across = command.side * model.widths[command.link] * 0.5;
    let n = command.direction;
    let zero = DVector::zeros(model.dof());
    let dt = params.dt;

    let kin = Kinematics::new(model, &state.q);
    let mut pusher = n.dot(&kin.world_point(command.link, command.local_offset, across));
    let mut current = state.clone();
    let mut contact_steps = 0;
    let mut min_impulse = f64::INFINITY;

    for _ in 0..params.control_steps * params.substeps {
        let (mut qdot, inertia) = advance_velocity(model, &current, &zero, dt)?;
        let kin = Kinematics::new(model, &current.q);
        let p = kin.world_point(command.link, command.local_offset, across);
        if n.dot(&p) <= pusher + params.contact_tolerance {
            let jac = kin.point_jacobian(command.link, &p);
            let row = jac.transpose() * n;
            let impulse = VelocityConstraint { row, target: command.speed }
                .project(&inertia.inverse, &mut qdot);
            debug_assert!(impulse >= 0.0);
            min_impulse = min_impulse.min(impulse);
            contact_steps += 1;
        }
        let q = &current.q + &qdot * dt;
        current = resolve_constraints(model, &ChainState { q, qdot })?.0;
        if !current.is_finite() {
            return Err(Error::SingularMassMatrix { condition: f64::INFINITY });
        }
        pusher += command.speed * dt;
    }
    let (state, settle_steps) = settle_with(model, &current, &params.sim())?;
    Ok(PushOutcome {
        state,
        settle_steps,
        contact_steps,
        min_impulse: if contact_steps == 0 { 0.0 } else { min_impulse },
    })
}

/// Random starting configuration: root at the origin, uniform yaw, joints
/// uniform within 80 % of their limits, rejecting self-overlapping samples.
pub fn sample_initial_state(model: &ChainModel, rng: &mut impl Rng) -> ChainState {
    let n = model.dof();
    loop {
        let mut q = DVector::zeros(n);
        q[2] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        for (j, &(lo, hi)) in model.joint_limits.iter().enumerate() {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * 0.8;
            q[3 + j] = rng.random_range(mid - half..mid + half);
        }
        let kin = Kinematics::new(model, &q);
        if capsule_contacts(model, &kin, 1e-3).is_empty() {
            return ChainState::at_rest(q);
        }
    }
}

/// Source of push actions given the noisy observation history so far.
pub trait ActionSource {
    /// Called at the start of each episode.
    fn reset(&mut self) {}

    fn act(&mut self, observations: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> PushAction;
}

/// Uniformly random actions over `[-1, 1]²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformRandom;

impl ActionSource for UniformRandom {
    fn act(&mut self, _: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> PushAction {
        PushAction::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct FixedAction(pub PushAction);

impl ActionSource for FixedAction {
    fn act(&mut self, _: &[Vec<f64>], _: &mut dyn rand::RngCore) -> PushAction {
        self.0
    }
}

/// Equilibrium observations and executed actions of one episode, with the
/// hidden ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrajectory {
    pub schema_version: u32,
    pub n: usize,
    pub mu: f64,
    pub lengths: Vec<f64>,
    pub m_true: Vec<f64>,
    pub q_seq: Vec<Vec<f64>>,
    pub a_seq: Vec<[f64; 2]>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub settle_steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EpisodeTrajectory {
    pub fn pushes(&self) -> usize {
        self.a_seq.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.q_seq.len() == self.a_seq.len() + 1
            && self.m_true.len() == self.n
            && self.lengths.len() == self.n
            && self.q_seq.iter().all(|q| q.len() == self.n + 2)
            && (self.m_true.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("malformed episode (seed {})", self.seed)))
        }
    }
}

/// Push environment holding the true chain state; observations and
/// executed actions carry Gaussian noise.
pub struct PushEnv<'a> {
    pub model: &'a ChainModel,
    pub params: PushParams,
    pub noise_std: f64,
    pub state: ChainState,
}

impl<'a> PushEnv<'a> {
    pub fn new(model: &'a ChainModel, params: PushParams, noise_std: f64, rng: &mut impl Rng) -> Self {
        let state = sample_initial_state(model, rng);
        PushEnv { model, params, noise_std, state }
    }

    fn noise(&self, rng: &mut impl Rng) -> f64 {
        if self.noise_std > 0.0 {
            Normal::new(0.0, self.noise_std).unwrap().sample(rng)
        } else {
            0.0
        }
    }

    pub fn observe(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.state.q.iter().map(|&x| x + self.noise(rng)).collect()
    }

    /// Perturbs and clamps the action, executes it and returns
    /// `(executed action, settle steps)`.
    pub fn push(&mut self, action: PushAction, rng: &mut impl Rng) -> Result<(PushAction, usize)> {
        let executed =
            PushAction::new(action.a1 + self.noise(rng), action.a2 + self.noise(rng)).clamped();
        let command = resolve_action(self.model, &self.state.q, executed, &self.params);
        let outcome = execute_push(self.model, &self.state, &command, &self.params)
            .map_err(|e| Error::EpisodeFailure(Box::new(e)))?;
        self.state = outcome.state;
        Ok((executed, outcome.settle_steps))
    }
}

/// Runs one episode of `pushes` push–settle–observe cycles from a random
/// starting configuration.
pub fn rollout_episode(
    model: &ChainModel,
    policy: &mut dyn ActionSource,
    pushes: usize,
    noise_std: f64,
    params: &PushParams,
    rng: &mut impl Rng,
) -> Result<EpisodeTrajectory> {
    let mut env = PushEnv::new(model, *params, noise_std, rng);
    policy.reset();
    let mut q_seq = vec![env.observe(rng)];
    let mut a_seq = Vec::with_capacity(pushes);
    let mut settle_steps = Vec::with_capacity(pushes);
    for _ in 0..pushes {
        let action = policy.act(&q_seq, rng);
        // The record keeps the commanded action: execution noise is part of
        // the environment, invisible to the agent.
        let (_, steps) = env.push(action, rng)?;
        a_seq.push(action.clamped().to_array());
        settle_steps.push(steps);
        q_seq.push(env.observe(rng));
    }
    Ok(EpisodeTrajectory {
        schema_version: EPISODE_SCHEMA_VERSION,
        n: model.links(),
        mu: model.mu,
        lengths: model.lengths.clone(),
        m_true: model.mass_distribution(),
        q_seq,
        a_seq,
        seed: 0,
        settle_steps,
        config_hash: None,
    })
}

/// Writes episodes as one JSON record per line.
pub fn write_episodes<W: std::io::Write>(mut out: W, episodes: &[EpisodeTrajectory]) -> Result<()> {
    for ep in episodes {
        serde_json::to_writer(&mut out, ep)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_episodes<R: std::io::BufRead>(input: R) -> Result<Vec<EpisodeTrajectory>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: EpisodeTrajectory = serde_json::from_str(&line)?;
        if ep.schema_version != EPISODE_SCHEMA_VERSION {
            return Err(Error::ShapeMismatch(format!(
                "episode schema version {} (expected {EPISODE_SCHEMA_VERSION})",
                ep.schema_version
            )));
        }
        ep.validate()?;
        out.push(ep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
