//! Self-checks runnable from an installed binary: physics oracles, gradient
//! checks at the default network widths, and the identifiability algebra.
//!
//! Physics checks take a model hook so that a deliberately broken model can
//! be pushed through them; a suite that still passes on a broken model is
//! not testing anything.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{batch_gradient, encode_dataset, sequence_loss, EncodedEpisode, PredictorConfig, PredictorNet};
use crate::explorer::{advantages, collect_rollouts, ppo_loss, EpisodeRollout, PolicyConfig, PolicyNet, PpoConfig, RolloutEnv};
use crate::identifiability::{analyze, RANK_TOLERANCE};
use crate::interaction::{execute_push, resolve_action, rollout_episode, sample_initial_state, PushAction, PushParams, UniformRandom};
use crate::neural::{gradient_check, Activation, Dense, Lstm, LstmState, NetworkParams};
use crate::seeding::Purpose;
use crate::sim::{
    coriolis_matrix, forward_acceleration, kinetic_energy, link_matrix, mass_matrix, mass_matrix_at, settle, step_detailed,
    Kinematics, GRAVITY, WIDE_JOINT_LIMIT,
};
use crate::{ChainModel, ChainState};

/// Largest relative error a gradient check may report.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Physics,
    Gradients,
    Identifiability,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physics" => Ok(Suite::Physics),
            "gradients" => Ok(Suite::Gradients),
            "identifiability" => Ok(Suite::Identifiability),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidConfig(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Applied to every model the physics suite builds.
pub type ModelHook<'a> = &'a dyn Fn(ChainModel) -> ChainModel;

/// The model as built.
pub fn unchanged(model: ChainModel) -> ChainModel {
    model
}

/// Friction that pushes along the motion instead of against it.
pub fn negated_friction(mut model: ChainModel) -> ChainModel {
    model.mu = -model.mu;
    model
}

fn run_check(suite: &'static str, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check { suite, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn random_model(rng: &mut impl Rng, links: usize, hook: ModelHook) -> Result<ChainModel> {
    let lengths = (0..links).map(|_| rng.random_range(0.1..0.15)).collect();
    let masses = (0..links).map(|_| rng.random_range(0.1..10.0)).collect();
    Ok(hook(ChainModel::new(lengths, masses, rng.random_range(0.5..1.0), WIDE_JOINT_LIMIT)?))
}

fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Two-link floating-base mass matrix written out by hand from the kinetic
/// energy of both links.
pub fn two_link_mass_matrix(model: &ChainModel, q: &DVector<f64>) -> DMatrix<f64> {
    let (m0, m1) = (model.masses[0], model.masses[1]);
    let i0 = m0 * model.unit_inertias[0][(2, 2)];
    let i1 = m1 * model.unit_inertias[1][(2, 2)];
    let (a, b) = (model.lengths[0] / 2.0, model.lengths[1] / 2.0);
    let (alpha, theta) = (q[2], q[3]);
    let phi = alpha + theta;
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 0)] = m0 + m1;
    m[(1, 1)] = m0 + m1;
    m[(0, 2)] = -m1 * (a * alpha.sin() + b * phi.sin());
    m[(0, 3)] = -m1 * b * phi.sin();
    m[(1, 2)] = m1 * (a * alpha.cos() + b * phi.cos());
    m[(1, 3)] = m1 * b * phi.cos();
    m[(2, 2)] = i0 + i1 + m1 * (a * a + b * b + 2.0 * a * b * theta.cos());
    m[(2, 3)] = i1 + m1 * (b * b + a * b * theta.cos());
    m[(3, 3)] = i1 + m1 * b * b;
    m.fill_lower_triangle_with_upper_triangle();
    m
}

pub fn physics_suite(hook: ModelHook) -> Vec<Check> {
    const S: &str = "physics";
    let mut out = Vec::new();

    out.push(run_check(S, "stopping distance", || {
        let (v0, mu) = (0.5, 0.5);
        let model = hook(ChainModel::new(vec![0.12], vec![0.5], mu, WIDE_JOINT_LIMIT)?);
        let mut state = ChainState::at_rest(DVector::zeros(3));
        state.qdot[0] = v0;
        let (rest, _) = settle(&model, &state)?;
        let exact = v0 * v0 / (2.0 * mu * GRAVITY);
        let rel = ((rest.q[0] - exact) / exact).abs();
        Ok((rel < 0.01, format!("slid {:.5} m, expected {exact:.5} m ({:.2} %)", rest.q[0], 100.0 * rel)))
    }));

    out.push(run_check(S, "mass matrix", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = [0.0f64; 3];
        let mut min_eig = f64::INFINITY;
        for _ in 0..1000 {
            let model = random_model(&mut rng, 2, hook)?;
            let q = random_vec(&mut rng, 4, 3.0);
            let kin = Kinematics::new(&model, &q);
            let m = mass_matrix_at(&model, &kin);
            let mut sum = DMatrix::zeros(4, 4);
            for k in 0..2 {
                sum += link_matrix(&model, &kin, k) * model.masses[k];
            }
            worst[0] = worst[0].max((&m - two_link_mass_matrix(&model, &q)).amax());
            worst[1] = worst[1].max((&m - m.transpose()).amax());
            worst[2] = worst[2].max((&sum - &m).amax());
            min_eig = min_eig.min(m.symmetric_eigenvalues().min());
        }
        let ok = worst[0] < 1e-9 && worst[1] < 1e-12 && worst[2] < 1e-12 && min_eig > -1e-10;
        Ok((ok, format!("closed form {:.1e}, asymmetry {:.1e}, link sum {:.1e}, min eigenvalue {min_eig:.1e}", worst[0], worst[1], worst[2])))
    }));

    out.push(run_check(S, "passivity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let model = random_model(&mut rng, 2 + i % 2, hook)?;
            let n = model.dof();
            let q = random_vec(&mut rng, n, 2.0);
            let qdot = random_vec(&mut rng, n, 1.0);
            let h = 1e-6;
            let mdot = (mass_matrix(&model, &(&q + &qdot * h)) - mass_matrix(&model, &(&q - &qdot * h))) / (2.0 * h);
            let c = coriolis_matrix(&model, &q, &qdot);
            worst = worst.max((qdot.transpose() * (mdot - c * 2.0) * &qdot)[(0, 0)].abs());
        }
        Ok((worst < 1e-8, format!("largest residual {worst:.1e}")))
    }));

    out.push(run_check(S, "energy decay", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rises = 0;
        for i in 0..10 {
            let model = random_model(&mut rng, 2 + i % 2, hook)?;
            let n = model.dof();
            let mut state = ChainState { q: DVector::zeros(n), qdot: random_vec(&mut rng, n, 2.0) };
            let zero = DVector::zeros(n);
            let mut energy = kinetic_energy(&model, &state);
            for _ in 0..2000 {
                let (next, impulsive) = step_detailed(&model, &state, &zero, 1e-3)?;
                let e = kinetic_energy(&model, &next);
                if !impulsive && e > energy * (1.0 + 1e-12) + 1e-18 {
                    rises += 1;
                }
                energy = e;
                state = next;
            }
        }
        Ok((rises == 0, format!("{rises} steps gained kinetic energy without an impulse")))
    }));

    out.push(run_check(S, "mass scaling", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = PushParams::default();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let lengths = vec![rng.random_range(0.1..0.15), rng.random_range(0.1..0.15)];
            let masses = vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
            let model = hook(ChainModel::new(lengths, masses, rng.random_range(0.5..1.0), WIDE_JOINT_LIMIT)?);
            let heavy = model.scaled_masses(10.0);
            let mut light_state = sample_initial_state(&model, &mut rng);
            let mut heavy_state = light_state.clone();
            for _ in 0..5 {
                let a = PushAction::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let cmd = resolve_action(&model, &light_state.q, a, &params);
                light_state = execute_push(&model, &light_state, &cmd, &params)?.state;
                heavy_state = execute_push(&heavy, &heavy_state, &cmd, &params)?.state;
            }
            worst = worst.max((&light_state.q - &heavy_state.q).amax());
        }
        Ok((worst < 1e-6, format!("largest equilibrium difference {worst:.1e}")))
    }));
    out
}

fn weighted_sum(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn verdict(err: f64, block: &str) -> (bool, String) {
    (err < GRADIENT_TOLERANCE, format!("max relative error {err:.1e} ({block})"))
}

fn desk_episodes(count: usize, seed: u64) -> Result<Vec<EncodedEpisode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(count);
    for _ in 0..count {
        let lengths = vec![rng.random_range(0.1..0.15), rng.random_range(0.1..0.15)];
        let masses = vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        let model = ChainModel::new(lengths, masses, 0.7, WIDE_JOINT_LIMIT)?;
        eps.push(rollout_episode(&model, &mut UniformRandom, 5, 0.01, &PushParams::default(), &mut rng)?);
    }
    Ok(encode_dataset(&eps))
}

pub fn gradient_suite() -> Vec<Check> {
    const S: &str = "gradients";
    let mut out = Vec::new();

    for (name, act) in [("dense identity", Activation::Identity), ("dense relu", Activation::Relu)] {
        out.push(run_check(S, name, || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut p = NetworkParams::<f64>::new();
            let layer = Dense::new(&mut p, "d", 32, 64, act, &mut rng);
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = layer.forward(&p, &x)?;
            let mut g = p.zero_grads();
            layer.backward(&p, &mut g, &cache, &w)?;
            let r = gradient_check(&mut p, &g, 1e-5, |p| weighted_sum(&layer.forward(p, &x).unwrap().output, &w));
            Ok(verdict(r.max_relative_error, &r.worst_block))
        }));
    }

    out.push(run_check(S, "lstm", || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = NetworkParams::<f64>::new();
        let lstm = Lstm::new(&mut p, "l", 32, 64, &mut rng);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ws: Vec<Vec<f64>> = (0..5).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let loss = |p: &NetworkParams<f64>| {
            let (outs, _) = lstm.forward_sequence(p, &xs, &LstmState::zeros(64)).unwrap();
            outs.iter().zip(&ws).map(|(h, w)| weighted_sum(h, w)).sum::<f64>()
        };
        let (_, caches) = lstm.forward_sequence(&p, &xs, &LstmState::zeros(64))?;
        let mut g = p.zero_grads();
        lstm.backward_sequence(&p, &mut g, &caches, &ws)?;
        let r = gradient_check(&mut p, &g, 1e-5, loss);
        Ok(verdict(r.max_relative_error, &r.worst_block))
    }));

    out.push(run_check(S, "predictor", || {
        let mut net = PredictorNet::new(2, PredictorConfig::default(), &mut ChaCha8Rng::seed_from_u64(12));
        let data = desk_episodes(1, 13)?;
        let batch: Vec<&EncodedEpisode> = data.iter().collect();
        let mut g = net.params.zero_grads();
        batch_gradient(&net, &batch, &mut g)?;
        let mut probe = net.clone();
        let r = gradient_check(&mut net.params, &g, 1e-6, |p| {
            probe.params.copy_from(p).expect("same layout");
            sequence_loss(&probe.predict(&data[0].inputs).unwrap(), &data[0].m_true)
        });
        Ok(verdict(r.max_relative_error, &r.worst_block))
    }));

    out.push(run_check(S, "policy", || {
        let mut policy = PolicyNet::new(2, PolicyConfig::default(), &mut ChaCha8Rng::seed_from_u64(14));
        let predictor = PredictorNet::new(2, PredictorConfig::default(), &mut ChaCha8Rng::seed_from_u64(15));
        let sampler = |rng: &mut ChaCha8Rng| -> Result<ChainModel> {
            ChainModel::new(vec![0.12, 0.13], vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)], 0.7, WIDE_JOINT_LIMIT)
        };
        let env = RolloutEnv {
            predictor: &predictor,
            sample_model: &sampler,
            pushes: 3,
            noise_std: 0.01,
            push: PushParams::default(),
            beta: 1.0,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("single-thread pool");
        let mut batch = collect_rollouts(&policy, &env, 16, Purpose::PolicyRollout(0), 0..1, false, &pool)?;
        // Stale log-probabilities put the ratios away from one so both
        // branches of the clipped objective are exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for lp in batch.iter_mut().flat_map(|e| e.log_probs.iter_mut()) {
            *lp += rng.random_range(-0.05..0.05);
        }
        // A nonzero entropy bonus so its gradient is checked as well.
        let cfg = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
        let (adv, ret) = advantages(&batch, &cfg);
        let eps: Vec<&EpisodeRollout> = batch.iter().collect();
        let a: Vec<&[f64]> = adv.iter().map(|v| v.as_slice()).collect();
        let r: Vec<&[f64]> = ret.iter().map(|v| v.as_slice()).collect();
        let mut g = policy.params.zero_grads();
        ppo_loss(&policy, &eps, &a, &r, &cfg, &mut g)?;
        let mut probe = policy.clone();
        let mut scratch = policy.params.zero_grads();
        let report = gradient_check(&mut policy.params, &g, 1e-5, |p| {
            probe.params.copy_from(p).expect("same layout");
            ppo_loss(&probe, &eps, &a, &r, &cfg, &mut scratch).unwrap().loss
        });
        Ok(verdict(report.max_relative_error, &report.worst_block))
    }));
    out
}

pub fn identifiability_suite() -> Vec<Check> {
    const S: &str = "identifiability";
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cases: Vec<(ChainModel, DVector<f64>)> = (0..100)
        .map(|_| {
            let model = random_model(&mut rng, 2, &unchanged).expect("valid random chain");
            let q = random_vec(&mut rng, 4, 2.0);
            (model, q)
        })
        .collect();

    out.push(run_check(S, "link matrix reconstruction", || {
        let mut worst = 0.0f64;
        for (model, q) in &cases {
            let kin = Kinematics::new(model, q);
            let mut sum = DMatrix::zeros(4, 4);
            for k in 0..2 {
                sum += link_matrix(model, &kin, k) * model.masses[k];
            }
            worst = worst.max((sum - mass_matrix(model, q)).amax());
        }
        Ok((worst < 1e-12, format!("largest deviation {worst:.1e}")))
    }));

    out.push(run_check(S, "nullity", || {
        let mut smallest = usize::MAX;
        for (model, q) in &cases {
            for link in analyze(model, q, None)?.links {
                smallest = smallest.min(link.nullspace.len());
            }
        }
        Ok((smallest >= 1, format!("smallest nullity {smallest} (tolerance {RANK_TOLERANCE:.0e})")))
    }));

    out.push(run_check(S, "null-space mass independence", || {
        let mut worst = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (model, q) in &cases {
            let res = analyze(model, q, None)?;
            for k in 0..2 {
                let mut heavier = model.clone();
                heavier.masses[k] *= rng.random_range(1.5..5.0);
                let rest = ChainState::at_rest(q.clone());
                for v in &res.links[k].nullspace {
                    let force = mass_matrix(model, q) * v;
                    let a = forward_acceleration(model, &rest, &force)?;
                    let b = forward_acceleration(&heavier, &rest, &force)?;
                    worst = worst.max((a - b).amax());
                }
            }
        }
        Ok((worst < 1e-8, format!("largest response change {worst:.1e}")))
    }));
    out
}

pub fn run_suite(suite: Suite, hook: ModelHook) -> Vec<Check> {
    match suite {
        Suite::Physics => physics_suite(hook),
        Suite::Gradients => gradient_suite(),
        Suite::Identifiability => identifiability_suite(),
        Suite::All => {
            let mut all = physics_suite(hook);
            all.extend(gradient_suite());
            all.extend(identifiability_suite());
            all
        }
    }
}
