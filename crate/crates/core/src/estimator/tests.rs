use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::interaction::{rollout_episode, PushParams, UniformRandom};
use crate::neural::{gradient_check, GradCheckReport};
use crate::sim::WIDE_JOINT_LIMIT;
use crate::ChainModel;

fn episodes(count: usize, seed: u64) -> Vec<EpisodeTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let lengths = vec![rng.random_range(0.1..0.15), rng.random_range(0.1..0.15)];
            let masses = vec![rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
            let model = ChainModel::new(lengths, masses, 0.7, WIDE_JOINT_LIMIT).unwrap();
            rollout_episode(&model, &mut UniformRandom, 5, 0.01, &PushParams::default(), &mut rng).unwrap()
        })
        .collect()
}

fn tiny() -> PredictorConfig {
    PredictorConfig { encoder: 5, recurrent: 4, head: 3 }
}

#[test]
fn zero_output_layer_predicts_uniform() {
    let mut net = PredictorNet::new(2, PredictorConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    net.zero_output_layer();
    for ep in episodes(3, 1) {
        let preds = net.predict_sequence(&ep).unwrap();
        assert_eq!(preds.len(), 5);
        assert!(preds.iter().flatten().all(|&p| p == 0.5));
    }
}

#[test]
fn outputs_are_simplex_vectors_and_independent_of_batch_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = episodes(6, 3);
    for _ in 0..5 {
        let net = PredictorNet::new(2, PredictorConfig::default(), &mut rng);
        let forward: Vec<_> = eps.iter().map(|e| net.predict_sequence(e).unwrap()).collect();
        let backward: Vec<_> = eps.iter().rev().map(|e| net.predict_sequence(e).unwrap()).collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a, b);
        }
        for p in forward.iter().flatten() {
            assert!(p.iter().all(|&x| x > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn episode_with_wrong_link_count_is_rejected() {
    let net = PredictorNet::new(3, tiny(), &mut ChaCha8Rng::seed_from_u64(0));
    let ep = &episodes(1, 4)[0];
    assert!(matches!(net.predict_sequence(ep), Err(Error::ShapeMismatch(_))));
}

#[test]
fn loss_cases() {
    let m = vec![0.3, 0.7];
    assert_eq!(sequence_loss(&[m.clone(), m.clone()], &m), 0.0);
    let l = sequence_loss(&[vec![0.5, 0.5]], &[1.0, 0.0]);
    assert!((l - 0.5f64.sqrt()).abs() < 1e-15);
    let preds = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.9, 0.1]];
    let mut shuffled = preds.clone();
    shuffled.rotate_left(1);
    assert!((sequence_loss(&preds, &m) - sequence_loss(&shuffled, &m)).abs() < 1e-15);
    let (l2, g) = sequence_loss_grad(&[m.clone()], &m);
    assert_eq!(l2, 0.0);
    assert_eq!(g[0], vec![0.0, 0.0]);
}

#[test]
fn features_ignore_where_the_episode_starts() {
    let ep = &episodes(1, 5)[0];
    let moved: Vec<Vec<f64>> = ep
        .q_seq
        .iter()
        .map(|q| {
            let (s, c) = 0.8f64.sin_cos();
            let mut r = q.clone();
            r[0] = c * q[0] - s * q[1] + 1.5;
            r[1] = s * q[0] + c * q[1] - 2.0;
            r[2] = q[2] + 0.8;
            r
        })
        .collect();
    let a = step_inputs(&ep.q_seq, &ep.a_seq);
    let b = step_inputs(&moved, &ep.a_seq);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-9);
    }
    assert_eq!(a[0].len(), step_input_len(2));
}

fn full_network_check(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PredictorNet::new(2, tiny(), &mut rng);
    let data = encode_dataset(&episodes(2, seed + 100));
    let batch: Vec<&EncodedEpisode> = data.iter().collect();
    let mut grads = net.params.zero_grads();
    batch_gradient(&net, &batch, &mut grads).unwrap();
    let shell = net.clone();
    gradient_check(&mut net.params, &grads, 1e-6, |p| {
        let mut probe = shell.clone();
        probe.params = p.clone();
        let mut g = p.zero_grads();
        batch_gradient(&probe, &batch, &mut g).unwrap()
    })
}

#[test]
fn full_predictor_gradient_matches_finite_differences() {
    let report = full_network_check(7);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn training_loop_loss_matches_recomputation() {
    let net = PredictorNet::new(2, PredictorConfig::default(), &mut ChaCha8Rng::seed_from_u64(8));
    let data = encode_dataset(&episodes(4, 9));
    let batch: Vec<&EncodedEpisode> = data.iter().collect();
    let mut grads = net.params.zero_grads();
    let from_loop = batch_gradient(&net, &batch, &mut grads).unwrap();
    let independent: f64 = data
        .iter()
        .map(|e| sequence_loss(&net.predict(&e.inputs).unwrap(), &e.m_true))
        .sum::<f64>()
        / 4.0;
    assert!((from_loop - independent).abs() < 1e-12);
}

#[test]
fn single_episode_is_memorised() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ep = episodes(1, 11).remove(0);
    ep.m_true = vec![0.85, 0.15];
    let data = encode_dataset(&[ep]);
    let mut net = PredictorNet::new(2, PredictorConfig::default(), &mut rng);
    let before = sequence_loss(&net.predict(&data[0].inputs).unwrap(), &data[0].m_true);
    let schedule = TrainSchedule { total_steps: 1000, batch_size: 1, eval_every: 100, ..Default::default() };
    let report = train_predictor(&mut net, &data, &[], &schedule, &mut rng).unwrap();
    let after = sequence_loss(&net.predict(&data[0].inputs).unwrap(), &data[0].m_true);
    assert!(after <= 0.5 * before, "{before} -> {after}");
    assert_eq!(report.history.len(), 10);
}

#[test]
fn training_is_deterministic() {
    let data = encode_dataset(&episodes(12, 12));
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = PredictorNet::new(2, PredictorConfig::default(), &mut rng);
        let schedule = TrainSchedule { total_steps: 60, batch_size: 4, eval_every: 20, ..Default::default() };
        let report = train_predictor(&mut net, &data[..8], &data[8..], &schedule, &mut rng).unwrap();
        (report, net.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn learning_rate_halves_on_schedule() {
    let s = TrainSchedule::default();
    assert_eq!(s.learning_rate(0), 0.1);
    assert_eq!(s.learning_rate(16_599), 0.1);
    assert_eq!(s.learning_rate(16_600), 0.05);
    assert_eq!(s.learning_rate(49_999), 0.0125);
}
