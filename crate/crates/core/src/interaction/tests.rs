use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sim::WIDE_JOINT_LIMIT;

fn two_link() -> ChainModel {
    ChainModel::new(vec![0.12, 0.14], vec![0.4, 0.9], 0.7, WIDE_JOINT_LIMIT).unwrap()
}

#[test]
fn opposite_signs_hit_opposite_faces_of_the_same_point() {
    let model = two_link();
    let q = DVector::from_vec(vec![0.0, 0.0, 0.3, 0.5]);
    let p = PushParams::default();
    let p1 = resolve_action(&model, &q, PushAction::new(-0.6, 0.75), &p);
    let p2 = resolve_action(&model, &q, PushAction::new(0.6, 0.75), &p);
    let p3 = resolve_action(&model, &q, PushAction::new(0.6, -0.75), &p);
    assert_eq!((p1.link, p2.link), (1, 1));
    assert_eq!(p1.local_offset, p2.local_offset);
    assert_eq!((p1.side, p2.side), (-1.0, 1.0));
    assert!((p1.direction + p2.direction).norm() < 1e-15);
    assert_eq!(p3.link, 0);
    // 0.75 sits three quarters into link 1's sub-interval, -0.75 one quarter
    // into link 0's.
    assert!((p2.local_offset - 0.45 * 0.07).abs() < 1e-12);
    assert!((p3.local_offset + 0.45 * 0.06).abs() < 1e-12);
}

#[test]
fn zero_a1_is_slowest_push_on_positive_side() {
    let model = two_link();
    let q = DVector::zeros(4);
    let cmd = resolve_action(&model, &q, PushAction::new(0.0, 0.1), &PushParams::default());
    assert_eq!(cmd.speed, 0.1);
    assert_eq!(cmd.side, 1.0);
    let fast = resolve_action(&model, &q, PushAction::new(-3.0, 9.0), &PushParams::default());
    assert_eq!(fast.speed, 1.0);
    assert_eq!(fast.link, 1);
}

#[test]
fn action_grid_covers_both_faces_of_every_link() {
    for links in 1..=3 {
        let lengths = vec![0.12; links];
        let model = ChainModel::new(lengths, vec![1.0; links], 0.6, WIDE_JOINT_LIMIT).unwrap();
        let q = DVector::from_fn(model.dof(), |i, _| 0.1 * i as f64);
        let p = PushParams::default();
        let mut seen = vec![[false; 2]; links];
        for i in 0..=200 {
            for j in 0..=200 {
                let a = PushAction::new(-1.0 + 0.01 * i as f64, -1.0 + 0.01 * j as f64);
                let c = resolve_action(&model, &q, a, &p);
                assert!(c.link < links);
                assert!(c.local_offset.abs() <= 0.9 * 0.06 + 1e-15);
                assert!((0.1..=1.0).contains(&c.speed));
                assert!((c.direction.norm() - 1.0).abs() < 1e-12);
                seen[c.link][(c.side > 0.0) as usize] = true;
            }
        }
        assert!(seen.iter().all(|s| s[0] && s[1]));
    }
}

#[test]
fn null_push_leaves_chain_in_place() {
    let model = two_link();
    let state = ChainState::at_rest(DVector::from_vec(vec![0.1, 0.0, 0.3, 0.5]));
    let mut cmd = resolve_action(&model, &state.q, PushAction::new(0.5, 0.2), &PushParams::default());
    cmd.speed = 0.0;
    let out = execute_push(&model, &state, &cmd, &PushParams::default()).unwrap();
    assert!((&out.state.q - &state.q).abs().max() < 1e-9);
}

#[test]
fn push_through_com_translates_single_link() {
    let model = ChainModel::new(vec![0.13], vec![0.6], 0.8, WIDE_JOINT_LIMIT).unwrap();
    // Long axis along world y, so the +side face normal points along -x and
    // the push direction is +x.
    let state = ChainState::at_rest(DVector::from_vec(vec![0.0, 0.0, std::f64::consts::FRAC_PI_2]));
    let p = PushParams::default();
    let cmd = resolve_action(&model, &state.q, PushAction::new(0.7, 0.0), &p);
    assert_eq!(cmd.local_offset, 0.0);
    assert!((cmd.direction - Vector2::new(1.0, 0.0)).norm() < 1e-12);
    let out = execute_push(&model, &state, &cmd, &p).unwrap();
    assert!(out.state.q[0] > 0.05);
    assert!((out.state.q[2] - state.q[2]).abs() < 1e-6);
    assert!(out.state.q[1].abs() < 1e-6);
}

#[test]
fn push_outcome_is_invariant_to_mass_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = two_link();
    let heavy = model.scaled_masses(10.0);
    let p = PushParams::default();
    for _ in 0..5 {
        let state = sample_initial_state(&model, &mut rng);
        let a = PushAction::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let cmd = resolve_action(&model, &state.q, a, &p);
        let light = execute_push(&model, &state, &cmd, &p).unwrap();
        let heavy = execute_push(&heavy, &state, &cmd, &p).unwrap();
        assert!((&light.state.q - &heavy.state.q).abs().max() < 1e-6);
        assert!(light.min_impulse >= 0.0 && light.contact_steps > 0);
    }
}

#[test]
fn rollout_shapes_and_determinism() {
    let model = two_link();
    let p = PushParams::default();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rollout_episode(&model, &mut UniformRandom, 5, 0.01, &p, &mut rng).unwrap()
    };
    let ep = run(9);
    assert_eq!(ep.q_seq.len(), 6);
    assert_eq!(ep.a_seq.len(), 5);
    assert_eq!(ep.m_true, model.mass_distribution());
    ep.validate().unwrap();
    assert_eq!(ep, run(9));

    let mut fixed = FixedAction(PushAction::new(0.8, -0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rollout_episode(&model, &mut fixed, 3, 0.0, &p, &mut rng).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = rollout_episode(&model, &mut fixed, 3, 0.0, &p, &mut rng).unwrap();
    assert_eq!(a, b);
    assert!(a.a_seq.iter().all(|x| *x == [0.8, -0.3]));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy = rollout_episode(&model, &mut fixed, 3, 0.01, &p, &mut rng).unwrap();
    assert!(noisy.a_seq.iter().all(|x| *x == [0.8, -0.3]));
}

#[test]
fn initial_states_respect_joint_range() {
    let model = ChainModel::new(vec![0.15, 0.1, 0.15], vec![1.0; 3], 0.5, WIDE_JOINT_LIMIT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let s = sample_initial_state(&model, &mut rng);
        assert_eq!((s.q[0], s.q[1]), (0.0, 0.0));
        assert!(s.joint_angles().iter().all(|t| t.abs() <= 0.8 * WIDE_JOINT_LIMIT));
    }
}

#[test]
fn episode_file_round_trips_bit_exactly() {
    let model = two_link();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut eps = Vec::new();
    for seed in 0..3 {
        let mut ep =
            rollout_episode(&model, &mut UniformRandom, 2, 0.01, &PushParams::default(), &mut rng).unwrap();
        ep.seed = seed;
        eps.push(ep);
    }
    let mut buf = Vec::new();
    write_episodes(&mut buf, &eps).unwrap();
    let back = read_episodes(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back, eps);
}

#[test]
fn rejects_wrong_schema_version() {
    let line = r#"{"schema_version":99,"n":1,"mu":0.5,"lengths":[0.1],"m_true":[1.0],"q_seq":[[0,0,0]],"a_seq":[],"seed":1}"#;
    assert!(read_episodes(std::io::Cursor::new(line)).is_err());
}
