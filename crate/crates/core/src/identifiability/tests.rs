use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sim::{forward_acceleration, mass_matrix, ChainState, WIDE_JOINT_LIMIT};

fn random_chain(rng: &mut impl Rng, n: usize) -> (ChainModel<f64>, DVector<f64>) {
    let lengths = (0..n).map(|_| rng.random_range(0.1..0.15)).collect();
    let masses = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let model = ChainModel::new(lengths, masses, rng.random_range(0.5..1.0), WIDE_JOINT_LIMIT).unwrap();
    let mut q = DVector::zeros(n + 2);
    q[0] = rng.random_range(-0.5..0.5);
    q[1] = rng.random_range(-0.5..0.5);
    q[2] = rng.random_range(-3.0..3.0);
    for j in 3..n + 2 {
        q[j] = rng.random_range(-2.5..2.5);
    }
    (model, q)
}

/// Largest sine of the principal angles between two subspaces.
fn subspace_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst: f64 = 0.0;
    for v in b {
        let mut r = v.clone();
        for u in a {
            r -= u * u.dot(v);
        }
        worst = worst.max(r.norm());
    }
    worst
}

#[test]
fn single_body_is_fully_identifiable() {
    let model = ChainModel::new(vec![0.12], vec![0.4], 0.6, WIDE_JOINT_LIMIT).unwrap();
    let q = DVector::from_vec(vec![0.1, -0.2, 0.7]);
    let a = link_identifiability_matrix(&model, &q, 0);
    assert_eq!(rank(&a, RANK_TOLERANCE), 3);
}

#[test]
fn every_link_of_a_short_chain_has_a_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in [2, 3] {
        for _ in 0..200 {
            let (model, q) = random_chain(&mut rng, n);
            let res = analyze(&model, &q, None).unwrap();
            for link in &res.links {
                assert!(link.rank <= 3);
                assert!(link.nullity() >= 1);
                assert_eq!(link.rank + link.nullity(), n + 2);
                for v in &link.nullspace {
                    assert!((link.matrix.clone() * v).norm() < 1e-9 * link.sigma_max);
                }
            }
        }
    }
}

#[test]
fn link_matrices_rebuild_the_mass_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (model, q) = random_chain(&mut rng, 3);
        let mut sum = DMatrix::zeros(5, 5);
        for k in 0..3 {
            sum += link_identifiability_matrix(&model, &q, k) * model.masses[k];
        }
        assert!((sum - mass_matrix(&model, &q)).amax() <= 1e-12);
    }
}

#[test]
fn nullspace_of_simple_matrices() {
    assert!(nullspace(&DMatrix::<f64>::identity(4, 4), 1e-9).is_empty());
    let basis = nullspace(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0f64, 0.0])), 1e-9);
    assert_eq!(basis.len(), 1);
    assert!((basis[0][0]).abs() < 1e-15 && (basis[0][1].abs() - 1.0).abs() < 1e-15);
    let wide = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
    let basis = nullspace(&wide, 1e-9);
    assert_eq!(basis.len(), 2);
    for v in &basis {
        assert!((&wide * v).norm() < 1e-12);
    }
}

#[test]
fn nullspace_recovers_constructed_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kernel_dim in 1..4 {
        let n = 6;
        // Random orthonormal frame via QR; the first columns span the kernel.
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let frame = raw.qr().q();
        let scales = DVector::from_fn(n, |i, _| if i < kernel_dim { 0.0 } else { rng.random_range(0.5..3.0) });
        let a = &frame * DMatrix::from_diagonal(&scales) * frame.transpose();
        let expected: Vec<DVector<f64>> = (0..kernel_dim).map(|i| frame.column(i).into_owned()).collect();
        let found = nullspace(&a, RANK_TOLERANCE);
        assert_eq!(found.len(), kernel_dim);
        for (i, u) in found.iter().enumerate() {
            assert!((u.norm() - 1.0).abs() < 1e-12);
            for w in &found[i + 1..] {
                assert!(u.dot(w).abs() < 1e-12);
            }
        }
        assert!(subspace_gap(&found, &expected) < 1e-8);
    }
}

#[test]
fn score_extremes_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (model, q) = random_chain(&mut rng, 2);
        let res = analyze(&model, &q, None).unwrap();
        for (k, link) in res.links.iter().enumerate() {
            let top = link.matrix.clone().symmetric_eigen();
            let imax = top.eigenvalues.imax();
            let v = top.eigenvectors.column(imax).into_owned();
            assert!((excitation_score(&model, &q, &v).unwrap()[k] - 1.0).abs() < 1e-10);
            let z = &link.nullspace[0];
            assert!(excitation_score(&model, &q, z).unwrap()[k] < 1e-8);
        }
        let a = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let s1 = excitation_score(&model, &q, &a).unwrap();
        let s2 = excitation_score(&model, &q, &(&a * 37.5)).unwrap();
        for (x, y) in s1.iter().zip(&s2) {
            assert!((0.0..=1.0 + 1e-12).contains(x));
            assert!((x - y).abs() < 1e-12);
        }
    }
    let (model, q) = random_chain(&mut rng, 2);
    assert!(matches!(
        excitation_score(&model, &q, &DVector::zeros(4)),
        Err(Error::ZeroAcceleration)
    ));
}

#[test]
fn straight_chain_axial_push_cannot_separate_masses() {
    let model = ChainModel::new(vec![0.12, 0.12], vec![0.3, 0.7], 0.6, WIDE_JOINT_LIMIT).unwrap();
    let q = DVector::zeros(4);
    let kin = Kinematics::new(&model, &q);
    // Push along the common axis at the distal tip.
    let tip = kin.world_point(1, 0.06, 0.0);
    let axial = point_force_response(&model, &q, 1, &tip, &Vector2::new(-1.0, 0.0)).unwrap();
    let sep = separability(&model, &q, &axial).unwrap();
    assert!(sep.iter().all(|&s| s < 1e-9), "{sep:?}");
    // A transverse strike at the distal tip spins the joint and separates them.
    let side = kin.world_point(1, 0.054, 0.02);
    let transverse = point_force_response(&model, &q, 1, &side, &Vector2::new(0.0, -1.0)).unwrap();
    let sep = separability(&model, &q, &transverse).unwrap();
    assert!(sep.iter().all(|&s| s > 0.5), "{sep:?}");
    let scores = excitation_score(&model, &q, &transverse).unwrap();
    assert!(scores.iter().all(|&s| s > 0.0 && s <= 1.0));
}

#[test]
fn null_space_accelerations_ignore_the_link_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let (model, q) = random_chain(&mut rng, 2);
        for k in 0..2 {
            let res = analyze(&model, &q, None).unwrap();
            let mut heavier = model.clone();
            heavier.masses[k] *= rng.random_range(1.5..5.0);
            for v in &res.links[k].nullspace {
                let force = mass_matrix(&model, &q) * v;
                let rest = ChainState::at_rest(q.clone());
                let a = forward_acceleration(&model, &rest, &force).unwrap();
                let b = forward_acceleration(&heavier, &rest, &force).unwrap();
                assert!((a.dot(v) - b.dot(v)).abs() < 1e-8);
                assert!((a - b).amax() < 1e-8);
            }
        }
    }
}

#[test]
fn table_has_one_row_per_link_and_action() {
    let model = ChainModel::new(vec![0.12, 0.1], vec![0.3, 0.7], 0.6, WIDE_JOINT_LIMIT).unwrap();
    let qs = vec![DVector::zeros(4), DVector::from_vec(vec![0.0, 0.0, 0.3, 1.0])];
    let actions = [PushAction { a1: 0.5, a2: -0.5 }, PushAction { a1: -1.0, a2: 0.9 }];
    let rows = identifiability_table(&model, &qs, &actions, &PushParams::default()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let mut buf = Vec::new();
    write_table(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("q0,q1,q2,q3,link,rank,nullity,a1,a2,score,separability"));
    assert_eq!(text.lines().count(), 9);
}
