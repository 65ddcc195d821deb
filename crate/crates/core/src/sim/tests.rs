use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use super::integrate::closest_points;

fn random_model(rng: &mut impl Rng, links: usize) -> ChainModel<f64> {
    let lengths = (0..links).map(|_| rng.random_range(0.1..0.15)).collect();
    let masses = (0..links).map(|_| rng.random_range(0.1..10.0)).collect();
    ChainModel::new(lengths, masses, rng.random_range(0.5..1.0), WIDE_JOINT_LIMIT).unwrap()
}

fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Two-link floating-base mass matrix written out from the kinetic energy
/// `½ m0 |v0|² + ½ I0 α̇² + ½ m1 |v1|² + ½ I1 (α̇ + θ̇)²`.
fn two_link_closed_form(model: &ChainModel<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let (m0, m1) = (model.masses[0], model.masses[1]);
    let i0 = m0 * model.unit_inertias[0][(2, 2)];
    let i1 = m1 * model.unit_inertias[1][(2, 2)];
    let a = model.lengths[0] / 2.0;
    let b = model.lengths[1] / 2.0;
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
    for i in 0..4 {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

#[test]
fn single_body_mass_matrix_is_diagonal() {
    let model = ChainModel::new(vec![0.12], vec![0.7], 0.6, WIDE_JOINT_LIMIT).unwrap();
    let q = DVector::from_vec(vec![0.3, -0.2, 1.1]);
    let m = mass_matrix(&model, &q);
    let izz = model.unit_inertias[0][(2, 2)];
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 0.7, 0.7 * izz]));
    assert!((m - expected).abs().max() < 1e-15);
}

#[test]
fn two_link_mass_matrix_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let model = random_model(&mut rng, 2);
        let q = random_vec(&mut rng, 4, 3.0);
        let diff = (mass_matrix(&model, &q) - two_link_closed_form(&model, &q)).abs().max();
        assert!(diff < 1e-9, "diff {diff}");
    }
}

#[test]
fn mass_matrix_is_linear_in_masses() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_model(&mut rng, 3);
    let q = random_vec(&mut rng, 5, 2.0);
    let scaled = mass_matrix(&model.scaled_masses(3.0), &q);
    assert!((scaled - mass_matrix(&model, &q) * 3.0).abs().max() < 1e-13);
}

#[test]
fn mass_matrix_symmetric_psd_and_sums_link_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let model = random_model(&mut rng, 2 + i % 2);
        let q = random_vec(&mut rng, model.dof(), 3.0);
        let kin = Kinematics::new(&model, &q);
        let m = mass_matrix_at(&model, &kin);
        assert!((&m - m.transpose()).abs().max() < 1e-12);
        assert!(m.clone().symmetric_eigenvalues().min() >= -1e-10);
        let mut sum = DMatrix::zeros(model.dof(), model.dof());
        for k in 0..model.links() {
            sum += link_matrix(&model, &kin, k) * model.masses[k];
        }
        assert!((sum - m).abs().max() < 1e-12);
    }
}

#[test]
fn coriolis_vanishes_at_rest_and_scales_with_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = random_model(&mut rng, 3);
    let q = random_vec(&mut rng, 5, 2.0);
    assert_eq!(coriolis_vector(&model, &q, &DVector::zeros(5)).abs().max(), 0.0);
    let qdot = random_vec(&mut rng, 5, 1.0);
    let c = coriolis_vector(&model, &q, &qdot);
    let c10 = coriolis_vector(&model.scaled_masses(10.0), &q, &qdot);
    assert!((c10 - c * 10.0).abs().max() < 1e-12);
}

#[test]
fn coriolis_matches_jacobian_rate_form() {
    // Independent route: C qdot = Σ m_k J_kᵀ (dJ_k/dt) qdot (planar links have
    // no gyroscopic term).
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let model = random_model(&mut rng, 3);
        let q = random_vec(&mut rng, 5, 2.0);
        let qdot = random_vec(&mut rng, 5, 2.0);
        let kin = Kinematics::new(&model, &q);
        let mut expected = DVector::zeros(5);
        for k in 0..3 {
            let jac = kin.point_jacobian(k, &kin.com[k]);
            let derivs = kin.point_jacobian_derivatives(k, &jac);
            let mut jdot = nalgebra::Matrix2xX::zeros(5);
            for (l, d) in derivs.iter().enumerate() {
                jdot += d * qdot[l];
            }
            expected += jac.transpose() * (jdot * &qdot) * model.masses[k];
        }
        let got = coriolis_vector(&model, &q, &qdot);
        assert!((got - expected).abs().max() < 1e-10);
    }
}

#[test]
fn mass_matrix_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = random_model(&mut rng, 3);
    let q = random_vec(&mut rng, 5, 2.0);
    let analytic = mass_matrix_derivatives(&model, &Kinematics::new(&model, &q));
    let h = 1e-6;
    for l in 0..5 {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[l] += h;
        qm[l] -= h;
        let fd = (mass_matrix(&model, &qp) - mass_matrix(&model, &qm)) / (2.0 * h);
        assert!((fd - &analytic[l]).abs().max() < 1e-8);
    }
}

#[test]
fn passivity_holds_with_finite_difference_mass_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let model = random_model(&mut rng, 3);
        let q = random_vec(&mut rng, 5, 2.0);
        let qdot = random_vec(&mut rng, 5, 1.0);
        let h = 1e-6;
        let mdot = (mass_matrix(&model, &(&q + &qdot * h)) - mass_matrix(&model, &(&q - &qdot * h)))
            / (2.0 * h);
        let c = coriolis_matrix(&model, &q, &qdot);
        let s = (qdot.transpose() * (mdot - c * 2.0) * &qdot)[(0, 0)];
        assert!(s.abs() < 1e-8, "skew residual {s}");
    }
}

#[test]
fn friction_vanishes_at_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = random_model(&mut rng, 3);
    let q = random_vec(&mut rng, 5, 2.0);
    assert_eq!(friction_generalized_force(&model, &q, &DVector::zeros(5)).abs().max(), 0.0);
}

#[test]
fn translating_link_feels_full_coulomb_force() {
    let model = ChainModel::new(vec![0.12], vec![0.8], 0.7, WIDE_JOINT_LIMIT).unwrap();
    let q = DVector::from_vec(vec![0.0, 0.0, 0.4]);
    let qdot = DVector::from_vec(vec![0.3, -0.4, 0.0]);
    let f = friction_generalized_force(&model, &q, &qdot);
    let mag = (f[0] * f[0] + f[1] * f[1]).sqrt();
    assert!((mag - 0.7 * 0.8 * GRAVITY).abs() < 1e-12);
    assert!((f[0] / mag - (-0.6)).abs() < 1e-12);
    assert!(f[2].abs() < 1e-14);
}

#[test]
fn spinning_link_friction_torque_is_sum_of_sample_moments() {
    let (len, mass, mu) = (0.14, 1.3, 0.9);
    let model = ChainModel::new(vec![len], vec![mass], mu, WIDE_JOINT_LIMIT).unwrap();
    let omega = 2.0;
    let q = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let qdot = DVector::from_vec(vec![0.0, 0.0, omega]);
    let f = friction_generalized_force(&model, &q, &qdot);
    // Each sample at offset s moves at |ω s| (≫ ε_v here except s = 0, which has
    // no lever arm) and resists with μ m g / 5 at lever arm |s|.
    let expected: f64 = [-0.4, -0.2, 0.0, 0.2, 0.4]
        .iter()
        .map(|&frac: &f64| -mu * mass * GRAVITY / 5.0 * (frac * len).abs())
        .sum();
    assert!((f[2] - expected).abs() < 1e-12, "{} vs {}", f[2], expected);
    assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
}

#[test]
fn zero_force_at_rest_is_an_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(&mut rng, 3);
    let state = ChainState::at_rest(DVector::from_vec(vec![0.1, 0.2, 0.3, 0.5, -0.7]));
    let next = step(&model, &state, &DVector::zeros(5), 1e-3).unwrap();
    assert_eq!(next, state);
}

/// Slides a single link with initial COM speed `v0` and returns the distance.
fn stopping_distance(v0: f64, mu: f64) -> f64 {
    let model = ChainModel::new(vec![0.12], vec![0.5], mu, WIDE_JOINT_LIMIT).unwrap();
    let mut state = ChainState::at_rest(DVector::zeros(3));
    state.qdot[0] = v0;
    let (rest, _) = settle(&model, &state).unwrap();
    rest.q[0]
}

#[test]
fn single_link_stopping_distance_matches_closed_form() {
    let (v0, mu) = (0.5, 0.5);
    let exact = v0 * v0 / (2.0 * mu * GRAVITY);
    assert!((exact - 0.02548).abs() < 1e-5);
    let d = stopping_distance(v0, mu);
    assert!(((d - exact) / exact).abs() < 0.01, "{d} vs {exact}");
}

#[test]
fn trajectories_are_invariant_to_uniform_mass_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for links in [2, 3] {
        let model = random_model(&mut rng, links);
        let heavy = model.scaled_masses(10.0);
        let n = model.dof();
        let mut q = DVector::zeros(n);
        q[2] = 0.4;
        let mut a = ChainState { q, qdot: random_vec(&mut rng, n, 1.0) };
        let mut b = a.clone();
        let zero = DVector::zeros(n);
        for _ in 0..1000 {
            a = step(&model, &a, &zero, 1e-3).unwrap();
            b = step(&heavy, &b, &zero, 1e-3).unwrap();
            assert!((&a.q - &b.q).abs().max() < 1e-8);
        }
    }
}

#[test]
fn resolve_leaves_free_states_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = random_model(&mut rng, 3);
    let state = ChainState {
        q: DVector::from_vec(vec![0.0, 0.0, 0.2, 0.3, 0.3]),
        qdot: random_vec(&mut rng, 5, 1.0),
    };
    let (out, impulsive) = resolve_constraints(&model, &state).unwrap();
    assert_eq!(out, state);
    assert!(!impulsive);
}

#[test]
fn joint_at_limit_stops_outward_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_model(&mut rng, 2);
    let state = ChainState {
        q: DVector::from_vec(vec![0.0, 0.0, 0.0, 2.65]),
        qdot: DVector::from_vec(vec![0.1, -0.2, 0.3, 1.5]),
    };
    let out = resolve_joint_limits(&model, &state).unwrap();
    assert_eq!(out.q[3], WIDE_JOINT_LIMIT);
    assert!(out.qdot[3].abs() < 1e-14);
    // Inward motion at the limit is left alone.
    let inward = ChainState {
        q: DVector::from_vec(vec![0.0, 0.0, 0.0, WIDE_JOINT_LIMIT]),
        qdot: DVector::from_vec(vec![0.0, 0.0, 0.0, -1.0]),
    };
    assert_eq!(resolve_joint_limits(&model, &inward).unwrap(), inward);
}

#[test]
fn folding_three_link_chain_does_not_interpenetrate() {
    let model = ChainModel::new(vec![0.15, 0.1, 0.15], vec![1.0, 1.0, 1.0], 0.5, 3.1).unwrap();
    // Both joints closing fast: links 0 and 2 swing into each other.
    let mut state = ChainState {
        q: DVector::from_vec(vec![0.0, 0.0, 0.0, 2.0, 2.0]),
        qdot: DVector::from_vec(vec![0.0, 0.0, 0.0, 6.0, 6.0]),
    };
    let zero = DVector::zeros(5);
    let mut touched = false;
    for _ in 0..400 {
        let (next, impulsive) = step_detailed(&model, &state, &zero, 1e-3).unwrap();
        touched |= impulsive;
        state = next;
        let kin = Kinematics::new(&model, &state.q);
        for c in capsule_contacts(&model, &kin, 0.0) {
            assert!(c.depth < 1e-4, "overlap {}", c.depth);
        }
        for c in capsule_contacts(&model, &kin, 1e-6) {
            assert!(c.row.dot(&state.qdot) > -1e-9);
        }
    }
    assert!(touched);
}

#[test]
fn constraint_resolution_never_adds_kinetic_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..500 {
        let model = random_model(&mut rng, 2 + i % 2);
        let n = model.dof();
        let mut q = random_vec(&mut rng, n, 3.0);
        for j in 3..n {
            q[j] = rng.random_range(-3.2..3.2);
        }
        let state = ChainState { q, qdot: random_vec(&mut rng, n, 2.0) };
        let out = resolve_joint_limits(&model, &state).unwrap();
        // Compare at the resolved configuration: impulses only change velocity.
        let before = kinetic_energy(&model, &ChainState { q: out.q.clone(), qdot: state.qdot.clone() });
        let after = kinetic_energy(&model, &out);
        assert!(after <= before * (1.0 + 1e-12) + 1e-15, "{after} > {before}");
    }
}

#[test]
fn settle_from_rest_is_immediate_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = random_model(&mut rng, 3);
    let rest = ChainState::at_rest(DVector::from_vec(vec![0.0, 0.0, 0.1, 0.4, -0.4]));
    let (out, steps) = settle(&model, &rest).unwrap();
    assert!(steps <= 50);
    assert_eq!(out, rest);

    let moving = ChainState { q: rest.q.clone(), qdot: DVector::from_vec(vec![0.4, 0.1, 3.0, -2.0, 4.0]) };
    let (settled, _) = settle(&model, &moving).unwrap();
    let (again, _) = settle(&model, &settled).unwrap();
    assert!((&again.q - &settled.q).abs().max() < 1e-6);
    assert_eq!(settled.qdot.abs().max(), 0.0);
}

#[test]
fn kinetic_energy_decays_between_impulses() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for i in 0..20 {
        let model = random_model(&mut rng, 2 + i % 2);
        let n = model.dof();
        let mut state = ChainState { q: DVector::zeros(n), qdot: random_vec(&mut rng, n, 2.0) };
        let zero = DVector::zeros(n);
        let mut energy = kinetic_energy(&model, &state);
        for _ in 0..3000 {
            let (next, impulsive) = step_detailed(&model, &state, &zero, 1e-3).unwrap();
            let e = kinetic_energy(&model, &next);
            if !impulsive {
                assert!(e <= energy * (1.0 + 1e-12) + 1e-18, "energy rose {energy} -> {e}");
            }
            energy = e;
            state = next;
        }
    }
}

#[test]
fn degenerate_model_reports_singular_mass_matrix() {
    let mut model = ChainModel::new(vec![0.12, 0.12], vec![1.0, 1.0], 0.5, 2.6).unwrap();
    model.masses[1] = 1e-20;
    let state = ChainState::at_rest(DVector::zeros(4));
    assert!(matches!(
        step(&model, &state, &DVector::zeros(4), 1e-3),
        Err(crate::Error::SingularMassMatrix { .. })
    ));
}

#[test]
fn segment_closest_points() {
    let (a, b) = closest_points(
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(0.5, 1.0),
        Vector2::new(0.5, 2.0),
    );
    assert_eq!(a, Vector2::new(0.5, 0.0));
    assert_eq!(b, Vector2::new(0.5, 1.0));
}

#[test]
fn runs_in_single_precision() {
    let model = ChainModel::<f32>::new(vec![0.12], vec![0.5], 0.5, 2.6).unwrap();
    let mut state = ChainState::at_rest(DVector::<f32>::zeros(3));
    state.qdot[0] = 0.5;
    let (rest, _) = settle(&model, &state).unwrap();
    let exact = 0.25 / (2.0 * 0.5 * 9.81);
    assert!(((rest.q[0] as f64 - exact) / exact).abs() < 0.02);
}
