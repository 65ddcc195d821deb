//! Mass matrix, Coriolis terms and surface friction of the chain.

use nalgebra::{DMatrix, DVector, Vector2};

use super::kinematics::Kinematics;
use super::model::{ChainModel, ChainState};
use crate::scalar::Real;

/// Friction sample points per link.
pub const FRICTION_SAMPLES: usize = 5;
/// Below this sample-point speed friction is viscous, m/s.
pub const STICK_VELOCITY: f64 = 1e-3;

/// Per-link contribution `A_k = J_vᵀ J_v + J_ωᵀ I_k J_ω`, so that
/// `M(q) = Σ m_k A_k`.
pub fn link_matrix<T: Real>(model: &ChainModel<T>, kin: &Kinematics<T>, link: usize) -> DMatrix<T> {
    let (jv, jw) = kin.link_jacobians(link);
    let rot = &model.unit_inertias[link] * &jw;
    jv.transpose() * jv + jw.transpose() * rot
}

pub fn mass_matrix_at<T: Real>(model: &ChainModel<T>, kin: &Kinematics<T>) -> DMatrix<T> {
    let n = kin.dof();
    let mut m = DMatrix::zeros(n, n);
    for k in 0..model.links() {
        m += link_matrix(model, kin, k) * model.masses[k];
    }
    m
}

pub fn mass_matrix<T: Real>(model: &ChainModel<T>, q: &DVector<T>) -> DMatrix<T> {
    mass_matrix_at(model, &Kinematics::new(model, q))
}

/// `∂M/∂q_l` for every coordinate `l`. Angular Jacobians are constant in
/// the plane, so only the linear parts contribute.
pub fn mass_matrix_derivatives<T: Real>(
    model: &ChainModel<T>,
    kin: &Kinematics<T>,
) -> Vec<DMatrix<T>> {
    let n = kin.dof();
    let mut out = vec![DMatrix::zeros(n, n); n];
    for k in 0..model.links() {
        let jac = kin.point_jacobian(k, &kin.com[k]);
        let derivs = kin.point_jacobian_derivatives(k, &jac);
        for (dm, dj) in out.iter_mut().zip(&derivs) {
            let sym = dj.transpose() * &jac;
            *dm += (&sym + sym.transpose()) * model.masses[k];
        }
    }
    out
}

/// Coriolis matrix from Christoffel symbols of the first kind:
/// `C_ij = Σ_l ½ (∂M_ij/∂q_l + ∂M_il/∂q_j − ∂M_jl/∂q_i) qdot_l`.
pub fn coriolis_matrix_at<T: Real>(
    model: &ChainModel<T>,
    kin: &Kinematics<T>,
    qdot: &DVector<T>,
) -> DMatrix<T> {
    let n = kin.dof();
    let dm = mass_matrix_derivatives(model, kin);
    let half = T::lit(0.5);
    DMatrix::from_fn(n, n, |i, j| {
        (0..n).fold(T::zero(), |acc, l| {
            acc + (dm[l][(i, j)] + dm[j][(i, l)] - dm[i][(j, l)]) * half * qdot[l]
        })
    })
}

pub fn coriolis_matrix<T: Real>(model: &ChainModel<T>, q: &DVector<T>, qdot: &DVector<T>) -> DMatrix<T> {
    coriolis_matrix_at(model, &Kinematics::new(model, q), qdot)
}

pub fn coriolis_vector<T: Real>(model: &ChainModel<T>, q: &DVector<T>, qdot: &DVector<T>) -> DVector<T> {
    coriolis_matrix(model, q, qdot) * qdot
}

/// Friction of one state in linearized form: the generalized force is
/// `force = -damping * qdot`, where `damping = Σ_p c_p J_pᵀ J_p` and
/// `c_p = μ m_p g / max(|v_p|, ε_v)` is frozen at the current velocity.
#[derive(Clone, Debug)]
pub struct Friction<T: Real> {
    pub force: DVector<T>,
    pub damping: DMatrix<T>,
}

/// Offsets of the friction sample points along a link of length `length`,
/// measured from its COM.
pub fn friction_sample_offsets<T: Real>(length: T) -> [T; FRICTION_SAMPLES] {
    std::array::from_fn(|i| {
        length * (T::lit((i as f64 + 0.5) / FRICTION_SAMPLES as f64) - T::lit(0.5))
    })
}

pub fn friction_at<T: Real>(
    model: &ChainModel<T>,
    kin: &Kinematics<T>,
    qdot: &DVector<T>,
) -> Friction<T> {
    let n = kin.dof();
    let mut damping = DMatrix::zeros(n, n);
    let eps = T::lit(STICK_VELOCITY);
    for k in 0..model.links() {
        let weight = model.mu * model.masses[k] * model.gravity / T::lit(FRICTION_SAMPLES as f64);
        for s in friction_sample_offsets(model.lengths[k]) {
            let p = kin.com[k] + kin.axis[k] * s;
            let jac = kin.point_jacobian(k, &p);
            let v: Vector2<T> = &jac * qdot;
            let c = weight / v.norm().max(eps);
            damping += jac.transpose() * &jac * c;
        }
    }
    let force = -(&damping * qdot);
    Friction { force, damping }
}

/// Generalized friction force of the current state.
pub fn friction_generalized_force<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> DVector<T> {
    friction_at(model, &Kinematics::new(model, q), qdot).force
}

pub fn kinetic_energy<T: Real>(model: &ChainModel<T>, state: &ChainState<T>) -> T {
    let m = mass_matrix(model, &state.q);
    (state.qdot.transpose() * m * &state.qdot)[(0, 0)] * T::lit(0.5)
}
