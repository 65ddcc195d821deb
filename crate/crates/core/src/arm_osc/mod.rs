//! Operational space control of an arm end-effector.
//!
//! The controller maps a desired end-effector acceleration to joint torques
//! through the task-space inertia `M_x = (J M⁻¹ Jᵀ)⁻¹`:
//! `τ = Jᵀ M_x ẍ_des + g(q)`, with `ẍ_des` from a PD rule on pose error.
//! Coriolis terms are deliberately left out of the torque.
//!
//! Arms whose motion spans fewer than six task directions declare the
//! controllable rows through [`ArmModel::task_rows`]; all task-space
//! quantities are then restricted to those rows.

mod planar;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use planar::PlanarArm;

/// Task-space condition number above which a pose is treated as singular.
pub const MAX_TASK_CONDITION: f64 = 1e8;
pub const DEFAULT_KP: f64 = 3000.0;
pub const DEFAULT_KD: f64 = 152.0;

/// Rows of a spatial twist: linear x, y, z then angular x, y, z.
pub const ALL_TASK_ROWS: [usize; 6] = [0, 1, 2, 3, 4, 5];

pub trait ArmModel<T: Real> {
    fn dof(&self) -> usize;
    fn mass_matrix(&self, q: &DVector<T>) -> DMatrix<T>;
    fn gravity(&self, q: &DVector<T>) -> DVector<T>;
    /// End-effector spatial Jacobian, 6 × dof.
    fn jacobian(&self, q: &DVector<T>) -> DMatrix<T>;
    fn forward_kinematics(&self, q: &DVector<T>) -> (Vector3<T>, Matrix3<T>);
    fn task_rows(&self) -> &[usize] {
        &ALL_TASK_ROWS
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndEffectorTarget<T: Real> {
    pub position: Vector3<T>,
    pub rotation: Matrix3<T>,
    pub velocity: Vector6<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains<T> {
    pub kp: T,
    pub kd: T,
}

impl<T: Real> Default for Gains<T> {
    fn default() -> Self {
        Gains { kp: T::lit(DEFAULT_KP), kd: T::lit(DEFAULT_KD) }
    }
}

/// Rotation vector (axis times angle) of `r_des · rᵀ`.
///
/// At exactly half a turn the axis sign is ambiguous; the axis whose first
/// nonzero component is positive is returned.
pub fn orientation_diff<T: Real>(r_des: &Matrix3<T>, r: &Matrix3<T>) -> Vector3<T> {
    let delta = r_des * r.transpose();
    let skew = Vector3::new(
        delta[(2, 1)] - delta[(1, 2)],
        delta[(0, 2)] - delta[(2, 0)],
        delta[(1, 0)] - delta[(0, 1)],
    ) * T::lit(0.5);
    let cos = ((delta.trace() - T::one()) * T::lit(0.5)).min(T::one()).max(-T::one());
    let sin = skew.norm();
    let angle = sin.atan2(cos);
    if angle < T::pi() - T::lit(1e-6) {
        // atan2 keeps full precision for small angles, where acos does not.
        return if sin > T::zero() { skew * (angle / sin) } else { skew };
    }
    // Near half a turn: `(R + I)/2 ≈ a aᵀ`; read the axis from the column
    // with the largest diagonal entry.
    let outer = (delta + Matrix3::identity()) * T::lit(0.5);
    let mut best = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(best, best)] {
            best = i;
        }
    }
    let mut axis: Vector3<T> = outer.column(best).into_owned();
    axis /= axis.norm();
    let reference_sign = if sin > T::lit(1e-12) {
        axis.dot(&skew)
    } else {
        axis.iter().copied().find(|c| c.abs() > T::lit(1e-12)).unwrap_or(T::one())
    };
    if reference_sign < T::zero() {
        axis = -axis;
    }
    axis * angle
}

/// PD rule on pose and twist error.
pub fn desired_accel<T: Real>(
    position: &Vector3<T>,
    rotation: &Matrix3<T>,
    velocity: &Vector6<T>,
    target: &EndEffectorTarget<T>,
    gains: Gains<T>,
) -> Vector6<T> {
    let lin = target.position - position;
    let ang = orientation_diff(&target.rotation, rotation);
    let pose_err = Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z);
    pose_err * gains.kp + (target.velocity - velocity) * gains.kd
}

fn select_rows<T: Real>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    m.select_rows(rows.iter())
}

/// `M_x = (J M⁻¹ Jᵀ)⁻¹` over the arm's task rows.
pub fn task_space_mass<A: ArmModel<T>, T: Real>(arm: &A, q: &DVector<T>) -> Result<DMatrix<T>> {
    let m = arm.mass_matrix(q);
    let minv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })?;
    let j = select_rows(&arm.jacobian(q), arm.task_rows());
    let lambda_inv = &j * minv * j.transpose();
    let eig = lambda_inv.clone().symmetric_eigen();
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    let condition = if lo > T::zero() { (hi / lo).to_f64_lossy() } else { f64::INFINITY };
    if !(condition < MAX_TASK_CONDITION) {
        return Err(Error::KinematicSingularity { condition });
    }
    let inv_vals = eig.eigenvalues.map(|v| T::one() / v);
    let mx = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok((&mx + mx.transpose()) * T::lit(0.5))
}

/// `τ = Jᵀ M_x ẍ_des + g(q)`.
pub fn osc_torque<A: ArmModel<T>, T: Real>(
    arm: &A,
    q: &DVector<T>,
    xddot_des: &Vector6<T>,
) -> Result<DVector<T>> {
    let rows = arm.task_rows();
    let mx = task_space_mass(arm, q)?;
    let j = select_rows(&arm.jacobian(q), rows);
    let accel = DVector::from_iterator(rows.len(), rows.iter().map(|&r| xddot_des[r]));
    Ok(j.transpose() * (mx * accel) + arm.gravity(q))
}

/// End-effector twist `J q̇`.
pub fn end_effector_velocity<A: ArmModel<T>, T: Real>(
    arm: &A,
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> Vector6<T> {
    let v = arm.jacobian(q) * qdot;
    Vector6::from_iterator(v.iter().copied())
}
