//! Time stepping, constraint resolution and settling.

use nalgebra::{DMatrix, DVector, Vector2};

use super::dynamics::{coriolis_matrix_at, friction_at, mass_matrix_at};
use super::kinematics::{perp, Kinematics};
use super::model::{ChainModel, ChainState};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest mass-matrix condition estimate accepted by the integrator.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams<T: Real> {
    pub dt: T,
    /// Equilibrium is declared once `|qdot|_inf` stays below this ...
    pub rest_velocity: T,
    /// ... for this many consecutive steps.
    pub rest_steps: usize,
    pub max_settle_steps: usize,
}

impl<T: Real> Default for SimParams<T> {
    fn default() -> Self {
        SimParams {
            dt: T::lit(1e-3),
            rest_velocity: T::lit(1e-3),
            rest_steps: 50,
            max_settle_steps: 20_000,
        }
    }
}

/// Factored mass matrix of one configuration.
pub(crate) struct Inertia<T: Real> {
    pub matrix: DMatrix<T>,
    pub inverse: DMatrix<T>,
}

impl<T: Real> Inertia<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })?;
        // Squared ratio of the Cholesky diagonal bounds the condition number from below.
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (T::max_value().unwrap(), T::zero());
        for i in 0..l.nrows() {
            lo = lo.min(l[(i, i)]);
            hi = hi.max(l[(i, i)]);
        }
        let condition = (hi / lo).powi(2).to_f64_lossy();
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularMassMatrix { condition });
        }
        Ok(Inertia { inverse: chol.inverse(), matrix })
    }
}

/// Requirement `row · qdot >= target` on the generalized velocity.
#[derive(Clone, Debug)]
pub(crate) struct VelocityConstraint<T: Real> {
    pub row: DVector<T>,
    pub target: T,
}

impl<T: Real> VelocityConstraint<T> {
    /// Applies the smallest nonnegative impulse along `row` that satisfies
    /// the constraint, measured in the mass-matrix metric. Returns the impulse.
    pub fn project(&self, minv: &DMatrix<T>, qdot: &mut DVector<T>) -> T {
        let deficit = self.target - self.row.dot(qdot);
        if deficit <= T::zero() {
            return T::zero();
        }
        let response = minv * &self.row;
        let eff = self.row.dot(&response);
        if eff <= T::zero() {
            return T::zero();
        }
        let impulse = deficit / eff;
        qdot.axpy(impulse, &response, T::one());
        impulse
    }
}

/// Contact between two non-adjacent links modelled as capsules.
#[derive(Clone, Debug)]
pub(crate) struct CapsuleContact<T: Real> {
    /// `nᵀ (J_a - J_b)`: separating normal velocity.
    pub row: DVector<T>,
    pub depth: T,
}

/// Closest points between segments `p1-q1` and `p2-q2`.
pub(crate) fn closest_points<T: Real>(
    p1: Vector2<T>,
    q1: Vector2<T>,
    p2: Vector2<T>,
    q2: Vector2<T>,
) -> (Vector2<T>, Vector2<T>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let zero = T::zero();
    let one = T::one();
    let mut s = if denom > T::lit(1e-14) * a * e { ((b * f - c * e) / denom).clamp(zero, one) } else { zero };
    let mut t = (b * s + f) / e;
    if t < zero {
        t = zero;
        s = (-c / a).clamp(zero, one);
    } else if t > one {
        t = one;
        s = ((b - c) / a).clamp(zero, one);
    }
    (p1 + d1 * s, p2 + d2 * t)
}

pub(crate) fn capsule_contacts<T: Real>(
    model: &ChainModel<T>,
    kin: &Kinematics<T>,
    slop: T,
) -> Vec<CapsuleContact<T>> {
    let n = model.links();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 2)..n {
            let (a0, a1) = kin.segment(i, model.lengths[i]);
            let (b0, b1) = kin.segment(j, model.lengths[j]);
            let (pa, pb) = closest_points(a0, a1, b0, b1);
            let radius = (model.widths[i] + model.widths[j]) * T::lit(0.5);
            let delta = pa - pb;
            let dist = delta.norm();
            if dist >= radius + slop {
                continue;
            }
            let normal = if dist > T::lit(1e-12) {
                delta / dist
            } else {
                // Centre lines cross: separate along link j's side normal.
                let side = perp(&kin.axis[j]);
                if side.dot(&(kin.com[i] - kin.com[j])) >= T::zero() { side } else { -side }
            };
            let ja = kin.point_jacobian(i, &pa);
            let jb = kin.point_jacobian(j, &pb);
            let row = (ja - jb).transpose() * normal;
            out.push(CapsuleContact { row, depth: radius - dist });
        }
    }
    out
}

fn clamp_joints<T: Real>(model: &ChainModel<T>, q: &mut DVector<T>) {
    for (j, &(lo, hi)) in model.joint_limits.iter().enumerate() {
        q[3 + j] = q[3 + j].clamp(lo, hi);
    }
}

/// Clamps joints into their limits and separates overlapping non-adjacent
/// links, then removes every violating velocity component with perfectly
/// inelastic impulses resolved through the mass matrix. The flag reports
/// whether any impulse was applied.
pub fn resolve_constraints<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
) -> Result<(ChainState<T>, bool)> {
    let mut q = state.q.clone();
    let mut qdot = state.qdot.clone();
    clamp_joints(model, &mut q);

    if model.links() > 2 {
        for _ in 0..4 {
            let kin = Kinematics::new(model, &q);
            let contacts = capsule_contacts(model, &kin, T::zero());
            if contacts.is_empty() {
                break;
            }
            let inertia = Inertia::new(mass_matrix_at(model, &kin))?;
            for c in &contacts {
                let response = &inertia.inverse * &c.row;
                let eff = c.row.dot(&response);
                if eff > T::zero() {
                    q.axpy(c.depth / eff, &response, T::one());
                }
            }
            clamp_joints(model, &mut q);
        }
    }

    let kin = Kinematics::new(model, &q);
    let mut constraints = Vec::new();
    for (j, &(lo, hi)) in model.joint_limits.iter().enumerate() {
        let theta = q[3 + j];
        let mut row = DVector::zeros(q.len());
        if theta <= lo {
            row[3 + j] = T::one();
        } else if theta >= hi {
            row[3 + j] = -T::one();
        } else {
            continue;
        }
        constraints.push(VelocityConstraint { row, target: T::zero() });
    }
    if model.links() > 2 {
        for c in capsule_contacts(model, &kin, T::lit(1e-6)) {
            constraints.push(VelocityConstraint { row: c.row, target: T::zero() });
        }
    }

    let mut impulsive = false;
    if !constraints.is_empty() {
        let inertia = Inertia::new(mass_matrix_at(model, &kin))?;
        for _ in 0..32 {
            let mut applied = false;
            for c in &constraints {
                if c.project(&inertia.inverse, &mut qdot) > T::zero() {
                    applied = true;
                }
            }
            impulsive |= applied;
            if !applied {
                break;
            }
        }
    }
    Ok((ChainState { q, qdot }, impulsive))
}

/// [`resolve_constraints`] without the event flag.
pub fn resolve_joint_limits<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
) -> Result<ChainState<T>> {
    resolve_constraints(model, state).map(|(s, _)| s)
}

/// Velocity half of a semi-implicit Euler step. Friction enters linearly
/// implicitly: `(M + dt D) qdot' = M qdot + dt (Q_ext - C qdot)`.
pub(crate) fn advance_velocity<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
    external: &DVector<T>,
    dt: T,
) -> Result<(DVector<T>, Inertia<T>)> {
    let kin = Kinematics::new(model, &state.q);
    let inertia = Inertia::new(mass_matrix_at(model, &kin))?;
    let coriolis = coriolis_matrix_at(model, &kin, &state.qdot) * &state.qdot;
    let friction = friction_at(model, &kin, &state.qdot);
    let lhs = &inertia.matrix + &friction.damping * dt;
    let rhs = &inertia.matrix * &state.qdot + (external - coriolis) * dt;
    let qdot = lhs
        .cholesky()
        .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })?
        .solve(&rhs);
    Ok((qdot, inertia))
}

/// One integration step; also reports whether a constraint impulse fired.
pub fn step_detailed<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
    external: &DVector<T>,
    dt: T,
) -> Result<(ChainState<T>, bool)> {
    let (qdot, _) = advance_velocity(model, state, external, dt)?;
    let q = &state.q + &qdot * dt;
    resolve_constraints(model, &ChainState { q, qdot })
}

pub fn step<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
    external: &DVector<T>,
    dt: T,
) -> Result<ChainState<T>> {
    step_detailed(model, state, external, dt).map(|(s, _)| s)
}

/// Instantaneous generalized acceleration `M⁻¹ (Q_ext + Q_friction − C)`.
pub fn forward_acceleration<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
    external: &DVector<T>,
) -> Result<DVector<T>> {
    let kin = Kinematics::new(model, &state.q);
    let inertia = Inertia::new(mass_matrix_at(model, &kin))?;
    let coriolis = coriolis_matrix_at(model, &kin, &state.qdot) * &state.qdot;
    let friction = friction_at(model, &kin, &state.qdot);
    Ok(&inertia.inverse * (external + friction.force - coriolis))
}

/// Steps without external force until the chain comes to rest, then zeroes
/// the residual creep. Returns the equilibrium and the number of steps taken.
pub fn settle_with<T: Real>(
    model: &ChainModel<T>,
    state: &ChainState<T>,
    params: &SimParams<T>,
) -> Result<(ChainState<T>, usize)> {
    let zero = DVector::zeros(state.q.len());
    let mut current = state.clone();
    let mut quiet = 0;
    for steps in 1..=params.max_settle_steps {
        current = step(model, &current, &zero, params.dt)?;
        if crate::scalar::max_abs(current.qdot.as_slice()) < params.rest_velocity {
            quiet += 1;
            if quiet >= params.rest_steps {
                current.qdot.fill(T::zero());
                return Ok((current, steps));
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::SettleTimeout { steps: params.max_settle_steps })
}

pub fn settle<T: Real>(model: &ChainModel<T>, state: &ChainState<T>) -> Result<(ChainState<T>, usize)> {
    settle_with(model, state, &SimParams::default())
}
