use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector2, Vector3};

use super::ArmModel;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Serial arm of uniform rods moving in the vertical x-z plane, every joint
/// rotating about the world y axis. Gravity points along -z.
///
/// Only x, z and the rotation about y can be controlled, so those are the
/// task rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarArm<T: Real> {
    pub lengths: Vec<T>,
    pub masses: Vec<T>,
    pub gravity: T,
}

const TASK_ROWS: [usize; 3] = [0, 2, 4];

fn perp<T: Real>(v: Vector2<T>) -> Vector2<T> {
    Vector2::new(-v.y, v.x)
}

impl<T: Real> PlanarArm<T> {
    pub fn new(lengths: Vec<T>, masses: Vec<T>) -> Self {
        PlanarArm { lengths, masses, gravity: T::lit(crate::sim::GRAVITY) }
    }

    /// A 3-joint test arm of roughly desk size.
    pub fn three_link() -> Self {
        Self::new(vec![T::lit(0.4), T::lit(0.35), T::lit(0.2)], vec![T::lit(3.0), T::lit(2.0), T::lit(1.0)])
    }

    fn headings(&self, q: &DVector<T>) -> Vec<T> {
        let mut acc = T::zero();
        q.iter().map(|&a| {
            acc += a;
            acc
        })
        .collect()
    }

    /// Joint positions followed by the tip, in plane coordinates (x, z).
    fn joints(&self, q: &DVector<T>) -> Vec<Vector2<T>> {
        let mut p = Vector2::zeros();
        let mut out = vec![p];
        for (l, phi) in self.lengths.iter().zip(self.headings(q)) {
            p += Vector2::new(phi.cos(), phi.sin()) * *l;
            out.push(p);
        }
        out
    }

    /// 2 × dof Jacobian of the centre of mass of `link`.
    fn com_jacobian(&self, q: &DVector<T>, link: usize) -> DMatrix<T> {
        let joints = self.joints(q);
        let com = (joints[link] + joints[link + 1]) * T::lit(0.5);
        let mut j = DMatrix::zeros(2, self.dof());
        for i in 0..=link {
            let c = perp(com - joints[i]);
            j[(0, i)] = c.x;
            j[(1, i)] = c.y;
        }
        j
    }

    /// `q̈` under torque `tau`, with Coriolis terms from numerically
    /// differentiated Christoffel symbols.
    pub fn forward_dynamics(
        &self,
        q: &DVector<T>,
        qdot: &DVector<T>,
        tau: &DVector<T>,
    ) -> Result<DVector<T>> {
        let n = self.dof();
        let h = T::lit(1e-6);
        let dm: Vec<DMatrix<T>> = (0..n)
            .map(|l| {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[l] += h;
                qm[l] -= h;
                (self.mass_matrix(&qp) - self.mass_matrix(&qm)) / (h + h)
            })
            .collect();
        let mut coriolis = DVector::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * T::lit(0.5);
                    coriolis[i] += c * qdot[j] * qdot[k];
                }
            }
        }
        let rhs = tau - coriolis - self.gravity(q);
        self.mass_matrix(q)
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })
    }

    /// Semi-implicit Euler step.
    pub fn step(
        &self,
        q: &DVector<T>,
        qdot: &DVector<T>,
        tau: &DVector<T>,
        dt: T,
    ) -> Result<(DVector<T>, DVector<T>)> {
        let qddot = self.forward_dynamics(q, qdot, tau)?;
        let v = qdot + qddot * dt;
        Ok((q + &v * dt, v))
    }
}

impl<T: Real> ArmModel<T> for PlanarArm<T> {
    fn dof(&self) -> usize {
        self.lengths.len()
    }

    fn mass_matrix(&self, q: &DVector<T>) -> DMatrix<T> {
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            let j = self.com_jacobian(q, k);
            m += j.transpose() * &j * self.masses[k];
            // Rod inertia about its centre, spinning with every joint up to k.
            let rot = self.masses[k] * self.lengths[k] * self.lengths[k] / T::lit(12.0);
            for a in 0..=k {
                for b in 0..=k {
                    m[(a, b)] += rot;
                }
            }
        }
        m
    }

    fn gravity(&self, q: &DVector<T>) -> DVector<T> {
        let mut g = DVector::zeros(self.dof());
        for k in 0..self.dof() {
            let j = self.com_jacobian(q, k);
            g += j.row(1).transpose() * (self.masses[k] * self.gravity);
        }
        g
    }

    fn jacobian(&self, q: &DVector<T>) -> DMatrix<T> {
        let joints = self.joints(q);
        let tip = joints[self.dof()];
        let mut j = DMatrix::zeros(6, self.dof());
        for i in 0..self.dof() {
            let c = perp(tip - joints[i]);
            j[(0, i)] = c.x;
            j[(2, i)] = c.y;
            // Positive joint motion turns +x toward +z: a rotation about -y.
            j[(4, i)] = -T::one();
        }
        j
    }

    fn forward_kinematics(&self, q: &DVector<T>) -> (Vector3<T>, Matrix3<T>) {
        let tip = self.joints(q)[self.dof()];
        let phi = self.headings(q).last().copied().unwrap_or(T::zero());
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), -phi);
        (Vector3::new(tip.x, T::zero(), tip.y), rot.into_inner())
    }

    fn task_rows(&self) -> &[usize] {
        &TASK_ROWS
    }
}
