//! Planar forward kinematics and point Jacobians of a floating-base chain.

use nalgebra::{DVector, Dyn, Matrix2xX, Matrix3xX, OMatrix, Vector2, U2};

use super::model::ChainModel;
use crate::scalar::Real;

#[inline]
pub(crate) fn perp<T: Real>(v: &Vector2<T>) -> Vector2<T> {
    Vector2::new(-v.y, v.x)
}

/// Poses of every link for one configuration.
#[derive(Clone, Debug)]
pub struct Kinematics<T: Real> {
    dof: usize,
    /// Root link COM, also the pivot of the yaw coordinate.
    pub root: Vector2<T>,
    /// Absolute heading of each link.
    pub heading: Vec<T>,
    /// Unit long axis of each link.
    pub axis: Vec<Vector2<T>>,
    /// Position of joint `j` stored at index `j - 1`.
    pub joints: Vec<Vector2<T>>,
    pub com: Vec<Vector2<T>>,
}

impl<T: Real> Kinematics<T> {
    pub fn new(model: &ChainModel<T>, q: &DVector<T>) -> Self {
        let n = model.links();
        let half = T::lit(0.5);
        let root = Vector2::new(q[0], q[1]);
        let mut heading = Vec::with_capacity(n);
        let mut axis = Vec::with_capacity(n);
        let mut joints = Vec::with_capacity(n.saturating_sub(1));
        let mut com = Vec::with_capacity(n);

        let mut phi = q[2];
        let mut u = Vector2::new(phi.cos(), phi.sin());
        heading.push(phi);
        axis.push(u);
        com.push(root);
        for k in 1..n {
            let joint = com[k - 1] + u * (model.lengths[k - 1] * half);
            phi += q[2 + k];
            u = Vector2::new(phi.cos(), phi.sin());
            heading.push(phi);
            axis.push(u);
            joints.push(joint);
            com.push(joint + u * (model.lengths[k] * half));
        }
        Kinematics { dof: q.len(), root, heading, axis, joints, com }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Pivot of rotational column `2 + j`: the root COM for `j = 0`,
    /// joint `j` otherwise.
    fn pivot(&self, j: usize) -> Vector2<T> {
        if j == 0 {
            self.root
        } else {
            self.joints[j - 1]
        }
    }

    /// World position of the material point at local `(along, across)` on `link`.
    pub fn world_point(&self, link: usize, along: T, across: T) -> Vector2<T> {
        let u = self.axis[link];
        self.com[link] + u * along + perp(&u) * across
    }

    /// Linear-velocity Jacobian (2 x N) of a world point rigidly attached to `link`.
    pub fn point_jacobian(&self, link: usize, p: &Vector2<T>) -> Matrix2xX<T> {
        let mut jac = OMatrix::<T, U2, Dyn>::zeros(self.dof);
        jac[(0, 0)] = T::one();
        jac[(1, 1)] = T::one();
        for j in 0..=link {
            let col = perp(&(p - self.pivot(j)));
            jac[(0, 2 + j)] = col.x;
            jac[(1, 2 + j)] = col.y;
        }
        jac
    }

    /// Jacobian of the pivot of rotational column `2 + j`.
    fn pivot_jacobian(&self, j: usize) -> Matrix2xX<T> {
        if j == 0 {
            let mut jac = OMatrix::<T, U2, Dyn>::zeros(self.dof);
            jac[(0, 0)] = T::one();
            jac[(1, 1)] = T::one();
            jac
        } else {
            self.point_jacobian(j - 1, &self.joints[j - 1])
        }
    }

    /// `d/dq_l` of [`Self::point_jacobian`] for every `l`, given that
    /// jacobian. Translation columns are constant; rotational column `2 + j`
    /// is `perp(p - pivot_j)`, so its derivative is `perp(J_p[:, l] - J_pivot_j[:, l])`.
    pub fn point_jacobian_derivatives(
        &self,
        link: usize,
        jac: &Matrix2xX<T>,
    ) -> Vec<Matrix2xX<T>> {
        let pivots: Vec<_> = (0..=link).map(|j| self.pivot_jacobian(j)).collect();
        (0..self.dof)
            .map(|l| {
                let mut d = OMatrix::<T, U2, Dyn>::zeros(self.dof);
                for (j, pj) in pivots.iter().enumerate() {
                    let rel = Vector2::new(jac[(0, l)] - pj[(0, l)], jac[(1, l)] - pj[(1, l)]);
                    let col = perp(&rel);
                    d[(0, 2 + j)] = col.x;
                    d[(1, 2 + j)] = col.y;
                }
                d
            })
            .collect()
    }

    /// Angular-velocity selector: yaw rate of `link` is `row . qdot`.
    pub fn angular_row(&self, link: usize) -> DVector<T> {
        let mut row = DVector::zeros(self.dof);
        for j in 0..=link {
            row[2 + j] = T::one();
        }
        row
    }

    /// Spatial Jacobians of a link's COM embedded in 3-D: `(J_v, J_w)`,
    /// each 3 x N with the out-of-plane rows zero.
    pub fn link_jacobians(&self, link: usize) -> (Matrix3xX<T>, Matrix3xX<T>) {
        let planar = self.point_jacobian(link, &self.com[link]);
        let mut jv = Matrix3xX::zeros(self.dof);
        jv.rows_mut(0, 2).copy_from(&planar);
        let mut jw = Matrix3xX::zeros(self.dof);
        jw.row_mut(2).copy_from(&self.angular_row(link).transpose());
        (jv, jw)
    }

    /// End points of a link's centre segment.
    pub fn segment(&self, link: usize, length: T) -> (Vector2<T>, Vector2<T>) {
        let h = self.axis[link] * (length * T::lit(0.5));
        (self.com[link] - h, self.com[link] + h)
    }
}
