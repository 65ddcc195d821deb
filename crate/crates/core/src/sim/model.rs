use nalgebra::{DVector, Matrix3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Link width used for every simulated chain, meters.
pub const DEFAULT_WIDTH: f64 = 0.04;
/// Joint range used in the simulation experiments, radians.
pub const WIDE_JOINT_LIMIT: f64 = 2.6;
/// Joint range of the hardware-like chain, radians.
pub const HARDWARE_JOINT_LIMIT: f64 = std::f64::consts::FRAC_PI_2;
pub const GRAVITY: f64 = 9.81;

/// Physical description of a planar chain of `n` rigid links joined by
/// revolute joints, lying flat on a plane with Coulomb friction.
///
/// Link 0 is the root. Each link's long axis is its local x axis; joint `j`
/// (1-based) sits at the distal end of link `j - 1` and the proximal end of
/// link `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainModel<T: Real> {
    pub lengths: Vec<T>,
    pub widths: Vec<T>,
    pub masses: Vec<T>,
    /// Inertia per unit mass about each link's COM, link frame.
    pub unit_inertias: Vec<Matrix3<T>>,
    pub mu: T,
    pub gravity: T,
    /// `(lo, hi)` per joint; `n - 1` entries.
    pub joint_limits: Vec<(T, T)>,
}

/// Inertia per unit mass of a solid cuboid with the given edge lengths.
pub fn cuboid_unit_inertia<T: Real>(length: T, width: T, height: T) -> Matrix3<T> {
    let twelfth = T::lit(1.0 / 12.0);
    Matrix3::from_diagonal(&nalgebra::Vector3::new(
        (width * width + height * height) * twelfth,
        (length * length + height * height) * twelfth,
        (length * length + width * width) * twelfth,
    ))
}

impl<T: Real> ChainModel<T> {
    /// Builds a chain of cuboid links (height equal to width) and validates it.
    pub fn new(lengths: Vec<T>, masses: Vec<T>, mu: T, joint_limit: T) -> Result<Self> {
        let n = lengths.len();
        let width = T::lit(DEFAULT_WIDTH);
        let model = ChainModel {
            widths: vec![width; n],
            unit_inertias: lengths
                .iter()
                .map(|&l| cuboid_unit_inertia(l, width, width))
                .collect(),
            lengths,
            masses,
            mu,
            gravity: T::lit(GRAVITY),
            joint_limits: vec![(-joint_limit, joint_limit); n.saturating_sub(1)],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lengths.len();
        if n == 0 {
            return Err(Error::InvalidConfig("chain needs at least one link".into()));
        }
        if self.masses.len() != n
            || self.widths.len() != n
            || self.unit_inertias.len() != n
            || self.joint_limits.len() != n - 1
        {
            return Err(Error::InvalidConfig("per-link field lengths disagree".into()));
        }
        if self.masses.iter().any(|&m| !(m > T::zero())) {
            return Err(Error::InvalidConfig("masses must be positive".into()));
        }
        if self.lengths.iter().any(|&l| !(l > T::zero())) {
            return Err(Error::InvalidConfig("lengths must be positive".into()));
        }
        if !(self.mu > T::zero()) {
            return Err(Error::InvalidConfig("friction coefficient must be positive".into()));
        }
        if self.joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidConfig("joint limits must satisfy lo < hi".into()));
        }
        for inertia in &self.unit_inertias {
            if (inertia - inertia.transpose()).abs().max() > T::lit(1e-12)
                || inertia.cholesky().is_none()
            {
                return Err(Error::InvalidConfig(
                    "unit inertias must be symmetric positive-definite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn links(&self) -> usize {
        self.lengths.len()
    }

    /// Generalized coordinate count: root x, y, yaw and one angle per joint.
    pub fn dof(&self) -> usize {
        self.links() + 2
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().fold(T::zero(), |a, &m| a + m)
    }

    /// Per-link masses normalized to the probability simplex.
    pub fn mass_distribution(&self) -> Vec<T> {
        let total = self.total_mass();
        self.masses.iter().map(|&m| m / total).collect()
    }

    /// Copy of the model with every mass multiplied by `factor`.
    pub fn scaled_masses(&self, factor: T) -> Self {
        let mut out = self.clone();
        for m in &mut out.masses {
            *m *= factor;
        }
        out
    }
}

/// Generalized position and velocity of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<T: Real> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
}

impl<T: Real> ChainState<T> {
    pub fn at_rest(q: DVector<T>) -> Self {
        let qdot = DVector::zeros(q.len());
        ChainState { q, qdot }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite_value())
    }

    pub fn joint_angles(&self) -> &[T] {
        &self.q.as_slice()[3..]
    }
}
