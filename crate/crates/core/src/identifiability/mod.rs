//! Which link masses can be recovered from an instantaneous motion.
//!
//! The mass matrix splits as `M(q) = Σ m_k A_k`. A generalized acceleration
//! `q̈` in the null space of `A_k` carries no information about `m_k`. The
//! excitation score measures how strongly `q̈` excites `A_k`, and the
//! separability measures whether link `k`'s inertial response can be told
//! apart from the response of the other links.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::interaction::{resolve_action, PushAction, PushParams};
use crate::scalar::Real;
use crate::sim::{link_matrix, mass_matrix_at, ChainModel, Kinematics};

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-9;

pub fn link_identifiability_matrix<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    link: usize,
) -> DMatrix<T> {
    link_matrix(model, &Kinematics::new(model, q), link)
}

/// Singular values (descending) paired with right singular vectors.
fn sorted_svd<T: Real>(a: &DMatrix<T>) -> Vec<(T, DVector<T>)> {
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut pairs: Vec<(T, DVector<T>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, v_t.row(i).transpose()))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    pairs
}

/// Orthonormal basis of `{v : ‖A v‖ ≤ tol·‖A‖}` where `‖A‖` is the largest
/// singular value. A zero matrix has the whole space as its kernel.
pub fn nullspace<T: Real>(a: &DMatrix<T>, tol: T) -> Vec<DVector<T>> {
    let cols = a.ncols();
    let pairs = sorted_svd(a);
    let top = pairs.first().map_or(T::zero(), |p| p.0);
    let mut basis: Vec<DVector<T>> = pairs
        .into_iter()
        .filter(|(s, _)| *s <= tol * top)
        .map(|(_, v)| v)
        .collect();
    // A wide matrix has fewer singular values than columns; complete the
    // basis with the orthogonal complement of the row space.
    if a.nrows() < cols {
        let mut row_space: Vec<DVector<T>> = sorted_svd(a)
            .into_iter()
            .filter(|(s, _)| *s > tol * top)
            .map(|(_, v)| v)
            .collect();
        row_space.extend(basis.iter().cloned());
        for i in 0..cols {
            if row_space.len() == cols {
                break;
            }
            let mut e = DVector::zeros(cols);
            e[i] = T::one();
            for b in &row_space {
                let d = b.dot(&e);
                e -= b * d;
            }
            let norm = e.norm();
            if norm > T::lit(1e-6) {
                e /= norm;
                row_space.push(e.clone());
                basis.push(e);
            }
        }
    }
    basis
}

pub fn rank<T: Real>(a: &DMatrix<T>, tol: T) -> usize {
    a.ncols() - nullspace(a, tol).len()
}

/// Per-link structure of the mass matrix at one configuration.
#[derive(Clone, Debug)]
pub struct LinkAnalysis<T: Real> {
    pub matrix: DMatrix<T>,
    pub rank: usize,
    pub nullspace: Vec<DVector<T>>,
    pub sigma_max: T,
}

impl<T: Real> LinkAnalysis<T> {
    pub fn nullity(&self) -> usize {
        self.nullspace.len()
    }
}

#[derive(Clone, Debug)]
pub struct IdentifiabilityResult<T: Real> {
    pub links: Vec<LinkAnalysis<T>>,
    /// Excitation scores for the acceleration passed to `analyze`, if any.
    pub scores: Option<Vec<T>>,
}

pub fn analyze<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    qddot: Option<&DVector<T>>,
) -> Result<IdentifiabilityResult<T>> {
    let kin = Kinematics::new(model, q);
    let tol = T::lit(RANK_TOLERANCE);
    let links = (0..model.links())
        .map(|k| {
            let matrix = link_matrix(model, &kin, k);
            let nullspace = nullspace(&matrix, tol);
            let sigma_max = sorted_svd(&matrix).first().map_or(T::zero(), |p| p.0);
            LinkAnalysis { rank: matrix.ncols() - nullspace.len(), matrix, nullspace, sigma_max }
        })
        .collect::<Vec<_>>();
    let scores = match qddot {
        Some(a) => Some(scores_from(&links, a)?),
        None => None,
    };
    Ok(IdentifiabilityResult { links, scores })
}

fn scores_from<T: Real>(links: &[LinkAnalysis<T>], qddot: &DVector<T>) -> Result<Vec<T>> {
    let norm = qddot.norm();
    if !(norm > T::zero()) {
        return Err(Error::ZeroAcceleration);
    }
    Ok(links
        .iter()
        .map(|l| {
            if l.sigma_max > T::zero() {
                (&l.matrix * qddot).norm() / (l.sigma_max * norm)
            } else {
                T::zero()
            }
        })
        .collect())
}

/// `‖A_k q̈‖ / (σ_max(A_k) ‖q̈‖)` for every link.
pub fn excitation_score<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    qddot: &DVector<T>,
) -> Result<Vec<T>> {
    Ok(analyze(model, q, Some(qddot))?.scores.unwrap_or_default())
}

/// For each link, the sine of the angle between `A_k q̈` and the span of
/// the other links' `A_j q̈`.
///
/// The equation of motion reads `Σ m_k (A_k q̈) = Q − C − F`, so the masses
/// are separable from one instant only when these vectors are linearly
/// independent. A value near zero means link `k`'s contribution is
/// indistinguishable from a combination of the others. Angles are measured
/// in the metric `M⁻¹`, which makes the result independent of how the
/// coordinates are scaled (meters against radians).
pub fn separability<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    qddot: &DVector<T>,
) -> Result<Vec<T>> {
    if !(qddot.norm() > T::zero()) {
        return Err(Error::ZeroAcceleration);
    }
    let kin = Kinematics::new(model, q);
    let metric = mass_matrix_at(model, &kin)
        .try_inverse()
        .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })?;
    let inner = |a: &DVector<T>, b: &DVector<T>| a.dot(&(&metric * b));
    let norm = |a: &DVector<T>| inner(a, a).max(T::zero()).sqrt();
    let responses: Vec<DVector<T>> =
        (0..model.links()).map(|k| link_matrix(model, &kin, k) * qddot).collect();
    let tiny = T::lit(1e-12);
    Ok((0..responses.len())
        .map(|k| {
            let own = &responses[k];
            let own_norm = norm(own);
            if own_norm <= tiny {
                return T::zero();
            }
            // Gram-Schmidt over the other responses.
            let mut basis: Vec<DVector<T>> = Vec::new();
            for (j, r) in responses.iter().enumerate() {
                if j == k {
                    continue;
                }
                let mut v = r.clone();
                for b in &basis {
                    let d = inner(b, &v);
                    v -= b * d;
                }
                let n = norm(&v);
                if n > tiny * norm(r).max(T::one()) {
                    basis.push(v / n);
                }
            }
            let mut rest = own.clone();
            for b in &basis {
                let d = inner(b, &rest);
                rest -= b * d;
            }
            norm(&rest) / own_norm
        })
        .collect())
}

/// Instantaneous generalized acceleration from rest caused by a unit force
/// `direction` applied at world point `point` on `link`.
pub fn point_force_response<T: Real>(
    model: &ChainModel<T>,
    q: &DVector<T>,
    link: usize,
    point: &Vector2<T>,
    direction: &Vector2<T>,
) -> Result<DVector<T>> {
    let kin = Kinematics::new(model, q);
    let m = mass_matrix_at(model, &kin);
    let force = kin.point_jacobian(link, point).transpose() * direction;
    m.cholesky()
        .map(|c| c.solve(&force))
        .ok_or(Error::SingularMassMatrix { condition: f64::INFINITY })
}

/// One row of the identifiability table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub q: Vec<f64>,
    pub link: usize,
    pub rank: usize,
    pub nullity: usize,
    pub action: PushAction,
    pub score: f64,
    pub separability: f64,
}

/// Evaluates every action at every configuration, using the instantaneous
/// response to the decoded push as `q̈`.
pub fn identifiability_table(
    model: &ChainModel<f64>,
    configurations: &[DVector<f64>],
    actions: &[PushAction],
    params: &PushParams,
) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for q in configurations {
        let base = analyze(model, q, None)?;
        let kin = Kinematics::new(model, q);
        for &action in actions {
            let cmd = resolve_action(model, q, action, params);
            let half_width = model.widths[cmd.link] * 0.5;
            let point = kin.world_point(cmd.link, cmd.local_offset, cmd.side * half_width);
            let qddot = point_force_response(model, q, cmd.link, &point, &cmd.direction)?;
            let scores = scores_from(&base.links, &qddot)?;
            let sep = separability(model, q, &qddot)?;
            for (k, l) in base.links.iter().enumerate() {
                rows.push(TableRow {
                    q: q.iter().copied().collect(),
                    link: k,
                    rank: l.rank,
                    nullity: l.nullity(),
                    action,
                    score: scores[k],
                    separability: sep[k],
                });
            }
        }
    }
    Ok(rows)
}

/// Writes the table as CSV with one `q<i>` column per coordinate.
pub fn write_table<W: std::io::Write>(out: W, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dof = rows.first().map_or(0, |r| r.q.len());
    let mut header: Vec<String> = (0..dof).map(|i| format!("q{i}")).collect();
    header.extend(
        ["link", "rank", "nullity", "a1", "a2", "score", "separability"].map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.q.iter().map(|v| v.to_string()).collect();
        rec.push(r.link.to_string());
        rec.push(r.rank.to_string());
        rec.push(r.nullity.to_string());
        rec.push(r.action.a1.to_string());
        rec.push(r.action.a2.to_string());
        rec.push(r.score.to_string());
        rec.push(r.separability.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
