//! Stiefel and Grassmann geometry for the factor matrix `B`.
//!
//! Points are `m x p` matrices with orthonormal columns. On the Grassmann
//! manifold a point stands for the subspace it spans; the representative is
//! still stored as an orthonormal matrix.
//!
//! | operation  | Stiefel                      | Grassmann           |
//! |------------|------------------------------|---------------------|
//! | tangent    | `sym(B^T U) = 0`             | `B^T U = 0`         |
//! | projection | `Z - B sym(B^T Z)`           | `(I - B B^T) Z`     |
//! | retraction | `(B + U)(I + U^T U)^{-1/2}`  | `polar(B + U)`      |
//! | transport  | `proj_{B2}(U)`               | `proj_{B2}(U)`      |
//!
//! A third [`Geometry::Euclidean`] kind turns every map into the identity
//! (projection and transport) or plain addition (retraction). It backs the
//! unconstrained reference mode and the rank-collapse demonstration.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    Stiefel,
    Grassmann,
    /// No constraint: identity projection, additive retraction.
    Euclidean,
}

impl Geometry {
    pub fn is_constrained(self) -> bool {
        !matches!(self, Geometry::Euclidean)
    }
}

/// A point `B` on the Stiefel or Grassmann manifold (or a free matrix for
/// [`Geometry::Euclidean`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<T: Scalar> {
    matrix: DMatrix<T>,
    geometry: Geometry,
}

impl<T: Scalar> ManifoldPoint<T> {
    /// Wraps `matrix`, checking shape and (for constrained kinds) orthonormality.
    pub fn new(matrix: DMatrix<T>, geometry: Geometry) -> Result<Self> {
        let (m, p) = matrix.shape();
        if p == 0 || p > m {
            return Err(Error::dim(format!("factor matrix must satisfy 1 <= p <= m, got {m}x{p}")));
        }
        let point = Self { matrix, geometry };
        if geometry.is_constrained() {
            let residual = point.orth_residual().as_f64();
            // Looser tolerance in single precision.
            let tol = tolerances::ORTH_CONSTRUCT.max(1e3 * T::default_epsilon().as_f64());
            if !(residual <= tol) {
                return Err(Error::NotOrthonormal { residual });
            }
        }
        Ok(point)
    }

    /// Orthonormalizes `matrix` (thin QR, non-negative `R` diagonal) first.
    pub fn orthonormalize(matrix: DMatrix<T>, geometry: Geometry) -> Result<Self> {
        let (m, p) = matrix.shape();
        if p == 0 || p > m {
            return Err(Error::dim(format!("factor matrix must satisfy 1 <= p <= m, got {m}x{p}")));
        }
        let q = if geometry.is_constrained() { thin_q(matrix) } else { matrix };
        Self::new(q, geometry)
    }

    pub(crate) fn from_parts_unchecked(matrix: DMatrix<T>, geometry: Geometry) -> Self {
        Self { matrix, geometry }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `||B^T B - I_p||_F`.
    pub fn orth_residual(&self) -> T {
        let p = self.ncols();
        let gram = self.matrix.tr_mul(&self.matrix);
        (gram - DMatrix::<T>::identity(p, p)).norm()
    }

    /// Smallest singular value of `B`.
    pub fn sigma_min(&self) -> T {
        let sv = self.matrix.clone().singular_values();
        sv.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    fn check_same_shape(&self, z: &DMatrix<T>) -> Result<()> {
        if z.shape() != self.matrix.shape() {
            return Err(Error::dim(format!(
                "expected {:?} matrix, got {:?}",
                self.matrix.shape(),
                z.shape()
            )));
        }
        Ok(())
    }
}

/// A tangent vector `U` at a recorded base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Scalar> {
    matrix: DMatrix<T>,
    base: ManifoldPoint<T>,
}

impl<T: Scalar> TangentVector<T> {
    /// The zero tangent vector at `base`.
    pub fn zero(base: &ManifoldPoint<T>) -> Self {
        Self {
            matrix: DMatrix::zeros(base.nrows(), base.ncols()),
            base: base.clone(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.matrix
    }

    pub fn base(&self) -> &ManifoldPoint<T> {
        &self.base
    }

    /// Multiplies by a scalar, staying in the same tangent space.
    pub fn scale(&self, s: T) -> Self {
        Self {
            matrix: &self.matrix * s,
            base: self.base.clone(),
        }
    }

    /// Sum of two tangent vectors at the same base point.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.base != other.base {
            return Err(Error::Geometry("tangent vectors live at different base points".into()));
        }
        Ok(Self {
            matrix: &self.matrix + &other.matrix,
            base: self.base.clone(),
        })
    }

    /// Tangent-space residual: `||sym(B^T U)||_F` (Stiefel) or `||B^T U||_F` (Grassmann).
    pub fn tangent_residual(&self) -> T {
        let btu = self.base.matrix.tr_mul(&self.matrix);
        match self.base.geometry {
            Geometry::Stiefel => sym(&btu).norm(),
            Geometry::Grassmann => btu.norm(),
            Geometry::Euclidean => T::zero(),
        }
    }
}

/// `sym(X) = (X + X^T) / 2`.
pub fn sym<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    (x + x.transpose()) * T::of(0.5)
}

/// Orthogonal projection of an ambient matrix onto the tangent space at `b`.
pub fn project<T: Scalar>(b: &ManifoldPoint<T>, z: &DMatrix<T>) -> Result<TangentVector<T>> {
    b.check_same_shape(z)?;
    let bm = &b.matrix;
    let matrix = match b.geometry {
        Geometry::Stiefel => z - bm * sym(&bm.tr_mul(z)),
        // (I - B B^T) Z without forming the m x m projector.
        Geometry::Grassmann => z - bm * bm.tr_mul(z),
        Geometry::Euclidean => z.clone(),
    };
    Ok(TangentVector { matrix, base: b.clone() })
}

/// Maps a tangent vector back onto the manifold.
pub fn retract<T: Scalar>(b: &ManifoldPoint<T>, u: &TangentVector<T>) -> Result<ManifoldPoint<T>> {
    if u.base != *b {
        return Err(Error::Geometry("tangent vector is not based at the retraction point".into()));
    }
    let shifted = &b.matrix + &u.matrix;
    let matrix = match b.geometry {
        // (B+U)^T (B+U) equals I + U^T U for tangent U; the product form keeps
        // the result orthonormal when U carries rounding off the tangent space.
        Geometry::Stiefel => {
            let gram = shifted.tr_mul(&shifted);
            shifted * inv_sqrt_spd(gram)
        }
        Geometry::Grassmann => polar(shifted)?,
        Geometry::Euclidean => shifted,
    };
    if !matrix.iter().all(|v| v.is_finite_value()) {
        return Err(Error::NonFinite { what: "retraction".into(), theta: Vec::new() });
    }
    Ok(ManifoldPoint { matrix, geometry: b.geometry })
}

/// Vector transport `Gamma_{from -> to}(U) = proj_to(U)`.
pub fn transport<T: Scalar>(
    from: &ManifoldPoint<T>,
    to: &ManifoldPoint<T>,
    u: &TangentVector<T>,
) -> Result<TangentVector<T>> {
    if from.geometry != to.geometry {
        return Err(Error::Geometry(format!(
            "cannot transport between {:?} and {:?}",
            from.geometry, to.geometry
        )));
    }
    if from.matrix.shape() != to.matrix.shape() {
        return Err(Error::dim("transport endpoints differ in shape"));
    }
    if u.base != *from {
        return Err(Error::Geometry("tangent vector is not based at the transport origin".into()));
    }
    project(to, &u.matrix)
}

/// Draws an orthonormal `m x p` point: thin QR of a standard-normal matrix,
/// with column signs fixed so that `R` has a non-negative diagonal.
pub fn random_point<T: Scalar, R: Rng + ?Sized>(
    m: usize,
    p: usize,
    geometry: Geometry,
    rng: &mut R,
) -> Result<ManifoldPoint<T>> {
    if p == 0 || p > m {
        return Err(Error::dim(format!("random point needs 1 <= p <= m, got m={m}, p={p}")));
    }
    let draw = DMatrix::<T>::from_fn(m, p, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
    ManifoldPoint::orthonormalize(draw, geometry)
}

fn thin_q<T: Scalar>(x: DMatrix<T>) -> DMatrix<T> {
    let qr = x.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `S^{-1/2}` for a symmetric positive-definite `S` via its eigendecomposition.
fn inv_sqrt_spd<T: Scalar>(s: DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(s);
    let scale = eig.eigenvalues.map(|l| T::one() / l.sqrt());
    let v = &eig.eigenvectors;
    let mut vs = v.clone();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    vs * v.transpose()
}

/// `polar(X) = U V^T` from the thin SVD `X = U S V^T`.
fn polar<T: Scalar>(x: DMatrix<T>) -> Result<DMatrix<T>> {
    let svd = SVD::new(x, true, true);
    let sigma_min = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    if !(sigma_min.as_f64() >= tolerances::POLAR_SIGMA_MIN) {
        return Err(Error::DegenerateRetraction { sigma_min: sigma_min.as_f64() });
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    Ok(u * v_t)
}
