//! The Gaussian variational family `q(theta) = N(mu, Sigma)` with a
//! low-rank-plus-diagonal covariance.
//!
//! * `S`:  `Sigma = B D1^2 B^T + D2^2`, `B` on the Stiefel manifold, `d1` of length `p`.
//! * `G2`: `Sigma = D1 B B^T D1 + D2^2`, `B` on the Grassmann manifold, `d1` of length `m`.
//! * `G1`: `Sigma = B B^T + D2^2`, `B` on the Grassmann manifold, no `d1`.
//!
//! All three share the form `Sigma = A A^T + D2^2` with an `m x p` loading
//! `A`, so log-determinants, inverse products and the diagonal of the
//! inverse reduce to a single `p x p` Cholesky factorization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Geometry, ManifoldPoint};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::tolerances::D2_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parameterization {
    /// Stiefel factor with a `p`-vector of column scales.
    S,
    /// Grassmann factor without scaling.
    G1,
    /// Grassmann factor with an `m`-vector of row scales.
    G2,
}

impl Parameterization {
    pub const ALL: [Parameterization; 3] = [Parameterization::S, Parameterization::G1, Parameterization::G2];

    /// The manifold `B` lives on.
    pub fn geometry(self) -> Geometry {
        match self {
            Parameterization::S => Geometry::Stiefel,
            Parameterization::G1 | Parameterization::G2 => Geometry::Grassmann,
        }
    }

    /// Length of `d1`, if this parameterization has one.
    pub fn d1_len(self, m: usize, p: usize) -> Option<usize> {
        match self {
            Parameterization::S => Some(p),
            Parameterization::G1 => None,
            Parameterization::G2 => Some(m),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Parameterization::S => "S",
            Parameterization::G1 => "G1",
            Parameterization::G2 => "G2",
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" => Ok(Parameterization::S),
            "G1" => Ok(Parameterization::G1),
            "G2" => Ok(Parameterization::G2),
            other => Err(Error::InvalidParameter(format!("unknown parameterization '{other}'"))),
        }
    }
}

/// Standard-normal draws `(z, eps)` feeding the reparameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T: Scalar> {
    pub z: DVector<T>,
    pub eps: DVector<T>,
}

impl<T: Scalar> NoiseDraw<T> {
    pub fn new(z: DVector<T>, eps: DVector<T>) -> Self {
        Self { z, eps }
    }

    pub fn zeros(p: usize, m: usize) -> Self {
        Self { z: DVector::zeros(p), eps: DVector::zeros(m) }
    }

    /// Draws `z` first, then `eps`, from `rng`.
    pub fn sample<R: Rng + ?Sized>(p: usize, m: usize, rng: &mut R) -> Self {
        let mut draw = || T::of(rng.sample::<f64, _>(StandardNormal));
        let z = DVector::from_fn(p, |_, _| draw());
        let eps = DVector::from_fn(m, |_, _| draw());
        Self { z, eps }
    }
}

/// Variational parameters `lambda = {mu, B, d1, d2}`.
///
/// `d1` and `d2` are stored signed; only their squares enter `Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams<T: Scalar> {
    mu: DVector<T>,
    b: ManifoldPoint<T>,
    d1: Option<DVector<T>>,
    d2: DVector<T>,
    param: Parameterization,
}

impl<T: Scalar> VariationalParams<T> {
    pub fn new(
        param: Parameterization,
        mu: DVector<T>,
        b: ManifoldPoint<T>,
        d1: Option<DVector<T>>,
        d2: DVector<T>,
    ) -> Result<Self> {
        let (m, p) = (b.nrows(), b.ncols());
        if mu.len() != m || d2.len() != m {
            return Err(Error::dim(format!(
                "mu ({}) and d2 ({}) must have length m = {m}",
                mu.len(),
                d2.len()
            )));
        }
        match (param.d1_len(m, p), &d1) {
            (None, None) => {}
            (Some(len), Some(v)) if v.len() == len => {}
            (want, got) => {
                return Err(Error::dim(format!(
                    "{param}: d1 length {:?} expected, got {:?}",
                    want,
                    got.as_ref().map(|v| v.len())
                )))
            }
        }
        let geometry = b.geometry();
        if geometry != Geometry::Euclidean && geometry != param.geometry() {
            return Err(Error::Geometry(format!("{param} requires a {:?} factor, got {geometry:?}", param.geometry())));
        }
        if let Some(i) = d2.iter().position(|v| !(v.abs().as_f64() >= D2_FLOOR)) {
            return Err(Error::InvalidParameter(format!("|d2[{i}]| = {} is below the floor {D2_FLOOR:e}", d2[i])));
        }
        Ok(Self { mu, b, d1, d2, param })
    }

    pub fn mu(&self) -> &DVector<T> {
        &self.mu
    }

    pub fn b(&self) -> &ManifoldPoint<T> {
        &self.b
    }

    pub fn d1(&self) -> Option<&DVector<T>> {
        self.d1.as_ref()
    }

    pub fn d2(&self) -> &DVector<T> {
        &self.d2
    }

    pub fn param(&self) -> Parameterization {
        self.param
    }

    /// Dimension `m` of `theta`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Number of factors `p`.
    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    pub fn into_parts(self) -> (DVector<T>, ManifoldPoint<T>, Option<DVector<T>>, DVector<T>) {
        (self.mu, self.b, self.d1, self.d2)
    }

    /// Loading `A` with `Sigma = A A^T + D2^2`.
    pub fn loading(&self) -> DMatrix<T> {
        let b = self.b.matrix();
        match (self.param, &self.d1) {
            (Parameterization::S, Some(d1)) => {
                let mut a = b.clone();
                for (j, mut col) in a.column_iter_mut().enumerate() {
                    col *= d1[j];
                }
                a
            }
            (Parameterization::G2, Some(d1)) => {
                let mut a = b.clone();
                for (i, mut row) in a.row_iter_mut().enumerate() {
                    row *= d1[i];
                }
                a
            }
            _ => b.clone(),
        }
    }

    /// Factorization of `I_p + A^T D2^{-2} A` shared by the covariance identities.
    pub fn structure(&self) -> Result<LowRankCov<T>> {
        LowRankCov::new(self.loading(), &self.d2)
    }

    /// `theta = mu + A z + d2 * eps`.
    pub fn sample_theta(&self, noise: &NoiseDraw<T>) -> Result<DVector<T>> {
        let (m, p) = (self.dim(), self.rank());
        if noise.z.len() != p || noise.eps.len() != m {
            return Err(Error::dim(format!(
                "noise (z: {}, eps: {}) does not match p = {p}, m = {m}",
                noise.z.len(),
                noise.eps.len()
            )));
        }
        let b = self.b.matrix();
        let factor_part = match (self.param, &self.d1) {
            (Parameterization::S, Some(d1)) => b * noise.z.component_mul(d1),
            (Parameterization::G2, Some(d1)) => (b * &noise.z).component_mul(d1),
            _ => b * &noise.z,
        };
        Ok(&self.mu + factor_part + self.d2.component_mul(&noise.eps))
    }

    /// Dense `Sigma`; for tests and small `m`.
    pub fn cov_matrix(&self) -> DMatrix<T> {
        let a = self.loading();
        let mut sigma = &a * a.transpose();
        for i in 0..self.dim() {
            sigma[(i, i)] += self.d2[i] * self.d2[i];
        }
        sigma
    }

    /// `log |Sigma|` via the matrix determinant lemma.
    pub fn log_det_sigma(&self) -> Result<T> {
        Ok(self.structure()?.log_det())
    }

    /// `Sigma^{-1} V` via the Woodbury identity.
    pub fn sigma_inverse_apply(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.structure()?.inverse_apply(v)
    }

    /// Converts to double precision.
    pub fn to_f64(&self) -> VariationalParams<f64> {
        let cv = |v: &DVector<T>| v.map(|x| x.as_f64());
        VariationalParams {
            mu: cv(&self.mu),
            b: ManifoldPoint::from_parts_unchecked(self.b.matrix().map(|x| x.as_f64()), self.b.geometry()),
            d1: self.d1.as_ref().map(cv),
            d2: cv(&self.d2),
            param: self.param,
        }
    }
}

/// Clamps every entry of `d2` away from zero, preserving sign (zero maps to `+floor`).
pub fn clamp_d2<T: Scalar>(d2: &mut DVector<T>) {
    let floor = T::of(D2_FLOOR);
    for v in d2.iter_mut() {
        if !(v.abs() >= floor) {
            *v = if *v < T::zero() { -floor } else { floor };
        }
    }
}

/// `Sigma = A A^T + D2^2` through the Cholesky factor `L L^T = I_p + A^T D2^{-2} A`.
#[derive(Debug, Clone)]
pub struct LowRankCov<T: Scalar> {
    /// `D2^{-2} A`.
    scaled: DMatrix<T>,
    d2_inv_sq: DVector<T>,
    chol: Cholesky<T, Dyn>,
    log_det: T,
}

impl<T: Scalar> LowRankCov<T> {
    pub fn new(a: DMatrix<T>, d2: &DVector<T>) -> Result<Self> {
        let (m, p) = a.shape();
        if d2.len() != m {
            return Err(Error::dim("d2 length differs from loading rows"));
        }
        let d2_inv_sq = d2.map(|v| T::one() / (v * v));
        let mut scaled = a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d2_inv_sq[i];
        }
        let inner = DMatrix::<T>::identity(p, p) + a.tr_mul(&scaled);
        if inner.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::IllConditioned("non-finite entries in I + A^T D2^-2 A".into()));
        }
        let chol = Cholesky::new(inner)
            .ok_or_else(|| Error::IllConditioned("I + A^T D2^-2 A is not positive definite".into()))?;
        let l_diag = chol.l_dirty().diagonal();
        if l_diag.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::IllConditioned("singular inner factor".into()));
        }
        let two = T::of(2.0);
        let inner_log_det = l_diag.iter().fold(T::zero(), |acc, v| acc + two * v.ln());
        let diag_log_det = d2.iter().fold(T::zero(), |acc, v| acc + (*v * *v).ln());
        Ok(Self { scaled, d2_inv_sq, chol, log_det: inner_log_det + diag_log_det })
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// `Sigma^{-1} V = D2^{-2} V - D2^{-2} A K^{-1} A^T D2^{-2} V`, `K = I + A^T D2^{-2} A`.
    pub fn inverse_apply(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        let m = self.d2_inv_sq.len();
        if v.nrows() != m {
            return Err(Error::dim(format!("expected {m} rows, got {}", v.nrows())));
        }
        let mut out = v.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.d2_inv_sq[i];
        }
        let rhs = self.scaled.tr_mul(v);
        let solved = self.chol.solve(&rhs);
        out -= &self.scaled * solved;
        if out.iter().any(|x| !x.is_finite_value()) {
            return Err(Error::IllConditioned("non-finite Woodbury product".into()));
        }
        Ok(out)
    }

    /// `diag(Sigma^{-1})` in `O(m p^2)`.
    pub fn diag_inverse(&self) -> DVector<T> {
        let l = self.chol.l();
        let y = l
            .solve_lower_triangular(&self.scaled.transpose())
            .expect("Cholesky factor has a positive diagonal");
        DVector::from_fn(self.d2_inv_sq.len(), |i, _| self.d2_inv_sq[i] - y.column(i).norm_squared())
    }
}

/// Single-draw estimate of the lower bound (additive constant dropped):
/// `log h(theta) + log|Sigma| / 2`.
pub fn elbo_estimate<T: Scalar, M: Model<T> + ?Sized>(
    lambda: &VariationalParams<T>,
    model: &M,
    noise: &NoiseDraw<T>,
) -> Result<T> {
    let theta = lambda.sample_theta(noise)?;
    let log_h = model.log_h(&theta);
    if !log_h.is_finite_value() {
        return Err(Error::NonFinite {
            what: "log h".into(),
            theta: theta.iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(log_h + T::of(0.5) * lambda.log_det_sigma()?)
}
