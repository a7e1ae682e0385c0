//! Euclidean gradients of the lower bound `L = L1 + L2`, where
//! `L1 = E_f[log h(theta(z, eps))]` (estimated from one noise draw) and
//! `L2 = log|Sigma| / 2` (exact).
//!
//! Sign convention: every gradient here is the gradient of `L` itself, i.e.
//! an ascent direction. Optimizers add, never subtract.
//!
//! No `m x m` matrix is formed: `Sigma^{-1}` products go through the Woodbury
//! form in [`LowRankCov`] and `diag(Sigma^{-1})` through its Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::{LowRankCov, NoiseDraw, Parameterization, VariationalParams};
use crate::models::Model;
use crate::scalar::Scalar;

/// Gradient blocks with respect to `mu`, `B`, `d1` (absent for `G1`) and `d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanGrad<T: Scalar> {
    pub g_mu: DVector<T>,
    pub g_b: DMatrix<T>,
    pub g_d1: Option<DVector<T>>,
    pub g_d2: DVector<T>,
}

impl<T: Scalar> EuclideanGrad<T> {
    pub fn zeros_like(lambda: &VariationalParams<T>) -> Self {
        let (m, p) = (lambda.dim(), lambda.rank());
        Self {
            g_mu: DVector::zeros(m),
            g_b: DMatrix::zeros(m, p),
            g_d1: lambda.d1().map(|d| DVector::zeros(d.len())),
            g_d2: DVector::zeros(m),
        }
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Self) -> Self {
        Self {
            g_mu: &self.g_mu + &other.g_mu,
            g_b: &self.g_b + &other.g_b,
            g_d1: match (&self.g_d1, &other.g_d1) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.clone().or_else(|| b.clone()),
            },
            g_d2: &self.g_d2 + &other.g_d2,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            g_mu: &self.g_mu * s,
            g_b: &self.g_b * s,
            g_d1: self.g_d1.as_ref().map(|v| v * s),
            g_d2: &self.g_d2 * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        let fin = |s: &[T]| s.iter().all(|v| v.is_finite_value());
        fin(self.g_mu.as_slice())
            && fin(self.g_b.as_slice())
            && self.g_d1.as_ref().is_none_or(|v| fin(v.as_slice()))
            && fin(self.g_d2.as_slice())
    }
}

fn non_finite<T: Scalar>(what: &str, theta: &DVector<T>) -> Error {
    Error::NonFinite {
        what: what.into(),
        theta: theta.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Stochastic part: gradients of `log h(theta)` through the reparameterization.
pub fn grad_l1<T: Scalar, M: Model<T> + ?Sized>(
    lambda: &VariationalParams<T>,
    model: &M,
    noise: &NoiseDraw<T>,
) -> Result<EuclideanGrad<T>> {
    Ok(l1_with_value(lambda, model, noise)?.1)
}

fn l1_with_value<T: Scalar, M: Model<T> + ?Sized>(
    lambda: &VariationalParams<T>,
    model: &M,
    noise: &NoiseDraw<T>,
) -> Result<(T, EuclideanGrad<T>)> {
    if model.dim() != lambda.dim() {
        return Err(Error::dim(format!(
            "model dimension {} differs from variational dimension {}",
            model.dim(),
            lambda.dim()
        )));
    }
    let theta = lambda.sample_theta(noise)?;
    let (log_h, g) = model.log_h_and_grad(&theta);
    if !g.iter().all(|v| v.is_finite_value()) {
        return Err(non_finite("grad log h", &theta));
    }
    let b = lambda.b().matrix();
    let (z, eps) = (&noise.z, &noise.eps);
    let g_d2 = g.component_mul(eps);
    let (g_b, g_d1) = match (lambda.param(), lambda.d1()) {
        (Parameterization::S, Some(d1)) => {
            let zd = z.component_mul(d1);
            (&g * zd.transpose(), Some(b.tr_mul(&g).component_mul(z)))
        }
        (Parameterization::G2, Some(d1)) => {
            let bz = b * z;
            (g.component_mul(d1) * z.transpose(), Some(g.component_mul(&bz)))
        }
        _ => (&g * z.transpose(), None),
    };
    Ok((log_h, EuclideanGrad { g_mu: g, g_b, g_d1, g_d2 }))
}

/// Deterministic part: exact gradient of `log|Sigma| / 2`.
pub fn grad_l2<T: Scalar>(lambda: &VariationalParams<T>) -> Result<EuclideanGrad<T>> {
    let structure = lambda.structure()?;
    grad_l2_with(lambda, &structure)
}

fn grad_l2_with<T: Scalar>(lambda: &VariationalParams<T>, cov: &LowRankCov<T>) -> Result<EuclideanGrad<T>> {
    let m = lambda.dim();
    let b = lambda.b().matrix();
    let g_d2 = cov.diag_inverse().component_mul(lambda.d2());
    let (g_b, g_d1) = match (lambda.param(), lambda.d1()) {
        (Parameterization::S, Some(d1)) => {
            // Sigma^{-1} B, then scale columns by d1^2 for the B block.
            let sib = cov.inverse_apply(b)?;
            let g_d1 = DVector::from_fn(d1.len(), |j, _| sib.column(j).dot(&b.column(j)) * d1[j]);
            let mut g_b = sib;
            for (j, mut col) in g_b.column_iter_mut().enumerate() {
                col *= d1[j] * d1[j];
            }
            (g_b, Some(g_d1))
        }
        (Parameterization::G2, Some(d1)) => {
            // M = Sigma^{-1} D1 B; B block is D1 M, d1 block is rowwise <M_i, B_i>.
            let mut d1b = b.clone();
            for (i, mut row) in d1b.row_iter_mut().enumerate() {
                row *= d1[i];
            }
            let mut g_b = cov.inverse_apply(&d1b)?;
            let g_d1 = DVector::from_fn(m, |i, _| g_b.row(i).dot(&b.row(i)));
            for (i, mut row) in g_b.row_iter_mut().enumerate() {
                row *= d1[i];
            }
            (g_b, Some(g_d1))
        }
        _ => (cov.inverse_apply(b)?, None),
    };
    Ok(EuclideanGrad { g_mu: DVector::zeros(m), g_b, g_d1, g_d2 })
}

/// `grad_l1 + grad_l2`.
pub fn grad_total<T: Scalar, M: Model<T> + ?Sized>(
    lambda: &VariationalParams<T>,
    model: &M,
    noise: &NoiseDraw<T>,
) -> Result<EuclideanGrad<T>> {
    Ok(elbo_and_grad(lambda, model, std::slice::from_ref(noise))?.1)
}

/// Lower-bound estimate and total gradient averaged over `noises`, sharing
/// one covariance factorization.
pub fn elbo_and_grad<T: Scalar, M: Model<T> + ?Sized>(
    lambda: &VariationalParams<T>,
    model: &M,
    noises: &[NoiseDraw<T>],
) -> Result<(T, EuclideanGrad<T>)> {
    if noises.is_empty() {
        return Err(Error::InvalidParameter("need at least one noise draw".into()));
    }
    let cov = lambda.structure()?;
    let mut grad = grad_l2_with(lambda, &cov)?;
    let inv = T::one() / T::of(noises.len() as f64);
    let mut log_h_mean = T::zero();
    for noise in noises {
        let (log_h, g1) = l1_with_value(lambda, model, noise)?;
        log_h_mean += log_h * inv;
        grad = grad.add(&g1.scale(inv));
    }
    Ok((log_h_mean + T::of(0.5) * cov.log_det(), grad))
}
