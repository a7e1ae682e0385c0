//! Unnormalized log posteriors `log h(theta) = log p(theta) + log p(y | theta)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::factor::{NoiseDraw, VariationalParams};
use crate::scalar::Scalar;

/// Target density up to a constant.
pub trait Model<T: Scalar>: Send + Sync {
    /// Length of `theta`.
    fn dim(&self) -> usize;

    /// `(log h(theta), grad log h(theta))`.
    fn log_h_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>);

    fn log_h(&self, theta: &DVector<T>) -> T {
        self.log_h_and_grad(theta).0
    }

    fn grad_log_h(&self, theta: &DVector<T>) -> DVector<T> {
        self.log_h_and_grad(theta).1
    }
}

/// Binary classification data. `x` carries the intercept column when the
/// loader adds one; labels are stored as 0/1 values of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    x: DMatrix<T>,
    y: DVector<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::dim(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        if x.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::Domain("design matrix has non-finite entries".into()));
        }
        if let Some(i) = y.iter().position(|v| *v != T::zero() && *v != T::one()) {
            return Err(Error::Domain(format!("label {} at row {i} is not 0/1", y[i])));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of columns (covariates, including any intercept).
    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Label of row `i` as `bool`.
    pub fn label(&self, i: usize) -> bool {
        self.y[i] == T::one()
    }

    /// Rows at `rows`, in order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::dim(format!("row {bad} out of range for {} rows", self.n())));
        }
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self::new(x, y)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Logistic log-likelihood and its gradient in `beta`.
fn logistic_loglik<T: Scalar>(data: &Dataset<T>, beta: &DVector<T>) -> (T, DVector<T>) {
    let eta = &data.x * beta;
    let mut value = T::zero();
    let mut resid = DVector::zeros(eta.len());
    for i in 0..eta.len() {
        value += data.y[i] * eta[i] - softplus(eta[i]);
        resid[i] = data.y[i] - sigmoid(eta[i]);
    }
    (value, data.x.tr_mul(&resid))
}

/// Logistic regression with an isotropic Gaussian prior `N(0, sd^2 I)`,
/// normalizing constant included.
#[derive(Debug, Clone)]
pub struct LogisticGaussian<T: Scalar> {
    data: Arc<Dataset<T>>,
    prior_sd: T,
}

impl<T: Scalar> LogisticGaussian<T> {
    pub fn new(data: Arc<Dataset<T>>, prior_sd: T) -> Result<Self> {
        if !(prior_sd > T::zero()) {
            return Err(Error::InvalidParameter(format!("prior sd must be positive, got {prior_sd}")));
        }
        Ok(Self { data, prior_sd })
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }
}

impl<T: Scalar> Model<T> for LogisticGaussian<T> {
    fn dim(&self) -> usize {
        self.data.m()
    }

    fn log_h_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let (ll, mut grad) = logistic_loglik(&self.data, theta);
        let prec = T::one() / (self.prior_sd * self.prior_sd);
        grad.axpy(-prec, theta, T::one());
        let log_norm = T::of(theta.len() as f64) * (self.prior_sd.ln() + T::of(0.5 * (2.0 * std::f64::consts::PI).ln()));
        (ll - T::of(0.5) * prec * theta.norm_squared() - log_norm, grad)
    }
}

/// Logistic regression with a horseshoe prior on the coefficients.
///
/// `theta = (beta[0..m], kappa[0..m], omega)` where `exp(kappa_j)` are the
/// local scales and `exp(omega)` the global scale, both half-Cauchy(0, 1):
///
/// ```text
/// beta_j | kappa_j, omega ~ N(0, exp(2 kappa_j + 2 omega))
/// exp(kappa_j), exp(omega) ~ C+(0, 1)        (log-Jacobian included)
/// ```
#[derive(Debug, Clone)]
pub struct LogisticHorseshoe<T: Scalar> {
    data: Arc<Dataset<T>>,
}

impl<T: Scalar> LogisticHorseshoe<T> {
    pub fn new(data: Arc<Dataset<T>>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    /// Number of regression coefficients (the leading block of `theta`).
    pub fn beta_len(&self) -> usize {
        self.data.m()
    }
}

impl<T: Scalar> Model<T> for LogisticHorseshoe<T> {
    fn dim(&self) -> usize {
        2 * self.data.m() + 1
    }

    fn log_h_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let m = self.data.m();
        let beta = theta.rows(0, m).into_owned();
        let omega = theta[2 * m];
        let (ll, beta_grad) = logistic_loglik(&self.data, &beta);

        let two = T::of(2.0);
        let half = T::of(0.5);
        let half_log_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        let log_2_over_pi = T::of((2.0 / std::f64::consts::PI).ln());

        let mut value = ll;
        let mut grad = DVector::zeros(2 * m + 1);
        let mut omega_grad = T::zero();
        for j in 0..m {
            let kappa = theta[m + j];
            let log_sd = kappa + omega;
            // beta^2 / variance evaluated in log space.
            let ratio = if beta[j] == T::zero() {
                T::zero()
            } else {
                (two * beta[j].abs().ln() - two * log_sd).exp()
            };
            value += -half_log_2pi - log_sd - half * ratio;
            value += log_2_over_pi - softplus(two * kappa) + kappa;

            let shrink = if beta[j] == T::zero() { T::zero() } else { ratio / beta[j] };
            grad[j] = beta_grad[j] - shrink;
            grad[m + j] = ratio - two * sigmoid(two * kappa);
            omega_grad += ratio - T::one();
        }
        value += log_2_over_pi - softplus(two * omega) + omega;
        grad[2 * m] = omega_grad + T::one() - two * sigmoid(two * omega);
        (value, grad)
    }
}

/// `log N(theta | mu0, Sigma0)` without its normalizing constant.
#[derive(Debug, Clone)]
pub struct GaussianTarget<T: Scalar> {
    mu0: DVector<T>,
    precision: DMatrix<T>,
}

impl<T: Scalar> GaussianTarget<T> {
    pub fn new(mu0: DVector<T>, sigma0: DMatrix<T>) -> Result<Self> {
        if sigma0.shape() != (mu0.len(), mu0.len()) {
            return Err(Error::dim("Sigma0 must be m x m"));
        }
        let chol = sigma0
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("Sigma0 is not positive definite".into()))?;
        Ok(Self { mu0, precision: chol.inverse() })
    }

    pub fn mu0(&self) -> &DVector<T> {
        &self.mu0
    }
}

impl<T: Scalar> Model<T> for GaussianTarget<T> {
    fn dim(&self) -> usize {
        self.mu0.len()
    }

    fn log_h_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        let diff = theta - &self.mu0;
        let grad = -(&self.precision * &diff);
        (T::of(0.5) * diff.dot(&grad), grad)
    }
}

/// `log h(theta) = c^T theta`. With `c = 0` this is the data-free model.
#[derive(Debug, Clone)]
pub struct LinearModel<T: Scalar> {
    c: DVector<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(c: DVector<T>) -> Self {
        Self { c }
    }
}

impl<T: Scalar> Model<T> for LinearModel<T> {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn log_h_and_grad(&self, theta: &DVector<T>) -> (T, DVector<T>) {
        (self.c.dot(theta), self.c.clone())
    }
}

/// Misclassification rate of the plug-in rule `sigmoid(x^T mu) >= 1/2`.
///
/// Only the first `data.m()` entries of `mu` are used, so augmented
/// parameter vectors (horseshoe scales) can be passed as is. Ties predict 1.
pub fn predict_error<T: Scalar>(data: &Dataset<T>, mu: &DVector<T>) -> Result<T> {
    classification_error(data.x(), data.y(), mu)
}

/// [`predict_error`] on raw arrays; rejects empty input.
pub fn classification_error<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, mu: &DVector<T>) -> Result<T> {
    let (n, m) = x.shape();
    if n == 0 {
        return Err(Error::Domain("cannot score an empty dataset".into()));
    }
    if mu.len() < m {
        return Err(Error::dim(format!("coefficient vector has {} entries, need {m}", mu.len())));
    }
    let beta = mu.rows(0, m);
    let wrong = (0..n)
        .filter(|&i| {
            let predict_one = x.row(i).transpose().dot(&beta) >= T::zero();
            predict_one != (y[i] == T::one())
        })
        .count();
    Ok(T::of(wrong as f64 / n as f64))
}

/// Misclassification rate of the Monte Carlo predictive: the class
/// probability is averaged over `draws` samples from `q`.
pub fn predict_error_mc<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    lambda: &VariationalParams<T>,
    draws: usize,
    rng: &mut R,
) -> Result<T> {
    if draws == 0 {
        return Err(Error::InvalidParameter("need at least one predictive draw".into()));
    }
    let (n, m) = data.x().shape();
    if lambda.dim() < m {
        return Err(Error::dim("variational dimension smaller than the design"));
    }
    let mut prob = DVector::<T>::zeros(n);
    for _ in 0..draws {
        let theta = lambda.sample_theta(&NoiseDraw::sample(lambda.rank(), lambda.dim(), rng))?;
        let eta = data.x() * theta.rows(0, m);
        for i in 0..n {
            prob[i] += sigmoid(eta[i]);
        }
    }
    let inv = T::one() / T::of(draws as f64);
    let half = T::of(0.5);
    let wrong = (0..n).filter(|&i| (prob[i] * inv >= half) != data.label(i)).count();
    Ok(T::of(wrong as f64 / n as f64))
}
