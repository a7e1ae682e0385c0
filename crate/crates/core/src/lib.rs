//! Gaussian variational Bayes with factor covariance, where the factor
//! loading matrix is optimized on the Stiefel or Grassmann manifold.

pub mod error;
pub mod factor;
pub mod gradients;
pub mod manifold;
pub mod models;
pub mod optim;
pub mod runner;
pub mod scalar;
pub mod tolerances;

pub use error::{Error, Result};
pub use factor::{elbo_estimate, LowRankCov, NoiseDraw, Parameterization, VariationalParams};
pub use gradients::{elbo_and_grad, grad_l1, grad_l2, grad_total, EuclideanGrad};
pub use manifold::{project, random_point, retract, transport, Geometry, ManifoldPoint, TangentVector};
pub use models::{Dataset, GaussianTarget, LinearModel, LogisticGaussian, LogisticHorseshoe, Model};
pub use optim::{AdadeltaState, HyperParams, OptimizerState, RuleKind};
pub use scalar::Scalar;

pub type Params = VariationalParams<f64>;
pub type Point = ManifoldPoint<f64>;
pub type Tangent = TangentVector<f64>;
pub type Data = Dataset<f64>;
pub type Hyper = HyperParams<f64>;
