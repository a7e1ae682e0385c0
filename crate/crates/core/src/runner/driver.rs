use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Prediction, Prior, RunConfig};
use super::data::{load_csv, load_csv_like};
use super::output::write_trace;
use super::stopping::check_stopping;
use crate::error::{Error, Result};
use crate::factor::{clamp_d2, NoiseDraw, Parameterization, VariationalParams};
use crate::gradients::{elbo_and_grad, EuclideanGrad};
use crate::manifold::{random_point, Geometry, ManifoldPoint};
use crate::models::{predict_error, predict_error_mc, Dataset, LogisticGaussian, LogisticHorseshoe, Model};
use crate::optim::{step_euclidean_adadelta, step_factor, AdadeltaState, HyperParams, OptimizerState};
use crate::scalar::Scalar;
use crate::tolerances::{DIVERGENCE_STREAK, ORTH_CHAIN};

/// One row of the trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Completed iterations.
    pub iter: usize,
    /// Single-iteration lower-bound estimate at the pre-update parameters.
    pub elbo_sample: f64,
    /// Trailing mean of `elbo_sample` over the smoothing window.
    pub elbo_smooth: f64,
    pub wall_ms: u64,
    /// `||B^T B - I||_F` after the iteration.
    pub orth_residual: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome<T: Scalar> {
    pub lambda: VariationalParams<T>,
    pub trace: Vec<TraceRecord>,
    pub iterations: usize,
    /// Iterations whose lower bound or update was non-finite and skipped.
    pub skipped: usize,
    /// Times the factor rule's state was reset after a numerical failure.
    pub rule_restarts: usize,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_error: f64,
    pub test_error: Option<f64>,
    pub iterations: usize,
    pub skipped: usize,
    pub rule_restarts: usize,
    pub stopped_early: bool,
    pub final_elbo_smooth: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub lambda: VariationalParams<f64>,
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
}

/// Starting point: `mu = 0`, random orthonormal `B`, `d1 = 1`, `d2 = 0.1`.
/// With `vafc` the factor is left unconstrained.
pub fn init_lambda<T: Scalar, R: Rng + ?Sized>(
    dim: usize,
    p: usize,
    param: Parameterization,
    vafc: bool,
    rng: &mut R,
) -> Result<VariationalParams<T>> {
    if p == 0 || p > dim {
        return Err(Error::InvalidParameter(format!("need 1 <= p <= model dimension {dim}, got p = {p}")));
    }
    let b: ManifoldPoint<T> = random_point(dim, p, param.geometry(), rng)?;
    let b = if vafc { ManifoldPoint::new(b.into_matrix(), Geometry::Euclidean)? } else { b };
    let d1 = param.d1_len(dim, p).map(|n| DVector::from_element(n, T::one()));
    VariationalParams::new(param, DVector::zeros(dim), b, d1, DVector::from_element(dim, T::of(0.1)))
}

struct EuclidStates<T: Scalar> {
    mu: AdadeltaState<T>,
    d1: Option<AdadeltaState<T>>,
    d2: AdadeltaState<T>,
    b: AdadeltaState<T>,
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::IllConditioned(_) | Error::DegenerateRetraction { .. })
}

/// One parameter update from the gradient at `lambda`.
fn update<T: Scalar>(
    lambda: &VariationalParams<T>,
    grad: &EuclideanGrad<T>,
    config: &RunConfig,
    hyper: &HyperParams<T>,
    opt: OptimizerState<T>,
    euclid: &EuclidStates<T>,
) -> Result<(VariationalParams<T>, OptimizerState<T>, EuclidStates<T>)> {
    let (rho, eps) = (hyper.adadelta_rho, hyper.adadelta_eps);
    let param = lambda.param();
    let (mu, b, d1, d2) = lambda.clone().into_parts();

    let (mu, mu_state) = step_euclidean_adadelta(&mu, &grad.g_mu, euclid.mu.clone(), rho, eps)?;
    let (d1, d1_state) = match (d1, &grad.g_d1, &euclid.d1) {
        (Some(v), Some(g), Some(s)) => {
            let (v, s) = step_euclidean_adadelta(&v, g, s.clone(), rho, eps)?;
            (Some(v), Some(s))
        }
        _ => (None, None),
    };
    let (mut d2, d2_state) = step_euclidean_adadelta(&d2, &grad.g_d2, euclid.d2.clone(), rho, eps)?;
    clamp_d2(&mut d2);

    let (b, opt, b_state) = if config.vafc {
        let (m, p) = (b.nrows(), b.ncols());
        let flat = DVector::from_column_slice(b.matrix().as_slice());
        let g = DVector::from_column_slice(grad.g_b.as_slice());
        let (next, s) = step_euclidean_adadelta(&flat, &g, euclid.b.clone(), rho, eps)?;
        let point = ManifoldPoint::new(DMatrix::from_column_slice(m, p, next.as_slice()), Geometry::Euclidean)?;
        (point, opt, s)
    } else {
        let (mut next, opt) = step_factor(config.rule, &b, &grad.g_b, opt, hyper)?;
        if next.orth_residual().as_f64() > 0.1 * ORTH_CHAIN {
            log::debug!("re-orthonormalizing B (residual {:e})", next.orth_residual().as_f64());
            next = ManifoldPoint::orthonormalize(next.into_matrix(), b.geometry())?;
        }
        (next, opt, euclid.b.clone())
    };

    let lambda = VariationalParams::new(param, mu, b, d1, d2)?;
    Ok((lambda, opt, EuclidStates { mu: mu_state, d1: d1_state, d2: d2_state, b: b_state }))
}

/// Runs the optimization loop from `lambda0`.
///
/// Each iteration draws `mc_samples` noise pairs, forms the lower-bound
/// estimate and its gradient, updates `mu`, `d1`, `d2` by ADADELTA and `B`
/// by the configured rule. Iterations with a non-finite bound are skipped;
/// `DIVERGENCE_STREAK` of them in a row abort with the last finite point.
pub fn optimize<T: Scalar, M: Model<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    lambda0: VariationalParams<T>,
    config: &RunConfig,
    rng: &mut R,
) -> Result<OptimizeOutcome<T>> {
    config.validate()?;
    if model.dim() != lambda0.dim() {
        return Err(Error::dim(format!("model dimension {} vs variational dimension {}", model.dim(), lambda0.dim())));
    }
    let hyper: HyperParams<T> = config.hyper.cast();
    let (m, p) = (lambda0.dim(), lambda0.rank());
    let start = Instant::now();

    let mut lambda = lambda0;
    let mut last_good = lambda.clone();
    let mut opt = OptimizerState::new();
    let mut euclid = EuclidStates {
        mu: AdadeltaState::zeros(m),
        d1: lambda.d1().map(|v| AdadeltaState::zeros(v.len())),
        d2: AdadeltaState::zeros(m),
        b: AdadeltaState::zeros(if config.vafc { m * p } else { 0 }),
    };
    let mut window: VecDeque<f64> = VecDeque::with_capacity(config.smoothing_window);
    let mut trace = Vec::new();
    let (mut streak, mut skipped, mut iterations, mut stopped_early) = (0usize, 0usize, 0usize, false);
    let mut last_sample = f64::NAN;
    let mut restarts = 0usize;

    for t in 0..config.max_iters {
        let noises: Vec<NoiseDraw<T>> = (0..config.mc_samples).map(|_| NoiseDraw::sample(p, m, rng)).collect();
        let step = match elbo_and_grad(&lambda, model, &noises) {
            Ok((elbo, grad)) if elbo.is_finite_value() => {
                let elbo = elbo.as_f64();
                let attempt = match update(&lambda, &grad, config, &hyper, opt.clone(), &euclid) {
                    Err(e) if is_numerical(&e) && opt.step_count > 0 => {
                        // The rule's accumulators can overflow while the bound is
                        // still finite; restart them from zero and retry once.
                        log::warn!("iteration {}: {e}; restarting {} state", t + 1, config.rule);
                        restarts += 1;
                        opt = OptimizerState::new();
                        update(&lambda, &grad, config, &hyper, opt.clone(), &euclid)
                    }
                    other => other,
                };
                match attempt {
                    Ok(next) => Ok((elbo, next)),
                    Err(e) if is_numerical(&e) => Err(e),
                    Err(e) => return Err(e),
                }
            }
            Ok(_) => Err(Error::NonFinite { what: "lower bound".into(), theta: Vec::new() }),
            Err(e) if is_numerical(&e) => Err(e),
            Err(e) => return Err(e),
        };
        iterations = t + 1;
        match step {
            Ok((elbo, (next, next_opt, next_euclid))) => {
                streak = 0;
                last_good = lambda;
                lambda = next;
                opt = next_opt;
                euclid = next_euclid;
                last_sample = elbo;
                if window.len() == config.smoothing_window {
                    window.pop_front();
                }
                window.push_back(elbo);
            }
            Err(e) => {
                streak += 1;
                skipped += 1;
                log::debug!("iteration {iterations} skipped: {e}");
                if streak >= DIVERGENCE_STREAK {
                    return Err(Error::Divergence {
                        iter: iterations,
                        consecutive: streak,
                        last_good: Some(Box::new(last_good.to_f64())),
                    });
                }
            }
        }

        if iterations % config.trace_every == 0 || iterations == config.max_iters {
            let smooth = if window.is_empty() { f64::NAN } else { window.iter().sum::<f64>() / window.len() as f64 };
            trace.push(TraceRecord {
                iter: iterations,
                elbo_sample: last_sample,
                elbo_smooth: smooth,
                wall_ms: if config.record_timing { start.elapsed().as_millis() as u64 } else { 0 },
                orth_residual: lambda.b().orth_residual().as_f64(),
            });
            if check_stopping(&trace, &config.stopping, config.max_iters) {
                stopped_early = iterations < config.max_iters;
                break;
            }
        }
    }

    Ok(OptimizeOutcome {
        lambda,
        trace,
        iterations,
        skipped,
        rule_restarts: restarts,
        stopped_early,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// The target posterior for `data` under the configured prior.
pub fn build_model(prior: &Prior, data: Arc<Dataset<f64>>) -> Result<Box<dyn Model<f64>>> {
    Ok(match *prior {
        Prior::Gaussian { sd } => Box::new(LogisticGaussian::new(data, sd)?),
        Prior::Horseshoe => Box::new(LogisticHorseshoe::new(data)),
    })
}

fn error_rate<R: Rng + ?Sized>(
    data: &Dataset<f64>,
    lambda: &VariationalParams<f64>,
    prediction: Prediction,
    rng: &mut R,
) -> Result<f64> {
    match prediction {
        Prediction::PlugIn => predict_error(data, lambda.mu()),
        Prediction::MonteCarlo { draws } => predict_error_mc(data, lambda, draws, rng),
    }
}

/// Fits `train` with a generator seeded from `config.seed`, then scores
/// `train` and, if given, `test`.
pub fn fit(config: &RunConfig, train: Arc<Dataset<f64>>, test: Option<&Dataset<f64>>) -> Result<RunResult> {
    fit_with_rng(config, train, test, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

pub(crate) fn fit_with_rng<R: Rng + ?Sized>(
    config: &RunConfig,
    train: Arc<Dataset<f64>>,
    test: Option<&Dataset<f64>>,
    rng: &mut R,
) -> Result<RunResult> {
    config.validate()?;
    if let Some(t) = test {
        if t.m() != train.m() {
            return Err(Error::dim(format!("test data has {} columns, training data {}", t.m(), train.m())));
        }
    }
    let model = build_model(&config.prior, Arc::clone(&train))?;
    let lambda0 = init_lambda(model.dim(), config.p, config.parameterization, config.vafc, rng)?;
    let out = optimize(model.as_ref(), lambda0, config, rng)?;
    let train_error = error_rate(&train, &out.lambda, config.prediction, rng)?;
    let test_error = test.map(|t| error_rate(t, &out.lambda, config.prediction, rng)).transpose()?;
    let metrics = Metrics {
        train_error,
        test_error,
        iterations: out.iterations,
        skipped: out.skipped,
        rule_restarts: out.rule_restarts,
        stopped_early: out.stopped_early,
        final_elbo_smooth: out.trace.last().map(|r| r.elbo_smooth),
        wall_seconds: out.wall_seconds,
    };
    Ok(RunResult { lambda: out.lambda, trace: out.trace, metrics })
}

/// Loads the configured data, fits, and writes the trace if a path is set.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let path = config
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("no dataset path configured".into()))?;
    let train = load_csv(path, &config.data)?;
    let test = match &config.data.test_path {
        Some(tp) => Some(load_csv_like(tp, &config.data, &train.transform)?),
        None => None,
    };
    let result = fit(config, Arc::new(train.dataset), test.as_ref().map(|t| &t.dataset))?;
    if let Some(tp) = &config.trace_path {
        write_trace(tp, &result.trace, result.lambda.dim())?;
    }
    Ok(result)
}
