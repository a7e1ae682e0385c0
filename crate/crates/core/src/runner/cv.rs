use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::driver::fit_with_rng;
use crate::error::{Error, Result};
use crate::factor::Parameterization;
use crate::models::Dataset;
use crate::optim::RuleKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_error: f64,
    pub test_error: f64,
    pub iterations: usize,
    pub rule_restarts: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub variant: String,
    pub folds: Vec<FoldMetrics>,
    pub mean_train_error: f64,
    pub sd_train_error: f64,
    pub mean_test_error: f64,
    pub sd_test_error: f64,
    pub mean_wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub parameterization: Parameterization,
    pub rule: RuleKind,
    pub vafc: bool,
    pub report: CvReport,
}

/// Worker pool sized by `MANVB_THREADS` when set, else rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MANVB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::InvalidParameter(format!("MANVB_THREADS must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))
}

/// Fold id for every row. Rows of each class are shuffled and dealt round
/// robin, with the deal continuing from one class into the next, so fold
/// sizes differ by at most one and each class is spread evenly.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Stratification(format!("{} rows cannot fill {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut counter = 0usize;
    for class in [false, true] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} rows; every one of the {k} folds needs both classes",
                u8::from(class),
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for i in rows {
            assignment[i] = counter % k;
            counter += 1;
        }
    }
    Ok(assignment)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn cv_in_pool(config: &RunConfig, data: &Dataset<f64>) -> Result<CvReport> {
    config.validate()?;
    let labels: Vec<bool> = (0..data.n()).map(|i| data.label(i)).collect();
    let assignment = stratified_folds(&labels, config.cv_folds, config.seed)?;
    let folds: Vec<Result<FoldMetrics>> = (0..config.cv_folds)
        .into_par_iter()
        .map(|fold| {
            let test_rows: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] == fold).collect();
            let train_rows: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] != fold).collect();
            let train = Arc::new(data.subset(&train_rows)?);
            let test = data.subset(&test_rows)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(fold as u64 + 1);
            let result = fit_with_rng(config, train, Some(&test), &mut rng)?;
            log::info!(
                "{} fold {fold}: train {:.4} test {:.4} ({} iterations)",
                config.variant_label(),
                result.metrics.train_error,
                result.metrics.test_error.unwrap_or(f64::NAN),
                result.metrics.iterations
            );
            Ok(FoldMetrics {
                fold,
                n_train: train_rows.len(),
                n_test: test_rows.len(),
                train_error: result.metrics.train_error,
                test_error: result.metrics.test_error.unwrap_or(f64::NAN),
                iterations: result.metrics.iterations,
                rule_restarts: result.metrics.rule_restarts,
                wall_seconds: result.metrics.wall_seconds,
            })
        })
        .collect();
    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;
    let (mean_train_error, sd_train_error) = mean_sd(&folds.iter().map(|f| f.train_error).collect::<Vec<_>>());
    let (mean_test_error, sd_test_error) = mean_sd(&folds.iter().map(|f| f.test_error).collect::<Vec<_>>());
    let (mean_wall_seconds, _) = mean_sd(&folds.iter().map(|f| f.wall_seconds).collect::<Vec<_>>());
    Ok(CvReport {
        variant: config.variant_label(),
        folds,
        mean_train_error,
        sd_train_error,
        mean_test_error,
        sd_test_error,
        mean_wall_seconds,
    })
}

/// Stratified k-fold cross-validation. Fold `f` runs on its own generator
/// stream `(seed, f + 1)`, so results do not depend on scheduling.
pub fn cross_validate(config: &RunConfig, data: &Dataset<f64>) -> Result<CvReport> {
    thread_pool()?.install(|| cv_in_pool(config, data))
}

/// Cross-validates every (parameterization, rule) pair, plus the
/// unconstrained baseline when `include_vafc` is set.
pub fn sweep(
    base: &RunConfig,
    data: &Dataset<f64>,
    params: &[Parameterization],
    rules: &[RuleKind],
    include_vafc: bool,
) -> Result<Vec<SweepCell>> {
    let mut configs: Vec<RunConfig> = params
        .iter()
        .flat_map(|&parameterization| {
            rules.iter().map(move |&rule| RunConfig { parameterization, rule, vafc: false, ..base.clone() })
        })
        .collect();
    if include_vafc {
        configs.push(RunConfig { parameterization: Parameterization::G1, vafc: true, ..base.clone() });
    }
    let cells = thread_pool()?.install(|| {
        configs
            .par_iter()
            .map(|c| {
                Ok(SweepCell { parameterization: c.parameterization, rule: c.rule, vafc: c.vafc, report: cv_in_pool(c, data)? })
            })
            .collect::<Vec<Result<SweepCell>>>()
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    soft_check_ordering(&cells);
    Ok(cells)
}

/// Warns when a Grassmann (D1 = I) variant trails its Stiefel counterpart
/// by more than 0.01 in mean test error.
fn soft_check_ordering(cells: &[SweepCell]) {
    for g1 in cells.iter().filter(|c| !c.vafc && c.parameterization == Parameterization::G1) {
        if let Some(s) = cells.iter().find(|c| !c.vafc && c.parameterization == Parameterization::S && c.rule == g1.rule) {
            if g1.report.mean_test_error > s.report.mean_test_error + 0.01 {
                log::warn!(
                    "{}: G1 test error {:.4} exceeds S test error {:.4} by more than 0.01",
                    g1.rule,
                    g1.report.mean_test_error,
                    s.report.mean_test_error
                );
            }
        }
    }
}
