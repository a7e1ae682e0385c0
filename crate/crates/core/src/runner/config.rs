use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::Parameterization;
use crate::optim::{HyperParams, RuleKind};

/// When to end the optimization loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stopping {
    /// Run exactly `max_iters` iterations.
    FixedIters,
    /// Stop once the smoothed lower bound changes by less than `tol`
    /// (relative) against each of the previous `window` trace records.
    RelChange { window: usize, tol: f64 },
}

impl Default for Stopping {
    fn default() -> Self {
        Stopping::RelChange { window: 5, tol: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Independent `N(0, sd^2)` on every coefficient.
    Gaussian { sd: f64 },
    /// Horseshoe with half-Cauchy local and global scales.
    Horseshoe,
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian { sd: 10.0 }
    }
}

/// How class predictions are formed from the fitted approximation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    /// Sign of `x^T mu`.
    #[default]
    PlugIn,
    /// Predictive probability averaged over `draws` samples from `q`.
    MonteCarlo { draws: usize },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataOptions {
    pub path: Option<PathBuf>,
    /// `None` detects a header from the first row.
    pub header: Option<bool>,
    /// Zero-based label column; `None` means the last column.
    pub label_column: Option<usize>,
    pub standardize: bool,
    pub intercept: bool,
    /// Optional held-out file, loaded with the same options.
    pub test_path: Option<PathBuf>,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self { path: None, header: None, label_column: None, standardize: true, intercept: true, test_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub parameterization: Parameterization,
    pub rule: RuleKind,
    /// Unconstrained factor baseline: no projection or retraction, and `B`
    /// is updated by Euclidean ADADELTA. `rule` is ignored.
    pub vafc: bool,
    pub p: usize,
    pub max_iters: usize,
    pub mc_samples: usize,
    pub hyper: HyperParams<f64>,
    pub seed: u64,
    pub cv_folds: usize,
    pub stopping: Stopping,
    pub smoothing_window: usize,
    pub trace_every: usize,
    /// When false, `wall_ms` is written as 0 so traces are byte-reproducible.
    pub record_timing: bool,
    pub prior: Prior,
    pub prediction: Prediction,
    pub data: DataOptions,
    pub trace_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            parameterization: Parameterization::G1,
            rule: RuleKind::RmsProp,
            vafc: false,
            p: 4,
            max_iters: 5000,
            mc_samples: 1,
            hyper: HyperParams::default(),
            seed: 0,
            cv_folds: 5,
            stopping: Stopping::FixedIters,
            smoothing_window: 100,
            trace_every: 10,
            record_timing: true,
            prior: Prior::default(),
            prediction: Prediction::default(),
            data: DataOptions::default(),
            trace_path: None,
        }
    }
}

impl RunConfig {
    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1".into());
        }
        if self.smoothing_window == 0 || self.trace_every == 0 {
            return bad("smoothing window and trace interval must be at least 1".into());
        }
        if let Stopping::RelChange { window, tol } = self.stopping {
            if window == 0 || !(tol > 0.0) {
                return bad(format!("rel_change needs window >= 1 and tol > 0, got {window}, {tol}"));
            }
        }
        match self.prior {
            Prior::Gaussian { sd } if !(sd > 0.0 && sd.is_finite()) => return bad(format!("prior sd must be positive, got {sd}")),
            _ => {}
        }
        if let Prediction::MonteCarlo { draws: 0 } = self.prediction {
            return bad("Monte Carlo prediction needs at least one draw".into());
        }
        self.hyper.validate()
    }

    /// Short variant name such as `G1-RMSProp` or `VAFC`.
    pub fn variant_label(&self) -> String {
        if self.vafc {
            "VAFC".into()
        } else {
            format!("{}-{}", self.parameterization.label(), self.rule.label())
        }
    }
}
