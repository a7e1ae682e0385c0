//! Command-line front end: `fit`, `cv`, `sweep` and `check`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use manvb::runner::{
    cross_validate, fit, gradcheck, load_csv, load_csv_like, summary_json, sweep, write_checkpoint, write_trace,
    DataOptions, Prediction, Prior, RunConfig, Stopping,
};
use manvb::{Error, HyperParams, Parameterization, RuleKind};

#[derive(Parser)]
#[command(name = "manvb", version, about = "Manifold-constrained Gaussian variational Bayes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one variant on a dataset
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Held-out CSV scored with the training column scaling
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Write the fitted parameters as a binary checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation of one variant
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Cross-validate a grid of parameterizations and rules
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Comma-separated parameterizations
        #[arg(long, value_delimiter = ',', default_value = "S,G1,G2")]
        params: Vec<Parameterization>,
        /// Comma-separated update rules
        #[arg(long, value_delimiter = ',', default_value = "RGD-Basic,cRGD-M,RMSProp,RGD-ADADELTA")]
        rules: Vec<RuleKind>,
        /// Add the unconstrained-factor baseline
        #[arg(long)]
        baseline: bool,
    },
    /// Finite-difference check of the analytic gradients
    Check {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StopArg {
    Fixed,
    RelChange,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Gaussian,
    Horseshoe,
}

#[derive(Args)]
struct RunArgs {
    /// Training CSV (last column is the 0/1 label unless --label-column is given)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "G1")]
    param: Parameterization,
    #[arg(long, default_value = "RMSProp")]
    rule: RuleKind,
    /// Unconstrained factor with Euclidean ADADELTA (ignores --rule)
    #[arg(long)]
    vafc: bool,
    #[arg(short, long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.95)]
    zeta: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.95)]
    adadelta_rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    adadelta_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "fixed")]
    stopping: StopArg,
    /// Trace records compared by the relative-change rule
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    smoothing_window: usize,
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
    /// Write wall_ms as 0 so traces are byte-reproducible
    #[arg(long)]
    no_timing: bool,
    #[arg(long, value_enum, default_value = "gaussian")]
    prior: PriorArg,
    #[arg(long, default_value_t = 10.0)]
    prior_sd: f64,
    /// Score with the Monte Carlo predictive using this many draws
    #[arg(long)]
    mc_predict: Option<usize>,
    /// Treat the first row as a header (auto-detected by default)
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    #[arg(long)]
    no_header: bool,
    /// Zero-based label column
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    no_intercept: bool,
    /// Trace CSV output
    #[arg(long)]
    trace: Option<PathBuf>,
    /// JSON summary output (printed to stdout when absent)
    #[arg(long)]
    summary: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, cv_folds: usize) -> RunConfig {
        RunConfig {
            parameterization: self.param,
            rule: self.rule,
            vafc: self.vafc,
            p: self.p,
            max_iters: self.max_iters,
            mc_samples: self.mc_samples,
            hyper: HyperParams {
                eta: self.eta,
                zeta: self.zeta,
                epsilon: self.epsilon,
                adadelta_rho: self.adadelta_rho,
                adadelta_eps: self.adadelta_eps,
            },
            seed: self.seed,
            cv_folds,
            stopping: match self.stopping {
                StopArg::Fixed => Stopping::FixedIters,
                StopArg::RelChange => Stopping::RelChange { window: self.window, tol: self.tol },
            },
            smoothing_window: self.smoothing_window,
            trace_every: self.trace_every,
            record_timing: !self.no_timing,
            prior: match self.prior {
                PriorArg::Gaussian => Prior::Gaussian { sd: self.prior_sd },
                PriorArg::Horseshoe => Prior::Horseshoe,
            },
            prediction: self.mc_predict.map_or(Prediction::PlugIn, |draws| Prediction::MonteCarlo { draws }),
            data: DataOptions {
                path: Some(self.data.clone()),
                header: if self.header { Some(true) } else if self.no_header { Some(false) } else { None },
                label_column: self.label_column,
                standardize: !self.no_standardize,
                intercept: !self.no_intercept,
                test_path: None,
            },
            trace_path: self.trace.clone(),
        }
    }

    fn emit(&self, value: &serde_json::Value) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(value)?;
        match &self.summary {
            Some(path) => fs::write(path, text + "\n")?,
            None => println!("{text}"),
        }
        Ok(())
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Fit { run, test_data, checkpoint } => {
            let config = run.config(5);
            let train = load_csv(&run.data, &config.data)?;
            let test = test_data.as_ref().map(|p| load_csv_like(p, &config.data, &train.transform)).transpose()?;
            let dim_note = train.dataset.m();
            let result = match fit(&config, Arc::new(train.dataset), test.as_ref().map(|t| &t.dataset)) {
                Err(Error::Divergence { iter, consecutive, last_good }) => {
                    if let (Some(path), Some(lambda)) = (&checkpoint, &last_good) {
                        write_checkpoint(path, lambda)?;
                        eprintln!("last finite parameters written to {}", path.display());
                    }
                    return Err(Error::Divergence { iter, consecutive, last_good });
                }
                other => other?,
            };
            if let Some(path) = &config.trace_path {
                write_trace(path, &result.trace, result.lambda.dim())?;
            }
            if let Some(path) = &checkpoint {
                write_checkpoint(path, &result.lambda)?;
            }
            log::info!("{} on {} columns: train error {:.4}", config.variant_label(), dim_note, result.metrics.train_error);
            run.emit(&summary_json(&config, &result.metrics))?;
        }
        Command::Cv { run, folds } => {
            let config = run.config(folds);
            let data = load_csv(&run.data, &config.data)?;
            let report = cross_validate(&config, &data.dataset)?;
            eprintln!(
                "{}: train {:.4} (sd {:.4})  test {:.4} (sd {:.4})  {:.2} s/fold",
                report.variant,
                report.mean_train_error,
                report.sd_train_error,
                report.mean_test_error,
                report.sd_test_error,
                report.mean_wall_seconds
            );
            run.emit(&serde_json::json!({ "seed": config.seed, "config": config, "report": report }))?;
        }
        Command::Sweep { run, folds, params, rules, baseline } => {
            let config = run.config(folds);
            let data = load_csv(&run.data, &config.data)?;
            let cells = sweep(&config, &data.dataset, &params, &rules, baseline)?;
            eprintln!("{:<18} {:>10} {:>10} {:>10}", "variant", "train", "test", "s/fold");
            for c in &cells {
                eprintln!(
                    "{:<18} {:>10.4} {:>10.4} {:>10.2}",
                    c.report.variant, c.report.mean_train_error, c.report.mean_test_error, c.report.mean_wall_seconds
                );
            }
            run.emit(&serde_json::json!({ "seed": config.seed, "config": config, "cells": cells }))?;
        }
        Command::Check { instances, seed } => {
            let report = gradcheck(instances, seed)?;
            for c in &report.checks {
                println!(
                    "{} {:<3} {:<3} {:<2} max rel error {:.3e} (tol {:.0e})",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.parameterization,
                    c.block,
                    c.part,
                    c.max_rel_error,
                    c.tol
                );
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
