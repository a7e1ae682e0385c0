//! Trace CSV, JSON summary and binary checkpoint of the fitted parameters.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  b"MANVBCK1"
//! param      u8       0 = S, 1 = G1, 2 = G2
//! geometry   u8       0 = Stiefel, 1 = Grassmann, 2 = Euclidean
//! m, p, k    3 x u64  dimension, factor count, length of d1 (0 if absent)
//! mu         m   x f64
//! B          m*p x f64, row-major
//! d1         k   x f64
//! d2         m   x f64
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::config::RunConfig;
use super::driver::{Metrics, TraceRecord};
use crate::error::{Error, Result};
use crate::factor::{Parameterization, VariationalParams};
use crate::manifold::{Geometry, ManifoldPoint};

pub const TRACE_HEADER: &str = "iter,elbo_sample,elbo_smooth,wall_ms,orth_residual";
const MAGIC: &[u8; 8] = b"MANVBCK1";

/// Writes the trace. The first line is a `#` comment recording the constant
/// omitted from every lower-bound value.
pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRecord], dim: usize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_trace_to(&mut out, trace, dim)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn write_trace_to<W: Write>(out: &mut W, trace: &[TraceRecord], dim: usize) -> Result<()> {
    let constant = 0.5 * dim as f64 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
    writeln!(out, "# lower bound excludes the entropy constant (m/2)(log(2 pi) + 1) = {constant:.17e} for m = {dim}")?;
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{},{:.17e}",
            r.iter, r.elbo_sample, r.elbo_smooth, r.wall_ms, r.orth_residual
        )?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != TRACE_HEADER {
                return Err(Error::Parse { line: lineno, msg: format!("expected header '{TRACE_HEADER}'") });
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 5 fields, found {}", f.len()) });
        }
        let bad = |what: &str| Error::Parse { line: lineno, msg: format!("invalid {what}") };
        records.push(TraceRecord {
            iter: f[0].parse().map_err(|_| bad("iter"))?,
            elbo_sample: f[1].parse().map_err(|_| bad("elbo_sample"))?,
            elbo_smooth: f[2].parse().map_err(|_| bad("elbo_smooth"))?,
            wall_ms: f[3].parse().map_err(|_| bad("wall_ms"))?,
            orth_residual: f[4].parse().map_err(|_| bad("orth_residual"))?,
        });
    }
    Ok(records)
}

/// Config echo plus final metrics.
pub fn summary_json(config: &RunConfig, metrics: &Metrics) -> serde_json::Value {
    json!({
        "variant": config.variant_label(),
        "seed": config.seed,
        "config": config,
        "metrics": metrics,
    })
}

fn param_tag(p: Parameterization) -> u8 {
    match p {
        Parameterization::S => 0,
        Parameterization::G1 => 1,
        Parameterization::G2 => 2,
    }
}

fn geometry_tag(g: Geometry) -> u8 {
    match g {
        Geometry::Stiefel => 0,
        Geometry::Grassmann => 1,
        Geometry::Euclidean => 2,
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, lambda: &VariationalParams<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let (m, p) = (lambda.dim(), lambda.rank());
    let k = lambda.d1().map_or(0, |v| v.len());
    out.write_all(MAGIC)?;
    out.write_all(&[param_tag(lambda.param()), geometry_tag(lambda.b().geometry())])?;
    for n in [m, p, k] {
        out.write_all(&(n as u64).to_le_bytes())?;
    }
    let mut put = |v: f64| out.write_all(&v.to_le_bytes());
    for &v in lambda.mu().iter() {
        put(v)?;
    }
    let b = lambda.b().matrix();
    for i in 0..m {
        for j in 0..p {
            put(b[(i, j)])?;
        }
    }
    if let Some(d1) = lambda.d1() {
        for &v in d1.iter() {
            put(v)?;
        }
    }
    for &v in lambda.d2().iter() {
        put(v)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<VariationalParams<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |msg: &str| Error::Parse { line: 0, msg: format!("checkpoint: {msg}") };
    if bytes.len() < 34 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic or truncated header"));
    }
    let param = match bytes[8] {
        0 => Parameterization::S,
        1 => Parameterization::G1,
        2 => Parameterization::G2,
        _ => return Err(corrupt("unknown parameterization tag")),
    };
    let geometry = match bytes[9] {
        0 => Geometry::Stiefel,
        1 => Geometry::Grassmann,
        2 => Geometry::Euclidean,
        _ => return Err(corrupt("unknown geometry tag")),
    };
    let word = |i: usize| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap()) as usize;
    let (m, p, k) = (word(0), word(1), word(2));
    let count = m
        .checked_mul(p)
        .and_then(|mp| mp.checked_add(2 * m + k))
        .ok_or_else(|| corrupt("dimensions overflow"))?;
    let body = &bytes[34..];
    if body.len() != 8 * count {
        return Err(corrupt("payload length does not match the header"));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mu = DVector::from_column_slice(&vals[..m]);
    let b = DMatrix::from_row_slice(m, p, &vals[m..m + m * p]);
    let d1 = (k > 0).then(|| DVector::from_column_slice(&vals[m + m * p..m + m * p + k]));
    let d2 = DVector::from_column_slice(&vals[m + m * p + k..]);
    VariationalParams::new(param, mu, ManifoldPoint::new(b, geometry)?, d1, d2)
}
