use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::factor::{NoiseDraw, Parameterization, VariationalParams};
use crate::gradients::{grad_l1, grad_l2, EuclideanGrad};
use crate::manifold::{random_point, Geometry, ManifoldPoint};
use crate::models::{Dataset, LogisticGaussian, Model};

pub const L1_TOL: f64 = 1e-5;
pub const L2_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub parameterization: Parameterization,
    pub block: String,
    /// `"L1"` (expected log-density term) or `"L2"` (log-determinant term).
    pub part: String,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub checks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(BlockCheck::passed)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Mu,
    B,
    D1,
    D2,
}

const BLOCKS: [(Block, &str); 4] = [(Block::Mu, "mu"), (Block::B, "B"), (Block::D1, "d1"), (Block::D2, "d2")];

fn block_len(lambda: &VariationalParams<f64>, block: Block) -> usize {
    match block {
        Block::Mu | Block::D2 => lambda.dim(),
        Block::B => lambda.dim() * lambda.rank(),
        Block::D1 => lambda.d1().map_or(0, |v| v.len()),
    }
}

/// Copy of `lambda` with one coordinate shifted; `B` becomes a free matrix.
fn shifted(lambda: &VariationalParams<f64>, block: Block, idx: usize, delta: f64) -> Result<VariationalParams<f64>> {
    let param = lambda.param();
    let (mut mu, b, mut d1, mut d2) = lambda.clone().into_parts();
    let mut bm = b.into_matrix();
    match block {
        Block::Mu => mu[idx] += delta,
        Block::B => bm[idx] += delta,
        Block::D1 => d1.as_mut().expect("block has entries")[idx] += delta,
        Block::D2 => d2[idx] += delta,
    }
    VariationalParams::new(param, mu, ManifoldPoint::new(bm, Geometry::Euclidean)?, d1, d2)
}

fn analytic_block(g: &EuclideanGrad<f64>, block: Block) -> DVector<f64> {
    match block {
        Block::Mu => g.g_mu.clone(),
        Block::B => DVector::from_column_slice(g.g_b.as_slice()),
        Block::D1 => g.g_d1.clone().unwrap_or_else(|| DVector::zeros(0)),
        Block::D2 => g.g_d2.clone(),
    }
}

fn central_difference<F>(lambda: &VariationalParams<f64>, block: Block, f: F) -> Result<DVector<f64>>
where
    F: Fn(&VariationalParams<f64>) -> Result<f64>,
{
    let n = block_len(lambda, block);
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let h = 1e-5;
        out[i] = (f(&shifted(lambda, block, i, h)?)? - f(&shifted(lambda, block, i, -h)?)?) / (2.0 * h);
    }
    Ok(out)
}

fn rel_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).norm() / a.norm().max(b.norm()).max(1e-2)
}

fn random_instance(param: Parameterization, rng: &mut ChaCha8Rng) -> Result<(VariationalParams<f64>, LogisticGaussian<f64>)> {
    let m = rng.random_range(2..=10usize);
    let p = rng.random_range(1..=m.min(4));
    let n = 12;
    let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |_, _| f64::from(u8::from(rng.random_bool(0.5))));
    let model = LogisticGaussian::new(Arc::new(Dataset::new(x, y)?), 3.0)?;
    let b = random_point(m, p, param.geometry(), rng)?;
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mu = DVector::from_fn(m, |_, _| u(-0.5, 0.5));
    let d1 = param.d1_len(m, p).map(|k| DVector::from_fn(k, |_, _| u(0.3, 1.5)));
    let d2 = DVector::from_fn(m, |_, _| u(0.2, 1.0));
    Ok((VariationalParams::new(param, mu, b, d1, d2)?, model))
}

/// Compares analytic gradient blocks with central differences on random
/// logistic problems (m <= 10), holding the noise draw fixed.
pub fn gradcheck(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for param in Parameterization::ALL {
        let mut worst = [[0.0f64; 2]; 4];
        for _ in 0..instances {
            let (lambda, model) = random_instance(param, &mut rng)?;
            let noise = NoiseDraw::sample(lambda.rank(), lambda.dim(), &mut rng);
            let g1 = grad_l1(&lambda, &model, &noise)?;
            let g2 = grad_l2(&lambda)?;
            let l1 = |l: &VariationalParams<f64>| Ok(model.log_h(&l.sample_theta(&noise)?));
            let l2 = |l: &VariationalParams<f64>| Ok(0.5 * l.log_det_sigma()?);
            for (k, &(block, _)) in BLOCKS.iter().enumerate() {
                let e1 = rel_error(&analytic_block(&g1, block), &central_difference(&lambda, block, l1)?);
                let e2 = rel_error(&analytic_block(&g2, block), &central_difference(&lambda, block, l2)?);
                worst[k][0] = worst[k][0].max(e1);
                worst[k][1] = worst[k][1].max(e2);
            }
        }
        for (k, &(block, name)) in BLOCKS.iter().enumerate() {
            if block == Block::D1 && param.d1_len(2, 1).is_none() {
                continue;
            }
            for (j, (part, tol)) in [("L1", L1_TOL), ("L2", L2_TOL)].into_iter().enumerate() {
                checks.push(BlockCheck {
                    parameterization: param,
                    block: name.to_string(),
                    part: part.to_string(),
                    max_rel_error: worst[k][j],
                    tol,
                });
            }
        }
    }
    Ok(GradCheckReport { instances, checks })
}
