//! Randomized drivers for the transport-bound checks, shared by the CLI and
//! the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::mcmc::{run_chain, ChainConfig, FnTarget};
use crate::measures::{
    finite_chain_experiment, median, mixture_bound_check, product_reduction_check, spectral_norm, verify_shift_bound,
    BoundReport, EmpiricalMeasure, FiniteChainReport, LipschitzBundle, LipschitzForward, MixtureReport,
};
use crate::rng::row_stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSuiteReport {
    pub instances: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub reports: Vec<BoundReport>,
    pub passed: bool,
}

fn affine(rows: usize, cols: usize, scale: f64, rng: &mut crate::rng::MineRng) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale)),
        DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)),
    )
}

fn apply(w: &DMatrix<f64>, b: &DVector<f64>, u: &[f64]) -> Vec<f64> {
    (w * DVector::from_column_slice(u) + b).iter().copied().collect()
}

/// Random affine forward maps and emulators with exact moduli, random
/// training and shifted deployment samples.
pub fn shift_bound_suite(instances: usize, seed: u64) -> Result<ShiftSuiteReport> {
    let mut reports = Vec::with_capacity(instances);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for i in 0..instances {
        let mut rng = row_stream(seed, i as u64);
        let din = rng.random_range(1..=4);
        let dout = rng.random_range(1..=3);
        let (a, fa) = affine(dout, din, 1.5, &mut rng);
        let (e, eb) = affine(dout, din, 1.5, &mut rng);
        let f = |u: &[f64]| -> Result<Vec<f64>> { Ok(apply(&a, &fa, u)) };
        let em = |u: &[f64]| -> Result<Vec<f64>> { Ok(apply(&e, &eb, u)) };
        let lip = LipschitzBundle { l: spectral_norm(&a), r: spectral_norm(&e), b: eb.norm(), f0: fa.norm() };
        let n = rng.random_range(1..=40);
        let shift = rng.random_range(-2.0..2.0);
        let spread = rng.random_range(0.5..2.0);
        let train: Vec<f64> = (0..din * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dep: Vec<f64> = (0..din * n).map(|_| shift + spread * rng.random_range(-1.0..1.0)).collect();
        let train = EmpiricalMeasure::uniform(train, din)?;
        let dep = EmpiricalMeasure::uniform(dep, din)?;
        match verify_shift_bound(&em, &f, &train, &dep, &lip) {
            Ok(rep) => {
                min_slack = min_slack.min(rep.slack);
                reports.push(rep);
            }
            Err(MineError::BoundViolation { slack }) => {
                violations += 1;
                min_slack = min_slack.min(slack);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ShiftSuiteReport { instances, violations, min_slack, reports, passed: violations == 0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductSuiteReport {
    pub instances: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// `W2(ρ⊗π̂, ρ⊗π)` against `W2(π̂, π)` on random product instances.
pub fn product_reduction_suite(instances: usize, seed: u64, tol: f64) -> Result<ProductSuiteReport> {
    let mut max_abs_diff = 0.0f64;
    for i in 0..instances {
        let mut rng = row_stream(seed, i as u64);
        let dx = rng.random_range(1..=3);
        let dt = rng.random_range(1..=3);
        let nr = rng.random_range(1..=5);
        let np = rng.random_range(1..=8);
        let mut pts = |n: usize, d: usize| -> Vec<f64> { (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let rho = EmpiricalMeasure::uniform(pts(nr, dx), dx)?;
        let pi = EmpiricalMeasure::uniform(pts(np, dt), dt)?;
        let pi_hat = EmpiricalMeasure::uniform(pts(np, dt), dt)?;
        let (j, t) = product_reduction_check(&rho, &pi, &pi_hat)?;
        max_abs_diff = max_abs_diff.max((j - t).abs());
    }
    Ok(ProductSuiteReport { instances, max_abs_diff, passed: max_abs_diff <= tol })
}

/// Smooth scalar forward map on `(x1, x2, θ)` with a known Lipschitz modulus.
pub fn reference_forward(u: &[f64]) -> Result<Vec<f64>> {
    Ok(vec![0.8 * u[0] - 0.5 * u[1] + 1.2 * u[2] + 0.7 * (u[0] + 0.5 * u[1] + 2.0 * u[2]).sin() + 0.3])
}

pub fn reference_forward_lipschitz() -> f64 {
    (0.8f64 * 0.8 + 0.25 + 1.44).sqrt() + 0.7 * (1.0f64 + 0.25 + 4.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiniteChainSuiteConfig {
    pub ns: Vec<usize>,
    pub reference_size: usize,
    pub seeds: usize,
    pub rho_atoms: usize,
    pub burn_in: usize,
}

impl Default for FiniteChainSuiteConfig {
    fn default() -> Self {
        Self { ns: vec![50, 200, 1000, 5000], reference_size: 50_000, seeds: 20, rho_atoms: 8, burn_in: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteChainSuiteReport {
    pub ns: Vec<usize>,
    pub median_w2: Vec<f64>,
    pub w2_decreasing: bool,
    pub bound_failures: Vec<String>,
    pub runs: Vec<FiniteChainReport>,
    pub passed: bool,
}

/// DRAM chains on a Gaussian posterior `N(1, 0.5²)` against an i.i.d.
/// reference sample, one chain and reference per seed.
pub fn finite_chain_suite(cfg: &FiniteChainSuiteConfig, seed: u64) -> Result<FiniteChainSuiteReport> {
    let max_n = cfg.ns.iter().copied().max().unwrap_or(0);
    let target = FnTarget { dim: 1, log_density: |x: &[f64]| -0.5 * ((x[0] - 1.0) / 0.5).powi(2) };
    let fwd = LipschitzForward { map: &reference_forward, lipschitz: reference_forward_lipschitz(), norm_at_zero: 0.3 };
    let mut per_n = vec![Vec::with_capacity(cfg.seeds); cfg.ns.len()];
    let mut runs = Vec::with_capacity(cfg.seeds);
    let mut bound_failures = Vec::new();
    for s in 0..cfg.seeds {
        let mut rng = row_stream(seed, s as u64);
        let chain_cfg = ChainConfig::with_diagonal_scales(max_n + cfg.burn_in, cfg.burn_in, vec![1.0], &[0.5], rng.random());
        let chain = run_chain(&chain_cfg, &target)?;
        let rho = EmpiricalMeasure::uniform((0..2 * cfg.rho_atoms).map(|_| rng.random_range(-1.0..1.0)).collect(), 2)?;
        let pi_ref = EmpiricalMeasure::uniform(
            (0..cfg.reference_size).map(|_| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect(),
            1,
        )?;
        match finite_chain_experiment(&pi_ref, chain.posterior_samples(), &rho, &fwd, &cfg.ns) {
            Ok(rep) => {
                for (k, row) in rep.rows.iter().enumerate() {
                    per_n[k].push(row.w2);
                }
                runs.push(rep);
            }
            Err(MineError::TheoremCheck { n, detail }) => bound_failures.push(format!("seed {s}, N = {n}: {detail}")),
            Err(e) => return Err(e),
        }
    }
    let median_w2: Vec<f64> = per_n.iter().map(|v| median(v)).collect();
    let w2_decreasing = median_w2.windows(2).all(|w| w[1] < w[0]);
    let passed = bound_failures.is_empty() && w2_decreasing;
    Ok(FiniteChainSuiteReport { ns: cfg.ns.clone(), median_w2, w2_decreasing, bound_failures, runs, passed })
}

/// Equal-weight mixtures of shifted scenario laws.
pub fn mixture_suite(instances: usize, seed: u64) -> Result<Vec<MixtureReport>> {
    let fwd = LipschitzForward { map: &reference_forward, lipschitz: reference_forward_lipschitz(), norm_at_zero: 0.3 };
    (0..instances)
        .map(|i| {
            let mut rng = row_stream(seed, i as u64);
            let k = rng.random_range(2..=4);
            let scenarios: Vec<EmpiricalMeasure> = (0..k)
                .map(|j| {
                    let shift = j as f64 - 1.0;
                    EmpiricalMeasure::uniform((0..3 * 20).map(|_| shift + rng.random_range(-1.0..1.0)).collect(), 3)
                })
                .collect::<Result<_>>()?;
            mixture_bound_check(&scenarios, &fwd)
        })
        .collect()
}
