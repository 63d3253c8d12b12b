//! Delayed Rejection Adaptive Metropolis (DRAM).
//!
//! Two-stage delayed rejection on top of an adaptive Gaussian random walk.
//! The proposal covariance is re-estimated from the whole chain history at a
//! fixed interval (greedy adaptation).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::io::{fmt_f64, parse_f64, sha256_hex, SCHEMA_VERSION};
use crate::odes::{FairLiteParams, FairLiteSimulator, HimmelSimulator, Trajectory};
use crate::rng::{seeded, MineRng};

/// Forward simulator whose output rows are indexed by an [`Observation`].
pub trait ForwardModel: Sync {
    fn simulate(&self, theta: &[f64]) -> Result<Trajectory>;
}

/// Himmel kinetics restricted to the observation grid.
#[derive(Clone, Debug, Default)]
pub struct HimmelModel {
    pub sim: HimmelSimulator,
}

impl ForwardModel for HimmelModel {
    fn simulate(&self, theta: &[f64]) -> Result<Trajectory> {
        let theta: &[f64; 3] = theta
            .try_into()
            .map_err(|_| MineError::shape(format!("Himmel expects 3 rates, got {}", theta.len())))?;
        self.sim.observe_from(&self.sim.x0, theta)
    }
}

/// FaIR-lite historical spin-up (all five state columns, annual rows).
#[derive(Clone, Debug, Default)]
pub struct FairLiteHistoryModel {
    pub sim: FairLiteSimulator,
}

impl ForwardModel for FairLiteHistoryModel {
    fn simulate(&self, theta: &[f64]) -> Result<Trajectory> {
        self.sim.historical(&FairLiteParams::from_theta(theta)?)
    }
}

/// Noisy observations of selected components at selected trajectory rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rows: Vec<usize>,
    pub components: Vec<usize>,
    /// Row-major `rows.len() x components.len()`.
    pub values: Vec<f64>,
    /// One standard deviation per observed component.
    pub noise_sigma: Vec<f64>,
}

impl Observation {
    pub fn new(rows: Vec<usize>, components: Vec<usize>, values: Vec<f64>, noise_sigma: Vec<f64>) -> Result<Self> {
        if rows.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MineError::InvalidInput("observation rows must be strictly increasing".into()));
        }
        if noise_sigma.len() != components.len() || noise_sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(MineError::InvalidInput("need one positive noise sigma per component".into()));
        }
        if values.len() != rows.len() * components.len() {
            return Err(MineError::shape(format!(
                "{} values for {} rows x {} components",
                values.len(),
                rows.len(),
                components.len()
            )));
        }
        Ok(Self { rows, components, values, noise_sigma })
    }

    /// Simulate at `theta` and add i.i.d. Gaussian noise (or none when `rng` is absent).
    pub fn synthesize<M: ForwardModel + ?Sized>(
        model: &M,
        theta: &[f64],
        rows: Vec<usize>,
        components: Vec<usize>,
        noise_sigma: Vec<f64>,
        rng: Option<&mut MineRng>,
    ) -> Result<Self> {
        let traj = model.simulate(theta)?;
        let mut values = Vec::with_capacity(rows.len() * components.len());
        for &r in &rows {
            if r >= traj.rows() {
                return Err(MineError::shape(format!("observation row {r} beyond {}", traj.rows())));
            }
            for &c in &components {
                values.push(traj.row(r)[c]);
            }
        }
        if let Some(rng) = rng {
            let k = components.len();
            for (i, v) in values.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise_sigma.get(i % k).copied().unwrap_or(0.0) * z;
            }
        }
        Self::new(rows, components, values, noise_sigma)
    }
}

/// Independent uniform box prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPrior {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxPrior {
    pub fn positive(upper: Vec<f64>) -> Self {
        Self { lower: vec![0.0; upper.len()], upper }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalStatus {
    Ok,
    OutsidePrior,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorEval {
    pub log_post: f64,
    pub status: EvalStatus,
}

impl PosteriorEval {
    pub fn ok(log_post: f64) -> Self {
        Self { log_post, status: EvalStatus::Ok }
    }

    pub fn rejected(status: EvalStatus) -> Self {
        Self { log_post: f64::NEG_INFINITY, status }
    }
}

/// Unnormalized log posterior: Gaussian likelihood plus flat box prior.
pub fn log_posterior<M: ForwardModel + ?Sized>(
    theta: &[f64],
    obs: &Observation,
    model: &M,
    prior: &BoxPrior,
) -> PosteriorEval {
    if !prior.contains(theta) {
        return PosteriorEval::rejected(EvalStatus::OutsidePrior);
    }
    let traj = match model.simulate(theta) {
        Ok(t) => t,
        Err(_) => return PosteriorEval::rejected(EvalStatus::Diverged),
    };
    let k = obs.components.len();
    let mut ll = 0.0;
    for (i, &r) in obs.rows.iter().enumerate() {
        if r >= traj.rows() {
            return PosteriorEval::rejected(EvalStatus::Diverged);
        }
        let row = traj.row(r);
        for (j, &c) in obs.components.iter().enumerate() {
            let resid = obs.values[i * k + j] - row[c];
            let s = obs.noise_sigma[j];
            ll -= resid * resid / (2.0 * s * s);
        }
    }
    if ll.is_finite() {
        PosteriorEval::ok(ll)
    } else {
        PosteriorEval::rejected(EvalStatus::Diverged)
    }
}

/// Anything the sampler can target.
pub trait Target {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> PosteriorEval;
}

pub struct OdePosterior<'a, M: ForwardModel + ?Sized> {
    pub obs: &'a Observation,
    pub model: &'a M,
    pub prior: &'a BoxPrior,
}

impl<M: ForwardModel + ?Sized> Target for OdePosterior<'_, M> {
    fn dim(&self) -> usize {
        self.prior.lower.len()
    }

    fn evaluate(&self, theta: &[f64]) -> PosteriorEval {
        log_posterior(theta, self.obs, self.model, self.prior)
    }
}

/// Target defined by a log-density closure; non-finite values count as outside support.
pub struct FnTarget<F> {
    pub dim: usize,
    pub log_density: F,
}

impl<F: Fn(&[f64]) -> f64> Target for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> PosteriorEval {
        let v = (self.log_density)(theta);
        if v.is_finite() {
            PosteriorEval::ok(v)
        } else {
            PosteriorEval::rejected(EvalStatus::OutsidePrior)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub init_theta: Vec<f64>,
    /// Row-major `d x d`.
    pub init_cov: Vec<f64>,
    #[serde(default = "default_adapt_interval")]
    pub adapt_interval: usize,
    #[serde(default = "default_adapt_start")]
    pub adapt_start: usize,
    #[serde(default = "default_dr_scale")]
    pub dr_scale: f64,
    #[serde(default = "default_epsilon_reg")]
    pub epsilon_reg: f64,
    pub seed: u64,
}

fn default_adapt_interval() -> usize {
    100
}
fn default_adapt_start() -> usize {
    200
}
fn default_dr_scale() -> f64 {
    0.3
}
fn default_epsilon_reg() -> f64 {
    1e-10
}

impl ChainConfig {
    pub fn new(n_samples: usize, burn_in: usize, init_theta: Vec<f64>, init_cov: Vec<f64>, seed: u64) -> Self {
        Self {
            n_samples,
            burn_in,
            init_theta,
            init_cov,
            adapt_interval: default_adapt_interval(),
            adapt_start: default_adapt_start(),
            dr_scale: default_dr_scale(),
            epsilon_reg: default_epsilon_reg(),
            seed,
        }
    }

    /// Diagonal initial covariance from per-parameter proposal scales.
    pub fn with_diagonal_scales(n_samples: usize, burn_in: usize, init_theta: Vec<f64>, scales: &[f64], seed: u64) -> Self {
        let d = scales.len();
        let mut cov = vec![0.0; d * d];
        for (i, s) in scales.iter().enumerate() {
            cov[i * d + i] = s * s;
        }
        Self::new(n_samples, burn_in, init_theta, cov, seed)
    }

    pub fn dim(&self) -> usize {
        self.init_theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(MineError::Config("init_theta is empty".into()));
        }
        if self.burn_in >= self.n_samples {
            return Err(MineError::Config(format!(
                "burn_in {} must be smaller than n_samples {}",
                self.burn_in, self.n_samples
            )));
        }
        if self.init_cov.len() != d * d {
            return Err(MineError::Config(format!("init_cov must have {} entries", d * d)));
        }
        let cov = DMatrix::from_row_slice(d, d, &self.init_cov);
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(MineError::Config("init_cov is not symmetric".into()));
        }
        if cov.cholesky().is_none() {
            return Err(MineError::Config("init_cov is not positive definite".into()));
        }
        if !(self.dr_scale > 0.0 && self.dr_scale < 1.0) {
            return Err(MineError::Config("dr_scale must lie in (0, 1)".into()));
        }
        if !(self.epsilon_reg > 0.0) {
            return Err(MineError::Config("epsilon_reg must be positive".into()));
        }
        if self.adapt_interval == 0 {
            return Err(MineError::Config("adapt_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian random-walk proposal held as a lower Cholesky factor.
#[derive(Clone, Debug)]
pub struct Proposal {
    chol: DMatrix<f64>,
    pub used_fallback: bool,
}

impl Proposal {
    /// Falls back to `epsilon_reg * I` when `cov` has no Cholesky factor.
    pub fn from_cov(cov: &DMatrix<f64>, epsilon_reg: f64) -> Self {
        match cov.clone().cholesky() {
            Some(c) if c.l().iter().all(|v| v.is_finite()) => Self { chol: c.l(), used_fallback: false },
            _ => {
                let d = cov.nrows();
                Self { chol: DMatrix::identity(d, d) * epsilon_reg.sqrt(), used_fallback: true }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    fn draw(&self, center: &[f64], scale: f64, rng: &mut MineRng) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.chol * z;
        center.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect()
    }

    /// Stage-one log density of moving from `from` to `to`, without the normalizer.
    pub fn log_q(&self, from: &[f64], to: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), to.iter().zip(from).map(|(t, f)| t - f));
        match self.chol.solve_lower_triangular(&diff) {
            Some(y) => -0.5 * y.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }
}

/// `log min(1, pi(to)/pi(from))`.
pub fn log_alpha1(lp_from: f64, lp_to: f64) -> f64 {
    if lp_to == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (lp_to - lp_from).min(0.0)
}

/// Log acceptance probability of the second delayed-rejection stage.
///
/// `x` is the current point, `y1` the rejected first-stage proposal and `y2`
/// the second-stage proposal; `log_q_x_y1` and `log_q_y2_y1` are stage-one
/// proposal log densities.
pub fn log_alpha2(lp_x: f64, lp_y1: f64, lp_y2: f64, log_q_x_y1: f64, log_q_y2_y1: f64) -> f64 {
    if lp_y2 == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let a1_y2 = log_alpha1(lp_y2, lp_y1).exp();
    if a1_y2 >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let a1_x = log_alpha1(lp_x, lp_y1).exp();
    if a1_x >= 1.0 {
        // Stage one cannot have rejected; nothing to correct for.
        return f64::NEG_INFINITY;
    }
    let num = lp_y2 + log_q_y2_y1 + (-a1_y2).ln_1p();
    let den = lp_x + log_q_x_y1 + (-a1_x).ln_1p();
    (num - den).min(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub log_post: f64,
}

/// Outcome of one DRAM transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: ChainState,
    /// 0 = stayed, 1 = stage-one accept, 2 = stage-two accept.
    pub stage: u8,
    pub rejected_statuses: [Option<EvalStatus>; 2],
}

pub fn dram_step<T: Target + ?Sized>(
    target: &T,
    current: &ChainState,
    proposal: &Proposal,
    dr_scale: f64,
    rng: &mut MineRng,
) -> StepOutcome {
    let y1 = proposal.draw(&current.theta, 1.0, rng);
    let e1 = target.evaluate(&y1);
    let la1 = log_alpha1(current.log_post, e1.log_post);
    let u: f64 = rng.random();
    if u.ln() < la1 {
        return StepOutcome {
            next: ChainState { theta: y1, log_post: e1.log_post },
            stage: 1,
            rejected_statuses: [None, None],
        };
    }

    let y2 = proposal.draw(&current.theta, dr_scale, rng);
    let e2 = target.evaluate(&y2);
    let la2 = log_alpha2(
        current.log_post,
        e1.log_post,
        e2.log_post,
        proposal.log_q(&current.theta, &y1),
        proposal.log_q(&y2, &y1),
    );
    let u: f64 = rng.random();
    let statuses = [Some(e1.status), Some(e2.status)];
    if u.ln() < la2 {
        StepOutcome {
            next: ChainState { theta: y2, log_post: e2.log_post },
            stage: 2,
            rejected_statuses: [statuses[0], None],
        }
    } else {
        StepOutcome { next: current.clone(), stage: 0, rejected_statuses: statuses }
    }
}

/// Adaptive Metropolis covariance: `s_d * (Cov(history) + eps * I)` with `s_d = 2.4^2 / d`.
pub fn adapt_covariance(history: &[f64], d: usize, epsilon_reg: f64) -> Result<DMatrix<f64>> {
    if d == 0 || history.len() % d != 0 || history.len() / d < 2 {
        return Err(MineError::InvalidInput("covariance adaptation needs at least two rows".into()));
    }
    let n = history.len() / d;
    let mut mean = vec![0.0; d];
    for row in history.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in history.chunks_exact(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let s_d = 2.4 * 2.4 / d as f64;
    Ok((cov + DMatrix::identity(d, d) * epsilon_reg) * s_d)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub accepted_stage1: usize,
    pub accepted_stage2: usize,
    pub rejected: usize,
    pub outside_prior: usize,
    pub divergences: usize,
    pub cholesky_fallbacks: usize,
    pub adaptations: usize,
    /// Number of 1000-step windows with more than 99% rejections.
    pub stagnation_windows: usize,
    pub first_stagnation_end: Option<usize>,
}

impl ChainMeta {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.accepted_stage1 + self.accepted_stage2 + self.rejected;
        if n == 0 {
            0.0
        } else {
            (self.accepted_stage1 + self.accepted_stage2) as f64 / n as f64
        }
    }

    pub fn stagnated(&self) -> bool {
        self.stagnation_windows > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub dim: usize,
    /// Row-major `n x dim`, burn-in included.
    pub samples: Vec<f64>,
    pub log_posts: Vec<f64>,
    pub accept_stage: Vec<u8>,
    pub burn_in: usize,
    pub config: ChainConfig,
    pub meta: ChainMeta,
}

const STAGNATION_WINDOW: usize = 1000;

impl Chain {
    pub fn len(&self) -> usize {
        self.log_posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_posts.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn post_burn_in_len(&self) -> usize {
        self.len().saturating_sub(self.burn_in)
    }

    /// Row `i` of the post-burn-in segment.
    pub fn posterior_row(&self, i: usize) -> &[f64] {
        self.row(self.burn_in + i)
    }

    pub fn posterior_samples(&self) -> &[f64] {
        &self.samples[self.burn_in * self.dim..]
    }

    /// Componentwise mean and standard deviation over the post-burn-in rows.
    pub fn posterior_summary(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let n = self.post_burn_in_len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in self.posterior_samples().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in self.posterior_samples().chunks_exact(d) {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2) / (n - 1.0).max(1.0);
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }

    /// A chain that repeats one parameter vector; handy for degenerate-posterior runs.
    pub fn point_mass(theta: &[f64], n: usize) -> Self {
        let d = theta.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        Chain {
            dim: d,
            samples: theta.repeat(n),
            log_posts: vec![0.0; n],
            accept_stage: vec![0; n],
            burn_in: 0,
            config: ChainConfig::new(n.max(1), 0, theta.to_vec(), cov, 0),
            meta: ChainMeta::default(),
        }
    }

    /// CSV `theta_1..theta_d,log_post,accept_stage`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<String> = (1..=self.dim).map(|i| format!("theta_{i}")).collect();
        out.push_str(&names.join(","));
        out.push_str(",log_post,accept_stage\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(&fmt_f64(self.log_posts[i]));
            out.push(',');
            out.push_str(&self.accept_stage[i].to_string());
            out.push('\n');
        }
        out
    }

    /// Writes the CSV and its JSON sidecar; returns the CSV content hash.
    pub fn save(&self, csv_path: &Path, sidecar_path: &Path, global_seed: u64) -> Result<String> {
        let csv = self.to_csv();
        let hash = sha256_hex(csv.as_bytes());
        fs::File::create(csv_path)?.write_all(csv.as_bytes())?;
        let sidecar = ChainSidecar {
            schema_version: SCHEMA_VERSION,
            global_seed,
            seed: self.config.seed,
            dim: self.dim,
            n_samples: self.len(),
            burn_in: self.burn_in,
            config: self.config.clone(),
            meta: self.meta.clone(),
            csv_sha256: hash.clone(),
        };
        crate::io::write_json(sidecar_path, &sidecar)?;
        Ok(hash)
    }

    /// Loads a chain and refuses it if the CSV does not match the sidecar hash.
    pub fn load(csv_path: &Path, sidecar_path: &Path) -> Result<(Self, String)> {
        let sidecar: ChainSidecar = crate::io::read_json(sidecar_path)?;
        let text = fs::read_to_string(csv_path)?;
        let hash = sha256_hex(text.as_bytes());
        if hash != sidecar.csv_sha256 {
            return Err(MineError::Provenance(format!(
                "chain file {} hash {hash} does not match sidecar {}",
                csv_path.display(),
                sidecar.csv_sha256
            )));
        }
        let chain = Self::parse_csv(&text, sidecar.dim, sidecar.burn_in, sidecar.config, sidecar.meta)?;
        Ok((chain, hash))
    }

    pub fn parse_csv(text: &str, dim: usize, burn_in: usize, config: ChainConfig, meta: ChainMeta) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MineError::InvalidInput("empty chain CSV".into()))?;
        if header.split(',').count() != dim + 2 {
            return Err(MineError::shape("chain CSV header does not match dimension"));
        }
        let mut samples = Vec::new();
        let mut log_posts = Vec::new();
        let mut accept_stage = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(MineError::shape("ragged chain CSV row"));
            }
            for f in &fields[..dim] {
                samples.push(parse_f64(f)?);
            }
            log_posts.push(parse_f64(fields[dim])?);
            accept_stage.push(
                fields[dim + 1]
                    .trim()
                    .parse::<u8>()
                    .map_err(|e| MineError::InvalidInput(format!("bad accept_stage: {e}")))?,
            );
        }
        Ok(Chain { dim, samples, log_posts, accept_stage, burn_in, config, meta })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub schema_version: u32,
    pub global_seed: u64,
    pub seed: u64,
    pub dim: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub config: ChainConfig,
    pub meta: ChainMeta,
    pub csv_sha256: String,
}

/// Run a DRAM chain of `config.n_samples` transitions from `config.init_theta`.
pub fn run_chain<T: Target + ?Sized>(config: &ChainConfig, target: &T) -> Result<Chain> {
    config.validate()?;
    let d = config.dim();
    if target.dim() != d {
        return Err(MineError::Config(format!(
            "target has dimension {}, init_theta has {d}",
            target.dim()
        )));
    }
    let init = target.evaluate(&config.init_theta);
    if !init.log_post.is_finite() {
        return Err(MineError::InvalidInput(format!(
            "initial point has zero posterior density ({:?})",
            init.status
        )));
    }

    let mut rng = seeded(config.seed);
    let mut meta = ChainMeta::default();
    let mut proposal = Proposal::from_cov(&DMatrix::from_row_slice(d, d, &config.init_cov), config.epsilon_reg);
    let mut state = ChainState { theta: config.init_theta.clone(), log_post: init.log_post };

    let n = config.n_samples;
    let mut samples = Vec::with_capacity(n * d);
    let mut log_posts = Vec::with_capacity(n);
    let mut accept_stage = Vec::with_capacity(n);
    let mut window_rejections = 0usize;

    for i in 0..n {
        let out = dram_step(target, &state, &proposal, config.dr_scale, &mut rng);
        match out.stage {
            1 => meta.accepted_stage1 += 1,
            2 => meta.accepted_stage2 += 1,
            _ => meta.rejected += 1,
        }
        for status in out.rejected_statuses.iter().flatten() {
            match status {
                EvalStatus::OutsidePrior => meta.outside_prior += 1,
                EvalStatus::Diverged => meta.divergences += 1,
                EvalStatus::Ok => {}
            }
        }
        state = out.next;
        samples.extend_from_slice(&state.theta);
        log_posts.push(state.log_post);
        accept_stage.push(out.stage);

        if out.stage == 0 {
            window_rejections += 1;
        }
        if i >= STAGNATION_WINDOW && accept_stage[i - STAGNATION_WINDOW] == 0 {
            window_rejections -= 1;
        }
        if i + 1 >= STAGNATION_WINDOW && window_rejections * 100 > STAGNATION_WINDOW * 99 {
            meta.stagnation_windows += 1;
            meta.first_stagnation_end.get_or_insert(i);
        }

        let done = i + 1;
        if done >= config.adapt_start && done % config.adapt_interval == 0 {
            let cov = adapt_covariance(&samples, d, config.epsilon_reg)?;
            proposal = Proposal::from_cov(&cov, config.epsilon_reg);
            meta.adaptations += 1;
            if proposal.used_fallback {
                meta.cholesky_fallbacks += 1;
            }
        }
    }
    if meta.stagnated() {
        log::warn!(
            "chain stagnated: {} windows with >99% rejections (first ending at step {:?})",
            meta.stagnation_windows,
            meta.first_stagnation_end
        );
    }

    Ok(Chain { dim: d, samples, log_posts, accept_stage, burn_in: config.burn_in, config: config.clone(), meta })
}
