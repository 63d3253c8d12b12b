//! Pipeline stages. Each reads upstream artifacts from the output directory,
//! verifies their hashes, and writes its own outputs there.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use mine_core::aeode::{ensemble_predict, evaluate_aeode, train_aeode, AeodeEval, AeodeModel, AeodeTrainLog, Band, LossValues};
use mine_core::datasets::{generate_forward_dataset, generate_quantile_dataset, Dataset, ForwardSource, QuantileSource};
use mine_core::io::{fmt_f64, read_json, write_json, SCHEMA_VERSION};
use mine_core::mcmc::{run_chain, BoxPrior, Chain, ChainConfig, FairLiteHistoryModel, ForwardModel, HimmelModel, Observation, OdePosterior};
use mine_core::nn::ModelWeights;
use mine_core::odes::{Trajectory, FAIRLITE_THETA_NAMES, SPECIES};
use mine_core::quantile::{empirical_quantile_oracle, evaluate_quantile, train_quantile, Eta, QuantileInput, QuantileModel, QuantileReport, TrainLog};
use mine_core::rng::{row_stream, seeded, MineRng};
use mine_core::theory::{finite_chain_suite, mixture_suite, product_reduction_suite, shift_bound_suite, FiniteChainSuiteReport, ProductSuiteReport, ShiftSuiteReport};
use mine_core::measures::{MixtureReport, BOUND_TOL};
use mine_core::{MineError, Result};

use crate::config::{ModelId, PipelineConfig, ResolvedCalibration};

#[derive(Clone, Copy)]
enum Stage {
    Observation = 1,
    Chain = 2,
    ForwardData = 3,
    QuantileData = 4,
    Aeode = 5,
    Quantile = 6,
    Evaluate = 7,
    Ensemble = 8,
    Verify = 9,
}

/// Per-stage seed derived from the global seed.
fn stage_seed(global: u64, stage: Stage) -> u64 {
    row_stream(global, stage as u64).random()
}

struct Paths(PathBuf);

impl Paths {
    fn new(cfg: &PipelineConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir)?;
        Ok(Self(cfg.out_dir.clone()))
    }

    fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn chain(&self) -> (PathBuf, PathBuf) {
        (self.file("chain.csv"), self.file("chain.json"))
    }

    fn forward_data(&self) -> (PathBuf, PathBuf) {
        (self.file("forward.mine"), self.file("forward.json"))
    }

    fn quantile_data(&self) -> (PathBuf, PathBuf) {
        (self.file("quantile.mine"), self.file("quantile.json"))
    }
}

fn load_chain(p: &Paths) -> Result<(Chain, String)> {
    let (csv, side) = p.chain();
    Chain::load(&csv, &side)
}

fn forward_model(cfg: &PipelineConfig) -> Box<dyn ForwardModel> {
    match cfg.model {
        ModelId::Himmel => Box::new(HimmelModel { sim: cfg.himmel.simulator.clone() }),
        ModelId::Fairlite => Box::new(FairLiteHistoryModel { sim: cfg.fairlite.simulator.clone() }),
    }
}

fn theta_names(cfg: &PipelineConfig, d: usize) -> Vec<String> {
    match cfg.model {
        ModelId::Fairlite if d == FAIRLITE_THETA_NAMES.len() => FAIRLITE_THETA_NAMES.iter().map(|s| s.to_string()).collect(),
        _ => (1..=d).map(|i| format!("theta_{i}")).collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationReport {
    schema_version: u32,
    global_seed: u64,
    model: ModelId,
    calibration: ResolvedCalibration,
    observation: Observation,
    chain_sha256: String,
    post_burn_in_rows: usize,
    acceptance_rate: f64,
    stagnated: bool,
    posterior_mean: Vec<f64>,
    posterior_std: Vec<f64>,
    /// `|mean - θ*| <= 3 std` per component.
    within_three_std: Vec<bool>,
}

pub fn calibrate(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let cal = cfg.resolved_calibration()?;
    let model = forward_model(cfg);
    let mut noise = seeded(stage_seed(cfg.seed, Stage::Observation));
    let obs = Observation::synthesize(
        model.as_ref(),
        &cal.theta_true,
        cal.obs_rows.clone(),
        cal.obs_components.clone(),
        cal.noise_sigma.clone(),
        Some(&mut noise),
    )?;
    let prior = BoxPrior::positive(cal.prior_upper.clone());
    let target = OdePosterior { obs: &obs, model: model.as_ref(), prior: &prior };
    let c = &cfg.calibration;
    let mut chain_cfg = ChainConfig::with_diagonal_scales(
        c.n_samples,
        c.burn_in,
        cal.init_theta.clone(),
        &cal.proposal_scales,
        stage_seed(cfg.seed, Stage::Chain),
    );
    chain_cfg.adapt_interval = c.adapt_interval;
    chain_cfg.adapt_start = c.adapt_start;
    chain_cfg.dr_scale = c.dr_scale;
    chain_cfg.epsilon_reg = c.epsilon_reg;
    let chain = run_chain(&chain_cfg, &target).map_err(|e| match e {
        MineError::InvalidInput(m) => MineError::Config(m),
        e => e,
    })?;
    if chain.meta.stagnated() {
        warn!(
            "chain stagnated in {} window(s); first ends at step {:?}",
            chain.meta.stagnation_windows, chain.meta.first_stagnation_end
        );
    }
    let (csv, side) = p.chain();
    let hash = chain.save(&csv, &side, cfg.seed)?;
    let (mean, std) = chain.posterior_summary();
    let within = mean.iter().zip(&std).zip(&cal.theta_true).map(|((m, s), t)| (m - t).abs() <= 3.0 * s).collect();
    let report = CalibrationReport {
        schema_version: SCHEMA_VERSION,
        global_seed: cfg.seed,
        model: cfg.model,
        calibration: cal,
        observation: obs,
        chain_sha256: hash,
        post_burn_in_rows: chain.post_burn_in_len(),
        acceptance_rate: chain.meta.acceptance_rate(),
        stagnated: chain.meta.stagnated(),
        posterior_mean: mean,
        posterior_std: std,
        within_three_std: within,
    };
    write_json(&p.file("calibration_report.json"), &report)?;
    println!("acceptance rate {:.4}", report.acceptance_rate);
    for (i, name) in theta_names(cfg, chain.dim).iter().enumerate() {
        println!(
            "{name}: mean {:.6} std {:.6} (true {:.6})",
            report.posterior_mean[i], report.posterior_std[i], report.calibration.theta_true[i]
        );
    }
    Ok(())
}

fn fair_forward_x0(n_scenarios: usize, scenario: usize, e0: f64) -> Vec<f64> {
    let mut x = vec![0.0; n_scenarios];
    x[scenario] = 1.0;
    x.push(e0);
    x
}

/// Decode `one-hot ‖ E0` forward inputs.
fn fair_decode_x0(x0: &[f64]) -> Result<(usize, f64)> {
    let (onehot, e0) = x0.split_at(x0.len().saturating_sub(1));
    let scenario = onehot
        .iter()
        .position(|&v| v == 1.0)
        .ok_or_else(|| MineError::InvalidInput("forward input has no scenario flag".into()))?;
    Ok((scenario, e0[0]))
}

fn himmel_grid(cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let h = &cfg.himmel.simulator;
    let theta = cfg.resolved_calibration()?.theta_true;
    let theta: [f64; 3] = theta.try_into().map_err(|_| MineError::Config("Himmel needs three rates".into()))?;
    Ok(h.observe_from(&h.x0, &theta)?.times())
}

fn fair_grid(cfg: &PipelineConfig) -> Vec<f64> {
    let s = &cfg.fairlite.simulator;
    (0..=s.projection_steps()).map(|i| s.base_year + i as f64).collect()
}

/// The emulated simulator as `(x0, θ) -> trajectory`.
fn simulate_forward(cfg: &PipelineConfig, x0: &[f64], theta: &[f64]) -> Result<Trajectory> {
    match cfg.model {
        ModelId::Himmel => {
            let h = &cfg.himmel.simulator;
            let x0: &[f64; 6] = x0.try_into().map_err(|_| MineError::Shape("Himmel state has six species".into()))?;
            let theta: &[f64; 3] = theta.try_into().map_err(|_| MineError::Shape("Himmel has three rates".into()))?;
            h.observe_from(x0, theta)
        }
        ModelId::Fairlite => {
            let s = &cfg.fairlite.simulator;
            let (scenario, e0) = fair_decode_x0(x0)?;
            Trajectory::new(s.base_year, 1.0, 1, s.temperature_path(theta, scenario, e0)?)
        }
    }
}

pub fn generate(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let (chain, chain_hash) = load_chain(&p)?;
    let t = Instant::now();
    let simulator = |x0: &[f64], th: &[f64]| simulate_forward(cfg, x0, th);
    let forward = match cfg.model {
        ModelId::Himmel => {
            let prior = &cfg.himmel.x0_prior;
            let sampler = |r: &mut MineRng| prior.sample(r);
            let src = ForwardSource {
                name: "himmel",
                x0_names: SPECIES.iter().map(|s| format!("{s}0")).collect(),
                theta_names: theta_names(cfg, chain.dim),
                grid: himmel_grid(cfg)?,
                state_width: SPECIES.len(),
                x0_sampler: &sampler,
                simulator: &simulator,
            };
            generate_forward_dataset(&chain, &chain_hash, &src, cfg.dataset.forward_n, stage_seed(cfg.seed, Stage::ForwardData))?
        }
        ModelId::Fairlite => {
            let f = &cfg.fairlite;
            let k = f.simulator.scenarios.len();
            let (lo, hi) = f.e0_range;
            let sampler = |r: &mut MineRng| {
                let s = r.random_range(0..k);
                let e0 = if hi > lo { r.random_range(lo..hi) } else { lo };
                fair_forward_x0(k, s, e0)
            };
            let mut x0_names: Vec<String> = (0..k).map(|s| format!("scenario_{s}")).collect();
            x0_names.push("E0".into());
            let src = ForwardSource {
                name: "fairlite",
                x0_names,
                theta_names: theta_names(cfg, chain.dim),
                grid: fair_grid(cfg),
                state_width: 1,
                x0_sampler: &sampler,
                simulator: &simulator,
            };
            generate_forward_dataset(&chain, &chain_hash, &src, cfg.dataset.forward_n, stage_seed(cfg.seed, Stage::ForwardData))?
        }
    };
    let (rec, side) = p.forward_data();
    forward.save(&rec, &side, cfg.seed)?;
    println!("forward dataset: {} records ({} skipped)", forward.len(), forward.meta.skipped);

    if cfg.model == ModelId::Fairlite {
        let f = &cfg.fairlite;
        let sim = &f.simulator;
        let eta_sampler = |r: &mut MineRng| f.eta_prior.sample(r);
        let horizon = |th: &[f64], s: usize, e0: f64| sim.horizon_temperature(th, s, e0);
        let src = QuantileSource {
            name: "fairlite",
            n_scenarios: sim.scenarios.len(),
            horizon: sim.end_year,
            eta_sampler: &eta_sampler,
            simulator: &horizon,
        };
        let ds = generate_quantile_dataset(&chain, &chain_hash, &src, cfg.dataset.quantile_n, stage_seed(cfg.seed, Stage::QuantileData))?;
        let (rec, side) = p.quantile_data();
        ds.save(&rec, &side, cfg.seed)?;
        println!("quantile dataset: {} records ({} skipped, {} E0 redraws)", ds.len(), ds.meta.skipped, ds.meta.e0_redraws);
    }
    info!("generation took {:.2?}", t.elapsed());
    Ok(())
}

/// Trained weights plus the hashes of everything they were derived from.
#[derive(Serialize, Deserialize)]
struct ModelFile<L> {
    schema_version: u32,
    global_seed: u64,
    chain_sha256: String,
    dataset_sha256: String,
    weights: ModelWeights,
    train_log: L,
}

fn load_model_file<L: serde::de::DeserializeOwned>(path: &Path, chain_hash: &str, dataset_hash: &str) -> Result<ModelFile<L>> {
    let mf: ModelFile<L> = read_json(path)?;
    if mf.chain_sha256 != chain_hash || mf.dataset_sha256 != dataset_hash {
        return Err(MineError::Provenance(format!(
            "{} was trained on chain {} / dataset {}, found chain {chain_hash} / dataset {dataset_hash}",
            path.display(),
            mf.chain_sha256,
            mf.dataset_sha256
        )));
    }
    Ok(mf)
}

pub fn train_forward(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let (_, chain_hash) = load_chain(&p)?;
    let (rec, side) = p.forward_data();
    let (ds, ds_hash) = Dataset::load(&rec, &side, Some(&chain_hash))?;
    let mut acfg = cfg.aeode.clone();
    acfg.train.seed = stage_seed(cfg.seed, Stage::Aeode);
    let t = Instant::now();
    let (model, log) = train_aeode(&ds, &acfg)?;
    info!("AEODE training took {:.2?}", t.elapsed());
    println!(
        "best validation MSE {:.6e} at iteration {}; final training L_mass {:.6e}",
        log.best_val_mse, log.best_iter, log.final_train.mass
    );
    let mf = ModelFile {
        schema_version: SCHEMA_VERSION,
        global_seed: cfg.seed,
        chain_sha256: chain_hash,
        dataset_sha256: ds_hash,
        weights: model.to_weights(),
        train_log: log,
    };
    write_json(&p.file("forward_model.json"), &mf)
}

fn require_fairlite(cfg: &PipelineConfig, what: &str) -> Result<()> {
    if cfg.model != ModelId::Fairlite {
        return Err(MineError::Config(format!("{what} needs model \"fairlite\"")));
    }
    Ok(())
}

pub fn train_quantile_cmd(cfg: &PipelineConfig) -> Result<()> {
    require_fairlite(cfg, "train-quantile")?;
    let p = Paths::new(cfg)?;
    let (_, chain_hash) = load_chain(&p)?;
    let (rec, side) = p.quantile_data();
    let (ds, ds_hash) = Dataset::load(&rec, &side, Some(&chain_hash))?;
    let mut qcfg = cfg.quantile.clone();
    qcfg.seed = stage_seed(cfg.seed, Stage::Quantile);
    let t = Instant::now();
    let (model, log) = train_quantile(
        &ds.feature_table(),
        ds.records.feature_count,
        &ds.scalar_targets(),
        &ds.split.train,
        &ds.split.val,
        &qcfg,
    )?;
    info!("quantile training took {:.2?}", t.elapsed());
    println!("best validation pinball {:.6e} at epoch {}", log.best_val, log.best_epoch);
    let mf = ModelFile {
        schema_version: SCHEMA_VERSION,
        global_seed: cfg.seed,
        chain_sha256: chain_hash,
        dataset_sha256: ds_hash,
        weights: model.to_weights(),
        train_log: log,
    };
    write_json(&p.file("quantile_model.json"), &mf)
}

#[derive(Serialize, Deserialize)]
struct ForwardEvaluation {
    test_records: usize,
    eval: AeodeEval,
    final_train: LossValues,
    /// Test `L_mass` over its final training value.
    mass_ratio: f64,
    /// Largest `|row0 - x0|` over test records, when inputs start with the state.
    max_initial_error: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct EvaluationReport {
    schema_version: u32,
    global_seed: u64,
    model: ModelId,
    forward: ForwardEvaluation,
    quantile: Option<QuantileReport>,
}

fn evaluate_forward(p: &Paths, chain_hash: &str) -> Result<(ForwardEvaluation, AeodeModel)> {
    let (rec, side) = p.forward_data();
    let (ds, ds_hash) = Dataset::load(&rec, &side, Some(chain_hash))?;
    let mf: ModelFile<AeodeTrainLog> = load_model_file(&p.file("forward_model.json"), chain_hash, &ds_hash)?;
    let model = AeodeModel::from_weights(&mf.weights)?;
    let eval = evaluate_aeode(&model, &ds, &ds.split.test)?;
    let final_train = mf.train_log.final_train;
    let mass_ratio = if final_train.mass > 0.0 { eval.loss.mass / final_train.mass } else { f64::INFINITY };
    let max_initial_error = if model.x0_width == model.state_width {
        let mut worst = 0.0f64;
        for &i in &ds.split.test {
            let row0 = model.predict_rows(ds.x0(i), ds.theta(i), &[0])?.remove(0);
            let err = row0.iter().zip(ds.x0(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err);
        }
        Some(worst)
    } else {
        None
    };
    Ok((ForwardEvaluation { test_records: ds.split.test.len(), eval, final_train, mass_ratio, max_initial_error }, model))
}

fn evaluate_quantile_model(cfg: &PipelineConfig, p: &Paths, chain: &Chain, chain_hash: &str) -> Result<QuantileReport> {
    let (rec, side) = p.quantile_data();
    let (ds, ds_hash) = Dataset::load(&rec, &side, Some(chain_hash))?;
    let mf: ModelFile<TrainLog> = load_model_file(&p.file("quantile_model.json"), chain_hash, &ds_hash)?;
    let model = QuantileModel::from_weights(&mf.weights)?;
    let sim = &cfg.fairlite.simulator;
    let k = sim.scenarios.len();
    let horizon = |th: &[f64], s: usize, e0: f64| sim.horizon_temperature(th, s, e0);
    let seed = stage_seed(cfg.seed, Stage::Evaluate);
    let mut inputs = Vec::new();
    let mut draws = Vec::new();
    for (j, &i) in ds.split.test.iter().take(cfg.evaluate.quantile_inputs).enumerate() {
        let f = ds.features(i);
        let scenario = f[..k].iter().position(|&v| v == 1.0).ok_or_else(|| MineError::Shape("record has no scenario flag".into()))?;
        let eta = Eta { flag: f[k] as u8, location: f[k + 1], scale: f[k + 2] };
        let input = QuantileInput { scenario, n_scenarios: k, eta };
        let mut rng = row_stream(seed, j as u64);
        let oracle = empirical_quantile_oracle(&input, chain, cfg.evaluate.oracle_draws, &horizon, &mut rng)?;
        inputs.push(f.to_vec());
        draws.push(oracle.draws);
    }
    evaluate_quantile(&model, &inputs, &draws)
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let (chain, chain_hash) = load_chain(&p)?;
    let (forward, _) = evaluate_forward(&p, &chain_hash)?;
    let quantile = match cfg.model {
        ModelId::Fairlite => Some(evaluate_quantile_model(cfg, &p, &chain, &chain_hash)?),
        ModelId::Himmel => None,
    };
    let m = &forward.eval.metrics;
    println!("forward test: mse {:.6e} rmse {:.6e} mae {:.6e} mbe {:.6e}", m.mse, m.rmse, m.mae, m.mbe);
    println!(
        "forward test L_mass {:.6e} ({:.3}x final training value)",
        forward.eval.loss.mass, forward.mass_ratio
    );
    if let Some(q) = &quantile {
        println!(
            "quantile test: coverage {:.4}, interval size model {:.4} vs empirical {:.4}",
            q.mean_coverage, q.mean_interval_size_model, q.mean_interval_size_empirical
        );
    }
    let report = EvaluationReport { schema_version: SCHEMA_VERSION, global_seed: cfg.seed, model: cfg.model, forward, quantile };
    write_json(&p.file("evaluation.json"), &report)
}

#[derive(Serialize, Deserialize)]
struct EnsembleReport {
    schema_version: u32,
    global_seed: u64,
    n_draws: usize,
    x0: Vec<f64>,
    state_names: Vec<String>,
    /// Largest per-time deviation between emulator and simulator bands.
    max_abs_dev_q05: f64,
    max_abs_dev_q95: f64,
    /// Emulator RMSE on the paired draws.
    paired_rmse: f64,
    within_three_rmse: bool,
}

fn state_names(cfg: &PipelineConfig) -> Vec<String> {
    match cfg.model {
        ModelId::Himmel => SPECIES.iter().map(|s| s.to_string()).collect(),
        ModelId::Fairlite => vec!["T".into()],
    }
}

fn default_x0(cfg: &PipelineConfig) -> Vec<f64> {
    match cfg.model {
        ModelId::Himmel => cfg.himmel.simulator.x0.to_vec(),
        ModelId::Fairlite => {
            let k = cfg.fairlite.simulator.scenarios.len();
            fair_forward_x0(k, k / 2, 9.0)
        }
    }
}

fn band_csvs(p: &Paths, prefix: &str, band: &Band, names: &[String]) -> Result<()> {
    for (c, name) in names.iter().enumerate() {
        fs::write(p.file(&format!("{prefix}_{name}.csv")), band.to_csv(c))?;
    }
    Ok(())
}

pub fn ensemble(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let (chain, chain_hash) = load_chain(&p)?;
    let (rec, side) = p.forward_data();
    let (_, ds_hash) = Dataset::load(&rec, &side, Some(&chain_hash))?;
    let mf: ModelFile<AeodeTrainLog> = load_model_file(&p.file("forward_model.json"), &chain_hash, &ds_hash)?;
    let model = AeodeModel::from_weights(&mf.weights)?;
    let x0 = cfg.ensemble.x0.clone().unwrap_or_else(|| default_x0(cfg));
    if x0.len() != model.x0_width {
        return Err(MineError::Config(format!("ensemble.x0 needs {} entries", model.x0_width)));
    }
    let mut rng = seeded(stage_seed(cfg.seed, Stage::Ensemble));
    let t = Instant::now();
    let ens = ensemble_predict(&model, &x0, &chain, cfg.ensemble.n_draws, &mut rng)?;
    let t_emu = t.elapsed();
    let t = Instant::now();
    let sims: Vec<Trajectory> = ens.thetas.iter().map(|th| simulate_forward(cfg, &x0, th)).collect::<Result<_>>()?;
    let t_sim = t.elapsed();
    info!("ensemble: emulator {t_emu:.2?}, simulator {t_sim:.2?}");
    let sim_band = Band::from_trajectories(&sims)?;

    let names = state_names(cfg);
    let mut csv = format!("draw,t,{}\n", names.join(","));
    for (k, traj) in ens.trajectories.iter().enumerate() {
        for r in 0..traj.rows() {
            let vals: Vec<String> = traj.row(r).iter().map(|v| fmt_f64(*v)).collect();
            csv.push_str(&format!("{k},{},{}\n", fmt_f64(traj.time(r)), vals.join(",")));
        }
    }
    fs::write(p.file("ensemble_trajectories.csv"), csv)?;
    band_csvs(&p, "ensemble_band", &ens.band, &names)?;
    band_csvs(&p, "simulator_band", &sim_band, &names)?;

    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
    let (mut se, mut n) = (0.0, 0usize);
    for (e, s) in ens.trajectories.iter().zip(&sims) {
        se += e.states.iter().zip(&s.states).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += e.states.len();
    }
    let paired_rmse = (se / n as f64).sqrt();
    let max_abs_dev_q05 = dev(&ens.band.q05, &sim_band.q05);
    let max_abs_dev_q95 = dev(&ens.band.q95, &sim_band.q95);
    let report = EnsembleReport {
        schema_version: SCHEMA_VERSION,
        global_seed: cfg.seed,
        n_draws: cfg.ensemble.n_draws,
        x0,
        state_names: names,
        max_abs_dev_q05,
        max_abs_dev_q95,
        paired_rmse,
        within_three_rmse: max_abs_dev_q05.max(max_abs_dev_q95) <= 3.0 * paired_rmse,
    };
    println!(
        "band deviation q05 {:.4e}, q95 {:.4e}; paired RMSE {:.4e}",
        report.max_abs_dev_q05, report.max_abs_dev_q95, report.paired_rmse
    );
    write_json(&p.file("ensemble.json"), &report)
}

#[derive(Serialize, Deserialize)]
struct BoundsReport {
    schema_version: u32,
    global_seed: u64,
    tolerance: f64,
    shift: ShiftSuiteReport,
    product: ProductSuiteReport,
    finite_chain: FiniteChainSuiteReport,
    mixture: Vec<MixtureReport>,
    passed: bool,
}

pub fn verify_bounds(cfg: &PipelineConfig) -> Result<()> {
    let p = Paths::new(cfg)?;
    let v = &cfg.verify;
    let seed = stage_seed(cfg.seed, Stage::Verify);
    let shift = shift_bound_suite(v.shift_instances, seed)?;
    let product = product_reduction_suite(v.product_instances, seed.wrapping_add(1), BOUND_TOL)?;
    let finite_chain = finite_chain_suite(&v.finite_chain, seed.wrapping_add(2))?;
    let mixture = mixture_suite(v.mixture_instances, seed.wrapping_add(3))?;
    let passed = shift.passed && product.passed && finite_chain.passed && mixture.iter().all(|m| m.passed);
    if let Some(run) = finite_chain.runs.first() {
        fs::write(p.file("finite_chain.csv"), run.to_csv())?;
    }
    println!("shift bound: {} instances, min slack {:.3e}, {} violations", shift.instances, shift.min_slack, shift.violations);
    println!("product reduction: max |difference| {:.3e}", product.max_abs_diff);
    println!("finite chain: median W2 {:?}, {} bound failures", finite_chain.median_w2, finite_chain.bound_failures.len());
    println!("mixture: {}/{} passed", mixture.iter().filter(|m| m.passed).count(), mixture.len());
    let report = BoundsReport {
        schema_version: SCHEMA_VERSION,
        global_seed: cfg.seed,
        tolerance: BOUND_TOL,
        shift,
        product,
        finite_chain,
        mixture,
        passed,
    };
    write_json(&p.file("bounds_report.json"), &report)?;
    if passed {
        Ok(())
    } else {
        Err(MineError::TheoremCheck { n: 0, detail: "theory suite failed; see bounds_report.json".into() })
    }
}
