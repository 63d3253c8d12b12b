//! Pipeline configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mine_core::aeode::AeodeConfig;
use mine_core::datasets::{EtaPrior, HimmelX0Prior};
use mine_core::odes::{default_fairlite_theta, FairLiteSimulator, HimmelSimulator};
use mine_core::quantile::QuantileConfig;
use mine_core::theory::FiniteChainSuiteConfig;
use mine_core::{MineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Himmel,
    Fairlite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelId,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub himmel: HimmelSettings,
    #[serde(default)]
    pub fairlite: FairLiteSettings,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub dataset: DatasetSettings,
    #[serde(default)]
    pub quantile: QuantileConfig,
    #[serde(default)]
    pub aeode: AeodeConfig,
    #[serde(default)]
    pub evaluate: EvaluateSettings,
    #[serde(default)]
    pub ensemble: EnsembleSettings,
    #[serde(default)]
    pub verify: VerifySettings,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HimmelSettings {
    pub simulator: HimmelSimulator,
    pub x0_prior: HimmelX0Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairLiteSettings {
    pub simulator: FairLiteSimulator,
    pub eta_prior: EtaPrior,
    /// Base-year emission range for forward-emulator inputs.
    pub e0_range: (f64, f64),
}

impl Default for FairLiteSettings {
    fn default() -> Self {
        Self { simulator: FairLiteSimulator::default(), eta_prior: EtaPrior::default(), e0_range: (6.0, 12.0) }
    }
}

/// Synthetic-data calibration. Unset vectors take model-specific defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub theta_true: Option<Vec<f64>>,
    pub obs_rows: Option<Vec<usize>>,
    pub obs_components: Option<Vec<usize>>,
    pub noise_sigma: Option<Vec<f64>>,
    pub prior_upper: Option<Vec<f64>>,
    pub init_theta: Option<Vec<f64>>,
    pub proposal_scales: Option<Vec<f64>>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub adapt_interval: usize,
    pub adapt_start: usize,
    pub dr_scale: f64,
    pub epsilon_reg: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            theta_true: None,
            obs_rows: None,
            obs_components: None,
            noise_sigma: None,
            prior_upper: None,
            init_theta: None,
            proposal_scales: None,
            n_samples: 6000,
            burn_in: 1000,
            adapt_interval: 100,
            adapt_start: 200,
            dr_scale: 0.3,
            epsilon_reg: 1e-10,
        }
    }
}

/// Calibration settings with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCalibration {
    pub theta_true: Vec<f64>,
    pub obs_rows: Vec<usize>,
    pub obs_components: Vec<usize>,
    pub noise_sigma: Vec<f64>,
    pub prior_upper: Vec<f64>,
    pub init_theta: Vec<f64>,
    pub proposal_scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub forward_n: usize,
    pub quantile_n: usize,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self { forward_n: 3000, quantile_n: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    /// Test inputs compared against nested Monte Carlo quantiles.
    pub quantile_inputs: usize,
    pub oracle_draws: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self { quantile_inputs: 50, oracle_draws: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_draws: usize,
    /// Emulator initial input; defaults to the simulator's initial state
    /// (Himmel) or the middle scenario at 9 GtC/yr (FaIR-lite).
    pub x0: Option<Vec<f64>>,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self { n_draws: 400, x0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub shift_instances: usize,
    pub product_instances: usize,
    pub mixture_instances: usize,
    pub finite_chain: FiniteChainSuiteConfig,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { shift_instances: 100, product_instances: 50, mixture_instances: 5, finite_chain: FiniteChainSuiteConfig::default() }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| MineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.aeode.validate()?;
        self.resolved_calibration()?;
        if self.ensemble.n_draws < 2 {
            return Err(MineError::Config("ensemble.n_draws must be at least 2".into()));
        }
        Ok(())
    }

    pub fn resolved_calibration(&self) -> Result<ResolvedCalibration> {
        let c = &self.calibration;
        let (theta_true, rows, comps, sigma, upper, scales_frac, init_factor) = match self.model {
            ModelId::Himmel => {
                let rows: Vec<usize> = (1..self.himmel.simulator.obs_rows()).collect();
                (vec![1.2, 0.6, 0.3], rows, vec![0, 1, 2, 3, 4], vec![0.02; 5], vec![10.0; 3], 0.05, 0.8)
            }
            ModelId::Fairlite => {
                let rows: Vec<usize> = (1..=self.fairlite.simulator.hist_steps()).filter(|r| r % 5 == 0).collect();
                (
                    default_fairlite_theta().to_vec(),
                    rows,
                    vec![4],
                    vec![0.05],
                    vec![2.0, 3.0, 8.0, 3.0, 30.0, 3.0],
                    0.05,
                    1.0,
                )
            }
        };
        let theta_true = c.theta_true.clone().unwrap_or(theta_true);
        let d = theta_true.len();
        let init_theta = c.init_theta.clone().unwrap_or_else(|| theta_true.iter().map(|t| t * init_factor).collect());
        let proposal_scales =
            c.proposal_scales.clone().unwrap_or_else(|| theta_true.iter().map(|t| (t * scales_frac).abs().max(1e-3)).collect());
        let obs_components = c.obs_components.clone().unwrap_or(comps);
        let noise_sigma = c.noise_sigma.clone().unwrap_or(sigma);
        let prior_upper = c.prior_upper.clone().unwrap_or(upper);
        let r = ResolvedCalibration {
            obs_rows: c.obs_rows.clone().unwrap_or(rows),
            obs_components,
            noise_sigma,
            prior_upper,
            init_theta,
            proposal_scales,
            theta_true,
        };
        if r.init_theta.len() != d || r.proposal_scales.len() != d || r.prior_upper.len() != d {
            return Err(MineError::Config(format!("calibration vectors must all have length {d}")));
        }
        if r.noise_sigma.len() != r.obs_components.len() {
            return Err(MineError::Config("calibration.noise_sigma needs one entry per observed component".into()));
        }
        if c.burn_in >= c.n_samples {
            return Err(MineError::Config("calibration.burn_in must be below calibration.n_samples".into()));
        }
        Ok(r)
    }
}
