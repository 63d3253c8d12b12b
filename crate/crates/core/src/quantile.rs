//! Interval emulator: a small ReLU network predicting the 5% and 95%
//! conditional quantiles of a scalar output, trained with the pinball loss
//! and a non-crossing penalty.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::mcmc::Chain;
use crate::nn::{pinball, quantile_objective, Adam, Graph, Mlp, ModelWeights, ParamStore, Tensor, QUANTILE_LEVELS};
use crate::rng::{seeded, MineRng};

/// Maximum redraws of a nonpositive emission before giving up.
const MAX_E0_REDRAWS: u64 = 10_000;

/// Emission distribution descriptor `(flag, location, scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    /// 0: normal, 1: shifted lognormal.
    pub flag: u8,
    pub location: f64,
    pub scale: f64,
}

impl Eta {
    pub fn validate(&self) -> Result<()> {
        if self.flag > 1 {
            return Err(MineError::InvalidInput(format!("distribution flag {} is not 0 or 1", self.flag)));
        }
        if !(self.scale > 0.0) || !self.location.is_finite() || !self.scale.is_finite() {
            return Err(MineError::InvalidInput(format!("invalid emission law {self:?}")));
        }
        Ok(())
    }
}

/// Scenario plus emission law, encoded as one-hot ‖ (flag, location, scale).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileInput {
    pub scenario: usize,
    pub n_scenarios: usize,
    pub eta: Eta,
}

impl QuantileInput {
    pub fn feature_count(n_scenarios: usize) -> usize {
        n_scenarios + 3
    }

    pub fn features(&self) -> Result<Vec<f64>> {
        if self.scenario >= self.n_scenarios {
            return Err(MineError::InvalidInput(format!("scenario {} of {}", self.scenario, self.n_scenarios)));
        }
        self.eta.validate()?;
        let mut f = vec![0.0; self.n_scenarios];
        f[self.scenario] = 1.0;
        f.extend([self.eta.flag as f64, self.eta.location, self.eta.scale]);
        Ok(f)
    }
}

/// One draw of base-year emissions. Normal draws use `(location, scale)`
/// directly; lognormal draws are `location - exp(scale^2/2) + exp(scale Z)`,
/// which has mean `location`. Nonpositive values are redrawn; the redraw
/// count is returned.
pub fn sample_e0(eta: &Eta, rng: &mut MineRng) -> Result<(f64, u64)> {
    eta.validate()?;
    for redraws in 0..MAX_E0_REDRAWS {
        let z: f64 = rng.sample(StandardNormal);
        let x = if eta.flag == 0 {
            eta.location + eta.scale * z
        } else {
            eta.location - (0.5 * eta.scale * eta.scale).exp() + (eta.scale * z).exp()
        };
        if x > 0.0 {
            return Ok((x, redraws));
        }
    }
    Err(MineError::DataQuality(format!("emission law {eta:?} almost never yields a positive value")))
}

/// Linear interpolation between order statistics at `(n - 1) p`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical 5% and 95% quantiles.
pub fn empirical_interval(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_type7(&v, QUANTILE_LEVELS[0]), quantile_type7(&v, QUANTILE_LEVELS[1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDraws {
    pub draws: Vec<f64>,
    pub q05: f64,
    pub q95: f64,
    pub failures: usize,
}

/// Nested Monte Carlo over a generic sampler; failed draws are skipped and
/// more than 1% failures is an error.
pub fn oracle_from_sampler(m: usize, rng: &mut MineRng, sampler: &mut dyn FnMut(&mut MineRng) -> Result<f64>) -> Result<OracleDraws> {
    if m == 0 {
        return Err(MineError::Config("oracle needs at least one draw".into()));
    }
    let mut draws = Vec::with_capacity(m);
    let mut failures = 0;
    for _ in 0..m {
        match sampler(rng) {
            Ok(y) if y.is_finite() => draws.push(y),
            _ => failures += 1,
        }
    }
    if failures * 100 > m {
        return Err(MineError::DataQuality(format!("{failures} of {m} oracle draws failed")));
    }
    let (q05, q95) = empirical_interval(&draws);
    Ok(OracleDraws { draws, q05, q95, failures })
}

/// Posterior-predictive quantiles of the horizon output for one input:
/// `E0 ~ p(E0 | η)`, `θ` uniform over post-burn-in chain rows.
pub fn empirical_quantile_oracle(
    input: &QuantileInput,
    chain: &Chain,
    m: usize,
    simulator: &dyn Fn(&[f64], usize, f64) -> Result<f64>,
    rng: &mut MineRng,
) -> Result<OracleDraws> {
    if m < 1000 {
        return Err(MineError::Config(format!("oracle needs M >= 1000, got {m}")));
    }
    input.features()?;
    let rows = chain.post_burn_in_len();
    if rows == 0 {
        return Err(MineError::InvalidInput("chain has no post-burn-in rows".into()));
    }
    oracle_from_sampler(m, rng, &mut |rng| {
        let (e0, _) = sample_e0(&input.eta, rng)?;
        let theta = chain.posterior_row(rng.random_range(0..rows));
        simulator(theta, input.scenario, e0)
    })
}

/// Per-feature affine map of the training range onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    /// Fit on rows `idx` of a row-major `n x width` table.
    pub fn fit(data: &[f64], width: usize, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() || width == 0 {
            return Err(MineError::InvalidInput("cannot fit a scaler on no rows".into()));
        }
        let mut lo = vec![f64::INFINITY; width];
        let mut hi = vec![f64::NEG_INFINITY; width];
        for &i in idx {
            for j in 0..width {
                let v = data[i * width + j];
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> usize {
        self.lo.len()
    }

    /// Constant features map to 0.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| if hi > lo { lo + (v + 1.0) * 0.5 * (hi - lo) } else { lo })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    /// `None`: full batch up to 10 000 training rows, otherwise 1024.
    pub batch: Option<usize>,
    pub lambda: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self { hidden: vec![20, 20], lr: 1e-3, epochs: 1000, batch: None, lambda: 10.0, seed: 0, patience: None }
    }
}

impl QuantileConfig {
    pub fn batch_for(&self, n_train: usize) -> usize {
        match self.batch {
            Some(b) => b.max(1),
            None if n_train <= 10_000 => n_train.max(1),
            None => 1024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub raw: [f64; 2],
}

impl Interval {
    /// Sort the raw outputs so `lo <= hi`.
    pub fn from_raw(raw: [f64; 2]) -> Self {
        Self { lo: raw[0].min(raw[1]), hi: raw[0].max(raw[1]), raw }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QuantileArchitecture {
    kind: String,
    widths: Vec<usize>,
    scaler: MinMaxScaler,
    y_center: f64,
    y_scale: f64,
    lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileModel {
    pub mlp: Mlp,
    pub store: ParamStore,
    pub widths: Vec<usize>,
    pub scaler: MinMaxScaler,
    pub y_center: f64,
    pub y_scale: f64,
    pub lambda: f64,
}

impl QuantileModel {
    fn init(widths: Vec<usize>, scaler: MinMaxScaler, y_center: f64, y_scale: f64, lambda: f64, rng: &mut MineRng) -> Self {
        let mut store = ParamStore::default();
        let mlp = Mlp::new(&mut store, "dense", &widths, rng);
        Self { mlp, store, widths, scaler, y_center, y_scale, lambda }
    }

    /// Raw network outputs in target units.
    pub fn predict_raw(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.scaler.width() {
            return Err(MineError::shape(format!("{} features, model expects {}", x.len(), self.scaler.width())));
        }
        let out = self.mlp.predict(&self.store, &self.scaler.transform(x));
        Ok([self.y_center + self.y_scale * out[0], self.y_center + self.y_scale * out[1]])
    }

    pub fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        Ok(Interval::from_raw(self.predict_raw(x)?))
    }

    pub fn to_weights(&self) -> ModelWeights {
        let arch = QuantileArchitecture {
            kind: "quantile-mlp".into(),
            widths: self.widths.clone(),
            scaler: self.scaler.clone(),
            y_center: self.y_center,
            y_scale: self.y_scale,
            lambda: self.lambda,
        };
        ModelWeights::new(serde_json::to_value(arch).expect("architecture serializes"), &self.store)
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        let arch: QuantileArchitecture = serde_json::from_value(w.architecture.clone())?;
        if arch.kind != "quantile-mlp" {
            return Err(MineError::Config(format!("weights describe a {:?}, not a quantile network", arch.kind)));
        }
        let mut model = Self::init(arch.widths, arch.scaler, arch.y_center, arch.y_scale, arch.lambda, &mut seeded(0));
        model.store.load(&w.tensors)?;
        Ok(model)
    }
}

/// Training curve and selection outcome.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Mean pinball loss over both levels (no crossing penalty).
pub fn mean_pinball(model: &QuantileModel, features: &[f64], targets: &[f64], idx: &[usize]) -> Result<f64> {
    let width = model.scaler.width();
    let mut s = 0.0;
    for &i in idx {
        let raw = model.predict_raw(&features[i * width..(i + 1) * width])?;
        s += pinball(raw[0], targets[i], QUANTILE_LEVELS[0]) + pinball(raw[1], targets[i], QUANTILE_LEVELS[1]);
    }
    Ok(s / idx.len().max(1) as f64)
}

/// Adam on the pinball objective; returns the weights with the best
/// validation pinball loss.
pub fn train_quantile(
    features: &[f64],
    width: usize,
    targets: &[f64],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &QuantileConfig,
) -> Result<(QuantileModel, TrainLog)> {
    if width == 0 || features.len() != targets.len() * width {
        return Err(MineError::shape("feature table and targets disagree"));
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(MineError::InvalidInput("training and validation splits must be nonempty".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.lambda >= 0.0) {
        return Err(MineError::Config("learning rate must be positive and lambda nonnegative".into()));
    }
    let scaler = MinMaxScaler::fit(features, width, train_idx)?;
    let ys: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
    let y_center = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - y_center).powi(2)).sum::<f64>() / ys.len() as f64;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };

    let mut widths = vec![width];
    widths.extend(&cfg.hidden);
    widths.push(2);
    let mut rng = seeded(cfg.seed);
    let mut model = QuantileModel::init(widths, scaler, y_center, y_scale, cfg.lambda, &mut rng);
    let mut opt = Adam::new(cfg.lr, &model.store);

    let xs_norm: Vec<f64> = (0..targets.len())
        .flat_map(|i| model.scaler.transform(&features[i * width..(i + 1) * width]))
        .collect();
    let ys_norm: Vec<f64> = targets.iter().map(|y| (y - y_center) / y_scale).collect();

    let batch = cfg.batch_for(train_idx.len());
    let mut order = train_idx.to_vec();
    let mut log = TrainLog { best_val: f64::INFINITY, ..Default::default() };
    let mut best = model.store.clone();
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut xb = Vec::with_capacity(chunk.len() * width);
            let mut yb = Vec::with_capacity(chunk.len());
            for &i in chunk {
                xb.extend_from_slice(&xs_norm[i * width..(i + 1) * width]);
                yb.push(ys_norm[i]);
            }
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let x = g.input(Tensor::from_vec(chunk.len(), width, xb)?);
            let out = model.mlp.forward(&mut g, &p, x)?;
            let obj = quantile_objective(&mut g, out, &yb, cfg.lambda)?;
            let loss = g.scale(obj, 1.0 / chunk.len() as f64);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(MineError::TrainingDiverged { epoch });
            }
            epoch_loss += lv * chunk.len() as f64;
            g.backward(loss)?;
            let grads = model.store.grads(&g, &p);
            opt.update(&mut model.store, &grads)?;
        }
        let val = mean_pinball(&model, features, targets, val_idx)?;
        if !val.is_finite() {
            return Err(MineError::TrainingDiverged { epoch });
        }
        log.train_loss.push(epoch_loss / order.len() as f64);
        log.val_loss.push(val);
        if val < log.best_val {
            log.best_val = val;
            log.best_epoch = epoch;
            best = model.store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    model.store = best;
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub n_inputs: usize,
    pub mse_lo: f64,
    pub mse_hi: f64,
    pub pinball_lo: f64,
    pub pinball_hi: f64,
    pub mean_coverage: f64,
    pub mean_interval_size_model: f64,
    pub mean_interval_size_empirical: f64,
}

/// Compare predicted intervals with oracle draws per test input.
pub fn evaluate_quantile(model: &QuantileModel, inputs: &[Vec<f64>], draws: &[Vec<f64>]) -> Result<QuantileReport> {
    if inputs.is_empty() {
        return Err(MineError::Usage("empty test set".into()));
    }
    if inputs.len() != draws.len() || draws.iter().any(|d| d.is_empty()) {
        return Err(MineError::shape("every test input needs a nonempty set of oracle draws"));
    }
    let n = inputs.len() as f64;
    let mut r = QuantileReport {
        n_inputs: inputs.len(),
        mse_lo: 0.0,
        mse_hi: 0.0,
        pinball_lo: 0.0,
        pinball_hi: 0.0,
        mean_coverage: 0.0,
        mean_interval_size_model: 0.0,
        mean_interval_size_empirical: 0.0,
    };
    for (x, d) in inputs.iter().zip(draws) {
        let iv = model.predict_interval(x)?;
        let (e05, e95) = empirical_interval(d);
        r.mse_lo += (iv.lo - e05).powi(2);
        r.mse_hi += (iv.hi - e95).powi(2);
        let m = d.len() as f64;
        r.pinball_lo += d.iter().map(|&y| pinball(iv.lo, y, QUANTILE_LEVELS[0])).sum::<f64>() / m;
        r.pinball_hi += d.iter().map(|&y| pinball(iv.hi, y, QUANTILE_LEVELS[1])).sum::<f64>() / m;
        r.mean_coverage += crate::metrics::coverage(d, iv.lo, iv.hi)?;
        r.mean_interval_size_model += iv.hi - iv.lo;
        r.mean_interval_size_empirical += e95 - e05;
    }
    for v in [
        &mut r.mse_lo,
        &mut r.mse_hi,
        &mut r.pinball_lo,
        &mut r.pinball_hi,
        &mut r.mean_coverage,
        &mut r.mean_interval_size_model,
        &mut r.mean_interval_size_empirical,
    ] {
        *v /= n;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_e0_examples() {
        let mut rng = seeded(1);
        let eta = Eta { flag: 0, location: 15.0, scale: 1e-9 };
        assert!((sample_e0(&eta, &mut rng).unwrap().0 - 15.0).abs() < 1e-6);

        let eta = Eta { flag: 0, location: 15.0, scale: 1.0 };
        let n = 100_000;
        let mean = (0..n).map(|_| sample_e0(&eta, &mut rng).unwrap().0).sum::<f64>() / n as f64;
        assert!((mean - 15.0).abs() < 0.02, "{mean}");

        let eta = Eta { flag: 1, location: 15.0, scale: 0.3 };
        let xs: Vec<f64> = (0..n).map(|_| sample_e0(&eta, &mut rng).unwrap().0).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let skew = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64 / var.powf(1.5);
        assert!((mean - 15.0).abs() < 0.05, "{mean}");
        assert!(skew > 0.0);

        assert!(sample_e0(&Eta { flag: 2, location: 1.0, scale: 1.0 }, &mut rng).is_err());
        assert!(sample_e0(&Eta { flag: 0, location: 1.0, scale: 0.0 }, &mut rng).is_err());
    }

    #[test]
    fn normal_redraws_are_counted() {
        let mut rng = seeded(2);
        let eta = Eta { flag: 0, location: 0.0, scale: 1.0 };
        let total: u64 = (0..2000).map(|_| sample_e0(&eta, &mut rng).unwrap().1).sum();
        assert!(total > 1500 && total < 2500, "{total}");
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_type7(&v, 0.5), 3.0);
        assert_eq!(quantile_type7(&v, 0.05), 1.2);
        assert_eq!(quantile_type7(&v, 1.0), 5.0);
        assert_eq!(quantile_type7(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn oracle_examples() {
        let chain = Chain::point_mass(&[0.5, 1.0], 20);
        let input = QuantileInput { scenario: 1, n_scenarios: 3, eta: Eta { flag: 0, location: 10.0, scale: 1e-12 } };
        let sim = |theta: &[f64], s: usize, e0: f64| -> Result<f64> { Ok(theta[0] * e0 + s as f64) };
        let o = empirical_quantile_oracle(&input, &chain, 1000, &sim, &mut seeded(3)).unwrap();
        assert!((o.q05 - 6.0).abs() < 1e-9 && (o.q95 - 6.0).abs() < 1e-9);
        assert!(empirical_quantile_oracle(&input, &chain, 999, &sim, &mut seeded(3)).is_err());

        let mut rng = seeded(4);
        let o = oracle_from_sampler(100_000, &mut rng, &mut |r| Ok(r.sample(StandardNormal))).unwrap();
        assert!((o.q05 + 1.645).abs() < 0.02 && (o.q95 - 1.645).abs() < 0.02, "{o:?}");
        assert!(o.q05 <= o.q95);

        let mut k = 0;
        let res = oracle_from_sampler(1000, &mut rng, &mut |_| {
            k += 1;
            if k % 50 == 0 { Err(MineError::InvalidInput("x".into())) } else { Ok(1.0) }
        });
        assert!(matches!(res, Err(MineError::DataQuality(_))));
    }

    #[test]
    fn interval_ordering() {
        assert_eq!(Interval::from_raw([0.2, 1.0]).lo, 0.2);
        let iv = Interval::from_raw([1.0, 0.2]);
        assert_eq!((iv.lo, iv.hi), (0.2, 1.0));
        assert_eq!(iv.raw, [1.0, 0.2]);
    }

    fn gaussian_task(n: usize, seed: u64, mean: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seeded(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys = xs.iter().map(|&x| mean(x) + rng.sample::<f64, _>(StandardNormal)).collect();
        (xs, ys)
    }

    #[test]
    fn learns_unconditional_normal_quantiles() {
        let (xs, ys) = gaussian_task(20_000, 5, |_| 0.0);
        let idx: Vec<usize> = (0..20_000).collect();
        let cfg = QuantileConfig { epochs: 60, batch: Some(512), seed: 1, lr: 3e-3, ..Default::default() };
        let (model, _) = train_quantile(&xs, 1, &ys, &idx[..16_000], &idx[16_000..], &cfg).unwrap();
        for x in [-1.5, 0.0, 1.5] {
            let iv = model.predict_interval(&[x]).unwrap();
            assert!((iv.lo + 1.645).abs() < 0.08 && (iv.hi - 1.645).abs() < 0.08, "{iv:?}");
        }
    }

    #[test]
    fn tracks_conditional_quantile_and_is_deterministic() {
        let (xs, ys) = gaussian_task(4000, 6, |x| x);
        let idx: Vec<usize> = (0..4000).collect();
        let cfg = QuantileConfig { epochs: 300, batch: Some(256), seed: 2, lr: 3e-3, ..Default::default() };
        let (model, log) = train_quantile(&xs, 1, &ys, &idx[..3000], &idx[3000..], &cfg).unwrap();
        let grid: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let mse = grid
            .iter()
            .map(|&x| (model.predict_interval(&[x]).unwrap().lo - (x - 1.645)).powi(2))
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mse <= 0.02, "{mse}");
        assert!(log.best_val.is_finite());

        let cfg_short = QuantileConfig { epochs: 5, ..cfg };
        let (a, _) = train_quantile(&xs, 1, &ys, &idx[..3000], &idx[3000..], &cfg_short).unwrap();
        let (b, _) = train_quantile(&xs, 1, &ys, &idx[..3000], &idx[3000..], &cfg_short).unwrap();
        assert_eq!(a.store, b.store);
        let back = QuantileModel::from_weights(&a.to_weights()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn evaluate_examples() {
        let (xs, ys) = gaussian_task(200, 7, |_| 0.0);
        let idx: Vec<usize> = (0..200).collect();
        let cfg = QuantileConfig { epochs: 1, ..Default::default() };
        let (mut model, _) = train_quantile(&xs, 1, &ys, &idx[..150], &idx[150..], &cfg).unwrap();
        let mut rng = seeded(8);
        let shared: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let (e05, e95) = empirical_interval(&shared);
        // Force the network to output the oracle quantiles: zero weights, biases set.
        for p in &mut model.store.params {
            p.tensor.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let last = model.mlp.layers.last().unwrap().b;
        model.store.get_mut(last).data =
            vec![(e05 - model.y_center) / model.y_scale, (e95 - model.y_center) / model.y_scale];
        let inputs: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
        let draws = vec![shared; 20];
        let r = evaluate_quantile(&model, &inputs, &draws).unwrap();
        assert!(r.mse_lo < 1e-20 && r.mse_hi < 1e-20);
        assert!((r.mean_coverage - 0.9).abs() < 0.002);
        assert!((r.mean_interval_size_model - r.mean_interval_size_empirical).abs() < 1e-9);

        model.store.get_mut(last).data = vec![-1e6, 1e6];
        assert_eq!(evaluate_quantile(&model, &inputs, &draws).unwrap().mean_coverage, 1.0);
        model.store.get_mut(last).data = vec![0.1, 0.1];
        assert!(evaluate_quantile(&model, &inputs, &draws).unwrap().mean_coverage < 1e-3);
        assert!(matches!(evaluate_quantile(&model, &[], &[]), Err(MineError::Usage(_))));
    }

    #[test]
    fn scaler_round_trip() {
        let data = [1.0, 5.0, 3.0, 5.0, -2.0, 5.0];
        let s = MinMaxScaler::fit(&data, 2, &[0, 1, 2]).unwrap();
        for r in 0..3 {
            let x = &data[r * 2..r * 2 + 2];
            let z = s.transform(x);
            assert!(z[0] >= -1.0 && z[0] <= 1.0 && z[1] == 0.0);
            let back = s.inverse(&z);
            assert!((back[0] - x[0]).abs() < 1e-12 && back[1] == x[1]);
        }
    }
}
