//! Posterior-informed training data: parameters drawn uniformly from the
//! post-burn-in chain, paired with simulator outputs, split 60/20/20 and
//! persisted as `MINE` records plus a JSON sidecar.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::io::{read_json, write_json, RecordTable, SCHEMA_VERSION};
use crate::mcmc::Chain;
use crate::odes::Trajectory;
use crate::quantile::{sample_e0, Eta, QuantileInput};
use crate::rng::{retry_stream, row_stream, seeded, MineRng};

/// Attempts per row before the whole job is abandoned.
const MAX_ROW_ATTEMPTS: u64 = 100;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle of `0..n` cut into `⌊0.6n⌋`, `⌊0.2n⌋` and the remainder.
pub fn split_622(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Split { train: idx, val, test }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Forward,
    Quantile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub simulator: String,
    pub seed: u64,
    pub chain_sha256: String,
    pub feature_names: Vec<String>,
    /// Time grid of stored trajectories (forward) or the single horizon (quantile).
    pub grid: Vec<f64>,
    /// Columns per trajectory row.
    pub state_width: usize,
    pub theta_dim: usize,
    pub skipped: usize,
    pub e0_redraws: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: RecordTable,
    pub split: Split,
    pub meta: DatasetMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub global_seed: u64,
    pub n_records: usize,
    pub feature_count: usize,
    pub target_width: usize,
    pub meta: DatasetMeta,
    pub split: Split,
    pub data_sha256: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        self.records.features(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.records.target(i)
    }

    /// Parameter columns (always the trailing features of a forward record).
    pub fn theta(&self, i: usize) -> &[f64] {
        let f = self.features(i);
        &f[f.len() - self.meta.theta_dim..]
    }

    /// Leading non-parameter features (initial state or scenario encoding).
    pub fn x0(&self, i: usize) -> &[f64] {
        let f = self.features(i);
        &f[..f.len() - self.meta.theta_dim]
    }

    pub fn trajectory_rows(&self) -> usize {
        self.meta.grid.len()
    }

    /// Flat feature table over all records.
    pub fn feature_table(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.features(i).to_vec()).collect()
    }

    /// First target column of every record.
    pub fn scalar_targets(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.target(i)[0]).collect()
    }

    /// Writes records and sidecar; returns the record-file hash.
    pub fn save(&self, records_path: &Path, sidecar_path: &Path, global_seed: u64) -> Result<String> {
        let hash = self.records.write_to(records_path)?;
        let sidecar = DatasetSidecar {
            schema_version: SCHEMA_VERSION,
            global_seed,
            n_records: self.len(),
            feature_count: self.records.feature_count,
            target_width: self.records.target_width,
            meta: self.meta.clone(),
            split: self.split.clone(),
            data_sha256: hash.clone(),
        };
        write_json(sidecar_path, &sidecar)?;
        Ok(hash)
    }

    /// Loads and verifies the record hash and, if given, the chain hash.
    pub fn load(records_path: &Path, sidecar_path: &Path, expected_chain: Option<&str>) -> Result<(Self, String)> {
        let sidecar: DatasetSidecar = read_json(sidecar_path)?;
        let (records, hash) = RecordTable::read_from(records_path, sidecar.target_width)?;
        if hash != sidecar.data_sha256 {
            return Err(MineError::Provenance(format!(
                "dataset {} hash {hash} does not match sidecar {}",
                records_path.display(),
                sidecar.data_sha256
            )));
        }
        if let Some(chain) = expected_chain {
            if chain != sidecar.meta.chain_sha256 {
                return Err(MineError::Provenance(format!(
                    "dataset was generated from chain {}, not {chain}",
                    sidecar.meta.chain_sha256
                )));
            }
        }
        if records.feature_count != sidecar.feature_count || records.len() != sidecar.n_records {
            return Err(MineError::Provenance("record header disagrees with sidecar".into()));
        }
        Ok((Self { records, split: sidecar.split, meta: sidecar.meta }, hash))
    }
}

struct Row {
    features: Vec<f64>,
    target: Vec<f64>,
    redraws: u64,
    failures: usize,
}

/// Row-parallel generation with one random stream per `(seed, row)`;
/// failed draws are retried on a fresh stream for the same row.
fn generate_rows<F>(n: usize, seed: u64, draw: F) -> Result<(Vec<Row>, usize)>
where
    F: Fn(&mut MineRng) -> Result<(Vec<f64>, Vec<f64>, u64)> + Sync,
{
    let rows: Vec<Result<Row>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut failures = 0;
            for attempt in 0..MAX_ROW_ATTEMPTS {
                let mut rng = if attempt == 0 { row_stream(seed, i as u64) } else { retry_stream(seed, i as u64, attempt) };
                match draw(&mut rng) {
                    Ok((features, target, redraws)) if target.iter().all(|v| v.is_finite()) => {
                        return Ok(Row { features, target, redraws, failures });
                    }
                    Ok(_) => failures += 1,
                    Err(e) => {
                        if !matches!(e, MineError::IntegrationDiverged { .. } | MineError::NumericDomain(_)) {
                            return Err(e);
                        }
                        log::debug!("row {i} attempt {attempt} skipped: {e}");
                        failures += 1;
                    }
                }
            }
            Err(MineError::DataQuality(format!("row {i} failed {MAX_ROW_ATTEMPTS} times")))
        })
        .collect();
    let rows: Vec<Row> = rows.into_iter().collect::<Result<_>>()?;
    let skipped: usize = rows.iter().map(|r| r.failures).sum();
    if skipped * 100 > n {
        return Err(MineError::DataQuality(format!("{skipped} simulator failures for {n} records")));
    }
    if skipped > 0 {
        log::warn!("{skipped} simulator failures were resampled");
    }
    Ok((rows, skipped))
}

fn chain_rows(chain: &Chain) -> Result<usize> {
    match chain.post_burn_in_len() {
        0 => Err(MineError::InvalidInput("chain has no post-burn-in rows".into())),
        n => Ok(n),
    }
}

/// Description of the simulator side of a forward dataset.
pub struct ForwardSource<'a> {
    pub name: &'a str,
    pub x0_names: Vec<String>,
    pub theta_names: Vec<String>,
    pub grid: Vec<f64>,
    pub state_width: usize,
    pub x0_sampler: &'a (dyn Fn(&mut MineRng) -> Vec<f64> + Sync),
    pub simulator: &'a (dyn Fn(&[f64], &[f64]) -> Result<Trajectory> + Sync),
}

/// Records `x0 ‖ θ → trajectory` with `θ` uniform over post-burn-in chain rows.
pub fn generate_forward_dataset(
    chain: &Chain,
    chain_sha256: &str,
    source: &ForwardSource<'_>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let n_rows = chain_rows(chain)?;
    let width = source.grid.len() * source.state_width;
    let (rows, skipped) = generate_rows(n, seed, |rng| {
        let theta = chain.posterior_row(rng.random_range(0..n_rows));
        let x0 = (source.x0_sampler)(rng);
        let traj = (source.simulator)(&x0, theta)?;
        if traj.rows() * traj.width != width {
            return Err(MineError::shape(format!(
                "simulator returned {}x{}, grid needs {}x{}",
                traj.rows(),
                traj.width,
                source.grid.len(),
                source.state_width
            )));
        }
        let mut features = x0;
        features.extend_from_slice(theta);
        Ok((features, traj.states, 0))
    })?;
    let feature_names: Vec<String> = source.x0_names.iter().chain(&source.theta_names).cloned().collect();
    let mut records = RecordTable::new(feature_names.len(), width);
    for r in &rows {
        records.push(&r.features, &r.target)?;
    }
    Ok(Dataset {
        records,
        split: split_622(n, seed),
        meta: DatasetMeta {
            kind: DatasetKind::Forward,
            simulator: source.name.to_string(),
            seed,
            chain_sha256: chain_sha256.to_string(),
            feature_names,
            grid: source.grid.clone(),
            state_width: source.state_width,
            theta_dim: chain.dim,
            skipped,
            e0_redraws: 0,
        },
    })
}

/// Prior over emission laws used when building interval-emulator data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaPrior {
    /// Probability of the lognormal family.
    pub p_lognormal: f64,
    pub location: (f64, f64),
    pub normal_scale: (f64, f64),
    pub lognormal_scale: (f64, f64),
}

impl Default for EtaPrior {
    fn default() -> Self {
        Self { p_lognormal: 0.5, location: (6.0, 12.0), normal_scale: (0.1, 2.0), lognormal_scale: (0.02, 0.3) }
    }
}

impl EtaPrior {
    pub fn sample(&self, rng: &mut MineRng) -> Eta {
        let flag = u8::from(rng.random_bool(self.p_lognormal.clamp(0.0, 1.0)));
        let location = uniform(rng, self.location);
        let range = if flag == 0 { self.normal_scale } else { self.lognormal_scale };
        Eta { flag, location, scale: uniform(rng, range) }
    }
}

fn uniform(rng: &mut MineRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Records `scenario one-hot ‖ η → horizon output`.
pub struct QuantileSource<'a> {
    pub name: &'a str,
    pub n_scenarios: usize,
    pub horizon: f64,
    pub eta_sampler: &'a (dyn Fn(&mut MineRng) -> Eta + Sync),
    /// `(θ, scenario, E0) -> y`.
    pub simulator: &'a (dyn Fn(&[f64], usize, f64) -> Result<f64> + Sync),
}

pub fn generate_quantile_dataset(
    chain: &Chain,
    chain_sha256: &str,
    source: &QuantileSource<'_>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let n_rows = chain_rows(chain)?;
    if source.n_scenarios == 0 {
        return Err(MineError::Config("no scenarios".into()));
    }
    let (rows, skipped) = generate_rows(n, seed, |rng| {
        let scenario = rng.random_range(0..source.n_scenarios);
        let eta = (source.eta_sampler)(rng);
        let input = QuantileInput { scenario, n_scenarios: source.n_scenarios, eta };
        let features = input.features()?;
        let (e0, redraws) = sample_e0(&eta, rng)?;
        let theta = chain.posterior_row(rng.random_range(0..n_rows));
        let y = (source.simulator)(theta, scenario, e0)?;
        Ok((features, vec![y], redraws))
    })?;
    let mut feature_names: Vec<String> = (0..source.n_scenarios).map(|s| format!("scenario_{s}")).collect();
    feature_names.extend(["eta1".into(), "eta2".into(), "eta3".into()]);
    let mut records = RecordTable::new(feature_names.len(), 1);
    for r in &rows {
        records.push(&r.features, &r.target)?;
    }
    Ok(Dataset {
        records,
        split: split_622(n, seed),
        meta: DatasetMeta {
            kind: DatasetKind::Quantile,
            simulator: source.name.to_string(),
            seed,
            chain_sha256: chain_sha256.to_string(),
            feature_names,
            grid: vec![source.horizon],
            state_width: 1,
            theta_dim: 0,
            skipped,
            e0_redraws: rows.iter().map(|r| r.redraws).sum(),
        },
    })
}

/// Initial-state law for the kinetics model: A and B uniform on ranges,
/// products start empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HimmelX0Prior {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Default for HimmelX0Prior {
    fn default() -> Self {
        Self { a: (1.5, 2.5), b: (0.5, 1.5) }
    }
}

impl HimmelX0Prior {
    pub fn sample(&self, rng: &mut MineRng) -> Vec<f64> {
        vec![uniform(rng, self.a), uniform(rng, self.b), 0.0, 0.0, 0.0, 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{median, w2_1d};
    use crate::odes::HimmelSimulator;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn himmel_source<'a>(
        sampler: &'a (dyn Fn(&mut MineRng) -> Vec<f64> + Sync),
        sim: &'a (dyn Fn(&[f64], &[f64]) -> Result<Trajectory> + Sync),
    ) -> ForwardSource<'a> {
        let h = HimmelSimulator::default();
        ForwardSource {
            name: "himmel",
            x0_names: crate::odes::SPECIES.iter().map(|s| s.to_string()).collect(),
            theta_names: vec!["theta_1".into(), "theta_2".into(), "theta_3".into()],
            grid: (0..h.obs_rows()).map(|i| i as f64).collect(),
            state_width: 6,
            x0_sampler: sampler,
            simulator: sim,
        }
    }

    fn himmel_sim(x0: &[f64], theta: &[f64]) -> Result<Trajectory> {
        HimmelSimulator::default().observe_from(x0.try_into().unwrap(), theta.try_into().unwrap())
    }

    #[test]
    fn split_examples() {
        let s = split_622(10, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_622(10, 3), s);
        assert_ne!(split_622(10, 4), s);
        let s = split_622(1003, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (601, 200, 202));
    }

    #[test]
    fn forward_dataset_examples() {
        let prior = HimmelX0Prior::default();
        let sampler = |r: &mut MineRng| prior.sample(r);
        let src = himmel_source(&sampler, &himmel_sim);
        let chain = Chain::point_mass(&[1.2, 0.6, 0.3], 5);
        let empty = generate_forward_dataset(&chain, "abc", &src, 0, 1).unwrap();
        assert!(empty.is_empty() && empty.split.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let (rp, sp) = (dir.path().join("e.mine"), dir.path().join("e.json"));
        empty.save(&rp, &sp, 1).unwrap();
        assert_eq!(Dataset::load(&rp, &sp, Some("abc")).unwrap().0, empty);

        let ds = generate_forward_dataset(&chain, "abc", &src, 40, 2).unwrap();
        assert!((0..40).all(|i| ds.theta(i) == [1.2, 0.6, 0.3]));
        assert_eq!(ds.target(0).len(), 11 * 6);
        assert_eq!(&ds.target(3)[..6], ds.x0(3));
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let prior = HimmelX0Prior::default();
        let sampler = |r: &mut MineRng| prior.sample(r);
        let src = himmel_source(&sampler, &himmel_sim);
        let mut chain = Chain::point_mass(&[1.0, 0.5, 0.2], 4);
        chain.samples = vec![1.0, 0.5, 0.2, 1.1, 0.4, 0.3, 0.9, 0.7, 0.1, 1.3, 0.5, 0.25];
        let a = generate_forward_dataset(&chain, "h", &src, 64, 9).unwrap();
        let b = generate_forward_dataset(&chain, "h", &src, 64, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| generate_forward_dataset(&chain, "h", &src, 64, 9).unwrap());
        assert_eq!(a, c);

        let dir = tempfile::tempdir().unwrap();
        let (rp, sp) = (dir.path().join("d.mine"), dir.path().join("d.json"));
        let hash = a.save(&rp, &sp, 5).unwrap();
        let (back, h2) = Dataset::load(&rp, &sp, Some("h")).unwrap();
        assert_eq!(back, a);
        assert_eq!(hash, h2);
        assert!(matches!(Dataset::load(&rp, &sp, Some("other")), Err(MineError::Provenance(_))));
        let mut bytes = std::fs::read(&rp).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&rp, bytes).unwrap();
        assert!(matches!(Dataset::load(&rp, &sp, None), Err(MineError::Provenance(_))));
    }

    #[test]
    fn divergent_draws_are_resampled() {
        let prior = HimmelX0Prior::default();
        let sampler = |r: &mut MineRng| prior.sample(r);
        let flaky = |x0: &[f64], theta: &[f64]| -> Result<Trajectory> {
            if x0[0] > 2.49 {
                Err(MineError::IntegrationDiverged { step: 3 })
            } else {
                himmel_sim(x0, theta)
            }
        };
        let src = himmel_source(&sampler, &flaky);
        let chain = Chain::point_mass(&[1.2, 0.6, 0.3], 5);
        let ds = generate_forward_dataset(&chain, "c", &src, 2000, 3).unwrap();
        assert_eq!(ds.len(), 2000);
        assert!(ds.meta.skipped > 0 && ds.meta.skipped <= 20);
        assert!((0..2000).all(|i| ds.x0(i)[0] <= 2.49));

        let broken = |_: &[f64], _: &[f64]| -> Result<Trajectory> { Err(MineError::IntegrationDiverged { step: 0 }) };
        let src = himmel_source(&sampler, &broken);
        assert!(matches!(generate_forward_dataset(&chain, "c", &src, 10, 3), Err(MineError::DataQuality(_))));
    }

    fn chi_square_uniform(counts: &[usize]) -> bool {
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let crit = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.99);
        stat < crit
    }

    fn indexed_chain(k: usize) -> Chain {
        let mut chain = Chain::point_mass(&[0.0], k);
        chain.samples = (0..k).map(|i| i as f64).collect();
        chain
    }

    #[test]
    fn chain_indices_are_uniform() {
        let chain = indexed_chain(50);
        let sampler = |_: &mut MineRng| vec![0.0];
        let sim = |_: &[f64], th: &[f64]| Trajectory::new(0.0, 1.0, 1, vec![th[0]]);
        let src = ForwardSource {
            name: "id",
            x0_names: vec!["x".into()],
            theta_names: vec!["t".into()],
            grid: vec![0.0],
            state_width: 1,
            x0_sampler: &sampler,
            simulator: &sim,
        };
        let ds = generate_forward_dataset(&chain, "i", &src, 100_000, 11).unwrap();
        let mut counts = vec![0usize; 50];
        for i in 0..ds.len() {
            counts[ds.theta(i)[0] as usize] += 1;
        }
        assert!(chi_square_uniform(&counts));
    }

    #[test]
    fn theta_marginal_approaches_chain() {
        let chain = indexed_chain(200);
        let sampler = |_: &mut MineRng| vec![0.0];
        let sim = |_: &[f64], th: &[f64]| Trajectory::new(0.0, 1.0, 1, vec![th[0]]);
        let src = ForwardSource {
            name: "id",
            x0_names: vec!["x".into()],
            theta_names: vec!["t".into()],
            grid: vec![0.0],
            state_width: 1,
            x0_sampler: &sampler,
            simulator: &sim,
        };
        let mut medians = Vec::new();
        for n in [100, 1000, 10_000] {
            let mut w = Vec::new();
            for seed in 0..10 {
                let ds = generate_forward_dataset(&chain, "i", &src, n, 100 + seed).unwrap();
                let thetas: Vec<f64> = (0..n).map(|i| ds.theta(i)[0]).collect();
                let mut rng = seeded(900 + seed);
                let resample: Vec<f64> = (0..n).map(|_| chain.posterior_row(rng.random_range(0..200))[0]).collect();
                w.push(w2_1d(&thetas, &resample).unwrap());
            }
            medians.push(median(&w));
        }
        assert!(medians.windows(2).all(|m| m[1] < m[0]), "{medians:?}");
    }

    fn quantile_source<'a>(
        eta: &'a (dyn Fn(&mut MineRng) -> Eta + Sync),
        sim: &'a (dyn Fn(&[f64], usize, f64) -> Result<f64> + Sync),
        k: usize,
    ) -> QuantileSource<'a> {
        QuantileSource { name: "q", n_scenarios: k, horizon: 2100.0, eta_sampler: eta, simulator: sim }
    }

    #[test]
    fn quantile_dataset_examples() {
        let fixed = |_: &mut MineRng| Eta { flag: 0, location: 9.0, scale: 1e-12 };
        let sim = |th: &[f64], s: usize, e0: f64| -> Result<f64> { Ok(th[0] * e0 + s as f64) };
        let chain = Chain::point_mass(&[0.3], 3);
        let ds = generate_quantile_dataset(&chain, "q", &quantile_source(&fixed, &sim, 1), 50, 1).unwrap();
        let ys = ds.scalar_targets();
        assert!(ys.iter().all(|&y| (y - ys[0]).abs() < 1e-9));

        let prior = EtaPrior::default();
        let eta = |r: &mut MineRng| prior.sample(r);
        let ds = generate_quantile_dataset(&chain, "q", &quantile_source(&eta, &sim, 5), 100_000, 2).unwrap();
        let mut counts = vec![0usize; 5];
        for i in 0..ds.len() {
            let f = ds.features(i);
            assert!(f[7] > 0.0);
            counts[f[..5].iter().position(|&v| v == 1.0).unwrap()] += 1;
        }
        assert!(chi_square_uniform(&counts));
    }

    #[test]
    fn fairlite_targets_are_physical() {
        use crate::odes::{default_fairlite_theta, FairLiteSimulator};
        let fair = FairLiteSimulator::default();
        let prior = EtaPrior::default();
        let eta = |r: &mut MineRng| prior.sample(r);
        let sim = |th: &[f64], s: usize, e0: f64| fair.horizon_temperature(th, s, e0);
        let chain = Chain::point_mass(&default_fairlite_theta(), 3);
        let ds = generate_quantile_dataset(&chain, "q", &quantile_source(&eta, &sim, 5), 2000, 3).unwrap();
        assert!(ds.scalar_targets().iter().all(|y| y.is_finite() && (-5.0..=15.0).contains(y)));
    }
}
