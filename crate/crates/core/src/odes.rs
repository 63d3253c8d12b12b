//! Forward physical models and the fixed-step integrator.
//!
//! Two simulators are provided: the six-species Himmelblau kinetics system and
//! a reduced reservoir-plus-energy-balance climate model ("FaIR-lite"). Both are
//! advanced with classical RK4 on a uniform grid.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::io::{fmt_f64, parse_f64};

pub const SPECIES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Trajectory on a uniform time grid, one row per time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    pub width: usize,
    /// Row-major `(steps + 1) x width`.
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, width: usize, states: Vec<f64>) -> Result<Self> {
        if width == 0 || states.is_empty() || states.len() % width != 0 {
            return Err(MineError::shape(format!(
                "state buffer of length {} is not a whole number of rows of width {width}",
                states.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(MineError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let steps = states.len() / width - 1;
        Ok(Self { t0, dt, steps, width, states })
    }

    pub fn rows(&self) -> usize {
        self.steps + 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.states[i * self.width..(i + 1) * self.width]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.time(i)).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.steps)
    }

    /// Keep every `stride`-th row, starting at row 0.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.steps % stride != 0 {
            return Err(MineError::InvalidInput(format!(
                "stride {stride} does not divide {} steps",
                self.steps
            )));
        }
        let mut states = Vec::with_capacity((self.steps / stride + 1) * self.width);
        for i in (0..self.rows()).step_by(stride) {
            states.extend_from_slice(self.row(i));
        }
        Trajectory::new(self.t0, self.dt * stride as f64, self.width, states)
    }

    /// Restrict to a subset of columns.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.width) {
            return Err(MineError::shape(format!("column {bad} out of range {}", self.width)));
        }
        let mut states = Vec::with_capacity(self.rows() * cols.len());
        for i in 0..self.rows() {
            let row = self.row(i);
            states.extend(cols.iter().map(|&c| row[c]));
        }
        Trajectory::new(self.t0, self.dt, cols.len(), states)
    }

    /// CSV with header `t,<names...>` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, names: &[&str], mut w: W) -> Result<()> {
        if names.len() != self.width {
            return Err(MineError::shape(format!(
                "{} column names for width {}",
                names.len(),
                self.width
            )));
        }
        writeln!(w, "t,{}", names.join(","))?;
        for i in 0..self.rows() {
            let mut line = fmt_f64(self.time(i));
            for v in self.row(i) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<(Vec<String>, Self)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| MineError::InvalidInput("empty trajectory CSV".into()))??;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(MineError::InvalidInput("trajectory CSV must start with column t".into()));
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        let mut times = Vec::new();
        let mut states = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            times.push(parse_f64(fields.next().unwrap_or(""))?);
            let before = states.len();
            for f in fields {
                states.push(parse_f64(f)?);
            }
            if states.len() - before != names.len() {
                return Err(MineError::shape("ragged trajectory CSV row"));
            }
        }
        if times.len() < 2 {
            return Err(MineError::InvalidInput("trajectory CSV needs at least two rows".into()));
        }
        let dt = times[1] - times[0];
        let traj = Trajectory::new(times[0], dt, names.len(), states)?;
        Ok((names, traj))
    }
}

/// Classical fixed-step RK4.
///
/// `rhs(t, x, dx)` writes the derivative into `dx`. Row 0 of the result is
/// `x0` verbatim. Any non-finite stage aborts with the index of the row that
/// was being produced.
pub fn integrate<F>(mut rhs: F, x0: &[f64], t0: f64, dt: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(MineError::InvalidInput(format!("dt must be positive and finite, got {dt}")));
    }
    if steps == 0 {
        return Err(MineError::InvalidInput("steps must be at least 1".into()));
    }
    let n = x0.len();
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let half = 0.5 * dt;
    let sixth = dt / 6.0;

    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * dt;
        let diverged = |_| MineError::IntegrationDiverged { step };

        rhs(t, &x, &mut k1).map_err(diverged)?;
        for i in 0..n {
            tmp[i] = x[i] + half * k1[i];
        }
        rhs(t + half, &tmp, &mut k2).map_err(diverged)?;
        for i in 0..n {
            tmp[i] = x[i] + half * k2[i];
        }
        rhs(t + half, &tmp, &mut k3).map_err(diverged)?;
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        rhs(t + dt, &tmp, &mut k4).map_err(diverged)?;
        for i in 0..n {
            x[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MineError::IntegrationDiverged { step });
        }
        states.extend_from_slice(&x);
    }
    Trajectory::new(t0, dt, n, states)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MineError::InvalidInput(format!("non-finite {what}")))
    }
}

/// Himmelblau kinetics: A+B→C+F, A+C→D+F, A+D→E+F with rates θ1..θ3.
///
/// F is carried explicitly so the six components of the derivative sum to zero.
pub fn himmel_rhs(state: &[f64; 6], theta: &[f64; 3]) -> Result<[f64; 6]> {
    check_finite(state, "kinetic state")?;
    check_finite(theta, "rate constants")?;
    let [a, b, c, d, _, _] = *state;
    let r1 = theta[0] * a * b;
    let r2 = theta[1] * a * c;
    let r3 = theta[2] * a * d;
    Ok([-r1 - r2 - r3, -r1, r1 - r2, r2 - r3, r3, r1 + r2 + r3])
}

/// Himmel simulator on a fine grid with sparse observation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HimmelSimulator {
    pub x0: [f64; 6],
    pub t_end: f64,
    pub fine_steps: usize,
    pub obs_stride: usize,
}

impl Default for HimmelSimulator {
    fn default() -> Self {
        Self {
            x0: [2.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            t_end: 10.0,
            fine_steps: 600,
            obs_stride: 60,
        }
    }
}

impl HimmelSimulator {
    pub fn dt(&self) -> f64 {
        self.t_end / self.fine_steps as f64
    }

    pub fn simulate_from(&self, x0: &[f64; 6], theta: &[f64; 3]) -> Result<Trajectory> {
        integrate(
            |_, x, dx| {
                let s: &[f64; 6] = x.try_into().expect("six species");
                dx.copy_from_slice(&himmel_rhs(s, theta)?);
                Ok(())
            },
            x0,
            0.0,
            self.dt(),
            self.fine_steps,
        )
    }

    pub fn simulate(&self, theta: &[f64; 3]) -> Result<Trajectory> {
        self.simulate_from(&self.x0, theta)
    }

    /// Trajectory restricted to the observation rows (every `obs_stride`-th step).
    pub fn observe_from(&self, x0: &[f64; 6], theta: &[f64; 3]) -> Result<Trajectory> {
        self.simulate_from(x0, theta)?.subsample(self.obs_stride)
    }

    pub fn obs_rows(&self) -> usize {
        self.fine_steps / self.obs_stride + 1
    }
}

/// Temperature sensitivity of the reservoir timescale, per kelvin.
pub const ALPHA_KAPPA: f64 = 0.05;
/// Pre-industrial atmospheric carbon (GtC) used in the logarithmic forcing.
pub const PREINDUSTRIAL_CARBON: f64 = 589.0;

/// Default reservoir fractions and lifetimes (years).
pub const FAIR_BASE_FRACTIONS: [f64; 4] = [0.2173, 0.2240, 0.2824, 0.2763];
pub const FAIR_BASE_TAU: [f64; 4] = [1.0e6, 394.4, 36.54, 4.304];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairLiteParams {
    pub a: [f64; 4],
    pub tau: [f64; 4],
    pub alpha0: f64,
    pub f2x: f64,
    pub c_heat: f64,
    pub t_feedback: f64,
}

impl FairLiteParams {
    /// Validates and renormalizes the reservoir fractions to sum to one.
    pub fn new(a: [f64; 4], tau: [f64; 4], alpha0: f64, f2x: f64, c_heat: f64, t_feedback: f64) -> Result<Self> {
        let all = a.iter().chain(&tau).chain([&alpha0, &f2x, &c_heat, &t_feedback]);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(MineError::InvalidInput("non-finite FaIR-lite parameter".into()));
        }
        if a.iter().any(|&v| v < 0.0) {
            return Err(MineError::InvalidInput("reservoir fractions must be nonnegative".into()));
        }
        let total: f64 = a.iter().sum();
        if !(total > 0.0) {
            return Err(MineError::InvalidInput("reservoir fractions sum to zero".into()));
        }
        if tau.iter().any(|&t| !(t > 0.0)) || !(c_heat > 0.0) || !(alpha0 > 0.0) {
            return Err(MineError::InvalidInput(
                "lifetimes, heat capacity and alpha0 must be positive".into(),
            ));
        }
        let mut a = a.map(|v| v / total);
        // Push the rounding residue into the largest entry so the sum is 1.
        let residue = 1.0 - a.iter().sum::<f64>();
        let imax = (0..4).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap_or(0);
        a[imax] += residue;
        Ok(Self { a, tau, alpha0, f2x, c_heat, t_feedback })
    }

    /// Map a calibration vector
    /// `[alpha0, tau_scale, f2x, t_feedback, c_heat, geo_weight]` onto parameters.
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.len() != FAIRLITE_THETA_DIM {
            return Err(MineError::shape(format!(
                "FaIR-lite expects {FAIRLITE_THETA_DIM} parameters, got {}",
                theta.len()
            )));
        }
        let [alpha0, tau_scale, f2x, t_feedback, c_heat, geo_weight] =
            <[f64; 6]>::try_from(theta).expect("length checked");
        let mut a = FAIR_BASE_FRACTIONS;
        a[0] *= geo_weight;
        let tau = FAIR_BASE_TAU.map(|t| t * tau_scale);
        Self::new(a, tau, alpha0, f2x, c_heat, t_feedback)
    }

    pub fn alpha(&self, temperature: f64) -> f64 {
        self.alpha0 * (ALPHA_KAPPA * temperature).exp()
    }
}

pub const FAIRLITE_THETA_DIM: usize = 6;
pub const FAIRLITE_THETA_NAMES: [&str; 6] =
    ["alpha0", "tau_scale", "f2x", "t_feedback", "c_heat", "geo_weight"];

/// Reservoir and temperature tendencies: `[dR_1..dR_4, dT]`.
pub fn fairlite_rhs(state: &[f64; 5], emission: f64, params: &FairLiteParams) -> Result<[f64; 5]> {
    check_finite(state, "FaIR-lite state")?;
    if !emission.is_finite() {
        return Err(MineError::InvalidInput("non-finite emission".into()));
    }
    let temperature = state[4];
    let alpha = params.alpha(temperature);
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MineError::NumericDomain(format!("alpha(T) = {alpha} at T = {temperature}")));
    }
    let mut out = [0.0; 5];
    let mut carbon = 0.0;
    for i in 0..4 {
        out[i] = params.a[i] * emission - state[i] / (alpha * params.tau[i]);
        carbon += state[i];
    }
    let ratio = 1.0 + carbon / PREINDUSTRIAL_CARBON;
    if !(ratio > 0.0) {
        return Err(MineError::NumericDomain(format!(
            "atmospheric carbon {carbon} below the pre-industrial floor"
        )));
    }
    let forcing = params.f2x * ratio.log2();
    out[4] = (forcing - params.t_feedback * temperature) / params.c_heat;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MineError::NumericDomain("FaIR-lite tendency overflow".into()));
    }
    Ok(out)
}

/// Piecewise-linear emission pathway relative to the base-year level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: usize,
    pub name: String,
    /// Relative growth per year (fraction of E0) on each segment.
    pub slopes: Vec<f64>,
    /// Segment boundaries in years; `boundaries[0]` is the base year.
    pub boundaries: Vec<f64>,
}

impl ScenarioSpec {
    pub fn base_year(&self) -> f64 {
        self.boundaries[0]
    }

    /// `E(t) = E0 * (1 + sum_k slope_k * overlap(t, segment_k))`, flat after the last boundary.
    pub fn emission_at(&self, e0: f64, t: f64) -> f64 {
        let mut rel = 0.0;
        for (k, slope) in self.slopes.iter().enumerate() {
            let (lo, hi) = (self.boundaries[k], self.boundaries[k + 1]);
            let span = (t.min(hi) - lo).max(0.0);
            rel += slope * span;
        }
        e0 * (1.0 + rel)
    }

    fn validate(&self) -> Result<()> {
        if self.boundaries.len() != self.slopes.len() + 1 {
            return Err(MineError::Config(format!(
                "scenario {}: {} slopes need {} boundaries",
                self.id,
                self.slopes.len(),
                self.slopes.len() + 1
            )));
        }
        if self.boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MineError::Config(format!("scenario {}: boundaries must increase", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<ScenarioSpec>,
}

impl Default for ScenarioSet {
    fn default() -> Self {
        let boundaries = vec![2005.0, 2030.0, 2060.0, 2100.0];
        let table: [(&str, [f64; 3]); 5] = [
            ("low", [-0.005, -0.015, -0.005]),
            ("mid-low", [0.0, -0.01, -0.005]),
            ("middle", [0.01, 0.0, -0.005]),
            ("high", [0.02, 0.01, 0.0]),
            ("very-high", [0.03, 0.02, 0.01]),
        ];
        let scenarios = table
            .iter()
            .enumerate()
            .map(|(id, (name, slopes))| ScenarioSpec {
                id,
                name: name.to_string(),
                slopes: slopes.to_vec(),
                boundaries: boundaries.clone(),
            })
            .collect();
        Self { scenarios }
    }
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&ScenarioSpec> {
        let spec = self
            .scenarios
            .get(id)
            .ok_or_else(|| MineError::Config(format!("unknown scenario id {id}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Emission series for scenario `id` on a uniform grid starting at the base year.
pub fn scenario_pathway(set: &ScenarioSet, id: usize, e0: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    let spec = set.get(id)?;
    if let Some(&first) = t_grid.first() {
        if first != spec.base_year() {
            return Err(MineError::InvalidInput(format!(
                "grid starts at {first}, scenario base year is {}",
                spec.base_year()
            )));
        }
    }
    if t_grid.len() > 2 {
        let step = t_grid[1] - t_grid[0];
        let uniform = t_grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
        if !(step > 0.0) || !uniform {
            return Err(MineError::InvalidInput("emission grid must be uniform and increasing".into()));
        }
    }
    Ok(t_grid.iter().map(|&t| spec.emission_at(e0, t)).collect())
}

/// FaIR-lite driver: a historical spin-up with a linear emission ramp, then a
/// scenario projection from the base year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairLiteSimulator {
    pub hist_start: f64,
    pub base_year: f64,
    pub end_year: f64,
    pub hist_emission_start: f64,
    pub hist_emission_end: f64,
    pub scenarios: ScenarioSet,
}

impl Default for FairLiteSimulator {
    fn default() -> Self {
        Self {
            hist_start: 1900.0,
            base_year: 2005.0,
            end_year: 2100.0,
            hist_emission_start: 0.5,
            hist_emission_end: 9.0,
            scenarios: ScenarioSet::default(),
        }
    }
}

impl FairLiteSimulator {
    pub fn hist_steps(&self) -> usize {
        (self.base_year - self.hist_start).round() as usize
    }

    pub fn projection_steps(&self) -> usize {
        (self.end_year - self.base_year).round() as usize
    }

    fn hist_emission(&self, t: f64) -> f64 {
        let frac = (t - self.hist_start) / (self.base_year - self.hist_start);
        self.hist_emission_start + frac * (self.hist_emission_end - self.hist_emission_start)
    }

    /// Annual spin-up from a zero anomaly state; all five state columns.
    pub fn historical(&self, params: &FairLiteParams) -> Result<Trajectory> {
        integrate(
            |t, x, dx| {
                let s: &[f64; 5] = x.try_into().expect("five states");
                dx.copy_from_slice(&fairlite_rhs(s, self.hist_emission(t), params)?);
                Ok(())
            },
            &[0.0; 5],
            self.hist_start,
            1.0,
            self.hist_steps(),
        )
    }

    /// Projection from the base year to the end year under scenario `id`
    /// with base-year emissions `e0`; all five state columns.
    pub fn project(&self, params: &FairLiteParams, id: usize, e0: f64) -> Result<Trajectory> {
        let spec = self.scenarios.get(id)?;
        let hist = self.historical(params)?;
        integrate(
            |t, x, dx| {
                let s: &[f64; 5] = x.try_into().expect("five states");
                dx.copy_from_slice(&fairlite_rhs(s, spec.emission_at(e0, t), params)?);
                Ok(())
            },
            hist.last(),
            self.base_year,
            1.0,
            self.projection_steps(),
        )
    }

    /// Temperature pathway over the projection years.
    pub fn temperature_path(&self, theta: &[f64], id: usize, e0: f64) -> Result<Vec<f64>> {
        let params = FairLiteParams::from_theta(theta)?;
        Ok(self.project(&params, id, e0)?.column(4))
    }

    /// Temperature in the final projection year.
    pub fn horizon_temperature(&self, theta: &[f64], id: usize, e0: f64) -> Result<f64> {
        let params = FairLiteParams::from_theta(theta)?;
        Ok(self.project(&params, id, e0)?.last()[4])
    }
}

pub const FAIRLITE_STATE_NAMES: [&str; 5] = ["R1", "R2", "R3", "R4", "T"];

pub fn default_fairlite_theta() -> [f64; 6] {
    [0.5, 1.0, 3.7, 1.2, 8.0, 1.0]
}
