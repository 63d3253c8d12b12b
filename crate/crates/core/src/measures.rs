//! Empirical measures, exact Wasserstein-2 distances and the risk-shift
//! bound machinery.
//!
//! All transport here is between uniform empirical measures. In one dimension
//! the monotone (sorted) coupling is optimal for any sample sizes; in higher
//! dimensions equal-size measures are matched with an exact O(n^3)
//! shortest-augmenting-path assignment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};

/// Largest equal-size instance accepted by [`w2_assignment`].
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

const WEIGHT_TOL: f64 = 1e-12;

/// Weighted point cloud; `points` is row-major `n x dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 || points.is_empty() {
            return Err(MineError::shape(format!(
                "{} coordinates do not form rows of width {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        Self::weighted(points, dim, vec![1.0 / n as f64; n])
    }

    pub fn weighted(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != weights.len() * dim {
            return Err(MineError::shape("points and weights disagree on atom count"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(MineError::InvalidInput("non-finite atom".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(MineError::InvalidInput("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MineError::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// A single atom at `point`.
    pub fn dirac(point: &[f64]) -> Self {
        Self { dim: point.len(), points: point.to_vec(), weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= WEIGHT_TOL)
    }

    /// Every atom repeated `k` times; same law, `k` times as many atoms.
    pub fn replicate(&self, k: usize) -> Self {
        let points = self.points.repeat(k);
        let n = self.len() * k;
        Self { dim: self.dim, points, weights: vec![1.0 / n as f64; n] }
    }
}

/// Source of weighted atoms, possibly implicit (product measures).
pub trait AtomSource {
    fn dim(&self) -> usize;
    fn atom_count(&self) -> usize;
    fn for_each_atom(&self, f: &mut dyn FnMut(usize, &[f64], f64) -> Result<()>) -> Result<()>;

    /// `E ||u||^2`.
    fn second_moment(&self) -> f64 {
        let mut m = 0.0;
        self.for_each_atom(&mut |_, u, w| {
            m += w * u.iter().map(|v| v * v).sum::<f64>();
            Ok(())
        })
        .expect("moment accumulation does not fail");
        m
    }
}

impl AtomSource for EmpiricalMeasure {
    fn dim(&self) -> usize {
        self.dim
    }

    fn atom_count(&self) -> usize {
        self.len()
    }

    fn for_each_atom(&self, f: &mut dyn FnMut(usize, &[f64], f64) -> Result<()>) -> Result<()> {
        for i in 0..self.len() {
            f(i, self.atom(i), self.weights[i])?;
        }
        Ok(())
    }
}

/// `rho ⊗ pi` on `X × Θ`, enumerated without materializing all pairs.
#[derive(Clone, Copy, Debug)]
pub struct ProductMeasure<'a> {
    pub rho: &'a EmpiricalMeasure,
    pub pi: &'a EmpiricalMeasure,
}

impl AtomSource for ProductMeasure<'_> {
    fn dim(&self) -> usize {
        self.rho.dim + self.pi.dim
    }

    fn atom_count(&self) -> usize {
        self.rho.len() * self.pi.len()
    }

    fn for_each_atom(&self, f: &mut dyn FnMut(usize, &[f64], f64) -> Result<()>) -> Result<()> {
        let mut u = vec![0.0; self.dim()];
        let p = self.rho.dim;
        for i in 0..self.rho.len() {
            u[..p].copy_from_slice(self.rho.atom(i));
            for j in 0..self.pi.len() {
                u[p..].copy_from_slice(self.pi.atom(j));
                f(i * self.pi.len() + j, &u, self.rho.weights[i] * self.pi.weights[j])?;
            }
        }
        Ok(())
    }

    fn second_moment(&self) -> f64 {
        self.rho.second_moment() + self.pi.second_moment()
    }
}

/// Materialize `rho ⊗ pi` with atoms ordered `(x_i, θ_j)`, `i` major.
pub fn product_measure(rho: &EmpiricalMeasure, pi: &EmpiricalMeasure) -> EmpiricalMeasure {
    let prod = ProductMeasure { rho, pi };
    let mut points = Vec::with_capacity(prod.atom_count() * prod.dim());
    let mut weights = Vec::with_capacity(prod.atom_count());
    prod.for_each_atom(&mut |_, u, w| {
        points.extend_from_slice(u);
        weights.push(w);
        Ok(())
    })
    .expect("enumeration does not fail");
    EmpiricalMeasure { dim: prod.dim(), points, weights }
}

/// W2 between two equal-size 1-D samples via the sorted coupling.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MineError::shape(format!("sample sizes {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(MineError::shape("empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// W2 between uniform 1-D samples of arbitrary sizes, integrating the
/// squared difference of the two quantile functions exactly.
pub fn w2_1d_uniform(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MineError::shape("empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    // Walk the merged breakpoints i/n and j/m using integer arithmetic
    // (k/(n*m)) so interval lengths are exact.
    let (step_a, step_b) = (m as u128, n as u128);
    let total = (n as u128) * (m as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, mut next_a, mut next_b) = (0u128, step_a, step_b);
    let mut acc = 0.0;
    while pos < total {
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += d * d * ((next - pos) as f64);
        pos = next;
        if next_a == pos {
            i += 1;
            next_a += step_a;
        }
        if next_b == pos {
            j += 1;
            next_b += step_b;
        }
    }
    Ok((acc / total as f64).sqrt())
}

/// Exact minimum-cost perfect matching on a square cost matrix (row-major).
///
/// Returns `assign` with row `i` matched to column `assign[i]`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(MineError::shape("cost matrix is not square"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(MineError::InvalidInput("non-finite assignment cost".into()));
    }
    // Potentials u (rows) and v (columns); p[j] = row matched to column j, 1-based.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    Ok(assign)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact W2 between equal-size point sets (`n x dim`, uniform weights).
pub fn w2_assignment_points(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || a.len() != b.len() || a.len() % dim != 0 || a.is_empty() {
        return Err(MineError::shape("point sets must have equal, nonzero size and common width"));
    }
    let n = a.len() / dim;
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(MineError::Capacity { n, max: MAX_ASSIGNMENT_SIZE });
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim]);
        }
    }
    let assign = solve_assignment(&cost, n)?;
    // Summing sorted matched costs makes the value independent of argument order.
    let mut matched: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    Ok((total / n as f64).sqrt())
}

pub fn w2_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim != b.dim || a.len() != b.len() {
        return Err(MineError::shape("measures must share dimension and atom count"));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(MineError::InvalidInput("assignment W2 needs uniform weights".into()));
    }
    w2_assignment_points(&a.points, &b.points, a.dim)
}

/// Exact W2 between uniform measures: sorted coupling in 1-D, assignment otherwise.
pub fn w2_uniform(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim != b.dim {
        return Err(MineError::shape("measures live in different spaces"));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(MineError::InvalidInput("W2 here needs uniform weights".into()));
    }
    if a.dim == 1 {
        w2_1d_uniform(&a.points, &b.points)
    } else {
        w2_assignment(a, b)
    }
}

/// W2 of the joint laws `rho ⊗ pi` and `rho ⊗ pi_hat`, alongside W2 of the
/// parameter marginals. The two agree for product measures with a common
/// `X`-marginal.
pub fn product_reduction_check(
    rho: &EmpiricalMeasure,
    pi: &EmpiricalMeasure,
    pi_hat: &EmpiricalMeasure,
) -> Result<(f64, f64)> {
    if pi.len() != pi_hat.len() || pi.dim != pi_hat.dim {
        return Err(MineError::shape("pi and pi_hat must have equal size and dimension"));
    }
    let joint_a = product_measure(rho, pi);
    let joint_b = product_measure(rho, pi_hat);
    let w2_joint = w2_assignment(&joint_a, &joint_b)?;
    let w2_theta = w2_assignment(pi, pi_hat)?;
    Ok((w2_joint, w2_theta))
}

/// Lipschitz data for the forward model `F` and the emulator class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    /// Lipschitz modulus of the forward model.
    pub l: f64,
    /// Lipschitz bound on every emulator in the class.
    pub r: f64,
    /// Bound on `||E(0)||` over the class.
    pub b: f64,
    /// `||F(0)||`.
    pub f0: f64,
}

impl LipschitzBundle {
    pub fn c1(&self) -> f64 {
        self.l + self.r
    }

    pub fn c2(&self) -> f64 {
        self.f0 + self.b
    }
}

/// `c(mu_a, mu_b) = C1^2 sqrt(2 (E_a||u||^2 + E_b||u||^2)) + 2 C1 C2`.
pub fn shift_constant_c(mu_a: &dyn AtomSource, mu_b: &dyn AtomSource, lip: &LipschitzBundle) -> f64 {
    let c1 = lip.c1();
    c1 * c1 * (2.0 * (mu_a.second_moment() + mu_b.second_moment())).sqrt() + 2.0 * c1 * lip.c2()
}

pub type VectorMap<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a;

/// `E_mu ||F(u) - E(u)||^2`.
pub fn empirical_risk(emulator: &VectorMap<'_>, forward: &VectorMap<'_>, mu: &dyn AtomSource) -> Result<f64> {
    let mut risk = 0.0;
    mu.for_each_atom(&mut |i, u, w| {
        let wrap = |e: MineError| MineError::AtomEvaluation { index: i, reason: e.to_string() };
        let f = forward(u).map_err(wrap)?;
        let e = emulator(u).map_err(wrap)?;
        if f.len() != e.len() {
            return Err(MineError::AtomEvaluation { index: i, reason: "output widths differ".into() });
        }
        risk += w * sq_dist(&f, &e);
        Ok(())
    })?;
    Ok(risk)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub risk_nu: f64,
    pub risk_nu_dep: f64,
    pub w2: f64,
    pub c_const: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn is_valid(&self) -> bool {
        self.slack >= -BOUND_TOL
    }
}

pub const BOUND_TOL: f64 = 1e-9;

/// Check `R_dep(E) <= R_train(E) + c(train, dep) W2(train, dep)`.
///
/// `lip` must hold true upper bounds for `forward` and `emulator`; a negative
/// slack beyond tolerance is reported as an error.
pub fn verify_shift_bound(
    emulator: &VectorMap<'_>,
    forward: &VectorMap<'_>,
    mu_train: &EmpiricalMeasure,
    mu_dep: &EmpiricalMeasure,
    lip: &LipschitzBundle,
) -> Result<BoundReport> {
    let risk_nu = empirical_risk(emulator, forward, mu_train)?;
    let risk_nu_dep = empirical_risk(emulator, forward, mu_dep)?;
    let w2 = w2_uniform(mu_train, mu_dep)?;
    let c_const = shift_constant_c(mu_train, mu_dep, lip);
    let lhs = risk_nu_dep;
    let rhs = risk_nu + c_const * w2;
    let report = BoundReport { risk_nu, risk_nu_dep, w2, c_const, lhs, rhs, slack: rhs - lhs };
    if report.is_valid() {
        Ok(report)
    } else {
        Err(MineError::BoundViolation { slack: report.slack })
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Upper bound on the Lipschitz modulus of a ReLU network: the product of the
/// layer spectral norms (ReLU is 1-Lipschitz). Conservative, never an underestimate.
pub fn relu_net_lipschitz_upper(weights: &[DMatrix<f64>]) -> f64 {
    weights.iter().map(spectral_norm).product()
}

/// Affine map `u -> W u + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (&self.weight * DVector::from_column_slice(u) + &self.bias).iter().copied().collect()
    }

    pub fn lipschitz(&self) -> f64 {
        spectral_norm(&self.weight)
    }

    pub fn norm_at_zero(&self) -> f64 {
        self.bias.norm()
    }
}

/// Weighted least-squares affine fit of `forward` over the atoms of `mu`.
///
/// This realizes the infimum over the affine hypothesis class in closed form.
pub fn fit_affine(mu: &dyn AtomSource, forward: &VectorMap<'_>) -> Result<AffineMap> {
    let p = mu.dim() + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross: Option<DMatrix<f64>> = None;
    let mut z = vec![0.0; p];
    mu.for_each_atom(&mut |i, u, w| {
        let y = forward(u).map_err(|e| MineError::AtomEvaluation { index: i, reason: e.to_string() })?;
        z[..p - 1].copy_from_slice(u);
        z[p - 1] = 1.0;
        let cross = cross.get_or_insert_with(|| DMatrix::zeros(p, y.len()));
        for a in 0..p {
            let wa = w * z[a];
            for b in 0..=a {
                gram[(a, b)] += wa * z[b];
            }
            for (k, yk) in y.iter().enumerate() {
                cross[(a, k)] += wa * yk;
            }
        }
        Ok(())
    })?;
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let cross = cross.ok_or_else(|| MineError::InvalidInput("cannot fit on an empty measure".into()))?;
    let svd = gram.svd(true, true);
    let coef = svd
        .solve(&cross, 1e-13)
        .map_err(|e| MineError::NumericDomain(format!("least squares failed: {e}")))?;
    let weight = coef.rows(0, p - 1).transpose();
    let bias = coef.row(p - 1).transpose();
    Ok(AffineMap { weight, bias })
}

fn best_affine_risk(mu: &dyn AtomSource, forward: &VectorMap<'_>) -> Result<(AffineMap, f64)> {
    let fit = fit_affine(mu, forward)?;
    let emu = |u: &[f64]| -> Result<Vec<f64>> { Ok(fit.apply(u)) };
    let risk = empirical_risk(&emu, forward, mu)?;
    Ok((fit, risk))
}

/// Forward map with a known Lipschitz modulus and value at the origin.
pub struct LipschitzForward<'a> {
    pub map: &'a VectorMap<'a>,
    pub lipschitz: f64,
    pub norm_at_zero: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteChainRow {
    pub n: usize,
    pub w2: f64,
    pub j_hat: f64,
    pub j_star: f64,
    pub gap: f64,
    pub bound: f64,
    pub c_const: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteChainReport {
    pub rows: Vec<FiniteChainRow>,
    pub lipschitz: LipschitzBundle,
    pub passed: bool,
}

impl FiniteChainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,w2,J_hat,J_star,gap,bound\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.n,
                crate::io::fmt_f64(r.w2),
                crate::io::fmt_f64(r.j_hat),
                crate::io::fmt_f64(r.j_star),
                crate::io::fmt_f64(r.gap),
                crate::io::fmt_f64(r.bound)
            ));
        }
        out
    }
}

/// Finite-chain bound objective check.
///
/// The deployment law is `ν = rho ⊗ pi_ref`; for each `N` the training law is
/// `ν̂_N = rho ⊗ π̂_N` with `π̂_N` the first `N` rows of `chain`. The
/// hypothesis class is affine maps whose Lipschitz modulus and offset are
/// bounded by the largest values among the fitted minimizers, so every
/// infimum is attained by least squares. Each row asserts
/// `0 <= J(ν̂_N) - J(ν) <= 2 c(ν̂_N, ν) W2(π̂_N, π)` to within `BOUND_TOL`.
pub fn finite_chain_experiment(
    pi_ref: &EmpiricalMeasure,
    chain: &[f64],
    rho: &EmpiricalMeasure,
    forward: &LipschitzForward<'_>,
    ns: &[usize],
) -> Result<FiniteChainReport> {
    let d = pi_ref.dim;
    if chain.len() % d != 0 {
        return Err(MineError::shape("chain rows do not match parameter dimension"));
    }
    let chain_len = chain.len() / d;
    if let Some(&bad) = ns.iter().find(|&&n| n == 0 || n > chain_len) {
        return Err(MineError::Config(format!("N = {bad} outside 1..={chain_len}")));
    }

    let nu = ProductMeasure { rho, pi: pi_ref };
    let (fit_star, risk_star) = best_affine_risk(&nu, forward.map)?;

    let mut fits = Vec::with_capacity(ns.len());
    for &n in ns {
        let pi_hat = EmpiricalMeasure::uniform(chain[..n * d].to_vec(), d)?;
        let nu_hat = ProductMeasure { rho, pi: &pi_hat };
        let (fit, risk) = best_affine_risk(&nu_hat, forward.map)?;
        let w2 = w2_uniform(&pi_hat, pi_ref)?;
        fits.push((n, pi_hat, fit, risk, w2));
    }

    let r = fits.iter().map(|f| f.2.lipschitz()).fold(fit_star.lipschitz(), f64::max);
    let b = fits.iter().map(|f| f.2.norm_at_zero()).fold(fit_star.norm_at_zero(), f64::max);
    let lip = LipschitzBundle { l: forward.lipschitz, r, b, f0: forward.norm_at_zero };

    let mut rows = Vec::with_capacity(fits.len());
    for (n, pi_hat, _, risk, w2) in &fits {
        let nu_hat = ProductMeasure { rho, pi: pi_hat };
        let c = shift_constant_c(&nu_hat, &nu, &lip);
        let j_hat = risk + c * w2;
        let gap = j_hat - risk_star;
        let bound = 2.0 * c * w2;
        if gap < -BOUND_TOL {
            return Err(MineError::TheoremCheck { n: *n, detail: format!("negative gap {gap:e}") });
        }
        if gap > bound + BOUND_TOL {
            return Err(MineError::TheoremCheck { n: *n, detail: format!("gap {gap:e} exceeds bound {bound:e}") });
        }
        rows.push(FiniteChainRow { n: *n, w2: *w2, j_hat, j_star: risk_star, gap, bound, c_const: c });
    }
    Ok(FiniteChainReport { rows, lipschitz: lip, passed: true })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub j_mix: f64,
    pub j_single: Vec<f64>,
    pub w2_to_mix: Vec<f64>,
    pub bounds: Vec<f64>,
    pub passed: bool,
}

/// Mixture optimality: training on the equal-weight mixture of scenario laws
/// minimizes the bound objective with the mixture as deployment law.
///
/// All scenario measures must be uniform with the same atom count.
pub fn mixture_bound_check(scenarios: &[EmpiricalMeasure], forward: &LipschitzForward<'_>) -> Result<MixtureReport> {
    let k = scenarios.len();
    let first = scenarios.first().ok_or_else(|| MineError::InvalidInput("no scenario laws".into()))?;
    if scenarios.iter().any(|s| s.len() != first.len() || s.dim != first.dim || !s.is_uniform()) {
        return Err(MineError::shape("scenario laws must be uniform with equal size and dimension"));
    }
    let mix_points: Vec<f64> = scenarios.iter().flat_map(|s| s.points.iter().copied()).collect();
    let mix = EmpiricalMeasure::uniform(mix_points, first.dim)?;
    let (fit_mix, j_mix) = best_affine_risk(&mix, forward.map)?;

    let mut fits = Vec::with_capacity(k);
    for s in scenarios {
        let (fit, risk) = best_affine_risk(s, forward.map)?;
        let w2 = w2_uniform(&s.replicate(k), &mix)?;
        fits.push((fit, risk, w2));
    }
    let r = fits.iter().map(|f| f.0.lipschitz()).fold(fit_mix.lipschitz(), f64::max);
    let b = fits.iter().map(|f| f.0.norm_at_zero()).fold(fit_mix.norm_at_zero(), f64::max);
    let lip = LipschitzBundle { l: forward.lipschitz, r, b, f0: forward.norm_at_zero };

    let mut j_single = Vec::with_capacity(k);
    let mut w2_to_mix = Vec::with_capacity(k);
    let mut bounds = Vec::with_capacity(k);
    let mut passed = true;
    for (s, (_, risk, w2)) in scenarios.iter().zip(&fits) {
        let c = shift_constant_c(s, &mix, &lip);
        let j = risk + c * w2;
        passed &= j_mix <= j + BOUND_TOL && j - j_mix <= 2.0 * c * w2 + BOUND_TOL;
        j_single.push(j);
        w2_to_mix.push(*w2);
        bounds.push(2.0 * c * w2);
    }
    Ok(MixtureReport { j_mix, j_single, w2_to_mix, bounds, passed })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
