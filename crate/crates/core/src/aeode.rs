//! AEODE trajectory emulator: an encoder maps `(x0, θ)` to a latent initial
//! condition, learnable sinusoidal time features spread it over the grid, a
//! single attention block mixes time points, and a decoder maps every latent
//! row back to state space. The whole grid comes out of one forward pass.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{MineError, Result};
use crate::mcmc::Chain;
use crate::metrics::{regression_metrics, MetricReport};
use crate::nn::{aeode_loss, gemm, Adam, AttentionBlock, Bound, DenseLayer, Graph, Mlp, ModelWeights, ParamStore, Tensor, TimeEmbedding, Var};
use crate::odes::Trajectory;
use crate::quantile::{quantile_type7, MinMaxScaler};
use crate::rng::{seeded, MineRng};

/// Architecture switches for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub time_embed: bool,
    pub attention: bool,
    /// Derivative and species-sum loss terms.
    pub physics_loss: bool,
    /// Residual linear latent update per grid step instead of repeating `z0`.
    pub latent_stepper: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::full()
    }
}

impl Toggles {
    pub fn full() -> Self {
        Self { time_embed: true, attention: true, physics_loss: true, latent_stepper: false }
    }

    /// Step-by-step latent model with plain MSE.
    pub fn baseline() -> Self {
        Self { time_embed: false, attention: false, physics_loss: false, latent_stepper: true }
    }

    pub fn all_off() -> Self {
        Self { time_embed: false, attention: false, physics_loss: false, latent_stepper: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeodeTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    /// Fraction of training samples circularly shifted in time per batch.
    pub roll_prob: f64,
    pub eval_every: usize,
    /// Cosine decay from `lr` down to `lr * lr_floor` over `iters`; 1 keeps it constant.
    pub lr_floor: f64,
}

impl Default for AeodeTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch: 4096, iters: 10_000, seed: 0, roll_prob: 0.0, eval_every: 250, lr_floor: 0.01 }
    }
}

impl AeodeTrainConfig {
    pub fn lr_at(&self, iter: usize) -> f64 {
        let frac = if self.iters > 1 { iter as f64 / (self.iters - 1) as f64 } else { 0.0 };
        let floor = self.lr * self.lr_floor;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeodeConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Number of frequencies; the latent width is `2 L`.
    pub frequencies: usize,
    pub toggles: Toggles,
    pub alphas: [f64; 5],
    pub train: AeodeTrainConfig,
}

impl Default for AeodeConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            frequencies: 16,
            toggles: Toggles::full(),
            alphas: [1.0, 10.0, 10.0, 1.0, 0.001],
            train: AeodeTrainConfig::default(),
        }
    }
}

impl AeodeConfig {
    pub fn latent_dim(&self) -> usize {
        2 * self.frequencies
    }

    /// Loss weights after the physics toggle.
    pub fn effective_alphas(&self) -> [f64; 5] {
        let a = self.alphas;
        if self.toggles.physics_loss {
            a
        } else {
            [a[0], 0.0, 0.0, a[3], 0.0]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies == 0 {
            return Err(MineError::Config("frequencies must be at least 1".into()));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(MineError::Config(format!("loss weights must be nonnegative: {:?}", self.alphas)));
        }
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch == 0 || t.eval_every == 0 || !(0.0..=1.0).contains(&t.roll_prob) || !(0.0..=1.0).contains(&t.lr_floor) {
            return Err(MineError::Config("invalid training settings".into()));
        }
        Ok(())
    }
}

/// Inputs min-max scaled to `[-1, 1]`; states divided by the training maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeodeNormalizer {
    pub input: MinMaxScaler,
    pub state_scale: f64,
}

impl AeodeNormalizer {
    pub fn normalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.state_scale).collect()
    }

    pub fn denormalize_state(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| v * self.state_scale).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AeodeArchitecture {
    kind: String,
    config: AeodeConfig,
    input_width: usize,
    state_width: usize,
    x0_width: usize,
    grid: Vec<f64>,
    norm: AeodeNormalizer,
    has_attention: bool,
    has_embed: bool,
    has_stepper: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeodeModel {
    pub config: AeodeConfig,
    pub input_width: usize,
    pub state_width: usize,
    /// Leading input features that are not parameters.
    pub x0_width: usize,
    /// Absolute times of the trained grid.
    pub grid: Vec<f64>,
    pub norm: AeodeNormalizer,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub embed: Option<TimeEmbedding>,
    pub attention: Option<AttentionBlock>,
    pub stepper: Option<DenseLayer>,
}

fn relative_times(grid: &[f64]) -> Vec<f64> {
    let t0 = grid.first().copied().unwrap_or(0.0);
    grid.iter().map(|t| t - t0).collect()
}

fn grid_step(grid: &[f64]) -> f64 {
    if grid.len() > 1 {
        grid[1] - grid[0]
    } else {
        1.0
    }
}

impl AeodeModel {
    /// Fresh weights. Parameters exist only for the enabled modules.
    pub fn new(
        config: AeodeConfig,
        input_width: usize,
        x0_width: usize,
        state_width: usize,
        grid: Vec<f64>,
        norm: AeodeNormalizer,
        rng: &mut MineRng,
    ) -> Result<Self> {
        config.validate()?;
        if grid.is_empty() || state_width == 0 || input_width == 0 || x0_width > input_width {
            return Err(MineError::shape("empty grid, state or input"));
        }
        let d = config.latent_dim();
        let mut store = ParamStore::default();
        let mut enc_w = vec![input_width];
        enc_w.extend(&config.encoder_hidden);
        enc_w.push(d);
        let encoder = Mlp::new(&mut store, "encoder", &enc_w, rng);
        let embed = if config.toggles.time_embed {
            let dt = grid_step(&grid);
            let span = (grid.len() - 1) as f64 * dt;
            let (lo, hi) = if span > 0.0 { (1.0 / (2.0 * span), 4.0 / dt) } else { (1.0, 1.0) };
            Some(TimeEmbedding::new(&mut store, "embed", config.frequencies, lo, hi)?)
        } else {
            None
        };
        let attention = config.toggles.attention.then(|| AttentionBlock::new(&mut store, "attention", d, rng));
        let stepper = config.toggles.latent_stepper.then(|| DenseLayer::new(&mut store, "stepper", d, d, rng));
        let mut dec_w = vec![d];
        dec_w.extend(&config.decoder_hidden);
        dec_w.push(state_width);
        let decoder = Mlp::new(&mut store, "decoder", &dec_w, rng);
        Ok(Self { config, input_width, state_width, x0_width, grid, norm, store, encoder, decoder, embed, attention, stepper })
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    /// Latent trajectory and decoded outputs for `b` stacked inputs.
    fn forward_graph(&self, g: &mut Graph, p: &Bound, enc_in: Var, b: usize, times: &[f64]) -> Result<(Var, Var)> {
        let t1 = times.len();
        let tg = &self.config.toggles;
        let z0 = self.encoder.forward(g, p, enc_in)?;
        let mut z = match (&self.stepper, tg.latent_stepper) {
            (Some(step), true) => {
                let mut states = vec![z0];
                for _ in 1..t1 {
                    let last = *states.last().expect("nonempty");
                    let h = step.forward(g, p, last)?;
                    states.push(g.add(last, h)?);
                }
                g.interleave(&states)?
            }
            _ => g.repeat_rows(z0, t1),
        };
        if let (Some(emb), true) = (&self.embed, tg.time_embed) {
            let e = emb.forward(g, p, times)?;
            let e = g.tile_rows(e, b);
            z = g.add(z, e)?;
        }
        if let (Some(att), true) = (&self.attention, tg.attention) {
            z = att.forward(g, p, z, t1)?;
        }
        let pred = self.decoder.forward(g, p, z)?;
        let recon0 = self.decoder.forward(g, p, z0)?;
        Ok((pred, recon0))
    }

    fn encode_inputs(&self, features: &[&[f64]]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(features.len() * self.input_width);
        for f in features {
            if f.len() != self.input_width {
                return Err(MineError::shape(format!("{} input features, model expects {}", f.len(), self.input_width)));
            }
            data.extend(self.norm.input.transform(f));
        }
        Tensor::from_vec(features.len(), self.input_width, data)
    }

    /// Normalized predictions for normalized inputs; `rows x state_width` per input.
    fn predict_normalized(&self, enc: Tensor) -> Result<Tensor> {
        let times = relative_times(&self.grid);
        let data = self.infer(&enc, &times);
        Tensor::from_vec(enc.rows * times.len(), self.state_width, data)
    }

    /// Graph-free batched forward pass. While the latent is `z0 + λ(t)`, the
    /// linear maps are applied to the two parts separately and summed.
    fn infer(&self, enc: &Tensor, times: &[f64]) -> Vec<f64> {
        let b = enc.rows;
        let t1 = times.len();
        let d = self.config.latent_dim();
        let tg = &self.config.toggles;
        let z0 = mlp_rows(&self.encoder, &self.store, &enc.data, b, 0);
        let lam = match (&self.embed, tg.time_embed) {
            (Some(emb), true) => embed_rows(&self.store.get(emb.omega).data, times),
            _ => vec![0.0; t1 * d],
        };
        let mut latent = match (&self.stepper, tg.latent_stepper) {
            (Some(step), true) => {
                let (w, bias) = (self.store.get(step.w), self.store.get(step.b));
                let mut full = vec![0.0; b * t1 * d];
                let mut cur = z0.clone();
                for t in 0..t1 {
                    if t > 0 {
                        let mut h = dense(&cur, b, w, bias, false);
                        h.iter_mut().zip(&cur).for_each(|(h, c)| *h += c);
                        cur = h;
                    }
                    for s in 0..b {
                        let dst = &mut full[(s * t1 + t) * d..(s * t1 + t + 1) * d];
                        for ((o, c), l) in dst.iter_mut().zip(&cur[s * d..(s + 1) * d]).zip(&lam[t * d..(t + 1) * d]) {
                            *o = c + l;
                        }
                    }
                }
                Latent::Full(full)
            }
            _ => Latent::Factored { z0, lam },
        };
        let layers = &self.decoder.layers;
        let first = &layers[0];
        let (w, bias) = (self.store.get(first.w), self.store.get(first.b));
        let h = w.cols;
        let attention = self.attention.as_ref().filter(|_| tg.attention);
        if let (Some(att), Latent::Full(_)) = (attention, &latent) {
            latent = Latent::Full(self.attend(att, &latent, b, t1));
        }
        let mut cur = match latent {
            Latent::Full(z) => dense(&z, b * t1, w, bias, false),
            Latent::Factored { z0, lam } if attention.is_some() => {
                self.attend_decode(attention.expect("checked"), &z0, &lam, b, t1, w, bias)
            }
            Latent::Factored { z0, lam } => {
                let a = dense(&z0, b, w, &Tensor::zeros(1, h), false);
                let c = dense(&lam, t1, w, bias, false);
                let mut out = Vec::with_capacity(b * t1 * h);
                for s in 0..b {
                    for t in 0..t1 {
                        out.extend(a[s * h..(s + 1) * h].iter().zip(&c[t * h..(t + 1) * h]).map(|(x, y)| x + y));
                    }
                }
                out
            }
        };
        if layers.len() > 1 {
            cur.iter_mut().for_each(|v| *v = v.max(0.0));
            cur = mlp_rows(&self.decoder, &self.store, &cur, b * t1, 1);
        }
        cur
    }

    /// Attention followed by the first decoder layer for a latent `z0 + λ(t)`.
    /// Score terms constant along a softmax row cancel, leaving
    /// `(Q_z + Q_λ(t)) · K_λ(j)`; the value path passes through the decoder
    /// weights once per time point.
    #[allow(clippy::too_many_arguments)]
    fn attend_decode(&self, att: &AttentionBlock, z0: &[f64], lam: &[f64], b: usize, t1: usize, w: &Tensor, bias: &Tensor) -> Vec<f64> {
        let d = att.d;
        let h = w.cols;
        let (wq, wk, wv) = (self.store.get(att.wq), self.store.get(att.wk), self.store.get(att.wv));
        let zero_d = Tensor::zeros(1, d);
        let zero_h = Tensor::zeros(1, h);
        let qz = dense(z0, b, wq, &zero_d, false);
        let ql = dense(lam, t1, wq, &zero_d, false);
        let kl = dense(lam, t1, wk, &zero_d, false);
        let mut zv = dense(z0, b, wv, &zero_d, false);
        zv.iter_mut().zip(z0).for_each(|(v, z)| *v += z);
        let p = dense(&zv, b, w, &zero_h, false);
        let c = dense(lam, t1, w, bias, false);
        let m = dense(&dense(lam, t1, wv, &zero_d, false), t1, w, &zero_h, false);
        let scale = 1.0 / (d as f64).sqrt();
        let mut shared = vec![0.0; t1 * t1];
        gemm(false, true, t1, d, t1, &ql, &kl, 0.0, &mut shared);
        let mut per = vec![0.0; b * t1];
        gemm(false, true, b, d, t1, &qz, &kl, 0.0, &mut per);
        let mut out = vec![0.0; b * t1 * h];
        let mut a = vec![0.0; t1 * t1];
        for s in 0..b {
            let ps = &per[s * t1..(s + 1) * t1];
            for t in 0..t1 {
                let r = &mut a[t * t1..(t + 1) * t1];
                for j in 0..t1 {
                    r[j] = scale * (ps[j] + shared[t * t1 + j]);
                }
                let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for x in r.iter_mut() {
                    *x = (*x - mx).exp();
                    sum += *x;
                }
                r.iter_mut().for_each(|x| *x /= sum);
            }
            let dst = &mut out[s * t1 * h..(s + 1) * t1 * h];
            let ph = &p[s * h..(s + 1) * h];
            for t in 0..t1 {
                let row = &mut dst[t * h..(t + 1) * h];
                for ((o, x), y) in row.iter_mut().zip(ph).zip(&c[t * h..(t + 1) * h]) {
                    *o = x + y;
                }
                for (j, &aj) in a[t * t1..(t + 1) * t1].iter().enumerate() {
                    for (o, mj) in row.iter_mut().zip(&m[j * h..(j + 1) * h]) {
                        *o += aj * mj;
                    }
                }
            }
        }
        out
    }

    /// Residual block attention over each run of `t1` rows.
    fn attend(&self, att: &AttentionBlock, latent: &Latent, b: usize, t1: usize) -> Vec<f64> {
        let d = att.d;
        let mut wf = Vec::with_capacity(d * 3 * d);
        let (wq, wk, wv) = (self.store.get(att.wq), self.store.get(att.wk), self.store.get(att.wv));
        for r in 0..d {
            wf.extend_from_slice(wq.row(r));
            wf.extend_from_slice(wk.row(r));
            wf.extend_from_slice(wv.row(r));
        }
        let proj = |x: &[f64], rows: usize| {
            let mut out = vec![0.0; rows * 3 * d];
            gemm(false, false, rows, d, 3 * d, x, &wf, 0.0, &mut out);
            out
        };
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = vec![0.0; b * t1 * d];
        let mut q = vec![0.0; t1 * d];
        let mut k = vec![0.0; t1 * d];
        let mut v = vec![0.0; t1 * d];
        let mut scores = vec![0.0; t1 * t1];
        let (pz, pl) = match latent {
            Latent::Factored { z0, lam } => (proj(z0, b), proj(lam, t1)),
            Latent::Full(z) => (proj(z, b * t1), Vec::new()),
        };
        for s in 0..b {
            for t in 0..t1 {
                let row = match latent {
                    Latent::Factored { .. } => {
                        let (a, c) = (&pz[s * 3 * d..(s + 1) * 3 * d], &pl[t * 3 * d..(t + 1) * 3 * d]);
                        (0..3 * d).map(|i| a[i] + c[i]).collect::<Vec<_>>()
                    }
                    Latent::Full(_) => pz[(s * t1 + t) * 3 * d..(s * t1 + t + 1) * 3 * d].to_vec(),
                };
                q[t * d..(t + 1) * d].copy_from_slice(&row[..d]);
                k[t * d..(t + 1) * d].copy_from_slice(&row[d..2 * d]);
                v[t * d..(t + 1) * d].copy_from_slice(&row[2 * d..]);
            }
            gemm(false, true, t1, d, t1, &q, &k, 0.0, &mut scores);
            for r in scores.chunks_exact_mut(t1) {
                r.iter_mut().for_each(|x| *x *= scale);
                let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for x in r.iter_mut() {
                    *x = (*x - mx).exp();
                    sum += *x;
                }
                r.iter_mut().for_each(|x| *x /= sum);
            }
            let dst = &mut out[s * t1 * d..(s + 1) * t1 * d];
            match latent {
                Latent::Factored { z0, lam } => {
                    for t in 0..t1 {
                        for i in 0..d {
                            dst[t * d + i] = z0[s * d + i] + lam[t * d + i];
                        }
                    }
                }
                Latent::Full(z) => dst.copy_from_slice(&z[s * t1 * d..(s + 1) * t1 * d]),
            }
            gemm(false, false, t1, t1, d, &scores, &v, 1.0, dst);
        }
        out
    }

    /// Full trajectories for raw feature rows `x0 ‖ θ`, in one batched pass.
    pub fn predict_batch(&self, features: &[&[f64]]) -> Result<Vec<Trajectory>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.predict_normalized(self.encode_inputs(features)?)?;
        let per = self.rows() * self.state_width;
        let dt = grid_step(&self.grid);
        out.data
            .chunks_exact(per)
            .map(|c| Trajectory::new(self.grid[0], dt, self.state_width, self.norm.denormalize_state(c)))
            .collect()
    }

    pub fn predict(&self, x0: &[f64], theta: &[f64]) -> Result<Trajectory> {
        let mut f = x0.to_vec();
        f.extend_from_slice(theta);
        Ok(self.predict_batch(&[&f])?.remove(0))
    }

    /// Selected grid rows. The whole grid is computed regardless of the selection.
    pub fn predict_rows(&self, x0: &[f64], theta: &[f64], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let traj = self.predict(x0, theta)?;
        rows.iter()
            .map(|&r| {
                if r < traj.rows() {
                    Ok(traj.row(r).to_vec())
                } else {
                    Err(MineError::InvalidInput(format!("grid row {r} of {}", traj.rows())))
                }
            })
            .collect()
    }

    /// Predictions on an arbitrary grid of absolute times; times beyond the
    /// trained span are extrapolation and only warned about.
    pub fn predict_on_grid(&self, x0: &[f64], theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let t0 = self.grid[0];
        let span = self.grid[self.rows() - 1] - t0;
        if times.iter().any(|&t| t < t0 || t - t0 > span) {
            log::warn!("prediction grid leaves the trained range [{t0}, {}]", t0 + span);
        }
        let mut f = x0.to_vec();
        f.extend_from_slice(theta);
        let enc = self.encode_inputs(&[&f])?;
        let rel: Vec<f64> = times.iter().map(|t| t - t0).collect();
        Ok(self.norm.denormalize_state(&self.infer(&enc, &rel)))
    }

    pub fn to_weights(&self) -> ModelWeights {
        let arch = AeodeArchitecture {
            kind: "aeode".into(),
            config: self.config.clone(),
            input_width: self.input_width,
            state_width: self.state_width,
            x0_width: self.x0_width,
            grid: self.grid.clone(),
            norm: self.norm.clone(),
            has_attention: self.attention.is_some(),
            has_embed: self.embed.is_some(),
            has_stepper: self.stepper.is_some(),
        };
        ModelWeights::new(serde_json::to_value(arch).expect("architecture serializes"), &self.store)
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        let arch: AeodeArchitecture = serde_json::from_value(w.architecture.clone())?;
        if arch.kind != "aeode" {
            return Err(MineError::Config(format!("weights describe a {:?}, not an AEODE model", arch.kind)));
        }
        let mut cfg = arch.config.clone();
        cfg.toggles.time_embed = arch.has_embed;
        cfg.toggles.attention = arch.has_attention;
        cfg.toggles.latent_stepper = arch.has_stepper;
        let mut model = Self::new(cfg, arch.input_width, arch.x0_width, arch.state_width, arch.grid, arch.norm, &mut seeded(0))?;
        model.config = arch.config;
        model.store.load(&w.tensors)?;
        Ok(model)
    }
}

enum Latent {
    Factored { z0: Vec<f64>, lam: Vec<f64> },
    Full(Vec<f64>),
}

/// `x W + b` for `rows` stacked inputs, optionally rectified.
fn dense(x: &[f64], rows: usize, w: &Tensor, bias: &Tensor, relu: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * w.cols);
    for _ in 0..rows {
        out.extend_from_slice(&bias.data);
    }
    gemm(false, false, rows, w.rows, w.cols, x, &w.data, 1.0, &mut out);
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

/// Layers `from..` of an MLP over stacked rows.
fn mlp_rows(mlp: &Mlp, store: &ParamStore, x: &[f64], rows: usize, from: usize) -> Vec<f64> {
    let n = mlp.layers.len();
    let mut cur = x.to_vec();
    for (i, layer) in mlp.layers.iter().enumerate().skip(from) {
        cur = dense(&cur, rows, store.get(layer.w), store.get(layer.b), i + 1 < n);
    }
    cur
}

/// Interleaved `sin, cos` of `2π ω_l t`.
fn embed_rows(omega: &[f64], times: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len() * omega.len() * 2);
    for &t in times {
        for &w in omega {
            let (s, c) = (2.0 * std::f64::consts::PI * w * t).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    out
}

/// Circular shift in time: output row `t` is input row `(t + tau) mod rows`.
pub fn roll_augment(traj: &Trajectory, tau: usize) -> Result<Trajectory> {
    let n = traj.rows();
    if tau >= n {
        return Err(MineError::InvalidInput(format!("shift {tau} outside 0..{n}")));
    }
    let mut states = Vec::with_capacity(traj.states.len());
    for t in 0..n {
        states.extend_from_slice(traj.row((t + tau) % n));
    }
    Trajectory::new(traj.t0, traj.dt, traj.width, states)
}

/// Scalar values of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub recon: f64,
    pub d1: f64,
    pub d2: f64,
    pub idn: f64,
    pub mass: f64,
    pub total: f64,
}

impl LossValues {
    fn add_scaled(&mut self, o: &LossValues, w: f64) {
        self.recon += w * o.recon;
        self.d1 += w * o.d1;
        self.d2 += w * o.d2;
        self.idn += w * o.idn;
        self.mass += w * o.mass;
        self.total += w * o.total;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iter: usize,
    pub train: LossValues,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeodeTrainLog {
    pub evals: Vec<EvalPoint>,
    pub best_iter: usize,
    pub best_val_mse: f64,
    /// Loss components of the selected model over the whole training split.
    pub final_train: LossValues,
}

/// Normalized tensors for one set of records.
struct Batch {
    enc: Tensor,
    truth: Tensor,
    row0: Tensor,
}

struct Prepared<'a> {
    ds: &'a Dataset,
    rows: usize,
    width: usize,
    x0_width: usize,
}

impl Prepared<'_> {
    fn batch(&self, model: &AeodeModel, idx: &[usize], roll: Option<(&mut MineRng, f64)>) -> Result<Batch> {
        let (rows, width) = (self.rows, self.width);
        let mut feats: Vec<Vec<f64>> = idx.iter().map(|&i| self.ds.features(i).to_vec()).collect();
        let mut trajs: Vec<Vec<f64>> = idx.iter().map(|&i| self.ds.target(i).to_vec()).collect();
        if let Some((rng, prob)) = roll {
            for (f, t) in feats.iter_mut().zip(trajs.iter_mut()) {
                if prob > 0.0 && rng.random_bool(prob) {
                    let tau = rng.random_range(0..rows);
                    t.rotate_left(tau * width);
                    f[..self.x0_width].copy_from_slice(&t[..width]);
                }
            }
        }
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let enc = model.encode_inputs(&refs)?;
        let mut truth = Vec::with_capacity(idx.len() * rows * width);
        let mut row0 = Vec::with_capacity(idx.len() * width);
        for t in &trajs {
            let n = model.norm.normalize_state(t);
            row0.extend_from_slice(&n[..width]);
            truth.extend(n);
        }
        Ok(Batch {
            enc,
            truth: Tensor::from_vec(idx.len() * rows, width, truth)?,
            row0: Tensor::from_vec(idx.len(), width, row0)?,
        })
    }
}

fn loss_on_batch(model: &AeodeModel, batch: Batch, train: bool) -> Result<(LossValues, Option<Vec<Tensor>>)> {
    let b = batch.enc.rows;
    let times = relative_times(&model.grid);
    let mut g = Graph::new();
    let p = if train { model.store.bind(&mut g) } else { model.store.bind_const(&mut g) };
    let x = g.input(batch.enc);
    let truth = g.input(batch.truth);
    let row0 = g.input(batch.row0);
    let (pred, recon0) = model.forward_graph(&mut g, &p, x, b, &times)?;
    let alphas = model.config.effective_alphas();
    let terms = aeode_loss(&mut g, pred, truth, row0, recon0, &alphas, times.len(), grid_step(&model.grid))?;
    let v = |n: Var| g.value(n).item();
    let values = LossValues {
        recon: v(terms.recon),
        d1: v(terms.d1),
        d2: v(terms.d2),
        idn: v(terms.idn),
        mass: v(terms.mass),
        total: v(terms.total),
    };
    if !train {
        return Ok((values, None));
    }
    g.backward(terms.total)?;
    Ok((values, Some(model.store.grads(&g, &p))))
}

const EVAL_CHUNK: usize = 512;

/// Loss components averaged over records `idx` (normalized units, no augmentation).
fn loss_over(model: &AeodeModel, prep: &Prepared<'_>, idx: &[usize]) -> Result<LossValues> {
    let mut acc = LossValues::default();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (v, _) = loss_on_batch(model, prep.batch(model, chunk, None)?, false)?;
        acc.add_scaled(&v, chunk.len() as f64 / idx.len() as f64);
    }
    Ok(acc)
}

fn prepare<'a>(ds: &'a Dataset) -> Result<Prepared<'a>> {
    let rows = ds.trajectory_rows();
    let width = ds.meta.state_width;
    if rows == 0 || width == 0 || ds.records.target_width != rows * width {
        return Err(MineError::shape("dataset targets are not trajectories on its grid"));
    }
    let x0_width = ds.records.feature_count - ds.meta.theta_dim;
    Ok(Prepared { ds, rows, width, x0_width })
}

/// Fit scalers on the training split.
pub fn fit_normalizer(ds: &Dataset, train: &[usize]) -> Result<AeodeNormalizer> {
    let table = ds.feature_table();
    let input = MinMaxScaler::fit(&table, ds.records.feature_count, train)?;
    let max = train
        .iter()
        .flat_map(|&i| ds.target(i).iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(AeodeNormalizer { input, state_scale: if max > 0.0 { max } else { 1.0 } })
}

/// Adam on the composite loss; returns the model with the best validation MSE.
pub fn train_aeode(ds: &Dataset, cfg: &AeodeConfig) -> Result<(AeodeModel, AeodeTrainLog)> {
    cfg.validate()?;
    let prep = prepare(ds)?;
    let (train, val) = (&ds.split.train, &ds.split.val);
    if train.is_empty() || val.is_empty() {
        return Err(MineError::InvalidInput("training and validation splits must be nonempty".into()));
    }
    if cfg.train.roll_prob > 0.0 && prep.x0_width != prep.width {
        return Err(MineError::Config("time rolling needs inputs that start with the initial state".into()));
    }
    let norm = fit_normalizer(ds, train)?;
    let mut rng = seeded(cfg.train.seed);
    let mut model = AeodeModel::new(
        cfg.clone(),
        ds.records.feature_count,
        prep.x0_width,
        prep.width,
        ds.meta.grid.clone(),
        norm,
        &mut rng,
    )?;
    let mut opt = Adam::new(cfg.train.lr, &model.store);
    let batch = cfg.train.batch.min(train.len());
    let mut order = train.clone();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut log = AeodeTrainLog { best_val_mse: f64::INFINITY, ..Default::default() };
    let mut best = model.store.clone();
    let mut window = LossValues::default();
    let mut window_n = 0usize;
    for iter in 0..cfg.train.iters {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = order[cursor..cursor + batch].to_vec();
        cursor += batch;
        let b = prep.batch(&model, &idx, Some((&mut rng, cfg.train.roll_prob)))?;
        opt.lr = cfg.train.lr_at(iter);
        let (values, grads) = loss_on_batch(&model, b, true)?;
        if !values.total.is_finite() {
            return Err(MineError::TrainingDiverged { epoch: iter });
        }
        opt.update(&mut model.store, &grads.expect("training pass returns gradients"))?;
        window.add_scaled(&values, 1.0);
        window_n += 1;
        if (iter + 1) % cfg.train.eval_every == 0 || iter + 1 == cfg.train.iters {
            let val_mse = loss_over(&model, &prep, val)?.recon;
            if !val_mse.is_finite() {
                return Err(MineError::TrainingDiverged { epoch: iter });
            }
            let mut train_avg = LossValues::default();
            train_avg.add_scaled(&window, 1.0 / window_n as f64);
            log.evals.push(EvalPoint { iter: iter + 1, train: train_avg, val_mse });
            window = LossValues::default();
            window_n = 0;
            if val_mse < log.best_val_mse {
                log.best_val_mse = val_mse;
                log.best_iter = iter + 1;
                best = model.store.clone();
            }
        }
    }
    model.store = best;
    log.final_train = loss_over(&model, &prep, train)?;
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeodeEval {
    /// Errors in state units.
    pub metrics: MetricReport,
    /// Loss components in normalized units.
    pub loss: LossValues,
}

pub fn evaluate_aeode(model: &AeodeModel, ds: &Dataset, idx: &[usize]) -> Result<AeodeEval> {
    if idx.is_empty() {
        return Err(MineError::Usage("empty evaluation set".into()));
    }
    let prep = prepare(ds)?;
    let mut pred = Vec::with_capacity(idx.len() * ds.records.target_width);
    let mut truth = Vec::with_capacity(pred.capacity());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let feats: Vec<&[f64]> = chunk.iter().map(|&i| ds.features(i)).collect();
        for t in model.predict_batch(&feats)? {
            pred.extend(t.states);
        }
        for &i in chunk {
            truth.extend_from_slice(ds.target(i));
        }
    }
    Ok(AeodeEval { metrics: regression_metrics(&pred, &truth)?, loss: loss_over(model, &prep, idx)? })
}

/// Pointwise 5/50/95% bands, row-major `rows x width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub times: Vec<f64>,
    pub width: usize,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
}

impl Band {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| MineError::InvalidInput("no trajectories".into()))?;
        let (rows, width) = (first.rows(), first.width);
        if trajs.iter().any(|t| t.rows() != rows || t.width != width) {
            return Err(MineError::shape("trajectories differ in shape"));
        }
        let mut band = Band {
            times: first.times(),
            width,
            q05: Vec::with_capacity(rows * width),
            q50: Vec::with_capacity(rows * width),
            q95: Vec::with_capacity(rows * width),
        };
        let mut col = Vec::with_capacity(trajs.len());
        for k in 0..rows * width {
            col.clear();
            col.extend(trajs.iter().map(|t| t.states[k]));
            col.sort_unstable_by(f64::total_cmp);
            band.q05.push(quantile_type7(&col, 0.05));
            band.q50.push(quantile_type7(&col, 0.5));
            band.q95.push(quantile_type7(&col, 0.95));
        }
        Ok(band)
    }

    /// CSV `t,q05,q50,q95` for one state component.
    pub fn to_csv(&self, component: usize) -> String {
        use crate::io::fmt_f64;
        let mut out = String::from("t,q05,q50,q95\n");
        for (r, t) in self.times.iter().enumerate() {
            let k = r * self.width + component;
            out.push_str(&format!("{},{},{},{}\n", fmt_f64(*t), fmt_f64(self.q05[k]), fmt_f64(self.q50[k]), fmt_f64(self.q95[k])));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub thetas: Vec<Vec<f64>>,
    pub trajectories: Vec<Trajectory>,
    pub band: Band,
}

/// Draw `θ` uniformly from post-burn-in chain rows.
pub fn draw_thetas(chain: &Chain, n: usize, rng: &mut MineRng) -> Result<Vec<Vec<f64>>> {
    let rows = chain.post_burn_in_len();
    if rows == 0 {
        return Err(MineError::InvalidInput("chain has no post-burn-in rows".into()));
    }
    Ok((0..n).map(|_| chain.posterior_row(rng.random_range(0..rows)).to_vec()).collect())
}

/// Posterior-predictive ensemble: one emulator pass per chain draw, batched.
pub fn ensemble_predict(model: &AeodeModel, x0: &[f64], chain: &Chain, n_draws: usize, rng: &mut MineRng) -> Result<Ensemble> {
    if n_draws < 2 {
        return Err(MineError::InvalidInput("an ensemble needs at least two draws".into()));
    }
    let thetas = draw_thetas(chain, n_draws, rng)?;
    let trajectories = ensemble_for_thetas(model, x0, &thetas)?;
    let band = Band::from_trajectories(&trajectories)?;
    Ok(Ensemble { thetas, trajectories, band })
}

/// Emulator trajectories for given parameter draws, batched in one pass.
pub fn ensemble_for_thetas(model: &AeodeModel, x0: &[f64], thetas: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
    let feats: Vec<Vec<f64>> = thetas.iter().map(|th| x0.iter().chain(th).copied().collect()).collect();
    let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    model.predict_batch(&refs)
}
