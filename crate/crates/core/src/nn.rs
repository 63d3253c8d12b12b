//! Tape-based reverse-mode differentiation over dense 2-D tensors, plus the
//! layer and loss vocabulary used by the emulators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};
use crate::rng::MineRng;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MineError::shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Uniform Glorot initialization.
    pub fn glorot(rows: usize, cols: usize, rng: &mut MineRng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Self { rows, cols, data: (0..rows * cols).map(|_| rng.random_range(-a..a)).collect() }
    }
}

/// `C = op(A) op(B) + beta C` where `op(A)` is `m x k` and `op(B)` is `k x n`.
/// A transposed operand is stored row-major in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(ta: bool, tb: bool, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the stated shapes and strides (checked above
    // in debug builds and by every caller's shape validation).
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    BlockScores { q: Var, k: Var, block: usize, scale: f64 },
    BlockApply { p: Var, v: Var, block: usize },
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    Interleave(Vec<Var>),
    TimeEmbed { omega: Var, times: Vec<f64> },
    DiffRows { a: Var, block: usize, order: usize, dt: f64 },
    RowSum(Var),
    GatherRows(Var, Vec<usize>),
    Column(Var, usize),
    MeanSquare(Var),
    Sum(Var),
    Pinball { pred: Var, target: Vec<f64>, tau: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MineError::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(MineError::shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let mut out = Tensor::zeros(av.rows, bv.cols);
        gemm(false, false, av.rows, av.cols, bv.cols, &av.data, &bv.data, 0.0, &mut out.data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(MineError::shape(format!("bias {:?} for input {:?}", bv.shape(), xv.shape())));
        }
        let mut out = xv.clone();
        for row in out.data.chunks_exact_mut(out.cols.max(1)) {
            for (o, bb) in row.iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += v;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o -= v;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols.max(1);
        for row in out.data.chunks_exact_mut(cols) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per block of `block` rows: `scale * Q_b K_b^T`.
    pub fn block_scores(&mut self, q: Var, k: Var, block: usize, scale: f64) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(k));
        same_shape(qv, kv, "block_scores")?;
        if block == 0 || qv.rows % block != 0 {
            return Err(MineError::shape(format!("{} rows are not blocks of {block}", qv.rows)));
        }
        let d = qv.cols;
        let mut out = Tensor::zeros(qv.rows, block);
        for b in 0..qv.rows / block {
            let r = b * block * d..(b + 1) * block * d;
            let o = b * block * block..(b + 1) * block * block;
            gemm(false, true, block, d, block, &qv.data[r.clone()], &kv.data[r], 0.0, &mut out.data[o]);
        }
        out.data.iter_mut().for_each(|v| *v *= scale);
        let ng = self.needs(q) || self.needs(k);
        Ok(self.push(out, Op::BlockScores { q, k, block, scale }, ng))
    }

    /// Per block: `P_b V_b`.
    pub fn block_apply(&mut self, p: Var, v: Var, block: usize) -> Result<Var> {
        let (pv, vv) = (self.value(p), self.value(v));
        if pv.cols != block || pv.rows != vv.rows || block == 0 || pv.rows % block != 0 {
            return Err(MineError::shape(format!("block_apply {:?} with {:?}", pv.shape(), vv.shape())));
        }
        let d = vv.cols;
        let mut out = Tensor::zeros(vv.rows, d);
        for b in 0..pv.rows / block {
            let pr = b * block * block..(b + 1) * block * block;
            let vr = b * block * d..(b + 1) * block * d;
            gemm(false, false, block, block, d, &pv.data[pr], &vv.data[vr.clone()], 0.0, &mut out.data[vr]);
        }
        let ng = self.needs(p) || self.needs(v);
        Ok(self.push(out, Op::BlockApply { p, v, block }, ng))
    }

    /// Each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * k);
        for r in 0..av.rows {
            for _ in 0..k {
                data.extend_from_slice(av.row(r));
            }
        }
        let out = Tensor { rows: av.rows * k, cols: av.cols, data };
        let ng = self.needs(a);
        self.push(out, Op::RepeatRows(a, k), ng)
    }

    /// The whole matrix stacked `k` times.
    pub fn tile_rows(&mut self, a: Var, k: usize) -> Var {
        let av = self.value(a);
        let out = Tensor { rows: av.rows * k, cols: av.cols, data: av.data.repeat(k) };
        let ng = self.needs(a);
        self.push(out, Op::TileRows(a, k), ng)
    }

    /// Interleave equally shaped `n x c` parts so output row `i * parts + j`
    /// is row `i` of part `j`.
    pub fn interleave(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| MineError::shape("nothing to interleave"))?;
        let (n, c) = self.value(*first).shape();
        if parts.iter().any(|p| self.value(*p).shape() != (n, c)) {
            return Err(MineError::shape("interleaved parts differ in shape"));
        }
        let mut out = Tensor::zeros(n * parts.len(), c);
        for i in 0..n {
            for (j, p) in parts.iter().enumerate() {
                let dst = (i * parts.len() + j) * c;
                out.data[dst..dst + c].copy_from_slice(self.value(*p).row(i));
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(out, Op::Interleave(parts.to_vec()), ng))
    }

    /// Rows `(sin 2πω_1 t, cos 2πω_1 t, ..., sin 2πω_L t, cos 2πω_L t)` for each `t`.
    pub fn time_embed(&mut self, omega: Var, times: &[f64]) -> Result<Var> {
        let ov = self.value(omega);
        if ov.rows != 1 {
            return Err(MineError::shape("frequencies must be a row vector"));
        }
        let l = ov.cols;
        let mut out = Tensor::zeros(times.len(), 2 * l);
        for (i, &t) in times.iter().enumerate() {
            for j in 0..l {
                let (s, c) = (std::f64::consts::TAU * ov.data[j] * t).sin_cos();
                out.data[i * 2 * l + 2 * j] = s;
                out.data[i * 2 * l + 2 * j + 1] = c;
            }
        }
        let ng = self.needs(omega);
        Ok(self.push(out, Op::TimeEmbed { omega, times: times.to_vec() }, ng))
    }

    /// Finite differences inside blocks of `block` rows: forward differences
    /// (`order = 1`) or second central differences (`order = 2`).
    pub fn diff_rows(&mut self, a: Var, block: usize, order: usize, dt: f64) -> Result<Var> {
        let av = self.value(a);
        if !(1..=2).contains(&order) || block <= order || av.rows % block != 0 {
            return Err(MineError::shape(format!("cannot take order-{order} differences in blocks of {block}")));
        }
        let c = av.cols;
        let nb = av.rows / block;
        let per = block - order;
        let mut out = Tensor::zeros(nb * per, c);
        for b in 0..nb {
            for r in 0..per {
                let base = b * block + r;
                for j in 0..c {
                    out.data[(b * per + r) * c + j] = if order == 1 {
                        (av.get(base + 1, j) - av.get(base, j)) / dt
                    } else {
                        (av.get(base + 2, j) - 2.0 * av.get(base + 1, j) + av.get(base, j)) / (dt * dt)
                    };
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::DiffRows { a, block, order, dt }, ng))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        let out = Tensor { rows: av.rows, cols: 1, data };
        let ng = self.needs(a);
        self.push(out, Op::RowSum(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows) {
            return Err(MineError::shape(format!("row {bad} out of {}", av.rows)));
        }
        let mut data = Vec::with_capacity(idx.len() * av.cols);
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor { rows: idx.len(), cols: av.cols, data };
        let ng = self.needs(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let av = self.value(a);
        if j >= av.cols {
            return Err(MineError::shape(format!("column {j} out of {}", av.cols)));
        }
        let data = (0..av.rows).map(|r| av.get(r, j)).collect();
        let out = Tensor { rows: av.rows, cols: 1, data };
        let ng = self.needs(a);
        Ok(self.push(out, Op::Column(a, j), ng))
    }

    /// Mean of squared entries, as a 1x1 node.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = if av.is_empty() { 0.0 } else { av.data.iter().map(|v| v * v).sum::<f64>() / av.len() as f64 };
        let ng = self.needs(a);
        self.push(Tensor::scalar(m), Op::MeanSquare(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Summed pinball loss of a single-column prediction against `target`.
    pub fn pinball(&mut self, pred: Var, target: &[f64], tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let pv = self.value(pred);
        if pv.cols != 1 || pv.rows != target.len() {
            return Err(MineError::shape(format!("pinball on {:?} with {} targets", pv.shape(), target.len())));
        }
        let s = pv.data.iter().zip(target).map(|(&q, &y)| pinball(q, y, tau)).sum();
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(s), Op::Pinball { pred, target: target.to_vec(), tau }, ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| MineError::Usage("backward on a node that was never recorded".into()))?;
        if node.value.shape() != (1, 1) {
            return Err(MineError::Usage(format!("backward needs a scalar, got {:?}", node.value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[i].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor)| {
            if nodes[v.0].needs_grad {
                let (r, c) = nodes[v.0].value.shape();
                f(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)));
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| gemm(false, true, av.rows, g.cols, av.cols, &g.data, &bv.data, 1.0, &mut ga.data));
                acc(*b, &mut |gb| gemm(true, false, av.cols, av.rows, g.cols, &av.data, &g.data, 1.0, &mut gb.data));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(&mut gx.data, &g.data));
                acc(*b, &mut |gb| {
                    for row in g.data.chunks_exact(g.cols.max(1)) {
                        add_into(&mut gb.data, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(&mut ga.data, &g.data));
                acc(*b, &mut |gb| add_into(&mut gb.data, &g.data));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(&mut ga.data, &g.data));
                acc(*b, &mut |gb| gb.data.iter_mut().zip(&g.data).for_each(|(o, v)| *o -= v));
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.data.iter_mut().zip(&g.data).for_each(|(o, v)| *o += s * v)),
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, gv), x) in ga.data.iter_mut().zip(&g.data).zip(&av.data) {
                        if *x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => acc(*a, &mut |ga| {
                let c = out.cols.max(1);
                for ((gr, yr), orow) in g.data.chunks_exact(c).zip(out.data.chunks_exact(c)).zip(ga.data.chunks_exact_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), y) in orow.iter_mut().zip(gr).zip(yr) {
                        *o += y * (gv - dot);
                    }
                }
            }),
            Op::BlockScores { q, k, block, scale } => {
                let (qv, kv) = (val(*q), val(*k));
                let (bl, d) = (*block, qv.cols);
                let gs: Vec<f64> = g.data.iter().map(|v| v * scale).collect();
                acc(*q, &mut |gq| {
                    for b in 0..qv.rows / bl {
                        let r = b * bl * d..(b + 1) * bl * d;
                        let o = b * bl * bl..(b + 1) * bl * bl;
                        gemm(false, false, bl, bl, d, &gs[o], &kv.data[r.clone()], 1.0, &mut gq.data[r]);
                    }
                });
                acc(*k, &mut |gk| {
                    for b in 0..qv.rows / bl {
                        let r = b * bl * d..(b + 1) * bl * d;
                        let o = b * bl * bl..(b + 1) * bl * bl;
                        gemm(true, false, bl, bl, d, &gs[o], &qv.data[r.clone()], 1.0, &mut gk.data[r]);
                    }
                });
            }
            Op::BlockApply { p, v, block } => {
                let (pv, vv) = (val(*p), val(*v));
                let (bl, d) = (*block, vv.cols);
                acc(*p, &mut |gp| {
                    for b in 0..pv.rows / bl {
                        let pr = b * bl * bl..(b + 1) * bl * bl;
                        let vr = b * bl * d..(b + 1) * bl * d;
                        gemm(false, true, bl, d, bl, &g.data[vr.clone()], &vv.data[vr], 1.0, &mut gp.data[pr]);
                    }
                });
                acc(*v, &mut |gv| {
                    for b in 0..pv.rows / bl {
                        let pr = b * bl * bl..(b + 1) * bl * bl;
                        let vr = b * bl * d..(b + 1) * bl * d;
                        gemm(true, false, bl, bl, d, &pv.data[pr], &g.data[vr.clone()], 1.0, &mut gv.data[vr]);
                    }
                });
            }
            Op::RepeatRows(a, k) => acc(*a, &mut |ga| {
                let c = ga.cols;
                for r in 0..ga.rows {
                    for j in 0..*k {
                        let src = (r * k + j) * c;
                        add_into(&mut ga.data[r * c..(r + 1) * c], &g.data[src..src + c]);
                    }
                }
            }),
            Op::TileRows(a, k) => acc(*a, &mut |ga| {
                let n = ga.len();
                for j in 0..*k {
                    add_into(&mut ga.data, &g.data[j * n..(j + 1) * n]);
                }
            }),
            Op::Interleave(parts) => {
                let np = parts.len();
                for (j, p) in parts.iter().enumerate() {
                    acc(*p, &mut |gp| {
                        let c = gp.cols;
                        for r in 0..gp.rows {
                            let src = (r * np + j) * c;
                            add_into(&mut gp.data[r * c..(r + 1) * c], &g.data[src..src + c]);
                        }
                    });
                }
            }
            Op::TimeEmbed { omega, times } => {
                let ov = val(*omega);
                let l = ov.cols;
                acc(*omega, &mut |go| {
                    for (i, &t) in times.iter().enumerate() {
                        let f = std::f64::consts::TAU * t;
                        for j in 0..l {
                            let (s, c) = (f * ov.data[j]).sin_cos();
                            let row = i * 2 * l;
                            go.data[j] += g.data[row + 2 * j] * f * c - g.data[row + 2 * j + 1] * f * s;
                        }
                    }
                });
            }
            Op::DiffRows { a, block, order, dt } => acc(*a, &mut |ga| {
                let c = ga.cols;
                let per = block - order;
                for b in 0..ga.rows / block {
                    for r in 0..per {
                        let base = b * block + r;
                        for j in 0..c {
                            let gv = g.data[(b * per + r) * c + j];
                            if *order == 1 {
                                ga.data[(base + 1) * c + j] += gv / dt;
                                ga.data[base * c + j] -= gv / dt;
                            } else {
                                let h = gv / (dt * dt);
                                ga.data[(base + 2) * c + j] += h;
                                ga.data[(base + 1) * c + j] -= 2.0 * h;
                                ga.data[base * c + j] += h;
                            }
                        }
                    }
                }
            }),
            Op::RowSum(a) => acc(*a, &mut |ga| {
                let c = ga.cols;
                for r in 0..ga.rows {
                    ga.data[r * c..(r + 1) * c].iter_mut().for_each(|o| *o += g.data[r]);
                }
            }),
            Op::GatherRows(a, idx) => acc(*a, &mut |ga| {
                let c = ga.cols;
                for (k, &r) in idx.iter().enumerate() {
                    add_into(&mut ga.data[r * c..(r + 1) * c], &g.data[k * c..(k + 1) * c]);
                }
            }),
            Op::Column(a, j) => acc(*a, &mut |ga| {
                let c = ga.cols;
                for r in 0..ga.rows {
                    ga.data[r * c + j] += g.data[r];
                }
            }),
            Op::MeanSquare(a) => {
                let av = val(*a);
                let f = 2.0 * g.item() / av.len().max(1) as f64;
                acc(*a, &mut |ga| ga.data.iter_mut().zip(&av.data).for_each(|(o, x)| *o += f * x));
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.data.iter_mut().for_each(|o| *o += g.item())),
            Op::Pinball { pred, target, tau } => {
                let pv = val(*pred);
                acc(*pred, &mut |gp| {
                    for ((o, &q), &y) in gp.data.iter_mut().zip(&pv.data).zip(target) {
                        *o += g.item() * pinball_grad(q, y, *tau);
                    }
                });
            }
        }
    }
}

pub const QUANTILE_LEVELS: [f64; 2] = [0.05, 0.95];

/// `Σ [ρ_0.05 + ρ_0.95] + λ Σ max(0, q̂_0.05 - q̂_0.95)` for `preds` of shape `n x 2`.
pub fn quantile_objective(g: &mut Graph, preds: Var, ys: &[f64], lambda: f64) -> Result<Var> {
    let lo = g.column(preds, 0)?;
    let hi = g.column(preds, 1)?;
    let l_lo = g.pinball(lo, ys, QUANTILE_LEVELS[0])?;
    let l_hi = g.pinball(hi, ys, QUANTILE_LEVELS[1])?;
    let gap = g.sub(lo, hi)?;
    let hinge = g.relu(gap);
    let cross = g.sum(hinge);
    let cross = g.scale(cross, lambda);
    let fit = g.add(l_lo, l_hi)?;
    g.add(fit, cross)
}

/// Component nodes of the trajectory emulator objective.
#[derive(Clone, Copy, Debug)]
pub struct AeodeLossTerms {
    pub recon: Var,
    pub d1: Var,
    pub d2: Var,
    pub idn: Var,
    pub mass: Var,
    pub total: Var,
}

/// Weighted sum of trajectory error, first- and second-difference errors,
/// initial-state reconstruction error and species-sum error.
///
/// `pred` and `truth` stack trajectories of `block` rows each; every term is
/// a mean over its entries.
#[allow(clippy::too_many_arguments)]
pub fn aeode_loss(
    g: &mut Graph,
    pred: Var,
    truth: Var,
    x0: Var,
    recon_x0: Var,
    alphas: &[f64; 5],
    block: usize,
    dt: f64,
) -> Result<AeodeLossTerms> {
    if alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(MineError::Config(format!("loss weights must be nonnegative: {alphas:?}")));
    }
    let resid = g.sub(pred, truth)?;
    let recon = g.mean_square(resid);
    let diff_term = |g: &mut Graph, order: usize| -> Result<Var> {
        if block <= order {
            return Ok(g.input(Tensor::scalar(0.0)));
        }
        let dp = g.diff_rows(pred, block, order, dt)?;
        let dt_ = g.diff_rows(truth, block, order, dt)?;
        let r = g.sub(dp, dt_)?;
        Ok(g.mean_square(r))
    };
    let d1 = diff_term(g, 1)?;
    let d2 = diff_term(g, 2)?;
    let idr = g.sub(x0, recon_x0)?;
    let idn = g.mean_square(idr);
    let sp = g.row_sum(pred);
    let st = g.row_sum(truth);
    let ms = g.sub(sp, st)?;
    let mass = g.mean_square(ms);
    let mut total = g.scale(recon, alphas[0]);
    for (term, a) in [(d1, alphas[1]), (d2, alphas[2]), (idn, alphas[3]), (mass, alphas[4])] {
        if a != 0.0 {
            let w = g.scale(term, a);
            total = g.add(total, w)?;
        }
    }
    Ok(AeodeLossTerms { recon, d1, d2, idn, mass, total })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(MineError::Config(format!("quantile level {tau} outside (0, 1)")))
    }
}

/// `ρ_τ(y - q)`.
pub fn pinball(q: f64, y: f64, tau: f64) -> f64 {
    let u = y - q;
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

pub fn pinball_checked(q: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball(q, y, tau))
}

/// Derivative in `q`; zero at the kink.
pub fn pinball_grad(q: f64, y: f64, tau: f64) -> f64 {
    if y > q {
        -tau
    } else if y < q {
        1.0 - tau
    } else {
        0.0
    }
}

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

/// Trainable tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(NamedTensor { name: name.into(), tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Record every tensor as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.params.iter().map(|p| g.param(p.tensor.clone())).collect())
    }

    /// Record every tensor as a constant.
    pub fn bind_const(&self, g: &mut Graph) -> Bound {
        Bound(self.params.iter().map(|p| g.input(p.tensor.clone())).collect())
    }

    /// Gradients after `backward`; unreached parameters get zeros.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&bound.0)
            .map(|(p, v)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.tensor.rows, p.tensor.cols)))
            .collect()
    }

    /// Replace values from a saved list, matching names and shapes.
    pub fn load(&mut self, saved: &[NamedTensor]) -> Result<()> {
        if saved.len() != self.params.len() {
            return Err(MineError::shape(format!("{} saved tensors for {} parameters", saved.len(), self.params.len())));
        }
        for (p, s) in self.params.iter_mut().zip(saved) {
            if p.name != s.name || p.tensor.shape() != s.tensor.shape() || s.tensor.data.len() != s.tensor.rows * s.tensor.cols {
                return Err(MineError::shape(format!("saved tensor {} does not match parameter {}", s.name, p.name)));
            }
            p.tensor = s.tensor.clone();
        }
        Ok(())
    }
}

/// Persisted network: architecture descriptor plus every parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub schema_version: u32,
    pub architecture: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl ModelWeights {
    pub fn new(architecture: serde_json::Value, store: &ParamStore) -> Self {
        Self { schema_version: crate::io::SCHEMA_VERSION, architecture, tensors: store.params.clone() }
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros = || store.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || grads.iter().zip(&store.params).any(|(g, p)| g.len() != p.tensor.len()) {
            return Err(MineError::shape("gradient list does not match parameters"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in store.params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for ((w, &gi), (mi, vi)) in p.tensor.data.iter_mut().zip(&g.data).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Fully connected layer `x W + b`, `W` stored `in x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl DenseLayer {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut MineRng) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::glorot(fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.var(self.w))?;
        g.add_bias(h, p.var(self.b))
    }
}

/// Dense stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut MineRng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    /// Graph-free evaluation of one input row.
    pub fn predict(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = store.get(layer.w);
            let mut next = store.get(layer.b).data.clone();
            for (k, &xk) in cur.iter().enumerate() {
                if xk != 0.0 {
                    for (o, wk) in next.iter_mut().zip(w.row(k)) {
                        *o += xk * wk;
                    }
                }
            }
            if i + 1 < n {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i + 1 < n {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

/// Single-head residual self-attention applied independently to each block
/// of `block` rows: `Z + softmax(Z W_Q (Z W_K)^T / sqrt(d)) Z W_V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub d: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut MineRng) -> Self {
        Self {
            wq: store.add(format!("{name}.wq"), Tensor::glorot(d, d, rng)),
            wk: store.add(format!("{name}.wk"), Tensor::glorot(d, d, rng)),
            wv: store.add(format!("{name}.wv"), Tensor::glorot(d, d, rng)),
            d,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var, block: usize) -> Result<Var> {
        let q = g.matmul(z, p.var(self.wq))?;
        let k = g.matmul(z, p.var(self.wk))?;
        let v = g.matmul(z, p.var(self.wv))?;
        let s = g.block_scores(q, k, block, 1.0 / (self.d as f64).sqrt())?;
        let a = g.softmax_rows(s);
        let o = g.block_apply(a, v, block)?;
        g.add(z, o)
    }
}

/// Learnable sinusoidal time features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub omega: ParamId,
    pub l: usize,
}

impl TimeEmbedding {
    /// Frequencies log-spaced over `[lo, hi]`.
    pub fn new(store: &mut ParamStore, name: &str, l: usize, lo: f64, hi: f64) -> Result<Self> {
        if l == 0 || !(lo > 0.0) || !(hi >= lo) {
            return Err(MineError::Config(format!("invalid time embedding: L={l}, range [{lo}, {hi}]")));
        }
        let omega = if l == 1 {
            vec![lo]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..l).map(|i| (a + (b - a) * i as f64 / (l - 1) as f64).exp()).collect()
        };
        Ok(Self { omega: store.add(format!("{name}.omega"), Tensor::row_vector(omega)), l })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, times: &[f64]) -> Result<Var> {
        g.time_embed(p.var(self.omega), times)
    }
}

/// Symmetric relative difference with an absolute floor for near-zero entries.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

pub const GRADCHECK_FLOOR: f64 = 1e-5;

/// Compare reverse-mode gradients of a scalar function of `inputs` with
/// central differences of step `h`; returns the largest relative error.
pub fn gradient_check(
    inputs: &[Tensor],
    h: f64,
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].rows, inputs[k].cols));
        for e in 0..inputs[k].len() {
            let x = inputs[k].data[e];
            probe[k].data[e] = x + h;
            let fp = eval(&probe)?;
            probe[k].data[e] = x - h;
            let fm = eval(&probe)?;
            probe[k].data[e] = x;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data[e], numeric));
        }
    }
    Ok(worst)
}
