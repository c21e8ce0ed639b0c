//! Reverse-mode automatic differentiation over dense f64 tensors of rank ≤ 3.
//!
//! Programs are recorded on an append-only [`Tape`]; [`Tape::backward`]
//! walks the tape in reverse, accumulating gradients by summation across
//! fan-out. [`grad_check`] compares analytic gradients against central
//! finite differences and is the quality gate for every op.

pub mod matmul;
pub mod spline;

use matmul::{matmul_abt_acc, matmul_acc, matmul_atb_acc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid probability: {0}")]
    InvalidProbability(String),
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(shape.len() <= 3, "rank ≤ 3");
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(vec![1], vec![x])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1);
        self.data[0]
    }
}

pub type VarId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    AddRow(VarId, VarId),
    MulCol(VarId, VarId),
    Matmul(VarId, VarId),
    Concat(VarId, VarId),
    SliceCols {
        input: VarId,
        start: usize,
        end: usize,
    },
    SliceTime {
        input: VarId,
        t: usize,
    },
    StackTime(Vec<VarId>),
    Gather {
        table: VarId,
        ids: Vec<usize>,
    },
    ReduceSum(VarId),
    ReduceMean(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Silu(VarId),
    Softmax(VarId),
    Conv1d {
        input: VarId,
        kernel: VarId,
        pad: usize,
    },
    Dropout {
        input: VarId,
        mask: Vec<f64>,
    },
    BceLoss {
        pred: VarId,
        target: Vec<f64>,
        clamped: Vec<bool>,
    },
    BsplineBasis {
        input: VarId,
        knots: Vec<f64>,
        order: usize,
    },
    RepeatRows {
        input: VarId,
        times: usize,
    },
    WeightedSumTime {
        weights: VarId,
        values: VarId,
    },
    Reshape(VarId),
}

fn op_label(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulCol(..) => "mul_col",
        Op::Matmul(..) => "matmul",
        Op::Concat(..) => "concat",
        Op::SliceCols { .. } => "slice_cols",
        Op::SliceTime { .. } => "slice_time",
        Op::StackTime(..) => "stack_time",
        Op::Gather { .. } => "gather",
        Op::ReduceSum(..) => "reduce_sum",
        Op::ReduceMean(..) => "reduce_mean",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Silu(..) => "silu",
        Op::Softmax(..) => "softmax",
        Op::Conv1d { .. } => "conv1d",
        Op::Dropout { .. } => "dropout",
        Op::BceLoss { .. } => "bce_loss",
        Op::BsplineBasis { .. } => "bspline_basis",
        Op::RepeatRows { .. } => "repeat_rows",
        Op::WeightedSumTime { .. } => "weighted_sum_time",
        Op::Reshape(..) => "reshape",
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    /// Train-mode flag consulted when a dropout op is recorded.
    pub train: bool,
    rng: ChaCha8Rng,
    /// Number of predictions clamped away from {0,1} inside bce_loss.
    pub bce_clamp_events: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bce_clamp_events: 0,
        }
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward() pass; zeros if the node is off the
    /// loss path.
    pub fn grad(&self, id: VarId) -> Tensor {
        self.grads[id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[id].value.shape.clone()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value, false)
    }

    fn needs(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.nodes[a].value.shape != self.nodes[b].value.shape {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.nodes[a].value.shape, self.nodes[b].value.shape
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("add", a, b)?;
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, data), rg))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("sub", a, b)?;
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), Tensor::new(shape, data), rg))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("mul", a, b)?;
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, data), rg))
    }

    /// Broadcast a rank-1 row over the last axis of a rank-2/3 tensor.
    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId> {
        let av = &self.nodes[a].value;
        let rv = &self.nodes[row].value;
        let n = *av.shape.last().unwrap();
        if rv.shape.len() != 1 || rv.shape[0] != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", av.shape, rv.shape),
            });
        }
        let data: Vec<f64> = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv.data[i % n])
            .collect();
        let shape = av.shape.clone();
        let rg = self.needs(&[a, row]);
        Ok(self.push(Op::AddRow(a, row), Tensor::new(shape, data), rg))
    }

    /// Multiply each row of a rank-2 tensor by a per-row scalar [B,1].
    pub fn mul_col(&mut self, a: VarId, col: VarId) -> Result<VarId> {
        let av = &self.nodes[a].value;
        let cv = &self.nodes[col].value;
        if av.shape.len() != 2 || cv.shape != vec![av.shape[0], 1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_col",
                detail: format!("{:?} * {:?}", av.shape, cv.shape),
            });
        }
        let n = av.shape[1];
        let data: Vec<f64> = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x * cv.data[i / n])
            .collect();
        let shape = av.shape.clone();
        let rg = self.needs(&[a, col]);
        Ok(self.push(Op::MulCol(a, col), Tensor::new(shape, data), rg))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} · {:?}", av.shape, bv.shape),
            });
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(&av.data, &bv.data, m, k, n, &mut out);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), Tensor::new(vec![m, n], out), rg))
    }

    /// Concatenate two rank-2 tensors along the last axis.
    pub fn concat(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[0] != bv.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                detail: format!("{:?} ++ {:?}", av.shape, bv.shape),
            });
        }
        let (rows, n1, n2) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut data = Vec::with_capacity(rows * (n1 + n2));
        for r in 0..rows {
            data.extend_from_slice(&av.data[r * n1..(r + 1) * n1]);
            data.extend_from_slice(&bv.data[r * n2..(r + 1) * n2]);
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Concat(a, b), Tensor::new(vec![rows, n1 + n2], data), rg))
    }

    /// Columns [start, end) of a rank-2 tensor.
    pub fn slice_cols(&mut self, input: VarId, start: usize, end: usize) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if v.shape.len() != 2 || end > v.shape[1] || start >= end {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("[{start}, {end}) of {:?}", v.shape),
            });
        }
        let (rows, n) = (v.shape[0], v.shape[1]);
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.data[r * n + start..r * n + end]);
        }
        let rg = self.needs(&[input]);
        Ok(self.push(
            Op::SliceCols { input, start, end },
            Tensor::new(vec![rows, end - start], data),
            rg,
        ))
    }

    /// Timestep t of a rank-3 tensor [B,T,C] → [B,C].
    pub fn slice_time(&mut self, input: VarId, t: usize) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if v.shape.len() != 3 || t >= v.shape[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_time",
                detail: format!("t={t} of {:?}", v.shape),
            });
        }
        let (b, tt, c) = (v.shape[0], v.shape[1], v.shape[2]);
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            let base = bi * tt * c + t * c;
            data.extend_from_slice(&v.data[base..base + c]);
        }
        let rg = self.needs(&[input]);
        Ok(self.push(
            Op::SliceTime { input, t },
            Tensor::new(vec![b, c], data),
            rg,
        ))
    }

    /// Stack T rank-2 tensors [B,C] into [B,T,C].
    pub fn stack_time(&mut self, steps: &[VarId]) -> Result<VarId> {
        if steps.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "stack_time",
                detail: "no steps".into(),
            });
        }
        let first = self.nodes[steps[0]].value.shape.clone();
        if first.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "stack_time",
                detail: format!("{first:?}"),
            });
        }
        for &s in steps {
            if self.nodes[s].value.shape != first {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack_time",
                    detail: format!("{:?} vs {first:?}", self.nodes[s].value.shape),
                });
            }
        }
        let (b, c) = (first[0], first[1]);
        let t = steps.len();
        let mut data = vec![0.0; b * t * c];
        for (ti, &s) in steps.iter().enumerate() {
            let sv = &self.nodes[s].value.data;
            for bi in 0..b {
                let dst = bi * t * c + ti * c;
                data[dst..dst + c].copy_from_slice(&sv[bi * c..(bi + 1) * c]);
            }
        }
        let rg = self.needs(steps);
        Ok(self.push(
            Op::StackTime(steps.to_vec()),
            Tensor::new(vec![b, t, c], data),
            rg,
        ))
    }

    /// Embedding lookup: rows `ids` of a rank-2 table [V,D] → [N,D].
    pub fn gather(&mut self, table: VarId, ids: &[usize]) -> Result<VarId> {
        let v = &self.nodes[table].value;
        if v.shape.len() != 2 || ids.iter().any(|&i| i >= v.shape[0]) {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                detail: format!("ids into {:?}", v.shape),
            });
        }
        let d = v.shape[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&v.data[i * d..(i + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), d], data),
            rg,
        ))
    }

    pub fn reduce_sum(&mut self, input: VarId) -> Result<VarId> {
        let s: f64 = self.nodes[input].value.data.iter().sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Op::ReduceSum(input), Tensor::scalar(s), rg))
    }

    pub fn reduce_mean(&mut self, input: VarId) -> Result<VarId> {
        let v = &self.nodes[input].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.numel() as f64;
        let rg = self.needs(&[input]);
        Ok(self.push(Op::ReduceMean(input), Tensor::scalar(s), rg))
    }

    fn unary(&mut self, input: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let data = self.nodes[input].value.data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[input].value.shape.clone();
        let rg = self.needs(&[input]);
        self.push(op, Tensor::new(shape, data), rg)
    }

    pub fn sigmoid(&mut self, input: VarId) -> Result<VarId> {
        Ok(self.unary(input, sigmoid, Op::Sigmoid(input)))
    }

    pub fn tanh(&mut self, input: VarId) -> Result<VarId> {
        Ok(self.unary(input, f64::tanh, Op::Tanh(input)))
    }

    /// x·σ(x), the spline base activation.
    pub fn silu(&mut self, input: VarId) -> Result<VarId> {
        Ok(self.unary(input, |x| x * sigmoid(x), Op::Silu(input)))
    }

    /// Row-wise softmax over the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, input: VarId) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if v.shape.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax",
                detail: format!("{:?}", v.shape),
            });
        }
        let (rows, n) = (v.shape[0], v.shape[1]);
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &v.data[r * n..(r + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                data[r * n + j] = e;
                z += e;
            }
            for j in 0..n {
                data[r * n + j] /= z;
            }
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Op::Softmax(input), Tensor::new(vec![rows, n], data), rg))
    }

    /// Same-padding stride-1 1-D convolution over the time axis.
    /// input [B,T,Cin], kernel [K,Cin,Cout] with odd K → output [B,T,Cout].
    pub fn conv1d(&mut self, input: VarId, kernel: VarId) -> Result<VarId> {
        let iv = &self.nodes[input].value;
        let kv = &self.nodes[kernel].value;
        if iv.shape.len() != 3 || kv.shape.len() != 3 || iv.shape[2] != kv.shape[1]
            || kv.shape[0] % 2 == 0
        {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("{:?} (*) {:?}", iv.shape, kv.shape),
            });
        }
        let (b, t, ci) = (iv.shape[0], iv.shape[1], iv.shape[2]);
        let (k, co) = (kv.shape[0], kv.shape[2]);
        let pad = (k - 1) / 2;
        let mut out = vec![0.0; b * t * co];
        for bi in 0..b {
            for ti in 0..t {
                for kk in 0..k {
                    let u = ti + kk;
                    if u < pad || u - pad >= t {
                        continue;
                    }
                    let u = u - pad;
                    let ibase = bi * t * ci + u * ci;
                    let orow = &mut out[bi * t * co + ti * co..bi * t * co + (ti + 1) * co];
                    for cii in 0..ci {
                        let x = iv.data[ibase + cii];
                        if x == 0.0 {
                            continue;
                        }
                        let krow = &kv.data[kk * ci * co + cii * co..kk * ci * co + (cii + 1) * co];
                        for (o, &kw) in orow.iter_mut().zip(krow) {
                            *o += x * kw;
                        }
                    }
                }
            }
        }
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(
            Op::Conv1d { input, kernel, pad },
            Tensor::new(vec![b, t, co], out),
            rg,
        ))
    }

    /// Inverted dropout: train mode scales kept units by 1/(1−rate),
    /// eval mode is the identity.
    pub fn dropout(&mut self, input: VarId, rate: f64) -> Result<VarId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidProbability(format!(
                "dropout rate {rate}"
            )));
        }
        let n = self.nodes[input].value.numel();
        let mask: Vec<f64> = if self.train && rate > 0.0 {
            let keep = 1.0 - rate;
            (0..n)
                .map(|_| {
                    if self.rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![1.0; n]
        };
        let data = self.nodes[input]
            .value
            .data
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.nodes[input].value.shape.clone();
        let rg = self.needs(&[input]);
        Ok(self.push(Op::Dropout { input, mask }, Tensor::new(shape, data), rg))
    }

    /// Mean binary cross-entropy; predictions clamped to [1e-7, 1−1e-7]
    /// before the log, with clamp events counted on the tape.
    pub fn bce_loss(&mut self, pred: VarId, target: &Tensor) -> Result<VarId> {
        let pv = &self.nodes[pred].value;
        if pv.shape != target.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_loss",
                detail: format!("{:?} vs {:?}", pv.shape, target.shape),
            });
        }
        if target.data.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
            return Err(AutodiffError::InvalidProbability(
                "bce targets must lie in [0,1]".into(),
            ));
        }
        const LO: f64 = 1e-7;
        const HI: f64 = 1.0 - 1e-7;
        let n = pv.numel() as f64;
        let mut loss = 0.0;
        let mut clamped = vec![false; pv.numel()];
        for (i, (&p, &y)) in pv.data.iter().zip(&target.data).enumerate() {
            let pc = p.clamp(LO, HI);
            if pc != p {
                clamped[i] = true;
                self.bce_clamp_events += 1;
            }
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        loss /= n;
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Op::BceLoss {
                pred,
                target: target.data.clone(),
                clamped,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Per-element B-spline basis expansion: [B,N] → [B, N·nb].
    pub fn bspline_basis(&mut self, input: VarId, knots: &[f64], order: usize) -> Result<VarId> {
        if knots.len() < order + 2 || knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(AutodiffError::InvalidKnots(format!(
                "{} knots for order {order}",
                knots.len()
            )));
        }
        let v = &self.nodes[input].value;
        if v.shape.len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "bspline_basis",
                detail: format!("{:?}", v.shape),
            });
        }
        let nb = spline::basis_count(knots, order);
        let (rows, n) = (v.shape[0], v.shape[1]);
        let mut data = Vec::with_capacity(rows * n * nb);
        for &x in &v.data {
            data.extend(spline::eval_basis(x, knots, order));
        }
        let rg = self.needs(&[input]);
        Ok(self.push(
            Op::BsplineBasis {
                input,
                knots: knots.to_vec(),
                order,
            },
            Tensor::new(vec![rows, n * nb], data),
            rg,
        ))
    }

    /// Repeat each row of a rank-2 tensor `times` times: [R,C] → [R·times,C].
    pub fn repeat_rows(&mut self, input: VarId, times: usize) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if v.shape.len() != 2 || times == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "repeat_rows",
                detail: format!("{:?} × {times}", v.shape),
            });
        }
        let (r, c) = (v.shape[0], v.shape[1]);
        let mut data = Vec::with_capacity(r * times * c);
        for ri in 0..r {
            for _ in 0..times {
                data.extend_from_slice(&v.data[ri * c..(ri + 1) * c]);
            }
        }
        let rg = self.needs(&[input]);
        Ok(self.push(
            Op::RepeatRows { input, times },
            Tensor::new(vec![r * times, c], data),
            rg,
        ))
    }

    /// out[b,c] = Σ_t w[b,t]·v[b,t,c]; attention pooling over time.
    pub fn weighted_sum_time(&mut self, weights: VarId, values: VarId) -> Result<VarId> {
        let wv = &self.nodes[weights].value;
        let vv = &self.nodes[values].value;
        if wv.shape.len() != 2
            || vv.shape.len() != 3
            || wv.shape[0] != vv.shape[0]
            || wv.shape[1] != vv.shape[1]
        {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum_time",
                detail: format!("{:?} over {:?}", wv.shape, vv.shape),
            });
        }
        let (b, t, c) = (vv.shape[0], vv.shape[1], vv.shape[2]);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for ti in 0..t {
                let w = wv.data[bi * t + ti];
                if w == 0.0 {
                    continue;
                }
                let vbase = bi * t * c + ti * c;
                for ci in 0..c {
                    out[bi * c + ci] += w * vv.data[vbase + ci];
                }
            }
        }
        let rg = self.needs(&[weights, values]);
        Ok(self.push(
            Op::WeightedSumTime { weights, values },
            Tensor::new(vec![b, c], out),
            rg,
        ))
    }

    /// Same data, new shape (numel must match).
    pub fn reshape(&mut self, input: VarId, shape: Vec<usize>) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if shape.iter().product::<usize>() != v.numel() || shape.len() > 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} → {shape:?}", v.shape),
            });
        }
        let data = v.data.clone();
        let rg = self.needs(&[input]);
        Ok(self.push(Op::Reshape(input), Tensor::new(shape, data), rg))
    }

    fn grad_buf(&mut self, id: VarId) -> &mut Tensor {
        if self.grads[id].is_none() {
            self.grads[id] = Some(Tensor::zeros(self.nodes[id].value.shape.clone()));
        }
        self.grads[id].as_mut().unwrap()
    }

    /// Reverse pass from a scalar loss; gradients sum across fan-out.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(
                self.nodes[loss].value.shape.clone(),
            ));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss] = Some(Tensor::scalar(1.0));

        let trace = std::env::var_os("GF_OP_TRACE").is_some();
        let mut op_times: std::collections::BTreeMap<&'static str, f64> =
            std::collections::BTreeMap::new();
        for id in (0..=loss).rev() {
            if self.grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let op_t0 = if trace {
                Some(std::time::Instant::now())
            } else {
                None
            };
            // Intermediate grads are complete at this point and never read
            // again, so move them out instead of cloning.
            let g = self.grads[id].take().unwrap();
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.acc(a, &g.data);
                    self.acc(b, &g.data);
                }
                Op::Sub(a, b) => {
                    self.acc(a, &g.data);
                    let neg: Vec<f64> = g.data.iter().map(|x| -x).collect();
                    self.acc(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[b].value.data)
                        .map(|(x, y)| x * y)
                        .collect();
                    let db: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(x, y)| x * y)
                        .collect();
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::AddRow(a, row) => {
                    self.acc(a, &g.data);
                    let n = self.nodes[row].value.numel();
                    let mut dr = vec![0.0; n];
                    for (i, &x) in g.data.iter().enumerate() {
                        dr[i % n] += x;
                    }
                    self.acc(row, &dr);
                }
                Op::MulCol(a, col) => {
                    let n = self.nodes[a].value.shape[1];
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * self.nodes[col].value.data[i / n])
                        .collect();
                    let rows = self.nodes[a].value.shape[0];
                    let mut dc = vec![0.0; rows];
                    for (i, &x) in g.data.iter().enumerate() {
                        dc[i / n] += x * self.nodes[a].value.data[i];
                    }
                    self.acc(a, &da);
                    self.acc(col, &dc);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a].value.shape[0], self.nodes[a].value.shape[1]);
                    let n = self.nodes[b].value.shape[1];
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    matmul_abt_acc(&g.data, &self.nodes[b].value.data, m, n, k, &mut da);
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    matmul_atb_acc(&self.nodes[a].value.data, &g.data, m, k, n, &mut db);
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Concat(a, b) => {
                    let (rows, n1) = (self.nodes[a].value.shape[0], self.nodes[a].value.shape[1]);
                    let n2 = self.nodes[b].value.shape[1];
                    let mut da = vec![0.0; rows * n1];
                    let mut db = vec![0.0; rows * n2];
                    for r in 0..rows {
                        let base = r * (n1 + n2);
                        da[r * n1..(r + 1) * n1].copy_from_slice(&g.data[base..base + n1]);
                        db[r * n2..(r + 1) * n2]
                            .copy_from_slice(&g.data[base + n1..base + n1 + n2]);
                    }
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::SliceCols { input, start, end } => {
                    let (rows, n) = (
                        self.nodes[input].value.shape[0],
                        self.nodes[input].value.shape[1],
                    );
                    let w = end - start;
                    let mut di = vec![0.0; rows * n];
                    for r in 0..rows {
                        di[r * n + start..r * n + end]
                            .copy_from_slice(&g.data[r * w..(r + 1) * w]);
                    }
                    self.acc(input, &di);
                }
                Op::SliceTime { input, t } => {
                    let sh = self.nodes[input].value.shape.clone();
                    let (b, tt, c) = (sh[0], sh[1], sh[2]);
                    let mut di = vec![0.0; b * tt * c];
                    for bi in 0..b {
                        let dst = bi * tt * c + t * c;
                        di[dst..dst + c].copy_from_slice(&g.data[bi * c..(bi + 1) * c]);
                    }
                    self.acc(input, &di);
                }
                Op::StackTime(steps) => {
                    let sh = self.nodes[steps[0]].value.shape.clone();
                    let (b, c) = (sh[0], sh[1]);
                    let t = steps.len();
                    for (ti, &s) in steps.iter().enumerate() {
                        let mut ds = vec![0.0; b * c];
                        for bi in 0..b {
                            let src = bi * t * c + ti * c;
                            ds[bi * c..(bi + 1) * c].copy_from_slice(&g.data[src..src + c]);
                        }
                        self.acc(s, &ds);
                    }
                }
                Op::Gather { table, ids } => {
                    let d = self.nodes[table].value.shape[1];
                    let mut dt = vec![0.0; self.nodes[table].value.numel()];
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] += g.data[r * d + j];
                        }
                    }
                    self.acc(table, &dt);
                }
                Op::ReduceSum(input) => {
                    let di = vec![g.data[0]; self.nodes[input].value.numel()];
                    self.acc(input, &di);
                }
                Op::ReduceMean(input) => {
                    let n = self.nodes[input].value.numel();
                    let di = vec![g.data[0] / n as f64; n];
                    self.acc(input, &di);
                }
                Op::Sigmoid(input) => {
                    let di: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[id].value.data)
                        .map(|(x, &y)| x * y * (1.0 - y))
                        .collect();
                    self.acc(input, &di);
                }
                Op::Tanh(input) => {
                    let di: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[id].value.data)
                        .map(|(x, &y)| x * (1.0 - y * y))
                        .collect();
                    self.acc(input, &di);
                }
                Op::Silu(input) => {
                    let di: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.nodes[input].value.data)
                        .map(|(gx, &x)| {
                            let s = sigmoid(x);
                            gx * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    self.acc(input, &di);
                }
                Op::Softmax(input) => {
                    let sh = self.nodes[id].value.shape.clone();
                    let (rows, n) = (sh[0], sh[1]);
                    let y = &self.nodes[id].value.data;
                    let mut di = vec![0.0; rows * n];
                    for r in 0..rows {
                        let dot: f64 = (0..n)
                            .map(|j| g.data[r * n + j] * y[r * n + j])
                            .sum();
                        for j in 0..n {
                            di[r * n + j] = y[r * n + j] * (g.data[r * n + j] - dot);
                        }
                    }
                    self.acc(input, &di);
                }
                Op::Conv1d { input, kernel, pad } => {
                    let ish = self.nodes[input].value.shape.clone();
                    let ksh = self.nodes[kernel].value.shape.clone();
                    let (b, t, ci) = (ish[0], ish[1], ish[2]);
                    let (k, co) = (ksh[0], ksh[2]);
                    let iv = self.nodes[input].value.data.clone();
                    let kv = self.nodes[kernel].value.data.clone();
                    let mut di = vec![0.0; b * t * ci];
                    let mut dk = vec![0.0; k * ci * co];
                    for bi in 0..b {
                        for ti in 0..t {
                            let grow = &g.data[bi * t * co + ti * co..bi * t * co + (ti + 1) * co];
                            for kk in 0..k {
                                let u = ti + kk;
                                if u < pad || u - pad >= t {
                                    continue;
                                }
                                let u = u - pad;
                                let ibase = bi * t * ci + u * ci;
                                for cii in 0..ci {
                                    let kbase = kk * ci * co + cii * co;
                                    let krow = &kv[kbase..kbase + co];
                                    let mut acc = [0.0f64; 4];
                                    let (gc, gt) = grow.split_at(co - co % 4);
                                    let (kc, kt) = krow.split_at(co - co % 4);
                                    for (gx, kx) in
                                        gc.chunks_exact(4).zip(kc.chunks_exact(4))
                                    {
                                        acc[0] += gx[0] * kx[0];
                                        acc[1] += gx[1] * kx[1];
                                        acc[2] += gx[2] * kx[2];
                                        acc[3] += gx[3] * kx[3];
                                    }
                                    let tail: f64 =
                                        gt.iter().zip(kt).map(|(&go, &kw)| go * kw).sum();
                                    di[ibase + cii] +=
                                        acc[0] + acc[1] + acc[2] + acc[3] + tail;
                                    let x = iv[ibase + cii];
                                    if x != 0.0 {
                                        let dkrow = &mut dk[kbase..kbase + co];
                                        for (d, &go) in dkrow.iter_mut().zip(grow) {
                                            *d += x * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.acc(input, &di);
                    self.acc(kernel, &dk);
                }
                Op::Dropout { input, mask } => {
                    let di: Vec<f64> = g.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
                    self.acc(input, &di);
                }
                Op::BceLoss {
                    pred,
                    target,
                    clamped,
                } => {
                    const LO: f64 = 1e-7;
                    const HI: f64 = 1.0 - 1e-7;
                    let n = target.len() as f64;
                    let di: Vec<f64> = self.nodes[pred]
                        .value
                        .data
                        .iter()
                        .zip(&target)
                        .zip(&clamped)
                        .map(|((&p, &y), &was_clamped)| {
                            if was_clamped {
                                0.0
                            } else {
                                let pc = p.clamp(LO, HI);
                                g.data[0] * (pc - y) / (pc * (1.0 - pc)) / n
                            }
                        })
                        .collect();
                    self.acc(pred, &di);
                }
                Op::BsplineBasis {
                    input,
                    knots,
                    order,
                } => {
                    let nb = spline::basis_count(&knots, order);
                    let xv = self.nodes[input].value.data.clone();
                    let mut di = vec![0.0; xv.len()];
                    for (e, &x) in xv.iter().enumerate() {
                        let d = spline::eval_basis_deriv(x, &knots, order);
                        let base = e * nb;
                        di[e] = (0..nb).map(|i| g.data[base + i] * d[i]).sum();
                    }
                    self.acc(input, &di);
                }
                Op::RepeatRows { input, times } => {
                    let (r, c) = (
                        self.nodes[input].value.shape[0],
                        self.nodes[input].value.shape[1],
                    );
                    let mut di = vec![0.0; r * c];
                    for ri in 0..r {
                        for rep in 0..times {
                            let src = (ri * times + rep) * c;
                            for ci in 0..c {
                                di[ri * c + ci] += g.data[src + ci];
                            }
                        }
                    }
                    self.acc(input, &di);
                }
                Op::WeightedSumTime { weights, values } => {
                    let vsh = self.nodes[values].value.shape.clone();
                    let (b, t, c) = (vsh[0], vsh[1], vsh[2]);
                    let wv = self.nodes[weights].value.data.clone();
                    let vv = self.nodes[values].value.data.clone();
                    let mut dw = vec![0.0; b * t];
                    let mut dv = vec![0.0; b * t * c];
                    for bi in 0..b {
                        for ti in 0..t {
                            let vbase = bi * t * c + ti * c;
                            let w = wv[bi * t + ti];
                            let mut s = 0.0;
                            for ci in 0..c {
                                let go = g.data[bi * c + ci];
                                s += go * vv[vbase + ci];
                                dv[vbase + ci] += w * go;
                            }
                            dw[bi * t + ti] = s;
                        }
                    }
                    self.acc(weights, &dw);
                    self.acc(values, &dv);
                }
                Op::Reshape(input) => {
                    self.acc(input, &g.data);
                }
            }
            if let Some(t0) = op_t0 {
                *op_times.entry(op_label(&self.nodes[id].op)).or_insert(0.0) +=
                    t0.elapsed().as_secs_f64();
            }
        }
        if trace {
            for (name, secs) in &op_times {
                eprintln!("bwd {name}: {secs:.3}s");
            }
        }
        Ok(())
    }

    fn acc(&mut self, id: VarId, delta: &[f64]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let buf = self.grad_buf(id);
        for (g, d) in buf.data.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Maximum relative error between analytic and central-difference gradients
/// over every coordinate of every input, with denominator
/// max(1, |analytic|, |numeric|). The program is rebuilt per evaluation on
/// a tape seeded identically, so dropout masks repeat.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[VarId]) -> VarId,
{
    let run = |points: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new(12345);
        let ids: Vec<VarId> = points.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &ids);
        tape.backward(loss).expect("scalar loss");
        let grads = ids.iter().map(|&i| tape.grad(i)).collect();
        (tape.value(loss).item(), grads)
    };
    let (_, analytic) = run(inputs);
    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for ci in 0..t.numel() {
            let mut up = inputs.to_vec();
            up[ti].data[ci] += h;
            let mut dn = inputs.to_vec();
            dn[ti].data[ci] -= h;
            let (fu, _) = run(&up);
            let (fd, _) = run(&dn);
            let num = (fu - fd) / (2.0 * h);
            let ana = analytic[ti].data[ci];
            let denom = 1.0f64.max(ana.abs()).max(num.abs());
            worst = worst.max((ana - num).abs() / denom);
        }
    }
    worst
}

/// Grad-checks every differentiable op at `points` seeded random inputs
/// each and returns the worst (op name, relative error) observed. Shared
/// by the unit suite (small sweep) and the acceptance suite (full sweep).
pub fn op_gradient_sweep(points: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: std::collections::BTreeMap<&'static str, f64> = Default::default();
    for _ in 0..points {
        let mut rt = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        type Build = Box<dyn Fn(&mut Tape, &[VarId]) -> VarId>;
        let cases: Vec<(&'static str, Build, Vec<Tensor>)> = vec![
            (
                "add",
                Box::new(|t, ids| {
                    let s = t.add(ids[0], ids[1]).unwrap();
                    t.reduce_sum(s).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![2, 3])],
            ),
            (
                "sub",
                Box::new(|t, ids| {
                    let s = t.sub(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![2, 3])],
            ),
            (
                "mul",
                Box::new(|t, ids| {
                    let s = t.mul(ids[0], ids[1]).unwrap();
                    t.reduce_sum(s).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![2, 3])],
            ),
            (
                "add_row",
                Box::new(|t, ids| {
                    let s = t.add_row(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![3, 4]), rt(vec![4])],
            ),
            (
                "mul_col",
                Box::new(|t, ids| {
                    let s = t.mul_col(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![3, 4]), rt(vec![3, 1])],
            ),
            (
                "matmul",
                Box::new(|t, ids| {
                    let s = t.matmul(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![3, 4])],
            ),
            (
                "concat",
                Box::new(|t, ids| {
                    let s = t.concat(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![2, 2])],
            ),
            (
                "slice_cols",
                Box::new(|t, ids| {
                    let s = t.slice_cols(ids[0], 1, 3).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 4])],
            ),
            (
                "slice_time",
                Box::new(|t, ids| {
                    let s = t.slice_time(ids[0], 1).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3, 2])],
            ),
            (
                "stack_time",
                Box::new(|t, ids| {
                    let s = t.stack_time(&[ids[0], ids[1]]).unwrap();
                    let z = t.reshape(s, vec![2, 4]).unwrap();
                    let m = t.mul(z, z).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 2]), rt(vec![2, 2])],
            ),
            (
                "gather",
                Box::new(|t, ids| {
                    let s = t.gather(ids[0], &[0, 2, 0]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![3, 2])],
            ),
            (
                "reduce_mean",
                Box::new(|t, ids| {
                    let m = t.mul(ids[0], ids[0]).unwrap();
                    t.reduce_mean(m).unwrap()
                }),
                vec![rt(vec![3, 3])],
            ),
            (
                "sigmoid",
                Box::new(|t, ids| {
                    let s = t.sigmoid(ids[0]).unwrap();
                    t.reduce_sum(s).unwrap()
                }),
                vec![rt(vec![2, 3])],
            ),
            (
                "tanh",
                Box::new(|t, ids| {
                    let s = t.tanh(ids[0]).unwrap();
                    t.reduce_sum(s).unwrap()
                }),
                vec![rt(vec![2, 3])],
            ),
            (
                "silu",
                Box::new(|t, ids| {
                    let s = t.silu(ids[0]).unwrap();
                    t.reduce_sum(s).unwrap()
                }),
                vec![rt(vec![2, 3])],
            ),
            (
                "softmax",
                Box::new(|t, ids| {
                    let s = t.softmax(ids[0]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 4])],
            ),
            (
                "conv1d",
                Box::new(|t, ids| {
                    let s = t.conv1d(ids[0], ids[1]).unwrap();
                    let z = t.reshape(s, vec![2, 5 * 3]).unwrap();
                    let m = t.mul(z, z).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 5, 2]), rt(vec![3, 2, 3])],
            ),
            (
                "dropout",
                Box::new(|t, ids| {
                    let s = t.dropout(ids[0], 0.4).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![3, 3])],
            ),
            (
                "bce_loss",
                Box::new(|t, ids| {
                    let p = t.sigmoid(ids[0]).unwrap();
                    let y = Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0]);
                    t.bce_loss(p, &y).unwrap()
                }),
                vec![rt(vec![4])],
            ),
            (
                "bspline_basis",
                Box::new(|t, ids| {
                    let knots = spline::uniform_knots(-1.0, 1.0, 5, 3);
                    let s = t.bspline_basis(ids[0], &knots, 3).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                // keep away from domain edges where clamping kinks
                vec![{
                    let mut x = rt(vec![1, 3]);
                    for v in x.data_mut() {
                        *v *= 0.7;
                    }
                    x
                }],
            ),
            (
                "repeat_rows",
                Box::new(|t, ids| {
                    let s = t.repeat_rows(ids[0], 3).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 2])],
            ),
            (
                "weighted_sum_time",
                Box::new(|t, ids| {
                    let s = t.weighted_sum_time(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3]), rt(vec![2, 3, 2])],
            ),
            (
                "reshape",
                Box::new(|t, ids| {
                    let s = t.reshape(ids[0], vec![6]).unwrap();
                    let m = t.mul(s, s).unwrap();
                    t.reduce_sum(m).unwrap()
                }),
                vec![rt(vec![2, 3])],
            ),
        ];
        for (name, build, inputs) in cases {
            let err = grad_check(build.as_ref(), &inputs, 1e-4);
            let w = worst.entry(name).or_insert(0.0);
            if err > *w {
                *w = err;
            }
        }
    }
    worst.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[6.0]);
    }

    #[test]
    fn sigmoid_of_scaled_input() {
        // f(x) = sigmoid(2x) at x=0 → grad 0.5
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let two = tape.constant(Tensor::scalar(2.0));
        let xx = tape.mul(x, two).unwrap();
        let y = tape.sigmoid(xx).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        assert!((tape.grad(x).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unused_tensor_gets_zero_grad() {
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::scalar(1.0), true);
        let z = tape.leaf(Tensor::scalar(5.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(z).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::zeros(vec![2, 2]), true);
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new(0);
        let a = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let b = tape.constant(Tensor::new(vec![3, 1], vec![7., 8., 9.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[50.0, 122.0]);
    }

    #[test]
    fn softmax_uniform_and_row_sums() {
        let mut tape = Tape::new(0);
        let x = tape.constant(Tensor::new(vec![1, 4], vec![2.0; 4]));
        let y = tape.softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x2 = rand_tensor(&mut rng, vec![5, 7]);
        let mut tape = Tape::new(0);
        let id = tape.constant(x2);
        let y2 = tape.softmax(id).unwrap();
        let v = tape.value(y2);
        for r in 0..5 {
            let s: f64 = v.data()[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_ones_kernel_interior_equals_width() {
        for k in [1usize, 3, 5] {
            let mut tape = Tape::new(0);
            let x = tape.constant(Tensor::new(vec![1, 9, 1], vec![1.0; 9]));
            let w = tape.constant(Tensor::new(vec![k, 1, 1], vec![1.0; k]));
            let y = tape.conv1d(x, w).unwrap();
            let pad = (k - 1) / 2;
            let v = tape.value(y);
            for t in pad..9 - pad {
                assert_eq!(v.data()[t], k as f64, "k={k} t={t}");
            }
        }
    }

    #[test]
    fn dropout_eval_identity_and_train_scaling() {
        let mut tape = Tape::new(9);
        tape.train = false;
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let y = tape.dropout(x, 0.5).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        // train mode: E[output] = input under the inverted scaling
        let n = 20000;
        let mut tape = Tape::new(9);
        let x = tape.constant(Tensor::new(vec![1, n], vec![1.0; n]));
        let y = tape.dropout(x, 0.3).unwrap();
        let mean: f64 = tape.value(y).data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn bce_loss_nonnegative_and_counts_clamps() {
        let mut tape = Tape::new(0);
        let p = tape.constant(Tensor::new(vec![3], vec![0.5, 1.5, -0.2]));
        let y = Tensor::new(vec![3], vec![1.0, 0.0, 1.0]);
        let l = tape.bce_loss(p, &y).unwrap();
        assert!(tape.value(l).item() >= 0.0);
        assert_eq!(tape.bce_clamp_events, 2);
    }

    #[test]
    fn bce_rejects_bad_targets() {
        let mut tape = Tape::new(0);
        let p = tape.constant(Tensor::new(vec![1], vec![0.5]));
        let y = Tensor::new(vec![1], vec![2.0]);
        assert!(matches!(
            tape.bce_loss(p, &y),
            Err(AutodiffError::InvalidProbability(_))
        ));
    }

    #[test]
    fn constant_function_zero_gradient() {
        let err = grad_check(
            |tape, ids| {
                let c = tape.constant(Tensor::scalar(4.0));
                let _ = ids; // input unused
                tape.reduce_sum(c).unwrap()
            },
            &[Tensor::scalar(1.0)],
            1e-4,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn bce_of_sigmoid_linear_model_grad_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = rand_tensor(&mut rng, vec![3, 1]);
        let x = rand_tensor(&mut rng, vec![4, 3]);
        let err = grad_check(
            |tape, ids| {
                let z = tape.matmul(ids[1], ids[0]).unwrap();
                let p = tape.sigmoid(z).unwrap();
                let y = Tensor::new(vec![4, 1], vec![1.0, 0.0, 1.0, 0.0]);
                tape.bce_loss(p, &y).unwrap()
            },
            &[w, x],
            1e-4,
        );
        assert!(err < 1e-4, "err {err}");
    }

    /// Every differentiable op, grad-checked at seeded random points.
    #[test]
    fn per_op_gradient_fidelity() {
        // small sweep; the acceptance suite runs 100 points per op
        for (name, err) in op_gradient_sweep(10, 777) {
            assert!(err < 1e-4, "op {name}: err {err}");
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new(0);
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 3]));
        assert!(matches!(
            tape.add(a, b),
            Err(AutodiffError::ShapeMismatch { op: "add", .. })
        ));
        assert!(matches!(
            tape.matmul(b, b).and_then(|_| tape.matmul(a, a)),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn fan_out_gradients_sum() {
        // y = x·x + x → dy/dx = 2x + 1
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::scalar(4.0), true);
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), 9.0);
    }
}
