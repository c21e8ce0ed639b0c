//! Kolmogorov–Arnold layer: trainable B-spline edge functions aggregated by
//! summation, used to enhance per-gadget structural features.

use crate::autodiff::spline;
use crate::autodiff::{Tape, Tensor, VarId};
use crate::gadgets::CodeGadget;
use crate::graphs::{Ast, Pdg, NODE_KIND_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_GRID: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum KanError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature scaler has not been fitted")]
    ScalerNotFitted,
}

/// Cox–de Boor basis values with knot validation.
pub fn bspline_basis(x: f64, knots: &[f64], order: usize) -> Result<Vec<f64>, KanError> {
    if knots.len() < order + 2 {
        return Err(KanError::InvalidKnots(format!(
            "{} knots cannot support order {order}",
            knots.len()
        )));
    }
    if knots.windows(2).any(|w| w[0] > w[1]) {
        return Err(KanError::InvalidKnots("knots must be non-decreasing".into()));
    }
    Ok(spline::eval_basis(x, knots, order))
}

/// One edge function: phi(x) = w_b·x·σ(x) + w_s·Σ_i c_i·B_i(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateFn {
    pub w_b: f64,
    pub w_s: f64,
    pub coef: Vec<f64>,
    pub knots: Vec<f64>,
    pub order: usize,
}

pub fn phi_eval(f: &UnivariateFn, x: f64) -> f64 {
    let basis = spline::eval_basis(x, &f.knots, f.order);
    let s: f64 = basis.iter().zip(&f.coef).map(|(b, c)| b * c).sum();
    let sig = 1.0 / (1.0 + (-x).exp());
    f.w_b * x * sig + f.w_s * s
}

/// A layer of d_out × d_in edge functions sharing one knot vector; output
/// q = Σ_p phi_{q,p}(x_p). Parameters are stored transposed ([d_in, …]) so
/// the batched tape forward is a plain matmul.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub knots: Vec<f64>,
    pub order: usize,
    /// Base weights, [d_in × d_out] row-major.
    pub wb: Vec<f64>,
    /// Spline weights, [d_in × d_out] row-major.
    pub ws: Vec<f64>,
    /// Spline coefficients, [d_in·nb × d_out] row-major; rows grouped by
    /// input then basis index.
    pub coef: Vec<f64>,
}

impl KanLayer {
    pub fn nb(&self) -> usize {
        spline::basis_count(&self.knots, self.order)
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        let knots = spline::uniform_knots(-1.0, 1.0, DEFAULT_GRID, DEFAULT_ORDER);
        let nb = spline::basis_count(&knots, DEFAULT_ORDER);
        Self {
            d_in,
            d_out,
            knots,
            order: DEFAULT_ORDER,
            wb: vec![0.0; d_in * d_out],
            ws: vec![0.0; d_in * d_out],
            coef: vec![0.0; d_in * nb * d_out],
        }
    }

    pub fn seeded(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(d_in, d_out);
        let scale = 1.0 / (d_in as f64).sqrt();
        for w in layer.wb.iter_mut() {
            *w = rng.gen_range(-scale..scale);
        }
        for w in layer.ws.iter_mut() {
            *w = 1.0;
        }
        for c in layer.coef.iter_mut() {
            *c = rng.gen_range(-0.1 * scale..0.1 * scale);
        }
        layer
    }

    /// Edge function (q, p) in scalar form.
    pub fn edge(&self, q: usize, p: usize) -> UnivariateFn {
        let nb = self.nb();
        UnivariateFn {
            w_b: self.wb[p * self.d_out + q],
            w_s: self.ws[p * self.d_out + q],
            coef: (0..nb)
                .map(|i| self.coef[(p * nb + i) * self.d_out + q] )
                .collect(),
            knots: self.knots.clone(),
            order: self.order,
        }
    }

    /// Scalar forward for one input vector.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, KanError> {
        if x.len() != self.d_in {
            return Err(KanError::DimensionMismatch {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.d_out];
        for q in 0..self.d_out {
            for (p, &xp) in x.iter().enumerate() {
                out[q] += phi_eval(&self.edge(q, p), xp);
            }
        }
        Ok(out)
    }
}

/// Parameters of one layer as tape leaves.
pub struct KanLayerVars {
    pub wb: VarId,
    pub ws: VarId,
    pub coef: VarId,
}

impl KanLayer {
    pub fn leaves(&self, tape: &mut Tape, trainable: bool) -> KanLayerVars {
        let nb = self.nb();
        KanLayerVars {
            wb: tape.leaf(
                Tensor::new(vec![self.d_in, self.d_out], self.wb.clone()),
                trainable,
            ),
            ws: tape.leaf(
                Tensor::new(vec![self.d_in, self.d_out], self.ws.clone()),
                trainable,
            ),
            coef: tape.leaf(
                Tensor::new(vec![self.d_in * nb, self.d_out], self.coef.clone()),
                trainable,
            ),
        }
    }

    /// Batched tape forward: x [B, d_in] → [B, d_out].
    pub fn forward(&self, tape: &mut Tape, x: VarId, vars: &KanLayerVars) -> VarId {
        let nb = self.nb();
        let act = tape.silu(x).unwrap();
        let base = tape.matmul(act, vars.wb).unwrap();
        let basis = tape.bspline_basis(x, &self.knots, self.order).unwrap();
        let ws_rep = tape.repeat_rows(vars.ws, nb).unwrap();
        let wsp = tape.mul(ws_rep, vars.coef).unwrap();
        let spl = tape.matmul(basis, wsp).unwrap();
        tape.add(base, spl).unwrap()
    }
}

/// A stacked KAN; the default shape is d_in → 2·d_in+1 → d_out (Eq. 1's
/// 2n+1 hidden width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanStack {
    pub layers: Vec<KanLayer>,
}

impl KanStack {
    pub fn with_default_hidden(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = 2 * d_in + 1;
        Self {
            layers: vec![
                KanLayer::seeded(d_in, hidden, &mut rng),
                KanLayer::seeded(hidden, d_out, &mut rng),
            ],
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().d_out
    }
}

/// Scalar forward of the stack for one vector.
pub fn kan_forward(stack: &KanStack, x: &[f64]) -> Result<Vec<f64>, KanError> {
    let mut v = x.to_vec();
    for layer in &stack.layers {
        v = layer.eval(&v)?;
    }
    Ok(v)
}

/// Batched tape forward of the stack.
pub fn kan_forward_tape(
    stack: &KanStack,
    tape: &mut Tape,
    x: VarId,
    vars: &[KanLayerVars],
) -> VarId {
    let mut v = x;
    for (layer, lv) in stack.layers.iter().zip(vars) {
        v = layer.forward(tape, v, lv);
    }
    v
}

/// Min-max scaler onto [−1,1], fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub fitted: bool,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for (i, &x) in r.iter().enumerate() {
                mins[i] = mins[i].min(x);
                maxs[i] = maxs[i].max(x);
            }
        }
        Self {
            mins,
            maxs,
            fitted: !rows.is_empty(),
        }
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, KanError> {
        if !self.fitted {
            return Err(KanError::ScalerNotFitted);
        }
        if row.len() != self.mins.len() {
            return Err(KanError::DimensionMismatch {
                expected: self.mins.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let span = self.maxs[i] - self.mins[i];
                if span == 0.0 {
                    0.0
                } else {
                    // out-of-range test values clamp to the training domain
                    (2.0 * (x - self.mins[i]) / span - 1.0).clamp(-1.0, 1.0)
                }
            })
            .collect())
    }
}

/// Raw (pre-scaling) structural feature vector: statement count, token
/// count, 8-kind AST histogram, data/control edge counts, max in/out
/// degree, and a seed-category one-hot over `categories`.
pub fn struct_features(
    ast: &Ast,
    pdg: &Pdg,
    gadget: &CodeGadget,
    categories: &[String],
) -> Vec<f64> {
    let mut v = Vec::with_capacity(6 + NODE_KIND_COUNT + categories.len());
    v.push(gadget.statements.len() as f64);
    v.push(gadget.tokens.len() as f64);
    for k in ast.kind_histogram() {
        v.push(k as f64);
    }
    v.push(pdg.data_edges.len() as f64);
    v.push(pdg.control_edges.len() as f64);
    v.push(pdg.max_in_degree() as f64);
    v.push(pdg.max_out_degree() as f64);
    for c in categories {
        v.push(if *c == gadget.seed.category { 1.0 } else { 0.0 });
    }
    v
}

/// Dimension of the feature vector for a given category list.
pub fn struct_feature_dim(n_categories: usize) -> usize {
    6 + NODE_KIND_COUNT + n_categories
}
