//! Peephole BiLSTM → inception → attention → residual classifier trained
//! with AdaMax on the autodiff tape.
//!
//! All trainable parameters live in a named `ParamStore`, so the optimizer
//! state and the checkpoint format share one section naming scheme.

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};
use crate::embedding::{EmbeddingTable, Vocab, PAD};
use crate::eval::{confusion, metrics, MetricsReport};
use crate::gadgets::CodeGadget;
use crate::graphs::{Ast, Pdg};
use crate::kan::{kan_forward_tape, struct_features, KanError, KanLayerVars, KanStack};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFMB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("all positions masked")]
    AllMasked,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("artifact digest {found} does not match model digest {expected}")]
    ConfigDigestMismatch { expected: String, found: String },
    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kan(#[from] KanError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// Hyperparameters; the training block mirrors Table 4 of the reference
/// configuration (batch 64, epochs 30, AdaMax lr 0.001, dropout 0.5,
/// 500-token cutoff, 100-dim embeddings, 256-wide hidden concat).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub embed_dim: usize,
    /// Hidden units per direction; the concatenated width is 2× this.
    pub hidden: usize,
    pub layers: usize,
    pub attn_dim: usize,
    /// Output width of the KAN feature-enhancement stack.
    pub kan_out: usize,
    /// Structural feature dimension (input to the KAN stack).
    pub struct_dim: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_tokens: usize,
    pub seed: u64,
    /// Frozen embeddings by default; flip to fine-tune the table.
    pub trainable_embeddings: bool,
    /// Stop once the mean epoch train loss drops below this (epochs is the
    /// upper bound either way).
    pub early_stop_loss: Option<f64>,
    /// Validation-based early stopping: stop once held-out accuracy
    /// reaches this level (epochs is the upper bound either way).
    pub early_stop_heldout_acc: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            hidden: 128,
            layers: 3,
            attn_dim: 128,
            kan_out: 16,
            struct_dim: 0,
            dropout: 0.5,
            batch_size: 64,
            epochs: 30,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_tokens: 500,
            seed: 1,
            trainable_embeddings: false,
            early_stop_loss: Some(0.02),
            early_stop_heldout_acc: Some(0.99),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::InvalidConfig(m.into()));
        if self.embed_dim == 0 || self.hidden == 0 || self.attn_dim == 0 || self.kan_out == 0 {
            return bad("dimensions must be ≥ 1");
        }
        if self.layers == 0 || self.batch_size == 0 || self.epochs == 0 || self.max_tokens == 0 {
            return bad("layers, batch_size, epochs, max_tokens must be ≥ 1");
        }
        if self.struct_dim == 0 {
            return bad("struct_dim must be set from the feature extractor");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0,1)");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if let Some(a) = self.early_stop_heldout_acc {
            if !(0.0..=1.0).contains(&a) {
                return bad("early_stop_heldout_acc must lie in [0,1]");
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        crate::digest::hex256(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Scalar LSTM parameters for one direction; fused gate matrices hold the
/// four gate blocks in column order i | f | o | g.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// [input × 4·hidden], row-major.
    pub w: Vec<f64>,
    /// [hidden × 4·hidden], row-major.
    pub u: Vec<f64>,
    /// [4·hidden].
    pub bias: Vec<f64>,
    /// Peephole weights, [hidden] each; candidate g has none.
    pub vi: Vec<f64>,
    pub vf: Vec<f64>,
    pub vo: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w: vec![0.0; input * 4 * hidden],
            u: vec![0.0; hidden * 4 * hidden],
            bias: vec![0.0; 4 * hidden],
            vi: vec![0.0; hidden],
            vf: vec![0.0; hidden],
            vo: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One peephole step: i,f,o = σ(Wx + Uh + V⊙c_prev + b), g = tanh(Wx + Uh
/// + b), c = f⊙c_prev + i⊙g, h = o⊙tanh(c).
pub fn lstm_step(p: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState, NetworkError> {
    let hdim = p.hidden;
    if x.len() != p.input || state.h.len() != hdim || state.c.len() != hdim {
        return Err(NetworkError::ShapeMismatch(format!(
            "x {} state {}/{} vs input {} hidden {hdim}",
            x.len(),
            state.h.len(),
            state.c.len(),
            p.input
        )));
    }
    // fused preactivations [4H]
    let mut pre = p.bias.clone();
    for (r, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &p.w[r * 4 * hdim..(r + 1) * 4 * hdim];
        for (j, &wv) in row.iter().enumerate() {
            pre[j] += xv * wv;
        }
    }
    for (r, &hv) in state.h.iter().enumerate() {
        if hv == 0.0 {
            continue;
        }
        let row = &p.u[r * 4 * hdim..(r + 1) * 4 * hdim];
        for (j, &uv) in row.iter().enumerate() {
            pre[j] += hv * uv;
        }
    }
    let mut h = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    for j in 0..hdim {
        let i = sigmoid(pre[j] + p.vi[j] * state.c[j]);
        let f = sigmoid(pre[hdim + j] + p.vf[j] * state.c[j]);
        let o = sigmoid(pre[2 * hdim + j] + p.vo[j] * state.c[j]);
        let g = (pre[3 * hdim + j]).tanh();
        c[j] = f * state.c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok(LstmState { h, c })
}

/// Named f64 parameter tensors; BTreeMap keeps section order deterministic.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout: MetricsReport,
}

/// Everything needed for inference: config, parameters (embedding table
/// included), scaler bounds, and the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: NetworkConfig,
    pub params: ParamStore,
    pub scaler: crate::kan::MinMaxScaler,
    pub vocab_digest: u64,
    pub history: Vec<EpochRecord>,
    kan: KanStack,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl ModelBundle {
    /// Seeded initialization; the embedding table is copied into the store
    /// under `embed.table`.
    pub fn init(
        config: NetworkConfig,
        table: &EmbeddingTable,
        vocab: &Vocab,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        if table.dim != config.embed_dim {
            return Err(NetworkError::ShapeMismatch(format!(
                "embedding dim {} vs config {}",
                table.dim, config.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let two_h = 2 * h;
        let mut params = ParamStore::new();

        let vlen = table.input.len();
        let flat: Vec<f64> = table.input.iter().flatten().copied().collect();
        params.insert(
            "embed.table".into(),
            Tensor::new(vec![vlen, config.embed_dim], flat),
        );

        for layer in 0..config.layers {
            let d_in = if layer == 0 { config.embed_dim } else { two_h };
            let ws = 1.0 / (d_in as f64).sqrt();
            let us = 1.0 / (h as f64).sqrt();
            for dir in ["f", "b"] {
                let pfx = format!("lstm.l{layer}.{dir}");
                params.insert(
                    format!("{pfx}.w"),
                    Tensor::new(vec![d_in, 4 * h], uniform(&mut rng, d_in * 4 * h, ws)),
                );
                params.insert(
                    format!("{pfx}.u"),
                    Tensor::new(vec![h, 4 * h], uniform(&mut rng, h * 4 * h, us)),
                );
                // forget-gate bias 1 keeps early gradients flowing
                let mut bias = vec![0.0; 4 * h];
                bias[h..2 * h].fill(1.0);
                params.insert(format!("{pfx}.bias"), Tensor::new(vec![4 * h], bias));
                for gate in ["vi", "vf", "vo"] {
                    params.insert(
                        format!("{pfx}.{gate}"),
                        Tensor::new(vec![1, h], uniform(&mut rng, h, us)),
                    );
                }
            }
        }

        for k in [1usize, 3, 5] {
            let scale = 1.0 / ((k * two_h) as f64).sqrt();
            params.insert(
                format!("incep.k{k}"),
                Tensor::new(
                    vec![k, two_h, two_h],
                    uniform(&mut rng, k * two_h * two_h, scale),
                ),
            );
        }

        let ascale = 1.0 / (two_h as f64).sqrt();
        let a = config.attn_dim;
        params.insert(
            "attn.wa".into(),
            Tensor::new(vec![two_h, a], uniform(&mut rng, two_h * a, ascale)),
        );
        params.insert(
            "attn.ua".into(),
            Tensor::new(vec![two_h, a], uniform(&mut rng, two_h * a, ascale)),
        );
        params.insert("attn.ba".into(), Tensor::new(vec![a], vec![0.0; a]));
        params.insert(
            "attn.v".into(),
            Tensor::new(vec![a, 1], uniform(&mut rng, a, 1.0 / (a as f64).sqrt())),
        );

        let kan = KanStack::with_default_hidden(config.struct_dim, config.kan_out, config.seed);
        for (i, l) in kan.layers.iter().enumerate() {
            params.insert(
                format!("kan.{i}.wb"),
                Tensor::new(vec![l.d_in, l.d_out], l.wb.clone()),
            );
            params.insert(
                format!("kan.{i}.ws"),
                Tensor::new(vec![l.d_in, l.d_out], l.ws.clone()),
            );
            params.insert(
                format!("kan.{i}.coef"),
                Tensor::new(vec![l.d_in * l.nb(), l.d_out], l.coef.clone()),
            );
        }

        let z_dim = two_h + config.kan_out;
        params.insert(
            "out.w".into(),
            Tensor::new(
                vec![z_dim, 1],
                uniform(&mut rng, z_dim, 1.0 / (z_dim as f64).sqrt()),
            ),
        );
        params.insert("out.b".into(), Tensor::new(vec![1], vec![0.0]));

        Ok(Self {
            config,
            params,
            scaler: crate::kan::MinMaxScaler::default(),
            vocab_digest: vocab.digest(),
            history: Vec::new(),
            kan,
        })
    }

    pub fn kan_stack(&self) -> &KanStack {
        &self.kan
    }
}

/// One classified example: token ids (pre-truncation) plus the raw
/// (unscaled) structural feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub ids: Vec<usize>,
    pub struct_raw: Vec<f64>,
    pub label: u8,
}

/// Build a TrainExample from pipeline artifacts.
pub fn make_example(
    gadget: &CodeGadget,
    vocab: &Vocab,
    ast: &Ast,
    pdg: &Pdg,
    categories: &[String],
) -> TrainExample {
    TrainExample {
        ids: gadget.tokens.iter().map(|t| vocab.id(t)).collect(),
        struct_raw: struct_features(ast, pdg, gadget, categories),
        label: gadget.label,
    }
}

struct Batch {
    b: usize,
    t: usize,
    /// Flattened [B·T] padded token ids.
    ids: Vec<usize>,
    lens: Vec<usize>,
    /// Scaled structural rows [B, struct_dim].
    structs: Tensor,
    targets: Tensor,
}

fn build_batch(
    examples: &[&TrainExample],
    cfg: &NetworkConfig,
    scaler: &crate::kan::MinMaxScaler,
) -> Result<Batch, NetworkError> {
    let b = examples.len();
    // effective length ignores trailing PAD so padded inputs score the same
    let lens: Vec<usize> = examples
        .iter()
        .map(|e| {
            e.ids
                .iter()
                .rposition(|&id| id != PAD)
                .map_or(0, |p| p + 1)
                .min(cfg.max_tokens)
        })
        .collect();
    if lens.iter().any(|&l| l == 0) {
        return Err(NetworkError::AllMasked);
    }
    // effective batch width: trailing PAD never changes scores, so pad only
    // to the longest real sequence
    let t = *lens.iter().max().unwrap();
    let mut ids = vec![PAD; b * t];
    for (bi, e) in examples.iter().enumerate() {
        for (ti, &id) in e.ids.iter().take(lens[bi]).enumerate() {
            ids[bi * t + ti] = id;
        }
    }
    let mut srows = Vec::with_capacity(b * cfg.struct_dim);
    for e in examples {
        srows.extend(scaler.transform(&e.struct_raw)?);
    }
    let targets = Tensor::new(
        vec![b, 1],
        examples.iter().map(|e| f64::from(e.label)).collect(),
    );
    Ok(Batch {
        b,
        t,
        ids,
        lens,
        structs: Tensor::new(vec![b, cfg.struct_dim], srows),
        targets,
    })
}

/// Tape leaves for every parameter, keyed by store name.
fn stage_params(tape: &mut Tape, bundle: &ModelBundle, train: bool) -> BTreeMap<String, VarId> {
    bundle
        .params
        .iter()
        .map(|(name, t)| {
            let rg = train && (name != "embed.table" || bundle.config.trainable_embeddings);
            (name.clone(), tape.leaf(t.clone(), rg))
        })
        .collect()
}

fn one_dir(
    tape: &mut Tape,
    vars: &BTreeMap<String, VarId>,
    pfx: &str,
    xs: &[VarId],
    step_masks: &[VarId],
    order: &[usize],
    b: usize,
    h: usize,
) -> Result<Vec<VarId>, NetworkError> {
    let w = vars[&format!("{pfx}.w")];
    let u = vars[&format!("{pfx}.u")];
    let bias = vars[&format!("{pfx}.bias")];
    let vi = tape.repeat_rows(vars[&format!("{pfx}.vi")], b)?;
    let vf = tape.repeat_rows(vars[&format!("{pfx}.vf")], b)?;
    let vo = tape.repeat_rows(vars[&format!("{pfx}.vo")], b)?;
    let mut hstate = tape.constant(Tensor::zeros(vec![b, h]));
    let mut cstate = tape.constant(Tensor::zeros(vec![b, h]));
    let mut out = vec![0; xs.len()];
    for &t in order {
        let xw = tape.matmul(xs[t], w)?;
        let hu = tape.matmul(hstate, u)?;
        let lin = tape.add(xw, hu)?;
        let pre = tape.add_row(lin, bias)?;
        let pre_i = tape.slice_cols(pre, 0, h)?;
        let pre_f = tape.slice_cols(pre, h, 2 * h)?;
        let pre_o = tape.slice_cols(pre, 2 * h, 3 * h)?;
        let pre_g = tape.slice_cols(pre, 3 * h, 4 * h)?;
        let peep_i = tape.mul(cstate, vi)?;
        let peep_f = tape.mul(cstate, vf)?;
        let peep_o = tape.mul(cstate, vo)?;
        let gi = tape.add(pre_i, peep_i)?;
        let gf = tape.add(pre_f, peep_f)?;
        let go = tape.add(pre_o, peep_o)?;
        let i = tape.sigmoid(gi)?;
        let f = tape.sigmoid(gf)?;
        let o = tape.sigmoid(go)?;
        let g = tape.tanh(pre_g)?;
        let fc = tape.mul(f, cstate)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        // zero state through PAD positions so padding never leaks forward
        cstate = tape.mul_col(c_new, step_masks[t])?;
        hstate = tape.mul_col(h_new, step_masks[t])?;
        out[t] = hstate;
    }
    Ok(out)
}

/// Full forward pass for one batch; returns the probability column [B,1].
fn forward(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BTreeMap<String, VarId>,
    batch: &Batch,
) -> Result<VarId, NetworkError> {
    Ok(forward_parts(tape, bundle, vars, batch)?.0)
}

/// Full forward pass; returns (probabilities, attention weights [B,T]).
fn forward_parts(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BTreeMap<String, VarId>,
    batch: &Batch,
) -> Result<(VarId, VarId), NetworkError> {
    let cfg = &bundle.config;
    let (b, t, h) = (batch.b, batch.t, cfg.hidden);

    let embedded = tape.gather(vars["embed.table"], &batch.ids)?;
    let seq = tape.reshape(embedded, vec![b, t, cfg.embed_dim])?;
    let mut xs: Vec<VarId> = (0..t).map(|ti| tape.slice_time(seq, ti)).collect::<Result<_, _>>()?;

    let step_masks: Vec<VarId> = (0..t)
        .map(|ti| {
            let col: Vec<f64> = batch
                .lens
                .iter()
                .map(|&l| if ti < l { 1.0 } else { 0.0 })
                .collect();
            tape.constant(Tensor::new(vec![b, 1], col))
        })
        .collect();

    let fwd_order: Vec<usize> = (0..t).collect();
    let bwd_order: Vec<usize> = (0..t).rev().collect();
    for layer in 0..cfg.layers {
        let fw = one_dir(
            tape,
            vars,
            &format!("lstm.l{layer}.f"),
            &xs,
            &step_masks,
            &fwd_order,
            b,
            h,
        )?;
        let bw = one_dir(
            tape,
            vars,
            &format!("lstm.l{layer}.b"),
            &xs,
            &step_masks,
            &bwd_order,
            b,
            h,
        )?;
        let mut next = Vec::with_capacity(t);
        for ti in 0..t {
            let mut cat = tape.concat(fw[ti], bw[ti])?;
            if layer + 1 < cfg.layers && cfg.dropout > 0.0 {
                cat = tape.dropout(cat, cfg.dropout)?;
            }
            next.push(cat);
        }
        xs = next;
    }

    let hseq = tape.stack_time(&xs)?;
    let c1 = tape.conv1d(hseq, vars["incep.k1"])?;
    let c3 = tape.conv1d(hseq, vars["incep.k3"])?;
    let c5 = tape.conv1d(hseq, vars["incep.k5"])?;
    let s13 = tape.add(c1, c3)?;
    let incep = tape.add(s13, c5)?;

    // masked-mean query over the inception sequence
    let mean_w: Vec<f64> = batch
        .lens
        .iter()
        .flat_map(|&l| (0..t).map(move |ti| if ti < l { 1.0 / l as f64 } else { 0.0 }))
        .collect();
    let mean_w = tape.constant(Tensor::new(vec![b, t], mean_w));
    let hbar = tape.weighted_sum_time(mean_w, incep)?;

    let q = tape.matmul(hbar, vars["attn.wa"])?;
    let mut energies = Vec::with_capacity(t);
    for ti in 0..t {
        let ht = tape.slice_time(incep, ti)?;
        let ut = tape.matmul(ht, vars["attn.ua"])?;
        let qu = tape.add(q, ut)?;
        let act = tape.add_row(qu, vars["attn.ba"])?;
        let th = tape.tanh(act)?;
        energies.push(tape.matmul(th, vars["attn.v"])?);
    }
    let mut e = energies[0];
    for &et in &energies[1..] {
        e = tape.concat(e, et)?;
    }
    let neg: Vec<f64> = batch
        .lens
        .iter()
        .flat_map(|&l| (0..t).map(move |ti| if ti < l { 0.0 } else { -1e30 }))
        .collect();
    let neg = tape.constant(Tensor::new(vec![b, t], neg));
    let e_masked = tape.add(e, neg)?;
    let alpha = tape.softmax(e_masked)?;
    let context = tape.weighted_sum_time(alpha, incep)?;

    let h_res = tape.add(hbar, context)?;

    let x_struct = tape.constant(batch.structs.clone());
    let kan_vars: Vec<KanLayerVars> = (0..bundle.kan.layers.len())
        .map(|i| KanLayerVars {
            wb: vars[&format!("kan.{i}.wb")],
            ws: vars[&format!("kan.{i}.ws")],
            coef: vars[&format!("kan.{i}.coef")],
        })
        .collect();
    let kout = kan_forward_tape(&bundle.kan, tape, x_struct, &kan_vars);

    let mut z = tape.concat(h_res, kout)?;
    if cfg.dropout > 0.0 {
        z = tape.dropout(z, cfg.dropout)?;
    }
    let logits = tape.matmul(z, vars["out.w"])?;
    let logits = tape.add_row(logits, vars["out.b"])?;
    Ok((tape.sigmoid(logits)?, alpha))
}

/// Eval-mode attention weights, one row of `max(1, effective length)`…`T`
/// softmax masses per example. Exposed so the normalization invariant can
/// be checked against the real model from outside the crate.
pub fn attention_weights(
    bundle: &ModelBundle,
    examples: &[TrainExample],
) -> Result<Vec<Vec<f64>>, NetworkError> {
    if examples.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let cfg = &bundle.config;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(cfg.batch_size) {
        let refs: Vec<&TrainExample> = chunk.iter().collect();
        let batch = build_batch(&refs, cfg, &bundle.scaler)?;
        let mut tape = Tape::new(cfg.seed);
        tape.train = false;
        let vars = stage_params(&mut tape, bundle, false);
        let (_, alpha) = forward_parts(&mut tape, bundle, &vars, &batch)?;
        let vals = tape.value(alpha);
        for bi in 0..batch.b {
            out.push(vals.data()[bi * batch.t..(bi + 1) * batch.t].to_vec());
        }
    }
    Ok(out)
}

/// AdaMax moments per named parameter.
struct AdaMax {
    m: ParamStore,
    u: ParamStore,
    step: u64,
}

impl AdaMax {
    fn new(params: &ParamStore) -> Self {
        let zeros: ParamStore = params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
            .collect();
        Self {
            m: zeros.clone(),
            u: zeros,
            step: 0,
        }
    }

    fn update(&mut self, name: &str, theta: &mut Tensor, grad: &Tensor, cfg: &NetworkConfig) {
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bias = 1.0 - b1.powi(self.step as i32);
        let m = self.m.get_mut(name).unwrap().data_mut();
        let u = self.u.get_mut(name).unwrap().data_mut();
        for ((t, (&g, mi)), ui) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data().iter().zip(m.iter_mut()))
            .zip(u.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *ui = (b2 * *ui).max(g.abs());
            *t -= cfg.lr / bias * *mi / (*ui + cfg.epsilon);
        }
    }
}

/// Seeded minibatch training; history records per-epoch train loss and
/// held-out metrics. `epochs` is an upper bound when early stopping fires.
pub fn train(
    bundle: &mut ModelBundle,
    train_set: &[TrainExample],
    heldout: &[TrainExample],
) -> Result<Vec<EpochRecord>, NetworkError> {
    bundle.config.validate()?;
    if train_set.is_empty() || heldout.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let raw: Vec<Vec<f64>> = train_set.iter().map(|e| e.struct_raw.clone()).collect();
    bundle.scaler = crate::kan::MinMaxScaler::fit(&raw);

    let cfg = bundle.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261696e);
    let mut opt = AdaMax::new(&bundle.params);
    let mut history = Vec::new();
    let mut global_batch = 0u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&TrainExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = build_batch(&refs, &cfg, &bundle.scaler)?;
            let mut tape = Tape::new(cfg.seed.wrapping_add(global_batch.wrapping_mul(0x9e3779b9)));
            tape.train = true;
            let vars = stage_params(&mut tape, bundle, true);
            let p = forward(&mut tape, bundle, &vars, &batch)?;
            let loss = tape.bce_loss(p, &batch.targets)?;
            tape.backward(loss)?;
            loss_sum += tape.value(loss).item() * batch.b as f64;
            seen += batch.b;
            opt.step += 1;
            for (name, &var) in &vars {
                if name == "embed.table" && !cfg.trainable_embeddings {
                    continue;
                }
                let grad = tape.grad(var);
                let theta = bundle.params.get_mut(name).unwrap();
                opt.update(name, theta, &grad, &cfg);
            }
            global_batch += 1;
        }
        let train_loss = loss_sum / seen as f64;

        let preds = predict(bundle, heldout)?;
        let labels: Vec<u8> = preds.iter().map(|&(_, l)| l).collect();
        let truths: Vec<u8> = heldout.iter().map(|e| e.label).collect();
        let report = metrics(confusion(&labels, &truths)?)?;
        if std::env::var_os("GADGETFORGE_TRAIN_LOG").is_some() {
            eprintln!(
                "epoch {epoch}: train_loss {train_loss:.4}, heldout acc {:.4}",
                report.accuracy.value()
            );
        }
        let heldout_acc = report.accuracy.value();
        history.push(EpochRecord {
            epoch,
            train_loss,
            heldout: report,
        });
        if cfg.early_stop_loss.is_some_and(|t| train_loss < t)
            || cfg
                .early_stop_heldout_acc
                .is_some_and(|t| heldout_acc >= t)
        {
            break;
        }
    }
    bundle.history = history.clone();
    Ok(history)
}

/// Eval-mode scoring: (probability, label) per example; label = 1 iff
/// p ≥ 0.5.
pub fn predict(
    bundle: &ModelBundle,
    examples: &[TrainExample],
) -> Result<Vec<(f64, u8)>, NetworkError> {
    if examples.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let cfg = &bundle.config;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(cfg.batch_size) {
        let refs: Vec<&TrainExample> = chunk.iter().collect();
        let batch = build_batch(&refs, cfg, &bundle.scaler)?;
        let mut tape = Tape::new(cfg.seed);
        tape.train = false;
        let vars = stage_params(&mut tape, bundle, false);
        let p = forward(&mut tape, bundle, &vars, &batch)?;
        for &prob in tape.value(p).data() {
            out.push((prob, u8::from(prob >= 0.5)));
        }
    }
    Ok(out)
}

/// Digest-checked inference over gadget artifacts.
pub fn predict_gadgets(
    bundle: &ModelBundle,
    examples: &[TrainExample],
    vocab: &Vocab,
) -> Result<Vec<(f64, u8)>, NetworkError> {
    if vocab.digest() != bundle.vocab_digest {
        return Err(NetworkError::ConfigDigestMismatch {
            expected: format!("{:016x}", bundle.vocab_digest),
            found: format!("{:016x}", vocab.digest()),
        });
    }
    predict(bundle, examples)
}

/// Central-difference check of the full training loss against the tape
/// gradients. Probes up to `probes` evenly spread entries of every
/// trainable parameter (the frozen embedding table is skipped) and
/// returns the worst relative error, with denominator
/// max(1, |analytic|, |numeric|). Dropout is forced off so the loss is
/// deterministic under perturbation.
pub fn full_model_grad_check(
    bundle: &mut ModelBundle,
    examples: &[TrainExample],
    probes: usize,
    h: f64,
) -> Result<f64, NetworkError> {
    bundle.config.dropout = 0.0;
    let refs: Vec<&TrainExample> = examples.iter().collect();
    let batch = build_batch(&refs, &bundle.config, &bundle.scaler)?;

    let loss_of = |b: &ModelBundle| -> Result<f64, NetworkError> {
        let mut tape = Tape::new(1);
        tape.train = true;
        let vars = stage_params(&mut tape, b, true);
        let p = forward(&mut tape, b, &vars, &batch)?;
        let l = tape.bce_loss(p, &batch.targets)?;
        Ok(tape.value(l).item())
    };

    let mut tape = Tape::new(1);
    tape.train = true;
    let vars = stage_params(&mut tape, bundle, true);
    let p = forward(&mut tape, bundle, &vars, &batch)?;
    let l = tape.bce_loss(p, &batch.targets)?;
    tape.backward(l)?;

    let names: Vec<String> = bundle
        .params
        .keys()
        .filter(|k| k.as_str() != "embed.table")
        .cloned()
        .collect();
    let mut worst = 0.0f64;
    for name in names {
        let g = tape.grad(vars[&name]);
        let n = bundle.params[&name].numel();
        let step = (n / probes).max(1);
        for idx in (0..n).step_by(step) {
            let orig = bundle.params[&name].data()[idx];
            bundle.params.get_mut(&name).unwrap().data_mut()[idx] = orig + h;
            let up = loss_of(bundle)?;
            bundle.params.get_mut(&name).unwrap().data_mut()[idx] = orig - h;
            let down = loss_of(bundle)?;
            bundle.params.get_mut(&name).unwrap().data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[idx];
            let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

fn w32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn wbytes(out: &mut Vec<u8>, b: &[u8]) {
    w32(out, b.len() as u32);
    out.extend_from_slice(b);
}

/// Checkpoint layout: magic, version, config JSON, config digest, vocab
/// digest, history JSON, then named f64 little-endian sections (parameters
/// plus scaler bounds). Bit-exact round trip.
pub fn save_checkpoint(path: &Path, bundle: &ModelBundle) -> Result<(), NetworkError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    w32(&mut out, CHECKPOINT_VERSION);
    let cfg_json = serde_json::to_string(&bundle.config).expect("config serializes");
    wbytes(&mut out, cfg_json.as_bytes());
    wbytes(&mut out, bundle.config.digest().as_bytes());
    out.extend_from_slice(&bundle.vocab_digest.to_le_bytes());
    let hist_json = serde_json::to_string(&bundle.history).expect("history serializes");
    wbytes(&mut out, hist_json.as_bytes());

    let mut sections: Vec<(String, Vec<usize>, &[f64])> = bundle
        .params
        .iter()
        .map(|(k, t)| (k.clone(), t.shape().to_vec(), t.data()))
        .collect();
    let d = bundle.scaler.mins.len();
    if bundle.scaler.fitted {
        sections.push(("scaler.mins".into(), vec![d], &bundle.scaler.mins));
        sections.push(("scaler.maxs".into(), vec![d], &bundle.scaler.maxs));
    }
    w32(&mut out, sections.len() as u32);
    for (name, shape, data) in sections {
        wbytes(&mut out, name.as_bytes());
        w32(&mut out, shape.len() as u32);
        for dim in &shape {
            out.extend_from_slice(&(*dim as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: &str) -> NetworkError {
        NetworkError::Checkpoint {
            path: self.path.display().to_string(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], NetworkError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle, NetworkError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(&format!("unsupported version {version}")));
    }
    let cfg_json = r.bytes()?.to_vec();
    let config: NetworkConfig = serde_json::from_slice(&cfg_json)
        .map_err(|e| r.err(&format!("config: {e}")))?;
    let digest = String::from_utf8_lossy(r.bytes()?).to_string();
    if digest != config.digest() {
        return Err(r.err("config digest mismatch"));
    }
    let vocab_digest = r.u64()?;
    let hist_json = r.bytes()?.to_vec();
    let history: Vec<EpochRecord> = serde_json::from_slice(&hist_json)
        .map_err(|e| r.err(&format!("history: {e}")))?;

    let n_sections = r.u32()? as usize;
    let mut params = ParamStore::new();
    let mut scaler = crate::kan::MinMaxScaler::default();
    for _ in 0..n_sections {
        let name = String::from_utf8_lossy(r.bytes()?).to_string();
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        match name.as_str() {
            "scaler.mins" => scaler.mins = data,
            "scaler.maxs" => {
                scaler.maxs = data;
                scaler.fitted = true;
            }
            _ => {
                params.insert(name, Tensor::new(shape, data));
            }
        }
    }
    let kan = KanStack::with_default_hidden(config.struct_dim, config.kan_out, config.seed);
    Ok(ModelBundle {
        config,
        params,
        scaler,
        vocab_digest,
        history,
        kan,
    })
}
