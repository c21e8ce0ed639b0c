//! Skip-gram word2vec over gadget tokens, with negative sampling.
//!
//! Tokens embed into `dim`-dimensional vectors (default 100) learned from a
//! gadget corpus with a fixed context window (default 5).

use crate::digest::hash64;
use crate::gadgets::CodeGadget;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const EMBED_MAGIC: &[u8; 4] = b"GFEM";
const EMBED_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("table dimension {table} does not match expected {expected}")]
    DimensionMismatch { table: usize, expected: usize },
    #[error("malformed embedding file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub ids: BTreeMap<String, usize>,
    pub tokens: Vec<String>,
    pub counts: Vec<u64>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    /// Digest over the ordered token list, binding tables to their vocab.
    pub fn digest(&self) -> u64 {
        hash64(self.tokens.join("\u{1f}").as_bytes())
    }
}

/// Ids: PAD=0, UNK=1, then tokens with count ≥ min_count ordered by
/// count descending, ties lexicographic. Rarer tokens map to UNK.
pub fn build_vocab(gadgets: &[CodeGadget], min_count: u64) -> Result<Vocab, EmbeddingError> {
    if gadgets.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for g in gadgets {
        for t in &g.tokens {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut unk_count = 0u64;
    let mut kept: Vec<(&str, u64)> = Vec::new();
    for (t, c) in counts {
        if c >= min_count.max(1) {
            kept.push((t, c));
        } else {
            unk_count += c;
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut tokens = vec!["<PAD>".to_string(), "<UNK>".to_string()];
    let mut vocab_counts = vec![0, unk_count];
    for (t, c) in kept {
        tokens.push(t.to_string());
        vocab_counts.push(c);
    }
    let ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocab {
        ids,
        tokens,
        counts: vocab_counts,
    })
}

/// Fixed-window (no random shrink) skip-gram pair enumeration in scan order.
pub fn skipgram_pairs(tokens: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..tokens.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(tokens.len().saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                pairs.push((tokens[i], tokens[j]));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            lr: 0.025,
            epochs: 5,
            seed: 1,
        }
    }
}

impl EmbeddingConfig {
    fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be ≥ 1".into()));
        }
        if self.window == 0 {
            return Err(EmbeddingError::InvalidConfig("window must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(EmbeddingError::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub input: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
    pub dim: usize,
    pub vocab_digest: u64,
    pub config: EmbeddingConfig,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Negative-sampling loss for one (center, context, negatives) example:
/// −log σ(u_o·v_c) − Σ log σ(−u_n·v_c).
pub fn negative_sampling_loss(
    table: &EmbeddingTable,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> f64 {
    let v = &table.input[center];
    let dot = |u: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut loss = -sigmoid(dot(&table.output[context])).ln();
    for &n in negatives {
        loss -= sigmoid(-dot(&table.output[n])).ln();
    }
    loss
}

/// Draw from the unigram^0.75 noise distribution via an alias-free cumulative
/// table (vocab sizes here are small).
struct NoiseSampler {
    cdf: Vec<f64>,
}

impl NoiseSampler {
    fn new(vocab: &Vocab) -> Self {
        let mut cdf = Vec::with_capacity(vocab.len());
        let mut acc = 0.0;
        for (i, &c) in vocab.counts.iter().enumerate() {
            // PAD never appears as noise
            if i != PAD {
                acc += (c as f64).powf(0.75);
            }
            cdf.push(acc);
        }
        Self { cdf }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cdf.last().unwrap();
        let x = rng.gen_range(0.0..total);
        self.cdf.partition_point(|&c| c <= x).min(self.cdf.len() - 1)
    }
}

pub fn train_embeddings(
    gadgets: &[CodeGadget],
    vocab: &Vocab,
    cfg: &EmbeddingConfig,
) -> Result<EmbeddingTable, EmbeddingError> {
    cfg.validate()?;
    if gadgets.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let v = vocab.len();
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..dim).map(|_| rng.gen_range(-bound..bound)).collect())
        .collect();
    let mut output: Vec<Vec<f64>> = vec![vec![0.0; dim]; v];

    let sequences: Vec<Vec<usize>> = gadgets
        .iter()
        .map(|g| g.tokens.iter().map(|t| vocab.id(t)).collect())
        .collect();
    let total_pairs: usize = sequences
        .iter()
        .map(|s| skipgram_pairs(s, cfg.window).len())
        .sum();
    let noise = NoiseSampler::new(vocab);

    let total_steps = (total_pairs * cfg.epochs).max(1);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        for seq in &sequences {
            for (center, context) in skipgram_pairs(seq, cfg.window) {
                let lr = cfg.lr * (1.0 - step as f64 / total_steps as f64).max(1e-4);
                step += 1;
                let mut v_grad = vec![0.0; dim];
                // positive example then k negatives; negatives equal to the
                // context are resampled as in the reference implementation
                let mut targets = Vec::with_capacity(cfg.negatives + 1);
                targets.push((context, 1.0));
                for _ in 0..cfg.negatives {
                    let mut n = noise.sample(&mut rng);
                    if n == context {
                        n = noise.sample(&mut rng);
                    }
                    if n != context {
                        targets.push((n, 0.0));
                    }
                }
                for (t, label) in targets {
                    let dot: f64 = output[t].iter().zip(&input[center]).map(|(a, b)| a * b).sum();
                    let g = (sigmoid(dot) - label) * lr;
                    for d in 0..dim {
                        v_grad[d] += g * output[t][d];
                        output[t][d] -= g * input[center][d];
                    }
                }
                for d in 0..dim {
                    input[center][d] -= v_grad[d];
                }
            }
        }
    }

    Ok(EmbeddingTable {
        input,
        output,
        dim,
        vocab_digest: vocab.digest(),
        config: cfg.clone(),
    })
}

/// Row t = input vector of gadget token t; out-of-vocab tokens use UNK.
pub fn embed_gadget(
    gadget: &CodeGadget,
    table: &EmbeddingTable,
    vocab: &Vocab,
    expected_dim: usize,
) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    if table.dim != expected_dim {
        return Err(EmbeddingError::DimensionMismatch {
            table: table.dim,
            expected: expected_dim,
        });
    }
    Ok(gadget
        .tokens
        .iter()
        .map(|t| table.input[vocab.id(t)].clone())
        .collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Binary format: magic, version, V, dim, vocab digest, then row-major
/// f32 little-endian input vectors.
pub fn save_table(path: &Path, table: &EmbeddingTable) -> Result<(), EmbeddingError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMBED_MAGIC)?;
    w.write_all(&EMBED_VERSION.to_le_bytes())?;
    w.write_all(&(table.input.len() as u64).to_le_bytes())?;
    w.write_all(&(table.dim as u64).to_le_bytes())?;
    w.write_all(&table.vocab_digest.to_le_bytes())?;
    for row in &table.input {
        for &x in row {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path, cfg: &EmbeddingConfig) -> Result<EmbeddingTable, EmbeddingError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBED_MAGIC {
        return Err(EmbeddingError::MalformedFile("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != EMBED_VERSION {
        return Err(EmbeddingError::MalformedFile(format!(
            "unsupported version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let v = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let dim = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let vocab_digest = u64::from_le_bytes(b8);
    let mut input = Vec::with_capacity(v);
    for _ in 0..v {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b4)?;
            row.push(f32::from_le_bytes(b4) as f64);
        }
        input.push(row);
    }
    Ok(EmbeddingTable {
        output: vec![vec![0.0; dim]; v],
        input,
        dim,
        vocab_digest,
        config: cfg.clone(),
    })
}

/// Human-readable debug export: token<TAB>v1<TAB>...<TAB>vdim.
pub fn export_tsv(path: &Path, table: &EmbeddingTable, vocab: &Vocab) -> Result<(), EmbeddingError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (t, row) in vocab.tokens.iter().zip(&table.input) {
        write!(w, "{t}")?;
        for x in row {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::{Provenance, Seed, SliceDirection};

    fn gadget(tokens: &[&str]) -> CodeGadget {
        CodeGadget {
            schema_version: "1".into(),
            gadget_id: "x".into(),
            statements: vec![],
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            label: 0,
            seed: Seed {
                function: "f".into(),
                stmt_index: 0,
                api_name: "strcpy".into(),
                category: "buffer-overflow".into(),
            },
            truncated: false,
            provenance: Provenance {
                source_id: "t".into(),
                direction: SliceDirection::Backward,
                depth: 1,
            },
        }
    }

    #[test]
    fn vocab_min_count_maps_rare_to_unk() {
        let gs = vec![gadget(&["a", "a", "a", "b"])];
        let v = build_vocab(&gs, 2).unwrap();
        assert_eq!(v.tokens, vec!["<PAD>", "<UNK>", "a"]);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.counts[UNK], 1);
    }

    #[test]
    fn vocab_ordering_count_desc_then_lex() {
        let gs = vec![gadget(&["z", "z", "m", "m", "a"])];
        let v = build_vocab(&gs, 1).unwrap();
        assert_eq!(v.tokens, vec!["<PAD>", "<UNK>", "m", "z", "a"]);
    }

    #[test]
    fn vocab_deterministic_across_equal_multisets() {
        let a = build_vocab(&[gadget(&["x", "y", "x"])], 1).unwrap();
        let b = build_vocab(&[gadget(&["y", "x", "x"])], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_vocab(&[], 1), Err(EmbeddingError::EmptyCorpus)));
    }

    #[test]
    fn pairs_full_window() {
        let p = skipgram_pairs(&[10, 11, 12], 5);
        assert_eq!(
            p,
            vec![(10, 11), (10, 12), (11, 10), (11, 12), (12, 10), (12, 11)]
        );
    }

    #[test]
    fn pairs_window_one() {
        let p = skipgram_pairs(&[10, 11, 12], 1);
        assert_eq!(p, vec![(10, 11), (11, 10), (11, 12), (12, 11)]);
    }

    #[test]
    fn single_token_no_pairs() {
        assert!(skipgram_pairs(&[7], 5).is_empty());
    }

    #[test]
    fn pair_symmetry() {
        let toks = [3, 4, 5, 6, 7, 8];
        let pairs = skipgram_pairs(&toks, 2);
        for &(u, v) in &pairs {
            assert!(pairs.contains(&(v, u)));
        }
    }

    #[test]
    fn table_shape_matches_vocab() {
        let gs = vec![gadget(&["a", "b", "a", "c"])];
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 100,
            epochs: 1,
            ..Default::default()
        };
        let t = train_embeddings(&gs, &v, &cfg).unwrap();
        assert_eq!(t.input.len(), v.len());
        assert!(t.input.iter().all(|r| r.len() == 100));
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let gs = vec![gadget(&["a", "b"])];
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 8,
            epochs: 0,
            seed: 7,
            ..Default::default()
        };
        let t = train_embeddings(&gs, &v, &cfg).unwrap();
        // output vectors untouched
        assert!(t.output.iter().flatten().all(|&x| x == 0.0));
        // input rows inside the init bound
        let bound = 0.5 / 8.0;
        assert!(t.input.iter().flatten().all(|&x| x.abs() < bound));
        let t2 = train_embeddings(&gs, &v, &cfg).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn cooccurring_tokens_end_up_closer() {
        // "alpha beta" repeated; "gamma delta" as the unrelated pair
        let mut gs = Vec::new();
        for _ in 0..30 {
            gs.push(gadget(&["alpha", "beta", "alpha", "beta", "alpha", "beta"]));
            gs.push(gadget(&["gamma", "delta", "gamma", "delta", "gamma", "delta"]));
        }
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 16,
            window: 1,
            epochs: 40,
            lr: 0.05,
            seed: 3,
            ..Default::default()
        };
        let t = train_embeddings(&gs, &v, &cfg).unwrap();
        let sim_pair = cosine(&t.input[v.id("alpha")], &t.input[v.id("beta")]);
        let sim_cross = cosine(&t.input[v.id("alpha")], &t.input[v.id("delta")]);
        assert!(
            sim_pair > sim_cross,
            "pair {sim_pair} vs cross {sim_cross}"
        );
    }

    #[test]
    fn loss_matches_closed_form() {
        // hand-built 3-token table with known vectors
        let table = EmbeddingTable {
            input: vec![vec![0.0, 0.0], vec![0.1, -0.2], vec![0.3, 0.4]],
            output: vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![-0.25, 0.75]],
            dim: 2,
            vocab_digest: 0,
            config: EmbeddingConfig::default(),
        };
        // center = 2, context = 1, one negative = 2
        let dot_pos: f64 = 0.3 * 0.5 + 0.4 * 0.5; // 0.35
        let dot_neg: f64 = 0.3 * -0.25 + 0.4 * 0.75; // 0.225
        let expected =
            -(1.0 / (1.0 + (-dot_pos).exp())).ln() - (1.0 / (1.0 + dot_neg.exp())).ln();
        let got = negative_sampling_loss(&table, 2, 1, &[2]);
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn embed_gadget_rows_and_unk() {
        let gs = vec![gadget(&["a", "b", "a"])];
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 4,
            epochs: 0,
            ..Default::default()
        };
        let t = train_embeddings(&gs, &v, &cfg).unwrap();
        let g = gadget(&["a", "zz", "b"]);
        let m = embed_gadget(&g, &t, &v, 4).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0], t.input[v.id("a")]);
        assert_eq!(m[1], t.input[UNK]);
        assert!(matches!(
            embed_gadget(&g, &t, &v, 100),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let gs = vec![gadget(&["a", "b", "c", "a", "b"]); 4];
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 8,
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let t1 = train_embeddings(&gs, &v, &cfg).unwrap();
        let t2 = train_embeddings(&gs, &v, &cfg).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn file_roundtrip_preserves_f32_rows() {
        let gs = vec![gadget(&["a", "b"])];
        let v = build_vocab(&gs, 1).unwrap();
        let cfg = EmbeddingConfig {
            dim: 4,
            epochs: 1,
            ..Default::default()
        };
        let t = train_embeddings(&gs, &v, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        save_table(&path, &t).unwrap();
        let back = load_table(&path, &cfg).unwrap();
        assert_eq!(back.vocab_digest, t.vocab_digest);
        assert_eq!(back.dim, t.dim);
        for (a, b) in t.input.iter().flatten().zip(back.input.iter().flatten()) {
            assert_eq!(*a as f32, *b as f32);
        }
        export_tsv(&dir.path().join("emb.tsv"), &t, &v).unwrap();
    }
}
