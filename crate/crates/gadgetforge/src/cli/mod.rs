//! Pipeline orchestration: one JSON config drives the stage chain
//! gen-corpus → ingest → graph → slice → embed → train → detect → eval →
//! report. Each stage is independently invokable and re-runs are skipped
//! when the artifacts already match the config digest.

use crate::corpusgen::{generate, read_truth, CorpusSpec, GroundTruth};
use crate::embedding::{
    build_vocab, load_table, save_table, train_embeddings, EmbeddingConfig, Vocab,
};
use crate::eval::{confusion, metrics, report_json, report_table, split};
use crate::gadgets::{
    default_rules, extract_gadgets, load_rules, read_corpus, write_corpus, CodeGadget,
    SliceDirection,
};
use crate::graphs::{build_ast, build_cfg, build_pdg, Ast, Pdg};
use crate::ingest::{parse_pseudocode, PseudoModule};
use crate::kan::struct_feature_dim;
use crate::network::{
    load_checkpoint, make_example, predict_gadgets, save_checkpoint, train, ModelBundle,
    NetworkConfig, NetworkError, TrainExample,
};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("stage {stage} failed: {detail}")]
    Stage { stage: &'static str, detail: String },
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Stage { .. } => 2,
            CliError::DigestMismatch(_) => 3,
        }
    }
}

/// Classifies a stage error: digest/magic problems exit 3, the rest 2.
fn stage_err(stage: &'static str, e: impl std::fmt::Display) -> CliError {
    let detail = e.to_string();
    if detail.contains("digest") || detail.contains("magic") {
        CliError::DigestMismatch(format!("{stage}: {detail}"))
    } else {
        CliError::Stage { stage, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub artifacts_dir: PathBuf,
    /// Optional seed-rule override; defaults to the built-in rule set.
    pub rules_file: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub embedding: EmbeddingConfig,
    pub network: NetworkConfig,
    pub slice_direction: SliceDirection,
    pub split_ratio: f64,
    pub seed: u64,
    /// Fan-out cap for read-only stages (parsing); results merge in sorted
    /// order so the count never changes outputs.
    pub threads: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(CliError::Usage("split_ratio must lie in (0,1)".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Usage("threads must be ≥ 1".into()));
        }
        self.network
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Digest over the semantic parameters; filesystem locations are
    /// excluded so relocating a workspace never invalidates artifacts.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.corpus_dir = PathBuf::new();
        canon.artifacts_dir = PathBuf::new();
        canon.rules_file = None;
        crate::digest::hex256(
            serde_json::to_string(&canon)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if let Ok(dir) = std::env::var("GADGETFORGE_ARTIFACTS") {
        if !dir.is_empty() {
            cfg.artifacts_dir = PathBuf::from(dir);
        }
    }
    // struct_dim is derivable from the rule set; fill it so configs don't
    // have to repeat it
    if cfg.network.struct_dim == 0 {
        let rules = match &cfg.rules_file {
            Some(p) => load_rules(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => default_rules(),
        };
        cfg.network.struct_dim = struct_feature_dim(categories_of(&rules).len());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn categories_of(rules: &[crate::gadgets::SeedRule]) -> Vec<String> {
    let mut cats: Vec<String> = rules.iter().map(|r| r.category.clone()).collect();
    cats.sort();
    cats.dedup();
    cats
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub force: bool,
    digest: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Stamps(BTreeMap<String, String>);

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool) -> Self {
        let digest = cfg.digest();
        Self { cfg, force, digest }
    }

    fn art(&self, name: &str) -> PathBuf {
        self.cfg.artifacts_dir.join(name)
    }

    fn stamps_path(&self) -> PathBuf {
        self.art("stamps.json")
    }

    fn stamps(&self) -> Stamps {
        std::fs::read_to_string(self.stamps_path())
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn up_to_date(&self, stage: &str, outputs: &[PathBuf]) -> bool {
        !self.force
            && self.stamps().0.get(stage) == Some(&self.digest)
            && outputs.iter().all(|p| p.exists())
    }

    fn stamp(&self, stage: &'static str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.cfg.artifacts_dir).map_err(|e| stage_err(stage, e))?;
        let mut s = self.stamps();
        s.0.insert(stage.to_string(), self.digest.clone());
        std::fs::write(
            self.stamps_path(),
            serde_json::to_string_pretty(&s).expect("stamps serialize"),
        )
        .map_err(|e| stage_err(stage, e))
    }

    fn rules(&self) -> Result<Vec<crate::gadgets::SeedRule>, CliError> {
        match &self.cfg.rules_file {
            Some(p) => load_rules(p).map_err(|e| stage_err("slice", e)),
            None => Ok(default_rules()),
        }
    }

    /// Returns true when the stage ran, false when it was skipped.
    pub fn gen_corpus(&self) -> Result<bool, CliError> {
        const STAGE: &str = "gen-corpus";
        let truth = self.cfg.corpus_dir.join("truth.jsonl");
        if self.up_to_date(STAGE, &[truth]) {
            return Ok(false);
        }
        generate(&self.cfg.corpus, &self.cfg.corpus_dir).map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    pub fn ingest(&self) -> Result<bool, CliError> {
        const STAGE: &str = "ingest";
        self.gen_corpus()?;
        let out = self.art("modules.jsonl");
        if self.up_to_date(STAGE, &[out.clone()]) {
            return Ok(false);
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.cfg.corpus_dir)
            .map_err(|e| stage_err(STAGE, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pc"))
            .collect();
        paths.sort();
        let modules = parse_many(&paths, self.cfg.threads).map_err(|e| stage_err(STAGE, e))?;
        std::fs::create_dir_all(&self.cfg.artifacts_dir).map_err(|e| stage_err(STAGE, e))?;
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&out).map_err(|e| stage_err(STAGE, e))?,
        );
        for m in &modules {
            let line = serde_json::to_string(m).map_err(|e| stage_err(STAGE, e))?;
            writeln!(w, "{line}").map_err(|e| stage_err(STAGE, e))?;
        }
        w.flush().map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    fn load_modules(&self) -> Result<Vec<PseudoModule>, CliError> {
        const STAGE: &str = "ingest";
        let f = std::fs::File::open(self.art("modules.jsonl")).map_err(|e| stage_err(STAGE, e))?;
        let mut out = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| stage_err(STAGE, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| stage_err(STAGE, e))?);
        }
        Ok(out)
    }

    pub fn graph(&self) -> Result<bool, CliError> {
        const STAGE: &str = "graph";
        self.ingest()?;
        let out = self.art("graphs.json");
        if self.up_to_date(STAGE, &[out.clone()]) {
            return Ok(false);
        }
        let modules = self.load_modules()?;
        let mut rows = Vec::new();
        for m in &modules {
            for f in &m.functions {
                let ast = build_ast(f);
                let cfg = build_cfg(&ast);
                let pdg = build_pdg(&cfg, f);
                rows.push(serde_json::json!({
                    "source_id": m.source_id,
                    "function": f.name,
                    "statements": f.statements.len(),
                    "cfg_nodes": cfg.blocks.len(),
                    "data_edges": pdg.data_edges.len(),
                    "control_edges": pdg.control_edges.len(),
                }));
            }
        }
        let doc = serde_json::json!({
            "schema_version": crate::ingest::SCHEMA_VERSION,
            "config_digest": self.digest,
            "functions": rows,
        });
        std::fs::write(&out, serde_json::to_string_pretty(&doc).unwrap())
            .map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    fn truth_labels(&self) -> Result<BTreeMap<String, GroundTruth>, CliError> {
        let path = self.cfg.corpus_dir.join("truth.jsonl");
        let truth = read_truth(&path).map_err(|e| stage_err("slice", e))?;
        Ok(truth.into_iter().map(|t| (t.function.clone(), t)).collect())
    }

    pub fn slice(&self) -> Result<bool, CliError> {
        const STAGE: &str = "slice";
        self.graph()?;
        let out = self.art("gadgets.jsonl");
        if self.up_to_date(STAGE, &[out.clone()]) {
            return Ok(false);
        }
        let rules = self.rules()?;
        let labels = self.truth_labels()?;
        let modules = self.load_modules()?;
        let mut gadgets = Vec::new();
        for m in &modules {
            let gs = extract_gadgets(m, &rules, self.cfg.slice_direction, |seed| {
                labels.get(&seed.function).map_or(0, |t| t.label)
            })
            .map_err(|e| stage_err(STAGE, e))?;
            gadgets.extend(gs);
        }
        gadgets.sort_by(|a, b| {
            (&a.provenance.source_id, a.seed.stmt_index)
                .cmp(&(&b.provenance.source_id, b.seed.stmt_index))
        });
        write_corpus(&out, &gadgets).map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    fn load_gadgets(&self) -> Result<Vec<CodeGadget>, CliError> {
        read_corpus(&self.art("gadgets.jsonl")).map_err(|e| stage_err("slice", e))
    }

    pub fn embed(&self) -> Result<bool, CliError> {
        const STAGE: &str = "embed";
        self.slice()?;
        let vocab_out = self.art("vocab.json");
        let table_out = self.art("embeddings.gfem");
        if self.up_to_date(STAGE, &[vocab_out.clone(), table_out.clone()]) {
            return Ok(false);
        }
        let gadgets = self.load_gadgets()?;
        let vocab = build_vocab(&gadgets, 1).map_err(|e| stage_err(STAGE, e))?;
        let table =
            train_embeddings(&gadgets, &vocab, &self.cfg.embedding).map_err(|e| stage_err(STAGE, e))?;
        std::fs::write(&vocab_out, serde_json::to_string_pretty(&vocab).unwrap())
            .map_err(|e| stage_err(STAGE, e))?;
        save_table(&table_out, &table).map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    fn load_vocab(&self) -> Result<Vocab, CliError> {
        let text = std::fs::read_to_string(self.art("vocab.json"))
            .map_err(|e| stage_err("embed", e))?;
        serde_json::from_str(&text).map_err(|e| stage_err("embed", e))
    }

    /// (gadgets, examples) with graph artifacts rebuilt per function.
    fn examples(&self, vocab: &Vocab) -> Result<(Vec<CodeGadget>, Vec<TrainExample>), CliError> {
        const STAGE: &str = "train";
        let gadgets = self.load_gadgets()?;
        let modules = self.load_modules()?;
        let rules = self.rules()?;
        let categories = categories_of(&rules);
        let mut graphs: BTreeMap<(String, String), (Ast, Pdg)> = BTreeMap::new();
        for m in &modules {
            for f in &m.functions {
                let ast = build_ast(f);
                let cfg = build_cfg(&ast);
                let pdg = build_pdg(&cfg, f);
                graphs.insert((m.source_id.clone(), f.name.clone()), (ast, pdg));
            }
        }
        let mut examples = Vec::with_capacity(gadgets.len());
        for g in &gadgets {
            let key = (g.provenance.source_id.clone(), g.seed.function.clone());
            let (ast, pdg) = graphs.get(&key).ok_or_else(|| CliError::Stage {
                stage: STAGE,
                detail: format!("no graphs for {}::{}", key.0, key.1),
            })?;
            examples.push(make_example(g, vocab, ast, pdg, &categories));
        }
        Ok((gadgets, examples))
    }

    fn split_indices(&self, examples: &[TrainExample]) -> Result<(Vec<usize>, Vec<usize>), CliError> {
        let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
        split(&labels, self.cfg.split_ratio, self.cfg.seed, true)
            .map_err(|e| stage_err("train", e))
    }

    pub fn train(&self) -> Result<bool, CliError> {
        const STAGE: &str = "train";
        self.embed()?;
        let model_out = self.art("model.gfmb");
        let hist_out = self.art("history.json");
        if self.up_to_date(STAGE, &[model_out.clone(), hist_out.clone()]) {
            return Ok(false);
        }
        let vocab = self.load_vocab()?;
        let table = load_table(&self.art("embeddings.gfem"), &self.cfg.embedding)
            .map_err(|e| stage_err(STAGE, e))?;
        let (_, examples) = self.examples(&vocab)?;
        let (tr, te) = self.split_indices(&examples)?;
        let train_set: Vec<TrainExample> = tr.iter().map(|&i| examples[i].clone()).collect();
        let heldout: Vec<TrainExample> = te.iter().map(|&i| examples[i].clone()).collect();
        let mut bundle = ModelBundle::init(self.cfg.network.clone(), &table, &vocab)
            .map_err(|e| stage_err(STAGE, e))?;
        let history =
            train(&mut bundle, &train_set, &heldout).map_err(|e| stage_err(STAGE, e))?;
        save_checkpoint(&model_out, &bundle).map_err(|e| stage_err(STAGE, e))?;
        std::fs::write(&hist_out, serde_json::to_string_pretty(&history).unwrap())
            .map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    pub fn detect(&self) -> Result<bool, CliError> {
        const STAGE: &str = "detect";
        self.train()?;
        let out = self.art("predictions.jsonl");
        if self.up_to_date(STAGE, &[out.clone()]) {
            return Ok(false);
        }
        let bundle = load_checkpoint(&self.art("model.gfmb")).map_err(|e| map_net(STAGE, e))?;
        let vocab = self.load_vocab()?;
        let (gadgets, examples) = self.examples(&vocab)?;
        let preds =
            predict_gadgets(&bundle, &examples, &vocab).map_err(|e| map_net(STAGE, e))?;
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&out).map_err(|e| stage_err(STAGE, e))?,
        );
        for (g, (score, label)) in gadgets.iter().zip(&preds) {
            let line = serde_json::json!({
                "gadget_id": g.gadget_id,
                "score": score,
                "label": label,
                "truth": g.label,
            });
            writeln!(w, "{line}").map_err(|e| stage_err(STAGE, e))?;
        }
        w.flush().map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    pub fn eval(&self) -> Result<bool, CliError> {
        const STAGE: &str = "eval";
        self.detect()?;
        let json_out = self.art("report.json");
        let txt_out = self.art("report.txt");
        if self.up_to_date(STAGE, &[json_out.clone(), txt_out.clone()]) {
            return Ok(false);
        }
        let vocab = self.load_vocab()?;
        let bundle = load_checkpoint(&self.art("model.gfmb")).map_err(|e| map_net(STAGE, e))?;
        let (_, examples) = self.examples(&vocab)?;
        let (_, te) = self.split_indices(&examples)?;
        let heldout: Vec<TrainExample> = te.iter().map(|&i| examples[i].clone()).collect();
        let preds =
            predict_gadgets(&bundle, &heldout, &vocab).map_err(|e| map_net(STAGE, e))?;
        let labels: Vec<u8> = preds.iter().map(|&(_, l)| l).collect();
        let truths: Vec<u8> = heldout.iter().map(|e| e.label).collect();
        let report = metrics(confusion(&labels, &truths).map_err(|e| stage_err(STAGE, e))?)
            .map_err(|e| stage_err(STAGE, e))?;
        std::fs::write(&json_out, report_json(&report, &self.digest))
            .map_err(|e| stage_err(STAGE, e))?;
        std::fs::write(&txt_out, report_table(&report)).map_err(|e| stage_err(STAGE, e))?;
        // timestamps live in a sidecar so the report stays byte-stable
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        std::fs::write(
            self.art("run_meta.json"),
            serde_json::to_string_pretty(&serde_json::json!({ "evaluated_at_unix": now }))
                .unwrap(),
        )
        .map_err(|e| stage_err(STAGE, e))?;
        self.stamp(STAGE)?;
        Ok(true)
    }

    pub fn report(&self) -> Result<String, CliError> {
        self.eval()?;
        std::fs::read_to_string(self.art("report.txt")).map_err(|e| stage_err("report", e))
    }
}

fn map_net(stage: &'static str, e: NetworkError) -> CliError {
    match e {
        NetworkError::ConfigDigestMismatch { .. } => CliError::DigestMismatch(e.to_string()),
        NetworkError::Checkpoint { .. } => CliError::DigestMismatch(e.to_string()),
        other => CliError::Stage {
            stage,
            detail: other.to_string(),
        },
    }
}

/// Deterministic fan-out: chunk the sorted path list across up to
/// `threads` workers and concatenate results in the original order.
fn parse_many(paths: &[PathBuf], threads: usize) -> Result<Vec<PseudoModule>, String> {
    let parse_one = |p: &PathBuf| -> Result<PseudoModule, String> {
        let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let source_id = p
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        parse_pseudocode(&text, &source_id).map_err(|e| format!("{}: {e}", p.display()))
    };
    if threads <= 1 || paths.len() < 2 {
        return paths.iter().map(parse_one).collect();
    }
    let chunk = paths.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(parse_one).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(paths.len());
        for h in handles {
            out.extend(h.join().map_err(|_| "worker panicked".to_string())??);
        }
        Ok(out)
    })
}

#[derive(Parser)]
#[command(name = "gadgetforge", version, about = "Pseudocode vulnerability detection pipeline")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run stages even when artifacts are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the thread count for read-only stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and ground truth.
    GenCorpus,
    /// Parse listings into modules.
    Ingest,
    /// Build graph artifacts.
    Graph,
    /// Extract labeled code gadgets.
    Slice,
    /// Train token embeddings.
    Embed,
    /// Train the classifier.
    Train,
    /// Score every gadget.
    Detect,
    /// Evaluate the held-out split.
    Eval,
    /// Print the metrics table.
    Report,
}

fn dispatch(args: Args) -> Result<(), CliError> {
    let config_path = args
        .config
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = load_config(&config_path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.corpus.seed = seed;
        cfg.network.seed = seed;
        cfg.embedding.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = t.max(1);
    }
    cfg.validate()?;
    let pipe = Pipeline::new(cfg, args.force);
    match args.command {
        Command::GenCorpus => pipe.gen_corpus().map(|_| ()),
        Command::Ingest => pipe.ingest().map(|_| ()),
        Command::Graph => pipe.graph().map(|_| ()),
        Command::Slice => pipe.slice().map(|_| ()),
        Command::Embed => pipe.embed().map(|_| ()),
        Command::Train => pipe.train().map(|_| ()),
        Command::Detect => pipe.detect().map(|_| ()),
        Command::Eval => pipe.eval().map(|_| ()),
        Command::Report => pipe.report().map(|table| print!("{table}")),
    }
}

pub fn run() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            // clap renders its own help/version output
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
