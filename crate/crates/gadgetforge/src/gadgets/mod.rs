//! Code-gadget extraction: seed sensitive API calls, slice the PDG around
//! them, and normalize the sliced statements into a bounded token list.

use crate::digest::hex256;
use crate::graphs::Pdg;
use crate::ingest::{lex, PseudoModule, TokenKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// Hard cap on tokens per gadget; longer slices keep the earliest tokens.
pub const MAX_GADGET_TOKENS: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum GadgetError {
    #[error("seed statement {0} is not a node of the dependence graph")]
    SeedNotInGraph(usize),
    #[error("gadget would contain no statements")]
    EmptyGadget,
    #[error("malformed gadget corpus at line {line}: {reason}")]
    MalformedCorpus { line: usize, reason: String },
    #[error("malformed rules file: {0}")]
    MalformedRules(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRule {
    pub api_name: String,
    pub taint_args: Vec<usize>,
    pub category: String,
    pub enabled: bool,
}

impl SeedRule {
    pub fn new(api_name: &str, taint_args: &[usize], category: &str) -> Self {
        Self {
            api_name: api_name.to_string(),
            taint_args: taint_args.to_vec(),
            category: category.to_string(),
            enabled: true,
        }
    }
}

/// Checkmarx-style C/C++ sensitive-call criteria. `strncpy`/`strncat` are
/// included so bounded twins of the string functions still anchor a gadget.
pub fn default_rules() -> Vec<SeedRule> {
    vec![
        SeedRule::new("strcpy", &[0, 1], "buffer-overflow"),
        SeedRule::new("strncpy", &[0, 1, 2], "buffer-overflow"),
        SeedRule::new("strcat", &[0, 1], "buffer-overflow"),
        SeedRule::new("strncat", &[0, 1, 2], "buffer-overflow"),
        SeedRule::new("sprintf", &[0, 1], "format-string"),
        SeedRule::new("printf", &[0], "format-string"),
        SeedRule::new("fprintf", &[1], "format-string"),
        SeedRule::new("snprintf", &[0, 1, 2], "format-string"),
        SeedRule::new("gets", &[0], "unbounded-read"),
        SeedRule::new("scanf", &[0, 1], "unbounded-read"),
        SeedRule::new("memcpy", &[0, 1, 2], "buffer-overflow"),
        SeedRule::new("malloc", &[0], "allocation"),
        SeedRule::new("free", &[0], "memory-lifetime"),
        SeedRule::new("system", &[0], "command-injection"),
    ]
}

pub fn load_rules(path: &Path) -> Result<Vec<SeedRule>, GadgetError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| GadgetError::MalformedRules(e.to_string()))
}

pub fn save_rules(path: &Path, rules: &[SeedRule]) -> Result<(), GadgetError> {
    let mut out = serde_json::to_string_pretty(rules)
        .map_err(|e| GadgetError::MalformedRules(e.to_string()))?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub function: String,
    pub stmt_index: usize,
    pub api_name: String,
    pub category: String,
}

/// One seed per (callsite, matching enabled rule), in statement order.
pub fn find_seeds(module: &PseudoModule, rules: &[SeedRule]) -> Vec<Seed> {
    let mut seeds = Vec::new();
    for f in &module.functions {
        for cs in &f.callsites {
            for r in rules.iter().filter(|r| r.enabled) {
                if r.api_name == cs.callee {
                    seeds.push(Seed {
                        function: f.name.clone(),
                        stmt_index: cs.stmt_index,
                        api_name: r.api_name.clone(),
                        category: r.category.clone(),
                    });
                }
            }
        }
    }
    seeds.sort_by_key(|s| s.stmt_index);
    seeds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceDirection {
    Backward,
    Forward,
    Both,
}

impl std::fmt::Display for SliceDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SliceDirection::Backward => "backward",
            SliceDirection::Forward => "forward",
            SliceDirection::Both => "both",
        })
    }
}

/// Transitive closure over PDG edges from `seed` in the given direction,
/// seed included, sorted by statement order.
pub fn slice(pdg: &Pdg, seed: usize, direction: SliceDirection) -> Result<Vec<usize>, GadgetError> {
    if seed >= pdg.n_statements {
        return Err(GadgetError::SeedNotInGraph(seed));
    }
    // adjacency: for backward we walk edges dst -> src, for forward src -> dst
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); pdg.n_statements];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); pdg.n_statements];
    for e in &pdg.data_edges {
        preds[e.use_].push(e.def);
        succs[e.def].push(e.use_);
    }
    for e in &pdg.control_edges {
        preds[e.controlled].push(e.controller);
        succs[e.controller].push(e.controlled);
    }
    let mut included = vec![false; pdg.n_statements];
    included[seed] = true;
    let mut work = vec![seed];
    while let Some(s) = work.pop() {
        let nexts: Vec<&usize> = match direction {
            SliceDirection::Backward => preds[s].iter().collect(),
            SliceDirection::Forward => succs[s].iter().collect(),
            SliceDirection::Both => preds[s].iter().chain(succs[s].iter()).collect(),
        };
        for &n in nexts {
            if !included[n] {
                included[n] = true;
                work.push(n);
            }
        }
    }
    Ok((0..pdg.n_statements).filter(|&i| included[i]).collect())
}

/// Rename user identifiers VAR1../FUN1.. by first appearance; keywords,
/// operators and rule API names stay; string literals become `STR`;
/// integer literals are kept verbatim.
pub struct Normalizer {
    preserved: Vec<String>,
    vars: BTreeMap<String, String>,
    funs: BTreeMap<String, String>,
}

const KEYWORDS: &[&str] = &["int", "char", "void", "if", "else", "while", "return"];

impl Normalizer {
    pub fn new(rules: &[SeedRule]) -> Self {
        Self {
            preserved: rules.iter().map(|r| r.api_name.clone()).collect(),
            vars: BTreeMap::new(),
            funs: BTreeMap::new(),
        }
    }

    fn map_ident(&mut self, name: &str, is_call: bool) -> String {
        if KEYWORDS.contains(&name) || name == "STR" || self.preserved.iter().any(|p| p == name) {
            return name.to_string();
        }
        let (table, prefix) = if is_call {
            (&mut self.funs, "FUN")
        } else {
            (&mut self.vars, "VAR")
        };
        let next = table.len() + 1;
        table
            .entry(name.to_string())
            .or_insert_with(|| format!("{prefix}{next}"))
            .clone()
    }

    /// Normalize one statement text into tokens.
    pub fn statement_tokens(&mut self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let tokens = match lex(text) {
            Ok(t) => t,
            Err(_) => return out,
        };
        for (i, t) in tokens.iter().enumerate() {
            match &t.kind {
                TokenKind::Ident(name) => {
                    let is_call = matches!(tokens.get(i + 1).map(|n| &n.kind),
                            Some(TokenKind::Punct(p)) if *p == "(")
                        && !KEYWORDS.contains(&name.as_str());
                    out.push(self.map_ident(name, is_call));
                }
                TokenKind::Int(v) => out.push(v.to_string()),
                TokenKind::Str(_) => out.push("STR".to_string()),
                TokenKind::Char(c) => out.push(format!("'{c}'")),
                TokenKind::Punct(p) => out.push((*p).to_string()),
                TokenKind::Eof => {}
            }
        }
        out
    }
}

/// Normalize an ordered statement list to a flat token list.
pub fn normalize(statements: &[String], rules: &[SeedRule]) -> Vec<String> {
    let mut n = Normalizer::new(rules);
    let mut out = Vec::new();
    for s in statements {
        out.extend(n.statement_tokens(s));
    }
    out
}

/// Normalized per-statement texts (space joined tokens), same renaming pass.
pub fn normalize_statements(statements: &[String], rules: &[SeedRule]) -> Vec<String> {
    let mut n = Normalizer::new(rules);
    statements
        .iter()
        .map(|s| n.statement_tokens(s).join(" "))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub direction: SliceDirection,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeGadget {
    pub schema_version: String,
    pub gadget_id: String,
    pub statements: Vec<String>,
    pub tokens: Vec<String>,
    pub label: u8,
    pub seed: Seed,
    pub truncated: bool,
    pub provenance: Provenance,
}

pub fn assemble_gadget(
    slice_stmts: &[String],
    label: u8,
    seed: Seed,
    provenance: Provenance,
    rules: &[SeedRule],
) -> Result<CodeGadget, GadgetError> {
    if slice_stmts.is_empty() {
        return Err(GadgetError::EmptyGadget);
    }
    let statements = normalize_statements(slice_stmts, rules);
    let mut tokens = normalize(slice_stmts, rules);
    let truncated = tokens.len() > MAX_GADGET_TOKENS;
    tokens.truncate(MAX_GADGET_TOKENS);
    let mut id_input = tokens.join("\u{1f}");
    id_input.push('\u{1e}');
    id_input.push((b'0' + label) as char);
    Ok(CodeGadget {
        schema_version: crate::ingest::SCHEMA_VERSION.to_string(),
        gadget_id: hex256(id_input.as_bytes()),
        statements,
        tokens,
        label,
        seed,
        truncated,
        provenance,
    })
}

/// Extract every gadget for a module: run the dependence graph per function
/// and slice around each seed. Results are ordered by (source_id, seed index).
pub fn extract_gadgets(
    module: &PseudoModule,
    rules: &[SeedRule],
    direction: SliceDirection,
    label_of: impl Fn(&Seed) -> u8,
) -> Result<Vec<CodeGadget>, GadgetError> {
    let seeds = find_seeds(module, rules);
    let mut out = Vec::new();
    for f in &module.functions {
        let cfg = crate::graphs::build_cfg(&crate::graphs::build_ast(f));
        let pdg = crate::graphs::build_pdg(&cfg, f);
        for seed in seeds.iter().filter(|s| s.function == f.name) {
            let stmts = slice(&pdg, seed.stmt_index, direction)?;
            let texts: Vec<String> = stmts
                .iter()
                .map(|&i| f.statements[i].text.clone())
                .collect();
            let g = assemble_gadget(
                &texts,
                label_of(seed),
                seed.clone(),
                Provenance {
                    source_id: module.source_id.clone(),
                    direction,
                    depth: stmts.len(),
                },
                rules,
            )?;
            out.push(g);
        }
    }
    out.sort_by(|a, b| {
        (&a.provenance.source_id, a.seed.stmt_index).cmp(&(&b.provenance.source_id, b.seed.stmt_index))
    });
    Ok(out)
}

pub fn write_corpus(path: &Path, gadgets: &[CodeGadget]) -> Result<(), GadgetError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in gadgets {
        let line = serde_json::to_string(g).map_err(|e| GadgetError::MalformedCorpus {
            line: 0,
            reason: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<CodeGadget>, GadgetError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: CodeGadget =
            serde_json::from_str(&line).map_err(|e| GadgetError::MalformedCorpus {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(g);
    }
    Ok(out)
}
