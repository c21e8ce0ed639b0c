//! Deterministic synthetic pseudocode generator with ground-truth labels.
//!
//! Each vulnerable function instantiates one flaw-family template; its safe
//! twin differs only in the guard (≤ 3 tokens or a statement swap), so a
//! classifier must learn the pattern rather than surface length.

use crate::gadgets::{default_rules, find_seeds, slice, SliceDirection};
use crate::graphs::{build_ast, build_cfg, build_pdg};
use crate::ingest::{parse_pseudocode, Expr, PseudoFunction, StmtKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("corpus verification failed for: {}", .0.join(", "))]
    VerificationFailure(Vec<String>),
    #[error("malformed ground truth: {0}")]
    MalformedTruth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlawFamily {
    OverflowStrcpy,
    FormatString,
    IntOverflowMalloc,
    UseAfterFree,
    OffByOne,
}

pub const ALL_FAMILIES: [FlawFamily; 5] = [
    FlawFamily::OverflowStrcpy,
    FlawFamily::FormatString,
    FlawFamily::IntOverflowMalloc,
    FlawFamily::UseAfterFree,
    FlawFamily::OffByOne,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_functions: usize,
    pub vulnerable_ratio: f64,
    pub families: Vec<FlawFamily>,
    pub distractor_range: (usize, usize),
    pub identifier_pool: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_functions: 100,
            vulnerable_ratio: 0.5,
            families: ALL_FAMILIES.to_vec(),
            distractor_range: (0, 3),
            identifier_pool: 24,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.n_functions == 0 {
            return Err(CorpusError::InvalidSpec("n_functions must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.vulnerable_ratio) {
            return Err(CorpusError::InvalidSpec(
                "vulnerable_ratio must lie in [0,1]".into(),
            ));
        }
        if self.families.is_empty() {
            return Err(CorpusError::InvalidSpec("no flaw family enabled".into()));
        }
        if self.distractor_range.0 > self.distractor_range.1 {
            return Err(CorpusError::InvalidSpec("empty distractor range".into()));
        }
        if self.identifier_pool < 8 {
            return Err(CorpusError::InvalidSpec(
                "identifier pool must hold ≥ 8 names".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub function: String,
    pub label: u8,
    pub family: FlawFamily,
    /// Statement index of the flawed statement; None for safe twins.
    pub flawed_stmt: Option<usize>,
}

struct NamePool {
    names: Vec<String>,
    next: usize,
}

impl NamePool {
    fn new(size: usize, rng: &mut ChaCha8Rng) -> Self {
        const STEMS: [&str; 12] = [
            "buf", "src", "dst", "msg", "len", "cnt", "idx", "tmp", "val", "ptr", "num", "acc",
        ];
        let mut names: Vec<String> = (0..size)
            .map(|i| format!("{}{}", STEMS[i % STEMS.len()], i / STEMS.len() + 1))
            .collect();
        names.shuffle(rng);
        Self { names, next: 0 }
    }

    fn take(&mut self) -> String {
        let n = self.names[self.next % self.names.len()].clone();
        self.next += 1;
        if self.next % self.names.len() == 0 {
            // exhausted one cycle; suffix to keep names fresh
            for (i, n) in self.names.iter_mut().enumerate() {
                *n = format!("{n}_{i}");
            }
        }
        n
    }
}

struct Template {
    params: String,
    /// Body lines; `flawed` is the 0-based statement index of the flaw in
    /// the vulnerable variant.
    body: Vec<String>,
    flawed: usize,
}

fn instantiate(family: FlawFamily, vulnerable: bool, pool: &mut NamePool) -> Template {
    match family {
        FlawFamily::OverflowStrcpy => {
            let src = pool.take();
            let buf = pool.take();
            let copy = if vulnerable {
                format!("strcpy({buf}, {src});")
            } else {
                format!("strncpy({buf}, {src}, 9);")
            };
            Template {
                params: format!("char {src}[20]"),
                body: vec![format!("char {buf}[10];"), copy, "return;".into()],
                flawed: 1,
            }
        }
        FlawFamily::FormatString => {
            let msg = pool.take();
            let call = if vulnerable {
                format!("printf({msg});")
            } else {
                format!("printf(\"%s\", {msg});")
            };
            Template {
                params: format!("char {msg}[20]"),
                body: vec![call, "return;".into()],
                flawed: 0,
            }
        }
        FlawFamily::IntOverflowMalloc => {
            let n = pool.take();
            let p = pool.take();
            let alloc = if vulnerable {
                format!("int {p} = malloc({n} * 4);")
            } else {
                format!("int {p} = malloc({n});")
            };
            Template {
                params: format!("int {n}"),
                body: vec![alloc, format!("return {p};")],
                flawed: 0,
            }
        }
        FlawFamily::UseAfterFree => {
            let p = pool.take();
            let x = pool.take();
            let (body, flawed) = if vulnerable {
                (
                    vec![
                        format!("int {p} = malloc(8);"),
                        format!("int {x} = 0;"),
                        format!("free({p});"),
                        format!("{x} = {p} + 1;"),
                        format!("return {x};"),
                    ],
                    3,
                )
            } else {
                (
                    vec![
                        format!("int {p} = malloc(8);"),
                        format!("int {x} = 0;"),
                        format!("{x} = {p} + 1;"),
                        format!("free({p});"),
                        format!("return {x};"),
                    ],
                    2,
                )
            };
            Template {
                params: String::new(),
                body,
                flawed,
            }
        }
        FlawFamily::OffByOne => {
            let src = pool.take();
            let buf = pool.take();
            let n = if vulnerable { 11 } else { 10 };
            Template {
                params: format!("char {src}[20]"),
                body: vec![
                    format!("char {buf}[10];"),
                    format!("memcpy({buf}, {src}, {n});"),
                    "return;".into(),
                ],
                flawed: 1,
            }
        }
    }
}

/// Distractor statements that share no variables with the template, so they
/// never enter a seed slice.
fn distractors(count: usize, pool: &mut NamePool, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::new();
    for _ in 0..count {
        let v = pool.take();
        let a: i64 = rng.gen_range(1..90);
        let b: i64 = rng.gen_range(1..9);
        match rng.gen_range(0..3) {
            0 => {
                out.push(format!("int {v} = {a};"));
                out.push(format!("{v} = {v} + {b};"));
            }
            1 => {
                out.push(format!("int {v} = {a};"));
                out.push(format!("if ({v} > {b}) {{ {v} = {v} - {b}; }}"));
            }
            _ => {
                out.push(format!("int {v} = 0;"));
                out.push(format!(
                    "while ({v} < {b}) {{ {v} = {v} + 1; }}"
                ));
            }
        }
    }
    out
}

/// Source text plus ground truth for one generated function.
pub struct GeneratedFunction {
    pub name: String,
    pub text: String,
    pub truth: GroundTruth,
}

pub fn generate_functions(spec: &CorpusSpec) -> Result<Vec<GeneratedFunction>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_vuln = (spec.n_functions as f64 * spec.vulnerable_ratio).round() as usize;
    let mut labels: Vec<bool> = (0..spec.n_functions).map(|i| i < n_vuln).collect();
    labels.shuffle(&mut rng);

    let mut out = Vec::with_capacity(spec.n_functions);
    for (i, &vulnerable) in labels.iter().enumerate() {
        let family = spec.families[rng.gen_range(0..spec.families.len())];
        let mut pool = NamePool::new(spec.identifier_pool, &mut rng);
        let t = instantiate(family, vulnerable, &mut pool);
        let n_distract = rng.gen_range(spec.distractor_range.0..=spec.distractor_range.1);
        let extra = distractors(n_distract, &mut pool, &mut rng);
        let name = format!("func_{i:04}");

        // distractors go after the template so the flawed index is stable
        let mut lines = vec![format!("void {name}({}) {{", t.params)];
        let ret = t.body.last().cloned().unwrap();
        for s in &t.body[..t.body.len() - 1] {
            lines.push(format!("    {s}"));
        }
        for s in &extra {
            lines.push(format!("    {s}"));
        }
        lines.push(format!("    {ret}"));
        lines.push("}".into());
        let text = lines.join("\n") + "\n";

        out.push(GeneratedFunction {
            name: name.clone(),
            text,
            truth: GroundTruth {
                function: name,
                label: u8::from(vulnerable),
                family,
                flawed_stmt: vulnerable.then_some(t.flawed),
            },
        });
    }
    Ok(out)
}

/// Write one `.pc` file per function plus a JSON-lines ground-truth file;
/// returns the written paths (sources, truth).
pub fn generate(spec: &CorpusSpec, dir: &Path) -> Result<(Vec<PathBuf>, PathBuf), CorpusError> {
    let funcs = generate_functions(spec)?;
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(funcs.len());
    let truth_path = dir.join("truth.jsonl");
    let mut truth = std::io::BufWriter::new(std::fs::File::create(&truth_path)?);
    for f in &funcs {
        let p = dir.join(format!("{}.pc", f.name));
        std::fs::write(&p, &f.text)?;
        let line = serde_json::to_string(&f.truth)
            .map_err(|e| CorpusError::MalformedTruth(e.to_string()))?;
        writeln!(truth, "{line}")?;
        paths.push(p);
    }
    truth.flush()?;
    Ok((paths, truth_path))
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruth>, CorpusError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedTruth(e.to_string()))?,
        );
    }
    Ok(out)
}

fn stmt_is_flaw(f: &PseudoFunction, family: FlawFamily, idx: usize) -> bool {
    let Some(stmt) = f.statements.get(idx) else {
        return false;
    };
    match (&stmt.kind, family) {
        (StmtKind::Call { callee, .. }, FlawFamily::OverflowStrcpy) => callee == "strcpy",
        (StmtKind::Call { callee, args, .. }, FlawFamily::FormatString) => {
            callee == "printf" && args.len() == 1
        }
        (StmtKind::Call { callee, args, .. }, FlawFamily::IntOverflowMalloc) => {
            callee == "malloc" && matches!(args.first(), Some(Expr::Binary { .. }))
        }
        (StmtKind::Call { callee, args, .. }, FlawFamily::OffByOne) => {
            if callee != "memcpy" {
                return false;
            }
            let Some(Expr::Int(n)) = args.get(2) else {
                return false;
            };
            let Some(Expr::Ident(dst)) = args.first() else {
                return false;
            };
            // over-long copy relative to the destination declaration
            let cap = f.statements.iter().find_map(|s| match &s.kind {
                StmtKind::Decl {
                    name,
                    ty: crate::ingest::TypeTag::CharArray(c),
                    ..
                } if name == dst => Some(*c as i64),
                _ => None,
            });
            cap.is_some_and(|c| *n > c)
        }
        (_, FlawFamily::UseAfterFree) => {
            // the flawed statement reads a variable freed earlier
            let uses = stmt.uses();
            f.statements[..idx].iter().any(|s| match &s.kind {
                StmtKind::Call { callee, args, .. } if callee == "free" => args
                    .iter()
                    .any(|a| matches!(a, Expr::Ident(v) if uses.contains(v))),
                _ => false,
            })
        }
        _ => false,
    }
}

fn function_has_flaw(f: &PseudoFunction, family: FlawFamily) -> Option<usize> {
    (0..f.statements.len()).find(|&i| stmt_is_flaw(f, family, i))
}

/// Re-parse every file, confirm each vulnerable function yields a seed whose
/// slice covers the flawed statement, and that safe twins carry no flaw
/// pattern of their family.
pub fn verify_corpus(sources: &[PathBuf], truth: &[GroundTruth]) -> Result<(), CorpusError> {
    let rules = default_rules();
    let mut bad = Vec::new();
    for t in truth {
        let Some(path) = sources
            .iter()
            .find(|p| p.file_stem().is_some_and(|s| s == t.function.as_str()))
        else {
            bad.push(format!("{} (missing file)", t.function));
            continue;
        };
        let text = std::fs::read_to_string(path)?;
        let module = match parse_pseudocode(&text, &t.function) {
            Ok(m) => m,
            Err(e) => {
                bad.push(format!("{} (parse: {e})", t.function));
                continue;
            }
        };
        let Some(f) = module.functions.iter().find(|f| f.name == t.function) else {
            bad.push(format!("{} (function not found)", t.function));
            continue;
        };
        let seeds = find_seeds(&module, &rules);
        if t.label == 1 {
            let Some(flawed) = t.flawed_stmt else {
                bad.push(format!("{} (no flawed index)", t.function));
                continue;
            };
            if function_has_flaw(f, t.family) != Some(flawed) {
                bad.push(format!("{} (flaw pattern mismatch)", t.function));
                continue;
            }
            if seeds.is_empty() {
                bad.push(format!("{} (no seed)", t.function));
                continue;
            }
            let cfg = build_cfg(&build_ast(f));
            let pdg = build_pdg(&cfg, f);
            let covered = seeds.iter().any(|s| {
                slice(&pdg, s.stmt_index, SliceDirection::Both)
                    .map(|sl| sl.contains(&flawed))
                    .unwrap_or(false)
            });
            if !covered {
                bad.push(format!("{} (slice misses flaw)", t.function));
            }
        } else if function_has_flaw(f, t.family).is_some() {
            bad.push(format!("{} (flaw pattern in safe twin)", t.function));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CorpusError::VerificationFailure(bad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadgets::normalize;

    #[test]
    fn counts_and_ratio() {
        let spec = CorpusSpec {
            n_functions: 10,
            vulnerable_ratio: 0.5,
            seed: 7,
            ..Default::default()
        };
        let funcs = generate_functions(&spec).unwrap();
        assert_eq!(funcs.len(), 10);
        assert_eq!(funcs.iter().filter(|f| f.truth.label == 1).count(), 5);
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = CorpusSpec {
            n_functions: 20,
            seed: 42,
            ..Default::default()
        };
        let a = generate_functions(&spec).unwrap();
        let b = generate_functions(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.truth, y.truth);
        }
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let (p1, t1) = generate(&spec, dir1.path()).unwrap();
        let (p2, t2) = generate(&spec, dir2.path()).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        assert_eq!(std::fs::read(t1).unwrap(), std::fs::read(t2).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = |f: fn(&mut CorpusSpec)| {
            let mut s = CorpusSpec::default();
            f(&mut s);
            assert!(matches!(
                generate_functions(&s),
                Err(CorpusError::InvalidSpec(_))
            ));
        };
        bad(|s| s.n_functions = 0);
        bad(|s| s.vulnerable_ratio = 1.5);
        bad(|s| s.families.clear());
        bad(|s| s.distractor_range = (3, 1));
    }

    #[test]
    fn generated_corpus_verifies() {
        let spec = CorpusSpec {
            n_functions: 40,
            seed: 13,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (paths, truth_path) = generate(&spec, dir.path()).unwrap();
        let truth = read_truth(&truth_path).unwrap();
        assert_eq!(truth.len(), 40);
        verify_corpus(&paths, &truth).unwrap();
    }

    #[test]
    fn tampered_corpus_fails_verification() {
        let spec = CorpusSpec {
            n_functions: 10,
            vulnerable_ratio: 1.0,
            families: vec![FlawFamily::OverflowStrcpy],
            seed: 3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (paths, truth_path) = generate(&spec, dir.path()).unwrap();
        let truth = read_truth(&truth_path).unwrap();
        // remove the strcpy from the first file
        let victim = &paths[0];
        let text = std::fs::read_to_string(victim).unwrap();
        let edited: String = text
            .lines()
            .filter(|l| !l.contains("strcpy"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        std::fs::write(victim, edited).unwrap();
        let err = verify_corpus(&paths, &truth).unwrap_err();
        match err {
            CorpusError::VerificationFailure(names) => {
                assert!(names.iter().any(|n| n.contains(&truth[0].function)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn edit_distance(a: &[String], b: &[String]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, x) in a.iter().enumerate() {
            let mut cur = vec![i + 1];
            for (j, y) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(x != y);
                cur.push(sub.min(prev[j + 1] + 1).min(cur[j] + 1));
            }
            prev = cur;
        }
        prev[b.len()]
    }

    fn multiset_diff(a: &[String], b: &[String]) -> usize {
        let mut ma: Vec<&String> = a.iter().collect();
        let mut mb: Vec<&String> = b.iter().collect();
        ma.sort();
        mb.sort();
        let (mut i, mut j, mut diff) = (0, 0, 0);
        while i < ma.len() && j < mb.len() {
            match ma[i].cmp(mb[j]) {
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => {
                    diff += 1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    diff += 1;
                    j += 1;
                }
            }
        }
        diff + ma.len() - i + mb.len() - j
    }

    #[test]
    fn twins_are_minimal_pairs() {
        // same pool state → twin bodies differ in ≤ 3 tokens (multiset) for
        // every family
        let rules = default_rules();
        for family in ALL_FAMILIES {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut pool_v = NamePool::new(16, &mut rng);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut pool_s = NamePool::new(16, &mut rng);
            let v = instantiate(family, true, &mut pool_v);
            let s = instantiate(family, false, &mut pool_s);
            let tv = normalize(&v.body, &rules);
            let ts = normalize(&s.body, &rules);
            // substitution families stay within token edit distance 3; the
            // use-after-free swap keeps an identical token multiset
            let diff = edit_distance(&tv, &ts).min(multiset_diff(&tv, &ts));
            assert!(diff <= 3, "{family:?}: token diff {diff}");
        }
    }

    #[test]
    fn fifty_spec_sweep_is_sound() {
        for seed in 0..50u64 {
            let spec = CorpusSpec {
                n_functions: 8,
                seed,
                ..Default::default()
            };
            let funcs = generate_functions(&spec).unwrap();
            // in-memory verification: write to a shared dir per sweep
            let dir = tempfile::tempdir().unwrap();
            let (paths, truth_path) = generate(&spec, dir.path()).unwrap();
            let truth = read_truth(&truth_path).unwrap();
            verify_corpus(&paths, &truth).unwrap();
            assert_eq!(funcs.len(), 8);
        }
    }
}
