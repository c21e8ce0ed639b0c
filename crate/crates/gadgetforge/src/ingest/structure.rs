//! Structural analysis over a parsed module: per-function statement records,
//! basic-block and call-graph structure, and entry-to-exit control-path
//! summaries (loops summarized by back-edge annotation, not unrolled).

use super::{AnalysisBundle, IngestError, PseudoModule, StmtKind};
use crate::graphs::{build_ast, build_cfg, EdgeLabel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementRecord {
    pub index: usize,
    pub line: u32,
    pub kind: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: usize,
    pub statements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallGraphEdge {
    pub caller: String,
    pub callee: String,
    pub multiplicity: usize,
}

/// One acyclic entry-to-exit path; loop iterations are represented by the
/// back edges encountered, not by unrolling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub blocks: Vec<usize>,
    pub branch_labels: Vec<String>,
    pub back_edges_seen: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionStructure {
    pub function: String,
    pub blocks: Vec<BasicBlock>,
    pub entry: usize,
    pub exit: usize,
    pub paths: Vec<ControlPath>,
    /// True when path enumeration hit the cap and was truncated.
    pub paths_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub disassembly_view: BTreeMap<String, Vec<StatementRecord>>,
    pub block_structure: Vec<FunctionStructure>,
    pub call_graph: Vec<CallGraphEdge>,
    pub control_paths: BTreeMap<String, Vec<ControlPath>>,
    pub module_digest: u64,
}

const PATH_CAP: usize = 256;

pub fn analyze_structure(module: &PseudoModule) -> StructuralReport {
    let mut disassembly_view = BTreeMap::new();
    let mut block_structure = Vec::new();
    let mut control_paths = BTreeMap::new();
    let mut call_counts: BTreeMap<(String, String), usize> = BTreeMap::new();

    for f in &module.functions {
        let records: Vec<StatementRecord> = f
            .statements
            .iter()
            .map(|s| StatementRecord {
                index: s.index,
                line: s.line,
                kind: kind_name(&s.kind).to_string(),
                text: s.text.clone(),
            })
            .collect();
        disassembly_view.insert(f.name.clone(), records);

        for cs in &f.callsites {
            *call_counts
                .entry((f.name.clone(), cs.callee.clone()))
                .or_default() += 1;
        }

        let cfg = build_cfg(&build_ast(f));
        let (paths, truncated) = enumerate_paths(&cfg);
        control_paths.insert(f.name.clone(), paths.clone());
        block_structure.push(FunctionStructure {
            function: f.name.clone(),
            blocks: cfg
                .blocks
                .iter()
                .enumerate()
                .map(|(id, statements)| BasicBlock {
                    id,
                    statements: statements.clone(),
                })
                .collect(),
            entry: cfg.entry,
            exit: cfg.exit,
            paths,
            paths_truncated: truncated,
        });
    }

    StructuralReport {
        disassembly_view,
        block_structure,
        call_graph: call_counts
            .into_iter()
            .map(|((caller, callee), multiplicity)| CallGraphEdge {
                caller,
                callee,
                multiplicity,
            })
            .collect(),
        control_paths,
        module_digest: super::module_digest(module),
    }
}

fn kind_name(kind: &StmtKind) -> &'static str {
    match kind {
        StmtKind::Decl { .. } => "decl",
        StmtKind::Assign { .. } => "assign",
        StmtKind::Call { .. } => "call",
        StmtKind::If { .. } => "if",
        StmtKind::While { .. } => "while",
        StmtKind::Return { .. } => "return",
    }
}

fn enumerate_paths(cfg: &crate::graphs::Cfg) -> (Vec<ControlPath>, bool) {
    let mut paths = Vec::new();
    let mut truncated = false;
    let mut stack: Vec<(usize, Vec<usize>, Vec<String>)> =
        vec![(cfg.entry, vec![cfg.entry], Vec::new())];
    while let Some((block, blocks, labels)) = stack.pop() {
        if paths.len() >= PATH_CAP {
            truncated = true;
            break;
        }
        if block == cfg.exit {
            // Loops are summarized: record every back edge that re-enters a
            // block on this path instead of unrolling iterations.
            let back_edges_seen: Vec<(usize, usize)> = cfg
                .edges
                .iter()
                .filter(|e| e.label == EdgeLabel::Back && blocks.contains(&e.dst))
                .map(|e| (e.src, e.dst))
                .collect();
            paths.push(ControlPath {
                blocks,
                branch_labels: labels,
                back_edges_seen,
            });
            continue;
        }
        for e in cfg.successors(block) {
            if e.label == EdgeLabel::Back || blocks.contains(&e.dst) {
                continue; // acyclic walk only
            }
            let mut blocks2 = blocks.clone();
            blocks2.push(e.dst);
            let mut labels2 = labels.clone();
            labels2.push(format!("{:?}", e.label));
            stack.push((e.dst, blocks2, labels2));
        }
    }
    paths.sort_by(|a, b| a.blocks.cmp(&b.blocks));
    (paths, truncated)
}

/// Lossless aggregation of a module, its report and caller metadata, with
/// mandatory keys injected when absent.
pub fn combine_analyses(
    module: &PseudoModule,
    report: &StructuralReport,
    metadata: BTreeMap<String, String>,
) -> Result<AnalysisBundle, IngestError> {
    let module_digest = super::module_digest(module);
    if report.module_digest != module_digest {
        return Err(IngestError::SourceMismatch {
            report: report.module_digest,
            module: module_digest,
        });
    }
    let mut metadata = metadata;
    metadata
        .entry("adapter_id".to_string())
        .or_insert_with(|| {
            if module.adapter_id.is_empty() {
                "text-listing".to_string()
            } else {
                module.adapter_id.clone()
            }
        });
    metadata
        .entry("schema_version".to_string())
        .or_insert_with(|| super::SCHEMA_VERSION.to_string());
    Ok(AnalysisBundle {
        module: module.clone(),
        report: report.clone(),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse_pseudocode;
    use super::*;

    #[test]
    fn straight_line_one_block() {
        let m = parse_pseudocode("int f(){ int x = 1; return x; }", "t").unwrap();
        let r = analyze_structure(&m);
        assert_eq!(r.block_structure[0].blocks.len(), 1);
    }

    #[test]
    fn call_graph_edge_with_multiplicity() {
        let m = parse_pseudocode(
            "int g(){ return 1; } int f(){ int a = g(); return a; }",
            "t",
        )
        .unwrap();
        let r = analyze_structure(&m);
        assert_eq!(
            r.call_graph,
            vec![CallGraphEdge {
                caller: "f".into(),
                callee: "g".into(),
                multiplicity: 1
            }]
        );
    }

    #[test]
    fn if_else_four_blocks() {
        let m = parse_pseudocode(
            "int f(int c){ if (c) { c = 1; } else { c = 2; } return c; }",
            "t",
        )
        .unwrap();
        let r = analyze_structure(&m);
        assert_eq!(r.block_structure[0].blocks.len(), 4);
        // two acyclic paths: through then and through else
        assert_eq!(r.control_paths["f"].len(), 2);
    }

    #[test]
    fn loop_paths_are_summarized() {
        let m = parse_pseudocode(
            "int f(int c){ while (c > 0) { c = c - 1; } return c; }",
            "t",
        )
        .unwrap();
        let r = analyze_structure(&m);
        let paths = &r.control_paths["f"];
        assert!(!paths.is_empty());
        assert!(paths.iter().any(|p| !p.back_edges_seen.is_empty()));
    }

    #[test]
    fn combine_defaults_and_mismatch() {
        let m = parse_pseudocode("int f(){ return 0; }", "t").unwrap();
        let r = analyze_structure(&m);
        let b = combine_analyses(&m, &r, BTreeMap::new()).unwrap();
        assert!(b.metadata.contains_key("adapter_id"));
        assert_eq!(b.metadata["schema_version"], super::super::SCHEMA_VERSION);

        let mut user = BTreeMap::new();
        user.insert("build".to_string(), "O2".to_string());
        let b2 = combine_analyses(&m, &r, user).unwrap();
        assert_eq!(b2.metadata["build"], "O2");

        let m2 = parse_pseudocode("int g(){ return 1; }", "t").unwrap();
        assert!(matches!(
            combine_analyses(&m2, &r, BTreeMap::new()),
            Err(IngestError::SourceMismatch { .. })
        ));
    }
}
