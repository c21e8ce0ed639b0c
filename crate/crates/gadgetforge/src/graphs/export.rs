//! Debug exports: DOT text with deterministic node ordering, and a JSON
//! graph dump carrying a schema_version field.

use super::cfg::Cfg;
use super::pdg::Pdg;
use crate::ingest::PseudoFunction;
use serde_json::json;

pub fn cfg_to_dot(cfg: &Cfg, name: &str) -> String {
    let mut out = format!("digraph \"cfg_{name}\" {{\n");
    for (i, b) in cfg.blocks.iter().enumerate() {
        let stmts = b
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let role = if i == cfg.entry {
            " (entry)"
        } else if i == cfg.exit {
            " (exit)"
        } else {
            ""
        };
        out.push_str(&format!("  b{i} [label=\"B{i}{role}: [{stmts}]\"];\n"));
    }
    for e in &cfg.edges {
        out.push_str(&format!(
            "  b{} -> b{} [label=\"{:?}\"];\n",
            e.src, e.dst, e.label
        ));
    }
    out.push_str("}\n");
    out
}

pub fn pdg_to_dot(pdg: &Pdg, f: &PseudoFunction) -> String {
    let mut out = format!("digraph \"pdg_{}\" {{\n", f.name);
    for s in &f.statements {
        out.push_str(&format!(
            "  s{} [label=\"{}: {}\"];\n",
            s.index,
            s.index,
            s.text.replace('"', "\\\"")
        ));
    }
    for e in &pdg.data_edges {
        out.push_str(&format!(
            "  s{} -> s{} [label=\"{}\"];\n",
            e.def, e.use_, e.var
        ));
    }
    for e in &pdg.control_edges {
        out.push_str(&format!(
            "  s{} -> s{} [style=dashed];\n",
            e.controller, e.controlled
        ));
    }
    out.push_str("}\n");
    out
}

pub fn pdg_to_json(pdg: &Pdg, f: &PseudoFunction) -> serde_json::Value {
    json!({
        "schema_version": crate::ingest::SCHEMA_VERSION,
        "function": f.name,
        "n_statements": pdg.n_statements,
        "data_edges": pdg.data_edges,
        "control_edges": pdg.control_edges,
    })
}
