//! Reaching-definitions data-dependence edges: forward may-analysis over the
//! CFG, kill on redefinition, iterated to fixpoint so definitions flow
//! around loop back edges.

use super::cfg::Cfg;
use crate::ingest::PseudoFunction;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataEdge {
    pub def: usize,
    pub use_: usize,
    pub var: String,
}

type Defs = BTreeMap<String, BTreeSet<usize>>;

fn transfer(f: &PseudoFunction, block: &[usize], mut defs: Defs, edges: Option<&mut Vec<DataEdge>>) -> Defs {
    let mut sink = Vec::new();
    let out = edges.unwrap_or(&mut sink);
    for &si in block {
        let s = &f.statements[si];
        for u in s.uses() {
            if let Some(ds) = defs.get(&u) {
                for &d in ds {
                    out.push(DataEdge {
                        def: d,
                        use_: si,
                        var: u.clone(),
                    });
                }
            }
        }
        if let Some(v) = s.def() {
            defs.insert(v.to_string(), BTreeSet::from([si]));
        }
    }
    out
        .sort();
    out.dedup();
    defs
}

/// Def-use edges per the iterative reaching-definitions fixpoint.
pub fn build_ddg(cfg: &Cfg, f: &PseudoFunction) -> Vec<DataEdge> {
    let n = cfg.blocks.len();
    let mut ins: Vec<Defs> = vec![Defs::new(); n];
    let mut outs: Vec<Defs> = vec![Defs::new(); n];

    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            let mut inb = Defs::new();
            for e in cfg.predecessors(b) {
                for (v, ds) in &outs[e.src] {
                    inb.entry(v.clone()).or_default().extend(ds.iter().copied());
                }
            }
            let outb = transfer(f, &cfg.blocks[b], inb.clone(), None);
            if inb != ins[b] || outb != outs[b] {
                ins[b] = inb;
                outs[b] = outb;
                changed = true;
            }
        }
    }

    let mut edges = Vec::new();
    for b in 0..n {
        transfer(f, &cfg.blocks[b], ins[b].clone(), Some(&mut edges));
    }
    edges.sort();
    edges.dedup();
    edges
}

#[cfg(test)]
mod tests {
    use super::super::ast::build_ast;
    use super::super::cfg::build_cfg;
    use super::*;
    use crate::ingest::parse_pseudocode;

    fn ddg_of(src: &str) -> Vec<DataEdge> {
        let m = parse_pseudocode(src, "t").unwrap();
        let f = &m.functions[0];
        let cfg = build_cfg(&build_ast(f));
        build_ddg(&cfg, f)
    }

    #[test]
    fn def_use_chain() {
        let edges = ddg_of("int f(){ int x = 1; int y = x; return y; }");
        assert!(edges.contains(&DataEdge {
            def: 0,
            use_: 1,
            var: "x".into()
        }));
        assert!(edges.contains(&DataEdge {
            def: 1,
            use_: 2,
            var: "y".into()
        }));
    }

    #[test]
    fn redefinition_kills() {
        let edges = ddg_of("int f(){ int x = 1; x = 2; int y = x; return y; }");
        assert!(!edges.iter().any(|e| e.def == 0 && e.var == "x"));
        assert!(edges.contains(&DataEdge {
            def: 1,
            use_: 2,
            var: "x".into()
        }));
    }

    #[test]
    fn no_uses_no_edges() {
        let edges = ddg_of("int f(){ int x = 1; int y = 2; return 0; }");
        assert!(edges.is_empty());
    }

    #[test]
    fn defs_flow_around_back_edges() {
        // x defined inside the loop body reaches its own use next iteration
        let edges = ddg_of("int f(int c){ int x = 0; while (c > 0) { x = x + 1; c = c - 1; } return x; }");
        // stmt 1 = while, stmt 2 = x = x + 1
        assert!(edges.contains(&DataEdge {
            def: 2,
            use_: 2,
            var: "x".into()
        }));
        assert!(edges.contains(&DataEdge {
            def: 2,
            use_: 4,
            var: "x".into()
        }));
    }

    #[test]
    fn call_defines_result_and_uses_args() {
        let edges = ddg_of(
            "int f(char s[10]){ char buf[10]; int n = read(s); strcpy(buf, s); return n; }",
        );
        // n = read(s) defines n used by return (stmt 3)
        assert!(edges.contains(&DataEdge {
            def: 1,
            use_: 3,
            var: "n".into()
        }));
        // buf decl (0) reaches the strcpy arg use (2)
        assert!(edges.contains(&DataEdge {
            def: 0,
            use_: 2,
            var: "buf".into()
        }));
    }
}
