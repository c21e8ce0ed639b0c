use super::cfg::Cfg;
use super::dataflow::{build_ddg, DataEdge};
use super::postdom::control_dependences;
use crate::ingest::PseudoFunction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ControlEdge {
    pub controller: usize,
    pub controlled: usize,
}

/// Program dependence graph over one function's statements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pdg {
    pub n_statements: usize,
    pub data_edges: Vec<DataEdge>,
    pub control_edges: Vec<ControlEdge>,
}

impl Pdg {
    pub fn max_in_degree(&self) -> usize {
        self.degree(|e| e.1)
    }

    pub fn max_out_degree(&self) -> usize {
        self.degree(|e| e.0)
    }

    fn degree(&self, pick: fn((usize, usize)) -> usize) -> usize {
        let mut counts = vec![0usize; self.n_statements];
        for e in &self.data_edges {
            counts[pick((e.def, e.use_))] += 1;
        }
        for e in &self.control_edges {
            counts[pick((e.controller, e.controlled))] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }
}

/// Union of data-dependence edges and control edges derived from
/// post-dominance on the reverse CFG.
pub fn build_pdg(cfg: &Cfg, f: &PseudoFunction) -> Pdg {
    let data_edges = build_ddg(cfg, f);
    let mut control_edges = Vec::new();
    for (a, b) in control_dependences(cfg) {
        // controller statement is the branch terminating block a
        let Some(&controller) = cfg.blocks[a].last() else {
            continue;
        };
        for &controlled in &cfg.blocks[b] {
            control_edges.push(ControlEdge {
                controller,
                controlled,
            });
        }
    }
    control_edges.sort();
    control_edges.dedup();
    Pdg {
        n_statements: f.statements.len(),
        data_edges,
        control_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::super::ast::build_ast;
    use super::super::cfg::build_cfg;
    use super::super::postdom::postdominators;
    use super::*;
    use crate::ingest::parse_pseudocode;

    fn pdg_of(src: &str) -> Pdg {
        let m = parse_pseudocode(src, "t").unwrap();
        let f = &m.functions[0];
        let cfg = build_cfg(&build_ast(f));
        build_pdg(&cfg, f)
    }

    #[test]
    fn if_controls_then_branch() {
        // stmt 0 = decl a, stmt 1 = if, stmt 2 = a = 1, stmt 3 = return
        let pdg = pdg_of("int f(int c){ int a = 0; if (c) { a = 1; } return a; }");
        assert!(pdg.control_edges.contains(&ControlEdge {
            controller: 1,
            controlled: 2
        }));
    }

    #[test]
    fn straight_line_zero_control_edges() {
        let pdg = pdg_of("int f(){ int a = 1; int b = a; return b; }");
        assert!(pdg.control_edges.is_empty());
    }

    #[test]
    fn while_controls_body() {
        // stmt 0 = while, stmt 1 = body assign, stmt 2 = return
        let pdg = pdg_of("int f(int c){ while (c > 0) { c = c - 1; } return c; }");
        assert!(pdg.control_edges.contains(&ControlEdge {
            controller: 0,
            controlled: 1
        }));
    }

    #[test]
    fn postdominator_chain_property() {
        let m = parse_pseudocode(
            "int f(int c){ int x = 0; if (c) { x = 1; } else { while (x < 3) { x = x + 1; } } return x; }",
            "t",
        )
        .unwrap();
        let cfg = build_cfg(&build_ast(&m.functions[0]));
        let ipdom = postdominators(&cfg);
        for b in 0..cfg.blocks.len() {
            // walking ipdom must reach the exit without cycling (chain)
            let mut cur = b;
            let mut steps = 0;
            while cur != cfg.exit {
                cur = ipdom[cur];
                steps += 1;
                assert!(steps <= cfg.blocks.len(), "ipdom chain cycles");
            }
        }
    }
}
