use super::ast::{Ast, NodeKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeLabel {
    Fallthrough,
    True,
    False,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgEdge {
    pub src: usize,
    pub dst: usize,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cfg {
    /// Statement indices per block, in program order.
    pub blocks: Vec<Vec<usize>>,
    pub edges: Vec<CfgEdge>,
    pub entry: usize,
    pub exit: usize,
}

impl Cfg {
    pub fn successors(&self, b: usize) -> impl Iterator<Item = &CfgEdge> {
        self.edges.iter().filter(move |e| e.src == b)
    }

    pub fn predecessors(&self, b: usize) -> impl Iterator<Item = &CfgEdge> {
        self.edges.iter().filter(move |e| e.dst == b)
    }

    pub fn back_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.label == EdgeLabel::Back).count()
    }

    /// Block containing a statement.
    pub fn block_of(&self, stmt: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&stmt))
    }
}

struct Builder<'a> {
    ast: &'a Ast,
    blocks: Vec<Vec<usize>>,
    edges: Vec<CfgEdge>,
}

/// Outcome of lowering a statement sequence: the exits that fall through to
/// whatever comes next. A `return` produces a terminal block instead.
struct SeqExit {
    /// (block, label) pairs wanting an edge to the successor region.
    open: Vec<(usize, EdgeLabel)>,
    /// Blocks terminated by `return`.
    returns: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new_block(&mut self) -> usize {
        self.blocks.push(Vec::new());
        self.blocks.len() - 1
    }

    fn edge(&mut self, src: usize, dst: usize, label: EdgeLabel) {
        self.edges.push(CfgEdge { src, dst, label });
    }

    /// Lower a sequence of statement AST nodes starting in `entry_block`.
    fn lower_seq(&mut self, nodes: &[usize], entry_block: usize) -> SeqExit {
        let mut current = entry_block;
        let mut returns = Vec::new();
        let mut i = 0;
        while i < nodes.len() {
            let node = &self.ast.nodes[nodes[i]];
            let stmt = node.stmt.expect("statement node");
            match node.kind {
                NodeKind::Decl | NodeKind::Assign | NodeKind::Call => {
                    self.blocks[current].push(stmt);
                }
                NodeKind::Return => {
                    self.blocks[current].push(stmt);
                    returns.push(current);
                    // Anything after a return is unreachable; the dialect
                    // generators never emit it, but keep indices partitioned.
                    if i + 1 < nodes.len() {
                        current = self.new_block();
                    } else {
                        return SeqExit {
                            open: Vec::new(),
                            returns,
                        };
                    }
                }
                NodeKind::If => {
                    self.blocks[current].push(stmt);
                    let (then_nodes, else_nodes) = split_if_children(self.ast, nodes[i]);
                    let then_entry = self.new_block();
                    self.edge(current, then_entry, EdgeLabel::True);
                    let then_exit = self.lower_seq(&then_nodes, then_entry);
                    let mut open = then_exit.open;
                    returns.extend(then_exit.returns);
                    if else_nodes.is_empty() {
                        open.push((current, EdgeLabel::False));
                    } else {
                        let else_entry = self.new_block();
                        self.edge(current, else_entry, EdgeLabel::False);
                        let else_exit = self.lower_seq(&else_nodes, else_entry);
                        open.extend(else_exit.open);
                        returns.extend(else_exit.returns);
                    }
                    if open.is_empty() && i + 1 == nodes.len() {
                        return SeqExit {
                            open: Vec::new(),
                            returns,
                        };
                    }
                    let join = self.new_block();
                    for (b, l) in open {
                        self.edge(b, join, l);
                    }
                    current = join;
                }
                NodeKind::While => {
                    let header = if self.blocks[current].is_empty() {
                        current
                    } else {
                        let h = self.new_block();
                        self.edge(current, h, EdgeLabel::Fallthrough);
                        h
                    };
                    self.blocks[header].push(stmt);
                    let body_nodes = while_body_children(self.ast, nodes[i]);
                    let body_entry = self.new_block();
                    self.edge(header, body_entry, EdgeLabel::True);
                    let body_exit = self.lower_seq(&body_nodes, body_entry);
                    for (b, _) in body_exit.open {
                        self.edge(b, header, EdgeLabel::Back);
                    }
                    returns.extend(body_exit.returns);
                    let after = self.new_block();
                    self.edge(header, after, EdgeLabel::False);
                    current = after;
                }
                NodeKind::Function | NodeKind::Expr => unreachable!("not a statement node"),
            }
            i += 1;
        }
        SeqExit {
            open: vec![(current, EdgeLabel::Fallthrough)],
            returns,
        }
    }
}

fn split_if_children(ast: &Ast, if_node: usize) -> (Vec<usize>, Vec<usize>) {
    // children: [cond expr, then-stmts..., else-stmts...]
    let node = &ast.nodes[if_node];
    let stmt_children = &node.children[1..];
    let then_count = node.then_count.unwrap_or(stmt_children.len());
    (
        stmt_children[..then_count].to_vec(),
        stmt_children[then_count..].to_vec(),
    )
}

fn while_body_children(ast: &Ast, while_node: usize) -> Vec<usize> {
    ast.nodes[while_node].children[1..].to_vec()
}

/// Build the branch-labeled basic-block graph for one function AST.
pub fn build_cfg(ast: &Ast) -> Cfg {
    let mut b = Builder {
        ast,
        blocks: Vec::new(),
        edges: Vec::new(),
    };
    let entry = b.new_block();
    let top: Vec<usize> = ast.nodes[ast.root].children.clone();
    let exit_info = b.lower_seq(&top, entry);

    // Collect sinks: open fallthrough exits plus return blocks.
    let mut sinks: Vec<(usize, EdgeLabel)> = exit_info.open.clone();
    for r in exit_info.returns {
        sinks.push((r, EdgeLabel::Fallthrough));
    }
    let exit = if sinks.len() == 1 {
        sinks[0].0
    } else {
        let e = b.blocks.len();
        b.blocks.push(Vec::new());
        for (s, l) in sinks {
            b.edges.push(CfgEdge {
                src: s,
                dst: e,
                label: l,
            });
        }
        e
    };

    // Drop empty blocks that have become pure pass-throughs (single
    // predecessor, single fallthrough successor), keeping entry/exit.
    let mut cfg = Cfg {
        blocks: b.blocks,
        edges: b.edges,
        entry,
        exit,
    };
    simplify(&mut cfg);
    order_blocks(&mut cfg);
    cfg
}

fn simplify(cfg: &mut Cfg) {
    loop {
        let mut removed = false;
        for b in 0..cfg.blocks.len() {
            if b == cfg.entry || b == cfg.exit || !cfg.blocks[b].is_empty() {
                continue;
            }
            let outs: Vec<CfgEdge> = cfg.successors(b).copied().collect();
            if outs.len() != 1 || outs[0].label == EdgeLabel::Back {
                continue;
            }
            let dst = outs[0].dst;
            if dst == b {
                continue;
            }
            // redirect predecessors straight to dst, preserving their labels
            for e in cfg.edges.iter_mut() {
                if e.dst == b {
                    e.dst = dst;
                }
            }
            cfg.edges.retain(|e| e.src != b);
            // compact: swap-remove block b
            remove_block(cfg, b);
            removed = true;
            break;
        }
        if !removed {
            break;
        }
    }
    cfg.edges.sort_by_key(|e| (e.src, e.dst, e.label as u8));
    cfg.edges.dedup();
}

fn remove_block(cfg: &mut Cfg, b: usize) {
    let last = cfg.blocks.len() - 1;
    cfg.blocks.swap_remove(b);
    let fix = |x: &mut usize| {
        if *x == last {
            *x = b;
        }
    };
    for e in cfg.edges.iter_mut() {
        fix(&mut e.src);
        fix(&mut e.dst);
    }
    fix(&mut cfg.entry);
    fix(&mut cfg.exit);
}

/// Renumber blocks so that non-empty blocks appear in statement order
/// (empty blocks last); block concatenation then reproduces the statement
/// list.
fn order_blocks(cfg: &mut Cfg) {
    let n = cfg.blocks.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&b| {
        cfg.blocks[b]
            .first()
            .copied()
            .map(|s| (0usize, s))
            .unwrap_or((1, b))
    });
    let mut remap = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let mut blocks = vec![Vec::new(); n];
    for (old, stmts) in cfg.blocks.iter().enumerate() {
        blocks[remap[old]] = stmts.clone();
    }
    cfg.blocks = blocks;
    for e in cfg.edges.iter_mut() {
        e.src = remap[e.src];
        e.dst = remap[e.dst];
    }
    cfg.entry = remap[cfg.entry];
    cfg.exit = remap[cfg.exit];
    cfg.edges.sort_by_key(|e| (e.src, e.dst, e.label as u8));
}
