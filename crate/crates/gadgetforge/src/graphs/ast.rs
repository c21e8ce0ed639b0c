use crate::ingest::{Expr, LValue, PseudoFunction, StmtKind};
use serde::{Deserialize, Serialize};

/// Fixed node-kind alphabet; also the histogram dimension used by the
/// structural feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Function,
    Decl,
    Assign,
    Call,
    If,
    While,
    Return,
    Expr,
}

pub const NODE_KIND_COUNT: usize = 8;

impl NodeKind {
    pub fn ordinal(self) -> usize {
        match self {
            NodeKind::Function => 0,
            NodeKind::Decl => 1,
            NodeKind::Assign => 2,
            NodeKind::Call => 3,
            NodeKind::If => 4,
            NodeKind::While => 5,
            NodeKind::Return => 6,
            NodeKind::Expr => 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: NodeKind,
    /// Token text for terminals, operator/name for interior expr nodes.
    pub label: String,
    pub children: Vec<usize>,
    /// Statement this node belongs to (None for the Function root).
    pub stmt: Option<usize>,
    pub parent: Option<usize>,
    /// For `If` nodes: number of then-body statement children (the rest of
    /// the statement children belong to the else body).
    pub then_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
    pub root: usize,
    /// Statement index -> AST node id of the statement node.
    pub stmt_nodes: Vec<usize>,
    pub n_statements: usize,
}

impl Ast {
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty() && n.kind == NodeKind::Expr).count()
    }

    pub fn kind_histogram(&self) -> [usize; NODE_KIND_COUNT] {
        let mut h = [0usize; NODE_KIND_COUNT];
        for n in &self.nodes {
            h[n.kind.ordinal()] += 1;
        }
        h
    }
}

struct Builder {
    nodes: Vec<AstNode>,
}

impl Builder {
    fn push(&mut self, kind: NodeKind, label: String, stmt: Option<usize>, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode {
            kind,
            label,
            children: Vec::new(),
            stmt,
            parent,
            then_count: None,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    fn expr(&mut self, e: &Expr, stmt: usize, parent: usize) -> usize {
        match e {
            Expr::Ident(n) => self.push(NodeKind::Expr, n.clone(), Some(stmt), Some(parent)),
            Expr::Int(v) => self.push(NodeKind::Expr, v.to_string(), Some(stmt), Some(parent)),
            Expr::Str(_) => self.push(NodeKind::Expr, "STR".into(), Some(stmt), Some(parent)),
            Expr::Char(c) => self.push(NodeKind::Expr, format!("'{c}'"), Some(stmt), Some(parent)),
            Expr::Index { base, index } => {
                let id = self.push(NodeKind::Expr, "[]".into(), Some(stmt), Some(parent));
                self.push(NodeKind::Expr, base.clone(), Some(stmt), Some(id));
                self.expr(index, stmt, id);
                id
            }
            Expr::Unary { op, expr } => {
                let id = self.push(NodeKind::Expr, op.to_string(), Some(stmt), Some(parent));
                self.expr(expr, stmt, id);
                id
            }
            Expr::Binary { op, lhs, rhs } => {
                let id = self.push(NodeKind::Expr, format!("{op:?}"), Some(stmt), Some(parent));
                self.expr(lhs, stmt, id);
                self.expr(rhs, stmt, id);
                id
            }
        }
    }

    fn lvalue(&mut self, l: &LValue, stmt: usize, parent: usize) {
        match l {
            LValue::Var(n) => {
                self.push(NodeKind::Expr, n.clone(), Some(stmt), Some(parent));
            }
            LValue::Elem { base, index } => {
                let id = self.push(NodeKind::Expr, "[]".into(), Some(stmt), Some(parent));
                self.push(NodeKind::Expr, base.clone(), Some(stmt), Some(id));
                self.expr(index, stmt, id);
            }
        }
    }
}

/// Structure-preserving tree over one function.
pub fn build_ast(f: &PseudoFunction) -> Ast {
    let mut b = Builder { nodes: Vec::new() };
    let root = b.push(NodeKind::Function, f.name.clone(), None, None);
    let mut stmt_nodes = vec![usize::MAX; f.statements.len()];
    build_body(&mut b, f, &f.body, root, &mut stmt_nodes);
    Ast {
        nodes: b.nodes,
        root,
        stmt_nodes,
        n_statements: f.statements.len(),
    }
}

fn build_body(
    b: &mut Builder,
    f: &PseudoFunction,
    body: &[usize],
    parent: usize,
    stmt_nodes: &mut [usize],
) {
    for &si in body {
        let s = &f.statements[si];
        let node = match &s.kind {
            StmtKind::Decl { name, init, .. } => {
                let id = b.push(NodeKind::Decl, name.clone(), Some(si), Some(parent));
                b.push(NodeKind::Expr, name.clone(), Some(si), Some(id));
                if let Some(e) = init {
                    b.expr(e, si, id);
                }
                id
            }
            StmtKind::Assign { target, value } => {
                let id = b.push(NodeKind::Assign, "=".into(), Some(si), Some(parent));
                b.lvalue(target, si, id);
                b.expr(value, si, id);
                id
            }
            StmtKind::Call {
                result,
                callee,
                args,
                ..
            } => {
                let id = b.push(NodeKind::Call, callee.clone(), Some(si), Some(parent));
                if let Some(t) = result {
                    b.lvalue(t, si, id);
                }
                for a in args {
                    b.expr(a, si, id);
                }
                id
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let id = b.push(NodeKind::If, "if".into(), Some(si), Some(parent));
                b.expr(cond, si, id);
                build_body(b, f, then_body, id, stmt_nodes);
                build_body(b, f, else_body, id, stmt_nodes);
                b.nodes[id].then_count = Some(then_body.len());
                id
            }
            StmtKind::While { cond, body } => {
                let id = b.push(NodeKind::While, "while".into(), Some(si), Some(parent));
                b.expr(cond, si, id);
                build_body(b, f, body, id, stmt_nodes);
                id
            }
            StmtKind::Return { value } => {
                let id = b.push(NodeKind::Return, "return".into(), Some(si), Some(parent));
                if let Some(e) = value {
                    b.expr(e, si, id);
                }
                id
            }
        };
        stmt_nodes[si] = node;
    }
}
