//! Pseudocode ingestion: the decompiler-adapter boundary, the dialect parser,
//! and the structural analysis bundle.
//!
//! Listings arrive as UTF-8 `.pc` text through a registered adapter
//! (`text-listing` is the built-in reference adapter), are parsed into a
//! [`PseudoModule`], and are then analyzed into a [`StructuralReport`]
//! (basic blocks, call graph, control-path summaries). A module, its report
//! and free-form metadata combine into an [`AnalysisBundle`].

mod lexer;
mod parser;
mod structure;

pub use lexer::{lex, Token, TokenKind};
pub use parser::parse_pseudocode;
pub use structure::{analyze_structure, combine_analyses, BasicBlock, StructuralReport};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::digest::hash64;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("empty input")]
    EmptyInput,
    #[error("syntax error at {line}:{column}: expected {expected}, found {found}")]
    SyntaxError {
        line: u32,
        column: u32,
        expected: String,
        found: String,
    },
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("report digest {report:#x} does not match module digest {module:#x}")]
    SourceMismatch { report: u64, module: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeTag {
    Int,
    Char,
    CharArray(usize),
    Void,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: TypeTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Ident(String),
    Int(i64),
    Str(String),
    Char(char),
    Index { base: String, index: Box<Expr> },
    Unary { op: char, expr: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    /// All variable names read by this expression.
    pub fn uses(&self, out: &mut Vec<String>) {
        match self {
            Expr::Ident(n) => out.push(n.clone()),
            Expr::Index { base, index } => {
                out.push(base.clone());
                index.uses(out);
            }
            Expr::Unary { expr, .. } => expr.uses(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.uses(out);
                rhs.uses(out);
            }
            Expr::Int(_) | Expr::Str(_) | Expr::Char(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LValue {
    Var(String),
    Elem { base: String, index: Expr },
}

impl LValue {
    pub fn base(&self) -> &str {
        match self {
            LValue::Var(n) => n,
            LValue::Elem { base, .. } => base,
        }
    }
}

/// Statement kinds of the dialect. `If`/`While` reference their nested
/// statements by index into the owning function's flat statement list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StmtKind {
    Decl {
        name: String,
        ty: TypeTag,
        init: Option<Expr>,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    Call {
        result: Option<LValue>,
        /// Present when the call result is bound by a fresh declaration,
        /// as in `int n = read(s);`.
        decl_ty: Option<TypeTag>,
        callee: String,
        args: Vec<Expr>,
    },
    If {
        cond: Expr,
        then_body: Vec<usize>,
        else_body: Vec<usize>,
    },
    While {
        cond: Expr,
        body: Vec<usize>,
    },
    Return {
        value: Option<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub index: usize,
    pub line: u32,
    pub column: u32,
    pub kind: StmtKind,
    /// Source text of the statement header (condition line for `if`/`while`).
    pub text: String,
}

impl Statement {
    /// Variable defined by this statement, if any. Array element writes
    /// define the whole array (scalar treatment).
    pub fn def(&self) -> Option<&str> {
        match &self.kind {
            StmtKind::Decl { name, .. } => Some(name),
            StmtKind::Assign { target, .. } => Some(target.base()),
            StmtKind::Call { result: Some(t), .. } => Some(t.base()),
            _ => None,
        }
    }

    /// Variables read by this statement. A call uses every argument
    /// variable; an element write uses the index expression.
    pub fn uses(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.kind {
            StmtKind::Decl { init, .. } => {
                if let Some(e) = init {
                    e.uses(&mut out);
                }
            }
            StmtKind::Assign { target, value } => {
                if let LValue::Elem { index, .. } = target {
                    index.uses(&mut out);
                }
                value.uses(&mut out);
            }
            StmtKind::Call { result, args, .. } => {
                if let Some(LValue::Elem { index, .. }) = result {
                    index.uses(&mut out);
                }
                for a in args {
                    a.uses(&mut out);
                }
            }
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => cond.uses(&mut out),
            StmtKind::Return { value } => {
                if let Some(e) = value {
                    e.uses(&mut out);
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Callsite {
    pub callee: String,
    pub stmt_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoFunction {
    pub name: String,
    pub params: Vec<Param>,
    /// Flat statement list in source order; indices dense `0..N-1`.
    pub statements: Vec<Statement>,
    /// Top-level statement indices of the function body, in order.
    pub body: Vec<usize>,
    pub callsites: Vec<Callsite>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoModule {
    pub source_id: String,
    pub functions: Vec<PseudoFunction>,
    pub adapter_id: String,
    pub raw_text_hash: u64,
}

impl PseudoModule {
    pub fn function(&self, name: &str) -> Option<&PseudoFunction> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub module: PseudoModule,
    pub report: StructuralReport,
    pub metadata: BTreeMap<String, String>,
}

/// Adapter contract: bytes in, [`PseudoModule`] out.
pub trait Adapter {
    fn id(&self) -> &str;
    fn load(&self, bytes: &[u8], source_id: &str) -> Result<PseudoModule, IngestError>;
}

/// Built-in reference adapter consuming textual `.pc` listings.
pub struct TextListingAdapter;

impl Adapter for TextListingAdapter {
    fn id(&self) -> &str {
        "text-listing"
    }

    fn load(&self, bytes: &[u8], source_id: &str) -> Result<PseudoModule, IngestError> {
        let text = String::from_utf8_lossy(bytes);
        let mut module = parse_pseudocode(&text, source_id)?;
        module.adapter_id = self.id().to_string();
        Ok(module)
    }
}

/// Registry of decompiler adapters, keyed by string id.
pub struct AdapterRegistry {
    adapters: Vec<Box<dyn Adapter>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self {
            adapters: vec![Box::new(TextListingAdapter)],
        }
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, adapter: Box<dyn Adapter>) {
        self.adapters.push(adapter);
    }

    pub fn get(&self, id: &str) -> Option<&dyn Adapter> {
        self.adapters.iter().find(|a| a.id() == id).map(|a| a.as_ref())
    }
}

/// Read a listing file and parse it through the named adapter.
pub fn load_listing(path: &Path, adapter_id: &str) -> Result<PseudoModule, IngestError> {
    load_listing_with(&AdapterRegistry::default(), path, adapter_id)
}

pub fn load_listing_with(
    registry: &AdapterRegistry,
    path: &Path,
    adapter_id: &str,
) -> Result<PseudoModule, IngestError> {
    let adapter = registry
        .get(adapter_id)
        .ok_or_else(|| IngestError::UnknownAdapter(adapter_id.to_string()))?;
    let bytes = std::fs::read(path)?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    adapter.load(&bytes, &source_id)
}

/// Canonical serialization of a module, used for digests and the
/// round-trip fixed-point property.
pub fn serialize_module(module: &PseudoModule) -> String {
    let mut out = String::new();
    for f in &module.functions {
        out.push_str("int ");
        out.push_str(&f.name);
        out.push('(');
        for (i, p) in f.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            match p.ty {
                TypeTag::Int => out.push_str(&format!("int {}", p.name)),
                TypeTag::Char => out.push_str(&format!("char {}", p.name)),
                TypeTag::CharArray(n) => out.push_str(&format!("char {}[{}]", p.name, n)),
                TypeTag::Void => out.push_str(&format!("void {}", p.name)),
            }
        }
        out.push_str(") {\n");
        write_stmts(&mut out, f, &f.body, 1);
        out.push_str("}\n");
    }
    out
}

fn write_stmts(out: &mut String, f: &PseudoFunction, indices: &[usize], depth: usize) {
    for &i in indices {
        let pad = "    ".repeat(depth);
        let s = &f.statements[i];
        match &s.kind {
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                out.push_str(&format!("{pad}if ({}) {{\n", expr_text(cond)));
                write_stmts(out, f, then_body, depth + 1);
                if else_body.is_empty() {
                    out.push_str(&format!("{pad}}}\n"));
                } else {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    write_stmts(out, f, else_body, depth + 1);
                    out.push_str(&format!("{pad}}}\n"));
                }
            }
            StmtKind::While { cond, body } => {
                out.push_str(&format!("{pad}while ({}) {{\n", expr_text(cond)));
                write_stmts(out, f, body, depth + 1);
                out.push_str(&format!("{pad}}}\n"));
            }
            _ => out.push_str(&format!("{pad}{}\n", stmt_text(&s.kind))),
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    match e {
        Expr::Ident(n) => n.clone(),
        Expr::Int(v) => v.to_string(),
        Expr::Str(s) => format!("{s:?}"),
        Expr::Char(c) => format!("'{c}'"),
        Expr::Index { base, index } => format!("{base}[{}]", expr_text(index)),
        Expr::Unary { op, expr } => format!("{op}{}", expr_text(expr)),
        Expr::Binary { op, lhs, rhs } => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Mod => "%",
                BinOp::Eq => "==",
                BinOp::Ne => "!=",
                BinOp::Lt => "<",
                BinOp::Gt => ">",
                BinOp::Le => "<=",
                BinOp::Ge => ">=",
            };
            format!("{} {} {}", expr_text(lhs), sym, expr_text(rhs))
        }
    }
}

fn lvalue_text(l: &LValue) -> String {
    match l {
        LValue::Var(n) => n.clone(),
        LValue::Elem { base, index } => format!("{base}[{}]", expr_text(index)),
    }
}

pub fn stmt_text(kind: &StmtKind) -> String {
    match kind {
        StmtKind::Decl { name, ty, init } => {
            let head = match ty {
                TypeTag::Int => format!("int {name}"),
                TypeTag::Char => format!("char {name}"),
                TypeTag::CharArray(n) => format!("char {name}[{n}]"),
                TypeTag::Void => format!("void {name}"),
            };
            match init {
                Some(e) => format!("{head} = {};", expr_text(e)),
                None => format!("{head};"),
            }
        }
        StmtKind::Assign { target, value } => {
            format!("{} = {};", lvalue_text(target), expr_text(value))
        }
        StmtKind::Call {
            result,
            decl_ty,
            callee,
            args,
        } => {
            let argt = args.iter().map(expr_text).collect::<Vec<_>>().join(", ");
            match (decl_ty, result) {
                (Some(ty), Some(t)) => {
                    let kw = match ty {
                        TypeTag::Int => "int",
                        TypeTag::Char => "char",
                        _ => "int",
                    };
                    format!("{kw} {} = {callee}({argt});", lvalue_text(t))
                }
                (None, Some(t)) => format!("{} = {callee}({argt});", lvalue_text(t)),
                (_, None) => format!("{callee}({argt});"),
            }
        }
        StmtKind::If { cond, .. } => format!("if ({})", expr_text(cond)),
        StmtKind::While { cond, .. } => format!("while ({})", expr_text(cond)),
        StmtKind::Return { value } => match value {
            Some(e) => format!("return {};", expr_text(e)),
            None => "return;".to_string(),
        },
    }
}

/// Digest of a module's structural content (not its source bytes).
pub fn module_digest(module: &PseudoModule) -> u64 {
    hash64(serialize_module(module).as_bytes())
}
