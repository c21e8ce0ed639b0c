//! Recursive-descent parser for the `.pc` dialect.
//!
//! The grammar is published in `docs/grammar.ebnf` and enforced exactly here.
//! Calls appear only at statement level (`f(a);` or `x = f(a);`), never
//! nested inside expressions.

use super::lexer::{lex, Token, TokenKind};
use super::{
    BinOp, Callsite, Expr, IngestError, LValue, Param, PseudoFunction, PseudoModule, Statement,
    StmtKind, TypeTag,
};
use crate::digest::hash64;

const KEYWORDS: &[&str] = &["int", "char", "void", "if", "else", "while", "return"];

pub fn parse_pseudocode(text: &str, source_id: &str) -> Result<PseudoModule, IngestError> {
    if text.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut functions = Vec::new();
    while !p.at_eof() {
        let f = p.function()?;
        if functions.iter().any(|g: &PseudoFunction| g.name == f.name) {
            return Err(IngestError::DuplicateFunction(f.name));
        }
        functions.push(f);
    }
    Ok(PseudoModule {
        source_id: source_id.to_string(),
        functions,
        adapter_id: String::new(),
        raw_text_hash: hash64(text.as_bytes()),
    })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek().kind, TokenKind::Eof)
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> Result<T, IngestError> {
        let t = self.peek();
        Err(IngestError::SyntaxError {
            line: t.line,
            column: t.column,
            expected: expected.to_string(),
            found: t.describe(),
        })
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<Token, IngestError> {
        if matches!(&self.peek().kind, TokenKind::Punct(q) if *q == p) {
            Ok(self.advance())
        } else {
            self.error(&format!("`{p}`"))
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(&self.peek().kind, TokenKind::Punct(q) if *q == p) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn peek_ident(&self) -> Option<&str> {
        match &self.peek().kind {
            TokenKind::Ident(s) => Some(s),
            _ => None,
        }
    }

    fn expect_name(&mut self) -> Result<(String, u32, u32), IngestError> {
        match &self.peek().kind {
            TokenKind::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                let t = self.advance();
                Ok((s, t.line, t.column))
            }
            _ => self.error("identifier"),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_ident() == Some(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn type_tag(&mut self) -> Result<TypeTag, IngestError> {
        if self.eat_keyword("int") {
            Ok(TypeTag::Int)
        } else if self.eat_keyword("char") {
            Ok(TypeTag::Char)
        } else if self.eat_keyword("void") {
            Ok(TypeTag::Void)
        } else {
            self.error("type (`int`, `char` or `void`)")
        }
    }

    fn function(&mut self) -> Result<PseudoFunction, IngestError> {
        self.type_tag()?; // return type, kept out of the model
        let (name, _, _) = self.expect_name()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.eat_punct(")") {
            loop {
                let ty = self.type_tag()?;
                let (pname, _, _) = self.expect_name()?;
                let ty = if self.eat_punct("[") {
                    let n = match &self.peek().kind {
                        TokenKind::Int(v) => *v as usize,
                        _ => return self.error("array size"),
                    };
                    self.advance();
                    self.expect_punct("]")?;
                    match ty {
                        TypeTag::Char => TypeTag::CharArray(n),
                        _ => return self.error("`char` array parameter"),
                    }
                } else {
                    ty
                };
                params.push(Param { name: pname, ty });
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        self.expect_punct("{")?;
        let mut f = PseudoFunction {
            name,
            params,
            statements: Vec::new(),
            body: Vec::new(),
            callsites: Vec::new(),
        };
        let body = self.block_into(&mut f)?;
        f.body = body;
        Ok(f)
    }

    /// Parse statements until the closing `}`, appending to the flat list.
    fn block_into(&mut self, f: &mut PseudoFunction) -> Result<Vec<usize>, IngestError> {
        let mut indices = Vec::new();
        while !self.eat_punct("}") {
            if self.at_eof() {
                return self.error("`}`");
            }
            indices.push(self.statement(f)?);
        }
        Ok(indices)
    }

    fn statement(&mut self, f: &mut PseudoFunction) -> Result<usize, IngestError> {
        let t = self.peek().clone();
        let (line, column) = (t.line, t.column);
        let index = f.statements.len();
        // Reserve the slot so statement indices follow source (pre-)order.
        f.statements.push(Statement {
            index,
            line,
            column,
            kind: StmtKind::Return { value: None },
            text: String::new(),
        });

        let kind = match self.peek_ident() {
            Some("if") => {
                self.advance();
                self.expect_punct("(")?;
                let cond = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct("{")?;
                let then_body = self.block_into(f)?;
                let else_body = if self.eat_keyword("else") {
                    self.expect_punct("{")?;
                    self.block_into(f)?
                } else {
                    Vec::new()
                };
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                }
            }
            Some("while") => {
                self.advance();
                self.expect_punct("(")?;
                let cond = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct("{")?;
                let body = self.block_into(f)?;
                StmtKind::While { cond, body }
            }
            Some("return") => {
                self.advance();
                let value = if self.eat_punct(";") {
                    None
                } else {
                    let e = self.expr()?;
                    self.expect_punct(";")?;
                    Some(e)
                };
                StmtKind::Return { value }
            }
            Some("int") | Some("char") | Some("void") => {
                let ty = self.type_tag()?;
                let (name, _, _) = self.expect_name()?;
                let ty = if self.eat_punct("[") {
                    let n = match &self.peek().kind {
                        TokenKind::Int(v) => *v as usize,
                        _ => return self.error("array size"),
                    };
                    self.advance();
                    self.expect_punct("]")?;
                    match ty {
                        TypeTag::Char => TypeTag::CharArray(n),
                        _ => return self.error("`char` array declaration"),
                    }
                } else {
                    ty
                };
                if self.eat_punct("=") {
                    if self.at_call_head() {
                        let (callee, _, _) = self.expect_name()?;
                        self.expect_punct("(")?;
                        let args = self.call_args()?;
                        self.expect_punct(";")?;
                        f.callsites.push(Callsite {
                            callee: callee.clone(),
                            stmt_index: index,
                        });
                        StmtKind::Call {
                            result: Some(LValue::Var(name)),
                            decl_ty: Some(ty),
                            callee,
                            args,
                        }
                    } else {
                        let init = Some(self.expr()?);
                        self.expect_punct(";")?;
                        StmtKind::Decl { name, ty, init }
                    }
                } else {
                    self.expect_punct(";")?;
                    StmtKind::Decl {
                        name,
                        ty,
                        init: None,
                    }
                }
            }
            Some(_) => {
                // assignment, call or assigned call
                let (name, _, _) = self.expect_name()?;
                if self.eat_punct("(") {
                    let args = self.call_args()?;
                    self.expect_punct(";")?;
                    f.callsites.push(Callsite {
                        callee: name.clone(),
                        stmt_index: index,
                    });
                    StmtKind::Call {
                        result: None,
                        decl_ty: None,
                        callee: name,
                        args,
                    }
                } else {
                    let target = if self.eat_punct("[") {
                        let idx = self.expr()?;
                        self.expect_punct("]")?;
                        LValue::Elem {
                            base: name,
                            index: idx,
                        }
                    } else {
                        LValue::Var(name)
                    };
                    self.expect_punct("=")?;
                    // `x = f(a, b);` — lookahead for ident `(`
                    if self.at_call_head() {
                        let (callee, _, _) = self.expect_name()?;
                        self.expect_punct("(")?;
                        let args = self.call_args()?;
                        self.expect_punct(";")?;
                        f.callsites.push(Callsite {
                            callee: callee.clone(),
                            stmt_index: index,
                        });
                        StmtKind::Call {
                            result: Some(target),
                            decl_ty: None,
                            callee,
                            args,
                        }
                    } else {
                        let value = self.expr()?;
                        self.expect_punct(";")?;
                        StmtKind::Assign { target, value }
                    }
                }
            }
            None => return self.error("statement"),
        };
        f.statements[index].text = super::stmt_text(&kind);
        f.statements[index].kind = kind;
        Ok(index)
    }

    /// True when the next tokens are `ident (`, the start of a call.
    fn at_call_head(&self) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s)
            if !KEYWORDS.contains(&s.as_str())
            && matches!(&self.tokens[self.pos + 1].kind, TokenKind::Punct("(")))
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, IngestError> {
        let mut args = Vec::new();
        if self.eat_punct(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_punct(")") {
                return Ok(args);
            }
            self.expect_punct(",")?;
        }
    }

    fn expr(&mut self) -> Result<Expr, IngestError> {
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, IngestError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match &self.peek().kind {
                TokenKind::Punct("==") => BinOp::Eq,
                TokenKind::Punct("!=") => BinOp::Ne,
                TokenKind::Punct("<") => BinOp::Lt,
                TokenKind::Punct(">") => BinOp::Gt,
                TokenKind::Punct("<=") => BinOp::Le,
                TokenKind::Punct(">=") => BinOp::Ge,
                _ => break,
            };
            self.advance();
            let rhs = self.additive()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, IngestError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match &self.peek().kind {
                TokenKind::Punct("+") => BinOp::Add,
                TokenKind::Punct("-") => BinOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, IngestError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match &self.peek().kind {
                TokenKind::Punct("*") => BinOp::Mul,
                TokenKind::Punct("/") => BinOp::Div,
                TokenKind::Punct("%") => BinOp::Mod,
                _ => break,
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, IngestError> {
        for (p, c) in [("-", '-'), ("!", '!')] {
            if matches!(&self.peek().kind, TokenKind::Punct(q) if *q == p) {
                self.advance();
                let expr = self.unary()?;
                return Ok(Expr::Unary {
                    op: c,
                    expr: Box::new(expr),
                });
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, IngestError> {
        match &self.peek().kind {
            TokenKind::Int(v) => {
                let v = *v;
                self.advance();
                Ok(Expr::Int(v))
            }
            TokenKind::Str(s) => {
                let s = s.clone();
                self.advance();
                Ok(Expr::Str(s))
            }
            TokenKind::Char(c) => {
                let c = *c;
                self.advance();
                Ok(Expr::Char(c))
            }
            TokenKind::Punct("(") => {
                self.advance();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            TokenKind::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let name = s.clone();
                self.advance();
                if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect_punct("]")?;
                    Ok(Expr::Index {
                        base: name,
                        index: Box::new(idx),
                    })
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            _ => self.error("expression"),
        }
    }
}
