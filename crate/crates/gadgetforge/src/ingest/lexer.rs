use super::IngestError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Str(String),
    Char(char),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: u32,
    pub column: u32,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Int(v) => format!("integer `{v}`"),
            TokenKind::Str(_) => "string literal".to_string(),
            TokenKind::Char(c) => format!("char literal `'{c}'`"),
            TokenKind::Punct(p) => format!("`{p}`"),
            TokenKind::Eof => "end of input".to_string(),
        }
    }
}

const PUNCTS: &[&str] = &[
    "==", "!=", "<=", ">=", "(", ")", "{", "}", "[", "]", ";", ",", "=", "+", "-", "*", "/",
    "%", "<", ">", "!",
];

pub fn lex(text: &str) -> Result<Vec<Token>, IngestError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        // line comments
        if c == '/' && i + 1 < chars.len() && chars[i + 1] == '/' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            tokens.push(Token {
                kind: TokenKind::Ident(word),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            let value = word.parse::<i64>().map_err(|_| IngestError::SyntaxError {
                line: tl,
                column: tc,
                expected: "integer literal".to_string(),
                found: word.clone(),
            })?;
            tokens.push(Token {
                kind: TokenKind::Int(value),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\\' && i + 1 < chars.len() {
                    bump!();
                    s.push(match chars[i] {
                        'n' => '\n',
                        't' => '\t',
                        '0' => '\0',
                        other => other,
                    });
                    bump!();
                } else {
                    s.push(chars[i]);
                    bump!();
                }
            }
            if i >= chars.len() {
                return Err(IngestError::SyntaxError {
                    line: tl,
                    column: tc,
                    expected: "closing `\"`".to_string(),
                    found: "end of input".to_string(),
                });
            }
            bump!(); // closing quote
            tokens.push(Token {
                kind: TokenKind::Str(s),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c == '\'' {
            bump!();
            if i >= chars.len() {
                return Err(IngestError::SyntaxError {
                    line: tl,
                    column: tc,
                    expected: "char literal".to_string(),
                    found: "end of input".to_string(),
                });
            }
            let mut ch = chars[i];
            if ch == '\\' && i + 1 < chars.len() {
                bump!();
                ch = match chars[i] {
                    'n' => '\n',
                    't' => '\t',
                    '0' => '\0',
                    other => other,
                };
            }
            bump!();
            if i >= chars.len() || chars[i] != '\'' {
                return Err(IngestError::SyntaxError {
                    line: tl,
                    column: tc,
                    expected: "closing `'`".to_string(),
                    found: if i < chars.len() {
                        chars[i].to_string()
                    } else {
                        "end of input".to_string()
                    },
                });
            }
            bump!();
            tokens.push(Token {
                kind: TokenKind::Char(ch),
                line: tl,
                column: tc,
            });
            continue;
        }
        let mut matched = false;
        for p in PUNCTS {
            let pc: Vec<char> = p.chars().collect();
            if chars[i..].starts_with(&pc) {
                for _ in 0..pc.len() {
                    bump!();
                }
                tokens.push(Token {
                    kind: TokenKind::Punct(p),
                    line: tl,
                    column: tc,
                });
                matched = true;
                break;
            }
        }
        if !matched {
            return Err(IngestError::SyntaxError {
                line: tl,
                column: tc,
                expected: "token".to_string(),
                found: c.to_string(),
            });
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column: col,
    });
    Ok(tokens)
}
