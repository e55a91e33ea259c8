use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenKind {
    Keyword,
    Ident,
    IntLit,
    BoolLit,
    Punct,
    Op,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset of the first character in the source.
    pub offset: usize,
}

impl Token {
    pub fn end(&self) -> usize {
        self.offset + self.text.len()
    }

    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal character at byte {offset}")]
pub struct LexError {
    pub offset: usize,
}

pub const KEYWORDS: [&str; 7] = ["int", "bool", "void", "if", "else", "while", "return"];

const TWO_CHAR_OPS: [&str; 6] = ["<=", ">=", "==", "!=", "&&", "||"];

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        if matches!(c, b' ' | b'\t' | b'\n' | b'\r') {
            pos += 1;
            continue;
        }
        if source[pos..].starts_with("//") {
            pos = source[pos..].find('\n').map_or(bytes.len(), |nl| pos + nl);
            continue;
        }
        let start = pos;
        let kind = if c.is_ascii_digit() {
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            TokenKind::IntLit
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_') {
                pos += 1;
            }
            match &source[start..pos] {
                "true" | "false" => TokenKind::BoolLit,
                w if KEYWORDS.contains(&w) => TokenKind::Keyword,
                _ => TokenKind::Ident,
            }
        } else if matches!(c, b'(' | b')' | b'{' | b'}' | b',' | b';') {
            pos += 1;
            TokenKind::Punct
        } else if TWO_CHAR_OPS.iter().any(|op| source[pos..].starts_with(op)) {
            pos += 2;
            TokenKind::Op
        } else if matches!(c, b'+' | b'-' | b'*' | b'/' | b'%' | b'<' | b'>' | b'!' | b'=') {
            pos += 1;
            TokenKind::Op
        } else {
            return Err(LexError { offset: pos });
        };
        tokens.push(Token {
            kind,
            text: source[start..pos].to_owned(),
            offset: start,
        });
    }
    Ok(tokens)
}
