//! A small Java-like method language: tokenizer, parser, printer and a
//! synthetic corpus generator.
//!
//! Grammar:
//!
//! ```text
//! method   := type IDENT "(" [param {"," param}] ")" block
//! param    := type IDENT
//! type     := "int" | "bool" | "void"
//! block    := "{" {stmt} "}"
//! stmt     := decl | assign | if | while | return | exprstmt
//! decl     := type IDENT ["=" expr] ";"
//! assign   := IDENT "=" expr ";"
//! if       := "if" "(" expr ")" block ["else" block]
//! while    := "while" "(" expr ")" block
//! return   := "return" [expr] ";"
//! exprstmt := expr ";"
//! expr     := precedence climbing, loosest first:
//!             || ; && ; == != ; < <= > >= ; + - ; * / % ; unary ! -
//! primary  := INT_LIT | BOOL_LIT | IDENT ["(" [expr {"," expr}] ")"] | "(" expr ")" | unary
//! ```
//!
//! All binary levels associate to the left. `//` starts a line comment.

pub mod generator;
pub mod lexer;
pub mod parser;
pub mod syntax;

pub use generator::{generate, generate_example, GeneratedExample, SizeClass};
pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use parser::{parse_method, parse_method_syntax, parse_source, ParseError, SyntaxError};
pub use syntax::Method;
