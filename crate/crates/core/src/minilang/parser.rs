//! Recursive-descent parser with precedence climbing for expressions.

use thiserror::Error;

use super::lexer::{tokenize, LexError, Token, TokenKind};
use super::syntax::{BinOp, Block, Expr, Method, Param, Stmt, Type, UnOp};
use crate::ast::AstTree;

/// Nesting limit for blocks and parenthesised expressions.
pub const MAX_NESTING: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: expected {}, found {}", expected.join(" or "), found.as_deref().unwrap_or("end of input"))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub fn parse_method(tokens: &[Token]) -> Result<AstTree, ParseError> {
    parse_method_syntax(tokens).map(|m| m.to_tree())
}

pub fn parse_method_syntax(tokens: &[Token]) -> Result<Method, ParseError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        nesting: 0,
    };
    let method = p.method()?;
    if p.pos < tokens.len() {
        return Err(p.error(&["end of input"]));
    }
    Ok(method)
}

/// Tokenizes and parses one method.
pub fn parse_source(source: &str) -> Result<AstTree, SyntaxError> {
    let tokens = tokenize(source)?;
    Ok(parse_method(&tokens)?)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    nesting: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.pos + k)
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let (offset, found) = match self.peek() {
            Some(t) => (t.offset, Some(t.text.clone())),
            None => (self.tokens.last().map_or(0, Token::end), None),
        };
        ParseError {
            offset,
            expected: expected.iter().map(|s| (*s).to_owned()).collect(),
            found,
        }
    }

    fn at(&self, kind: TokenKind, text: &str) -> bool {
        self.peek().is_some_and(|t| t.is(kind, text))
    }

    fn eat(&mut self, kind: TokenKind, text: &str) -> bool {
        if self.at(kind, text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, text: &str) -> Result<(), ParseError> {
        if self.eat(kind, text) {
            Ok(())
        } else {
            Err(self.error(&[&format!("'{text}'")]))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => {
                let name = t.text.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn peek_type(&self) -> Option<Type> {
        let t = self.peek()?;
        if t.kind != TokenKind::Keyword {
            return None;
        }
        match t.text.as_str() {
            "int" => Some(Type::Int),
            "bool" => Some(Type::Bool),
            "void" => Some(Type::Void),
            _ => None,
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let ty = self
            .peek_type()
            .ok_or_else(|| self.error(&["'int'", "'bool'", "'void'"]))?;
        self.pos += 1;
        Ok(ty)
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(self.error(&["shallower nesting"]));
        }
        Ok(())
    }

    fn method(&mut self) -> Result<Method, ParseError> {
        let ret = self.ty()?;
        let name = self.ident()?;
        self.expect(TokenKind::Punct, "(")?;
        let mut params = Vec::new();
        if !self.eat(TokenKind::Punct, ")") {
            loop {
                let ty = self.ty()?;
                let name = self.ident()?;
                params.push(Param { ty, name });
                if self.eat(TokenKind::Punct, ")") {
                    break;
                }
                if !self.eat(TokenKind::Punct, ",") {
                    return Err(self.error(&["','", "')'"]));
                }
            }
        }
        let body = self.block()?;
        Ok(Method {
            ret,
            name,
            params,
            body,
        })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.expect(TokenKind::Punct, "{")?;
        self.enter()?;
        let mut stmts = Vec::new();
        while !self.eat(TokenKind::Punct, "}") {
            if self.peek().is_none() {
                return Err(self.error(&["'}'"]));
            }
            stmts.push(self.stmt()?);
        }
        self.nesting -= 1;
        Ok(Block(stmts))
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        if let Some(ty) = self.peek_type() {
            self.pos += 1;
            let name = self.ident()?;
            let init = if self.eat(TokenKind::Op, "=") {
                Some(self.expr()?)
            } else {
                None
            };
            self.expect(TokenKind::Punct, ";")?;
            return Ok(Stmt::Decl { ty, name, init });
        }
        if self.eat(TokenKind::Keyword, "if") {
            self.expect(TokenKind::Punct, "(")?;
            let cond = self.expr()?;
            self.expect(TokenKind::Punct, ")")?;
            let then = self.block()?;
            let otherwise = if self.eat(TokenKind::Keyword, "else") {
                Some(self.block()?)
            } else {
                None
            };
            return Ok(Stmt::If {
                cond,
                then,
                otherwise,
            });
        }
        if self.eat(TokenKind::Keyword, "while") {
            self.expect(TokenKind::Punct, "(")?;
            let cond = self.expr()?;
            self.expect(TokenKind::Punct, ")")?;
            let body = self.block()?;
            return Ok(Stmt::While { cond, body });
        }
        if self.eat(TokenKind::Keyword, "return") {
            if self.eat(TokenKind::Punct, ";") {
                return Ok(Stmt::Return(None));
            }
            let e = self.expr()?;
            self.expect(TokenKind::Punct, ";")?;
            return Ok(Stmt::Return(Some(e)));
        }
        let is_assign = self.peek().is_some_and(|t| t.kind == TokenKind::Ident)
            && self.peek_at(1).is_some_and(|t| t.is(TokenKind::Op, "="));
        if is_assign {
            let name = self.ident()?;
            self.pos += 1;
            let value = self.expr()?;
            self.expect(TokenKind::Punct, ";")?;
            return Ok(Stmt::Assign { name, value });
        }
        let e = self.expr()?;
        self.expect(TokenKind::Punct, ";")?;
        Ok(Stmt::Expr(e))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.climb(1)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        self.peek()
            .filter(|t| t.kind == TokenKind::Op)
            .and_then(|t| BinOp::from_symbol(&t.text))
    }

    fn climb(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop().filter(|op| op.precedence() >= min_prec) {
            self.pos += 1;
            let rhs = self.climb(op.precedence() + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let op = if self.at(TokenKind::Op, "!") {
            Some(UnOp::Not)
        } else if self.at(TokenKind::Op, "-") {
            Some(UnOp::Neg)
        } else {
            None
        };
        match op {
            Some(op) => {
                self.pos += 1;
                self.enter()?;
                let operand = self.unary()?;
                self.nesting -= 1;
                Ok(Expr::un(op, operand))
            }
            None => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        const EXPECTED: [&str; 4] = ["integer", "boolean", "identifier", "'('"];
        let Some(tok) = self.peek() else {
            return Err(self.error(&EXPECTED));
        };
        match tok.kind {
            TokenKind::IntLit => {
                let e = Expr::Int(tok.text.clone());
                self.pos += 1;
                Ok(e)
            }
            TokenKind::BoolLit => {
                let e = Expr::Bool(tok.text == "true");
                self.pos += 1;
                Ok(e)
            }
            TokenKind::Ident => {
                let name = self.ident()?;
                if !self.eat(TokenKind::Punct, "(") {
                    return Ok(Expr::Ident(name));
                }
                self.enter()?;
                let mut args = Vec::new();
                if !self.eat(TokenKind::Punct, ")") {
                    loop {
                        args.push(self.expr()?);
                        if self.eat(TokenKind::Punct, ")") {
                            break;
                        }
                        if !self.eat(TokenKind::Punct, ",") {
                            return Err(self.error(&["','", "')'"]));
                        }
                    }
                }
                self.nesting -= 1;
                Ok(Expr::Call { name, args })
            }
            TokenKind::Punct if tok.text == "(" => {
                self.pos += 1;
                self.enter()?;
                let e = self.climb(1)?;
                self.expect(TokenKind::Punct, ")")?;
                self.nesting -= 1;
                Ok(e)
            }
            _ => Err(self.error(&EXPECTED)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(t: &AstTree) -> Vec<&str> {
        t.nodes().iter().map(|n| n.kind.as_str()).collect()
    }

    #[test]
    fn empty_void_method() {
        let t = parse_source("void f() { }").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(kinds(&t), ["MethodDeclaration", "TypeName", "Block"]);
        assert_eq!(t.node(0).value.as_deref(), Some("f"));
        assert_eq!(t.node(1).value.as_deref(), Some("void"));
        assert_eq!(t.children(0), &[1, 2]);
    }

    #[test]
    fn add_method_golden() {
        let t = parse_source("int add(int a,int b){return a+b;}").unwrap();
        assert_eq!(t.len(), 13);
        assert_eq!(
            kinds(&t),
            [
                "MethodDeclaration",
                "TypeName",
                "Parameter",
                "TypeName",
                "Identifier",
                "Parameter",
                "TypeName",
                "Identifier",
                "Block",
                "Return",
                "BinaryOp",
                "Identifier",
                "Identifier"
            ]
        );
        assert_eq!(t.node(10).value.as_deref(), Some("+"));
        assert_eq!(t.node(11).value.as_deref(), Some("a"));
        assert_eq!(t.node(12).value.as_deref(), Some("b"));
    }

    #[test]
    fn unclosed_block() {
        let err = parse_source("void f() {").unwrap_err();
        match err {
            SyntaxError::Parse(e) => {
                assert_eq!(e.expected, ["'}'"]);
                assert_eq!(e.found, None);
                assert_eq!(e.offset, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    fn expr_of(src: &str) -> Expr {
        let m = parse_method_syntax(&tokenize(&format!("int f() {{ return {src}; }}")).unwrap()).unwrap();
        match m.body.0.into_iter().next() {
            Some(Stmt::Return(Some(e))) => e,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence_and_left_associativity() {
        use BinOp::*;
        let a = || Expr::ident("a");
        let b = || Expr::ident("b");
        let c = || Expr::ident("c");
        assert_eq!(expr_of("a - b - c"), Expr::bin(Sub, Expr::bin(Sub, a(), b()), c()));
        assert_eq!(expr_of("a + b * c"), Expr::bin(Add, a(), Expr::bin(Mul, b(), c())));
        assert_eq!(expr_of("(a + b) * c"), Expr::bin(Mul, Expr::bin(Add, a(), b()), c()));
        assert_eq!(
            expr_of("a || b && c == a"),
            Expr::bin(Or, a(), Expr::bin(And, b(), Expr::bin(Eq, c(), a())))
        );
        assert_eq!(
            expr_of("a < b == b >= c"),
            Expr::bin(Eq, Expr::bin(Lt, a(), b()), Expr::bin(Ge, b(), c()))
        );
        assert_eq!(
            expr_of("-a * !b"),
            Expr::bin(Mul, Expr::un(UnOp::Neg, a()), Expr::un(UnOp::Not, b()))
        );
        assert_eq!(expr_of("g(a, b + 1)"), Expr::call("g", vec![a(), Expr::bin(Add, b(), Expr::int(1))]));
    }

    #[test]
    fn statements() {
        let src = "int f(int n) { int r = 1; bool ok; r = r * n; if (ok) { g(); } else { } while (n > 0) { n = n - 1; } return; }";
        let m = parse_method_syntax(&tokenize(src).unwrap()).unwrap();
        assert_eq!(m.body.0.len(), 6);
        let reprinted = m.to_string();
        assert_eq!(parse_source(&reprinted).unwrap(), m.to_tree());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_source("int f() { return 1 }"), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source("int f() { } extra"), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source("f() { }"), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source("int f(int) { }"), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source(""), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source("int f() { x = ; }"), Err(SyntaxError::Parse(_))));
        assert!(matches!(parse_source("int f() { return a # b; }"), Err(SyntaxError::Lex(_))));
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = format!("int f() {{ return {}1{}; }}", "(".repeat(100_000), ")".repeat(100_000));
        assert!(matches!(parse_source(&src), Err(SyntaxError::Parse(_))));
        let src = format!("int f() {{ return {}1; }}", "-".repeat(100_000));
        assert!(matches!(parse_source(&src), Err(SyntaxError::Parse(_))));
        let src = format!("void f() {}{}", "{ if (x) ".repeat(50_000), "}".repeat(50_000));
        assert!(parse_source(&src).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_input_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let src = String::from_utf8_lossy(&bytes);
            let _ = parse_source(&src);
        }

        #[test]
        fn token_soup_never_panics(words in proptest::collection::vec(
            prop::sample::select(vec!["int", "bool", "void", "f", "x", "(", ")", "{", "}", ";", ",", "=", "+", "-", "!", "<=", "&&", "if", "else", "while", "return", "1", "true"]),
            0..60,
        )) {
            let src = words.join(" ");
            if let Ok(tree) = parse_source(&src) {
                prop_assert_eq!(AstTree::build(tree.to_raw()).unwrap(), tree);
            }
        }
    }
}
