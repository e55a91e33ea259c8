//! Typed syntax for the method language, with lowering to [`AstTree`] and a
//! printer whose output parses back to the same tree.

use std::fmt::{self, Write};

use crate::ast::{AstTree, RawNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Int,
    Bool,
    Void,
}

impl Type {
    pub fn as_str(self) -> &'static str {
        match self {
            Type::Int => "int",
            Type::Bool => "bool",
            Type::Void => "void",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub ty: Type,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Method {
    pub ret: Type,
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Block(pub Vec<Stmt>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Decl {
        ty: Type,
        name: String,
        init: Option<Expr>,
    },
    Assign {
        name: String,
        value: Expr,
    },
    If {
        cond: Expr,
        then: Block,
        otherwise: Option<Block>,
    },
    While {
        cond: Expr,
        body: Block,
    },
    Return(Option<Expr>),
    Expr(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Or,
        BinOp::And,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.as_str() == s)
    }

    /// Binding strength, 1 (loosest) to 6; unary operators bind at 7.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

impl UnOp {
    pub fn as_str(self) -> &'static str {
        match self {
            UnOp::Not => "!",
            UnOp::Neg => "-",
        }
    }
}

pub const UNARY_PRECEDENCE: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(String),
    Bool(bool),
    Ident(String),
    Call { name: String, args: Vec<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnOp, operand: Box<Expr> },
}

impl Expr {
    pub fn ident(name: &str) -> Self {
        Expr::Ident(name.to_owned())
    }

    pub fn int(v: i64) -> Self {
        Expr::Int(v.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn un(op: UnOp, operand: Expr) -> Self {
        Expr::Unary {
            op,
            operand: Box::new(operand),
        }
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Self {
        Expr::Call {
            name: name.to_owned(),
            args,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Unary { .. } => UNARY_PRECEDENCE,
            _ => u8::MAX,
        }
    }
}

/// Appends raw nodes in pre-order, so ids equal final pre-order ids.
struct Lowering {
    raw: Vec<RawNode>,
}

impl Lowering {
    fn open(&mut self, kind: &str, value: Option<&str>) -> usize {
        self.raw.push(RawNode::new(kind, value, vec![]));
        self.raw.len() - 1
    }

    fn leaf(&mut self, parent: usize, kind: &str, value: Option<&str>) {
        let id = self.open(kind, value);
        self.raw[parent].children.push(id);
    }

    fn child(&mut self, parent: usize, kind: &str, value: Option<&str>) -> usize {
        let id = self.open(kind, value);
        self.raw[parent].children.push(id);
        id
    }

    fn block(&mut self, parent: usize, block: &Block) {
        let id = self.child(parent, "Block", None);
        for stmt in &block.0 {
            self.stmt(id, stmt);
        }
    }

    fn stmt(&mut self, parent: usize, stmt: &Stmt) {
        match stmt {
            Stmt::Decl { ty, name, init } => {
                let id = self.child(parent, "VarDecl", None);
                self.leaf(id, "TypeName", Some(ty.as_str()));
                self.leaf(id, "Identifier", Some(name));
                if let Some(e) = init {
                    self.expr(id, e);
                }
            }
            Stmt::Assign { name, value } => {
                let id = self.child(parent, "Assign", None);
                self.leaf(id, "Identifier", Some(name));
                self.expr(id, value);
            }
            Stmt::If {
                cond,
                then,
                otherwise,
            } => {
                let id = self.child(parent, "If", None);
                self.expr(id, cond);
                self.block(id, then);
                if let Some(b) = otherwise {
                    self.block(id, b);
                }
            }
            Stmt::While { cond, body } => {
                let id = self.child(parent, "While", None);
                self.expr(id, cond);
                self.block(id, body);
            }
            Stmt::Return(e) => {
                let id = self.child(parent, "Return", None);
                if let Some(e) = e {
                    self.expr(id, e);
                }
            }
            Stmt::Expr(e) => {
                let id = self.child(parent, "ExprStmt", None);
                self.expr(id, e);
            }
        }
    }

    fn expr(&mut self, parent: usize, expr: &Expr) {
        match expr {
            Expr::Int(text) => self.leaf(parent, "IntLiteral", Some(text)),
            Expr::Bool(b) => self.leaf(parent, "BoolLiteral", Some(if *b { "true" } else { "false" })),
            Expr::Ident(name) => self.leaf(parent, "Identifier", Some(name)),
            Expr::Call { name, args } => {
                let id = self.child(parent, "Call", Some(name));
                for a in args {
                    self.expr(id, a);
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let id = self.child(parent, "BinaryOp", Some(op.as_str()));
                self.expr(id, lhs);
                self.expr(id, rhs);
            }
            Expr::Unary { op, operand } => {
                let id = self.child(parent, "UnaryOp", Some(op.as_str()));
                self.expr(id, operand);
            }
        }
    }
}

impl Method {
    pub fn to_tree(&self) -> AstTree {
        let mut l = Lowering { raw: Vec::new() };
        let root = l.open("MethodDeclaration", Some(&self.name));
        l.leaf(root, "TypeName", Some(self.ret.as_str()));
        for p in &self.params {
            let id = l.child(root, "Parameter", None);
            l.leaf(id, "TypeName", Some(p.ty.as_str()));
            l.leaf(id, "Identifier", Some(&p.name));
        }
        l.block(root, &self.body);
        AstTree::build(l.raw).expect("lowering always yields a valid tree")
    }

    /// Node count of [`Method::to_tree`] without building it.
    pub fn node_count(&self) -> usize {
        fn expr(e: &Expr) -> usize {
            1 + match e {
                Expr::Call { args, .. } => args.iter().map(expr).sum(),
                Expr::Binary { lhs, rhs, .. } => expr(lhs) + expr(rhs),
                Expr::Unary { operand, .. } => expr(operand),
                _ => 0,
            }
        }
        fn block(b: &Block) -> usize {
            1 + b.0.iter().map(stmt).sum::<usize>()
        }
        fn stmt(s: &Stmt) -> usize {
            1 + match s {
                Stmt::Decl { init, .. } => 2 + init.as_ref().map_or(0, expr),
                Stmt::Assign { value, .. } => 1 + expr(value),
                Stmt::If {
                    cond,
                    then,
                    otherwise,
                } => expr(cond) + block(then) + otherwise.as_ref().map_or(0, block),
                Stmt::While { cond, body } => expr(cond) + block(body),
                Stmt::Return(e) => e.as_ref().map_or(0, expr),
                Stmt::Expr(e) => expr(e),
            }
        }
        2 + 3 * self.params.len() + block(&self.body)
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(t) => out.push_str(t),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Ident(n) => out.push_str(n),
        Expr::Call { name, args } => {
            out.push_str(name);
            out.push('(');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            // Left associative: the right operand needs parentheses at equal precedence.
            write_operand(out, lhs, lhs.precedence() < p);
            let _ = write!(out, " {} ", op.as_str());
            write_operand(out, rhs, rhs.precedence() <= p);
        }
        Expr::Unary { op, operand } => {
            out.push_str(op.as_str());
            write_operand(out, operand, operand.precedence() < UNARY_PRECEDENCE);
        }
    }
}

fn write_operand(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
        write_expr(out, e);
        out.push(')');
    } else {
        write_expr(out, e);
    }
}

fn write_block(out: &mut String, b: &Block, indent: usize) {
    out.push_str("{\n");
    for s in &b.0 {
        write_stmt(out, s, indent + 1);
    }
    out.push_str(&"    ".repeat(indent));
    out.push('}');
}

fn write_stmt(out: &mut String, s: &Stmt, indent: usize) {
    out.push_str(&"    ".repeat(indent));
    match s {
        Stmt::Decl { ty, name, init } => {
            let _ = write!(out, "{} {}", ty.as_str(), name);
            if let Some(e) = init {
                out.push_str(" = ");
                write_expr(out, e);
            }
            out.push(';');
        }
        Stmt::Assign { name, value } => {
            let _ = write!(out, "{name} = ");
            write_expr(out, value);
            out.push(';');
        }
        Stmt::If {
            cond,
            then,
            otherwise,
        } => {
            out.push_str("if (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, then, indent);
            if let Some(b) = otherwise {
                out.push_str(" else ");
                write_block(out, b, indent);
            }
        }
        Stmt::While { cond, body } => {
            out.push_str("while (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, body, indent);
        }
        Stmt::Return(e) => {
            out.push_str("return");
            if let Some(e) = e {
                out.push(' ');
                write_expr(out, e);
            }
            out.push(';');
        }
        Stmt::Expr(e) => {
            write_expr(out, e);
            out.push(';');
        }
    }
    out.push('\n');
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let _ = write!(out, "{} {}(", self.ret.as_str(), self.name);
        for (k, p) in self.params.iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{} {}", p.ty.as_str(), p.name);
        }
        out.push_str(") ");
        write_block(&mut out, &self.body, 0);
        out.push('\n');
        f.write_str(&out)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_expr(&mut out, self);
        f.write_str(&out)
    }
}
