//! Deterministic synthetic (method, summary) pairs.
//!
//! Each example instantiates one of a fixed set of method templates with
//! random parameter names and method names; the summary is produced from the
//! same template, so it is recoverable from the code.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::syntax::{BinOp, Block, Expr, Method, Param, Stmt, Type, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
}

/// Medium examples are padded with bookkeeping statements to at least this many nodes.
pub const MEDIUM_MIN_NODES: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedExample {
    pub method: Method,
    pub source: String,
    pub summary: Vec<String>,
    /// Index into [`TEMPLATE_COUNT`] templates.
    pub template: usize,
}

pub fn generate_example(seed: u64, size: SizeClass) -> (String, Vec<String>) {
    let ex = generate(seed, size);
    (ex.source, ex.summary)
}

const PARAM_NAMES: [&str; 14] = [
    "a", "b", "c", "x", "y", "z", "n", "m", "k", "p", "q", "value", "limit", "count",
];
const BOOL_NAMES: [&str; 6] = ["p", "q", "flag", "ok", "done", "ready"];
const GENERIC_NAMES: [&str; 4] = ["compute", "run", "apply", "helper"];
const FILLER_CALLS: [&str; 3] = ["log", "trace", "check"];

pub const TEMPLATE_COUNT: usize = 30;

struct Names<'a> {
    rng: &'a mut ChaCha8Rng,
    used: Vec<&'static str>,
}

impl Names<'_> {
    fn int(&mut self) -> &'static str {
        self.pick(&PARAM_NAMES)
    }

    fn boolean(&mut self) -> &'static str {
        self.pick(&BOOL_NAMES)
    }

    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        loop {
            let name = pool[self.rng.gen_range(0..pool.len())];
            if !self.used.contains(&name) {
                self.used.push(name);
                return name;
            }
        }
    }
}

fn id(name: &str) -> Expr {
    Expr::ident(name)
}

fn int(v: i64) -> Expr {
    Expr::int(v)
}

fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
    Expr::bin(op, l, r)
}

fn ret(e: Expr) -> Stmt {
    Stmt::Return(Some(e))
}

fn assign(name: &str, value: Expr) -> Stmt {
    Stmt::Assign {
        name: name.into(),
        value,
    }
}

fn decl(name: &str, init: Expr) -> Stmt {
    Stmt::Decl {
        ty: Type::Int,
        name: name.into(),
        init: Some(init),
    }
}

fn if_(cond: Expr, then: Vec<Stmt>, otherwise: Option<Vec<Stmt>>) -> Stmt {
    Stmt::If {
        cond,
        then: Block(then),
        otherwise: otherwise.map(Block),
    }
}

fn while_(cond: Expr, body: Vec<Stmt>) -> Stmt {
    Stmt::While {
        cond,
        body: Block(body),
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

struct Core {
    ret: Type,
    names: &'static [&'static str],
    params: Vec<Param>,
    body: Vec<Stmt>,
    summary: String,
}

fn ints(names: &[&str]) -> Vec<Param> {
    names
        .iter()
        .map(|n| Param {
            ty: Type::Int,
            name: (*n).into(),
        })
        .collect()
}

fn bools(names: &[&str]) -> Vec<Param> {
    names
        .iter()
        .map(|n| Param {
            ty: Type::Bool,
            name: (*n).into(),
        })
        .collect()
}

fn binary_template(
    op: BinOp,
    names: &'static [&'static str],
    phrase: &str,
    nm: &mut Names<'_>,
) -> Core {
    let (a, b) = (nm.int(), nm.int());
    Core {
        ret: Type::Int,
        names,
        params: ints(&[a, b]),
        body: vec![ret(bin(op, id(a), id(b)))],
        summary: phrase.replace("{a}", a).replace("{b}", b),
    }
}

fn predicate_template(
    cond: impl FnOnce(&str) -> Expr,
    names: &'static [&'static str],
    phrase: &str,
    nm: &mut Names<'_>,
) -> Core {
    let x = nm.int();
    Core {
        ret: Type::Bool,
        names,
        params: ints(&[x]),
        body: vec![ret(cond(x))],
        summary: phrase.replace("{x}", x),
    }
}

fn core(template: usize, nm: &mut Names<'_>) -> Core {
    use BinOp::*;
    match template {
        0 => binary_template(Add, &["add", "sum", "plus"], "returns the sum of {a} and {b}", nm),
        1 => binary_template(Sub, &["subtract", "minus", "diff"], "returns the difference of {a} and {b}", nm),
        2 => binary_template(Mul, &["multiply", "times", "product"], "returns the product of {a} and {b}", nm),
        3 => binary_template(Div, &["divide", "quotient", "div"], "returns the quotient of {a} divided by {b}", nm),
        4 => binary_template(Rem, &["remainder", "mod", "rem"], "returns the remainder of {a} divided by {b}", nm),
        5 => {
            let (a, b) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["max", "larger", "maximum"],
                params: ints(&[a, b]),
                body: vec![if_(bin(Gt, id(a), id(b)), vec![ret(id(a))], Some(vec![ret(id(b))]))],
                summary: format!("returns the larger of {a} and {b}"),
            }
        }
        6 => {
            let (a, b) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["min", "smaller", "minimum"],
                params: ints(&[a, b]),
                body: vec![if_(bin(Lt, id(a), id(b)), vec![ret(id(a))], None), ret(id(b))],
                summary: format!("returns the smaller of {a} and {b}"),
            }
        }
        7 => {
            let x = nm.int();
            Core {
                ret: Type::Int,
                names: &["abs", "magnitude", "absolute"],
                params: ints(&[x]),
                body: vec![
                    if_(bin(Lt, id(x), int(0)), vec![ret(Expr::un(UnOp::Neg, id(x)))], None),
                    ret(id(x)),
                ],
                summary: format!("returns the absolute value of {x}"),
            }
        }
        8 => predicate_template(
            |x| bin(Eq, bin(Rem, id(x), int(2)), int(0)),
            &["isEven", "even", "checkEven"],
            "checks whether {x} is even",
            nm,
        ),
        9 => predicate_template(
            |x| bin(Ne, bin(Rem, id(x), int(2)), int(0)),
            &["isOdd", "odd", "checkOdd"],
            "checks whether {x} is odd",
            nm,
        ),
        10 => predicate_template(
            |x| bin(Gt, id(x), int(0)),
            &["isPositive", "positive"],
            "checks whether {x} is positive",
            nm,
        ),
        11 => predicate_template(
            |x| bin(Lt, id(x), int(0)),
            &["isNegative", "negative"],
            "checks whether {x} is negative",
            nm,
        ),
        12 => {
            let (a, b) = (nm.int(), nm.int());
            Core {
                ret: Type::Bool,
                names: &["equals", "same", "isEqual"],
                params: ints(&[a, b]),
                body: vec![ret(bin(Eq, id(a), id(b)))],
                summary: format!("checks whether {a} equals {b}"),
            }
        }
        13 => {
            let p = nm.boolean();
            Core {
                ret: Type::Bool,
                names: &["not", "negate", "invert"],
                params: bools(&[p]),
                body: vec![ret(Expr::un(UnOp::Not, id(p)))],
                summary: format!("returns the negation of {p}"),
            }
        }
        14 => {
            let (p, q) = (nm.boolean(), nm.boolean());
            Core {
                ret: Type::Bool,
                names: &["both", "and", "all"],
                params: bools(&[p, q]),
                body: vec![ret(bin(And, id(p), id(q)))],
                summary: format!("checks whether both {p} and {q} are true"),
            }
        }
        15 => {
            let (p, q) = (nm.boolean(), nm.boolean());
            Core {
                ret: Type::Bool,
                names: &["either", "or", "any"],
                params: bools(&[p, q]),
                body: vec![ret(bin(Or, id(p), id(q)))],
                summary: format!("checks whether {p} or {q} is true"),
            }
        }
        16 => {
            let n = nm.int();
            Core {
                ret: Type::Int,
                names: &["sumBelow", "total", "accumulate"],
                params: ints(&[n]),
                body: vec![
                    decl("result", int(0)),
                    decl("idx", int(0)),
                    while_(
                        bin(Lt, id("idx"), id(n)),
                        vec![
                            assign("result", bin(Add, id("result"), id("idx"))),
                            assign("idx", bin(Add, id("idx"), int(1))),
                        ],
                    ),
                    ret(id("result")),
                ],
                summary: format!("computes the sum of all integers below {n}"),
            }
        }
        17 => {
            let n = nm.int();
            Core {
                ret: Type::Int,
                names: &["factorial", "fact"],
                params: ints(&[n]),
                body: vec![
                    decl("result", int(1)),
                    decl("idx", int(1)),
                    while_(
                        bin(Le, id("idx"), id(n)),
                        vec![
                            assign("result", bin(Mul, id("result"), id("idx"))),
                            assign("idx", bin(Add, id("idx"), int(1))),
                        ],
                    ),
                    ret(id("result")),
                ],
                summary: format!("computes the factorial of {n}"),
            }
        }
        18 => {
            let (x, n) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["power", "pow", "raise"],
                params: ints(&[x, n]),
                body: vec![
                    decl("result", int(1)),
                    decl("idx", int(0)),
                    while_(
                        bin(Lt, id("idx"), id(n)),
                        vec![
                            assign("result", bin(Mul, id("result"), id(x))),
                            assign("idx", bin(Add, id("idx"), int(1))),
                        ],
                    ),
                    ret(id("result")),
                ],
                summary: format!("computes {x} raised to the power {n}"),
            }
        }
        19 => {
            let x = nm.int();
            Core {
                ret: Type::Int,
                names: &["square", "sq"],
                params: ints(&[x]),
                body: vec![ret(bin(Mul, id(x), id(x)))],
                summary: format!("returns the square of {x}"),
            }
        }
        20 => {
            let x = nm.int();
            Core {
                ret: Type::Int,
                names: &["double", "twice"],
                params: ints(&[x]),
                body: vec![ret(bin(Mul, id(x), int(2)))],
                summary: format!("returns twice the value of {x}"),
            }
        }
        21 => {
            let x = nm.int();
            Core {
                ret: Type::Int,
                names: &["increment", "inc", "next"],
                params: ints(&[x]),
                body: vec![ret(bin(Add, id(x), int(1)))],
                summary: format!("returns {x} incremented by one"),
            }
        }
        22 => {
            let (a, b) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["average", "mean", "mid"],
                params: ints(&[a, b]),
                body: vec![ret(bin(Div, bin(Add, id(a), id(b)), int(2)))],
                summary: format!("returns the average of {a} and {b}"),
            }
        }
        23 => {
            let (x, lo, hi) = (nm.int(), nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["clamp", "bound", "limitTo"],
                params: ints(&[x, lo, hi]),
                body: vec![
                    if_(bin(Lt, id(x), id(lo)), vec![ret(id(lo))], None),
                    if_(bin(Gt, id(x), id(hi)), vec![ret(id(hi))], None),
                    ret(id(x)),
                ],
                summary: format!("clamps {x} between {lo} and {hi}"),
            }
        }
        24 => {
            let (x, lo, hi) = (nm.int(), nm.int(), nm.int());
            Core {
                ret: Type::Bool,
                names: &["between", "inRange", "within"],
                params: ints(&[x, lo, hi]),
                body: vec![ret(bin(And, bin(Le, id(lo), id(x)), bin(Le, id(x), id(hi))))],
                summary: format!("checks whether {x} lies between {lo} and {hi}"),
            }
        }
        25 => {
            let x = nm.int();
            Core {
                ret: Type::Int,
                names: &["sign", "signum"],
                params: ints(&[x]),
                body: vec![
                    if_(bin(Gt, id(x), int(0)), vec![ret(int(1))], None),
                    if_(bin(Lt, id(x), int(0)), vec![ret(Expr::un(UnOp::Neg, int(1)))], None),
                    ret(int(0)),
                ],
                summary: format!("returns the sign of {x}"),
            }
        }
        26 => {
            let x = nm.int();
            Core {
                ret: Type::Void,
                names: &["show", "display", "report"],
                params: ints(&[x]),
                body: vec![Stmt::Expr(Expr::call("print", vec![id(x)]))],
                summary: format!("prints the value of {x}"),
            }
        }
        27 => {
            let n = nm.int();
            Core {
                ret: Type::Void,
                names: &["countdown", "countDown"],
                params: ints(&[n]),
                body: vec![while_(
                    bin(Gt, id(n), int(0)),
                    vec![
                        Stmt::Expr(Expr::call("print", vec![id(n)])),
                        assign(n, bin(Sub, id(n), int(1))),
                    ],
                )],
                summary: format!("prints the numbers from {n} down to one"),
            }
        }
        28 => {
            let (a, b) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["gcd", "divisor"],
                params: ints(&[a, b]),
                body: vec![
                    while_(
                        bin(Ne, id(b), int(0)),
                        vec![
                            decl("tmp", id(b)),
                            assign(b, bin(Rem, id(a), id(b))),
                            assign(a, id("tmp")),
                        ],
                    ),
                    ret(id(a)),
                ],
                summary: format!("computes the greatest common divisor of {a} and {b}"),
            }
        }
        29 => {
            let (k, n) = (nm.int(), nm.int());
            Core {
                ret: Type::Int,
                names: &["countMultiples", "multiples"],
                params: ints(&[k, n]),
                body: vec![
                    decl("result", int(0)),
                    decl("idx", int(0)),
                    while_(
                        bin(Lt, id("idx"), id(n)),
                        vec![
                            if_(
                                bin(Eq, bin(Rem, id("idx"), id(k)), int(0)),
                                vec![assign("result", bin(Add, id("result"), int(1)))],
                                None,
                            ),
                            assign("idx", bin(Add, id("idx"), int(1))),
                        ],
                    ),
                    ret(id("result")),
                ],
                summary: format!("counts the multiples of {k} below {n}"),
            }
        }
        _ => unreachable!("template index out of range"),
    }
}

/// Statements that do not influence the template's result: they only touch
/// fresh locals `t0`, `t1`, ... and logging calls.
fn filler(rng: &mut ChaCha8Rng, params: &[Param], fresh: &mut usize, depth: usize) -> Vec<Stmt> {
    let ints: Vec<&str> = params
        .iter()
        .filter(|p| p.ty == Type::Int)
        .map(|p| p.name.as_str())
        .collect();
    let operand = |rng: &mut ChaCha8Rng| -> Expr {
        if !ints.is_empty() && rng.gen_bool(0.6) {
            id(ints[rng.gen_range(0..ints.len())])
        } else {
            int(rng.gen_range(1..10))
        }
    };
    let arith = |rng: &mut ChaCha8Rng| -> Expr {
        let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul];
        let op = ops[rng.gen_range(0..ops.len())];
        bin(op, operand(rng), operand(rng))
    };
    let call = FILLER_CALLS[rng.gen_range(0..FILLER_CALLS.len())];
    let choice = if depth >= 2 { rng.gen_range(0..2) } else { rng.gen_range(0..4) };
    match choice {
        0 => {
            let name = format!("t{fresh}");
            *fresh += 1;
            vec![decl(&name, arith(rng))]
        }
        1 => vec![Stmt::Expr(Expr::call(call, vec![arith(rng)]))],
        2 => {
            let inner = (0..rng.gen_range(1..4))
                .flat_map(|_| filler(rng, params, fresh, depth + 1))
                .collect();
            vec![if_(bin(BinOp::Gt, operand(rng), operand(rng)), inner, None)]
        }
        _ => {
            let name = format!("t{fresh}");
            *fresh += 1;
            let start = int(rng.gen_range(2..6));
            let mut body: Vec<Stmt> = (0..rng.gen_range(0..3))
                .flat_map(|_| filler(rng, params, fresh, depth + 1))
                .collect();
            body.push(Stmt::Expr(Expr::call(call, vec![id(&name)])));
            body.push(assign(&name, bin(BinOp::Sub, id(&name), int(1))));
            vec![decl(&name, start), while_(bin(BinOp::Gt, id(&name), int(0)), body)]
        }
    }
}

pub fn generate(seed: u64, size: SizeClass) -> GeneratedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = rng.gen_range(0..TEMPLATE_COUNT);
    let mut names = Names {
        rng: &mut rng,
        used: Vec::new(),
    };
    let core = core(template, &mut names);
    let name = if rng.gen_bool(0.75) {
        core.names.choose(&mut rng).copied().unwrap_or("f")
    } else {
        GENERIC_NAMES[rng.gen_range(0..GENERIC_NAMES.len())]
    };
    let mut body = core.body;
    if size == SizeClass::Medium {
        let mut prefix = Vec::new();
        let mut fresh = 0;
        let target = MEDIUM_MIN_NODES + rng.gen_range(0..120);
        loop {
            let m = Method {
                ret: core.ret,
                name: name.into(),
                params: core.params.clone(),
                body: Block(prefix.iter().cloned().chain(body.iter().cloned()).collect()),
            };
            if m.node_count() >= target {
                body = m.body.0;
                break;
            }
            prefix.extend(filler(&mut rng, &core.params, &mut fresh, 0));
        }
    }
    let method = Method {
        ret: core.ret,
        name: name.into(),
        params: core.params,
        body: Block(body),
    };
    GeneratedExample {
        source: method.to_string(),
        method,
        summary: words(&core.summary),
        template,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parser::parse_source;
    use std::collections::HashSet;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_example(3, SizeClass::Small), generate_example(3, SizeClass::Small));
        assert_eq!(generate_example(3, SizeClass::Medium), generate_example(3, SizeClass::Medium));
        assert_ne!(generate_example(3, SizeClass::Small), generate_example(4, SizeClass::Small));
    }

    #[test]
    fn every_template_parses_and_round_trips() {
        for seed in 0..10_000u64 {
            let size = if seed % 10 == 0 { SizeClass::Medium } else { SizeClass::Small };
            let ex = generate(seed, size);
            let tree = parse_source(&ex.source).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", ex.source));
            assert_eq!(tree, ex.method.to_tree(), "seed {seed}");
            assert_eq!(tree.len(), ex.method.node_count());
            assert!((4..=16).contains(&ex.summary.len()), "{:?}", ex.summary);
            if size == SizeClass::Medium {
                assert!(tree.len() >= MEDIUM_MIN_NODES);
            }
        }
    }

    #[test]
    fn corpus_covers_many_templates() {
        let mut shapes = HashSet::new();
        for seed in 0..1000u64 {
            let ex = generate(seed, SizeClass::Small);
            let params: HashSet<&str> = ex.method.params.iter().map(|p| p.name.as_str()).collect();
            // Mask parameter names so the remaining words identify the template.
            let shape: Vec<&str> = ex
                .summary
                .iter()
                .map(|w| if params.contains(w.as_str()) { "<id>" } else { w.as_str() })
                .collect();
            shapes.insert(shape.join(" "));
        }
        assert!(shapes.len() >= 20, "only {} templates", shapes.len());
    }

    #[test]
    fn summary_is_lowercase_words() {
        for seed in 0..200 {
            let (_, summary) = generate_example(seed, SizeClass::Small);
            for w in summary {
                assert_eq!(w, w.to_lowercase());
                assert!(!w.contains(char::is_whitespace));
            }
        }
    }
}
