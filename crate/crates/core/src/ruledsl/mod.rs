//! A small rule language for entity linking programs.
//!
//! ```text
//! program   := rule+
//! rule      := "rule" IDENT "=" expr ";"
//! expr      := term ("|" term)*
//! term      := factor ("&" factor)*
//! factor    := "!"? (IDENT threshold? | "(" expr ")")
//! threshold := "?" | ">" "?" | ">" NUMBER
//! ```
//!
//! `#` starts a comment running to the end of the line. An identifier that
//! names a rule of the same program is a rule reference; any other
//! identifier starting with an uppercase letter is an undefined rule, and
//! the rest are feature predicates.

mod compile;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use compile::{compile, compile_rules, inline_root, TemplateLibrary};
pub use parse::{parse, ParseError};

pub const BUILTIN_TEMPLATES: &str = include_str!("templates.elr");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Learnable,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Pred { name: String, threshold: Option<Threshold> },
    RuleRef(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleAst {
    pub name: String,
    pub body: Expr,
    pub span: Span,
}

/// Equality is structural: source locations are ignored.
impl PartialEq for RuleAst {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.body == other.body
    }
}

impl RuleAst {
    pub fn new(name: impl Into<String>, body: Expr) -> Self {
        RuleAst { name: name.into(), body, span: Span::default() }
    }
}

impl Expr {
    pub fn pred(name: &str) -> Self {
        Expr::Pred { name: name.into(), threshold: None }
    }

    pub fn learnable(name: &str) -> Self {
        Expr::Pred { name: name.into(), threshold: Some(Threshold::Learnable) }
    }

    /// Names of rules referenced anywhere in this expression.
    pub fn rule_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::RuleRef(r) = e {
                out.push(r.as_str());
            }
        });
        out
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| x.walk(f)),
            Expr::Not(x) => x.walk(f),
            _ => {}
        }
    }

    /// Predicate names, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Pred { name, .. } = e {
                out.push(name.as_str());
            }
        });
        out
    }

    pub fn operator_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |e| n += usize::from(matches!(e, Expr::And(_) | Expr::Or(_) | Expr::Not(_))));
        n
    }

    fn fmt_child(&self, parent_and: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // an `&` chain inside `|` needs no parentheses; any other nested
        // gate does, so the structure survives a reparse
        let wrap = match self {
            Expr::Or(_) => true,
            Expr::And(_) => parent_and,
            _ => false,
        };
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::And(xs) | Expr::Or(xs) => {
                let is_and = matches!(self, Expr::And(_));
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(if is_and { " & " } else { " | " })?;
                    }
                    x.fmt_child(is_and, f)?;
                }
                Ok(())
            }
            Expr::Not(x) => write!(f, "!({x})"),
            Expr::Pred { name, threshold } => match threshold {
                None => f.write_str(name),
                Some(Threshold::Learnable) => write!(f, "{name}?"),
                Some(Threshold::Fixed(t)) => write!(f, "{name} > {t}"),
            },
            Expr::RuleRef(r) => f.write_str(r),
        }
    }
}

impl fmt::Display for RuleAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} = {};", self.name, self.body)
    }
}

/// Canonical text of one rule.
pub fn format(ast: &RuleAst) -> String {
    ast.to_string()
}

/// Canonical text of a whole program, one rule per line.
pub fn format_program(rules: &[RuleAst]) -> String {
    rules.iter().map(|r| format!("{r}\n")).collect()
}
