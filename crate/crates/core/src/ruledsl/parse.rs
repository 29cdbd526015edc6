use std::collections::HashSet;
use std::fmt;

use super::{Expr, RuleAst, Span, Threshold};

/// Syntax or reference error with its source position.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Rule,
    Ident(String),
    Number(f64),
    Eq,
    Semi,
    Pipe,
    Amp,
    Bang,
    LParen,
    RParen,
    Question,
    Gt,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Rule => f.write_str("`rule`"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Number(n) => write!(f, "number {n}"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Pipe => f.write_str("`|`"),
            Tok::Amp => f.write_str("`&`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Question => f.write_str("`?`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.')
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let single = match c {
            '=' => Some(Tok::Eq),
            ';' => Some(Tok::Semi),
            '|' => Some(Tok::Pipe),
            '&' => Some(Tok::Amp),
            '!' => Some(Tok::Bang),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '?' => Some(Tok::Question),
            '>' => Some(Tok::Gt),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, span));
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if is_ident_start(c) {
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            out.push((if word == "rule" { Tok::Rule } else { Tok::Ident(word) }, span));
        } else if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || matches!(chars[i], '.' | 'e' | 'E' | '-')) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            let n = word.parse::<f64>().map_err(|_| ParseError {
                line: span.line,
                col: span.col,
                message: format!("malformed number `{word}`"),
                expected: vec![],
            })?;
            out.push((Tok::Number(n), span));
        } else {
            return Err(ParseError {
                line,
                col,
                message: format!("unexpected character `{c}`"),
                expected: vec![],
            });
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    rules: &'a HashSet<String>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let s = self.span();
        ParseError {
            line: s.line,
            col: s.col,
            message: format!("unexpected {}", self.peek()),
            expected: expected.iter().map(|e| e.to_string()).collect(),
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    fn rule(&mut self) -> Result<RuleAst, ParseError> {
        let span = self.span();
        self.expect(Tok::Rule, "`rule`")?;
        let name = match self.bump() {
            Tok::Ident(s) => s,
            _ => {
                self.pos -= 1;
                return Err(self.error(&["rule name"]));
            }
        };
        self.expect(Tok::Eq, "`=`")?;
        let body = self.expr()?;
        self.expect(Tok::Semi, "`;`")?;
        Ok(RuleAst { name, body, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        while *self.peek() == Tok::Pipe {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::Or(terms) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.factor()?];
        while *self.peek() == Tok::Amp {
            self.bump();
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 { factors.pop().unwrap() } else { Expr::And(factors) })
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let negated = *self.peek() == Tok::Bang;
        if negated {
            self.bump();
        }
        let span = self.span();
        let inner = match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                e
            }
            Tok::Ident(name) => {
                self.bump();
                let threshold = self.threshold()?;
                if self.rules.contains(&name) {
                    if threshold.is_some() {
                        return Err(ParseError {
                            line: span.line,
                            col: span.col,
                            message: format!("rule reference {name} cannot take a threshold"),
                            expected: vec![],
                        });
                    }
                    Expr::RuleRef(name)
                } else if name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    return Err(ParseError {
                        line: span.line,
                        col: span.col,
                        message: format!("undefined rule {name}"),
                        expected: vec![],
                    });
                } else {
                    Expr::Pred { name, threshold }
                }
            }
            _ => {
                let mut expected = vec!["identifier", "`(`"];
                if !negated {
                    expected.insert(0, "`!`");
                }
                return Err(self.error(&expected));
            }
        };
        Ok(if negated { Expr::Not(Box::new(inner)) } else { inner })
    }

    fn threshold(&mut self) -> Result<Option<Threshold>, ParseError> {
        match self.peek() {
            Tok::Question => {
                self.bump();
                Ok(Some(Threshold::Learnable))
            }
            Tok::Gt => {
                self.bump();
                let span = self.span();
                match self.bump() {
                    Tok::Question => Ok(Some(Threshold::Learnable)),
                    Tok::Number(t) if t > 0.0 && t < 1.0 => Ok(Some(Threshold::Fixed(t))),
                    Tok::Number(t) => Err(ParseError {
                        line: span.line,
                        col: span.col,
                        message: format!("threshold {t} outside (0, 1)"),
                        expected: vec![],
                    }),
                    _ => {
                        self.pos -= 1;
                        Err(self.error(&["number", "`?`"]))
                    }
                }
            }
            _ => Ok(None),
        }
    }
}

/// Parses a program. Every rule reference must name a rule of the same
/// program; rule names must be unique.
pub fn parse(text: &str) -> Result<Vec<RuleAst>, ParseError> {
    let toks = lex(text)?;
    // rule names are collected up front so references may point forward
    let mut names = HashSet::new();
    for w in toks.windows(2) {
        if let (Tok::Rule, Tok::Ident(n)) = (&w[0].0, &w[1].0) {
            names.insert(n.clone());
        }
    }
    let mut p = Parser { toks, pos: 0, rules: &names };
    let mut rules: Vec<RuleAst> = Vec::new();
    loop {
        if *p.peek() == Tok::Eof {
            if rules.is_empty() {
                return Err(p.error(&["`rule`"]));
            }
            break;
        }
        let r = p.rule()?;
        if rules.iter().any(|o| o.name == r.name) {
            return Err(ParseError {
                line: r.span.line,
                col: r.span.col,
                message: format!("rule {} defined twice", r.name),
                expected: vec![],
            });
        }
        rules.push(r);
    }
    if let Some(cycle) = super::compile::find_cycle(&rules) {
        let r = rules.iter().find(|r| r.name == cycle[0]).expect("cycle starts at a rule");
        return Err(ParseError {
            line: r.span.line,
            col: r.span.col,
            message: format!("cyclic rule reference {}", cycle.join(" -> ")),
            expected: vec![],
        });
    }
    Ok(rules)
}
