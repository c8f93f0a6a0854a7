//! scLTL formulas over a declared set of atomic propositions.
//!
//! Concrete syntax: `p`, `!p`, `a & b`, `a | b`, `X a`, `a U b`, parentheses.
//! Precedence from tightest: `!`/`X`, `&`, `|`, `U`; `U` is right-associative.
//! Negation is only allowed directly on an atom.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::Letter;

/// Formula AST. Atoms are indices into the AP universe.
///
/// `True`/`False` never come out of the parser; they appear in residual
/// formulas during DFA construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    False,
    True,
    Atom(usize),
    NegAtom(usize),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn and(children: Vec<Formula>) -> Formula {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        match flat.len() {
            0 => Formula::True,
            1 => flat.pop().unwrap(),
            _ => Formula::And(flat),
        }
    }

    pub fn or(children: Vec<Formula>) -> Formula {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        match flat.len() {
            0 => Formula::False,
            1 => flat.pop().unwrap(),
            _ => Formula::Or(flat),
        }
    }

    pub fn next(f: Formula) -> Formula {
        match f {
            Formula::True | Formula::False => f,
            f => Formula::Next(Box::new(f)),
        }
    }

    pub fn until(lhs: Formula, rhs: Formula) -> Formula {
        match (lhs, rhs) {
            (_, b @ (Formula::True | Formula::False)) => b,
            (Formula::False, b) => b,
            (a, b) => Formula::Until(Box::new(a), Box::new(b)),
        }
    }

    /// Canonical form: And/Or flattened, sorted and deduplicated at every level.
    pub fn canonical(&self) -> Formula {
        match self {
            Formula::And(cs) => Formula::and(cs.iter().map(Formula::canonical).collect()),
            Formula::Or(cs) => Formula::or(cs.iter().map(Formula::canonical).collect()),
            Formula::Next(f) => Formula::next(f.canonical()),
            Formula::Until(a, b) => Formula::until(a.canonical(), b.canonical()),
            other => other.clone(),
        }
    }

    /// Disjunctive normal form over elementary formulas (atoms, negated
    /// atoms, `X` and `U` nodes). Clauses are sorted, contradictory clauses
    /// dropped and subsumed clauses removed, so the set of reachable normal
    /// forms of a formula is finite.
    pub fn dnf(&self) -> Vec<Vec<Formula>> {
        match self {
            Formula::True => vec![vec![]],
            Formula::False => vec![],
            Formula::Or(cs) => reduce(cs.iter().flat_map(Formula::dnf).collect()),
            Formula::And(cs) => {
                let mut acc: Vec<Vec<Formula>> = vec![vec![]];
                for c in cs {
                    let rhs = c.dnf();
                    let mut next = Vec::with_capacity(acc.len() * rhs.len());
                    for a in &acc {
                        for b in &rhs {
                            next.push(a.iter().chain(b).cloned().collect());
                        }
                    }
                    acc = reduce(next);
                }
                acc
            }
            other => vec![vec![other.canonical()]],
        }
    }

    /// The formula rebuilt from its normal form.
    pub fn normalize(&self) -> Formula {
        Formula::or(self.dnf().into_iter().map(Formula::and).collect())
    }

    /// Residual obligation on the suffix after reading `letter`. The argument
    /// must be canonical; the result is canonical.
    pub fn progress(&self, letter: Letter) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Atom(j) => bool_formula(letter >> j & 1 == 1),
            Formula::NegAtom(j) => bool_formula(letter >> j & 1 == 0),
            Formula::And(cs) => Formula::and(cs.iter().map(|c| c.progress(letter)).collect()),
            Formula::Or(cs) => Formula::or(cs.iter().map(|c| c.progress(letter)).collect()),
            Formula::Next(f) => (**f).clone(),
            Formula::Until(a, b) => Formula::or(vec![
                b.progress(letter),
                Formula::and(vec![a.progress(letter), self.clone()]),
            ]),
        }
    }

    /// Largest AP index mentioned, if any.
    pub fn max_atom(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Atom(j) | Formula::NegAtom(j) => Some(*j),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().filter_map(Formula::max_atom).max(),
            Formula::Next(f) => f.max_atom(),
            Formula::Until(a, b) => a.max_atom().max(b.max_atom()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::NegAtom(_) => 0,
            Formula::And(cs) | Formula::Or(cs) => {
                1 + cs.iter().map(Formula::depth).max().unwrap_or(0)
            }
            Formula::Next(f) => 1 + f.depth(),
            Formula::Until(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn display<'a>(&'a self, aps: &'a [String]) -> FormulaDisplay<'a> {
        FormulaDisplay { f: self, aps }
    }
}

fn is_subset(a: &[Formula], b: &[Formula]) -> bool {
    let mut it = b.iter();
    a.iter().all(|x| it.by_ref().any(|y| y == x))
}

fn reduce(clauses: Vec<Vec<Formula>>) -> Vec<Vec<Formula>> {
    let mut clauses: Vec<Vec<Formula>> = clauses
        .into_iter()
        .map(|mut c| {
            c.sort();
            c.dedup();
            c
        })
        .filter(|c| {
            !c.iter()
                .any(|x| matches!(x, Formula::Atom(j) if c.contains(&Formula::NegAtom(*j))))
        })
        .collect();
    clauses.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    clauses.dedup();
    let mut kept: Vec<Vec<Formula>> = Vec::with_capacity(clauses.len());
    for c in clauses {
        if !kept.iter().any(|k| is_subset(k, &c)) {
            kept.push(c);
        }
    }
    kept.sort();
    kept
}

fn bool_formula(b: bool) -> Formula {
    if b {
        Formula::True
    } else {
        Formula::False
    }
}

pub struct FormulaDisplay<'a> {
    f: &'a Formula,
    aps: &'a [String],
}

impl<'a> fmt::Display for FormulaDisplay<'a> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |j: &usize| self.aps.get(*j).cloned().unwrap_or_else(|| format!("#{j}"));
        let sub = |f: &'a Formula| FormulaDisplay { f, aps: self.aps };
        match self.f {
            Formula::True => write!(out, "true"),
            Formula::False => write!(out, "false"),
            Formula::Atom(j) => write!(out, "{}", name(j)),
            Formula::NegAtom(j) => write!(out, "!{}", name(j)),
            Formula::And(cs) | Formula::Or(cs) => {
                let op = if matches!(self.f, Formula::And(_)) { " & " } else { " | " };
                write!(out, "(")?;
                for (k, c) in cs.iter().enumerate() {
                    if k > 0 {
                        write!(out, "{op}")?;
                    }
                    write!(out, "{}", sub(c))?;
                }
                write!(out, ")")
            }
            Formula::Next(f) => write!(out, "X {}", sub(f)),
            Formula::Until(a, b) => write!(out, "({} U {})", sub(a), sub(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Not,
    And,
    Or,
    Next,
    Until,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let tok = match c {
            c if c.is_ascii_whitespace() => {
                i += 1;
                continue;
            }
            '!' => Tok::Not,
            '&' => Tok::And,
            '|' => Tok::Or,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "X" => Tok::Next,
                    "U" => Tok::Until,
                    _ => Tok::Ident(word.to_string()),
                };
                toks.push((start, tok));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        toks.push((i, tok));
        i += 1;
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    aps: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn atom(&self, name: &str) -> Result<usize> {
        self.aps
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UndeclaredAtom(name.to_string()))
    }

    fn until(&mut self) -> Result<Formula> {
        let lhs = self.or()?;
        if self.peek() == Some(&Tok::Until) {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::Or(parts)
        })
    }

    fn and(&mut self) -> Result<Formula> {
        let mut parts = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::And(parts)
        })
    }

    fn unary(&mut self) -> Result<Formula> {
        match self.peek().cloned() {
            Some(Tok::Not) => {
                self.pos += 1;
                match self.peek().cloned() {
                    Some(Tok::Ident(name)) => {
                        let j = self.atom(&name)?;
                        self.pos += 1;
                        Ok(Formula::NegAtom(j))
                    }
                    _ => self.err("negation may only be applied to an atomic proposition"),
                }
            }
            Some(Tok::Next) => {
                self.pos += 1;
                Ok(Formula::next(self.unary()?))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.until()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(f)
            }
            Some(Tok::Ident(name)) => {
                let j = self.atom(&name)?;
                self.pos += 1;
                Ok(Formula::Atom(j))
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses `text` against the AP universe `aps`.
pub fn parse(text: &str, aps: &[String]) -> Result<Formula> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        aps,
    };
    let f = p.until()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}
