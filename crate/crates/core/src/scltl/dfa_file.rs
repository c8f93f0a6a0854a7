//! Reading and writing automata given as TOML files.
//!
//! ```toml
//! aps = ["p1", "p2"]          # optional; must be declared by the system
//! states = ["q0", "acc", "trap"]
//! initial = "q0"
//! accepting = "acc"
//!
//! [[transitions]]
//! from = "q0"
//! to = "acc"
//! guard = "p1"
//! ```
//!
//! Guards are Boolean expressions over `&`, `|`, `!`, `true`, `false`,
//! parentheses and AP names. For every state and letter exactly one guard
//! must hold. An accepting state without transitions becomes absorbing.

use serde::{Deserialize, Serialize};

use super::dfa::Dfa;
use super::guard::factor_edges;
use crate::error::{Error, Result};
use crate::model::{Letter, MAX_APS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aps: Option<Vec<String>>,
    pub states: Vec<String>,
    pub initial: String,
    pub accepting: String,
    #[serde(default)]
    pub transitions: Vec<TransitionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub from: String,
    pub to: String,
    pub guard: String,
}

/// Boolean guard expression with unrestricted negation.
#[derive(Debug, Clone, PartialEq)]
pub enum GuardExpr {
    Const(bool),
    Var(usize),
    Not(Box<GuardExpr>),
    And(Box<GuardExpr>, Box<GuardExpr>),
    Or(Box<GuardExpr>, Box<GuardExpr>),
}

impl GuardExpr {
    pub fn eval(&self, letter: Letter) -> bool {
        match self {
            GuardExpr::Const(b) => *b,
            GuardExpr::Var(j) => letter >> j & 1 == 1,
            GuardExpr::Not(e) => !e.eval(letter),
            GuardExpr::And(a, b) => a.eval(letter) && b.eval(letter),
            GuardExpr::Or(a, b) => a.eval(letter) || b.eval(letter),
        }
    }
}

struct GuardParser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    aps: &'a [String],
}

impl GuardParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].1.is_whitespace() {
            self.pos += 1;
        }
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or_else(
            || self.chars.last().map_or(0, |(i, c)| i + c.len_utf8()),
            |(i, _)| *i,
        )
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        }
    }

    fn or(&mut self) -> Result<GuardExpr> {
        let mut lhs = self.and()?;
        while self.peek() == Some('|') {
            self.pos += 1;
            lhs = GuardExpr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<GuardExpr> {
        let mut lhs = self.unary()?;
        while self.peek() == Some('&') {
            self.pos += 1;
            lhs = GuardExpr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<GuardExpr> {
        match self.peek() {
            Some('!') => {
                self.pos += 1;
                Ok(GuardExpr::Not(Box::new(self.unary()?)))
            }
            Some('(') => {
                self.pos += 1;
                let e = self.or()?;
                if self.peek() != Some(')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_alphanumeric() || c == '_' => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].1.is_alphanumeric() || self.chars[self.pos].1 == '_')
                {
                    self.pos += 1;
                }
                let word: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
                match word.as_str() {
                    "true" => Ok(GuardExpr::Const(true)),
                    "false" => Ok(GuardExpr::Const(false)),
                    _ => self
                        .aps
                        .iter()
                        .position(|a| *a == word)
                        .map(GuardExpr::Var)
                        .ok_or(Error::UndeclaredAtom(word)),
                }
            }
            Some(c) => Err(self.err(format!("unexpected `{c}`"))),
            None => Err(self.err("unexpected end of guard")),
        }
    }
}

pub fn parse_guard(text: &str, aps: &[String]) -> Result<GuardExpr> {
    let mut p = GuardParser {
        chars: text.char_indices().collect(),
        pos: 0,
        aps,
    };
    let e = p.or()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

impl DfaFile {
    /// Validates the file and builds a complete deterministic automaton over
    /// the system AP list `aps`.
    pub fn to_dfa(&self, aps: &[String]) -> Result<Dfa> {
        if aps.len() > MAX_APS {
            return Err(Error::InvalidDfa(format!("more than {MAX_APS} APs")));
        }
        if let Some(file_aps) = &self.aps {
            if let Some(missing) = file_aps.iter().find(|a| !aps.contains(a)) {
                return Err(Error::UndeclaredAtom(missing.clone()));
            }
        }
        let index = |name: &str| -> Result<usize> {
            self.states
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::InvalidDfa(format!("unknown state `{name}`")))
        };
        for (k, s) in self.states.iter().enumerate() {
            if self.states[..k].contains(s) {
                return Err(Error::InvalidDfa(format!("duplicate state `{s}`")));
            }
        }
        let n = self.states.len();
        let initial = index(&self.initial)?;
        let accepting = index(&self.accepting)?;
        let letters = 1usize << aps.len();
        let mut table = vec![usize::MAX; n * letters];
        let mut has_out = vec![false; n];
        for t in &self.transitions {
            let from = index(&t.from)?;
            let to = index(&t.to)?;
            let guard = parse_guard(&t.guard, aps)?;
            has_out[from] = true;
            for l in 0..letters {
                if !guard.eval(l as Letter) {
                    continue;
                }
                let slot = &mut table[from * letters + l];
                if *slot != usize::MAX && *slot != to {
                    return Err(Error::InvalidDfa(format!(
                        "nondeterministic: state `{}` has two successors on one letter",
                        t.from
                    )));
                }
                *slot = to;
            }
        }
        if !has_out[accepting] {
            table[accepting * letters..(accepting + 1) * letters].fill(accepting);
        }
        if let Some(pos) = table.iter().position(|&t| t == usize::MAX) {
            return Err(Error::InvalidDfa(format!(
                "incomplete: state `{}` has no successor for some letter",
                self.states[pos / letters]
            )));
        }
        Dfa::from_table(aps.len(), n, initial, accepting, table, self.states.clone())
    }

    /// File form of an automaton, with guards written as the disjoint
    /// conjunctions of its factored edges.
    pub fn from_dfa(dfa: &Dfa, aps: &[String]) -> Self {
        let names: Vec<String> = (0..dfa.n_states()).map(|q| format!("q{q}")).collect();
        let out = factor_edges(dfa);
        let mut transitions = Vec::new();
        for (q, ts) in out.per_state.iter().enumerate() {
            for t in ts {
                transitions.push(TransitionEntry {
                    from: names[q].clone(),
                    to: names[t.target].clone(),
                    guard: t.guard.display(aps).to_string(),
                });
            }
        }
        Self {
            aps: Some(aps.to_vec()),
            initial: names[dfa.initial()].clone(),
            accepting: names[dfa.accepting()].clone(),
            states: names,
            transitions,
        }
    }
}

pub fn read_dfa_file(text: &str, aps: &[String]) -> Result<Dfa> {
    let file: DfaFile = toml::from_str(text)?;
    file.to_dfa(aps)
}

pub fn write_dfa_file(dfa: &Dfa, aps: &[String]) -> Result<String> {
    toml::to_string(&DfaFile::from_dfa(dfa, aps)).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::dfa::{to_dfa, DEFAULT_STATE_CAP};
    use super::super::formula::parse;
    use super::*;

    fn aps() -> Vec<String> {
        vec!["p1".into(), "p2".into()]
    }

    #[test]
    fn reads_a_small_automaton() {
        let text = r#"
states = ["q0", "acc", "trap"]
initial = "q0"
accepting = "acc"
[[transitions]]
from = "q0"
to = "acc"
guard = "p1"
[[transitions]]
from = "q0"
to = "q0"
guard = "!p1 & !p2"
[[transitions]]
from = "q0"
to = "trap"
guard = "!p1 & p2"
[[transitions]]
from = "trap"
to = "trap"
guard = "true"
"#;
        let dfa = read_dfa_file(text, &aps()).unwrap();
        assert_eq!(dfa.n_states(), 3);
        assert_eq!(dfa.step(0, 0b01), 1);
        assert_eq!(dfa.step(0, 0b11), 1);
        assert_eq!(dfa.step(0, 0b10), 2);
        assert_eq!(dfa.step(1, 0b10), 1);
    }

    #[test]
    fn rejects_nondeterminism_and_gaps() {
        let base = "states = [\"a\", \"b\"]\ninitial = \"a\"\naccepting = \"b\"\n";
        let overlap = format!(
            "{base}[[transitions]]\nfrom = \"a\"\nto = \"a\"\nguard = \"p1\"\n\
             [[transitions]]\nfrom = \"a\"\nto = \"b\"\nguard = \"p1 | p2\"\n"
        );
        assert!(matches!(read_dfa_file(&overlap, &aps()), Err(Error::InvalidDfa(_))));
        let gap = format!("{base}[[transitions]]\nfrom = \"a\"\nto = \"b\"\nguard = \"p1\"\n");
        assert!(matches!(read_dfa_file(&gap, &aps()), Err(Error::InvalidDfa(_))));
    }

    #[test]
    fn rejects_leaving_accepting_state() {
        let text = "states = [\"a\", \"b\"]\ninitial = \"a\"\naccepting = \"b\"\n\
                    [[transitions]]\nfrom = \"a\"\nto = \"b\"\nguard = \"true\"\n\
                    [[transitions]]\nfrom = \"b\"\nto = \"a\"\nguard = \"true\"\n";
        assert!(matches!(read_dfa_file(text, &aps()), Err(Error::InvalidDfa(_))));
    }

    #[test]
    fn guard_syntax() {
        let a = aps();
        let g = parse_guard("!(p1 & p2) | false", &a).unwrap();
        assert!(g.eval(0b01) && !g.eval(0b11));
        assert!(matches!(parse_guard("p1 &", &a), Err(Error::Syntax { .. })));
        assert!(matches!(parse_guard("p9", &a), Err(Error::UndeclaredAtom(_))));
    }

    #[test]
    fn round_trip_through_file() {
        let a = aps();
        let dfa = to_dfa(&parse("(!p1 | !p2) U (p1 & p2)", &a).unwrap(), 2, DEFAULT_STATE_CAP, &a).unwrap();
        let text = write_dfa_file(&dfa, &a).unwrap();
        let back = read_dfa_file(&text, &a).unwrap();
        for q in 0..dfa.n_states() {
            for l in 0..4 {
                assert_eq!(dfa.step(q, l), back.step(q, l));
            }
        }
    }
}
