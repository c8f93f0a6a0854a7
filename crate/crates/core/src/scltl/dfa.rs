use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use super::formula::Formula;
use crate::error::{Error, Result};
use crate::model::{Letter, MAX_APS};

pub const DEFAULT_STATE_CAP: usize = 10_000;

/// Complete deterministic automaton over `2^AP` with a single absorbing
/// accepting state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dfa {
    n_aps: usize,
    n_states: usize,
    initial: usize,
    accepting: usize,
    /// `table[q * 2^n_aps + letter]`
    table: Vec<usize>,
    /// Human-readable description of every state.
    pub state_names: Vec<String>,
}

impl Dfa {
    /// Wraps a transition table after checking it is complete and that the
    /// accepting state is absorbing.
    pub fn from_table(
        n_aps: usize,
        n_states: usize,
        initial: usize,
        accepting: usize,
        table: Vec<usize>,
        state_names: Vec<String>,
    ) -> Result<Self> {
        if n_aps > MAX_APS {
            return Err(Error::InvalidDfa(format!("{n_aps} APs exceed the maximum of {MAX_APS}")));
        }
        let letters = 1usize << n_aps;
        if table.len() != n_states * letters {
            return Err(Error::InvalidDfa("transition table has the wrong size".into()));
        }
        if initial >= n_states || accepting >= n_states {
            return Err(Error::InvalidDfa("initial or accepting state out of range".into()));
        }
        if table.iter().any(|&t| t >= n_states) {
            return Err(Error::InvalidDfa("transition to an unknown state".into()));
        }
        if table[accepting * letters..(accepting + 1) * letters]
            .iter()
            .any(|&t| t != accepting)
        {
            return Err(Error::InvalidDfa("accepting state is not absorbing".into()));
        }
        if state_names.len() != n_states {
            return Err(Error::InvalidDfa("one name per state required".into()));
        }
        Ok(Self {
            n_aps,
            n_states,
            initial,
            accepting,
            table,
            state_names,
        })
    }

    pub fn n_aps(&self) -> usize {
        self.n_aps
    }

    pub fn n_letters(&self) -> usize {
        1 << self.n_aps
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn accepting(&self) -> usize {
        self.accepting
    }

    pub fn step(&self, q: usize, letter: Letter) -> usize {
        self.table[q * self.n_letters() + letter as usize]
    }

    /// True iff the run on `word` visits the accepting state.
    pub fn accepts(&self, word: &[Letter]) -> bool {
        let mut q = self.initial;
        for &l in word {
            if q == self.accepting {
                return true;
            }
            q = self.step(q, l);
        }
        q == self.accepting
    }

    /// States from which the accepting state is reachable.
    pub fn coreachable(&self) -> Vec<bool> {
        let mut good = vec![false; self.n_states];
        good[self.accepting] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for q in 0..self.n_states {
                if good[q] {
                    continue;
                }
                let row = &self.table[q * self.n_letters()..(q + 1) * self.n_letters()];
                if row.iter().any(|&t| good[t]) {
                    good[q] = true;
                    changed = true;
                }
            }
        }
        good
    }

    /// Non-accepting states that are never left.
    pub fn rejecting_sinks(&self) -> Vec<usize> {
        (0..self.n_states)
            .filter(|&q| {
                q != self.accepting
                    && self.table[q * self.n_letters()..(q + 1) * self.n_letters()]
                        .iter()
                        .all(|&t| t == q)
            })
            .collect()
    }
}

/// Builds the DFA of `f` by formula progression. States are residual
/// formulas in reduced disjunctive normal form; `True` is the accepting state and `False` the
/// rejecting sink, both always present.
pub fn to_dfa(f: &Formula, n_aps: usize, state_cap: usize, aps: &[String]) -> Result<Dfa> {
    if n_aps > MAX_APS {
        return Err(Error::InvalidDfa(format!("{n_aps} APs exceed the maximum of {MAX_APS}")));
    }
    if let Some(j) = f.max_atom() {
        if j >= n_aps {
            return Err(Error::UndeclaredAtom(format!("#{j}")));
        }
    }
    let letters = 1usize << n_aps;
    let mut ids: HashMap<Formula, usize> = HashMap::new();
    let mut states: Vec<Formula> = Vec::new();
    let mut queue = VecDeque::new();
    let mut table: Vec<usize> = Vec::new();

    let mut intern = |g: Formula, states: &mut Vec<Formula>, queue: &mut VecDeque<usize>| -> Result<usize> {
        if let Some(&id) = ids.get(&g) {
            return Ok(id);
        }
        let id = states.len();
        if id >= state_cap {
            return Err(Error::StateCap(state_cap));
        }
        ids.insert(g.clone(), id);
        states.push(g);
        queue.push_back(id);
        Ok(id)
    };

    let initial = intern(f.normalize(), &mut states, &mut queue)?;
    while let Some(q) = queue.pop_front() {
        if table.len() < (q + 1) * letters {
            table.resize((q + 1) * letters, usize::MAX);
        }
        let current = states[q].clone();
        for l in 0..letters {
            let next = current.progress(l as Letter).normalize();
            let t = intern(next, &mut states, &mut queue)?;
            table[q * letters + l] = t;
        }
    }
    let accepting = intern(Formula::True, &mut states, &mut queue)?;
    intern(Formula::False, &mut states, &mut queue)?;
    while let Some(q) = queue.pop_front() {
        if table.len() < (q + 1) * letters {
            table.resize((q + 1) * letters, usize::MAX);
        }
        for l in 0..letters {
            table[q * letters + l] = q;
        }
    }
    let names = states.iter().map(|s| s.display(aps).to_string()).collect();
    Dfa::from_table(n_aps, states.len(), initial, accepting, table, names)
}

#[cfg(test)]
mod tests {
    use super::super::formula::parse;
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reach_avoid_has_three_states() {
        let aps = names(&["p1", "p2", "p3"]);
        let f = parse("(!p2 & !p3) U p1", &aps).unwrap();
        let dfa = to_dfa(&f, 3, DEFAULT_STATE_CAP, &aps).unwrap();
        assert_eq!(dfa.n_states(), 3);
        let q0 = dfa.initial();
        assert_eq!(dfa.step(q0, 0b001), dfa.accepting());
        assert_eq!(dfa.step(q0, 0b000), q0);
        assert_eq!(dfa.rejecting_sinks().len(), 1);
        assert!(dfa.accepts(&[0, 0, 0b101]));
        assert!(!dfa.accepts(&[0, 0b010, 0b001]));
    }

    #[test]
    fn single_atom() {
        let aps = names(&["p1"]);
        let dfa = to_dfa(&parse("p1", &aps).unwrap(), 1, DEFAULT_STATE_CAP, &aps).unwrap();
        assert_eq!(dfa.n_states(), 3);
        assert_eq!(dfa.step(dfa.initial(), 1), dfa.accepting());
        let sink = dfa.step(dfa.initial(), 0);
        assert_eq!(dfa.rejecting_sinks(), vec![sink]);
    }

    #[test]
    fn state_cap_is_enforced() {
        let aps = names(&["a"]);
        let f = parse("X X X X a", &aps).unwrap();
        assert!(matches!(to_dfa(&f, 1, 3, &aps), Err(Error::StateCap(3))));
    }

    #[test]
    fn sink_and_accepting_exist_even_if_unreachable() {
        let aps = names(&["g"]);
        let dfa = to_dfa(&parse("!g U g", &aps).unwrap(), 1, DEFAULT_STATE_CAP, &aps).unwrap();
        assert_eq!(dfa.n_states(), 3);
        let coreach = dfa.coreachable();
        assert_eq!(coreach.iter().filter(|&&c| c).count(), 2);
    }
}
