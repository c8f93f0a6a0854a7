//! Edge guards as pairwise-disjoint conjunctions of literals, and their
//! per-subsystem split.

use std::fmt;

use serde::Serialize;

use super::dfa::Dfa;
use crate::model::{Labeling, Letter, SubsystemMdp};

/// Partial assignment over the AP universe: `Some(true)` required true,
/// `Some(false)` required false, `None` free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Conjunction {
    pub literals: Vec<Option<bool>>,
}

impl Conjunction {
    pub fn free(n_aps: usize) -> Self {
        Self {
            literals: vec![None; n_aps],
        }
    }

    pub fn satisfied_by(&self, letter: Letter) -> bool {
        self.literals.iter().enumerate().all(|(j, lit)| match lit {
            Some(b) => (letter >> j & 1 == 1) == *b,
            None => true,
        })
    }

    /// Restriction to the APs owned by subsystem `i`; all other literals
    /// become free.
    pub fn part(&self, owner: &[usize], i: usize) -> Conjunction {
        Conjunction {
            literals: self
                .literals
                .iter()
                .zip(owner)
                .map(|(lit, &o)| if o == i { *lit } else { None })
                .collect(),
        }
    }

    pub fn is_free(&self) -> bool {
        self.literals.iter().all(Option::is_none)
    }

    /// Guard indicator of this conjunction's subsystem-`i` part over the
    /// states of `mdp`. The out-of-domain sink never satisfies a guard.
    pub fn part_indicator(&self, labeling: &Labeling, i: usize, mdp: &SubsystemMdp) -> Vec<f64> {
        let part = self.part(&labeling.owner, i);
        labeling.letters[i]
            .iter()
            .enumerate()
            .map(|(s, &l)| {
                if !mdp.is_sink(s) && part.satisfied_by(l) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn display<'a>(&'a self, aps: &'a [String]) -> ConjunctionDisplay<'a> {
        ConjunctionDisplay { c: self, aps }
    }
}

pub struct ConjunctionDisplay<'a> {
    c: &'a Conjunction,
    aps: &'a [String],
}

impl fmt::Display for ConjunctionDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lits: Vec<String> = self
            .c
            .literals
            .iter()
            .enumerate()
            .filter_map(|(j, lit)| {
                let name = self.aps.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
                lit.map(|b| if b { name } else { format!("!{name}") })
            })
            .collect();
        if lits.is_empty() {
            write!(f, "true")
        } else {
            write!(f, "{}", lits.join(" & "))
        }
    }
}

/// One outgoing guarded transition `(alpha, q')` of a DFA state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardedTransition {
    pub guard: Conjunction,
    pub target: usize,
}

/// For every DFA state, the disjoint guarded transitions leaving it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutgoingTransitions {
    pub per_state: Vec<Vec<GuardedTransition>>,
}

impl OutgoingTransitions {
    pub fn of(&self, q: usize) -> &[GuardedTransition] {
        &self.per_state[q]
    }

    /// Transitions `(q, index)` whose target is `target`.
    pub fn into_state(&self, target: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.per_state.iter().enumerate().flat_map(move |(q, ts)| {
            ts.iter()
                .enumerate()
                .filter(move |(_, t)| t.target == target)
                .map(move |(k, _)| (q, k))
        })
    }

    pub fn conjunction_count(&self) -> usize {
        self.per_state.iter().map(Vec::len).sum()
    }
}

/// Letters consistent with fixed bits (`mask`, `value`).
fn cube(n_aps: usize, mask: Letter, value: Letter) -> impl Iterator<Item = Letter> {
    let free = ((1u64 << n_aps) - 1) as Letter & !mask;
    let mut sub = Some(free);
    std::iter::from_fn(move || {
        let s = sub?;
        sub = if s == 0 { None } else { Some((s - 1) & free) };
        Some(value | s)
    })
}

fn decompose(
    dfa: &Dfa,
    q: usize,
    var: usize,
    mask: Letter,
    value: Letter,
    out: &mut Vec<GuardedTransition>,
) {
    let n = dfa.n_aps();
    let mut letters = cube(n, mask, value);
    let first = dfa.step(q, letters.next().unwrap());
    if letters.all(|l| dfa.step(q, l) == first) {
        let literals = (0..n)
            .map(|j| (mask >> j & 1 == 1).then_some(value >> j & 1 == 1))
            .collect();
        out.push(GuardedTransition {
            guard: Conjunction { literals },
            target: first,
        });
        return;
    }
    let mut v = var;
    while v < n {
        let bit: Letter = 1 << v;
        let independent = cube(n, mask | bit, value).all(|l| dfa.step(q, l) == dfa.step(q, l | bit));
        if !independent {
            break;
        }
        v += 1;
    }
    debug_assert!(v < n, "non-constant cube must depend on some variable");
    let bit: Letter = 1 << v;
    decompose(dfa, q, v + 1, mask | bit, value, out);
    decompose(dfa, q, v + 1, mask | bit, value | bit, out);
}

/// Splits every DFA edge into pairwise-disjoint conjunctions by walking the
/// reduced ordered decision diagram of `letter -> successor` (variable order
/// = AP declaration order). Each root-to-leaf path is one conjunction.
pub fn factor_edges(dfa: &Dfa) -> OutgoingTransitions {
    let per_state = (0..dfa.n_states())
        .map(|q| {
            let mut out = Vec::new();
            decompose(dfa, q, 0, 0, 0, &mut out);
            out
        })
        .collect();
    OutgoingTransitions { per_state }
}

#[cfg(test)]
mod tests {
    use super::super::dfa::{to_dfa, DEFAULT_STATE_CAP};
    use super::super::formula::parse;
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn build(text: &str, aps: &[&str]) -> (Dfa, OutgoingTransitions) {
        let aps = names(aps);
        let dfa = to_dfa(&parse(text, &aps).unwrap(), aps.len(), DEFAULT_STATE_CAP, &aps).unwrap();
        let out = factor_edges(&dfa);
        (dfa, out)
    }

    #[test]
    fn reach_avoid_accept_edge_is_single_literal() {
        let (dfa, out) = build("(!p2 & !p3) U p1", &["p1", "p2", "p3"]);
        let to_acc: Vec<_> = out
            .of(dfa.initial())
            .iter()
            .filter(|t| t.target == dfa.accepting())
            .collect();
        assert_eq!(to_acc.len(), 1);
        assert_eq!(to_acc[0].guard.literals, vec![Some(true), None, None]);
        let self_loop: Vec<_> = out
            .of(dfa.initial())
            .iter()
            .filter(|t| t.target == dfa.initial())
            .collect();
        assert_eq!(self_loop.len(), 1);
        assert_eq!(self_loop[0].guard.literals, vec![Some(false), Some(false), Some(false)]);
    }

    #[test]
    fn negated_conjunction_splits_into_two() {
        let (dfa, out) = build("(!g1 | !g2) U (g1 & g2)", &["g1", "g2"]);
        let mut self_loop: Vec<_> = out
            .of(dfa.initial())
            .iter()
            .filter(|t| t.target == dfa.initial())
            .map(|t| t.guard.literals.clone())
            .collect();
        self_loop.sort();
        assert_eq!(
            self_loop,
            vec![vec![Some(false), None], vec![Some(true), Some(false)]]
        );
    }

    #[test]
    fn trivial_guard_is_all_free() {
        let (dfa, out) = build("p1", &["p1", "p2"]);
        let acc = out.of(dfa.accepting());
        assert_eq!(acc.len(), 1);
        assert!(acc[0].guard.is_free());
    }

    #[test]
    fn guards_partition_every_letter() {
        let (dfa, out) = build("(a U b) | X (c & !a)", &["a", "b", "c"]);
        for q in 0..dfa.n_states() {
            for l in 0..dfa.n_letters() as Letter {
                let hits: Vec<_> = out.of(q).iter().filter(|t| t.guard.satisfied_by(l)).collect();
                assert_eq!(hits.len(), 1);
                assert_eq!(hits[0].target, dfa.step(q, l));
            }
        }
    }

    #[test]
    fn per_subsystem_split() {
        let c = Conjunction {
            literals: vec![Some(true), Some(false), None],
        };
        let owner = [0, 1, 1];
        assert_eq!(c.part(&owner, 0).literals, vec![Some(true), None, None]);
        assert_eq!(c.part(&owner, 1).literals, vec![None, Some(false), None]);
        for l in 0..8 {
            let split = c.part(&owner, 0).satisfied_by(l) && c.part(&owner, 1).satisfied_by(l);
            assert_eq!(split, c.satisfied_by(l));
        }
    }
}
