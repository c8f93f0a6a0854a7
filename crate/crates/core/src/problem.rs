//! A factored system paired with an automaton: the shared read-only input of
//! tree expansion, policy optimization, the dense oracle and simulation.

use crate::error::{Error, Result};
use crate::model::{FactoredSystem, Letter};
use crate::scltl::{factor_edges, Dfa, OutgoingTransitions};

#[derive(Debug, Clone)]
pub struct Problem {
    pub system: FactoredSystem,
    pub dfa: Dfa,
    pub out: OutgoingTransitions,
    /// `indicators[q][k][i]`: indicator of the subsystem-`i` part of the
    /// `k`-th guard leaving `q`, over the states of subsystem `i`.
    indicators: Vec<Vec<Vec<Vec<f64>>>>,
    /// Modes other than the accepting one from which it is reachable.
    live: Vec<bool>,
    /// `into[q']`: transitions `(q, k)` with target `q'` and live source.
    into: Vec<Vec<(usize, usize)>>,
}

impl Problem {
    pub fn new(system: FactoredSystem, dfa: Dfa) -> Result<Self> {
        if dfa.n_aps() != system.labeling.n_aps() {
            return Err(Error::InvalidDfa(format!(
                "automaton is over {} APs but the system declares {}",
                dfa.n_aps(),
                system.labeling.n_aps()
            )));
        }
        let out = factor_edges(&dfa);
        let indicators = out
            .per_state
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| {
                        system
                            .mdps
                            .iter()
                            .enumerate()
                            .map(|(i, mdp)| t.guard.part_indicator(&system.labeling, i, mdp))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let coreach = dfa.coreachable();
        let live: Vec<bool> = (0..dfa.n_states())
            .map(|q| q != dfa.accepting() && coreach[q])
            .collect();
        let mut into = vec![Vec::new(); dfa.n_states()];
        for (q, ts) in out.per_state.iter().enumerate() {
            if !live[q] {
                continue;
            }
            for (k, t) in ts.iter().enumerate() {
                into[t.target].push((q, k));
            }
        }
        Ok(Self {
            system,
            dfa,
            out,
            indicators,
            live,
            into,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.dfa.n_states()
    }

    pub fn n_subsystems(&self) -> usize {
        self.system.n_subsystems()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.system.shape()
    }

    pub fn accepting(&self) -> usize {
        self.dfa.accepting()
    }

    pub fn is_live(&self, q: usize) -> bool {
        self.live[q]
    }

    pub fn live_modes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_modes()).filter(|&q| self.live[q])
    }

    pub fn indicator(&self, q: usize, k: usize, i: usize) -> &[f64] {
        &self.indicators[q][k][i]
    }

    /// Live-source transitions entering `target`.
    pub fn into_mode(&self, target: usize) -> &[(usize, usize)] {
        &self.into[target]
    }

    /// Mode after reading the label of `cells` in mode `q`, or `None` when
    /// a component is out of domain.
    pub fn successor(&self, q: usize, cells: &[usize]) -> Option<usize> {
        self.system.letter(cells).map(|l: Letter| self.dfa.step(q, l))
    }

    /// Mode entered from the automaton's initial state on the label of the
    /// initial cells.
    pub fn initial_mode(&self, cells: &[usize]) -> Option<usize> {
        self.successor(self.dfa.initial(), cells)
    }
}
