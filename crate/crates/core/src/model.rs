//! Finite subsystem MDPs and the per-subsystem labeling that together form a
//! decoupled (factored) system.
//!
//! The joint transition kernel is the product of the subsystem kernels and is
//! never materialized outside of small verification helpers.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// A letter of the alphabet `2^AP`: bit `j` is set iff the `j`-th declared
/// atomic proposition holds.
pub type Letter = u32;

/// Largest supported number of atomic propositions.
pub const MAX_APS: usize = 20;

/// Tolerance for row-stochasticity checks.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Finite-state, finite-action MDP of a single subsystem.
#[derive(Debug, Clone)]
pub struct SubsystemMdp {
    /// One `n_states x n_states` row-stochastic matrix per action.
    transitions: Vec<Array2<f64>>,
    /// Continuous representative of every non-sink state (empty for
    /// hand-built models).
    pub cell_centers: Vec<Vec<f64>>,
    /// Input value of every action (empty for hand-built models).
    pub action_values: Vec<Vec<f64>>,
    /// Uniform grid the states were built from, if any.
    pub geometry: Option<GridGeometry>,
    sink: Option<usize>,
}

/// Uniform partition of a box; cells are numbered row-major with the first
/// dimension varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridGeometry {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridGeometry {
    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn width(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.cells[k] as f64
    }

    /// Cell containing `point`; a point on a cell boundary belongs to the
    /// upper cell. `None` when the point lies outside the box.
    pub fn cell_of(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.cells.len() {
            return None;
        }
        let mut index = 0;
        for (k, &x) in point.iter().enumerate() {
            let j = ((x - self.lo[k]) / self.width(k)).floor();
            if !(j >= 0.0 && (j as usize) < self.cells[k]) {
                return None;
            }
            index = index * self.cells[k] + j as usize;
        }
        Some(index)
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut rem = cell;
        let mut out = vec![0.0; self.cells.len()];
        for k in (0..self.cells.len()).rev() {
            let j = rem % self.cells[k];
            rem /= self.cells[k];
            out[k] = self.lo[k] + (j as f64 + 0.5) * self.width(k);
        }
        out
    }
}

impl SubsystemMdp {
    /// Validates and wraps per-action transition matrices.
    pub fn new(transitions: Vec<Array2<f64>>, sink: Option<usize>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidModel("MDP needs at least one action".into()))?;
        let n = first.nrows();
        if n == 0 {
            return Err(Error::InvalidModel("MDP needs at least one state".into()));
        }
        if let Some(s) = sink {
            if s >= n {
                return Err(Error::InvalidModel(format!("sink index {s} out of range")));
            }
        }
        for (a, t) in transitions.iter().enumerate() {
            if t.nrows() != n || t.ncols() != n {
                return Err(Error::InvalidModel(format!(
                    "action {a}: transition matrix is {}x{}, expected {n}x{n}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            for (s, row) in t.rows().into_iter().enumerate() {
                let mut sum = 0.0;
                for &p in row.iter() {
                    if !(0.0..=1.0).contains(&p) || p.is_nan() {
                        return Err(Error::InvalidModel(format!(
                            "action {a}, state {s}: probability {p} outside [0,1]"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "action {a}, state {s}: row sums to {sum}"
                    )));
                }
            }
            if let Some(k) = sink {
                if t[[k, k]] != 1.0 {
                    return Err(Error::InvalidModel(format!(
                        "action {a}: sink state {k} is not absorbing"
                    )));
                }
            }
        }
        Ok(Self {
            transitions,
            cell_centers: Vec::new(),
            action_values: Vec::new(),
            geometry: None,
            sink,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions[0].nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn sink(&self) -> Option<usize> {
        self.sink
    }

    pub fn is_sink(&self, s: usize) -> bool {
        self.sink == Some(s)
    }

    pub fn transition(&self, action: usize) -> &Array2<f64> {
        &self.transitions[action]
    }

    pub fn transitions(&self) -> &[Array2<f64>] {
        &self.transitions
    }

    /// Gathers the policy-selected rows into one matrix.
    pub fn controlled_matrix(&self, policy: &[usize]) -> Result<Array2<f64>> {
        let n = self.n_states();
        if policy.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: policy.len(),
            });
        }
        let mut out = Array2::<f64>::zeros((n, n));
        for (s, &a) in policy.iter().enumerate() {
            if a >= self.n_actions() {
                return Err(Error::InvalidModel(format!(
                    "policy selects action {a} but only {} exist",
                    self.n_actions()
                )));
            }
            out.row_mut(s).assign(&self.transitions[a].row(s));
        }
        Ok(out)
    }
}

/// Per-subsystem labeling: which atomic propositions hold in which state.
///
/// Every AP is owned by exactly one subsystem, so a joint letter is the
/// bitwise union of the subsystem letters.
#[derive(Debug, Clone, Serialize)]
pub struct Labeling {
    pub ap_names: Vec<String>,
    /// Owning subsystem of every AP.
    pub owner: Vec<usize>,
    /// `letters[i][s]`: bits of the APs of subsystem `i` that hold in state `s`.
    pub letters: Vec<Vec<Letter>>,
}

impl Labeling {
    pub fn new(ap_names: Vec<String>, owner: Vec<usize>, letters: Vec<Vec<Letter>>) -> Result<Self> {
        if ap_names.len() != owner.len() {
            return Err(Error::InvalidModel("AP names and owners differ in length".into()));
        }
        if ap_names.len() > MAX_APS {
            return Err(Error::InvalidModel(format!(
                "{} atomic propositions exceed the maximum of {MAX_APS}",
                ap_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &ap_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate AP name `{name}`")));
            }
        }
        for (j, &i) in owner.iter().enumerate() {
            if i >= letters.len() {
                return Err(Error::InvalidModel(format!(
                    "AP `{}` references subsystem {i} of {}",
                    ap_names[j],
                    letters.len()
                )));
            }
        }
        for (i, ls) in letters.iter().enumerate() {
            let allowed = owned_mask(&owner, i);
            if ls.iter().any(|&l| l & !allowed != 0) {
                return Err(Error::InvalidModel(format!(
                    "subsystem {i} labels states with APs it does not own"
                )));
            }
        }
        Ok(Self {
            ap_names,
            owner,
            letters,
        })
    }

    pub fn n_aps(&self) -> usize {
        self.ap_names.len()
    }

    /// Bit mask of the APs owned by subsystem `i`.
    pub fn owned_mask(&self, i: usize) -> Letter {
        owned_mask(&self.owner, i)
    }

    pub fn ap_index(&self, name: &str) -> Option<usize> {
        self.ap_names.iter().position(|n| n == name)
    }

    pub fn letter_names(&self, letter: Letter) -> Vec<String> {
        self.ap_names
            .iter()
            .enumerate()
            .filter(|(j, _)| letter >> j & 1 == 1)
            .map(|(_, n)| n.clone())
            .collect()
    }
}

fn owned_mask(owner: &[usize], i: usize) -> Letter {
    owner
        .iter()
        .enumerate()
        .filter(|(_, &o)| o == i)
        .fold(0, |m, (j, _)| m | (1 << j))
}

/// A decoupled system: independent subsystem MDPs plus their labeling.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    pub mdps: Vec<SubsystemMdp>,
    pub labeling: Labeling,
}

impl FactoredSystem {
    pub fn new(mdps: Vec<SubsystemMdp>, labeling: Labeling) -> Result<Self> {
        if mdps.len() != labeling.letters.len() {
            return Err(Error::DimensionMismatch {
                expected: mdps.len(),
                got: labeling.letters.len(),
            });
        }
        for (i, (mdp, ls)) in mdps.iter().zip(&labeling.letters).enumerate() {
            if mdp.n_states() != ls.len() {
                return Err(Error::InvalidModel(format!(
                    "subsystem {i}: {} states but {} labels",
                    mdp.n_states(),
                    ls.len()
                )));
            }
        }
        Ok(Self { mdps, labeling })
    }

    pub fn n_subsystems(&self) -> usize {
        self.mdps.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.mdps.iter().map(SubsystemMdp::n_states).collect()
    }

    /// Joint letter of a joint state, or `None` if any component is in its
    /// out-of-domain sink.
    pub fn letter(&self, cells: &[usize]) -> Option<Letter> {
        let mut letter = 0;
        for (i, &s) in cells.iter().enumerate() {
            if self.mdps[i].is_sink(s) {
                return None;
            }
            letter |= self.labeling.letters[i][s];
        }
        Some(letter)
    }
}
