//! Decoupled policies and the per-subsystem weighted-argmax heuristic.
//!
//! For a mode `q` the heuristic looks at every edge of the next tree whose
//! child is labelled `q`. Each edge `e` contributes the masked parent factor
//! `u_e^(i) = guard_e^(i) * v_e^(i)` of subsystem `i`, weighted by
//! `c_e^(i) = prod_{j != i} |T_j u_e^(j)|_1` where `T_j` is the current
//! controlled matrix of subsystem `j`. The action of state `s` of subsystem
//! `i` is then the argmax over `a` of `(T_a sum_e c_e^(i) u_e^(i))(s)`.
//! Subsystems are revisited round-robin for a configurable number of passes.

use ndarray::{Array1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::qvalues_of_masked;
use crate::problem::Problem;
use crate::tree::ValueTree;

/// Actions of every mode and subsystem for one backward step:
/// `slices[q][i][s]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub slices: Vec<Vec<Vec<usize>>>,
}

impl PolicyStep {
    /// Action 0 everywhere.
    pub fn zeros(problem: &Problem) -> Self {
        let shape = problem.shape();
        Self {
            slices: (0..problem.n_modes())
                .map(|_| shape.iter().map(|&n| vec![0; n]).collect())
                .collect(),
        }
    }

    pub fn slice(&self, q: usize, i: usize) -> &[usize] {
        &self.slices[q][i]
    }
}

/// A possibly time-varying decoupled policy. `steps[k]` is used when `k+1`
/// steps remain; a single step means the policy is stationary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoupledPolicy {
    pub steps: Vec<PolicyStep>,
}

impl DecoupledPolicy {
    pub fn stationary(step: PolicyStep) -> Self {
        Self { steps: vec![step] }
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    /// Step to use at time `t` of an episode with horizon `horizon`.
    pub fn step_at(&self, t: usize, horizon: usize) -> Result<&PolicyStep> {
        if self.is_stationary() {
            return Ok(&self.steps[0]);
        }
        let k = horizon
            .checked_sub(t + 1)
            .filter(|&k| k < self.steps.len())
            .ok_or(Error::MissingPolicy { mode: 0, step: t })?;
        Ok(&self.steps[k])
    }

    /// Step used by backward iteration `k`.
    pub fn iteration_step(&self, k: usize) -> Result<&PolicyStep> {
        if self.is_stationary() {
            return Ok(&self.steps[0]);
        }
        self.steps.get(k).ok_or(Error::MissingPolicy { mode: 0, step: k })
    }

    /// Checks that every step has one action per state of every subsystem
    /// for every mode.
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        let shape = problem.shape();
        for (k, step) in self.steps.iter().enumerate() {
            if step.slices.len() != problem.n_modes() {
                return Err(Error::MissingPolicy { mode: step.slices.len(), step: k });
            }
            for (q, per_sub) in step.slices.iter().enumerate() {
                let ok = per_sub.len() == shape.len()
                    && per_sub.iter().zip(&shape).enumerate().all(|(i, (s, &n))| {
                        s.len() == n && s.iter().all(|&a| a < problem.system.mdps[i].n_actions())
                    });
                if !ok {
                    return Err(Error::MissingPolicy { mode: q, step: k });
                }
            }
        }
        Ok(())
    }
}

/// Weighted argmax over actions for subsystem `i`; ties go to the smallest
/// action and the sink keeps action 0.
fn argmax_actions(problem: &Problem, i: usize, w: &Array1<f64>) -> Vec<usize> {
    let mdp = &problem.system.mdps[i];
    let q = qvalues_of_masked(mdp, w.view());
    q.axis_iter(Axis(0))
        .enumerate()
        .map(|(s, row)| {
            if mdp.is_sink(s) {
                return 0;
            }
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// One candidate edge of the next tree entering mode `q`: the masked parent
/// factors `u^(j)` for every subsystem.
pub struct EdgeInput {
    pub masked: Vec<Array1<f64>>,
}

/// Masked factors of every edge the next expansion will evaluate for `q`.
pub fn edge_inputs(problem: &Problem, tree: &ValueTree, q: usize) -> Vec<EdgeInput> {
    tree.prospective_edges(problem, q)
        .into_iter()
        .map(|(parent, k)| EdgeInput {
            masked: parent
                .factors
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    problem
                        .indicator(q, k, i)
                        .iter()
                        .zip(f)
                        .map(|(g, x)| g * x)
                        .collect()
                })
                .collect(),
        })
        .collect()
}

/// `colsum(M_j) . u_e^(j)` for every edge, with `M_j` the matrix of
/// subsystem `j` under `slice`.
fn edge_dots(problem: &Problem, j: usize, edges: &[EdgeInput], slice: &[usize]) -> Result<Vec<f64>> {
    let col_sums = problem.system.mdps[j].controlled_matrix(slice)?.sum_axis(Axis(0));
    Ok(edges.iter().map(|e| col_sums.dot(&e.masked[j])).collect())
}

fn weighted_map(problem: &Problem, i: usize, edges: &[EdgeInput], weight: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut w = Array1::<f64>::zeros(problem.system.mdps[i].n_states());
    for (e, edge) in edges.iter().enumerate() {
        let c = weight(e);
        if c != 0.0 {
            w.scaled_add(c, &edge.masked[i]);
        }
    }
    argmax_actions(problem, i, &w)
}

fn product_except(dots: &[Vec<f64>], i: usize, e: usize) -> f64 {
    dots.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, d)| d[e])
        .product()
}

/// Weighted-argmax map for subsystem `i` in mode `q` with the other
/// subsystems fixed at `current`. `weights` overrides the edge weights.
pub fn optimize_mode_subsystem(
    problem: &Problem,
    q: usize,
    i: usize,
    edges: &[EdgeInput],
    current: &[Vec<usize>],
    weights: Option<&[f64]>,
) -> Result<Vec<usize>> {
    if edges.is_empty() {
        return Err(Error::Consistency(format!("mode {q} has no incoming edges")));
    }
    if let Some(ws) = weights {
        return Ok(weighted_map(problem, i, edges, |e| ws[e]));
    }
    let dots = (0..problem.n_subsystems())
        .map(|j| if j == i { Ok(Vec::new()) } else { edge_dots(problem, j, edges, &current[j]) })
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_map(problem, i, edges, |e| product_except(&dots, i, e)))
}

/// Optimizes every live mode by `passes` round-robin sweeps over the
/// subsystems, starting from `prev`.
pub fn optimize_step(problem: &Problem, tree: &ValueTree, prev: &PolicyStep, passes: usize) -> Result<PolicyStep> {
    let m = problem.n_subsystems();
    let modes: Vec<usize> = problem.live_modes().collect();
    let updated: Vec<(usize, Vec<Vec<usize>>)> = modes
        .par_iter()
        .map(|&q| {
            let mut current = prev.slices[q].clone();
            let edges = edge_inputs(problem, tree, q);
            if edges.is_empty() {
                return Ok((q, current));
            }
            if passes == 0 {
                return Ok((q, current));
            }
            // Edge weights only change for the subsystem just updated.
            let mut dots = (0..m)
                .map(|j| edge_dots(problem, j, &edges, &current[j]))
                .collect::<Result<Vec<_>>>()?;
            for _ in 0..passes {
                for i in 0..m {
                    current[i] = weighted_map(problem, i, &edges, |e| product_except(&dots, i, e));
                    dots[i] = edge_dots(problem, i, &edges, &current[i])?;
                }
            }
            Ok((q, current))
        })
        .collect::<Result<_>>()?;
    let mut next = prev.clone();
    for (q, slices) in updated {
        next.slices[q] = slices;
    }
    Ok(next)
}
