//! Guard-masked Bellman operators applied one subsystem at a time.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::SubsystemMdp;
use crate::problem::Problem;
use crate::tensor::RankOneTensor;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn masked(indicator: &[f64], v: &[f64]) -> Array1<f64> {
    indicator.iter().zip(v).map(|(g, x)| g * x).collect()
}

/// `result(s) = sum_{s'} T(s' | s, policy(s)) * indicator(s') * v(s')`.
pub fn apply_subsystem(
    mdp: &SubsystemMdp,
    indicator: &[f64],
    policy_slice: &[usize],
    v: &[f64],
) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    check_len(n, v.len())?;
    check_len(n, indicator.len())?;
    check_len(n, policy_slice.len())?;
    let w = masked(indicator, v);
    policy_slice
        .iter()
        .enumerate()
        .map(|(s, &a)| {
            if a >= mdp.n_actions() {
                return Err(Error::InvalidModel(format!("action {a} out of range")));
            }
            Ok(mdp.transition(a).row(s).dot(&w))
        })
        .collect()
}

/// Same as [`apply_subsystem`] with the policy rows already gathered.
pub fn apply_controlled(matrix: &Array2<f64>, indicator: &[f64], v: &[f64]) -> Vec<f64> {
    matrix.dot(&masked(indicator, v)).to_vec()
}

/// `Q(s, a) = sum_{s'} T(s' | s, a) * indicator(s') * v(s')`.
pub fn apply_expectation_qvalues(mdp: &SubsystemMdp, indicator: &[f64], v: &[f64]) -> Result<Array2<f64>> {
    let n = mdp.n_states();
    check_len(n, v.len())?;
    check_len(n, indicator.len())?;
    Ok(qvalues_of_masked(mdp, masked(indicator, v).view()))
}

/// Per-action expectations of an already masked vector.
pub fn qvalues_of_masked(mdp: &SubsystemMdp, w: ArrayView1<f64>) -> Array2<f64> {
    let mut q = Array2::zeros((mdp.n_states(), mdp.n_actions()));
    for (a, t) in mdp.transitions().iter().enumerate() {
        q.column_mut(a).assign(&t.dot(&w));
    }
    q
}

/// Applies the operator of the `k`-th guard leaving `q` factor-wise; the
/// output stays rank-1.
pub fn apply(
    problem: &Problem,
    q: usize,
    k: usize,
    policy: &[Vec<usize>],
    t: &RankOneTensor,
) -> Result<RankOneTensor> {
    check_len(problem.n_subsystems(), t.factors.len())?;
    check_len(problem.n_subsystems(), policy.len())?;
    let factors = problem
        .system
        .mdps
        .iter()
        .enumerate()
        .map(|(i, mdp)| apply_subsystem(mdp, problem.indicator(q, k, i), &policy[i], &t.factors[i]))
        .collect::<Result<_>>()?;
    Ok(RankOneTensor::new(factors))
}

/// Policy-selected transition matrices of every live mode for one step,
/// plus their column sums (used for `l1` norms of nonnegative products).
#[derive(Debug, Clone)]
pub struct ControlledMatrices {
    /// `matrices[q][i]`; empty for modes that are not live.
    pub matrices: Vec<Vec<Array2<f64>>>,
    pub column_sums: Vec<Vec<Array1<f64>>>,
}

impl ControlledMatrices {
    /// `slices[q][i]` is the state-to-action map of subsystem `i` in mode `q`.
    pub fn build(problem: &Problem, slices: &[Vec<Vec<usize>>]) -> Result<Self> {
        let mut matrices = Vec::with_capacity(problem.n_modes());
        let mut column_sums = Vec::with_capacity(problem.n_modes());
        for q in 0..problem.n_modes() {
            if !problem.is_live(q) {
                matrices.push(Vec::new());
                column_sums.push(Vec::new());
                continue;
            }
            let mats = problem
                .system
                .mdps
                .iter()
                .zip(&slices[q])
                .map(|(mdp, slice)| mdp.controlled_matrix(slice))
                .collect::<Result<Vec<_>>>()?;
            column_sums.push(mats.iter().map(|m| m.sum_axis(ndarray::Axis(0))).collect());
            matrices.push(mats);
        }
        Ok(Self {
            matrices,
            column_sums,
        })
    }

    pub fn apply(&self, problem: &Problem, q: usize, k: usize, t: &RankOneTensor) -> RankOneTensor {
        RankOneTensor::new(
            self.matrices[q]
                .iter()
                .enumerate()
                .map(|(i, m)| apply_controlled(m, problem.indicator(q, k, i), &t.factors[i]))
                .collect(),
        )
    }
}
