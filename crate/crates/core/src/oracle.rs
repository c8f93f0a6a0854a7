//! Dense value iteration on the product of the joint grid and the automaton.
//!
//! Values are stored as full tensors over the joint state space, one per
//! mode. The joint kernel is never formed: it is applied as a sequence of
//! mode products, one subsystem matrix at a time.

use std::io::Write;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Letter;
use crate::policy::DecoupledPolicy;
use crate::problem::Problem;
use crate::tensor::DenseTensor;

/// Value tensors of every mode after `k` backward steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseValueField {
    pub k: usize,
    pub values: Vec<DenseTensor>,
}

impl DenseValueField {
    /// Satisfaction value at `s0` with the initial label taken into account.
    pub fn satisfaction(&self, problem: &Problem, s0: &[usize]) -> f64 {
        match problem.initial_mode(s0) {
            None => 0.0,
            Some(q) if q == problem.accepting() => 1.0,
            Some(q) => self.values[q].get(s0),
        }
    }
}

/// Coupled policy over joint actions: `steps[k][q][s]` is the row-major joint
/// action index used when `k+1` steps remain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPolicy {
    pub steps: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone)]
pub struct InfiniteResult {
    pub field: DenseValueField,
    pub iterations: usize,
    pub converged: bool,
    pub last_change: f64,
}

struct JointIndex {
    shape: Vec<usize>,
    letters: Vec<Option<Letter>>,
}

impl JointIndex {
    fn new(problem: &Problem, cap: usize) -> Result<Self> {
        let shape = problem.shape();
        let n: usize = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
        let requested = n.saturating_mul(problem.n_modes());
        if requested > cap {
            return Err(Error::DenseCap { requested, cap });
        }
        let mut cells = vec![0; shape.len()];
        let mut letters = Vec::with_capacity(n);
        for _ in 0..n {
            letters.push(problem.system.letter(&cells));
            for k in (0..shape.len()).rev() {
                cells[k] += 1;
                if cells[k] < shape[k] {
                    break;
                }
                cells[k] = 0;
            }
        }
        Ok(Self { shape, letters })
    }

    fn len(&self) -> usize {
        self.letters.len()
    }

    /// `M_q(s') = V_{tau(q, L(s'))}(s')`, zero on out-of-domain states.
    fn next_values(&self, problem: &Problem, q: usize, values: &[DenseTensor]) -> Vec<f64> {
        self.letters
            .iter()
            .enumerate()
            .map(|(s, l)| match l {
                Some(l) => values[problem.dfa.step(q, *l)].data[s],
                None => 0.0,
            })
            .collect()
    }
}

/// `out = X x_j M` where `x` has `shape` and `M` acts on dimension `j`.
fn mode_product(x: &[f64], shape: &[usize], j: usize, m: &Array2<f64>, out: &mut [f64]) {
    let n = shape[j];
    let left: usize = shape[..j].iter().product();
    let right: usize = shape[j + 1..].iter().product();
    if right == 1 {
        let xv = ArrayView2::from_shape((left, n), x).unwrap();
        let mut ov = ArrayViewMut2::from_shape((left, n), out).unwrap();
        general_mat_mul(1.0, &xv, &m.t(), 0.0, &mut ov);
        return;
    }
    let block = n * right;
    for (xb, ob) in x.chunks(block).zip(out.chunks_mut(block)) {
        let xv = ArrayView2::from_shape((n, right), xb).unwrap();
        let mut ov = ArrayViewMut2::from_shape((n, right), ob).unwrap();
        general_mat_mul(1.0, m, &xv, 0.0, &mut ov);
    }
}

/// Applies the product kernel `(M_1 (x) ... (x) M_m)` to `x`.
pub fn apply_kernel(shape: &[usize], mats: &[&Array2<f64>], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    let mut buf = vec![0.0; x.len()];
    for (j, m) in mats.iter().enumerate() {
        mode_product(&cur, shape, j, m, &mut buf);
        std::mem::swap(&mut cur, &mut buf);
    }
    cur
}

fn initial_field(problem: &Problem, shape: &[usize]) -> Result<DenseValueField> {
    let n: usize = shape.iter().product();
    let values = (0..problem.n_modes())
        .map(|q| {
            let fill = if q == problem.accepting() { 1.0 } else { 0.0 };
            DenseTensor::from_data(shape, vec![fill; n])
        })
        .collect::<Result<_>>()?;
    Ok(DenseValueField { k: 0, values })
}

fn decoupled_matrices(problem: &Problem, policy: &DecoupledPolicy, k: usize, q: usize) -> Result<Vec<Array2<f64>>> {
    let step = policy.iteration_step(k)?;
    problem
        .system
        .mdps
        .iter()
        .enumerate()
        .map(|(i, mdp)| mdp.controlled_matrix(&step.slices[q][i]))
        .collect()
}

/// Finite-horizon values of a decoupled policy, `k = 0..=horizon`.
pub fn dense_vi_fixed_policy(
    problem: &Problem,
    policy: &DecoupledPolicy,
    horizon: usize,
    cap: usize,
) -> Result<Vec<DenseValueField>> {
    let index = JointIndex::new(problem, cap)?;
    let mut history = vec![initial_field(problem, &index.shape)?];
    for k in 0..horizon {
        let prev = &history[k].values;
        let values = (0..problem.n_modes())
            .into_par_iter()
            .map(|q| {
                if !problem.is_live(q) {
                    return Ok(prev[q].clone());
                }
                let mats = decoupled_matrices(problem, policy, k, q)?;
                let refs: Vec<&Array2<f64>> = mats.iter().collect();
                let next = index.next_values(problem, q, prev);
                DenseTensor::from_data(&index.shape, apply_kernel(&index.shape, &refs, &next))
            })
            .collect::<Result<_>>()?;
        history.push(DenseValueField { k: k + 1, values });
    }
    Ok(history)
}

/// Same recursion written as a sum over the outgoing guards of each mode:
/// `V_q <- sum_{(alpha, q')} T (1_alpha * V_q')`.
pub fn dense_vi_operator_form(
    problem: &Problem,
    policy: &DecoupledPolicy,
    horizon: usize,
    cap: usize,
) -> Result<Vec<DenseValueField>> {
    let index = JointIndex::new(problem, cap)?;
    let shape = index.shape.clone();
    let mut history = vec![initial_field(problem, &shape)?];
    for k in 0..horizon {
        let prev = &history[k].values;
        let values = (0..problem.n_modes())
            .into_par_iter()
            .map(|q| {
                if !problem.is_live(q) {
                    return Ok(prev[q].clone());
                }
                let mats = decoupled_matrices(problem, policy, k, q)?;
                let refs: Vec<&Array2<f64>> = mats.iter().collect();
                let mut acc = vec![0.0; index.len()];
                for (kk, t) in problem.out.of(q).iter().enumerate() {
                    let mut mask = DenseTensor::from_data(&shape, vec![0.0; index.len()])?;
                    mask.add_rank_one(&crate::tensor::RankOneTensor::new(
                        (0..shape.len()).map(|i| problem.indicator(q, kk, i).to_vec()).collect(),
                    ));
                    let masked: Vec<f64> = mask
                        .data
                        .iter()
                        .zip(&prev[t.target].data)
                        .map(|(g, v)| g * v)
                        .collect();
                    for (a, b) in acc.iter_mut().zip(apply_kernel(&shape, &refs, &masked)) {
                        *a += b;
                    }
                }
                DenseTensor::from_data(&shape, acc)
            })
            .collect::<Result<_>>()?;
        history.push(DenseValueField { k: k + 1, values });
    }
    Ok(history)
}

/// One optimal backup of mode `q`: maximum over joint actions, enumerated
/// row-major with the first subsystem slowest; ties keep the smaller index.
fn optimal_backup(problem: &Problem, shape: &[usize], next: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let m = shape.len();
    let n = next.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut arg = vec![0u32; n];
    let mut buffers: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
    fn recurse(
        problem: &Problem,
        shape: &[usize],
        depth: usize,
        input: &[f64],
        buffers: &mut [Vec<f64>],
        joint: u32,
        best: &mut [f64],
        arg: &mut [u32],
    ) {
        let mdp = &problem.system.mdps[depth];
        let (head, tail) = buffers.split_at_mut(1);
        for a in 0..mdp.n_actions() {
            mode_product(input, shape, depth, mdp.transition(a), &mut head[0]);
            let j = joint * mdp.n_actions() as u32 + a as u32;
            if depth + 1 == shape.len() {
                for (s, &v) in head[0].iter().enumerate() {
                    if v > best[s] {
                        best[s] = v;
                        arg[s] = j;
                    }
                }
            } else {
                recurse(problem, shape, depth + 1, &head[0], tail, j, best, arg);
            }
        }
    }
    recurse(problem, shape, 0, next, &mut buffers, 0, &mut best, &mut arg);
    (best, arg)
}

fn optimal_step(
    problem: &Problem,
    index: &JointIndex,
    prev: &[DenseTensor],
) -> Result<(Vec<DenseTensor>, Vec<Vec<u32>>)> {
    let results: Vec<(DenseTensor, Vec<u32>)> = (0..problem.n_modes())
        .into_par_iter()
        .map(|q| {
            if !problem.is_live(q) {
                return Ok((prev[q].clone(), vec![0; index.len()]));
            }
            let next = index.next_values(problem, q, prev);
            let (v, a) = optimal_backup(problem, &index.shape, &next);
            Ok((DenseTensor::from_data(&index.shape, v)?, a))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// Bellman-optimal finite-horizon values and the maximizing joint policy.
pub fn dense_vi_optimal(problem: &Problem, horizon: usize, cap: usize) -> Result<(Vec<DenseValueField>, JointPolicy)> {
    let index = JointIndex::new(problem, cap)?;
    let mut history = vec![initial_field(problem, &index.shape)?];
    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let (values, policy) = optimal_step(problem, &index, &history[k].values)?;
        history.push(DenseValueField { k: k + 1, values });
        steps.push(policy);
    }
    Ok((history, JointPolicy { steps }))
}

/// Optimal joint policy over `horizon` steps.
pub fn exact_optimal_policy(problem: &Problem, horizon: usize, cap: usize) -> Result<JointPolicy> {
    dense_vi_optimal(problem, horizon, cap).map(|(_, p)| p)
}

/// Optimal values iterated until the sup-norm change drops below
/// `tolerance` or `max_iterations` is reached.
pub fn dense_vi_infinite(problem: &Problem, tolerance: f64, max_iterations: usize, cap: usize) -> Result<InfiniteResult> {
    let index = JointIndex::new(problem, cap)?;
    let mut field = initial_field(problem, &index.shape)?;
    let mut last_change = f64::INFINITY;
    for it in 0..max_iterations {
        let (values, _) = optimal_step(problem, &index, &field.values)?;
        last_change = values
            .iter()
            .zip(&field.values)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        field = DenseValueField { k: it + 1, values };
        if last_change < tolerance {
            return Ok(InfiniteResult {
                iterations: it + 1,
                field,
                converged: true,
                last_change,
            });
        }
    }
    Ok(InfiniteResult {
        iterations: max_iterations,
        field,
        converged: false,
        last_change,
    })
}

/// Explicit joint transition matrix for one joint action (small instances
/// only).
pub fn joint_kernel(problem: &Problem, joint_action: &[usize], cap: usize) -> Result<Array2<f64>> {
    let n: usize = problem.shape().iter().product();
    if n.saturating_mul(n) > cap {
        return Err(Error::DenseCap {
            requested: n.saturating_mul(n),
            cap,
        });
    }
    let mut k = Array2::from_elem((1, 1), 1.0);
    for (mdp, &a) in problem.system.mdps.iter().zip(joint_action) {
        let t = mdp.transition(a);
        let (r, c) = (k.nrows(), k.ncols());
        let mut next = Array2::zeros((r * t.nrows(), c * t.ncols()));
        for ((i, j), &x) in k.indexed_iter() {
            next.slice_mut(ndarray::s![i * t.nrows()..(i + 1) * t.nrows(), j * t.ncols()..(j + 1) * t.ncols()])
                .assign(&(t * x));
        }
        k = next;
    }
    Ok(k)
}

/// Writes a per-state comparison of two value tensors of mode `q`:
/// joint cell indices, cell centers when known, both values and their
/// difference.
pub fn write_error_map<W: Write>(
    out: W,
    problem: &Problem,
    reference: &DenseTensor,
    candidate: &DenseTensor,
) -> Result<()> {
    let m = problem.n_subsystems();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..m).map(|i| format!("cell_{i}")).collect();
    header.extend((0..m).map(|i| format!("center_{i}")));
    header.extend(["dense".to_string(), "tree".to_string(), "error".to_string()]);
    w.write_record(&header)?;
    for flat in 0..reference.len() {
        let cells = reference.unravel(flat);
        let mut row: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        for (i, &c) in cells.iter().enumerate() {
            let mdp = &problem.system.mdps[i];
            row.push(match mdp.cell_centers.get(c) {
                Some(x) if !mdp.is_sink(c) => x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
                _ => String::new(),
            });
        }
        let (d, t) = (reference.data[flat], candidate.data[flat]);
        row.extend([d.to_string(), t.to_string(), (d - t).to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
