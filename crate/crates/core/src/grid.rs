//! Grid abstraction of affine Gaussian difference equations
//! `x+ = A x + B u + w`, `w ~ N(0, diag(noise_std^2))`, into finite MDPs.
//!
//! States are the cells of a uniform partition of the state box plus one
//! absorbing sink that collects all probability mass leaving the box. Actions
//! are a uniform grid of the input box. Transition probabilities are computed
//! from the nominal successor of the cell center; with diagonal noise the
//! probability of a target cell factors over dimensions.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{GridGeometry, Labeling, Letter, SubsystemMdp};

/// Upper bound on `n_states^2 * n_actions` for a single subsystem.
pub const MAX_MATRIX_ENTRIES: usize = 400_000_000;

const BOUNDARY_TOL: f64 = 1e-9;

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidModel(format!(
                "{what}: degenerate interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemDynamics {
    /// `d x d`, row-major.
    pub a: Vec<Vec<f64>>,
    /// `d x p`, row-major.
    pub b: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub state_box: Vec<Interval>,
    pub input_box: Vec<Interval>,
}

impl SubsystemDynamics {
    pub fn state_dim(&self) -> usize {
        self.state_box.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.len()
    }

    /// Scalar dynamics `x+ = a x + b u + w`.
    pub fn scalar(a: f64, b: f64, noise_std: f64, state: Interval, input: Interval) -> Self {
        Self {
            a: vec![vec![a]],
            b: vec![vec![b]],
            noise_std: vec![noise_std],
            state_box: vec![state],
            input_box: vec![input],
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        let p = self.input_dim();
        if d == 0 {
            return Err(Error::InvalidModel("state dimension must be positive".into()));
        }
        if self.a.len() != d || self.a.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel(format!("A must be {d}x{d}")));
        }
        if self.b.len() != d || self.b.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidModel(format!("B must be {d}x{p}")));
        }
        if self.noise_std.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.noise_std.len(),
            });
        }
        if let Some(s) = self.noise_std.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel(format!("noise_std entries must be positive, got {s}")));
        }
        for iv in &self.state_box {
            iv.check("state_box")?;
        }
        for iv in &self.input_box {
            iv.check("input_box")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells_per_dim: Vec<usize>,
    pub inputs_per_dim: Vec<usize>,
}

/// Atomic proposition `ap_name` holds in a cell of subsystem `subsystem_index`
/// iff `output_row . center` lies in `interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingPredicate {
    pub ap_name: String,
    pub subsystem_index: usize,
    pub output_row: Option<Vec<f64>>,
    pub interval: Interval,
}

/// Emitted when an AP interval boundary falls strictly inside a grid cell;
/// such cells are classified by their center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryWarning {
    pub ap_name: String,
    pub boundary: f64,
    pub dimension: usize,
}

/// `P(lo <= X <= hi)` for `X ~ N(mean, std^2)`, evaluated on whichever tail
/// keeps the subtraction well conditioned.
pub fn normal_interval_probability(lo: f64, hi: f64, mean: f64, std: f64) -> f64 {
    let a = (lo - mean) / std;
    let b = (hi - mean) / std;
    let upper_tail = |x: f64| 0.5 * erfc(x / std::f64::consts::SQRT_2);
    let lower_tail = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    let p = if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        lower_tail(b) - lower_tail(a)
    } else {
        1.0 - lower_tail(a) - upper_tail(b)
    };
    p.max(0.0)
}

fn uniform_points(iv: &Interval, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (iv.lo + iv.hi)];
    }
    let step = (iv.hi - iv.lo) / (count - 1) as f64;
    (0..count).map(|j| iv.lo + j as f64 * step).collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect()
    })
}

/// Builds the finite MDP of one subsystem. The sink is the last state.
pub fn build_subsystem_mdp(dyn_: &SubsystemDynamics, grid: &GridSpec) -> Result<SubsystemMdp> {
    dyn_.validate()?;
    let d = dyn_.state_dim();
    if grid.cells_per_dim.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: grid.cells_per_dim.len(),
        });
    }
    if grid.inputs_per_dim.len() != dyn_.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: dyn_.input_dim(),
            got: grid.inputs_per_dim.len(),
        });
    }
    if grid.cells_per_dim.iter().chain(&grid.inputs_per_dim).any(|&c| c == 0) {
        return Err(Error::InvalidModel("grid counts must be at least 1".into()));
    }

    let geometry = GridGeometry {
        lo: dyn_.state_box.iter().map(|iv| iv.lo).collect(),
        hi: dyn_.state_box.iter().map(|iv| iv.hi).collect(),
        cells: grid.cells_per_dim.clone(),
    };
    let n_cells = geometry.n_cells();
    let n = n_cells + 1;
    let axes: Vec<Vec<f64>> = dyn_
        .input_box
        .iter()
        .zip(&grid.inputs_per_dim)
        .map(|(iv, &k)| uniform_points(iv, k))
        .collect();
    let actions = cartesian(&axes);
    if n.saturating_mul(n).saturating_mul(actions.len()) > MAX_MATRIX_ENTRIES {
        return Err(Error::DenseCap {
            requested: n.saturating_mul(n).saturating_mul(actions.len()),
            cap: MAX_MATRIX_ENTRIES,
        });
    }
    let centers: Vec<Vec<f64>> = (0..n_cells).map(|c| geometry.center(c)).collect();

    let mut transitions = Vec::with_capacity(actions.len());
    let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); d];
    for u in &actions {
        let mut t = Array2::<f64>::zeros((n, n));
        for (c, center) in centers.iter().enumerate() {
            for k in 0..d {
                let mean: f64 = dyn_.a[k].iter().zip(center).map(|(a, x)| a * x).sum::<f64>()
                    + dyn_.b[k].iter().zip(u).map(|(b, v)| b * v).sum::<f64>();
                let w = geometry.width(k);
                per_dim[k] = (0..geometry.cells[k])
                    .map(|j| {
                        let lo = geometry.lo[k] + j as f64 * w;
                        normal_interval_probability(lo, lo + w, mean, dyn_.noise_std[k])
                    })
                    .collect();
            }
            let mut row = t.row_mut(c);
            let mut inside = 0.0;
            for target in 0..n_cells {
                let mut rem = target;
                let mut p = 1.0;
                for k in (0..d).rev() {
                    p *= per_dim[k][rem % geometry.cells[k]];
                    rem /= geometry.cells[k];
                }
                row[target] = p;
                inside += p;
            }
            row[n_cells] = (1.0 - inside).max(0.0);
        }
        t[[n_cells, n_cells]] = 1.0;
        transitions.push(t);
    }

    let mut mdp = SubsystemMdp::new(transitions, Some(n_cells))?;
    mdp.cell_centers = centers;
    mdp.action_values = actions;
    mdp.geometry = Some(geometry);
    Ok(mdp)
}

fn output_of(pred: &LabelingPredicate, center: &[f64]) -> Result<f64> {
    match &pred.output_row {
        Some(row) => {
            if row.len() != center.len() {
                return Err(Error::DimensionMismatch {
                    expected: center.len(),
                    got: row.len(),
                });
            }
            Ok(row.iter().zip(center).map(|(r, x)| r * x).sum())
        }
        None if center.len() == 1 => Ok(center[0]),
        None => Err(Error::InvalidModel(format!(
            "AP `{}`: output_row is required for multi-dimensional subsystems",
            pred.ap_name
        ))),
    }
}

/// The state dimension an output row selects, when it is a unit row.
fn selected_dimension(pred: &LabelingPredicate, dim: usize) -> Option<usize> {
    match &pred.output_row {
        None => (dim == 1).then_some(0),
        Some(row) => {
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
            (nz.len() == 1 && row[nz[0]] == 1.0).then(|| nz[0])
        }
    }
}

/// 0/1 indicator of `pred` over the states of `mdp`; the sink entry is 0.
pub fn build_indicator(
    pred: &LabelingPredicate,
    mdp: &SubsystemMdp,
) -> Result<(Vec<u8>, Vec<BoundaryWarning>)> {
    pred.interval.check(&pred.ap_name)?;
    let geometry = mdp.geometry.as_ref().ok_or_else(|| {
        Error::InvalidModel("indicator construction needs a gridded MDP".into())
    })?;
    let mut out = vec![0u8; mdp.n_states()];
    for (c, center) in mdp.cell_centers.iter().enumerate() {
        if pred.interval.contains(output_of(pred, center)?) {
            out[c] = 1;
        }
    }
    let mut warnings = Vec::new();
    if let Some(k) = selected_dimension(pred, geometry.cells.len()) {
        let w = geometry.width(k);
        for b in [pred.interval.lo, pred.interval.hi] {
            if b <= geometry.lo[k] || b >= geometry.hi[k] {
                continue;
            }
            let t = (b - geometry.lo[k]) / w;
            if (t - t.round()).abs() > BOUNDARY_TOL * t.abs().max(1.0) {
                warnings.push(BoundaryWarning {
                    ap_name: pred.ap_name.clone(),
                    boundary: b,
                    dimension: k,
                });
            }
        }
    }
    Ok((out, warnings))
}

/// Names of the APs that hold at the given joint cell.
pub fn label_letter(
    cells: &[usize],
    preds: &[LabelingPredicate],
    mdps: &[SubsystemMdp],
) -> Result<BTreeSet<String>> {
    if cells.len() != mdps.len() {
        return Err(Error::DimensionMismatch {
            expected: mdps.len(),
            got: cells.len(),
        });
    }
    let mut out = BTreeSet::new();
    for pred in preds {
        let mdp = mdps.get(pred.subsystem_index).ok_or_else(|| {
            Error::InvalidModel(format!("AP `{}` references a missing subsystem", pred.ap_name))
        })?;
        let s = cells[pred.subsystem_index];
        if s >= mdp.n_states() {
            return Err(Error::InvalidModel(format!("state {s} out of range")));
        }
        if mdp.is_sink(s) {
            continue;
        }
        if pred.interval.contains(output_of(pred, &mdp.cell_centers[s])?) {
            out.insert(pred.ap_name.clone());
        }
    }
    Ok(out)
}

/// Assembles the per-subsystem labeling from all predicates; APs are indexed
/// in declaration order.
pub fn build_labeling(
    preds: &[LabelingPredicate],
    mdps: &[SubsystemMdp],
) -> Result<(Labeling, Vec<BoundaryWarning>)> {
    let mut letters: Vec<Vec<Letter>> = mdps.iter().map(|m| vec![0; m.n_states()]).collect();
    let mut warnings = Vec::new();
    for (j, pred) in preds.iter().enumerate() {
        let mdp = mdps.get(pred.subsystem_index).ok_or_else(|| {
            Error::InvalidModel(format!(
                "AP `{}` references subsystem {} of {}",
                pred.ap_name,
                pred.subsystem_index,
                mdps.len()
            ))
        })?;
        let (ind, w) = build_indicator(pred, mdp)?;
        warnings.extend(w);
        for (s, &v) in ind.iter().enumerate() {
            if v == 1 {
                letters[pred.subsystem_index][s] |= 1 << j;
            }
        }
    }
    let labeling = Labeling::new(
        preds.iter().map(|p| p.ap_name.clone()).collect(),
        preds.iter().map(|p| p.subsystem_index).collect(),
        letters,
    )?;
    Ok((labeling, warnings))
}
