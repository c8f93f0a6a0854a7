//! Tree-structured value function built from rank-1 vertices.
//!
//! The root carries the accepting mode and the all-ones tensor. A child
//! labelled `q` hangs below a parent labelled `q'` through a guard `alpha`
//! with `tau(q, alpha) = q'`, and its value is the guard-masked backup of
//! the parent value under the mode-`q` policy. Summing all vertices with the
//! same label yields that mode's value function.
//!
//! Every expansion re-evaluates all existing edges from the previous parent
//! values (needed when the policy varies over time) and grows new children
//! below the vertices created by the previous expansion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::ControlledMatrices;
use crate::policy::PolicyStep;
use crate::problem::Problem;
use crate::tensor::{CpdValue, RankOneTensor};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub q: usize,
    /// Parent id and the index of the guard in the outgoing list of `q`.
    pub parent: Option<(usize, usize)>,
    /// Expansion that created this vertex (0 for the root).
    pub created: usize,
    pub value: RankOneTensor,
}

/// Per-iteration statistics, recorded after pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub vertices: usize,
    pub new_vertices: usize,
    pub recomputed: usize,
    pub pruned: usize,
    pub frontier: usize,
    pub terms_by_mode: Vec<usize>,
    pub scalars_stored: usize,
    /// Upper bound on the sup-norm change of each mode's value in this
    /// iteration.
    pub change_bound: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ValueTree {
    shape: Vec<usize>,
    n_modes: usize,
    vertices: Vec<Option<Vertex>>,
    n_children: Vec<usize>,
    /// Whether the vertex value changed in the last expansion.
    changed: Vec<bool>,
    frontier: Vec<usize>,
    iteration: usize,
    last_step: Option<PolicyStep>,
    history: Vec<IterationRecord>,
}

pub const ROOT: usize = 0;

fn diff_bound(old: &RankOneTensor, new: &RankOneTensor) -> f64 {
    // |prod a_i - prod b_i| <= sum_i |a_i - b_i|_inf prod_{j<i} |b_j| prod_{j>i} |a_j|
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = old.factors.len();
    let mut total = 0.0;
    for i in 0..m {
        let d = old.factors[i]
            .iter()
            .zip(&new.factors[i])
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        if d == 0.0 {
            continue;
        }
        let mut w = d;
        for j in 0..m {
            if j < i {
                w *= inf(&new.factors[j]);
            } else if j > i {
                w *= inf(&old.factors[j]);
            }
        }
        total += w;
    }
    total
}

fn sup(t: &RankOneTensor) -> f64 {
    t.factors
        .iter()
        .map(|f| f.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .product()
}

impl ValueTree {
    /// Single root vertex: accepting mode, all-ones value.
    pub fn new(problem: &Problem) -> Self {
        let shape = problem.shape();
        let root = Vertex {
            q: problem.accepting(),
            parent: None,
            created: 0,
            value: RankOneTensor::ones(&shape),
        };
        let mut tree = Self {
            n_modes: problem.n_modes(),
            vertices: vec![Some(root)],
            n_children: vec![0],
            changed: vec![false],
            frontier: vec![ROOT],
            iteration: 0,
            last_step: None,
            history: Vec::new(),
            shape,
        };
        tree.history.push(tree.record(0, 0, 0, vec![0.0; problem.n_modes()]));
        tree
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn vertex(&self, id: usize) -> Option<&Vertex> {
        self.vertices.get(id).and_then(Option::as_ref)
    }

    /// Alive vertices in id order.
    pub fn vertices(&self) -> impl Iterator<Item = (usize, &Vertex)> {
        self.vertices
            .iter()
            .enumerate()
            .filter_map(|(id, v)| v.as_ref().map(|v| (id, v)))
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.is_some()).count()
    }

    pub fn edge_count(&self) -> usize {
        self.vertex_count() - 1
    }

    pub fn frontier(&self) -> &[usize] {
        &self.frontier
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    /// Scalars held by all live vertices.
    pub fn scalars_stored(&self) -> usize {
        self.vertex_count() * self.shape.iter().sum::<usize>()
    }

    pub fn terms_by_mode(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_modes];
        for (_, v) in self.vertices() {
            counts[v.q] += 1;
        }
        counts
    }

    /// Every edge the next expansion evaluates for a child labelled `q`:
    /// the parent value and the guard index in the outgoing list of `q`.
    pub fn prospective_edges<'a>(&'a self, problem: &Problem, q: usize) -> Vec<(&'a RankOneTensor, usize)> {
        let mut out = Vec::new();
        for (_, v) in self.vertices() {
            if v.q == q {
                if let Some((p, k)) = v.parent {
                    out.push((&self.vertex(p).unwrap().value, k));
                }
            }
        }
        for &f in &self.frontier {
            let parent = self.vertex(f).unwrap();
            for &(src, k) in problem.into_mode(parent.q) {
                if src == q {
                    out.push((&parent.value, k));
                }
            }
        }
        out
    }

    /// One backward step under `step`: re-evaluates existing edges and grows
    /// children below the frontier.
    pub fn expand(&mut self, problem: &Problem, step: &PolicyStep) -> Result<()> {
        for q in problem.live_modes() {
            if step.slices.get(q).is_none_or(|s| s.len() != self.shape.len()) {
                return Err(Error::MissingPolicy {
                    mode: q,
                    step: self.iteration,
                });
            }
        }
        let mats = ControlledMatrices::build(problem, &step.slices)?;
        let policy_changed: Vec<bool> = (0..self.n_modes)
            .map(|q| {
                self.last_step
                    .as_ref()
                    .is_none_or(|prev| prev.slices[q] != step.slices[q])
            })
            .collect();

        let to_update: Vec<usize> = self
            .vertices()
            .filter(|(_, v)| match v.parent {
                Some((p, _)) => policy_changed[v.q] || self.changed[p],
                None => false,
            })
            .map(|(id, _)| id)
            .collect();
        let updated: Vec<RankOneTensor> = to_update
            .par_iter()
            .map(|&id| {
                let v = self.vertex(id).unwrap();
                let (p, k) = v.parent.unwrap();
                mats.apply(problem, v.q, k, &self.vertex(p).unwrap().value)
            })
            .collect();

        let births: Vec<(usize, usize, usize)> = self
            .frontier
            .iter()
            .flat_map(|&f| {
                let pq = self.vertex(f).unwrap().q;
                problem.into_mode(pq).iter().map(move |&(q, k)| (f, q, k))
            })
            .collect();
        let born: Vec<RankOneTensor> = births
            .par_iter()
            .map(|&(f, q, k)| mats.apply(problem, q, k, &self.vertex(f).unwrap().value))
            .collect();

        let mut change = vec![0.0; self.n_modes];
        self.changed.iter_mut().for_each(|c| *c = false);
        for (id, value) in to_update.iter().zip(updated) {
            let v = self.vertices[*id].as_mut().unwrap();
            if v.value != value {
                change[v.q] += diff_bound(&v.value, &value);
                v.value = value;
                self.changed[*id] = true;
            }
        }
        self.iteration += 1;
        let mut frontier = Vec::with_capacity(born.len());
        for ((f, q, k), value) in births.into_iter().zip(born) {
            change[q] += sup(&value);
            let id = self.vertices.len();
            self.vertices.push(Some(Vertex {
                q,
                parent: Some((f, k)),
                created: self.iteration,
                value,
            }));
            self.n_children.push(0);
            self.n_children[f] += 1;
            self.changed.push(true);
            frontier.push(id);
        }
        let new_vertices = frontier.len();
        self.frontier = frontier;
        self.last_step = Some(step.clone());
        let rec = self.record(new_vertices, to_update.len(), 0, change);
        self.history.push(rec);
        Ok(())
    }

    /// Removes non-root leaves whose largest entry is below `v_th`, repeated
    /// until every leaf passes. Returns the number of removed vertices.
    pub fn prune(&mut self, v_th: f64) -> Result<usize> {
        let mut work: Vec<usize> = self
            .vertices()
            .filter(|&(id, _)| id != ROOT && self.n_children[id] == 0)
            .map(|(id, _)| id)
            .collect();
        let mut removed = 0;
        let mut lost = vec![0.0; self.n_modes];
        while let Some(id) = work.pop() {
            let Some(v) = self.vertices[id].as_ref() else { continue };
            if id == ROOT || self.n_children[id] != 0 || v.value.max_value()? >= v_th {
                continue;
            }
            let v = self.vertices[id].take().unwrap();
            lost[v.q] += sup(&v.value);
            removed += 1;
            let (p, _) = v.parent.unwrap();
            self.n_children[p] -= 1;
            if self.n_children[p] == 0 {
                work.push(p);
            }
        }
        if removed > 0 {
            self.frontier.retain(|&id| self.vertices[id].is_some());
        }
        let last = self.history.last().unwrap().clone();
        let mut change = last.change_bound;
        for (c, l) in change.iter_mut().zip(&lost) {
            *c += l;
        }
        let rec = self.record(last.new_vertices, last.recomputed, last.pruned + removed, change);
        *self.history.last_mut().unwrap() = rec;
        Ok(removed)
    }

    fn record(&self, new_vertices: usize, recomputed: usize, pruned: usize, change_bound: Vec<f64>) -> IterationRecord {
        IterationRecord {
            iteration: self.iteration,
            vertices: self.vertex_count(),
            new_vertices,
            recomputed,
            pruned,
            frontier: self.frontier.len(),
            terms_by_mode: self.terms_by_mode(),
            scalars_stored: self.scalars_stored(),
            change_bound,
        }
    }

    /// Sum-of-rank-1 value of mode `q`: one term per vertex labelled `q`.
    pub fn reconstruct_value(&self, q: usize) -> CpdValue {
        CpdValue {
            shape: self.shape.clone(),
            terms: self
                .vertices()
                .filter(|(_, v)| v.q == q)
                .map(|(_, v)| v.value.clone())
                .collect(),
        }
    }

    /// Value of mode `q` at joint state `cells`.
    pub fn value_at(&self, q: usize, cells: &[usize]) -> f64 {
        self.vertices()
            .filter(|(_, v)| v.q == q)
            .fold(0.0, |acc, (_, v)| acc + v.value.at(cells))
    }

    /// Checks the rooted-tree invariants and edge/guard consistency.
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        let fail = |msg: String| Err(Error::Consistency(msg));
        let Some(root) = self.vertex(ROOT) else {
            return fail("root vertex missing".into());
        };
        if root.q != problem.accepting() || root.parent.is_some() {
            return fail("root must be the parentless accepting vertex".into());
        }
        if root.value != RankOneTensor::ones(&self.shape) {
            return fail("root value must be all ones".into());
        }
        let mut children = vec![0usize; self.vertices.len()];
        for (id, v) in self.vertices() {
            if v.value.factors.len() != self.shape.len()
                || v.value.factors.iter().zip(&self.shape).any(|(f, &n)| f.len() != n)
            {
                return fail(format!("vertex {id} has malformed factors"));
            }
            if id == ROOT {
                continue;
            }
            if v.q == problem.accepting() {
                return fail(format!("vertex {id} carries the accepting mode"));
            }
            let Some((p, k)) = v.parent else {
                return fail(format!("vertex {id} has no parent"));
            };
            if p >= id {
                return fail(format!("vertex {id} has a younger parent {p}"));
            }
            let Some(parent) = self.vertex(p) else {
                return fail(format!("vertex {id} hangs below removed vertex {p}"));
            };
            match problem.out.of(v.q).get(k) {
                Some(t) if t.target == parent.q => {}
                _ => return fail(format!("edge {p} -> {id} does not match the automaton")),
            }
            children[p] += 1;
        }
        for (id, v) in self.vertices.iter().enumerate() {
            if v.is_some() && children[id] != self.n_children[id] {
                return fail(format!("child count of vertex {id} is stale"));
            }
        }
        if self.frontier.iter().any(|&id| self.vertex(id).is_none()) {
            return fail("frontier contains a removed vertex".into());
        }
        Ok(())
    }

    pub fn snapshot(&self, problem: &Problem, v_th: f64, config_hash: &str) -> TreeSnapshot {
        let aps = &problem.system.labeling.ap_names;
        TreeSnapshot {
            format_version: SNAPSHOT_VERSION,
            config_hash: config_hash.to_string(),
            iteration: self.iteration,
            v_th,
            shape: self.shape.clone(),
            vertices: self
                .vertices()
                .map(|(id, v)| VertexRecord {
                    id,
                    q: v.q,
                    factors: v.value.factors.clone(),
                })
                .collect(),
            edges: self
                .vertices()
                .filter_map(|(id, v)| {
                    v.parent.map(|(p, k)| EdgeRecord {
                        parent: p,
                        child: id,
                        guard: problem.out.of(v.q)[k].guard.display(aps).to_string(),
                    })
                })
                .collect(),
            frontier: self.frontier.clone(),
        }
    }

    /// Per-mode term counts against the recursive upper bound.
    pub fn rank_report(&self, problem: &Problem) -> RankLedger {
        RankLedger::new(problem, &self.history)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub q: usize,
    pub factors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub parent: usize,
    pub child: usize,
    pub guard: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub format_version: u32,
    pub config_hash: String,
    pub iteration: usize,
    pub v_th: f64,
    pub shape: Vec<usize>,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    pub frontier: Vec<usize>,
}

impl TreeSnapshot {
    /// Scalars stored, recomputed from the serialized factors.
    pub fn scalars_stored(&self) -> usize {
        self.vertices
            .iter()
            .map(|v| v.factors.iter().map(Vec::len).sum::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub q: usize,
    pub k: usize,
    pub observed: usize,
    pub bound: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLedger {
    pub rows: Vec<RankRow>,
}

impl RankLedger {
    /// Bound: `R(q_f, k) = 1`, `R(q, 0) = 0` otherwise, and
    /// `R(q, k+1) = sum over outgoing (alpha, q') of R(q', k)`.
    pub fn bounds(problem: &Problem, horizon: usize) -> Vec<Vec<u64>> {
        let n = problem.n_modes();
        let acc = problem.accepting();
        let mut cur: Vec<u64> = (0..n).map(|q| u64::from(q == acc)).collect();
        let mut all = vec![cur.clone()];
        for _ in 0..horizon {
            let next: Vec<u64> = (0..n)
                .map(|q| {
                    if q == acc {
                        1
                    } else {
                        problem
                            .out
                            .of(q)
                            .iter()
                            .fold(0u64, |s, t| s.saturating_add(cur[t.target]))
                    }
                })
                .collect();
            all.push(next.clone());
            cur = next;
        }
        all
    }

    pub fn new(problem: &Problem, history: &[IterationRecord]) -> Self {
        let horizon = history.last().map_or(0, |r| r.iteration);
        let bounds = Self::bounds(problem, horizon);
        let mut rows = Vec::new();
        for rec in history {
            for (q, &observed) in rec.terms_by_mode.iter().enumerate() {
                rows.push(RankRow {
                    q,
                    k: rec.iteration,
                    observed,
                    bound: bounds[rec.iteration][q],
                });
            }
        }
        Self { rows }
    }

    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.observed as u64 <= r.bound)
    }

    pub fn observed(&self, q: usize) -> Vec<usize> {
        self.rows.iter().filter(|r| r.q == q).map(|r| r.observed).collect()
    }
}
