//! Drivers that alternate policy optimization, tree expansion and pruning.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{optimize_step, DecoupledPolicy, PolicyStep};
use crate::problem::Problem;
use crate::tree::ValueTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiniteSettings {
    pub tolerance: f64,
    pub window: usize,
    pub max_iterations: usize,
}

impl Default for InfiniteSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            window: 3,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSettings {
    pub horizon: Horizon,
    pub v_th: f64,
    pub passes: usize,
    pub infinite: InfiniteSettings,
}

impl SynthesisSettings {
    pub fn finite(horizon: usize, v_th: f64) -> Self {
        Self {
            horizon: Horizon::Finite(horizon),
            v_th,
            passes: 2,
            infinite: InfiniteSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub tree: ValueTree,
    /// Time-varying policy with one step per expansion.
    pub policy: DecoupledPolicy,
    /// Number of expansions performed (the horizon the bound refers to).
    pub horizon: usize,
    /// Infinite-horizon runs only: whether the stopping rule was met before
    /// the iteration cap.
    pub converged: Option<bool>,
}

impl Synthesis {
    pub fn lower_bound(&self, problem: &Problem, s0: &[usize]) -> f64 {
        lower_bound(problem, &self.tree, s0)
    }
}

/// Satisfaction bound at `s0`: 1 if the initial label already accepts, 0 if
/// `s0` is out of domain, otherwise the tree value of the initial mode.
pub fn lower_bound(problem: &Problem, tree: &ValueTree, s0: &[usize]) -> f64 {
    match problem.initial_mode(s0) {
        None => 0.0,
        Some(q) if q == problem.accepting() => 1.0,
        Some(q) => tree.value_at(q, s0),
    }
}

/// Synthesizes a decoupled policy and the tree value it certifies.
pub fn synthesize(problem: &Problem, settings: &SynthesisSettings) -> Result<Synthesis> {
    let mut tree = ValueTree::new(problem);
    let mut steps: Vec<PolicyStep> = Vec::new();
    let mut prev = PolicyStep::zeros(problem);
    match settings.horizon {
        Horizon::Finite(n) => {
            for _ in 0..n {
                let step = optimize_step(problem, &tree, &prev, settings.passes)?;
                tree.expand(problem, &step)?;
                tree.prune(settings.v_th)?;
                steps.push(step.clone());
                prev = step;
            }
            let horizon = steps.len();
            Ok(Synthesis {
                tree,
                policy: DecoupledPolicy { steps },
                horizon,
                converged: None,
            })
        }
        Horizon::Infinite => {
            let inf = &settings.infinite;
            let mut frozen: Option<PolicyStep> = None;
            let mut quiet = 0;
            let mut converged = false;
            for _ in 0..inf.max_iterations {
                let step = match &frozen {
                    Some(s) => s.clone(),
                    None => optimize_step(problem, &tree, &prev, settings.passes)?,
                };
                tree.expand(problem, &step)?;
                tree.prune(settings.v_th)?;
                steps.push(step.clone());
                prev = step;
                let change = tree
                    .history()
                    .last()
                    .map_or(0.0, |r| r.change_bound.iter().copied().fold(0.0, f64::max));
                quiet = if change < inf.tolerance { quiet + 1 } else { 0 };
                if quiet >= inf.window {
                    if frozen.is_none() {
                        frozen = Some(prev.clone());
                        quiet = 0;
                    } else {
                        converged = true;
                        break;
                    }
                }
            }
            let horizon = steps.len();
            Ok(Synthesis {
                tree,
                policy: DecoupledPolicy { steps },
                horizon,
                converged: Some(converged),
            })
        }
    }
}

/// Tree evaluation of a given policy over `horizon` backward steps.
pub fn evaluate_policy(problem: &Problem, policy: &DecoupledPolicy, horizon: usize, v_th: f64) -> Result<ValueTree> {
    policy.validate(problem)?;
    let mut tree = ValueTree::new(problem);
    for k in 0..horizon {
        tree.expand(problem, policy.iteration_step(k)?)?;
        tree.prune(v_th)?;
    }
    Ok(tree)
}
