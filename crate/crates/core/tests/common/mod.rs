#![allow(dead_code)]

use cpd_synth::model::{FactoredSystem, Labeling, Letter, SubsystemMdp};
use cpd_synth::policy::{DecoupledPolicy, PolicyStep};
use cpd_synth::scltl::{parse, to_dfa, Formula, DEFAULT_STATE_CAP};
use cpd_synth::Problem;
use ndarray::{array, Array2};
use rand::Rng;

pub fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

pub fn two_state_mdp(two_actions: bool) -> SubsystemMdp {
    let mut ts = vec![array![[0.7, 0.3], [0.4, 0.6]]];
    if two_actions {
        ts.push(array![[0.2, 0.8], [0.9, 0.1]]);
    }
    SubsystemMdp::new(ts, None).unwrap()
}

pub fn problem_from(mdps: Vec<SubsystemMdp>, aps: &[&str], owner: Vec<usize>, letters: Vec<Vec<Letter>>, formula: &str) -> Problem {
    let aps = names(aps);
    let labeling = Labeling::new(aps.clone(), owner, letters).unwrap();
    let system = FactoredSystem::new(mdps, labeling).unwrap();
    let dfa = to_dfa(&parse(formula, &aps).unwrap(), aps.len(), DEFAULT_STATE_CAP, &aps).unwrap();
    Problem::new(system, dfa).unwrap()
}

/// One subsystem, `g` holds in state 0, reach `g`.
pub fn one_goal(two_actions: bool) -> Problem {
    problem_from(vec![two_state_mdp(two_actions)], &["g"], vec![0], vec![vec![1, 0]], "!g U g")
}

/// Two copies of the one-goal instance, reach both goals at once.
pub fn two_goals(two_actions: bool) -> Problem {
    problem_from(
        vec![two_state_mdp(two_actions), two_state_mdp(two_actions)],
        &["g1", "g2"],
        vec![0, 1],
        vec![vec![0b01, 0], vec![0b10, 0]],
        "(!g1 | !g2) U (g1 & g2)",
    )
}

pub fn zero_policy(problem: &Problem, horizon: usize) -> DecoupledPolicy {
    DecoupledPolicy {
        steps: vec![PolicyStep::zeros(problem); horizon.max(1)],
    }
}

pub fn random_stochastic<R: Rng>(rng: &mut R, n: usize, sink: Option<usize>) -> Array2<f64> {
    let mut t = Array2::<f64>::zeros((n, n));
    for s in 0..n {
        if Some(s) == sink {
            t[[s, s]] = 1.0;
            continue;
        }
        let mut row: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
            .collect();
        if row.iter().all(|&x| x == 0.0) {
            row[rng.random_range(0..n)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        for (k, x) in row.iter().enumerate() {
            t[[s, k]] = x / total;
        }
        // Absorb rounding so that the row sums to one within tolerance.
        let sum: f64 = t.row(s).sum();
        let k = (0..n).max_by(|&a, &b| t[[s, a]].total_cmp(&t[[s, b]])).unwrap();
        t[[s, k]] += 1.0 - sum;
    }
    t
}

pub fn random_formula<R: Rng>(rng: &mut R, n_aps: usize, depth: usize) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        let j = rng.random_range(0..n_aps);
        return match rng.random_range(0..10) {
            0 => Formula::True,
            1..=5 => Formula::Atom(j),
            _ => Formula::NegAtom(j),
        };
    }
    let a = random_formula(rng, n_aps, depth - 1);
    match rng.random_range(0..4) {
        0 => Formula::And(vec![a, random_formula(rng, n_aps, depth - 1)]),
        1 => Formula::Or(vec![a, random_formula(rng, n_aps, depth - 1)]),
        2 => Formula::Next(Box::new(a)),
        _ => Formula::Until(Box::new(a), Box::new(random_formula(rng, n_aps, depth - 1))),
    }
}

/// Strong finite-word semantics: a formula holds at position `i` of a word
/// of length `len` only if a witness exists inside the word.
pub fn holds(f: &Formula, word: &[Letter], i: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(j) => i < word.len() && word[i] >> j & 1 == 1,
        Formula::NegAtom(j) => i < word.len() && word[i] >> j & 1 == 0,
        Formula::And(cs) => cs.iter().all(|c| holds(c, word, i)),
        Formula::Or(cs) => cs.iter().any(|c| holds(c, word, i)),
        Formula::Next(a) => holds(a, word, i + 1),
        Formula::Until(a, b) => {
            (i..word.len().max(i + 1)).any(|j| holds(b, word, j) && (i..j).all(|k| holds(a, word, k)))
        }
    }
}

pub struct RandomInstance {
    pub problem: Problem,
    pub formula: String,
    pub horizon: usize,
    pub policy: DecoupledPolicy,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_depth: usize) -> RandomInstance {
    let m = rng.random_range(1..=3);
    let mut mdps = Vec::new();
    for _ in 0..m {
        let n = rng.random_range(2..=6);
        let sink = if n > 2 && rng.random_bool(0.5) { Some(n - 1) } else { None };
        let actions = rng.random_range(1..=2);
        let ts = (0..actions).map(|_| random_stochastic(rng, n, sink)).collect();
        mdps.push(SubsystemMdp::new(ts, sink).unwrap());
    }
    let n_aps = rng.random_range(1..=3);
    let owner: Vec<usize> = (0..n_aps).map(|_| rng.random_range(0..m)).collect();
    let aps: Vec<String> = (0..n_aps).map(|j| format!("a{j}")).collect();
    let letters: Vec<Vec<Letter>> = mdps
        .iter()
        .enumerate()
        .map(|(i, mdp)| {
            (0..mdp.n_states())
                .map(|s| {
                    if mdp.is_sink(s) {
                        return 0;
                    }
                    (0..n_aps)
                        .filter(|&j| owner[j] == i && rng.random_bool(0.5))
                        .fold(0, |l, j| l | (1 << j))
                })
                .collect()
        })
        .collect();
    let f = random_formula(rng, n_aps, max_depth);
    let formula = f.display(&aps).to_string();
    let labeling = Labeling::new(aps.clone(), owner, letters).unwrap();
    let system = FactoredSystem::new(mdps, labeling).unwrap();
    let dfa = to_dfa(&f, n_aps, DEFAULT_STATE_CAP, &aps).unwrap();
    let problem = Problem::new(system, dfa).unwrap();
    let horizon = rng.random_range(1..=8);
    let shape = problem.shape();
    let steps = (0..horizon)
        .map(|_| PolicyStep {
            slices: (0..problem.n_modes())
                .map(|_| {
                    shape
                        .iter()
                        .enumerate()
                        .map(|(i, &n)| {
                            let a = problem.system.mdps[i].n_actions();
                            (0..n).map(|_| rng.random_range(0..a)).collect()
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    RandomInstance {
        problem,
        formula,
        horizon,
        policy: DecoupledPolicy { steps },
    }
}

/// All joint states of a shape, row-major.
pub fn joint_states(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}
