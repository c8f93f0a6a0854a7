mod common;

use common::*;
use cpd_synth::operators::apply;
use cpd_synth::oracle::{dense_vi_fixed_policy, dense_vi_infinite, dense_vi_optimal, exact_optimal_policy};
use cpd_synth::policy::{edge_inputs, optimize_mode_subsystem, optimize_step, PolicyStep};
use cpd_synth::synthesis::{evaluate_policy, lower_bound, synthesize, SynthesisSettings};
use cpd_synth::tensor::{RankOneTensor, DEFAULT_DENSE_CAP};
use cpd_synth::tree::{RankLedger, ValueTree};
use cpd_synth::validation::simulate;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn initial_tree_is_a_single_accepting_root() {
    let p = two_goals(false);
    let tree = ValueTree::new(&p);
    assert_eq!(tree.vertex_count(), 1);
    assert_eq!(tree.edge_count(), 0);
    let acc = tree.reconstruct_value(p.accepting()).reconstruct(DEFAULT_DENSE_CAP).unwrap();
    assert!(acc.data.iter().all(|&x| x == 1.0));
    let q0 = p.dfa.initial();
    let v = tree.reconstruct_value(q0).reconstruct(DEFAULT_DENSE_CAP).unwrap();
    assert!(v.data.iter().all(|&x| x == 0.0));
    tree.validate(&p).unwrap();
}

#[test]
fn one_goal_expansion_matches_hand_values() {
    let p = one_goal(false);
    let q0 = p.dfa.initial();
    let step = PolicyStep::zeros(&p);
    let mut tree = ValueTree::new(&p);
    tree.expand(&p, &step).unwrap();
    assert_eq!(tree.vertex_count(), 2);
    let terms = tree.reconstruct_value(q0).terms;
    assert_eq!(terms.len(), 1);
    assert!(close(&terms[0].factors[0], &[0.7, 0.4], 1e-15));
    tree.expand(&p, &step).unwrap();
    assert_eq!(tree.vertex_count(), 3);
    let v = tree.reconstruct_value(q0);
    assert!(close(&v.terms[0].factors[0], &[0.7, 0.4], 1e-15));
    assert!(close(&v.terms[1].factors[0], &[0.12, 0.24], 1e-15));
    let dense = v.reconstruct(DEFAULT_DENSE_CAP).unwrap();
    assert!(close(&dense.data, &[0.82, 0.64], 1e-15));
    tree.validate(&p).unwrap();

    let hist = dense_vi_fixed_policy(&p, &zero_policy(&p, 2), 2, DEFAULT_DENSE_CAP).unwrap();
    assert!(close(&hist[2].values[q0].data, &[0.82, 0.64], 1e-15));
    assert!(close(&hist[0].values[q0].data, &[0.0, 0.0], 0.0));
    assert!(close(&hist[0].values[p.accepting()].data, &[1.0, 1.0], 0.0));
}

#[test]
fn one_goal_rank_grows_linearly() {
    let p = one_goal(false);
    let tree = evaluate_policy(&p, &zero_policy(&p, 1), 6, 0.0).unwrap();
    let ledger = tree.rank_report(&p);
    let q0 = p.dfa.initial();
    let observed = ledger.observed(q0);
    assert_eq!(observed, (0..=6).collect::<Vec<_>>());
    let bounds = RankLedger::bounds(&p, 6);
    assert_eq!(bounds.iter().map(|b| b[q0]).collect::<Vec<_>>(), (0..=6).collect::<Vec<u64>>());
    assert!(ledger.holds());
    let sink = p.dfa.rejecting_sinks();
    for q in sink {
        assert!(tree.reconstruct_value(q).terms.is_empty());
        assert!(bounds.iter().all(|b| b[q] == 0));
    }
}

#[test]
fn two_goals_operator_and_rank_recursion() {
    let p = two_goals(false);
    let q0 = p.dfa.initial();
    let accept_edge = p.out.of(q0).iter().position(|t| t.target == p.accepting()).unwrap();
    let ones = RankOneTensor::ones(&[2, 2]);
    let step = PolicyStep::zeros(&p);
    let r = apply(&p, q0, accept_edge, &step.slices[q0], &ones).unwrap();
    assert!(close(&r.factors[0], &[0.7, 0.4], 1e-15));
    assert!(close(&r.factors[1], &[0.7, 0.4], 1e-15));

    assert_eq!(p.out.of(q0).len(), 3);
    let mut tree = ValueTree::new(&p);
    let mut terms = Vec::new();
    let mut births = Vec::new();
    for _ in 0..4 {
        tree.expand(&p, &step).unwrap();
        births.push(tree.history().last().unwrap().new_vertices);
        terms.push(tree.terms_by_mode()[q0]);
    }
    assert_eq!(terms, vec![1, 3, 7, 15]);
    assert_eq!(births, vec![1, 2, 4, 8]);
    let mut r = 0u64;
    for (k, &t) in terms.iter().enumerate() {
        r = 1 + 2 * r;
        assert_eq!(t as u64, r, "k = {}", k + 1);
    }
    let hist = dense_vi_fixed_policy(&p, &zero_policy(&p, 1), 1, DEFAULT_DENSE_CAP).unwrap();
    assert!(close(&hist[1].values[q0].data, &[0.49, 0.28, 0.28, 0.16], 1e-15));
}

#[test]
fn two_action_policy_choices() {
    let p = one_goal(true);
    let q0 = p.dfa.initial();
    let tree = ValueTree::new(&p);
    let edges = edge_inputs(&p, &tree, q0);
    let edges: Vec<_> = edges.into_iter().filter(|e| e.masked[0][1] == 0.0).collect();
    let current = vec![vec![0, 0]];
    let a = optimize_mode_subsystem(&p, q0, 0, &edges, &current, Some(&[1.0])).unwrap();
    assert_eq!(a[1], 1);

    let (hist, joint) = dense_vi_optimal(&p, 1, DEFAULT_DENSE_CAP).unwrap();
    assert!((hist[1].values[q0].data[1] - 0.9).abs() < 1e-15);
    assert_eq!(joint.steps[0][q0][1], 1);
    assert_eq!(exact_optimal_policy(&p, 1, DEFAULT_DENSE_CAP).unwrap().steps[0][p.accepting()], vec![0, 0]);

    let step = optimize_step(&p, &tree, &PolicyStep::zeros(&p), 2).unwrap();
    assert_eq!(step.slices[q0][0][1], 1);
}

#[test]
fn weights_select_edges() {
    let p = one_goal(true);
    let q0 = p.dfa.initial();
    let mut tree = ValueTree::new(&p);
    tree.expand(&p, &PolicyStep::zeros(&p)).unwrap();
    let edges = edge_inputs(&p, &tree, q0);
    assert!(edges.len() >= 2);
    let current = vec![vec![0, 0]];
    let mut w = vec![0.0; edges.len()];
    w[0] = 1.0;
    let both = optimize_mode_subsystem(&p, q0, 0, &edges, &current, Some(&w)).unwrap();
    let first = optimize_mode_subsystem(&p, q0, 0, &edges[..1], &current, Some(&[1.0])).unwrap();
    assert_eq!(both, first);
}

#[test]
fn single_subsystem_synthesis_is_optimal() {
    let p = one_goal(true);
    let q0 = p.dfa.initial();
    let syn = synthesize(&p, &SynthesisSettings::finite(6, 0.0)).unwrap();
    let (hist, _) = dense_vi_optimal(&p, 6, DEFAULT_DENSE_CAP).unwrap();
    let tree = syn.tree.reconstruct_value(q0).reconstruct(DEFAULT_DENSE_CAP).unwrap();
    assert!(tree.max_abs_diff(&hist[6].values[q0]) < 1e-12);
}

#[test]
fn symmetric_subsystems_get_identical_maps() {
    let p = two_goals(true);
    let syn = synthesize(&p, &SynthesisSettings::finite(4, 0.0)).unwrap();
    for step in &syn.policy.steps {
        for q in p.live_modes() {
            assert_eq!(step.slices[q][0], step.slices[q][1]);
        }
    }
}

#[test]
fn zero_passes_keep_previous_policy() {
    let p = two_goals(true);
    let tree = ValueTree::new(&p);
    let mut prev = PolicyStep::zeros(&p);
    prev.slices[p.dfa.initial()][1] = vec![1, 0];
    assert_eq!(optimize_step(&p, &tree, &prev, 0).unwrap(), prev);
}

#[test]
fn pruning_examples() {
    let p = two_goals(false);
    let mut tree = ValueTree::new(&p);
    let step = PolicyStep::zeros(&p);
    for _ in 0..3 {
        tree.expand(&p, &step).unwrap();
    }
    let before = tree.vertex_count();
    assert_eq!(tree.prune(0.0).unwrap(), 0);
    assert_eq!(tree.vertex_count(), before);
    tree.prune(0.5).unwrap();
    tree.validate(&p).unwrap();
    for (_, v) in tree.vertices() {
        assert!(v.value.max_value().unwrap() >= 0.5 || v.q == p.accepting());
    }
    let mut tree = ValueTree::new(&p);
    for _ in 0..5 {
        tree.expand(&p, &step).unwrap();
        tree.prune(1.0).unwrap();
    }
    assert_eq!(tree.vertex_count(), 1);
}

#[test]
fn infinite_horizon_oracle_reaches_one() {
    let p = one_goal(false);
    let res = dense_vi_infinite(&p, 1e-8, 10_000, DEFAULT_DENSE_CAP).unwrap();
    assert!(res.converged);
    let q0 = p.dfa.initial();
    assert!(close(&res.field.values[q0].data, &[1.0, 1.0], 1e-7));
    assert_eq!(res.field.satisfaction(&p, &[0]), 1.0);
}

#[test]
fn monte_carlo_small_cases() {
    let p = one_goal(false);
    let pol = zero_policy(&p, 2);
    let acc = simulate(&p, &pol, &[0], 2, 1000, 7).unwrap();
    assert_eq!(acc.frequency, 1.0);
    let est = simulate(&p, &pol, &[1], 2, 100_000, 7).unwrap();
    let se = (0.64f64 * 0.36 / 1e5).sqrt();
    assert!((est.frequency - 0.64).abs() <= 3.0 * se, "{}", est.frequency);
    assert!(est.wilson_low <= est.frequency && est.frequency <= est.wilson_high);
    assert_eq!(simulate(&p, &pol, &[1], 2, 5000, 11).unwrap(), simulate(&p, &pol, &[1], 2, 5000, 11).unwrap());
    let tree = evaluate_policy(&p, &pol, 2, 0.0).unwrap();
    assert!((lower_bound(&p, &tree, &[1]) - 0.64).abs() < 1e-15);
    assert_eq!(lower_bound(&p, &tree, &[0]), 1.0);
}
