//! The five pipeline stages behind the command-line tool: abstraction,
//! translation, synthesis, verification against the dense oracle, and
//! benchmark sweeps. Each stage returns a serializable report and, when an
//! output directory is given, writes its artifacts there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Instance, RunConfig, SweepVar};
use crate::error::{Error, Result};
use crate::grid::BoundaryWarning;
use crate::oracle::{dense_vi_fixed_policy, dense_vi_infinite, dense_vi_optimal, write_error_map};
use crate::policy::DecoupledPolicy;
use crate::problem::Problem;
use crate::scltl::write_dfa_file;
use crate::synthesis::{evaluate_policy, synthesize, Horizon, Synthesis};
use crate::tensor::DenseTensor;
use crate::tree::{IterationRecord, RankLedger, TreeSnapshot, ValueTree, SNAPSHOT_VERSION};
use crate::validation::{simulate, MonteCarloEstimate};

pub const REPORT_VERSION: u32 = 1;

/// Slack allowed when checking inequalities between two value computations.
pub const VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub cpu: Option<String>,
    pub threads: usize,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu = fs::read_to_string("/proc/cpuinfo").ok().and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpu,
            threads: rayon::current_num_threads(),
        }
    }
}

/// Wall-clock measurements; the only nondeterministic part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub build_s: f64,
    pub synthesis_s: f64,
    pub total_s: f64,
    pub hardware: Hardware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSummary {
    pub n_states: usize,
    pub n_actions: usize,
    pub cells: Vec<usize>,
    pub sink: Option<usize>,
    pub initial_cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractReport {
    pub version: u32,
    pub config_hash: String,
    pub subsystems: Vec<SubsystemSummary>,
    /// Number of non-sink cells where each AP holds.
    pub ap_cells: BTreeMap<String, usize>,
    pub warnings: Vec<BoundaryWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub from: usize,
    pub to: usize,
    pub guards: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateReport {
    pub version: u32,
    pub config_hash: String,
    pub formula: Option<String>,
    pub n_states: usize,
    pub initial: usize,
    pub accepting: usize,
    pub rejecting_sinks: Vec<usize>,
    pub live: Vec<usize>,
    /// Guarded transitions between distinct states, one conjunction per guard.
    pub transitions: Vec<TransitionSummary>,
    pub dfa_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub q: usize,
    pub accepting: bool,
    pub live: bool,
    pub terms: usize,
    /// Sum of the sup norms of the mode's terms; an upper bound on its
    /// largest value.
    pub sup_bound: f64,
    pub value_at_s0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub tree: Option<String>,
    pub policy: Option<String>,
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config_hash: String,
    pub s0: Vec<usize>,
    pub lower_bound: f64,
    pub horizon: usize,
    pub converged: Option<bool>,
    pub v_th: f64,
    pub modes: Vec<ModeSummary>,
    pub iterations: Vec<IterationRecord>,
    pub scalars_stored: usize,
    /// Scalars a dense value tensor of one mode would need.
    pub dense_scalars_per_mode: usize,
    pub rank_ledger: RankLedger,
    pub rank_bound_holds: bool,
    pub warnings: Vec<BoundaryWarning>,
    pub files: OutputFiles,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub format_version: u32,
    pub config_hash: String,
    pub horizon: usize,
    pub stationary: bool,
    pub policy: DecoupledPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// Largest |tree - dense| when the synthesized policy is evaluated
    /// without pruning.
    pub equivalence_max_abs: f64,
    /// Smallest (dense value of the policy - pruned tree value); nonnegative
    /// up to rounding when pruning only lowers values.
    pub pruning_min_slack: f64,
    /// Largest (optimal satisfaction - certified satisfaction) over states.
    pub optimality_gap_max: f64,
    pub optimal_at_s0: f64,
    pub policy_value_at_s0: f64,
    /// Every certified value lies below the value of its policy and the
    /// optimum, within [`VALUE_TOL`].
    pub bound_holds: bool,
    pub error_map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version: u32,
    pub config_hash: String,
    pub lower_bound: f64,
    pub oracle: Option<OracleComparison>,
    pub oracle_notice: Option<String>,
    pub monte_carlo: MonteCarloEstimate,
    pub mc_consistent: bool,
    pub timing_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub value: usize,
    pub time_s: f64,
    pub scalars_stored: usize,
    pub lower_bound: f64,
    pub vertices_by_iter: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub sweep_var: SweepVar,
    pub rows: Vec<BenchmarkRow>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn cmd_abstract(cfg: &RunConfig, out: Option<&Path>) -> Result<(Instance, AbstractReport)> {
    let inst = cfg.build()?;
    let system = &inst.problem.system;
    let subsystems = system
        .mdps
        .iter()
        .zip(&inst.s0)
        .map(|(mdp, &s)| SubsystemSummary {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            cells: mdp.geometry.as_ref().map(|g| g.cells.clone()).unwrap_or_default(),
            sink: mdp.sink(),
            initial_cell: s,
        })
        .collect();
    let labeling = &system.labeling;
    let ap_cells = labeling
        .ap_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let i = labeling.owner[j];
            let count = labeling.letters[i].iter().filter(|&&l| l >> j & 1 == 1).count();
            (name.clone(), count)
        })
        .collect();
    let report = AbstractReport {
        version: REPORT_VERSION,
        config_hash: cfg.hash(),
        subsystems,
        ap_cells,
        warnings: inst.warnings.clone(),
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("abstraction.json"), &report)?;
    }
    Ok((inst, report))
}

pub fn cmd_translate(cfg: &RunConfig, out: Option<&Path>) -> Result<TranslateReport> {
    let inst = cfg.build()?;
    let p = &inst.problem;
    let aps = &p.system.labeling.ap_names;
    let mut transitions: Vec<TransitionSummary> = Vec::new();
    for q in 0..p.n_modes() {
        let mut by_target: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for t in p.out.of(q) {
            by_target.entry(t.target).or_default().push(t.guard.display(aps).to_string());
        }
        transitions.extend(by_target.into_iter().map(|(to, guards)| TransitionSummary { from: q, to, guards }));
    }
    let mut report = TranslateReport {
        version: REPORT_VERSION,
        config_hash: cfg.hash(),
        formula: inst.formula.clone(),
        n_states: p.n_modes(),
        initial: p.dfa.initial(),
        accepting: p.accepting(),
        rejecting_sinks: p.dfa.rejecting_sinks(),
        live: p.live_modes().collect(),
        transitions,
        dfa_file: None,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let path = dir.join("spec.dfa.toml");
        fs::write(&path, write_dfa_file(&p.dfa, aps)?)?;
        report.dfa_file = Some(path_string(&path));
        write_json(&dir.join("translation.json"), &report)?;
    }
    Ok(report)
}

/// Artifacts of a synthesis run kept in memory for later stages.
pub struct SynthesisRun {
    pub instance: Instance,
    pub synthesis: Synthesis,
    pub report: RunReport,
}

fn mode_summaries(problem: &Problem, tree: &ValueTree, s0: &[usize]) -> Vec<ModeSummary> {
    (0..problem.n_modes())
        .map(|q| {
            let value = tree.reconstruct_value(q);
            let sup_bound = value.terms.iter().map(|t| t.max_value().unwrap_or(f64::NAN)).fold(0.0, |a, b| a + b);
            ModeSummary {
                q,
                accepting: q == problem.accepting(),
                live: problem.is_live(q),
                terms: value.rank(),
                sup_bound,
                value_at_s0: tree.value_at(q, s0),
            }
        })
        .collect()
}

pub fn cmd_synthesize(cfg: &RunConfig, out: Option<&Path>) -> Result<SynthesisRun> {
    let start = Instant::now();
    let instance = cfg.build()?;
    let build_s = start.elapsed().as_secs_f64();
    let problem = &instance.problem;
    let t = Instant::now();
    let synthesis = synthesize(problem, &cfg.settings())?;
    let synthesis_s = t.elapsed().as_secs_f64();
    let tree = &synthesis.tree;
    let hash = cfg.hash();
    let ledger = tree.rank_report(problem);
    let mut report = RunReport {
        version: REPORT_VERSION,
        config_hash: hash.clone(),
        s0: instance.s0.clone(),
        lower_bound: synthesis.lower_bound(problem, &instance.s0),
        horizon: synthesis.horizon,
        converged: synthesis.converged,
        v_th: cfg.prune.v_th,
        modes: mode_summaries(problem, tree, &instance.s0),
        iterations: tree.history().to_vec(),
        scalars_stored: tree.scalars_stored(),
        dense_scalars_per_mode: problem.shape().iter().product(),
        rank_bound_holds: ledger.holds(),
        rank_ledger: ledger,
        warnings: instance.warnings.clone(),
        files: OutputFiles {
            tree: None,
            policy: None,
            report: None,
        },
        timing: Timing {
            build_s,
            synthesis_s,
            total_s: 0.0,
            hardware: Hardware::detect(),
        },
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let tree_path = dir.join("tree.json");
        let snapshot = tree.snapshot(problem, cfg.prune.v_th, &hash);
        if snapshot.scalars_stored() != report.scalars_stored {
            return Err(Error::Consistency("snapshot scalar count differs from the tree's accounting".into()));
        }
        fs::write(&tree_path, serde_json::to_string(&snapshot)?)?;
        let policy_path = dir.join("policy.json");
        let policy = PolicySnapshot {
            format_version: SNAPSHOT_VERSION,
            config_hash: hash,
            horizon: synthesis.horizon,
            stationary: synthesis.policy.is_stationary(),
            policy: synthesis.policy.clone(),
        };
        fs::write(&policy_path, serde_json::to_string(&policy)?)?;
        let report_path = dir.join("report.json");
        report.files = OutputFiles {
            tree: Some(path_string(&tree_path)),
            policy: Some(path_string(&policy_path)),
            report: Some(path_string(&report_path)),
        };
        report.timing.total_s = start.elapsed().as_secs_f64();
        write_json(&report_path, &report)?;
        fs::write(dir.join("summary.txt"), human_summary(&report))?;
    } else {
        report.timing.total_s = start.elapsed().as_secs_f64();
    }
    Ok(SynthesisRun {
        instance,
        synthesis,
        report,
    })
}

/// Plain-text digest of a run report.
pub fn human_summary(r: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("lower bound at {:?}: {:.6}\n", r.s0, r.lower_bound));
    s.push_str(&format!("horizon: {}", r.horizon));
    if let Some(c) = r.converged {
        s.push_str(&format!(" (converged: {c})"));
    }
    s.push('\n');
    s.push_str(&format!("pruning threshold: {}\n", r.v_th));
    let last = r.iterations.last();
    s.push_str(&format!(
        "tree: {} vertices, {} scalars stored ({} per dense mode)\n",
        last.map_or(1, |h| h.vertices),
        r.scalars_stored,
        r.dense_scalars_per_mode
    ));
    s.push_str(&format!("rank bound holds: {}\n", r.rank_bound_holds));
    for m in &r.modes {
        s.push_str(&format!(
            "  mode {}: terms {}, sup bound {:.4}, value at s0 {:.6}{}{}\n",
            m.q,
            m.terms,
            m.sup_bound,
            m.value_at_s0,
            if m.accepting { " [accepting]" } else { "" },
            if !m.live && !m.accepting { " [dead]" } else { "" },
        ));
    }
    if !r.warnings.is_empty() {
        s.push_str(&format!("{} labeling boundary warnings\n", r.warnings.len()));
    }
    s.push_str(&format!("wall time: {:.3} s\n", r.timing.total_s));
    s
}

/// Satisfaction probability per joint state: the value of the mode reached
/// after reading the state's own label.
pub fn satisfaction_map(problem: &Problem, values: &[DenseTensor]) -> DenseTensor {
    let template = &values[0];
    let data = (0..template.len())
        .map(|flat| {
            let cells = template.unravel(flat);
            match problem.initial_mode(&cells) {
                None => 0.0,
                Some(q) if q == problem.accepting() => 1.0,
                Some(q) => values[q].data[flat],
            }
        })
        .collect();
    DenseTensor {
        shape: template.shape.clone(),
        data,
    }
}

fn dense_tree_values(problem: &Problem, tree: &ValueTree, cap: usize) -> Result<Vec<DenseTensor>> {
    (0..problem.n_modes()).map(|q| tree.reconstruct_value(q).reconstruct(cap)).collect()
}

fn oracle_comparison(
    cfg: &RunConfig,
    run: &SynthesisRun,
    out: Option<&Path>,
) -> Result<OracleComparison> {
    let problem = &run.instance.problem;
    let s0 = &run.instance.s0;
    let cap = cfg.caps.dense_entries;
    let syn = &run.synthesis;
    let pruned = dense_tree_values(problem, &syn.tree, cap)?;

    let fixed = dense_vi_fixed_policy(problem, &syn.policy, syn.horizon, cap)?;
    let fixed = &fixed[syn.horizon];
    let unpruned = evaluate_policy(problem, &syn.policy, syn.horizon, 0.0)?;
    let unpruned = dense_tree_values(problem, &unpruned, cap)?;
    let mut equivalence_max_abs: f64 = 0.0;
    let mut pruning_min_slack = f64::INFINITY;
    for q in 0..problem.n_modes() {
        equivalence_max_abs = equivalence_max_abs.max(unpruned[q].max_abs_diff(&fixed.values[q]));
        pruning_min_slack = pruning_min_slack.min(-fixed.values[q].max_shortfall(&pruned[q]));
    }

    let optimal = match cfg.run.horizon.to_horizon() {
        Horizon::Finite(n) => dense_vi_optimal(problem, n, cap)?.0.pop().expect("history is non-empty"),
        Horizon::Infinite => {
            dense_vi_infinite(problem, cfg.run.tolerance * 1e-2, cfg.run.max_iterations.max(syn.horizon) * 10, cap)?.field
        }
    };
    let opt_sat = satisfaction_map(problem, &optimal.values);
    let tree_sat = satisfaction_map(problem, &pruned);
    let optimality_gap_max = opt_sat
        .data
        .iter()
        .zip(&tree_sat.data)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let below_optimum = opt_sat
        .data
        .iter()
        .zip(&tree_sat.data)
        .all(|(o, t)| *t <= o + VALUE_TOL);

    let error_map = match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join("error_map.csv");
            write_error_map(fs::File::create(&path)?, problem, &opt_sat, &tree_sat)?;
            Some(path_string(&path))
        }
        None => None,
    };
    Ok(OracleComparison {
        equivalence_max_abs,
        pruning_min_slack,
        optimality_gap_max,
        optimal_at_s0: optimal.satisfaction(problem, s0),
        policy_value_at_s0: fixed.satisfaction(problem, s0),
        bound_holds: below_optimum && pruning_min_slack >= -VALUE_TOL,
        error_map,
    })
}

/// Synthesizes, compares against the dense oracle when it fits under the
/// cap, and checks the bound by simulation.
pub fn cmd_verify(cfg: &RunConfig, out: Option<&Path>) -> Result<(SynthesisRun, VerifyReport)> {
    let start = Instant::now();
    let run = cmd_synthesize(cfg, out)?;
    let (oracle, oracle_notice) = if !cfg.oracle.enabled {
        (None, Some("oracle disabled in config".to_string()))
    } else {
        match oracle_comparison(cfg, &run, out) {
            Ok(c) => (Some(c), None),
            Err(Error::DenseCap { requested, cap }) => (
                None,
                Some(format!("oracle skipped: {requested} dense entries exceed the cap of {cap}")),
            ),
            Err(e) => return Err(e),
        }
    };
    let problem = &run.instance.problem;
    let mc = simulate(
        problem,
        &run.synthesis.policy,
        &run.instance.s0,
        run.synthesis.horizon,
        cfg.mc.episodes,
        cfg.mc.seed,
    )?;
    let lower_bound = run.report.lower_bound;
    let report = VerifyReport {
        version: REPORT_VERSION,
        config_hash: cfg.hash(),
        lower_bound,
        mc_consistent: mc.consistent_with_bound(lower_bound),
        monte_carlo: mc,
        oracle,
        oracle_notice,
        timing_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok((run, report))
}

/// Runs synthesis at each sweep point, timing `repeats` runs and keeping the
/// fastest.
pub fn cmd_benchmark(cfg: &RunConfig, out: Option<&Path>) -> Result<BenchmarkReport> {
    let bench = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::Config("benchmark section missing".into()))?;
    let mut rows = Vec::with_capacity(bench.values.len());
    for &value in &bench.values {
        let point = cfg.at_sweep_point(bench.sweep, value);
        let mut best = f64::INFINITY;
        let mut last = None;
        for _ in 0..bench.repeats.max(1) {
            let start = Instant::now();
            let inst = point.build()?;
            let syn = synthesize(&inst.problem, &point.settings())?;
            best = best.min(start.elapsed().as_secs_f64());
            last = Some((inst, syn));
        }
        let (inst, syn) = last.expect("at least one repetition");
        rows.push(BenchmarkRow {
            value,
            time_s: best,
            scalars_stored: syn.tree.scalars_stored(),
            lower_bound: syn.lower_bound(&inst.problem, &inst.s0),
            vertices_by_iter: syn.tree.history().iter().map(|h| h.vertices).collect(),
        });
    }
    let report = BenchmarkReport {
        sweep_var: bench.sweep,
        rows,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_benchmark_csv(fs::File::create(dir.join("benchmark.csv"))?, &report)?;
        write_json(&dir.join("benchmark.json"), &report)?;
    }
    Ok(report)
}

/// CSV with a header row. Column `vertices_iter_k` is the vertex count after
/// `k` expansions; rows with fewer iterations leave the trailing
/// vertex columns empty.
pub fn write_benchmark_csv<W: std::io::Write>(out: W, report: &BenchmarkReport) -> Result<()> {
    let width = report.rows.iter().map(|r| r.vertices_by_iter.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["sweep_var", "value", "time_s", "scalars_stored", "lower_bound"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|k| format!("vertices_iter_{k}")));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![
            report.sweep_var.name().to_string(),
            r.value.to_string(),
            format!("{:.6}", r.time_s),
            r.scalars_stored.to_string(),
            r.lower_bound.to_string(),
        ];
        rec.extend((0..width).map(|k| r.vertices_by_iter.get(k).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a tree snapshot and checks its format version.
pub fn read_tree_snapshot(path: &Path) -> Result<TreeSnapshot> {
    let snap: TreeSnapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
    if snap.format_version != SNAPSHOT_VERSION {
        return Err(Error::Config(format!(
            "tree snapshot version {} is not supported (expected {SNAPSHOT_VERSION})",
            snap.format_version
        )));
    }
    Ok(snap)
}

/// Loads a policy snapshot and checks it against the problem.
pub fn read_policy_snapshot(path: &Path, problem: &Problem) -> Result<DecoupledPolicy> {
    let snap: PolicySnapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
    if snap.format_version != SNAPSHOT_VERSION {
        return Err(Error::Config(format!("policy snapshot version {} is not supported", snap.format_version)));
    }
    snap.policy.validate(problem)?;
    Ok(snap.policy)
}

/// Output directory of a config, as a path.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.output.dir)
}
