use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpd_synth::config::{HorizonValue, Overrides, RunConfig};
use cpd_synth::pipeline::{
    cmd_abstract, cmd_benchmark, cmd_synthesize, cmd_translate, cmd_verify, human_summary, output_dir,
    write_benchmark_csv,
};

#[derive(Parser)]
#[command(name = "cpd-synth", version, about = "Tree-based rank-1 value iteration for decoupled stochastic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid the subsystems and label the cells.
    Abstract(Common),
    /// Build the automaton of the specification and its factored guards.
    Translate(Common),
    /// Synthesize a decoupled policy and its certified lower bound.
    Synthesize(Common),
    /// Synthesize, then compare against dense value iteration and simulation.
    Verify(Common),
    /// Sweep the grid size or the number of subsystems.
    Benchmark(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<String>,
    /// Monte-Carlo seed, overriding `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Pruning threshold, overriding `prune.v_th`.
    #[arg(long)]
    vth: Option<f64>,
    /// Horizon `N` or `inf`, overriding `run.horizon`.
    #[arg(long, value_parser = parse_horizon)]
    horizon: Option<HorizonValue>,
}

fn parse_horizon(s: &str) -> Result<HorizonValue, String> {
    HorizonValue::parse(s).map_err(|e| e.to_string())
}

fn load(c: &Common) -> cpd_synth::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply(&Overrides {
        out: c.out.clone(),
        seed: c.seed,
        v_th: c.vth,
        horizon: c.horizon,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> cpd_synth::Result<bool> {
    match cli.command {
        Command::Abstract(c) => {
            let cfg = load(&c)?;
            let dir = output_dir(&cfg);
            let (_, report) = cmd_abstract(&cfg, Some(&dir))?;
            for (i, s) in report.subsystems.iter().enumerate() {
                println!(
                    "subsystem {i}: {} states ({:?} cells + sink), {} actions, initial cell {}",
                    s.n_states, s.cells, s.n_actions, s.initial_cell
                );
            }
            for (ap, n) in &report.ap_cells {
                println!("  {ap}: {n} cells");
            }
            for w in &report.warnings {
                eprintln!(
                    "warning: boundary {} of `{}` does not lie on a cell edge in dimension {}",
                    w.boundary, w.ap_name, w.dimension
                );
            }
            println!("wrote {}", dir.join("abstraction.json").display());
            Ok(true)
        }
        Command::Translate(c) => {
            let cfg = load(&c)?;
            let report = cmd_translate(&cfg, Some(&output_dir(&cfg)))?;
            if let Some(f) = &report.formula {
                println!("formula: {f}");
            }
            println!(
                "{} states, initial {}, accepting {}, rejecting sinks {:?}",
                report.n_states, report.initial, report.accepting, report.rejecting_sinks
            );
            for t in &report.transitions {
                println!("  {} -> {}: {}", t.from, t.to, t.guards.join(" | "));
            }
            if let Some(p) = &report.dfa_file {
                println!("wrote {p}");
            }
            Ok(true)
        }
        Command::Synthesize(c) => {
            let cfg = load(&c)?;
            let dir = output_dir(&cfg);
            let run = cmd_synthesize(&cfg, Some(&dir))?;
            print!("{}", human_summary(&run.report));
            println!("wrote {}", dir.display());
            Ok(run.report.rank_bound_holds)
        }
        Command::Verify(c) => {
            let cfg = load(&c)?;
            let dir = output_dir(&cfg);
            let (run, v) = cmd_verify(&cfg, Some(&dir))?;
            print!("{}", human_summary(&run.report));
            let mut ok = v.mc_consistent && run.report.rank_bound_holds;
            match &v.oracle {
                Some(o) => {
                    println!("oracle: optimal value at s0 {:.6}, policy value at s0 {:.6}", o.optimal_at_s0, o.policy_value_at_s0);
                    println!("  max |tree - dense| under the synthesized policy: {:.3e}", o.equivalence_max_abs);
                    println!("  min (policy value - pruned tree value): {:.3e}", o.pruning_min_slack);
                    println!("  max (optimal - certified) satisfaction: {:.3e}", o.optimality_gap_max);
                    println!("  lower bound holds: {}", o.bound_holds);
                    ok &= o.bound_holds;
                }
                None => println!("{}", v.oracle_notice.as_deref().unwrap_or("oracle not run")),
            }
            let mc = &v.monte_carlo;
            println!(
                "monte carlo: {}/{} accepted, frequency {:.5} (95% Wilson [{:.5}, {:.5}]), consistent with bound: {}",
                mc.accepted, mc.episodes, mc.frequency, mc.wilson_low, mc.wilson_high, v.mc_consistent
            );
            println!("wrote {}", dir.display());
            Ok(ok)
        }
        Command::Benchmark(c) => {
            let cfg = load(&c)?;
            let dir = output_dir(&cfg);
            let report = cmd_benchmark(&cfg, Some(&dir))?;
            write_benchmark_csv(std::io::stdout().lock(), &report)?;
            eprintln!("wrote {}", dir.join("benchmark.csv").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
