//! Run configuration: a TOML document describing the system, the
//! specification and the run parameters. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{build_labeling, build_subsystem_mdp, BoundaryWarning, GridSpec, Interval, LabelingPredicate, SubsystemDynamics};
use crate::model::FactoredSystem;
use crate::problem::Problem;
use crate::scltl::{parse, read_dfa_file, to_dfa, Dfa, DEFAULT_STATE_CAP};
use crate::synthesis::{Horizon, InfiniteSettings, SynthesisSettings};
use crate::tensor::DEFAULT_DENSE_CAP;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub spec: SpecConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub caps: CapsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
    /// Directory relative paths are resolved against; set by [`RunConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub subsystems: Vec<SubsystemConfig>,
    #[serde(default)]
    pub aps: Vec<ApConfig>,
}

/// One subsystem template. With `replicate = r` it stands for `r`
/// identical subsystems and every AP attached to it is instantiated once
/// per copy under the name `<name>_<copy>`, copies counted from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub state_box: Vec<[f64; 2]>,
    pub input_box: Vec<[f64; 2]>,
    pub cells: Vec<usize>,
    pub inputs: Vec<usize>,
    /// Continuous initial point; mapped to the cell containing it.
    pub initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate: Option<usize>,
}

impl SubsystemConfig {
    fn copies(&self) -> usize {
        self.replicate.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApConfig {
    pub name: String,
    /// Index into `system.subsystems`.
    pub subsystem: usize,
    pub interval: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_row: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfa_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
}

/// Formula templates over replicated subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// `inside` holds for every copy at each of the steps `0..=steps`.
    Invariance { inside: String, steps: usize },
    /// Every copy stays in `safe` until some copy is in `goal` while all are
    /// still in `safe`.
    Race { safe: String, goal: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonValue {
    Steps(usize),
    Named(HorizonName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonName {
    Infinite,
}

impl HorizonValue {
    pub fn to_horizon(self) -> Horizon {
        match self {
            HorizonValue::Steps(n) => Horizon::Finite(n),
            HorizonValue::Named(HorizonName::Infinite) => Horizon::Infinite,
        }
    }

    /// Parses `N`, `inf` or `infinite`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "inf" | "infinite" => Ok(HorizonValue::Named(HorizonName::Infinite)),
            t => t
                .parse()
                .map(HorizonValue::Steps)
                .map_err(|_| Error::Config(format!("horizon must be a non-negative integer or `inf`, got `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: HorizonValue,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    InfiniteSettings::default().tolerance
}
fn default_window() -> usize {
    InfiniteSettings::default().window
}
fn default_max_iterations() -> usize {
    InfiniteSettings::default().max_iterations
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: HorizonValue::Steps(10),
            tolerance: default_tolerance(),
            window: default_window(),
            max_iterations: default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub v_th: f64,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self { v_th: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub passes: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { passes: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub enabled: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            episodes: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsSection {
    /// Maximum number of DFA states built by progression.
    pub dfa_states: usize,
    /// Maximum number of scalars in any dense tensor (oracle, error maps).
    pub dense_entries: usize,
}

impl Default for CapsSection {
    fn default() -> Self {
        Self {
            dfa_states: DEFAULT_STATE_CAP,
            dense_entries: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    /// Cells per state dimension, applied to every subsystem.
    Cells,
    /// Number of copies of the first subsystem template.
    Dims,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Cells => "cells",
            SweepVar::Dims => "dims",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub sweep: SweepVar,
    pub values: Vec<usize>,
    /// Timed repetitions per point; the minimum is reported.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    1
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub v_th: Option<f64>,
    pub horizon: Option<HorizonValue>,
}

/// Everything derived from a config that the pipeline stages need.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    pub s0: Vec<usize>,
    pub predicates: Vec<LabelingPredicate>,
    pub warnings: Vec<BoundaryWarning>,
    /// Formula text the DFA was built from, if any.
    pub formula: Option<String>,
}

/// Dynamics, grid and continuous initial point of one concrete subsystem.
pub type ConcreteSubsystem = (SubsystemDynamics, GridSpec, Vec<f64>);

fn interval(pair: [f64; 2]) -> Interval {
    Interval::new(pair[0], pair[1])
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.mc.seed = seed;
        }
        if let Some(v) = o.v_th {
            self.prune.v_th = v;
        }
        if let Some(h) = o.horizon {
            self.run.horizon = h;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let subs = &self.system.subsystems;
        if subs.is_empty() {
            return Err(Error::Config("system.subsystems must not be empty".into()));
        }
        for (k, s) in subs.iter().enumerate() {
            if s.replicate == Some(0) {
                return Err(Error::Config(format!("subsystem {k}: replicate must be at least 1")));
            }
            if s.initial.len() != s.state_box.len() {
                return Err(Error::Config(format!(
                    "subsystem {k}: initial has {} entries for a {}-dimensional state",
                    s.initial.len(),
                    s.state_box.len()
                )));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for ap in &self.system.aps {
            if ap.subsystem >= subs.len() {
                return Err(Error::Config(format!(
                    "AP `{}` references subsystem {} but only {} are declared",
                    ap.name,
                    ap.subsystem,
                    subs.len()
                )));
            }
            if !names.insert(ap.name.clone()) {
                return Err(Error::Config(format!("AP `{}` declared twice", ap.name)));
            }
        }
        let given = [self.spec.formula.is_some(), self.spec.dfa_file.is_some(), self.spec.family.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if given != 1 {
            return Err(Error::Config(
                "spec needs exactly one of `formula`, `dfa_file` or `family`".into(),
            ));
        }
        if !(self.prune.v_th >= 0.0 && self.prune.v_th.is_finite()) {
            return Err(Error::Config(format!("prune.v_th must be a non-negative number, got {}", self.prune.v_th)));
        }
        if let Some(b) = &self.benchmark {
            if b.values.is_empty() {
                return Err(Error::Config("benchmark.values must not be empty".into()));
            }
            if b.values.contains(&0) {
                return Err(Error::Config("benchmark.values must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&body))
    }

    /// Copy of this config at one benchmark sweep point.
    pub fn at_sweep_point(&self, var: SweepVar, value: usize) -> Self {
        let mut cfg = self.clone();
        match var {
            SweepVar::Cells => {
                for s in &mut cfg.system.subsystems {
                    s.cells.iter_mut().for_each(|c| *c = value);
                }
            }
            SweepVar::Dims => cfg.system.subsystems[0].replicate = Some(value),
        }
        cfg.benchmark = None;
        cfg
    }

    pub fn settings(&self) -> SynthesisSettings {
        SynthesisSettings {
            horizon: self.run.horizon.to_horizon(),
            v_th: self.prune.v_th,
            passes: self.policy.passes,
            infinite: InfiniteSettings {
                tolerance: self.run.tolerance,
                window: self.run.window,
                max_iterations: self.run.max_iterations,
            },
        }
    }

    /// Names of AP `ap` for every copy of its subsystem template.
    fn instance_names(&self, ap: &ApConfig) -> Vec<String> {
        let copies = self.system.subsystems[ap.subsystem].copies();
        if self.system.subsystems[ap.subsystem].replicate.is_none() {
            vec![ap.name.clone()]
        } else {
            (1..=copies).map(|c| format!("{}_{c}", ap.name)).collect()
        }
    }

    /// Expands subsystem templates and AP declarations into concrete
    /// dynamics, grids, initial points and labeling predicates.
    pub fn expand(&self) -> (Vec<ConcreteSubsystem>, Vec<LabelingPredicate>) {
        let mut subsystems = Vec::new();
        let mut first_index = Vec::new();
        for s in &self.system.subsystems {
            first_index.push(subsystems.len());
            let dynamics = SubsystemDynamics {
                a: s.a.clone(),
                b: s.b.clone(),
                noise_std: s.noise_std.clone(),
                state_box: s.state_box.iter().copied().map(interval).collect(),
                input_box: s.input_box.iter().copied().map(interval).collect(),
            };
            let grid = GridSpec {
                cells_per_dim: s.cells.clone(),
                inputs_per_dim: s.inputs.clone(),
            };
            for _ in 0..s.copies() {
                subsystems.push((dynamics.clone(), grid.clone(), s.initial.clone()));
            }
        }
        let mut preds = Vec::new();
        for ap in &self.system.aps {
            for (c, name) in self.instance_names(ap).into_iter().enumerate() {
                preds.push(LabelingPredicate {
                    ap_name: name,
                    subsystem_index: first_index[ap.subsystem] + c,
                    output_row: ap.output_row.clone(),
                    interval: interval(ap.interval),
                });
            }
        }
        (subsystems, preds)
    }

    /// Formula text of the specification, with family templates expanded.
    pub fn formula_text(&self) -> Result<Option<String>> {
        if let Some(f) = &self.spec.formula {
            return Ok(Some(f.clone()));
        }
        let Some(family) = &self.spec.family else {
            return Ok(None);
        };
        let copies = |base: &str| -> Result<Vec<String>> {
            let ap = self
                .system
                .aps
                .iter()
                .find(|a| a.name == base)
                .ok_or_else(|| Error::Config(format!("family refers to undeclared AP `{base}`")))?;
            Ok(self.instance_names(ap))
        };
        let all = |names: &[String], op: &str| format!("({})", names.join(op));
        Ok(Some(match family {
            FamilyConfig::Invariance { inside, steps } => {
                let body = all(&copies(inside)?, " & ");
                (0..=*steps)
                    .map(|t| format!("{}{body}", "X ".repeat(t)))
                    .collect::<Vec<_>>()
                    .join(" & ")
            }
            FamilyConfig::Race { safe, goal } => {
                let safe = all(&copies(safe)?, " & ");
                let goal = all(&copies(goal)?, " | ");
                format!("{safe} U ({goal} & {safe})")
            }
        }))
    }

    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn dfa(&self, aps: &[String]) -> Result<(Dfa, Option<String>)> {
        if let Some(path) = &self.spec.dfa_file {
            let path = self.resolve(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read DFA file {}: {e}", path.display())))?;
            return Ok((read_dfa_file(&text, aps)?, None));
        }
        let text = self.formula_text()?.expect("validated spec");
        let f = parse(&text, aps)?;
        Ok((to_dfa(&f, aps.len(), self.caps.dfa_states, aps)?, Some(text)))
    }

    /// Builds the subsystem MDPs, labeling and DFA.
    pub fn build(&self) -> Result<Instance> {
        use rayon::prelude::*;
        let (subsystems, predicates) = self.expand();
        let mdps = subsystems
            .par_iter()
            .map(|(d, g, _)| build_subsystem_mdp(d, g))
            .collect::<Result<Vec<_>>>()?;
        let mut s0 = Vec::with_capacity(mdps.len());
        for (i, ((_, _, x0), mdp)) in subsystems.iter().zip(&mdps).enumerate() {
            let cell = mdp
                .geometry
                .as_ref()
                .and_then(|g| g.cell_of(x0))
                .ok_or_else(|| Error::Config(format!("initial point {x0:?} of subsystem {i} lies outside its state box")))?;
            s0.push(cell);
        }
        let (labeling, warnings) = build_labeling(&predicates, &mdps)?;
        let aps = labeling.ap_names.clone();
        let system = FactoredSystem::new(mdps, labeling)?;
        let (dfa, formula) = self.dfa(&aps)?;
        Ok(Instance {
            problem: Problem::new(system, dfa)?,
            s0,
            predicates,
            warnings,
            formula,
        })
    }
}
