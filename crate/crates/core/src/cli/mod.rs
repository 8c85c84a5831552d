//! Command-line runs: discovery, explanation, calibration, evaluation and
//! the cold-night demo. Every run writes `manifest.toml` next to its
//! outputs; [`rerun`] replays a manifest into a fresh directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{
    compute_baselines, fit_pcmci, load_time_series, write_time_series, CausalityError, LagBaseline, LaggedCausalGraph,
};
use crate::eval::{
    build_suite, cold_night_scenario, greenhouse_operations_log, merge_seeded, model_for, run_suite, EvalError,
    MetricReport, SuiteConfig, SuiteKind, LOG_LENGTH, LOG_TAU_MAX,
};
use crate::forensics::{
    calibrate_cost_thresholds, calibrate_kkt_thresholds, calibration_report, load_thresholds, save_thresholds,
    CalibrationData, CostThresholds, ForensicsError, Provenance, SplitFractions, ThresholdTable,
};
use crate::greenhouse::{greenhouse_conditions, greenhouse_graph, GreenhouseParams};
use crate::hypothesis::{generate_explanation, CausalEvidence, Decision, EvidenceSources, ExplainConfig, ExplanationRecord};
use crate::kg::{load_graph_file, save_graph, GraphError, Perturbation};
use crate::ocp::{Scenario, ScenarioError};
use crate::params::{ParamFile, ParamsError};
use crate::solver::{solve, SolveError};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Forensics(#[from] ForensicsError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("missing evidence: {0}; pass --degraded-ok to explain without it")]
    Degraded(String),
    #[error("{failed} of {total} decisions failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    /// 2 for malformed input and invalid configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Scenario(_) | CliError::Graph(_) | CliError::Params(_) | CliError::Manifest(_) => 2,
            CliError::Causality(
                CausalityError::Header { .. } | CausalityError::Ingest(_) | CausalityError::Csv(_) | CausalityError::Config(_),
            ) => 2,
            CliError::Forensics(ForensicsError::InvalidSplit(_) | ForensicsError::Parse(_)) => 2,
            CliError::Eval(EvalError::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mpc-explain", version, about = "Explain MPC decisions from KKT, knowledge-graph and lagged causal evidence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a lagged causal graph and per-lag baselines to a time-series file.
    Discover(DiscoverArgs),
    /// Explain every decision instant of a scenario file.
    Explain(ExplainArgs),
    /// Calibrate multiplier and cost thresholds on labeled data.
    Calibrate(CalibrateArgs),
    /// Run a scenario suite under ablation and perturbation settings.
    Eval(EvalArgs),
    /// Cold-night greenhouse walkthrough, writing every artifact it uses.
    Demo(DemoArgs),
    /// Replay the run recorded in a manifest into a new directory.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Discover(_) => "discover",
            Command::Explain(_) => "explain",
            Command::Calibrate(_) => "calibrate",
            Command::Eval(_) => "eval",
            Command::Demo(_) => "demo",
            Command::Rerun(_) => "rerun",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Discover(a) => &a.out,
            Command::Explain(a) => &a.out,
            Command::Calibrate(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Demo(a) => &a.out,
            Command::Rerun(a) => &a.out,
        }
    }

    fn with_out(mut self, out: PathBuf) -> Self {
        match &mut self {
            Command::Discover(a) => a.out = out,
            Command::Explain(a) => a.out = out,
            Command::Calibrate(a) => a.out = out,
            Command::Eval(a) => a.out = out,
            Command::Demo(a) => a.out = out,
            Command::Rerun(a) => a.out = out,
        }
        self
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Discover(a) => vec![a.data.clone()],
            Command::Explain(a) => std::iter::once(a.scenario.clone())
                .chain([&a.params, &a.kg, &a.causal_graph, &a.baselines, &a.thresholds].into_iter().flatten().cloned())
                .collect(),
            Command::Calibrate(a) => vec![a.data.clone()],
            Command::Eval(a) => vec![a.config.clone()],
            Command::Demo(_) => vec![],
            Command::Rerun(a) => vec![a.manifest.clone()],
        }
    }

    fn seeds(&self) -> Vec<u64> {
        match self {
            Command::Calibrate(a) => vec![a.seed],
            Command::Eval(a) => vec![a.seed],
            Command::Demo(a) => vec![a.seed],
            _ => vec![],
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoverArgs {
    /// Delimited time series with a timestamp column.
    pub data: PathBuf,
    #[arg(long, default_value_t = 48)]
    pub tau_max: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainArgs {
    /// Scenario document.
    pub scenario: PathBuf,
    /// Model parameter file (greenhouse coefficients).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    /// Signed knowledge graph.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg: Option<PathBuf>,
    /// Lagged causal graph from `discover`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal_graph: Option<PathBuf>,
    /// Lag baselines; defaults to `baselines.toml` beside the causal graph.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<PathBuf>,
    /// Threshold parameter file from `calibrate`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<PathBuf>,
    /// Override the scenario horizon.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Explain without the knowledge graph or causal evidence.
    #[arg(long)]
    #[serde(default)]
    pub degraded_ok: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Labeled multipliers and counterfactual trials.
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.125)]
    pub calibration_fraction: f64,
    #[arg(long, default_value_t = 0.125)]
    pub heldout_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Suite configuration document.
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Override the configured horizon.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 16)]
    pub horizon: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunArgs {
    /// `manifest.toml` of an earlier run.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Record of one run: enough to repeat it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub invocation: Command,
}

impl RunManifest {
    pub fn for_command(cmd: &Command) -> Self {
        Self {
            tool: "mpc-explain".into(),
            version: TOOL_VERSION.into(),
            command: cmd.name().into(),
            config_paths: cmd.inputs(),
            seeds: cmd.seeds(),
            out_dir: cmd.out().to_path_buf(),
            invocation: cmd.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let m: Self = toml::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
        if m.version != TOOL_VERSION {
            log::warn!("manifest written by version {}, running {}", m.version, TOOL_VERSION);
        }
        Ok(m)
    }
}

/// Paths written by a run, relative to its output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub files: Vec<String>,
    /// Text meant for standard output.
    pub summary: String,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self, cmd: &Command, summary: String) -> Result<RunOutput, CliError> {
        self.write(MANIFEST_FILE, RunManifest::for_command(cmd).to_toml()?)?;
        Ok(RunOutput { files: self.files, summary })
    }
}

/// Run one command. Outputs go to the command's `--out` directory.
pub fn execute(cmd: &Command) -> Result<RunOutput, CliError> {
    match cmd {
        Command::Discover(a) => cmd_discover(cmd, a),
        Command::Explain(a) => cmd_explain(cmd, a),
        Command::Calibrate(a) => cmd_calibrate(cmd, a),
        Command::Eval(a) => cmd_eval(cmd, a),
        Command::Demo(a) => cmd_demo(cmd, a),
        Command::Rerun(a) => rerun(&a.manifest, &a.out),
    }
}

/// Repeat the run recorded in `manifest` with outputs in `out`.
pub fn rerun(manifest: &Path, out: &Path) -> Result<RunOutput, CliError> {
    let m = RunManifest::load(manifest)?;
    if matches!(m.invocation, Command::Rerun(_)) {
        return Err(CliError::Manifest("a rerun manifest cannot be replayed".into()));
    }
    execute(&m.invocation.with_out(out.to_path_buf()))
}

fn cmd_discover(cmd: &Command, a: &DiscoverArgs) -> Result<RunOutput, CliError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let data = load_time_series(&a.data)?;
    let graph = fit_pcmci(&data, a.tau_max, a.alpha)?;
    let baseline = compute_baselines(&data, a.tau_max)?;
    let mut out = OutDir::create(&a.out)?;
    out.write("causal_graph.toml", graph.to_toml()?)?;
    out.write("baselines.toml", baseline.to_toml()?)?;
    let mut summary = format!("{} edges over {} variables (tau_max {}, alpha {})\n", graph.edges.len(), graph.variables.len(), a.tau_max, a.alpha);
    for e in &graph.edges {
        let _ = writeln!(summary, "  {}(t-{}) -> {}  p={:.2e}", e.source, e.lag, e.target, e.p_value);
    }
    for r in &data.rejected {
        let _ = writeln!(summary, "  rejected series `{r}`");
    }
    out.finish(cmd, summary)
}

fn load_baselines(path: &Path) -> Result<LagBaseline, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(LagBaseline::from_toml(&text)?)
}

fn cmd_explain(cmd: &Command, a: &ExplainArgs) -> Result<RunOutput, CliError> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(h) = a.horizon {
        if scenario.contexts.iter().any(|c| c.forecast.len() < h) {
            return Err(CliError::Usage(format!("--horizon {h} exceeds the scenario forecast length")));
        }
        scenario.horizon = h;
    }
    let params = match &a.params {
        Some(p) => GreenhouseParams::from_param_file(&ParamFile::load(p)?)?,
        None => GreenhouseParams::default(),
    };
    let model = model_for(&scenario, &params)?;
    let kg = a.kg.as_deref().map(load_graph_file).transpose()?;
    let conditions = match (&kg, scenario.model.as_str()) {
        (Some(_), "greenhouse") => Some(greenhouse_conditions()),
        (Some(_), _) => model.conditions,
        (None, _) => None,
    };
    let causal_graph = a.causal_graph.as_deref().map(LaggedCausalGraph::load).transpose()?;
    let baseline = match (&a.baselines, &a.causal_graph) {
        (Some(p), _) => Some(load_baselines(p)?),
        (None, Some(g)) => {
            let sibling = g.with_file_name("baselines.toml");
            sibling.exists().then(|| load_baselines(&sibling)).transpose()?
        }
        (None, None) => None,
    };
    let mut missing = Vec::new();
    if kg.is_none() {
        missing.push("knowledge graph".to_string());
    }
    if causal_graph.is_none() {
        missing.push("causal graph".to_string());
    } else if baseline.is_none() {
        missing.push("lag baselines".to_string());
    }
    if scenario.histories.iter().any(Option::is_none) && causal_graph.is_some() {
        missing.push("decision history".to_string());
    }
    if !missing.is_empty() && !a.degraded_ok {
        return Err(CliError::Degraded(missing.join(", ")));
    }
    let mut cfg = ExplainConfig::default();
    if let Some(p) = &a.thresholds {
        let (table, costs) = load_thresholds(p)?;
        cfg.thresholds = table;
        cfg.costs = costs;
    }

    let mut out = OutDir::create(&a.out)?;
    let mut summary = String::new();
    let mut failed = Vec::new();
    let total = scenario.contexts.len();
    for (k, ctx) in scenario.contexts.iter().enumerate() {
        let solution = match solve(&model.spec, ctx, &cfg.solver) {
            Ok(s) => s,
            Err(e) => {
                failed.push(format!("decision {k} ({}): {e}", ctx.timestamp));
                continue;
            }
        };
        let history = scenario.histories.get(k).and_then(Option::as_ref);
        let causal = match (&causal_graph, &baseline, history) {
            (Some(graph), Some(baseline), Some(history)) => Some(CausalEvidence { graph, baseline, history }),
            _ => None,
        };
        let sources = EvidenceSources { kg: kg.as_ref(), conditions: conditions.as_ref(), causal, use_kkt: true };
        let d = Decision { spec: &model.spec, ctx, solution: &solution };
        let reference = if total == 1 { scenario.id.clone() } else { format!("{}#{k}", scenario.id) };
        let record = generate_explanation(&d, &sources, &cfg, &reference);
        write_record(&mut out, k, &record)?;
        let _ = writeln!(
            summary,
            "decision {k} [{}]: {} (confidence {}){}",
            record.timestamp,
            record.selected.map_or("none".to_string(), |h| h.to_string()),
            record.confidence.map_or("-".to_string(), |c| format!("{c:.2}")),
            if record.degraded_mode { ", degraded" } else { "" },
        );
    }
    let result = out.finish(cmd, summary)?;
    if failed.is_empty() {
        Ok(result)
    } else {
        for f in &failed {
            eprintln!("{f}");
        }
        Err(CliError::Partial { failed: failed.len(), total })
    }
}

fn write_record(out: &mut OutDir, k: usize, record: &ExplanationRecord) -> Result<(), CliError> {
    out.write(&format!("decision-{k:03}.json"), record.to_json() + "\n")?;
    out.write(&format!("decision-{k:03}.txt"), &record.narrative)?;
    Ok(())
}

fn cmd_calibrate(cmd: &Command, a: &CalibrateArgs) -> Result<RunOutput, CliError> {
    let fractions = SplitFractions::new(a.calibration_fraction, a.heldout_fraction)?;
    let data = CalibrationData::load(&a.data)?;
    if data.multipliers.is_empty() {
        return Err(CliError::Usage("calibration data holds no labeled multipliers".into()));
    }
    let mut table = ThresholdTable::default();
    let mut results = Vec::new();
    for (family, samples) in data.by_family() {
        let r = calibrate_kkt_thresholds(&samples, &fractions, a.seed)?;
        table.set_family(&family, r.tau, Provenance::Calibrated)?;
        results.push(r);
    }
    let costs = if data.trials.is_empty() {
        log::warn!("no counterfactual trials; keeping default cost thresholds");
        CostThresholds::default()
    } else {
        calibrate_cost_thresholds(&data.trials)?
    };
    let mut out = OutDir::create(&a.out)?;
    let path = out.root.join("thresholds.params");
    save_thresholds(&path, &table, &costs)?;
    out.files.push("thresholds.params".into());
    let report = calibration_report(&results, &costs);
    out.write("calibration_report.tsv", &report)?;
    out.finish(cmd, report)
}

/// Suite configuration document for `eval`.
///
/// ```toml
/// suite = "greenhouse"
/// horizon = 16
/// ablations = ["drop-kg", "drop-pcmci", "drop-kkt"]
/// threshold_scales = [0.5, 1.5]
///
/// [kg_perturbation]
/// op = "remove"
/// levels = [0.1, 0.2, 0.3]
/// seeds = [0, 1, 2, 3, 4]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfigFile {
    pub suite: SuiteKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub ablations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_perturbation: Option<PerturbationSweep>,
    #[serde(default)]
    pub threshold_scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSweep {
    pub op: String,
    pub levels: Vec<f64>,
    #[serde(default = "default_perturbation_seeds")]
    pub seeds: Vec<u64>,
}

fn default_perturbation_seeds() -> Vec<u64> {
    vec![0]
}

pub const DEFAULT_HORIZON: usize = 16;

/// One cell of the evaluation grid; perturbation cells merge their seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCell {
    pub tag: String,
    pub configs: Vec<(u64, SuiteConfig)>,
}

impl SuiteConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("suite config: {e}")))
    }

    /// `full` first, then ablations, perturbation levels and threshold scales in file order.
    pub fn cells(&self) -> Result<Vec<EvalCell>, CliError> {
        let single = |c: SuiteConfig| EvalCell { tag: c.tag(), configs: vec![(0, c)] };
        let mut cells = vec![single(SuiteConfig::full())];
        for name in &self.ablations {
            let c = match name.as_str() {
                "drop-kg" => SuiteConfig { drop_kg: true, ..Default::default() },
                "drop-pcmci" => SuiteConfig { drop_pcmci: true, ..Default::default() },
                "drop-kkt" => SuiteConfig { drop_kkt: true, ..Default::default() },
                "drop-all" => SuiteConfig::drop_all(),
                other => return Err(CliError::Usage(format!("unknown ablation `{other}`"))),
            };
            cells.push(single(c));
        }
        if let Some(p) = &self.kg_perturbation {
            if p.seeds.is_empty() {
                return Err(CliError::Usage("kg_perturbation.seeds is empty".into()));
            }
            for &level in &p.levels {
                if !(0.0..=1.0).contains(&level) {
                    return Err(CliError::Usage(format!("perturbation level {level} outside [0, 1]")));
                }
                let op = match p.op.as_str() {
                    "remove" => Perturbation::Remove(level),
                    "flip" => Perturbation::Flip(level),
                    other => return Err(CliError::Usage(format!("unknown perturbation op `{other}`"))),
                };
                let configs = p
                    .seeds
                    .iter()
                    .map(|&s| (s, SuiteConfig { kg_perturbation: Some((op, s)), ..Default::default() }))
                    .collect();
                cells.push(EvalCell { tag: format!("{}-{level}", p.op), configs });
            }
        }
        for &f in &self.threshold_scales {
            if !(f > 0.0 && f.is_finite()) {
                return Err(CliError::Usage(format!("threshold scale {f} must be positive")));
            }
            cells.push(single(SuiteConfig { threshold_scale: Some(f), ..Default::default() }));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(c) = cells.iter().find(|c| !seen.insert(c.tag.clone())) {
            return Err(CliError::Usage(format!("configuration `{}` listed twice", c.tag)));
        }
        Ok(cells)
    }
}

fn cmd_eval(cmd: &Command, a: &EvalArgs) -> Result<RunOutput, CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| io_err(&a.config, e))?;
    let config = SuiteConfigFile::parse(&text)?;
    let cells = config.cells()?;
    let horizon = a.horizon.or(config.horizon).unwrap_or(DEFAULT_HORIZON);
    let suite = build_suite(config.suite, a.seed, horizon)?;
    let mut out = OutDir::create(&a.out)?;
    let mut summary_rows: BTreeMap<usize, (String, MetricReport)> = BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        let report = if cell.configs.len() == 1 && cell.configs[0].1.kg_perturbation.is_none() {
            run_suite(&suite, &cell.configs[0].1)
        } else {
            let runs: Vec<(u64, MetricReport)> = cell.configs.iter().map(|(s, c)| (*s, run_suite(&suite, c))).collect();
            merge_seeded(&runs, cell.tag.clone()).expect("cells hold at least one seed")
        };
        out.write(&format!("{}.tsv", cell.tag), report.to_tsv())?;
        out.write(&format!("{}.json", cell.tag), report.to_json() + "\n")?;
        summary_rows.insert(i, (cell.tag.clone(), report));
    }
    let full = summary_rows[&0].1.p_at_1();
    let mut summary = String::from("config\tp_at_1\tdelta\tmrr\trouge_l\tfaithfulness\tfailures\n");
    for (tag, r) in summary_rows.values() {
        let _ = writeln!(
            summary,
            "{tag}\t{:.4}\t{:+.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            r.p_at_1(),
            r.p_at_1() - full,
            r.aggregate.mrr,
            r.aggregate.rouge_l,
            r.aggregate.faithfulness,
            r.failures.len()
        );
    }
    out.write("summary.tsv", &summary)?;
    out.finish(cmd, summary)
}

fn cmd_demo(cmd: &Command, a: &DemoArgs) -> Result<RunOutput, CliError> {
    if a.horizon < 8 {
        return Err(CliError::Usage("--horizon must be at least 8 for the overnight forecast".into()));
    }
    let mut out = OutDir::create(&a.out)?;
    let log = greenhouse_operations_log(LOG_LENGTH, a.seed);
    let start = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");
    let mut csv = Vec::new();
    write_time_series(&log, start, &mut csv)?;
    out.write("operations_log.csv", csv)?;
    let graph = fit_pcmci(&log, LOG_TAU_MAX, 0.05)?;
    let baseline = compute_baselines(&log, LOG_TAU_MAX)?;
    let scenario = cold_night_scenario("cold-night", a.seed, 18.5, a.horizon, Some(&baseline));
    out.write("scenario.toml", scenario.to_toml()?)?;
    out.write("kg.toml", save_graph(&greenhouse_graph())?)?;
    out.write("causal_graph.toml", graph.to_toml()?)?;
    out.write("baselines.toml", baseline.to_toml()?)?;
    out.write("params.params", GreenhouseParams::default().to_param_file().render())?;
    let cfg = ExplainConfig::default();
    let thresholds = out.root.join("thresholds.params");
    save_thresholds(&thresholds, &cfg.thresholds, &cfg.costs)?;
    out.files.push("thresholds.params".into());

    let model = model_for(&scenario, &GreenhouseParams::default())?;
    let ctx = &scenario.contexts[0];
    let solution = solve(&model.spec, ctx, &cfg.solver)?;
    let history = scenario.histories[0].as_ref().expect("demo scenario carries history");
    let sources = EvidenceSources {
        kg: Some(&model.kg),
        conditions: model.conditions.as_ref(),
        causal: Some(CausalEvidence { graph: &graph, baseline: &baseline, history }),
        use_kkt: true,
    };
    let d = Decision { spec: &model.spec, ctx, solution: &solution };
    let record = generate_explanation(&d, &sources, &cfg, &scenario.id);
    write_record(&mut out, 0, &record)?;
    out.finish(cmd, record.narrative.clone())
}

/// Parse `args`, run, print the summary; returns the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            print!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
