//! Evaluation harness: metrics, annotated scenario suites, ablation and
//! robustness runs.

mod metrics;
pub mod qp;
mod suite;

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{faithfulness, instantaneous_faithfulness, ranking_at_k, ranking_metrics, rouge_l, RankingAtK, RankingMetrics, KS};
pub use suite::{
    build_suite, cold_night_scenario, greenhouse_operations_log, greenhouse_suite, history_window, model_for,
    GroundTruthAnnotation, ModelBundle, Suite, SuiteKind, SuiteScenario, LOG_LENGTH, LOG_TAU_MAX, LOG_VARIABLES,
};

use crate::causality::CausalityError;
use crate::greenhouse::GreenhouseParams;
use crate::hypothesis::{generate_explanation, CausalEvidence, Decision, EvidenceSources, ExplainConfig, ExplanationRecord, Hypothesis};
use crate::kg::{perturb, Perturbation};
use crate::solver::solve;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("no statements to score")]
    EmptyStatements,
    #[error("scenario `{0}` has no ground-truth factors")]
    EmptyTruth(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Causality(#[from] CausalityError),
}

/// Which evidence sources to withhold and how to perturb the rest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub drop_kg: bool,
    pub drop_pcmci: bool,
    pub drop_kkt: bool,
    /// Knowledge-graph perturbation and its seed.
    pub kg_perturbation: Option<(Perturbation, u64)>,
    /// Multiplier on every KKT threshold; 1.0 leaves them unchanged.
    pub threshold_scale: Option<f64>,
}

impl SuiteConfig {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn drop_all() -> Self {
        Self { drop_kg: true, drop_pcmci: true, drop_kkt: true, ..Self::default() }
    }

    /// Short label such as `full`, `drop-kg+drop-kkt`, `remove-0.2-s3`, `thresholds-x1.5`.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.drop_kg {
            parts.push("drop-kg".to_string());
        }
        if self.drop_pcmci {
            parts.push("drop-pcmci".to_string());
        }
        if self.drop_kkt {
            parts.push("drop-kkt".to_string());
        }
        if let Some((p, seed)) = self.kg_perturbation {
            let (op, f) = match p {
                Perturbation::Remove(f) => ("remove", f),
                Perturbation::Flip(f) => ("flip", f),
            };
            parts.push(format!("{op}-{f}-s{seed}"));
        }
        if let Some(s) = self.threshold_scale {
            parts.push(format!("thresholds-x{s}"));
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Primary reason a scenario's top-ranked factor is wrong.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCategory {
    MissingEvidence,
    ThresholdSensitivity,
    TemporalMismatch,
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCategory::MissingEvidence => "missing-evidence",
            FailureCategory::ThresholdSensitivity => "threshold-sensitivity",
            FailureCategory::TemporalMismatch => "temporal-mismatch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub scenario_ref: String,
    pub category: FailureCategory,
    pub detail: String,
}

/// Metric row of one scenario (or the suite mean).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario_ref: String,
    pub selected: Option<Hypothesis>,
    pub predicted: Vec<String>,
    pub rouge_l: f64,
    pub faithfulness: f64,
    pub p_at: [f64; 3],
    pub r_at: [f64; 3],
    pub f1_at: [f64; 3],
    pub ndcg_at: [f64; 3],
    pub mrr: f64,
}

impl MetricRow {
    pub fn p_at_1(&self) -> f64 {
        self.p_at[0]
    }

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.rouge_l, self.faithfulness];
        v.extend(self.p_at);
        v.extend(self.r_at);
        v.extend(self.f1_at);
        v.extend(self.ndcg_at);
        v.push(self.mrr);
        v
    }

    fn from_values(scenario_ref: &str, v: &[f64]) -> Self {
        let arr = |i: usize| [v[i], v[i + 1], v[i + 2]];
        MetricRow {
            scenario_ref: scenario_ref.to_string(),
            rouge_l: v[0],
            faithfulness: v[1],
            p_at: arr(2),
            r_at: arr(5),
            f1_at: arr(8),
            ndcg_at: arr(11),
            mrr: v[14],
            ..Default::default()
        }
    }
}

const COLUMNS: [&str; 15] = [
    "rouge_l", "faithfulness", "p_at_1", "p_at_3", "p_at_5", "r_at_1", "r_at_3", "r_at_5", "f1_at_1", "f1_at_3", "f1_at_5",
    "ndcg_at_1", "ndcg_at_3", "ndcg_at_5", "mrr",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub suite: SuiteKind,
    pub config_tag: String,
    pub rows: Vec<MetricRow>,
    pub aggregate: MetricRow,
    pub failures: Vec<FailureEntry>,
}

impl MetricReport {
    /// Mean of `rows`, ordered by scenario id.
    pub fn from_rows(suite: SuiteKind, config_tag: String, mut rows: Vec<MetricRow>, mut failures: Vec<FailureEntry>) -> Self {
        rows.sort_by(|a, b| a.scenario_ref.cmp(&b.scenario_ref));
        failures.sort_by(|a, b| a.scenario_ref.cmp(&b.scenario_ref));
        let mut sum = vec![0.0; COLUMNS.len()];
        for r in &rows {
            for (s, v) in sum.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let aggregate = MetricRow::from_values("mean", &mean);
        Self { suite, config_tag, rows, aggregate, failures }
    }

    pub fn p_at_1(&self) -> f64 {
        self.aggregate.p_at_1()
    }

    /// Tab-separated table: one row per scenario then the mean.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("scenario\tselected\tpredicted\t{}\n", COLUMNS.join("\t"));
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            let sel = r.selected.map_or("-".to_string(), |h| h.to_string());
            let pred = if r.predicted.is_empty() { "-".to_string() } else { r.predicted.join(",") };
            let _ = write!(out, "{}\t{}\t{}", r.scenario_ref, sel, pred);
            for v in r.values() {
                let _ = write!(out, "\t{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn in_unit_range(&self) -> bool {
        self.rows.iter().chain(std::iter::once(&self.aggregate)).all(|r| r.values().iter().all(|v| (0.0..=1.0).contains(v)))
    }
}

/// Everything produced for one scenario.
pub struct ScenarioOutcome {
    pub record: Option<ExplanationRecord>,
    pub row: MetricRow,
    pub failure: Option<FailureEntry>,
}

fn classify_failure(record: &ExplanationRecord) -> (FailureCategory, String) {
    let flags: Vec<&String> = record.trace.iter().flat_map(|t| t.flags.iter()).chain(&record.evidence.uncertainty_flags).collect();
    let skipped = record.trace.iter().flat_map(|t| t.flags.iter()).find(|f| f.contains("unavailable"));
    if record.selected.is_none() || record.causal_factors.is_empty() || skipped.is_some() {
        let detail = skipped.or_else(|| flags.iter().copied().find(|f| f.contains("unavailable")));
        return (FailureCategory::MissingEvidence, detail.cloned().unwrap_or_else(|| "no supported hypothesis or factors".into()));
    }
    if let Some(f) = flags.iter().find(|f| f.contains("threshold") || f.contains("uncertain")) {
        return (FailureCategory::ThresholdSensitivity, f.to_string());
    }
    let sel = record.selected.map_or("none".to_string(), |h| h.to_string());
    (FailureCategory::TemporalMismatch, format!("{sel} ranked {} first", record.causal_factors[0]))
}

/// Full pipeline for one annotated scenario under `config`.
pub fn run_scenario(suite: &Suite, s: &SuiteScenario, config: &SuiteConfig) -> ScenarioOutcome {
    let id = s.scenario.id.clone();
    let fail = |detail: String| ScenarioOutcome {
        record: None,
        row: MetricRow { scenario_ref: id.clone(), ..Default::default() },
        failure: Some(FailureEntry { scenario_ref: id.clone(), category: FailureCategory::MissingEvidence, detail }),
    };
    let model = match model_for(&s.scenario, &GreenhouseParams::default()) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    let Some(ctx) = s.scenario.contexts.first() else { return fail("scenario has no decision".into()) };
    let mut cfg = ExplainConfig::default();
    if let Some(f) = config.threshold_scale {
        cfg.thresholds = cfg.thresholds.scaled(f);
    }
    let solution = match solve(&model.spec, ctx, &cfg.solver) {
        Ok(sol) => sol,
        Err(e) => return fail(format!("solve failed: {e}")),
    };
    let kg = match config.kg_perturbation {
        Some((p, seed)) => perturb(&model.kg, p, seed),
        None => model.kg,
    };
    let history = s.scenario.histories.first().and_then(|h| h.as_ref());
    let causal = match (&suite.causal_graph, &suite.baseline, history) {
        (Some(graph), Some(baseline), Some(history)) if !config.drop_pcmci => Some(CausalEvidence { graph, baseline, history }),
        _ => None,
    };
    let sources = EvidenceSources {
        kg: (!config.drop_kg).then_some(&kg),
        conditions: if config.drop_kg { None } else { model.conditions.as_ref() },
        causal,
        use_kkt: !config.drop_kkt,
    };
    let d = Decision { spec: &model.spec, ctx, solution: &solution };
    let record = generate_explanation(&d, &sources, &cfg, &id);
    let truth = &s.annotation.true_causal_factors;
    let rank = ranking_metrics(&record.causal_factors, truth);
    let statements: Vec<_> = record.statements().cloned().collect();
    let row = MetricRow {
        scenario_ref: id.clone(),
        selected: record.selected,
        predicted: record.causal_factors.clone(),
        rouge_l: rouge_l(&record.narrative, &s.annotation.reference_explanation_text).unwrap_or(0.0),
        faithfulness: instantaneous_faithfulness(&statements).unwrap_or(0.0),
        p_at: [0, 1, 2].map(|i| rank.at[i].precision),
        r_at: [0, 1, 2].map(|i| rank.at[i].recall),
        f1_at: [0, 1, 2].map(|i| rank.at[i].f1),
        ndcg_at: [0, 1, 2].map(|i| rank.at[i].ndcg),
        mrr: rank.mrr,
    };
    let failure = (row.p_at_1() < 1.0).then(|| {
        let (category, detail) = classify_failure(&record);
        FailureEntry { scenario_ref: id.clone(), category, detail }
    });
    ScenarioOutcome { record: Some(record), row, failure }
}

/// Run every scenario in parallel and merge rows in scenario-id order.
pub fn run_suite(suite: &Suite, config: &SuiteConfig) -> MetricReport {
    let outcomes: Vec<ScenarioOutcome> = suite.scenarios.par_iter().map(|s| run_scenario(suite, s, config)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        rows.push(o.row);
        failures.extend(o.failure);
    }
    MetricReport::from_rows(suite.kind, config.tag(), rows, failures)
}

/// Merge reports of the same configuration run under several seeds; rows
/// are renamed `id#s{seed}`.
pub fn merge_seeded(reports: &[(u64, MetricReport)], config_tag: String) -> Option<MetricReport> {
    let suite = reports.first()?.1.suite;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in reports {
        for row in &r.rows {
            rows.push(MetricRow { scenario_ref: format!("{}#s{seed}", row.scenario_ref), ..row.clone() });
        }
        for f in &r.failures {
            failures.push(FailureEntry { scenario_ref: format!("{}#s{seed}", f.scenario_ref), ..f.clone() });
        }
    }
    Some(MetricReport::from_rows(suite, config_tag, rows, failures))
}
