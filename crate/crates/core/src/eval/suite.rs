//! Synthetic scenario suites generated from known causes.
//!
//! Greenhouse groups:
//! * `cold-night`: falling outdoor temperature forces preemptive heating
//!   against the lower comfort band.
//! * `enrichment`: a high biomass price drives CO2 enrichment onto the hard
//!   `C_max` limit.
//! * `routine`: a mature crop (large biomass) with enrichment that follows
//!   the operator's learned response to recent radiation; the log shows
//!   unusual radiation and outdoor temperature a few samples back.
//! * `seedling`: a young crop in bright conditions, where enrichment pays
//!   for itself through growth driven by radiation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::causality::{compute_baselines, fit_pcmci, LagBaseline, LaggedCausalGraph, TimeSeriesTable};
use crate::greenhouse::{
    build_greenhouse_ocp, build_hardconstrained_testbed, greenhouse_conditions, greenhouse_graph, synth_disturbances,
    testbed_graph, GreenhouseParams, Profile, TestbedKind, DISTURBANCE_UNITS, SAMPLE_MINUTES,
};
use crate::kg::{ConditionRegistry, SignedKnowledgeGraph};
use crate::ocp::{DecisionContext, HistoryWindow, OcpSpec, Scenario};

/// Known causes of one scenario, most important first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub scenario_ref: String,
    pub true_causal_factors: Vec<String>,
    pub reference_explanation_text: String,
}

impl GroundTruthAnnotation {
    pub fn new(scenario_ref: &str, factors: &[&str], text: &str) -> Result<Self, EvalError> {
        if factors.is_empty() {
            return Err(EvalError::EmptyTruth(scenario_ref.to_string()));
        }
        Ok(Self {
            scenario_ref: scenario_ref.to_string(),
            true_causal_factors: factors.iter().map(|s| s.to_string()).collect(),
            reference_explanation_text: text.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteScenario {
    pub group: String,
    pub scenario: Scenario,
    pub annotation: GroundTruthAnnotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    Greenhouse,
    ThermalZone,
    ReactorChain,
}

impl std::str::FromStr for SuiteKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greenhouse" => Ok(SuiteKind::Greenhouse),
            "thermal-zone" => Ok(SuiteKind::ThermalZone),
            "reactor-chain" => Ok(SuiteKind::ReactorChain),
            other => Err(EvalError::Config(format!("unknown suite `{other}`"))),
        }
    }
}

/// Annotated scenarios plus the causal artifacts learned from the
/// suite's operations log.
#[derive(Clone, Debug)]
pub struct Suite {
    pub kind: SuiteKind,
    pub horizon: usize,
    pub scenarios: Vec<SuiteScenario>,
    pub causal_graph: Option<LaggedCausalGraph>,
    pub baseline: Option<LagBaseline>,
}

/// Problem, physics graph and condition evaluators for a scenario's model.
pub struct ModelBundle {
    pub spec: OcpSpec,
    pub kg: SignedKnowledgeGraph,
    pub conditions: Option<ConditionRegistry>,
}

/// Build the model named by `scenario.model`; greenhouse parameters start
/// from `base` and are overridden by the scenario's `meta` entries.
pub fn model_for(scenario: &Scenario, base: &GreenhouseParams) -> Result<ModelBundle, EvalError> {
    match scenario.model.as_str() {
        "greenhouse" => {
            let mut p = base.clone();
            for (k, v) in &scenario.meta {
                if !p.set(k, *v) {
                    return Err(EvalError::Config(format!("scenario `{}`: unknown parameter `{k}`", scenario.id)));
                }
            }
            Ok(ModelBundle {
                spec: build_greenhouse_ocp(&p, scenario.horizon),
                kg: greenhouse_graph(),
                conditions: Some(greenhouse_conditions()),
            })
        }
        other => {
            let kind: TestbedKind = other.parse().map_err(EvalError::Config)?;
            Ok(ModelBundle {
                spec: build_hardconstrained_testbed(kind, scenario.horizon),
                kg: testbed_graph(kind),
                conditions: None,
            })
        }
    }
}

pub const LOG_VARIABLES: [&str; 4] = ["T_out", "Q_rad", "u_C", "u_Qh"];
pub const LOG_TAU_MAX: usize = 10;
pub const LOG_LENGTH: usize = 1500;

struct LogProcess {
    zt: f64,
    zq: f64,
    past: Vec<(f64, f64)>,
}

/// Standardized outdoor temperature and radiation drive the operator's
/// enrichment (`Q_rad` lag 2, `T_out` lag 6) and heating (`T_out` lag 8).
fn log_rows(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let e = Normal::new(0.0, 1.0).expect("unit normal");
    let mut p = LogProcess { zt: 0.0, zq: 0.0, past: Vec::new() };
    let burn = 200;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n + burn {
        p.zt = 0.95 * p.zt + (1.0 - 0.95f64.powi(2)).sqrt() * e.sample(rng);
        p.zq = 0.9 * p.zq + (1.0 - 0.81f64).sqrt() * e.sample(rng);
        p.past.push((p.zt, p.zq));
        let lag = |k: usize| p.past[p.past.len() - 1 - k.min(p.past.len() - 1)];
        let u_c = 0.4 + 0.12 * lag(2).1 - 0.08 * lag(6).0 + 0.05 * e.sample(rng);
        let u_qh = 0.3 - 0.12 * lag(8).0 + 0.05 * e.sample(rng);
        if t >= burn {
            rows.push(vec![12.0 + 4.0 * p.zt, 200.0 + 80.0 * p.zq, u_c, u_qh]);
        }
    }
    rows
}

/// Seeded greenhouse operations log sampled every 15 minutes.
pub fn greenhouse_operations_log(n: usize, seed: u64) -> TimeSeriesTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = log_rows(n, &mut rng);
    TimeSeriesTable::new(LOG_VARIABLES.iter().map(|s| s.to_string()).collect(), rows, SAMPLE_MINUTES)
        .expect("well-formed log")
}

/// Recent window of the log process; `plant` overrides `(variable, lag, z)`
/// with values `z` baseline standard deviations from the baseline mean.
pub fn history_window(seed: u64, baseline: &LagBaseline, plant: &[(&str, usize, f64)]) -> HistoryWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = log_rows(LOG_TAU_MAX + 1, &mut rng);
    let len = rows.len();
    for (var, lag, z) in plant {
        let col = LOG_VARIABLES.iter().position(|v| v == var).expect("log variable");
        let (mu, sigma) = baseline.get(var, *lag).expect("lag within baseline");
        rows[len - 1 - lag][col] = mu + z * sigma;
    }
    HistoryWindow { variables: LOG_VARIABLES.iter().map(|s| s.to_string()).collect(), rows }
}

fn units() -> Vec<String> {
    DISTURBANCE_UNITS.iter().map(|s| s.to_string()).collect()
}

/// Mild forecast with radiation rising towards `q_peak` and steady outdoor air.
fn daytime_forecast(h: usize, q_peak: f64, t_out: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let e = Normal::new(0.0, 1.0).expect("unit normal");
    (0..h)
        .map(|k| {
            let s = 0.6 + 0.4 * (k as f64 / h.max(1) as f64);
            vec![
                t_out + 0.3 * e.sample(rng),
                410.0 + 3.0 * e.sample(rng),
                70.0 + 2.0 * e.sample(rng),
                (q_peak * s).max(0.0),
            ]
        })
        .collect()
}

fn scenario(id: &str, model: &str, ctx: DecisionContext, history: Option<HistoryWindow>, meta: &[(&str, f64)]) -> Scenario {
    let mut s = Scenario::single(id, model, ctx, history, SAMPLE_MINUTES);
    s.meta = meta.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    s
}

fn stamp(hour: usize, minute: usize) -> String {
    format!("2024-01-15T{hour:02}:{minute:02}:00")
}

/// Cold-night scenario that reproduces the worked example: current air
/// temperature inside the comfort band, outdoor air falling to 5 degC and
/// an unusually cold outdoor reading two hours back.
pub fn cold_night_scenario(id: &str, seed: u64, t0: f64, horizon: usize, baseline: Option<&LagBaseline>) -> Scenario {
    let forecast = synth_disturbances(Profile::ColdNight, horizon, seed);
    let ctx = DecisionContext::new(vec![t0, 700.0, 75.0, 1.0], forecast)
        .with_timestamp(stamp(6, 30))
        .with_units(units());
    let history = baseline.map(|b| history_window(seed + 1000, b, &[("T_out", 8, -2.57)]));
    scenario(id, "greenhouse", ctx, history, &[])
}

/// The 22-scenario greenhouse suite.
pub fn greenhouse_suite(seed: u64, horizon: usize) -> Result<Suite, EvalError> {
    let log = greenhouse_operations_log(LOG_LENGTH, seed);
    let graph = fit_pcmci(&log, LOG_TAU_MAX, 0.05)?;
    let baseline = compute_baselines(&log, LOG_TAU_MAX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    for i in 0..6 {
        let id = format!("gh-cold-{i:02}");
        let t0 = 18.2 + 0.1 * i as f64;
        let s = cold_night_scenario(&id, seed + i as u64, t0, horizon, Some(&baseline));
        let a = GroundTruthAnnotation::new(
            &id,
            &["T_comfort_lo", "T_out"],
            "Safety: heating was activated to keep T above the lower comfort bound T_comfort_lo because the outdoor temperature T_out is falling overnight.",
        )?;
        out.push(SuiteScenario { group: "cold-night".into(), scenario: s, annotation: a });
    }
    for i in 0..5 {
        let id = format!("gh-enrich-{i:02}");
        let forecast = daytime_forecast(horizon, 350.0 + 30.0 * i as f64, 16.0, &mut rng);
        let c0 = 960.0 + 5.0 * i as f64;
        let ctx = DecisionContext::new(vec![21.0, c0, 72.0, 1.0], forecast)
            .with_timestamp(stamp(10, 0))
            .with_units(units());
        let h = history_window(seed + 2000 + i as u64, &baseline, &[]);
        let s = scenario(&id, "greenhouse", ctx, Some(h), &[("biomass_price", 2000.0), ("w_co2", 1e-6)]);
        let a = GroundTruthAnnotation::new(
            &id,
            &["C_max", "Q_rad"],
            "Safety: CO2 enrichment is limited by the hard bound C_max because crop value is high and radiation Q_rad drives growth.",
        )?;
        out.push(SuiteScenario { group: "enrichment".into(), scenario: s, annotation: a });
    }
    for i in 0..6 {
        let id = format!("gh-routine-{i:02}");
        let forecast = daytime_forecast(horizon, 220.0 + 10.0 * i as f64, 14.0, &mut rng);
        let ctx = DecisionContext::new(vec![21.0, 750.0, 72.0, 6.0 + 0.5 * i as f64], forecast)
            .with_timestamp(stamp(9, 15))
            .with_units(units());
        let z_q = 3.2 + 0.1 * i as f64;
        let h = history_window(seed + 3000 + i as u64, &baseline, &[("Q_rad", 2, z_q), ("T_out", 6, -2.6)]);
        let s = scenario(&id, "greenhouse", ctx, Some(h), &[("biomass_price", 400.0)]);
        let a = GroundTruthAnnotation::new(
            &id,
            &["Q_rad"],
            "History: CO2 enrichment follows the learned response to the unusual radiation Q_rad two samples ago.",
        )?;
        out.push(SuiteScenario { group: "routine".into(), scenario: s, annotation: a });
    }
    for i in 0..5 {
        let id = format!("gh-seedling-{i:02}");
        let forecast = daytime_forecast(horizon, 370.0 + 8.0 * i as f64, 14.0, &mut rng);
        let ctx = DecisionContext::new(vec![21.0, 650.0, 72.0, 0.002 + 0.0005 * i as f64], forecast)
            .with_timestamp(stamp(9, 0))
            .with_units(units());
        let h = history_window(seed + 4000 + i as u64, &baseline, &[]);
        let s = scenario(&id, "greenhouse", ctx, Some(h), &[("biomass_price", 250.0), ("price_co2", 0.3), ("quad_co2", 0.3)]);
        let a = GroundTruthAnnotation::new(
            &id,
            &["Q_rad"],
            "Economics: CO2 enrichment lowers the predicted cost because strong radiation Q_rad turns extra CO2 into crop growth.",
        )?;
        out.push(SuiteScenario { group: "seedling".into(), scenario: s, annotation: a });
    }
    Ok(Suite { kind: SuiteKind::Greenhouse, horizon, scenarios: out, causal_graph: Some(graph), baseline: Some(baseline) })
}

fn thermal_zone_suite(seed: u64, horizon: usize) -> Result<Suite, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..5 {
        let id = format!("tz-cold-{i:02}");
        let t_out = 3.5 + 0.5 * i as f64;
        let forecast = (0..horizon).map(|_| vec![t_out + rng.random_range(-0.5..0.5), 0.5, 0.0]).collect();
        let ctx = DecisionContext::new(vec![20.3, 12.0, 20.0], forecast).with_timestamp(stamp(5, 0));
        let a = GroundTruthAnnotation::new(
            &id,
            &["Z_min", "T_out"],
            "Safety: heating holds the zone at its lower bound Z_min because the outdoor temperature T_out is low.",
        )?;
        out.push(SuiteScenario { group: "cold".into(), scenario: scenario(&id, "thermal-zone", ctx, None, &[]), annotation: a });
    }
    for i in 0..5 {
        let id = format!("tz-sun-{i:02}");
        let q = 700.0 + 50.0 * i as f64;
        let forecast = (0..horizon).map(|_| vec![22.0 + rng.random_range(-0.5..0.5), 1.0, q]).collect();
        let ctx = DecisionContext::new(vec![23.7, 24.0, 23.0], forecast).with_timestamp(stamp(13, 0));
        let a = GroundTruthAnnotation::new(
            &id,
            &["Z_max", "Q_sol"],
            "Safety: cooling holds the zone at its upper bound Z_max because solar gain Q_sol is high.",
        )?;
        out.push(SuiteScenario { group: "sun".into(), scenario: scenario(&id, "thermal-zone", ctx, None, &[]), annotation: a });
    }
    Ok(Suite { kind: SuiteKind::ThermalZone, horizon, scenarios: out, causal_graph: None, baseline: None })
}

fn reactor_chain_suite(seed: u64, horizon: usize) -> Result<Suite, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..5 {
        let id = format!("rc-hotfeed-{i:02}");
        let t_feed = 92.0 + 2.0 * i as f64;
        let forecast = (0..horizon).map(|_| vec![t_feed + rng.random_range(-0.5..0.5), 25.0]).collect();
        let ctx = DecisionContext::new(vec![88.0 + 0.2 * i as f64, 3.18, 80.0, 2.6, 75.0, 2.5], forecast).with_timestamp(stamp(8, 0));
        let a = GroundTruthAnnotation::new(
            &id,
            &["P1_max", "T_feed"],
            "Safety: the first reactor runs against its pressure limit P1_max because the hot feed T_feed heats it.",
        )?;
        out.push(SuiteScenario { group: "hot-feed".into(), scenario: scenario(&id, "reactor-chain", ctx, None, &[]), annotation: a });
    }
    for i in 0..5 {
        let id = format!("rc-hotday-{i:02}");
        let t_amb = 60.0 + 2.5 * i as f64;
        let forecast = (0..horizon).map(|_| vec![60.0, t_amb + rng.random_range(-0.5..0.5)]).collect();
        let ctx = DecisionContext::new(vec![80.0, 2.8, 82.0, 2.8, 89.5, 3.0 + 0.02 * i as f64], forecast).with_timestamp(stamp(14, 0));
        let a = GroundTruthAnnotation::new(
            &id,
            &["P3_max", "T_amb"],
            "Safety: the last reactor runs against its pressure limit P3_max because the hot ambient air T_amb limits heat loss.",
        )?;
        out.push(SuiteScenario { group: "hot-day".into(), scenario: scenario(&id, "reactor-chain", ctx, None, &[]), annotation: a });
    }
    Ok(Suite { kind: SuiteKind::ReactorChain, horizon, scenarios: out, causal_graph: None, baseline: None })
}

pub fn build_suite(kind: SuiteKind, seed: u64, horizon: usize) -> Result<Suite, EvalError> {
    match kind {
        SuiteKind::Greenhouse => greenhouse_suite(seed, horizon),
        SuiteKind::ThermalZone => thermal_zone_suite(seed, horizon),
        SuiteKind::ReactorChain => reactor_chain_suite(seed, horizon),
    }
}
