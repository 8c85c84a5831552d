//! Hierarchical causal abduction over one MPC decision.
//!
//! Five hypotheses are tried in a fixed order (Safety, Optimization,
//! Prediction, Economics, History) against three evidence sources: KKT
//! multipliers with counterfactual re-solves, a lagged causal graph with
//! deviation flags, and a signed physics graph. The first supported
//! hypothesis becomes the explanation.

mod narrative;

pub use narrative::{
    fmt_sig, render_narrative, EvidenceTag, NarrativeSection, Statement, MATHEMATICAL_EVIDENCE, PHYSICAL_CONTEXT, PREDICTIVE_JUSTIFICATION,
    PRIMARY_REASON,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::causality::{deviation_flags, query_parents, DeviationFlag, LagBaseline, LaggedCausalGraph};
use crate::forensics::{
    action_counterfactual, classify, constraint_counterfactual, detect_active_set, identify_soft_constraint,
    near_threshold, primary_driver, ActiveConstraint, Classification, CostThresholds, CounterfactualData,
    ThresholdTable,
};
use crate::kg::{
    backward_trace, forward_trace, CausalChain, ConditionRegistry, NodeRole, SignedKnowledgeGraph, TraceContext,
    DEFAULT_MAX_DEPTH,
};
use crate::ocp::{
    max_violation, rollout, trajectory_cost, trajectory_penalty, BoundSense, ConstraintDef, ConstraintId,
    DecisionContext, HistoryWindow, OcpSolution, OcpSpec,
};
use crate::solver::SolverConfig;

/// Candidate explanation, in evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Safety,
    Optimization,
    Prediction,
    Economics,
    History,
}

impl Hypothesis {
    pub const ORDER: [Hypothesis; 5] = [
        Hypothesis::Safety,
        Hypothesis::Optimization,
        Hypothesis::Prediction,
        Hypothesis::Economics,
        Hypothesis::History,
    ];

    pub fn rank(self) -> usize {
        self as usize + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Hypothesis::Safety => "Safety",
            Hypothesis::Optimization => "Optimization",
            Hypothesis::Prediction => "Prediction",
            Hypothesis::Economics => "Economics",
            Hypothesis::History => "History",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const CONFIDENCE_SAFETY_HARD: f64 = 0.95;
pub const CONFIDENCE_SAFETY_SOFT: f64 = 0.92;
pub const CONFIDENCE_PREDICTION: f64 = 0.90;
pub const CONFIDENCE_OPTIMIZATION: f64 = 0.88;
pub const CONFIDENCE_ECONOMICS: f64 = 0.85;
pub const CONFIDENCE_HISTORY: f64 = 0.82;
/// Supported hypotheses below this confidence are never selected.
pub const MIN_CONFIDENCE: f64 = 0.5;

/// Relative offset of the alternative first inputs, as a fraction of the actuator range.
pub const ALTERNATIVE_OFFSET: f64 = 0.1;
pub const INFEASIBLE_FRACTION: f64 = 0.7;
pub const MIN_SAVING: f64 = 0.05;
pub const ACTIVE_PARENT_FRACTION: f64 = 0.5;
/// Forecast deviations (in reference scales) below this are not named as drivers.
pub const DRIVER_MIN_Z: f64 = 0.5;
/// Forecast deviations above this seed the forward traversal.
pub const NOTABLE_Z: f64 = 1.0;
/// Actuator moves below this fraction of the range count as no action.
pub const ACTION_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvidenceKind {
    #[serde(rename = "KKT")]
    Kkt,
    #[serde(rename = "CFT")]
    Cft,
    #[serde(rename = "PRED")]
    Pred,
    #[serde(rename = "ECON")]
    Econ,
    #[serde(rename = "PCMCI")]
    Pcmci,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktEvidence {
    pub active: Vec<ActiveConstraint>,
    pub driver: Option<ActiveConstraint>,
    pub near_threshold: Vec<String>,
}

/// Counterfactual re-solve without one constraint, without the relaxed trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualEvidence {
    pub constraint: ConstraintId,
    pub hard: bool,
    pub variable: Option<String>,
    pub bound: f64,
    pub input_change: f64,
    pub u_changed: bool,
    pub violation_found: bool,
    pub violation_stage: usize,
    pub level_at_violation: f64,
    pub penalty: f64,
    pub delta_j: f64,
    pub classification: Classification,
}

impl CounterfactualEvidence {
    fn new(def: &ConstraintDef, cf: &CounterfactualData, costs: &CostThresholds) -> Self {
        let result = classify(cf, costs);
        Self {
            constraint: cf.constraint.clone(),
            hard: cf.hard,
            variable: def.variable.clone(),
            bound: def.bound,
            input_change: cf.input_change,
            u_changed: cf.u_changed,
            violation_found: cf.violation_found,
            violation_stage: cf.violation_stage,
            level_at_violation: cf.level_at_violation,
            penalty: cf.penalty,
            delta_j: result.delta_j,
            classification: result.classification,
        }
    }

    pub fn confirms(&self) -> bool {
        self.classification == Classification::ConstraintDriven
    }
}

/// Re-solve with the primary actuator held at rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionEvidence {
    pub actuator: String,
    pub delta_j: f64,
    /// First violation of each constraint on the pinned trajectory.
    pub violations: Vec<PinnedViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnedViolation {
    pub constraint: ConstraintId,
    pub stage: usize,
    pub level: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationEvidence {
    pub candidates: usize,
    pub infeasible: usize,
    /// Hard constraints violated by the alternatives, most frequent first.
    pub violated: Vec<(ConstraintId, usize)>,
}

impl OptimizationEvidence {
    pub fn fraction(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.infeasible as f64 / self.candidates as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvidence {
    pub constraint: ConstraintId,
    pub variable: Option<String>,
    pub stage: usize,
    pub level: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconomicsEvidence {
    pub j_chosen: f64,
    pub j_rest: f64,
    /// `(j_rest - j_chosen) / |j_rest|`.
    pub saving: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcmciEvidence {
    pub actuator: String,
    pub flags: Vec<DeviationFlag>,
}

impl PcmciEvidence {
    pub fn active_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.flags.iter().filter(|f| f.active).count() as f64 / self.flags.len() as f64
        }
    }
}

/// Everything gathered while testing one hypothesis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub tags: Vec<EvidenceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<CounterfactualEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub economics: Option<EconomicsEvidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcmci: Option<PcmciEvidence>,
    pub kg_chains: Vec<CausalChain>,
    pub uncertainty_flags: Vec<String>,
}

impl EvidenceBundle {
    fn tag(&mut self, kind: EvidenceKind) {
        if !self.tags.contains(&kind) {
            self.tags.push(kind);
        }
    }

    fn flag(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.uncertainty_flags.contains(&msg) {
            self.uncertainty_flags.push(msg);
        }
    }
}

/// Lagged causal graph, per-lag baselines and the recent history window.
#[derive(Clone, Copy)]
pub struct CausalEvidence<'a> {
    pub graph: &'a LaggedCausalGraph,
    pub baseline: &'a LagBaseline,
    pub history: &'a HistoryWindow,
}

/// Evidence sources available for a decision. `None` (or `use_kkt = false`)
/// marks a source as unavailable.
#[derive(Clone, Copy)]
pub struct EvidenceSources<'a> {
    pub kg: Option<&'a SignedKnowledgeGraph>,
    pub conditions: Option<&'a ConditionRegistry>,
    pub causal: Option<CausalEvidence<'a>>,
    pub use_kkt: bool,
}

impl<'a> EvidenceSources<'a> {
    pub fn none() -> Self {
        Self { kg: None, conditions: None, causal: None, use_kkt: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainConfig {
    pub solver: SolverConfig,
    pub thresholds: ThresholdTable,
    pub costs: CostThresholds,
    pub max_depth: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            thresholds: ThresholdTable::default(),
            costs: CostThresholds::default(),
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

/// One decision instant: problem, context and the nominal optimum.
#[derive(Clone, Copy)]
pub struct Decision<'a> {
    pub spec: &'a OcpSpec,
    pub ctx: &'a DecisionContext,
    pub solution: &'a OcpSolution,
}

impl Decision<'_> {
    fn forecast(&self) -> Vec<Vec<f64>> {
        (0..self.spec.horizon).map(|k| self.ctx.disturbance_at(k).to_vec()).collect()
    }

    fn rest(&self) -> Vec<f64> {
        self.spec.rest_inputs().into_iter().next().unwrap_or_default()
    }

    /// Normalized first-input move of each actuator away from rest.
    fn actuation(&self) -> Vec<f64> {
        let rest = self.rest();
        self.solution
            .first_input()
            .iter()
            .zip(&rest)
            .zip(&self.spec.input_bounds)
            .map(|((u, r), &(lo, hi))| {
                let range = if (hi - lo).is_finite() && hi > lo { hi - lo } else { 1.0 };
                (u - r) / range
            })
            .collect()
    }

    /// Actuator with the largest normalized move, if any moved.
    fn primary_actuator(&self) -> Option<usize> {
        let act = self.actuation();
        let (j, v) = act
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (j, v)| if v.abs() > best.1.abs() { (j, *v) } else { best });
        (v.abs() > ACTION_FRACTION).then_some(j)
    }

    fn acting(&self) -> Vec<usize> {
        self.actuation()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > ACTION_FRACTION)
            .map(|(j, _)| j)
            .collect()
    }

    /// Values used to resolve conditional knowledge-graph edges.
    fn condition_values(&self) -> BTreeMap<String, f64> {
        let mut values = BTreeMap::new();
        for (name, v) in self.spec.state_names.iter().zip(&self.ctx.measured_state) {
            values.insert(name.clone(), *v);
        }
        for (name, v) in self.spec.disturbance_names.iter().zip(self.ctx.disturbance_at(0)) {
            values.insert(name.clone(), *v);
        }
        for (name, v) in self.spec.input_names.iter().zip(self.solution.first_input()) {
            values.insert(name.clone(), *v);
        }
        values
    }

    /// Most extreme normalized forecast deviation of each disturbance: `(z, stage)`.
    fn forecast_deviation(&self, channel: usize) -> (f64, usize) {
        let r = &self.spec.disturbance_reference[channel];
        let scale = if r.scale > 0.0 { r.scale } else { 1.0 };
        (0..self.spec.horizon)
            .map(|k| ((self.ctx.disturbance_at(k)[channel] - r.nominal) / scale, k))
            .fold((0.0, 0), |best, cur| if cur.0.abs() > best.0.abs() { cur } else { best })
    }
}

fn violation_tol(def: &ConstraintDef) -> f64 {
    1e-6 * def.bound.abs().max(1.0)
}

/// Outcome of testing one hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confidence: Option<f64>,
    pub evidence: EvidenceBundle,
    /// Factor labels ranked by relevance, most relevant first.
    pub factors: Vec<String>,
}

impl Evaluation {
    fn unsupported(evidence: EvidenceBundle) -> Self {
        Self { confidence: None, evidence, factors: Vec::new() }
    }

    fn supported(confidence: f64, evidence: EvidenceBundle, factors: Vec<String>) -> Self {
        Self { confidence: Some(confidence), evidence, factors }
    }

    pub fn is_supported(&self) -> bool {
        self.confidence.is_some_and(|c| c >= MIN_CONFIDENCE)
    }
}

struct Kg<'a> {
    graph: &'a SignedKnowledgeGraph,
    registry: Option<&'a ConditionRegistry>,
    values: BTreeMap<String, f64>,
    depth: usize,
}

impl<'a> Kg<'a> {
    fn new(d: &Decision, sources: &EvidenceSources<'a>, depth: usize) -> Option<Self> {
        sources.kg.map(|graph| Kg { graph, registry: sources.conditions, values: d.condition_values(), depth })
    }

    fn ctx(&self) -> Option<TraceContext<'_>> {
        self.registry.map(|registry| TraceContext { registry, values: &self.values })
    }

    fn backward(&self, target: &str) -> Vec<CausalChain> {
        let ctx = self.ctx();
        backward_trace(self.graph, target, self.depth, ctx.as_ref()).unwrap_or_default()
    }

    fn forward(&self, sources: &BTreeSet<String>) -> Vec<CausalChain> {
        let ctx = self.ctx();
        forward_trace(self.graph, sources, self.depth, ctx.as_ref())
    }

    /// States reachable from any of `inputs`.
    fn reach(&self, inputs: &[String]) -> BTreeSet<String> {
        let set: BTreeSet<String> = inputs.iter().cloned().collect();
        self.forward(&set).iter().flat_map(|c| c.path[1..].iter().cloned()).filter(|n| self.is_state(n)).collect()
    }

    fn is_state(&self, n: &str) -> bool {
        self.graph.role(n) == Some(NodeRole::State)
    }
}

/// Disturbances whose forecast pushes `variable` towards violating `def`,
/// strongest first, with the backward chains that carry the influence.
fn kg_drivers(d: &Decision, kg: &Kg, def: &ConstraintDef) -> (Vec<String>, Vec<CausalChain>) {
    let Some(var) = def.variable.as_deref() else {
        return (Vec::new(), Vec::new());
    };
    let chains = kg.backward(var);
    let want = match def.sense {
        BoundSense::Upper => 1.0,
        BoundSense::Lower => -1.0,
    };
    let mut scored: BTreeMap<String, f64> = BTreeMap::new();
    let mut used = Vec::new();
    for c in &chains {
        let Some(ch) = d.spec.disturbance_index(c.origin()) else { continue };
        let Some(sign) = c.composite_sign.factor() else { continue };
        let (z, _) = d.forecast_deviation(ch);
        let push = sign * z * want;
        if push >= DRIVER_MIN_Z {
            used.push(c.clone());
            let e = scored.entry(c.origin().to_string()).or_insert(0.0);
            *e = e.max(push);
        }
    }
    (rank_scores(scored), used)
}

/// Disturbances linked to the states moved by the acting actuators,
/// ranked by forecast deviation.
fn economic_drivers(d: &Decision, kg: &Kg) -> (Vec<String>, Vec<CausalChain>) {
    let acting: Vec<String> = d.acting().iter().map(|&j| d.spec.input_names[j].clone()).collect();
    let mut scored = BTreeMap::new();
    let mut used = Vec::new();
    for state in kg.reach(&acting) {
        for c in kg.backward(&state) {
            let Some(ch) = d.spec.disturbance_index(c.origin()) else { continue };
            let (z, _) = d.forecast_deviation(ch);
            if z.abs() >= DRIVER_MIN_Z && c.composite_sign.factor().is_some() {
                used.push(c.clone());
                let e = scored.entry(c.origin().to_string()).or_insert(0.0_f64);
                *e = e.max(z.abs());
            }
        }
    }
    (rank_scores(scored), used)
}

fn rank_scores(scored: BTreeMap<String, f64>) -> Vec<String> {
    let mut v: Vec<(String, f64)> = scored.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(n, _)| n).collect()
}

fn dedup(v: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    v.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

fn with_drivers(
    d: &Decision,
    kg: Option<&Kg>,
    def: &ConstraintDef,
    ev: &mut EvidenceBundle,
) -> Vec<String> {
    let mut factors = vec![def.id.as_str().to_string()];
    if let Some(kg) = kg {
        let (drivers, chains) = kg_drivers(d, kg, def);
        factors.extend(drivers);
        ev.kg_chains.extend(chains);
    }
    dedup(factors)
}

fn evaluate_safety(d: &Decision, sources: &EvidenceSources, cfg: &ExplainConfig, kg: Option<&Kg>) -> Evaluation {
    let mut ev = EvidenceBundle::default();
    let spec = d.spec;
    let has_hard = spec.hard_constraints().next().is_some();
    if has_hard && !sources.use_kkt {
        ev.flag("KKT evidence unavailable: hard-constraint path skipped");
    } else if has_hard && !d.solution.is_optimal() {
        ev.flag(format!("solver status {:?}: multipliers unreliable, counterfactual-only evidence", d.solution.status));
        for def in spec.hard_constraints() {
            let forecast = d.forecast();
            let (g, _) = max_violation(spec, def, &d.solution.states, &d.solution.inputs, &forecast);
            if g < -1e-4 * def.bound.abs().max(1.0) {
                continue;
            }
            if let Ok(cf) = constraint_counterfactual(spec, d.ctx, &cfg.solver, d.solution, &def.id) {
                let cfe = CounterfactualEvidence::new(def, &cf, &cfg.costs);
                if cfe.confirms() {
                    ev.tag(EvidenceKind::Cft);
                    ev.counterfactual = Some(cfe);
                    let factors = with_drivers(d, kg, def, &mut ev);
                    return Evaluation::supported(CONFIDENCE_SAFETY_HARD, ev, factors);
                }
            }
        }
    } else if has_hard {
        match detect_active_set(spec, d.solution, &cfg.thresholds) {
            Ok(active) => {
                let near = near_threshold(spec, d.solution, &cfg.thresholds);
                for n in &near {
                    ev.flag(format!("multiplier of {n} is just below its threshold"));
                }
                let driver = primary_driver(&active).ok().cloned();
                if let Some(a) = driver.as_ref().filter(|a| a.uncertain) {
                    ev.flag(format!("{} multiplier within the uncertain band", a.id.at_stage(a.stage)));
                }
                ev.kkt = Some(KktEvidence { active: active.clone(), driver: driver.clone(), near_threshold: near });
                if let Some(drv) = driver {
                    let def = spec.constraint(&drv.id).expect("multiplier of a declared constraint");
                    match constraint_counterfactual(spec, d.ctx, &cfg.solver, d.solution, &drv.id) {
                        Ok(cf) => {
                            let cfe = CounterfactualEvidence::new(def, &cf, &cfg.costs);
                            let ok = cfe.u_changed && cfe.violation_found;
                            ev.counterfactual = Some(cfe);
                            if ok {
                                ev.tag(EvidenceKind::Kkt);
                                ev.tag(EvidenceKind::Cft);
                                let factors = with_drivers(d, kg, def, &mut ev);
                                return Evaluation::supported(CONFIDENCE_SAFETY_HARD, ev, factors);
                            }
                            ev.flag(format!("primary driver {} not confirmed by counterfactual", drv.id));
                        }
                        Err(e) => ev.flag(format!("counterfactual without {} failed: {e}", drv.id)),
                    }
                }
            }
            Err(e) => ev.flag(format!("active-set detection failed: {e}")),
        }
    }
    if spec.has_soft_constraints() {
        let id = identify_soft_constraint(spec, d.ctx, &cfg.solver, d.solution, &cfg.costs);
        for w in &id.warnings {
            ev.flag(w.clone());
        }
        if let (Some(cid), Some(cf)) = (id.constraint, id.counterfactual) {
            let def = spec.constraint(&cid).expect("identified soft constraint exists");
            ev.counterfactual = Some(CounterfactualEvidence::new(def, &cf, &cfg.costs));
            ev.tag(EvidenceKind::Cft);
            let factors = with_drivers(d, kg, def, &mut ev);
            return Evaluation::supported(CONFIDENCE_SAFETY_SOFT, ev, factors);
        }
    }
    Evaluation::unsupported(ev)
}

fn evaluate_optimization(d: &Decision, kg: Option<&Kg>) -> Evaluation {
    let mut ev = EvidenceBundle::default();
    let spec = d.spec;
    let forecast = d.forecast();
    let hard: Vec<&ConstraintDef> = spec.hard_constraints().collect();
    let u0 = d.solution.first_input();
    let mut candidates = 0;
    let mut infeasible = 0;
    let mut counts: BTreeMap<ConstraintId, usize> = BTreeMap::new();
    for (j, &(lo, hi)) in spec.input_bounds.iter().enumerate() {
        if !(hi - lo).is_finite() {
            continue;
        }
        let step = ALTERNATIVE_OFFSET * (hi - lo);
        for off in [-step, step] {
            let v = u0[j] + off;
            let slack = 1e-12 * (hi - lo).max(1.0);
            if v < lo - slack || v > hi + slack {
                continue;
            }
            candidates += 1;
            let mut inputs = d.solution.inputs.clone();
            inputs[0][j] = v.clamp(lo, hi);
            let Ok(states) = rollout(spec, &d.ctx.measured_state, &inputs, &forecast) else { continue };
            let mut bad = false;
            for def in &hard {
                let (g, _) = max_violation(spec, def, &states, &inputs, &forecast);
                if g > violation_tol(def) {
                    bad = true;
                    *counts.entry(def.id.clone()).or_insert(0) += 1;
                }
            }
            infeasible += usize::from(bad);
        }
    }
    let mut violated: Vec<(ConstraintId, usize)> = counts.into_iter().collect();
    violated.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let opt = OptimizationEvidence { candidates, infeasible, violated };
    let supported = opt.fraction() > INFEASIBLE_FRACTION;
    let first = opt.violated.first().map(|(id, _)| id.clone());
    ev.optimization = Some(opt);
    if !supported {
        return Evaluation::unsupported(ev);
    }
    ev.tag(EvidenceKind::Cft);
    let mut factors: Vec<String> =
        ev.optimization.as_ref().map(|o| o.violated.iter().map(|(id, _)| id.as_str().to_string()).collect()).unwrap_or_default();
    if let Some(def) = first.and_then(|id| spec.constraint(&id)) {
        factors.extend(with_drivers(d, kg, def, &mut ev));
    }
    Evaluation::supported(CONFIDENCE_OPTIMIZATION, ev, dedup(factors))
}

fn evaluate_prediction(d: &Decision, cfg: &ExplainConfig, kg: Option<&Kg>) -> Evaluation {
    let mut ev = EvidenceBundle::default();
    let spec = d.spec;
    let forecast = d.forecast();
    let rest = spec.rest_inputs();
    let Ok(rest_states) = rollout(spec, &d.ctx.measured_state, &rest, &forecast) else {
        ev.flag("rest-input rollout failed");
        return Evaluation::unsupported(ev);
    };
    let (xs, us) = (&d.solution.states, &d.solution.inputs);
    let mut found: Option<(usize, usize, &ConstraintDef)> = None;
    for (order, (def, _)) in spec.all_constraints().enumerate() {
        let (g_rest, k) = max_violation(spec, def, &rest_states, &rest, &forecast);
        let prevented = if def.is_hard() {
            g_rest > violation_tol(def) && max_violation(spec, def, xs, us, &forecast).0 <= violation_tol(def)
        } else {
            trajectory_penalty(spec, def, &rest_states, &rest, &forecast) > cfg.costs.tau_cost
                && trajectory_penalty(spec, def, xs, us, &forecast) <= cfg.costs.tau_cost
        };
        if !prevented {
            continue;
        }
        // First stage where the rest trajectory crosses the bound.
        let first = (0..=spec.horizon)
            .find(|&s| {
                let u = if s < spec.horizon { &rest[s] } else { &rest[spec.horizon - 1] };
                def.violation(&rest_states[s], u, &forecast[s.min(spec.horizon - 1)]) > violation_tol(def)
            })
            .unwrap_or(k);
        if found.is_none_or(|(s, o, _)| (first, order) < (s, o)) {
            found = Some((first, order, def));
        }
    }
    let Some((stage, _, def)) = found else {
        return Evaluation::unsupported(ev);
    };
    let u = &rest[stage.min(spec.horizon - 1)];
    let level = def.level(&rest_states[stage], u, &forecast[stage.min(spec.horizon - 1)]);
    ev.prediction = Some(PredictionEvidence {
        constraint: def.id.clone(),
        variable: def.variable.clone(),
        stage,
        level,
        bound: def.bound,
    });
    ev.tag(EvidenceKind::Pred);
    let factors = with_drivers(d, kg, def, &mut ev);
    Evaluation::supported(CONFIDENCE_PREDICTION, ev, factors)
}

fn evaluate_economics(d: &Decision, kg: Option<&Kg>) -> Evaluation {
    let mut ev = EvidenceBundle::default();
    let spec = d.spec;
    let forecast = d.forecast();
    let rest = spec.rest_inputs();
    let Ok(rest_states) = rollout(spec, &d.ctx.measured_state, &rest, &forecast) else {
        ev.flag("rest-input rollout failed");
        return Evaluation::unsupported(ev);
    };
    let j_rest = trajectory_cost(spec, &rest_states, &rest, &forecast);
    let j_chosen = trajectory_cost(spec, &d.solution.states, &d.solution.inputs, &forecast);
    let saving = (j_rest - j_chosen) / j_rest.abs().max(1e-9);
    ev.economics = Some(EconomicsEvidence { j_chosen, j_rest, saving });
    if !(saving > MIN_SAVING) || d.acting().is_empty() {
        return Evaluation::unsupported(ev);
    }
    ev.tag(EvidenceKind::Econ);
    let mut factors = Vec::new();
    match kg {
        Some(kg) => {
            let (drivers, chains) = economic_drivers(d, kg);
            factors = drivers;
            ev.kg_chains.extend(chains);
        }
        None => ev.flag("knowledge graph unavailable: economic drivers not attributed"),
    }
    Evaluation::supported(CONFIDENCE_ECONOMICS, ev, factors)
}

fn pcmci_evidence(d: &Decision, causal: &CausalEvidence, ev: &mut EvidenceBundle) -> Option<PcmciEvidence> {
    let Some(j) = d.primary_actuator() else {
        ev.flag("no actuation: causal parents not queried");
        return None;
    };
    let actuator = d.spec.input_names[j].clone();
    let parents = match query_parents(causal.graph, &actuator) {
        Ok(p) => p,
        Err(e) => {
            ev.flag(format!("causal graph: {e}"));
            return None;
        }
    };
    match deviation_flags(causal.baseline, causal.history, &parents) {
        Ok(flags) => Some(PcmciEvidence { actuator, flags }),
        Err(e) => {
            ev.flag(format!("deviation flags: {e}"));
            None
        }
    }
}

fn evaluate_history(d: &Decision, sources: &EvidenceSources, kg: Option<&Kg>) -> Evaluation {
    let mut ev = EvidenceBundle::default();
    let Some(causal) = sources.causal.as_ref() else {
        ev.flag("causal graph unavailable: History skipped");
        return Evaluation::unsupported(ev);
    };
    let Some(p) = pcmci_evidence(d, causal, &mut ev) else {
        return Evaluation::unsupported(ev);
    };
    let supported = p.active_fraction() > ACTIVE_PARENT_FRACTION;
    let mut active: Vec<&DeviationFlag> = p.flags.iter().filter(|f| f.active).collect();
    let validated: BTreeSet<String> = match kg {
        Some(kg) => {
            let reach = kg.reach(std::slice::from_ref(&p.actuator));
            let mut ok = BTreeSet::new();
            for f in &active {
                let src: BTreeSet<String> = [f.source.clone()].into();
                let chains: Vec<CausalChain> =
                    kg.forward(&src).into_iter().filter(|c| reach.contains(c.end())).collect();
                if !chains.is_empty() {
                    ok.insert(f.source.clone());
                    ev.kg_chains.extend(chains);
                }
            }
            ok
        }
        None => BTreeSet::new(),
    };
    active.sort_by(|a, b| {
        validated
            .contains(&b.source)
            .cmp(&validated.contains(&a.source))
            .then(b.z_score.abs().total_cmp(&a.z_score.abs()))
            .then_with(|| a.source.cmp(&b.source))
            .then(a.lag.cmp(&b.lag))
    });
    let factors = dedup(active.iter().map(|f| f.source.clone()).collect());
    ev.pcmci = Some(p);
    if !supported {
        return Evaluation::unsupported(ev);
    }
    ev.tag(EvidenceKind::Pcmci);
    Evaluation::supported(CONFIDENCE_HISTORY, ev, factors)
}

/// Test one hypothesis against the available evidence.
pub fn evaluate_hypothesis(h: Hypothesis, d: &Decision, sources: &EvidenceSources, cfg: &ExplainConfig) -> Evaluation {
    let kg = Kg::new(d, sources, cfg.max_depth);
    let kg = kg.as_ref();
    match h {
        Hypothesis::Safety => evaluate_safety(d, sources, cfg, kg),
        Hypothesis::Optimization => evaluate_optimization(d, kg),
        Hypothesis::Prediction => evaluate_prediction(d, cfg, kg),
        Hypothesis::Economics => evaluate_economics(d, kg),
        Hypothesis::History => evaluate_history(d, sources, kg),
    }
}

/// Sign of an actuator move and the state effects the graph predicts for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedEffect {
    pub actuator: String,
    /// First input minus rest.
    pub change: f64,
    pub state: String,
    /// `"+"`, `"-"` or `"?"`.
    pub predicted: String,
    /// First-step change of the state on the nominal trajectory.
    pub state_delta: f64,
    pub chain: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTrace {
    pub hypothesis: Hypothesis,
    pub supported: bool,
    pub flags: Vec<String>,
}

/// Explanation of one decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub scenario_ref: String,
    pub timestamp: String,
    /// `None` when no hypothesis is supported.
    pub selected: Option<Hypothesis>,
    pub confidence: Option<f64>,
    pub evidence: EvidenceBundle,
    /// Ranked factor labels (constraint ids, variable names).
    pub causal_factors: Vec<String>,
    pub supporting_context: Vec<CausalChain>,
    pub observed_effects: Vec<ObservedEffect>,
    pub first_input: Vec<f64>,
    pub trace: Vec<HypothesisTrace>,
    pub sections: Vec<NarrativeSection>,
    pub narrative: String,
    pub degraded_mode: bool,
    #[serde(skip)]
    pub(crate) context: NarrativeContext,
}

/// Names and values the narrative needs beyond the record itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct NarrativeContext {
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub disturbance_names: Vec<String>,
    pub measured_state: Vec<f64>,
    pub rest: Vec<f64>,
    pub sample_minutes: f64,
    pub forecast_notes: Vec<(String, f64, usize, f64)>,
    pub primary_actuator: Option<usize>,
}

impl ExplanationRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records serialize")
    }

    /// Statements in rendering order.
    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.sections.iter().flat_map(|s| s.statements.iter())
    }
}

fn observed_effects(d: &Decision, kg: Option<&Kg>) -> Vec<ObservedEffect> {
    let Some(kg) = kg else { return Vec::new() };
    let rest = d.rest();
    let mut out = Vec::new();
    for j in d.acting() {
        let name = d.spec.input_names[j].clone();
        let change = d.solution.first_input()[j] - rest[j];
        let src: BTreeSet<String> = [name.clone()].into();
        for c in kg.forward(&src) {
            let Some(s) = d.spec.state_index(c.end()) else { continue };
            let predicted = match c.composite_sign.factor() {
                Some(f) if f * change > 0.0 => "+",
                Some(_) => "-",
                None => "?",
            };
            out.push(ObservedEffect {
                actuator: name.clone(),
                change,
                state: c.end().to_string(),
                predicted: predicted.to_string(),
                state_delta: d.solution.states[1][s] - d.solution.states[0][s],
                chain: c.render(),
            });
        }
    }
    out
}

/// Forward traversal from disturbances with notable forecasts plus the
/// backward chains already used as evidence.
fn deeper_context(d: &Decision, kg: &Kg, evidence: &EvidenceBundle) -> Vec<CausalChain> {
    let notable: BTreeSet<String> = d
        .spec
        .disturbance_names
        .iter()
        .enumerate()
        .filter(|(i, _)| d.forecast_deviation(*i).0.abs() >= NOTABLE_Z)
        .map(|(_, n)| n.clone())
        .collect();
    let mut chains = kg.forward(&notable);
    let target = evidence
        .counterfactual
        .as_ref()
        .and_then(|c| c.variable.clone())
        .or_else(|| evidence.prediction.as_ref().and_then(|p| p.variable.clone()));
    if let Some(t) = target {
        chains.extend(kg.backward(&t));
    }
    chains.extend(evidence.kg_chains.iter().cloned());
    chains.sort();
    chains.dedup();
    chains
}

/// Run the ordered hypothesis loop, gather context and render the narrative.
pub fn generate_explanation(
    d: &Decision,
    sources: &EvidenceSources,
    cfg: &ExplainConfig,
    scenario_ref: &str,
) -> ExplanationRecord {
    let kg = Kg::new(d, sources, cfg.max_depth);
    let kg = kg.as_ref();
    let mut trace = Vec::new();
    let mut selected = None;
    let mut flags = Vec::new();
    for h in Hypothesis::ORDER {
        let e = evaluate_hypothesis(h, d, sources, cfg);
        let ok = e.is_supported();
        trace.push(HypothesisTrace { hypothesis: h, supported: ok, flags: e.evidence.uncertainty_flags.clone() });
        flags.extend(e.evidence.uncertainty_flags.iter().cloned());
        if ok {
            selected = Some((h, e));
            break;
        }
    }
    let mut degraded = sources.kg.is_none() || sources.causal.is_none();
    if d.spec.hard_constraints().next().is_some() && (!sources.use_kkt || !d.solution.is_optimal()) {
        degraded = true;
    }
    let (kind, confidence, mut evidence, factors) = match selected {
        Some((h, e)) => (Some(h), e.confidence, e.evidence, e.factors),
        None => {
            degraded = true;
            let mut ev = EvidenceBundle::default();
            for f in flags {
                ev.flag(f);
            }
            (None, None, ev, Vec::new())
        }
    };
    if kind.is_some() {
        if matches!(kind, Some(Hypothesis::Safety | Hypothesis::Prediction)) {
            if let Some(j) = d.primary_actuator() {
                match action_counterfactual(d.spec, d.ctx, &cfg.solver, d.solution, j) {
                    Ok(a) => {
                        evidence.action = Some(ActionEvidence {
                            actuator: a.actuator.clone(),
                            delta_j: a.delta_j(),
                            violations: a
                                .violations
                                .iter()
                                .map(|(id, k, level, bound)| PinnedViolation {
                                    constraint: id.clone(),
                                    stage: *k,
                                    level: *level,
                                    bound: *bound,
                                })
                                .collect(),
                        })
                    }
                    Err(e) => evidence.flag(format!("action counterfactual failed: {e}")),
                }
            }
        }
        if evidence.pcmci.is_none() {
            if let Some(causal) = sources.causal.as_ref() {
                evidence.pcmci = pcmci_evidence(d, causal, &mut evidence);
            }
        }
    }
    if sources.kg.is_none() {
        evidence.flag("knowledge graph unavailable");
    }
    if sources.causal.is_none() {
        evidence.flag("causal graph unavailable");
    }
    let supporting_context = match kg {
        Some(kg) if kind.is_some() => deeper_context(d, kg, &evidence),
        _ => Vec::new(),
    };
    let observed = if kind.is_some() { observed_effects(d, kg) } else { Vec::new() };
    let context = NarrativeContext {
        state_names: d.spec.state_names.clone(),
        input_names: d.spec.input_names.clone(),
        disturbance_names: d.spec.disturbance_names.clone(),
        measured_state: d.ctx.measured_state.clone(),
        rest: d.rest(),
        sample_minutes: d.spec.sampling_interval_minutes,
        forecast_notes: d
            .spec
            .disturbance_names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let (z, k) = d.forecast_deviation(i);
                (z.abs() >= NOTABLE_Z).then(|| (n.clone(), d.ctx.disturbance_at(k)[i], k, z))
            })
            .collect(),
        primary_actuator: d.primary_actuator(),
    };
    let mut record = ExplanationRecord {
        scenario_ref: scenario_ref.to_string(),
        timestamp: d.ctx.timestamp.clone(),
        selected: kind,
        confidence,
        evidence,
        causal_factors: factors,
        supporting_context,
        observed_effects: observed,
        first_input: d.solution.first_input().to_vec(),
        trace,
        sections: Vec::new(),
        narrative: String::new(),
        degraded_mode: degraded,
        context,
    };
    record.sections = narrative::build_sections(&record);
    record.narrative = render_narrative(&record);
    record
}
