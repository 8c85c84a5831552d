//! Four-part template narrative with evidence-tagged statements.

use serde::{Deserialize, Serialize};

use super::{ExplanationRecord, Hypothesis, NarrativeContext};
use crate::kg::CompositeSign;

pub const PRIMARY_REASON: &str = "Primary Reason";
pub const MATHEMATICAL_EVIDENCE: &str = "Mathematical Evidence";
pub const PREDICTIVE_JUSTIFICATION: &str = "Predictive Justification";
pub const PHYSICAL_CONTEXT: &str = "Physical & Historical Context";
pub const INSUFFICIENT_EVIDENCE: &str = "Insufficient Evidence";

/// Where a statement's content comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceTag {
    CurrentState,
    Kkt,
    Counterfactual,
    Forecast,
    History,
    Physics,
}

impl EvidenceTag {
    /// Supported by the instantaneous observation (state or multipliers).
    pub fn is_instantaneous(self) -> bool {
        matches!(self, EvidenceTag::CurrentState | EvidenceTag::Kkt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub tag: EvidenceTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NarrativeSection {
    pub heading: String,
    pub statements: Vec<Statement>,
}

/// Four significant digits; scientific notation outside `[1e-3, 1e6)`.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-3..6).contains(&mag) {
        format!("{x:.3e}")
    } else {
        format!("{:.*}", (3 - mag).max(0) as usize, x)
    }
}

fn offset(ctx: &NarrativeContext, k: usize) -> String {
    let minutes = (k as f64 * ctx.sample_minutes).round() as i64;
    format!("+{}h{:02}", minutes / 60, minutes % 60)
}

struct Builder {
    sections: Vec<NarrativeSection>,
}

impl Builder {
    fn section(&mut self, heading: &str) {
        self.sections.push(NarrativeSection { heading: heading.to_string(), statements: Vec::new() });
    }

    fn say(&mut self, tag: EvidenceTag, text: String) {
        self.sections.last_mut().expect("section open").statements.push(Statement { text, tag });
    }
}

fn state_value(ctx: &NarrativeContext, var: &str) -> Option<f64> {
    ctx.state_names.iter().position(|s| s == var).map(|i| ctx.measured_state[i])
}

fn side(upper: bool) -> &'static str {
    if upper {
        "below"
    } else {
        "above"
    }
}

pub(crate) fn build_sections(r: &ExplanationRecord) -> Vec<NarrativeSection> {
    let ctx = &r.context;
    let mut b = Builder { sections: Vec::new() };
    let Some(kind) = r.selected else {
        b.section(INSUFFICIENT_EVIDENCE);
        b.say(
            EvidenceTag::CurrentState,
            "No hypothesis is supported by the available evidence; the action is not explained.".into(),
        );
        for f in &r.evidence.uncertainty_flags {
            b.say(EvidenceTag::CurrentState, format!("Note: {f}."))
        }
        return b.sections;
    };
    let ev = &r.evidence;
    let actuator = ctx.primary_actuator.map(|j| {
        (ctx.input_names[j].clone(), r.first_input[j], ctx.rest[j])
    });

    b.section(PRIMARY_REASON);
    let target = ev
        .counterfactual
        .as_ref()
        .filter(|_| kind == Hypothesis::Safety)
        .map(|c| (c.constraint.to_string(), c.variable.clone(), c.bound))
        .or_else(|| ev.prediction.as_ref().map(|p| (p.constraint.to_string(), p.variable.clone(), p.bound)));
    let upper_of = |id: &str| {
        ev.counterfactual
            .as_ref()
            .filter(|c| c.constraint.as_str() == id)
            .map(|c| c.level_at_violation > c.bound)
            .or_else(|| ev.prediction.as_ref().filter(|p| p.constraint.as_str() == id).map(|p| p.level > p.bound))
            .unwrap_or(false)
    };
    let act_phrase = match &actuator {
        Some((name, u, rest)) => format!("{name} was set to {} (rest {})", fmt_sig(*u), fmt_sig(*rest)),
        None => "The inputs stayed at rest".to_string(),
    };
    match kind {
        Hypothesis::Safety | Hypothesis::Prediction => {
            let (id, var, bound) = target.clone().unwrap_or_default();
            let var_name = var.clone().unwrap_or_else(|| "the constrained quantity".into());
            let lead = if kind == Hypothesis::Safety { "Safety" } else { "Prediction" };
            b.say(
                EvidenceTag::Counterfactual,
                format!(
                    "{lead}: {act_phrase} to keep {var_name} {} {} ({id}).",
                    side(upper_of(&id)),
                    fmt_sig(bound)
                ),
            );
            if let Some(v) = var.as_deref().and_then(|v| state_value(ctx, v)) {
                let inside = if upper_of(&id) { v <= bound } else { v >= bound };
                b.say(
                    EvidenceTag::CurrentState,
                    format!(
                        "Current {} is {}, {} the bound.",
                        var.as_deref().unwrap_or_default(),
                        fmt_sig(v),
                        if inside { "still inside" } else { "outside" }
                    ),
                );
            }
        }
        Hypothesis::Optimization => {
            b.say(
                EvidenceTag::Counterfactual,
                format!("Optimization: {act_phrase} because nearby alternatives are infeasible."),
            );
        }
        Hypothesis::Economics => {
            b.say(
                EvidenceTag::Counterfactual,
                format!("Economics: {act_phrase} because it lowers the predicted operating cost."),
            );
        }
        Hypothesis::History => {
            b.say(
                EvidenceTag::History,
                format!("History: {act_phrase}, following its learned lagged response to recent conditions."),
            );
        }
    }
    if !matches!(kind, Hypothesis::Safety | Hypothesis::Prediction) {
        let state: Vec<String> =
            ctx.state_names.iter().zip(&ctx.measured_state).map(|(n, v)| format!("{n} = {}", fmt_sig(*v))).collect();
        b.say(EvidenceTag::CurrentState, format!("Current state: {}.", state.join(", ")));
    }

    b.section(MATHEMATICAL_EVIDENCE);
    if let Some(k) = &ev.kkt {
        if let Some(d) = &k.driver {
            b.say(
                EvidenceTag::Kkt,
                format!(
                    "The multiplier of {} at k={} is {}, above its threshold {} (ratio {}).",
                    d.id,
                    d.stage,
                    fmt_sig(d.lambda),
                    fmt_sig(d.tau),
                    fmt_sig(d.ratio)
                ),
            );
        }
        b.say(EvidenceTag::Kkt, format!("{} constraint-stage pairs are active.", k.active.len()));
    }
    if let Some(c) = &ev.counterfactual {
        if !c.hard {
            b.say(
                EvidenceTag::Counterfactual,
                format!(
                    "{} is a soft band with no multiplier; removing it moves the first input by {}.",
                    c.constraint,
                    fmt_sig(c.input_change)
                ),
            );
        }
        b.say(
            EvidenceTag::Counterfactual,
            format!("Removing {} changes the optimal cost by {}.", c.constraint, fmt_sig(c.delta_j)),
        );
    }
    if let Some(o) = &ev.optimization {
        if kind == Hypothesis::Optimization {
            b.say(
                EvidenceTag::Counterfactual,
                format!(
                    "{} of {} alternative first inputs (+-10% of range) violate a hard constraint.",
                    o.infeasible, o.candidates
                ),
            );
            for (id, n) in &o.violated {
                b.say(EvidenceTag::Counterfactual, format!("{id} is violated by {n} alternatives."));
            }
        }
    }
    if let Some(e) = &ev.economics {
        b.say(
            EvidenceTag::Counterfactual,
            format!(
                "Predicted cost is {} against {} with all actuators at rest (saving {}%).",
                fmt_sig(e.j_chosen),
                fmt_sig(e.j_rest),
                fmt_sig(100.0 * e.saving)
            ),
        );
    }
    if kind == Hypothesis::History {
        if let Some(p) = &ev.pcmci {
            let n = p.flags.iter().filter(|f| f.active).count();
            b.say(
                EvidenceTag::History,
                format!("{n} of {} lagged causal parents of {} deviate by more than 2 sigma.", p.flags.len(), p.actuator),
            );
        }
    }
    if b.sections.last().is_some_and(|s| s.statements.is_empty()) {
        b.say(EvidenceTag::CurrentState, "No binding multiplier supports this decision.".into());
    }

    b.section(PREDICTIVE_JUSTIFICATION);
    if let Some(c) = ev.counterfactual.as_ref().filter(|c| c.violation_found) {
        b.say(
            EvidenceTag::Counterfactual,
            format!(
                "Without {}, {} reaches {} at k={} ({}), beyond {}.",
                c.constraint,
                c.variable.as_deref().unwrap_or("the constrained quantity"),
                fmt_sig(c.level_at_violation),
                c.violation_stage,
                offset(ctx, c.violation_stage),
                fmt_sig(c.bound)
            ),
        );
    }
    if let Some(p) = &ev.prediction {
        b.say(
            EvidenceTag::Counterfactual,
            format!(
                "With all inputs at rest, {} reaches {} at k={} ({}), beyond {}.",
                p.variable.as_deref().unwrap_or(p.constraint.as_str()),
                fmt_sig(p.level),
                p.stage,
                offset(ctx, p.stage),
                fmt_sig(p.bound)
            ),
        );
    }
    if let Some(a) = &ev.action {
        match a.violations.first() {
            Some(v) => b.say(
                EvidenceTag::Counterfactual,
                format!(
                    "With {} held at rest, the plan reaches {} at k={} ({}), violating {} (bound {}).",
                    a.actuator,
                    fmt_sig(v.level),
                    v.stage,
                    offset(ctx, v.stage),
                    v.constraint,
                    fmt_sig(v.bound)
                ),
            ),
            None => b.say(
                EvidenceTag::Counterfactual,
                format!("With {} held at rest the cost rises by {}.", a.actuator, fmt_sig(a.delta_j)),
            ),
        }
    }
    for (name, v, k, z) in &ctx.forecast_notes {
        b.say(
            EvidenceTag::Forecast,
            format!("Forecast {name} reaches {} at k={k} ({}), z = {}.", fmt_sig(*v), offset(ctx, *k), fmt_sig(*z)),
        );
    }
    if b.sections.last().is_some_and(|s| s.statements.is_empty()) {
        b.say(EvidenceTag::Forecast, "The forecast stays close to its reference levels.".into());
    }

    b.section(PHYSICAL_CONTEXT);
    let named: Vec<&String> = r.causal_factors.iter().collect();
    for c in r.supporting_context.iter().filter(|c| named.iter().any(|n| *n == c.origin())) {
        let verb = match c.composite_sign {
            CompositeSign::Positive => "raises",
            CompositeSign::Negative => "lowers",
            CompositeSign::Indeterminate => "affects",
        };
        b.say(EvidenceTag::Physics, format!("{}: higher {} {verb} {}.", c.render(), c.origin(), c.end()));
    }
    for e in &r.observed_effects {
        let dir = if e.change > 0.0 { "increased" } else { "decreased" };
        let eff = match e.predicted.as_str() {
            "+" => "rises",
            "-" => "falls",
            _ => "changes",
        };
        b.say(
            EvidenceTag::Physics,
            format!("{} {dir} by {}; the graph predicts {} {eff} ({}).", e.actuator, fmt_sig(e.change.abs()), e.state, e.chain),
        );
    }
    if let Some(p) = &ev.pcmci {
        for f in &p.flags {
            b.say(
                EvidenceTag::History,
                format!(
                    "{} at lag {} is a lagged cause of {} (z = {}{}).",
                    f.source,
                    f.lag,
                    p.actuator,
                    fmt_sig(f.z_score),
                    if f.active { ", unusual" } else { ", typical" }
                ),
            );
        }
    }
    if b.sections.last().is_some_and(|s| s.statements.is_empty()) {
        b.say(EvidenceTag::Physics, "No physical or historical context is available.".into());
    }
    b.sections
}

/// Deterministic text rendering of the record's sections.
pub fn render_narrative(r: &ExplanationRecord) -> String {
    let mut out = String::new();
    let head = match (r.selected, r.confidence) {
        (Some(h), Some(c)) => format!("{h} (confidence {c:.2})"),
        _ => "unexplained".to_string(),
    };
    let when = if r.timestamp.is_empty() { String::new() } else { format!(" at {}", r.timestamp) };
    out.push_str(&format!("Decision {}{when}: {head}\n", r.scenario_ref));
    if r.degraded_mode {
        out.push_str("(degraded mode: some evidence sources unavailable)\n");
    }
    for s in &r.sections {
        out.push('\n');
        out.push_str(&s.heading);
        out.push_str(":\n");
        for st in &s.statements {
            out.push_str("  ");
            out.push_str(&st.text);
            out.push('\n');
        }
    }
    out
}
