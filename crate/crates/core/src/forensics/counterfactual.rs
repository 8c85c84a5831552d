//! Counterfactual re-solves: relaxing one constraint, or pinning one
//! actuator at rest, and comparing with the nominal optimum.

use serde::{Deserialize, Serialize};

use super::{CostThresholds, ForensicsError};
use crate::ocp::{
    max_violation, trajectory_penalty, ConstraintDef, ConstraintId, DecisionContext, OcpSolution, OcpSpec,
};
use crate::solver::{resolve_relaxed, solve, RelaxationDirective, SolverConfig};

/// Relative tolerance on a constraint level before a violation counts.
const VIOLATION_TOL: f64 = 1e-6;

fn violation_tol(def: &ConstraintDef) -> f64 {
    VIOLATION_TOL * def.bound.abs().max(1.0)
}

fn max_input_change(a: &OcpSolution, b: &OcpSolution) -> f64 {
    a.first_input()
        .iter()
        .zip(b.first_input())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Raw comparison of a nominal solution with a constraint-relaxed re-solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualData {
    pub constraint: ConstraintId,
    pub hard: bool,
    pub u_nominal: Vec<f64>,
    pub u_relaxed: Vec<f64>,
    /// Largest first-input change.
    pub input_change: f64,
    pub u_changed: bool,
    pub j_nominal: f64,
    pub j_relaxed: f64,
    /// Largest signed violation of the original constraint on the relaxed trajectory.
    pub max_violation: f64,
    pub violation_stage: usize,
    pub violation_found: bool,
    /// Relaxed-trajectory penalty of the original constraint (soft only).
    pub penalty: f64,
    /// Level of the constrained quantity at the violating stage.
    pub level_at_violation: f64,
    pub relaxed_states: Vec<Vec<f64>>,
}

/// Re-solve with every stage of `id` removed and evaluate the original
/// constraint on the relaxed trajectory.
pub fn constraint_counterfactual(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    cfg: &SolverConfig,
    nominal: &OcpSolution,
    id: &ConstraintId,
) -> Result<CounterfactualData, ForensicsError> {
    let def = spec
        .constraint(id)
        .ok_or_else(|| crate::solver::SolveError::Ocp(crate::ocp::OcpError::UnknownConstraint(id.clone())))?;
    let relaxed = resolve_relaxed(spec, ctx, &[RelaxationDirective::remove(id.clone())], cfg)?;
    let forecast: Vec<Vec<f64>> = (0..spec.horizon).map(|k| ctx.disturbance_at(k).to_vec()).collect();
    let (g, stage) = max_violation(spec, def, &relaxed.states, &relaxed.inputs, &forecast);
    let penalty = if def.is_hard() {
        0.0
    } else {
        trajectory_penalty(spec, def, &relaxed.states, &relaxed.inputs, &forecast)
    };
    let zero_u = vec![0.0; spec.input_dim()];
    let u_at = if stage < spec.horizon { &relaxed.inputs[stage] } else { &zero_u };
    let level = def.level(&relaxed.states[stage], u_at, &forecast[stage.min(spec.horizon - 1)]);
    let change = max_input_change(nominal, &relaxed);
    Ok(CounterfactualData {
        constraint: id.clone(),
        hard: def.is_hard(),
        u_nominal: nominal.first_input().to_vec(),
        u_relaxed: relaxed.first_input().to_vec(),
        input_change: change,
        u_changed: change > cfg.change_tolerance(),
        j_nominal: nominal.total_cost,
        j_relaxed: relaxed.total_cost,
        max_violation: g,
        violation_stage: stage,
        violation_found: g > violation_tol(def),
        penalty,
        level_at_violation: level,
        relaxed_states: relaxed.states,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    ConstraintDriven,
    EconomicDriven,
    NotCausal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub constraint: ConstraintId,
    pub u_changed: bool,
    pub violation_found: bool,
    pub violation_stage: Option<usize>,
    /// `J_relaxed - J_nominal`.
    pub delta_j: f64,
    pub classification: Classification,
}

pub fn classify(cf: &CounterfactualData, costs: &CostThresholds) -> CounterfactualResult {
    let delta_j = cf.j_relaxed - cf.j_nominal;
    let significant = cf.hard || cf.penalty > costs.tau_cost;
    let classification = if cf.u_changed && cf.violation_found && significant {
        Classification::ConstraintDriven
    } else if !cf.violation_found && delta_j < -costs.eps_j {
        Classification::EconomicDriven
    } else {
        Classification::NotCausal
    };
    CounterfactualResult {
        constraint: cf.constraint.clone(),
        u_changed: cf.u_changed,
        violation_found: cf.violation_found,
        violation_stage: cf.violation_found.then_some(cf.violation_stage),
        delta_j,
        classification,
    }
}

fn gradient_norm(def: &ConstraintDef, x: &[f64], nu: usize, nd: usize) -> f64 {
    let grad = match &def.penalty_gradient {
        Some(g) => g(x),
        None => {
            let (u, d) = (vec![0.0; nu], vec![0.0; nd]);
            (0..x.len())
                .map(|i| {
                    let h = 1e-6 * x[i].abs().max(1.0);
                    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                    xp[i] += h;
                    xm[i] -= h;
                    (def.penalty(&xp, &u, &d) - def.penalty(&xm, &u, &d)) / (2.0 * h)
                })
                .collect()
        }
    };
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Soft constraints by descending penalty-gradient norm at `x`; ties keep
/// declaration order.
pub fn rank_soft_constraints(spec: &OcpSpec, x: &[f64]) -> Vec<ConstraintId> {
    let mut scored: Vec<(usize, f64, ConstraintId)> = spec
        .soft_constraints()
        .enumerate()
        .map(|(i, def)| (i, gradient_norm(def, x, spec.input_dim(), spec.disturbance_dim()), def.id.clone()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut seen = std::collections::BTreeSet::new();
    scored.into_iter().filter(|s| seen.insert(s.2.clone())).map(|s| s.2).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftTrial {
    pub constraint: ConstraintId,
    pub result: Option<CounterfactualResult>,
    pub penalty: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftIdentification {
    pub constraint: Option<ConstraintId>,
    /// Data for the identified constraint.
    pub counterfactual: Option<CounterfactualData>,
    pub trials: Vec<SoftTrial>,
    pub warnings: Vec<String>,
}

impl SoftIdentification {
    pub fn resolves(&self) -> usize {
        self.trials.len()
    }
}

/// Walk the ranked soft constraints and return the first whose removal
/// changes the action and lets the relaxed trajectory violate it by more
/// than `tau_cost` of penalty.
pub fn identify_soft_constraint(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    cfg: &SolverConfig,
    nominal: &OcpSolution,
    costs: &CostThresholds,
) -> SoftIdentification {
    let mut out = SoftIdentification::default();
    for id in rank_soft_constraints(spec, &ctx.measured_state) {
        match constraint_counterfactual(spec, ctx, cfg, nominal, &id) {
            Ok(cf) => {
                let result = classify(&cf, costs);
                let hit = result.classification == Classification::ConstraintDriven;
                out.trials.push(SoftTrial { constraint: id.clone(), result: Some(result), penalty: cf.penalty });
                if hit {
                    out.constraint = Some(id);
                    out.counterfactual = Some(cf);
                    break;
                }
            }
            Err(e) => {
                log::warn!("re-solve without `{id}` failed: {e}");
                out.warnings.push(format!("re-solve without `{id}` failed: {e}"));
                out.trials.push(SoftTrial { constraint: id, result: None, penalty: 0.0 });
            }
        }
    }
    out
}

/// Nominal optimum compared with a re-solve where one actuator is held at rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCounterfactual {
    pub actuator: String,
    pub j_nominal: f64,
    pub j_pinned: f64,
    pub pinned_states: Vec<Vec<f64>>,
    /// Constraints violated by the pinned trajectory: `(id, stage, level, bound)`,
    /// first violation of each.
    pub violations: Vec<(ConstraintId, usize, f64, f64)>,
}

impl ActionCounterfactual {
    pub fn delta_j(&self) -> f64 {
        self.j_pinned - self.j_nominal
    }
}

pub fn action_counterfactual(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    cfg: &SolverConfig,
    nominal: &OcpSolution,
    actuator: usize,
) -> Result<ActionCounterfactual, ForensicsError> {
    let mut pinned = spec.clone();
    let rest = spec.rest_inputs()[0][actuator];
    pinned.input_bounds[actuator] = (rest, rest);
    let sol = solve(&pinned, ctx, cfg)?;
    let h = spec.horizon;
    let forecast: Vec<Vec<f64>> = (0..h).map(|k| ctx.disturbance_at(k).to_vec()).collect();
    let zero_u = vec![0.0; spec.input_dim()];
    let mut violations = Vec::new();
    for (def, stages) in spec.all_constraints() {
        if let Some(k) = stages.iter().find(|&k| {
            let u = if k < h { &sol.inputs[k] } else { &zero_u };
            def.violation(&sol.states[k], u, &forecast[k.min(h - 1)]) > violation_tol(def)
        }) {
            let u = if k < h { &sol.inputs[k] } else { &zero_u };
            violations.push((def.id.clone(), k, def.level(&sol.states[k], u, &forecast[k.min(h - 1)]), def.bound));
        }
    }
    Ok(ActionCounterfactual {
        actuator: spec.input_names.get(actuator).cloned().unwrap_or_else(|| format!("u{actuator}")),
        j_nominal: nominal.total_cost,
        j_pinned: sol.total_cost,
        pinned_states: sol.states,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greenhouse::{build_greenhouse_ocp, GreenhouseParams, STATES};
    use crate::ocp::{BoundSense, ConstraintKind, StageRange};
    use std::sync::Arc;

    fn cf(u_changed: bool, violation: bool, penalty: f64, hard: bool, dj: f64) -> CounterfactualData {
        CounterfactualData {
            constraint: "T_comfort_lo".into(),
            hard,
            u_nominal: vec![0.3],
            u_relaxed: vec![0.0],
            input_change: if u_changed { 0.3 } else { 0.0 },
            u_changed,
            j_nominal: 1.0,
            j_relaxed: 1.0 + dj,
            max_violation: if violation { 0.5 } else { -0.5 },
            violation_stage: 6,
            violation_found: violation,
            penalty,
            level_at_violation: 17.5,
            relaxed_states: vec![],
        }
    }

    #[test]
    fn dip_below_band_is_constraint_driven() {
        let r = classify(&cf(true, true, 0.25, false, -0.15), &CostThresholds::default());
        assert_eq!(r.classification, Classification::ConstraintDriven);
        assert_eq!(r.violation_stage, Some(6));
        assert!((r.delta_j + 0.15).abs() < 1e-12);
    }

    #[test]
    fn unchanged_relaxation_is_not_causal() {
        let r = classify(&cf(false, false, 0.0, true, 0.0), &CostThresholds::default());
        assert_eq!(r.classification, Classification::NotCausal);
    }

    #[test]
    fn saving_without_violation_is_economic() {
        let r = classify(&cf(true, false, 0.0, false, -0.10), &CostThresholds { tau_cost: 0.006, eps_j: 0.0006 });
        assert_eq!(r.classification, Classification::EconomicDriven);
    }

    #[test]
    fn tiny_soft_penalty_is_not_a_violation_cause() {
        let r = classify(&cf(true, true, 0.001, false, -0.15), &CostThresholds::default());
        assert_ne!(r.classification, Classification::ConstraintDriven);
    }

    #[test]
    fn ranking_inside_bands_keeps_declaration_order() {
        let spec = build_greenhouse_ocp(&GreenhouseParams::default(), 4);
        let declared: Vec<ConstraintId> = spec.soft_constraints().map(|c| c.id.clone()).collect();
        assert_eq!(rank_soft_constraints(&spec, &[22.0, 700.0, 75.0, 1.0]), declared);
    }

    #[test]
    fn cold_state_ranks_temperature_band_first() {
        let spec = build_greenhouse_ocp(&GreenhouseParams::default(), 4);
        let ranked = rank_soft_constraints(&spec, &[17.0, 700.0, 75.0, 1.0]);
        assert_eq!(ranked[0].as_str(), "T_comfort_lo");
        assert_eq!(STATES[0], "T");
    }

    #[test]
    fn two_violations_rank_like_numeric_gradients() {
        let spec = build_greenhouse_ocp(&GreenhouseParams::default(), 4);
        let x = [17.9, 950.0, 75.0, 1.0];
        let ranked = rank_soft_constraints(&spec, &x);
        let numeric = |id: &str| {
            let def = spec.constraint(&id.into()).unwrap();
            let (u, d) = ([0.0; 4], [0.0; 4]);
            (0..4)
                .map(|i| {
                    let h = 1e-4;
                    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                    xp[i] += h;
                    xm[i] -= h;
                    ((def.penalty(&xp, &u, &d) - def.penalty(&xm, &u, &d)) / (2.0 * h)).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut expected = vec!["T_comfort_lo", "C_comfort_hi"];
        expected.sort_by(|a, b| numeric(b).total_cmp(&numeric(a)));
        assert_eq!(ranked[0].as_str(), expected[0]);
        assert_eq!(ranked[1].as_str(), expected[1]);
    }

    fn heater(h: usize) -> OcpSpec {
        // x+ = 0.9 x + u - 0.5, keep x >= 1 softly, heating costs u.
        OcpSpec::new(
            h,
            1,
            1,
            1,
            Arc::new(|x: &[f64], u: &[f64], d: &[f64]| vec![0.9 * x[0] + u[0] - d[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| 0.1 * u[0] + 0.05 * u[0] * u[0]),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .with_input_bounds(vec![(0.0, 2.0)])
        .with_constraint(ConstraintDef::state_bound(
            "X_lo",
            ConstraintKind::SoftPenalty,
            0,
            1,
            BoundSense::Lower,
            1.0,
            10.0,
            StageRange::new(1, h),
        ))
    }

    #[test]
    fn soft_identification_finds_the_band_and_stops() {
        let spec = heater(6);
        let ctx = DecisionContext::new(vec![1.2], vec![vec![0.5]; 6]);
        let cfg = SolverConfig::default();
        let nominal = solve(&spec, &ctx, &cfg).unwrap();
        assert!(nominal.first_input()[0] > 0.1);
        let id = identify_soft_constraint(&spec, &ctx, &cfg, &nominal, &CostThresholds::default());
        assert_eq!(id.constraint.as_ref().map(|c| c.as_str()), Some("X_lo"));
        assert_eq!(id.resolves(), 1);
        let cf = id.counterfactual.unwrap();
        assert!(cf.level_at_violation < 1.0);
    }

    #[test]
    fn idle_system_identifies_nothing() {
        let spec = heater(6);
        let ctx = DecisionContext::new(vec![10.0], vec![vec![0.0]; 6]);
        let cfg = SolverConfig::default();
        let nominal = solve(&spec, &ctx, &cfg).unwrap();
        let id = identify_soft_constraint(&spec, &ctx, &cfg, &nominal, &CostThresholds::default());
        assert!(id.constraint.is_none());
        assert!(id.resolves() <= spec.soft_constraints().count());
    }

    #[test]
    fn pinned_heater_violates_band() {
        let spec = heater(6);
        let ctx = DecisionContext::new(vec![1.2], vec![vec![0.5]; 6]);
        let cfg = SolverConfig::default();
        let nominal = solve(&spec, &ctx, &cfg).unwrap();
        let acf = action_counterfactual(&spec, &ctx, &cfg, &nominal, 0).unwrap();
        assert_eq!(acf.violations[0].0.as_str(), "X_lo");
        assert!(acf.delta_j() != 0.0);
    }
}
