//! KKT active-set detection, primary-driver selection, counterfactual
//! re-solves and threshold calibration.

mod calibrate;
mod counterfactual;

pub use calibrate::{
    calibrate_cost_thresholds, calibrate_kkt_thresholds, calibration_report, split_indices, synth_bimodal_multipliers,
    synth_cost_trials, CalibrationData, CostTrial, KktCalibration, LabeledMultiplier, SplitFractions, MIN_COST_TRIALS,
};
pub use counterfactual::{
    action_counterfactual, classify, constraint_counterfactual, identify_soft_constraint, rank_soft_constraints,
    ActionCounterfactual, Classification, CounterfactualData, CounterfactualResult, SoftIdentification, SoftTrial,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocp::{ConstraintDef, ConstraintId, OcpSolution, OcpSpec, SolverStatus};
use crate::params::{ParamFile, ParamsError};
use crate::solver::SolveError;

#[derive(Debug, Error)]
pub enum ForensicsError {
    #[error("multiplier evidence needs an optimal solution, solver reported {0:?}")]
    NotOptimal(SolverStatus),
    #[error("active set is empty")]
    EmptyActiveSet,
    #[error("calibration needs both active and inactive samples")]
    SingleClass,
    #[error("need at least {need} counterfactual trials, have {have}")]
    TooFewTrials { have: usize, need: usize },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("threshold `{0}` must be positive and finite")]
    NonPositive(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("calibration data parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("calibration data serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Default,
    Calibrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub provenance: Provenance,
}

/// Family defaults for uncalibrated multiplier thresholds.
pub const FAMILY_DEFAULTS: [(&str, f64); 3] = [("temperature", 1e-6), ("power", 1e-7), ("pressure", 1e-8)];
pub const FALLBACK_THRESHOLD: f64 = 1e-6;
/// Multipliers within this relative band of their threshold are uncertain.
pub const UNCERTAIN_BAND: f64 = 0.2;

/// Multiplier thresholds by constraint id, then family, then a fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub by_id: BTreeMap<String, Threshold>,
    pub by_family: BTreeMap<String, Threshold>,
    pub fallback: f64,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self {
            by_id: BTreeMap::new(),
            by_family: FAMILY_DEFAULTS
                .iter()
                .map(|(f, t)| (f.to_string(), Threshold { tau: *t, provenance: Provenance::Default }))
                .collect(),
            fallback: FALLBACK_THRESHOLD,
        }
    }
}

impl ThresholdTable {
    pub fn lookup(&self, def: &ConstraintDef) -> f64 {
        self.lookup_parts(def.id.as_str(), &def.family)
    }

    pub fn lookup_parts(&self, id: &str, family: &str) -> f64 {
        self.by_id
            .get(id)
            .or_else(|| self.by_family.get(family))
            .map_or(self.fallback, |t| t.tau)
    }

    pub fn set_family(&mut self, family: &str, tau: f64, provenance: Provenance) -> Result<(), ForensicsError> {
        check_positive(family, tau)?;
        self.by_family.insert(family.to_string(), Threshold { tau, provenance });
        Ok(())
    }

    pub fn set_id(&mut self, id: &str, tau: f64, provenance: Provenance) -> Result<(), ForensicsError> {
        check_positive(id, tau)?;
        self.by_id.insert(id.to_string(), Threshold { tau, provenance });
        Ok(())
    }

    /// Every threshold multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |m: &BTreeMap<String, Threshold>| {
            m.iter()
                .map(|(k, t)| (k.clone(), Threshold { tau: t.tau * factor, provenance: t.provenance }))
                .collect()
        };
        Self {
            by_id: scale(&self.by_id),
            by_family: scale(&self.by_family),
            fallback: self.fallback * factor,
        }
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut p = ParamFile::new();
        p.set("kkt.fallback", self.fallback);
        for (scope, map) in [("family", &self.by_family), ("id", &self.by_id)] {
            for (k, t) in map {
                p.set(format!("kkt.{scope}.{k}"), t.tau);
                if t.provenance == Provenance::Calibrated {
                    p.set(format!("kkt.calibrated.{scope}.{k}"), 1.0);
                }
            }
        }
        p
    }

    /// Read `kkt.*` keys; families absent from the file keep their defaults.
    pub fn from_param_file(p: &ParamFile) -> Result<Self, ForensicsError> {
        let mut table = Self::default();
        if let Some(v) = p.get("kkt.fallback") {
            check_positive("kkt.fallback", v)?;
            table.fallback = v;
        }
        for (key, value) in p.iter() {
            let Some(rest) = key.strip_prefix("kkt.") else { continue };
            let (scope, name) = match rest.split_once('.') {
                Some(parts) => parts,
                None => continue,
            };
            let calibrated = p.get(&format!("kkt.calibrated.{scope}.{name}")).is_some_and(|v| v != 0.0);
            let provenance = if calibrated { Provenance::Calibrated } else { Provenance::Default };
            match scope {
                "family" => table.set_family(name, value, provenance)?,
                "id" => table.set_id(name, value, provenance)?,
                _ => {}
            }
        }
        Ok(table)
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), ForensicsError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ForensicsError::NonPositive(name.to_string()))
    }
}

/// Violation-cost and economic-significance thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostThresholds {
    pub tau_cost: f64,
    pub eps_j: f64,
}

impl Default for CostThresholds {
    fn default() -> Self {
        Self { tau_cost: 0.006, eps_j: 0.0006 }
    }
}

impl CostThresholds {
    pub fn new(tau_cost: f64, eps_j: f64) -> Result<Self, ForensicsError> {
        check_positive("tau_cost", tau_cost)?;
        check_positive("eps_j", eps_j)?;
        Ok(Self { tau_cost, eps_j })
    }

    pub fn write_into(&self, p: &mut ParamFile) {
        p.set("cost.tau_cost", self.tau_cost);
        p.set("cost.eps_j", self.eps_j);
    }

    pub fn from_param_file(p: &ParamFile) -> Result<Self, ForensicsError> {
        let d = Self::default();
        Self::new(p.get_or("cost.tau_cost", d.tau_cost), p.get_or("cost.eps_j", d.eps_j))
    }
}

/// Multiplier and cost thresholds loaded together from one parameter file.
pub fn load_thresholds(path: &Path) -> Result<(ThresholdTable, CostThresholds), ForensicsError> {
    let p = ParamFile::load(path)?;
    Ok((ThresholdTable::from_param_file(&p)?, CostThresholds::from_param_file(&p)?))
}

pub fn save_thresholds(path: &Path, table: &ThresholdTable, costs: &CostThresholds) -> Result<(), ForensicsError> {
    let mut p = table.to_param_file();
    costs.write_into(&mut p);
    p.save(path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveConstraint {
    pub id: ConstraintId,
    pub stage: usize,
    pub lambda: f64,
    pub tau: f64,
    /// `lambda / tau`.
    pub ratio: f64,
    /// Multiplier within the uncertain band around its threshold.
    pub uncertain: bool,
}

fn thresholds_for(spec: &OcpSpec, id: &ConstraintId, table: &ThresholdTable) -> f64 {
    spec.constraint(id)
        .map_or_else(|| table.lookup_parts(id.as_str(), ""), |def| table.lookup(def))
}

/// Stage multipliers strictly above their threshold, in solution order.
pub fn detect_active_set(
    spec: &OcpSpec,
    sol: &OcpSolution,
    table: &ThresholdTable,
) -> Result<Vec<ActiveConstraint>, ForensicsError> {
    if sol.status != SolverStatus::Optimal {
        return Err(ForensicsError::NotOptimal(sol.status));
    }
    Ok(sol
        .multipliers
        .iter()
        .filter_map(|m| {
            let tau = thresholds_for(spec, &m.id, table);
            (m.value > tau).then(|| ActiveConstraint {
                id: m.id.clone(),
                stage: m.stage,
                lambda: m.value,
                tau,
                ratio: m.value / tau,
                uncertain: m.value <= tau * (1.0 + UNCERTAIN_BAND),
            })
        })
        .collect())
}

/// Inactive multipliers just below their threshold, as `id@k=stage` labels.
pub fn near_threshold(spec: &OcpSpec, sol: &OcpSolution, table: &ThresholdTable) -> Vec<String> {
    sol.multipliers
        .iter()
        .filter(|m| {
            let tau = thresholds_for(spec, &m.id, table);
            m.value <= tau && m.value >= tau * (1.0 - UNCERTAIN_BAND)
        })
        .map(|m| m.id.at_stage(m.stage))
        .collect()
}

/// Largest normalized multiplier; ties go to the earlier stage, then the smaller id.
pub fn primary_driver(active: &[ActiveConstraint]) -> Result<&ActiveConstraint, ForensicsError> {
    active
        .iter()
        .min_by(|a, b| {
            b.ratio
                .total_cmp(&a.ratio)
                .then(a.stage.cmp(&b.stage))
                .then_with(|| a.id.cmp(&b.id))
        })
        .ok_or(ForensicsError::EmptyActiveSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::StageMultiplier;

    fn ac(id: &str, stage: usize, lambda: f64, tau: f64) -> ActiveConstraint {
        ActiveConstraint {
            id: id.into(),
            stage,
            lambda,
            tau,
            ratio: lambda / tau,
            uncertain: false,
        }
    }

    fn solution(mults: &[(&str, usize, f64)], status: SolverStatus) -> OcpSolution {
        OcpSolution {
            inputs: vec![vec![0.0]],
            states: vec![vec![0.0]; 2],
            multipliers: mults
                .iter()
                .map(|(id, k, v)| StageMultiplier { id: (*id).into(), stage: *k, value: *v })
                .collect(),
            total_cost: 0.0,
            status,
            iterations: 1,
            kkt_residual: 0.0,
        }
    }

    fn spec_with_temperature_bound() -> OcpSpec {
        use crate::ocp::{BoundSense, ConstraintKind, StageRange};
        use std::sync::Arc;
        OcpSpec::new(
            1,
            1,
            1,
            1,
            Arc::new(|x: &[f64], u: &[f64], _d: &[f64]| vec![x[0] + u[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0]),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .with_constraint(
            ConstraintDef::state_bound("Z_min", ConstraintKind::HardInequality, 0, 1, BoundSense::Lower, 0.0, 0.0, StageRange::single(1))
                .with_family("temperature"),
        )
    }

    #[test]
    fn building_temperature_threshold_marks_active() {
        let spec = spec_with_temperature_bound();
        let table = ThresholdTable::default();
        let act = detect_active_set(&spec, &solution(&[("Z_min", 1, 2e-6)], SolverStatus::Optimal), &table).unwrap();
        assert_eq!(act.len(), 1);
        assert!((act[0].ratio - 2.0).abs() < 1e-12);
        let none = detect_active_set(&spec, &solution(&[("Z_min", 1, 0.0)], SolverStatus::Optimal), &table).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn non_optimal_solution_is_refused() {
        let spec = spec_with_temperature_bound();
        let r = detect_active_set(&spec, &solution(&[("Z_min", 1, 1.0)], SolverStatus::MaxIter), &ThresholdTable::default());
        assert!(matches!(r, Err(ForensicsError::NotOptimal(SolverStatus::MaxIter))));
    }

    #[test]
    fn near_threshold_multipliers_are_uncertain() {
        let spec = spec_with_temperature_bound();
        let table = ThresholdTable::default();
        let act = detect_active_set(&spec, &solution(&[("Z_min", 1, 1.1e-6)], SolverStatus::Optimal), &table).unwrap();
        assert!(act[0].uncertain);
        let below = near_threshold(&spec, &solution(&[("Z_min", 1, 0.9e-6)], SolverStatus::Optimal), &table);
        assert_eq!(below, ["Z_min@k=1"]);
    }

    #[test]
    fn driver_uses_normalized_multiplier() {
        let set = [ac("a", 0, 2e-6, 1e-6), ac("b", 0, 5e-7, 1e-7)];
        assert_eq!(primary_driver(&set).unwrap().id.as_str(), "b");
        assert_eq!(primary_driver(&set[..1]).unwrap().id.as_str(), "a");
        assert!(matches!(primary_driver(&[]), Err(ForensicsError::EmptyActiveSet)));
    }

    #[test]
    fn driver_ties_prefer_earlier_stage_then_id() {
        let set = [ac("x", 3, 1.0, 0.5), ac("x", 1, 2.0, 1.0)];
        assert_eq!(primary_driver(&set).unwrap().stage, 1);
        let set = [ac("b", 2, 1.0, 1.0), ac("a", 2, 1.0, 1.0)];
        assert_eq!(primary_driver(&set).unwrap().id.as_str(), "a");
    }

    #[test]
    fn driver_is_scale_invariant() {
        let set = [ac("a", 0, 3e-6, 1e-6), ac("b", 1, 4e-7, 1e-7), ac("c", 2, 1e-5, 1e-5)];
        let scaled: Vec<_> = set.iter().map(|a| ac(a.id.as_str(), a.stage, a.lambda * 7.5, a.tau * 7.5)).collect();
        assert_eq!(primary_driver(&set).unwrap().id, primary_driver(&scaled).unwrap().id);
    }

    #[test]
    fn threshold_table_round_trips_through_param_file() {
        let mut t = ThresholdTable::default();
        t.set_id("C_max", 3.5e-5, Provenance::Calibrated).unwrap();
        t.set_family("co2", 2e-9, Provenance::Calibrated).unwrap();
        let mut p = t.to_param_file();
        let costs = CostThresholds::default();
        costs.write_into(&mut p);
        let text = p.render();
        let back = ParamFile::parse(&text).unwrap();
        assert_eq!(ThresholdTable::from_param_file(&back).unwrap(), t);
        assert_eq!(CostThresholds::from_param_file(&back).unwrap(), costs);
        assert!(t.set_family("bad", 0.0, Provenance::Default).is_err());
        assert!(CostThresholds::new(0.0, 1.0).is_err());
    }

    #[test]
    fn lookup_order_is_id_family_fallback() {
        let mut t = ThresholdTable::default();
        t.set_id("P_max", 5e-3, Provenance::Calibrated).unwrap();
        assert_eq!(t.lookup_parts("P_max", "power"), 5e-3);
        assert_eq!(t.lookup_parts("Cool_max", "power"), 1e-7);
        assert_eq!(t.lookup_parts("T1_max", "pressure"), 1e-8);
        assert_eq!(t.lookup_parts("H_min", "humidity"), FALLBACK_THRESHOLD);
        assert_eq!(t.scaled(0.5).lookup_parts("Cool_max", "power"), 0.5e-7);
    }
}
