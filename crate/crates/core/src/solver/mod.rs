//! Nonlinear OCP solver: direct transcription, SQP with a dual active-set
//! QP subproblem, counterfactual re-solves and multiplier sensitivity checks.

pub mod qp;
mod sqp;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocp::{
    validate_spec, ConstraintDef, ConstraintId, DecisionContext, OcpError, OcpSolution, OcpSpec,
    SolverStatus, StageRange,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("relaxation of `{0}` would tighten the feasible set")]
    Tightening(ConstraintId),
    #[error("relaxation targets soft constraint `{0}`; only removal is supported")]
    SoftShift(ConstraintId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub step_tolerance: f64,
    /// Relative finite-difference step for Jacobians and gradients.
    pub fd_step: f64,
    /// Record a per-iteration trace.
    #[serde(default)]
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            kkt_tolerance: 1e-8,
            step_tolerance: 1e-8,
            fd_step: 1e-6,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.max_iterations == 0 {
            return Err(SolveError::Config("max_iterations must be positive".into()));
        }
        for (name, v) in [
            ("kkt_tolerance", self.kkt_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolveError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Tolerance used to decide that two input trajectories differ.
    pub fn change_tolerance(&self) -> f64 {
        10.0 * self.step_tolerance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageSelection {
    All,
    Subset(BTreeSet<usize>),
}

impl StageSelection {
    fn contains(&self, k: usize) -> bool {
        match self {
            StageSelection::All => true,
            StageSelection::Subset(s) => s.contains(&k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationMode {
    Remove,
    /// Move the bound by `delta` towards the infeasible side; must be `>= 0`.
    ShiftBound(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationDirective {
    pub target: ConstraintId,
    pub stages: StageSelection,
    pub mode: RelaxationMode,
}

impl RelaxationDirective {
    pub fn remove(target: ConstraintId) -> Self {
        Self {
            target,
            stages: StageSelection::All,
            mode: RelaxationMode::Remove,
        }
    }

    pub fn shift(target: ConstraintId, delta: f64) -> Self {
        Self {
            target,
            stages: StageSelection::All,
            mode: RelaxationMode::ShiftBound(delta),
        }
    }

    pub fn at_stages(mut self, stages: impl IntoIterator<Item = usize>) -> Self {
        self.stages = StageSelection::Subset(stages.into_iter().collect());
        self
    }
}

/// One line of the iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub step_norm: f64,
    pub kkt_residual: f64,
    pub alpha: f64,
    pub objective: f64,
    pub active: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

impl SolveTrace {
    /// Line-oriented text, one iteration per line.
    pub fn render(&self) -> String {
        let mut out = String::from("iter\tstep\tkkt\talpha\tobjective\tactive\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.3e}\t{:.3e}\t{:.3e}\t{:.6e}\t{}",
                r.iteration,
                r.step_norm,
                r.kkt_residual,
                r.alpha,
                r.objective,
                r.active.join(",")
            );
        }
        out
    }
}

/// Solve the OCP for one decision instant.
pub fn solve(spec: &OcpSpec, ctx: &DecisionContext, cfg: &SolverConfig) -> Result<OcpSolution, SolveError> {
    solve_with_trace(spec, ctx, cfg).map(|(sol, _)| sol)
}

/// Solve and return the iteration trace (empty unless `cfg.trace`).
pub fn solve_with_trace(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    cfg: &SolverConfig,
) -> Result<(OcpSolution, SolveTrace), SolveError> {
    let report = validate_spec(spec);
    if !report.is_usable() {
        return Err(SolveError::InvalidSpec(report.messages().join("; ")));
    }
    solve_checked(spec, ctx, cfg)
}

fn solve_checked(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    cfg: &SolverConfig,
) -> Result<(OcpSolution, SolveTrace), SolveError> {
    cfg.validate()?;
    ctx.check(spec)?;
    let out = sqp::run(spec, ctx, cfg);
    log::debug!(
        "solve: status {:?} after {} iterations, kkt {:.2e}",
        out.solution.status,
        out.solution.iterations,
        out.solution.kkt_residual
    );
    Ok((out.solution, out.trace))
}

/// Copy of `spec` with the directives applied. Stage subsets split a
/// constraint into per-segment copies that keep its id.
pub fn relaxed_spec(spec: &OcpSpec, directives: &[RelaxationDirective]) -> Result<OcpSpec, SolveError> {
    apply_directives(spec, directives, false)
}

fn apply_directives(
    spec: &OcpSpec,
    directives: &[RelaxationDirective],
    allow_tightening: bool,
) -> Result<OcpSpec, SolveError> {
    for d in directives {
        let def = spec
            .constraint(&d.target)
            .ok_or_else(|| OcpError::UnknownConstraint(d.target.clone()))?;
        if let RelaxationMode::ShiftBound(delta) = d.mode {
            if !delta.is_finite() {
                return Err(SolveError::Config("bound shift must be finite".into()));
            }
            if delta < 0.0 && !allow_tightening {
                return Err(SolveError::Tightening(d.target.clone()));
            }
            if !def.is_hard() && delta != 0.0 {
                return Err(SolveError::SoftShift(d.target.clone()));
            }
        }
    }
    let h = spec.horizon;
    let terminal_ids: BTreeSet<ConstraintId> =
        spec.terminal_constraints.iter().map(|c| c.id.clone()).collect();
    let rewrite = |def: &ConstraintDef, stages: StageRange| -> Vec<ConstraintDef> {
        let mine: Vec<&RelaxationDirective> = directives.iter().filter(|d| d.target == def.id).collect();
        if mine.is_empty() {
            return vec![def.clone()];
        }
        // Per-stage bound shift; None means removed.
        let per_stage: Vec<(usize, Option<f64>)> = stages
            .iter()
            .map(|k| {
                let mut shift = Some(0.0);
                for d in &mine {
                    if d.stages.contains(k) {
                        shift = match (shift, &d.mode) {
                            (None, _) | (_, RelaxationMode::Remove) => None,
                            (Some(s), RelaxationMode::ShiftBound(delta)) => Some(s + delta),
                        };
                    }
                }
                (k, shift)
            })
            .collect();
        let mut out: Vec<ConstraintDef> = Vec::new();
        let mut i = 0;
        while i < per_stage.len() {
            let (start, shift) = per_stage[i];
            let mut j = i;
            while j + 1 < per_stage.len() && per_stage[j + 1].1 == shift {
                j += 1;
            }
            if let Some(s) = shift {
                let mut piece = if s == 0.0 { def.clone() } else { def.widened(s) };
                piece.stages = StageRange::new(start, per_stage[j].0);
                out.push(piece);
            }
            i = j + 1;
        }
        out
    };
    let mut out = spec.clone();
    out.path_constraints = spec
        .path_constraints
        .iter()
        .flat_map(|c| rewrite(c, c.stages))
        .collect();
    out.terminal_constraints = spec
        .terminal_constraints
        .iter()
        .flat_map(|c| rewrite(c, StageRange::single(h)))
        .collect();
    debug_assert!(out
        .terminal_constraints
        .iter()
        .all(|c| terminal_ids.contains(&c.id)));
    if out.path_constraints.is_empty() && out.terminal_constraints.is_empty() {
        out.unconstrained = true;
    }
    Ok(out)
}

/// Re-solve with the directives applied; the original spec is untouched.
/// Shifts must widen the feasible set.
pub fn resolve_relaxed(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    directives: &[RelaxationDirective],
    cfg: &SolverConfig,
) -> Result<OcpSolution, SolveError> {
    let report = validate_spec(spec);
    if !report.is_usable() {
        return Err(SolveError::InvalidSpec(report.messages().join("; ")));
    }
    let relaxed = apply_directives(spec, directives, false)?;
    solve_checked(&relaxed, ctx, cfg).map(|(s, _)| s)
}

/// Result of [`multiplier_sensitivity_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    /// Sum of the constraint's multipliers over its stages.
    pub lambda: f64,
    /// Central difference of `J*` with respect to tightening the bound.
    pub dj_dc: f64,
}

/// Compare the reported multiplier of `id` with a central finite difference
/// of the optimal cost over bound shifts of `+-delta` (positive = tighter).
pub fn multiplier_sensitivity_check(
    spec: &OcpSpec,
    ctx: &DecisionContext,
    id: &ConstraintId,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<Sensitivity, SolveError> {
    let def = spec
        .constraint(id)
        .ok_or_else(|| OcpError::UnknownConstraint(id.clone()))?;
    if !def.is_hard() {
        return Err(SolveError::SoftShift(id.clone()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(SolveError::Config("delta must be positive".into()));
    }
    let nominal = solve(spec, ctx, cfg)?;
    let lambda: f64 = nominal
        .multipliers
        .iter()
        .filter(|m| &m.id == id)
        .map(|m| m.value)
        .sum();
    let solve_shifted = |shift: f64| -> Result<OcpSolution, SolveError> {
        let shifted = apply_directives(spec, &[RelaxationDirective::shift(id.clone(), shift)], true)?;
        let (sol, _) = solve_checked(&shifted, ctx, cfg)?;
        if sol.status != SolverStatus::Optimal {
            return Err(SolveError::Config(format!(
                "perturbed solve ended with status {:?}",
                sol.status
            )));
        }
        Ok(sol)
    };
    let tight = solve_shifted(-delta)?;
    let loose = solve_shifted(delta)?;
    Ok(Sensitivity {
        lambda,
        dj_dc: (tight.total_cost - loose.total_cost) / (2.0 * delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{BoundSense, ConstraintFn};
    use std::sync::Arc;

    fn scalar_problem(with_bound: bool) -> OcpSpec {
        // x is a dummy state; the single decision is u_0.
        let mut spec = OcpSpec::new(
            1,
            1,
            1,
            1,
            Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| vec![x[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0]),
            Arc::new(|_x: &[f64]| 0.0),
        );
        if with_bound {
            let f: ConstraintFn = Arc::new(|_x: &[f64], u: &[f64], _d: &[f64]| u[0]);
            spec = spec.with_constraint(ConstraintDef::hard("u_lo", BoundSense::Lower, 0.5, StageRange::single(0), f));
        } else {
            spec = spec.declared_unconstrained();
        }
        spec
    }

    fn ctx1() -> DecisionContext {
        DecisionContext::new(vec![0.0], vec![vec![0.0]])
    }

    #[test]
    fn unconstrained_scalar() {
        let spec = OcpSpec::new(
            1,
            1,
            1,
            1,
            Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| vec![x[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| (u[0] - 1.0).powi(2)),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .declared_unconstrained();
        let sol = solve(&spec, &ctx1(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.inputs[0][0] - 1.0).abs() < 1e-8);
        assert!(sol.multipliers.is_empty());
        assert!(sol.total_cost.abs() < 1e-12);
    }

    #[test]
    fn binding_lower_bound_has_unit_multiplier() {
        let spec = scalar_problem(true);
        let sol = solve(&spec, &ctx1(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.inputs[0][0] - 0.5).abs() < 1e-8);
        assert!((sol.multiplier(&"u_lo".into(), 0).unwrap() - 1.0).abs() < 1e-6);
        assert!((sol.total_cost - 0.25).abs() < 1e-8);
    }

    #[test]
    fn removing_binding_constraint_recovers_unconstrained_optimum() {
        let spec = scalar_problem(true);
        let sol = resolve_relaxed(&spec, &ctx1(), &[RelaxationDirective::remove("u_lo".into())], &SolverConfig::default()).unwrap();
        assert!(sol.inputs[0][0].abs() < 1e-8);
        assert!(sol.total_cost.abs() < 1e-12);
        // The original spec is untouched.
        assert_eq!(spec.path_constraints.len(), 1);
    }

    #[test]
    fn tightening_shift_is_rejected() {
        let spec = scalar_problem(true);
        let err = resolve_relaxed(&spec, &ctx1(), &[RelaxationDirective::shift("u_lo".into(), -0.1)], &SolverConfig::default()).unwrap_err();
        assert_eq!(err, SolveError::Tightening("u_lo".into()));
    }

    #[test]
    fn unknown_target_is_rejected() {
        let spec = scalar_problem(true);
        let err = resolve_relaxed(&spec, &ctx1(), &[RelaxationDirective::remove("nope".into())], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::Ocp(OcpError::UnknownConstraint(_))));
    }

    #[test]
    fn sensitivity_of_scalar_bound() {
        let spec = scalar_problem(true);
        let s = multiplier_sensitivity_check(&spec, &ctx1(), &"u_lo".into(), 1e-4, &SolverConfig::default()).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-6);
        assert!((s.dj_dc - 1.0).abs() < 1e-4);
    }

    #[test]
    fn inactive_constraint_has_zero_sensitivity() {
        let f: ConstraintFn = Arc::new(|_x: &[f64], u: &[f64], _d: &[f64]| u[0]);
        let spec = scalar_problem(false)
            .with_constraint(ConstraintDef::hard("far", BoundSense::Upper, 10.0, StageRange::single(0), f));
        let mut spec = spec;
        spec.unconstrained = false;
        let s = multiplier_sensitivity_check(&spec, &ctx1(), &"far".into(), 1e-4, &SolverConfig::default()).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert!(s.dj_dc.abs() < 1e-8);
    }

    #[test]
    fn stage_subset_relaxation_splits_ranges() {
        let f: ConstraintFn = Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| x[0]);
        let spec = OcpSpec::new(
            5,
            1,
            1,
            1,
            Arc::new(|x: &[f64], u: &[f64], _d: &[f64]| vec![x[0] + u[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0]),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .with_constraint(ConstraintDef::hard("x_hi", BoundSense::Upper, 1.0, StageRange::new(1, 5), f));
        let relaxed = relaxed_spec(&spec, &[RelaxationDirective::remove("x_hi".into()).at_stages([3])]).unwrap();
        let ranges: Vec<_> = relaxed.path_constraints.iter().map(|c| (c.stages.first, c.stages.last)).collect();
        assert_eq!(ranges, vec![(1, 2), (4, 5)]);
        let shifted = relaxed_spec(&spec, &[RelaxationDirective::shift("x_hi".into(), 0.5).at_stages([1, 2])]).unwrap();
        let bounds: Vec<_> = shifted.path_constraints.iter().map(|c| (c.stages.first, c.bound)).collect();
        assert_eq!(bounds, vec![(1, 1.5), (3, 1.0)]);
    }

    #[test]
    fn trace_records_iterations() {
        let spec = scalar_problem(true);
        let cfg = SolverConfig {
            trace: true,
            ..SolverConfig::default()
        };
        let (sol, trace) = solve_with_trace(&spec, &ctx1(), &cfg).unwrap();
        assert_eq!(trace.rows.len(), sol.iterations);
        let text = trace.render();
        assert!(text.lines().count() == sol.iterations + 1);
        assert!(text.contains("u_lo@k=0"));
    }

    #[test]
    fn solves_are_bitwise_repeatable() {
        let spec = scalar_problem(true);
        let a = solve(&spec, &ctx1(), &SolverConfig::default()).unwrap();
        let b = solve(&spec, &ctx1(), &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        let spec = scalar_problem(true).with_input_bounds(vec![(0.0, 0.2)]);
        let sol = solve(&spec, &ctx1(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::Infeasible);
    }
}
