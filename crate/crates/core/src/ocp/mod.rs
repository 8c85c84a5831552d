//! Finite-horizon optimal control problem data model.
//!
//! An [`OcpSpec`] describes
//!
//! ```text
//!     min   sum_{k<H} l(x_k, u_k) + soft penalties + l_T(x_H)
//!     s.t.  x_0 = x_meas
//!           x_{k+1} = f(x_k, u_k, d_k)
//!           g_i(x_k, u_k, d_k) <= 0     (hard constraints)
//!           lo <= u_k <= hi
//! ```
//!
//! Constraints are first-class [`ConstraintDef`]s carrying a stable
//! human-readable id. Soft-penalty constraints contribute a quadratic hinge
//! penalty to the objective and never receive a multiplier.

mod scenario;

pub use scenario::{HistoryWindow, Scenario, ScenarioDocument, ScenarioError};

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dynamics `(x, u, d) -> x_next`.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// Analytic dynamics Jacobians `(x, u, d) -> (df/dx, df/du)`, both row-major.
pub type JacobianFn =
    Arc<dyn Fn(&[f64], &[f64], &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) + Send + Sync>;
/// Stage cost `(x, u) -> l`.
pub type StageCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Terminal cost `x -> l_T`.
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Constraint level function `(x, u, d) -> h`, compared against the bound.
pub type ConstraintFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Penalty gradient with respect to the state.
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown constraint `{0}`")]
    UnknownConstraint(ConstraintId),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid decision context: {0}")]
    InvalidContext(String),
}

/// Stable, human-readable constraint key such as `"T_min"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintId(String);

impl ConstraintId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Label of one stage instance, e.g. `T_max@k=12`.
    pub fn at_stage(&self, stage: usize) -> String {
        format!("{}@k={}", self.0, stage)
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConstraintId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    HardInequality,
    SoftPenalty,
}

/// Which side of the bound is feasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSense {
    /// `h(x, u, d) <= bound`
    Upper,
    /// `h(x, u, d) >= bound`
    Lower,
}

impl BoundSense {
    /// Direction in which the constrained quantity must move to violate the bound.
    pub fn violation_direction(self) -> f64 {
        match self {
            BoundSense::Upper => 1.0,
            BoundSense::Lower => -1.0,
        }
    }
}

/// Inclusive stage interval within `0..=H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRange {
    pub first: usize,
    pub last: usize,
}

impl StageRange {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn single(stage: usize) -> Self {
        Self::new(stage, stage)
    }

    pub fn contains(&self, stage: usize) -> bool {
        stage >= self.first && stage <= self.last
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.first..=self.last
    }
}

/// One inequality constraint family evaluated over a stage range.
///
/// The feasible side is `h <= bound` for [`BoundSense::Upper`] and
/// `h >= bound` for [`BoundSense::Lower`]. The signed violation
/// `g = h - bound` (or `bound - h`) is `<= 0` when feasible.
#[derive(Clone)]
pub struct ConstraintDef {
    pub id: ConstraintId,
    pub kind: ConstraintKind,
    /// Threshold family, e.g. `"temperature"` or `"power"`.
    pub family: String,
    /// Name of the bounded variable when the constraint bounds a single
    /// state, used to connect constraints to knowledge-graph nodes.
    pub variable: Option<String>,
    pub sense: BoundSense,
    pub stages: StageRange,
    pub function: ConstraintFn,
    pub bound: f64,
    /// Quadratic hinge weight (soft constraints only).
    pub weight: f64,
    pub penalty_gradient: Option<GradientFn>,
}

impl fmt::Debug for ConstraintDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintDef")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("family", &self.family)
            .field("variable", &self.variable)
            .field("sense", &self.sense)
            .field("stages", &self.stages)
            .field("bound", &self.bound)
            .field("weight", &self.weight)
            .field("has_gradient", &self.penalty_gradient.is_some())
            .finish()
    }
}

impl ConstraintDef {
    pub fn hard(
        id: impl Into<String>,
        sense: BoundSense,
        bound: f64,
        stages: StageRange,
        function: ConstraintFn,
    ) -> Self {
        Self {
            id: ConstraintId::new(id),
            kind: ConstraintKind::HardInequality,
            family: "default".to_string(),
            variable: None,
            sense,
            stages,
            function,
            bound,
            weight: 0.0,
            penalty_gradient: None,
        }
    }

    /// Soft band edge with penalty `weight * max(0, g)^2`. The state
    /// gradient must be attached with [`ConstraintDef::with_gradient`].
    pub fn soft(
        id: impl Into<String>,
        sense: BoundSense,
        bound: f64,
        weight: f64,
        stages: StageRange,
        function: ConstraintFn,
    ) -> Self {
        Self {
            kind: ConstraintKind::SoftPenalty,
            weight,
            ..Self::hard(id, sense, bound, stages, function)
        }
    }

    /// Bound on a single state component, with the analytic penalty
    /// gradient attached for soft constraints.
    pub fn state_bound(
        id: impl Into<String>,
        kind: ConstraintKind,
        state_index: usize,
        state_dim: usize,
        sense: BoundSense,
        bound: f64,
        weight: f64,
        stages: StageRange,
    ) -> Self {
        let function: ConstraintFn = Arc::new(move |x: &[f64], _u: &[f64], _d: &[f64]| x[state_index]);
        let mut def = match kind {
            ConstraintKind::HardInequality => Self::hard(id, sense, bound, stages, function),
            ConstraintKind::SoftPenalty => Self::soft(id, sense, bound, weight, stages, function),
        };
        if kind == ConstraintKind::SoftPenalty {
            let gradient: GradientFn = Arc::new(move |x: &[f64]| {
                let mut grad = vec![0.0; state_dim];
                let g = match sense {
                    BoundSense::Upper => x[state_index] - bound,
                    BoundSense::Lower => bound - x[state_index],
                };
                if g > 0.0 {
                    let dg = match sense {
                        BoundSense::Upper => 1.0,
                        BoundSense::Lower => -1.0,
                    };
                    grad[state_index] = 2.0 * weight * g * dg;
                }
                grad
            });
            def.penalty_gradient = Some(gradient);
        }
        def
    }

    pub fn with_family(mut self, family: impl Into<String>) -> Self {
        self.family = family.into();
        self
    }

    pub fn with_variable(mut self, variable: impl Into<String>) -> Self {
        self.variable = Some(variable.into());
        self
    }

    pub fn with_gradient(mut self, gradient: GradientFn) -> Self {
        self.penalty_gradient = Some(gradient);
        self
    }

    pub fn is_hard(&self) -> bool {
        self.kind == ConstraintKind::HardInequality
    }

    pub fn level(&self, x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        (self.function)(x, u, d)
    }

    /// Signed violation `g`; positive means infeasible.
    pub fn violation(&self, x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        self.violation_of_level((self.function)(x, u, d))
    }

    pub fn violation_of_level(&self, h: f64) -> f64 {
        match self.sense {
            BoundSense::Upper => h - self.bound,
            BoundSense::Lower => self.bound - h,
        }
    }

    /// Quadratic hinge penalty; zero inside the band.
    pub fn penalty(&self, x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        let g = self.violation(x, u, d).max(0.0);
        self.weight * g * g
    }

    /// Copy with the bound moved by `delta` towards the infeasible side
    /// (positive `delta` widens the feasible set).
    pub fn widened(&self, delta: f64) -> Self {
        let mut def = self.clone();
        def.bound = match self.sense {
            BoundSense::Upper => self.bound + delta,
            BoundSense::Lower => self.bound - delta,
        };
        def
    }

    pub fn describe(&self) -> String {
        let var = self.variable.as_deref().unwrap_or("h");
        match self.sense {
            BoundSense::Upper => format!("{var} <= {}", self.bound),
            BoundSense::Lower => format!("{var} >= {}", self.bound),
        }
    }
}

/// Reference level of one disturbance channel, used to judge whether a
/// forecast is unusual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReference {
    pub nominal: f64,
    pub scale: f64,
}

/// Finite-horizon optimal control problem.
#[derive(Clone)]
pub struct OcpSpec {
    pub horizon: usize,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub disturbance_names: Vec<String>,
    pub dynamics: DynamicsFn,
    pub dynamics_jacobian: Option<JacobianFn>,
    pub stage_cost: StageCostFn,
    pub terminal_cost: TerminalCostFn,
    pub path_constraints: Vec<ConstraintDef>,
    pub terminal_constraints: Vec<ConstraintDef>,
    pub input_bounds: Vec<(f64, f64)>,
    /// Resting value of each actuator, used by "no action" counterfactuals.
    pub input_rest: Vec<f64>,
    pub sampling_interval_minutes: f64,
    pub unconstrained: bool,
    pub disturbance_reference: Vec<ChannelReference>,
    /// Characteristic magnitude of each state, used to normalize deltas.
    pub state_scale: Vec<f64>,
}

impl fmt::Debug for OcpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpSpec")
            .field("horizon", &self.horizon)
            .field("state_names", &self.state_names)
            .field("input_names", &self.input_names)
            .field("disturbance_names", &self.disturbance_names)
            .field("path_constraints", &self.path_constraints)
            .field("terminal_constraints", &self.terminal_constraints)
            .field("input_bounds", &self.input_bounds)
            .field("sampling_interval_minutes", &self.sampling_interval_minutes)
            .finish()
    }
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl OcpSpec {
    /// Problem with unbounded inputs and no constraints; refine with the
    /// `with_*` methods.
    pub fn new(
        horizon: usize,
        state_dim: usize,
        input_dim: usize,
        disturbance_dim: usize,
        dynamics: DynamicsFn,
        stage_cost: StageCostFn,
        terminal_cost: TerminalCostFn,
    ) -> Self {
        Self {
            horizon,
            state_names: default_names("x", state_dim),
            input_names: default_names("u", input_dim),
            disturbance_names: default_names("d", disturbance_dim),
            dynamics,
            dynamics_jacobian: None,
            stage_cost,
            terminal_cost,
            path_constraints: Vec::new(),
            terminal_constraints: Vec::new(),
            input_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); input_dim],
            input_rest: vec![0.0; input_dim],
            sampling_interval_minutes: 1.0,
            unconstrained: false,
            disturbance_reference: vec![
                ChannelReference {
                    nominal: 0.0,
                    scale: 1.0
                };
                disturbance_dim
            ],
            state_scale: vec![1.0; state_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_names.len()
    }

    pub fn with_names(
        mut self,
        states: &[&str],
        inputs: &[&str],
        disturbances: &[&str],
    ) -> Self {
        self.state_names = states.iter().map(|s| s.to_string()).collect();
        self.input_names = inputs.iter().map(|s| s.to_string()).collect();
        self.disturbance_names = disturbances.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_input_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.input_bounds = bounds;
        self
    }

    pub fn with_constraint(mut self, def: ConstraintDef) -> Self {
        self.path_constraints.push(def);
        self
    }

    pub fn with_terminal_constraint(mut self, def: ConstraintDef) -> Self {
        self.terminal_constraints.push(def);
        self
    }

    pub fn with_sampling_interval(mut self, minutes: f64) -> Self {
        self.sampling_interval_minutes = minutes;
        self
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.dynamics_jacobian = Some(jacobian);
        self
    }

    pub fn declared_unconstrained(mut self) -> Self {
        self.unconstrained = true;
        self
    }

    pub fn with_disturbance_reference(mut self, reference: Vec<ChannelReference>) -> Self {
        self.disturbance_reference = reference;
        self
    }

    pub fn with_state_scale(mut self, scale: Vec<f64>) -> Self {
        self.state_scale = scale;
        self
    }

    pub fn with_input_rest(mut self, rest: Vec<f64>) -> Self {
        self.input_rest = rest;
        self
    }

    /// All constraints with the stages they are enforced at; terminal
    /// constraints are reported at stage `H`.
    pub fn all_constraints(&self) -> impl Iterator<Item = (&ConstraintDef, StageRange)> {
        let h = self.horizon;
        self.path_constraints
            .iter()
            .map(|c| (c, c.stages))
            .chain(self.terminal_constraints.iter().map(move |c| (c, StageRange::single(h))))
    }

    pub fn constraint(&self, id: &ConstraintId) -> Option<&ConstraintDef> {
        self.path_constraints
            .iter()
            .chain(self.terminal_constraints.iter())
            .find(|c| &c.id == id)
    }

    pub fn soft_constraints(&self) -> impl Iterator<Item = &ConstraintDef> {
        self.path_constraints
            .iter()
            .chain(self.terminal_constraints.iter())
            .filter(|c| c.kind == ConstraintKind::SoftPenalty)
    }

    pub fn hard_constraints(&self) -> impl Iterator<Item = &ConstraintDef> {
        self.path_constraints
            .iter()
            .chain(self.terminal_constraints.iter())
            .filter(|c| c.kind == ConstraintKind::HardInequality)
    }

    pub fn has_soft_constraints(&self) -> bool {
        self.soft_constraints().next().is_some()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_names.iter().position(|n| n == name)
    }

    pub fn disturbance_index(&self, name: &str) -> Option<usize> {
        self.disturbance_names.iter().position(|n| n == name)
    }

    /// Copy with the constraint list rewritten by `edit`; the original is untouched.
    pub fn map_constraints(
        &self,
        mut edit: impl FnMut(&ConstraintDef) -> Option<ConstraintDef>,
    ) -> OcpSpec {
        let mut spec = self.clone();
        spec.path_constraints = self.path_constraints.iter().filter_map(&mut edit).collect();
        spec.terminal_constraints = self
            .terminal_constraints
            .iter()
            .filter_map(&mut edit)
            .collect();
        spec
    }

    /// Inputs held at their resting values over the whole horizon.
    pub fn rest_inputs(&self) -> Vec<Vec<f64>> {
        let rest: Vec<f64> = self
            .input_rest
            .iter()
            .zip(&self.input_bounds)
            .map(|(&r, &(lo, hi))| r.clamp(lo, hi))
            .collect();
        vec![rest; self.horizon]
    }
}

/// One problem in a validation report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpecViolation {
    EmptyHorizon,
    ZeroDimension(&'static str),
    DimensionMismatch { what: String, expected: usize, got: usize },
    InvalidBounds { input: String },
    DuplicateConstraintId(ConstraintId),
    MissingPenaltyGradient(ConstraintId),
    StageOutOfRange(ConstraintId),
    NoConstraints,
    NonPositiveInterval,
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::EmptyHorizon => write!(f, "horizon must be at least 1"),
            SpecViolation::ZeroDimension(what) => write!(f, "{what} dimension must be positive"),
            SpecViolation::DimensionMismatch { what, expected, got } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, got {got}")
            }
            SpecViolation::InvalidBounds { input } => write!(f, "input `{input}` has lo > hi"),
            SpecViolation::DuplicateConstraintId(id) => write!(f, "duplicate constraint id `{id}`"),
            SpecViolation::MissingPenaltyGradient(id) => {
                write!(f, "soft constraint `{id}`: missing gradient")
            }
            SpecViolation::StageOutOfRange(id) => {
                write!(f, "constraint `{id}`: stage range outside 0..=H")
            }
            SpecViolation::NoConstraints => {
                write!(f, "no constraints and problem not declared unconstrained")
            }
            SpecViolation::NonPositiveInterval => write!(f, "sampling interval must be positive"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<SpecViolation>,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

/// Report every structural problem with `spec`; an empty report means usable.
pub fn validate_spec(spec: &OcpSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let (nx, nu, nd) = (spec.state_dim(), spec.input_dim(), spec.disturbance_dim());
    if spec.horizon == 0 {
        violations.push(SpecViolation::EmptyHorizon);
    }
    for (what, n) in [("state", nx), ("input", nu), ("disturbance", nd)] {
        if n == 0 {
            violations.push(SpecViolation::ZeroDimension(what));
        }
    }
    if !(spec.sampling_interval_minutes > 0.0) {
        violations.push(SpecViolation::NonPositiveInterval);
    }
    let mut check_len = |what: &str, expected: usize, got: usize| {
        if expected != got {
            violations.push(SpecViolation::DimensionMismatch {
                what: what.to_string(),
                expected,
                got,
            });
        }
    };
    check_len("input_bounds", nu, spec.input_bounds.len());
    check_len("input_rest", nu, spec.input_rest.len());
    check_len("disturbance_reference", nd, spec.disturbance_reference.len());
    check_len("state_scale", nx, spec.state_scale.len());
    if nx > 0 && nu > 0 && nd > 0 {
        let next = (spec.dynamics)(&vec![0.0; nx], &vec![0.0; nu], &vec![0.0; nd]);
        check_len("dynamics output", nx, next.len());
    }
    for (i, &(lo, hi)) in spec.input_bounds.iter().enumerate() {
        if !(lo <= hi) {
            violations.push(SpecViolation::InvalidBounds {
                input: spec.input_names.get(i).cloned().unwrap_or_default(),
            });
        }
    }
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for (def, stages) in spec.all_constraints() {
        if !seen.insert(def.id.clone()) {
            duplicates.insert(def.id.clone());
        }
        if stages.first > stages.last || stages.last > spec.horizon {
            violations.push(SpecViolation::StageOutOfRange(def.id.clone()));
        }
        if def.kind == ConstraintKind::SoftPenalty && def.penalty_gradient.is_none() {
            violations.push(SpecViolation::MissingPenaltyGradient(def.id.clone()));
        }
    }
    violations.extend(duplicates.into_iter().map(SpecViolation::DuplicateConstraintId));
    if !spec.unconstrained
        && spec.path_constraints.is_empty()
        && spec.terminal_constraints.is_empty()
    {
        violations.push(SpecViolation::NoConstraints);
    }
    ValidationReport { violations }
}

/// Measured state and disturbance forecast at one decision instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub measured_state: Vec<f64>,
    /// `H` rows of `disturbance_dim` entries.
    pub forecast: Vec<Vec<f64>>,
    #[serde(default)]
    pub forecast_units: Vec<String>,
    #[serde(default)]
    pub timestamp: String,
}

impl DecisionContext {
    pub fn new(measured_state: Vec<f64>, forecast: Vec<Vec<f64>>) -> Self {
        Self {
            measured_state,
            forecast,
            forecast_units: Vec::new(),
            timestamp: String::new(),
        }
    }

    pub fn with_timestamp(mut self, timestamp: impl Into<String>) -> Self {
        self.timestamp = timestamp.into();
        self
    }

    pub fn with_units(mut self, units: Vec<String>) -> Self {
        self.forecast_units = units;
        self
    }

    /// Check the context against `spec`: `H` complete forecast rows and a
    /// full measured state.
    pub fn check(&self, spec: &OcpSpec) -> Result<(), OcpError> {
        if self.measured_state.len() != spec.state_dim() {
            return Err(OcpError::DimensionMismatch {
                what: "measured state".into(),
                expected: spec.state_dim(),
                got: self.measured_state.len(),
            });
        }
        if self.forecast.len() != spec.horizon {
            return Err(OcpError::DimensionMismatch {
                what: "forecast rows".into(),
                expected: spec.horizon,
                got: self.forecast.len(),
            });
        }
        for row in &self.forecast {
            if row.len() != spec.disturbance_dim() {
                return Err(OcpError::DimensionMismatch {
                    what: "forecast columns".into(),
                    expected: spec.disturbance_dim(),
                    got: row.len(),
                });
            }
        }
        let finite = self
            .measured_state
            .iter()
            .chain(self.forecast.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(OcpError::InvalidContext("missing or non-finite entries".into()));
        }
        Ok(())
    }

    /// Disturbance row used at stage `k`; the terminal stage reuses the last row.
    pub fn disturbance_at(&self, k: usize) -> &[f64] {
        &self.forecast[k.min(self.forecast.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Multiplier of one hard constraint at one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMultiplier {
    pub id: ConstraintId,
    pub stage: usize,
    pub value: f64,
}

/// Result of a solve: trajectories, per-stage multipliers of hard
/// constraints and the optimal cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    /// `H` rows of `input_dim`.
    pub inputs: Vec<Vec<f64>>,
    /// `H + 1` rows of `state_dim`, starting at the measured state.
    pub states: Vec<Vec<f64>>,
    /// One entry for every hard constraint at every stage in its range,
    /// ordered by declaration then stage.
    pub multipliers: Vec<StageMultiplier>,
    pub total_cost: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl OcpSolution {
    pub fn multiplier(&self, id: &ConstraintId, stage: usize) -> Option<f64> {
        self.multipliers
            .iter()
            .find(|m| &m.id == id && m.stage == stage)
            .map(|m| m.value)
    }

    /// Largest multiplier of constraint `id` over its stages.
    pub fn max_multiplier(&self, id: &ConstraintId) -> f64 {
        self.multipliers
            .iter()
            .filter(|m| &m.id == id)
            .map(|m| m.value)
            .fold(0.0, f64::max)
    }

    pub fn first_input(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

/// Iterate the dynamics from `x0` under `inputs` and `disturbances`.
pub fn rollout(
    spec: &OcpSpec,
    x0: &[f64],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, OcpError> {
    let mismatch = |what: &str, expected: usize, got: usize| OcpError::DimensionMismatch {
        what: what.to_string(),
        expected,
        got,
    };
    if x0.len() != spec.state_dim() {
        return Err(mismatch("initial state", spec.state_dim(), x0.len()));
    }
    if inputs.len() != spec.horizon {
        return Err(mismatch("input trajectory", spec.horizon, inputs.len()));
    }
    if disturbances.len() != spec.horizon {
        return Err(mismatch("disturbance trajectory", spec.horizon, disturbances.len()));
    }
    let mut states = Vec::with_capacity(spec.horizon + 1);
    states.push(x0.to_vec());
    for (u, d) in inputs.iter().zip(disturbances) {
        if u.len() != spec.input_dim() {
            return Err(mismatch("input", spec.input_dim(), u.len()));
        }
        if d.len() != spec.disturbance_dim() {
            return Err(mismatch("disturbance", spec.disturbance_dim(), d.len()));
        }
        let next = (spec.dynamics)(states.last().expect("non-empty"), u, d);
        if next.len() != spec.state_dim() {
            return Err(mismatch("dynamics output", spec.state_dim(), next.len()));
        }
        states.push(next);
    }
    Ok(states)
}

/// Objective value of a trajectory: stage costs, soft penalties and terminal cost.
pub fn trajectory_cost(
    spec: &OcpSpec,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> f64 {
    let h = spec.horizon;
    let zero_u = vec![0.0; spec.input_dim()];
    let mut cost = 0.0;
    for k in 0..h {
        cost += (spec.stage_cost)(&states[k], &inputs[k]);
    }
    cost += (spec.terminal_cost)(&states[h]);
    for (def, stages) in spec.all_constraints() {
        if def.kind != ConstraintKind::SoftPenalty {
            continue;
        }
        for k in stages.iter() {
            let u = if k < h { &inputs[k] } else { &zero_u };
            cost += def.penalty(&states[k], u, &disturbances[k.min(h - 1)]);
        }
    }
    cost
}

/// Sum of one soft constraint's penalty along a trajectory.
pub fn trajectory_penalty(
    spec: &OcpSpec,
    def: &ConstraintDef,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> f64 {
    let h = spec.horizon;
    let zero_u = vec![0.0; spec.input_dim()];
    let stages = if spec.terminal_constraints.iter().any(|c| c.id == def.id) {
        StageRange::single(h)
    } else {
        def.stages
    };
    stages
        .iter()
        .map(|k| {
            let u = if k < h { &inputs[k] } else { &zero_u };
            def.penalty(&states[k], u, &disturbances[k.min(h - 1)])
        })
        .sum()
}

/// Largest signed violation of `def` along a trajectory, with its stage.
pub fn max_violation(
    spec: &OcpSpec,
    def: &ConstraintDef,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> (f64, usize) {
    let h = spec.horizon;
    let zero_u = vec![0.0; spec.input_dim()];
    let stages = if spec.terminal_constraints.iter().any(|c| c.id == def.id) {
        StageRange::single(h)
    } else {
        def.stages
    };
    stages
        .iter()
        .map(|k| {
            let u = if k < h { &inputs[k] } else { &zero_u };
            (def.violation(&states[k], u, &disturbances[k.min(h - 1)]), k)
        })
        .fold((f64::NEG_INFINITY, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator(h: usize) -> OcpSpec {
        OcpSpec::new(
            h,
            1,
            1,
            1,
            Arc::new(|x: &[f64], u: &[f64], _d: &[f64]| vec![x[0] + u[0]]),
            Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0]),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .declared_unconstrained()
    }

    #[test]
    fn rollout_of_integrator_is_closed_form() {
        let spec = integrator(3);
        let states = rollout(&spec, &[0.0], &vec![vec![1.0]; 3], &vec![vec![0.0]; 3]).unwrap();
        assert_eq!(states, vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
    }

    #[test]
    fn rollout_rejects_short_trajectories() {
        let spec = integrator(3);
        let err = rollout(&spec, &[0.0], &vec![vec![1.0]; 2], &vec![vec![0.0]; 3]).unwrap_err();
        assert!(matches!(err, OcpError::DimensionMismatch { .. }));
    }

    #[test]
    fn stable_linear_rollout_matches_matrix_powers() {
        // x+ = A x with A = [[0.9, 0.2], [-0.1, 0.7]]; compare against A^k x0
        // computed by repeated matrix products.
        let a = [[0.9, 0.2], [-0.1, 0.7]];
        let spec = OcpSpec::new(
            25,
            2,
            1,
            1,
            Arc::new(move |x: &[f64], _u: &[f64], _d: &[f64]| {
                vec![a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
            }),
            Arc::new(|_x: &[f64], _u: &[f64]| 0.0),
            Arc::new(|_x: &[f64]| 0.0),
        )
        .declared_unconstrained();
        let x0 = [3.0, -2.0];
        let states = rollout(&spec, &x0, &vec![vec![0.0]; 25], &vec![vec![0.0]; 25]).unwrap();
        let mut power = nalgebra::Matrix2::identity();
        let am = nalgebra::Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
        let x0v = nalgebra::Vector2::new(x0[0], x0[1]);
        for (k, state) in states.iter().enumerate() {
            let expected = power * x0v;
            assert!((state[0] - expected[0]).abs() < 1e-12, "k={k}");
            assert!((state[1] - expected[1]).abs() < 1e-12, "k={k}");
            power *= am;
        }
        let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&states[25]) < 0.2 * norm(&states[0]));
    }

    #[test]
    fn duplicate_ids_are_reported_once() {
        let f: ConstraintFn = Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| x[0]);
        let spec = integrator(2)
            .with_constraint(ConstraintDef::hard("T_min", BoundSense::Lower, 0.0, StageRange::new(1, 2), f.clone()))
            .with_constraint(ConstraintDef::hard("T_min", BoundSense::Upper, 5.0, StageRange::new(1, 2), f));
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert!(report.messages()[0].contains("T_min"));
    }

    #[test]
    fn soft_constraint_without_gradient_is_reported() {
        let f: ConstraintFn = Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| x[0]);
        let spec = integrator(2).with_constraint(ConstraintDef::soft(
            "band",
            BoundSense::Lower,
            1.0,
            1.0,
            StageRange::new(1, 2),
            f,
        ));
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert!(report.messages()[0].contains("missing gradient"));
    }

    #[test]
    fn undeclared_unconstrained_problem_is_flagged() {
        let mut spec = integrator(1);
        spec.unconstrained = false;
        assert_eq!(validate_spec(&spec).violations, vec![SpecViolation::NoConstraints]);
    }

    #[test]
    fn bad_bounds_and_dimensions_are_flagged() {
        let spec = integrator(0).with_input_bounds(vec![(1.0, 0.0), (0.0, 1.0)]);
        let report = validate_spec(&spec);
        assert!(report.violations.contains(&SpecViolation::EmptyHorizon));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, SpecViolation::DimensionMismatch { what, .. } if what == "input_bounds")));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, SpecViolation::InvalidBounds { .. })));
    }

    #[test]
    fn widening_moves_bound_to_infeasible_side() {
        let f: ConstraintFn = Arc::new(|x: &[f64], _u: &[f64], _d: &[f64]| x[0]);
        let lower = ConstraintDef::hard("lo", BoundSense::Lower, 18.0, StageRange::single(1), f.clone());
        let upper = ConstraintDef::hard("hi", BoundSense::Upper, 26.0, StageRange::single(1), f);
        assert_eq!(lower.widened(0.5).bound, 17.5);
        assert_eq!(upper.widened(0.5).bound, 26.5);
        assert!(lower.violation(&[17.8], &[], &[]) > 0.0);
        assert!(lower.widened(0.5).violation(&[17.8], &[], &[]) < 0.0);
    }

    #[test]
    fn state_bound_gradient_matches_finite_difference() {
        let def = ConstraintDef::state_bound(
            "T_comfort_lo",
            ConstraintKind::SoftPenalty,
            0,
            2,
            BoundSense::Lower,
            18.0,
            0.7,
            StageRange::new(1, 4),
        );
        let grad = def.penalty_gradient.as_ref().unwrap();
        for &t in &[16.0, 17.5, 19.0] {
            let x = [t, 3.0];
            let h = 1e-6;
            let fd = (def.penalty(&[t + h, 3.0], &[], &[]) - def.penalty(&[t - h, 3.0], &[], &[]))
                / (2.0 * h);
            assert!((grad(&x)[0] - fd).abs() < 1e-6, "t={t}");
            assert_eq!(grad(&x)[1], 0.0);
        }
    }
}
