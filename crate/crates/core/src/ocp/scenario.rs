//! Scenario documents: measured states, forecasts and recent history for
//! one or more decision instants.
//!
//! ```toml
//! format = "mpcx-scenario/1"
//! id = "cold-night"
//! model = "greenhouse"
//! horizon = 16
//! sampling_interval_minutes = 15.0
//!
//! [units]
//! states = ["degC", "ppm", "%", "kg/m2"]
//! disturbances = ["degC", "ppm", "%", "W/m2"]
//!
//! [[decisions]]
//! timestamp = "2024-01-15T22:00:00"
//! x_meas = [19.0, 600.0, 75.0, 1.2]
//! forecast = [[10.0, 410.0, 70.0, 0.0], ...]
//!
//! [decisions.history]
//! variables = ["T_out", "u_Qh"]
//! rows = [[...], ...]          # oldest first, last row is the decision instant
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DecisionContext;

pub const SCENARIO_FORMAT: &str = "mpcx-scenario/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported scenario format `{0}`")]
    Format(String),
    #[error("scenario `{id}`: {message}")]
    Invalid { id: String, message: String },
}

/// Recent samples of observed variables, oldest first; the last row is
/// the decision instant itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub variables: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl HistoryWindow {
    /// Value of `variable` `lag` samples before the decision instant.
    pub fn lagged(&self, variable: &str, lag: usize) -> Option<f64> {
        let col = self.variables.iter().position(|v| v == variable)?;
        let idx = self.rows.len().checked_sub(1 + lag)?;
        self.rows.get(idx).map(|row| row[col])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    #[serde(default)]
    pub timestamp: String,
    pub x_meas: Vec<f64>,
    pub forecast: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<HistoryWindow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitsBlock {
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub disturbances: Vec<String>,
}

/// On-disk form of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub format: String,
    pub id: String,
    #[serde(default = "default_model")]
    pub model: String,
    pub horizon: usize,
    pub sampling_interval_minutes: f64,
    #[serde(default)]
    pub units: UnitsBlock,
    /// Free-form numeric settings (e.g. initial biomass notes).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, f64>,
    pub decisions: Vec<DecisionEntry>,
}

fn default_model() -> String {
    "greenhouse".to_string()
}

/// A validated scenario: one [`DecisionContext`] per decision instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub model: String,
    pub horizon: usize,
    pub sampling_interval_minutes: f64,
    pub contexts: Vec<DecisionContext>,
    pub histories: Vec<Option<HistoryWindow>>,
    pub meta: BTreeMap<String, f64>,
}

impl Scenario {
    pub fn single(id: impl Into<String>, model: impl Into<String>, ctx: DecisionContext, history: Option<HistoryWindow>, sampling_interval_minutes: f64) -> Self {
        Self {
            id: id.into(),
            model: model.into(),
            horizon: ctx.forecast.len(),
            sampling_interval_minutes,
            contexts: vec![ctx],
            histories: vec![history],
            meta: BTreeMap::new(),
        }
    }

    pub fn from_document(doc: ScenarioDocument) -> Result<Self, ScenarioError> {
        if doc.format != SCENARIO_FORMAT {
            return Err(ScenarioError::Format(doc.format));
        }
        let invalid = |message: String| ScenarioError::Invalid {
            id: doc.id.clone(),
            message,
        };
        if doc.horizon == 0 {
            return Err(invalid("horizon must be at least 1".into()));
        }
        if doc.decisions.is_empty() {
            return Err(invalid("no decisions".into()));
        }
        let mut contexts = Vec::with_capacity(doc.decisions.len());
        let mut histories = Vec::with_capacity(doc.decisions.len());
        for (i, d) in doc.decisions.iter().enumerate() {
            if d.forecast.len() != doc.horizon {
                return Err(invalid(format!(
                    "decision {i}: forecast has {} rows, horizon is {}",
                    d.forecast.len(),
                    doc.horizon
                )));
            }
            let width = d.forecast[0].len();
            if d.forecast.iter().any(|row| row.len() != width) {
                return Err(invalid(format!("decision {i}: ragged forecast")));
            }
            if !doc.units.disturbances.is_empty() && doc.units.disturbances.len() != width {
                return Err(invalid(format!(
                    "decision {i}: {} disturbance units declared for {width} columns",
                    doc.units.disturbances.len()
                )));
            }
            if let Some(h) = &d.history {
                if h.rows.iter().any(|r| r.len() != h.variables.len()) {
                    return Err(invalid(format!("decision {i}: ragged history")));
                }
            }
            contexts.push(
                DecisionContext::new(d.x_meas.clone(), d.forecast.clone())
                    .with_timestamp(d.timestamp.clone())
                    .with_units(doc.units.disturbances.clone()),
            );
            histories.push(d.history.clone());
        }
        Ok(Self {
            id: doc.id,
            model: doc.model,
            horizon: doc.horizon,
            sampling_interval_minutes: doc.sampling_interval_minutes,
            contexts,
            histories,
            meta: doc.meta,
        })
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            format: SCENARIO_FORMAT.to_string(),
            id: self.id.clone(),
            model: self.model.clone(),
            horizon: self.horizon,
            sampling_interval_minutes: self.sampling_interval_minutes,
            units: UnitsBlock {
                states: Vec::new(),
                disturbances: self
                    .contexts
                    .first()
                    .map(|c| c.forecast_units.clone())
                    .unwrap_or_default(),
            },
            meta: self.meta.clone(),
            decisions: self
                .contexts
                .iter()
                .zip(&self.histories)
                .map(|(c, h)| DecisionEntry {
                    timestamp: c.timestamp.clone(),
                    x_meas: c.measured_state.clone(),
                    forecast: c.forecast.clone(),
                    history: h.clone(),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_document(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(&self.to_document())?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}
