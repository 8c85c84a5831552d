//! Time-lagged causal discovery, lag baselines and online deviation checks.

mod ingest;
mod pcmci;

pub use ingest::{fill_gaps, load_time_series, read_time_series, write_time_series, MAX_GAP, MAX_MISSING_FRACTION};
pub use pcmci::{
    benjamini_hochberg, fit_pcmci, partial_correlation, CiResult, DEFAULT_ALPHA, DEFAULT_TAU_MAX, MAX_CONDITIONS,
    MIN_EXTRA_SAMPLES,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocp::HistoryWindow;

#[derive(Debug, Error)]
pub enum CausalityError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("malformed header: column {index} (`{name}`) {reason}")]
    Header { index: usize, name: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("lag {lag} of `{variable}` exceeds the available history")]
    LagOutOfRange { variable: String, lag: usize },
    #[error("graph parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("graph serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// Regularly sampled series, one row per instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    pub variables: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub sampling_interval_minutes: f64,
    /// Series dropped during ingestion.
    pub rejected: Vec<String>,
}

impl TimeSeriesTable {
    pub fn new(variables: Vec<String>, samples: Vec<Vec<f64>>, sampling_interval_minutes: f64) -> Result<Self, CausalityError> {
        if let Some((t, _)) = samples.iter().enumerate().find(|(_, r)| r.len() != variables.len()) {
            return Err(CausalityError::Ingest(format!("row {t} has the wrong width")));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CausalityError::Ingest("non-finite sample".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = variables.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(CausalityError::Ingest(format!("duplicate variable `{dup}`")));
        }
        if !(sampling_interval_minutes > 0.0) {
            return Err(CausalityError::Ingest("sampling interval must be positive".into()));
        }
        Ok(Self {
            variables,
            samples,
            sampling_interval_minutes,
            rejected: Vec::new(),
        })
    }

    /// Build from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, sampling_interval_minutes: f64) -> Result<Self, CausalityError> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(CausalityError::Ingest("columns differ in length".into()));
        }
        let samples = (0..n).map(|t| columns.iter().map(|c| c.1[t]).collect()).collect();
        Self::new(columns.into_iter().map(|c| c.0).collect(), samples, sampling_interval_minutes)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[j]).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.variables.iter().position(|v| v == name).map(|j| self.column_at(j))
    }

    /// The last `len` rows as a history window.
    pub fn tail_window(&self, len: usize) -> HistoryWindow {
        let start = self.samples.len().saturating_sub(len);
        HistoryWindow {
            variables: self.variables.clone(),
            rows: self.samples[start..].to_vec(),
        }
    }

    /// Rows `..=end` as a history window ending at `end`.
    pub fn window_ending_at(&self, end: usize, len: usize) -> HistoryWindow {
        let start = (end + 1).saturating_sub(len);
        HistoryWindow {
            variables: self.variables.clone(),
            rows: self.samples[start..=end].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaggedEdge {
    pub source: String,
    pub target: String,
    pub lag: usize,
    /// Unadjusted MCI p-value.
    pub p_value: f64,
    /// Benjamini-Hochberg adjusted p-value over all tested links.
    pub q_value: f64,
    pub partial_correlation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaggedCausalGraph {
    pub variables: Vec<String>,
    pub tau_max: usize,
    pub alpha: f64,
    pub edges: Vec<LaggedEdge>,
    /// Constant series left out of discovery.
    pub excluded: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parent {
    pub source: String,
    pub lag: usize,
    pub p_value: f64,
    pub partial_correlation: f64,
}

/// All edges into `target`, most significant first.
pub fn query_parents(g: &LaggedCausalGraph, target: &str) -> Result<Vec<Parent>, CausalityError> {
    if !g.variables.iter().any(|v| v == target) {
        return Err(CausalityError::UnknownVariable(target.to_string()));
    }
    let mut out: Vec<Parent> = g
        .edges
        .iter()
        .filter(|e| e.target == target)
        .map(|e| Parent {
            source: e.source.clone(),
            lag: e.lag,
            p_value: e.p_value,
            partial_correlation: e.partial_correlation,
        })
        .collect();
    out.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then_with(|| a.source.cmp(&b.source))
            .then(a.lag.cmp(&b.lag))
    });
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    name: String,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    src: String,
    dst: String,
    sign: String,
    lag: usize,
    p_value: f64,
    q_value: f64,
    partial_correlation: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    tau_max: usize,
    alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    excluded: Vec<String>,
    #[serde(default)]
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
}

impl LaggedCausalGraph {
    /// Serialize in the knowledge-graph document style with lag and p fields.
    pub fn to_toml(&self) -> Result<String, CausalityError> {
        let doc = GraphDoc {
            tau_max: self.tau_max,
            alpha: self.alpha,
            excluded: self.excluded.clone(),
            nodes: self.variables.iter().map(|n| NodeDoc { name: n.clone() }).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    src: e.source.clone(),
                    dst: e.target.clone(),
                    sign: if e.partial_correlation >= 0.0 { "+" } else { "-" }.to_string(),
                    lag: e.lag,
                    p_value: e.p_value,
                    q_value: e.q_value,
                    partial_correlation: e.partial_correlation,
                })
                .collect(),
        };
        Ok(toml::to_string(&doc)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, CausalityError> {
        let doc: GraphDoc = toml::from_str(text)?;
        let variables: Vec<String> = doc.nodes.into_iter().map(|n| n.name).collect();
        let mut edges = Vec::with_capacity(doc.edges.len());
        for e in doc.edges {
            for end in [&e.src, &e.dst] {
                if !variables.contains(end) {
                    return Err(CausalityError::InvalidGraph(format!("edge references unknown node `{end}`")));
                }
            }
            if e.lag == 0 || e.lag > doc.tau_max {
                return Err(CausalityError::InvalidGraph(format!("edge {} -> {}: lag {} outside 1..={}", e.src, e.dst, e.lag, doc.tau_max)));
            }
            edges.push(LaggedEdge {
                source: e.src,
                target: e.dst,
                lag: e.lag,
                p_value: e.p_value,
                q_value: e.q_value,
                partial_correlation: e.partial_correlation,
            });
        }
        Ok(Self {
            variables,
            tau_max: doc.tau_max,
            alpha: doc.alpha,
            edges,
            excluded: doc.excluded,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CausalityError> {
        let text = std::fs::read_to_string(path).map_err(|source| CausalityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// Mean and population standard deviation of each variable at each lag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagBaseline {
    pub tau_max: usize,
    /// `stats[var][lag] = (mu, sigma)` for `lag` in `0..=tau_max`.
    pub stats: BTreeMap<String, Vec<(f64, f64)>>,
}

impl LagBaseline {
    pub fn get(&self, variable: &str, lag: usize) -> Option<(f64, f64)> {
        self.stats.get(variable).and_then(|v| v.get(lag)).copied()
    }

    pub fn to_toml(&self) -> Result<String, CausalityError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, CausalityError> {
        Ok(toml::from_str(text)?)
    }
}

/// Baseline over the `N - lag` samples `x(t - lag)`, `t = lag..N`.
pub fn compute_baselines(data: &TimeSeriesTable, tau_max: usize) -> Result<LagBaseline, CausalityError> {
    let n = data.len();
    if n <= tau_max {
        return Err(CausalityError::TooFewSamples { have: n, need: tau_max + 1 });
    }
    let mut stats = BTreeMap::new();
    for (j, name) in data.variables.iter().enumerate() {
        let col = data.column_at(j);
        let per_lag = (0..=tau_max)
            .map(|lag| {
                let window = &col[..n - lag];
                let m = window.len() as f64;
                let mu = window.iter().sum::<f64>() / m;
                let var = window.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
                (mu, var.max(0.0).sqrt())
            })
            .collect();
        stats.insert(name.clone(), per_lag);
    }
    Ok(LagBaseline { tau_max, stats })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationFlag {
    pub source: String,
    pub lag: usize,
    pub value: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Signed; infinite when `sigma` is zero and the value deviates.
    pub z_score: f64,
    pub active: bool,
}

/// Number of standard deviations that marks a parent as active.
pub const DEVIATION_SIGMAS: f64 = 2.0;

pub fn deviation_flags(
    baseline: &LagBaseline,
    history: &HistoryWindow,
    parents: &[Parent],
) -> Result<Vec<DeviationFlag>, CausalityError> {
    parents
        .iter()
        .map(|p| {
            if !history.variables.contains(&p.source) {
                return Err(CausalityError::UnknownVariable(p.source.clone()));
            }
            let value = history.lagged(&p.source, p.lag).ok_or_else(|| CausalityError::LagOutOfRange {
                variable: p.source.clone(),
                lag: p.lag,
            })?;
            let (mu, sigma) = baseline.get(&p.source, p.lag).ok_or_else(|| CausalityError::LagOutOfRange {
                variable: p.source.clone(),
                lag: p.lag,
            })?;
            let dev = value - mu;
            let z_score = if sigma > 0.0 {
                dev / sigma
            } else if dev == 0.0 {
                0.0
            } else {
                dev.signum() * f64::INFINITY
            };
            Ok(DeviationFlag {
                source: p.source.clone(),
                lag: p.lag,
                value,
                mu,
                sigma,
                z_score,
                active: dev.abs() > DEVIATION_SIGMAS * sigma,
            })
        })
        .collect()
}

/// Planted lagged VAR: `X` autoregressive, `Y(t) = 0.6 X(t-2)`,
/// `Z(t) = 0.5 Y(t-1) - 0.4 W(t-3)`, unit Gaussian innovations.
pub struct PlantedVar {
    pub table: TimeSeriesTable,
    /// Cross-variable links `(source, target, lag)` to be recovered.
    pub links: Vec<(String, String, usize)>,
    /// Further true links that count neither as hits nor false positives.
    pub known: Vec<(String, String, usize)>,
}

pub fn synth_planted_var(n: usize, seed: u64) -> PlantedVar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = Normal::new(0.0, 1.0).expect("unit normal");
    let burn = 50;
    let total = n + burn;
    let (mut x, mut y, mut z, mut w) = (vec![0.0; total], vec![0.0; total], vec![0.0; total], vec![0.0; total]);
    for t in 0..total {
        let lag = |v: &[f64], l: usize| if t >= l { v[t - l] } else { 0.0 };
        x[t] = 0.5 * lag(&x, 1) + e.sample(&mut rng);
        w[t] = e.sample(&mut rng);
        y[t] = 0.6 * lag(&x, 2) + e.sample(&mut rng);
        z[t] = 0.5 * lag(&y, 1) - 0.4 * lag(&w, 3) + e.sample(&mut rng);
    }
    let cols = vec![
        ("X".to_string(), x[burn..].to_vec()),
        ("Y".to_string(), y[burn..].to_vec()),
        ("Z".to_string(), z[burn..].to_vec()),
        ("W".to_string(), w[burn..].to_vec()),
    ];
    let s = |a: &str, b: &str, l: usize| (a.to_string(), b.to_string(), l);
    PlantedVar {
        table: TimeSeriesTable::from_columns(cols, 15.0).expect("rectangular"),
        links: vec![s("X", "Y", 2), s("Y", "Z", 1), s("W", "Z", 3)],
        known: vec![s("X", "X", 1)],
    }
}

/// `v` mutually independent white-noise series of length `n`.
pub fn synth_independent(n: usize, v: usize, seed: u64) -> TimeSeriesTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = Normal::new(0.0, 1.0).expect("unit normal");
    let cols = (0..v)
        .map(|j| (format!("N{j}"), (0..n).map(|_| e.sample(&mut rng)).collect()))
        .collect();
    TimeSeriesTable::from_columns(cols, 15.0).expect("rectangular")
}
