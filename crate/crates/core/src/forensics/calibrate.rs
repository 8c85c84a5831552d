//! ROC sweep for multiplier thresholds and the cost-threshold formulas.
//!
//! Calibration data documents are TOML:
//!
//! ```toml
//! [[multipliers]]
//! family = "temperature"
//! lambda = 1.3e-4
//! active = true
//!
//! [[trials]]
//! mean_stage_cost = 0.12
//! delta_j = -0.02
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CostThresholds, ForensicsError};

pub const MIN_COST_TRIALS: usize = 100;
const TAU_COST_FRACTION: f64 = 0.05;
const EPS_J_FRACTION: f64 = 0.02;
const COST_FLOOR: f64 = 1e-9;
/// Candidate thresholds: ten per decade over `[1e-16, 1e2]`.
const DECADES: (i32, i32) = (-16, 2);
const PER_DECADE: i32 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMultiplier {
    pub family: String,
    pub lambda: f64,
    pub active: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTrial {
    pub mean_stage_cost: f64,
    pub delta_j: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationData {
    #[serde(default)]
    pub multipliers: Vec<LabeledMultiplier>,
    #[serde(default)]
    pub trials: Vec<CostTrial>,
}

impl CalibrationData {
    pub fn parse(text: &str) -> Result<Self, ForensicsError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ForensicsError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ForensicsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ForensicsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Multipliers grouped by family, families sorted.
    pub fn by_family(&self) -> BTreeMap<String, Vec<LabeledMultiplier>> {
        let mut out: BTreeMap<String, Vec<LabeledMultiplier>> = BTreeMap::new();
        for m in &self.multipliers {
            out.entry(m.family.clone()).or_default().push(m.clone());
        }
        out
    }
}

/// Fractions of the data used to pick thresholds and to score them; the
/// remainder is left untouched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub calibration: f64,
    pub heldout: f64,
    pub remainder: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { calibration: 0.125, heldout: 0.125, remainder: 0.75 }
    }
}

impl SplitFractions {
    pub fn new(calibration: f64, heldout: f64) -> Result<Self, ForensicsError> {
        let s = Self { calibration, heldout, remainder: 1.0 - calibration - heldout };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ForensicsError> {
        let parts = [self.calibration, self.heldout, self.remainder.max(0.0)];
        if self.calibration + self.heldout > 1.0 + 1e-9 {
            return Err(ForensicsError::InvalidSplit(format!("fractions sum to {} > 1", self.calibration + self.heldout)));
        }
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ForensicsError::InvalidSplit("fractions must lie in [0, 1]".into()));
        }
        if self.calibration <= 0.0 || self.heldout <= 0.0 {
            return Err(ForensicsError::InvalidSplit("calibration and held-out fractions must be positive".into()));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(ForensicsError::InvalidSplit(format!("fractions sum to {} > 1", parts.iter().sum::<f64>())));
        }
        Ok(())
    }
}

/// Disjoint seeded calibration and held-out index sets.
pub fn split_indices(n: usize, fractions: &SplitFractions, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ForensicsError> {
    fractions.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let nc = (fractions.calibration * n as f64).round() as usize;
    let nh = ((fractions.heldout * n as f64).round() as usize).min(n - nc.min(n));
    let heldout = idx[nc..nc + nh].to_vec();
    idx.truncate(nc);
    Ok((idx, heldout))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktCalibration {
    pub family: String,
    pub tau: f64,
    pub calibration_balanced_accuracy: f64,
    pub heldout_accuracy: f64,
    pub n_calibration: usize,
    pub n_heldout: usize,
}

fn candidates() -> Vec<f64> {
    (DECADES.0 * PER_DECADE..=DECADES.1 * PER_DECADE)
        .map(|i| 10f64.powf(i as f64 / PER_DECADE as f64))
        .collect()
}

fn balanced_accuracy(samples: &[&LabeledMultiplier], tau: f64) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let predicted = s.lambda > tau;
        if s.active {
            p += 1;
            tp += predicted as usize;
        } else {
            n += 1;
            tn += (!predicted) as usize;
        }
    }
    0.5 * (tp as f64 / p as f64 + tn as f64 / n as f64)
}

fn accuracy(samples: &[&LabeledMultiplier], tau: f64) -> f64 {
    let correct = samples.iter().filter(|s| (s.lambda > tau) == s.active).count();
    correct as f64 / samples.len() as f64
}

/// Threshold maximizing balanced accuracy on the calibration split, scored
/// on the disjoint held-out split. Ties pick the middle of the best run.
pub fn calibrate_kkt_thresholds(
    samples: &[LabeledMultiplier],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<KktCalibration, ForensicsError> {
    let (cal_idx, held_idx) = split_indices(samples.len(), fractions, seed)?;
    let cal: Vec<&LabeledMultiplier> = cal_idx.iter().map(|&i| &samples[i]).collect();
    let held: Vec<&LabeledMultiplier> = held_idx.iter().map(|&i| &samples[i]).collect();
    let has_both = |s: &[&LabeledMultiplier]| s.iter().any(|m| m.active) && s.iter().any(|m| !m.active);
    if !has_both(&cal) || held.is_empty() {
        return Err(ForensicsError::SingleClass);
    }
    let cands = candidates();
    let scores: Vec<f64> = cands.iter().map(|&t| balanced_accuracy(&cal, t)).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hits: Vec<usize> = (0..cands.len()).filter(|&i| scores[i] >= best - 1e-12).collect();
    // Middle of the first contiguous run of best candidates.
    let mut run_end = hits[0];
    while hits.contains(&(run_end + 1)) {
        run_end += 1;
    }
    let tau = cands[(hits[0] + run_end) / 2];
    Ok(KktCalibration {
        family: samples.first().map(|s| s.family.clone()).unwrap_or_default(),
        tau,
        calibration_balanced_accuracy: best,
        heldout_accuracy: accuracy(&held, tau),
        n_calibration: cal.len(),
        n_heldout: held.len(),
    })
}

/// `tau_cost = 0.05 * mean stage cost`, `eps_j = 0.02 * std(delta J)`,
/// each floored at `1e-9`.
pub fn calibrate_cost_thresholds(trials: &[CostTrial]) -> Result<CostThresholds, ForensicsError> {
    if trials.len() < MIN_COST_TRIALS {
        return Err(ForensicsError::TooFewTrials { have: trials.len(), need: MIN_COST_TRIALS });
    }
    let n = trials.len() as f64;
    let mean_cost = trials.iter().map(|t| t.mean_stage_cost).sum::<f64>() / n;
    let mean_dj = trials.iter().map(|t| t.delta_j).sum::<f64>() / n;
    let sd_dj = (trials.iter().map(|t| (t.delta_j - mean_dj).powi(2)).sum::<f64>() / n).sqrt();
    let floor = |v: f64| if v > COST_FLOOR { v } else { COST_FLOOR };
    CostThresholds::new(floor(TAU_COST_FRACTION * mean_cost), floor(EPS_J_FRACTION * sd_dj))
}

/// Labeled multipliers: actives log-normal around `1e-4`, inactives around `1e-10`.
pub fn synth_bimodal_multipliers(n: usize, family: &str, seed: u64) -> Vec<LabeledMultiplier> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = Normal::<f64>::new(-4.0, 0.8).expect("valid normal");
    let inactive = Normal::<f64>::new(-10.0, 1.0).expect("valid normal");
    (0..n)
        .map(|i| {
            let is_active = i % 2 == 0;
            let exp: f64 = if is_active { active.sample(&mut rng) } else { inactive.sample(&mut rng) };
            LabeledMultiplier { family: family.to_string(), lambda: 10f64.powf(exp), active: is_active }
        })
        .collect()
}

/// Counterfactual trials with mean stage cost near 0.12 and `delta J` spread 0.03.
pub fn synth_cost_trials(n: usize, seed: u64) -> Vec<CostTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = Normal::<f64>::new(0.12, 0.01).expect("valid normal");
    let dj = Normal::<f64>::new(-0.02, 0.03).expect("valid normal");
    (0..n)
        .map(|_| CostTrial {
            mean_stage_cost: cost.sample(&mut rng).max(0.0_f64),
            delta_j: dj.sample(&mut rng),
        })
        .collect()
}

/// Text table of per-family calibration results and the cost thresholds.
pub fn calibration_report(results: &[KktCalibration], costs: &CostThresholds) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "family\ttau\tcal_balanced_acc\theldout_acc\tn_cal\tn_heldout");
    for r in results {
        let _ = writeln!(
            s,
            "{}\t{:.4e}\t{:.4}\t{:.4}\t{}\t{}",
            r.family, r.tau, r.calibration_balanced_accuracy, r.heldout_accuracy, r.n_calibration, r.n_heldout
        );
    }
    let _ = writeln!(s, "tau_cost\t{:.4e}", costs.tau_cost);
    let _ = writeln!(s, "eps_j\t{:.4e}", costs.eps_j);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_multipliers_calibrate_accurately() {
        let data = synth_bimodal_multipliers(2000, "temperature", 11);
        let cal = calibrate_kkt_thresholds(&data, &SplitFractions::default(), 5).unwrap();
        assert!(cal.heldout_accuracy >= 0.96, "{cal:?}");
        assert!(cal.tau > 1e-9 && cal.tau < 1e-5);
        assert_eq!(cal.n_calibration, 250);
        assert_eq!(cal.n_heldout, 250);
    }

    #[test]
    fn separated_classes_are_perfect() {
        let data: Vec<LabeledMultiplier> = (0..100)
            .map(|i| LabeledMultiplier {
                family: "power".into(),
                lambda: if i % 2 == 0 { 1e-3 } else { 1e-12 },
                active: i % 2 == 0,
            })
            .collect();
        let cal = calibrate_kkt_thresholds(&data, &SplitFractions::new(0.5, 0.5).unwrap(), 1).unwrap();
        assert_eq!(cal.heldout_accuracy, 1.0);
        assert_eq!(cal.calibration_balanced_accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<LabeledMultiplier> =
            (0..50).map(|_| LabeledMultiplier { family: "x".into(), lambda: 1.0, active: true }).collect();
        assert!(matches!(
            calibrate_kkt_thresholds(&data, &SplitFractions::default(), 1),
            Err(ForensicsError::SingleClass)
        ));
    }

    #[test]
    fn splits_are_disjoint_and_validated() {
        let (a, b) = split_indices(1000, &SplitFractions::default(), 3).unwrap();
        assert_eq!((a.len(), b.len()), (125, 125));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert!(SplitFractions::new(0.7, 0.6).is_err());
        let bad = SplitFractions { calibration: 0.5, heldout: 0.5, remainder: 0.5 };
        assert!(bad.validate().is_err());
    }

    fn trials(costs: &[f64], djs: &[f64]) -> Vec<CostTrial> {
        (0..MIN_COST_TRIALS)
            .map(|i| CostTrial { mean_stage_cost: costs[i % costs.len()], delta_j: djs[i % djs.len()] })
            .collect()
    }

    #[test]
    fn cost_thresholds_follow_the_formulas() {
        // Mean stage cost 0.12, delta J = +-0.03 alternating: sigma 0.03.
        let t = calibrate_cost_thresholds(&trials(&[0.10, 0.14], &[0.03, -0.03])).unwrap();
        assert!((t.tau_cost - 0.006).abs() < 1e-15);
        assert!((t.eps_j - 0.0006).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cost_deltas_hit_the_floor() {
        let t = calibrate_cost_thresholds(&trials(&[0.12], &[0.0])).unwrap();
        assert_eq!(t.eps_j, 1e-9);
        assert!(matches!(
            calibrate_cost_thresholds(&trials(&[0.12], &[0.0])[..10]),
            Err(ForensicsError::TooFewTrials { .. })
        ));
    }

    #[test]
    fn calibration_document_round_trips() {
        let data = CalibrationData {
            multipliers: synth_bimodal_multipliers(6, "temperature", 2),
            trials: synth_cost_trials(3, 2),
        };
        let back = CalibrationData::parse(&data.to_toml().unwrap()).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.by_family().len(), 1);
    }
}
