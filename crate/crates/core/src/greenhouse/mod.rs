//! Four-state greenhouse climate and crop model.
//!
//! States `[T, C, Hm, B]` (air temperature degC, CO2 ppm, relative humidity %,
//! biomass kg/m2), inputs `[u_V, u_C, u_Qh, u_Qc]` in `[0, 1]`, disturbances
//! `[T_out, C_out, H_out, Q_rad]`.
//!
//! ```text
//! dT/dt  = a_out (T_out - T) + a_vent u_V (T_out - T) + a_rad Q + a_heat u_Qh - a_cool u_Qc
//! dC/dt  = c_leak (C_out - C) + c_vent u_V (C_out - C) + c_inj u_C - c_up phi(Q) psi(C)
//! dHm/dt = h_leak (H_out - Hm) + h_vent u_V (H_out - Hm) + h_tr Q
//! dB/dt  = g_max phi(Q) psi(C)
//! phi(Q) = Q / (Q + K_Q),  psi(C) = C / (C + K_C)
//! ```
//!
//! Rates are per hour; one RK4 step per 15 minute sample.

mod testbed;

pub use testbed::{build_hardconstrained_testbed, testbed_graph, TestbedKind};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::kg::{ConditionRegistry, EdgeSign, NodeRole, SignedKnowledgeGraph};
use crate::ocp::{
    BoundSense, ChannelReference, ConstraintDef, ConstraintKind, OcpSpec, StageRange,
};
use crate::params::{ParamFile, ParamsError};

pub const SAMPLE_MINUTES: f64 = 15.0;
pub const STATES: [&str; 4] = ["T", "C", "Hm", "B"];
pub const INPUTS: [&str; 4] = ["u_V", "u_C", "u_Qh", "u_Qc"];
pub const DISTURBANCES: [&str; 4] = ["T_out", "C_out", "H_out", "Q_rad"];
pub const STATE_UNITS: [&str; 4] = ["degC", "ppm", "%", "kg/m2"];
pub const DISTURBANCE_UNITS: [&str; 4] = ["degC", "ppm", "%", "W/m2"];

/// Hard bounds `(id, state, lo-or-hi, value)`.
pub const HARD_BOUNDS: [(&str, usize, BoundSense, f64); 6] = [
    ("T_min", 0, BoundSense::Lower, 14.0),
    ("T_max", 0, BoundSense::Upper, 30.0),
    ("C_min", 1, BoundSense::Lower, 300.0),
    ("C_max", 1, BoundSense::Upper, 1000.0),
    ("H_min", 2, BoundSense::Lower, 10.0),
    ("H_max", 2, BoundSense::Upper, 100.0),
];

/// Comfort bands enforced by quadratic hinge penalties.
pub const COMFORT_BANDS: [(&str, usize, BoundSense, f64); 6] = [
    ("T_comfort_lo", 0, BoundSense::Lower, 18.0),
    ("T_comfort_hi", 0, BoundSense::Upper, 26.0),
    ("C_comfort_lo", 1, BoundSense::Lower, 500.0),
    ("C_comfort_hi", 1, BoundSense::Upper, 900.0),
    ("H_comfort_lo", 2, BoundSense::Lower, 60.0),
    ("H_comfort_hi", 2, BoundSense::Upper, 90.0),
];

const FAMILIES: [&str; 3] = ["temperature", "co2", "humidity"];

/// Model coefficients, costs and prices.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenhouseParams {
    pub a_out: f64,
    pub a_vent: f64,
    pub a_rad: f64,
    pub a_heat: f64,
    pub a_cool: f64,
    pub c_leak: f64,
    pub c_vent: f64,
    pub c_inj: f64,
    pub c_up: f64,
    pub k_q: f64,
    pub k_c: f64,
    pub h_leak: f64,
    pub h_vent: f64,
    pub h_tr: f64,
    pub g_max: f64,
    /// Linear actuator prices per hour at full actuation, `[u_V, u_C, u_Qh, u_Qc]`.
    pub price: [f64; 4],
    /// Quadratic actuator cost per hour.
    pub quad: [f64; 4],
    pub biomass_price: f64,
    pub w_temperature: f64,
    pub w_co2: f64,
    pub w_humidity: f64,
}

impl Default for GreenhouseParams {
    fn default() -> Self {
        Self {
            a_out: 0.1,
            a_vent: 1.0,
            a_rad: 0.004,
            a_heat: 6.0,
            a_cool: 6.0,
            c_leak: 0.05,
            c_vent: 1.5,
            c_inj: 300.0,
            c_up: 100.0,
            k_q: 300.0,
            k_c: 600.0,
            h_leak: 0.05,
            h_vent: 1.0,
            h_tr: 0.004,
            g_max: 0.02,
            price: [0.2, 0.5, 1.0, 1.0],
            quad: [0.5, 0.5, 2.0, 0.5],
            biomass_price: 50.0,
            w_temperature: 1.0,
            w_co2: 1e-4,
            w_humidity: 1e-2,
        }
    }
}

impl GreenhouseParams {
    const KEYS: [&'static str; 28] = [
        "a_out", "a_vent", "a_rad", "a_heat", "a_cool", "c_leak", "c_vent", "c_inj", "c_up",
        "k_q", "k_c", "h_leak", "h_vent", "h_tr", "g_max", "price_vent", "price_co2",
        "price_heat", "price_cool", "quad_vent", "quad_co2", "quad_heat", "quad_cool",
        "biomass_price", "w_temperature", "w_co2", "w_humidity", "dt_minutes",
    ];

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "a_out" => &mut self.a_out,
            "a_vent" => &mut self.a_vent,
            "a_rad" => &mut self.a_rad,
            "a_heat" => &mut self.a_heat,
            "a_cool" => &mut self.a_cool,
            "c_leak" => &mut self.c_leak,
            "c_vent" => &mut self.c_vent,
            "c_inj" => &mut self.c_inj,
            "c_up" => &mut self.c_up,
            "k_q" => &mut self.k_q,
            "k_c" => &mut self.k_c,
            "h_leak" => &mut self.h_leak,
            "h_vent" => &mut self.h_vent,
            "h_tr" => &mut self.h_tr,
            "g_max" => &mut self.g_max,
            "price_vent" => &mut self.price[0],
            "price_co2" => &mut self.price[1],
            "price_heat" => &mut self.price[2],
            "price_cool" => &mut self.price[3],
            "quad_vent" => &mut self.quad[0],
            "quad_co2" => &mut self.quad[1],
            "quad_heat" => &mut self.quad[2],
            "quad_cool" => &mut self.quad[3],
            "biomass_price" => &mut self.biomass_price,
            "w_temperature" => &mut self.w_temperature,
            "w_co2" => &mut self.w_co2,
            "w_humidity" => &mut self.w_humidity,
            _ => return None,
        })
    }

    /// Override the named coefficient; returns false for unknown names.
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        match self.slot(key) {
            Some(v) => {
                *v = value;
                true
            }
            None => false,
        }
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut p = ParamFile::new();
        let mut copy = self.clone();
        for key in Self::KEYS {
            if let Some(v) = copy.slot(key) {
                p.set(key, *v);
            }
        }
        p.set("dt_minutes", SAMPLE_MINUTES);
        p
    }

    /// Defaults overridden by every recognized key of `file`.
    pub fn from_param_file(file: &ParamFile) -> Result<Self, ParamsError> {
        let mut params = Self::default();
        for (key, value) in file.iter() {
            if key == "dt_minutes" {
                if value != SAMPLE_MINUTES {
                    return Err(ParamsError::Syntax {
                        line: 0,
                        message: format!("dt_minutes must be {SAMPLE_MINUTES}"),
                    });
                }
                continue;
            }
            if !value.is_finite() {
                return Err(ParamsError::Syntax {
                    line: 0,
                    message: format!("`{key}` is not finite"),
                });
            }
            params.set(key, value);
        }
        Ok(params)
    }

    /// Right-hand side of the ODE, per hour.
    pub fn derivative(&self, x: &[f64], u: &[f64], d: &[f64]) -> [f64; 4] {
        let (t, c, hm) = (x[0], x[1], x[2]);
        let (t_out, c_out, h_out, q) = (d[0], d[1], d[2], d[3].max(0.0));
        let phi = q / (q + self.k_q);
        let psi = c.max(0.0) / (c.max(0.0) + self.k_c);
        [
            self.a_out * (t_out - t) + self.a_vent * u[0] * (t_out - t) + self.a_rad * q
                + self.a_heat * u[2]
                - self.a_cool * u[3],
            self.c_leak * (c_out - c) + self.c_vent * u[0] * (c_out - c) + self.c_inj * u[1]
                - self.c_up * phi * psi,
            self.h_leak * (h_out - hm) + self.h_vent * u[0] * (h_out - hm) + self.h_tr * q,
            self.g_max * phi * psi,
        ]
    }

    /// One 15 minute RK4 step.
    pub fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
        let dt = SAMPLE_MINUTES / 60.0;
        let add = |a: &[f64], k: &[f64; 4], s: f64| -> [f64; 4] {
            [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]]
        };
        let k1 = self.derivative(x, u, d);
        let k2 = self.derivative(&add(x, &k1, dt / 2.0), u, d);
        let k3 = self.derivative(&add(x, &k2, dt / 2.0), u, d);
        let k4 = self.derivative(&add(x, &k3, dt), u, d);
        (0..4)
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    pub fn stage_cost(&self, u: &[f64]) -> f64 {
        let dt = SAMPLE_MINUTES / 60.0;
        (0..4)
            .map(|j| dt * (self.price[j] * u[j] + self.quad[j] * u[j] * u[j]))
            .sum()
    }
}

/// The greenhouse NMPC problem over `horizon` 15 minute stages.
pub fn build_greenhouse_ocp(params: &GreenhouseParams, horizon: usize) -> OcpSpec {
    let p = params.clone();
    let dynamics = Arc::new(move |x: &[f64], u: &[f64], d: &[f64]| p.step(x, u, d));
    let p = params.clone();
    let stage_cost = Arc::new(move |_x: &[f64], u: &[f64]| p.stage_cost(u));
    let price = params.biomass_price;
    let terminal_cost = Arc::new(move |x: &[f64]| -price * x[3]);
    let stages = StageRange::new(1, horizon);
    let mut spec = OcpSpec::new(horizon, 4, 4, 4, dynamics, stage_cost, terminal_cost)
        .with_names(&STATES, &INPUTS, &DISTURBANCES)
        .with_input_bounds(vec![(0.0, 1.0); 4])
        .with_sampling_interval(SAMPLE_MINUTES)
        .with_disturbance_reference(vec![
            ChannelReference { nominal: 12.0, scale: 4.0 },
            ChannelReference { nominal: 410.0, scale: 20.0 },
            ChannelReference { nominal: 70.0, scale: 10.0 },
            ChannelReference { nominal: 0.0, scale: 150.0 },
        ])
        .with_state_scale(vec![1.0, 50.0, 5.0, 0.01]);
    for (id, state, sense, bound) in HARD_BOUNDS {
        spec = spec.with_constraint(
            ConstraintDef::state_bound(id, ConstraintKind::HardInequality, state, 4, sense, bound, 0.0, stages)
                .with_family(FAMILIES[state])
                .with_variable(STATES[state]),
        );
    }
    let weights = [params.w_temperature, params.w_co2, params.w_humidity];
    for (id, state, sense, bound) in COMFORT_BANDS {
        spec = spec.with_constraint(
            ConstraintDef::state_bound(id, ConstraintKind::SoftPenalty, state, 4, sense, bound, weights[state], stages)
                .with_family(FAMILIES[state])
                .with_variable(STATES[state]),
        );
    }
    spec
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown disturbance profile `{0}` (expected cold-night, sunny-day or humid-spell)")]
pub struct UnknownProfile(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    ColdNight,
    SunnyDay,
    HumidSpell,
}

impl FromStr for Profile {
    type Err = UnknownProfile;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cold-night" => Ok(Profile::ColdNight),
            "sunny-day" => Ok(Profile::SunnyDay),
            "humid-spell" => Ok(Profile::HumidSpell),
            other => Err(UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::ColdNight => "cold-night",
            Profile::SunnyDay => "sunny-day",
            Profile::HumidSpell => "humid-spell",
        })
    }
}

/// Seeded forecast of `horizon` rows `[T_out, C_out, H_out, Q_rad]`.
///
/// Cold nights descend to exactly 5 degC with no radiation; sunny days
/// peak in radiation mid-horizon; humid spells are mild, dim and moist.
pub fn synth_disturbances(profile: Profile, horizon: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let span = (horizon.max(2) - 1) as f64;
    match profile {
        Profile::ColdNight => {
            let start = 9.0 + rng.random_range(0.0..2.0);
            (0..horizon)
                .map(|k| {
                    let frac = k as f64 / span;
                    let t_out = if k + 1 == horizon { 5.0 } else { 5.0 + (start - 5.0) * (1.0 - frac) };
                    vec![
                        t_out,
                        410.0 + 3.0 * noise.sample(&mut rng),
                        80.0 + 2.0 * noise.sample(&mut rng),
                        0.0,
                    ]
                })
                .collect()
        }
        Profile::SunnyDay => {
            let peak = 450.0 + rng.random_range(0.0..100.0);
            let t_base = 12.0 + rng.random_range(0.0..3.0);
            (0..horizon)
                .map(|k| {
                    let s = (std::f64::consts::PI * (k as f64 + 0.5) / horizon as f64).sin();
                    vec![
                        t_base + 4.0 * s + 0.3 * noise.sample(&mut rng),
                        410.0 + 3.0 * noise.sample(&mut rng),
                        60.0 + 2.0 * noise.sample(&mut rng),
                        (peak * s).max(0.0),
                    ]
                })
                .collect()
        }
        Profile::HumidSpell => (0..horizon)
            .map(|_| {
                vec![
                    15.0 + 0.5 * noise.sample(&mut rng),
                    410.0 + 3.0 * noise.sample(&mut rng),
                    (95.0 + 2.0 * noise.sample(&mut rng)).min(100.0),
                    (80.0 + 10.0 * noise.sample(&mut rng)).max(0.0),
                ]
            })
            .collect(),
    }
}

/// Signed physics graph of the greenhouse with its condition evaluators.
pub fn greenhouse_graph() -> SignedKnowledgeGraph {
    use EdgeSign::{Negative as Neg, Positive as Pos};
    let mut g = SignedKnowledgeGraph::new();
    for s in STATES {
        g.add_node(s, NodeRole::State).expect("unique");
    }
    for u in INPUTS {
        g.add_node(u, NodeRole::Input).expect("unique");
    }
    for d in DISTURBANCES {
        g.add_node(d, NodeRole::Disturbance).expect("unique");
    }
    let plain = [
        ("Q_rad", "T", Pos),
        ("T_out", "T", Pos),
        ("u_Qh", "T", Pos),
        ("u_Qc", "T", Neg),
        ("u_V", "T", Neg),
        ("C_out", "C", Pos),
        ("u_C", "C", Pos),
        ("Q_rad", "C", Neg),
        ("H_out", "Hm", Pos),
        ("Q_rad", "Hm", Pos),
        ("Q_rad", "B", Pos),
        ("C", "B", Pos),
    ];
    for (s, d, sign) in plain {
        g.add_edge(s, d, sign).expect("valid edge");
    }
    g.add_conditional_edge("u_V", "C", Neg, "C_out < C").expect("valid edge");
    g.add_conditional_edge("u_V", "Hm", Neg, "H_out < H_in").expect("valid edge");
    g
}

/// Evaluators for the conditions used by [`greenhouse_graph`].
pub fn greenhouse_conditions() -> ConditionRegistry {
    let mut reg = ConditionRegistry::new();
    reg.register_comparison("C_out < C", "C_out", "C");
    reg.register_comparison("H_out < H_in", "H_out", "Hm");
    reg
}
