//! Hard-constrained stand-in systems: a three-node thermal zone and a
//! six-state reactor chain. Neither carries soft constraints.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::kg::{EdgeSign, NodeRole, SignedKnowledgeGraph};
use crate::ocp::{BoundSense, ChannelReference, ConstraintDef, ConstraintFn, ConstraintKind, OcpSpec, StageRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestbedKind {
    ThermalZone,
    ReactorChain,
}

impl FromStr for TestbedKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thermal-zone" => Ok(TestbedKind::ThermalZone),
            "reactor-chain" => Ok(TestbedKind::ReactorChain),
            other => Err(format!("unknown testbed `{other}`")),
        }
    }
}

impl fmt::Display for TestbedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestbedKind::ThermalZone => "thermal-zone",
            TestbedKind::ReactorChain => "reactor-chain",
        })
    }
}

const DT_H: f64 = 0.25;

pub fn build_hardconstrained_testbed(kind: TestbedKind, horizon: usize) -> OcpSpec {
    match kind {
        TestbedKind::ThermalZone => thermal_zone(horizon),
        TestbedKind::ReactorChain => reactor_chain(horizon),
    }
}

/// Signed physics graph of a testbed.
pub fn testbed_graph(kind: TestbedKind) -> SignedKnowledgeGraph {
    use EdgeSign::{Negative as Neg, Positive as Pos};
    let spec = build_hardconstrained_testbed(kind, 1);
    let mut g = SignedKnowledgeGraph::new();
    for (names, role) in [
        (&spec.state_names, NodeRole::State),
        (&spec.input_names, NodeRole::Input),
        (&spec.disturbance_names, NodeRole::Disturbance),
    ] {
        for n in names {
            g.add_node(n, role).expect("unique");
        }
    }
    let edges: Vec<(&str, &str, EdgeSign)> = match kind {
        TestbedKind::ThermalZone => vec![
            ("T_out", "T_wall", Pos),
            ("T_wall", "T_zone", Pos),
            ("T_slab", "T_zone", Pos),
            ("T_zone", "T_slab", Pos),
            ("q_heat", "T_zone", Pos),
            ("q_cool", "T_zone", Neg),
            ("Q_int", "T_zone", Pos),
            ("Q_sol", "T_zone", Pos),
        ],
        TestbedKind::ReactorChain => vec![
            ("T_feed", "T1", Pos),
            ("T1", "T2", Pos),
            ("T2", "T3", Pos),
            ("feed", "T1", Pos),
            ("feed", "T2", Pos),
            ("feed", "T3", Pos),
            ("feed", "P1", Pos),
            ("feed", "P2", Pos),
            ("feed", "P3", Pos),
            ("T1", "P1", Pos),
            ("T2", "P2", Pos),
            ("T3", "P3", Pos),
            ("cool1", "T1", Neg),
            ("cool2", "T2", Neg),
            ("cool3", "T3", Neg),
            ("T_amb", "T1", Pos),
            ("T_amb", "T2", Pos),
            ("T_amb", "T3", Pos),
        ],
    };
    for (s, d, sign) in edges {
        g.add_edge(s, d, sign).expect("valid edge");
    }
    g
}

/// Zone air, envelope and slab temperatures; heating and cooling inputs.
fn thermal_zone(horizon: usize) -> OcpSpec {
    let dynamics = Arc::new(|x: &[f64], u: &[f64], d: &[f64]| {
        let (tz, tw, ts) = (x[0], x[1], x[2]);
        let (t_out, q_int, q_sol) = (d[0], d[1], d[2]);
        let dz = 0.6 * (tw - tz) + 0.3 * (ts - tz) + 6.0 * u[0] - 6.0 * u[1] + 0.5 * q_int + 0.004 * q_sol;
        let dw = 0.3 * (tz - tw) + 0.3 * (t_out - tw);
        let ds = 0.15 * (tz - ts);
        vec![tz + DT_H * dz, tw + DT_H * dw, ts + DT_H * ds]
    });
    let stage_cost = Arc::new(|_x: &[f64], u: &[f64]| {
        DT_H * (1.0 * u[0] + 1.2 * u[1] + 0.1 * (u[0] * u[0] + u[1] * u[1]))
    });
    let terminal = Arc::new(|_x: &[f64]| 0.0);
    let power: ConstraintFn = Arc::new(|_x: &[f64], u: &[f64], _d: &[f64]| u[0] + u[1]);
    let states = StageRange::new(1, horizon);
    OcpSpec::new(horizon, 3, 2, 3, dynamics, stage_cost, terminal)
        .with_names(&["T_zone", "T_wall", "T_slab"], &["q_heat", "q_cool"], &["T_out", "Q_int", "Q_sol"])
        .with_input_bounds(vec![(0.0, 1.0); 2])
        .with_sampling_interval(15.0)
        .with_disturbance_reference(vec![
            ChannelReference { nominal: 10.0, scale: 6.0 },
            ChannelReference { nominal: 1.0, scale: 1.0 },
            ChannelReference { nominal: 100.0, scale: 150.0 },
        ])
        .with_state_scale(vec![1.0, 1.0, 1.0])
        .with_constraint(
            ConstraintDef::state_bound("Z_min", ConstraintKind::HardInequality, 0, 3, BoundSense::Lower, 20.0, 0.0, states)
                .with_family("temperature")
                .with_variable("T_zone"),
        )
        .with_constraint(
            ConstraintDef::state_bound("Z_max", ConstraintKind::HardInequality, 0, 3, BoundSense::Upper, 24.0, 0.0, states)
                .with_family("temperature")
                .with_variable("T_zone"),
        )
        .with_constraint(
            ConstraintDef::hard("P_max", BoundSense::Upper, 0.8, StageRange::new(0, horizon - 1), power).with_family("power"),
        )
}

/// Three reactors in series, each with temperature and pressure; feed rate
/// and per-reactor cooling as inputs.
fn reactor_chain(horizon: usize) -> OcpSpec {
    let dynamics = Arc::new(|x: &[f64], u: &[f64], d: &[f64]| {
        let (t_feed, t_amb) = (d[0], d[1]);
        let feed = u[0];
        let heat = [20.0, 12.0, 6.0];
        let mut next = vec![0.0; 6];
        for i in 0..3 {
            let t = x[2 * i];
            let p = x[2 * i + 1];
            let upstream = if i == 0 { t_feed } else { x[2 * i - 2] };
            // Reaction heat grows mildly with temperature.
            let reaction = heat[i] * feed * (1.0 + 0.01 * (t - 70.0));
            let dt = 0.5 * (upstream - t) + reaction - 18.0 * u[i + 1] - 0.2 * (t - t_amb);
            let dp = 0.8 * (0.02 * t + 1.5 * feed - p);
            next[2 * i] = t + DT_H * dt;
            next[2 * i + 1] = p + DT_H * dp;
        }
        next
    });
    let stage_cost = Arc::new(|_x: &[f64], u: &[f64]| {
        DT_H * (-3.0 * u[0] + 0.5 * (u[1] + u[2] + u[3]) + 0.2 * u.iter().map(|v| v * v).sum::<f64>())
    });
    let terminal = Arc::new(|_x: &[f64]| 0.0);
    let states = StageRange::new(1, horizon);
    let cooling: ConstraintFn = Arc::new(|_x: &[f64], u: &[f64], _d: &[f64]| u[1] + u[2] + u[3]);
    let mut spec = OcpSpec::new(horizon, 6, 4, 2, dynamics, stage_cost, terminal)
        .with_names(
            &["T1", "P1", "T2", "P2", "T3", "P3"],
            &["feed", "cool1", "cool2", "cool3"],
            &["T_feed", "T_amb"],
        )
        .with_input_bounds(vec![(0.0, 1.0); 4])
        .with_sampling_interval(15.0)
        .with_disturbance_reference(vec![
            ChannelReference { nominal: 60.0, scale: 8.0 },
            ChannelReference { nominal: 25.0, scale: 8.0 },
        ])
        .with_state_scale(vec![1.0, 0.1, 1.0, 0.1, 1.0, 0.1]);
    for i in 0..3 {
        let t_name = format!("T{}", i + 1);
        let p_name = format!("P{}", i + 1);
        spec = spec
            .with_constraint(
                ConstraintDef::state_bound(format!("{t_name}_max"), ConstraintKind::HardInequality, 2 * i, 6, BoundSense::Upper, 90.0, 0.0, states)
                    .with_family("temperature")
                    .with_variable(t_name),
            )
            .with_constraint(
                ConstraintDef::state_bound(format!("{p_name}_max"), ConstraintKind::HardInequality, 2 * i + 1, 6, BoundSense::Upper, 3.2, 0.0, states)
                    .with_family("pressure")
                    .with_variable(p_name),
            );
    }
    spec.with_constraint(
        ConstraintDef::hard("Cool_max", BoundSense::Upper, 1.2, StageRange::new(0, horizon - 1), cooling).with_family("power"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{validate_spec, DecisionContext};
    use crate::solver::{solve, SolverConfig};

    #[test]
    fn testbeds_validate_and_have_no_soft_constraints() {
        for kind in [TestbedKind::ThermalZone, TestbedKind::ReactorChain] {
            let spec = build_hardconstrained_testbed(kind, 12);
            assert!(validate_spec(&spec).is_usable(), "{kind}");
            assert!(!spec.has_soft_constraints());
        }
        assert_eq!(build_hardconstrained_testbed(TestbedKind::ThermalZone, 4).state_dim(), 3);
        assert_eq!(build_hardconstrained_testbed(TestbedKind::ReactorChain, 4).state_dim(), 6);
    }

    #[test]
    fn cold_weather_binds_the_zone_lower_bound() {
        let spec = build_hardconstrained_testbed(TestbedKind::ThermalZone, 12);
        let ctx = DecisionContext::new(vec![21.0, 15.0, 20.0], vec![vec![0.0, 0.5, 0.0]; 12]);
        let sol = solve(&spec, &ctx, &SolverConfig::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol.status);
        assert!(sol.max_multiplier(&"Z_min".into()) > 1e-3);
        assert_eq!(sol.max_multiplier(&"Z_max".into()), 0.0);
    }
}
