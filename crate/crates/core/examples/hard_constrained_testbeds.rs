//! Explanations on the thermal-zone and reactor-chain testbeds, where a
//! hard limit binds and the KKT multiplier names it directly.

use mpc_explain::eval::{build_suite, run_scenario, SuiteConfig, SuiteKind};

fn main() {
    for kind in [SuiteKind::ThermalZone, SuiteKind::ReactorChain] {
        let suite = build_suite(kind, 7, 16).unwrap();
        println!("== {kind:?}: {} scenarios", suite.scenarios.len());
        for s in suite.scenarios.iter().step_by(5) {
            let o = run_scenario(&suite, s, &SuiteConfig::full());
            let r = o.record.unwrap();
            println!("\n{} (truth {:?})", s.scenario.id, s.annotation.true_causal_factors);
            println!("{}", r.narrative);
        }
    }
}
