//! Knowledge-graph edge removal and threshold scaling sweeps.

use mpc_explain::eval::{build_suite, merge_seeded, run_suite, SuiteConfig, SuiteKind};
use mpc_explain::kg::Perturbation;

fn main() {
    let suite = build_suite(SuiteKind::Greenhouse, 7, 16).unwrap();
    let full = run_suite(&suite, &SuiteConfig::full()).p_at_1();
    println!("full P@1 {full:.3}");
    for level in [0.1, 0.2, 0.3] {
        let runs: Vec<_> = (0..5)
            .map(|seed| {
                let c = SuiteConfig { kg_perturbation: Some((Perturbation::Remove(level), seed)), ..Default::default() };
                (seed, run_suite(&suite, &c))
            })
            .collect();
        let merged = merge_seeded(&runs, format!("remove-{level}")).unwrap();
        println!("remove {level:.1}: P@1 {:.3} ({:+.1} points)", merged.p_at_1(), 100.0 * (merged.p_at_1() - full));
    }
    for scale in [0.5, 1.5] {
        let r = run_suite(&suite, &SuiteConfig { threshold_scale: Some(scale), ..Default::default() });
        println!("thresholds x{scale}: P@1 {:.3}", r.p_at_1());
    }
}
