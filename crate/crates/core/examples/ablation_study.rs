//! Drop each evidence source in turn on the greenhouse suite and compare
//! ranking metrics against the full pipeline.

use mpc_explain::eval::{build_suite, run_suite, SuiteConfig, SuiteKind};

fn main() {
    let suite = build_suite(SuiteKind::Greenhouse, 7, 16).unwrap();
    let configs = [
        SuiteConfig::full(),
        SuiteConfig { drop_kg: true, ..Default::default() },
        SuiteConfig { drop_pcmci: true, ..Default::default() },
        SuiteConfig { drop_kkt: true, ..Default::default() },
        SuiteConfig::drop_all(),
    ];
    println!("{:<30} {:>6} {:>6} {:>7} {:>6}", "config", "P@1", "MRR", "NDCG@3", "fails");
    for c in &configs {
        let r = run_suite(&suite, c);
        println!("{:<30} {:>6.3} {:>6.3} {:>7.3} {:>6}", r.config_tag, r.p_at_1(), r.aggregate.mrr, r.aggregate.ndcg_at[1], r.failures.len());
        for f in &r.failures {
            println!("    {} {}: {}", f.scenario_ref, f.category, f.detail);
        }
    }
}
