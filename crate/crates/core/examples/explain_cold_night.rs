//! End-to-end explanation of a preemptive heating decision: solve, KKT and
//! counterfactual evidence, knowledge-graph chains, lagged causes from an
//! operations log, and the rendered narrative.

use mpc_explain::causality::{compute_baselines, fit_pcmci};
use mpc_explain::eval::{cold_night_scenario, greenhouse_operations_log, model_for, LOG_LENGTH, LOG_TAU_MAX};
use mpc_explain::greenhouse::GreenhouseParams;
use mpc_explain::hypothesis::{generate_explanation, CausalEvidence, Decision, EvidenceSources, ExplainConfig};
use mpc_explain::solver::solve;

fn main() {
    let log = greenhouse_operations_log(LOG_LENGTH, 7);
    let graph = fit_pcmci(&log, LOG_TAU_MAX, 0.05).unwrap();
    let baseline = compute_baselines(&log, LOG_TAU_MAX).unwrap();

    let scenario = cold_night_scenario("cold-night", 7, 18.5, 16, Some(&baseline));
    let model = model_for(&scenario, &GreenhouseParams::default()).unwrap();
    let ctx = &scenario.contexts[0];
    let cfg = ExplainConfig::default();
    let solution = solve(&model.spec, ctx, &cfg.solver).unwrap();

    let sources = EvidenceSources {
        kg: Some(&model.kg),
        conditions: model.conditions.as_ref(),
        causal: Some(CausalEvidence { graph: &graph, baseline: &baseline, history: scenario.histories[0].as_ref().unwrap() }),
        use_kkt: true,
    };
    let record = generate_explanation(&Decision { spec: &model.spec, ctx, solution: &solution }, &sources, &cfg, &scenario.id);
    println!("{}", record.narrative);
    println!("ranked factors: {:?}", record.causal_factors);
    for t in &record.trace {
        println!("  {:<12} supported={} {:?}", t.hypothesis.to_string(), t.supported, t.flags);
    }
}
