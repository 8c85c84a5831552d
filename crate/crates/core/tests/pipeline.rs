use mpc_explain::eval::{build_suite, model_for, run_suite, SuiteConfig, SuiteKind};
use mpc_explain::greenhouse::GreenhouseParams;
use mpc_explain::hypothesis::{evaluate_hypothesis, Decision, EvidenceSources, ExplainConfig, Hypothesis};
use mpc_explain::solver::solve;

#[test]
fn testbed_suites_score_perfectly() {
    for kind in [SuiteKind::ThermalZone, SuiteKind::ReactorChain] {
        let suite = build_suite(kind, 11, 16).unwrap();
        assert!(suite.scenarios.len() >= 10);
        let full = run_suite(&suite, &SuiteConfig::full());
        assert_eq!(full.p_at_1(), 1.0, "{kind:?}\n{}", full.to_tsv());
        assert!(full.failures.is_empty());
        let none = run_suite(&suite, &SuiteConfig::drop_all());
        assert!(none.p_at_1() <= full.p_at_1(), "{kind:?}");
        if kind == SuiteKind::ReactorChain {
            // Pressure limits are only named by their multipliers.
            assert!(none.p_at_1() < 1.0);
        }
        assert!(full.in_unit_range() && none.in_unit_range());
    }
}

#[test]
fn failures_partition_the_missed_scenarios() {
    let suite = build_suite(SuiteKind::ReactorChain, 5, 16).unwrap();
    let r = run_suite(&suite, &SuiteConfig { drop_kkt: true, drop_kg: true, ..Default::default() });
    let missed: Vec<&str> = r.rows.iter().filter(|row| row.p_at_1() < 1.0).map(|row| row.scenario_ref.as_str()).collect();
    let logged: Vec<&str> = r.failures.iter().map(|f| f.scenario_ref.as_str()).collect();
    assert_eq!(missed, logged);
}

#[test]
fn suite_reports_are_byte_stable() {
    let suite = build_suite(SuiteKind::ThermalZone, 2, 12).unwrap();
    let c = SuiteConfig { threshold_scale: Some(1.5), ..Default::default() };
    let a = run_suite(&suite, &c);
    let b = run_suite(&build_suite(SuiteKind::ThermalZone, 2, 12).unwrap(), &c);
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.config_tag, "thresholds-x1.5");
}

#[test]
fn greenhouse_suite_is_annotated() {
    let suite = build_suite(SuiteKind::Greenhouse, 7, 16).unwrap();
    assert!(suite.scenarios.len() >= 20);
    assert!(suite.causal_graph.is_some() && suite.baseline.is_some());
    for s in &suite.scenarios {
        assert!(!s.annotation.true_causal_factors.is_empty());
        assert!(s.scenario.histories[0].is_some(), "{}", s.scenario.id);
        model_for(&s.scenario, &GreenhouseParams::default()).unwrap();
    }
}

#[test]
fn history_is_skipped_without_a_causal_graph() {
    let suite = build_suite(SuiteKind::Greenhouse, 7, 16).unwrap();
    let s = &suite.scenarios[0].scenario;
    let model = model_for(s, &GreenhouseParams::default()).unwrap();
    let cfg = ExplainConfig::default();
    let sol = solve(&model.spec, &s.contexts[0], &cfg.solver).unwrap();
    let d = Decision { spec: &model.spec, ctx: &s.contexts[0], solution: &sol };
    let sources = EvidenceSources { kg: Some(&model.kg), conditions: model.conditions.as_ref(), causal: None, use_kkt: true };
    let e = evaluate_hypothesis(Hypothesis::History, &d, &sources, &cfg);
    assert!(!e.is_supported());
    assert!(e.evidence.uncertainty_flags.iter().any(|f| f.contains("History skipped")));
}
