//! KKT forensics on random convex QPs: the reported active set against
//! brute-force enumeration, relaxation counterfactuals and multiplier
//! sensitivities.

use mpc_explain::eval::qp::{constraint_name, qp_suite};
use mpc_explain::forensics::{constraint_counterfactual, detect_active_set, ThresholdTable};
use mpc_explain::ocp::{ConstraintId, DecisionContext};
use mpc_explain::solver::{multiplier_sensitivity_check, solve, SolverConfig};

fn main() {
    let cfg = SolverConfig::default();
    let ctx = DecisionContext::new(vec![0.0], vec![vec![0.0]]);
    for (i, q) in qp_suite(5, 42).iter().enumerate() {
        let spec = q.to_ocp();
        let sol = solve(&spec, &ctx, &cfg).unwrap();
        let active = detect_active_set(&spec, &sol, &ThresholdTable::default()).unwrap();
        let (_, oracle) = q.brute_force().unwrap();
        let (n, m) = q.dims();
        println!("QP {i}: {n} variables, {m} constraints, oracle binding {:?}", oracle.iter().map(|j| constraint_name(*j)).collect::<Vec<_>>());
        for a in &active {
            let s = multiplier_sensitivity_check(&spec, &ctx, &a.id, 1e-4, &cfg).unwrap();
            println!("  {} lambda {:.6}  dJ/dc {:.6}", a.id, a.lambda, s.dj_dc);
        }
        for j in 0..m {
            let id = ConstraintId::new(constraint_name(j));
            let cf = constraint_counterfactual(&spec, &ctx, &cfg, &sol, &id).unwrap();
            println!("  relax {id}: |du| = {:.2e}, dJ = {:+.4}", cf.input_change, cf.j_relaxed - cf.j_nominal);
        }
    }
}
