//! Solve the greenhouse NMPC for a cold night and print the plan.

use mpc_explain::greenhouse::{build_greenhouse_ocp, synth_disturbances, GreenhouseParams, Profile};
use mpc_explain::ocp::DecisionContext;
use mpc_explain::solver::{solve_with_trace, SolverConfig};

fn main() {
    let horizon = 16;
    let spec = build_greenhouse_ocp(&GreenhouseParams::default(), horizon);
    let forecast = synth_disturbances(Profile::ColdNight, horizon, 1);
    let ctx = DecisionContext::new(vec![18.5, 700.0, 75.0, 1.0], forecast);
    let cfg = SolverConfig { trace: true, ..SolverConfig::default() };
    let (sol, trace) = solve_with_trace(&spec, &ctx, &cfg).expect("solve");

    println!("status {:?} after {} iterations, J* = {:.4}", sol.status, sol.iterations, sol.total_cost);
    print!("{}", trace.render());
    println!("\n  k      T       C       H       B   |  {}", spec.input_names.join("  "));
    for k in 0..horizon {
        let x = &sol.states[k];
        let u: Vec<String> = sol.inputs[k].iter().map(|v| format!("{v:.3}")).collect();
        println!("{k:>3} {:>7.2} {:>7.1} {:>6.1} {:>7.4} |  {}", x[0], x[1], x[2], x[3], u.join("  "));
    }
    for m in sol.multipliers.iter().filter(|m| m.value > 1e-9) {
        println!("multiplier {} = {:.3e}", m.id.at_stage(m.stage), m.value);
    }
}
