//! Signed knowledge-graph traversal on the greenhouse physics graph,
//! including a condition-dependent ventilation edge and edge removal.

use std::collections::{BTreeMap, BTreeSet};

use mpc_explain::greenhouse::{greenhouse_conditions, greenhouse_graph};
use mpc_explain::kg::{backward_trace, forward_trace, perturb, save_graph, Perturbation, TraceContext};

fn main() {
    let g = greenhouse_graph();
    let registry = greenhouse_conditions();
    println!("{} nodes, {} edges", g.nodes().count(), g.edge_count());

    for (c_in, c_out) in [(900.0, 410.0), (380.0, 410.0)] {
        let values = BTreeMap::from([("C".to_string(), c_in), ("C_out".to_string(), c_out)]);
        let ctx = TraceContext { registry: &registry, values: &values };
        println!("\nforward from u_V with C = {c_in}, C_out = {c_out}:");
        for chain in forward_trace(&g, &BTreeSet::from(["u_V".to_string()]), 3, Some(&ctx)) {
            println!("  {}", chain.render());
        }
    }

    println!("\nbackward to B:");
    for chain in backward_trace(&g, "B", 3, None).unwrap() {
        println!("  {}", chain.render());
    }

    let damaged = perturb(&g, Perturbation::Remove(0.2), 3);
    println!("\nafter removing 20% of edges: {} edges left", damaged.edge_count());
    println!("{}", save_graph(&damaged).unwrap());
}
