//! Drive the command layer from code: run the demo, explain its scenario
//! from the written artifacts, and replay the run from its manifest.

use mpc_explain::cli::{execute, rerun, Command, DemoArgs, ExplainArgs, MANIFEST_FILE};

fn main() {
    let root = std::env::temp_dir().join("mpc-explain-example");
    let demo = root.join("demo");
    execute(&Command::Demo(DemoArgs { horizon: 16, seed: 7, out: demo.clone() })).unwrap();

    let first = root.join("explain");
    let out = execute(&Command::Explain(ExplainArgs {
        scenario: demo.join("scenario.toml"),
        params: Some(demo.join("params.params")),
        kg: Some(demo.join("kg.toml")),
        causal_graph: Some(demo.join("causal_graph.toml")),
        baselines: None,
        thresholds: Some(demo.join("thresholds.params")),
        horizon: None,
        degraded_ok: false,
        out: first.clone(),
    }))
    .unwrap();
    print!("{}", out.summary);
    println!("{}", std::fs::read_to_string(first.join(MANIFEST_FILE)).unwrap());

    let again = rerun(&first.join(MANIFEST_FILE), &root.join("explain-again")).unwrap();
    for f in again.files.iter().filter(|f| f.as_str() != MANIFEST_FILE) {
        let same = std::fs::read(first.join(f)).unwrap() == std::fs::read(root.join("explain-again").join(f)).unwrap();
        println!("{f}: identical = {same}");
    }
}
