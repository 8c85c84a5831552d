use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use mpc_explain::causality::{synth_planted_var, write_time_series};
use mpc_explain::cli::{execute, CalibrateArgs, CliError, Command, DemoArgs, DiscoverArgs, EvalArgs, ExplainArgs, MANIFEST_FILE};
use mpc_explain::forensics::{load_thresholds, synth_bimodal_multipliers, synth_cost_trials, CalibrationData, Provenance};
use mpc_explain::hypothesis::ExplanationRecord;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mpcx-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_mpc-explain"))
}

fn demo(root: &Path) -> PathBuf {
    let out = root.join("demo");
    execute(&Command::Demo(DemoArgs { horizon: 16, seed: 7, out: out.clone() })).unwrap();
    out
}

fn explain_args(demo: &Path, out: PathBuf) -> ExplainArgs {
    ExplainArgs {
        scenario: demo.join("scenario.toml"),
        params: None,
        kg: Some(demo.join("kg.toml")),
        causal_graph: Some(demo.join("causal_graph.toml")),
        baselines: None,
        thresholds: None,
        horizon: None,
        degraded_ok: false,
        out,
    }
}

fn read_record(dir: &Path) -> ExplanationRecord {
    serde_json::from_str(&fs::read_to_string(dir.join("decision-000.json")).unwrap()).unwrap()
}

#[test]
fn demo_writes_every_artifact_and_one_manifest() {
    let root = scratch("demo");
    let out = demo(&root);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(
        names,
        [
            "baselines.toml", "causal_graph.toml", "decision-000.json", "decision-000.txt", "kg.toml", "manifest.toml",
            "operations_log.csv", "params.params", "scenario.toml", "thresholds.params",
        ]
    );
    let text = fs::read_to_string(out.join("decision-000.txt")).unwrap();
    assert!(text.contains("Safety (confidence 0.92)"));
    for h in ["Primary Reason:", "Mathematical Evidence:", "Predictive Justification:", "Physical & Historical Context:"] {
        assert!(text.contains(h), "{h}");
    }
    assert!(!read_record(&out).degraded_mode);
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn explain_without_causal_graph_is_degraded() {
    let root = scratch("degraded");
    let d = demo(&root);
    let mut args = explain_args(&d, root.join("x"));
    args.causal_graph = None;
    let e = execute(&Command::Explain(args.clone())).unwrap_err();
    assert!(matches!(e, CliError::Degraded(_)), "{e}");
    assert!(!root.join("x").exists(), "nothing written on refusal");

    args.degraded_ok = true;
    execute(&Command::Explain(args)).unwrap();
    let r = read_record(&root.join("x"));
    assert!(r.degraded_mode);
    assert!(!r.narrative.contains("lagged cause"));
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn explain_does_not_touch_its_inputs() {
    let root = scratch("inputs");
    let d = demo(&root);
    let before: Vec<Vec<u8>> = ["scenario.toml", "kg.toml", "causal_graph.toml"].iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    execute(&Command::Explain(explain_args(&d, root.join("x")))).unwrap();
    let after: Vec<Vec<u8>> = ["scenario.toml", "kg.toml", "causal_graph.toml"].iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(fs::read(root.join("x/decision-000.txt")).unwrap(), fs::read(d.join("decision-000.txt")).unwrap());
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn discover_recovers_planted_links() {
    let root = scratch("discover");
    let var = synth_planted_var(2000, 4);
    let start = chrono::NaiveDate::from_ymd_opt(2024, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut buf = Vec::new();
    write_time_series(&var.table, start, &mut buf).unwrap();
    let data = root.join("var.csv");
    fs::write(&data, buf).unwrap();
    let out = root.join("out");
    execute(&Command::Discover(DiscoverArgs { data, tau_max: 12, alpha: 0.05, out: out.clone() })).unwrap();
    let graph = mpc_explain::causality::LaggedCausalGraph::load(&out.join("causal_graph.toml")).unwrap();
    for (s, t, lag) in &var.links {
        assert!(graph.edges.iter().any(|e| &e.source == s && &e.target == t && e.lag == *lag), "{s} -> {t} at {lag}");
    }
    assert!(out.join("baselines.toml").exists() && out.join(MANIFEST_FILE).exists());
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn malformed_header_exits_with_two() {
    let root = scratch("header");
    let data = root.join("bad.csv");
    fs::write(&data, "timestamp,T_out,T_out\n2024-01-01T00:00:00,1,2\n2024-01-01T00:15:00,1,2\n").unwrap();
    let out = bin().args(["discover", data.to_str().unwrap(), "--out", root.join("o").to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`T_out`") && err.contains("column 3"), "{err}");
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn calibrate_reports_heldout_accuracy() {
    let root = scratch("calibrate");
    let data = CalibrationData { multipliers: synth_bimodal_multipliers(2000, "temperature", 21), trials: synth_cost_trials(100, 2) };
    let path = root.join("data.toml");
    fs::write(&path, data.to_toml().unwrap()).unwrap();
    let out = root.join("out");
    let args = CalibrateArgs { data: path.clone(), calibration_fraction: 0.125, heldout_fraction: 0.125, seed: 3, out: out.clone() };
    execute(&Command::Calibrate(args)).unwrap();
    let report = fs::read_to_string(out.join("calibration_report.tsv")).unwrap();
    let row = report.lines().find(|l| l.starts_with("temperature")).unwrap();
    let acc: f64 = row.split('\t').nth(3).unwrap().parse().unwrap();
    assert!(acc >= 0.96, "{report}");
    let (table, _) = load_thresholds(&out.join("thresholds.params")).unwrap();
    assert_eq!(table.by_family["temperature"].provenance, Provenance::Calibrated);

    let status = bin()
        .args(["calibrate", path.to_str().unwrap(), "--calibration-fraction", "0.6", "--heldout-fraction", "0.6", "--seed", "0", "--out"])
        .arg(root.join("bad"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    fs::remove_dir_all(root).unwrap();
}

#[test]
fn eval_writes_one_report_pair_per_cell() {
    let root = scratch("eval");
    let config = root.join("suite.toml");
    fs::write(
        &config,
        "suite = \"reactor-chain\"\nablations = [\"drop-kg\", \"drop-pcmci\", \"drop-kkt\"]\n[kg_perturbation]\nop = \"remove\"\nlevels = [0.0, 0.2]\nseeds = [0, 1]\n",
    )
    .unwrap();
    let out = root.join("out");
    execute(&Command::Eval(EvalArgs { config, seed: 3, horizon: Some(12), out: out.clone() })).unwrap();
    let mut tsv: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".tsv") && n != "summary.tsv")
        .collect();
    tsv.sort();
    assert_eq!(tsv, ["drop-kg.tsv", "drop-kkt.tsv", "drop-pcmci.tsv", "full.tsv", "remove-0.2.tsv", "remove-0.tsv"]);
    // Removing no edges reproduces the unperturbed rows under every seed.
    let rows = |name: &str| -> Vec<(String, String)> {
        fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with("mean"))
            .map(|l| {
                let (id, rest) = l.split_once('\t').unwrap();
                (id.to_string(), rest.to_string())
            })
            .collect()
    };
    let full: std::collections::BTreeMap<String, String> = rows("full.tsv").into_iter().collect();
    let zero = rows("remove-0.tsv");
    assert_eq!(zero.len(), 2 * full.len());
    for (id, rest) in zero {
        let (base, seed) = id.split_once('#').unwrap();
        assert!(seed == "s0" || seed == "s1");
        assert_eq!(full[base], rest, "{id}");
    }
    fs::remove_dir_all(root).unwrap();
}
