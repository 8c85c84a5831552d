use super::*;

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("mpc-explain").chain(args.iter().copied())).unwrap().command
}

#[test]
fn discover_defaults() {
    match parse(&["discover", "log.csv", "--out", "o"]) {
        Command::Discover(a) => {
            assert_eq!(a.tau_max, 48);
            assert_eq!(a.alpha, 0.05);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn calibrate_default_splits_and_required_seed() {
    match parse(&["calibrate", "d.toml", "--seed", "3", "--out", "o"]) {
        Command::Calibrate(a) => {
            assert_eq!((a.calibration_fraction, a.heldout_fraction), (0.125, 0.125));
        }
        other => panic!("{other:?}"),
    }
    assert!(Cli::try_parse_from(["mpc-explain", "calibrate", "d.toml", "--out", "o"]).is_err());
    assert!(Cli::try_parse_from(["mpc-explain", "eval", "s.toml", "--out", "o"]).is_err());
}

#[test]
fn every_required_flag_is_accepted() {
    let c = parse(&[
        "explain", "s.toml", "--kg", "k", "--causal-graph", "g", "--thresholds", "t", "--horizon", "12", "--degraded-ok", "--out", "o",
    ]);
    let Command::Explain(a) = c else { panic!() };
    assert!(a.degraded_ok);
    assert_eq!(a.horizon, Some(12));
    let c = parse(&["discover", "x.csv", "--tau-max", "12", "--alpha", "0.01", "--out", "o"]);
    assert!(matches!(c, Command::Discover(DiscoverArgs { tau_max: 12, .. })));
    let c = parse(&["demo", "--horizon", "20", "--seed", "1", "--out", "o"]);
    assert!(matches!(c, Command::Demo(DemoArgs { horizon: 20, seed: 1, .. })));
}

#[test]
fn manifest_round_trips() {
    let cmd = parse(&["explain", "s.toml", "--kg", "k.toml", "--out", "o"]);
    let m = RunManifest::for_command(&cmd);
    assert_eq!(m.config_paths, vec![PathBuf::from("s.toml"), PathBuf::from("k.toml")]);
    let back: RunManifest = toml::from_str(&m.to_toml().unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn ablation_and_sweep_cardinality() {
    let cfg = SuiteConfigFile::parse(
        r#"
suite = "greenhouse"
ablations = ["drop-kg", "drop-pcmci", "drop-kkt"]
threshold_scales = [0.5, 1.5]
[kg_perturbation]
op = "remove"
levels = [0.1, 0.2, 0.3]
seeds = [0, 1, 2, 3, 4]
"#,
    )
    .unwrap();
    let cells = cfg.cells().unwrap();
    let tags: Vec<&str> = cells.iter().map(|c| c.tag.as_str()).collect();
    assert_eq!(
        tags,
        ["full", "drop-kg", "drop-pcmci", "drop-kkt", "remove-0.1", "remove-0.2", "remove-0.3", "thresholds-x0.5", "thresholds-x1.5"]
    );
    assert_eq!(cells[5].configs.len(), 5);
}

#[test]
fn bad_suite_configs_are_usage_errors() {
    for text in [
        "suite = \"greenhouse\"\nablations = [\"drop-x\"]",
        "suite = \"nope\"",
        "suite = \"greenhouse\"\nextra = 1",
        "suite = \"greenhouse\"\n[kg_perturbation]\nop = \"shuffle\"\nlevels = [0.1]",
    ] {
        let e = SuiteConfigFile::parse(text).and_then(|c| c.cells()).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{text}: {e}");
    }
}

#[test]
fn oversized_splits_are_rejected() {
    let dir = std::env::temp_dir().join(format!("mpcx-cli-split-{}", std::process::id()));
    let cmd = parse(&["calibrate", "missing.toml", "--calibration-fraction", "0.7", "--heldout-fraction", "0.5", "--seed", "0", "--out"]
        .iter()
        .copied()
        .chain([dir.to_str().unwrap()])
        .collect::<Vec<_>>());
    let e = execute(&cmd).unwrap_err();
    assert!(e.to_string().contains("sum"), "{e}");
    assert_eq!(e.exit_code(), 2);
    assert!(!dir.exists());
}
