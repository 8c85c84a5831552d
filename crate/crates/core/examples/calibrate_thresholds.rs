//! Calibrate a multiplier threshold on labeled synthetic data. With a path
//! argument the data is also written in the format `mpc-explain calibrate`
//! reads.

use mpc_explain::forensics::{
    calibrate_cost_thresholds, calibrate_kkt_thresholds, calibration_report, synth_bimodal_multipliers, synth_cost_trials,
    CalibrationData, SplitFractions,
};

fn main() {
    let mut data = CalibrationData::default();
    for (family, seed) in [("temperature", 1), ("power", 2)] {
        data.multipliers.extend(synth_bimodal_multipliers(2000, family, seed));
    }
    data.trials = synth_cost_trials(200, 3);

    let split = SplitFractions::default();
    let results: Vec<_> = data
        .by_family()
        .values()
        .map(|samples| calibrate_kkt_thresholds(samples, &split, 0).unwrap())
        .collect();
    let costs = calibrate_cost_thresholds(&data.trials).unwrap();
    print!("{}", calibration_report(&results, &costs));

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, data.to_toml().unwrap()).unwrap();
        println!("wrote {path}");
    }
}
