use triband_core::optimizer::{optimize, Constraints, ObjectiveSpec, OptimizeError, OptimizerOptions};
use triband_core::pipeline::{evaluate_link, summarize};
use triband_core::{load_scenario, Scenario};

fn single_band(spans: usize) -> Scenario {
    load_scenario(&format!(
        r#"
isrs = false
[grid]
spacing_ghz = 150.0
symbol_rate_gbd = 100.0
roll_off = 0.1
[[bands]]
name = "C"
f_min_thz = 193.0
f_max_thz = 194.05
channels = 7
noise_figure_db = 5.0
[link]
span_count = {spans}
length_km = 100.0
lumped_loss_db = 1.0
"#
    ))
    .unwrap()
}

#[test]
fn optimum_is_at_least_the_best_flat_launch() {
    let s = single_band(15);
    let mut grid_best = f64::NEG_INFINITY;
    let mut grid_arg = 0.0;
    for k in -8..=16 {
        let p = k as f64 * 0.5;
        let flat = s.with_launch_dbm(vec![p; s.channel_count()]).unwrap();
        let mean = summarize(&flat, &evaluate_link(&flat).unwrap().metrics).mean_ir_tbps;
        if mean > grid_best {
            grid_best = mean;
            grid_arg = p;
        }
    }
    let r = optimize(&s, ObjectiveSpec::MeanIr, &Constraints::for_pumps(0), &OptimizerOptions { budget: 400, ..Default::default() }).unwrap();
    assert!(r.mean_ir_tbps >= grid_best - 1e-9, "{} < {grid_best}", r.mean_ir_tbps);
    // per-channel freedom buys little on a flat band, and the optimum stays near the grid's
    assert!(r.mean_ir_tbps - grid_best < 0.01 * grid_best);
    let mean_launch = r.launch_dbm.iter().sum::<f64>() / r.launch_dbm.len() as f64;
    assert!((mean_launch - grid_arg).abs() < 1.0, "{mean_launch} vs {grid_arg}");
}

#[test]
fn resumed_run_replays_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.json");
    let s = single_band(10);
    let c = Constraints::for_pumps(0);
    let opts = |budget, checkpoint: Option<std::path::PathBuf>| OptimizerOptions { budget, seed: 3, checkpoint, checkpoint_every: 10, ..Default::default() };

    let straight = optimize(&s, ObjectiveSpec::MeanIrMinusSpread, &c, &opts(60, Some(path.clone()))).unwrap();
    // cut the progress file back to what an interrupted run would have left
    let mut cp: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    cp["points"].as_array_mut().unwrap().truncate(30);
    std::fs::write(&path, serde_json::to_vec(&cp).unwrap()).unwrap();
    let resumed = optimize(&s, ObjectiveSpec::MeanIrMinusSpread, &c, &opts(60, Some(path.clone()))).unwrap();

    assert_eq!(resumed.evaluations, 60);
    let values = |r: &triband_core::OptimizationReport| r.trace.iter().map(|e| e.value).collect::<Vec<_>>();
    assert_eq!(values(&resumed), values(&straight));
    assert_eq!(resumed.best, straight.best);
}

#[test]
fn checkpoint_from_another_run_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.json");
    let c = Constraints::for_pumps(0);
    let opts = OptimizerOptions { budget: 5, checkpoint: Some(path.clone()), ..Default::default() };
    optimize(&single_band(10), ObjectiveSpec::MeanIr, &c, &opts).unwrap();
    let e = optimize(&single_band(11), ObjectiveSpec::MeanIr, &c, &opts).unwrap_err();
    assert!(matches!(e, OptimizeError::CheckpointMismatch { .. }), "{e}");
    let other_seed = OptimizerOptions { seed: 1, ..opts };
    let e = optimize(&single_band(10), ObjectiveSpec::MeanIr, &c, &other_seed).unwrap_err();
    assert!(matches!(e, OptimizeError::CheckpointMismatch { .. }), "{e}");
}

#[test]
fn flatness_objective_narrows_the_rate_spread() {
    let s = load_scenario(
        r#"
isrs = true
[grid]
spacing_ghz = 150.0
symbol_rate_gbd = 100.0
roll_off = 0.1
[[bands]]
name = "C"
f_min_thz = 191.0
f_max_thz = 192.05
channels = 7
noise_figure_db = 5.0
[[bands]]
name = "S"
f_min_thz = 199.0
f_max_thz = 200.05
channels = 7
noise_figure_db = 7.0
[link]
span_count = 15
length_km = 100.0
lumped_loss_db = 2.0
[solver]
z_step_km = 0.5
"#,
    )
    .unwrap();
    let opts = OptimizerOptions { budget: 250, ..Default::default() };
    let (eq1, eq2) = triband_core::optimize_flatness_compare(&s, &Constraints::for_pumps(0), &opts).unwrap();
    assert!(eq2.ir_spread_tbps <= eq1.ir_spread_tbps);
    assert!(eq2.best_value >= eq1.mean_ir_tbps - eq1.ir_spread_tbps - 1e-12);
}
