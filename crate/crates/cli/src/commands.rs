use std::path::{Path, PathBuf};

use serde::Serialize;
use triband_core::nli::{nli_closed_form, nli_oracle, OracleOptions};
use triband_core::optimizer::{default_pumps, optimize as run_optimize, Constraints, LaunchMode, ObjectiveSpec, OptimizerOptions};
use triband_core::pipeline::{simulate as run_simulate, summarize, write_metrics_csv, RamanDiagnostics, Summary};
use triband_core::propagation::link_propagate;
use triband_core::units::linear_to_db;
use triband_core::{evaluate_link, load_scenario_file, presets, Scenario};

use crate::error::CliError;
use crate::output::OutDir;
use crate::{Common, Launch, Objective, OnOff, OptimizeArgs, OracleArgs, SimulateArgs, SweepArgs, ValidateArgs, OUT_ENV};

const CHECKPOINT_NAME: &str = "optimize.checkpoint.json";

fn load(spec: &str) -> Result<Scenario, CliError> {
    match spec.strip_prefix("preset:") {
        Some("cls_default") => Ok(presets::cls_default()),
        Some("cls_pumped") => Ok(presets::cls_pumped()),
        Some(other) => Err(CliError::Config(format!("unknown preset {other:?} (known: cls_default, cls_pumped)"))),
        None => Ok(load_scenario_file(Path::new(spec))?),
    }
}

fn load_common(c: &Common) -> Result<(Scenario, OutDir), CliError> {
    let mut scenario = load(&c.scenario)?;
    match c.isrs {
        Some(OnOff::On) => scenario = scenario.with_isrs(true),
        Some(OnOff::Off) => scenario = scenario.with_isrs(false),
        None => {}
    }
    let root = c
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("triband-out"));
    Ok((scenario, OutDir::new(root)))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    scenario_hash: String,
    isrs: bool,
    #[serde(flatten)]
    summary: &'a Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    raman: Option<&'a RamanDiagnostics>,
    warnings: &'a [String],
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (scenario, mut out) = load_common(&args.common)?;
    let result = run_simulate(&scenario)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let eval = &result.evaluation;
    let hash = scenario.hash();

    out.create()?;
    out.write("scenario.toml", scenario.to_toml().as_bytes())?;
    out.write("metrics.csv", &csv_bytes(|b| write_metrics_csv(&scenario, &eval.metrics, b)))?;
    out.write("nli.csv", &csv_bytes(|b| eval.nli.write_csv(b)))?;
    let mut written: Vec<*const triband_core::PowerProfile> = Vec::new();
    for (s, profile) in eval.link.spans.iter().enumerate() {
        // identical spans share one profile; write it once
        let ptr = std::sync::Arc::as_ptr(profile);
        if written.contains(&ptr) {
            continue;
        }
        written.push(ptr);
        out.write(&format!("profiles/span{s:02}.csv"), &csv_bytes(|b| profile.write_csv(b)))?;
    }
    let summary = SimulationSummary {
        scenario_hash: hash.clone(),
        isrs: scenario.isrs_enabled(),
        summary: &result.summary,
        raman: result.raman.as_ref(),
        warnings: &result.warnings,
    };
    out.write("summary.json", &json(&summary))?;
    println!(
        "throughput {:.3} Tb/s, GSNR {:.2}..{:.2} dB, outputs in {}",
        result.summary.throughput_tbps,
        result.summary.gsnr_min_db,
        result.summary.gsnr_max_db,
        out.root().display()
    );
    out.finish("simulate", &hash, None)
}

pub fn optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let (mut scenario, mut out) = load_common(&args.common)?;
    match args.pumps.as_deref() {
        None => {}
        Some("none") => scenario = scenario.with_pumps(&[])?,
        Some(n) => {
            let n: usize = n.parse().map_err(|_| CliError::Config(format!("--pumps expects a count or `none`, got {n:?}")))?;
            scenario = scenario.with_pumps(&default_pumps(n, &Constraints::for_pumps(n)))?;
        }
    }
    let pump_count = scenario
        .pump_count()
        .ok_or_else(|| CliError::Infeasible("spans have different pump counts".into()))?;
    let mut constraints = Constraints::for_pumps(pump_count);
    if let Some(caps) = &args.pump_caps {
        constraints.pump_caps_dbm = caps.clone();
    }
    constraints.total_pump_cap_w = args.total_pump_cap_w;
    constraints.pump_freq_floor_thz = args.pump_freq_floor;
    constraints.launch_min_dbm = args.launch_min;
    constraints.launch_max_dbm = args.launch_max;
    constraints.optimize_pump_freqs = !args.fixed_pump_freqs;
    constraints.check(&scenario)?;

    let objective = match args.objective {
        Objective::Eq1 => ObjectiveSpec::MeanIr,
        Objective::Eq2 => ObjectiveSpec::MeanIrMinusSpread,
    };
    let launch_mode = match args.launch_mode {
        Launch::PerChannel => LaunchMode::PerChannel,
        Launch::PerBandTilt => LaunchMode::PerBandTilt,
    };
    out.create()?;
    let checkpoint = out.root().join(CHECKPOINT_NAME);
    if !args.resume && checkpoint.exists() {
        std::fs::remove_file(&checkpoint).map_err(|e| CliError::io(&checkpoint, e))?;
    }
    let options = OptimizerOptions {
        budget: args.budget as usize,
        seed: args.seed,
        launch_mode,
        checkpoint: Some(checkpoint.clone()),
        ..Default::default()
    };
    let report = run_optimize(&scenario, objective, &constraints, &options)?;
    let best = report.best.apply(&scenario)?;
    let hash = scenario.hash();

    out.write("scenario.toml", scenario.to_toml().as_bytes())?;
    out.write("optimized_scenario.toml", best.to_toml().as_bytes())?;
    out.write("metrics.csv", &csv_bytes(|b| write_metrics_csv(&best, &report.final_metrics, b)))?;
    out.write("report.json", report.to_json().as_bytes())?;
    if checkpoint.exists() {
        std::fs::remove_file(&checkpoint).map_err(|e| CliError::io(&checkpoint, e))?;
    }
    println!(
        "{:?}: objective {:.5} Tb/s (mean IR {:.5}, spread {:.5}), throughput {:.3} Tb/s after {} evaluations",
        objective, report.best_value, report.mean_ir_tbps, report.ir_spread_tbps, report.summary.throughput_tbps, report.evaluations
    );
    out.finish("optimize", &hash, Some(args.seed))
}

pub fn oracle_check(args: &OracleArgs) -> Result<(), CliError> {
    let (scenario, mut out) = load_common(&args.common)?;
    let link = link_propagate(&scenario)?;
    let cf = nli_closed_form(&scenario, &link)?;
    let options = OracleOptions { rel_tol: args.rel_tol, ..Default::default() };
    let oracle = nli_oracle(&scenario, &link, &args.channels, &options)?;

    let mut rows = Vec::new();
    for (k, &ch) in oracle.channels.iter().enumerate() {
        let delta = linear_to_db(cf.p_nli_w[ch] / oracle.p_nli_w[k]);
        rows.push((ch, oracle.freqs_thz[k], cf.p_nli_w[ch], oracle.p_nli_w[k], delta));
    }
    let table = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["channel", "freq_THz", "P_NLI_cf_W", "P_NLI_oracle_W", "delta_dB"])?;
        for (ch, f, a, o, d) in &rows {
            w.write_record(&[ch.to_string(), format!("{f:.6}"), format!("{a:.6e}"), format!("{o:.6e}"), format!("{d:.4}")])?;
        }
        w.flush()
    });
    let hash = scenario.hash();
    out.create()?;
    out.write("scenario.toml", scenario.to_toml().as_bytes())?;
    out.write("oracle_check.csv", &table)?;
    out.finish("oracle-check", &hash, None)?;

    let mut worst: Vec<_> = rows.iter().filter(|r| !(r.4.abs() <= args.tol)).collect();
    worst.sort_by(|a, b| b.4.abs().total_cmp(&a.4.abs()));
    let max_gap = rows.iter().map(|r| r.4.abs()).fold(0.0, f64::max);
    if worst.is_empty() {
        println!("{} channels within {} dB (largest gap {max_gap:.3} dB)", rows.len(), args.tol);
        return Ok(());
    }
    let list: Vec<String> = worst.iter().take(5).map(|r| format!("channel {} ({:+.3} dB)", r.0, r.4)).collect();
    Err(CliError::Tolerance(format!(
        "{} of {} channels exceed {} dB; worst: {}",
        worst.len(),
        rows.len(),
        args.tol,
        list.join(", ")
    )))
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    if !(args.step > 0.0) || !(args.to >= args.from) {
        return Err(CliError::Config("sweep needs --step > 0 and --to >= --from".into()));
    }
    let (scenario, mut out) = load_common(&args.common)?;
    let n = ((args.to - args.from) / args.step + 1e-9).floor() as usize + 1;
    let bands: Vec<String> = scenario.plan().bands().iter().map(|b| b.name.clone()).collect();
    let mut header = vec![
        "launch_dBm".to_string(),
        "throughput_Tbps".into(),
        "mean_IR_Tbps".into(),
        "GSNR_min_dB".into(),
        "GSNR_max_dB".into(),
    ];
    header.extend(bands.iter().map(|b| format!("throughput_{b}_Tbps")));
    let mut lines = vec![header];
    for k in 0..n {
        let p = args.from + k as f64 * args.step;
        let s = scenario.with_launch_dbm(vec![p; scenario.channel_count()])?;
        let eval = evaluate_link(&s)?;
        let sum = summarize(&s, &eval.metrics);
        let mut row = vec![
            format!("{p:.3}"),
            format!("{:.6}", sum.throughput_tbps),
            format!("{:.6}", sum.mean_ir_tbps),
            format!("{:.4}", sum.gsnr_min_db),
            format!("{:.4}", sum.gsnr_max_db),
        ];
        row.extend(sum.per_band.iter().map(|b| format!("{:.6}", b.throughput_tbps)));
        lines.push(row);
    }
    let table = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for l in &lines {
            w.write_record(l)?;
        }
        w.flush()
    });
    let hash = scenario.hash();
    out.create()?;
    out.write("scenario.toml", scenario.to_toml().as_bytes())?;
    out.write("sweep.csv", &table)?;
    println!("{n} launch powers evaluated, table in {}", out.root().join("sweep.csv").display());
    out.finish("sweep", &hash, None)
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let s = load(&args.scenario)?;
    let plan = s.plan();
    let bands: Vec<String> = plan.bands().iter().map(|b| format!("{} ({})", b.name, plan.band_indices(&b.name).len())).collect();
    println!("channels: {} in bands {}", plan.len(), bands.join(", "));
    println!("spans: {}, pumps per span: {}", s.spans().len(), s.pump_count().map_or("varies".to_string(), |n| n.to_string()));
    println!("isrs: {}", if s.isrs_enabled() { "on" } else { "off" });
    println!("hash: {}", s.hash());
    Ok(())
}
