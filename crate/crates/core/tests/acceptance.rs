//! Acceptance run: one PASS/FAIL line per criterion, each with its wall-clock
//! limit. Optional arguments select criteria by number (`-- 4 10`).

use std::time::{Duration, Instant};

use triband_core::fiber::{FiberParams, FiberSpec, LossAnchor};
use triband_core::optimizer::{optimize, Constraints, ObjectiveSpec, OptimizationReport, OptimizerOptions};
use triband_core::pipeline::{evaluate_link, raman_diagnostics, summarize};
use triband_core::propagation::{link_propagate, propagate_span, SpanInputs};
use triband_core::scenario::{AmplifierSpec, GainMode, PumpSpec, SolverOptions, SpanSpec};
use triband_core::units::{dbm_to_watt, linear_to_db};
use triband_core::{load_scenario, nli_closed_form, nli_oracle, presets, OracleOptions, Scenario};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn(&mut Shared) -> Outcome,
}

/// Optimizations reused by more than one criterion.
#[derive(Default)]
struct Shared {
    unpumped_eq1: Option<OptimizationReport>,
    pumped_eq1: Option<OptimizationReport>,
}

const BUDGET: usize = 2000;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn flat_fiber_toml(name: &str, alpha_db_km: f64) -> String {
    format!(
        r#"
[fibers.{name}]
loss_anchors = [{{ freq_thz = 193.4, alpha_db_km = {alpha_db_km} }}]
rayleigh_a_db_um4_km = 0.0
dispersion = {{ lambda0_nm = 1310.0, s0_ps_nm2_km = 0.092 }}
n2_m2_w = 2.6e-20
core_radius_um = 4.1
numerical_aperture = 0.12
flat_at_thz = 193.4
raman = "synthetic_silica"
"#
    )
}

fn amp(band: &str) -> AmplifierSpec {
    AmplifierSpec { band: band.into(), noise_figure_db: 5.0, gain_mode: GainMode::RestoreLaunch }
}

fn c1_photon_flux(_: &mut Shared) -> Outcome {
    let mut p = FiberSpec::standard_smf().params().clone();
    p.loss_anchors = vec![LossAnchor { freq_thz: 193.4, alpha_db_km: 0.0 }];
    p.rayleigh_a_db_um4_km = Some(0.0);
    let fiber = FiberSpec::new(FiberParams { name: "lossless".into(), ..p }).map_err(err)?;
    let span = SpanSpec { fiber, length_km: 100.0, lumped_loss_db: 0.0, amplifiers: vec![amp("C")], pumps: vec![] };
    let f = [187.0, 200.0];
    let input = SpanInputs { freqs_thz: &f, bandwidths_ghz: &[100.0, 100.0], launch_w: &[0.1, 0.1], isrs: true, temperature_k: 300.0 };
    let prof = propagate_span(&span, &input, &SolverOptions::default()).map_err(err)?;
    let flux = |k: usize| prof.channel(0)[k] / f[0] + prof.channel(1)[k] / f[1];
    let n0 = flux(0);
    let drift = (0..prof.channel(0).len()).map(|k| ((flux(k) - n0) / n0).abs()).fold(0.0, f64::max);
    let transfer = linear_to_db(prof.channel(0).last().unwrap() / 0.1);
    check(drift < 1e-9 && transfer > 0.1, format!("max relative drift {drift:.2e}, low-frequency wave gained {transfer:.2} dB"))
}

fn c2_undepleted_gain(_: &mut Shared) -> Outcome {
    let fiber = FiberSpec::standard_smf();
    let pump = PumpSpec::backward(213.0, 25.0);
    let f = [200.0];
    let probe = [dbm_to_watt(-30.0)];
    let input = SpanInputs { freqs_thz: &f, bandwidths_ghz: &[100.0], launch_w: &probe, isrs: true, temperature_k: 300.0 };
    let span = |pumps| SpanSpec { fiber: fiber.clone(), length_km: 100.0, lumped_loss_db: 0.0, amplifiers: vec![amp("S")], pumps };
    let o = SolverOptions::default();
    let on = propagate_span(&span(vec![pump]), &input, &o).map_err(err)?;
    let off = propagate_span(&span(vec![]), &input, &o).map_err(err)?;
    let g = linear_to_db(on.channel_output_w()[0] / off.channel_output_w()[0]);
    let ap = fiber.loss_coefficient(213.0).map_err(err)?;
    let l_eff = -(-ap * 100.0).exp_m1() / ap;
    let analytic = linear_to_db((fiber.raman_gain(200.0, 213.0).map_err(err)? * pump.power_w() * l_eff).exp());
    check((g - analytic).abs() <= 0.1, format!("solver {g:.3} dB, analytic {analytic:.3} dB"))
}

fn c3_grid_convergence(_: &mut Shared) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, s) in [("default", presets::cls_default()), ("pumped", presets::cls_pumped())] {
        let coarse = link_propagate(&s).map_err(err)?;
        let solver = SolverOptions { z_step_km: s.solver().z_step_km / 2.0, ..*s.solver() };
        let fine = link_propagate(&s.with_solver(solver).map_err(err)?).map_err(err)?;
        let mut gap: f64 = 0.0;
        for (a, b) in coarse.spans.iter().zip(&fine.spans) {
            for (x, y) in a.channel_output_w().iter().zip(b.channel_output_w()) {
                gap = gap.max(linear_to_db(x / y).abs());
            }
        }
        worst = worst.max(gap);
        parts.push(format!("{name} {gap:.2e} dB"));
    }
    check(worst < 0.01, format!("largest span-end change {}", parts.join(", ")))
}

fn oracle_gap(s: &Scenario, channels: &[usize]) -> Result<(f64, Duration, Duration), String> {
    let link = link_propagate(s).map_err(err)?;
    let t = Instant::now();
    let cf = nli_closed_form(s, &link).map_err(err)?;
    let t_cf = t.elapsed();
    let t = Instant::now();
    let or = nli_oracle(s, &link, channels, &OracleOptions::default()).map_err(err)?;
    let t_or = t.elapsed();
    let gap = or.channels.iter().zip(&or.p_nli_w).map(|(&c, &p)| linear_to_db(cf.p_nli_w[c] / p).abs()).fold(0.0, f64::max);
    Ok((gap, t_cf, t_or))
}

fn nine_channel_flat() -> Result<Scenario, String> {
    let text = format!(
        r#"
isrs = false
[grid]
spacing_ghz = 118.75
symbol_rate_gbd = 100.0
roll_off = 0.1
[[bands]]
name = "C"
f_min_thz = 193.0
f_max_thz = 194.0
channels = 9
noise_figure_db = 5.0
[link]
span_count = 1
length_km = 100.0
lumped_loss_db = 0.0
fiber = "flat"
[launch]
flat_dbm = 0.0
{}"#,
        flat_fiber_toml("flat", 0.2)
    );
    load_scenario(&text).map_err(err)
}

fn thirty_channel_cls() -> Result<Scenario, String> {
    let s = load_scenario(
        r#"
isrs = true
[grid]
spacing_ghz = 118.75
symbol_rate_gbd = 100.0
roll_off = 0.1
channels_per_band = 10
band_edges = "envelope"
[[bands]]
name = "L"
f_min_thz = 184.50
f_max_thz = 190.35
noise_figure_db = 6.0
[[bands]]
name = "C"
f_min_thz = 190.75
f_max_thz = 196.60
noise_figure_db = 5.0
[[bands]]
name = "S"
f_min_thz = 197.00
f_max_thz = 202.85
noise_figure_db = 6.0
[link]
span_count = 1
length_km = 100.0
lumped_loss_db = 2.8
[launch]
flat_dbm = 3.0
"#,
    )
    .map_err(err)?;
    Ok(s)
}

fn c4_oracle(_: &mut Shared) -> Outcome {
    let nine = nine_channel_flat()?;
    let all: Vec<usize> = (0..nine.channel_count()).collect();
    let (g9, cf9, or9) = oracle_gap(&nine, &all)?;
    let thirty = thirty_channel_cls()?;
    let all: Vec<usize> = (0..thirty.channel_count()).collect();
    let (g30, cf30, or30) = oracle_gap(&thirty, &all)?;
    let fast = cf9.max(cf30) <= Duration::from_secs(1);
    let bounded = or9 + or30 <= Duration::from_secs(15 * 60);
    check(
        g9 <= 0.5 && g30 <= 1.0 && fast && bounded,
        format!(
            "9-channel ISRS-off gap {g9:.3} dB, 30-channel ISRS-on gap {g30:.3} dB; closed form {:.0} ms, oracle {:.1} s",
            cf9.max(cf30).as_secs_f64() * 1e3,
            (or9 + or30).as_secs_f64()
        ),
    )
}

/// One flat-fiber band, ISRS off, enough spans to keep the GSNR inside the
/// linear part of the rate curve.
fn single_band_link(channels: usize, spans: usize) -> Result<Scenario, String> {
    let text = format!(
        r#"
isrs = false
[grid]
spacing_ghz = 118.75
symbol_rate_gbd = 100.0
roll_off = 0.1
[[bands]]
name = "C"
f_min_thz = 193.0
f_max_thz = 195.0
channels = {channels}
noise_figure_db = 5.0
[link]
span_count = {spans}
length_km = 100.0
lumped_loss_db = 0.0
fiber = "flat"
[launch]
flat_dbm = 0.0
{}"#,
        flat_fiber_toml("flat", 0.2)
    );
    load_scenario(&text).map_err(err)
}

fn c5_three_db_rule(_: &mut Shared) -> Outcome {
    let s = single_band_link(11, 20)?;
    // analytic optimum per channel from the uniform-launch NLI coefficient
    let probe = evaluate_link(&s).map_err(err)?;
    let p0 = s.launch_w()[0];
    let p_opt_dbm: Vec<f64> = probe
        .metrics
        .iter()
        .map(|m| {
            let eta = m.p_nli_w / p0.powi(3);
            linear_to_db((m.p_ase_total_w / (2.0 * eta)).cbrt() * 1e3)
        })
        .collect();
    let c = Constraints::for_pumps(0);
    let r = optimize(&s, ObjectiveSpec::MeanIr, &c, &OptimizerOptions { budget: BUDGET, ..Default::default() }).map_err(err)?;
    let ratio_gap = r
        .final_metrics
        .iter()
        .map(|m| (linear_to_db(m.p_ase_total_w / m.p_nli_w) - linear_to_db(2.0)).abs())
        .fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let launch_gap = mean(&r.launch_dbm) - mean(&p_opt_dbm);
    let gsnr_ok = r.final_metrics.iter().all(|m| (5.0..=25.0).contains(&m.gsnr_db));
    check(
        ratio_gap <= 0.3 && launch_gap.abs() <= 0.2 && gsnr_ok,
        format!(
            "largest |ASE/NLI - 3 dB| {ratio_gap:.3} dB, mean launch {:.3} dBm vs analytic {:.3} dBm",
            mean(&r.launch_dbm),
            mean(&p_opt_dbm)
        ),
    )
}

fn c6_isrs_direction(_: &mut Shared) -> Outcome {
    let s = presets::cls_default();
    let on = link_propagate(&s.with_isrs(true)).map_err(err)?;
    let off = link_propagate(&s.with_isrs(false)).map_err(err)?;
    let (a, b) = (on.spans[0].channel_output_w(), off.spans[0].channel_output_w());
    let plan = s.plan();
    let lo = plan.band_indices("L")[0];
    let hi = *plan.band_indices("S").last().unwrap();
    let (t_on, t_off): (f64, f64) = (a.iter().sum(), b.iter().sum());
    check(
        a[lo] > b[lo] && a[hi] < b[hi] && t_on <= t_off,
        format!(
            "lowest L {:+.2} dB, highest S {:+.2} dB, total {:+.3} dB vs loss-only",
            linear_to_db(a[lo] / b[lo]),
            linear_to_db(a[hi] / b[hi]),
            linear_to_db(t_on / t_off)
        ),
    )
}

/// Two bands on a frequency-flat fiber far enough apart that cross-band NLI
/// is negligible; the upper band's noise figure absorbs the photon-energy
/// difference so both bands see the same ASE.
fn twin_band_link(both: bool) -> Result<Scenario, String> {
    let (fa, fb) = (186.0, 224.0);
    let nf_a = 5.0;
    let nf_b = nf_a + linear_to_db(fa / fb);
    let band = |name: &str, f0: f64, nf: f64| {
        format!("[[bands]]\nname = \"{name}\"\nf_min_thz = {f0}\nf_max_thz = {}\nchannels = 8\nnoise_figure_db = {nf}\n", f0 + 1.0)
    };
    let mut bands = band("A", fa, nf_a);
    if both {
        bands.push_str(&band("B", fb, nf_b));
    }
    let text = format!(
        r#"
isrs = false
[grid]
spacing_ghz = 118.75
symbol_rate_gbd = 100.0
roll_off = 0.1
{bands}
[link]
span_count = 20
length_km = 100.0
lumped_loss_db = 0.0
fiber = "flat"
[launch]
flat_dbm = 1.0
{}"#,
        flat_fiber_toml("flat", 0.2)
    );
    load_scenario(&text).map_err(err)
}

fn c7_band_symmetry(_: &mut Shared) -> Outcome {
    let two = twin_band_link(true)?;
    let one = twin_band_link(false)?;
    let c = Constraints::for_pumps(0);
    let opts = OptimizerOptions { budget: 600, ..Default::default() };
    let r2 = optimize(&two, ObjectiveSpec::MeanIr, &c, &opts).map_err(err)?;
    let r1 = optimize(&one, ObjectiveSpec::MeanIr, &c, &opts).map_err(err)?;
    let a = r2.summary.per_band[0].throughput_tbps;
    let b = r2.summary.per_band[1].throughput_tbps;
    let band_gap = (a - b).abs() / a.max(b);
    let total_gap = (r2.summary.throughput_tbps - 2.0 * r1.summary.throughput_tbps).abs() / r2.summary.throughput_tbps;
    // the same check at a common flat launch, free of optimizer noise
    let flat2 = summarize(&two, &evaluate_link(&two).map_err(err)?.metrics);
    let flat1 = summarize(&one, &evaluate_link(&one).map_err(err)?.metrics);
    let flat_band_gap = (flat2.per_band[0].throughput_tbps - flat2.per_band[1].throughput_tbps).abs() / flat2.per_band[0].throughput_tbps;
    let flat_total_gap = (flat2.throughput_tbps - 2.0 * flat1.throughput_tbps).abs() / flat2.throughput_tbps;
    let worst = band_gap.max(total_gap).max(flat_band_gap).max(flat_total_gap);
    check(
        worst <= 1e-3,
        format!(
            "optimized: bands {a:.4}/{b:.4} Tb/s ({:.3}%), total vs 2x single {:.3}%; flat launch: {:.4}%, {:.4}%",
            band_gap * 100.0,
            total_gap * 100.0,
            flat_band_gap * 100.0,
            flat_total_gap * 100.0
        ),
    )
}

fn pumped_constraints() -> Constraints {
    Constraints::for_pumps(3)
}

fn unpumped_eq1(shared: &mut Shared) -> Result<&OptimizationReport, String> {
    if shared.unpumped_eq1.is_none() {
        let s = presets::cls_default();
        let r = optimize(&s, ObjectiveSpec::MeanIr, &Constraints::for_pumps(0), &OptimizerOptions { budget: BUDGET, ..Default::default() })
            .map_err(err)?;
        shared.unpumped_eq1 = Some(r);
    }
    Ok(shared.unpumped_eq1.as_ref().unwrap())
}

fn pumped_eq1(shared: &mut Shared) -> Result<&OptimizationReport, String> {
    if shared.pumped_eq1.is_none() {
        let s = presets::cls_pumped();
        let r = optimize(&s, ObjectiveSpec::MeanIr, &pumped_constraints(), &OptimizerOptions { budget: BUDGET, ..Default::default() })
            .map_err(err)?;
        shared.pumped_eq1 = Some(r);
    }
    Ok(shared.pumped_eq1.as_ref().unwrap())
}

fn s_band_min(r: &OptimizationReport) -> f64 {
    r.summary.per_band.iter().find(|b| b.band == "S").map(|b| b.gsnr_min_db).unwrap_or(f64::NAN)
}

fn c8_raman_benefit(shared: &mut Shared) -> Outcome {
    let base = s_band_min(unpumped_eq1(shared)?);
    let r = pumped_eq1(shared)?;
    let pumped = s_band_min(r);
    let c = pumped_constraints();
    let within_caps = r.pumps.iter().zip(&c.pump_caps_dbm).all(|(p, cap)| p.power_dbm <= cap + 1e-9 && p.freq_thz >= c.pump_freq_floor_thz - 1e-9);
    let total_w: f64 = r.pumps.iter().map(|p| p.power_w()).sum();
    let s = r.best.apply(&presets::cls_pumped()).map_err(err)?;
    let link = link_propagate(&s).map_err(err)?;
    let diag = raman_diagnostics(&s, &link).map_err(err)?.ok_or("no pumps in the optimized scenario")?;
    let s_idx = s.plan().band_indices("S");
    let best = *s_idx
        .iter()
        .max_by(|&&i, &&j| diag.on_off_gain_db[i].total_cmp(&diag.on_off_gain_db[j]))
        .unwrap();
    let nf = diag.equivalent_nf_db[best].unwrap_or(f64::NAN);
    check(
        pumped - base >= 3.0 && nf < 0.0 && within_caps && total_w <= c.total_pump_cap_w * 1.01,
        format!(
            "S-band min GSNR {base:.2} -> {pumped:.2} dB ({:+.2} dB); channel {best}: on/off gain {:.2} dB, equivalent NF {nf:.2} dB; pumps {}",
            pumped - base,
            diag.on_off_gain_db[best],
            r.pumps.iter().map(|p| format!("{:.3} THz {:.2} dBm", p.freq_thz, p.power_dbm)).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c9_flatness(shared: &mut Shared) -> Outcome {
    let eq1 = pumped_eq1(shared)?.clone();
    let options = OptimizerOptions { budget: BUDGET, initial: Some(eq1.best.clone()), ..Default::default() };
    let eq2 = optimize(&presets::cls_pumped(), ObjectiveSpec::MeanIrMinusSpread, &pumped_constraints(), &options).map_err(err)?;
    let (p1, p2) = (eq1.summary.gsnr_pp_db, eq2.summary.gsnr_pp_db);
    let (t1, t2) = (eq1.summary.throughput_tbps, eq2.summary.throughput_tbps);
    let loss = (t1 - t2) / t1;
    check(
        p2 < p1 && loss <= 0.10,
        format!("GSNR peak-to-peak {p1:.2} -> {p2:.2} dB, throughput {t1:.2} -> {t2:.2} Tb/s ({:+.2}%)", -loss * 100.0),
    )
}

fn c10_cubic(_: &mut Shared) -> Outcome {
    let s = presets::cls_default().with_isrs(false);
    let x: f64 = 1.7;
    let scaled = s.with_launch_dbm(s.launch_dbm().iter().map(|p| p + linear_to_db(x)).collect()).map_err(err)?;
    let a = nli_closed_form(&s, &link_propagate(&s).map_err(err)?).map_err(err)?;
    let b = nli_closed_form(&scaled, &link_propagate(&scaled).map_err(err)?).map_err(err)?;
    let worst = a.p_nli_w.iter().zip(&b.p_nli_w).map(|(p, q)| (q / (p * x.powi(3)) - 1.0).abs()).fold(0.0, f64::max);
    check(worst <= 1e-6, format!("largest relative deviation from x^3 {worst:.2e}"))
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "photon-flux conservation", limit: Duration::from_secs(1), run: c1_photon_flux },
        Criterion { id: 2, name: "undepleted-pump analytic gain", limit: Duration::from_secs(5), run: c2_undepleted_gain },
        Criterion { id: 3, name: "grid convergence", limit: Duration::from_secs(60), run: c3_grid_convergence },
        Criterion { id: 4, name: "closed form vs oracle", limit: Duration::from_secs(15 * 60 + 1), run: c4_oracle },
        Criterion { id: 5, name: "3-dB rule emergence", limit: Duration::from_secs(5 * 60), run: c5_three_db_rule },
        Criterion { id: 6, name: "ISRS direction", limit: Duration::from_secs(60), run: c6_isrs_direction },
        Criterion { id: 7, name: "band symmetry", limit: Duration::from_secs(5 * 60), run: c7_band_symmetry },
        Criterion { id: 8, name: "Raman benefit", limit: Duration::from_secs(30 * 60), run: c8_raman_benefit },
        Criterion { id: 9, name: "flatness objective", limit: Duration::from_secs(30 * 60), run: c9_flatness },
        Criterion { id: 10, name: "cubic homogeneity", limit: Duration::from_secs(10), run: c10_cubic },
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let outcome = (c.run)(&mut shared);
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.limit;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let timing = format!("{:.2} s of {} s", elapsed.as_secs_f64(), c.limit.as_secs());
        println!("{} {:>2} {}: {detail} [{timing}{}]", if pass { "PASS" } else { "FAIL" }, c.id, c.name, if in_time { "" } else { ", over time" });
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
