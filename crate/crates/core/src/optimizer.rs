//! Constrained maximisation of the mean information rate (optionally minus
//! its spread) over the launch spectrum and the Raman pumps.
//!
//! Stage 1 runs Nelder–Mead on a per-band offset and tilt plus the pump
//! powers and frequencies. Stage 2 refines every decision variable by
//! cyclic coordinate search with a per-coordinate step that halves on
//! failure from 0.5 dB down to 0.05 dB. Every evaluated point is projected
//! onto the constraint box, rounded to a 0.01 dB / 1 GHz grid and cached,
//! so revisiting a point is free and a checkpoint can be replayed exactly.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ChannelMetrics;
use crate::pipeline::{evaluate_link_warm, summarize, LinkEvaluation, SimulationError, Summary};
use crate::propagation::LinkProfiles;
use crate::scenario::{ChannelPlan, PumpSpec, Scenario, ScenarioError};
use crate::units::{dbm_to_watt, linear_to_db};

/// Score recorded for an evaluation that failed, Tb/s.
pub const FAILED_EVALUATION: f64 = -1e9;
/// Score lost per dB of total pump power above the cap, Tb/s.
pub const PUMP_PENALTY_PER_DB: f64 = 0.1;
/// Pump frequencies tried first, THz.
pub const DEFAULT_PUMP_FREQS_THZ: [f64; 3] = [212.0, 214.0, 217.0];

const POWER_GRID_DB: f64 = 0.01;
const FREQ_GRID_THZ: f64 = 0.001;
const STEP_START: f64 = 0.5;
const STEP_FLOOR: f64 = 0.05;
/// THz of pump detuning per dB-equivalent step unit.
const FREQ_UNIT_THZ: f64 = 0.2;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
    #[error("budget must be at least one evaluation")]
    ZeroBudget,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} does not match this run: {reason}")]
    CheckpointMismatch { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Mean information rate over all channels.
    MeanIr,
    /// Mean information rate minus `|IR_max − IR_min|`.
    MeanIrMinusSpread,
}

impl ObjectiveSpec {
    pub fn value(&self, rates: &[f64]) -> f64 {
        let (mean, spread) = mean_and_spread(rates);
        match self {
            ObjectiveSpec::MeanIr => mean,
            ObjectiveSpec::MeanIrMinusSpread => mean - spread,
        }
    }
}

pub fn mean_and_spread(rates: &[f64]) -> (f64, f64) {
    if rates.is_empty() {
        return (0.0, 0.0);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let (lo, hi) = rates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    (mean, hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchMode {
    /// One launch power per channel.
    PerChannel,
    /// Per band, an offset (dBm at the band centre) and a linear tilt (dB
    /// from the lowest to the highest channel).
    PerBandTilt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub launch_mode: LaunchMode,
    /// dBm per channel, or `[offset, tilt]` per band in band order.
    pub launch_params: Vec<f64>,
    pub pump_powers_dbm: Vec<f64>,
    pub pump_freqs_thz: Vec<f64>,
}

impl DecisionVector {
    /// Flat launch with pumps, in the given mode.
    pub fn flat(plan: &ChannelPlan, mode: LaunchMode, launch_dbm: f64, pumps: &[PumpSpec]) -> Self {
        let launch_params = match mode {
            LaunchMode::PerChannel => vec![launch_dbm; plan.len()],
            LaunchMode::PerBandTilt => plan.bands().iter().flat_map(|_| [launch_dbm, 0.0]).collect(),
        };
        DecisionVector {
            launch_mode: mode,
            launch_params,
            pump_powers_dbm: pumps.iter().map(|p| p.power_dbm).collect(),
            pump_freqs_thz: pumps.iter().map(|p| p.freq_thz).collect(),
        }
    }

    /// Launch power per channel, dBm (not clipped).
    pub fn launch_dbm(&self, plan: &ChannelPlan) -> Vec<f64> {
        match self.launch_mode {
            LaunchMode::PerChannel => self.launch_params.clone(),
            LaunchMode::PerBandTilt => {
                let mut out = vec![0.0; plan.len()];
                for (b, band) in plan.bands().iter().enumerate() {
                    let idx = plan.band_indices(&band.name);
                    let (offset, tilt) = (self.launch_params[2 * b], self.launch_params[2 * b + 1]);
                    let last = idx.len().saturating_sub(1).max(1) as f64;
                    for (k, &i) in idx.iter().enumerate() {
                        let x = if idx.len() > 1 { k as f64 / last - 0.5 } else { 0.0 };
                        out[i] = offset + tilt * x;
                    }
                }
                out
            }
        }
    }

    pub fn pumps(&self) -> Vec<PumpSpec> {
        self.pump_freqs_thz.iter().zip(&self.pump_powers_dbm).map(|(&f, &p)| PumpSpec::backward(f, p)).collect()
    }

    /// The scenario with this launch spectrum and these pumps.
    pub fn apply(&self, scenario: &Scenario) -> Result<Scenario, ScenarioError> {
        let s = scenario.with_launch_dbm(self.launch_dbm(scenario.plan()))?;
        if self.pump_powers_dbm.is_empty() && scenario.pump_count() == Some(0) {
            Ok(s)
        } else {
            s.with_pumps(&self.pumps())
        }
    }

    fn total_pump_w(&self) -> f64 {
        self.pump_powers_dbm.iter().map(|&p| dbm_to_watt(p)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub launch_min_dbm: f64,
    pub launch_max_dbm: f64,
    /// One cap per pump, dBm.
    pub pump_caps_dbm: Vec<f64>,
    pub pump_min_dbm: f64,
    pub pump_freq_floor_thz: f64,
    pub pump_freq_ceiling_thz: f64,
    pub total_pump_cap_w: f64,
    /// When false the pump frequencies stay at their initial values.
    pub optimize_pump_freqs: bool,
}

impl Constraints {
    /// Launch within [−10, 10] dBm; three pumps capped at 24, 24 and 27 dBm
    /// (other counts at 24 dBm each) above 211.5 THz with 1 W in total.
    pub fn for_pumps(pump_count: usize) -> Self {
        let pump_caps_dbm = if pump_count == 3 { vec![24.0, 24.0, 27.0] } else { vec![24.0; pump_count] };
        Constraints {
            launch_min_dbm: -10.0,
            launch_max_dbm: 10.0,
            pump_caps_dbm,
            pump_min_dbm: 0.0,
            pump_freq_floor_thz: 211.5,
            pump_freq_ceiling_thz: 225.0,
            total_pump_cap_w: 1.0,
            optimize_pump_freqs: true,
        }
    }

    /// Checks internal consistency and agreement with the scenario.
    pub fn check(&self, scenario: &Scenario) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::Infeasible(m));
        if !(self.launch_min_dbm <= self.launch_max_dbm) || !self.launch_min_dbm.is_finite() || !self.launch_max_dbm.is_finite() {
            return bad(format!("launch bounds [{}, {}] dBm are empty", self.launch_min_dbm, self.launch_max_dbm));
        }
        let Some(n) = scenario.pump_count() else {
            return bad("spans have different pump counts".into());
        };
        if self.pump_caps_dbm.len() != n {
            return bad(format!("{} pump caps for {n} pumps", self.pump_caps_dbm.len()));
        }
        if n == 0 {
            return Ok(());
        }
        if let Some(c) = self.pump_caps_dbm.iter().find(|&&c| !(c >= self.pump_min_dbm)) {
            return bad(format!("pump cap {c} dBm is below the minimum {} dBm", self.pump_min_dbm));
        }
        let (lo, hi) = crate::fiber::VALIDITY_WINDOW_THZ;
        if !(self.pump_freq_floor_thz <= self.pump_freq_ceiling_thz) || self.pump_freq_floor_thz < lo || self.pump_freq_ceiling_thz > hi {
            return bad(format!(
                "pump frequency range [{}, {}] THz is empty or outside [{lo}, {hi}] THz",
                self.pump_freq_floor_thz, self.pump_freq_ceiling_thz
            ));
        }
        let max_channel = scenario.plan().freqs_thz().into_iter().fold(f64::MIN, f64::max);
        if self.pump_freq_floor_thz <= max_channel {
            return bad(format!("pump frequency floor {} THz overlaps the channels", self.pump_freq_floor_thz));
        }
        if !(self.total_pump_cap_w > 0.0) {
            return bad("total pump cap must be positive".into());
        }
        let caps_w: f64 = self.pump_caps_dbm.iter().map(|&c| dbm_to_watt(c)).sum();
        if caps_w > 1.01 * self.total_pump_cap_w {
            return bad(format!("pump caps add up to {caps_w:.3} W, above the {} W total", self.total_pump_cap_w));
        }
        if n as f64 * dbm_to_watt(self.pump_min_dbm) > self.total_pump_cap_w {
            return bad("minimum pump powers exceed the total cap".into());
        }
        Ok(())
    }

    /// Box projection, then uniform pump power reduction to the total cap.
    /// Returns the feasible point and the excess (dB) that was removed.
    pub fn project(&self, dv: &DecisionVector, plan: &ChannelPlan) -> (DecisionVector, f64) {
        let mut out = dv.clone();
        let span = self.launch_max_dbm - self.launch_min_dbm;
        match dv.launch_mode {
            LaunchMode::PerChannel => {
                for p in &mut out.launch_params {
                    *p = p.clamp(self.launch_min_dbm, self.launch_max_dbm);
                }
            }
            LaunchMode::PerBandTilt => {
                for pair in out.launch_params.chunks_mut(2) {
                    pair[0] = pair[0].clamp(self.launch_min_dbm, self.launch_max_dbm);
                    pair[1] = pair[1].clamp(-span, span);
                }
                // the expanded launch must also be inside the box
                let launch = out.launch_dbm(plan);
                for (b, band) in plan.bands().iter().enumerate() {
                    let idx = plan.band_indices(&band.name);
                    let lo = idx.iter().map(|&i| launch[i]).fold(f64::INFINITY, f64::min);
                    let hi = idx.iter().map(|&i| launch[i]).fold(f64::NEG_INFINITY, f64::max);
                    let (offset, tilt) = (out.launch_params[2 * b], out.launch_params[2 * b + 1]);
                    let shrink = [
                        if hi > self.launch_max_dbm { (self.launch_max_dbm - offset) / (hi - offset) } else { 1.0 },
                        if lo < self.launch_min_dbm { (offset - self.launch_min_dbm) / (offset - lo) } else { 1.0 },
                    ];
                    let f = shrink[0].min(shrink[1]).clamp(0.0, 1.0);
                    out.launch_params[2 * b + 1] = tilt * f;
                }
            }
        }
        for (p, cap) in out.pump_powers_dbm.iter_mut().zip(&self.pump_caps_dbm) {
            *p = p.clamp(self.pump_min_dbm, *cap);
        }
        for f in &mut out.pump_freqs_thz {
            *f = f.clamp(self.pump_freq_floor_thz, self.pump_freq_ceiling_thz);
        }
        let total = out.total_pump_w();
        let mut excess_db = 0.0;
        if total > self.total_pump_cap_w {
            excess_db = linear_to_db(total / self.total_pump_cap_w);
            // a uniform cut keeps the ratios; the floor can only be hit when
            // the minimum powers alone are close to the cap
            for p in &mut out.pump_powers_dbm {
                *p = (*p - excess_db).max(self.pump_min_dbm);
            }
        }
        (out, excess_db)
    }
}

/// Runs the link and scores the decision vector.
pub fn evaluate_objective(scenario: &Scenario, dv: &DecisionVector, obj: ObjectiveSpec) -> Result<f64, OptimizeError> {
    let s = dv.apply(scenario)?;
    let eval = evaluate_link_warm(&s, None)?;
    Ok(obj.value(&eval.info_rates()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub budget: usize,
    pub seed: u64,
    pub launch_mode: LaunchMode,
    /// Starting point; defaults to a flat 0 dBm launch with pumps at
    /// their caps minus 3 dB at [`DEFAULT_PUMP_FREQS_THZ`].
    pub initial: Option<DecisionVector>,
    /// Fraction of the budget given to stage 1.
    pub stage1_fraction: f64,
    /// Progress file rewritten every `checkpoint_every` evaluations and
    /// replayed on the next run with the same settings.
    #[serde(skip)]
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            budget: 2000,
            seed: 0,
            launch_mode: LaunchMode::PerChannel,
            initial: None,
            stage1_fraction: 0.3,
            checkpoint: None,
            checkpoint_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub value: f64,
    pub best_so_far: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub objective: ObjectiveSpec,
    pub seed: u64,
    pub budget: usize,
    pub scenario_hash: String,
    pub constraints: Constraints,
    pub best: DecisionVector,
    /// Objective minus any pump-cap penalty at the best point.
    pub best_value: f64,
    pub mean_ir_tbps: f64,
    pub ir_spread_tbps: f64,
    pub launch_dbm: Vec<f64>,
    pub pumps: Vec<PumpSpec>,
    pub summary: Summary,
    pub final_metrics: Vec<ChannelMetrics>,
    pub evaluations: usize,
    pub stage1_evaluations: usize,
    pub failed_evaluations: usize,
    pub cache_hits: usize,
    /// True when every coordinate reached the smallest step without
    /// improving before the budget ran out.
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub wall_clock_s: f64,
}

impl OptimizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

type Key = Vec<i64>;

fn quantize(dv: &DecisionVector) -> (DecisionVector, Key) {
    let q = |x: f64, g: f64| (x / g).round() as i64;
    let mut key = Vec::with_capacity(dv.launch_params.len() + 2 * dv.pump_powers_dbm.len() + 1);
    key.push(dv.launch_mode as i64);
    key.extend(dv.launch_params.iter().map(|&x| q(x, POWER_GRID_DB)));
    key.extend(dv.pump_powers_dbm.iter().map(|&x| q(x, POWER_GRID_DB)));
    key.extend(dv.pump_freqs_thz.iter().map(|&x| q(x, FREQ_GRID_THZ)));
    let snap = |x: f64, g: f64| q(x, g) as f64 * g;
    let out = DecisionVector {
        launch_mode: dv.launch_mode,
        launch_params: dv.launch_params.iter().map(|&x| snap(x, POWER_GRID_DB)).collect(),
        pump_powers_dbm: dv.pump_powers_dbm.iter().map(|&x| snap(x, POWER_GRID_DB)).collect(),
        pump_freqs_thz: dv.pump_freqs_thz.iter().map(|&x| snap(x, FREQ_GRID_THZ)).collect(),
    };
    (out, key)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedScore {
    score: f64,
    error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    scenario_hash: String,
    objective: ObjectiveSpec,
    seed: u64,
    constraints: Constraints,
    /// Evaluated points in evaluation order.
    points: Vec<(Key, CachedScore)>,
}

struct Best {
    dv: DecisionVector,
    score: f64,
    metrics: Option<Arc<Vec<ChannelMetrics>>>,
    link: Option<Arc<LinkProfiles>>,
}

/// Shared bookkeeping: projection, cache, budget, trace, incumbent.
struct Evaluator<'a> {
    scenario: &'a Scenario,
    obj: ObjectiveSpec,
    constraints: &'a Constraints,
    budget: usize,
    cache: HashMap<Key, CachedScore>,
    replay: HashMap<Key, CachedScore>,
    order: Vec<(Key, CachedScore)>,
    trace: Vec<TraceEntry>,
    best: Option<Best>,
    failed: usize,
    cache_hits: usize,
    checkpoint: Option<(PathBuf, usize, String, u64)>,
}

enum Outcome {
    Done(f64),
    OutOfBudget,
}

impl<'a> Evaluator<'a> {
    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    fn best_score(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.score)
    }

    /// Evaluates a batch of raw points, in parallel where uncached.
    fn batch(&mut self, raw: &[DecisionVector]) -> Vec<Outcome> {
        let plan = self.scenario.plan();
        let prepared: Vec<(DecisionVector, Key, f64)> = raw
            .iter()
            .map(|dv| {
                let (feasible, excess) = self.constraints.project(dv, plan);
                let (q, key) = quantize(&feasible);
                (q, key, excess)
            })
            .collect();

        // decide which points are evaluated now, in batch order
        let mut todo: Vec<usize> = Vec::new();
        let mut replayed: Vec<usize> = Vec::new();
        let mut remaining = self.remaining();
        for (n, (_, key, _)) in prepared.iter().enumerate() {
            if self.cache.contains_key(key) || todo.iter().chain(&replayed).any(|&m| prepared[m].1 == *key) {
                continue;
            }
            if remaining == 0 {
                break;
            }
            remaining -= 1;
            if self.replay.contains_key(key) {
                replayed.push(n);
            } else {
                todo.push(n);
            }
        }

        let warm = self.best.as_ref().and_then(|b| b.link.clone());
        let scenario = self.scenario;
        let obj = self.obj;
        let results: Vec<(usize, Result<LinkEvaluation, String>)> = todo
            .par_iter()
            .map(|&n| {
                let r = prepared[n]
                    .0
                    .apply(scenario)
                    .map_err(|e| e.to_string())
                    .and_then(|s| evaluate_link_warm(&s, warm.as_deref()).map_err(|e| e.to_string()));
                (n, r)
            })
            .collect();
        let mut fresh: HashMap<usize, Result<LinkEvaluation, String>> = results.into_iter().collect();

        for n in 0..prepared.len() {
            let (dv, key, excess) = &prepared[n];
            if self.cache.contains_key(key) {
                continue;
            }
            let (cached, eval) = if let Some(r) = fresh.remove(&n) {
                match r {
                    Ok(e) => {
                        let score = obj.value(&e.info_rates()) - PUMP_PENALTY_PER_DB * excess;
                        (CachedScore { score, error: None }, Some(e))
                    }
                    Err(msg) => (CachedScore { score: FAILED_EVALUATION, error: Some(msg) }, None),
                }
            } else if let Some(c) = self.replay.remove(key) {
                (c, None)
            } else {
                continue;
            };
            if cached.error.is_some() {
                self.failed += 1;
            }
            let improved = cached.score > self.best_score();
            if improved {
                self.best = Some(Best {
                    dv: dv.clone(),
                    score: cached.score,
                    metrics: eval.as_ref().map(|e| Arc::new(e.metrics.clone())),
                    link: eval.map(|e| Arc::new(e.link)),
                });
            }
            self.trace.push(TraceEntry {
                evaluation: self.trace.len(),
                value: cached.score,
                best_so_far: self.best_score(),
                error: cached.error.clone(),
            });
            self.order.push((key.clone(), cached.clone()));
            self.cache.insert(key.clone(), cached);
            self.maybe_checkpoint();
        }

        prepared
            .iter()
            .map(|(_, key, _)| match self.cache.get(key) {
                Some(c) => Outcome::Done(c.score),
                None => Outcome::OutOfBudget,
            })
            .collect()
    }

    fn one(&mut self, dv: &DecisionVector) -> Outcome {
        let before = self.trace.len();
        let out = self.batch(std::slice::from_ref(dv)).pop().expect("one outcome");
        if self.trace.len() == before && matches!(out, Outcome::Done(_)) {
            self.cache_hits += 1;
        }
        out
    }

    fn maybe_checkpoint(&self) {
        if let Some((path, every, hash, seed)) = &self.checkpoint {
            if self.trace.len().is_multiple_of(*every) {
                // progress files are best effort; the run itself does not depend on them
                if let Err(e) = self.write_checkpoint(path, hash, *seed) {
                    log::warn!("could not write checkpoint {}: {e}", path.display());
                }
            }
        }
    }

    fn write_checkpoint(&self, path: &Path, hash: &str, seed: u64) -> std::io::Result<()> {
        let cp = Checkpoint {
            scenario_hash: hash.to_string(),
            objective: self.obj,
            seed,
            constraints: self.constraints.clone(),
            points: self.order.clone(),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&cp)?)?;
        std::fs::rename(tmp, path)
    }
}

/// Unit scaling of the search variables.
struct Layout {
    mode: LaunchMode,
    n_launch: usize,
    n_pumps: usize,
    freqs: bool,
}

impl Layout {
    fn dim(&self) -> usize {
        self.n_launch + self.n_pumps * if self.freqs { 2 } else { 1 }
    }

    fn to_x(&self, dv: &DecisionVector) -> Vec<f64> {
        let mut x = dv.launch_params.clone();
        x.extend(&dv.pump_powers_dbm);
        if self.freqs {
            x.extend(dv.pump_freqs_thz.iter().map(|f| f / FREQ_UNIT_THZ));
        }
        x
    }

    fn to_dv(&self, x: &[f64], template: &DecisionVector) -> DecisionVector {
        let (launch, rest) = x.split_at(self.n_launch);
        let (powers, freqs) = rest.split_at(self.n_pumps);
        DecisionVector {
            launch_mode: self.mode,
            launch_params: launch.to_vec(),
            pump_powers_dbm: powers.to_vec(),
            pump_freqs_thz: if self.freqs {
                freqs.iter().map(|u| u * FREQ_UNIT_THZ).collect()
            } else {
                template.pump_freqs_thz.clone()
            },
        }
    }
}

/// `n` pumps 3 dB below their caps, at [`DEFAULT_PUMP_FREQS_THZ`] for up to
/// three pumps and evenly spread over 212–218 THz otherwise.
pub fn default_pumps(n: usize, constraints: &Constraints) -> Vec<PumpSpec> {
    (0..n)
        .map(|p| {
            let f = if n <= 3 { DEFAULT_PUMP_FREQS_THZ[p] } else { 212.0 + 6.0 * p as f64 / (n - 1) as f64 };
            let cap = constraints.pump_caps_dbm.get(p).copied().unwrap_or(24.0);
            PumpSpec::backward(f, cap - 3.0)
        })
        .collect()
}

fn default_initial(scenario: &Scenario, constraints: &Constraints, mode: LaunchMode) -> DecisionVector {
    let n = scenario.pump_count().unwrap_or(0);
    DecisionVector::flat(scenario.plan(), mode, 0.0, &default_pumps(n, constraints))
}

/// Best-fit offset and tilt per band of a per-channel launch.
fn to_band_tilt(dv: &DecisionVector, plan: &ChannelPlan) -> DecisionVector {
    if dv.launch_mode == LaunchMode::PerBandTilt {
        return dv.clone();
    }
    let mut params = Vec::new();
    for band in plan.bands() {
        let idx = plan.band_indices(&band.name);
        let xs: Vec<f64> = (0..idx.len()).map(|k| if idx.len() > 1 { k as f64 / (idx.len() - 1) as f64 - 0.5 } else { 0.0 }).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| dv.launch_params[i]).collect();
        let offset = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let tilt = if sxx > 0.0 { xs.iter().zip(&ys).map(|(x, y)| x * (y - offset)).sum::<f64>() / sxx } else { 0.0 };
        params.extend([offset, tilt]);
    }
    DecisionVector { launch_mode: LaunchMode::PerBandTilt, launch_params: params, ..dv.clone() }
}

fn to_per_channel(dv: &DecisionVector, plan: &ChannelPlan) -> DecisionVector {
    DecisionVector { launch_mode: LaunchMode::PerChannel, launch_params: dv.launch_dbm(plan), ..dv.clone() }
}

/// Nelder–Mead maximisation in `layout` coordinates; returns when the
/// stage budget is spent or the simplex collapses.
fn nelder_mead(ev: &mut Evaluator, layout: &Layout, start: &DecisionVector, stage_budget: usize) {
    let stop_at = ev.trace.len() + stage_budget;
    let dim = layout.dim();
    let x0 = layout.to_x(start);
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for d in 0..dim {
        let mut x = x0.clone();
        x[d] += 1.0;
        simplex.push(x);
    }
    let eval_many = |ev: &mut Evaluator, xs: &[Vec<f64>]| -> Option<Vec<f64>> {
        if ev.trace.len() >= stop_at {
            return None;
        }
        let dvs: Vec<DecisionVector> = xs.iter().map(|x| layout.to_dv(x, start)).collect();
        ev.batch(&dvs).into_iter().map(|o| if let Outcome::Done(v) = o { Some(v) } else { None }).collect()
    };
    let Some(mut values) = eval_many(ev, &simplex) else { return };

    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..].iter().map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if size < POWER_GRID_DB || values[0] - values[dim] < 1e-9 && size < 0.05 {
            return;
        }
        let centroid: Vec<f64> = (0..dim).map(|d| simplex[..dim].iter().map(|x| x[d]).sum::<f64>() / dim as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim]).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(1.0);
        let Some(vr) = eval_many(ev, std::slice::from_ref(&xr)).map(|v| v[0]) else { return };
        if vr > values[0] {
            let xe = along(2.0);
            let Some(ve) = eval_many(ev, std::slice::from_ref(&xe)).map(|v| v[0]) else { return };
            if ve > vr {
                simplex[dim] = xe;
                values[dim] = ve;
            } else {
                simplex[dim] = xr;
                values[dim] = vr;
            }
            continue;
        }
        if vr > values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = vr;
            continue;
        }
        let (xc, outside) = if vr > values[dim] { (along(0.5), true) } else { (along(-0.5), false) };
        let Some(vc) = eval_many(ev, std::slice::from_ref(&xc)).map(|v| v[0]) else { return };
        if (outside && vc >= vr) || (!outside && vc > values[dim]) {
            simplex[dim] = xc;
            values[dim] = vc;
            continue;
        }
        // shrink towards the best vertex, evaluated as one batch
        let best = simplex[0].clone();
        for x in simplex.iter_mut().skip(1) {
            for d in 0..dim {
                x[d] = best[d] + 0.5 * (x[d] - best[d]);
            }
        }
        let Some(v) = eval_many(ev, &simplex[1..]) else { return };
        values[1..].copy_from_slice(&v);
    }
}

/// Cyclic coordinate search with per-coordinate steps. Returns true when
/// every coordinate has failed at the smallest step.
fn coordinate_refine(ev: &mut Evaluator, layout: &Layout, start: &DecisionVector, seed: u64) -> bool {
    let mut x = layout.to_x(start);
    let dim = layout.dim();
    let mut step = vec![STEP_START; dim];
    let mut done = vec![false; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Outcome::Done(mut fx) = ev.one(&layout.to_dv(&x, start)) else { return false };
    loop {
        let mut order: Vec<usize> = (0..dim).filter(|&d| !done[d]).collect();
        if order.is_empty() {
            return true;
        }
        order.shuffle(&mut rng);
        for d in order {
            let mut moved = false;
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] += dir * step[d];
                match ev.one(&layout.to_dv(&y, start)) {
                    Outcome::OutOfBudget => return false,
                    Outcome::Done(fy) if fy > fx => {
                        // keep the projected coordinates so x stays feasible
                        let (p, _) = ev.constraints.project(&layout.to_dv(&y, start), ev.scenario.plan());
                        x = layout.to_x(&quantize(&p).0);
                        fx = fy;
                        moved = true;
                        break;
                    }
                    Outcome::Done(_) => {}
                }
            }
            if !moved {
                if step[d] <= STEP_FLOOR + 1e-12 {
                    done[d] = true;
                } else {
                    step[d] = (step[d] / 2.0).max(STEP_FLOOR);
                }
            }
        }
    }
}

fn load_checkpoint(path: &Path, hash: &str, obj: ObjectiveSpec, seed: u64, c: &Constraints) -> Result<Vec<(Key, CachedScore)>, OptimizeError> {
    let text = match std::fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(OptimizeError::Checkpoint { path: path.to_path_buf(), source }),
    };
    let mismatch = |reason: &str| OptimizeError::CheckpointMismatch { path: path.to_path_buf(), reason: reason.into() };
    let cp: Checkpoint = serde_json::from_slice(&text).map_err(|e| mismatch(&e.to_string()))?;
    if cp.scenario_hash != hash {
        return Err(mismatch("scenario hash differs"));
    }
    if cp.objective != obj || cp.seed != seed || &cp.constraints != c {
        return Err(mismatch("objective, seed or constraints differ"));
    }
    Ok(cp.points)
}

pub fn optimize(
    scenario: &Scenario,
    obj: ObjectiveSpec,
    constraints: &Constraints,
    options: &OptimizerOptions,
) -> Result<OptimizationReport, OptimizeError> {
    if options.budget == 0 {
        return Err(OptimizeError::ZeroBudget);
    }
    constraints.check(scenario)?;
    let started = Instant::now();
    let plan = scenario.plan();
    let hash = scenario.hash();

    let initial = options.initial.clone().unwrap_or_else(|| default_initial(scenario, constraints, options.launch_mode));
    if initial.pump_powers_dbm.len() != constraints.pump_caps_dbm.len() || initial.pump_freqs_thz.len() != initial.pump_powers_dbm.len() {
        return Err(OptimizeError::Infeasible("initial point has the wrong number of pumps".into()));
    }
    let expected = match initial.launch_mode {
        LaunchMode::PerChannel => plan.len(),
        LaunchMode::PerBandTilt => 2 * plan.bands().len(),
    };
    if initial.launch_params.len() != expected {
        return Err(OptimizeError::Infeasible(format!("initial point has {} launch parameters, expected {expected}", initial.launch_params.len())));
    }

    let mut replay = HashMap::new();
    if let Some(path) = &options.checkpoint {
        for (k, v) in load_checkpoint(path, &hash, obj, options.seed, constraints)? {
            replay.insert(k, v);
        }
    }
    let mut ev = Evaluator {
        scenario,
        obj,
        constraints,
        budget: options.budget,
        cache: HashMap::new(),
        replay,
        order: Vec::new(),
        trace: Vec::new(),
        best: None,
        failed: 0,
        cache_hits: 0,
        checkpoint: options.checkpoint.clone().map(|p| (p, options.checkpoint_every.max(1), hash.clone(), options.seed)),
    };

    let n_pumps = initial.pump_powers_dbm.len();
    let freqs = constraints.optimize_pump_freqs && n_pumps > 0;
    // the starting point is always evaluated first
    ev.one(&initial);

    let stage1 = ((options.budget as f64 * options.stage1_fraction).round() as usize).min(options.budget);
    let tilt_start = to_band_tilt(&initial, plan);
    let tilt_layout = Layout { mode: LaunchMode::PerBandTilt, n_launch: tilt_start.launch_params.len(), n_pumps, freqs };
    let done = ev.trace.len();
    if stage1 > done {
        nelder_mead(&mut ev, &tilt_layout, &tilt_start, stage1 - done);
    }
    let stage1_evaluations = ev.trace.len();

    let incumbent = ev.best.as_ref().map(|b| b.dv.clone()).unwrap_or(initial.clone());
    let refine_start = match options.launch_mode {
        LaunchMode::PerChannel => to_per_channel(&incumbent, plan),
        LaunchMode::PerBandTilt => to_band_tilt(&incumbent, plan),
    };
    let layout = Layout { mode: options.launch_mode, n_launch: refine_start.launch_params.len(), n_pumps, freqs };
    let converged = ev.remaining() > 0 && coordinate_refine(&mut ev, &layout, &refine_start, options.seed);

    if let Some((path, _, hash, seed)) = &ev.checkpoint {
        if let Err(e) = ev.write_checkpoint(path, hash, *seed) {
            log::warn!("could not write checkpoint {}: {e}", path.display());
        }
    }

    let best = ev.best.take().expect("at least one evaluation");
    if best.score <= FAILED_EVALUATION {
        let s = best.dv.apply(scenario)?;
        evaluate_link_warm(&s, None)?;
    }
    // the best point is reported in the requested launch mode
    let best_dv = match options.launch_mode {
        LaunchMode::PerChannel => to_per_channel(&best.dv, plan),
        LaunchMode::PerBandTilt => best.dv.clone(),
    };
    let final_scenario = best.dv.apply(scenario)?;
    let metrics = match best.metrics {
        Some(m) => m.as_ref().clone(),
        None => evaluate_link_warm(&final_scenario, best.link.as_deref())?.metrics,
    };
    let rates: Vec<f64> = metrics.iter().map(|m| m.info_rate_tbps).collect();
    let (mean, spread) = mean_and_spread(&rates);
    Ok(OptimizationReport {
        objective: obj,
        seed: options.seed,
        budget: options.budget,
        scenario_hash: hash,
        constraints: constraints.clone(),
        launch_dbm: final_scenario.launch_dbm().to_vec(),
        pumps: best.dv.pumps(),
        best: best_dv,
        best_value: best.score,
        mean_ir_tbps: mean,
        ir_spread_tbps: spread,
        summary: summarize(&final_scenario, &metrics),
        final_metrics: metrics,
        evaluations: ev.trace.len(),
        stage1_evaluations,
        failed_evaluations: ev.failed,
        cache_hits: ev.cache_hits,
        converged,
        trace: ev.trace,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs the mean-rate objective, then the flattening objective started
/// from the first run's optimum.
pub fn optimize_flatness_compare(
    scenario: &Scenario,
    constraints: &Constraints,
    options: &OptimizerOptions,
) -> Result<(OptimizationReport, OptimizationReport), OptimizeError> {
    let first = optimize(scenario, ObjectiveSpec::MeanIr, constraints, options)?;
    let second_opts = OptimizerOptions { initial: Some(first.best.clone()), checkpoint: None, ..options.clone() };
    let second = optimize(scenario, ObjectiveSpec::MeanIrMinusSpread, constraints, &second_opts)?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(ObjectiveSpec::MeanIr.value(&[0.7; 4]), 0.7);
        assert_eq!(ObjectiveSpec::MeanIrMinusSpread.value(&[0.7; 4]), 0.7);
        assert!((ObjectiveSpec::MeanIr.value(&[1.0, 0.8]) - 0.9).abs() < 1e-15);
        assert!((ObjectiveSpec::MeanIrMinusSpread.value(&[1.0, 0.8]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn band_tilt_expansion() {
        let plan = presets::cls_default().plan().clone();
        let dv = DecisionVector {
            launch_mode: LaunchMode::PerBandTilt,
            launch_params: vec![1.0, 2.0, 0.0, 0.0, -1.0, -4.0],
            pump_powers_dbm: vec![],
            pump_freqs_thz: vec![],
        };
        let l = dv.launch_dbm(&plan);
        assert!((l[0] - 0.0).abs() < 1e-12 && (l[49] - 2.0).abs() < 1e-12);
        assert!(l[50..100].iter().all(|&p| p == 0.0));
        assert!((l[100] - 1.0).abs() < 1e-12 && (l[149] + 3.0).abs() < 1e-12);
        let back = to_band_tilt(&to_per_channel(&dv, &plan), &plan);
        for (a, b) in back.launch_params.iter().zip(&dv.launch_params) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_feasible() {
        let s = presets::cls_pumped();
        let c = Constraints::for_pumps(3);
        let dv = DecisionVector {
            launch_mode: LaunchMode::PerBandTilt,
            launch_params: vec![9.0, 8.0, -30.0, 0.0, 0.0, 50.0],
            pump_powers_dbm: vec![30.0, 24.0, 27.0],
            pump_freqs_thz: vec![205.0, 214.0, 240.0],
        };
        let (p, excess) = c.project(&dv, s.plan());
        let launch = p.launch_dbm(s.plan());
        assert!(launch.iter().all(|&x| x >= c.launch_min_dbm - 1e-9 && x <= c.launch_max_dbm + 1e-9));
        assert!(excess > 0.0);
        assert!(p.total_pump_w() <= c.total_pump_cap_w * (1.0 + 1e-12));
        assert!(p.pump_freqs_thz.iter().all(|&f| (211.5..=225.0).contains(&f)));
        for (pw, cap) in p.pump_powers_dbm.iter().zip(&c.pump_caps_dbm) {
            assert!(pw <= cap);
        }
    }

    #[test]
    fn inconsistent_caps_are_rejected() {
        let s = presets::cls_pumped();
        let mut c = Constraints::for_pumps(3);
        c.pump_caps_dbm = vec![27.0, 27.0, 27.0];
        assert!(matches!(c.check(&s), Err(OptimizeError::Infeasible(_))));
        let c = Constraints::for_pumps(2);
        assert!(matches!(c.check(&s), Err(OptimizeError::Infeasible(_))));
        let mut c = Constraints::for_pumps(3);
        c.pump_freq_floor_thz = 200.0;
        assert!(c.check(&s).is_err());
        // 24 + 24 + 27 dBm is 1.0036 W, within rounding of 1 W
        assert!(Constraints::for_pumps(3).check(&s).is_ok());
    }

    #[test]
    fn budget_one_returns_initial_point() {
        let s = presets::cls_default();
        let c = Constraints::for_pumps(0);
        let r = optimize(&s, ObjectiveSpec::MeanIr, &c, &OptimizerOptions { budget: 1, ..Default::default() }).unwrap();
        assert_eq!(r.evaluations, 1);
        assert!(r.launch_dbm.iter().all(|&p| p == 0.0));
        assert_eq!(r.trace.len(), 1);
        let direct = evaluate_objective(&s, &r.best, ObjectiveSpec::MeanIr).unwrap();
        assert!((direct - r.best_value).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_is_an_error() {
        let s = presets::cls_default();
        let r = optimize(&s, ObjectiveSpec::MeanIr, &Constraints::for_pumps(0), &OptimizerOptions { budget: 0, ..Default::default() });
        assert!(matches!(r, Err(OptimizeError::ZeroBudget)));
    }

    #[test]
    fn quantization_snaps_to_grid() {
        let dv = DecisionVector {
            launch_mode: LaunchMode::PerChannel,
            launch_params: vec![1.004, -0.006],
            pump_powers_dbm: vec![23.456],
            pump_freqs_thz: vec![212.34567],
        };
        let (q, key) = quantize(&dv);
        assert_eq!(key, vec![0, 100, -1, 2346, 212346]);
        assert!((q.launch_params[0] - 1.0).abs() < 1e-12);
        assert!((q.pump_freqs_thz[0] - 212.346).abs() < 1e-9);
    }
}
