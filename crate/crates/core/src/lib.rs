//! Physical-layer models for multiband (C+L+S) optical links.
//!
//! The pipeline is [`link_propagate`] (ISRS and backward Raman pumping),
//! [`nli_closed_form`] (incoherent GN with per-channel effective
//! attenuation), then [`channel_metrics`] per channel. [`simulate`] runs all
//! three; [`optimize`] searches launch spectra and pump settings.
//! [`nli_oracle`] integrates the GN model numerically to check the closed
//! form.
//!
//! Units: frequencies in THz, bandwidths and symbol rates in GHz/GBd,
//! lengths in km, powers in W (or dBm where the name says so), β2 in
//! ps²/km and γ in 1/(W·km).

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fiber;
pub mod interp;
pub mod metrics;
pub mod nli;
pub mod optimizer;
pub mod pipeline;
pub mod presets;
pub mod propagation;
pub mod quadrature;
pub mod scenario;
pub mod tables;
pub mod units;

pub use fiber::{FiberError, FiberParams, FiberSpec};
pub use metrics::{channel_metrics, dfa_ase, equivalent_nf, throughput, ChannelMetrics, IrCurve, MetricsError};
pub use nli::{nli_closed_form, nli_oracle, NliError, NliMethod, NliResult, OracleOptions};
pub use optimizer::{
    evaluate_objective, optimize, optimize_flatness_compare, Constraints, DecisionVector, LaunchMode, ObjectiveSpec,
    OptimizationReport, OptimizeError, OptimizerOptions,
};
pub use pipeline::{evaluate_link, simulate, LinkEvaluation, SimulationError, SimulationResult, Summary};
pub use propagation::{link_propagate, propagate_span, LinkProfiles, PowerProfile, PropagationError};
pub use scenario::{
    load_scenario, load_scenario_file, Band, Channel, ChannelPlan, PumpSpec, Scenario, ScenarioError, SolverOptions,
    SpanSpec,
};
