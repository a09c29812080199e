//! Nonlinear interference: a closed-form incoherent GN estimate and a
//! numerical GN integration used to check it.

mod closed_form;
mod oracle;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use closed_form::{nli_closed_form, span_coefficients, SpanNliCoefficients, ALPHA_FLOOR_PER_KM, FIT_RESIDUAL_WARNING};
pub use oracle::{nli_oracle, OracleOptions};

use crate::fiber::FiberError;
use crate::propagation::PropagationError;
use crate::quadrature::QuadError;

/// Normalisation of the GN integral for dual-polarisation signals.
pub const GN_PREFACTOR: f64 = 16.0 / 27.0;

#[derive(Debug, Error)]
pub enum NliError {
    #[error("link has {got} span profiles for {expected} spans")]
    MissingProfile { expected: usize, got: usize },
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("channel {channel}: {source}")]
    Integration {
        channel: usize,
        #[source]
        source: QuadError,
    },
    #[error("channel selection is empty")]
    EmptySelection,
    #[error("channel index {0} out of range")]
    BadChannel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NliMethod {
    ClosedForm,
    Oracle,
}

/// Per-channel NLI power referred to the launch point, summed over spans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NliResult {
    pub method: NliMethod,
    /// Indices into the scenario's channel list.
    pub channels: Vec<usize>,
    pub freqs_thz: Vec<f64>,
    pub sci_w: Vec<f64>,
    pub xci_w: Vec<f64>,
    pub p_nli_w: Vec<f64>,
    pub warnings: Vec<String>,
}

impl NliResult {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["channel", "freq_THz", "p_sci_W", "p_xci_W", "p_nli_W"])?;
        for k in 0..self.channels.len() {
            w.write_record(&[
                self.channels[k].to_string(),
                format!("{:.6}", self.freqs_thz[k]),
                format!("{:.6e}", self.sci_w[k]),
                format!("{:.6e}", self.xci_w[k]),
                format!("{:.6e}", self.p_nli_w[k]),
            ])?;
        }
        w.flush()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("nli result serializes")
    }
}
