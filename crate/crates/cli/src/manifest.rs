//! JSON run manifest written next to every set of outputs.

use fca_core::EvalReport;
use serde::Serialize;

use crate::config::RunConfig;

pub const VERSION: &str = env!("FCA_BUILD_VERSION");

/// Recorded in every manifest so downstream readers know how sources were initialized.
const INIT_NOTE: &str = "oracle initialization estimates covariances from reference source \
images; the diffuse initializer is blind. No frequency permutation solver is used.";

#[derive(Serialize)]
pub struct ReportEntry {
    pub algorithm: String,
    pub trial: usize,
    pub rtf: f64,
    pub sdr_mean: Option<f64>,
    pub sdr_per_source: Vec<Option<f64>>,
    pub inversions_per_iteration: u64,
    pub matmuls_per_iteration: u64,
}

impl From<&EvalReport> for ReportEntry {
    fn from(r: &EvalReport) -> Self {
        // JSON has no NaN; unevaluated SDRs become null
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            algorithm: r.algorithm.to_string(),
            trial: r.trial,
            rtf: r.rtf,
            sdr_mean: finite(r.sdr_mean()),
            sdr_per_source: r.sdr_per_source.iter().map(|&s| finite(s)).collect(),
            inversions_per_iteration: r.counters.inversions,
            matmuls_per_iteration: r.counters.matmuls,
        }
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub initialization: &'static str,
    pub outputs: Vec<String>,
    pub reports: Vec<ReportEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtf_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter_ratio: Option<f64>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'static str, config: &'a RunConfig) -> Self {
        Self {
            tool: "fca",
            version: VERSION,
            command,
            config,
            initialization: INIT_NOTE,
            outputs: Vec::new(),
            reports: Vec::new(),
            rtf_ratio: None,
            counter_ratio: None,
        }
    }
}
