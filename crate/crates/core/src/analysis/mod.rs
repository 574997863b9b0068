//! Event extraction and dwell-time statistics from current traces.

mod cycles;
mod dwell;
mod emg;
mod events;

pub use cycles::{classify_cycles, classify_two_readouts, Classification, CycleCounts, TwoReadoutCounts};
pub use dwell::{
    correct_missed_events, fit_exponential, histogram, CorrectedRates, RateEstimate,
};
pub use emg::{emg_log_pdf, fit_emg, fit_gaussian, EmgFit, GaussianFit};
pub use events::{
    default_resolution, detect_events, detect_with, estimate_noise, impose_resolution, Detection,
    DetectorSettings, Edge, DEFAULT_HYSTERESIS_SIGMAS,
};

use serde::{Deserialize, Serialize};

/// Occupied-trap (`t_i`) and ionised-trap (`t_r`) waiting times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DwellRecord {
    pub t_i: Vec<f64>,
    pub t_r: Vec<f64>,
}

impl DwellRecord {
    pub fn is_empty(&self) -> bool {
        self.t_i.is_empty() && self.t_r.is_empty()
    }
}
