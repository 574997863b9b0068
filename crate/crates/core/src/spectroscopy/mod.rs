//! Pulse-probability model, lineshape fitting and the measurement protocols.

mod eq1;
mod lorentz;
mod power;
mod protocols;
mod result;

pub use eq1::{eq1_forward, eq1_invert, Inversion};
pub use lorentz::{fit_lorentzian, lorentzian, LorentzianFit, SpectrumPoint};
pub use power::{calibrate_sigma_per_power, effective_power, expected_ionisation_rate, predicted_linewidth, voigt_unit};
pub use protocols::{
    cw_point, rates_from_detection, run_cw_scan, run_persistence_scan, run_pulsed_scan,
    run_resonant_fraction_scan, run_sweep_rates, run_two_pulse_reset, CwMode, CwPoint, CwScanConfig,
    DetectorConfig, DetuningGrid, FractionScanConfig, PersistenceConfig, Physics, PulseTiming,
    PulsedScanConfig, ResetConfig, ResetSource, SweepConfig,
};
pub use result::{FitOutcome, ProtocolResult, Provenance, Spectrum, Summary, Table};
