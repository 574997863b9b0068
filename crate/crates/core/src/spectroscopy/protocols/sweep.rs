use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensure_list;
use crate::analysis::fit_exponential;
use crate::ctmc::{reduce_rates, simulate_until_ionisations, DiffusionParams, LaserDrive, RateParams};
use crate::error::{ensure, Result};
use crate::seeds::{derive, stream};
use crate::spectroscopy::result::{ProtocolResult, Summary, Table};
use crate::stats;

/// Ionisation rate against excitation rate for several decay splits, from
/// direct CTMC simulation with the drive on resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub gamma_e_hz: Vec<f64>,
    /// `gamma_i / gamma_ni` values.
    pub ratios: Vec<f64>,
    pub total_decay_hz: f64,
    pub reset_hz: f64,
    pub ionisations: u64,
    /// Points with `gamma_e <= low_fraction * total_decay` enter the
    /// low-excitation slope fit.
    pub low_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            // 1 kHz to 1000 kHz, four points per decade.
            gamma_e_hz: (0..=12).map(|k| 1e3 * 10f64.powf(k as f64 / 4.0)).collect(),
            ratios: vec![0.2, 1.0, 5.0],
            total_decay_hz: 1.25e6,
            reset_hz: 12.5e3,
            ionisations: 10_000,
            low_fraction: 0.05,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_list(&self.gamma_e_hz, "gamma_e_hz", |g| g > 0.0 && g.is_finite(), "must be positive")?;
        ensure_list(&self.ratios, "ratios", |r| r > 0.0 && r.is_finite(), "must be positive")?;
        ensure(self.total_decay_hz > 0.0, "total_decay_hz", || "must be positive".into())?;
        ensure(self.reset_hz > 0.0, "reset_hz", || "must be positive".into())?;
        ensure(self.ionisations >= 2, "ionisations", || "must be at least 2".into())?;
        ensure(self.low_fraction > 0.0, "low_fraction", || "must be positive".into())
    }

    /// Rates for one split and excitation rate, driven at 1 µW with the whole
    /// power resonant so that `gamma_e_per_power` is the excitation rate.
    pub fn rates(&self, ratio: f64, gamma_e: f64) -> RateParams {
        let gamma_i = self.total_decay_hz * ratio / (1.0 + ratio);
        RateParams {
            gamma_e_per_power: gamma_e,
            gamma_i,
            gamma_ni: self.total_decay_hz - gamma_i,
            // The drive power is fixed at 1 µW, so all of the reset is
            // carried by the power-proportional term.
            reset_spontaneous: 0.0,
            reset_per_power: self.reset_hz,
            ..RateParams::default()
        }
    }
}

pub fn run_sweep_rates(cfg: &SweepConfig, master_seed: u64) -> Result<ProtocolResult> {
    cfg.validate().map_err(|e| e.within("sweep"))?;
    let mut out = ProtocolResult::new("sweep-rates", master_seed);
    let mut table = Table::new(
        "sweep",
        &[
            "ratio",
            "gamma_e_hz",
            "nu_i_hz",
            "nu_i_stderr_hz",
            "n_ionisations",
            "nu_i_analytic_hz",
            "nu_i_low_limit_hz",
            "relative_deviation",
        ],
    );
    let jobs: Vec<(usize, usize)> = (0..cfg.ratios.len())
        .flat_map(|r| (0..cfg.gamma_e_hz.len()).map(move |g| (r, g)))
        .collect();
    let results: Vec<Result<(f64, f64, usize)>> = jobs
        .par_iter()
        .map(|&(r, g)| {
            let rates = cfg.rates(cfg.ratios[r], cfg.gamma_e_hz[g]);
            // Long enough for the requested count with a wide margin; the run
            // stops at the count.
            let expected = reduce_rates(&rates, 1.0, 1.0, 0.0)?;
            let cycle = 1.0 / expected.nu_i + 1.0 / expected.nu_r;
            let drive = LaserDrive::cw(cycle * cfg.ionisations as f64 * 2.0 + 1.0, 1.0, 1.0, 0.0);
            let seed = derive(master_seed, &[stream::SWEEP_RATES, r as u64, g as u64, stream::SIMULATION]);
            let log = simulate_until_ionisations(&rates, &DiffusionParams::disabled(), &drive, seed, cfg.ionisations)?;
            let est = fit_exponential(&log.dwell_times().t_i)?;
            Ok((est.rate, est.stderr, est.n))
        })
        .collect();
    for (&(r, g), res) in jobs.iter().zip(results) {
        let ratio = cfg.ratios[r];
        let gamma_e = cfg.gamma_e_hz[g];
        let rates = cfg.rates(ratio, gamma_e);
        let analytic = reduce_rates(&rates, 1.0, 1.0, 0.0)?.nu_i;
        match res {
            Ok((nu, se, n)) => table.push(vec![
                ratio,
                gamma_e,
                nu,
                se,
                n as f64,
                analytic,
                gamma_e * rates.ionising_branching(),
                nu / analytic - 1.0,
            ]),
            Err(e) => out.warnings.push(format!("ratio {ratio}, gamma_e {gamma_e} Hz: {e}")),
        }
    }
    for &ratio in &cfg.ratios {
        let rows: Vec<&Vec<f64>> = table
            .rows
            .iter()
            .filter(|row| row[0] == ratio && row[1] <= cfg.low_fraction * cfg.total_decay_hz)
            .collect();
        let x: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        let se: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let expected = ratio / (1.0 + ratio);
        match stats::fit_proportional(&x, &y, Some(&se)) {
            Ok(f) => {
                out.summaries.push(Summary::new(&format!("low_slope_ratio_{ratio}"), f.slope, f.slope_se, "1"));
                out.summaries.push(Summary::new(&format!("expected_slope_ratio_{ratio}"), expected, 0.0, "1"));
            }
            Err(e) => out.warnings.push(format!("ratio {ratio}: low-excitation slope fit failed: {e}")),
        }
    }
    out.tables.push(table);
    Ok(out)
}
