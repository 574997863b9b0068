//! TOML run configuration.

use std::path::{Path, PathBuf};

use erspec::ctmc::{DriveSegment, LaserDrive, DEFAULT_RESONANT_FRACTION};
use erspec::spectroscopy::{
    CwScanConfig, DetectorConfig, FractionScanConfig, PersistenceConfig, Physics, PulsedScanConfig,
    ResetConfig, SweepConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Simulate,
    ScanCw,
    ScanPulsed,
    ResetRate,
    Persistence,
    Fraction,
    SweepRates,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Simulate => "simulate",
            Protocol::ScanCw => "scan-cw",
            Protocol::ScanPulsed => "scan-pulsed",
            Protocol::ResetRate => "reset-rate",
            Protocol::Persistence => "persistence",
            Protocol::Fraction => "fraction",
            Protocol::SweepRates => "sweep-rates",
        }
    }
}

/// Everything a command needs. Sections that a command does not use are
/// still validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Used by `erspec run`; other commands check it when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub physics: Physics,
    pub simulate: SimulateConfig,
    pub detect: DetectConfig,
    pub cw_scan: CwScanConfig,
    pub pulsed_scan: PulsedScanConfig,
    pub reset_rate: ResetConfig,
    pub persistence: PersistenceConfig,
    pub fraction: FractionScanConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            protocol: None,
            seed: 0,
            output_dir: None,
            physics: Physics::default(),
            simulate: SimulateConfig::default(),
            detect: DetectConfig::default(),
            cw_scan: CwScanConfig::default(),
            pulsed_scan: PulsedScanConfig::default(),
            reset_rate: ResetConfig::default(),
            persistence: PersistenceConfig::default(),
            fraction: FractionScanConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// A single drive for `erspec simulate`: constant CW drive unless
/// `segments` is given, in which case those repeat `repeat_count` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub power_uw: f64,
    pub resonant_fraction: f64,
    pub detuning_hz: f64,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<DriveSegment>,
    pub repeat_count: u64,
    pub write_events: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            power_uw: 0.6,
            resonant_fraction: DEFAULT_RESONANT_FRACTION,
            detuning_hz: 0.0,
            duration_s: 10.0,
            segments: Vec::new(),
            repeat_count: 1,
            write_events: true,
        }
    }
}

impl SimulateConfig {
    pub fn drive(&self) -> LaserDrive {
        if self.segments.is_empty() {
            LaserDrive::cw(self.duration_s, self.power_uw, self.resonant_fraction, self.detuning_hz)
        } else {
            LaserDrive::new(self.segments.clone(), self.repeat_count)
        }
    }
}

/// Event detection settings; unset values are chosen from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hysteresis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution_s: Option<f64>,
    pub correct_missed_events: bool,
    /// Histogram bin width; defaults to a tenth of the mean dwell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_bin_s: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            threshold: d.threshold,
            hysteresis: d.hysteresis,
            resolution_s: d.resolution_s,
            correct_missed_events: d.correct_missed_events,
            histogram_bin_s: None,
        }
    }
}

impl DetectConfig {
    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            threshold: self.threshold,
            hysteresis: self.hysteresis,
            resolution_s: self.resolution_s,
            correct_missed_events: self.correct_missed_events,
        }
    }

    fn validate(&self) -> erspec::Result<()> {
        for (name, v) in [
            ("hysteresis", self.hysteresis),
            ("resolution_s", self.resolution_s),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(erspec::Error::domain(name, format!("must be non-negative, got {v}")));
                }
            }
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(erspec::Error::domain("threshold", "must be finite"));
            }
        }
        if let Some(b) = self.histogram_bin_s {
            if !(b > 0.0 && b.is_finite()) {
                return Err(erspec::Error::domain("histogram_bin_s", format!("must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Checks every section against the model preconditions. Errors carry
    /// the dotted field path, e.g. `cw_scan.resonant_fraction`.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::invalid(
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let v = |r: erspec::Result<()>, section: &str| r.map_err(|e| CliError::from_validation(e.within(section)));
        v(self.physics.validate(), "physics")?;
        v(self.simulate.drive().validate(), "simulate")?;
        v(self.detect.validate(), "detect")?;
        v(self.cw_scan.validate(), "cw_scan")?;
        v(self.pulsed_scan.validate(), "pulsed_scan")?;
        v(self.reset_rate.validate(), "reset_rate")?;
        v(self.persistence.validate(), "persistence")?;
        v(self.fraction.validate(), "fraction")?;
        v(self.sweep.validate(), "sweep")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::invalid("config", e.to_string()))
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((1, 1));
            CliError::Parse {
                path: path.into(),
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::unreadable(path, e))?;
        let cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), "x").unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml("protocol = \"scan-cw\"\nseed = 7\n", "x").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.protocol, Some(Protocol::ScanCw));
        assert_eq!(cfg.cw_scan, CwScanConfig::default());
    }

    #[test]
    fn parse_errors_point_at_the_line() {
        let err = RunConfig::from_toml("seed = 1\n\n[cw_scan]\nduration = 3\n", "c.toml").unwrap_err();
        match err {
            CliError::Parse { line, column, .. } => assert_eq!((line, column), (4, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_fraction_names_the_field() {
        let cfg = RunConfig::from_toml("[cw_scan]\nresonant_fraction = 1.3\n", "x").unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cw_scan.resonant_fraction"), "{msg}");
        assert!(msg.contains("resonant_fraction must be in [0,1]"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn wrong_schema_rejected() {
        let cfg = RunConfig::from_toml("schema_version = 9\n", "x").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().starts_with("schema_version"));
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
        assert_eq!(line_column("ab", 0), (1, 1));
    }
}
