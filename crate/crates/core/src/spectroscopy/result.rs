use serde::{Deserialize, Serialize};

use super::lorentz::{fit_lorentzian, LorentzianFit, SpectrumPoint};
use crate::fit::FitFailure;

/// A fitted lineshape or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(LorentzianFit),
    Failed(FitFailure),
}

impl FitOutcome {
    pub fn fitted(&self) -> Option<&LorentzianFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::Failed(_) => None,
        }
    }
}

impl From<Result<LorentzianFit, FitFailure>> for FitOutcome {
    fn from(r: Result<LorentzianFit, FitFailure>) -> Self {
        match r {
            Ok(f) => FitOutcome::Fitted(f),
            Err(e) => FitOutcome::Failed(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub label: String,
    /// Name and value of the condition that distinguishes this spectrum.
    pub condition: (String, f64),
    pub points: Vec<SpectrumPoint>,
    pub fit: FitOutcome,
}

impl Spectrum {
    pub fn fitted(label: String, condition: (String, f64), points: Vec<SpectrumPoint>) -> Self {
        let fit = fit_lorentzian(&points).into();
        Self {
            label,
            condition,
            points,
            fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub unit: String,
}

impl Summary {
    pub fn new(name: &str, value: f64, stderr: f64, unit: &str) -> Self {
        Self {
            name: name.into(),
            value,
            stderr,
            unit: unit.into(),
        }
    }
}

/// Named numeric table; column names carry unit suffixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub protocol: String,
    pub master_seed: u64,
    pub seed_scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub spectra: Vec<Spectrum>,
    pub summaries: Vec<Summary>,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl ProtocolResult {
    pub fn new(protocol: &str, master_seed: u64) -> Self {
        Self {
            spectra: Vec::new(),
            summaries: Vec::new(),
            tables: Vec::new(),
            warnings: Vec::new(),
            provenance: Provenance {
                protocol: protocol.into(),
                master_seed,
                seed_scheme: crate::seeds::SCHEME.into(),
            },
        }
    }

    pub fn summary(&self, name: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}
