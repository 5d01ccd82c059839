//! Synthesizers: the native Gaussian copula and an adapter for external
//! generators that speak the fit/sample command protocol.

mod copula;
mod external;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use copula::{
    fit_copula, fit_copula_with, repair_psd, sample_copula, CopulaModel, CopulaOptions, Marginal, EIGEN_FLOOR,
};
pub use external::{run_external, ExternalPhase};

use crate::table::{DataTable, TableError};

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("need at least 2 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("invalid synthesizer spec: {0}")]
    InvalidSpec(String),
    #[error("model columns do not match the table schema")]
    ModelSchemaMismatch,
    #[error("external {phase} phase failed (exit code {code:?}):\n{diagnostics}")]
    CommandFailed { phase: ExternalPhase, code: Option<i32>, diagnostics: String },
    #[error("external synthesizer broke the protocol: {0}")]
    ProtocolViolation(String),
    #[error("synthetic output does not conform to the schema: {0}")]
    SchemaMismatch(#[source] TableError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub table: DataTable,
    pub rows_requested: usize,
    pub model_fingerprint: String,
    /// Diagnostics captured from an external generator; empty for native ones.
    pub log: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesizerKind {
    GaussianCopula,
    External,
}

/// Which generator to run and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizerSpec {
    pub kind: SynthesizerKind,
    /// Shell-style command prefix; the protocol arguments are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_command: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Display name used in reports; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub copula: CopulaOptions,
}

impl SynthesizerSpec {
    pub fn gaussian_copula(seed: u64) -> Self {
        Self { kind: SynthesizerKind::GaussianCopula, external_command: None, seed, name: None, copula: CopulaOptions::default() }
    }

    pub fn external(command: impl Into<String>, seed: u64) -> Self {
        Self {
            kind: SynthesizerKind::External,
            external_command: Some(command.into()),
            seed,
            name: None,
            copula: CopulaOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        match (self.kind, &self.external_command) {
            (SynthesizerKind::External, None) => Err(SynthesisError::InvalidSpec("external synthesizer needs external_command".into())),
            (SynthesizerKind::GaussianCopula, Some(_)) => {
                Err(SynthesisError::InvalidSpec("external_command is only valid for external synthesizers".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn display_name(&self) -> String {
        match (&self.name, self.kind) {
            (Some(name), _) => name.clone(),
            (None, SynthesizerKind::GaussianCopula) => "Gaussian Copula".into(),
            (None, SynthesizerKind::External) => "External".into(),
        }
    }

    /// Fits on `train` and draws `n` rows. `seed` is mixed with the spec's
    /// own seed; `workdir` is only touched by external generators.
    pub fn synthesize(&self, train: &DataTable, n: usize, seed: u64, workdir: &Path) -> Result<SynthesisResult, SynthesisError> {
        self.validate()?;
        let seed = self.seed ^ seed.wrapping_mul(0x2545_F491_4F6C_DD1D);
        match self.kind {
            SynthesizerKind::GaussianCopula => {
                let model = fit_copula_with(train, seed, self.copula)?;
                sample_copula(&model, train, n, seed.wrapping_add(1))
            }
            SynthesizerKind::External => run_external(self, train, n, seed, workdir),
        }
    }
}
