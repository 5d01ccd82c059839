//! Driver for external generators.
//!
//! Protocol, with every path inside the work directory:
//!
//! ```text
//! <command> fit    --data train.csv --schema schema.json --model-dir model --seed <int>
//! <command> sample --model-dir model --n <int> --out synth.csv --seed <int>
//! ```
//!
//! Both phases must exit 0. `synth.csv` must be a header-first CSV with the
//! schema's columns. Standard error of both phases is kept verbatim in
//! `run.log`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SynthesisError, SynthesisResult, SynthesizerSpec};
use crate::table::{load_csv_with_report, DataTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalPhase {
    Fit,
    Sample,
}

impl fmt::Display for ExternalPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExternalPhase::Fit => "fit",
            ExternalPhase::Sample => "sample",
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthesisError + '_ {
    move |source| SynthesisError::Io { path: path.to_path_buf(), source }
}

fn invoke(program: &[String], phase: ExternalPhase, args: &[String], log: &mut String) -> Result<(), SynthesisError> {
    let output = Command::new(&program[0]).args(&program[1..]).args(args).output().map_err(|e| {
        SynthesisError::CommandFailed { phase, code: None, diagnostics: format!("could not start {:?}: {e}", program[0]) }
    })?;
    let stderr = String::from_utf8_lossy(&output.stderr);
    log.push_str(&format!("== {phase} ==\n"));
    log.push_str(&stderr);
    if !output.status.success() {
        let mut diagnostics = stderr.into_owned();
        let stdout = String::from_utf8_lossy(&output.stdout);
        if !stdout.trim().is_empty() {
            diagnostics.push_str("\n-- stdout --\n");
            diagnostics.push_str(&stdout);
        }
        return Err(SynthesisError::CommandFailed { phase, code: output.status.code(), diagnostics });
    }
    Ok(())
}

/// Hash over the model directory's files (relative path + contents, sorted).
fn hash_dir(dir: &Path) -> String {
    fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                collect(&path, out);
            } else {
                out.push(path);
            }
        }
    }
    let mut files = Vec::new();
    collect(dir, &mut files);
    files.sort();
    let mut hasher = Sha256::new();
    for file in files {
        hasher.update(file.strip_prefix(dir).unwrap_or(&file).to_string_lossy().as_bytes());
        hasher.update([0u8]);
        if let Ok(bytes) = std::fs::read(&file) {
            hasher.update(&bytes);
        }
    }
    hex::encode(hasher.finalize())
}

pub fn run_external(
    spec: &SynthesizerSpec,
    train: &DataTable,
    n: usize,
    seed: u64,
    workdir: &Path,
) -> Result<SynthesisResult, SynthesisError> {
    let template = spec
        .external_command
        .as_deref()
        .ok_or_else(|| SynthesisError::InvalidSpec("external synthesizer needs external_command".into()))?;
    let program = shlex::split(template)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| SynthesisError::InvalidSpec(format!("cannot parse command {template:?}")))?;
    if n == 0 {
        return Err(SynthesisError::InvalidSpec("external synthesizers need n >= 1".into()));
    }

    std::fs::create_dir_all(workdir).map_err(io_err(workdir))?;
    let data = workdir.join("train.csv");
    let schema_path = workdir.join("schema.json");
    let model_dir = workdir.join("model");
    let out = workdir.join("synth.csv");
    train.write_csv(&data)?;
    std::fs::write(&schema_path, train.schema().to_json()).map_err(io_err(&schema_path))?;
    if out.exists() {
        std::fs::remove_file(&out).map_err(io_err(&out))?;
    }

    let path = |p: &Path| p.to_string_lossy().into_owned();
    let mut log = String::new();
    let fit_args = vec![
        "fit".into(),
        "--data".into(),
        path(&data),
        "--schema".into(),
        path(&schema_path),
        "--model-dir".into(),
        path(&model_dir),
        "--seed".into(),
        seed.to_string(),
    ];
    let sample_args = vec![
        "sample".into(),
        "--model-dir".into(),
        path(&model_dir),
        "--n".into(),
        n.to_string(),
        "--out".into(),
        path(&out),
        "--seed".into(),
        seed.to_string(),
    ];
    let result = invoke(&program, ExternalPhase::Fit, &fit_args, &mut log)
        .and_then(|()| invoke(&program, ExternalPhase::Sample, &sample_args, &mut log));

    let log_path = workdir.join("run.log");
    std::fs::File::create(&log_path)
        .and_then(|mut f| f.write_all(log.as_bytes()))
        .map_err(io_err(&log_path))?;
    result?;

    if !out.exists() {
        return Err(SynthesisError::ProtocolViolation(format!("{} was not written", out.display())));
    }
    let (table, report) = load_csv_with_report(&out, train.schema()).map_err(SynthesisError::SchemaMismatch)?;
    if report.rows_dropped_missing > 0 {
        return Err(SynthesisError::ProtocolViolation(format!(
            "{} synthetic rows contain missing values",
            report.rows_dropped_missing
        )));
    }
    if table.len() != n {
        return Err(SynthesisError::ProtocolViolation(format!("requested {n} rows, got {}", table.len())));
    }
    Ok(SynthesisResult { table, rows_requested: n, model_fingerprint: hash_dir(&model_dir), log })
}
