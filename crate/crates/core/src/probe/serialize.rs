//! Text format for trained probes.
//!
//! ```text
//! #probe {"task":..,"provider":..,"class_labels":[..],"dim":..,...}
//! dense <dim> w_0...        one line per class
//! dense <classes> b...
//! dense <dim> mean...       only when standardized
//! dense <dim> std...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a model reads
//! back bit-identical.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Parameters, ProbeError, ProbeModel, Standardization, TrainConfig, TrainingLog};
use crate::encoders::RepresentationVector;
use crate::taskgen::TaskKind;

#[derive(Serialize, Deserialize)]
struct Header {
    task: Option<TaskKind>,
    provider: String,
    class_labels: Vec<String>,
    dim: usize,
    standardized: bool,
    config: TrainConfig,
    log: TrainingLog,
    digest: Option<String>,
}

const MAGIC: &str = "#probe ";

pub fn write_model<W: Write>(mut out: W, model: &ProbeModel, digest: Option<&str>) -> Result<(), ProbeError> {
    let header = Header {
        task: model.task,
        provider: model.provider.clone(),
        class_labels: model.class_labels.clone(),
        dim: model.params.dim,
        standardized: model.standardization.is_some(),
        config: model.config.clone(),
        log: model.log.clone(),
        digest: digest.map(str::to_string),
    };
    let json = serde_json::to_string(&header).map_err(std::io::Error::other)?;
    writeln!(out, "{MAGIC}{json}")?;
    let dim = model.params.dim;
    for row in model.params.weights.chunks(dim.max(1)).take(model.class_count()) {
        writeln!(out, "{}", RepresentationVector::dense(row.to_vec()).to_text())?;
    }
    writeln!(
        out,
        "{}",
        RepresentationVector::dense(model.params.bias.clone()).to_text()
    )?;
    if let Some(s) = &model.standardization {
        writeln!(out, "{}", RepresentationVector::dense(s.mean.clone()).to_text())?;
        writeln!(out, "{}", RepresentationVector::dense(s.std.clone()).to_text())?;
    }
    out.flush()?;
    Ok(())
}

fn malformed(line: usize, reason: impl Into<String>) -> ProbeError {
    ProbeError::Malformed {
        line,
        reason: reason.into(),
    }
}

/// Reads a model written by [`write_model`], returning its digest if any.
pub fn read_model<R: BufRead>(reader: R) -> Result<(ProbeModel, Option<String>), ProbeError> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(l) if l.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "empty model file"))?;
    let first = first?;
    let json = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| malformed(1, "missing #probe header"))?;
    let header: Header = serde_json::from_str(json).map_err(|e| malformed(1, e.to_string()))?;
    let classes = header.class_labels.len();
    if classes < 2 {
        return Err(malformed(1, "fewer than two classes"));
    }

    let mut row = |expected: usize| -> Result<Vec<f64>, ProbeError> {
        let (i, line) = lines.next().ok_or_else(|| malformed(0, "unexpected end of file"))?;
        let v = RepresentationVector::from_text(&line?).map_err(|e| malformed(i + 1, e.to_string()))?;
        if v.dim() != expected {
            return Err(malformed(
                i + 1,
                format!("expected {expected} values, found {}", v.dim()),
            ));
        }
        Ok(v.to_dense())
    };
    let mut weights = Vec::with_capacity(classes * header.dim);
    for _ in 0..classes {
        weights.extend(row(header.dim)?);
    }
    let bias = row(classes)?;
    let standardization = if header.standardized {
        Some(Standardization {
            mean: row(header.dim)?,
            std: row(header.dim)?,
        })
    } else {
        None
    };
    if let Some((i, _)) = lines.next() {
        return Err(malformed(i + 1, "trailing content"));
    }
    let model = ProbeModel {
        task: header.task,
        provider: header.provider,
        class_labels: header.class_labels,
        params: Parameters {
            class_count: classes,
            dim: header.dim,
            weights,
            bias,
        },
        standardization,
        config: header.config,
        log: header.log,
    };
    Ok((model, header.digest))
}
