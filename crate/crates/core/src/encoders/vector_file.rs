//! Text vector format: a `<count> <dim>` header, then `<key> v1 ... v_dim`
//! per line, space separated.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::EncodeError;

/// What to do when a key appears twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuplicatePolicy {
    /// Keep the later vector and log a warning.
    LastWins,
    /// Fail with [`EncodeError::DuplicateKey`].
    Reject,
}

/// Parses a vector file into `(dim, key -> vector)`.
pub fn parse_vector_file<R: BufRead>(
    reader: R,
    policy: DuplicatePolicy,
) -> Result<(usize, HashMap<String, Vec<f64>>), EncodeError> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.ok_or(EncodeError::MalformedLine {
        line: 1,
        reason: "missing `<count> <dim>` header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parsed = match fields.as_slice() {
        [count, dim] => count.parse::<usize>().ok().zip(dim.parse::<usize>().ok()),
        _ => None,
    };
    let (count, dim) = parsed
        .filter(|&(_, d)| d > 0)
        .ok_or_else(|| EncodeError::MalformedLine {
            line: 1,
            reason: format!("bad header {header:?}"),
        })?;

    let mut table: HashMap<String, Vec<f64>> = HashMap::with_capacity(count);
    let mut rows = 0usize;
    let mut duplicates = 0usize;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().expect("non-empty line has a field");
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| EncodeError::MalformedLine {
                        line: line_no,
                        reason: format!("bad number {f:?}"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(EncodeError::DimensionMismatch {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        rows += 1;
        if table.insert(key.to_string(), values).is_some() {
            match policy {
                DuplicatePolicy::Reject => {
                    return Err(EncodeError::DuplicateKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
                DuplicatePolicy::LastWins => duplicates += 1,
            }
        }
    }
    if duplicates > 0 {
        log::warn!("{duplicates} duplicate keys in vector file; later entries kept");
    }
    if rows != count {
        log::warn!("vector file header announces {count} rows, found {rows}");
    }
    Ok((dim, table))
}

/// Writes entries in the text vector format, in the order given.
pub fn write_vector_file<W: Write, K: AsRef<str>>(
    mut out: W,
    dim: usize,
    entries: &[(K, Vec<f64>)],
) -> Result<(), EncodeError> {
    writeln!(out, "{} {dim}", entries.len())?;
    for (key, values) in entries {
        let key = key.as_ref();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(EncodeError::InvalidParameter(format!(
                "key {key:?} is empty or contains whitespace"
            )));
        }
        if values.len() != dim {
            return Err(EncodeError::InvalidParameter(format!(
                "{key}: {} values, dim {dim}",
                values.len()
            )));
        }
        out.write_all(key.as_bytes())?;
        for v in values {
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
