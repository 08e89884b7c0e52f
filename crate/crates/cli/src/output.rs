//! Trace CSV and report files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use aggne_core::solver::{Trace, TraceRow};
use serde::Serialize;

use crate::error::CliError;

/// Column names in file order for a trace with the given optional columns.
pub fn trace_header(has_gap: bool, has_delta: bool) -> String {
    let mut header = String::from("k,gamma_k,eta_k,ne_residual,consensus_v,consensus_y");
    if has_gap {
        header.push_str(",gap_to_xstar");
    }
    if has_delta {
        header.push_str(",delta_norm");
    }
    header
}

/// CSV text for a trace. Floats use the shortest round-trip representation,
/// so identical traces give identical bytes.
pub fn format_trace(trace: &Trace) -> String {
    let mut out = trace_header(trace.has_gap, trace.has_delta);
    out.push('\n');
    for row in &trace.rows {
        let _ = write!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?}",
            row.k, row.gamma_k, row.eta_k, row.ne_residual, row.consensus_v, row.consensus_y
        );
        if trace.has_gap {
            let _ = write!(out, ",{}", optional(row.gap_to_xstar));
        }
        if trace.has_delta {
            let _ = write!(out, ",{}", optional(row.delta_norm));
        }
        out.push('\n');
    }
    out
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:?}"))
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), CliError> {
    write_atomic(path, format_trace(trace).as_bytes())
}

/// Reads back a file produced by [`format_trace`].
pub fn parse_trace(text: &str) -> Result<Trace, CliError> {
    let bad = |line: usize, what: &str| CliError::Parse(format!("trace line {line}: {what}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let has_gap = header.contains("gap_to_xstar");
    let has_delta = header.contains("delta_norm");
    if header != trace_header(has_gap, has_delta) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        let expected = 6 + has_gap as usize + has_delta as usize;
        if fields.len() != expected {
            return Err(bad(lineno, "wrong number of fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(lineno, "bad number"));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let mut extra = fields[6..].iter();
        rows.push(TraceRow {
            k: fields[0].parse().map_err(|_| bad(lineno, "bad k"))?,
            gamma_k: num(fields[1])?,
            eta_k: num(fields[2])?,
            ne_residual: num(fields[3])?,
            consensus_v: num(fields[4])?,
            consensus_y: num(fields[5])?,
            gap_to_xstar: if has_gap {
                opt(extra.next().unwrap())?
            } else {
                None
            },
            delta_norm: if has_delta {
                opt(extra.next().unwrap())?
            } else {
                None
            },
        });
    }
    Ok(Trace {
        rows,
        has_gap,
        has_delta,
        ..Default::default()
    })
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir.display(), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::io(path.display(), e))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(path.display(), e.error))?;
    Ok(())
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Io(format!("cannot serialize report: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, r: f64) -> TraceRow {
        TraceRow {
            k,
            gamma_k: 0.1 / ((k + 1) as f64).sqrt(),
            eta_k: 0.1 / ((k + 1) as f64).powf(0.4),
            ne_residual: r,
            consensus_v: 1e-17 * k as f64,
            consensus_y: 0.0,
            gap_to_xstar: Some(r / 3.0),
            delta_norm: (k > 0).then_some(r * 1.5),
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let trace = Trace::default();
        assert_eq!(
            format_trace(&trace),
            "k,gamma_k,eta_k,ne_residual,consensus_v,consensus_y\n"
        );
    }

    #[test]
    fn header_with_optional_columns() {
        assert_eq!(
            trace_header(true, true),
            "k,gamma_k,eta_k,ne_residual,consensus_v,consensus_y,gap_to_xstar,delta_norm"
        );
        assert_eq!(
            trace_header(false, true),
            "k,gamma_k,eta_k,ne_residual,consensus_v,consensus_y,delta_norm"
        );
    }

    #[test]
    fn three_rows_round_trip() {
        let trace = Trace {
            rows: vec![row(0, 2.5), row(1, 0.1 + 0.2), row(2, 1e-300)],
            has_gap: true,
            has_delta: true,
            ..Default::default()
        };
        let text = format_trace(&trace);
        assert_eq!(text.lines().count(), 4);
        let back = parse_trace(&text).unwrap();
        assert_eq!(back.rows, trace.rows);
        assert_eq!(format_trace(&back), text);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = write_atomic(Path::new("/nonexistent/dir/trace.csv"), b"x").unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
