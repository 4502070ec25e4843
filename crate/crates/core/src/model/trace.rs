//! Channel-trace files: a plain-text substitute for externally generated
//! channel realizations.
//!
//! Format (line-oriented, whitespace-separated):
//! ```text
//! n_r n_t count
//! re,im re,im ...   # count records, each with n_r*n_t entries, row-major
//! ```
//! Records may wrap across lines; entries are complex `re,im` pairs.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::ModelError;

/// A parsed trace: fixed dimensions plus one channel matrix per record.
#[derive(Clone, Debug)]
pub struct ChannelTrace {
    pub n_r: usize,
    pub n_t: usize,
    matrices: Vec<DMatrix<Complex64>>,
}

impl ChannelTrace {
    pub fn matrices(&self) -> &[DMatrix<Complex64>] {
        &self.matrices
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Load a trace file; an empty (or whitespace-only) file yields an empty list.
pub fn load_channel_trace(path: impl AsRef<Path>) -> Result<ChannelTrace, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::TraceIo {
        path: path.display().to_string(),
        source,
    })?;
    parse_channel_trace(&text)
}

pub(crate) fn parse_channel_trace(text: &str) -> Result<ChannelTrace, ModelError> {
    // (token, 1-based line) pairs so diagnostics can point at the source.
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(ln, line)| line.split_whitespace().map(move |t| (t, ln + 1)));

    let header: Vec<(&str, usize)> = tokens.by_ref().take(3).collect();
    if header.is_empty() {
        return Ok(ChannelTrace {
            n_r: 0,
            n_t: 0,
            matrices: Vec::new(),
        });
    }
    if header.len() < 3 {
        return Err(ModelError::TraceParse {
            line: header.last().unwrap().1,
            message: "header must be `n_r n_t count`".into(),
        });
    }
    let dim = |i: usize, name: &str| -> Result<usize, ModelError> {
        header[i].0.parse::<usize>().map_err(|_| ModelError::TraceParse {
            line: header[i].1,
            message: format!("invalid {name} in header: {:?}", header[i].0),
        })
    };
    let n_r = dim(0, "n_r")?;
    let n_t = dim(1, "n_t")?;
    let count = dim(2, "count")?;
    if n_r == 0 || n_t == 0 {
        return Err(ModelError::TraceParse {
            line: header[0].1,
            message: format!("degenerate dimensions {n_r}x{n_t}"),
        });
    }

    let per_record = n_r * n_t;
    let mut matrices = Vec::with_capacity(count);
    for record in 0..count {
        let mut entries = Vec::with_capacity(per_record);
        let mut last_line = header[2].1;
        for k in 0..per_record {
            let (tok, line) = tokens.next().ok_or(ModelError::TraceParse {
                line: last_line,
                message: format!(
                    "record {record}: expected {per_record} entries, found {k}"
                ),
            })?;
            last_line = line;
            let (re, im) = tok.split_once(',').ok_or_else(|| ModelError::TraceParse {
                line,
                message: format!("record {record}: entry {k} is not a `re,im` pair: {tok:?}"),
            })?;
            let parse = |s: &str| -> Result<f64, ModelError> {
                s.parse::<f64>().map_err(|_| ModelError::TraceParse {
                    line,
                    message: format!("record {record}: bad number {s:?} in entry {k}"),
                })
            };
            entries.push(Complex64::new(parse(re)?, parse(im)?));
        }
        matrices.push(DMatrix::from_row_slice(n_r, n_t, &entries));
    }

    if let Some((_, line)) = tokens.next() {
        return Err(ModelError::TraceParse {
            line,
            message: format!("trailing data after {count} declared records"),
        });
    }

    Ok(ChannelTrace { n_r, n_t, matrices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_records() {
        let text = "2 2 2\n1,0 0,1 0,-1 1,0\n0.5,0.5 1,1\n-1,0 0,0\n";
        let trace = parse_channel_trace(text).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.matrices()[0].nrows(), 2);
        assert_eq!(trace.matrices()[0][(0, 1)], Complex64::new(0.0, 1.0));
        assert_eq!(trace.matrices()[1][(1, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn empty_file_is_empty_list() {
        let trace = parse_channel_trace("").unwrap();
        assert!(trace.is_empty());
        let trace = parse_channel_trace("  \n\t\n").unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn short_record_names_the_record() {
        // Second record has n_r*n_t - 1 entries.
        let text = "2 2 2\n1,0 0,1 0,-1 1,0\n0.5,0.5 1,1 -1,0\n";
        let err = parse_channel_trace(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 1"), "got: {msg}");
        assert!(msg.contains("found 3"), "got: {msg}");
    }

    #[test]
    fn malformed_entry_reports_line() {
        let text = "1 1 1\nnot-a-pair\n";
        let err = parse_channel_trace(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
    }
}
