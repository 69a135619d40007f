//! Generated-wave dumps: one row per wave, header `t0,t1,...`.

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplesError {
    #[error("samples file is empty")]
    Empty,
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: expected {expected} values, found {got}")]
    Width { row: usize, expected: usize, got: usize },
    #[error("row {row}, column {column}: {msg}")]
    Value { row: usize, column: usize, msg: String },
    #[error("row {row}: {msg}")]
    Csv { row: usize, msg: String },
}

pub fn header(len: usize) -> String {
    (0..len).map(|t| format!("t{t}")).collect::<Vec<_>>().join(",")
}

/// CSV text for the rows of a `[n, len]` tensor.
pub fn write_samples(samples: &Tensor) -> String {
    let (n, len) = samples.dims2().expect("samples must be [n, len]");
    let mut out = header(len);
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = samples.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parse a samples dump. Row numbers in errors count data rows from 1.
/// The result has at least one row and one column.
pub fn parse_samples(text: &[u8]) -> Result<Tensor, SamplesError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text);
    let names = reader
        .headers()
        .map_err(|e| SamplesError::Header(e.to_string()))?
        .clone();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(SamplesError::Empty);
    }
    for (t, name) in names.iter().enumerate() {
        if name.trim() != format!("t{t}") {
            return Err(SamplesError::Header(format!("column {} is {name:?}, expected \"t{t}\"", t + 1)));
        }
    }
    let width = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| SamplesError::Csv {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != width {
            return Err(SamplesError::Width {
                row,
                expected: width,
                got: record.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| SamplesError::Value {
                row,
                column: c + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(SamplesError::Value {
                    row,
                    column: c + 1,
                    msg: format!("non-finite value {v}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(SamplesError::Empty);
    }
    Ok(Tensor::from_parts(vec![rows, width], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::from_rows(&[vec![0.1, -2.5, 1e-300], vec![3.0, f64::MIN_POSITIVE, -0.0]]);
        let text = write_samples(&t);
        assert!(text.starts_with("t0,t1,t2\n"));
        assert_eq!(parse_samples(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn errors_name_the_row() {
        let e = parse_samples(b"t0,t1\n1,2\n3\n").unwrap_err();
        assert_eq!(e, SamplesError::Width { row: 2, expected: 2, got: 1 });
        assert!(e.to_string().contains("row 2"));
        let e = parse_samples(b"t0,t1\n1,2\n3,4\n5,x\n").unwrap_err();
        assert!(matches!(e, SamplesError::Value { row: 3, column: 2, .. }));
        assert!(matches!(parse_samples(b"t0\nnan\n"), Err(SamplesError::Value { .. })));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_samples(b"").unwrap_err(), SamplesError::Empty);
        assert_eq!(parse_samples(b"t0,t1\n").unwrap_err(), SamplesError::Empty);
        assert!(matches!(parse_samples(b"a,b\n1,2\n"), Err(SamplesError::Header(_))));
    }
}
