//! LIBSVM text format.
//!
//! Grammar, one sample per line:
//!
//! ```text
//! line    := label (ws index ':' value)* [ws] ['#' comment]
//! label   := a number equal to -1 or +1 (or 0 / 1, remapped)
//! index   := positive integer, 1-based, strictly increasing along the line
//! value   := floating-point number; zero values are dropped
//! ```
//!
//! Blank lines and lines starting with `#` are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CsrMatrix;
use crate::error::{Error, Result};

/// Binary-labelled sparse samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: CsrMatrix,
    pub labels: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(samples: CsrMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != samples.rows() {
            return Err(Error::DimensionMismatch { expected: samples.rows(), got: labels.len() });
        }
        if let Some(l) = labels.iter().find(|l| **l != 1.0 && **l != -1.0) {
            return Err(Error::invalid(format!("labels must be -1 or +1, found {l}")));
        }
        Ok(LabeledDataset { samples, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn n_features(&self) -> usize {
        self.samples.cols()
    }
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let f = File::open(path)?;
    parse_libsvm(BufReader::new(f), &path.display().to_string(), None)
}

/// Parses LIBSVM text. The feature count is the largest index seen unless
/// `n_features` is given, in which case larger indices are an error.
pub fn parse_libsvm<R: BufRead>(reader: R, name: &str, n_features: Option<usize>) -> Result<LabeledDataset> {
    let err = |line: usize, message: String| Error::Parse { path: name.to_string(), line, message };
    let mut row_ptr = vec![0usize];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut raw_labels: Vec<(usize, f64)> = Vec::new();
    let mut max_col = 0usize;

    for (ln, line) in reader.lines().enumerate() {
        let line_no = ln + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| err(line_no, format!("bad label `{label_tok}`")))?;
        raw_labels.push((line_no, label));

        let mut prev: Option<usize> = None;
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| err(line_no, format!("expected index:value, got `{tok}`")))?;
            let idx: usize = i.parse().map_err(|_| err(line_no, format!("bad index `{i}`")))?;
            if idx == 0 {
                return Err(err(line_no, "indices are 1-based; found 0".into()));
            }
            let val: f64 = v.parse().map_err(|_| err(line_no, format!("bad value `{v}`")))?;
            if !val.is_finite() {
                return Err(err(line_no, format!("non-finite value `{v}`")));
            }
            if let Some(p) = prev {
                if idx <= p {
                    return Err(err(line_no, format!("index {idx} not greater than previous index {p}")));
                }
            }
            prev = Some(idx);
            if let Some(n) = n_features {
                if idx > n {
                    return Err(err(line_no, format!("index {idx} exceeds feature count {n}")));
                }
            }
            max_col = max_col.max(idx);
            if val != 0.0 {
                col_idx.push(idx - 1);
                values.push(val);
            }
        }
        row_ptr.push(col_idx.len());
    }

    let zero_one = raw_labels.iter().all(|(_, l)| *l == 0.0 || *l == 1.0) && raw_labels.iter().any(|(_, l)| *l == 0.0);
    let labels = if zero_one {
        log::warn!("{name}: labels in {{0, 1}} remapped to {{-1, +1}}");
        raw_labels.iter().map(|(_, l)| if *l == 0.0 { -1.0 } else { 1.0 }).collect()
    } else {
        if let Some((line, l)) = raw_labels.iter().find(|(_, l)| *l != 1.0 && *l != -1.0) {
            return Err(err(*line, format!("label {l} is not -1 or +1")));
        }
        raw_labels.iter().map(|(_, l)| *l).collect()
    };

    let cols = n_features.unwrap_or(max_col);
    let rows = row_ptr.len() - 1;
    let samples = CsrMatrix::new(rows, cols, row_ptr, col_idx, values)?;
    LabeledDataset::new(samples, labels)
}

pub fn write_libsvm<W: Write>(ds: &LabeledDataset, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for r in 0..ds.n_samples() {
        let label = if ds.labels[r] > 0.0 { "+1" } else { "-1" };
        write!(w, "{label}")?;
        let (idx, val) = ds.samples.row(r);
        for (c, v) in idx.iter().zip(val) {
            write!(w, " {}:{}", c + 1, v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_libsvm_file(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_libsvm(ds, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<LabeledDataset> {
        parse_libsvm(s.as_bytes(), "mem", None)
    }

    #[test]
    fn single_entry_line() {
        let ds = parse("+1 3:0.5\n").unwrap();
        assert_eq!(ds.n_samples(), 1);
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.samples.row(0), (&[2usize][..], &[0.5][..]));
        assert_eq!(ds.labels, vec![1.0]);
    }

    #[test]
    fn drops_zeros_and_skips_blanks() {
        let ds = parse("# header\n-1 1:0 2:1.5\n\n+1 4:2 # trailing\n").unwrap();
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.samples.nnz(), 2);
        assert_eq!(ds.n_features(), 4);
    }

    #[test]
    fn reports_line_numbers() {
        match parse("+1 1:1\n-1 3:1 2:1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("+1 1:1\n\n2 1:1\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("expected label error, got {other:?}"),
        }
        assert!(matches!(parse("+1 0:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("+1 a:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("+1 2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_one_labels_remapped() {
        let ds = parse("0 1:1\n1 2:1\n").unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0]);
    }

    #[test]
    fn feature_count_override() {
        let ds = parse_libsvm("+1 2:1\n".as_bytes(), "mem", Some(10)).unwrap();
        assert_eq!(ds.n_features(), 10);
        assert!(parse_libsvm("+1 12:1\n".as_bytes(), "mem", Some(10)).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            rows in proptest::collection::vec(
                (any::<bool>(), proptest::collection::btree_map(0usize..30, -1e3f64..1e3, 0..6)),
                1..12,
            ),
        ) {
            let mut t = Vec::new();
            let mut labels = Vec::new();
            for (r, (pos, entries)) in rows.iter().enumerate() {
                labels.push(if *pos { 1.0 } else { -1.0 });
                for (c, v) in entries {
                    if *v != 0.0 {
                        t.push((r, *c, *v));
                    }
                }
            }
            let ds = LabeledDataset::new(CsrMatrix::from_triplets(rows.len(), 30, &t).unwrap(), labels).unwrap();
            let mut buf = Vec::new();
            write_libsvm(&ds, &mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice(), "mem", Some(30)).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
