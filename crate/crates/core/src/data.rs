//! Labeled N×T data matrices (rows = channels, columns = time).

use std::fmt;
use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

/// What a matrix row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Amplitude,
    RawPhase,
    CalibratedPhase,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::Amplitude => write!(f, "amplitude"),
            ChannelKind::RawPhase => write!(f, "raw_phase"),
            ChannelKind::CalibratedPhase => write!(f, "calibrated_phase"),
        }
    }
}

/// Identity of one matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowLabel {
    /// A (transmit, receive, subcarrier) channel from a capture.
    Csi {
        tx: u8,
        rx: u8,
        subcarrier: u8,
        kind: ChannelKind,
    },
    /// A row of synthetically generated data.
    Synthetic(u32),
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Csi {
                tx,
                rx,
                subcarrier,
                kind,
            } => write!(f, "{},{},{},{}", tx, rx, subcarrier, kind),
            RowLabel::Synthetic(i) => write!(f, "0,0,{},synthetic", i),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row count {rows} does not match label count {labels}")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("duplicate row label {0}")]
    DuplicateLabel(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("matrix needs at least {min} columns, got {got}")]
    TooFewColumns { min: usize, got: usize },
}

/// An N×T real matrix with per-row channel labels; the observed data the
/// factor model decomposes.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_labels: Vec<RowLabel>,
    sample_rate: f64,
}

impl DataMatrix {
    /// Default capture rate: 1000 samples per second.
    pub const DEFAULT_SAMPLE_RATE: f64 = 1000.0;

    pub fn new(
        values: DMatrix<f64>,
        row_labels: Vec<RowLabel>,
        sample_rate: f64,
    ) -> Result<Self, DataError> {
        if values.nrows() != row_labels.len() {
            return Err(DataError::LabelMismatch {
                rows: values.nrows(),
                labels: row_labels.len(),
            });
        }
        for (i, a) in row_labels.iter().enumerate() {
            if row_labels[..i].contains(a) {
                return Err(DataError::DuplicateLabel(a.to_string()));
            }
        }
        for (r, row) in values.row_iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(DataMatrix {
            values,
            row_labels,
            sample_rate,
        })
    }

    /// Wraps a bare matrix with synthetic row labels.
    pub fn from_synthetic(values: DMatrix<f64>) -> Result<Self, DataError> {
        let labels = (0..values.nrows() as u32).map(RowLabel::Synthetic).collect();
        Self::new(values, labels, Self::DEFAULT_SAMPLE_RATE)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_labels(&self) -> &[RowLabel] {
        &self.row_labels
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Row count N.
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Column (time sample) count T.
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the matrix as comma-separated text: the row-label columns
    /// (tx, rx, subcarrier, kind), then the T values of that row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (label, row) in self.row_labels.iter().zip(self.values.row_iter()) {
            write!(out, "{}", label)?;
            for v in row.iter() {
                write!(out, ",{}", v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn label(sc: u8) -> RowLabel {
        RowLabel::Csi {
            tx: 0,
            rx: 0,
            subcarrier: sc,
            kind: ChannelKind::Amplitude,
        }
    }

    #[test]
    fn rejects_label_mismatch() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert!(matches!(
            DataMatrix::new(m, vec![label(0)], 1000.0),
            Err(DataError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_labels() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0];
        assert!(matches!(
            DataMatrix::new(m, vec![label(0), label(0)], 1000.0),
            Err(DataError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        let m = dmatrix![1.0, f64::NAN; 3.0, 4.0];
        assert!(matches!(
            DataMatrix::new(m, vec![label(0), label(1)], 1000.0),
            Err(DataError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn csv_round_shape() {
        let m = dmatrix![1.0, 2.5; -3.0, 4.0];
        let dm = DataMatrix::new(m, vec![label(0), label(1)], 1000.0).unwrap();
        let mut buf = Vec::new();
        dm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "0,0,0,amplitude,1,2.5\n0,0,1,amplitude,-3,4\n"
        );
    }
}
