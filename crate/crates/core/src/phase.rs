//! Phase unwrapping and linear offset calibration.
//!
//! Raw per-subcarrier phases carry a ramp that is linear in the subcarrier
//! index (sampling time/frequency offset between the radios) plus a common
//! offset. Neither is identifiable on its own, but both are removed by
//! subtracting k·m_i + b, where k is the endpoint slope of the unwrapped
//! phases over the subcarrier indices m_i and b is their mean.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::data::{ChannelKind, DataMatrix, RowLabel};

/// Subcarriers reported per link by the supported capture format.
pub const SUBCARRIERS: usize = 30;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("phase vector length {phases} does not match index count {indices}")]
    LengthMismatch { phases: usize, indices: usize },
    #[error("need at least two subcarriers")]
    TooShort,
    #[error("degenerate index set: first and last subcarrier indices are equal")]
    DegenerateIndexSet,
    #[error("matrix channel kind is {0}, expected raw_phase")]
    NotRawPhase(ChannelKind),
    #[error("link ({tx},{rx}) has {got} subcarrier rows, expected {expected}")]
    BadLinkGroup { tx: u8, rx: u8, got: usize, expected: usize },
    #[error("matrix rows are not capture channels")]
    NotCsiRows,
}

/// Which 30-entry subcarrier index convention is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSetFlavor {
    /// The 802.11n 20 MHz grouped indices −28,−26,…,−2,−1,1,3,…,27,28
    /// (sum 13). The convention real captures follow.
    StandardNg2,
    /// A symmetric zero-sum idealization of the same range, ±{1,3,…,27,28}.
    PaperIdeal,
}

/// The subcarrier positions m_i the phase ramp is linear in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierIndexSet {
    flavor: IndexSetFlavor,
    indices: Vec<i32>,
}

impl SubcarrierIndexSet {
    pub fn standard_ng2() -> Self {
        let mut indices: Vec<i32> = (-14..0).map(|i| 2 * i).collect();
        indices.push(-1);
        indices.extend((0..14).map(|i| 2 * i + 1));
        indices.push(28);
        debug_assert_eq!(indices.len(), SUBCARRIERS);
        debug_assert_eq!(indices.iter().sum::<i32>(), 13);
        SubcarrierIndexSet {
            flavor: IndexSetFlavor::StandardNg2,
            indices,
        }
    }

    pub fn paper_ideal() -> Self {
        let mut pos: Vec<i32> = (0..14).map(|i| 2 * i + 1).collect();
        pos.push(28);
        let mut indices: Vec<i32> = pos.iter().rev().map(|m| -m).collect();
        indices.extend(&pos);
        debug_assert_eq!(indices.len(), SUBCARRIERS);
        debug_assert_eq!(indices.iter().sum::<i32>(), 0);
        SubcarrierIndexSet {
            flavor: IndexSetFlavor::PaperIdeal,
            indices,
        }
    }

    pub fn flavor(&self) -> IndexSetFlavor {
        self.flavor
    }

    pub fn indices(&self) -> &[i32] {
        &self.indices
    }

    pub fn index_sum(&self) -> i32 {
        self.indices.iter().sum()
    }
}

/// Slope and offset removed from one phase vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCoefficients {
    /// Radians per index unit.
    pub k: f64,
    /// Mean of the (unwrapped) phases, radians.
    pub b: f64,
}

/// One subcarrier phase vector in its three stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    pub raw: Vec<f64>,
    pub unwrapped: Vec<f64>,
    pub calibrated: Vec<f64>,
}

impl PhaseVector {
    /// Unwraps and calibrates `raw` against `idx`.
    pub fn from_raw(
        raw: &[f64],
        idx: &SubcarrierIndexSet,
    ) -> Result<(Self, CalibrationCoefficients), PhaseError> {
        let unwrapped = unwrap_phases(raw);
        let (calibrated, coeffs) = calibrate_slices(&unwrapped, &idx.indices)?;
        Ok((
            PhaseVector {
                raw: raw.to_vec(),
                unwrapped,
                calibrated,
            },
            coeffs,
        ))
    }
}

/// Lifts principal-value phases to a continuous sequence: the first entry
/// is kept, and each successive difference is shifted by a multiple of 2π
/// into (−π, π].
pub fn unwrap_phases(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut prev_raw = 0.0;
    let mut prev_out = 0.0;
    for (i, &v) in raw.iter().enumerate() {
        if i == 0 {
            out.push(v);
        } else {
            let mut d = v - prev_raw;
            while d > PI {
                d -= TAU;
            }
            while d <= -PI {
                d += TAU;
            }
            out.push(prev_out + d);
        }
        prev_raw = v;
        prev_out = *out.last().unwrap();
    }
    out
}

/// Removes the linear-in-index ramp and the mean from unwrapped phases:
/// calibrated_i = θ_i − k·m_i − b with k = (θ_last − θ_first)/(m_last −
/// m_first) and b = mean(θ).
///
/// The returned vector has bitwise-equal first and last entries for every
/// input (the subtraction is arranged so the endpoint ramp cancels exactly).
pub fn calibrate(
    unwrapped: &[f64],
    idx: &SubcarrierIndexSet,
) -> Result<(Vec<f64>, CalibrationCoefficients), PhaseError> {
    calibrate_slices(unwrapped, &idx.indices)
}

pub(crate) fn calibrate_slices(
    phases: &[f64],
    indices: &[i32],
) -> Result<(Vec<f64>, CalibrationCoefficients), PhaseError> {
    let n = phases.len();
    if n != indices.len() {
        return Err(PhaseError::LengthMismatch {
            phases: n,
            indices: indices.len(),
        });
    }
    if n < 2 {
        return Err(PhaseError::TooShort);
    }
    let m0 = indices[0];
    let dm = indices[n - 1] - m0;
    if dm == 0 {
        return Err(PhaseError::DegenerateIndexSet);
    }
    let dm = dm as f64;
    let dtheta = phases[n - 1] - phases[0];
    let k = dtheta / dm;
    let b = phases.iter().sum::<f64>() / n as f64;
    // Equivalent to θ_i − k·m_i − b, but with the ramp expressed through
    // r_i = (m_i − m_0)/(m_last − m_0) so that r = 0 and r = 1 hold exactly
    // at the endpoints and the output's endpoint slope is exactly zero.
    let base = b - phases[0] + k * m0 as f64;
    let calibrated = phases
        .iter()
        .zip(indices)
        .map(|(&theta, &m)| {
            let r = (m - m0) as f64 / dm;
            (theta - phases[0]) - dtheta * r - base
        })
        .collect();
    Ok((calibrated, CalibrationCoefficients { k, b }))
}

/// Applies unwrap + calibrate to every (link, time) slice of a raw-phase
/// matrix, producing the calibrated-phase matrix.
///
/// Rows must be capture channels of kind `RawPhase`, grouped per link with
/// exactly one row per subcarrier position.
pub fn calibrate_matrix(
    matrix: &DataMatrix,
    idx: &SubcarrierIndexSet,
) -> Result<DataMatrix, PhaseError> {
    let labels = matrix.row_labels();
    let mut links: Vec<(u8, u8)> = Vec::new();
    for label in labels {
        match label {
            RowLabel::Csi { tx, rx, kind, .. } => {
                if *kind != ChannelKind::RawPhase {
                    return Err(PhaseError::NotRawPhase(*kind));
                }
                if !links.contains(&(*tx, *rx)) {
                    links.push((*tx, *rx));
                }
            }
            RowLabel::Synthetic(_) => return Err(PhaseError::NotCsiRows),
        }
    }

    let mut values = matrix.values().clone();
    let mut new_labels = Vec::with_capacity(labels.len());
    for &(tx, rx) in &links {
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, RowLabel::Csi { tx: t, rx: r, .. } if *t == tx && *r == rx))
            .map(|(i, _)| i)
            .collect();
        if rows.len() != idx.indices.len() {
            return Err(PhaseError::BadLinkGroup {
                tx,
                rx,
                got: rows.len(),
                expected: idx.indices.len(),
            });
        }
        for col in 0..matrix.ncols() {
            let raw: Vec<f64> = rows.iter().map(|&r| values[(r, col)]).collect();
            let unwrapped = unwrap_phases(&raw);
            let (calibrated, _) = calibrate_slices(&unwrapped, &idx.indices)?;
            for (&r, v) in rows.iter().zip(calibrated) {
                values[(r, col)] = v;
            }
        }
    }
    for label in labels {
        if let RowLabel::Csi {
            tx, rx, subcarrier, ..
        } = label
        {
            new_labels.push(RowLabel::Csi {
                tx: *tx,
                rx: *rx,
                subcarrier: *subcarrier,
                kind: ChannelKind::CalibratedPhase,
            });
        }
    }
    Ok(DataMatrix::new(values, new_labels, matrix.sample_rate()).expect("shape preserved"))
}
