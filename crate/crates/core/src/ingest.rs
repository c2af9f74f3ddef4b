//! Capture-log parsing, CSI scaling, and data-matrix assembly.
//!
//! The supported log format is a sequence of records, each framed by a
//! 2-byte big-endian length and a 1-byte code. Code 0xBB carries one CSI
//! frame as a little-endian header followed by bit-packed complex CSI:
//! per subcarrier, a 3-bit skip, then one signed (real, imag) byte pair per
//! transmit/receive pair at whatever bit offset the cursor has reached.
//! Bits are consumed least-significant-first within each byte.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

use crate::data::{ChannelKind, DataMatrix, DataError, RowLabel};

/// Subcarriers per link in this log format.
pub const SUBCARRIERS: usize = 30;

const CSI_RECORD_CODE: u8 = 0xBB;
const HEADER_BYTES: usize = 20;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frame is already scaled")]
    AlreadyScaled,
    #[error("cannot scale: all RSSI fields are zero")]
    AllRssiZero,
    #[error("no frames to assemble")]
    EmptyFrameSet,
    #[error("frames mix antenna configurations: {0}x{1} vs {2}x{3}")]
    MixedAntennaConfig(u8, u8, u8, u8),
    #[error("link ({tx},{rx}) outside the {n_tx}x{n_rx} configuration")]
    UnknownLink { tx: u8, rx: u8, n_tx: u8, n_rx: u8 },
    #[error("channel kind {0} cannot be assembled from frames")]
    BadChannelKind(ChannelKind),
}

/// One parsed capture record.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    /// Device clock at capture, in 1 µs ticks (wraps).
    pub timestamp_low: u32,
    /// Driver-side frame counter.
    pub bfee_count: u16,
    pub n_rx: u8,
    pub n_tx: u8,
    pub rssi_a: u8,
    pub rssi_b: u8,
    pub rssi_c: u8,
    /// Noise floor in dBm; −127 means unmeasured.
    pub noise: i8,
    /// Automatic gain control, dB.
    pub agc: u8,
    /// Decoded receive-chain permutation.
    pub antenna_perm: [u8; 3],
    pub rate_flags: u16,
    reserved: [u8; 2],
    antenna_sel: u8,
    /// Wire order: subcarrier-major, then the rx·n_tx + tx pair.
    csi: Vec<Complex<f64>>,
    scaled: bool,
}

impl CsiFrame {
    /// Builds an unscaled frame from raw integer CSI components given in
    /// wire order (subcarrier-major, transmit antenna fastest).
    #[allow(clippy::too_many_arguments)]
    pub fn new_raw(
        timestamp_low: u32,
        bfee_count: u16,
        n_rx: u8,
        n_tx: u8,
        rssi: (u8, u8, u8),
        noise: i8,
        agc: u8,
        antenna_perm: [u8; 3],
        rate_flags: u16,
        csi: Vec<Complex<f64>>,
    ) -> Result<Self, IngestError> {
        if !(1..=3).contains(&n_rx) || !(1..=3).contains(&n_tx) {
            return Err(IngestError::InvalidFrame(format!(
                "antenna counts {n_tx}x{n_rx} out of range"
            )));
        }
        validate_perm(antenna_perm, n_rx)?;
        let expected = SUBCARRIERS * n_rx as usize * n_tx as usize;
        if csi.len() != expected {
            return Err(IngestError::InvalidFrame(format!(
                "csi has {} entries, expected {expected}",
                csi.len()
            )));
        }
        for v in &csi {
            for part in [v.re, v.im] {
                if part.fract() != 0.0 || !(-128.0..=127.0).contains(&part) {
                    return Err(IngestError::InvalidFrame(format!(
                        "raw csi component {part} is not a signed byte"
                    )));
                }
            }
        }
        let antenna_sel =
            antenna_perm[0] | (antenna_perm[1] << 2) | (antenna_perm[2] << 4);
        Ok(CsiFrame {
            timestamp_low,
            bfee_count,
            n_rx,
            n_tx,
            rssi_a: rssi.0,
            rssi_b: rssi.1,
            rssi_c: rssi.2,
            noise,
            agc,
            antenna_perm,
            rate_flags,
            reserved: [0, 0],
            antenna_sel,
            csi,
            scaled: false,
        })
    }

    /// CSI value for (subcarrier, tx, rx).
    pub fn csi(&self, subcarrier: usize, tx: usize, rx: usize) -> Complex<f64> {
        let pairs = self.n_rx as usize * self.n_tx as usize;
        self.csi[subcarrier * pairs + rx * self.n_tx as usize + tx]
    }

    pub fn csi_values(&self) -> &[Complex<f64>] {
        &self.csi
    }

    /// Whether [`scale_csi`] has been applied.
    pub fn is_scaled(&self) -> bool {
        self.scaled
    }
}

fn validate_perm(perm: [u8; 3], n_rx: u8) -> Result<(), IngestError> {
    let mut seen = [false; 3];
    for &p in perm.iter().take(n_rx as usize) {
        if p >= n_rx || seen[p as usize] {
            return Err(IngestError::InvalidFrame(format!(
                "antenna permutation {perm:?} invalid for {n_rx} receive chains"
            )));
        }
        seen[p as usize] = true;
    }
    if perm.iter().any(|&p| p > 2) {
        return Err(IngestError::InvalidFrame(format!(
            "antenna permutation {perm:?} has entries above 2"
        )));
    }
    Ok(())
}

/// Byte count of the bit-packed CSI block for one frame.
fn csi_byte_len(n_rx: u8, n_tx: u8) -> usize {
    let pairs = n_rx as usize * n_tx as usize;
    (SUBCARRIERS * (pairs * 16 + 3) + 7) / 8
}

/// A signed byte read at an arbitrary bit offset, least-significant bits
/// first within each byte.
pub(crate) fn read_i8_at_bit(payload: &[u8], bit: usize) -> i8 {
    let byte = bit / 8;
    let rem = bit % 8;
    let lo = payload[byte] >> rem;
    let v = if rem == 0 {
        lo
    } else {
        lo | (payload.get(byte + 1).copied().unwrap_or(0) << (8 - rem))
    };
    v as i8
}

/// What the parser saw besides the frames it returns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Records with a code other than 0xBB, skipped.
    pub skipped_records: usize,
    /// Per-record parse failures: (byte offset of the record, reason).
    /// The parser resynchronizes at the next record boundary.
    pub malformed: Vec<(usize, String)>,
    /// 1 if the stream ended inside a record.
    pub truncated_records: usize,
}

impl ParseStats {
    pub fn warning_count(&self) -> usize {
        self.skipped_records + self.malformed.len() + self.truncated_records
    }
}

/// Parses a record stream. Frames come back in stream order; non-CSI
/// records are skipped, malformed records are reported in the stats and the
/// parser resumes at the next record boundary, and a truncated trailing
/// record is discarded with a warning count.
pub fn parse_log(bytes: &[u8]) -> (Vec<CsiFrame>, ParseStats) {
    let mut frames = Vec::new();
    let mut stats = ParseStats::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 3 {
            stats.truncated_records += 1;
            break;
        }
        let field_len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        let code = bytes[pos + 2];
        if field_len == 0 {
            stats
                .malformed
                .push((pos, "record length 0 cannot hold a code byte".into()));
            pos += 3;
            continue;
        }
        let record_end = pos + 2 + field_len;
        if record_end > bytes.len() {
            stats.truncated_records += 1;
            break;
        }
        if code != CSI_RECORD_CODE {
            stats.skipped_records += 1;
            pos = record_end;
            continue;
        }
        let payload = &bytes[pos + 3..record_end];
        match parse_payload(payload) {
            Ok(frame) => frames.push(frame),
            Err(e) => stats.malformed.push((pos, e.to_string())),
        }
        pos = record_end;
    }
    (frames, stats)
}

fn parse_payload(payload: &[u8]) -> Result<CsiFrame, IngestError> {
    if payload.len() < HEADER_BYTES {
        return Err(IngestError::InvalidFrame(format!(
            "payload of {} bytes is shorter than the {HEADER_BYTES}-byte header",
            payload.len()
        )));
    }
    let n_rx = payload[8];
    let n_tx = payload[9];
    if !(1..=3).contains(&n_rx) || !(1..=3).contains(&n_tx) {
        return Err(IngestError::InvalidFrame(format!(
            "antenna counts {n_tx}x{n_rx} out of range"
        )));
    }
    let declared_len = u16::from_le_bytes([payload[16], payload[17]]) as usize;
    let expected_len = csi_byte_len(n_rx, n_tx);
    if declared_len != expected_len {
        return Err(IngestError::InvalidFrame(format!(
            "declared csi length {declared_len} inconsistent with {n_tx}x{n_rx} (expected {expected_len})"
        )));
    }
    if payload.len() != HEADER_BYTES + declared_len {
        return Err(IngestError::InvalidFrame(format!(
            "payload of {} bytes does not match header+csi = {}",
            payload.len(),
            HEADER_BYTES + declared_len
        )));
    }
    let antenna_sel = payload[15];
    let antenna_perm = [
        antenna_sel & 0x3,
        (antenna_sel >> 2) & 0x3,
        (antenna_sel >> 4) & 0x3,
    ];
    validate_perm(antenna_perm, n_rx)?;

    let csi_bytes = &payload[HEADER_BYTES..];
    let pairs = n_rx as usize * n_tx as usize;
    let mut csi = Vec::with_capacity(SUBCARRIERS * pairs);
    let mut bit = 0usize;
    for _ in 0..SUBCARRIERS {
        bit += 3;
        for _ in 0..pairs {
            let re = read_i8_at_bit(csi_bytes, bit);
            bit += 8;
            let im = read_i8_at_bit(csi_bytes, bit);
            bit += 8;
            csi.push(Complex::new(re as f64, im as f64));
        }
    }

    Ok(CsiFrame {
        timestamp_low: u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]),
        bfee_count: u16::from_le_bytes([payload[4], payload[5]]),
        n_rx,
        n_tx,
        rssi_a: payload[10],
        rssi_b: payload[11],
        rssi_c: payload[12],
        noise: payload[13] as i8,
        agc: payload[14],
        antenna_perm,
        rate_flags: u16::from_le_bytes([payload[18], payload[19]]),
        reserved: [payload[6], payload[7]],
        antenna_sel,
        csi,
        scaled: false,
    })
}

/// Serializes one unscaled frame as a complete record (length, code,
/// payload). Inverse of [`parse_log`] for well-formed records.
pub fn encode_record(frame: &CsiFrame) -> Result<Vec<u8>, IngestError> {
    if frame.scaled {
        return Err(IngestError::AlreadyScaled);
    }
    let csi_len = csi_byte_len(frame.n_rx, frame.n_tx);
    let field_len = 1 + HEADER_BYTES + csi_len;
    let mut out = Vec::with_capacity(2 + field_len);
    out.extend_from_slice(&(field_len as u16).to_be_bytes());
    out.push(CSI_RECORD_CODE);
    out.extend_from_slice(&frame.timestamp_low.to_le_bytes());
    out.extend_from_slice(&frame.bfee_count.to_le_bytes());
    out.extend_from_slice(&frame.reserved);
    out.push(frame.n_rx);
    out.push(frame.n_tx);
    out.push(frame.rssi_a);
    out.push(frame.rssi_b);
    out.push(frame.rssi_c);
    out.push(frame.noise as u8);
    out.push(frame.agc);
    out.push(frame.antenna_sel);
    out.extend_from_slice(&(csi_len as u16).to_le_bytes());
    out.extend_from_slice(&frame.rate_flags.to_le_bytes());

    let mut packed = vec![0u8; csi_len];
    let mut bit = 0usize;
    let pairs = frame.n_rx as usize * frame.n_tx as usize;
    let write_byte = |packed: &mut [u8], bit: usize, v: u8| {
        let byte = bit / 8;
        let rem = bit % 8;
        packed[byte] |= v << rem;
        if rem > 0 {
            packed[byte + 1] |= v >> (8 - rem);
        }
    };
    for sc in 0..SUBCARRIERS {
        bit += 3;
        for j in 0..pairs {
            let v = frame.csi[sc * pairs + j];
            write_byte(&mut packed, bit, (v.re as i32 as i8) as u8);
            bit += 8;
            write_byte(&mut packed, bit, (v.im as i32 as i8) as u8);
            bit += 8;
        }
    }
    out.extend_from_slice(&packed);
    Ok(out)
}

/// Serializes a frame sequence as a record stream.
pub fn encode_frames(frames: &[CsiFrame]) -> Result<Vec<u8>, IngestError> {
    let mut out = Vec::new();
    for frame in frames {
        out.extend_from_slice(&encode_record(frame)?);
    }
    Ok(out)
}

fn dbinv(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts raw integer CSI to absolute channel-magnitude units using the
/// RSSI, AGC, and noise metadata, following the public reference
/// conversion for this NIC family.
pub fn scale_csi(frame: &CsiFrame) -> Result<CsiFrame, IngestError> {
    if frame.scaled {
        return Err(IngestError::AlreadyScaled);
    }
    if frame.rssi_a == 0 && frame.rssi_b == 0 && frame.rssi_c == 0 {
        return Err(IngestError::AllRssiZero);
    }
    let mut out = frame.clone();
    out.scaled = true;

    let csi_pwr: f64 = frame.csi.iter().map(|v| v.norm_sqr()).sum();
    if csi_pwr == 0.0 {
        // nothing to scale; zero stays zero
        return Ok(out);
    }

    let mut rssi_mag = 0.0;
    for rssi in [frame.rssi_a, frame.rssi_b, frame.rssi_c] {
        if rssi != 0 {
            rssi_mag += dbinv(rssi as f64);
        }
    }
    let total_rss_db = 10.0 * rssi_mag.log10() - 44.0 - frame.agc as f64;
    let rssi_pwr = dbinv(total_rss_db);

    let scale = rssi_pwr / (csi_pwr / SUBCARRIERS as f64);
    let noise_db = if frame.noise == -127 { -92.0 } else { frame.noise as f64 };
    let thermal_noise_pwr = dbinv(noise_db);
    let quant_error_pwr = scale * (frame.n_rx as f64 * frame.n_tx as f64);
    let mut factor = (scale / (thermal_noise_pwr + quant_error_pwr)).sqrt();
    if frame.n_tx == 2 {
        factor *= 2f64.sqrt();
    } else if frame.n_tx == 3 {
        factor *= dbinv(4.5).sqrt();
    }
    for v in &mut out.csi {
        *v *= factor;
    }
    Ok(out)
}

/// Which transmit/receive links to keep when assembling a matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum LinkSelection {
    #[default]
    All,
    Links(Vec<(u8, u8)>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssembleStats {
    /// Zero-magnitude entries whose phase was defined as 0.
    pub zero_magnitude: usize,
}

/// Stacks frames into an N×T matrix: one row per selected (tx, rx,
/// subcarrier) in lexicographic order, one column per frame.
pub fn assemble_matrix(
    frames: &[CsiFrame],
    kind: ChannelKind,
    selection: &LinkSelection,
    sample_rate: f64,
) -> Result<(DataMatrix, AssembleStats), IngestError> {
    if frames.is_empty() {
        return Err(IngestError::EmptyFrameSet);
    }
    if kind == ChannelKind::CalibratedPhase {
        return Err(IngestError::BadChannelKind(kind));
    }
    let (n_tx, n_rx) = (frames[0].n_tx, frames[0].n_rx);
    for f in frames {
        if f.n_tx != n_tx || f.n_rx != n_rx {
            return Err(IngestError::MixedAntennaConfig(n_tx, n_rx, f.n_tx, f.n_rx));
        }
    }
    let mut links: Vec<(u8, u8)> = match selection {
        LinkSelection::All => (0..n_tx)
            .flat_map(|tx| (0..n_rx).map(move |rx| (tx, rx)))
            .collect(),
        LinkSelection::Links(list) => {
            for &(tx, rx) in list {
                if tx >= n_tx || rx >= n_rx {
                    return Err(IngestError::UnknownLink { tx, rx, n_tx, n_rx });
                }
            }
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            list
        }
    };
    links.sort_unstable();

    let n = links.len() * SUBCARRIERS;
    let t = frames.len();
    let mut values = DMatrix::zeros(n, t);
    let mut labels = Vec::with_capacity(n);
    let mut stats = AssembleStats::default();
    for (row_block, &(tx, rx)) in links.iter().enumerate() {
        for sc in 0..SUBCARRIERS {
            let row = row_block * SUBCARRIERS + sc;
            labels.push(RowLabel::Csi {
                tx,
                rx,
                subcarrier: sc as u8,
                kind,
            });
            for (col, frame) in frames.iter().enumerate() {
                let h = frame.csi(sc, tx as usize, rx as usize);
                values[(row, col)] = match kind {
                    ChannelKind::Amplitude => h.norm(),
                    ChannelKind::RawPhase => {
                        if h.re == 0.0 && h.im == 0.0 {
                            stats.zero_magnitude += 1;
                            0.0
                        } else {
                            h.arg()
                        }
                    }
                    ChannelKind::CalibratedPhase => unreachable!(),
                };
            }
        }
    }
    Ok((DataMatrix::new(values, labels, sample_rate)?, stats))
}

/// Drops frames whose antenna configuration differs from the first
/// frame's. Returns the survivors and the dropped count.
pub fn filter_consistent(frames: Vec<CsiFrame>) -> (Vec<CsiFrame>, usize) {
    let Some(first) = frames.first() else {
        return (frames, 0);
    };
    let (n_tx, n_rx) = (first.n_tx, first.n_rx);
    let before = frames.len();
    let kept: Vec<CsiFrame> = frames
        .into_iter()
        .filter(|f| f.n_tx == n_tx && f.n_rx == n_rx)
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// One manifest row: a capture file and its activity annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub subject: String,
    pub repetition: u32,
}

/// The dataset layout: `path,label,subject,repetition` rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a manifest file; relative paths resolve against the manifest's
    /// directory.
    pub fn from_csv_file(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_csv(&text, base)
    }

    pub fn parse_csv(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if i == 0 {
                if line != "path,label,subject,repetition" {
                    return Err(IngestError::Manifest {
                        line: 1,
                        message: format!(
                            "expected header `path,label,subject,repetition`, got `{line}`"
                        ),
                    });
                }
                continue;
            }
            // split from the right so paths may contain commas
            let mut fields = line.rsplitn(4, ',');
            let (rep, subject, label, path) = (
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
            );
            let (Some(rep), Some(subject), Some(label), Some(path)) =
                (rep, subject, label, path)
            else {
                return Err(IngestError::Manifest {
                    line: i + 1,
                    message: "expected 4 comma-separated fields".into(),
                });
            };
            let repetition: u32 = rep.trim().parse().map_err(|_| IngestError::Manifest {
                line: i + 1,
                message: format!("repetition `{rep}` is not an unsigned integer"),
            })?;
            let raw = PathBuf::from(path.trim());
            let resolved = if raw.is_absolute() {
                raw
            } else {
                base_dir.join(raw)
            };
            entries.push(ManifestEntry {
                path: resolved,
                label: label.trim().to_string(),
                subject: subject.trim().to_string(),
                repetition,
            });
        }
        Ok(DatasetManifest { entries })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "path,label,subject,repetition")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{}",
                e.path.display(),
                e.label,
                e.subject,
                e.repetition
            )?;
        }
        Ok(())
    }

    /// Histogram of labels over the entries.
    pub fn label_histogram(&self) -> HashMap<String, usize> {
        let mut h = HashMap::new();
        for e in &self.entries {
            *h.entry(e.label.clone()).or_insert(0) += 1;
        }
        h
    }
}

/// Knobs for [`load_dataset`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Convert the CSI to absolute units before taking amplitudes.
    pub scale: bool,
    pub link_selection: LinkSelection,
    pub sample_rate: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            scale: true,
            link_selection: LinkSelection::All,
            sample_rate: DataMatrix::DEFAULT_SAMPLE_RATE,
        }
    }
}

/// One loaded, labeled recording.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub label: String,
    pub subject: String,
    pub repetition: u32,
    pub amplitude: DataMatrix,
    pub raw_phase: DataMatrix,
    pub parse_stats: ParseStats,
    /// Frames dropped for not matching the file's first antenna
    /// configuration.
    pub dropped_frames: usize,
    pub zero_magnitude: usize,
}

/// A per-entry failure that did not stop the rest of the load.
#[derive(Debug, Clone)]
pub struct EntryError {
    pub index: usize,
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub samples: Vec<LoadedSample>,
    pub errors: Vec<EntryError>,
}

/// Loads every manifest entry into an (amplitude, raw phase) matrix pair.
/// Unreadable or undersized entries become [`EntryError`]s; the remaining
/// entries still load.
pub fn load_dataset(manifest: &DatasetManifest, options: &LoadOptions) -> LoadedDataset {
    let mut out = LoadedDataset::default();
    for (index, entry) in manifest.entries.iter().enumerate() {
        match load_entry(entry, options) {
            Ok(sample) => out.samples.push(sample),
            Err(e) => out.errors.push(EntryError {
                index,
                path: entry.path.clone(),
                message: e.to_string(),
            }),
        }
    }
    out
}

fn load_entry(entry: &ManifestEntry, options: &LoadOptions) -> Result<LoadedSample, IngestError> {
    let bytes = fs::read(&entry.path)?;
    let (frames, parse_stats) = parse_log(&bytes);
    let (frames, dropped_frames) = filter_consistent(frames);
    if frames.len() < 2 {
        return Err(IngestError::InvalidFrame(format!(
            "file yields {} frames, need at least 2",
            frames.len()
        )));
    }
    let amp_frames: Vec<CsiFrame> = if options.scale {
        frames
            .iter()
            .map(scale_csi)
            .collect::<Result<_, _>>()?
    } else {
        frames.clone()
    };
    let (amplitude, _) = assemble_matrix(
        &amp_frames,
        ChannelKind::Amplitude,
        &options.link_selection,
        options.sample_rate,
    )?;
    let (raw_phase, phase_stats) = assemble_matrix(
        &frames,
        ChannelKind::RawPhase,
        &options.link_selection,
        options.sample_rate,
    )?;
    Ok(LoadedSample {
        label: entry.label.clone(),
        subject: entry.subject.clone(),
        repetition: entry.repetition,
        amplitude,
        raw_phase,
        parse_stats,
        dropped_frames,
        zero_magnitude: phase_stats.zero_magnitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, n_rx: u8, n_tx: u8) -> CsiFrame {
        let pairs = n_rx as usize * n_tx as usize;
        let csi: Vec<Complex<f64>> = (0..SUBCARRIERS * pairs)
            .map(|_| {
                Complex::new(
                    rng.gen_range(-128i32..=127) as f64,
                    rng.gen_range(-128i32..=127) as f64,
                )
            })
            .collect();
        let mut perm = [0u8, 1, 2];
        // random permutation of the active chains
        for i in (1..n_rx as usize).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        CsiFrame::new_raw(
            rng.gen(),
            rng.gen(),
            n_rx,
            n_tx,
            (rng.gen_range(1..=60), rng.gen_range(0..=60), rng.gen_range(0..=60)),
            rng.gen_range(-100..=-60),
            rng.gen_range(10..=40),
            perm,
            rng.gen(),
            csi,
        )
        .unwrap()
    }

    #[test]
    fn signed_bit_extraction() {
        assert_eq!(read_i8_at_bit(&[0x01, 0x00], 0), 1);
        assert_eq!(read_i8_at_bit(&[0xFF], 0), -1);
        // value 3 spanning a byte boundary at bit offset 7
        assert_eq!(read_i8_at_bit(&[0b1000_0000, 0b0000_0001], 7), 3);
        // sign bit taken from the second byte
        assert_eq!(read_i8_at_bit(&[0b1000_0000, 0b1111_1111], 7), -1);
    }

    #[test]
    fn antenna_sel_decodes_to_identity_permutation() {
        let mut frame = random_frame(&mut ChaCha8Rng::seed_from_u64(0), 3, 3);
        frame.antenna_sel = 0x24;
        let record = encode_record(&frame).unwrap();
        // patch the antenna_sel byte in the payload and re-parse
        let (frames, stats) = parse_log(&record);
        assert!(stats.malformed.is_empty());
        assert_eq!(frames[0].antenna_perm, [0, 1, 2]);
    }

    #[test]
    fn round_trip_all_antenna_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n_rx in 1..=3u8 {
            for n_tx in 1..=3u8 {
                for _ in 0..20 {
                    let frame = random_frame(&mut rng, n_rx, n_tx);
                    let bytes = encode_record(&frame).unwrap();
                    let (frames, stats) = parse_log(&bytes);
                    assert_eq!(stats.warning_count(), 0);
                    assert_eq!(frames.len(), 1);
                    assert_eq!(frames[0], frame);
                    // parse → serialize reproduces the record bit-for-bit
                    assert_eq!(encode_record(&frames[0]).unwrap(), bytes);
                }
            }
        }
    }

    #[test]
    fn parsed_components_stay_in_signed_byte_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = random_frame(&mut rng, 3, 2);
        let (frames, _) = parse_log(&encode_record(&frame).unwrap());
        for v in frames[0].csi_values() {
            assert!((-128.0..=127.0).contains(&v.re));
            assert!((-128.0..=127.0).contains(&v.im));
            assert_eq!(v.re.fract(), 0.0);
            assert_eq!(v.im.fract(), 0.0);
        }
    }

    #[test]
    fn empty_stream_gives_empty_list() {
        let (frames, stats) = parse_log(&[]);
        assert!(frames.is_empty());
        assert_eq!(stats.warning_count(), 0);
    }

    #[test]
    fn non_csi_records_are_counted_and_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame = random_frame(&mut rng, 1, 1);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&5u16.to_be_bytes());
        bytes.push(0xC1);
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        bytes.extend_from_slice(&encode_record(&frame).unwrap());
        let (frames, stats) = parse_log(&bytes);
        assert_eq!(frames.len(), 1);
        assert_eq!(stats.skipped_records, 1);
        assert!(stats.malformed.is_empty());
    }

    #[test]
    fn malformed_record_resynchronizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame = random_frame(&mut rng, 2, 2);
        let mut bad = encode_record(&frame).unwrap();
        bad[3 + 16] ^= 0xFF; // corrupt the declared csi length
        let good = encode_record(&frame).unwrap();
        let mut bytes = bad;
        bytes.extend_from_slice(&good);
        let (frames, stats) = parse_log(&bytes);
        assert_eq!(frames.len(), 1);
        assert_eq!(stats.malformed.len(), 1);
        assert_eq!(frames[0], frame);
    }

    #[test]
    fn truncated_tail_is_discarded_with_warning() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = random_frame(&mut rng, 1, 2);
        let mut bytes = encode_record(&frame).unwrap();
        let full = encode_record(&frame).unwrap();
        bytes.extend_from_slice(&full[..full.len() / 2]);
        let (frames, stats) = parse_log(&bytes);
        assert_eq!(frames.len(), 1);
        assert_eq!(stats.truncated_records, 1);
    }

    #[test]
    fn concatenation_parses_like_concatenated_parses() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<CsiFrame> = (0..8).map(|_| random_frame(&mut rng, 2, 1)).collect();
        let streams: Vec<Vec<u8>> = frames
            .chunks(2)
            .map(|chunk| encode_frames(chunk).unwrap())
            .collect();
        let whole: Vec<u8> = streams.concat();
        let (all, _) = parse_log(&whole);
        let pieces: Vec<CsiFrame> = streams
            .iter()
            .flat_map(|s| parse_log(s).0)
            .collect();
        assert_eq!(all, pieces);
        assert_eq!(all, frames);
    }

    #[test]
    fn scaling_zero_csi_yields_zero() {
        let mut frame = random_frame(&mut ChaCha8Rng::seed_from_u64(8), 1, 1);
        for v in &mut frame.csi {
            *v = Complex::new(0.0, 0.0);
        }
        frame.rssi_a = 30;
        let scaled = scale_csi(&frame).unwrap();
        assert!(scaled.is_scaled());
        assert!(scaled.csi_values().iter().all(|v| v.re == 0.0 && v.im == 0.0));
    }

    #[test]
    fn scaling_requires_some_rssi() {
        let mut frame = random_frame(&mut ChaCha8Rng::seed_from_u64(9), 1, 1);
        frame.rssi_a = 0;
        frame.rssi_b = 0;
        frame.rssi_c = 0;
        assert!(matches!(scale_csi(&frame), Err(IngestError::AllRssiZero)));
    }

    /// Independent transliteration of the public conversion, computed from
    /// the raw integers; the implementation must match it.
    fn reference_scale(frame: &CsiFrame) -> Vec<Complex<f64>> {
        let csi_pwr: f64 = frame
            .csi_values()
            .iter()
            .map(|v| v.re * v.re + v.im * v.im)
            .sum();
        let mut rssi_mag = 0.0f64;
        for r in [frame.rssi_a, frame.rssi_b, frame.rssi_c] {
            if r != 0 {
                rssi_mag += 10f64.powf(r as f64 / 10.0);
            }
        }
        let rssi_pwr_db = 10.0 * rssi_mag.log10() - 44.0 - frame.agc as f64;
        let rssi_pwr = 10f64.powf(rssi_pwr_db / 10.0);
        let scale = rssi_pwr / (csi_pwr / 30.0);
        let noise_db = if frame.noise == -127 { -92.0 } else { frame.noise as f64 };
        let total_noise = 10f64.powf(noise_db / 10.0)
            + scale * frame.n_rx as f64 * frame.n_tx as f64;
        let mut k = (scale / total_noise).sqrt();
        if frame.n_tx == 2 {
            k *= 2f64.sqrt();
        }
        if frame.n_tx == 3 {
            k *= 10f64.powf(4.5 / 10.0).sqrt();
        }
        frame.csi_values().iter().map(|v| v * k).collect()
    }

    #[test]
    fn scaling_matches_reference_conversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n_tx in 1..=3u8 {
            let frame = random_frame(&mut rng, 3, n_tx);
            let scaled = scale_csi(&frame).unwrap();
            let expected = reference_scale(&frame);
            for (got, want) in scaled.csi_values().iter().zip(&expected) {
                assert!((got - want).norm() <= 1e-6 * want.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn single_transmit_has_no_multi_tx_correction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = random_frame(&mut rng, 2, 1);
        let scaled = scale_csi(&frame).unwrap();
        // factor recovered from any nonzero entry must equal the plain
        // sqrt(scale/noise) with no sqrt(2) or 4.5 dB term
        let raw = frame
            .csi_values()
            .iter()
            .find(|v| v.norm() > 0.0)
            .unwrap();
        let idx = frame.csi_values().iter().position(|v| v == raw).unwrap();
        let k = scaled.csi_values()[idx].norm() / raw.norm();
        let expected = reference_scale(&frame)[idx].norm() / raw.norm();
        assert!((k - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn assemble_amplitude_and_phase_values() {
        let mut csi = vec![Complex::new(0.0, 0.0); SUBCARRIERS];
        csi[0] = Complex::new(3.0, 4.0);
        let frame = CsiFrame::new_raw(0, 0, 1, 1, (30, 0, 0), -90, 20, [0, 1, 2], 0, csi).unwrap();
        let (amp, _) = assemble_matrix(
            &[frame.clone()],
            ChannelKind::Amplitude,
            &LinkSelection::All,
            1000.0,
        )
        .unwrap();
        assert_eq!(amp.values()[(0, 0)], 5.0);
        let (phase, stats) = assemble_matrix(
            &[frame],
            ChannelKind::RawPhase,
            &LinkSelection::All,
            1000.0,
        )
        .unwrap();
        assert!((phase.values()[(0, 0)] - 4f64.atan2(3.0)).abs() < 1e-12);
        // the other 29 subcarriers are zero-magnitude: phase 0 with warning
        assert_eq!(stats.zero_magnitude, SUBCARRIERS - 1);
        assert_eq!(phase.values()[(1, 0)], 0.0);
    }

    #[test]
    fn assemble_full_mimo_has_270_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frames: Vec<CsiFrame> = (0..3).map(|_| random_frame(&mut rng, 3, 3)).collect();
        let (m, _) = assemble_matrix(&frames, ChannelKind::Amplitude, &LinkSelection::All, 1000.0)
            .unwrap();
        assert_eq!(m.nrows(), 270);
        assert_eq!(m.ncols(), 3);
        assert!(m.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn assemble_identical_frames_gives_constant_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let frame = random_frame(&mut rng, 2, 2);
        let frames = vec![frame.clone(), frame];
        let (m, _) = assemble_matrix(&frames, ChannelKind::Amplitude, &LinkSelection::All, 1000.0)
            .unwrap();
        for r in 0..m.nrows() {
            assert_eq!(m.values()[(r, 0)], m.values()[(r, 1)]);
        }
    }

    #[test]
    fn assemble_rejects_mixed_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let frames = vec![random_frame(&mut rng, 2, 2), random_frame(&mut rng, 3, 2)];
        assert!(matches!(
            assemble_matrix(&frames, ChannelKind::Amplitude, &LinkSelection::All, 1000.0),
            Err(IngestError::MixedAntennaConfig(..))
        ));
    }

    #[test]
    fn assemble_respects_link_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let frames: Vec<CsiFrame> = (0..2).map(|_| random_frame(&mut rng, 3, 3)).collect();
        let sel = LinkSelection::Links(vec![(2, 1), (0, 0)]);
        let (m, _) =
            assemble_matrix(&frames, ChannelKind::Amplitude, &sel, 1000.0).unwrap();
        assert_eq!(m.nrows(), 60);
        match m.row_labels()[0] {
            RowLabel::Csi { tx, rx, .. } => assert_eq!((tx, rx), (0, 0)),
            _ => panic!(),
        }
        match m.row_labels()[30] {
            RowLabel::Csi { tx, rx, .. } => assert_eq!((tx, rx), (2, 1)),
            _ => panic!(),
        }
        assert!(matches!(
            assemble_matrix(
                &frames,
                ChannelKind::Amplitude,
                &LinkSelection::Links(vec![(5, 0)]),
                1000.0
            ),
            Err(IngestError::UnknownLink { .. })
        ));
    }

    #[test]
    fn manifest_parses_and_resolves_paths() {
        let text = "path,label,subject,repetition\n\
                    a/b.dat,walk,s1,3\n\
                    /abs/c.dat,sit,s2,1\n";
        let m = DatasetManifest::parse_csv(text, Path::new("/base")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].path, PathBuf::from("/base/a/b.dat"));
        assert_eq!(m.entries[1].path, PathBuf::from("/abs/c.dat"));
        assert_eq!(m.entries[0].label, "walk");
        assert_eq!(m.entries[0].repetition, 3);

        assert!(DatasetManifest::parse_csv("nonsense\n", Path::new(".")).is_err());
        assert!(DatasetManifest::parse_csv(
            "path,label,subject,repetition\nx.dat,walk,s1,notanumber\n",
            Path::new(".")
        )
        .is_err());
    }

    #[test]
    fn load_dataset_collects_entry_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let frames: Vec<CsiFrame> = (0..3).map(|_| random_frame(&mut rng, 1, 1)).collect();
        let good = dir.path().join("good.dat");
        fs::write(&good, encode_frames(&frames).unwrap()).unwrap();
        let manifest = DatasetManifest {
            entries: vec![
                ManifestEntry {
                    path: good,
                    label: "walk".into(),
                    subject: "s1".into(),
                    repetition: 0,
                },
                ManifestEntry {
                    path: dir.path().join("missing.dat"),
                    label: "sit".into(),
                    subject: "s1".into(),
                    repetition: 0,
                },
            ],
        };
        let loaded = load_dataset(&manifest, &LoadOptions::default());
        assert_eq!(loaded.samples.len(), 1);
        assert_eq!(loaded.errors.len(), 1);
        assert_eq!(loaded.errors[0].index, 1);
        assert_eq!(loaded.samples[0].label, "walk");
        assert_eq!(loaded.samples[0].amplitude.nrows(), SUBCARRIERS);
        assert_eq!(loaded.samples[0].amplitude.ncols(), 3);
    }

    #[test]
    fn load_dataset_paper_layout() {
        // 600 entries, 6 labels -> 600 samples, 100 per label
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels = ["lie", "pick", "sit", "stand", "standup", "walk"];
        let mut entries = Vec::new();
        for (li, label) in labels.iter().enumerate() {
            let frames: Vec<CsiFrame> = (0..2).map(|_| random_frame(&mut rng, 1, 1)).collect();
            let path = dir.path().join(format!("{label}.dat"));
            fs::write(&path, encode_frames(&frames).unwrap()).unwrap();
            for rep in 0..100 {
                entries.push(ManifestEntry {
                    path: path.clone(),
                    label: label.to_string(),
                    subject: format!("s{}", li % 6),
                    repetition: rep,
                });
            }
        }
        let manifest = DatasetManifest { entries };
        let loaded = load_dataset(&manifest, &LoadOptions::default());
        assert_eq!(loaded.samples.len(), 600);
        assert!(loaded.errors.is_empty());
        let hist = manifest.label_histogram();
        assert!(hist.values().all(|&n| n == 100));
        assert_eq!(hist.len(), 6);

        let empty = load_dataset(&DatasetManifest::default(), &LoadOptions::default());
        assert!(empty.samples.is_empty() && empty.errors.is_empty());
    }

    #[test]
    fn filter_drops_renegotiated_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = random_frame(&mut rng, 2, 2);
        let b = random_frame(&mut rng, 3, 3);
        let c = random_frame(&mut rng, 2, 2);
        let (kept, dropped) = filter_consistent(vec![a.clone(), b, c.clone()]);
        assert_eq!(kept, vec![a, c]);
        assert_eq!(dropped, 1);
    }
}
