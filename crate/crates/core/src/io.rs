//! On-disk formats: dataset CSV, fit report, run manifest and Clifford table.
//!
//! Floats are written with 17 significant digits so that a dataset read back
//! reproduces the in-memory values bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blind_rb::{RbDataset, Record, SignalPoint, Variant};
use crate::bootstrap::BootstrapCi;
use crate::calibration::{CalibrationScan, OverrotationSweep};
use crate::clifford::{CliffordGroup, ExchangePulse, Generator};
use crate::fitting::{BlindFitOptions, BlindRbFit, DecayForm, DecayParams, Rate};

pub const CSV_HEADER: [&str; 5] = ["m", "sequence_id", "variant", "p_singlet", "shots"];
/// Bumped whenever a column or report field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must be `{}`, found `{found}`", CSV_HEADER.join(","))]
    Header { found: String },
    #[error("csv line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_dataset<W: Write>(dataset: &RbDataset, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &dataset.records {
        w.write_record([
            r.m.to_string(),
            r.sequence_id.to_string(),
            r.variant.as_str().to_string(),
            format_float(r.p_singlet),
            r.shots.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_csv_bytes(dataset: &RbDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn read_dataset<R: Read>(input: R) -> Result<RbDataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(IoError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |column: &str, e: &dyn std::fmt::Display| IoError::Row {
            line,
            message: format!("{column}: {e}"),
        };
        let p_singlet: f64 = row[3].parse().map_err(|e| bad("p_singlet", &e))?;
        if !p_singlet.is_finite() {
            return Err(bad("p_singlet", &"not finite"));
        }
        records.push(Record {
            m: row[0].parse().map_err(|e| bad("m", &e))?,
            sequence_id: row[1].parse().map_err(|e| bad("sequence_id", &e))?,
            variant: row[2].parse::<Variant>().map_err(|e| bad("variant", &e))?,
            p_singlet,
            shots: row[4].parse().map_err(|e| bad("shots", &e))?,
        });
    }
    Ok(RbDataset::new(records))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of `value`: object keys sorted, no
/// whitespace. Independent of the key order of whatever file it came from.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String, IoError> {
    // serde_json's default map is ordered by key.
    let v = serde_json::to_value(value)?;
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub form: DecayForm,
    pub params: DecayParams,
    /// Over `(A, B, λ)`.
    pub covariance: [[f64; 3]; 3],
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub m: usize,
    pub d: f64,
    pub s: f64,
    pub n_sequences: usize,
}

impl From<&SignalPoint> for SignalRow {
    fn from(p: &SignalPoint) -> Self {
        Self {
            m: p.m,
            d: p.d,
            s: p.s,
            n_sequences: p.n_sequences,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// SHA-256 of the dataset CSV bytes.
    pub data_sha256: String,
    pub options: BlindFitOptions,
    pub d_model: ModelReport,
    pub s_model: ModelReport,
    pub s_fallback: bool,
    pub error_per_clifford: Rate,
    pub leakage_per_clifford: Rate,
    pub leakage_raw: Rate,
    pub bootstrap_seed: Option<u64>,
    pub bootstrap: Option<BootstrapCi>,
    pub signals: Vec<SignalRow>,
}

impl FitReport {
    pub fn new(
        data_bytes: &[u8],
        dataset: &RbDataset,
        options: BlindFitOptions,
        fit: &BlindRbFit,
        bootstrap: Option<(u64, BootstrapCi)>,
    ) -> Self {
        let model = |f: &crate::fitting::FitResult| ModelReport {
            form: f.form,
            params: f.params,
            covariance: f.covariance,
            residual_norm: f.residual_norm,
            iterations: f.iterations,
            converged: f.converged,
        };
        let (bootstrap_seed, bootstrap) = match bootstrap {
            Some((seed, ci)) => (Some(seed), Some(ci)),
            None => (None, None),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            data_sha256: sha256_hex(data_bytes),
            options,
            d_model: model(&fit.d_fit),
            s_model: model(&fit.s_fit),
            s_fallback: fit.s_fallback,
            error_per_clifford: fit.error_per_clifford,
            leakage_per_clifford: fit.leakage_per_clifford,
            leakage_raw: fit.leakage_raw,
            bootstrap_seed,
            bootstrap,
            signals: dataset.signals().iter().map(SignalRow::from).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Canonical hash of the resolved config (defaults filled in).
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliffordEntry {
    pub index: usize,
    /// Row-major `[re, im]` pairs, normalized so the first sizeable entry is real and positive.
    pub matrix: [[[f64; 2]; 2]; 2],
    pub word: Vec<Generator>,
    pub pulses: Vec<ExchangePulse>,
    pub inverse: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliffordTable {
    pub schema_version: u32,
    pub tool_version: String,
    pub total_pulses: usize,
    pub elements: Vec<CliffordEntry>,
    /// `multiplication[a][b]` = index of `M_a·M_b`.
    pub multiplication: Vec<Vec<usize>>,
}

pub fn clifford_table(group: &CliffordGroup) -> CliffordTable {
    let n = group.elements().len();
    let elements = group
        .elements()
        .iter()
        .map(|e| {
            let m = &e.matrix;
            let pivot = m
                .iter()
                .find(|z| z.norm() > 1e-6)
                .copied()
                .unwrap_or(num_complex::Complex64::new(1.0, 0.0));
            let phase = pivot.conj() / pivot.norm();
            let entry = |r: usize, c: usize| {
                let z = m[(r, c)] * phase;
                [z.re, z.im]
            };
            CliffordEntry {
                index: e.index,
                matrix: [[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]],
                word: e.word.clone(),
                pulses: e.pulses.clone(),
                inverse: group.inverse(e.index),
            }
        })
        .collect();
    CliffordTable {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.into(),
        total_pulses: group.total_pulse_count(),
        elements,
        multiplication: (0..n).map(|a| (0..n).map(|b| group.multiply(a, b)).collect()).collect(),
    }
}

pub const CALIBRATION_HEADER: [&str; 4] = ["pair", "repeats", "theta", "p_singlet"];
pub const SWEEP_HEADER: [&str; 9] = [
    "epsilon",
    "error_per_clifford",
    "error_sigma",
    "ci_lo",
    "ci_hi",
    "leakage_per_clifford",
    "leakage_sigma",
    "leakage_raw",
    "leakage_raw_sigma",
];

/// One row per `(pair, repeat count, θ)`.
pub fn write_calibration_csv<W: Write>(scans: &[&CalibrationScan], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CALIBRATION_HEADER)?;
    for scan in scans {
        for (n, row) in scan.repeat_counts.iter().zip(&scan.p) {
            for (theta, p) in scan.theta_grid.iter().zip(row) {
                w.write_record([
                    scan.pair.label().to_string(),
                    n.to_string(),
                    format_float(*theta),
                    format_float(*p),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Missing intervals are written as empty fields.
pub fn write_sweep_csv<W: Write>(sweep: &OverrotationSweep, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in &sweep.rows {
        let (lo, hi) = r.ci.map_or((String::new(), String::new()), |ci| {
            (format_float(ci.lo), format_float(ci.hi))
        });
        w.write_record([
            format_float(r.epsilon),
            format_float(r.error_per_clifford.value),
            format_float(r.error_per_clifford.sigma),
            lo,
            hi,
            format_float(r.leakage_per_clifford.value),
            format_float(r.leakage_per_clifford.sigma),
            format_float(r.leakage_raw.value),
            format_float(r.leakage_raw.sigma),
        ])?;
    }
    w.flush()?;
    Ok(())
}
