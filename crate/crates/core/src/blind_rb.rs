//! Blind randomized benchmarking: paired random sequences whose recoveries
//! target |0⟩ and |1⟩, measured identically with a singlet (PSB) readout.
//!
//! For a time-ordered Clifford sequence with net element `C`, the `expect0`
//! variant appends `C⁻¹` and the `expect1` variant appends the single Clifford
//! `X·C⁻¹`. Recovery pulses are compiled and simulated exactly like sequence
//! pulses.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{CliffordGroup, ExchangePulse, SampledSequence};
use crate::encoding::dfs_basis;
use crate::hilbert::{CVector, DIM};
use crate::noise::{
    apply_idle, apply_noisy_pulse, draw_jitter, jitter_stream, noisy_pulse_unitary, sample_realization, NoiseModel,
    NoiseRealization, RealizedGates,
};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    /// Singlet probability averaged over noise realizations.
    #[default]
    Analytic,
    /// One Bernoulli readout per shot.
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Both variants of a pair see the same realization shot for shot.
    #[default]
    Paired,
    Unpaired,
}

/// Affine readout map `p → visibility·p + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Readout {
    pub visibility: f64,
    pub offset: f64,
}

impl Default for Readout {
    fn default() -> Self {
        Self {
            visibility: 1.0,
            offset: 0.0,
        }
    }
}

impl Readout {
    pub fn apply(&self, p: f64) -> f64 {
        (self.visibility * p + self.offset).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Strictly increasing sequence lengths, each ≥ 1.
    pub lengths: Vec<usize>,
    #[serde(alias = "K")]
    pub sequences_per_length: usize,
    #[serde(alias = "N")]
    pub shots_per_sequence: usize,
    pub seed: u64,
    #[serde(default)]
    pub measurement_mode: MeasurementMode,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub readout: Readout,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("invalid value for `{field}`: {message}")]
pub struct ConfigValueError {
    pub field: String,
    pub message: String,
}

impl ExperimentConfig {
    pub fn new(lengths: Vec<usize>, sequences_per_length: usize, shots_per_sequence: usize, seed: u64) -> Self {
        Self {
            lengths,
            sequences_per_length,
            shots_per_sequence,
            seed,
            measurement_mode: MeasurementMode::Analytic,
            pairing: Pairing::Paired,
            noise: NoiseModel::default(),
            readout: Readout::default(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigValueError> {
        let err = |field: &str, message: String| {
            Err(ConfigValueError {
                field: field.to_string(),
                message,
            })
        };
        if self.lengths.is_empty() {
            return err("lengths", "must not be empty".into());
        }
        if self.lengths[0] < 1 {
            return err("lengths", "every length must be >= 1".into());
        }
        if let Some(w) = self.lengths.windows(2).find(|w| w[1] <= w[0]) {
            return err(
                "lengths",
                format!("must be strictly increasing ({} then {})", w[0], w[1]),
            );
        }
        if self.sequences_per_length < 1 {
            return err("sequences_per_length", "must be >= 1".into());
        }
        if self.shots_per_sequence < 1 {
            return err("shots_per_sequence", "must be >= 1".into());
        }
        if !(self.readout.visibility.is_finite() && self.readout.offset.is_finite()) {
            return err("readout", "visibility and offset must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.readout.offset)
            || !(0.0..=1.0).contains(&(self.readout.visibility + self.readout.offset))
        {
            return err("readout", "map must send [0, 1] into [0, 1]".into());
        }
        self.noise.validate().map_err(|e| ConfigValueError {
            field: format!("noise.{}", e.field),
            message: e.message,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Expect0,
    Expect1,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Expect0 => "expect0",
            Variant::Expect1 => "expect1",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expect0" => Ok(Variant::Expect0),
            "expect1" => Ok(Variant::Expect1),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub m: usize,
    pub sequence_id: u64,
    pub variant: Variant,
    pub p_singlet: f64,
    pub shots: usize,
}

/// Per-length averages of the blind pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalPoint {
    pub m: usize,
    pub p0: f64,
    pub p1: f64,
    /// `⟨p₀⟩ − ⟨p₁⟩`
    pub d: f64,
    /// `⟨p₀⟩ + ⟨p₁⟩`
    pub s: f64,
    pub n_sequences: usize,
    /// Shot-noise variance of `d` (and of `s`).
    pub shot_variance: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("p_singlet {p} outside [0, 1] for sequence {sequence_id}")]
    ProbabilityRange { sequence_id: u64, p: f64 },
    #[error("sequence {0} is missing one of its blind variants")]
    Unpaired(u64),
    #[error("sequence {0} appears at more than one length")]
    MixedLengths(u64),
    #[error("dataset is empty")]
    Empty,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RbDataset {
    pub records: Vec<Record>,
}

impl RbDataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        use std::collections::BTreeMap;
        if self.records.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut seen: BTreeMap<u64, (usize, [bool; 2])> = BTreeMap::new();
        for r in &self.records {
            if !(0.0..=1.0).contains(&r.p_singlet) {
                return Err(DatasetError::ProbabilityRange {
                    sequence_id: r.sequence_id,
                    p: r.p_singlet,
                });
            }
            let entry = seen.entry(r.sequence_id).or_insert((r.m, [false; 2]));
            if entry.0 != r.m {
                return Err(DatasetError::MixedLengths(r.sequence_id));
            }
            entry.1[r.variant as usize] = true;
        }
        if let Some((&id, _)) = seen.iter().find(|(_, v)| !(v.1[0] && v.1[1])) {
            return Err(DatasetError::Unpaired(id));
        }
        Ok(())
    }

    /// Distinct lengths in increasing order.
    pub fn lengths(&self) -> Vec<usize> {
        let mut ms: Vec<usize> = self.records.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        ms
    }

    /// `D(m)` and `S(m)` per length.
    pub fn signals(&self) -> Vec<SignalPoint> {
        self.lengths()
            .into_iter()
            .map(|m| {
                let mut sums = [0.0f64; 2];
                let mut counts = [0usize; 2];
                let mut var = [0.0f64; 2];
                for r in self.records.iter().filter(|r| r.m == m) {
                    let v = r.variant as usize;
                    sums[v] += r.p_singlet;
                    counts[v] += 1;
                    var[v] += shot_variance(r.p_singlet, r.shots);
                }
                let p0 = sums[0] / counts[0].max(1) as f64;
                let p1 = sums[1] / counts[1].max(1) as f64;
                let shot_variance =
                    var[0] / (counts[0].max(1) as f64).powi(2) + var[1] / (counts[1].max(1) as f64).powi(2);
                SignalPoint {
                    m,
                    p0,
                    p1,
                    d: p0 - p1,
                    s: p0 + p1,
                    n_sequences: counts[0].min(counts[1]),
                    shot_variance,
                }
            })
            .collect()
    }
}

/// Binomial variance of a shot-averaged probability, smoothed so that
/// `p ∈ {0, 1}` still carries finite variance.
pub(crate) fn shot_variance(p_singlet: f64, shots: usize) -> f64 {
    let n = shots.max(1) as f64;
    let p = (p_singlet * n + 0.5) / (n + 1.0);
    p * (1.0 - p) / n
}

/// Singlet probability of dots (1,2): `⟨ψ| P_S ⊗ I |ψ⟩`.
pub fn psb_measure(state: &CVector) -> f64 {
    debug_assert_eq!(state.len(), DIM);
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    // For spin s3 on dot 3: amplitude on (|↑↓⟩ − |↓↑⟩)/√2 ⊗ |s3⟩.
    let p: f64 = (0..2).map(|s3| ((state[2 + s3] - state[4 + s3]) * r2).norm_sqr()).sum();
    p.clamp(0.0, 1.0)
}

/// Clifford index lists for both variants plus their recoveries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindPair {
    pub expect0: Vec<usize>,
    pub expect1: Vec<usize>,
    pub recovery0: usize,
    pub recovery1: usize,
}

pub fn build_blind_pair(group: &CliffordGroup, sequence: &SampledSequence) -> BlindPair {
    let recovery0 = group.inverse(sequence.net);
    let recovery1 = group.multiply(group.x(), recovery0);
    let mut expect0 = sequence.elements.clone();
    expect0.push(recovery0);
    let mut expect1 = sequence.elements.clone();
    expect1.push(recovery1);
    BlindPair {
        expect0,
        expect1,
        recovery0,
        recovery1,
    }
}

/// Time-ordered pulses of a Clifford index list.
pub fn flatten_pulses(group: &CliffordGroup, cliffords: &[usize]) -> Vec<ExchangePulse> {
    cliffords
        .iter()
        .flat_map(|&c| group.element(c).pulses.iter().copied())
        .collect()
}

/// Encoded `|0,+½⟩`.
pub fn initial_state() -> CVector {
    dfs_basis().qubit_states[0].clone()
}

/// Runs `pulses` from `|0,+½⟩`, each pulse followed by an idle window, and
/// returns the singlet probability of the final state.
pub fn simulate_shot(pulses: &[ExchangePulse], model: &NoiseModel, realization: &NoiseRealization) -> f64 {
    let mut state = initial_state();
    for p in pulses {
        state = apply_noisy_pulse(&state, p, model, realization);
        state = apply_idle(&state, model, realization);
    }
    psb_measure(&state)
}

/// Same as [`simulate_shot`] on the final state, returned for inspection.
pub fn evolve(pulses: &[ExchangePulse], model: &NoiseModel, realization: &NoiseRealization) -> CVector {
    let mut state = initial_state();
    for p in pulses {
        state = apply_noisy_pulse(&state, p, model, realization);
        state = apply_idle(&state, model, realization);
    }
    state
}

fn run_cliffords(gates: &mut RealizedGates<'_>, cliffords: &[usize]) -> f64 {
    let mut state = initial_state();
    for &c in cliffords {
        state = gates.clifford(c) * state;
    }
    psb_measure(&state)
}

fn run_with_jitter(
    group: &CliffordGroup,
    model: &NoiseModel,
    realization: &NoiseRealization,
    cliffords: &[usize],
    rng: &mut crate::rng::StreamRng,
) -> f64 {
    let idle = crate::noise::idle_unitary(model, realization);
    let mut state = initial_state();
    for p in flatten_pulses(group, cliffords) {
        let j = draw_jitter(model, rng);
        state = &idle * (noisy_pulse_unitary(&p, model, realization, j) * state);
    }
    psb_measure(&state)
}

const UNPAIRED_KEY: u64 = 1 << 63;

/// Mean (or sampled frequency of) singlet outcomes for both variants of one
/// sequence.
fn run_pair(config: &ExperimentConfig, group: &CliffordGroup, sequence_id: u64, pair: &BlindPair) -> [f64; 2] {
    let noise = &config.noise;
    let shots = config.shots_per_sequence as u64;
    let sampled = config.measurement_mode == MeasurementMode::Sampled;
    let shot_independent =
        (noise.is_field_free() || noise.redraw == crate::noise::Redraw::PerSequence) && noise.charge_jitter == 0.0;

    let outcome = |shot: u64, rng_shot: u64| -> [f64; 2] {
        let variants = [&pair.expect0, &pair.expect1];
        let mut p = [0.0; 2];
        if noise.charge_jitter > 0.0 {
            for (v, cl) in variants.iter().enumerate() {
                let key = if v == 1 && config.pairing == Pairing::Unpaired {
                    sequence_id | UNPAIRED_KEY
                } else {
                    sequence_id
                };
                let real = sample_realization(noise, config.seed, key, shot);
                let mut jrng = jitter_stream(config.seed, sequence_id, 2 * rng_shot + v as u64);
                p[v] = run_with_jitter(group, noise, &real, cl, &mut jrng);
            }
        } else {
            let real = sample_realization(noise, config.seed, sequence_id, shot);
            let mut gates = RealizedGates::new(group, noise, real);
            p[0] = run_cliffords(&mut gates, &pair.expect0);
            if config.pairing == Pairing::Unpaired {
                let real1 = sample_realization(noise, config.seed, sequence_id | UNPAIRED_KEY, shot);
                let mut gates1 = RealizedGates::new(group, noise, real1);
                p[1] = run_cliffords(&mut gates1, &pair.expect1);
            } else {
                p[1] = run_cliffords(&mut gates, &pair.expect1);
            }
        }
        p.map(|x| config.readout.apply(x))
    };

    if !sampled && shot_independent {
        return outcome(0, 0);
    }
    let mut sums = [0.0f64; 2];
    let mut cached: Option<[f64; 2]> = None;
    for shot in 0..shots {
        let p = if shot_independent {
            *cached.get_or_insert_with(|| outcome(0, 0))
        } else {
            outcome(shot, shot)
        };
        if sampled {
            let mut rng = stream(config.seed, Purpose::Readout, sequence_id, shot);
            for v in 0..2 {
                if rng.random::<f64>() < p[v] {
                    sums[v] += 1.0;
                }
            }
        } else {
            sums[0] += p[0];
            sums[1] += p[1];
        }
    }
    sums.map(|s| s / shots as f64)
}

/// Sequence id of the `k`-th sequence at the `length_index`-th length.
pub fn sequence_id(config: &ExperimentConfig, length_index: usize, k: usize) -> u64 {
    (length_index * config.sequences_per_length + k) as u64
}

/// Runs the full protocol. The result depends only on `(config, group)`;
/// work is spread over the current rayon pool and reduced in a fixed order.
pub fn run_experiment(config: &ExperimentConfig, group: &CliffordGroup) -> Result<RbDataset, ConfigValueError> {
    config.validate()?;
    let jobs: Vec<(usize, u64)> = config
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(li, &m)| (0..config.sequences_per_length).map(move |k| (m, li, k)))
        .map(|(m, li, k)| (m, sequence_id(config, li, k)))
        .collect();
    let results: Vec<[f64; 2]> = jobs
        .par_iter()
        .map(|&(m, id)| {
            let seq = group.sample_sequence(m, config.seed, id);
            let pair = build_blind_pair(group, &seq);
            run_pair(config, group, id, &pair)
        })
        .collect();
    let records = jobs
        .iter()
        .zip(results)
        .flat_map(|(&(m, id), p)| {
            [Variant::Expect0, Variant::Expect1].map(|variant| Record {
                m,
                sequence_id: id,
                variant,
                p_singlet: p[variant as usize],
                shots: config.shots_per_sequence,
            })
        })
        .collect();
    Ok(RbDataset::new(records))
}
