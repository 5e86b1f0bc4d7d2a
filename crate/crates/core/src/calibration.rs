//! Simulated calibration: repeated-pulse amplification of exchange angle
//! errors, and the RB error-versus-overrotation scaling study.
//!
//! A (2,3) pulse is scanned directly from `|0,+½⟩`. A (1,2) pulse is a
//! z-rotation that leaves `|0⟩` invariant, so it is sandwiched between two
//! (2,3) mapping pulses at the (2,3) π angle found beforehand.
//!
//! Near `θ = π` the `N`-fold signal has a minimum for odd `N` and a maximum
//! for even `N`. The extremum is located on the grid inside `|θ − π| < π/N`
//! and refined with a least-squares parabola through the five nearest points.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blind_rb::{initial_state, psb_measure, run_experiment, ExperimentConfig, MeasurementMode};
use crate::bootstrap::{bootstrap_ci, Interval};
use crate::clifford::{CliffordGroup, ExchangePulse};
use crate::fitting::{fit_blind_rb, BlindFitOptions, FitError, Rate};
use crate::hilbert::Pair;
use crate::noise::{draw_jitter, idle_unitary, jitter_stream, noisy_pulse_unitary, sample_realization, NoiseModel};
use crate::rng::{stream, Purpose};

/// Points used by the local parabola.
pub const FIT_POINTS: usize = 5;
/// Peak-to-peak variation inside the search window below which the scan is
/// considered unresolved.
pub const FLAT_CONTRAST: f64 = 1e-3;
/// Overrotations accepted by the scaling study.
pub const MAX_SWEEP_EPSILON: f64 = 0.2;

/// Keeps calibration field draws apart from RB sequence ids.
const CALIBRATION_KEY: u64 = 1 << 62;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("theta_grid must be non-empty, finite and strictly increasing")]
    BadGrid,
    #[error("repeat counts must be >= 1")]
    ZeroRepeats,
    #[error("shots must be >= 1")]
    ZeroShots,
    #[error("noise.{0}")]
    Noise(#[from] crate::noise::NoiseError),
    #[error("pair {pair}, N = {repeats}: fewer than {FIT_POINTS} grid points within pi/N of pi")]
    SparseWindow { pair: Pair, repeats: usize },
    #[error("pair {pair}, N = {repeats}: response too flat to locate the extremum ({detail})")]
    FlatResponse { pair: Pair, repeats: usize, detail: String },
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("epsilon {0} outside (-{MAX_SWEEP_EPSILON}, {MAX_SWEEP_EPSILON})")]
    EpsilonRange(f64),
    #[error("the overrotation sweep requires sigma_b = 0 in the base config")]
    FieldNoise,
    #[error("config: {0}")]
    Config(#[from] crate::blind_rb::ConfigValueError),
    #[error("epsilon {epsilon}: {source}")]
    Fit { epsilon: f64, source: FitError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub theta_grid: Vec<f64>,
    pub repeats: Vec<usize>,
    /// Noise realizations (analytic) or readout shots (sampled) per point.
    pub shots: usize,
    pub measurement_mode: MeasurementMode,
    pub seed: u64,
}

impl ScanSettings {
    /// Uniform grid of `points` angles over `[lo, hi]`.
    pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        let step = (hi - lo) / (points.max(2) - 1) as f64;
        (0..points).map(|k| lo + step * k as f64).collect()
    }

    fn validate(&self) -> Result<(), CalibrationError> {
        let g = &self.theta_grid;
        if g.is_empty() || g.iter().any(|t| !t.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CalibrationError::BadGrid);
        }
        if self.repeats.is_empty() || self.repeats.contains(&0) {
            return Err(CalibrationError::ZeroRepeats);
        }
        if self.shots == 0 {
            return Err(CalibrationError::ZeroShots);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Minimum,
    Maximum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatEstimate {
    pub repeats: usize,
    pub extremum: Extremum,
    pub theta_pi: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScan {
    pub pair: Pair,
    pub repeat_counts: Vec<usize>,
    pub theta_grid: Vec<f64>,
    /// `p[r][k]`: singlet probability for `repeat_counts[r]` pulses at `theta_grid[k]`.
    pub p: Vec<Vec<f64>>,
    pub estimates: Vec<RepeatEstimate>,
    /// Estimate from the largest repeat count.
    pub theta_pi: f64,
    pub sigma: f64,
    /// Angle of the (2,3) mapping pulses used for a (1,2) scan.
    pub mapping_theta: Option<f64>,
}

/// Pulse list for one scan point.
pub fn scan_pulses(pair: Pair, theta: f64, repeats: usize, mapping_theta: f64) -> Vec<ExchangePulse> {
    let pulse = ExchangePulse { pair, theta };
    let body = std::iter::repeat_n(pulse, repeats);
    match pair {
        Pair::P23 => body.collect(),
        Pair::P12 => {
            let map = ExchangePulse {
                pair: Pair::P23,
                theta: mapping_theta,
            };
            std::iter::once(map).chain(body).chain(std::iter::once(map)).collect()
        }
    }
}

fn point_probability(
    pulses: &[ExchangePulse],
    model: &NoiseModel,
    settings: &ScanSettings,
    key: u64,
    point: u64,
) -> f64 {
    let deterministic = model.is_field_free() && model.charge_jitter == 0.0;
    let evaluate = |shot: u64| {
        let real = sample_realization(model, settings.seed, key, shot);
        let idle = idle_unitary(model, &real);
        let mut jrng = jitter_stream(settings.seed, key, shot);
        let mut state = initial_state();
        for p in pulses {
            let j = draw_jitter(model, &mut jrng);
            state = &idle * (noisy_pulse_unitary(p, model, &real, j) * state);
        }
        psb_measure(&state)
    };
    let shots = settings.shots as u64;
    match settings.measurement_mode {
        MeasurementMode::Analytic if deterministic => evaluate(0),
        MeasurementMode::Analytic => (0..shots).map(evaluate).sum::<f64>() / shots as f64,
        MeasurementMode::Sampled => {
            let mut rng = stream(settings.seed, Purpose::Calibration, key, point);
            let cached = deterministic.then(|| evaluate(0));
            let hits = (0..shots)
                .filter(|&s| rng.random::<f64>() < cached.unwrap_or_else(|| evaluate(s)))
                .count();
            hits as f64 / shots as f64
        }
    }
}

/// Least-squares parabola `c0 + c1·x + c2·x²`; returns coefficients and
/// their covariance.
fn fit_parabola(x: &[f64], y: &[f64]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, xi, xi * xi);
        xtx += row * row.transpose();
        xty += row * yi;
    }
    let inv = xtx.try_inverse()?;
    let c = inv * xty;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (yi - c[0] - c[1] * xi - c[2] * xi * xi).powi(2))
        .sum();
    let dof = (x.len() - 3).max(1) as f64;
    Some((c, inv * (rss / dof)))
}

/// Locates the extremum nearest `π` in one amplified scan.
pub fn estimate_extremum(
    pair: Pair,
    repeats: usize,
    grid: &[f64],
    p: &[f64],
) -> Result<RepeatEstimate, CalibrationError> {
    use std::f64::consts::PI;
    let half_width = PI / repeats as f64;
    let window: Vec<usize> = (0..grid.len()).filter(|&k| (grid[k] - PI).abs() < half_width).collect();
    if window.len() < FIT_POINTS {
        return Err(CalibrationError::SparseWindow { pair, repeats });
    }
    let extremum = if repeats % 2 == 1 {
        Extremum::Minimum
    } else {
        Extremum::Maximum
    };
    let flat = |detail: String| CalibrationError::FlatResponse { pair, repeats, detail };
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| {
        (lo.min(p[k]), hi.max(p[k]))
    });
    if hi - lo < FLAT_CONTRAST {
        return Err(flat(format!("contrast {:.2e}", hi - lo)));
    }
    let best = *window
        .iter()
        .min_by(|&&a, &&b| match extremum {
            Extremum::Minimum => p[a].total_cmp(&p[b]),
            Extremum::Maximum => p[b].total_cmp(&p[a]),
        })
        .expect("window is non-empty");
    let start = best.saturating_sub(FIT_POINTS / 2).min(grid.len() - FIT_POINTS);
    let idx = start..start + FIT_POINTS;
    let centre = grid[best];
    let x: Vec<f64> = grid[idx.clone()].iter().map(|t| t - centre).collect();
    let (c, cov) = fit_parabola(&x, &p[idx]).ok_or_else(|| flat("singular local fit".into()))?;
    let curvature_ok = match extremum {
        Extremum::Minimum => c[2] > 0.0,
        Extremum::Maximum => c[2] < 0.0,
    };
    if !curvature_ok {
        return Err(flat(format!("local curvature {:.2e} has the wrong sign", c[2])));
    }
    let vertex = -c[1] / (2.0 * c[2]);
    if vertex < x[0] || vertex > x[FIT_POINTS - 1] {
        return Err(flat("vertex outside the fitted span".into()));
    }
    let grad = Vector3::new(0.0, -1.0 / (2.0 * c[2]), c[1] / (2.0 * c[2] * c[2]));
    let var = (grad.transpose() * cov * grad)[0];
    Ok(RepeatEstimate {
        repeats,
        extremum,
        theta_pi: centre + vertex,
        sigma: var.max(0.0).sqrt(),
    })
}

/// Scans `N` repeated pulses on `pair` over `settings.theta_grid` for each
/// repeat count. `mapping_theta` is the (2,3) angle used around a (1,2)
/// scan and is ignored for (2,3).
pub fn repeated_pulse_scan(
    pair: Pair,
    settings: &ScanSettings,
    model: &NoiseModel,
    mapping_theta: f64,
) -> Result<CalibrationScan, CalibrationError> {
    settings.validate()?;
    model.validate()?;
    let pair_key = CALIBRATION_KEY | ((pair == Pair::P12) as u64) << 40;
    let p: Vec<Vec<f64>> = settings
        .repeats
        .iter()
        .enumerate()
        .map(|(r, &n)| {
            settings
                .theta_grid
                .par_iter()
                .enumerate()
                .map(|(k, &theta)| {
                    let pulses = scan_pulses(pair, theta, n, mapping_theta);
                    point_probability(&pulses, model, settings, pair_key | (r as u64) << 20, k as u64)
                })
                .collect()
        })
        .collect();
    let estimates = settings
        .repeats
        .iter()
        .zip(&p)
        .map(|(&n, row)| estimate_extremum(pair, n, &settings.theta_grid, row))
        .collect::<Result<Vec<_>, _>>()?;
    let best = *estimates
        .iter()
        .max_by_key(|e| e.repeats)
        .expect("at least one repeat count");
    Ok(CalibrationScan {
        pair,
        repeat_counts: settings.repeats.clone(),
        theta_grid: settings.theta_grid.clone(),
        p,
        estimates,
        theta_pi: best.theta_pi,
        sigma: best.sigma,
        mapping_theta: (pair == Pair::P12).then_some(mapping_theta),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub p23: CalibrationScan,
    pub p12: CalibrationScan,
}

/// Calibrates (2,3) and then (1,2), using the (2,3) result for the mapping pulses.
pub fn calibrate(settings: &ScanSettings, model: &NoiseModel) -> Result<Calibration, CalibrationError> {
    let p23 = repeated_pulse_scan(Pair::P23, settings, model, std::f64::consts::PI)?;
    let p12 = repeated_pulse_scan(Pair::P12, settings, model, p23.theta_pi)?;
    Ok(Calibration { p23, p12 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub error_per_clifford: Rate,
    pub ci: Option<Interval>,
    pub leakage_per_clifford: Rate,
    pub leakage_raw: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrotationSweep {
    pub rows: Vec<SweepRow>,
    /// Slope of `ln r` against `ln |ε|` over rows with `ε ≠ 0` and `r > 0`.
    pub slope: Option<f64>,
}

/// Ordinary least-squares slope; `None` with fewer than two distinct x.
pub fn regression_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Runs one blind RB experiment per `ε` (same overrotation on both pairs,
/// same seed throughout) and fits the error per Clifford. Bootstrap
/// intervals are added when `bootstrap_resamples > 0`.
pub fn error_vs_overrotation(
    epsilons: &[f64],
    base: &ExperimentConfig,
    group: &CliffordGroup,
    options: &BlindFitOptions,
    bootstrap_resamples: usize,
) -> Result<OverrotationSweep, SweepError> {
    if base.noise.sigma_b != 0.0 {
        return Err(SweepError::FieldNoise);
    }
    if let Some(&e) = epsilons.iter().find(|e| e.is_nan() || e.abs() >= MAX_SWEEP_EPSILON) {
        return Err(SweepError::EpsilonRange(e));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let mut config = base.clone();
        config.noise.overrotation = crate::noise::Overrotation::uniform(epsilon);
        let data = run_experiment(&config, group)?;
        let fit_err = |source| SweepError::Fit { epsilon, source };
        let fit = fit_blind_rb(&data, options).map_err(fit_err)?;
        let ci = if bootstrap_resamples > 0 {
            Some(
                bootstrap_ci(&data, bootstrap_resamples, config.seed, options)
                    .map_err(fit_err)?
                    .error_per_clifford,
            )
        } else {
            None
        };
        rows.push(SweepRow {
            epsilon,
            error_per_clifford: fit.error_per_clifford,
            ci,
            leakage_per_clifford: fit.leakage_per_clifford,
            leakage_raw: fit.leakage_raw,
        });
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.epsilon != 0.0 && r.error_per_clifford.value > 0.0)
        .map(|r| (r.epsilon.abs().ln(), r.error_per_clifford.value.ln()))
        .unzip();
    Ok(OverrotationSweep {
        slope: regression_slope(&lx, &ly),
        rows,
    })
}
