//! Exponential-decay fits of the blind RB signals.
//!
//! `D(m)` is fitted as `B·λ^m` and `S(m)` as `A + B·λ^m` with a damped
//! Gauss-Newton (Levenberg-Marquardt) iteration and an analytic Jacobian.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blind_rb::{RbDataset, SignalPoint};

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_STEP_TOL: f64 = 1e-10;
const LAMBDA_MIN: f64 = 1e-9;
const LAMBDA_MAX: f64 = 1.0;
/// Smallest allowed eigenvalue ratio of the scaled normal matrix.
const CONDITION_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// `y = B·λ^m`
    PureExponential,
    /// `y = A + B·λ^m`
    OffsetExponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

impl DecayForm {
    pub fn n_params(self) -> usize {
        match self {
            DecayForm::PureExponential => 2,
            DecayForm::OffsetExponential => 3,
        }
    }

    pub fn evaluate(self, p: &DecayParams, m: f64) -> f64 {
        let base = p.b * p.lambda.powf(m);
        match self {
            DecayForm::PureExponential => base,
            DecayForm::OffsetExponential => p.a + base,
        }
    }

    /// Partial derivatives in the order of [`DecayForm::pack`].
    pub fn jacobian_row(self, p: &DecayParams, m: f64) -> Vec<f64> {
        let pow = p.lambda.powf(m);
        let d_lambda = if m == 0.0 {
            0.0
        } else {
            p.b * m * p.lambda.powf(m - 1.0)
        };
        match self {
            DecayForm::PureExponential => vec![pow, d_lambda],
            DecayForm::OffsetExponential => vec![1.0, pow, d_lambda],
        }
    }

    pub fn pack(self, p: &DecayParams) -> Vec<f64> {
        match self {
            DecayForm::PureExponential => vec![p.b, p.lambda],
            DecayForm::OffsetExponential => vec![p.a, p.b, p.lambda],
        }
    }

    pub fn unpack(self, v: &[f64]) -> DecayParams {
        match self {
            DecayForm::PureExponential => DecayParams {
                a: 0.0,
                b: v[0],
                lambda: v[1],
            },
            DecayForm::OffsetExponential => DecayParams {
                a: v[0],
                b: v[1],
                lambda: v[2],
            },
        }
    }

    /// Position of `(A, B, λ)` inside the packed vector.
    fn slots(self) -> [Option<usize>; 3] {
        match self {
            DecayForm::PureExponential => [None, Some(0), Some(1)],
            DecayForm::OffsetExponential => [Some(0), Some(1), Some(2)],
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FitError {
    #[error(
        "need at least 3 distinct lengths and more points than parameters (got {points} points, {distinct} distinct)"
    )]
    InsufficientData { points: usize, distinct: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("m and y have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weights must be finite and positive")]
    BadWeights,
    #[error("decay rate is not identifiable: {0}")]
    Degenerate(String),
    #[error("{failed} of {total} bootstrap resamples failed to fit")]
    BootstrapDiverged { failed: usize, total: usize },
    #[error("dataset: {0}")]
    Dataset(#[from] crate::blind_rb::DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub form: DecayForm,
    pub params: DecayParams,
    /// Covariance over `(A, B, λ)`; rows of parameters absent from the form are zero.
    pub covariance: [[f64; 3]; 3],
    /// Square root of the (weighted) residual sum of squares.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_points: usize,
}

impl FitResult {
    pub fn predict(&self, m: f64) -> f64 {
        self.form.evaluate(&self.params, m)
    }

    pub fn sigma_a(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn sigma_b(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }

    pub fn sigma_lambda(&self) -> f64 {
        self.covariance[2][2].max(0.0).sqrt()
    }
}

fn validate_inputs(m: &[f64], y: &[f64], weights: Option<&[f64]>, n_params: usize) -> Result<(), FitError> {
    if m.len() != y.len() {
        return Err(FitError::LengthMismatch(m.len(), y.len()));
    }
    if m.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    if let Some(w) = weights {
        if w.len() != m.len() {
            return Err(FitError::LengthMismatch(m.len(), w.len()));
        }
        if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(FitError::BadWeights);
        }
    }
    let mut distinct: Vec<f64> = m.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || m.len() <= n_params {
        return Err(FitError::InsufficientData {
            points: m.len(),
            distinct: distinct.len(),
        });
    }
    Ok(())
}

/// Log-linear least squares of `ln(sign·(y − A₀))` against `m`.
fn initial_guess(m: &[f64], y: &[f64], form: DecayForm) -> DecayParams {
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m[a].total_cmp(&m[b]));
        idx
    };
    let y_first = y[order[0]];
    let y_last = y[*order.last().expect("non-empty")];
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    let (anchor, sign) = match form {
        DecayForm::PureExponential => (0.0, if y_first >= 0.0 { 1.0 } else { -1.0 }),
        DecayForm::OffsetExponential if y_first >= y_last => (lo, 1.0),
        DecayForm::OffsetExponential => (hi, -1.0),
    };
    let floor = match form {
        DecayForm::PureExponential => 1e-12,
        DecayForm::OffsetExponential => (1e-3 * range).max(1e-15),
    };
    let z: Vec<f64> = y.iter().map(|&v| (sign * (v - anchor)).max(floor).ln()).collect();
    let n = m.len() as f64;
    let mx = m.iter().sum::<f64>() / n;
    let mz = z.iter().sum::<f64>() / n;
    let sxx: f64 = m.iter().map(|&v| (v - mx).powi(2)).sum();
    let sxz: f64 = m.iter().zip(&z).map(|(&a, &b)| (a - mx) * (b - mz)).sum();
    let slope = if sxx > 0.0 { sxz / sxx } else { 0.0 };
    let intercept = mz - slope * mx;
    let lambda = slope.exp().clamp(0.05, LAMBDA_MAX);
    DecayParams {
        a: anchor,
        b: sign * intercept.exp(),
        lambda,
    }
}

struct Problem<'a> {
    m: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
    form: DecayForm,
}

impl Problem<'_> {
    fn residuals(&self, v: &[f64]) -> DVector<f64> {
        let p = self.form.unpack(v);
        DVector::from_iterator(
            self.m.len(),
            self.m
                .iter()
                .zip(self.y)
                .zip(&self.w)
                .map(|((&m, &y), &w)| w.sqrt() * (y - self.form.evaluate(&p, m))),
        )
    }

    fn jacobian(&self, v: &[f64]) -> DMatrix<f64> {
        let p = self.form.unpack(v);
        let k = self.form.n_params();
        let mut j = DMatrix::zeros(self.m.len(), k);
        for (row, (&m, &w)) in self.m.iter().zip(&self.w).enumerate() {
            for (c, d) in self.form.jacobian_row(&p, m).into_iter().enumerate() {
                j[(row, c)] = w.sqrt() * d;
            }
        }
        j
    }

    fn project(&self, v: &mut [f64]) {
        let last = v.len() - 1;
        v[last] = v[last].clamp(LAMBDA_MIN, LAMBDA_MAX);
    }
}

/// Ratio of smallest to largest eigenvalue of the diagonally scaled normal matrix.
fn scaled_condition(jtj: &DMatrix<f64>) -> f64 {
    let k = jtj.nrows();
    let d: Vec<f64> = (0..k).map(|i| jtj[(i, i)].max(0.0).sqrt()).collect();
    if d.contains(&0.0) {
        return 0.0;
    }
    let scaled = DMatrix::from_fn(k, k, |r, c| jtj[(r, c)] / (d[r] * d[c]));
    let ev = SymmetricEigen::new(scaled).eigenvalues;
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Nonlinear least-squares fit of one decay model.
///
/// With `weights = None` the covariance is scaled by the residual variance;
/// with weights (inverse variances) it is `(JᵀWJ)⁻¹`.
pub fn fit_decay(m: &[f64], y: &[f64], form: DecayForm, weights: Option<&[f64]>) -> Result<FitResult, FitError> {
    let k = form.n_params();
    validate_inputs(m, y, weights, k)?;
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let scale = hi.abs().max(lo.abs()).max(1.0);
    match form {
        DecayForm::OffsetExponential if hi - lo <= 1e-12 * scale => {
            return Err(FitError::Degenerate(
                "signal is constant; offset and amplitude cannot be separated".into(),
            ));
        }
        DecayForm::PureExponential if hi.abs().max(lo.abs()) <= 1e-15 => {
            return Err(FitError::Degenerate("signal is identically zero".into()));
        }
        _ => {}
    }
    let problem = Problem {
        m,
        y,
        w: weights.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; m.len()]),
        form,
    };

    let mut v = form.pack(&initial_guess(m, y, form));
    problem.project(&mut v);
    let mut r = problem.residuals(&v);
    let mut cost = r.norm_squared();
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let j = problem.jacobian(&v);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let diag_max = (0..k).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        let mut step_rel = 0.0;
        while damping < 1e20 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += damping * jtj[(i, i)].max(1e-12 * diag_max);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = v.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            problem.project(&mut trial);
            let rt = problem.residuals(&trial);
            let ct = rt.norm_squared();
            if ct <= cost {
                let num: f64 = trial.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
                step_rel = num / den;
                v = trial;
                r = rt;
                cost = ct;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if !accepted || step_rel < RELATIVE_STEP_TOL {
            // No downhill step exists, or the last one was negligible.
            converged = true;
            break;
        }
    }

    let j = problem.jacobian(&v);
    let jtj = j.transpose() * &j;
    if scaled_condition(&jtj) < CONDITION_FLOOR {
        return Err(FitError::Degenerate(
            "normal matrix is singular at the optimum (amplitude or decay rate unidentifiable)".into(),
        ));
    }
    let inv = jtj
        .clone()
        .try_inverse()
        .ok_or_else(|| FitError::Degenerate("normal matrix is not invertible".into()))?;
    let n = m.len();
    let scale = match weights {
        Some(_) => 1.0,
        None => cost / (n - k) as f64,
    };
    let slots = form.slots();
    let mut covariance = [[0.0; 3]; 3];
    for (a, sa) in slots.iter().enumerate() {
        for (b, sb) in slots.iter().enumerate() {
            if let (Some(i), Some(j)) = (sa, sb) {
                covariance[a][b] = inv[(*i, *j)] * scale;
            }
        }
    }
    Ok(FitResult {
        form,
        params: form.unpack(&v),
        covariance,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        n_points: n,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Unweighted (analytic-mode data).
    #[default]
    None,
    /// Inverse shot-noise variance per length (sampled-mode data).
    ShotNoise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlindFitOptions {
    pub weighting: Weighting,
    /// Fit `D(m)` with a free asymptote instead of fixing it at zero.
    pub d_offset: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindRbFit {
    pub d_fit: FitResult,
    pub s_fit: FitResult,
    /// `S(m)` showed no separable decay and was fitted as `B·λ^m`.
    pub s_fallback: bool,
    /// `(1 − λ_D)/2`
    pub error_per_clifford: Rate,
    /// `(1 − λ_S)·B_S/(A_S + B_S)`
    pub leakage_per_clifford: Rate,
    /// `1 − λ_S`
    pub leakage_raw: Rate,
}

/// Error per Clifford for a qubit (`d = 2`): `(1 − λ)(d − 1)/d`.
pub fn error_rate_from_lambda(lambda: f64) -> f64 {
    (1.0 - lambda) / 2.0
}

fn weighted_leakage(fit: &FitResult) -> Rate {
    let DecayParams { a, b, lambda } = fit.params;
    let total = a + b;
    if total.abs() < 1e-300 {
        return Rate {
            value: 0.0,
            sigma: f64::INFINITY,
        };
    }
    let value = (1.0 - lambda) * b / total;
    let grad = [
        -(1.0 - lambda) * b / (total * total),
        (1.0 - lambda) * a / (total * total),
        -b / total,
    ];
    let mut var = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            var += grad[i] * fit.covariance[i][j] * grad[j];
        }
    }
    Rate {
        value: value.clamp(0.0, 1.0),
        sigma: var.max(0.0).sqrt(),
    }
}

/// Fits `D(m)` and `S(m)` and derives the error and leakage rates.
pub fn fit_blind_rb(dataset: &RbDataset, options: &BlindFitOptions) -> Result<BlindRbFit, FitError> {
    dataset.validate()?;
    fit_signals(&dataset.signals(), options)
}

/// [`fit_blind_rb`] on already-aggregated per-length signals.
pub fn fit_signals(signals: &[SignalPoint], options: &BlindFitOptions) -> Result<BlindRbFit, FitError> {
    let m: Vec<f64> = signals.iter().map(|s| s.m as f64).collect();
    let d: Vec<f64> = signals.iter().map(|s| s.d).collect();
    let s: Vec<f64> = signals.iter().map(|s| s.s).collect();
    let weights: Option<Vec<f64>> = match options.weighting {
        Weighting::None => None,
        Weighting::ShotNoise => Some(signals.iter().map(|s| 1.0 / s.shot_variance.max(1e-300)).collect()),
    };
    let w = weights.as_deref();
    let d_form = if options.d_offset {
        DecayForm::OffsetExponential
    } else {
        DecayForm::PureExponential
    };
    let d_fit = fit_decay(&m, &d, d_form, w)?;
    let (s_fit, s_fallback) = match fit_decay(&m, &s, DecayForm::OffsetExponential, w) {
        Ok(f) => (f, false),
        Err(FitError::Degenerate(_)) => (fit_decay(&m, &s, DecayForm::PureExponential, w)?, true),
        Err(e) => return Err(e),
    };
    let error_per_clifford = Rate {
        value: error_rate_from_lambda(d_fit.params.lambda),
        sigma: d_fit.sigma_lambda() / 2.0,
    };
    let leakage_raw = Rate {
        value: 1.0 - s_fit.params.lambda,
        sigma: s_fit.sigma_lambda(),
    };
    Ok(BlindRbFit {
        leakage_per_clifford: weighted_leakage(&s_fit),
        d_fit,
        s_fit,
        s_fallback,
        error_per_clifford,
        leakage_raw,
    })
}
