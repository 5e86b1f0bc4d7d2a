//! Quasistatic hyperfine fields, systematic overrotation and charge jitter,
//! and their application to pulses and idle windows.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clifford::{CliffordGroup, ExchangePulse, GROUP_ORDER};
use crate::hilbert::{joint_pulse_unitary, zeeman_unitary, CMatrix, CVector, Field, Pair, C64, DIM};
use crate::rng::{stream, Purpose};

/// When quasistatic fields are redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// A fresh draw for every shot.
    #[default]
    PerShot,
    /// One draw per random sequence, shared by all of its shots.
    PerSequence,
}

/// Fractional systematic angle error per exchange pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrotation {
    #[serde(rename = "12")]
    pub p12: f64,
    #[serde(rename = "23")]
    pub p23: f64,
}

impl Overrotation {
    pub fn uniform(eps: f64) -> Self {
        Self { p12: eps, p23: eps }
    }

    pub fn get(&self, pair: Pair) -> f64 {
        match pair {
            Pair::P12 => self.p12,
            Pair::P23 => self.p23,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Per-component standard deviation of each dot's field.
    pub sigma_b: f64,
    /// Field common to all three dots.
    pub uniform_b: [f64; 3],
    pub overrotation: Overrotation,
    pub pulse_duration: f64,
    pub idle_duration: f64,
    /// Restrict random fields to the z component.
    pub z_only: bool,
    /// Standard deviation of a per-pulse fractional Gaussian angle error.
    pub charge_jitter: f64,
    pub redraw: Redraw,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_b: 0.0,
            uniform_b: [0.0; 3],
            overrotation: Overrotation::default(),
            pulse_duration: 1.0,
            idle_duration: 1.0,
            z_only: false,
            charge_jitter: 0.0,
            redraw: Redraw::PerShot,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct NoiseError {
    pub field: &'static str,
    pub message: String,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let err = |field, message: String| Err(NoiseError { field, message });
        if !(self.sigma_b.is_finite() && self.sigma_b >= 0.0) {
            return err("sigma_b", format!("must be finite and >= 0, got {}", self.sigma_b));
        }
        if self.uniform_b.iter().any(|c| !c.is_finite()) {
            return err("uniform_b", "components must be finite".into());
        }
        for (field, eps) in [
            ("overrotation.12", self.overrotation.p12),
            ("overrotation.23", self.overrotation.p23),
        ] {
            if !(eps > -1.0 && eps < 1.0) {
                return err(field, format!("must lie in (-1, 1), got {eps}"));
            }
        }
        for (field, d) in [
            ("pulse_duration", self.pulse_duration),
            ("idle_duration", self.idle_duration),
        ] {
            if !(d.is_finite() && d >= 0.0) {
                return err(field, format!("must be finite and >= 0, got {d}"));
            }
        }
        if self.pulse_duration == 0.0 {
            return err("pulse_duration", "must be > 0 for nonzero exchange angles".into());
        }
        if !(self.charge_jitter.is_finite() && self.charge_jitter >= 0.0) {
            return err(
                "charge_jitter",
                format!("must be finite and >= 0, got {}", self.charge_jitter),
            );
        }
        Ok(())
    }

    /// True when no random fields can occur.
    pub fn is_field_free(&self) -> bool {
        self.sigma_b == 0.0
    }
}

/// Per-dot fields held fixed during one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    pub fields: [Field; 3],
}

impl NoiseRealization {
    pub fn zero() -> Self {
        Self {
            fields: [Field::zeros(); 3],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.fields.iter().all(|f| f.iter().all(|&c| c == 0.0))
    }
}

/// Quasistatic draw keyed by `(seed, sequence_id, shot_id)`. Under
/// [`Redraw::PerSequence`] the shot id is ignored.
pub fn sample_realization(model: &NoiseModel, seed: u64, sequence_id: u64, shot_id: u64) -> NoiseRealization {
    let shot_key = match model.redraw {
        Redraw::PerShot => shot_id,
        Redraw::PerSequence => 0,
    };
    let uniform = Field::from(model.uniform_b);
    if model.sigma_b == 0.0 {
        return NoiseRealization { fields: [uniform; 3] };
    }
    let mut rng = stream(seed, Purpose::Field, sequence_id, shot_key);
    let fields = std::array::from_fn(|_| {
        let mut g: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * model.sigma_b);
        if model.z_only {
            g[0] = 0.0;
            g[1] = 0.0;
        }
        uniform + Field::from(g)
    });
    NoiseRealization { fields }
}

/// Per-pulse fractional angle errors for one shot, keyed separately from the fields.
pub fn jitter_stream(seed: u64, sequence_id: u64, shot_id: u64) -> crate::rng::StreamRng {
    stream(seed, Purpose::Jitter, sequence_id, shot_id)
}

pub fn draw_jitter(model: &NoiseModel, rng: &mut crate::rng::StreamRng) -> f64 {
    if model.charge_jitter == 0.0 {
        0.0
    } else {
        rng.sample::<f64, _>(StandardNormal) * model.charge_jitter
    }
}

/// 8×8 unitary of one pulse including overrotation, an extra fractional
/// angle error `jitter`, and the realization's fields.
pub fn noisy_pulse_unitary(
    pulse: &ExchangePulse,
    model: &NoiseModel,
    realization: &NoiseRealization,
    jitter: f64,
) -> CMatrix {
    let (i, j) = pulse.pair.dots();
    let theta = pulse.theta * (1.0 + model.overrotation.get(pulse.pair) + jitter);
    joint_pulse_unitary(i, j, theta, &realization.fields, model.pulse_duration)
        .expect("validated noise model and finite pulse")
}

pub fn idle_unitary(model: &NoiseModel, realization: &NoiseRealization) -> CMatrix {
    zeeman_unitary(&realization.fields, model.idle_duration).expect("validated noise model")
}

fn renormalize(v: CVector) -> CVector {
    let n = v.norm();
    v / C64::new(n, 0.0)
}

pub fn apply_noisy_pulse(
    state: &CVector,
    pulse: &ExchangePulse,
    model: &NoiseModel,
    realization: &NoiseRealization,
) -> CVector {
    renormalize(noisy_pulse_unitary(pulse, model, realization, 0.0) * state)
}

pub fn apply_idle(state: &CVector, model: &NoiseModel, realization: &NoiseRealization) -> CVector {
    if model.idle_duration == 0.0 || realization.is_zero() {
        return state.clone();
    }
    renormalize(idle_unitary(model, realization) * state)
}

/// Per-realization cache of noisy Clifford unitaries (pulse then idle, for
/// each compiled pulse). Only valid without charge jitter.
pub struct RealizedGates<'a> {
    group: &'a CliffordGroup,
    model: &'a NoiseModel,
    realization: NoiseRealization,
    idle: Option<CMatrix>,
    cliffords: Vec<Option<CMatrix>>,
}

impl<'a> RealizedGates<'a> {
    pub fn new(group: &'a CliffordGroup, model: &'a NoiseModel, realization: NoiseRealization) -> Self {
        let idle = (model.idle_duration > 0.0 && !realization.is_zero()).then(|| idle_unitary(model, &realization));
        Self {
            group,
            model,
            realization,
            idle,
            cliffords: vec![None; GROUP_ORDER],
        }
    }

    pub fn realization(&self) -> &NoiseRealization {
        &self.realization
    }

    pub fn clifford(&mut self, index: usize) -> &CMatrix {
        if self.cliffords[index].is_none() {
            let mut u = CMatrix::identity(DIM, DIM);
            for p in &self.group.element(index).pulses {
                u = noisy_pulse_unitary(p, self.model, &self.realization, 0.0) * u;
                if let Some(idle) = &self.idle {
                    u = idle * u;
                }
            }
            self.cliffords[index] = Some(u);
        }
        self.cliffords[index].as_ref().expect("filled above")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{dfs_basis, encoded_bloch, leakage_population};
    use crate::hilbert::{exchange_unitary, max_abs_diff};

    fn random_qubit_state(seed: u64) -> CVector {
        let mut rng = stream(seed, Purpose::Synthetic, 1, 0);
        let b = dfs_basis();
        let mut v = CVector::zeros(DIM);
        for s in &b.qubit_states {
            let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            v += s * c;
        }
        let n = v.norm();
        v / C64::new(n, 0.0)
    }

    #[test]
    fn zero_sigma_gives_uniform_field() {
        let r = sample_realization(&NoiseModel::noiseless(), 1, 2, 3);
        assert!(r.is_zero());
        let model = NoiseModel {
            uniform_b: [0.1, 0.0, -0.2],
            ..NoiseModel::default()
        };
        let r = sample_realization(&model, 1, 2, 3);
        for f in &r.fields {
            assert_eq!(*f, Field::new(0.1, 0.0, -0.2));
        }
    }

    #[test]
    fn realization_is_deterministic_and_keyed() {
        let model = NoiseModel {
            sigma_b: 0.3,
            ..NoiseModel::default()
        };
        assert_eq!(sample_realization(&model, 4, 5, 6), sample_realization(&model, 4, 5, 6));
        assert_ne!(sample_realization(&model, 4, 5, 6), sample_realization(&model, 4, 5, 7));
        let per_seq = NoiseModel {
            redraw: Redraw::PerSequence,
            ..model.clone()
        };
        assert_eq!(
            sample_realization(&per_seq, 4, 5, 6),
            sample_realization(&per_seq, 4, 5, 7)
        );
        let z = NoiseModel { z_only: true, ..model };
        let r = sample_realization(&z, 4, 5, 6);
        assert!(r.fields.iter().all(|f| f[0] == 0.0 && f[1] == 0.0 && f[2] != 0.0));
    }

    #[test]
    fn realization_statistics() {
        let sigma = 0.5;
        let model = NoiseModel {
            sigma_b: sigma,
            uniform_b: [0.2, -0.1, 0.05],
            ..NoiseModel::default()
        };
        let n = 100_000u64;
        let mut sum = [[0.0f64; 3]; 3];
        let mut sq = [[0.0f64; 3]; 3];
        for shot in 0..n {
            let r = sample_realization(&model, 77, 0, shot);
            for d in 0..3 {
                for c in 0..3 {
                    sum[d][c] += r.fields[d][c];
                    sq[d][c] += (r.fields[d][c] - model.uniform_b[c]).powi(2);
                }
            }
        }
        let se = sigma / (n as f64).sqrt();
        for d in 0..3 {
            for c in 0..3 {
                let mean = sum[d][c] / n as f64;
                assert!((mean - model.uniform_b[c]).abs() < 5.0 * se, "dot {d} comp {c}: {mean}");
                let var = sq[d][c] / n as f64;
                // Var of the sample variance is 2σ⁴/n.
                assert!((var - sigma * sigma).abs() < 5.0 * (2.0f64 / n as f64).sqrt() * sigma * sigma);
            }
        }
    }

    #[test]
    fn ideal_pulse_matches_exchange() {
        let model = NoiseModel::noiseless();
        let psi = random_qubit_state(3);
        let pulse = ExchangePulse::new(Pair::P23, 1.3);
        let got = apply_noisy_pulse(&psi, &pulse, &model, &NoiseRealization::zero());
        let want = exchange_unitary(2, 3, 1.3).unwrap() * &psi;
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn overrotation_scales_angle_and_preserves_leakage() {
        let model = NoiseModel {
            overrotation: Overrotation::uniform(0.05),
            ..NoiseModel::default()
        };
        let b = dfs_basis();
        let psi = random_qubit_state(8);
        let pulse = ExchangePulse::new(Pair::P12, 2.0);
        let out = apply_noisy_pulse(&psi, &pulse, &model, &NoiseRealization::zero());
        let want = exchange_unitary(1, 2, 2.1).unwrap() * &psi;
        assert!((&out - want).norm() < 1e-12);
        assert!(leakage_population(b, &out).unwrap() < 1e-14);
    }

    #[test]
    fn independent_fields_cause_leakage_on_average() {
        let model = NoiseModel {
            sigma_b: 0.2,
            ..NoiseModel::default()
        };
        let b = dfs_basis();
        let psi = b.qubit_states[0].clone();
        let pulse = ExchangePulse::new(Pair::P23, 1.0);
        let mean: f64 = (0..200)
            .map(|s| {
                let r = sample_realization(&model, 1, 0, s);
                let out = apply_idle(&apply_noisy_pulse(&psi, &pulse, &model, &r), &model, &r);
                leakage_population(b, &out).unwrap()
            })
            .sum::<f64>()
            / 200.0;
        assert!(mean > 1e-4, "mean leakage {mean}");
    }

    #[test]
    fn idle_cases() {
        let b = dfs_basis();
        let psi = random_qubit_state(12);
        let zero_idle = NoiseModel {
            sigma_b: 0.5,
            idle_duration: 0.0,
            ..NoiseModel::default()
        };
        let r = sample_realization(&zero_idle, 2, 0, 0);
        assert!((apply_idle(&psi, &zero_idle, &r) - &psi).norm() < 1e-15);

        let uniform = NoiseModel {
            uniform_b: [0.3, -0.8, 1.1],
            idle_duration: 3.7,
            ..NoiseModel::default()
        };
        let r = sample_realization(&uniform, 2, 0, 0);
        let out = apply_idle(&psi, &uniform, &r);
        assert!((encoded_bloch(b, &out) - encoded_bloch(b, &psi)).norm() < 1e-10);
    }

    #[test]
    fn independent_fields_dephase_on_average() {
        let b = dfs_basis();
        let model = NoiseModel {
            sigma_b: 0.3,
            idle_duration: 2.0,
            ..NoiseModel::default()
        };
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        let psi = (&b.qubit_states[0] + &b.qubit_states[2]) * C64::new(r2, 0.0);
        let before = encoded_bloch(b, &psi).norm();
        let n = 400;
        let mut avg = nalgebra::Vector3::zeros();
        for s in 0..n {
            let r = sample_realization(&model, 5, 0, s);
            avg += encoded_bloch(b, &apply_idle(&psi, &model, &r));
        }
        let after = (avg / n as f64).norm();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn cached_cliffords_match_pulse_by_pulse() {
        let group = CliffordGroup::shared();
        let model = NoiseModel {
            sigma_b: 0.1,
            overrotation: Overrotation { p12: 0.02, p23: -0.03 },
            ..NoiseModel::default()
        };
        let r = sample_realization(&model, 9, 1, 1);
        let mut gates = RealizedGates::new(group, &model, r.clone());
        for idx in [3, 10, 23] {
            let mut psi = random_qubit_state(idx as u64);
            let cached = gates.clifford(idx) * &psi;
            for p in &group.element(idx).pulses {
                psi = apply_idle(&apply_noisy_pulse(&psi, p, &model, &r), &model, &r);
            }
            assert!((cached - psi).norm() < 1e-12);
        }
        let u = gates.clifford(5).clone();
        assert!(max_abs_diff(&(u.adjoint() * &u), &CMatrix::identity(8, 8)) < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(NoiseModel::default().validate().is_ok());
        let bad = NoiseModel {
            sigma_b: -1.0,
            ..NoiseModel::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "sigma_b");
        let bad = NoiseModel {
            overrotation: Overrotation { p12: 1.0, p23: 0.0 },
            ..NoiseModel::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "overrotation.12");
    }
}
