//! Three-spin linear algebra: spin operators, embedding, exchange and Zeeman
//! evolution, and phase-insensitive comparison of unitaries.
//!
//! Tensor ordering is fixed as `dot1 ⊗ dot2 ⊗ dot3`. A basis index is
//! `4·s1 + 2·s2 + s3` with `s = 0` for spin up and `s = 1` for spin down, so
//! `|↑↓↑⟩` has index 2. Angles are radians, fields are angular frequencies and
//! durations share one time unit so that `field · duration` is a phase.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Field vector on one dot, angular-frequency units.
pub type Field = Vector3<f64>;

/// Hilbert-space dimension of three spin-1/2 particles.
pub const DIM: usize = 8;

/// Elementwise tolerance used when checking unitarity of inputs.
pub const UNITARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("dot index {0} is out of range (expected 1, 2 or 3)")]
    InvalidDot(usize),
    #[error("exchange requires two distinct dots, got {0} twice")]
    SameDot(usize),
    #[error("operator must be {expected}x{expected}, got {rows}x{cols}")]
    BadShape { expected: usize, rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("zero-duration window cannot carry a nonzero exchange angle {0}")]
    ZeroDurationPulse(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
}

/// One of the two physical exchange axes of a linear triple dot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pair {
    #[serde(rename = "12")]
    P12,
    #[serde(rename = "23")]
    P23,
}

impl Pair {
    pub const ALL: [Pair; 2] = [Pair::P12, Pair::P23];

    pub fn dots(self) -> (usize, usize) {
        match self {
            Pair::P12 => (1, 2),
            Pair::P23 => (2, 3),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pair::P12 => "12",
            Pair::P23 => "23",
        }
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.dots().0, self.dots().1)
    }
}

impl std::str::FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "12" | "(1,2)" | "1-2" => Ok(Pair::P12),
            "23" | "(2,3)" | "2-3" => Ok(Pair::P23),
            other => Err(format!("unknown exchange pair `{other}` (expected 12 or 23)")),
        }
    }
}

/// Spin-1/2 operators with ħ = 1.
#[derive(Clone, Debug)]
pub struct SpinOperatorSet {
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
}

impl SpinOperatorSet {
    pub fn new() -> Self {
        let h = C64::new(0.5, 0.0);
        let ih = C64::new(0.0, 0.5);
        let z = C64::new(0.0, 0.0);
        Self {
            sx: CMatrix::from_row_slice(2, 2, &[z, h, h, z]),
            sy: CMatrix::from_row_slice(2, 2, &[z, -ih, ih, z]),
            sz: CMatrix::from_row_slice(2, 2, &[h, z, z, -h]),
        }
    }

    pub fn components(&self) -> [&CMatrix; 3] {
        [&self.sx, &self.sy, &self.sz]
    }
}

impl Default for SpinOperatorSet {
    fn default() -> Self {
        Self::new()
    }
}

fn check_dot(dot: usize) -> Result<(), HilbertError> {
    if (1..=3).contains(&dot) {
        Ok(())
    } else {
        Err(HilbertError::InvalidDot(dot))
    }
}

fn check_pair(i: usize, j: usize) -> Result<(), HilbertError> {
    check_dot(i)?;
    check_dot(j)?;
    if i == j {
        return Err(HilbertError::SameDot(i));
    }
    Ok(())
}

/// Places a single-spin operator in slot `dot_index` of the three-spin space.
pub fn embed_single_spin(op: &CMatrix, dot_index: usize) -> Result<CMatrix, HilbertError> {
    if op.nrows() != 2 || op.ncols() != 2 {
        return Err(HilbertError::BadShape {
            expected: 2,
            rows: op.nrows(),
            cols: op.ncols(),
        });
    }
    check_dot(dot_index)?;
    let id = CMatrix::identity(2, 2);
    let mut out = CMatrix::identity(1, 1);
    for slot in 1..=3 {
        let factor = if slot == dot_index { op } else { &id };
        out = out.kronecker(factor);
    }
    Ok(out)
}

/// `S_i · S_j` on the three-spin space.
pub fn heisenberg_coupling(i: usize, j: usize) -> Result<CMatrix, HilbertError> {
    check_pair(i, j)?;
    let spins = SpinOperatorSet::new();
    let mut out = CMatrix::zeros(DIM, DIM);
    for s in spins.components() {
        out += embed_single_spin(s, i)? * embed_single_spin(s, j)?;
    }
    Ok(out)
}

/// Permutation matrix exchanging the spins on dots `i` and `j`.
pub fn swap_operator(i: usize, j: usize) -> Result<CMatrix, HilbertError> {
    check_pair(i, j)?;
    let mut out = CMatrix::zeros(DIM, DIM);
    for idx in 0..DIM {
        let mut bits = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
        bits.swap(i - 1, j - 1);
        let target = (bits[0] << 2) | (bits[1] << 1) | bits[2];
        out[(target, idx)] = C64::new(1.0, 0.0);
    }
    Ok(out)
}

/// Total-spin component operators `Σ_i S_i^α` for α = x, y, z.
pub fn total_spin() -> [CMatrix; 3] {
    let spins = SpinOperatorSet::new();
    let comps = spins.components();
    std::array::from_fn(|a| {
        (1..=3)
            .map(|d| embed_single_spin(comps[a], d).expect("valid dot"))
            .fold(CMatrix::zeros(DIM, DIM), |acc, m| acc + m)
    })
}

/// Total spin squared `S²`, eigenvalues S(S+1) ∈ {3/4, 15/4}.
pub fn total_spin_squared() -> CMatrix {
    total_spin().iter().fold(CMatrix::zeros(DIM, DIM), |acc, s| acc + s * s)
}

/// `exp(−i·θ·S_i·S_j)` in closed form
/// `e^{iθ/4} (cos(θ/2)·I − i·sin(θ/2)·SWAP_ij)`.
///
/// The exact period is 8π; `θ = 4π` gives `−I`.
pub fn exchange_unitary(i: usize, j: usize, theta: f64) -> Result<CMatrix, HilbertError> {
    if !theta.is_finite() {
        return Err(HilbertError::NonFinite("exchange angle"));
    }
    let swap = swap_operator(i, j)?;
    let phase = C64::from_polar(1.0, theta / 4.0);
    let (s, c) = (theta / 2.0).sin_cos();
    let id = CMatrix::identity(DIM, DIM);
    Ok((id * C64::new(c, 0.0) - swap * C64::new(0.0, s)) * phase)
}

/// `exp(−i·t·H)` for Hermitian `H` via eigendecomposition.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = eig.eigenvalues.map(|lam| C64::from_polar(1.0, -lam * t));
    let mut vd = v.clone();
    for (k, mut col) in vd.column_iter_mut().enumerate() {
        col *= phases[k];
    }
    vd * v.adjoint()
}

fn check_fields(fields: &[Field; 3]) -> Result<(), HilbertError> {
    if fields.iter().all(|f| f.iter().all(|c| c.is_finite())) {
        Ok(())
    } else {
        Err(HilbertError::NonFinite("field"))
    }
}

/// Zeeman Hamiltonian `Σ_i B_i · S_i`.
pub fn zeeman_hamiltonian(fields: &[Field; 3]) -> Result<CMatrix, HilbertError> {
    check_fields(fields)?;
    let spins = SpinOperatorSet::new();
    let comps = spins.components();
    let mut h = CMatrix::zeros(DIM, DIM);
    for (d, b) in fields.iter().enumerate() {
        for (a, op) in comps.iter().enumerate() {
            if b[a] != 0.0 {
                h += embed_single_spin(op, d + 1)? * C64::new(b[a], 0.0);
            }
        }
    }
    Ok(h)
}

/// Free evolution `exp(−i·duration·Σ B_i·S_i)`.
pub fn zeeman_unitary(fields: &[Field; 3], duration: f64) -> Result<CMatrix, HilbertError> {
    if !duration.is_finite() {
        return Err(HilbertError::NonFinite("duration"));
    }
    if duration < 0.0 {
        return Err(HilbertError::NegativeDuration(duration));
    }
    let h = zeeman_hamiltonian(fields)?;
    if duration == 0.0 || fields.iter().all(|f| f.iter().all(|&c| c == 0.0)) {
        return Ok(CMatrix::identity(DIM, DIM));
    }
    Ok(expm_hermitian(&h, duration))
}

/// Exact evolution under simultaneous exchange and Zeeman terms,
/// `H = (θ/duration)·S_i·S_j + Σ B_k·S_k` held for `duration`.
pub fn joint_pulse_unitary(
    i: usize,
    j: usize,
    theta: f64,
    fields: &[Field; 3],
    duration: f64,
) -> Result<CMatrix, HilbertError> {
    check_pair(i, j)?;
    if !theta.is_finite() {
        return Err(HilbertError::NonFinite("exchange angle"));
    }
    if !duration.is_finite() {
        return Err(HilbertError::NonFinite("duration"));
    }
    if duration < 0.0 {
        return Err(HilbertError::NegativeDuration(duration));
    }
    check_fields(fields)?;
    if duration == 0.0 {
        if theta != 0.0 {
            return Err(HilbertError::ZeroDurationPulse(theta));
        }
        return Ok(CMatrix::identity(DIM, DIM));
    }
    if fields.iter().all(|f| f.iter().all(|&c| c == 0.0)) {
        return exchange_unitary(i, j, theta);
    }
    let h = heisenberg_coupling(i, j)? * C64::new(theta / duration, 0.0) + zeeman_hamiltonian(fields)?;
    Ok(expm_hermitian(&h, duration))
}

/// Largest elementwise deviation of `U†U` from the identity.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    let n = u.nrows();
    let prod = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((prod[(r, c)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// `1 − |tr(U†V)|/dim`; zero exactly when `U = e^{iφ}V`.
pub fn phase_invariant_distance(u: &CMatrix, v: &CMatrix) -> Result<f64, HilbertError> {
    if u.shape() != v.shape() {
        return Err(HilbertError::DimensionMismatch(u.nrows(), v.nrows()));
    }
    for m in [u, v] {
        let defect = unitarity_defect(m);
        if defect > UNITARY_TOL {
            return Err(HilbertError::NotUnitary(defect));
        }
    }
    let dim = u.nrows() as f64;
    let overlap = (u.adjoint() * v).trace().norm() / dim;
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Largest elementwise modulus of `a − b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Computational basis vector for spins `(s1, s2, s3)`, `true` meaning up.
pub fn product_state(up: [bool; 3]) -> CVector {
    let idx = up.iter().fold(0usize, |acc, &u| (acc << 1) | usize::from(!u));
    let mut v = CVector::zeros(DIM);
    v[idx] = C64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn eigenvalues_sorted(h: &CMatrix) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn embed_identity_is_identity() {
        let e = embed_single_spin(&CMatrix::identity(2, 2), 2).unwrap();
        assert!(max_abs_diff(&e, &CMatrix::identity(8, 8)) < 1e-15);
    }

    #[test]
    fn embed_sz_on_first_dot() {
        let s = SpinOperatorSet::new();
        let e = embed_single_spin(&s.sz, 1).unwrap();
        let expected = [0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5];
        for (k, &v) in expected.iter().enumerate() {
            assert!((e[(k, k)] - C64::new(v, 0.0)).norm() < 1e-15);
        }
        let sx1 = embed_single_spin(&s.sx, 1).unwrap();
        assert!(((&sx1 * &sx1).trace() - C64::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn embed_rejects_bad_input() {
        let s = SpinOperatorSet::new();
        assert_eq!(embed_single_spin(&s.sx, 0), Err(HilbertError::InvalidDot(0)));
        assert_eq!(embed_single_spin(&s.sx, 4), Err(HilbertError::InvalidDot(4)));
        assert!(matches!(
            embed_single_spin(&CMatrix::identity(3, 3), 1),
            Err(HilbertError::BadShape { .. })
        ));
    }

    #[test]
    fn spin_algebra() {
        let s = SpinOperatorSet::new();
        let comm = &s.sx * &s.sy - &s.sy * &s.sx;
        assert!(max_abs_diff(&comm, &(&s.sz * C64::new(0.0, 1.0))) < 1e-15);
        let ops = s.components();
        for a in 0..3 {
            for b in 0..3 {
                let tr = (ops[a] * ops[b]).trace();
                let want = if a == b { 0.5 } else { 0.0 };
                assert!((tr - C64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn heisenberg_spectrum_and_swap_relation() {
        let h = heisenberg_coupling(1, 2).unwrap();
        let ev = eigenvalues_sorted(&h);
        for (k, v) in ev.iter().enumerate() {
            let want = if k < 2 { -0.75 } else { 0.25 };
            assert!((v - want).abs() < 1e-12, "{ev:?}");
        }
        assert!(max_abs_diff(&h, &heisenberg_coupling(2, 1).unwrap()) < 1e-15);
        for (i, j) in [(1, 2), (2, 3), (1, 3)] {
            let swap = swap_operator(i, j).unwrap();
            let rebuilt =
                heisenberg_coupling(i, j).unwrap() * C64::new(2.0, 0.0) + CMatrix::identity(8, 8) * C64::new(0.5, 0.0);
            assert!(max_abs_diff(&swap, &rebuilt) < 1e-14);
        }
        assert_eq!(heisenberg_coupling(2, 2), Err(HilbertError::SameDot(2)));
    }

    #[test]
    fn exchange_special_angles() {
        let id = CMatrix::identity(8, 8);
        assert!(max_abs_diff(&exchange_unitary(1, 2, 0.0).unwrap(), &id) < 1e-15);
        let u_pi = exchange_unitary(1, 2, PI).unwrap();
        let swap = swap_operator(1, 2).unwrap();
        assert!(phase_invariant_distance(&u_pi, &swap).unwrap() < 1e-14);
        let u_4pi = exchange_unitary(1, 2, 4.0 * PI).unwrap();
        assert!(max_abs_diff(&u_4pi, &(-id.clone())) < 1e-12);
        assert!(phase_invariant_distance(&u_4pi, &id).unwrap() < 1e-14);
        let u_8pi = exchange_unitary(1, 2, 8.0 * PI).unwrap();
        assert!(max_abs_diff(&u_8pi, &id) < 1e-12);
        assert!(exchange_unitary(1, 2, f64::NAN).is_err());
        assert!(exchange_unitary(3, 3, 1.0).is_err());
    }

    #[test]
    fn zeeman_uniform_z_field_is_diagonal_in_total_mz() {
        let b = 0.7;
        let t = 1.3;
        let fields = [Field::new(0.0, 0.0, b); 3];
        let u = zeeman_unitary(&fields, t).unwrap();
        for idx in 0..8 {
            let ups = 3 - (idx as u32).count_ones() as i32;
            let mz = ups as f64 - 1.5;
            let want = C64::from_polar(1.0, -b * t * mz);
            for col in 0..8 {
                let expect = if col == idx { want } else { C64::new(0.0, 0.0) };
                assert!((u[(idx, col)] - expect).norm() < 1e-12);
            }
        }
        let zero = [Field::zeros(); 3];
        assert!(max_abs_diff(&zeeman_unitary(&zero, 5.0).unwrap(), &CMatrix::identity(8, 8)) < 1e-15);
        let bad = [Field::new(f64::NAN, 0.0, 0.0), Field::zeros(), Field::zeros()];
        assert!(zeeman_unitary(&bad, 1.0).is_err());
        assert!(zeeman_unitary(&zero, -1.0).is_err());
    }

    #[test]
    fn uniform_zeeman_commutes_with_exchange() {
        let fields = [Field::new(0.3, -0.2, 0.9); 3];
        let z = zeeman_unitary(&fields, 0.8).unwrap();
        for (i, j) in [(1, 2), (2, 3)] {
            let x = exchange_unitary(i, j, 1.1).unwrap();
            assert!(max_abs_diff(&(&z * &x), &(&x * &z)) < 1e-12);
        }
    }

    #[test]
    fn joint_pulse_limits() {
        let zero = [Field::zeros(); 3];
        let a = joint_pulse_unitary(2, 3, 1.7, &zero, 2.0).unwrap();
        assert!(max_abs_diff(&a, &exchange_unitary(2, 3, 1.7).unwrap()) < 1e-12);
        let fields = [
            Field::new(0.1, 0.2, 0.3),
            Field::new(-0.2, 0.0, 0.5),
            Field::new(0.0, 0.4, -0.1),
        ];
        let b = joint_pulse_unitary(1, 2, 0.0, &fields, 0.7).unwrap();
        assert!(max_abs_diff(&b, &zeeman_unitary(&fields, 0.7).unwrap()) < 1e-12);
        assert!(matches!(
            joint_pulse_unitary(1, 2, 0.5, &fields, 0.0),
            Err(HilbertError::ZeroDurationPulse(_))
        ));
        // Nonzero fields with exchange must still match the generic exponential path.
        let c = joint_pulse_unitary(1, 2, 1.2, &fields, 0.9).unwrap();
        assert!(unitarity_defect(&c) < 1e-12);
    }

    #[test]
    fn joint_pulse_matches_strang_splitting_at_third_order() {
        let fields = [
            Field::new(0.4, -0.3, 0.8),
            Field::new(-0.5, 0.2, 0.1),
            Field::new(0.3, 0.6, -0.7),
        ];
        let rate = 2.0; // θ / duration held fixed
        let err = |dt: f64| {
            let exact = joint_pulse_unitary(1, 2, rate * dt, &fields, dt).unwrap();
            let half = zeeman_unitary(&fields, dt / 2.0).unwrap();
            let strang = &half * exchange_unitary(1, 2, rate * dt).unwrap() * &half;
            max_abs_diff(&exact, &strang)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let order = (e1 / e2).log2();
        assert!((order - 3.0).abs() < 0.1, "observed local order {order}");
    }

    #[test]
    fn phase_invariant_distance_properties() {
        let u = exchange_unitary(1, 3, 0.77).unwrap();
        assert!(phase_invariant_distance(&u, &u).unwrap() < 1e-15);
        let shifted = &u * C64::from_polar(1.0, 2.1);
        assert!(phase_invariant_distance(&u, &shifted).unwrap() < 1e-15);
        let s = SpinOperatorSet::new();
        let doubled = &s.sx * C64::new(2.0, 0.0);
        let id2 = CMatrix::identity(2, 2);
        assert!(phase_invariant_distance(&id2, &doubled).is_ok());
        let not_unitary = &s.sx * C64::new(3.0, 0.0);
        assert!(matches!(
            phase_invariant_distance(&id2, &not_unitary),
            Err(HilbertError::NotUnitary(_))
        ));
        assert!(matches!(
            phase_invariant_distance(&id2, &u),
            Err(HilbertError::DimensionMismatch(2, 8))
        ));
    }

    #[test]
    fn product_state_indexing() {
        let v = product_state([true, false, true]);
        assert_eq!(v[2], C64::new(1.0, 0.0));
    }
}
