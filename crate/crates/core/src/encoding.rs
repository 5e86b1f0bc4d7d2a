//! Decoherence-free-subsystem encoding of one logical qubit in three spins.
//!
//! The total-spin-1/2 part of the space is split as `qubit ⊗ gauge`, where the
//! qubit label is the singlet/triplet character of dots (1,2) and the gauge is
//! the total `m = ±1/2`. The remaining quartet (`S = 3/2`) is leakage.
//!
//! Encoded states are indexed `2·q + g` with `g = 0` for `m = +1/2`.
//!
//! Rotation convention: an encoded rotation by `angle` about unit axis `n` is
//! `exp(+i·angle/2·n·σ)`. Under it, `exchange_unitary(1, 2, θ)` is a rotation
//! by θ about [`AXIS_12`] and `exchange_unitary(2, 3, θ)` a rotation by θ about
//! [`AXIS_23`]. The two axes are 120° apart.

use std::sync::OnceLock;

use nalgebra::Vector3;

use crate::hilbert::{total_spin, CMatrix, CVector, C64, DIM};

pub type BlochVector = Vector3<f64>;

/// Encoded axis generated by exchange on dots (1,2).
pub const AXIS_12: [f64; 3] = [0.0, 0.0, 1.0];
/// Encoded axis generated by exchange on dots (2,3).
pub const AXIS_23: [f64; 3] = [-0.866_025_403_784_438_6, 0.0, -0.5];

/// Tolerance for [`encoded_action_of`] to call a unitary subspace-preserving.
pub const FACTORIZATION_TOL: f64 = 1e-10;
/// Normalization tolerance on input states.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateLabel {
    Qubit { q: u8, twice_m: i8 },
    Leakage { twice_m: i8 },
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateLabel::Qubit { q, twice_m } => write!(f, "|{q},{twice_m}/2>"),
            StateLabel::Leakage { twice_m } => write!(f, "|Q,{twice_m}/2>"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DfsBasis {
    /// `|0,+½⟩, |0,−½⟩, |1,+½⟩, |1,−½⟩`.
    pub qubit_states: [CVector; 4],
    /// Quartet `m = 3/2, 1/2, −1/2, −3/2`.
    pub leakage_states: [CVector; 4],
    pub qubit_labels: [StateLabel; 4],
    pub leakage_labels: [StateLabel; 4],
    qubit_isometry: CMatrix,
    leakage_isometry: CMatrix,
}

#[derive(Clone, Debug)]
pub struct EncodedAction {
    pub qubit_unitary: CMatrix,
    pub gauge_unitary: CMatrix,
    pub subspace_preserving: bool,
    /// Frobenius norm of the part of `U·P_qubit` that leaves the qubit sector.
    pub leakage_residual: f64,
    /// Frobenius norm of the restricted block minus `qubit ⊗ gauge`.
    pub factorization_residual: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StateError {
    #[error("state must have dimension 8, got {0}")]
    WrongDimension(usize),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
}

fn ket(entries: &[(usize, f64)]) -> CVector {
    let mut v = CVector::zeros(DIM);
    for &(idx, amp) in entries {
        v[idx] += C64::new(amp, 0.0);
    }
    v
}

fn lower(v: &CVector) -> CVector {
    let [sx, sy, _] = total_spin();
    let s_minus = sx - sy * C64::new(0.0, 1.0);
    let out = s_minus * v;
    let n = out.norm();
    out / C64::new(n, 0.0)
}

/// Builds the DFS basis in the fixed `dot1 ⊗ dot2 ⊗ dot3` ordering.
pub fn build_dfs_basis() -> DfsBasis {
    // Index = 4·s1 + 2·s2 + s3, s = 0 up, 1 down.
    const UUU: usize = 0;
    const UUD: usize = 1;
    const UDU: usize = 2;
    const DUU: usize = 4;
    let r2 = std::f64::consts::FRAC_1_SQRT_2;

    // |S⟩₁₂|↑⟩₃
    let zero_up = ket(&[(UDU, r2), (DUU, -r2)]);
    // √(2/3)|T₊⟩₁₂|↓⟩₃ − √(1/3)|T₀⟩₁₂|↑⟩₃
    let a = (2.0f64 / 3.0).sqrt();
    let b = (1.0f64 / 3.0).sqrt() * r2;
    let one_up = ket(&[(UUD, a), (UDU, -b), (DUU, -b)]);
    let zero_down = lower(&zero_up);
    let one_down = lower(&one_up);

    let q32 = ket(&[(UUU, 1.0)]);
    let q12 = lower(&q32);
    let qm12 = lower(&q12);
    let qm32 = lower(&qm12);

    let qubit_states = [zero_up, zero_down, one_up, one_down];
    let leakage_states = [q32, q12, qm12, qm32];
    let qubit_isometry = CMatrix::from_columns(&qubit_states);
    let leakage_isometry = CMatrix::from_columns(&leakage_states);
    DfsBasis {
        qubit_labels: [
            StateLabel::Qubit { q: 0, twice_m: 1 },
            StateLabel::Qubit { q: 0, twice_m: -1 },
            StateLabel::Qubit { q: 1, twice_m: 1 },
            StateLabel::Qubit { q: 1, twice_m: -1 },
        ],
        leakage_labels: [3, 1, -1, -3].map(|twice_m| StateLabel::Leakage { twice_m }),
        qubit_states,
        leakage_states,
        qubit_isometry,
        leakage_isometry,
    }
}

/// Process-wide shared basis.
pub fn dfs_basis() -> &'static DfsBasis {
    static BASIS: OnceLock<DfsBasis> = OnceLock::new();
    BASIS.get_or_init(build_dfs_basis)
}

impl DfsBasis {
    /// Encoded state `|q, m⟩` with `g = 0` for `m = +½`.
    pub fn qubit_state(&self, q: usize, g: usize) -> &CVector {
        &self.qubit_states[2 * q + g]
    }

    /// 8×4 isometry whose columns are the qubit-sector basis vectors.
    pub fn qubit_isometry(&self) -> &CMatrix {
        &self.qubit_isometry
    }

    pub fn leakage_isometry(&self) -> &CMatrix {
        &self.leakage_isometry
    }

    /// Encodes a logical 2-vector with the gauge fixed to `g`.
    pub fn encode(&self, logical: [C64; 2], g: usize) -> CVector {
        self.qubit_state(0, g) * logical[0] + self.qubit_state(1, g) * logical[1]
    }
}

pub fn qubit_projector(basis: &DfsBasis) -> CMatrix {
    let v = basis.qubit_isometry();
    v * v.adjoint()
}

pub fn leakage_projector(basis: &DfsBasis) -> CMatrix {
    let v = basis.leakage_isometry();
    v * v.adjoint()
}

pub(crate) fn check_normalized(state: &CVector) -> Result<(), StateError> {
    if state.len() != DIM {
        return Err(StateError::WrongDimension(state.len()));
    }
    let n2 = state.norm_squared();
    if (n2 - 1.0).abs() > NORM_TOL {
        return Err(StateError::NotNormalized(n2));
    }
    Ok(())
}

/// Population in the `S = 3/2` quartet.
pub fn leakage_population(basis: &DfsBasis, state: &CVector) -> Result<f64, StateError> {
    check_normalized(state)?;
    let amps = basis.leakage_isometry().adjoint() * state;
    Ok(amps.norm_squared().clamp(0.0, 1.0))
}

/// Reduced 2×2 qubit operator after tracing out gauge and leakage.
pub fn reduced_qubit_operator(basis: &DfsBasis, state: &CVector) -> CMatrix {
    let amps = basis.qubit_isometry().adjoint() * state;
    let mut rho = CMatrix::zeros(2, 2);
    for q in 0..2 {
        for qp in 0..2 {
            rho[(q, qp)] = (0..2).map(|g| amps[2 * q + g] * amps[2 * qp + g].conj()).sum();
        }
    }
    rho
}

/// Encoded Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` over the qubit subsystem.
pub fn encoded_bloch(basis: &DfsBasis, state: &CVector) -> BlochVector {
    let rho = reduced_qubit_operator(basis, state);
    let off = rho[(0, 1)];
    BlochVector::new(2.0 * off.re, -2.0 * off.im, (rho[(0, 0)] - rho[(1, 1)]).re)
}

/// Splits an 8×8 unitary into encoded qubit and gauge factors when it
/// preserves the qubit sector.
pub fn encoded_action_of(basis: &DfsBasis, u: &CMatrix) -> EncodedAction {
    let v = basis.qubit_isometry();
    let uv = u * v;
    let block = v.adjoint() * &uv;
    let leakage_residual = (&uv - v * &block).norm();

    // Rearrange M[(q,g),(q',g')] into R[(q,q'),(g,g')]; M = Q ⊗ G iff R is rank one.
    let mut r = CMatrix::zeros(4, 4);
    for q in 0..2 {
        for g in 0..2 {
            for qp in 0..2 {
                for gp in 0..2 {
                    r[(2 * q + qp, 2 * g + gp)] = block[(2 * q + g, 2 * qp + gp)];
                }
            }
        }
    }
    // R = vec(Q)·vec(G)ᵀ: G is proportional to the dominant row, Q follows by projection.
    let pivot = (0..4)
        .max_by(|&a, &b| r.row(a).norm().total_cmp(&r.row(b).norm()))
        .expect("four rows");
    let g_row = r.row(pivot).into_owned();
    let g_norm2 = g_row.norm_squared();
    let mut qubit = CMatrix::zeros(2, 2);
    let mut gauge = CMatrix::zeros(2, 2);
    if g_norm2 > 0.0 {
        for a in 0..2 {
            for b in 0..2 {
                let row = r.row(2 * a + b);
                qubit[(a, b)] = row.dotc(&g_row).conj() / g_norm2;
                gauge[(a, b)] = g_row[2 * a + b];
            }
        }
    }
    let det = (qubit[(0, 0)] * qubit[(1, 1)] - qubit[(0, 1)] * qubit[(1, 0)]).norm();
    if det > 0.0 {
        let scale = det.sqrt();
        qubit /= C64::new(scale, 0.0);
        gauge *= C64::new(scale, 0.0);
    }
    let factorization_residual = (&block - qubit.kronecker(&gauge)).norm();
    EncodedAction {
        subspace_preserving: leakage_residual <= FACTORIZATION_TOL && factorization_residual <= FACTORIZATION_TOL,
        qubit_unitary: qubit,
        gauge_unitary: gauge,
        leakage_residual,
        factorization_residual,
    }
}

/// `exp(+i·angle/2·n·σ)` for a unit axis `n`.
pub fn encoded_rotation(axis: [f64; 3], angle: f64) -> CMatrix {
    let (s, c) = (angle / 2.0).sin_cos();
    let [nx, ny, nz] = axis;
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    // n·σ = [[nz, nx − i ny], [nx + i ny, −nz]]
    let ns = [
        C64::new(nz, 0.0),
        C64::new(nx, -ny),
        C64::new(nx, ny),
        C64::new(-nz, 0.0),
    ];
    CMatrix::from_row_slice(
        2,
        2,
        &[
            one * c + i * s * ns[0],
            i * s * ns[1],
            i * s * ns[2],
            one * c + i * s * ns[3],
        ],
    )
}

/// Recovers `(axis, angle)` with `angle ∈ [0, π]` such that `w ∝ exp(+i·angle/2·n·σ)`.
/// Returns a zero axis for the identity.
pub fn rotation_axis_angle(w: &CMatrix) -> (BlochVector, f64) {
    let det = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
    let mut su = w / det.sqrt();
    // su = c·I + i·s·n·σ with real c, s; pick the sign giving c ≥ 0.
    let mut c = ((su[(0, 0)] + su[(1, 1)]) / 2.0).re;
    if c < 0.0 {
        su = -su;
        c = -c;
    }
    let half_i = C64::new(0.0, -0.5);
    let sx = ((su[(0, 1)] + su[(1, 0)]) * half_i).re;
    let sy = ((su[(1, 0)] - su[(0, 1)]) * C64::new(-0.5, 0.0)).re;
    let sz = ((su[(0, 0)] - su[(1, 1)]) * half_i).re;
    let sv = BlochVector::new(sx, sy, sz);
    let s = sv.norm();
    let angle = 2.0 * s.atan2(c);
    if s < 1e-15 {
        (BlochVector::zeros(), 0.0)
    } else {
        (sv / s, angle)
    }
}
