//! The 24-element single-qubit Clifford group, its canonical ordering and its
//! compilation into exchange pulses about the two encoded axes.
//!
//! Matrices follow the rotation convention of [`crate::encoding`]:
//! `R_n(a) = exp(+i·a/2·n·σ)`. Group elements are generated from `R_z(π/2)` and
//! `R_x(π/2)`. A word `[g₁, g₂, …]` is read in time order, so its matrix is
//! `… · g₂ · g₁`.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{dfs_basis, encoded_action_of, encoded_rotation, rotation_axis_angle, AXIS_12, AXIS_23};
use crate::hilbert::{exchange_unitary, phase_invariant_distance, CMatrix, Pair, DIM};
use crate::rng::{stream, Purpose};

pub const GROUP_ORDER: usize = 24;
/// Largest allowed compiled pulse count.
pub const MAX_PULSES: usize = 4;
/// Phase-invariant distance a compiled sequence must meet.
pub const COMPILE_TOL: f64 = 1e-9;
const SOLVER_STARTS: u64 = 32;
const SOLVER_MAX_ITER: usize = 200;
const SOLVED_RESIDUAL: f64 = 1e-13;
const ZERO_ANGLE_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    /// `R_z(π/2)`
    Z,
    /// `R_x(π/2)`
    X,
}

impl Generator {
    pub fn matrix(self) -> CMatrix {
        match self {
            Generator::Z => encoded_rotation([0.0, 0.0, 1.0], PI / 2.0),
            Generator::X => encoded_rotation([1.0, 0.0, 0.0], PI / 2.0),
        }
    }
}

/// One exchange rotation. The systematic-error channel that applies to it is
/// the one attached to its pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangePulse {
    pub pair: Pair,
    /// Nominal rotation angle in `[0, 2π)`.
    pub theta: f64,
}

impl ExchangePulse {
    pub fn new(pair: Pair, theta: f64) -> Self {
        Self { pair, theta }
    }

    pub fn unitary(&self) -> CMatrix {
        let (i, j) = self.pair.dots();
        exchange_unitary(i, j, self.theta).expect("valid pair and finite angle")
    }

    /// Encoded 2×2 action of the ideal pulse.
    pub fn encoded(&self) -> CMatrix {
        encoded_rotation(axis_of(self.pair), self.theta)
    }
}

pub fn axis_of(pair: Pair) -> [f64; 3] {
    match pair {
        Pair::P12 => AXIS_12,
        Pair::P23 => AXIS_23,
    }
}

#[derive(Clone, Debug)]
pub struct CliffordElement {
    pub index: usize,
    /// Encoded 2×2 unitary, defined up to global phase.
    pub matrix: CMatrix,
    /// Shortest generator word reaching this element, time ordered.
    pub word: Vec<Generator>,
    /// Compiled pulses in time order; empty until compiled.
    pub pulses: Vec<ExchangePulse>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("no pulse decomposition found after {starts} starts per form (best residual {residual:.3e})")]
    NoSolution { starts: u64, residual: f64 },
    #[error("compiled sequence misses its target (distance {distance:.3e})")]
    Residual { distance: f64 },
    #[error("closure produced {0} elements, expected 24")]
    WrongOrder(usize),
    #[error("matrix is not a member of the Clifford group")]
    NotInGroup,
}

fn find_match(list: &[CMatrix], m: &CMatrix) -> Option<usize> {
    list.iter()
        .position(|x| phase_invariant_distance(x, m).map(|d| d < DEDUP_TOL).unwrap_or(false))
}

/// Closure of `{R_z(π/2), R_x(π/2)}` modulo phase, in canonical BFS order
/// (shorter words first, ties broken lexicographically with `Z < X`).
pub fn generate_clifford_group() -> Vec<CliffordElement> {
    let gens = [Generator::Z, Generator::X];
    let mut mats: Vec<CMatrix> = vec![CMatrix::identity(2, 2)];
    let mut words: Vec<Vec<Generator>> = vec![vec![]];
    let mut queue = VecDeque::from([0usize]);
    while let Some(k) = queue.pop_front() {
        for g in gens {
            let next = g.matrix() * &mats[k];
            if find_match(&mats, &next).is_none() {
                let mut w = words[k].clone();
                w.push(g);
                mats.push(next);
                words.push(w);
                queue.push_back(mats.len() - 1);
            }
        }
    }
    mats.into_iter()
        .zip(words)
        .enumerate()
        .map(|(index, (matrix, word))| CliffordElement {
            index,
            matrix,
            word,
            pulses: Vec::new(),
        })
        .collect()
}

/// Rotation-vector residual `s·n` of `target† · product` with the phase fixed
/// so that the scalar part is non-negative; zero iff the two agree up to phase.
fn rotation_residual(target: &CMatrix, product: &CMatrix) -> [f64; 3] {
    let w = target.adjoint() * product;
    let (axis, angle) = rotation_axis_angle(&w);
    let s = (angle / 2.0).sin();
    [axis[0] * s, axis[1] * s, axis[2] * s]
}

fn template_product(axes: &[Pair], angles: &[f64]) -> CMatrix {
    axes.iter().zip(angles).fold(CMatrix::identity(2, 2), |acc, (&p, &a)| {
        acc * encoded_rotation(axis_of(p), a)
    })
}

/// Damped least squares on the rotation residual; returns refined angles and
/// the final residual norm.
fn solve_form(target: &CMatrix, axes: &[Pair], start: Vec<f64>) -> (Vec<f64>, f64) {
    let k = axes.len();
    let residual = |x: &[f64]| DVector::from_row_slice(&rotation_residual(target, &template_product(axes, x)));
    let mut x = start;
    let mut r = residual(&x);
    let mut damping = 1e-3;
    let h = 1e-7;
    for _ in 0..SOLVER_MAX_ITER {
        if r.norm() < SOLVED_RESIDUAL {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(3, k);
        for c in 0..k {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (residual(&xp) - residual(&xm)) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..20 {
            let a = &jtj + DMatrix::<f64>::identity(k, k) * damping;
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residual(&trial);
            if rt.norm() < r.norm() {
                x = trial;
                r = rt;
                damping = (damping * 0.3).max(1e-15);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let norm = r.norm();
    (x, norm)
}

/// Contiguous sub-words of the matrix-order template `z·n·z·n`, shortest first.
fn candidate_forms() -> Vec<Vec<Pair>> {
    let template = [Pair::P12, Pair::P23, Pair::P12, Pair::P23];
    let mut forms = Vec::new();
    for len in 1..=template.len() {
        for start in 0..=(template.len() - len) {
            let f = template[start..start + len].to_vec();
            if !forms.contains(&f) {
                forms.push(f);
            }
        }
    }
    forms
}

fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if TAU - r < ZERO_ANGLE_TOL {
        0.0
    } else {
        r
    }
}

/// Compiled pulses (time order) reproducing `target` up to phase.
pub fn compile_clifford(target: &CMatrix) -> Result<Vec<ExchangePulse>, CompileError> {
    if phase_invariant_distance(target, &CMatrix::identity(2, 2)).map_err(|_| CompileError::NotInGroup)? < DEDUP_TOL {
        return Ok(Vec::new());
    }
    let mut best = f64::INFINITY;
    for (form_id, axes) in candidate_forms().into_iter().enumerate() {
        let mut rng = stream(0, Purpose::Compile, form_id as u64, 0);
        for _ in 0..SOLVER_STARTS {
            let start: Vec<f64> = (0..axes.len()).map(|_| rng.random_range(0.0..TAU)).collect();
            let (angles, res) = solve_form(target, &axes, start);
            best = best.min(res);
            if res >= SOLVED_RESIDUAL {
                continue;
            }
            // Matrix order is reversed to get time order.
            let mut pulses: Vec<ExchangePulse> = axes
                .iter()
                .zip(&angles)
                .rev()
                .map(|(&p, &a)| ExchangePulse::new(p, normalize_angle(a)))
                .filter(|p| p.theta.abs() > ZERO_ANGLE_TOL)
                .collect();
            merge_adjacent(&mut pulses);
            let distance = pulse_distance(target, &pulses);
            if distance <= COMPILE_TOL {
                return Ok(pulses);
            }
        }
    }
    Err(CompileError::NoSolution {
        starts: SOLVER_STARTS,
        residual: best,
    })
}

fn merge_adjacent(pulses: &mut Vec<ExchangePulse>) {
    let mut out: Vec<ExchangePulse> = Vec::with_capacity(pulses.len());
    for p in pulses.drain(..) {
        match out.last_mut() {
            Some(last) if last.pair == p.pair => {
                last.theta = normalize_angle(last.theta + p.theta);
                if last.theta.abs() <= ZERO_ANGLE_TOL {
                    out.pop();
                }
            }
            _ => out.push(p),
        }
    }
    *pulses = out;
}

/// Full 8×8 product of ideal pulses in time order.
pub fn pulse_sequence_unitary(pulses: &[ExchangePulse]) -> CMatrix {
    pulses
        .iter()
        .fold(CMatrix::identity(DIM, DIM), |acc, p| p.unitary() * acc)
}

/// Distance between `target` and the encoded action of the ideal 8×8 pulse
/// product; `1.0` if the product does not factorize.
pub fn pulse_distance(target: &CMatrix, pulses: &[ExchangePulse]) -> f64 {
    let action = encoded_action_of(dfs_basis(), &pulse_sequence_unitary(pulses));
    if !action.subspace_preserving {
        return 1.0;
    }
    phase_invariant_distance(target, &action.qubit_unitary).unwrap_or(1.0)
}

/// The canonical group with compiled pulses and lookup tables.
#[derive(Clone, Debug)]
pub struct CliffordGroup {
    elements: Vec<CliffordElement>,
    mult: Vec<[u8; GROUP_ORDER]>,
    inv: [u8; GROUP_ORDER],
    x_index: usize,
}

impl CliffordGroup {
    pub fn build() -> Result<Self, CompileError> {
        let mut elements = generate_clifford_group();
        if elements.len() != GROUP_ORDER {
            return Err(CompileError::WrongOrder(elements.len()));
        }
        let mats: Vec<CMatrix> = elements.iter().map(|e| e.matrix.clone()).collect();
        let mut mult = vec![[0u8; GROUP_ORDER]; GROUP_ORDER];
        for a in 0..GROUP_ORDER {
            for b in 0..GROUP_ORDER {
                let prod = &mats[a] * &mats[b];
                mult[a][b] = find_match(&mats, &prod).ok_or(CompileError::NotInGroup)? as u8;
            }
        }
        let mut inv = [0u8; GROUP_ORDER];
        for a in 0..GROUP_ORDER {
            inv[a] = (0..GROUP_ORDER)
                .find(|&b| mult[a][b] == 0)
                .ok_or(CompileError::NotInGroup)? as u8;
        }
        let x_matrix = encoded_rotation([1.0, 0.0, 0.0], PI);
        let x_index = find_match(&mats, &x_matrix).ok_or(CompileError::NotInGroup)?;
        for e in elements.iter_mut() {
            e.pulses = compile_clifford(&e.matrix)?;
        }
        Ok(Self {
            elements,
            mult,
            inv,
            x_index,
        })
    }

    /// Process-wide instance, built on first use.
    pub fn shared() -> &'static CliffordGroup {
        static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
        GROUP.get_or_init(|| CliffordGroup::build().expect("Clifford compilation is deterministic and verified"))
    }

    pub fn elements(&self) -> &[CliffordElement] {
        &self.elements
    }

    pub fn element(&self, index: usize) -> &CliffordElement {
        &self.elements[index]
    }

    pub fn identity(&self) -> usize {
        0
    }

    /// Index of the logical X (π about x).
    pub fn x(&self) -> usize {
        self.x_index
    }

    /// Index of `M_a · M_b` (apply `b` first).
    pub fn multiply(&self, a: usize, b: usize) -> usize {
        self.mult[a][b] as usize
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inv[a] as usize
    }

    /// Net element of a time-ordered sequence.
    pub fn compose(&self, sequence: &[usize]) -> usize {
        sequence.iter().fold(0, |net, &c| self.multiply(c, net))
    }

    /// Canonical index of a 2×2 matrix, if it is a Clifford.
    pub fn lookup(&self, m: &CMatrix) -> Option<usize> {
        self.elements.iter().position(|e| {
            phase_invariant_distance(&e.matrix, m)
                .map(|d| d < DEDUP_TOL)
                .unwrap_or(false)
        })
    }

    pub fn total_pulse_count(&self) -> usize {
        self.elements.iter().map(|e| e.pulses.len()).sum()
    }

    /// Uniform i.i.d. Clifford sequence keyed by `(seed, sequence_id)`.
    pub fn sample_sequence(&self, length: usize, seed: u64, sequence_id: u64) -> SampledSequence {
        let mut rng = stream(seed, Purpose::Sequence, sequence_id, 0);
        let elements: Vec<usize> = (0..length).map(|_| rng.random_range(0..GROUP_ORDER)).collect();
        let net = self.compose(&elements);
        SampledSequence { elements, net }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledSequence {
    /// Canonical indices in time order.
    pub elements: Vec<usize>,
    pub net: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group() -> &'static CliffordGroup {
        CliffordGroup::shared()
    }

    #[test]
    fn brute_force_closure_has_24_elements() {
        // Independent of the BFS: multiply all products of up to 6 generators.
        let gens = [Generator::Z.matrix(), Generator::X.matrix()];
        let mut found = vec![CMatrix::identity(2, 2)];
        let mut frontier = found.clone();
        for _ in 0..6 {
            let mut next = Vec::new();
            for m in &frontier {
                for g in &gens {
                    let p = g * m;
                    if find_match(&found, &p).is_none() {
                        found.push(p.clone());
                        next.push(p);
                    }
                }
            }
            frontier = next;
        }
        assert_eq!(found.len(), 24);
        assert_eq!(generate_clifford_group().len(), 24);
    }

    #[test]
    fn canonical_order() {
        let els = generate_clifford_group();
        assert!(els[0].word.is_empty());
        assert_eq!(els[1].word, vec![Generator::Z]);
        assert_eq!(els[2].word, vec![Generator::X]);
        for w in els.windows(2) {
            assert!(w[0].word.len() <= w[1].word.len());
        }
        for e in &els {
            let det = e.matrix[(0, 0)] * e.matrix[(1, 1)] - e.matrix[(0, 1)] * e.matrix[(1, 0)];
            assert!((det.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compile_identity_and_z_quarter() {
        assert!(compile_clifford(&CMatrix::identity(2, 2)).unwrap().is_empty());
        let pulses = compile_clifford(&Generator::Z.matrix()).unwrap();
        assert_eq!(pulses.len(), 1);
        assert_eq!(pulses[0].pair, Pair::P12);
        assert!((pulses[0].theta - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn every_element_recomposes() {
        let g = group();
        for e in g.elements() {
            assert!(e.pulses.len() <= MAX_PULSES);
            for p in &e.pulses {
                assert!((0.0..TAU).contains(&p.theta));
            }
            let d = pulse_distance(&e.matrix, &e.pulses);
            assert!(d <= COMPILE_TOL, "element {} distance {d}", e.index);
        }
    }

    #[test]
    fn compilation_is_deterministic() {
        let a = CliffordGroup::build().unwrap();
        let b = CliffordGroup::build().unwrap();
        assert_eq!(a.total_pulse_count(), b.total_pulse_count());
        for (x, y) in a.elements().iter().zip(b.elements()) {
            assert_eq!(x.pulses, y.pulses);
        }
    }

    #[test]
    fn group_axioms() {
        let g = group();
        for a in 0..24 {
            assert_eq!(g.multiply(0, a), a);
            assert_eq!(g.multiply(a, 0), a);
            assert_eq!(g.inverse(g.inverse(a)), a);
            assert_eq!(g.multiply(a, g.inverse(a)), 0);
        }
        // Latin square.
        for a in 0..24 {
            let mut row: Vec<usize> = (0..24).map(|b| g.multiply(a, b)).collect();
            let mut col: Vec<usize> = (0..24).map(|b| g.multiply(b, a)).collect();
            row.sort();
            col.sort();
            assert_eq!(row, (0..24).collect::<Vec<_>>());
            assert_eq!(col, (0..24).collect::<Vec<_>>());
        }
        let mut rng = stream(99, Purpose::Synthetic, 0, 0);
        for _ in 0..1000 {
            let (a, b, c) = (
                rng.random_range(0..24),
                rng.random_range(0..24),
                rng.random_range(0..24),
            );
            assert_eq!(g.multiply(g.multiply(a, b), c), g.multiply(a, g.multiply(b, c)));
        }
    }

    #[test]
    fn x_element() {
        let g = group();
        let x = g.element(g.x());
        let want = encoded_rotation([1.0, 0.0, 0.0], PI);
        assert!(phase_invariant_distance(&x.matrix, &want).unwrap() < 1e-12);
        assert_eq!(g.multiply(g.x(), g.x()), 0);
    }

    #[test]
    fn sampling() {
        let g = group();
        let empty = g.sample_sequence(0, 5, 1);
        assert!(empty.elements.is_empty());
        assert_eq!(empty.net, 0);
        assert_eq!(g.sample_sequence(17, 5, 3), g.sample_sequence(17, 5, 3));
        assert_ne!(g.sample_sequence(17, 5, 3), g.sample_sequence(17, 5, 4));

        let s = g.sample_sequence(24_000, 11, 0);
        let mut counts = [0usize; 24];
        for &c in &s.elements {
            counts[c] += 1;
        }
        let n: f64 = 24_000.0;
        let p = 1.0 / 24.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - n * p).abs() < 5.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - n * p).powi(2) / (n * p)).sum();
        // 23 dof; 5σ above the mean of a χ² with 23 dof.
        assert!(chi2 < 23.0 + 5.0 * (46.0f64).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn net_element_matches_matrix_product() {
        let g = group();
        let s = g.sample_sequence(30, 2, 9);
        let product = s
            .elements
            .iter()
            .fold(CMatrix::identity(2, 2), |acc, &c| &g.element(c).matrix * acc);
        assert!(phase_invariant_distance(&product, &g.element(s.net).matrix).unwrap() < 1e-9);
    }
}
