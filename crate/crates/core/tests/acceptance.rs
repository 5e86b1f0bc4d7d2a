//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run alone with `cargo test -p eoq-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use eoq_core::blind_rb::{run_experiment, ExperimentConfig, MeasurementMode, RbDataset, Record, Variant};
use eoq_core::bootstrap::bootstrap_ci;
use eoq_core::calibration::error_vs_overrotation;
use eoq_core::clifford::{pulse_distance, CliffordGroup, GROUP_ORDER};
use eoq_core::encoding::{dfs_basis, encoded_bloch};
use eoq_core::fitting::{fit_blind_rb, fit_decay, BlindFitOptions, DecayForm, DecayParams};
use eoq_core::hilbert::{
    exchange_unitary, expm_hermitian, heisenberg_coupling, max_abs_diff, zeeman_unitary, CVector, Field, Pair, C64,
};
use eoq_core::io::dataset_to_csv_bytes;
use eoq_core::noise::{NoiseModel, Overrotation, Redraw};
use eoq_core::rng::{stream, Purpose};

const COMPILE_TOL: f64 = 1e-9;
const EXCHANGE_TOL: f64 = 1e-12;
const DFS_TOL: f64 = 1e-9;
const NOISELESS_TOL: f64 = 1e-9;
const FIT_RECOVERY_TOL: f64 = 1e-6;
const JACOBIAN_REL_TOL: f64 = 1e-6;
const SLOPE_TARGET: f64 = 2.0;
const SLOPE_TOL: f64 = 0.2;
/// 68% ± 5σ of a binomial over 200 trials: 136 ± 5·√(200·0.68·0.32).
const COVERAGE_TRIALS: usize = 200;
const COVERAGE_BAND: (usize, usize) = (103, 169);

/// `{2, 4, 8, …, 128}`
fn doubling_lengths() -> Vec<usize> {
    (1..=7).map(|k| 1usize << k).collect()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn group_and_compilation() -> Outcome {
    let start = Instant::now();
    let group = CliffordGroup::build().expect("group builds");
    let worst = group
        .elements()
        .iter()
        .map(|e| pulse_distance(&e.matrix, &e.pulses))
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let n = group.elements().len();
    check(
        n == GROUP_ORDER && worst <= COMPILE_TOL && within(elapsed, 10),
        format!("{n} elements, worst distance {worst:.2e}, {elapsed:.2?}"),
    )
}

fn exchange_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(1, Purpose::Synthetic, 2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pair = if rng.random::<bool>() { Pair::P12 } else { Pair::P23 };
        let theta = rng.random_range(-4.0 * std::f64::consts::PI..4.0 * std::f64::consts::PI);
        let (i, j) = pair.dots();
        let closed = exchange_unitary(i, j, theta).unwrap();
        let eig = expm_hermitian(&heisenberg_coupling(i, j).unwrap(), theta);
        worst = worst.max(max_abs_diff(&closed, &eig));
    }
    let elapsed = start.elapsed();
    check(
        worst <= EXCHANGE_TOL && within(elapsed, 1),
        format!("max |closed - eig| {worst:.2e} over 100 draws, {elapsed:.2?}"),
    )
}

fn random_dfs_state(rng: &mut impl Rng) -> CVector {
    let basis = dfs_basis();
    let mut psi = CVector::zeros(8);
    for s in &basis.qubit_states {
        let z = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        psi += s * z;
    }
    let n = psi.norm();
    psi / C64::new(n, 0.0)
}

fn dfs_invariance() -> Outcome {
    let basis = dfs_basis();
    let mut rng = stream(1, Purpose::Synthetic, 3, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let psi = random_dfs_state(&mut rng);
        let magnitude = 10f64.powf(rng.random_range(-3.0..2.0));
        let dir = Field::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let b = dir.normalize() * magnitude;
        let t = rng.random_range(0.0..50.0);
        let u = zeeman_unitary(&[b; 3], t).unwrap();
        let out = &u * &psi;
        let dbloch = (encoded_bloch(basis, &out) - encoded_bloch(basis, &psi)).amax();
        let dpsb = (eoq_core::blind_rb::psb_measure(&out) - eoq_core::blind_rb::psb_measure(&psi)).abs();
        worst = worst.max(dbloch).max(dpsb);
    }
    check(worst <= DFS_TOL, format!("max change {worst:.2e} over 100 states"))
}

fn leakage_conservation() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::new(doubling_lengths(), 50, 1, 4).with_noise(NoiseModel {
        overrotation: Overrotation::uniform(0.05),
        ..NoiseModel::default()
    });
    let data = run_experiment(&config, CliffordGroup::shared()).unwrap();
    let fit = fit_blind_rb(&data, &BlindFitOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let lambda_s = fit.s_fit.params.lambda;
    let sigma_s = fit.s_fit.sigma_lambda();
    let r = fit.error_per_clifford;
    let leak_ok = (1.0 - lambda_s).abs() <= 3.0 * sigma_s;
    let r_ok = r.value > 5.0 * r.sigma;
    check(
        leak_ok && r_ok && within(elapsed, 120),
        format!(
            "lambda_S = {lambda_s:.6} +/- {sigma_s:.1e} ({:.1} sigma from 1), r = {:.3e} +/- {:.1e} ({:.0} sigma), {elapsed:.2?}",
            (1.0 - lambda_s).abs() / sigma_s,
            r.value,
            r.sigma,
            r.value / r.sigma
        ),
    )
}

fn overrotation_scaling() -> Outcome {
    let start = Instant::now();
    let base = ExperimentConfig::new(doubling_lengths(), 200, 1, 5);
    let sweep = error_vs_overrotation(
        &[0.01, 0.02, 0.04, 0.08],
        &base,
        CliffordGroup::shared(),
        &BlindFitOptions::default(),
        0,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let slope = sweep.slope.unwrap_or(f64::NAN);
    let rs: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("{:.3e}", r.error_per_clifford.value))
        .collect();
    check(
        (slope - SLOPE_TARGET).abs() <= SLOPE_TOL && within(elapsed, 600),
        format!("slope {slope:.3}, r = [{}], {elapsed:.2?}", rs.join(", ")),
    )
}

fn hyperfine_leakage() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut previous = 0.0;
    for sigma_b in [0.005, 0.01, 0.02] {
        let config = ExperimentConfig::new(doubling_lengths(), 20, 20, 6).with_noise(NoiseModel {
            sigma_b,
            redraw: Redraw::PerShot,
            ..NoiseModel::default()
        });
        let data = run_experiment(&config, CliffordGroup::shared()).unwrap();
        let fit = fit_blind_rb(&data, &BlindFitOptions::default()).unwrap();
        let l = fit.leakage_per_clifford;
        pass &= l.value > 3.0 * l.sigma && l.value > previous;
        previous = l.value;
        parts.push(format!("sigma_b {sigma_b}: {:.2e} +/- {:.1e}", l.value, l.sigma));
    }
    let elapsed = start.elapsed();
    check(
        pass && within(elapsed, 600),
        format!("{}, {elapsed:.2?}", parts.join("; ")),
    )
}

fn noiseless_identity() -> Outcome {
    let config = ExperimentConfig::new(doubling_lengths(), 10, 1, 7);
    let data = run_experiment(&config, CliffordGroup::shared()).unwrap();
    let worst = data
        .signals()
        .iter()
        .map(|s| (s.d - 1.0).abs().max((s.s - 1.0).abs()))
        .fold(0.0, f64::max);
    check(worst <= NOISELESS_TOL, format!("max |D-1|, |S-1| = {worst:.2e}"))
}

/// Per-sequence blind pairs around `D = 0.9·λ^m`, `S = 0.5 + 0.5·0.995^m`.
fn synthetic_dataset(lambda: f64, noise: f64, seed: u64) -> RbDataset {
    let mut rng = stream(seed, Purpose::Synthetic, 8, 0);
    let mut records = Vec::new();
    let mut id = 0;
    for m in [1usize, 4, 16, 32, 64, 128] {
        let d = 0.9 * lambda.powi(m as i32);
        let s = 0.5 + 0.5 * 0.995f64.powi(m as i32);
        for _ in 0..20 {
            let e_d: f64 = rng.sample(StandardNormal);
            let e_s: f64 = rng.sample(StandardNormal);
            let (dd, ss) = (d + noise * e_d, s + noise * e_s);
            for (variant, p) in [(Variant::Expect0, (ss + dd) / 2.0), (Variant::Expect1, (ss - dd) / 2.0)] {
                records.push(Record {
                    m,
                    sequence_id: id,
                    variant,
                    p_singlet: p.clamp(0.0, 1.0),
                    shots: 1,
                });
            }
            id += 1;
        }
    }
    RbDataset::new(records)
}

fn fit_correctness() -> Outcome {
    // Noiseless recovery.
    let m: Vec<f64> = (1..=200).map(f64::from).collect();
    let mut recovery: f64 = 0.0;
    for (a, b, lambda) in [(0.5, 0.5, 0.99), (0.25, 0.7, 0.95), (0.9, -0.4, 0.999)] {
        let y: Vec<f64> = m.iter().map(|&k| a + b * f64::powf(lambda, k)).collect();
        let fit = fit_decay(&m, &y, DecayForm::OffsetExponential, None).unwrap();
        let p = fit.params;
        recovery = recovery
            .max((p.a - a).abs())
            .max((p.b - b).abs())
            .max((p.lambda - lambda).abs());
    }

    // Bootstrap coverage of λ_D.
    let truth = 0.98;
    let covered = (0..COVERAGE_TRIALS as u64)
        .filter(|&t| {
            let data = synthetic_dataset(truth, 0.03, 1000 + t);
            let ci = bootstrap_ci(&data, 200, t, &BlindFitOptions::default()).unwrap();
            ci.lambda_d.contains(truth)
        })
        .count();

    // Analytic Jacobian against Richardson-extrapolated central differences.
    let mut rng = stream(8, Purpose::Synthetic, 9, 0);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let p = DecayParams {
            a: rng.random_range(-1.0..1.0),
            b: rng.random_range(0.1..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 },
            lambda: rng.random_range(0.9..1.0),
        };
        let mk: f64 = rng.random_range(1.0..100.0);
        for form in [DecayForm::PureExponential, DecayForm::OffsetExponential] {
            let packed = form.pack(&p);
            for (c, &g) in form.jacobian_row(&p, mk).iter().enumerate() {
                let central = |h: f64| {
                    let (mut up, mut dn) = (packed.clone(), packed.clone());
                    up[c] += h;
                    dn[c] -= h;
                    (form.evaluate(&form.unpack(&up), mk) - form.evaluate(&form.unpack(&dn), mk)) / (2.0 * h)
                };
                let h = if c + 1 == packed.len() { 1e-4 } else { 0.1 };
                let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
                worst_rel = worst_rel.max((fd - g).abs() / g.abs().max(1e-12));
            }
        }
    }

    let (lo, hi) = COVERAGE_BAND;
    check(
        recovery <= FIT_RECOVERY_TOL && (lo..=hi).contains(&covered) && worst_rel <= JACOBIAN_REL_TOL,
        format!(
            "recovery error {recovery:.2e}, coverage {covered}/{COVERAGE_TRIALS} (band {lo}..={hi}), Jacobian rel error {worst_rel:.2e}"
        ),
    )
}

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::new(vec![1, 3, 9, 27], 6, 8, 10).with_noise(NoiseModel {
        sigma_b: 0.02,
        overrotation: Overrotation { p12: 0.01, p23: -0.02 },
        charge_jitter: 0.01,
        ..NoiseModel::default()
    });
    config.measurement_mode = MeasurementMode::Sampled;
    let bytes: Vec<Vec<u8>> = [1, 4, 16]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| dataset_to_csv_bytes(&run_experiment(&config, CliffordGroup::shared()).unwrap()))
        })
        .collect();
    let same = bytes.windows(2).all(|w| w[0] == w[1]);
    check(
        same,
        format!("{} CSV bytes at 1, 4 and 16 threads, identical: {same}", bytes[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("group and compilation", group_and_compilation),
        ("exchange unitary oracle", exchange_oracle),
        ("DFS invariance under uniform fields", dfs_invariance),
        ("leakage conservation under exchange", leakage_conservation),
        ("overrotation scaling", overrotation_scaling),
        ("hyperfine leakage", hyperfine_leakage),
        ("noiseless protocol identity", noiseless_identity),
        ("fit correctness", fit_correctness),
        ("determinism across thread counts", determinism),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag}  {name}: {}", k + 1, outcome.detail);
        failures += usize::from(!outcome.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
