//! Simulation and analysis stack for an encoded exchange-only triple-dot
//! qubit: DFS encoding, Clifford compilation into exchange pulses, blind
//! randomized benchmarking under quasistatic hyperfine and systematic
//! noise, and decay fitting.

pub mod blind_rb;
pub mod bootstrap;
pub mod calibration;
pub mod clifford;
pub mod config;
pub mod encoding;
pub mod fitting;
pub mod hilbert;
pub mod io;
pub mod noise;
pub mod rng;
