//! Desk-scale laboratory for physics-inspired MU-MIMO detection.
//!
//! The pipeline: [`model`] generates detection instances (channels, noise,
//! transmitted symbols), [`ising`] turns maximum-likelihood detection into
//! Ising spin models, [`pt`] solves them with a seeded parallel-tempering
//! engine, [`ensemble`] orchestrates the parallel detector strategies, and
//! [`linear`] / [`oracle`] provide the MMSE/ZF and brute-force/FSD baselines
//! everything is measured against via [`metrics`].

pub mod ensemble;
pub mod ising;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pt;
pub mod rng;

pub use ensemble::{detect, DetectionResult, DetectorConfig, Strategy};
pub use ising::{build_ml_ising, energy, IsingModel, SpinMapping, SpinState};
pub use linear::{detect_mmse, detect_zf, LinearSolution};
pub use model::{generate_instance, ChannelSpec, Constellation, DetectionInstance, Modulation};
pub use oracle::{brute_force_ml, fsd_detect, FsdPlan};
pub use pt::{pt_solve, PtConfig, PtInit, SampleSet};
