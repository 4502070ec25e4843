//! MU-MIMO detection instances: constellations, channels, noise, and the
//! received signal `y = H v + n`.

mod constellation;
mod trace;

pub use constellation::{Constellation, Modulation};
pub use trace::{load_channel_trace, ChannelTrace};

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ising::SpinMapping;
use crate::rng::{stream_rng, Fnv1a};

const STREAM_CHANNEL: u64 = 0x48; // 'H'
const STREAM_SYMBOLS: u64 = 0x56; // 'V'
const STREAM_NOISE: u64 = 0x4e; // 'N'

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read channel trace {path}: {source}")]
    TraceIo {
        path: String,
        source: std::io::Error,
    },
    #[error("channel trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("channel trace is {found_r}x{found_t} but {want_r}x{want_t} was requested")]
    TraceDimensionMismatch {
        want_r: usize,
        want_t: usize,
        found_r: usize,
        found_t: usize,
    },
    #[error("channel trace contains no records")]
    TraceEmpty,
    #[error("invalid MIMO dimensions: n_t={n_t}, n_r={n_r} (need n_r >= n_t >= 1)")]
    InvalidDimensions { n_t: usize, n_r: usize },
    #[error("invalid SNR: {0} dB")]
    InvalidSnr(f64),
}

/// How channel matrices are produced. `rng_seed` identifies the channel
/// realization; instances sharing a spec share the channel (one coherence
/// block), while the per-instance seed drives symbols and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelKind {
    /// Entries i.i.d. complex Gaussian, zero mean, unit variance
    /// (real/imaginary parts each variance 0.5).
    IidGaussian,
    /// Matrices read from a trace file; the spec seed selects the record.
    TraceFile(PathBuf),
}

impl ChannelSpec {
    pub fn iid_gaussian(rng_seed: u64) -> Self {
        ChannelSpec {
            kind: ChannelKind::IidGaussian,
            rng_seed,
        }
    }
}

/// One detection problem: everything the receiver sees plus the ground
/// truth needed for scoring.
#[derive(Clone, Debug)]
pub struct DetectionInstance {
    pub n_t: usize,
    pub n_r: usize,
    pub constellation: Constellation,
    pub h: DMatrix<Complex64>,
    pub y: DVector<Complex64>,
    pub v_true: Vec<Complex64>,
    pub bits_true: Vec<u8>,
    pub snr_db: f64,
    /// Complex noise variance per receive antenna (linear scale).
    pub sigma2: f64,
    /// Ground-truth noise realization, retained so tests can reconstruct
    /// `y = H v + n` exactly.
    pub noise: DVector<Complex64>,
    digest: u64,
}

impl DetectionInstance {
    /// Euclidean residual `||y - H v||^2` of a candidate symbol vector.
    pub fn residual(&self, v: &[Complex64]) -> f64 {
        debug_assert_eq!(v.len(), self.n_t);
        let hv = &self.h * DVector::from_column_slice(v);
        (&self.y - hv).norm_squared()
    }

    /// Per-receive-antenna linear SNR, `n_t * E_s / sigma2`.
    pub fn snr_linear(&self) -> f64 {
        if self.sigma2 == 0.0 {
            f64::INFINITY
        } else {
            self.n_t as f64 * self.constellation.mean_energy() / self.sigma2
        }
    }

    pub fn spin_mapping(&self) -> SpinMapping {
        SpinMapping::new(self.n_t, self.constellation.clone())
    }

    /// Stable content digest; identical instances hash identically across
    /// runs and processes.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    fn compute_digest(&mut self) {
        let mut h = Fnv1a::new();
        h.write_u64(self.n_t as u64);
        h.write_u64(self.n_r as u64);
        h.write(self.constellation.modulation().name().as_bytes());
        h.write_f64(self.snr_db);
        h.write_f64(self.sigma2);
        for c in self.h.iter() {
            h.write_f64(c.re);
            h.write_f64(c.im);
        }
        for c in self.y.iter() {
            h.write_f64(c.re);
            h.write_f64(c.im);
        }
        for c in &self.v_true {
            h.write_f64(c.re);
            h.write_f64(c.im);
        }
        self.digest = h.finish();
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, component_var: f64) -> Complex64 {
    let sd = component_var.sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

fn draw_channel(
    spec: &ChannelSpec,
    n_t: usize,
    n_r: usize,
) -> Result<DMatrix<Complex64>, ModelError> {
    match &spec.kind {
        ChannelKind::IidGaussian => {
            let mut rng = stream_rng(spec.rng_seed, &[STREAM_CHANNEL]);
            Ok(DMatrix::from_fn(n_r, n_t, |_, _| {
                complex_gaussian(&mut rng, 0.5)
            }))
        }
        ChannelKind::TraceFile(path) => {
            let trace = load_channel_trace(path)?;
            if trace.is_empty() {
                return Err(ModelError::TraceEmpty);
            }
            if trace.n_r != n_r || trace.n_t != n_t {
                return Err(ModelError::TraceDimensionMismatch {
                    want_r: n_r,
                    want_t: n_t,
                    found_r: trace.n_r,
                    found_t: trace.n_t,
                });
            }
            let idx = (spec.rng_seed % trace.len() as u64) as usize;
            Ok(trace.matrices()[idx].clone())
        }
    }
}

/// Generate one detection instance. Pure in its arguments: the same inputs
/// always reproduce the same instance bit for bit.
///
/// `snr_db = +inf` is the zero-noise case (`sigma2 = 0`).
pub fn generate_instance(
    spec: &ChannelSpec,
    n_t: usize,
    n_r: usize,
    modulation: Modulation,
    snr_db: f64,
    rng_seed: u64,
) -> Result<DetectionInstance, ModelError> {
    if n_t == 0 || n_r < n_t {
        return Err(ModelError::InvalidDimensions { n_t, n_r });
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(ModelError::InvalidSnr(snr_db));
    }

    let constellation = Constellation::new(modulation);
    let h = draw_channel(spec, n_t, n_r)?;

    let sigma2 = if snr_db.is_infinite() {
        0.0
    } else {
        n_t as f64 * constellation.mean_energy() / 10f64.powf(snr_db / 10.0)
    };

    let mut sym_rng = stream_rng(rng_seed, &[STREAM_SYMBOLS]);
    let v_true: Vec<Complex64> = (0..n_t)
        .map(|_| constellation.points()[sym_rng.gen_range(0..constellation.order())])
        .collect();

    let mut noise_rng = stream_rng(rng_seed, &[STREAM_NOISE]);
    let noise = DVector::from_fn(n_r, |_, _| {
        if sigma2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            complex_gaussian(&mut noise_rng, sigma2 / 2.0)
        }
    });

    let y = &h * DVector::from_column_slice(&v_true) + &noise;

    let mapping = SpinMapping::new(n_t, constellation.clone());
    let bits_true = mapping.symbols_to_bits(&v_true);

    let mut inst = DetectionInstance {
        n_t,
        n_r,
        constellation,
        h,
        y,
        v_true,
        bits_true,
        snr_db,
        sigma2,
        noise,
        digest: 0,
    };
    inst.compute_digest();
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_noise_reconstructs_exactly() {
        let spec = ChannelSpec::iid_gaussian(3);
        let inst =
            generate_instance(&spec, 2, 2, Modulation::Qpsk, f64::INFINITY, 11).unwrap();
        assert_eq!(inst.sigma2, 0.0);
        let hv = &inst.h * DVector::from_column_slice(&inst.v_true);
        assert_eq!(inst.y, hv);
        assert_eq!(inst.residual(&inst.v_true), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ChannelSpec::iid_gaussian(9);
        let a = generate_instance(&spec, 3, 4, Modulation::Qam16, 18.0, 77).unwrap();
        let b = generate_instance(&spec, 3, 4, Modulation::Qam16, 18.0, 77).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.y, b.y);
        assert_eq!(a.v_true, b.v_true);
        assert_eq!(a.bits_true, b.bits_true);
        assert_eq!(a.digest(), b.digest());
        let c = generate_instance(&spec, 3, 4, Modulation::Qam16, 18.0, 78).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn instance_reconstructs_y_from_parts() {
        let spec = ChannelSpec::iid_gaussian(4);
        let inst = generate_instance(&spec, 4, 6, Modulation::Qam16, 20.0, 5).unwrap();
        let hv = &inst.h * DVector::from_column_slice(&inst.v_true);
        let resid = (&inst.y - hv - &inst.noise).norm_squared();
        assert_relative_eq!(resid, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn channel_moments_match_unit_variance() {
        // Monte Carlo moment check against the CN(0,1) entry law.
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..10_000u64 {
            let spec = ChannelSpec::iid_gaussian(seed);
            let inst = generate_instance(&spec, 4, 6, Modulation::Qam16, 20.0, seed).unwrap();
            acc += inst.h.iter().map(|c| c.norm_sqr()).sum::<f64>();
            count += inst.h.len();
        }
        let mean = acc / count as f64;
        assert!((mean - 1.0).abs() < 0.02, "E|H_ij|^2 = {mean}");
    }

    #[test]
    fn sigma2_follows_snr_definition() {
        let spec = ChannelSpec::iid_gaussian(1);
        let inst = generate_instance(&spec, 4, 4, Modulation::Qam16, 20.0, 1).unwrap();
        // n_t * E_s / 10^(20/10) = 4 * 10 / 100
        assert_relative_eq!(inst.sigma2, 0.4);
        assert_relative_eq!(inst.snr_linear(), 100.0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let spec = ChannelSpec::iid_gaussian(0);
        assert!(generate_instance(&spec, 4, 2, Modulation::Qpsk, 10.0, 0).is_err());
        assert!(generate_instance(&spec, 0, 2, Modulation::Qpsk, 10.0, 0).is_err());
        assert!(generate_instance(&spec, 2, 2, Modulation::Qpsk, f64::NAN, 0).is_err());
    }

    #[test]
    fn trace_channel_roundtrip() {
        let dir = std::env::temp_dir().join("spindetect-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.txt");
        std::fs::write(&path, "2 2 2\n1,0 0,0 0,0 1,0\n2,0 0,0 0,0 2,0\n").unwrap();
        let spec = ChannelSpec {
            kind: ChannelKind::TraceFile(path.clone()),
            rng_seed: 1, // second record
        };
        let inst = generate_instance(&spec, 2, 2, Modulation::Bpsk, 30.0, 4).unwrap();
        assert_eq!(inst.h[(0, 0)], Complex64::new(2.0, 0.0));
        let bad = ChannelSpec {
            kind: ChannelKind::TraceFile(path),
            rng_seed: 0,
        };
        assert!(matches!(
            generate_instance(&bad, 3, 3, Modulation::Bpsk, 30.0, 4),
            Err(ModelError::TraceDimensionMismatch { .. })
        ));
    }
}
