//! Evaluation mathematics: BER, time-to-solution, optimum probability,
//! ML occurrence, packet success, compute-budget accounting, and the
//! split-detection noise diagnostics.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DetectionInstance;
use crate::pt::SampleSet;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("bit vectors have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("anneal duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("bit stream of {have} bits is shorter than one {need}-bit packet")]
    StreamTooShort { have: usize, need: usize },
    #[error("invalid anneal schedule: {0}")]
    InvalidSchedule(String),
    #[error("split diagnostics need 16-QAM data, got {0}")]
    NotSquareSplit(String),
    #[error("effective-noise analysis needs square (n_t = n_r) instances")]
    NotSquareMimo,
    #[error("no data")]
    Empty,
}

/// Hamming error count over paired bit vectors: `(errors, total, rate)`.
pub fn ber(bits_true: &[u8], bits_detected: &[u8]) -> Result<(u64, u64, f64), MetricsError> {
    if bits_true.len() != bits_detected.len() {
        return Err(MetricsError::LengthMismatch {
            a: bits_true.len(),
            b: bits_detected.len(),
        });
    }
    let errors = bits_true
        .iter()
        .zip(bits_detected)
        .filter(|(a, b)| a != b)
        .count() as u64;
    let total = bits_true.len() as u64;
    Ok((errors, total, errors as f64 / total as f64))
}

/// Time to find the optimum with 99% confidence:
/// `TTS(99%) = T_a * log(1 - 0.99) / log(1 - p_g)`, with the run count
/// clamped to at least one. `p_g = 0` yields infinity.
pub fn tts(p_g: f64, t_a_us: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&p_g) {
        return Err(MetricsError::InvalidProbability(p_g));
    }
    if !(t_a_us > 0.0) {
        return Err(MetricsError::InvalidDuration(t_a_us));
    }
    if p_g == 0.0 {
        return Ok(f64::INFINITY);
    }
    let runs = (1.0 - 0.99f64).ln() / (1.0 - p_g).ln();
    Ok(t_a_us * runs.max(1.0))
}

/// Probability that at least one of `count` independent samples hits the
/// optimum: `1 - (1 - p_g)^count`.
pub fn optimum_probability(p_g: f64, count: u64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&p_g) {
        return Err(MetricsError::InvalidProbability(p_g));
    }
    Ok(1.0 - (1.0 - p_g).powf(count as f64))
}

/// Count samples whose energy is within `tol` of the ML energy.
pub fn ml_occurrence<'a>(
    pools: impl IntoIterator<Item = &'a SampleSet>,
    ml_energy: f64,
    tol: f64,
) -> (u64, u64) {
    let mut hits = 0;
    let mut total = 0;
    for pool in pools {
        for (_, e) in &pool.samples {
            total += 1;
            if (e - ml_energy).abs() <= tol {
                hits += 1;
            }
        }
    }
    (hits, total)
}

/// Per-packet error counts over one user's bit-error stream: non-overlapping
/// `packet_bits` windows, partial trailing window discarded.
pub fn packet_counts(
    bit_errors: &[bool],
    packet_bits: usize,
) -> Result<(u64, u64), MetricsError> {
    if bit_errors.len() < packet_bits || packet_bits == 0 {
        return Err(MetricsError::StreamTooShort {
            have: bit_errors.len(),
            need: packet_bits,
        });
    }
    let mut ok = 0;
    let mut total = 0;
    for window in bit_errors.chunks_exact(packet_bits) {
        total += 1;
        if !window.iter().any(|&e| e) {
            ok += 1;
        }
    }
    Ok((ok, total))
}

/// Fraction of packets (non-overlapping windows) with zero bit errors.
pub fn packet_success_rate(
    bit_errors: &[bool],
    packet_bits: usize,
) -> Result<f64, MetricsError> {
    let (ok, total) = packet_counts(bit_errors, packet_bits)?;
    Ok(ok as f64 / total as f64)
}

/// An annealer control schedule: `(time us, tau)` points. Only the total
/// duration matters for compute accounting; the shape is kept as data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealSchedule {
    points: Vec<(f64, f64)>,
}

impl AnnealSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        if points.len() < 2 {
            return Err(MetricsError::InvalidSchedule("need at least two points".into()));
        }
        if points[0].0 != 0.0 {
            return Err(MetricsError::InvalidSchedule("must start at time 0".into()));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(MetricsError::InvalidSchedule(
                "times must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|&(_, tau)| !(0.0..=1.0).contains(&tau)) {
            return Err(MetricsError::InvalidSchedule("tau must lie in [0, 1]".into()));
        }
        Ok(AnnealSchedule { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Total anneal duration `T_a` in microseconds.
    pub fn total_us(&self) -> f64 {
        self.points.last().expect("validated nonempty").0
    }

    /// Duration in integer nanoseconds (instrument resolution); keeps budget
    /// accounting exact for decimal durations like 2.2 us.
    pub fn total_ns(&self) -> u64 {
        (self.total_us() * 1e3).round() as u64
    }

    /// Switching point: the tau held constant during the pause, if any.
    pub fn tau_p(&self) -> Option<f64> {
        self.points
            .windows(2)
            .find(|w| w[0].1 == w[1].1)
            .map(|w| w[0].1)
    }

    /// Total time spent paused (tau constant).
    pub fn pause_us(&self) -> f64 {
        self.points
            .windows(2)
            .filter(|w| w[0].1 == w[1].1)
            .map(|w| w[1].0 - w[0].0)
            .sum()
    }

    /// Reverse-anneal schedule with a 1 us pause at tau_p = 0.4 (T_a = 2.2 us).
    pub fn xresq() -> Self {
        AnnealSchedule::new(vec![(0.0, 1.0), (0.6, 0.4), (1.6, 0.4), (2.2, 1.0)])
            .expect("built-in schedule is valid")
    }

    /// Forward-anneal schedule with a 1 us pause at tau_p = 0.3 (T_a = 2.0 us).
    pub fn quamax() -> Self {
        AnnealSchedule::new(vec![(0.0, 0.0), (0.3, 0.3), (1.3, 0.3), (2.0, 1.0)])
            .expect("built-in schedule is valid")
    }
}

/// Anneal-count compute budget: `n_a * T_a` microseconds, computed in
/// integer nanoseconds so decimal durations stay exact.
pub fn compute_budget(schedule: &AnnealSchedule, n_a: u64) -> f64 {
    (n_a * schedule.total_ns()) as f64 / 1e3
}

/// One detector's layer decision versus the oracle's, per user symbol.
#[derive(Clone, Debug)]
pub struct SplitDeltaItem {
    pub v_mmse: Vec<Complex64>,
    pub v_ml: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SplitDeltaStats {
    pub symbols: u64,
    pub p_quadrant_wrong: f64,
    pub p_position_wrong: f64,
    pub p_both_wrong: f64,
}

/// Empirical probabilities of the MMSE solution disagreeing with the ML
/// solution on the quadrant layer, the position layer, or both (16-QAM).
pub fn split_delta_stats(
    constellation: &crate::model::Constellation,
    items: &[SplitDeltaItem],
) -> Result<SplitDeltaStats, MetricsError> {
    if constellation.qpsk_layers() != 2 {
        return Err(MetricsError::NotSquareSplit(
            constellation.modulation().to_string(),
        ));
    }
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut symbols = 0u64;
    let mut quad = 0u64;
    let mut pos = 0u64;
    let mut both = 0u64;
    for item in items {
        for (&m, &ml) in item.v_mmse.iter().zip(&item.v_ml) {
            let lm = constellation.layers_of(constellation.slice(m).1);
            let lo = constellation.layers_of(ml);
            let quadrant_wrong = lm[0] != lo[0];
            let position_wrong = lm[1] != lo[1];
            symbols += 1;
            quad += u64::from(quadrant_wrong);
            pos += u64::from(position_wrong);
            both += u64::from(quadrant_wrong && position_wrong);
        }
    }
    Ok(SplitDeltaStats {
        symbols,
        p_quadrant_wrong: quad as f64 / symbols as f64,
        p_position_wrong: pos as f64 / symbols as f64,
        p_both_wrong: both as f64 / symbols as f64,
    })
}

/// Monte Carlo effective-noise diagnostics for split detection on an
/// `N x N` 16-QAM system at one SNR.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EffectiveNoiseReport {
    pub count: u64,
    /// Total noise energy `E||n||^2 = n_r * sigma2` (analytic).
    pub sigma2_total: f64,
    /// MC mean of `0.25 ||n + H delta||^2` (quadrant-decode effective noise).
    pub effective_noise: f64,
    /// Standard error of the MC mean.
    pub effective_noise_se: f64,
    /// MC mean of `||H delta||^2`.
    pub mean_h_delta_sq: f64,
    /// Cauchy-Schwarz bound `0.25 (s^2 + E||Hd||^2 + 2 s sqrt(E||Hd||^2))`.
    pub bound: f64,
    /// Quadrant-first alternative that treats the position layer as noise:
    /// `0.25 (sigma^2 + 2 N^2)`.
    pub naive_quadrant_first: f64,
    /// Position-first alternative: `sigma^2 + 8 N^2`.
    pub naive_position_first: f64,
    /// Bound holds up to 3x the MC standard error.
    pub bound_satisfied: bool,
}

/// Compare the split-detection effective noise against its analytic bound
/// and the naive layer-as-noise alternatives. Items pair an instance with
/// the hard MMSE symbol vector used for cancellation.
pub fn effective_noise_check(
    items: &[(&DetectionInstance, &[Complex64])],
) -> Result<EffectiveNoiseReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Empty);
    }
    let first = items[0].0;
    if first.constellation.qpsk_layers() != 2 {
        return Err(MetricsError::NotSquareSplit(
            first.constellation.modulation().to_string(),
        ));
    }
    if first.n_t != first.n_r {
        return Err(MetricsError::NotSquareMimo);
    }
    let n = first.n_t;
    let sigma2_total = first.n_r as f64 * first.sigma2;

    let mut samples = Vec::with_capacity(items.len());
    let mut h_delta_acc = 0.0;
    for &(inst, v_mmse) in items {
        if inst.n_t != n || inst.n_r != n || inst.sigma2 != first.sigma2 {
            return Err(MetricsError::NotSquareMimo);
        }
        // delta on the position layer: q2_true - q2_mmse.
        let delta = DVector::from_iterator(
            n,
            inst.v_true.iter().zip(v_mmse.iter()).map(|(&t, &m)| {
                let lt = inst.constellation.layers_of(t);
                let lm = inst.constellation.layers_of(inst.constellation.slice(m).1);
                lt[1] - lm[1]
            }),
        );
        let h_delta = &inst.h * delta;
        h_delta_acc += h_delta.norm_squared();
        samples.push(0.25 * (&inst.noise + h_delta).norm_squared());
    }

    let count = samples.len() as f64;
    let effective_noise = samples.iter().sum::<f64>() / count;
    let var = samples
        .iter()
        .map(|s| (s - effective_noise).powi(2))
        .sum::<f64>()
        / (count - 1.0).max(1.0);
    let effective_noise_se = (var / count).sqrt();
    let mean_h_delta_sq = h_delta_acc / count;

    let sigma = sigma2_total.sqrt();
    let bound = 0.25 * (sigma2_total + mean_h_delta_sq + 2.0 * sigma * mean_h_delta_sq.sqrt());
    let naive_quadrant_first = 0.25 * (sigma2_total + 2.0 * (n * n) as f64);
    let naive_position_first = sigma2_total + 8.0 * (n * n) as f64;

    Ok(EffectiveNoiseReport {
        count: samples.len() as u64,
        sigma2_total,
        effective_noise,
        effective_noise_se,
        mean_h_delta_sq,
        bound,
        naive_quadrant_first,
        naive_position_first,
        bound_satisfied: effective_noise <= bound + 3.0 * effective_noise_se,
    })
}

/// Aggregated metrics for one scenario grid point and detector. This is the
/// stable record behind the CSV/JSON outputs; wall times are deliberately
/// excluded so outputs are reproducible byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub n_t: usize,
    pub n_r: usize,
    pub modulation: String,
    pub snr_db: f64,
    pub detector: String,
    pub l_p: usize,
    pub n_sweeps: usize,
    pub instances: u64,
    pub bits_tested: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub packet_bits: usize,
    pub packets: u64,
    pub packet_errors: u64,
    pub packet_success_rate: Option<f64>,
    /// Instances with a known ML reference (exact oracle or best-known).
    pub ml_known: u64,
    pub ml_hits: u64,
    pub ml_hit_rate: Option<f64>,
    /// "exact" when the oracle enumerated, "best-known" otherwise.
    pub oracle_kind: String,
    pub mean_energy_gap: Option<f64>,
    /// Digest chained over the instances this row saw, for paired-instance
    /// auditing across detectors.
    pub point_digest: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ber_counting() {
        assert_eq!(ber(&[1, 0, 1], &[1, 0, 1]).unwrap(), (0, 3, 0.0));
        assert_eq!(ber(&[1, 0], &[0, 1]).unwrap(), (2, 2, 1.0));
        let (e, n, r) = ber(&[0; 8], &[0, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!((e, n), (1, 8));
        assert_relative_eq!(r, 0.125);
        assert!(ber(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn tts_formula() {
        // p_g = 0.99 makes the log ratio exactly one run.
        assert_eq!(tts(0.99, 2.2).unwrap(), 2.2);
        assert_eq!(tts(1.0, 2.2).unwrap(), 2.2);
        assert_eq!(tts(0.0, 2.2).unwrap(), f64::INFINITY);
        // Clamp: p_g > 0.99 would need less than one run.
        assert_eq!(tts(0.999, 5.0).unwrap(), 5.0);
        let v = tts(0.01, 2.2).unwrap();
        assert_relative_eq!(v, 2.2 * (0.01f64).ln() / (0.99f64).ln(), epsilon = 1e-9);
        assert!((v - 1008.1).abs() < 0.1);
        assert!(tts(-0.1, 1.0).is_err());
        assert!(tts(1.1, 1.0).is_err());
        assert!(tts(0.5, 0.0).is_err());
    }

    #[test]
    fn tts_strictly_decreasing_in_pg() {
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let p = k as f64 / 101.0;
            let v = tts(p, 3.0).unwrap();
            assert!(v < prev, "tts must decrease: {v} at p={p}");
            prev = v;
        }
    }

    #[test]
    fn optimum_probability_formula() {
        assert_relative_eq!(optimum_probability(0.5, 2).unwrap(), 0.75);
        assert_eq!(optimum_probability(0.3, 0).unwrap(), 0.0);
        assert_eq!(optimum_probability(1.0, 3).unwrap(), 1.0);
        assert!(optimum_probability(1.5, 1).is_err());
    }

    #[test]
    fn optimum_probability_monotone() {
        let mut prev = 0.0;
        for count in 0..20 {
            let v = optimum_probability(0.2, count).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 0.0;
        for k in 0..=10 {
            let v = optimum_probability(k as f64 / 10.0, 3).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ml_occurrence_counts() {
        use crate::ising::SpinState;
        let mk = |energies: &[f64]| SampleSet {
            samples: energies
                .iter()
                .map(|&e| (SpinState::ones(1), e))
                .collect(),
            best: 0,
        };
        let pool = mk(&[1.0, 1.0, 1.0]);
        assert_eq!(ml_occurrence([&pool], 1.0, 1e-6), (3, 3));
        let empty = SampleSet {
            samples: vec![],
            best: 0,
        };
        assert_eq!(ml_occurrence([&empty], 1.0, 1e-6), (0, 0));
        let mixed = mk(&[1.0, 2.0, 1.0 + 1e-9, 5.0]);
        assert_eq!(ml_occurrence([&mixed], 1.0, 1e-6), (2, 4));
    }

    #[test]
    fn packet_rates() {
        let clean = vec![false; 24];
        assert_eq!(packet_success_rate(&clean, 12).unwrap(), 1.0);
        let dirty = vec![true; 24];
        assert_eq!(packet_success_rate(&dirty, 12).unwrap(), 0.0);
        let mut half = vec![false; 24];
        half[3] = true; // error only in the first packet
        assert_eq!(packet_success_rate(&half, 12).unwrap(), 0.5);
        assert!(packet_success_rate(&[false; 5], 12).is_err());
        // Partial trailing window is discarded.
        let mut trailing = vec![false; 30];
        trailing[29] = true;
        assert_eq!(packet_success_rate(&trailing, 12).unwrap(), 1.0);
    }

    #[test]
    fn packet_rate_one_iff_zero_ber() {
        let window = vec![false; 36];
        assert_eq!(packet_success_rate(&window, 12).unwrap(), 1.0);
        let mut with_err = window.clone();
        with_err[20] = true;
        assert!(packet_success_rate(&with_err, 12).unwrap() < 1.0);
    }

    #[test]
    fn schedules_and_budget() {
        let x = AnnealSchedule::xresq();
        assert_eq!(x.total_us(), 2.2);
        assert_eq!(x.tau_p(), Some(0.4));
        assert_relative_eq!(x.pause_us(), 1.0);
        let q = AnnealSchedule::quamax();
        assert_eq!(q.total_us(), 2.0);
        assert_eq!(q.tau_p(), Some(0.3));

        assert_eq!(compute_budget(&x, 100), 220.0);
        assert_eq!(compute_budget(&x, 50), 110.0);
        assert_eq!(compute_budget(&q, 100), 200.0);
        assert_eq!(compute_budget(&x, 1), 2.2);
        // Linear in n_a.
        for n in [2u64, 7, 31] {
            assert_relative_eq!(compute_budget(&q, n), n as f64 * 2.0);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(AnnealSchedule::new(vec![(0.0, 0.0)]).is_err());
        assert!(AnnealSchedule::new(vec![(0.5, 0.0), (1.0, 1.0)]).is_err());
        assert!(AnnealSchedule::new(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(AnnealSchedule::new(vec![(0.0, 0.0), (1.0, 1.5)]).is_err());
    }

    #[test]
    fn split_delta_on_constructed_cases() {
        use crate::model::{Constellation, Modulation};
        let c = Constellation::new(Modulation::Qam16);
        // MMSE has the right quadrant, wrong position: 3+3j vs 1+1j.
        let item = SplitDeltaItem {
            v_mmse: vec![Complex64::new(1.0, 1.0)],
            v_ml: vec![Complex64::new(3.0, 3.0)],
        };
        let stats = split_delta_stats(&c, &[item]).unwrap();
        assert_eq!(stats.p_quadrant_wrong, 0.0);
        assert_eq!(stats.p_position_wrong, 1.0);
        assert_eq!(stats.p_both_wrong, 0.0);

        // Perfect agreement.
        let item = SplitDeltaItem {
            v_mmse: vec![Complex64::new(-3.0, 1.0)],
            v_ml: vec![Complex64::new(-3.0, 1.0)],
        };
        let stats = split_delta_stats(&c, &[item]).unwrap();
        assert_eq!(stats.p_quadrant_wrong, 0.0);
        assert_eq!(stats.p_position_wrong, 0.0);

        let qpsk = Constellation::new(Modulation::Qpsk);
        assert!(split_delta_stats(&qpsk, &[]).is_err());
    }

    #[test]
    fn effective_noise_zero_delta_is_quarter_sigma() {
        use crate::model::{generate_instance, ChannelSpec, Modulation};
        // MMSE = truth everywhere, so the H*delta term vanishes and the MC
        // mean estimates 0.25 E||n||^2.
        let mut items = Vec::new();
        let mut insts = Vec::new();
        for seed in 0..4000u64 {
            let spec = ChannelSpec::iid_gaussian(seed);
            let inst = generate_instance(&spec, 2, 2, Modulation::Qam16, 16.0, seed).unwrap();
            insts.push(inst);
        }
        for inst in &insts {
            items.push((inst, inst.v_true.as_slice()));
        }
        let report = effective_noise_check(&items).unwrap();
        assert_eq!(report.mean_h_delta_sq, 0.0);
        let expect = 0.25 * report.sigma2_total;
        assert!(
            (report.effective_noise - expect).abs() <= 4.0 * report.effective_noise_se,
            "{} vs {expect}",
            report.effective_noise
        );
        assert!(report.bound_satisfied);
    }

    #[test]
    fn naive_noise_matches_paper_point() {
        use crate::model::{generate_instance, ChannelSpec, Modulation};
        // sigma = 0, N = 2: quadrant-first naive noise is 0.25 * 2 * N^2 = 2.
        let spec = ChannelSpec::iid_gaussian(0);
        let inst = generate_instance(&spec, 2, 2, Modulation::Qam16, f64::INFINITY, 0).unwrap();
        let items = vec![(&inst, inst.v_true.as_slice())];
        let report = effective_noise_check(&items).unwrap();
        assert_eq!(report.naive_quadrant_first, 2.0);
        assert_eq!(report.naive_position_first, 32.0);
    }
}
