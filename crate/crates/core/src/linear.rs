//! Linear baseline detectors: zero-forcing and MMSE equalization with
//! per-user slicing to the constellation.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::DetectionInstance;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("channel matrix is rank deficient; ZF equalizer does not exist")]
    SingularChannel,
}

/// Equalized estimate before and after slicing.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub v_soft: Vec<Complex64>,
    pub v_hard: Vec<Complex64>,
    pub bits: Vec<u8>,
}

fn finish(inst: &DetectionInstance, v_soft: DVector<Complex64>) -> LinearSolution {
    let v_soft: Vec<Complex64> = v_soft.iter().copied().collect();
    let v_hard: Vec<Complex64> = v_soft
        .iter()
        .map(|&v| inst.constellation.slice(v).1)
        .collect();
    let bits = inst.spin_mapping().symbols_to_bits(&v_hard);
    LinearSolution {
        v_soft,
        v_hard,
        bits,
    }
}

/// Zero-forcing equalizer `H^+ = (H^H H)^-1 H^H`.
fn zf_equalizer(h: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>, LinearError> {
    let gram = h.adjoint() * h;
    let inv = gram.try_inverse().ok_or(LinearError::SingularChannel)?;
    Ok(inv * h.adjoint())
}

/// MMSE equalizer `G = SNR (I + SNR H^H H)^-1 H^H`, computed as
/// `(I/SNR + H^H H)^-1 H^H`. Falls back to the ZF equalizer at infinite SNR.
fn mmse_equalizer(
    h: &DMatrix<Complex64>,
    snr_linear: f64,
) -> Result<DMatrix<Complex64>, LinearError> {
    if snr_linear.is_infinite() {
        return zf_equalizer(h);
    }
    let n_t = h.ncols();
    let mut a = h.adjoint() * h;
    for i in 0..n_t {
        a[(i, i)] += Complex64::new(1.0 / snr_linear, 0.0);
    }
    let inv = a.try_inverse().ok_or(LinearError::SingularChannel)?;
    Ok(inv * h.adjoint())
}

/// ZF detection: `v_soft = H^+ y`, then nearest-point slicing per user.
pub fn detect_zf(inst: &DetectionInstance) -> Result<LinearSolution, LinearError> {
    let eq = zf_equalizer(&inst.h)?;
    Ok(finish(inst, eq * &inst.y))
}

/// MMSE detection with the instance's per-receive-antenna linear SNR.
pub fn detect_mmse(inst: &DetectionInstance) -> Result<LinearSolution, LinearError> {
    let eq = mmse_equalizer(&inst.h, inst.snr_linear())?;
    Ok(finish(inst, eq * &inst.y))
}

#[derive(PartialEq, Eq, Hash)]
struct EqKey {
    dims: (usize, usize),
    h_bits: Vec<u64>,
    snr_bits: u64,
}

impl EqKey {
    fn new(h: &DMatrix<Complex64>, snr_linear: f64) -> Self {
        let mut h_bits = Vec::with_capacity(2 * h.len());
        for c in h.iter() {
            h_bits.push(c.re.to_bits());
            h_bits.push(c.im.to_bits());
        }
        EqKey {
            dims: (h.nrows(), h.ncols()),
            h_bits,
            snr_bits: snr_linear.to_bits(),
        }
    }
}

/// Cache of equalizer matrices keyed by the exact channel contents and SNR,
/// so one equalizer serves every channel use within a coherence block.
///
/// Concurrent readers and writers are safe; duplicate computations insert
/// identical values, so last-write-wins is harmless.
#[derive(Default)]
pub struct EqualizerCache {
    inner: RwLock<HashMap<EqKey, Arc<DMatrix<Complex64>>>>,
}

impl EqualizerCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_compute(
        &self,
        h: &DMatrix<Complex64>,
        snr_linear: f64,
    ) -> Result<Arc<DMatrix<Complex64>>, LinearError> {
        let key = EqKey::new(h, snr_linear);
        if let Some(eq) = self.inner.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(eq));
        }
        let eq = Arc::new(mmse_equalizer(h, snr_linear)?);
        let mut map = self.inner.write().expect("cache lock");
        Ok(Arc::clone(map.entry(key).or_insert(eq)))
    }

    /// MMSE detection through the cache.
    pub fn detect_mmse(&self, inst: &DetectionInstance) -> Result<LinearSolution, LinearError> {
        let eq = self.get_or_compute(&inst.h, inst.snr_linear())?;
        Ok(finish(inst, &*eq * &inst.y))
    }
}
