//! Spin / symbol / bit mapping.
//!
//! User `u` (0-based) owns the spin block `[u*M .. (u+1)*M)`. Within a block
//! the layout is `[Re L1, .., Re Ln_q, Im L1, .., Im Ln_q]`, layers ordered
//! by descending weight, so for 16-QAM the odd-numbered spins (1-based) carry
//! the quadrant decision and the even-numbered spins the position. BPSK uses
//! a single real spin per user.

use num_complex::Complex64;

use super::{IsingError, SpinState};
use crate::model::Constellation;

#[derive(Clone, Debug)]
pub struct SpinMapping {
    n_t: usize,
    constellation: Constellation,
}

impl SpinMapping {
    pub fn new(n_t: usize, constellation: Constellation) -> Self {
        SpinMapping { n_t, constellation }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Total spin count `N_V = n_t * log2 |O|`.
    pub fn n_spins(&self) -> usize {
        self.n_t * self.constellation.bits_per_symbol()
    }

    /// Spin index range owned by user `u`.
    pub fn user_block(&self, u: usize) -> std::ops::Range<usize> {
        let m = self.constellation.bits_per_symbol();
        u * m..(u + 1) * m
    }

    /// Complex coefficient of spin `i` in the linear symbol map `v = A s`:
    /// the single nonzero of column `i`, living on the row of its user.
    pub fn column(&self, i: usize) -> (usize, Complex64) {
        let m = self.constellation.bits_per_symbol();
        let u = i / m;
        let k = i % m;
        let n_q = self.constellation.qpsk_layers();
        if n_q == 0 {
            return (u, Complex64::new(1.0, 0.0));
        }
        let (layer, imag) = if k < n_q { (k, false) } else { (k - n_q, true) };
        let w = self.constellation.layer_weight(layer);
        let coeff = if imag {
            Complex64::new(0.0, w)
        } else {
            Complex64::new(w, 0.0)
        };
        (u, coeff)
    }

    /// Map a spin state to the symbol vector it encodes.
    pub fn symbols_of_state(&self, s: &SpinState) -> Result<Vec<Complex64>, IsingError> {
        if s.len() != self.n_spins() {
            return Err(IsingError::LengthMismatch {
                expected: self.n_spins(),
                found: s.len(),
            });
        }
        let mut v = vec![Complex64::new(0.0, 0.0); self.n_t];
        for (i, &spin) in s.spins().iter().enumerate() {
            let (u, coeff) = self.column(i);
            v[u] += coeff * f64::from(spin);
        }
        Ok(v)
    }

    /// Inverse map: exact spins of a vector of constellation points.
    pub fn state_of_symbols(&self, v: &[Complex64]) -> Result<SpinState, IsingError> {
        if v.len() != self.n_t {
            return Err(IsingError::LengthMismatch {
                expected: self.n_t,
                found: v.len(),
            });
        }
        let n_q = self.constellation.qpsk_layers();
        let mut spins = Vec::with_capacity(self.n_spins());
        for &point in v {
            if n_q == 0 {
                spins.push(if point.re >= 0.0 { 1 } else { -1 });
                continue;
            }
            let layers = self.constellation.layers_of(point);
            for q in &layers {
                spins.push(if q.re > 0.0 { 1 } else { -1 });
            }
            for q in &layers {
                spins.push(if q.im > 0.0 { 1 } else { -1 });
            }
        }
        Ok(SpinState::from_raw(spins))
    }

    /// Bits of a symbol vector under the spin/bit convention.
    pub fn symbols_to_bits(&self, v: &[Complex64]) -> Vec<u8> {
        self.state_of_symbols(v)
            .expect("length checked by caller")
            .bits()
    }
}
