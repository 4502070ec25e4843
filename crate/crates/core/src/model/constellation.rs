//! Modulation constellations on the unnormalized odd-integer lattice.
//!
//! Square QAM symbols decompose into QPSK layers: a symbol is
//! `sum_{l=1..n_q} w_l * q_l` with `q_l` in `{±1±j}` and layer weights
//! `w_l = 2^(n_q - l)`, so the first layer (largest weight) selects the
//! quadrant and the last selects the finest position. BPSK is the
//! degenerate real case `{-1, +1}` with no QPSK layers.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    /// Bits per symbol, `M = log2 |O|`.
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    /// Number of QPSK layers (`0` for BPSK).
    pub fn qpsk_layers(self) -> usize {
        match self {
            Modulation::Bpsk => 0,
            Modulation::Qpsk => 1,
            Modulation::Qam16 => 2,
            Modulation::Qam64 => 3,
        }
    }

    pub fn order(self) -> usize {
        1 << self.bits_per_symbol()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
            Modulation::Qam64 => "qam64",
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            "qam16" | "16qam" => Ok(Modulation::Qam16),
            "qam64" | "64qam" => Ok(Modulation::Qam64),
            other => Err(format!("unknown modulation: {other}")),
        }
    }
}

/// A concrete constellation: the point set plus its layer structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    modulation: Modulation,
    bits_per_symbol: usize,
    qpsk_layers: usize,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let n_q = modulation.qpsk_layers();
        let mut points = if n_q == 0 {
            vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)]
        } else {
            // Odd-integer axis values in [-(2^n_q - 1), 2^n_q - 1].
            let axis: Vec<f64> = (0..1 << n_q)
                .map(|k| (2 * k as i64 - ((1 << n_q) - 1)) as f64)
                .collect();
            let mut pts = Vec::with_capacity(axis.len() * axis.len());
            for &re in &axis {
                for &im in &axis {
                    pts.push(Complex64::new(re, im));
                }
            }
            pts
        };
        points.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        Constellation {
            modulation,
            bits_per_symbol: modulation.bits_per_symbol(),
            qpsk_layers: n_q,
            points,
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn qpsk_layers(&self) -> usize {
        self.qpsk_layers
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Mean symbol energy `E_s` (BPSK 1, QPSK 2, 16-QAM 10, 64-QAM 42).
    pub fn mean_energy(&self) -> f64 {
        let total: f64 = self.points.iter().map(|p| p.norm_sqr()).sum();
        total / self.points.len() as f64
    }

    /// Nearest constellation point to `v`; equidistant candidates resolve to
    /// the smaller point index so slicing is deterministic.
    pub fn slice(&self, v: Complex64) -> (usize, Complex64) {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &p) in self.points.iter().enumerate() {
            let d = (v - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        (best, self.points[best])
    }

    /// Weight of QPSK layer `l` (0-based): `2^(n_q - 1 - l)`.
    pub fn layer_weight(&self, layer: usize) -> f64 {
        debug_assert!(layer < self.qpsk_layers);
        (1u64 << (self.qpsk_layers - 1 - layer)) as f64
    }

    /// Decompose a lattice point into its QPSK layers, largest weight first.
    /// Exact for constellation members; greedy sign extraction otherwise.
    pub fn layers_of(&self, v: Complex64) -> Vec<Complex64> {
        let n_q = self.qpsk_layers;
        let mut layers = Vec::with_capacity(n_q);
        let (mut re, mut im) = (v.re, v.im);
        for l in 0..n_q {
            let w = self.layer_weight(l);
            let qr = if re >= 0.0 { 1.0 } else { -1.0 };
            let qi = if im >= 0.0 { 1.0 } else { -1.0 };
            layers.push(Complex64::new(qr, qi));
            re -= w * qr;
            im -= w * qi;
        }
        layers
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_and_energies() {
        for (m, order, es) in [
            (Modulation::Bpsk, 2, 1.0),
            (Modulation::Qpsk, 4, 2.0),
            (Modulation::Qam16, 16, 10.0),
            (Modulation::Qam64, 64, 42.0),
        ] {
            let c = Constellation::new(m);
            assert_eq!(c.order(), order);
            assert_eq!(c.mean_energy(), es);
            assert_eq!(c.order(), 1 << c.bits_per_symbol());
        }
    }

    #[test]
    fn qam16_is_odd_lattice() {
        let c = Constellation::new(Modulation::Qam16);
        for p in c.points() {
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&p.re));
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&p.im));
        }
    }

    #[test]
    fn layer_decomposition_roundtrips() {
        for m in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            let c = Constellation::new(m);
            for &p in c.points() {
                let layers = c.layers_of(p);
                assert_eq!(layers.len(), c.qpsk_layers());
                let back: Complex64 = layers
                    .iter()
                    .enumerate()
                    .map(|(l, q)| c.layer_weight(l) * q)
                    .sum();
                assert_eq!(back, p);
                for q in layers {
                    assert_eq!(q.re.abs(), 1.0);
                    assert_eq!(q.im.abs(), 1.0);
                }
            }
        }
    }

    #[test]
    fn slicing_picks_nearest_with_stable_ties() {
        let c = Constellation::new(Modulation::Qam16);
        let (_, p) = c.slice(Complex64::new(2.6, -0.2));
        assert_eq!(p, Complex64::new(3.0, -1.0));
        // Exactly between (-1,-1) and (-1,1): smaller index wins.
        let (i, p) = c.slice(Complex64::new(-1.0, 0.0));
        let (j, q) = c.slice(Complex64::new(-1.0, 0.0));
        assert_eq!((i, p), (j, q));
        assert_eq!(p, Complex64::new(-1.0, -1.0));
    }
}
