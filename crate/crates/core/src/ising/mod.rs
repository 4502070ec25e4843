//! Ising spin models of ML detection problems.
//!
//! A model is `E(s) = sum_i f_i s_i + sum_{i<j} g_ij s_i s_j` over spins
//! `s_i = ±1`, plus an explicit constant `offset` so that for models built
//! from a detection instance `E(s) + offset = ||y - H v(s)||^2` exactly.

mod build;
mod mapping;

pub use build::{
    build_ml_ising, build_split_forms, combine_models, reduce_ising, split_state_of_symbols,
};
pub use mapping::SpinMapping;

use num_complex::Complex64;
use serde_json::json;
use thiserror::Error;

use crate::model::Modulation;

#[derive(Debug, Error)]
pub enum IsingError {
    #[error("spin state has length {found}, model expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("spin index {index} out of range for {n_v} spins")]
    IndexOutOfRange { index: usize, n_v: usize },
    #[error("spin value {0} is not ±1")]
    InvalidSpin(i8),
    #[error("invalid coupling ({i},{j}): need i < j within range")]
    InvalidCoupling { i: usize, j: usize },
    #[error("cannot combine an empty model list")]
    EmptyCombine,
    #[error("split detection needs at least two QPSK layers; {0} has none to split")]
    SplitUnsupported(Modulation),
    #[error("model carries no symbol mapping")]
    NoMapping,
    #[error("spin index {0} fixed more than once")]
    DuplicateFixed(usize),
}

/// A spin configuration; every entry is exactly +1 or -1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpinState(Vec<i8>);

impl SpinState {
    pub fn new(spins: Vec<i8>) -> Result<Self, IsingError> {
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(IsingError::InvalidSpin(bad));
        }
        Ok(SpinState(spins))
    }

    /// All spins up (+1).
    pub fn ones(n: usize) -> Self {
        SpinState(vec![1; n])
    }

    pub fn uniform_random<R: rand::Rng>(n: usize, rng: &mut R) -> Self {
        SpinState((0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    /// Spin-wise bits: bit = 1 iff spin = +1, in spin-index order.
    pub fn bits(&self) -> Vec<u8> {
        self.0.iter().map(|&s| u8::from(s > 0)).collect()
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        SpinState(bits.iter().map(|&b| if b != 0 { 1 } else { -1 }).collect())
    }

    pub(crate) fn from_raw(spins: Vec<i8>) -> Self {
        debug_assert!(spins.iter().all(|&s| s == 1 || s == -1));
        SpinState(spins)
    }
}

/// How a model's spins relate to wireless symbols.
#[derive(Clone, Debug)]
pub enum ModelMapping {
    /// No symbol semantics (hand-built models).
    Raw,
    /// Direct ML mapping over one user vector.
    Symbols(SpinMapping),
    /// Block-diagonal combination of independent sub-models.
    Blocks(Vec<MappingBlock>),
    /// Split-detection form: block `l` decides QPSK layer `l` of `original`.
    SplitLayers {
        original: SpinMapping,
        blocks: Vec<MappingBlock>,
    },
    /// Model obtained by fixing a subset of another model's spins.
    Reduced {
        original: Box<ModelMapping>,
        /// For each free (reduced) spin, its index in the original model.
        free_to_full: Vec<usize>,
        /// Fixed original-model spins, ascending by index.
        fixed: Vec<(usize, i8)>,
    },
}

#[derive(Clone, Debug)]
pub struct MappingBlock {
    pub start: usize,
    pub len: usize,
    pub mapping: SpinMapping,
}

impl ModelMapping {
    /// Lift a reduced-model state back to the original spin space.
    pub fn merge_reduced(&self, free: &SpinState) -> Result<SpinState, IsingError> {
        match self {
            ModelMapping::Reduced {
                free_to_full,
                fixed,
                ..
            } => {
                if free.len() != free_to_full.len() {
                    return Err(IsingError::LengthMismatch {
                        expected: free_to_full.len(),
                        found: free.len(),
                    });
                }
                let n_full = free_to_full.len() + fixed.len();
                let mut spins = vec![0i8; n_full];
                for (&full_idx, &s) in free_to_full.iter().zip(free.spins()) {
                    spins[full_idx] = s;
                }
                for &(idx, s) in fixed {
                    spins[idx] = s;
                }
                Ok(SpinState::from_raw(spins))
            }
            _ => Err(IsingError::NoMapping),
        }
    }
}

/// An Ising model: linear terms, sparse upper-triangular couplings, constant
/// offset, and optional symbol-mapping metadata.
#[derive(Clone, Debug)]
pub struct IsingModel {
    f: Vec<f64>,
    /// Couplings (i, j, g_ij) with i < j, sorted lexicographically.
    couplings: Vec<(u32, u32, f64)>,
    /// Adjacency rows for O(degree) single-flip deltas.
    neighbors: Vec<Vec<(u32, f64)>>,
    offset: f64,
    mapping: ModelMapping,
}

impl IsingModel {
    pub fn new(
        f: Vec<f64>,
        mut couplings: Vec<(u32, u32, f64)>,
        offset: f64,
        mapping: ModelMapping,
    ) -> Result<Self, IsingError> {
        let n_v = f.len();
        couplings.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut neighbors = vec![Vec::new(); n_v];
        let mut prev: Option<(u32, u32)> = None;
        for &(i, j, w) in &couplings {
            if i >= j || (j as usize) >= n_v {
                return Err(IsingError::InvalidCoupling {
                    i: i as usize,
                    j: j as usize,
                });
            }
            if prev == Some((i, j)) {
                return Err(IsingError::InvalidCoupling {
                    i: i as usize,
                    j: j as usize,
                });
            }
            prev = Some((i, j));
            neighbors[i as usize].push((j, w));
            neighbors[j as usize].push((i, w));
        }
        Ok(IsingModel {
            f,
            couplings,
            neighbors,
            offset,
            mapping,
        })
    }

    pub fn n_v(&self) -> usize {
        self.f.len()
    }

    pub fn linear(&self) -> &[f64] {
        &self.f
    }

    pub fn couplings(&self) -> &[(u32, u32, f64)] {
        &self.couplings
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn mapping(&self) -> &ModelMapping {
        &self.mapping
    }

    pub(crate) fn neighbors(&self) -> &[Vec<(u32, f64)>] {
        &self.neighbors
    }

    fn check_len(&self, s: &SpinState) -> Result<(), IsingError> {
        if s.len() != self.n_v() {
            return Err(IsingError::LengthMismatch {
                expected: self.n_v(),
                found: s.len(),
            });
        }
        Ok(())
    }

    /// Ising energy of a state; the offset is NOT included.
    pub fn energy(&self, s: &SpinState) -> Result<f64, IsingError> {
        self.check_len(s)?;
        Ok(self.energy_unchecked(s.spins()))
    }

    pub(crate) fn energy_unchecked(&self, spins: &[i8]) -> f64 {
        let mut e = 0.0;
        for (fi, &si) in self.f.iter().zip(spins) {
            e += fi * f64::from(si);
        }
        for &(i, j, w) in &self.couplings {
            e += w * f64::from(spins[i as usize]) * f64::from(spins[j as usize]);
        }
        e
    }

    /// Energy plus offset: equals the Euclidean residual for ML-built models.
    pub fn residual_energy(&self, s: &SpinState) -> Result<f64, IsingError> {
        Ok(self.energy(s)? + self.offset)
    }

    /// Energy change from flipping one spin; O(degree of the spin).
    pub fn delta_energy(&self, s: &SpinState, flip_index: usize) -> Result<f64, IsingError> {
        self.check_len(s)?;
        if flip_index >= self.n_v() {
            return Err(IsingError::IndexOutOfRange {
                index: flip_index,
                n_v: self.n_v(),
            });
        }
        Ok(self.delta_energy_unchecked(s.spins(), flip_index))
    }

    pub(crate) fn delta_energy_unchecked(&self, spins: &[i8], i: usize) -> f64 {
        let mut field = self.f[i];
        for &(j, w) in &self.neighbors[i] {
            field += w * f64::from(spins[j as usize]);
        }
        -2.0 * f64::from(spins[i]) * field
    }

    /// Decode a state into symbols using the model's mapping metadata.
    ///
    /// Split-form states reassemble into full symbol vectors; reduced models
    /// merge their fixed spins back in before decoding.
    pub fn decode_symbols(&self, s: &SpinState) -> Result<Vec<Complex64>, IsingError> {
        self.check_len(s)?;
        decode_with(&self.mapping, s)
    }

    /// Export as a JSON document `{n_v, f, g: [[i, j, val], ...], offset}`
    /// with 0-based spin indices.
    pub fn export_json(&self) -> String {
        let g: Vec<serde_json::Value> = self
            .couplings
            .iter()
            .map(|&(i, j, w)| json!([i, j, w]))
            .collect();
        serde_json::to_string_pretty(&json!({
            "n_v": self.n_v(),
            "f": self.f,
            "g": g,
            "offset": self.offset,
        }))
        .expect("static schema serializes")
    }
}

fn decode_with(mapping: &ModelMapping, s: &SpinState) -> Result<Vec<Complex64>, IsingError> {
    match mapping {
        ModelMapping::Raw => Err(IsingError::NoMapping),
        ModelMapping::Symbols(m) => m.symbols_of_state(s),
        ModelMapping::Blocks(blocks) => {
            let mut out = Vec::new();
            for b in blocks {
                let sub = SpinState::from_raw(s.spins()[b.start..b.start + b.len].to_vec());
                out.extend(b.mapping.symbols_of_state(&sub)?);
            }
            Ok(out)
        }
        ModelMapping::SplitLayers { original, blocks } => {
            let n_t = original.n_t();
            let mut out = vec![Complex64::new(0.0, 0.0); n_t];
            for (layer, b) in blocks.iter().enumerate() {
                let sub = SpinState::from_raw(s.spins()[b.start..b.start + b.len].to_vec());
                let q = b.mapping.symbols_of_state(&sub)?;
                let w = original.constellation().layer_weight(layer);
                for (v, qi) in out.iter_mut().zip(q) {
                    *v += w * qi;
                }
            }
            Ok(out)
        }
        ModelMapping::Reduced { original, .. } => {
            let full = mapping.merge_reduced(s)?;
            decode_with(original, &full)
        }
    }
}

/// Free-function form of [`IsingModel::energy`].
pub fn energy(model: &IsingModel, s: &SpinState) -> Result<f64, IsingError> {
    model.energy(s)
}

/// Free-function form of [`IsingModel::delta_energy`].
pub fn delta_energy(
    model: &IsingModel,
    s: &SpinState,
    flip_index: usize,
) -> Result<f64, IsingError> {
    model.delta_energy(s, flip_index)
}
