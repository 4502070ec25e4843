//! Construction of ML Ising models and their derived forms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{IsingError, IsingModel, MappingBlock, ModelMapping, SpinMapping, SpinState};
use crate::model::{Constellation, DetectionInstance, Modulation};

/// Expand `||y - H A s||^2` into Ising form for the linear symbol map
/// `v = A s` given by `mapping`. With `M = H^H H` and `w = H^H y`:
/// `f_i = -2 Re[conj(w_u_i) a_i]`, `g_ij = 2 Re[conj(a_i) M_{u_i u_j} a_j]`,
/// `offset = ||y||^2 + sum_i |a_i|^2 M_{u_i u_i}`.
fn build_ml_parts(
    h: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    mapping: &SpinMapping,
) -> (Vec<f64>, Vec<(u32, u32, f64)>, f64) {
    let n_v = mapping.n_spins();
    let gram = h.adjoint() * h;
    let w = h.adjoint() * y;

    let cols: Vec<(usize, Complex64)> = (0..n_v).map(|i| mapping.column(i)).collect();

    let mut f = Vec::with_capacity(n_v);
    let mut offset = y.norm_squared();
    for &(u, a) in &cols {
        f.push(-2.0 * (w[u].conj() * a).re);
        offset += a.norm_sqr() * gram[(u, u)].re;
    }

    let mut couplings = Vec::new();
    for i in 0..n_v {
        let (ui, ai) = cols[i];
        for (j, &(uj, aj)) in cols.iter().enumerate().skip(i + 1) {
            let val = 2.0 * (ai.conj() * gram[(ui, uj)] * aj).re;
            if val != 0.0 {
                couplings.push((i as u32, j as u32, val));
            }
        }
    }
    (f, couplings, offset)
}

/// Build the ML Ising model of an instance: the model whose energy plus
/// offset equals `||y - H v(s)||^2` for every spin state.
pub fn build_ml_ising(inst: &DetectionInstance) -> IsingModel {
    let mapping = inst.spin_mapping();
    let (f, g, offset) = build_ml_parts(&inst.h, &inst.y, &mapping);
    IsingModel::new(f, g, offset, ModelMapping::Symbols(mapping))
        .expect("ML construction yields valid couplings")
}

/// Block-diagonal concatenation: energies and offsets add, and the ground
/// state is the concatenation of the per-model ground states.
pub fn combine_models(models: &[IsingModel]) -> Result<IsingModel, IsingError> {
    if models.is_empty() {
        return Err(IsingError::EmptyCombine);
    }
    if models.len() == 1 {
        return Ok(models[0].clone());
    }

    let mut f = Vec::new();
    let mut couplings = Vec::new();
    let mut offset = 0.0;
    let mut blocks = Vec::new();
    let mut all_symbol_mapped = true;
    let mut start = 0usize;

    for m in models {
        match m.mapping() {
            ModelMapping::Symbols(sm) => blocks.push(MappingBlock {
                start,
                len: m.n_v(),
                mapping: sm.clone(),
            }),
            ModelMapping::Blocks(bs) => blocks.extend(bs.iter().map(|b| MappingBlock {
                start: start + b.start,
                len: b.len,
                mapping: b.mapping.clone(),
            })),
            _ => all_symbol_mapped = false,
        }
        f.extend_from_slice(m.linear());
        couplings.extend(
            m.couplings()
                .iter()
                .map(|&(i, j, w)| (i + start as u32, j + start as u32, w)),
        );
        offset += m.offset();
        start += m.n_v();
    }

    let mapping = if all_symbol_mapped {
        ModelMapping::Blocks(blocks)
    } else {
        ModelMapping::Raw
    };
    IsingModel::new(f, couplings, offset, mapping)
}

/// Fold a set of fixed spins into a reduced model over the free spins only.
/// For every completion: `E_red(free) + offset_red = E_full(merged) + offset_full`.
pub fn reduce_ising(model: &IsingModel, fixed: &[(usize, i8)]) -> Result<IsingModel, IsingError> {
    if fixed.is_empty() {
        return Ok(model.clone());
    }
    let n_v = model.n_v();
    let mut assignment = vec![0i8; n_v];
    for &(idx, s) in fixed {
        if idx >= n_v {
            return Err(IsingError::IndexOutOfRange { index: idx, n_v });
        }
        if s != 1 && s != -1 {
            return Err(IsingError::InvalidSpin(s));
        }
        if assignment[idx] != 0 {
            return Err(IsingError::DuplicateFixed(idx));
        }
        assignment[idx] = s;
    }

    let free_to_full: Vec<usize> = (0..n_v).filter(|&i| assignment[i] == 0).collect();
    let mut full_to_free = vec![usize::MAX; n_v];
    for (k, &i) in free_to_full.iter().enumerate() {
        full_to_free[i] = k;
    }

    let mut f: Vec<f64> = free_to_full.iter().map(|&i| model.linear()[i]).collect();
    let mut offset = model.offset();
    for &(idx, s) in fixed {
        offset += model.linear()[idx] * f64::from(s);
    }

    let mut couplings = Vec::new();
    for &(i, j, w) in model.couplings() {
        let (i, j) = (i as usize, j as usize);
        match (assignment[i], assignment[j]) {
            (0, 0) => couplings.push((full_to_free[i] as u32, full_to_free[j] as u32, w)),
            (si, 0) => f[full_to_free[j]] += w * f64::from(si),
            (0, sj) => f[full_to_free[i]] += w * f64::from(sj),
            (si, sj) => offset += w * f64::from(si) * f64::from(sj),
        }
    }

    let mut fixed_sorted: Vec<(usize, i8)> = fixed.to_vec();
    fixed_sorted.sort_unstable_by_key(|&(i, _)| i);
    let mapping = ModelMapping::Reduced {
        original: Box::new(model.mapping().clone()),
        free_to_full,
        fixed: fixed_sorted,
    };
    IsingModel::new(f, couplings, offset, mapping)
}

/// Build the split-detection form: one QPSK ML sub-problem per layer of the
/// constellation, each with the other layers held at the MMSE estimate,
/// combined block-diagonally into a model of the same spin count as the
/// original. Block `l` decides layer `l`; mapping metadata lets a full
/// symbol vector be reassembled from any state.
pub fn build_split_forms(
    inst: &DetectionInstance,
    v_mmse: &[Complex64],
) -> Result<IsingModel, IsingError> {
    let constellation = &inst.constellation;
    let n_q = constellation.qpsk_layers();
    if n_q < 2 {
        return Err(IsingError::SplitUnsupported(constellation.modulation()));
    }
    if v_mmse.len() != inst.n_t {
        return Err(IsingError::LengthMismatch {
            expected: inst.n_t,
            found: v_mmse.len(),
        });
    }

    // Hard MMSE layers q_{m,l} per user; slicing is idempotent on lattice points.
    let mmse_layers: Vec<Vec<Complex64>> = v_mmse
        .iter()
        .map(|&v| {
            let (_, p) = constellation.slice(v);
            constellation.layers_of(p)
        })
        .collect();

    let qpsk = SpinMapping::new(inst.n_t, Constellation::new(Modulation::Qpsk));
    let mut f = Vec::new();
    let mut couplings = Vec::new();
    let mut offset = 0.0;
    let mut blocks = Vec::new();
    let mut start = 0usize;

    for layer in 0..n_q {
        let w_l = constellation.layer_weight(layer);
        // Residual: cancel the MMSE estimate of every other layer, then
        // normalize this layer to unit QPSK.
        let mut y_l = inst.y.clone();
        for other in 0..n_q {
            if other == layer {
                continue;
            }
            let w_o = constellation.layer_weight(other);
            let q_o = DVector::from_iterator(
                inst.n_t,
                mmse_layers.iter().map(|layers| layers[other] * w_o),
            );
            y_l -= &inst.h * q_o;
        }
        y_l /= Complex64::new(w_l, 0.0);

        let (bf, bg, boff) = build_ml_parts(&inst.h, &y_l, &qpsk);
        let base = start as u32;
        f.extend_from_slice(&bf);
        couplings.extend(bg.iter().map(|&(i, j, w)| (i + base, j + base, w)));
        offset += boff;
        blocks.push(MappingBlock {
            start,
            len: qpsk.n_spins(),
            mapping: qpsk.clone(),
        });
        start += qpsk.n_spins();
    }

    debug_assert_eq!(start, inst.spin_mapping().n_spins());
    let mapping = ModelMapping::SplitLayers {
        original: inst.spin_mapping(),
        blocks,
    };
    IsingModel::new(f, couplings, offset, mapping)
}

/// Spin state of the split form encoding a full symbol vector: block `l`
/// carries the QPSK spins of layer `l` of each symbol.
pub fn split_state_of_symbols(
    model: &IsingModel,
    v: &[Complex64],
) -> Result<SpinState, IsingError> {
    let ModelMapping::SplitLayers { original, blocks } = model.mapping() else {
        return Err(IsingError::NoMapping);
    };
    if v.len() != original.n_t() {
        return Err(IsingError::LengthMismatch {
            expected: original.n_t(),
            found: v.len(),
        });
    }
    let layers: Vec<Vec<Complex64>> = v
        .iter()
        .map(|&p| {
            let (_, sliced) = original.constellation().slice(p);
            original.constellation().layers_of(sliced)
        })
        .collect();
    let mut spins = Vec::with_capacity(model.n_v());
    for (l, block) in blocks.iter().enumerate() {
        let q_l: Vec<Complex64> = layers.iter().map(|ls| ls[l]).collect();
        spins.extend_from_slice(block.mapping.state_of_symbols(&q_l)?.spins());
    }
    Ok(SpinState::from_raw(spins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, ChannelSpec, Modulation};
    use approx::assert_relative_eq;

    fn enumerate_states(n: usize) -> impl Iterator<Item = SpinState> {
        (0u64..(1 << n)).map(move |mask| {
            SpinState::from_raw(
                (0..n)
                    .map(|k| if mask >> k & 1 == 1 { 1 } else { -1 })
                    .collect(),
            )
        })
    }

    fn single_tap_instance(y: Complex64, m: Modulation, v_true: Complex64) -> DetectionInstance {
        // 1x1 instance with H = [1] and a chosen observation.
        let spec = ChannelSpec {
            kind: crate::model::ChannelKind::TraceFile("unused".into()),
            rng_seed: 0,
        };
        let _ = spec;
        let mut inst = generate_instance(
            &ChannelSpec::iid_gaussian(0),
            1,
            1,
            m,
            f64::INFINITY,
            0,
        )
        .unwrap();
        inst.h[(0, 0)] = Complex64::new(1.0, 0.0);
        inst.v_true = vec![v_true];
        inst.bits_true = inst.spin_mapping().symbols_to_bits(&inst.v_true);
        inst.y[0] = y;
        inst
    }

    #[test]
    fn scalar_bpsk_model_by_hand() {
        // H=[1], y=[3]: f=(-6), no couplings, offset=10; E(+1)+offset = 4.
        let inst = single_tap_instance(Complex64::new(3.0, 0.0), Modulation::Bpsk, Complex64::new(1.0, 0.0));
        let model = build_ml_ising(&inst);
        assert_eq!(model.linear(), &[-6.0]);
        assert!(model.couplings().is_empty());
        assert_relative_eq!(model.offset(), 10.0);
        let up = SpinState::new(vec![1]).unwrap();
        assert_relative_eq!(model.residual_energy(&up).unwrap(), 4.0);
    }

    #[test]
    fn zero_observation_kills_linear_terms() {
        let spec = ChannelSpec::iid_gaussian(5);
        let mut inst = generate_instance(&spec, 2, 3, Modulation::Qpsk, 15.0, 5).unwrap();
        inst.y.fill(Complex64::new(0.0, 0.0));
        let model = build_ml_ising(&inst);
        assert!(model.linear().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_matches_residual_exhaustively() {
        for (m, n_t, n_r, seed) in [
            (Modulation::Qpsk, 2, 2, 1u64),
            (Modulation::Qpsk, 2, 3, 2),
            (Modulation::Qam16, 2, 2, 3),
            (Modulation::Bpsk, 4, 5, 4),
        ] {
            let spec = ChannelSpec::iid_gaussian(seed);
            let inst = generate_instance(&spec, n_t, n_r, m, 12.0, seed).unwrap();
            let model = build_ml_ising(&inst);
            for s in enumerate_states(model.n_v()) {
                let v = model.decode_symbols(&s).unwrap();
                let expect = inst.residual(&v);
                let got = model.residual_energy(&s).unwrap();
                let tol = 1e-9 * expect.abs().max(1.0);
                assert!(
                    (got - expect).abs() <= tol,
                    "{m:?} {n_t}x{n_r}: E+offset={got} vs residual={expect}"
                );
            }
        }
    }

    #[test]
    fn combine_adds_energies_blockwise() {
        let inst = single_tap_instance(Complex64::new(3.0, 0.0), Modulation::Bpsk, Complex64::new(1.0, 0.0));
        let m = build_ml_ising(&inst);
        let combined = combine_models(&[m.clone(), m.clone()]).unwrap();
        assert_eq!(combined.n_v(), 2);
        assert_eq!(combined.linear(), &[-6.0, -6.0]);
        let both_up = SpinState::new(vec![1, 1]).unwrap();
        assert_relative_eq!(combined.energy(&both_up).unwrap(), -12.0);

        // Single-model combine is the identity.
        let one = combine_models(&[m.clone()]).unwrap();
        assert_eq!(one.linear(), m.linear());
        assert_eq!(one.offset(), m.offset());

        assert!(matches!(combine_models(&[]), Err(IsingError::EmptyCombine)));
    }

    #[test]
    fn combine_energy_is_sum_on_random_states() {
        let spec = ChannelSpec::iid_gaussian(8);
        let a = build_ml_ising(&generate_instance(&spec, 2, 2, Modulation::Qpsk, 10.0, 1).unwrap());
        let b = build_ml_ising(&generate_instance(&spec, 2, 2, Modulation::Qpsk, 10.0, 2).unwrap());
        let c = combine_models(&[a.clone(), b.clone()]).unwrap();
        let mut rng = crate::rng::stream_rng(3, &[]);
        for _ in 0..50 {
            let sa = SpinState::uniform_random(a.n_v(), &mut rng);
            let sb = SpinState::uniform_random(b.n_v(), &mut rng);
            let mut joined = sa.spins().to_vec();
            joined.extend_from_slice(sb.spins());
            let sc = SpinState::from_raw(joined);
            assert_relative_eq!(
                c.energy(&sc).unwrap(),
                a.energy(&sa).unwrap() + b.energy(&sb).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn reduce_preserves_completions() {
        let spec = ChannelSpec::iid_gaussian(21);
        let inst = generate_instance(&spec, 2, 2, Modulation::Qpsk, 10.0, 21).unwrap();
        let model = build_ml_ising(&inst); // 4 spins
        let fixed = [(0usize, 1i8), (1usize, -1i8)];
        let reduced = reduce_ising(&model, &fixed).unwrap();
        assert_eq!(reduced.n_v(), 2);
        for s_free in enumerate_states(2) {
            let merged = reduced.mapping().merge_reduced(&s_free).unwrap();
            assert_relative_eq!(
                reduced.energy(&s_free).unwrap() + reduced.offset(),
                model.energy(&merged).unwrap() + model.offset(),
                epsilon = 1e-9
            );
        }

        // Fixing everything folds the whole energy into the offset.
        let all: Vec<(usize, i8)> = (0..4).map(|i| (i, 1i8)).collect();
        let empty = reduce_ising(&model, &all).unwrap();
        assert_eq!(empty.n_v(), 0);
        let full = SpinState::new(vec![1; 4]).unwrap();
        assert_relative_eq!(
            empty.offset(),
            model.energy(&full).unwrap() + model.offset(),
            epsilon = 1e-9
        );

        // Fixing nothing is the identity.
        let same = reduce_ising(&model, &[]).unwrap();
        assert_eq!(same.linear(), model.linear());
        assert_eq!(same.couplings(), model.couplings());
    }

    #[test]
    fn reduce_rejects_bad_indices() {
        let model = IsingModel::new(vec![0.0; 3], vec![], 0.0, ModelMapping::Raw).unwrap();
        assert!(reduce_ising(&model, &[(7, 1)]).is_err());
        assert!(reduce_ising(&model, &[(0, 1), (0, -1)]).is_err());
        assert!(reduce_ising(&model, &[(0, 2)]).is_err());
    }

    #[test]
    fn split_forms_recover_truth_at_zero_noise() {
        // 1-user 16-QAM, H=[1], sigma2=0, v_true=3+3j, correct MMSE.
        let inst = single_tap_instance(
            Complex64::new(3.0, 3.0),
            Modulation::Qam16,
            Complex64::new(3.0, 3.0),
        );
        let split = build_split_forms(&inst, &[Complex64::new(3.0, 3.0)]).unwrap();
        assert_eq!(split.n_v(), 4); // same size as the original form

        // Brute-force each 2-spin block independently via the combined model.
        let mut best = (f64::INFINITY, None);
        for s in enumerate_states(4) {
            let e = split.energy(&s).unwrap();
            if e < best.0 {
                best = (e, Some(s));
            }
        }
        let ground = best.1.unwrap();
        let v = split.decode_symbols(&ground).unwrap();
        assert_eq!(v[0], Complex64::new(3.0, 3.0));
    }

    #[test]
    fn split_fixes_position_given_correct_quadrant() {
        // MMSE has the right quadrant but the wrong position; the position
        // block is built from the true-quadrant residual, so its ground
        // state restores the true position.
        let inst = single_tap_instance(
            Complex64::new(3.0, 3.0),
            Modulation::Qam16,
            Complex64::new(3.0, 3.0),
        );
        let v_mmse = [Complex64::new(1.0, 1.0)]; // quadrant ok, position wrong
        let split = build_split_forms(&inst, &v_mmse).unwrap();
        let mut best = (f64::INFINITY, None);
        for s in enumerate_states(4) {
            let e = split.energy(&s).unwrap();
            if e < best.0 {
                best = (e, Some(s));
            }
        }
        let v = split.decode_symbols(&best.1.unwrap()).unwrap();
        assert_eq!(v[0], Complex64::new(3.0, 3.0));
    }

    #[test]
    fn split_rejects_low_order_modulations() {
        let spec = ChannelSpec::iid_gaussian(2);
        let inst = generate_instance(&spec, 1, 1, Modulation::Qpsk, 10.0, 2).unwrap();
        assert!(matches!(
            build_split_forms(&inst, &[Complex64::new(1.0, 1.0)]),
            Err(IsingError::SplitUnsupported(Modulation::Qpsk))
        ));
    }

    #[test]
    fn split_seed_state_roundtrips() {
        let spec = ChannelSpec::iid_gaussian(6);
        let inst = generate_instance(&spec, 2, 2, Modulation::Qam16, 20.0, 6).unwrap();
        let split = build_split_forms(&inst, &inst.v_true.clone()).unwrap();
        let seed = split_state_of_symbols(&split, &inst.v_true).unwrap();
        assert_eq!(split.decode_symbols(&seed).unwrap(), inst.v_true);
    }
}
