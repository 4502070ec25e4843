//! Detector orchestration: multi-seed parallel ensemble search (X-ResQ),
//! FSD-decomposition parallelism (IoT-ResQ), random-init sample parallelism
//! (ParaMax), and the linear/oracle baselines behind one interface.
//!
//! Every detector pools candidate symbol vectors, scores each by its exact
//! Euclidean residual, and returns the minimum. Candidates are generated by
//! per-task RNG streams keyed by `(config seed, instance digest, task index)`,
//! so results are independent of task execution order.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ising::{
    build_ml_ising, build_split_forms, reduce_ising, split_state_of_symbols, IsingError,
    IsingModel, SpinState,
};
use crate::linear::{detect_mmse, detect_zf, EqualizerCache, LinearError, LinearSolution};
use crate::model::{Constellation, DetectionInstance};
use crate::oracle::{brute_force_ml_with_budget, fsd_detect, FsdPlan, OracleError, DEFAULT_ENUM_BUDGET};
use crate::pt::{geometric_beta_ladder, pt_solve, PtConfig, PtError, PtInit};
use crate::rng::{mix, stream_rng};

const STREAM_BMG: u64 = 0x10;
const STREAM_SPLIT_BMG: u64 = 0x11;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid parallelism: {0}")]
    InvalidParallelism(String),
    #[error("cannot generate {requested} distinct single-flip seeds from {n_v} spins")]
    TooManySeeds { requested: usize, n_v: usize },
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Ising(#[from] IsingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pt(#[from] PtError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    XResQ,
    XResQSplit,
    IoTResQ { n_fs: usize },
    ParaMax,
    MmseOnly,
    ZfOnly,
    BruteForce,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::XResQ => "xresq",
            Strategy::XResQSplit => "xresq-split",
            Strategy::IoTResQ { .. } => "iotresq",
            Strategy::ParaMax => "paramax",
            Strategy::MmseOnly => "mmse",
            Strategy::ZfOnly => "zf",
            Strategy::BruteForce => "ml",
        }
    }
}

/// PT engine settings shared by all tasks of a detector; the ladder is
/// derived from each model unless pinned explicitly.
#[derive(Clone, Debug)]
pub struct PtTemplate {
    pub n_replicas: usize,
    pub n_sweeps: usize,
    pub beta_ladder: Option<Vec<f64>>,
}

impl Default for PtTemplate {
    fn default() -> Self {
        PtTemplate {
            n_replicas: 8,
            n_sweeps: 50,
            beta_ladder: None,
        }
    }
}

impl PtTemplate {
    fn config(&self, model: &IsingModel, rng_seed: u64, init: PtInit) -> PtConfig {
        PtConfig {
            beta_ladder: self
                .beta_ladder
                .clone()
                .unwrap_or_else(|| geometric_beta_ladder(model, self.n_replicas)),
            n_sweeps: self.n_sweeps,
            rng_seed,
            init,
            record_sweep_bests: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub strategy: Strategy,
    /// Level of parallelism: independent solver tasks per instance.
    pub l_p: usize,
    pub pt: PtTemplate,
    pub rng_seed: u64,
    /// Candidate budget for the exhaustive-search strategy.
    pub enum_budget: u64,
}

impl DetectorConfig {
    pub fn new(
        strategy: Strategy,
        l_p: usize,
        pt: PtTemplate,
        rng_seed: u64,
    ) -> Result<Self, EnsembleError> {
        if l_p == 0 {
            return Err(EnsembleError::InvalidParallelism("l_p must be >= 1".into()));
        }
        if strategy == Strategy::XResQSplit && l_p < 2 {
            return Err(EnsembleError::InvalidParallelism(
                "xresq-split reserves ceil(l_p/2) tasks for the split form and needs at least \
                 one baseline task; use l_p >= 2"
                    .into(),
            ));
        }
        Ok(DetectorConfig {
            strategy,
            l_p,
            pt,
            rng_seed,
            enum_budget: DEFAULT_ENUM_BUDGET,
        })
    }

    /// IoT-ResQ ties the parallelism to the expansion: `l_p = |O|^n_fs`.
    pub fn iotresq_for(
        n_fs: usize,
        constellation: &Constellation,
        pt: PtTemplate,
        rng_seed: u64,
    ) -> Result<Self, EnsembleError> {
        let l_p = (constellation.order() as u128)
            .checked_pow(n_fs as u32)
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| {
                EnsembleError::InvalidParallelism(format!(
                    "|O|^{n_fs} subproblems exceed any practical parallelism"
                ))
            })? as usize;
        Self::new(Strategy::IoTResQ { n_fs }, l_p, pt, rng_seed)
    }

    fn check_against(&self, inst: &DetectionInstance) -> Result<(), EnsembleError> {
        if let Strategy::IoTResQ { n_fs } = self.strategy {
            let expected = (inst.constellation.order() as u128).checked_pow(n_fs as u32);
            if expected != Some(self.l_p as u128) {
                return Err(EnsembleError::InvalidParallelism(format!(
                    "iotresq with n_fs={n_fs} on {} requires l_p=|O|^n_fs={}, got {}",
                    inst.constellation.modulation(),
                    expected.map_or_else(|| "overflow".into(), |e| e.to_string()),
                    self.l_p
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Seeded search on the original ML form.
    Baseline,
    /// Seeded search on the split-detection form.
    Split,
    /// Seeded search on one FSD-reduced subproblem.
    Branch(usize),
    /// Random-initialized search on the original form.
    Random,
}

#[derive(Clone, Debug)]
pub struct TaskSummary {
    pub task: usize,
    pub kind: TaskKind,
    pub rng_seed: u64,
    /// Residual of the task's best candidate.
    pub best_energy: f64,
    pub state: SpinState,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Timing {
    pub preprocess_us: f64,
    pub solve_us: f64,
}

#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub bits: Vec<u8>,
    pub v_hat: Vec<Complex64>,
    /// Offset-inclusive energy of the winner, i.e. `||y - H v_hat||^2`.
    pub energy: f64,
    pub per_task: Vec<TaskSummary>,
    pub timing: Timing,
}

struct Candidate {
    task: usize,
    v: Vec<Complex64>,
    residual: f64,
}

/// Pool candidates and keep the minimum residual; ties resolve to the
/// earliest task so execution order never matters.
fn filter_best(
    inst: &DetectionInstance,
    candidates: Vec<Candidate>,
    per_task: Vec<TaskSummary>,
    preprocess_us: f64,
    started: Instant,
) -> DetectionResult {
    debug_assert!(!candidates.is_empty());
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        let b = &candidates[best];
        if (c.residual, c.task) < (b.residual, b.task) {
            best = i;
        }
    }
    let winner = &candidates[best];
    let bits = inst.spin_mapping().symbols_to_bits(&winner.v);
    DetectionResult {
        bits,
        v_hat: winner.v.clone(),
        energy: winner.residual,
        per_task,
        timing: Timing {
            preprocess_us,
            solve_us: started.elapsed().as_secs_f64() * 1e6,
        },
    }
}

/// Bit-flip multi-state generation: the unmodified seed first, then one
/// state per task with a single spin flipped at a distinct random index.
pub fn bmg_generate(
    seed_state: &SpinState,
    l_p: usize,
    rng_seed: u64,
) -> Result<Vec<SpinState>, EnsembleError> {
    let n_v = seed_state.len();
    if l_p > n_v + 1 {
        return Err(EnsembleError::TooManySeeds {
            requested: l_p,
            n_v,
        });
    }
    let mut rng = stream_rng(rng_seed, &[STREAM_BMG]);
    let mut indices: Vec<usize> = (0..n_v).collect();
    let mut out = Vec::with_capacity(l_p);
    out.push(seed_state.clone());
    for k in 0..l_p.saturating_sub(1) {
        let j = rng.gen_range(k..n_v);
        indices.swap(k, j);
        let mut s = seed_state.clone();
        s.flip(indices[k]);
        out.push(s);
    }
    Ok(out)
}

/// Flip indices for split-form seeds: distinct, drawn round-robin across the
/// layer blocks so the split half of `l_p` divides evenly between them.
fn split_flip_indices(
    model: &IsingModel,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<usize>, EnsembleError> {
    let n_v = model.n_v();
    if count > n_v {
        return Err(EnsembleError::TooManySeeds {
            requested: count + 1,
            n_v,
        });
    }
    let blocks: Vec<(usize, usize)> = match model.mapping() {
        crate::ising::ModelMapping::SplitLayers { blocks, .. } => {
            blocks.iter().map(|b| (b.start, b.len)).collect()
        }
        _ => vec![(0, n_v)],
    };
    let mut rng = stream_rng(rng_seed, &[STREAM_SPLIT_BMG]);
    let mut pools: Vec<Vec<usize>> = blocks
        .iter()
        .map(|&(start, len)| {
            let mut pool: Vec<usize> = (start..start + len).collect();
            // Fisher-Yates so each draw is uniform without repetition.
            for k in (1..pool.len()).rev() {
                let j = rng.gen_range(0..=k);
                pool.swap(k, j);
            }
            pool
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut block = 0usize;
    while out.len() < count {
        let mut advanced = false;
        for probe in 0..pools.len() {
            let b = (block + probe) % pools.len();
            if let Some(idx) = pools[b].pop() {
                out.push(idx);
                block = b + 1;
                advanced = true;
                break;
            }
        }
        if !advanced {
            return Err(EnsembleError::TooManySeeds {
                requested: count + 1,
                n_v,
            });
        }
    }
    Ok(out)
}

fn mmse_solution(
    inst: &DetectionInstance,
    cache: Option<&EqualizerCache>,
) -> Result<LinearSolution, LinearError> {
    match cache {
        Some(c) => c.detect_mmse(inst),
        None => detect_mmse(inst),
    }
}

fn task_seed(cfg: &DetectorConfig, inst: &DetectionInstance, task: usize) -> u64 {
    mix(cfg.rng_seed, &[inst.digest(), task as u64])
}

/// One seeded PT task: pool the seed itself and the best state the engine
/// ever visited, both scored by exact residual.
fn run_seeded_task(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
    model: &IsingModel,
    task: usize,
    kind: TaskKind,
    seed_state: SpinState,
) -> Result<(TaskSummary, Vec<Candidate>), EnsembleError> {
    let rng_seed = task_seed(cfg, inst, task);
    let seed_v = model.decode_symbols(&seed_state)?;
    let seed_candidate = Candidate {
        task,
        residual: inst.residual(&seed_v),
        v: seed_v,
    };
    let pt_cfg = cfg.pt.config(model, rng_seed, PtInit::Seeded(seed_state));
    let out = pt_solve(model, &pt_cfg)?;
    let best_state = out.best_state().clone();
    let best_v = model.decode_symbols(&best_state)?;
    let best_candidate = Candidate {
        task,
        residual: inst.residual(&best_v),
        v: best_v,
    };
    let summary = TaskSummary {
        task,
        kind,
        rng_seed,
        best_energy: seed_candidate.residual.min(best_candidate.residual),
        state: best_state,
    };
    Ok((summary, vec![seed_candidate, best_candidate]))
}

/// X-ResQ: MMSE solution seeds a bit-flip ensemble of PT tasks on the
/// original ML form; the split variant reserves `ceil(l_p/2)` tasks for the
/// split-detection form seeded from the MMSE layers.
pub fn detect_xresq(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
) -> Result<DetectionResult, EnsembleError> {
    detect_xresq_with(inst, cfg, None)
}

pub fn detect_xresq_with(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
    cache: Option<&EqualizerCache>,
) -> Result<DetectionResult, EnsembleError> {
    if !matches!(cfg.strategy, Strategy::XResQ | Strategy::XResQSplit) {
        return Err(EnsembleError::InvalidParallelism(format!(
            "detect_xresq called with strategy {:?}",
            cfg.strategy
        )));
    }
    let started = Instant::now();
    let mmse = mmse_solution(inst, cache)?;
    let mapping = inst.spin_mapping();
    let model = build_ml_ising(inst);
    let mmse_state = mapping.state_of_symbols(&mmse.v_hard)?;

    let split = matches!(cfg.strategy, Strategy::XResQSplit);
    let n_split = if split { cfg.l_p.div_ceil(2) } else { 0 };
    let n_base = cfg.l_p - n_split;

    let base_seeds = bmg_generate(
        &mmse_state,
        n_base,
        mix(cfg.rng_seed, &[inst.digest()]),
    )?;

    // Tasks [0, n_base) run the original form, [n_base, l_p) the split form.
    let split_model;
    let mut plans: Vec<(usize, TaskKind, &IsingModel, SpinState)> = Vec::with_capacity(cfg.l_p);
    if split {
        split_model = build_split_forms(inst, &mmse.v_hard)?;
        let split_seed = split_state_of_symbols(&split_model, &mmse.v_hard)?;
        let flips = split_flip_indices(
            &split_model,
            n_split - 1,
            mix(cfg.rng_seed, &[inst.digest()]),
        )?;
        for (t, seed) in base_seeds.into_iter().enumerate() {
            plans.push((t, TaskKind::Baseline, &model, seed));
        }
        plans.push((n_base, TaskKind::Split, &split_model, split_seed.clone()));
        for (k, &idx) in flips.iter().enumerate() {
            let mut s = split_seed.clone();
            s.flip(idx);
            plans.push((n_base + 1 + k, TaskKind::Split, &split_model, s));
        }
    } else {
        for (t, seed) in base_seeds.into_iter().enumerate() {
            plans.push((t, TaskKind::Baseline, &model, seed));
        }
    }

    let preprocess_us = started.elapsed().as_secs_f64() * 1e6;
    let solve_started = Instant::now();
    let results: Result<Vec<_>, EnsembleError> = plans
        .into_par_iter()
        .map(|(task, kind, m, seed)| run_seeded_task(inst, cfg, m, task, kind, seed))
        .collect();

    let mut per_task = Vec::with_capacity(cfg.l_p);
    let mut candidates = Vec::with_capacity(2 * cfg.l_p);
    for (summary, cands) in results? {
        per_task.push(summary);
        candidates.extend(cands);
    }
    Ok(filter_best(inst, candidates, per_task, preprocess_us, solve_started))
}

/// IoT-ResQ: FSD full expansion decomposes the problem into `|O|^n_fs`
/// subproblems; each branch's reduced model is solved by PT seeded with the
/// branch's greedy completion.
pub fn detect_iotresq(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
) -> Result<DetectionResult, EnsembleError> {
    let Strategy::IoTResQ { n_fs } = cfg.strategy else {
        return Err(EnsembleError::InvalidParallelism(format!(
            "detect_iotresq called with strategy {:?}",
            cfg.strategy
        )));
    };
    cfg.check_against(inst)?;

    let started = Instant::now();
    let plan = FsdPlan::for_instance(inst, n_fs)?;
    let fsd = fsd_detect(inst, &plan)?;
    let mapping = inst.spin_mapping();
    let model = build_ml_ising(inst);
    let expanded_users: Vec<usize> = plan.order[..n_fs].to_vec();
    let preprocess_us = started.elapsed().as_secs_f64() * 1e6;
    let solve_started = Instant::now();

    let results: Result<Vec<_>, EnsembleError> = fsd
        .candidates
        .par_iter()
        .enumerate()
        .map(|(branch, cand)| {
            let full_state = mapping.state_of_symbols(&cand.v)?;
            let mut fixed = Vec::new();
            for &u in &expanded_users {
                for idx in mapping.user_block(u) {
                    fixed.push((idx, full_state.get(idx)));
                }
            }
            let reduced = reduce_ising(&model, &fixed)?;
            let free_seed = SpinState::new(
                (0..model.n_v())
                    .filter(|i| !fixed.iter().any(|&(fi, _)| fi == *i))
                    .map(|i| full_state.get(i))
                    .collect(),
            )?;
            run_seeded_task(inst, cfg, &reduced, branch, TaskKind::Branch(branch), free_seed)
        })
        .collect();

    let mut per_task = Vec::new();
    let mut candidates = Vec::new();
    for (summary, cands) in results? {
        per_task.push(summary);
        candidates.extend(cands);
    }
    Ok(filter_best(inst, candidates, per_task, preprocess_us, solve_started))
}

/// ParaMax-style sample parallelism: `l_p` random-initialized PT tasks on
/// the original form, filtered by energy.
pub fn detect_paramax(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
) -> Result<DetectionResult, EnsembleError> {
    if cfg.strategy != Strategy::ParaMax {
        return Err(EnsembleError::InvalidParallelism(format!(
            "detect_paramax called with strategy {:?}",
            cfg.strategy
        )));
    }
    let started = Instant::now();
    let model = build_ml_ising(inst);
    let preprocess_us = started.elapsed().as_secs_f64() * 1e6;
    let solve_started = Instant::now();

    let results: Result<Vec<_>, EnsembleError> = (0..cfg.l_p)
        .into_par_iter()
        .map(|task| {
            let rng_seed = task_seed(cfg, inst, task);
            let pt_cfg = cfg.pt.config(&model, rng_seed, PtInit::Random);
            let out = pt_solve(&model, &pt_cfg)?;
            let state = out.best_state().clone();
            let v = model.decode_symbols(&state)?;
            let residual = inst.residual(&v);
            Ok((
                TaskSummary {
                    task,
                    kind: TaskKind::Random,
                    rng_seed,
                    best_energy: residual,
                    state,
                },
                vec![Candidate { task, v, residual }],
            ))
        })
        .collect();

    let mut per_task = Vec::new();
    let mut candidates = Vec::new();
    for (summary, cands) in results? {
        per_task.push(summary);
        candidates.extend(cands);
    }
    Ok(filter_best(inst, candidates, per_task, preprocess_us, solve_started))
}

fn direct_result(
    inst: &DetectionInstance,
    v_hat: Vec<Complex64>,
    preprocess_us: f64,
    solve_started: Instant,
) -> DetectionResult {
    let candidates = vec![Candidate {
        task: 0,
        residual: inst.residual(&v_hat),
        v: v_hat,
    }];
    filter_best(inst, candidates, Vec::new(), preprocess_us, solve_started)
}

/// Run whichever detector the config selects.
pub fn detect(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
) -> Result<DetectionResult, EnsembleError> {
    detect_with(inst, cfg, None)
}

pub fn detect_with(
    inst: &DetectionInstance,
    cfg: &DetectorConfig,
    cache: Option<&EqualizerCache>,
) -> Result<DetectionResult, EnsembleError> {
    cfg.check_against(inst)?;
    match cfg.strategy {
        Strategy::XResQ | Strategy::XResQSplit => detect_xresq_with(inst, cfg, cache),
        Strategy::IoTResQ { .. } => detect_iotresq(inst, cfg),
        Strategy::ParaMax => detect_paramax(inst, cfg),
        Strategy::MmseOnly => {
            let started = Instant::now();
            let sol = mmse_solution(inst, cache)?;
            let pre = started.elapsed().as_secs_f64() * 1e6;
            Ok(direct_result(inst, sol.v_hard, pre, Instant::now()))
        }
        Strategy::ZfOnly => {
            let started = Instant::now();
            let sol = detect_zf(inst)?;
            let pre = started.elapsed().as_secs_f64() * 1e6;
            Ok(direct_result(inst, sol.v_hard, pre, Instant::now()))
        }
        Strategy::BruteForce => {
            let started = Instant::now();
            let (v, _) = brute_force_ml_with_budget(inst, cfg.enum_budget)?;
            let pre = started.elapsed().as_secs_f64() * 1e6;
            Ok(direct_result(inst, v, pre, Instant::now()))
        }
    }
}
