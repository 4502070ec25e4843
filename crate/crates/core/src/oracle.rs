//! Ground-truth baselines: exhaustive ML detection and the fixed-complexity
//! sphere decoder (full expansion of the hardest users, greedy
//! interference-cancellation completion of the rest).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::DetectionInstance;

/// Default enumeration budget for exhaustive search (candidate count).
pub const DEFAULT_ENUM_BUDGET: u64 = 1 << 24;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration needs {required} candidates, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },
    #[error("invalid FSD plan: {0}")]
    InvalidPlan(String),
}

/// Exhaustive ML search size `|O|^n_t`, or `None` on overflow.
pub fn enumeration_size(inst: &DetectionInstance) -> Option<u128> {
    (inst.constellation.order() as u128).checked_pow(inst.n_t as u32)
}

/// Exact ML detection by exhaustive enumeration with the default budget.
pub fn brute_force_ml(inst: &DetectionInstance) -> Result<(Vec<Complex64>, f64), OracleError> {
    brute_force_ml_with_budget(inst, DEFAULT_ENUM_BUDGET)
}

/// Exact ML detection: the global minimizer of `||y - H v||^2` over
/// `constellation^n_t`, ties broken toward the lexicographically first
/// candidate (user 0 most significant, points in index order).
pub fn brute_force_ml_with_budget(
    inst: &DetectionInstance,
    budget: u64,
) -> Result<(Vec<Complex64>, f64), OracleError> {
    let required = enumeration_size(inst).unwrap_or(u128::MAX);
    if required > u128::from(budget) {
        return Err(OracleError::BudgetExceeded { required, budget });
    }

    let points = inst.constellation.points();
    let n_t = inst.n_t;
    // Depth-first search sharing partial residuals across candidate prefixes.
    let mut residuals: Vec<DVector<Complex64>> =
        (0..=n_t).map(|_| inst.y.clone()).collect();
    let mut choice = vec![0usize; n_t];
    let mut best_choice = vec![0usize; n_t];
    let mut best_obj = f64::INFINITY;

    fn descend(
        h: &DMatrix<Complex64>,
        points: &[Complex64],
        depth: usize,
        n_t: usize,
        residuals: &mut [DVector<Complex64>],
        choice: &mut [usize],
        best_choice: &mut [usize],
        best_obj: &mut f64,
    ) {
        if depth == n_t {
            let obj = residuals[depth].norm_squared();
            if obj < *best_obj {
                *best_obj = obj;
                best_choice.copy_from_slice(choice);
            }
            return;
        }
        let col = h.column(depth);
        for (k, &p) in points.iter().enumerate() {
            choice[depth] = k;
            let (head, tail) = residuals.split_at_mut(depth + 1);
            tail[0].copy_from(&head[depth]);
            tail[0].axpy(-p, &col, Complex64::new(1.0, 0.0));
            descend(h, points, depth + 1, n_t, residuals, choice, best_choice, best_obj);
        }
    }

    descend(
        &inst.h,
        points,
        0,
        n_t,
        &mut residuals,
        &mut choice,
        &mut best_choice,
        &mut best_obj,
    );

    let v_ml: Vec<Complex64> = best_choice.iter().map(|&k| points[k]).collect();
    Ok((v_ml, best_obj))
}

/// Fixed-complexity sphere decoder plan: how many users get full symbol
/// expansion and in which order users are detected.
#[derive(Clone, Debug)]
pub struct FsdPlan {
    pub n_fs: usize,
    /// Detection order: the first `n_fs` users are fully expanded, the rest
    /// completed greedily.
    pub order: Vec<usize>,
    /// True when rank deficiency forced a regularized ordering step.
    pub regularized: bool,
}

impl FsdPlan {
    /// Iterative norm ordering: expansion levels take the user with the
    /// worst post-equalization noise amplification (largest diagonal of the
    /// current ZF Gram inverse), greedy levels the most reliable one.
    pub fn for_instance(inst: &DetectionInstance, n_fs: usize) -> Result<Self, OracleError> {
        if n_fs > inst.n_t {
            return Err(OracleError::InvalidPlan(format!(
                "n_fs={n_fs} exceeds user count {}",
                inst.n_t
            )));
        }
        let mut remaining: Vec<usize> = (0..inst.n_t).collect();
        let mut order = Vec::with_capacity(inst.n_t);
        let mut regularized = false;
        for level in 0..inst.n_t {
            let (diag, fell_back) = gram_inverse_diag(&inst.h, &remaining, inst.snr_linear());
            regularized |= fell_back;
            let pick = if level < n_fs {
                argmax(&diag)
            } else {
                argmin(&diag)
            };
            order.push(remaining.remove(pick));
        }
        Ok(FsdPlan {
            n_fs,
            order,
            regularized,
        })
    }

    pub fn subcandidate_count(&self, constellation_order: usize) -> u128 {
        (constellation_order as u128).pow(self.n_fs as u32)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn submatrix(h: &DMatrix<Complex64>, users: &[usize]) -> DMatrix<Complex64> {
    let mut sub = DMatrix::zeros(h.nrows(), users.len());
    for (k, &u) in users.iter().enumerate() {
        sub.set_column(k, &h.column(u));
    }
    sub
}

/// Diagonal of `(H_R^H H_R)^-1` over the remaining columns; falls back to an
/// MMSE-regularized Gram when the plain inverse fails.
fn gram_inverse_diag(
    h: &DMatrix<Complex64>,
    users: &[usize],
    snr_linear: f64,
) -> (Vec<f64>, bool) {
    let sub = submatrix(h, users);
    let gram = sub.adjoint() * &sub;
    if let Some(inv) = gram.clone().try_inverse() {
        return ((0..users.len()).map(|i| inv[(i, i)].re).collect(), false);
    }
    let mut reg = gram;
    let ridge = if snr_linear.is_finite() && snr_linear > 0.0 {
        1.0 / snr_linear
    } else {
        1e-9
    };
    for i in 0..users.len() {
        reg[(i, i)] += Complex64::new(ridge, 0.0);
    }
    let inv = reg
        .try_inverse()
        .expect("ridge-regularized Gram is positive definite");
    ((0..users.len()).map(|i| inv[(i, i)].re).collect(), true)
}

/// One FSD branch: the fully expanded point indices, the completed symbol
/// vector, and its exact objective.
#[derive(Clone, Debug)]
pub struct FsdCandidate {
    pub expanded: Vec<usize>,
    pub v: Vec<Complex64>,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct FsdResult {
    /// All `|O|^n_fs` completions, in branch-index order.
    pub candidates: Vec<FsdCandidate>,
    /// True when any SIC step needed MMSE regularization.
    pub regularized: bool,
}

impl FsdResult {
    /// Minimum-objective candidate; ties resolve to the earliest branch.
    pub fn best(&self) -> &FsdCandidate {
        let mut best = 0;
        for (i, c) in self.candidates.iter().enumerate() {
            if c.objective < self.candidates[best].objective {
                best = i;
            }
        }
        &self.candidates[best]
    }
}

/// Run the FSD: full expansion over the plan's first `n_fs` users, then
/// greedy ZF-SIC completion per branch (nulling vectors are shared across
/// branches since the detection order is fixed).
pub fn fsd_detect(inst: &DetectionInstance, plan: &FsdPlan) -> Result<FsdResult, OracleError> {
    if plan.order.len() != inst.n_t {
        return Err(OracleError::InvalidPlan(format!(
            "order has {} entries for {} users",
            plan.order.len(),
            inst.n_t
        )));
    }
    let mut seen = vec![false; inst.n_t];
    for &u in &plan.order {
        if u >= inst.n_t || seen[u] {
            return Err(OracleError::InvalidPlan("order is not a permutation".into()));
        }
        seen[u] = true;
    }

    let points = inst.constellation.points();
    let order_len = inst.constellation.order();
    let branches = plan.subcandidate_count(order_len);
    if branches > u128::from(DEFAULT_ENUM_BUDGET) {
        return Err(OracleError::BudgetExceeded {
            required: branches,
            budget: DEFAULT_ENUM_BUDGET,
        });
    }
    let branches = branches as u64;

    // Per greedy level: the nulling row of the user detected at that level,
    // from the pseudo-inverse over the still-undetected columns.
    let mut regularized = false;
    let mut nulling: Vec<DVector<Complex64>> = Vec::new();
    for level in plan.n_fs..inst.n_t {
        let remaining: Vec<usize> = plan.order[level..].to_vec();
        let sub = submatrix(&inst.h, &remaining);
        let gram = sub.adjoint() * &sub;
        let inv = match gram.clone().try_inverse() {
            Some(inv) => inv,
            None => {
                regularized = true;
                let ridge = if inst.snr_linear().is_finite() && inst.snr_linear() > 0.0 {
                    1.0 / inst.snr_linear()
                } else {
                    1e-9
                };
                let mut reg = gram;
                for i in 0..remaining.len() {
                    reg[(i, i)] += Complex64::new(ridge, 0.0);
                }
                reg.try_inverse()
                    .expect("ridge-regularized Gram is positive definite")
            }
        };
        let pinv = inv * sub.adjoint();
        // This level always detects remaining[0] = plan.order[level].
        nulling.push(pinv.row(0).transpose().conjugate());
    }

    let mut candidates = Vec::with_capacity(branches as usize);
    for branch in 0..branches {
        // Branch index decodes to expanded point indices, first expanded
        // user most significant.
        let mut expanded = Vec::with_capacity(plan.n_fs);
        let mut rem = branch;
        for k in (0..plan.n_fs).rev() {
            let base = (order_len as u64).pow(k as u32);
            expanded.push((rem / base) as usize);
            rem %= base;
        }

        let mut v = vec![Complex64::new(0.0, 0.0); inst.n_t];
        let mut r = inst.y.clone();
        for (level, &pt_idx) in expanded.iter().enumerate() {
            let user = plan.order[level];
            let p = points[pt_idx];
            v[user] = p;
            r.axpy(-p, &inst.h.column(user), Complex64::new(1.0, 0.0));
        }
        for level in plan.n_fs..inst.n_t {
            let user = plan.order[level];
            let w = &nulling[level - plan.n_fs];
            let soft = w.dotc(&r);
            let (_, p) = inst.constellation.slice(soft);
            v[user] = p;
            r.axpy(-p, &inst.h.column(user), Complex64::new(1.0, 0.0));
        }
        candidates.push(FsdCandidate {
            expanded,
            v,
            objective: r.norm_squared(),
        });
    }

    Ok(FsdResult {
        candidates,
        regularized,
    })
}
