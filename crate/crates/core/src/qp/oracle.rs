//! Reference minimizers used to check [`solve`](super::solve). Both are
//! deliberately naive and share no code with the active-set solver.

use nalgebra::{DMatrix, DVector};
use subsets::Subsets;
use thiserror::Error;

use super::QProblem;

/// Feasibility slack for grid points and enumerated candidates.
const ORACLE_FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("no grid point satisfies every constraint")]
    Infeasible,
    #[error("grid search supports at most 3 free coordinates, got {0}")]
    TooManyFreeCoordinates(usize),
    #[error("expected {expected} search intervals, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid step must be positive")]
    BadStep,
}

/// Exhaustive grid search over the box `bounds`. Coordinates whose interval
/// is degenerate (`lo == hi`) are held fixed; at most three may vary.
pub fn brute_force_oracle(
    problem: &QProblem,
    grid_step: f64,
    bounds: &[(f64, f64)],
) -> Result<DVector<f64>, OracleError> {
    let n = problem.dimension();
    if bounds.len() != n {
        return Err(OracleError::DimensionMismatch {
            expected: n,
            found: bounds.len(),
        });
    }
    if grid_step.is_nan() || grid_step <= 0.0 {
        return Err(OracleError::BadStep);
    }
    let free: Vec<usize> = (0..n).filter(|&j| bounds[j].1 > bounds[j].0).collect();
    if free.len() > 3 {
        return Err(OracleError::TooManyFreeCoordinates(free.len()));
    }
    let counts: Vec<usize> = free
        .iter()
        .map(|&j| ((bounds[j].1 - bounds[j].0) / grid_step + 1e-9).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();

    let mut x = DVector::from_iterator(n, bounds.iter().map(|b| b.0));
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mut flat in 0..total {
        for (slot, &j) in free.iter().enumerate() {
            let idx = flat % counts[slot];
            flat /= counts[slot];
            x[j] = bounds[j].0 + idx as f64 * grid_step;
        }
        if problem.max_violation(&x) > ORACLE_FEAS_TOL {
            continue;
        }
        let f = problem.objective(&x);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x.clone()));
        }
    }
    best.map(|(_, x)| x).ok_or(OracleError::Infeasible)
}

/// Exact minimizer by trying every subset of at most `n` constraints as the
/// active set and keeping the best candidate that satisfies the KKT sign
/// conditions. Returns `None` when no candidate qualifies (infeasible problem).
pub fn enumerate_active_sets(problem: &QProblem) -> Option<(DVector<f64>, f64)> {
    let n = problem.dimension();
    let constraints = problem.constraints();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for subset in Subsets::new(constraints.len(), n) {
        let k = subset.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        for i in 0..n {
            kkt[(i, i)] = problem.cost_diagonal()[i];
            rhs[i] = -problem.cost_linear()[i];
        }
        for (col, &j) in subset.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + col)] = constraints[j].row[i];
                kkt[(n + col, i)] = constraints[j].row[i];
            }
            rhs[n + col] = constraints[j].bound;
        }
        // full-rank check through the SVD so near-singular systems are skipped
        let svd = kkt.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax == 0.0 || smin < 1e-10 * smax {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let dual_ok = (0..k).all(|col| sol[n + col] >= -ORACLE_FEAS_TOL);
        if !dual_ok || problem.max_violation(&x) > ORACLE_FEAS_TOL {
            continue;
        }
        let f = problem.objective(&x);
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    best
}

mod subsets {
    /// All subsets of `0..m` with at most `max_size` elements, in increasing
    /// bitmask order.
    pub struct Subsets {
        m: usize,
        max_size: usize,
        next: u32,
    }

    impl Subsets {
        pub fn new(m: usize, max_size: usize) -> Self {
            Self {
                m,
                max_size,
                next: 0,
            }
        }
    }

    impl Iterator for Subsets {
        type Item = Vec<usize>;
        fn next(&mut self) -> Option<Vec<usize>> {
            while (self.next as u64) < (1u64 << self.m) {
                let mask = self.next;
                self.next += 1;
                if mask.count_ones() as usize <= self.max_size {
                    return Some((0..self.m).filter(|i| mask & (1 << i) != 0).collect());
                }
            }
            None
        }
    }
}
