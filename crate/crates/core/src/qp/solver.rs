//! Dual active-set method (Goldfarb–Idnani) followed by an exact KKT solve on
//! the identified active set.
//!
//! The dual method needs positive curvature in every coordinate. A zero-weight
//! slack coordinate gets a small proximal term instead; the proximal centre
//! is moved to the previous iterate until the polished point certifies. In
//! practice the first pass already finds the right active set.

use nalgebra::{DMatrix, DVector};

use super::{Constraint, QProblem, QSolution, QpStatus, KKT_TOL, PRIMAL_FEASIBILITY_TOL};

/// Normalized violation below which a row counts as satisfied inside the dual loop.
const SELECT_TOL: f64 = 1e-13;
/// Normalized violation of a dependent row still treated as satisfied.
const DEGENERATE_TOL: f64 = 1e-8;
const PROXIMAL_WEIGHT: f64 = 1e-6;
const MAX_PROXIMAL_ROUNDS: usize = 60;

/// Solves `problem` from scratch. Pure and deterministic.
///
/// Rows are normalized to unit length first, so the iterates do not depend
/// on how each constraint is scaled, and the certificate is checked there.
/// The returned multipliers and residual refer to `problem` as given.
pub fn solve(problem: &QProblem) -> QSolution {
    let (normalized, norms) = normalize(problem);
    restore(problem, solve_normalized(&normalized), &norms)
}

fn normalize(problem: &QProblem) -> (QProblem, Vec<f64>) {
    let norms: Vec<f64> = problem.constraints().iter().map(|c| c.row.norm()).collect();
    let rows = problem
        .constraints()
        .iter()
        .zip(&norms)
        .map(|(c, &norm)| {
            if norm > 0.0 {
                Constraint::new(&c.row / norm, c.bound / norm)
            } else {
                c.clone()
            }
        })
        .collect();
    let normalized = QProblem::new(
        problem.cost_diagonal().clone(),
        problem.cost_linear().clone(),
        rows,
    )
    .expect("row scaling keeps a valid problem valid");
    (normalized, norms)
}

fn restore(problem: &QProblem, mut solution: QSolution, norms: &[f64]) -> QSolution {
    if solution.status == QpStatus::Infeasible {
        return solution;
    }
    for (mu, &norm) in solution.multipliers.iter_mut().zip(norms) {
        if norm > 0.0 {
            *mu /= norm;
        }
    }
    solution.kkt_residual = problem.kkt_residual(&solution.x_star, &solution.multipliers);
    solution
}

fn solve_normalized(problem: &QProblem) -> QSolution {
    let free = problem.free_coordinate();
    let m = problem.constraints().len();
    let scale = problem.cost_diagonal().amax().max(f64::MIN_POSITIVE);
    let prox = PROXIMAL_WEIGHT * scale;

    let mut curvature = problem.cost_diagonal().clone();
    if let Some(j) = free {
        curvature[j] = prox;
    }
    let mut linear = problem.cost_linear().clone();
    let mut last = None;

    for _ in 0..MAX_PROXIMAL_ROUNDS {
        let (x, active) = match dual_active_set(&curvature, &linear, problem) {
            DualOutcome::Solved { x, active } => (x, active),
            DualOutcome::Infeasible { x } => return infeasible(problem, x),
            DualOutcome::Stalled { x, active } => (x, active),
        };
        if let Some(solution) = polish(problem, &active) {
            if solution.is_optimal() {
                return solution;
            }
        }
        let Some(j) = free else {
            last = Some(uncertified(problem, x, m));
            break;
        };
        linear[j] = problem.cost_linear()[j] - prox * x[j];
        last = Some(uncertified(problem, x, m));
    }
    last.unwrap_or_else(|| uncertified(problem, DVector::zeros(problem.dimension()), m))
}

/// Solver that remembers the previous active set and tries it first.
///
/// Keeps no other state; a warm result is only returned when it passes the
/// same KKT certificate as a cold solve, so both agree up to round-off.
/// Not meant to be shared across threads.
#[derive(Debug, Clone, Default)]
pub struct Solver {
    previous_active: Option<Vec<usize>>,
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, problem: &QProblem) -> QSolution {
        let (normalized, norms) = normalize(problem);
        if let Some(active) = &self.previous_active {
            let m = problem.constraints().len();
            if active.iter().all(|&j| j < m) {
                if let Some(solution) = polish(&normalized, active) {
                    if solution.is_optimal() {
                        return restore(problem, solution, &norms);
                    }
                }
            }
        }
        let solution = restore(problem, solve_normalized(&normalized), &norms);
        self.previous_active = solution.is_optimal().then(|| solution.active_set.clone());
        solution
    }

    pub fn reset(&mut self) {
        self.previous_active = None;
    }
}

enum DualOutcome {
    Solved { x: DVector<f64>, active: Vec<usize> },
    Infeasible { x: DVector<f64> },
    Stalled { x: DVector<f64>, active: Vec<usize> },
}

fn dual_active_set(
    curvature: &DVector<f64>,
    linear: &DVector<f64>,
    problem: &QProblem,
) -> DualOutcome {
    let constraints = problem.constraints();
    let n = curvature.len();
    let m = constraints.len();
    let h_inv = curvature.map(|d| 1.0 / d);
    let norms: Vec<f64> = constraints.iter().map(|c| c.row.norm()).collect();

    let mut x = -linear.component_mul(&h_inv);
    for (c, &norm) in constraints.iter().zip(&norms) {
        if norm == 0.0 && c.bound < -PRIMAL_FEASIBILITY_TOL {
            return DualOutcome::Infeasible { x };
        }
    }

    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut mu: Vec<f64> = Vec::with_capacity(n);

    for _ in 0..(8 * (n + m) + 32) {
        let mut entering = None;
        let mut worst = SELECT_TOL;
        for (j, c) in constraints.iter().enumerate() {
            if norms[j] == 0.0 || active.contains(&j) {
                continue;
            }
            let s = c.violation(&x) / norms[j];
            if s > worst {
                worst = s;
                entering = Some(j);
            }
        }
        let Some(p) = entering else {
            return DualOutcome::Solved { x, active };
        };

        let a_p = &constraints[p].row;
        let mut mu_p = 0.0;
        let mut added = false;
        for _ in 0..(n + m + 2) {
            let k = active.len();
            let normals = DMatrix::from_fn(n, k, |i, col| constraints[active[col]].row[i]);
            let r = if k == 0 {
                DVector::zeros(0)
            } else {
                let scaled = DMatrix::from_fn(n, k, |i, col| h_inv[i] * normals[(i, col)]);
                let gram = normals.transpose() * &scaled;
                let rhs = scaled.transpose() * a_p;
                match gram.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => match gram.lu().solve(&rhs) {
                        Some(r) => r,
                        None => return DualOutcome::Stalled { x, active },
                    },
                }
            };
            let residual = a_p - &normals * &r;
            let step = -residual.component_mul(&h_inv);
            let descent = -a_p.dot(&step);
            let dependent = descent <= 0.0 || residual.amax() <= 1e-9 * norms[p];

            let full = if dependent {
                f64::INFINITY
            } else {
                constraints[p].violation(&x).max(0.0) / descent
            };
            let mut partial = f64::INFINITY;
            let mut leaving = None;
            for (i, &ri) in r.iter().enumerate() {
                if ri > 1e-14 {
                    let t = mu[i] / ri;
                    if t < partial {
                        partial = t;
                        leaving = Some(i);
                    }
                }
            }

            if full.is_infinite() && partial.is_infinite() {
                // a dependent row that is only violated by round-off marks a
                // degenerate vertex; the polish step decides
                if constraints[p].violation(&x) / norms[p] <= DEGENERATE_TOL {
                    return DualOutcome::Stalled { x, active };
                }
                return DualOutcome::Infeasible { x };
            }
            if full <= partial {
                x.axpy(full, &step, 1.0);
                for (mi, ri) in mu.iter_mut().zip(r.iter()) {
                    *mi -= full * ri;
                }
                active.push(p);
                mu.push(mu_p + full);
                added = true;
                break;
            }
            if !dependent {
                x.axpy(partial, &step, 1.0);
            }
            for (mi, ri) in mu.iter_mut().zip(r.iter()) {
                *mi -= partial * ri;
            }
            mu_p += partial;
            let l = leaving.expect("finite partial step has a leaving row");
            active.remove(l);
            mu.remove(l);
        }
        if !added {
            return DualOutcome::Stalled { x, active };
        }
    }
    DualOutcome::Stalled { x, active }
}

/// Solves the equality-constrained KKT system for `active` exactly and
/// certifies the result against the full problem.
fn polish(problem: &QProblem, active: &[usize]) -> Option<QSolution> {
    let n = problem.dimension();
    let k = active.len();
    let constraints = problem.constraints();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    for i in 0..n {
        kkt[(i, i)] = problem.cost_diagonal()[i];
        rhs[i] = -problem.cost_linear()[i];
    }
    for (col, &j) in active.iter().enumerate() {
        for i in 0..n {
            let a = constraints[j].row[i];
            kkt[(i, n + col)] = a;
            kkt[(n + col, i)] = a;
        }
        rhs[n + col] = constraints[j].bound;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // one step of iterative refinement
    if let Some(correction) = lu.solve(&(&rhs - &kkt * &sol)) {
        sol += correction;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut multipliers = DVector::zeros(constraints.len());
    for (col, &j) in active.iter().enumerate() {
        multipliers[j] = sol[n + col];
    }
    let kkt_residual = problem.kkt_residual(&x, &multipliers);
    // relative to the size of the solution, rows being unit length here
    let scale = 1.0 + x.amax();
    let status = if kkt_residual <= KKT_TOL * scale
        && problem.max_violation(&x) <= PRIMAL_FEASIBILITY_TOL * scale
    {
        QpStatus::Optimal
    } else {
        QpStatus::Uncertified
    };
    let mut active_set = active.to_vec();
    active_set.sort_unstable();
    Some(QSolution {
        objective: problem.objective(&x),
        x_star: x,
        multipliers,
        active_set,
        kkt_residual,
        status,
    })
}

fn infeasible(problem: &QProblem, x: DVector<f64>) -> QSolution {
    QSolution {
        objective: problem.objective(&x),
        multipliers: DVector::zeros(problem.constraints().len()),
        x_star: x,
        active_set: Vec::new(),
        kkt_residual: f64::INFINITY,
        status: QpStatus::Infeasible,
    }
}

fn uncertified(problem: &QProblem, x: DVector<f64>, m: usize) -> QSolution {
    let multipliers = DVector::zeros(m);
    QSolution {
        objective: problem.objective(&x),
        kkt_residual: problem.kkt_residual(&x, &multipliers),
        x_star: x,
        multipliers,
        active_set: Vec::new(),
        status: QpStatus::Uncertified,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::oracle::{brute_force_oracle, enumerate_active_sets};
    use crate::qp::Constraint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn projection_onto_half_line() {
        let p = QProblem::new(
            dv(&[2.0]),
            dv(&[0.0]),
            vec![Constraint::new(dv(&[1.0]), -2.0)],
        )
        .unwrap();
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.x_star[0] + 2.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!(s.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let p = QProblem::new(
            dv(&[2.0]),
            dv(&[0.0]),
            vec![
                Constraint::new(dv(&[1.0]), -1.0),
                Constraint::new(dv(&[-1.0]), -1.0),
            ],
        )
        .unwrap();
        assert_eq!(solve(&p).status, QpStatus::Infeasible);
    }

    #[test]
    fn zero_row_with_negative_bound_is_infeasible() {
        let p = QProblem::new(
            dv(&[2.0]),
            dv(&[0.0]),
            vec![Constraint::new(dv(&[0.0]), -1.0)],
        )
        .unwrap();
        assert_eq!(solve(&p).status, QpStatus::Infeasible);
        let ok = QProblem::new(
            dv(&[2.0]),
            dv(&[0.0]),
            vec![Constraint::new(dv(&[0.0]), 1.0)],
        )
        .unwrap();
        assert!(solve(&ok).is_optimal());
    }

    /// min ‖V‖² + kγ with the relaxed CLF row and γ ≥ 0, error (0.1, 0, …).
    /// KKT by hand: μ_clf = k, V = −(k/2)e, γ = (λ − k)/2 ‖e‖².
    #[test]
    fn clf_only_controller_problem() {
        let mut clf = DVector::zeros(7);
        clf[0] = 0.1;
        clf[6] = -1.0;
        let mut slack = DVector::zeros(7);
        slack[6] = -1.0;
        let mut diag = DVector::from_element(7, 2.0);
        diag[6] = 0.0;
        let mut lin = DVector::zeros(7);
        lin[6] = 1.0;
        let p = QProblem::new(
            diag,
            lin,
            vec![
                Constraint::new(clf, -0.5 * 10.0 * 0.01),
                Constraint::new(slack, 0.0),
            ],
        )
        .unwrap();
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.x_star[0] + 0.05).abs() < 1e-12);
        assert!((s.x_star[6] - 0.045).abs() < 1e-12);
        assert!(s.x_star.rows(1, 5).amax() < 1e-14);

        // brute force over (vx, γ) with the other coordinates fixed at zero
        let mut bounds = vec![(0.0, 0.0); 7];
        bounds[0] = (-0.1, 0.0);
        bounds[6] = (0.0, 0.1);
        let grid = brute_force_oracle(&p, 1e-3, &bounds).unwrap();
        assert!((grid[0] + 0.05).abs() <= 2e-3);
        assert!((grid[6] - 0.045).abs() <= 2e-3);
    }

    #[test]
    fn warm_start_matches_cold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut solver = Solver::new();
        let base = random_feasible(&mut rng, 4, 6, false);
        for step in 0..200 {
            let constraints = base
                .constraints()
                .iter()
                .map(|c| {
                    Constraint::new(c.row.clone(), c.bound + 1e-3 * ((step as f64) * 0.37).sin())
                })
                .collect();
            let p = QProblem::new(
                base.cost_diagonal().clone(),
                base.cost_linear().clone(),
                constraints,
            )
            .unwrap();
            let warm = solver.solve(&p);
            let cold = solve(&p);
            assert_eq!(warm.status, cold.status);
            assert!((warm.x_star - cold.x_star).amax() < 1e-9);
        }
    }

    /// Random problem whose feasible set contains a known interior-or-boundary point.
    pub(crate) fn random_feasible(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
        with_slack: bool,
    ) -> QProblem {
        let mut diag = DVector::from_fn(n, |_, _| rng.random_range(0.2..5.0));
        let mut lin = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let mut anchor: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if with_slack {
            anchor[n - 1] = anchor[n - 1].abs();
        }
        let mut constraints: Vec<Constraint> = (0..m)
            .map(|_| {
                let row = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
                let margin = if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                };
                let bound = row.dot(&anchor) + margin;
                Constraint::new(row, bound)
            })
            .collect();
        if with_slack {
            let j = n - 1;
            diag[j] = 0.0;
            lin[j] = rng.random_range(0.1..3.0);
            let mut row = DVector::zeros(n);
            row[j] = -1.0;
            constraints.push(Constraint::new(row, 0.0));
        }
        QProblem::new(diag, lin, constraints).unwrap()
    }

    #[test]
    fn random_instances_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..2000 {
            let n = 1 + i % 4;
            let m = rng.random_range(0..=6);
            let p = random_feasible(&mut rng, n, m, i % 3 == 0 && n > 1);
            let s = solve(&p);
            assert!(s.is_optimal(), "instance {i}: {:?} {p:?}", s.status);
            let (_, best) = enumerate_active_sets(&p).expect("feasible by construction");
            assert!(
                (s.objective - best).abs() <= 1e-6,
                "instance {i}: {} vs {best}",
                s.objective
            );
        }
    }

    proptest! {
        #[test]
        fn scaling_rows_does_not_move_the_optimum(seed in 0u64..5000, scales in prop::collection::vec(1e-2..100.0f64, 8)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_feasible(&mut rng, 3, 5, seed % 2 == 0);
            let scaled = QProblem::new(
                p.cost_diagonal().clone(),
                p.cost_linear().clone(),
                p.constraints().iter().zip(&scales).map(|(c, s)| Constraint::new(&c.row * *s, c.bound * s)).collect(),
            ).unwrap();
            let a = solve(&p);
            let b = solve(&scaled);
            prop_assert!(a.is_optimal() && b.is_optimal());
            prop_assert!((a.x_star - b.x_star).amax() < 1e-9);
        }

        #[test]
        fn repeated_solves_are_bit_identical(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_feasible(&mut rng, 4, 6, seed % 2 == 1);
            let a = solve(&p);
            let b = solve(&p);
            prop_assert_eq!(a, b);
        }
    }
}
