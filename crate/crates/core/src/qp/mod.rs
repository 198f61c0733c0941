//! Small dense convex QPs of the form
//!
//! ```text
//! minimize   ½ xᵀ diag(d) x + cᵀ x
//! subject to aⱼ·x ≤ bⱼ   for every constraint j
//! ```
//!
//! with `n ≤ 8` variables and at most 16 inequality rows. Every entry of `d`
//! is positive except for at most one "slack" coordinate, which may carry zero
//! curvature as long as it has a positive linear cost and some row bounds it
//! from below.

pub mod oracle;
mod solver;

pub use solver::{solve, Solver};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const MAX_VARIABLES: usize = 8;
pub const MAX_CONSTRAINTS: usize = 16;

/// Largest tolerated constraint violation of a returned optimum.
pub const PRIMAL_FEASIBILITY_TOL: f64 = 1e-10;
/// Largest tolerated KKT residual of a returned optimum.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("problem has {0} variables, at most {MAX_VARIABLES} are supported")]
    TooManyVariables(usize),
    #[error("problem has {0} constraints, at most {MAX_CONSTRAINTS} are supported")]
    TooManyConstraints(usize),
    #[error("problem has no variables")]
    Empty,
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("cost weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("only one coordinate may have zero cost weight, found {0}")]
    TooManyFreeCoordinates(usize),
    #[error(
        "zero-weight coordinate {0} needs a positive linear cost and a row bounding it from below"
    )]
    UnboundedCoordinate(usize),
}

/// One inequality `row · x ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub row: DVector<f64>,
    pub bound: f64,
}

impl Constraint {
    pub fn new(row: DVector<f64>, bound: f64) -> Self {
        Self { row, bound }
    }

    /// `row · x − bound`; positive means violated.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        self.row.dot(x) - self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QProblem {
    cost_diagonal: DVector<f64>,
    cost_linear: DVector<f64>,
    constraints: Vec<Constraint>,
}

impl QProblem {
    pub fn new(
        cost_diagonal: DVector<f64>,
        cost_linear: DVector<f64>,
        constraints: Vec<Constraint>,
    ) -> Result<Self, QpError> {
        let n = cost_diagonal.len();
        if n == 0 {
            return Err(QpError::Empty);
        }
        if n > MAX_VARIABLES {
            return Err(QpError::TooManyVariables(n));
        }
        if constraints.len() > MAX_CONSTRAINTS {
            return Err(QpError::TooManyConstraints(constraints.len()));
        }
        if cost_linear.len() != n {
            return Err(QpError::DimensionMismatch {
                what: "cost_linear",
                expected: n,
                found: cost_linear.len(),
            });
        }
        for c in &constraints {
            if c.row.len() != n {
                return Err(QpError::DimensionMismatch {
                    what: "constraint row",
                    expected: n,
                    found: c.row.len(),
                });
            }
            if !c.bound.is_finite() || c.row.iter().any(|v| !v.is_finite()) {
                return Err(QpError::NonFinite("constraints"));
            }
        }
        if cost_diagonal
            .iter()
            .chain(cost_linear.iter())
            .any(|v| !v.is_finite())
        {
            return Err(QpError::NonFinite("cost"));
        }
        if let Some((index, &value)) = cost_diagonal.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(QpError::NegativeWeight { index, value });
        }
        let free: Vec<usize> = (0..n).filter(|&j| cost_diagonal[j] == 0.0).collect();
        if free.len() > 1 {
            return Err(QpError::TooManyFreeCoordinates(free.len()));
        }
        if let Some(&j) = free.first() {
            let bounded_below = constraints.iter().any(|c| c.row[j] < 0.0);
            if cost_linear[j] <= 0.0 || !bounded_below {
                return Err(QpError::UnboundedCoordinate(j));
            }
        }
        Ok(Self {
            cost_diagonal,
            cost_linear,
            constraints,
        })
    }

    pub fn dimension(&self) -> usize {
        self.cost_diagonal.len()
    }

    pub fn cost_diagonal(&self) -> &DVector<f64> {
        &self.cost_diagonal
    }

    pub fn cost_linear(&self) -> &DVector<f64> {
        &self.cost_linear
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Index of the zero-curvature coordinate, if any.
    pub fn free_coordinate(&self) -> Option<usize> {
        self.cost_diagonal.iter().position(|&d| d == 0.0)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.component_mul(&self.cost_diagonal).dot(x) + self.cost_linear.dot(x)
    }

    /// Largest constraint violation at `x`, zero when feasible.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max)
    }

    /// Max-norm KKT residual of a primal/dual pair: stationarity, primal and
    /// dual feasibility, and complementary slackness.
    pub fn kkt_residual(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
        let mut gradient = x.component_mul(&self.cost_diagonal) + &self.cost_linear;
        let mut residual: f64 = 0.0;
        for (c, &mu) in self.constraints.iter().zip(multipliers.iter()) {
            gradient.axpy(mu, &c.row, 1.0);
            let s = c.violation(x);
            residual = residual.max(s).max(-mu).max((mu * s).abs());
        }
        residual.max(gradient.amax())
    }

    /// Constraint matrix with one row per constraint.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let n = self.dimension();
        DMatrix::from_fn(self.constraints.len(), n, |i, j| self.constraints[i].row[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    /// Iteration budget exhausted without a certified point.
    Uncertified,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Uncertified => "uncertified",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSolution {
    pub x_star: DVector<f64>,
    /// One multiplier per constraint, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub status: QpStatus,
}

impl QSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn rejects_malformed_problems() {
        assert_eq!(QProblem::new(dv(&[]), dv(&[]), vec![]), Err(QpError::Empty));
        assert!(matches!(
            QProblem::new(dv(&[1.0, 1.0]), dv(&[0.0]), vec![]),
            Err(QpError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            QProblem::new(
                dv(&[1.0]),
                dv(&[0.0]),
                vec![Constraint::new(dv(&[1.0, 2.0]), 0.0)]
            ),
            Err(QpError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            QProblem::new(dv(&[1.0; 9]), dv(&[0.0; 9]), vec![]),
            Err(QpError::TooManyVariables(9))
        ));
        let many = vec![Constraint::new(dv(&[1.0]), 1.0); 17];
        assert_eq!(
            QProblem::new(dv(&[1.0]), dv(&[0.0]), many),
            Err(QpError::TooManyConstraints(17))
        );
        assert!(matches!(
            QProblem::new(dv(&[-1.0]), dv(&[0.0]), vec![]),
            Err(QpError::NegativeWeight { .. })
        ));
        assert_eq!(
            QProblem::new(dv(&[0.0, 0.0]), dv(&[1.0, 1.0]), vec![]),
            Err(QpError::TooManyFreeCoordinates(2))
        );
        // slack without a lower bound is unbounded below
        assert_eq!(
            QProblem::new(dv(&[2.0, 0.0]), dv(&[0.0, 1.0]), vec![]),
            Err(QpError::UnboundedCoordinate(1))
        );
        assert!(QProblem::new(
            dv(&[2.0, 0.0]),
            dv(&[0.0, 1.0]),
            vec![Constraint::new(dv(&[0.0, -1.0]), 0.0)]
        )
        .is_ok());
        assert_eq!(
            QProblem::new(dv(&[f64::NAN]), dv(&[0.0]), vec![]),
            Err(QpError::NonFinite("cost"))
        );
    }

    #[test]
    fn kkt_residual_of_known_optimum() {
        // min x² s.t. x ≤ −2: x = −2, μ = 4
        let p = QProblem::new(
            dv(&[2.0]),
            dv(&[0.0]),
            vec![Constraint::new(dv(&[1.0]), -2.0)],
        )
        .unwrap();
        assert_eq!(p.kkt_residual(&dv(&[-2.0]), &dv(&[4.0])), 0.0);
        assert!(p.kkt_residual(&dv(&[-2.0]), &dv(&[0.0])) > 1.0);
        assert_eq!(p.max_violation(&dv(&[-1.0])), 1.0);
    }
}
