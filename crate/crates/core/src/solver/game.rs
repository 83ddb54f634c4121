//! LP solving through a symmetric matrix game and Brown's fictitious play.
//!
//! For `max c.x  s.t.  A x <= b, x >= 0` the skew-symmetric payoff matrix
//!
//! ```text
//!          y      x      t
//!   y  [   0      A     -b  ]
//!   x  [  -A'     0      c  ]
//!   t  [   b'    -c'     0  ]
//! ```
//!
//! has value 0, and any optimal strategy `(y, x, t)` with `t > 0` gives an
//! optimal primal point `x / t` (and dual point `y / t`).

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::model::{ReducedLpp, ReducedPoint};

use super::SolveError;

/// Minimum weight on the homogenizing strategy before dividing by it.
pub const EXTRACTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricGame {
    payoff: Matrix,
    n_constraints: usize,
    n_vars: usize,
    /// Positive factor dividing the bounds before the game was built.
    /// Extraction multiplies the primal point back by it.
    bound_scale: f64,
}

impl SymmetricGame {
    pub fn payoff(&self) -> &Matrix {
        &self.payoff
    }

    pub fn dim(&self) -> usize {
        self.payoff.rows()
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn is_skew_symmetric(&self) -> bool {
        let k = self.dim();
        (0..k).all(|i| (0..k).all(|j| self.payoff[(i, j)] == -self.payoff[(j, i)]))
    }

    /// Recovers the primal LP point from a game strategy.
    pub fn extract(&self, strategy: &[f64]) -> Option<ReducedPoint> {
        let t = strategy[self.n_constraints + self.n_vars];
        if t <= EXTRACTION_EPS {
            return None;
        }
        let x = strategy[self.n_constraints..self.n_constraints + self.n_vars]
            .iter()
            .map(|v| v / t * self.bound_scale)
            .collect();
        Some(ReducedPoint::new(x))
    }
}

/// Builds the game from an explicit LP in `A x <= b, x >= 0` form.
/// Bounds may have either sign; the construction does not require positivity.
pub fn symmetric_game(rows: &[Vec<f64>], bounds: &[f64], objective: &[f64]) -> SymmetricGame {
    let p = rows.len();
    let d = objective.len();
    let bound_scale = bounds
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    let gain_scale = objective
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    let row_scale = |r: &[f64]| r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-12);

    let k = p + d + 1;
    let t = p + d;
    let mut m = Matrix::zeros(k, k);
    for (i, row) in rows.iter().enumerate() {
        // each constraint row is scaled to unit max-norm; the feasible set is unchanged
        let s = row_scale(row);
        for (j, a) in row.iter().enumerate() {
            let v = a / s;
            m[(i, p + j)] = v;
            m[(p + j, i)] = -v;
        }
        let bi = bounds[i] / bound_scale / s;
        m[(i, t)] = -bi;
        m[(t, i)] = bi;
    }
    for (j, c) in objective.iter().enumerate() {
        let cj = c / gain_scale;
        m[(p + j, t)] = cj;
        m[(t, p + j)] = -cj;
    }
    for i in 0..k {
        m[(i, i)] = 0.0;
    }
    SymmetricGame {
        payoff: m,
        n_constraints: p,
        n_vars: d,
        bound_scale,
    }
}

/// Builds the symmetric game of a reduced LP. Only the structural rows enter
/// the matrix; non-negativity is carried by the strategy simplex.
pub fn lp_to_symmetric_game(lp: &ReducedLpp) -> SymmetricGame {
    let structural = lp.structural_constraints();
    let rows: Vec<Vec<f64>> = structural.iter().map(|c| c.normal.clone()).collect();
    let bounds: Vec<f64> = structural.iter().map(|c| c.bound).collect();
    symmetric_game(&rows, &bounds, lp.reduced_gains())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FictitiousPlay {
    /// Empirical mixed strategy of the row (maximizing) player.
    pub row_strategy: Vec<f64>,
    /// Empirical mixed strategy of the column (minimizing) player.
    pub col_strategy: Vec<f64>,
    /// `min_j (p' M)_j`, a lower bound on the game value.
    pub lower: f64,
    /// `max_i (M q)_i`, an upper bound on the game value.
    pub upper: f64,
    pub iterations: usize,
}

impl FictitiousPlay {
    pub fn bracket_width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Brown's alternating fictitious play on a zero-sum matrix game.
///
/// The row player opens with strategy 0. Each round the column player
/// best-responds to the row player's empirical frequencies (including the
/// play just made), then the row player best-responds to the column
/// player's; ties go to the lowest index. Stops when the value bracket is
/// narrower than `tol` or after `max_iters` rounds, in which case the last
/// averages come back inside `NotConverged`.
pub fn solve_fictitious(
    payoff: &Matrix,
    max_iters: usize,
    tol: f64,
) -> Result<FictitiousPlay, SolveError> {
    if max_iters == 0 || tol <= 0.0 || !tol.is_finite() {
        return Err(SolveError::InvalidParameters);
    }
    let (rows, cols) = payoff.shape();
    let mut row_counts = vec![0u64; rows];
    let mut col_counts = vec![0u64; cols];
    // row_payoff[i] = sum_j M[i][j] * col_counts[j]
    let mut row_payoff = vec![0.0; rows];
    // col_payoff[j] = sum_i row_counts[i] * M[i][j]
    let mut col_payoff = vec![0.0; cols];

    let mut i = 0usize;
    let mut k = 0usize;
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    while k < max_iters {
        k += 1;
        row_counts[i] += 1;
        for (c, p) in col_payoff.iter_mut().enumerate() {
            *p += payoff[(i, c)];
        }
        let j = argmin_lowest(&col_payoff);
        col_counts[j] += 1;
        for (r, p) in row_payoff.iter_mut().enumerate() {
            *p += payoff[(r, j)];
        }
        i = argmax_lowest(&row_payoff);
        let kf = k as f64;
        upper = row_payoff[i] / kf;
        lower = col_payoff[j] / kf;
        if upper - lower < tol {
            break;
        }
    }
    let kf = k as f64;
    let fp = FictitiousPlay {
        row_strategy: row_counts.iter().map(|&c| c as f64 / kf).collect(),
        col_strategy: col_counts.iter().map(|&c| c as f64 / kf).collect(),
        lower,
        upper,
        iterations: k,
    };
    if upper - lower < tol {
        Ok(fp)
    } else {
        Err(SolveError::NotConverged(Box::new(fp)))
    }
}
