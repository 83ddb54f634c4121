//! Exhaustive vertex enumeration for the reduced LP.
//!
//! Every vertex is the unique solution of `d` linearly independent active
//! constraints. Subsets are explored depth-first with incremental Gaussian
//! elimination so dependent prefixes are pruned before reaching full depth.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{ReducedLpp, ReducedPoint, FEAS_TOL};

use super::SolveError;

/// Default cap on the number of free variables for exhaustive enumeration.
pub const DEFAULT_DIM_CAP: usize = 12;

const PIVOT_EPS: f64 = 1e-10;
const DEDUP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub point: ReducedPoint,
    /// Reduced objective `sum c~ x~` (without the constant).
    pub objective: f64,
}

struct EchelonRow {
    coeffs: Vec<f64>,
    rhs: f64,
    pivot: usize,
}

struct Enumerator<'a> {
    lp: &'a ReducedLpp,
    dim: usize,
    rows: Vec<EchelonRow>,
    found: Vec<Vec<f64>>,
}

impl Enumerator<'_> {
    fn push_row(&mut self, index: usize) -> bool {
        let c = &self.lp.constraints()[index];
        let mut coeffs = c.normal.clone();
        let mut rhs = c.bound;
        for row in &self.rows {
            let factor = coeffs[row.pivot] / row.coeffs[row.pivot];
            if factor != 0.0 {
                for (a, b) in coeffs.iter_mut().zip(&row.coeffs) {
                    *a -= factor * b;
                }
                rhs -= factor * row.rhs;
            }
        }
        let (pivot, max) =
            coeffs
                .iter()
                .enumerate()
                .map(|(k, v)| (k, v.abs()))
                .fold(
                    (0, 0.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if max < PIVOT_EPS {
            return false;
        }
        self.rows.push(EchelonRow { coeffs, rhs, pivot });
        true
    }

    fn back_substitute(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for row in self.rows.iter().rev() {
            let rest: f64 = row
                .coeffs
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != row.pivot)
                .map(|(k, a)| a * x[k])
                .sum();
            x[row.pivot] = (row.rhs - rest) / row.coeffs[row.pivot];
        }
        x
    }

    fn search(&mut self, start: usize) {
        if self.rows.len() == self.dim {
            let x = self.back_substitute();
            if self.lp.is_feasible(&x, FEAS_TOL)
                && !self.found.iter().any(|v| max_abs_diff(v, &x) < DEDUP_TOL)
            {
                self.found.push(x);
            }
            return;
        }
        let total = self.lp.constraints().len();
        let needed = self.dim - self.rows.len();
        for index in start..=total.saturating_sub(needed) {
            if self.push_row(index) {
                self.search(index + 1);
                self.rows.pop();
            }
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Row-major lexicographic order with a small tolerance per coordinate.
pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > DEDUP_TOL {
            return x.partial_cmp(y).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

/// All vertices of the reduced polytope, sorted lexicographically.
pub fn enumerate_vertices(lp: &ReducedLpp, dim_cap: usize) -> Result<Vec<Vertex>, SolveError> {
    let dim = lp.dim();
    if dim > dim_cap {
        return Err(SolveError::DimensionTooLarge { dim, cap: dim_cap });
    }
    let mut e = Enumerator {
        lp,
        dim,
        rows: Vec::with_capacity(dim),
        found: Vec::new(),
    };
    e.search(0);
    let mut found = e.found;
    found.sort_by(|a, b| lex_cmp(a, b));
    Ok(found
        .into_iter()
        .map(|x| Vertex {
            objective: lp.objective(&x),
            point: ReducedPoint::new(x),
        })
        .collect())
}

/// Index of the maximizing vertex; ties go to the earliest (lexicographically
/// smallest) vertex.
pub fn argmax_vertex(vertices: &[Vertex]) -> Option<usize> {
    let best = vertices
        .iter()
        .map(|v| v.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * best.abs().max(1.0);
    vertices.iter().position(|v| v.objective >= best - tol)
}

pub fn solve_exact_with_cap(lp: &ReducedLpp, dim_cap: usize) -> Result<ReducedPoint, SolveError> {
    let vertices = enumerate_vertices(lp, dim_cap)?;
    let best = argmax_vertex(&vertices).ok_or(SolveError::Infeasible)?;
    Ok(vertices[best].point.clone())
}

/// Exact optimum of the reduced LP by vertex enumeration.
pub fn solve_exact(lp: &ReducedLpp) -> Result<ReducedPoint, SolveError> {
    solve_exact_with_cap(lp, DEFAULT_DIM_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::{reduce, validate_instance};

    fn i1_lp() -> ReducedLpp {
        reduce(
            &validate_instance(
                vec![5.0, 5.0],
                vec![3.0, 3.0, 4.0],
                Matrix::from_rows(&[[4.0, 1.0, 2.0], [1.0, 3.0, 5.0]]).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn i1_hexagon() {
        // x22 + x23 in [2, 5], x22 <= 3, x23 <= 4, x >= 0
        let vs = enumerate_vertices(&i1_lp(), DEFAULT_DIM_CAP).unwrap();
        let pts: Vec<Vec<f64>> = vs.iter().map(|v| v.point.values.clone()).collect();
        assert_eq!(
            pts,
            vec![
                vec![0.0, 2.0],
                vec![0.0, 4.0],
                vec![1.0, 4.0],
                vec![2.0, 0.0],
                vec![3.0, 0.0],
                vec![3.0, 2.0],
            ]
        );
        let objs: Vec<f64> = vs.iter().map(|v| v.objective).collect();
        assert_eq!(objs, vec![12.0, 24.0, 29.0, 10.0, 15.0, 27.0]);
    }

    #[test]
    fn i1_optimum() {
        let x = solve_exact(&i1_lp()).unwrap();
        assert_eq!(x.values, vec![1.0, 4.0]);
    }

    #[test]
    fn total_tie_returns_smallest_vertex() {
        let lp = i1_lp().with_reduced_gains(&[0.0, 0.0]);
        assert_eq!(solve_exact(&lp).unwrap().values, vec![0.0, 2.0]);
    }

    #[test]
    fn unit_interval() {
        let inst = validate_instance(vec![1.0, 1.0], vec![1.0, 1.0], Matrix::zeros(2, 2)).unwrap();
        let lp = reduce(&inst).with_reduced_gains(&[1.0]);
        assert_eq!(enumerate_vertices(&lp, 12).unwrap().len(), 2);
        assert_eq!(solve_exact(&lp).unwrap().values, vec![1.0]);
    }

    #[test]
    fn dimension_cap() {
        let inst = validate_instance(vec![1.0; 6], vec![1.0; 6], Matrix::zeros(6, 6)).unwrap();
        assert!(matches!(
            solve_exact(&reduce(&inst)),
            Err(SolveError::DimensionTooLarge { dim: 25, cap: 12 })
        ));
    }
}
