//! Purification: move a feasible point to a vertex without lowering the
//! objective.
//!
//! While the active set does not pin the point down, step along the
//! projection of the objective onto the null space of the active normals
//! (or along any null-space direction when that projection vanishes) until
//! a new constraint blocks. Each step adds an independent active
//! constraint, so at most `d` steps are taken.

use crate::model::{dot, norm, ReducedLpp};

const ACTIVE_TOL: f64 = 1e-9;
const DIR_EPS: f64 = 1e-10;

/// Orthonormal basis of the span of the given vectors (Gram-Schmidt).
pub(crate) fn orthonormal_basis<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.to_vec();
        // two passes keep the basis orthogonal in floating point
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= proj * qi;
                }
            }
        }
        let len = norm(&w);
        if len > DIR_EPS * norm(v).max(1.0) {
            basis.push(w.into_iter().map(|x| x / len).collect());
        }
    }
    basis
}

fn project_out(v: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut w = v.to_vec();
    for _ in 0..2 {
        for q in basis {
            let proj = dot(&w, q);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= proj * qi;
            }
        }
    }
    w
}

/// Indices of constraints active at `x`.
pub(crate) fn active_set(lp: &ReducedLpp, x: &[f64], tol: f64) -> Vec<usize> {
    lp.constraints()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.slack(x).abs() <= tol * c.bound.abs().max(1.0))
        .map(|(k, _)| k)
        .collect()
}

/// Returns a vertex whose objective is at least that of `x`. `x` must be
/// feasible.
pub fn purify(lp: &ReducedLpp, x: &[f64]) -> Vec<f64> {
    let d = lp.dim();
    let mut x = x.to_vec();
    for _ in 0..=d {
        let active = active_set(lp, &x, ACTIVE_TOL);
        let basis = orthonormal_basis(
            active
                .iter()
                .map(|&k| lp.constraints()[k].normal.as_slice()),
        );
        if basis.len() >= d {
            break;
        }
        let mut dir = project_out(lp.reduced_gains(), &basis);
        if norm(&dir) <= DIR_EPS * norm(lp.reduced_gains()).max(1.0) {
            // objective is flat on the active face; any null-space direction will do
            dir = (0..d)
                .map(|k| {
                    let mut e = vec![0.0; d];
                    e[k] = 1.0;
                    project_out(&e, &basis)
                })
                .find(|v| norm(v) > 1e-6)
                .expect("null space is non-trivial while rank < d");
        }
        let step = lp
            .constraints()
            .iter()
            .filter_map(|c| {
                let rate = dot(&c.normal, &dir);
                (rate > DIR_EPS).then(|| c.slack(&x).max(0.0) / rate)
            })
            .fold(f64::INFINITY, f64::min);
        if !step.is_finite() {
            // bounded polytope: a direction with no blocking constraint cannot occur
            break;
        }
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += step * di;
        }
    }
    snap_to_vertex(lp, &x).unwrap_or(x)
}

/// Re-solves the vertex exactly from `d` independent active constraints.
fn snap_to_vertex(lp: &ReducedLpp, x: &[f64]) -> Option<Vec<f64>> {
    let d = lp.dim();
    let active = active_set(lp, x, 1e-7);
    let mut rows: Vec<(Vec<f64>, f64, usize)> = Vec::with_capacity(d);
    for k in active {
        let c = &lp.constraints()[k];
        let mut coeffs = c.normal.clone();
        let mut rhs = c.bound;
        for (r, b, p) in &rows {
            let f = coeffs[*p] / r[*p];
            for (a, ri) in coeffs.iter_mut().zip(r) {
                *a -= f * ri;
            }
            rhs -= f * b;
        }
        let (p, max) =
            coeffs
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold(
                    (0, 0.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if max > 1e-10 {
            rows.push((coeffs, rhs, p));
        }
        if rows.len() == d {
            break;
        }
    }
    if rows.len() < d {
        return None;
    }
    let mut out = vec![0.0; d];
    for (r, b, p) in rows.iter().rev() {
        let rest: f64 = (0..d).filter(|i| i != p).map(|i| r[i] * out[i]).sum();
        out[*p] = (b - rest) / r[*p];
    }
    lp.is_feasible(&out, 1e-7).then_some(out)
}
