//! Reference implementations that share no code with the library: the
//! full transportation problem is solved by brute force over bases.

#![allow(dead_code)]

use atp_core::{validate_instance, Matrix, TransportInstance};
use rand::Rng;

/// Combinations of `k` indices out of `0..n`, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Solves `A x = b` (rows >= cols) by Gaussian elimination. `None` when
/// the columns are dependent or the system is inconsistent.
#[allow(clippy::needless_range_loop)]
fn solve_overdetermined(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let rows = a.len();
    let cols = a[0].len();
    let mut r = 0;
    for c in 0..cols {
        let p = (r..rows).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(r, p);
        b.swap(r, p);
        for i in 0..rows {
            if i != r {
                let f = a[i][c] / a[r][c];
                if f != 0.0 {
                    for k in 0..cols {
                        a[i][k] -= f * a[r][k];
                    }
                    b[i] -= f * b[r];
                }
            }
        }
        r += 1;
    }
    for i in r..rows {
        if b[i].abs() > 1e-9 {
            return None;
        }
    }
    Some((0..cols).map(|c| b[c] / a[c][c]).collect())
}

/// All basic feasible solutions of the full problem.
pub fn basic_feasible_plans(inst: &TransportInstance) -> Vec<Matrix> {
    let (m, n) = (inst.m(), inst.n());
    let mut found: Vec<Matrix> = Vec::new();
    for basis in combinations(m * n, m + n - 1) {
        let mut a = vec![vec![0.0; basis.len()]; m + n];
        for (k, &cell) in basis.iter().enumerate() {
            a[cell / n][k] = 1.0;
            a[m + cell % n][k] = 1.0;
        }
        let b: Vec<f64> = inst
            .supplies()
            .iter()
            .chain(inst.demands())
            .copied()
            .collect();
        let Some(x) = solve_overdetermined(a, b) else {
            continue;
        };
        if x.iter().any(|&v| v < -1e-9) {
            continue;
        }
        let mut plan = Matrix::zeros(m, n);
        for (k, &cell) in basis.iter().enumerate() {
            plan[(cell / n, cell % n)] = x[k].max(0.0);
        }
        if !found.iter().any(|p| p.max_abs_diff(&plan).unwrap() < 1e-7) {
            found.push(plan);
        }
    }
    found
}

/// Best objective over all basic feasible solutions.
pub fn brute_force_optimum(inst: &TransportInstance) -> f64 {
    basic_feasible_plans(inst)
        .iter()
        .map(|p| inst.gains().dot(p).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Northwest-corner feasible plan.
pub fn northwest_corner(a: &[f64], b: &[f64]) -> Matrix {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    let mut x = Matrix::zeros(a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let q = a[i].min(b[j]);
        x[(i, j)] = q;
        a[i] -= q;
        b[j] -= q;
        if a[i] <= 0.0 && i + 1 < a.len() {
            i += 1;
        } else {
            j += 1;
        }
    }
    x
}

/// Random balanced instance with integer supplies, demands and gains.
pub fn random_integer_instance<R: Rng>(rng: &mut R, m: usize, n: usize) -> TransportInstance {
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(1..=9) as f64).collect();
    let total: f64 = a.iter().sum();
    // split the total into n non-negative integer demands
    let mut cuts: Vec<f64> = (0..n - 1)
        .map(|_| rng.random_range(0..=total as u32) as f64)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut b = Vec::with_capacity(n);
    let mut prev = 0.0;
    for c in cuts.into_iter().chain([total]) {
        b.push(c - prev);
        prev = c;
    }
    let gains = Matrix::from_vec(
        m,
        n,
        (0..m * n).map(|_| rng.random_range(0..=9) as f64).collect(),
    )
    .unwrap();
    validate_instance(a, b, gains).unwrap()
}

/// Same as [`random_integer_instance`] but with continuous gains.
pub fn random_instance<R: Rng>(rng: &mut R, m: usize, n: usize) -> TransportInstance {
    let inst = random_integer_instance(rng, m, n);
    let gains = Matrix::from_vec(
        m,
        n,
        (0..m * n).map(|_| rng.random_range(0.0..10.0)).collect(),
    )
    .unwrap();
    inst.with_gains(gains).unwrap()
}
