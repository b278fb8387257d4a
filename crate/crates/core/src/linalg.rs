//! Linear systems of the form `x = Q x + b` for substochastic `Q`.
//!
//! Small systems use dense Gaussian elimination with partial pivoting;
//! larger ones fall back to Gauss-Seidel sweeps to a `1e-10` sup-norm
//! tolerance.

use alloc::vec;
use alloc::vec::Vec;

/// Systems with more unknowns than this are solved iteratively.
pub const DENSE_LIMIT: usize = 1500;

const ITER_TOL: f64 = 1e-10;
const ITER_MAX_SWEEPS: usize = 10_000_000;

/// Solve `x = Q x + b` where `rows[i]` lists `(j, Q_ij)`.
///
/// Returns `None` if `I - Q` is numerically singular.
pub fn solve_fixed_point(rows: &[Vec<(usize, f64)>], b: &[f64]) -> Option<Vec<f64>> {
    if rows.len() <= DENSE_LIMIT {
        dense(rows, b, false)
    } else {
        gauss_seidel(rows, b)
    }
}

/// Solve `x = Q^T x + b`, the flow-balance form used for occupancy measures.
pub fn solve_fixed_point_transposed(rows: &[Vec<(usize, f64)>], b: &[f64]) -> Option<Vec<f64>> {
    if rows.len() <= DENSE_LIMIT {
        dense(rows, b, true)
    } else {
        let mut t: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows.len()];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                t[j].push((i, v));
            }
        }
        gauss_seidel(&t, b)
    }
}

fn dense(rows: &[Vec<(usize, f64)>], b: &[f64], transpose: bool) -> Option<Vec<f64>> {
    let n = rows.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            if transpose {
                a[j * n + i] -= v;
            } else {
                a[i * n + j] -= v;
            }
        }
    }
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-13 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

fn gauss_seidel(rows: &[Vec<(usize, f64)>], b: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut x = vec![0.0; n];
    for _ in 0..ITER_MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut acc = b[i];
            let mut diag = 0.0;
            for &(j, v) in &rows[i] {
                if j == i {
                    diag += v;
                } else {
                    acc += v * x[j];
                }
            }
            if diag >= 1.0 {
                return None;
            }
            let new = acc / (1.0 - diag);
            delta = delta.max((new - x[i]).abs());
            x[i] = new;
        }
        if !delta.is_finite() {
            return None;
        }
        if delta < ITER_TOL {
            return Some(x);
        }
    }
    None
}
