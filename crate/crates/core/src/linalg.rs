//! Per-block linear systems of the form (D + L^{-d} 1 vᵀ) x = b.
//!
//! Both the remainder equation and the solver's fluctuation equation reduce
//! on one block to a diagonal matrix plus the rank-one term coming from the
//! block mean inside P₁ = I − L^{-d}·ones. The structured path solves this by
//! Sherman–Morrison and evaluates the exact 1-norm condition number in
//! O(L^d); the dense path assembles the matrix and uses LU.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockMethod {
    #[default]
    Structured,
    Dense,
}

pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e12;

// Below this diagonal magnitude Sherman–Morrison loses accuracy even when
// the full matrix is fine, so the block goes to LU.
const MIN_PIVOT: f64 = 1e-6;

/// Solves `(diag(dg) + (1/len) 1 vᵀ) x = b` into `x` and returns the 1-norm
/// condition number (infinite when singular).
pub fn solve_block(dg: &[f64], v: &[f64], b: &[f64], x: &mut [f64], method: BlockMethod) -> f64 {
    let structured_ok = dg.iter().all(|d| d.abs() >= MIN_PIVOT);
    if method == BlockMethod::Structured && structured_ok {
        solve_structured(dg, v, b, x)
    } else {
        solve_dense(dg, v, b, x)
    }
}

fn solve_structured(dg: &[f64], v: &[f64], b: &[f64], x: &mut [f64]) -> f64 {
    let n = dg.len();
    let u = 1.0 / n as f64;
    let mut vz = 0.0;
    let mut vy = 0.0;
    let mut sz = 0.0;
    for i in 0..n {
        vz += v[i] * u / dg[i];
        vy += v[i] * b[i] / dg[i];
        sz += (u / dg[i]).abs();
    }
    let den = 1.0 + vz;
    if den == 0.0 || !den.is_finite() {
        x.iter_mut().for_each(|xi| *xi = f64::NAN);
        return f64::INFINITY;
    }
    let t = vy / den;
    for i in 0..n {
        x[i] = (b[i] - u * t) / dg[i];
    }
    let mut norm_a: f64 = 0.0;
    let mut norm_inv: f64 = 0.0;
    for j in 0..n {
        let col = (dg[j] + v[j] * u).abs() + (n - 1) as f64 * (v[j] * u).abs();
        norm_a = norm_a.max(col);
        let zj = u / dg[j];
        let bj = v[j] / (dg[j] * den);
        let inv_col = (1.0 / dg[j] - zj * bj).abs() + bj.abs() * (sz - zj.abs());
        norm_inv = norm_inv.max(inv_col);
    }
    norm_a * norm_inv
}

fn solve_dense(dg: &[f64], v: &[f64], b: &[f64], x: &mut [f64]) -> f64 {
    let n = dg.len();
    let u = 1.0 / n as f64;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { dg[i] } else { 0.0 } + u * v[j]);
    let (sol, cond) = dense_solve_with_condition(&a, &DVector::from_column_slice(b));
    match sol {
        Some(s) => x.copy_from_slice(s.as_slice()),
        None => x.iter_mut().for_each(|xi| *xi = f64::NAN),
    }
    cond
}

/// LU solve plus the exact 1-norm condition number via the explicit inverse.
pub fn dense_solve_with_condition(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (Option<DVector<f64>>, f64) {
    let lu = a.clone().lu();
    let sol = lu.solve(b);
    let Some(inv) = lu.try_inverse() else {
        return (None, f64::INFINITY);
    };
    let norm1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = norm1(a) * norm1(&inv);
    (
        sol,
        if cond.is_finite() {
            cond
        } else {
            f64::INFINITY
        },
    )
}
