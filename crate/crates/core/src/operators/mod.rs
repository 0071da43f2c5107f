//! Multiscale operator algebra on unit lattices.
//!
//! `coarsen` is the block mean S₁Q₁ onto level n-1 and `refine` the constant
//! extension back onto blocks. Everything else is built from these two by
//! recursion over levels, in O(points · n) time.

mod dense;
mod field;

pub use dense::{assemble_dense_operator, DenseKind, DenseOperator, DEFAULT_DENSE_CAP};
pub use field::Field;

use crate::error::{Error, Result};
use crate::lattice::BlockLayout;

/// Block mean onto the next coarser lattice.
pub fn coarsen(f: &Field) -> Result<Field> {
    let spec = *f.spec();
    let layout = BlockLayout::new(&spec)?;
    let inv = 1.0 / spec.block_len() as f64;
    let v = f.values();
    let out = layout
        .bases
        .iter()
        .map(|&b| layout.offsets.iter().map(|&o| v[b + o]).sum::<f64>() * inv)
        .collect();
    Ok(Field::from_raw(spec.coarser()?, out))
}

/// `k`-fold [`coarsen`].
pub fn coarsen_by(f: &Field, k: usize) -> Result<Field> {
    if k > f.level() {
        return Err(Error::Level {
            required: k,
            got: f.level(),
        });
    }
    let mut out = f.clone();
    for _ in 0..k {
        out = coarsen(&out)?;
    }
    Ok(out)
}

/// Constant extension of a level-(n-1) field onto the side-L blocks of level n.
pub fn refine(w: &Field) -> Field {
    let fine = w.spec().finer();
    let layout = BlockLayout::new(&fine).expect("finer lattice has level >= 1");
    let mut out = vec![0.0; fine.len()];
    for (&b, &x) in layout.bases.iter().zip(w.values()) {
        for &o in &layout.offsets {
            out[b + o] = x;
        }
    }
    Field::from_raw(fine, out)
}

/// `k`-fold [`refine`].
pub fn refine_by(w: &Field, k: usize) -> Field {
    let mut out = w.clone();
    for _ in 0..k {
        out = refine(&out);
    }
    out
}

/// P₁: subtract the block mean.
pub fn fluct(f: &Field) -> Result<Field> {
    let spec = *f.spec();
    let layout = BlockLayout::new(&spec)?;
    let inv = 1.0 / spec.block_len() as f64;
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    for &b in &layout.bases {
        let m = layout.offsets.iter().map(|&o| v[b + o]).sum::<f64>() * inv;
        for &o in &layout.offsets {
            out[b + o] = v[b + o] - m;
        }
    }
    Ok(Field::from_raw(spec, out))
}

/// Level-k fluctuation P_k of a level-n field, broadcast back onto Λ^n.
pub fn fluct_level(f: &Field, k: usize) -> Result<Field> {
    if k == 0 || k > f.level() {
        return Err(Error::Argument(format!(
            "fluctuation level {k} not in 1..={}",
            f.level()
        )));
    }
    Ok(refine_by(&fluct(&coarsen_by(f, k - 1)?)?, k - 1))
}

pub fn mean_total(f: &Field) -> f64 {
    f.values().iter().sum::<f64>() / f.len() as f64
}

/// Largest absolute block mean; zero for fields in the range of P₁.
pub fn max_block_mean(f: &Field) -> Result<f64> {
    Ok(coarsen(f)?.max_abs())
}

/// (−Δ_H) f = Σ_{k=1}^{n} L^{-2(k-1)} P_k f.
pub fn apply_neg_laplacian(f: &Field) -> Field {
    if f.level() == 0 {
        return Field::zeros(*f.spec());
    }
    let l2 = (f.spec().l() as f64).powi(-2);
    let c = coarsen(f).expect("level >= 1");
    let inner = apply_neg_laplacian(&c);
    let coarse_part = c.zip_map(&inner, |m, x| m - l2 * x);
    f.sub(&refine(&coarse_part))
}

/// Tolerance on the mean of an input to [`apply_inverse_laplacian`].
pub fn default_mean_tolerance(g: &Field) -> f64 {
    1e-10 * g.max_abs()
}

/// (−Δ_H)⁻¹ g = Σ_{k=1}^{n} L^{2(k-1)} P_k g for mean-zero g.
pub fn apply_inverse_laplacian(g: &Field) -> Result<Field> {
    apply_inverse_laplacian_tol(g, default_mean_tolerance(g))
}

pub fn apply_inverse_laplacian_tol(g: &Field, tol: f64) -> Result<Field> {
    let m = mean_total(g);
    if m.abs() > tol {
        return Err(Error::Precondition(format!(
            "inverse Laplacian needs a mean-zero field, measured mean {m:.6e}"
        )));
    }
    Ok(propagate(g, g.level()))
}

/// Γ_k g = Σ_{j=1}^{k} L^{2(j-1)} P_j g.
pub fn apply_fluct_propagator(g: &Field, depth: usize) -> Result<Field> {
    if depth > g.level() {
        return Err(Error::Argument(format!(
            "propagator depth {depth} exceeds level {}",
            g.level()
        )));
    }
    Ok(propagate(g, depth))
}

fn propagate(g: &Field, depth: usize) -> Field {
    if depth == 0 {
        return Field::zeros(*g.spec());
    }
    let l2 = (g.spec().l() as f64).powi(2);
    let c = coarsen(g).expect("depth <= level");
    let inner = propagate(&c, depth - 1);
    let coarse_part = c.zip_map(&inner, |m, x| m - l2 * x);
    g.sub(&refine(&coarse_part))
}
