//! Dense matrices of the operators, assembled from block membership alone.
//! Used only as a verification oracle for the recursive kernels.

use super::Field;
use crate::error::{Error, Result};
use crate::lattice::{block_center, coords_of, index_of, LatticeSpec, Point};

pub const DEFAULT_DENSE_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseKind {
    /// Field@n -> Field@(n-1).
    Coarsen,
    /// Field@(n-1) -> Field@n.
    Refine,
    Fluct,
    NegLaplacian,
    Inverse,
    Propagator(usize),
}

#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub input: LatticeSpec,
    pub output: LatticeSpec,
    /// Row-major, `output.len()` rows by `input.len()` columns.
    pub matrix: Vec<f64>,
}

impl DenseOperator {
    pub fn rows(&self) -> usize {
        self.output.len()
    }

    pub fn cols(&self) -> usize {
        self.input.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols() + j]
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        if *f.spec() != self.input {
            return Err(Error::Argument(
                "field does not match operator input".into(),
            ));
        }
        let cols = self.cols();
        let v = f.values();
        let out = (0..self.rows())
            .map(|i| {
                self.matrix[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(Field::from_raw(self.output, out))
    }
}

/// `labels[k][i]` is the flat index, on level n-k, of the side-L^k block
/// holding point i. Built by walking block centers point by point.
fn block_labels(spec: &LatticeSpec) -> Result<Vec<Vec<usize>>> {
    let l = spec.l() as i64;
    let mut labels = vec![(0..spec.len()).collect::<Vec<_>>()];
    let mut points: Vec<Point> = (0..spec.len())
        .map(|i| coords_of(spec, i))
        .collect::<Result<_>>()?;
    let mut s = *spec;
    for _ in 1..=spec.n() {
        let coarse = s.coarser()?;
        points = points
            .iter()
            .map(|p| {
                Ok(Point(
                    block_center(&s, p)?.0.iter().map(|c| c / l).collect(),
                ))
            })
            .collect::<Result<_>>()?;
        labels.push(
            points
                .iter()
                .map(|p| index_of(&coarse, p))
                .collect::<Result<_>>()?,
        );
        s = coarse;
    }
    Ok(labels)
}

pub fn assemble_dense_operator(
    kind: DenseKind,
    spec: &LatticeSpec,
    cap: usize,
) -> Result<DenseOperator> {
    let n = spec.n();
    let len = spec.len();
    if len > cap {
        return Err(Error::SizeCap { points: len, cap });
    }
    let labels = block_labels(spec)?;
    let l = spec.l() as f64;
    let d = spec.d() as i32;
    let q = |k: usize, i: usize, j: usize| -> f64 {
        if labels[k][i] == labels[k][j] {
            l.powi(-d * k as i32)
        } else {
            0.0
        }
    };
    let p = |k: usize, i: usize, j: usize| q(k - 1, i, j) - q(k, i, j);
    let square = |weight: &dyn Fn(usize) -> f64, depth: usize| {
        let mut m = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..len {
                m[i * len + j] = (1..=depth).map(|k| weight(k) * p(k, i, j)).sum();
            }
        }
        DenseOperator {
            input: *spec,
            output: *spec,
            matrix: m,
        }
    };
    Ok(match kind {
        DenseKind::Coarsen | DenseKind::Refine => {
            if n == 0 {
                return Err(Error::Level {
                    required: 1,
                    got: 0,
                });
            }
            let coarse = spec.coarser()?;
            let clen = coarse.len();
            let w = l.powi(-d);
            let mut c = vec![0.0; clen * len];
            for j in 0..len {
                c[labels[1][j] * len + j] = w;
            }
            if kind == DenseKind::Coarsen {
                DenseOperator {
                    input: *spec,
                    output: coarse,
                    matrix: c,
                }
            } else {
                let mut r = vec![0.0; len * clen];
                for j in 0..len {
                    r[j * clen + labels[1][j]] = 1.0;
                }
                DenseOperator {
                    input: coarse,
                    output: *spec,
                    matrix: r,
                }
            }
        }
        DenseKind::Fluct => {
            if n == 0 {
                return Err(Error::Level {
                    required: 1,
                    got: 0,
                });
            }
            square(&|_| 1.0, 1)
        }
        DenseKind::NegLaplacian => square(&|k| l.powi(-2 * (k as i32 - 1)), n),
        DenseKind::Inverse => square(&|k| l.powi(2 * (k as i32 - 1)), n),
        DenseKind::Propagator(depth) => {
            if depth > n {
                return Err(Error::Argument(format!("depth {depth} exceeds level {n}")));
            }
            square(&|k| l.powi(2 * (k as i32 - 1)), depth)
        }
    })
}
