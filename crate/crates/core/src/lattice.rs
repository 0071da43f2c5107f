//! Unit lattices Λ^n of side L^n and their hierarchy of side-L blocks.
//!
//! Points carry centered coordinates in `[-(L^n-1)/2, (L^n-1)/2]` per axis.
//! Flat indices are row-major with axis 0 slowest. Because L is odd and the
//! side is a power of L, a side-L^k block occupies a contiguous run of L^k
//! per-axis indices, which is what the fast kernels in `operators` rely on.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    l: usize,
    d: usize,
    n: usize,
}

/// A lattice point in centered coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Point(pub Vec<i64>);

/// Result of [`shared_block_level`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLevel {
    Identical,
    Level(usize),
}

impl LatticeSpec {
    pub fn new(l: usize, d: usize, n: usize) -> Result<Self> {
        if l < 3 || l.is_multiple_of(2) {
            return Err(Error::Lattice(format!("L must be odd and >= 3, got {l}")));
        }
        if d == 0 {
            return Err(Error::Lattice("d must be positive".into()));
        }
        let total = (l as u128).checked_pow((n * d) as u32);
        match total {
            Some(t) if t <= (1u128 << 40) => {}
            _ => {
                return Err(Error::Lattice(format!(
                    "lattice L={l}, d={d}, n={n} is too large"
                )))
            }
        }
        Ok(Self { l, d, n })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Side length L^n.
    pub fn side(&self) -> usize {
        self.l.pow(self.n as u32)
    }

    /// Number of points L^(n d).
    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points per side-L block, L^d.
    pub fn block_len(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    fn half(&self) -> i64 {
        ((self.side() - 1) / 2) as i64
    }

    /// Same L and d at another level.
    pub fn at_level(&self, n: usize) -> LatticeSpec {
        LatticeSpec { n, ..*self }
    }

    pub fn coarser(&self) -> Result<LatticeSpec> {
        if self.n == 0 {
            return Err(Error::Level {
                required: 1,
                got: 0,
            });
        }
        Ok(self.at_level(self.n - 1))
    }

    pub fn finer(&self) -> LatticeSpec {
        self.at_level(self.n + 1)
    }

    /// Maps arbitrary integer coordinates onto the canonical centered range.
    pub fn wrap(&self, coords: &[i64]) -> Result<Point> {
        self.check_dim(coords)?;
        let side = self.side() as i64;
        let h = self.half();
        Ok(Point(
            coords
                .iter()
                .map(|&c| (c + h).rem_euclid(side) - h)
                .collect(),
        ))
    }

    fn check_dim(&self, coords: &[i64]) -> Result<()> {
        if coords.len() != self.d {
            return Err(Error::Argument(format!(
                "point has {} coordinates, lattice has d = {}",
                coords.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// Flat index of a point (row-major, axis 0 slowest).
pub fn index_of(spec: &LatticeSpec, p: &Point) -> Result<usize> {
    spec.check_dim(&p.0)?;
    let h = spec.half();
    let side = spec.side();
    let mut idx = 0usize;
    for &c in &p.0 {
        if c < -h || c > h {
            return Err(Error::Range {
                what: "coordinate",
                detail: format!("{c} not in [{}, {h}]", -h),
            });
        }
        idx = idx * side + (c + h) as usize;
    }
    Ok(idx)
}

/// Inverse of [`index_of`].
pub fn coords_of(spec: &LatticeSpec, idx: usize) -> Result<Point> {
    if idx >= spec.len() {
        return Err(Error::Range {
            what: "flat index",
            detail: format!("{idx} >= {}", spec.len()),
        });
    }
    let h = spec.half();
    let side = spec.side();
    let mut coords = vec![0i64; spec.d];
    let mut rest = idx;
    for c in coords.iter_mut().rev() {
        *c = (rest % side) as i64 - h;
        rest /= side;
    }
    Ok(Point(coords))
}

/// The multiple-of-L point at the center of the side-L block containing `p`.
pub fn block_center(spec: &LatticeSpec, p: &Point) -> Result<Point> {
    if spec.n == 0 {
        return Err(Error::Level {
            required: 1,
            got: 0,
        });
    }
    index_of(spec, p)?;
    let l = spec.l as i64;
    Ok(Point(
        p.0.iter().map(|&c| l * (c + l / 2).div_euclid(l)).collect(),
    ))
}

/// The L^d points of the block centered at `c`, in row-major order.
pub fn block_members(spec: &LatticeSpec, c: &Point) -> Result<Vec<Point>> {
    if spec.n == 0 {
        return Err(Error::Level {
            required: 1,
            got: 0,
        });
    }
    index_of(spec, c)?;
    let l = spec.l as i64;
    if c.0.iter().any(|&x| x.rem_euclid(l) != 0) {
        return Err(Error::Argument(format!("{:?} is not a block center", c.0)));
    }
    let r = l / 2;
    let mut out = Vec::with_capacity(spec.block_len());
    for k in 0..spec.block_len() {
        let mut rest = k;
        let mut coords = vec![0i64; spec.d];
        for (x, &cx) in coords.iter_mut().zip(&c.0).rev() {
            *x = cx + (rest % spec.l) as i64 - r;
            rest /= spec.l;
        }
        out.push(Point(coords));
    }
    Ok(out)
}

/// Smallest k >= 1 such that x and y share a side-L^k block, or
/// [`BlockLevel::Identical`] when x = y.
pub fn shared_block_level(spec: &LatticeSpec, x: &Point, y: &Point) -> Result<BlockLevel> {
    index_of(spec, x)?;
    index_of(spec, y)?;
    if x == y {
        return Ok(BlockLevel::Identical);
    }
    // Walk both points up the block tree: at each step replace a point of
    // the current lattice by its block center divided by L.
    let mut a = x.clone();
    let mut b = y.clone();
    let mut s = *spec;
    for k in 1..=spec.n {
        a = Point(
            block_center(&s, &a)?
                .0
                .iter()
                .map(|c| c / spec.l as i64)
                .collect(),
        );
        b = Point(
            block_center(&s, &b)?
                .0
                .iter()
                .map(|c| c / spec.l as i64)
                .collect(),
        );
        if a == b {
            return Ok(BlockLevel::Level(k));
        }
        s = s.coarser()?;
    }
    unreachable!("distinct points always share the level-n block")
}

/// Index arithmetic for the side-L blocks of a level-n lattice. Block `c`
/// (a flat index on level n-1) has its first member at `base(c)`; the
/// remaining members sit at `base(c) + offsets[k]`.
#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub offsets: Vec<usize>,
    pub bases: Vec<usize>,
}

impl BlockLayout {
    pub fn new(fine: &LatticeSpec) -> Result<Self> {
        let coarse = fine.coarser()?;
        let (l, d) = (fine.l, fine.d);
        let fside = fine.side();
        let cside = coarse.side();
        let mut offsets = Vec::with_capacity(fine.block_len());
        for k in 0..fine.block_len() {
            let mut rest = k;
            let mut off = 0;
            let mut stride = 1;
            for _ in 0..d {
                off += (rest % l) * stride;
                rest /= l;
                stride *= fside;
            }
            offsets.push(off);
        }
        let mut bases = Vec::with_capacity(coarse.len());
        for c in 0..coarse.len() {
            let mut rest = c;
            let mut base = 0;
            let mut stride = 1;
            for _ in 0..d {
                base += (rest % cside) * l * stride;
                rest /= cside;
                stride *= fside;
            }
            bases.push(base);
        }
        Ok(Self { offsets, bases })
    }
}
