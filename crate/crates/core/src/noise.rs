//! Coupled white noise across cutoffs and its second Wick chaos.
//!
//! One base sample on Λ^{Nmax} drives every cutoff N ≤ Nmax. Rescaled block
//! averages give ξ at each level, and the chain of levels is shared by all
//! cutoffs, so ξ^{(N)}_{-n} is bit-identical for every N ≥ n. The chaos Ⅱ^{(N)}
//! depends on N and is built per cutoff.

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::operators::{apply_fluct_propagator, coarsen, coarsen_by, fluct, Field};
use crate::rng::NormalStream;
use serde::{Deserialize, Serialize};

pub const BASE_STREAM: &str = "base";

/// α = 2 − d/2.
pub fn alpha(d: usize) -> f64 {
    2.0 - d as f64 / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub nmax: usize,
    pub l: usize,
    pub d: usize,
}

impl NoiseConfig {
    pub fn new(seed: u64, nmax: usize, l: usize, d: usize) -> Result<Self> {
        if nmax == 0 {
            return Err(Error::Argument("Nmax must be at least 1".into()));
        }
        LatticeSpec::new(l, d, nmax)?;
        Ok(Self { seed, nmax, l, d })
    }

    pub fn alpha(&self) -> f64 {
        alpha(self.d)
    }

    pub fn spec(&self, n: usize) -> LatticeSpec {
        LatticeSpec::new(self.l, self.d, n).expect("validated at construction")
    }
}

/// L^(Nmax d) i.i.d. standard normals in flat-index order.
pub fn sample_base(config: &NoiseConfig) -> Field {
    let spec = config.spec(config.nmax);
    let mut values = vec![0.0; spec.len()];
    NormalStream::new(config.seed, BASE_STREAM).fill(&mut values);
    Field::from_raw(spec, values)
}

/// ξ at every level 0..=Nmax: `xi[Nmax] = base`, `xi[n-1] = L^{2-α} coarsen(xi[n])`.
fn xi_chain(base: &Field) -> Vec<Field> {
    let spec = base.spec();
    let up = (spec.l() as f64).powf(2.0 - alpha(spec.d()));
    let mut chain = vec![base.clone()];
    for _ in 0..spec.n() {
        let next = coarsen(chain.last().unwrap())
            .expect("level >= 1")
            .scale(up);
        chain.push(next);
    }
    chain.reverse();
    chain
}

/// `xi[N][n]` for n = 0..=N, indexed by n. The top level equals
/// L^{(2-α)(Nmax-N)} coarsen^{Nmax-N}(base), obtained step by step so that
/// the result coincides bit for bit with the shared chain.
pub fn derive_xi_trajectory(base: &Field, cutoff: usize) -> Result<Vec<Field>> {
    if cutoff > base.level() {
        return Err(Error::Argument(format!(
            "cutoff {cutoff} exceeds Nmax {}",
            base.level()
        )));
    }
    let mut chain = xi_chain(base);
    chain.truncate(cutoff + 1);
    Ok(chain)
}

/// E[ξ(x) Γ_k ξ(x)] = (1 − L^{-d}) Σ_{j=1}^{k} L^{(2−d)(j−1)}.
pub fn centering_constant(l: usize, d: usize, k: usize) -> f64 {
    let lf = l as f64;
    let q = 1.0 - lf.powi(-(d as i32));
    (1..=k)
        .map(|j| q * lf.powi((2 - d as i32) * (j as i32 - 1)))
        .sum()
}

/// ξ·P₁ξ − (1 − L^{-d}).
pub fn wick_pair_product(xi: &Field) -> Result<Field> {
    let c = centering_constant(xi.spec().l(), xi.spec().d(), 1);
    Ok(xi.zip_map(&fluct(xi)?, |a, b| a * b - c))
}

/// Ⅱ^{(N)} at every level from the flow recursion, indexed by n.
pub fn chaos_recursive(xi: &[Field]) -> Result<Vec<Field>> {
    let top = xi
        .last()
        .ok_or_else(|| Error::Argument("empty ξ trajectory".into()))?;
    let cutoff = top.level();
    if xi.len() != cutoff + 1 || xi.iter().enumerate().any(|(n, f)| f.level() != n) {
        return Err(Error::Argument(
            "ξ trajectory must hold levels 0..=N in order".into(),
        ));
    }
    let spec = top.spec();
    let factor = (spec.l() as f64).powf(2.0 - 2.0 * alpha(spec.d()));
    let mut out = vec![Field::zeros(*spec)];
    for n in (1..=cutoff).rev() {
        let acc = out.last().unwrap().add(&wick_pair_product(&xi[n])?);
        out.push(coarsen(&acc)?.scale(factor));
    }
    out.reverse();
    Ok(out)
}

/// Ⅱ^{(N)}_{-n} straight from its definition:
/// L^{(2−2α)(N−n)} coarsen^{N−n}(ξ_{-N}·Γ_{N−n}ξ_{-N} − c_{N−n}).
pub fn chaos_direct(xi_top: &Field, n: usize) -> Result<Field> {
    let cutoff = xi_top.level();
    if n > cutoff {
        return Err(Error::Argument(format!(
            "level {n} exceeds cutoff {cutoff}"
        )));
    }
    let spec = xi_top.spec();
    let k = cutoff - n;
    let c = centering_constant(spec.l(), spec.d(), k);
    let prod = xi_top.zip_map(&apply_fluct_propagator(xi_top, k)?, |a, b| a * b - c);
    let factor = (spec.l() as f64).powf((2.0 - 2.0 * alpha(spec.d())) * k as f64);
    Ok(coarsen_by(&prod, k)?.scale(factor))
}

/// ξ and Ⅱ for every cutoff N ≤ Nmax from one base sample.
#[derive(Debug, Clone)]
pub struct EnhancedNoise {
    config: NoiseConfig,
    variance: f64,
    xi: Vec<Field>,
    chaos: Vec<Vec<Field>>,
}

impl EnhancedNoise {
    pub fn sample(config: &NoiseConfig) -> Result<Self> {
        Self::from_base(config, sample_base(config))
    }

    pub fn from_base(config: &NoiseConfig, base: Field) -> Result<Self> {
        if *base.spec() != config.spec(config.nmax) {
            return Err(Error::Argument(
                "base field does not match the noise config".into(),
            ));
        }
        let xi = xi_chain(&base);
        let chaos = (0..=config.nmax)
            .map(|cutoff| chaos_recursive(&xi[..=cutoff]))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: *config,
            variance: 1.0,
            xi,
            chaos,
        })
    }

    /// The degenerate noise of variance zero: ξ ≡ 0 and, since the Wick
    /// centering scales with the variance, Ⅱ ≡ 0 as well. The mass
    /// counterterm scales the same way, see [`EnhancedNoise::variance`].
    pub fn zero(config: &NoiseConfig) -> Self {
        let xi: Vec<Field> = (0..=config.nmax)
            .map(|n| Field::zeros(config.spec(n)))
            .collect();
        let chaos = (0..=config.nmax)
            .map(|cutoff| xi[..=cutoff].to_vec())
            .collect();
        Self {
            config: *config,
            variance: 0.0,
            xi,
            chaos,
        }
    }

    /// Variance of the base variates: 1 for sampled noise, 0 for [`EnhancedNoise::zero`].
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    pub fn nmax(&self) -> usize {
        self.config.nmax
    }

    /// ξ^{(N)}_{-n}; identical for all N ≥ n.
    pub fn xi(&self, n: usize) -> &Field {
        &self.xi[n]
    }

    /// ξ^{(N)}_{-n} for n = 0..=N.
    pub fn xi_trajectory(&self, cutoff: usize) -> &[Field] {
        &self.xi[..=cutoff]
    }

    /// Ⅱ^{(N)}_{-n}. Panics unless n ≤ N ≤ Nmax.
    pub fn chaos(&self, cutoff: usize, n: usize) -> &Field {
        assert!(
            n <= cutoff && cutoff <= self.config.nmax,
            "need n <= N <= Nmax"
        );
        &self.chaos[cutoff][n]
    }

    pub fn chaos_trajectory(&self, cutoff: usize) -> &[Field] {
        &self.chaos[cutoff]
    }
}
