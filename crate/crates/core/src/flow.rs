//! The RG dynamical system: coefficients (λ, μ, γ), the remainder R solved
//! level by level, and the remainder force Ψ carried from the cutoff down to
//! level 0.

use crate::error::{Error, Result};
use crate::lattice::{coords_of, BlockLayout, Point};
use crate::linalg::{solve_block, BlockMethod, DEFAULT_CONDITION_THRESHOLD};
use crate::noise::{alpha, EnhancedNoise};
use crate::operators::{coarsen, fluct, Field};
use serde::{Deserialize, Serialize};

/// Renormalised coupling g and mass r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    g: f64,
    r: f64,
}

impl Couplings {
    /// g = 0 is admitted as the noiseless reference problem.
    pub fn new(g: f64, r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Argument(format!("g must lie in [0, 1], got {g}")));
        }
        if r.is_nan() || r < 1.0 || r.is_infinite() {
            return Err(Error::Argument(format!("r must be >= 1, got {r}")));
        }
        Ok(Self { g, r })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCoefficients {
    pub n: usize,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
}

/// λ_{-n} = L^{-αn} g, μ_{-n} = L^{-2n}(r − (1−L^{-d}) n g²), γ_{-n} = L^{-(2−α)n}.
pub fn coefficients_closed_form(c: &Couplings, n: usize, l: usize, d: usize) -> LevelCoefficients {
    closed_form_with_variance(c, n, l, d, 1.0)
}

/// Closed form for noise of variance `var`; the counterterm is proportional to it.
pub(crate) fn closed_form_with_variance(
    c: &Couplings,
    n: usize,
    l: usize,
    d: usize,
    var: f64,
) -> LevelCoefficients {
    let lf = l as f64;
    let a = alpha(d);
    let nf = n as f64;
    LevelCoefficients {
        n,
        lambda: lf.powf(-a * nf) * c.g,
        mu: lf.powi(-2 * n as i32) * bare_mass_with_variance(c, n, l, d, var),
        gamma: lf.powf(-(2.0 - a) * nf),
    }
}

/// r_N = L^{2N} μ_{-N} = r − (1 − L^{-d}) N g².
pub fn bare_mass(c: &Couplings, cutoff: usize, l: usize, d: usize) -> f64 {
    bare_mass_with_variance(c, cutoff, l, d, 1.0)
}

pub(crate) fn bare_mass_with_variance(
    c: &Couplings,
    cutoff: usize,
    l: usize,
    d: usize,
    var: f64,
) -> f64 {
    let q = 1.0 - (l as f64).powi(-(d as i32));
    c.r - var * q * cutoff as f64 * c.g * c.g
}

/// One step n → n−1: λ' = L^α λ, μ' = L²(μ + (1−L^{-d})λ²), γ' = L^{2−α} γ.
pub fn coefficients_step(k: &LevelCoefficients, l: usize, d: usize) -> Result<LevelCoefficients> {
    if k.n == 0 {
        return Err(Error::Level {
            required: 1,
            got: 0,
        });
    }
    let lf = l as f64;
    let a = alpha(d);
    let q = 1.0 - lf.powi(-(d as i32));
    Ok(LevelCoefficients {
        n: k.n - 1,
        lambda: lf.powf(a) * k.lambda,
        mu: lf * lf * (k.mu + q * k.lambda * k.lambda),
        gamma: lf.powf(2.0 - a) * k.gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RemainderMethod {
    Block(BlockMethod),
    /// R ← (1−ω)R + ω·(right-hand side of the R-equation).
    FixedPoint {
        damping: f64,
        tolerance: f64,
        max_iterations: usize,
    },
}

impl Default for RemainderMethod {
    fn default() -> Self {
        RemainderMethod::Block(BlockMethod::Structured)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub method: RemainderMethod,
    pub condition_threshold: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            method: RemainderMethod::default(),
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
        }
    }
}

/// The fields entering the R-equation at one level, precomputed.
struct RemainderTerms {
    /// σ = λξ + λ²Ⅱ + λ³Ψ, the multiplier inside P₁(σR).
    sigma: Field,
    rhs: Field,
}

fn remainder_terms(
    xi: &Field,
    chaos: &Field,
    psi: &Field,
    k: &LevelCoefficients,
) -> Result<RemainderTerms> {
    let (lam, mu) = (k.lambda, k.mu);
    let p1xi = fluct(xi)?;
    let v = xi.values();
    let c = chaos.values();
    let s = psi.values();
    let p = p1xi.values();
    let spec = *xi.spec();
    // P₁Ⅱ + P₁(ξP₁ξ) + λP₁Ψ + λP₁(ⅡP₁ξ) + λ²P₁(ΨP₁ξ), collected under one P₁.
    let inner = Field::from_fn(spec, |i| {
        c[i] + v[i] * p[i] + lam * s[i] + lam * c[i] * p[i] + lam * lam * s[i] * p[i]
    });
    let ratio = mu / lam;
    let rhs = fluct(&inner)?.zip_map(&p1xi, |a, b| a + ratio * b);
    let sigma = Field::from_fn(spec, |i| {
        lam * v[i] + lam * lam * c[i] + lam * lam * lam * s[i]
    });
    Ok(RemainderTerms { sigma, rhs })
}

/// Right-hand side of the R-equation evaluated at a candidate R.
fn remainder_map(t: &RemainderTerms, mu: f64, r: &Field) -> Result<Field> {
    let sr = fluct(&t.sigma.mul(r))?;
    Ok(Field::from_fn(*r.spec(), |i| {
        t.rhs.values()[i] + mu * r.values()[i] + sr.values()[i]
    }))
}

/// Max-norm residual of the R-equation at `r`, scaled by 1 + max|rhs|.
pub fn remainder_residual(
    xi: &Field,
    chaos: &Field,
    psi: &Field,
    k: &LevelCoefficients,
    r: &Field,
) -> Result<f64> {
    let t = remainder_terms(xi, chaos, psi, k)?;
    Ok(remainder_map(&t, k.mu, r)?.max_abs_diff(r) / (1.0 + t.rhs.max_abs()))
}

fn check_levels(fields: &[&Field], k: &LevelCoefficients) -> Result<()> {
    let spec = fields[0].spec();
    if fields.iter().any(|f| f.spec() != spec) || spec.n() != k.n {
        return Err(Error::Argument(
            "inputs must live on the level of the coefficients".into(),
        ));
    }
    if k.n == 0 {
        return Err(Error::Level {
            required: 1,
            got: 0,
        });
    }
    Ok(())
}

/// R_{-n+1} on Λ^n from
/// R = P₁Ⅱ + P₁(ξP₁ξ) + λP₁Ψ + λP₁(ξR) + λP₁(ⅡP₁ξ) + λ²P₁(ⅡR)
///   + λ²P₁(ΨP₁ξ) + λ³P₁(ΨR) + μλ^{-1}P₁ξ + μR.
pub fn solve_remainder(
    xi: &Field,
    chaos: &Field,
    psi: &Field,
    k: &LevelCoefficients,
    opts: &FlowOptions,
) -> Result<Field> {
    check_levels(&[xi, chaos, psi], k)?;
    if k.lambda == 0.0 {
        return Err(Error::Argument(
            "λ = 0: the remainder is defined by the λ → 0 branch of run_flow".into(),
        ));
    }
    if k.mu == 1.0 {
        return Err(Error::Argument(
            "μ = 1 makes the R-equation degenerate".into(),
        ));
    }
    let t = remainder_terms(xi, chaos, psi, k)?;
    match opts.method {
        RemainderMethod::Block(method) => solve_blocks(&t, k, method, opts.condition_threshold),
        RemainderMethod::FixedPoint {
            damping,
            tolerance,
            max_iterations,
        } => {
            let mut r = Field::zeros(*xi.spec());
            for _ in 0..max_iterations {
                let next = remainder_map(&t, k.mu, &r)?;
                let next = r.zip_map(&next, |a, b| (1.0 - damping) * a + damping * b);
                let change = next.max_abs_diff(&r);
                r = next;
                if change <= tolerance * (1.0 + r.max_abs()) {
                    return Ok(r);
                }
            }
            let last = remainder_map(&t, k.mu, &r)?.max_abs_diff(&r);
            Err(Error::NotConverged {
                iterations: max_iterations,
                last_update: last,
            })
        }
    }
}

fn solve_blocks(
    t: &RemainderTerms,
    k: &LevelCoefficients,
    method: BlockMethod,
    threshold: f64,
) -> Result<Field> {
    let spec = *t.rhs.spec();
    let layout = BlockLayout::new(&spec)?;
    let bl = spec.block_len();
    let mut out = vec![0.0; spec.len()];
    let (mut dg, mut v, mut b, mut x) =
        (vec![0.0; bl], vec![0.0; bl], vec![0.0; bl], vec![0.0; bl]);
    let sigma = t.sigma.values();
    let rhs = t.rhs.values();
    for (c, &base) in layout.bases.iter().enumerate() {
        for (j, &o) in layout.offsets.iter().enumerate() {
            let s = sigma[base + o];
            // (1−μ)I − P₁diag(σ) = diag(1−μ−σ) + L^{-d} 1 σᵀ
            dg[j] = 1.0 - k.mu - s;
            v[j] = s;
            b[j] = rhs[base + o];
        }
        let cond = solve_block(&dg, &v, &b, &mut x, method);
        if cond.is_nan() || cond > threshold {
            return Err(singular(&spec, k.n, c, cond));
        }
        for (j, &o) in layout.offsets.iter().enumerate() {
            out[base + o] = x[j];
        }
    }
    Ok(Field::from_raw(spec, out))
}

pub(crate) fn singular(
    spec: &crate::lattice::LatticeSpec,
    level: usize,
    block: usize,
    condition: f64,
) -> Error {
    let coarse = spec.coarser().expect("level >= 1");
    let l = spec.l() as i64;
    let Point(c) = coords_of(&coarse, block).expect("block index in range");
    Error::Singular {
        level,
        center: c.iter().map(|x| x * l).collect(),
        condition,
    }
}

/// Ψ_{-n+1} = L^{2−3α}·coarsen(Ψ + ξR + ⅡP₁ξ + λⅡR + λΨP₁ξ + λ²ΨR).
pub fn psi_step(
    psi: &Field,
    r: &Field,
    xi: &Field,
    chaos: &Field,
    k: &LevelCoefficients,
) -> Result<Field> {
    check_levels(&[psi, r, xi, chaos], k)?;
    let lam = k.lambda;
    let p1xi = fluct(xi)?;
    let (s, rv, v, c, p) = (
        psi.values(),
        r.values(),
        xi.values(),
        chaos.values(),
        p1xi.values(),
    );
    let sum = Field::from_fn(*psi.spec(), |i| {
        s[i] + v[i] * rv[i]
            + c[i] * p[i]
            + lam * c[i] * rv[i]
            + lam * s[i] * p[i]
            + lam * lam * s[i] * rv[i]
    });
    let spec = psi.spec();
    let factor = (spec.l() as f64).powf(2.0 - 3.0 * alpha(spec.d()));
    Ok(coarsen(&sum)?.scale(factor))
}

/// ρ_{-n} = λξ + λ²Ⅱ + λ³Ψ + μ.
pub fn effective_potential(xi: &Field, chaos: &Field, psi: &Field, k: &LevelCoefficients) -> Field {
    let (lam, mu) = (k.lambda, k.mu);
    let (v, c, s) = (xi.values(), chaos.values(), psi.values());
    Field::from_fn(*xi.spec(), |i| {
        lam * v[i] + lam * lam * c[i] + lam * lam * lam * s[i] + mu
    })
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub cutoff: usize,
    /// Indexed by level n = 0..=N.
    pub coeffs: Vec<LevelCoefficients>,
    /// Ψ_{-n} on Λ^n, n = 0..=N; `psi[N]` is zero.
    pub psi: Vec<Field>,
    /// R_{-n+1} on Λ^n, stored at index n = 1..=N; index 0 is `None`.
    pub remainder: Vec<Option<Field>>,
}

impl FlowTrajectory {
    /// ρ_{-n} along this trajectory.
    pub fn effective_potential(&self, noise: &EnhancedNoise, n: usize) -> Field {
        effective_potential(
            noise.xi(n),
            noise.chaos(self.cutoff, n),
            &self.psi[n],
            &self.coeffs[n],
        )
    }
}

pub fn run_flow(noise: &EnhancedNoise, c: &Couplings, cutoff: usize) -> Result<FlowTrajectory> {
    run_flow_with(noise, c, cutoff, &FlowOptions::default())
}

/// With λ = 0 nothing couples to the noise: R and Ψ are set to zero.
pub fn run_flow_with(
    noise: &EnhancedNoise,
    c: &Couplings,
    cutoff: usize,
    opts: &FlowOptions,
) -> Result<FlowTrajectory> {
    let cfg = noise.config();
    if cutoff > cfg.nmax {
        return Err(Error::Argument(format!(
            "cutoff {cutoff} exceeds Nmax {}",
            cfg.nmax
        )));
    }
    let coeffs: Vec<_> = (0..=cutoff)
        .map(|n| closed_form_with_variance(c, n, cfg.l, cfg.d, noise.variance()))
        .collect();
    let mut psi = vec![Field::zeros(cfg.spec(cutoff))];
    let mut remainder = vec![None; cutoff + 1];
    for n in (1..=cutoff).rev() {
        let k = &coeffs[n];
        let cur = psi.last().unwrap();
        let (r, next) = if k.lambda == 0.0 {
            (Field::zeros(cfg.spec(n)), Field::zeros(cfg.spec(n - 1)))
        } else {
            let xi = noise.xi(n);
            let chaos = noise.chaos(cutoff, n);
            let r = solve_remainder(xi, chaos, cur, k, opts)?;
            let next = psi_step(cur, &r, xi, chaos, k)?;
            (r, next)
        };
        remainder[n] = Some(r);
        psi.push(next);
    }
    psi.reverse();
    Ok(FlowTrajectory {
        cutoff,
        coeffs,
        psi,
        remainder,
    })
}
