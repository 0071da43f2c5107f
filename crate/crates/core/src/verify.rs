//! Monte Carlo and convergence harness.
//!
//! Every sample i draws its noise from `sample_seed(seed, i)`. Per-sample
//! results are collected into an index-ordered array and reduced
//! sequentially, so outputs do not depend on the number of threads.

use crate::error::{Error, Result};
use crate::flow::{run_flow, Couplings, FlowTrajectory};
use crate::lattice::{block_members, index_of, LatticeSpec, Point};
use crate::noise::{alpha, centering_constant, sample_base, EnhancedNoise, NoiseConfig};
use crate::norms::{
    besov_norm, default_holder_kappa, holder_distance, omega_indicator, stochastic_norm_from,
    uniform_stochastic_norm, weighted_sup_distance,
};
use crate::operators::{apply_fluct_propagator, coarsen, coarsen_by, fluct, refine};
use crate::rng::{sample_seed, stable_hash};
use crate::solver::{downward_pass, rg_solve, BareProblem, SolutionTrajectory, SolverOptions};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Fewest usable samples a convergence study accepts.
pub const MIN_USABLE_SAMPLES: usize = 10;
/// Minimum sample count for the closed-form moment estimators.
pub const MIN_MOMENT_SAMPLES: usize = 1000;
/// Salt mixed into the seed for the single retry allowed to a moment check.
const RETRY_SALT: u64 = 0x7265_7472_795f_3031;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub target_name: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub target: Option<f64>,
    pub z_score: Option<f64>,
}

impl McEstimate {
    /// Sample mean with standard error std/√n (std with n − 1 in the denominator).
    pub fn from_values(name: impl Into<String>, values: &[f64], target: Option<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let se = (var / n as f64).sqrt();
        let z_score = target.map(|t| {
            if se > 0.0 {
                (mean - t) / se
            } else if mean == t {
                0.0
            } else {
                f64::INFINITY.copysign(mean - t)
            }
        });
        Self {
            target_name: name.into(),
            estimate: mean,
            standard_error: se,
            n_samples: n,
            target,
            z_score,
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z_score.is_none_or(|z| z.abs() <= sigmas)
    }
}

/// Outcome of a moment check under the 3σ rule with one fresh-seed retry.
#[derive(Debug, Clone, Serialize)]
pub struct CheckedEstimate {
    pub first: McEstimate,
    pub retry: Option<McEstimate>,
    pub passed: bool,
}

/// Seed used for the retry of a check first run at `seed`.
pub fn retry_seed(seed: u64) -> u64 {
    stable_hash(seed, RETRY_SALT)
}

/// Runs `est(seed)`; if it misses `sigmas`, runs once more at [`retry_seed`].
pub fn check_with_retry(
    seed: u64,
    sigmas: f64,
    est: impl Fn(u64) -> Result<McEstimate>,
) -> Result<CheckedEstimate> {
    let first = est(seed)?;
    if first.within(sigmas) {
        return Ok(CheckedEstimate {
            first,
            retry: None,
            passed: true,
        });
    }
    let second = est(retry_seed(seed))?;
    let passed = second.within(sigmas);
    Ok(CheckedEstimate {
        first,
        retry: Some(second),
        passed,
    })
}

/// f(i, sample_seed(seed, i)) for i in `range`, in index order.
pub fn map_samples<T, F>(range: std::ops::Range<usize>, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    range
        .into_par_iter()
        .map(|i| f(i, sample_seed(seed, i as u64)))
        .collect()
}

/// Runs `f` inside a dedicated rayon pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Ordinary least squares y = intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// NaN when y is constant.
    pub r_squared: f64,
    pub slope_standard_error: f64,
    /// Two-sided p-value of slope = 0 under a t distribution with n − 2
    /// degrees of freedom; NaN with fewer than three points.
    pub p_value: f64,
    pub points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InsufficientData {
            usable: n.min(y.len()),
            required: 2,
        });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument(
            "regression needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { f64::NAN };
    let (se, p_value) = if n > 2 {
        let df = nf - 2.0;
        let se = (sse / df / sxx).sqrt();
        let p = if se > 0.0 {
            let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
            2.0 * (1.0 - t.cdf((slope / se).abs()))
        } else if slope == 0.0 {
            1.0
        } else {
            0.0
        };
        (se, p)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_standard_error: se,
        p_value,
        points: n,
    })
}

/// Two-sided one-sample t-test of mean = 0.
pub fn one_sample_t_p_value(values: &[f64]) -> f64 {
    let est = McEstimate::from_values("t", values, Some(0.0));
    if values.len() < 2 {
        return f64::NAN;
    }
    let z = est.z_score.unwrap();
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    let t = StudentsT::new(0.0, 1.0, (values.len() - 1) as f64).expect("df > 0");
    2.0 * (1.0 - t.cdf(z.abs()))
}

fn origin(spec: &LatticeSpec) -> usize {
    index_of(spec, &Point(vec![0; spec.d()])).expect("origin lies on every lattice")
}

fn require_samples(samples: usize, required: usize) -> Result<()> {
    if samples < required {
        return Err(Error::InsufficientData {
            usable: samples,
            required,
        });
    }
    Ok(())
}

/// E[coarsen^k(ξ·Γ_k ξ)(0)] on Λ^n for unit-variance ξ; target c_k.
pub fn mc_pair_moment(
    l: usize,
    d: usize,
    n: usize,
    depth: usize,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    require_samples(samples, MIN_MOMENT_SAMPLES)?;
    if depth == 0 || depth > n {
        return Err(Error::Argument(format!(
            "depth must lie in 1..={n}, got {depth}"
        )));
    }
    NoiseConfig::new(seed, n, l, d)?;
    let values: Vec<f64> = map_samples(0..samples, seed, |_, s| {
        let cfg = NoiseConfig::new(s, n, l, d).expect("validated");
        let xi = sample_base(&cfg);
        let prod = xi.mul(&apply_fluct_propagator(&xi, depth).expect("depth <= n"));
        let c = coarsen_by(&prod, depth).expect("depth <= n");
        c.values()[origin(c.spec())]
    });
    Ok(McEstimate::from_values(
        format!("E[Q(xi G_{depth} xi)]"),
        &values,
        Some(centering_constant(l, d, depth)),
    ))
}

/// E[P₁ξ(x)·P₁ξ(0)] for every x in the level-1 block of the origin and for
/// the cross-block point (L, 0, ..).
pub fn mc_fluct_covariance(
    l: usize,
    d: usize,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    require_samples(samples, MIN_MOMENT_SAMPLES)?;
    if n < 2 {
        return Err(Error::Argument("a cross-block pair needs n >= 2".into()));
    }
    let spec = NoiseConfig::new(seed, n, l, d)?.spec(n);
    let zero = Point(vec![0; d]);
    let mut points = block_members(&spec, &zero)?;
    let mut cross = vec![0; d];
    cross[0] = l as i64;
    points.push(Point(cross));
    let idx: Vec<usize> = points
        .iter()
        .map(|p| index_of(&spec, p))
        .collect::<Result<_>>()?;
    let o = origin(&spec);
    let block = (l as f64).powi(-(d as i32));
    let rows: Vec<Vec<f64>> = map_samples(0..samples, seed, |_, s| {
        let cfg = NoiseConfig::new(s, n, l, d).expect("validated");
        let p = fluct(&sample_base(&cfg)).expect("n >= 1");
        idx.iter().map(|&i| p.values()[i] * p.values()[o]).collect()
    });
    Ok(points
        .iter()
        .enumerate()
        .map(|(j, pt)| {
            let target = if j + 1 == points.len() {
                0.0
            } else if pt.0.iter().all(|&c| c == 0) {
                1.0 - block
            } else {
                -block
            };
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            McEstimate::from_values(format!("cov(x={:?})", pt.0), &col, Some(target))
        })
        .collect())
}

/// Var((Ⅱ^{(K)} − Ⅱ^{(K−1)})_{-n}(0)) under the coupled construction; the
/// increment has mean zero, so the estimator averages its square.
pub fn mc_chaos_increment_variance(
    l: usize,
    d: usize,
    n: usize,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    require_samples(samples, MIN_MOMENT_SAMPLES)?;
    if n >= k {
        return Err(Error::Argument(format!("need n < K, got n = {n}, K = {k}")));
    }
    NoiseConfig::new(seed, k, l, d)?;
    let values: Vec<f64> = map_samples(0..samples, seed, |_, s| {
        let cfg = NoiseConfig::new(s, k, l, d).expect("validated");
        let noise = EnhancedNoise::sample(&cfg).expect("valid config");
        let inc = noise.chaos(k, n).sub(noise.chaos(k - 1, n));
        let x = inc.values()[origin(inc.spec())];
        x * x
    });
    let lf = l as f64;
    let target = 2.0 * (1.0 - lf.powi(-(d as i32))) * lf.powf(-2.0 * alpha(d) * (k - n) as f64);
    Ok(McEstimate::from_values(
        format!("Var(dII K={k} n={n})"),
        &values,
        Some(target),
    ))
}

/// Uniform stochastic norm of each sample's enhanced noise up to Nmax.
pub fn sample_uniform_norms(
    l: usize,
    d: usize,
    nmax: usize,
    samples: std::ops::Range<usize>,
    seed: u64,
    kappa_s: f64,
) -> Result<Vec<f64>> {
    NoiseConfig::new(seed, nmax, l, d)?;
    Ok(map_samples(samples, seed, |_, s| {
        let cfg = NoiseConfig::new(s, nmax, l, d).expect("validated");
        uniform_stochastic_norm(&EnhancedNoise::sample(&cfg).expect("valid config"), kappa_s)
    }))
}

fn check_g(g: f64) -> Result<()> {
    omega_indicator(0.0, g).map(|_| ())
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub g: f64,
    pub inv_g2: f64,
    pub rejected: usize,
    pub p_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailTable {
    pub kappa_s: f64,
    pub nmax: usize,
    pub samples: usize,
    /// Rows in the order of the requested grid.
    pub rows: Vec<TailRow>,
    /// P̂ non-increasing as 1/g grows.
    pub monotone: bool,
    /// log P̂ against g^{-2} over rows with P̂ > 0.
    pub fit: Option<LinearFit>,
}

pub fn mc_tail_probability(
    l: usize,
    d: usize,
    nmax: usize,
    g_grid: &[f64],
    samples: usize,
    seed: u64,
    kappa_s: f64,
) -> Result<TailTable> {
    for &g in g_grid {
        check_g(g)?;
    }
    require_samples(samples, 1)?;
    let norms = sample_uniform_norms(l, d, nmax, 0..samples, seed, kappa_s)?;
    let rows: Vec<TailRow> = g_grid
        .iter()
        .map(|&g| {
            let rejected = norms
                .iter()
                .filter(|&&x| !omega_indicator(x, g).expect("checked"))
                .count();
            TailRow {
                g,
                inv_g2: 1.0 / (g * g),
                rejected,
                p_hat: rejected as f64 / samples as f64,
            }
        })
        .collect();
    let mut order: Vec<&TailRow> = rows.iter().collect();
    order.sort_by(|a, b| b.g.total_cmp(&a.g));
    let monotone = order.windows(2).all(|w| w[1].p_hat <= w[0].p_hat);
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.p_hat > 0.0)
        .map(|r| (r.inv_g2, r.p_hat.ln()))
        .unzip();
    let fit = linear_fit(&x, &y).ok();
    Ok(TailTable {
        kappa_s,
        nmax,
        samples,
        rows,
        monotone,
        fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub p: f64,
    /// E[‖(ξ,Ⅱ)‖^p]^{1/p}.
    pub moment_root: f64,
    /// moment_root / √p.
    pub ratio_to_sqrt_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub kappa_s: f64,
    pub nmax: usize,
    pub samples: usize,
    pub rows: Vec<MomentRow>,
    /// log moment_root against log p.
    pub fit: LinearFit,
}

/// E[X^p]^{1/p} evaluated as exp(log-mean-exp(p·log X)/p).
fn moment_root(values: &[f64], p: f64) -> f64 {
    let logs: Vec<f64> = values.iter().map(|v| p * v.ln()).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return 0.0;
    }
    let s: f64 = logs.iter().map(|a| (a - m).exp()).sum::<f64>() / values.len() as f64;
    ((m + s.ln()) / p).exp()
}

pub fn mc_norm_moment_growth(
    l: usize,
    d: usize,
    nmax: usize,
    p_grid: &[f64],
    samples: usize,
    seed: u64,
    kappa_s: f64,
) -> Result<MomentTable> {
    if let Some(p) = p_grid.iter().find(|p| !(2.0..=12.0).contains(*p)) {
        return Err(Error::Range {
            what: "p",
            detail: format!("{p} not in [2, 12]"),
        });
    }
    require_samples(samples, 2)?;
    let norms = sample_uniform_norms(l, d, nmax, 0..samples, seed, kappa_s)?;
    let rows: Vec<MomentRow> = p_grid
        .iter()
        .map(|&p| {
            let m = moment_root(&norms, p);
            MomentRow {
                p,
                moment_root: m,
                ratio_to_sqrt_p: m / p.sqrt(),
            }
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.p.ln(), r.moment_root.ln())).unzip();
    Ok(MomentTable {
        kappa_s,
        nmax,
        samples,
        fit: linear_fit(&x, &y)?,
        rows,
    })
}

/// Collects `wanted` samples whose uniform stochastic norm lies in Ω_g,
/// scanning indices 0, 1, 2, .. in parallel batches. Each accepted index is
/// passed to `work`. Stops after `max_draws` indices.
struct OmegaDraws<T> {
    drawn: usize,
    rejected: usize,
    accepted: Vec<(usize, T)>,
}

fn draw_omega<T, F>(
    wanted: usize,
    max_draws: usize,
    seed: u64,
    g: f64,
    nmax_cfg: NoiseConfig,
    kappa_s: f64,
    work: F,
) -> OmegaDraws<T>
where
    T: Send,
    F: Fn(usize, EnhancedNoise) -> T + Sync + Send,
{
    let mut out = OmegaDraws {
        drawn: 0,
        rejected: 0,
        accepted: Vec::new(),
    };
    while out.accepted.len() < wanted && out.drawn < max_draws {
        let batch = (wanted - out.accepted.len()).min(max_draws - out.drawn);
        let start = out.drawn;
        let results: Vec<Option<T>> = map_samples(start..start + batch, seed, |_, s| {
            let cfg = NoiseConfig {
                seed: s,
                ..nmax_cfg
            };
            let noise = EnhancedNoise::sample(&cfg).expect("valid config");
            let norm = uniform_stochastic_norm(&noise, kappa_s);
            omega_indicator(norm, g)
                .expect("checked")
                .then(|| work(0, noise))
        });
        for (j, r) in results.into_iter().enumerate() {
            match r {
                Some(t) => out.accepted.push((start + j, t)),
                None => out.rejected += 1,
            }
        }
        out.drawn += batch;
    }
    out
}

/// Per-quantity κ weights of the convergence distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceOptions {
    /// κ_s of the Ω_g selection.
    pub kappa_s: f64,
    /// Weight L^{−κn} for Ⅱ increments.
    pub kappa_chaos: f64,
    /// Weight L^{−κn} for Ψ increments.
    pub kappa_psi: f64,
    /// Hölder κ for v trajectories.
    pub kappa_v: f64,
    /// Besov exponent is 1 − kappa_u.
    pub kappa_u: f64,
    /// Give up after this many draws per wanted sample.
    pub max_draw_factor: usize,
}

impl ConvergenceOptions {
    /// κ = 2κ_s for Ⅱ and 3κ_s (plus margin) for Ψ and the solution.
    pub fn from_kappa_s(kappa_s: f64) -> Self {
        Self {
            kappa_s,
            kappa_chaos: 2.0 * kappa_s,
            kappa_psi: 3.0 * kappa_s,
            kappa_v: default_holder_kappa(kappa_s),
            kappa_u: default_holder_kappa(kappa_s),
            max_draw_factor: 20,
        }
    }

    /// One κ for all four distances.
    pub fn uniform(kappa_s: f64, kappa: f64) -> Self {
        Self {
            kappa_s,
            kappa_chaos: kappa,
            kappa_psi: kappa,
            kappa_v: kappa,
            kappa_u: kappa,
            max_draw_factor: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub quantity: String,
    /// The smaller cutoff N of each compared pair (N, N+1).
    pub cutoffs: Vec<usize>,
    /// Sample mean of the distance per pair.
    pub distances: Vec<f64>,
    /// Least-squares slope of ln distance against N; `None` unless at least
    /// two distances are positive.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
}

impl ConvergenceReport {
    fn new(quantity: &str, cutoffs: Vec<usize>, distances: Vec<f64>) -> Self {
        let (x, y): (Vec<f64>, Vec<f64>) = cutoffs
            .iter()
            .zip(&distances)
            .filter(|(_, &dist)| dist > 0.0)
            .map(|(&n, &dist)| (n as f64, dist.ln()))
            .unzip();
        let fit = linear_fit(&x, &y).ok();
        Self {
            quantity: quantity.into(),
            cutoffs,
            distances,
            rate: fit.map(|f| f.slope),
            r_squared: fit.map(|f| f.r_squared),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub options: ConvergenceOptions,
    pub drawn: usize,
    pub rejected: usize,
    /// Accepted samples whose solve or flow failed.
    pub failed: usize,
    pub used: usize,
    pub reports: Vec<ConvergenceReport>,
    /// Worst |v[n] − L^{−α} coarsen(v[n+1])| over used samples and cutoffs.
    pub consistency_max: f64,
}

/// Report names in output order. The last one, |ΔⅡ₀| at level 0, decays
/// like the closed-form standard deviation L^{−α(N+1)} and serves as a rate
/// reference; the first four are the convergence claims.
pub const QUANTITIES: [&str; 5] = ["chaos", "psi", "v", "u_besov", "chaos_level0"];

struct CutoffRun {
    flow: FlowTrajectory,
    traj: SolutionTrajectory,
}

/// Distances for one sample, indexed [quantity][N − 2], plus the worst consistency error.
fn sample_distances(
    noise: &EnhancedNoise,
    c: &Couplings,
    opts: &ConvergenceOptions,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let nmax = noise.nmax();
    let runs: Vec<CutoffRun> = (2..=nmax)
        .map(|cutoff| {
            let flow = run_flow(noise, c, cutoff)?;
            let traj = rg_solve(&BareProblem::new(noise, cutoff, *c)?)?;
            Ok(CutoffRun { flow, traj })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); QUANTITIES.len()];
    let beta = 1.0 - opts.kappa_u;
    for (i, pair) in runs.windows(2).enumerate() {
        let (lo, hi) = (&pair[0], &pair[1]);
        let cutoff = i + 2;
        out[0].push(weighted_sup_distance(
            noise.chaos_trajectory(cutoff + 1),
            noise.chaos_trajectory(cutoff),
            opts.kappa_chaos,
        )?);
        out[1].push(weighted_sup_distance(
            &hi.flow.psi,
            &lo.flow.psi,
            opts.kappa_psi,
        )?);
        out[2].push(holder_distance(&hi.traj, &lo.traj, opts.kappa_v)?);
        let diff = hi.traj.u_values.sub(&refine(&lo.traj.u_values));
        out[3].push(besov_norm(&diff, beta));
        let top = noise.chaos(cutoff + 1, 0).values()[0] - noise.chaos(cutoff, 0).values()[0];
        out[4].push(top.abs());
    }
    let consistency = runs
        .iter()
        .map(|r| r.traj.consistency_error())
        .fold(0.0, f64::max);
    Ok((out, consistency))
}

/// Coupled cutoff-increment distances for N = 2..Nmax−1 over `samples`
/// Ω_g samples.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    l: usize,
    d: usize,
    nmax: usize,
    g: f64,
    r: f64,
    samples: usize,
    seed: u64,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceStudy> {
    let cfg = NoiseConfig::new(seed, nmax, l, d)?;
    let c = Couplings::new(g, r)?;
    check_g(g)?;
    if nmax < 4 {
        return Err(Error::Argument(format!(
            "a rate needs Nmax >= 4, got {nmax}"
        )));
    }
    let draws = draw_omega(
        samples,
        samples.saturating_mul(opts.max_draw_factor),
        seed,
        g,
        cfg,
        opts.kappa_s,
        |_, noise| sample_distances(&noise, &c, opts),
    );
    let accepted = draws.accepted.len();
    let per_sample: Vec<(Vec<Vec<f64>>, f64)> = draws
        .accepted
        .into_iter()
        .filter_map(|(_, r)| r.ok())
        .collect();
    let failed = accepted - per_sample.len();
    study_from(per_sample, draws.drawn, draws.rejected, failed, nmax, *opts)
}

/// Same study on one fixed noise realisation (used for degenerate noise).
pub fn convergence_study_single(
    noise: &EnhancedNoise,
    c: &Couplings,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceStudy> {
    let one = sample_distances(noise, c, opts)?;
    let nmax = noise.nmax();
    let samples = vec![one; MIN_USABLE_SAMPLES];
    study_from(samples, MIN_USABLE_SAMPLES, 0, 0, nmax, *opts)
}

fn study_from(
    per_sample: Vec<(Vec<Vec<f64>>, f64)>,
    drawn: usize,
    rejected: usize,
    failed: usize,
    nmax: usize,
    options: ConvergenceOptions,
) -> Result<ConvergenceStudy> {
    let used = per_sample.len();
    if used < MIN_USABLE_SAMPLES {
        return Err(Error::InsufficientData {
            usable: used,
            required: MIN_USABLE_SAMPLES,
        });
    }
    let cutoffs: Vec<usize> = (2..nmax).collect();
    let reports = QUANTITIES
        .iter()
        .enumerate()
        .map(|(q, name)| {
            let distances = (0..cutoffs.len())
                .map(|j| per_sample.iter().map(|(s, _)| s[q][j]).sum::<f64>() / used as f64)
                .collect();
            ConvergenceReport::new(name, cutoffs.clone(), distances)
        })
        .collect();
    let consistency_max = per_sample.iter().map(|(_, c)| *c).fold(0.0, f64::max);
    Ok(ConvergenceStudy {
        options,
        drawn,
        rejected,
        failed,
        used,
        reports,
        consistency_max,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub cutoffs: Vec<usize>,
    /// Sample mean of ρ'₀ with the bare mass fixed at r.
    pub mean_without: Vec<f64>,
    /// Sample mean of ρ'₀ with the renormalised bare mass r_N.
    pub mean_with: Vec<f64>,
    pub slope_target: f64,
    pub fit_without: LinearFit,
    /// Regression of the renormalised means on N; its p-value is the trend test.
    pub fit_with: LinearFit,
    /// Paired alternative: t-test on the per-sample slopes of the renormalised runs.
    pub paired_slope_p_value: f64,
    pub used: usize,
    pub failed: usize,
}

impl AblationReport {
    pub fn slope_relative_error(&self) -> f64 {
        if self.slope_target == 0.0 {
            self.fit_without.slope.abs()
        } else {
            (self.fit_without.slope / self.slope_target - 1.0).abs()
        }
    }
}

/// Level-0 effective scalar ρ'₀ for N = 1..=Nmax with and without the
/// mass counterterm, on coupled noise.
#[allow(clippy::too_many_arguments)]
pub fn ablate_counterterm(
    l: usize,
    d: usize,
    nmax: usize,
    g: f64,
    r: f64,
    samples: usize,
    seed: u64,
) -> Result<AblationReport> {
    NoiseConfig::new(seed, nmax, l, d)?;
    let c = Couplings::new(g, r)?;
    if nmax < 3 {
        return Err(Error::Argument(format!(
            "a trend needs Nmax >= 3, got {nmax}"
        )));
    }
    require_samples(samples, 2)?;
    let opts = SolverOptions::default();
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = map_samples(0..samples, seed, |_, s| {
        let cfg = NoiseConfig::new(s, nmax, l, d).expect("validated");
        let noise = EnhancedNoise::sample(&cfg)?;
        let mut with = Vec::with_capacity(nmax);
        let mut without = Vec::with_capacity(nmax);
        for cutoff in 1..=nmax {
            let p = BareProblem::new(&noise, cutoff, c)?;
            with.push(downward_pass(&p, &opts)?.level0_potential());
            without.push(downward_pass(&p.without_counterterm(), &opts)?.level0_potential());
        }
        Ok((with, without))
    });
    let ok: Vec<(Vec<f64>, Vec<f64>)> = results.into_iter().filter_map(|r| r.ok()).collect();
    let used = ok.len();
    require_samples(used, 2)?;
    let cutoffs: Vec<usize> = (1..=nmax).collect();
    let x: Vec<f64> = cutoffs.iter().map(|&n| n as f64).collect();
    let mean = |with: bool| -> Vec<f64> {
        (0..nmax)
            .map(|j| {
                ok.iter()
                    .map(|s| if with { s.0[j] } else { s.1[j] })
                    .sum::<f64>()
                    / used as f64
            })
            .collect()
    };
    let mean_with = mean(true);
    let mean_without = mean(false);
    let per_sample_slopes: Vec<f64> = ok
        .iter()
        .map(|s| linear_fit(&x, &s.0).map(|f| f.slope))
        .collect::<Result<_>>()?;
    let q = 1.0 - (l as f64).powi(-(d as i32));
    Ok(AblationReport {
        fit_without: linear_fit(&x, &mean_without)?,
        fit_with: linear_fit(&x, &mean_with)?,
        paired_slope_p_value: one_sample_t_p_value(&per_sample_slopes),
        slope_target: q * g * g,
        cutoffs,
        mean_without,
        mean_with,
        used,
        failed: samples - used,
    })
}

/// Per-bound violation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundCounts {
    pub psi: usize,
    pub remainder: usize,
    pub v0: usize,
    pub q_growth: usize,
    pub p_growth: usize,
}

impl BoundCounts {
    fn add(&mut self, o: &BoundCounts) {
        self.psi += o.psi;
        self.remainder += o.remainder;
        self.v0 += o.v0;
        self.q_growth += o.q_growth;
        self.p_growth += o.p_growth;
    }

    fn all() -> Self {
        Self {
            psi: 1,
            remainder: 1,
            v0: 1,
            q_growth: 1,
            p_growth: 1,
        }
    }

    pub fn as_array(&self) -> [(&'static str, usize); 5] {
        [
            ("psi", self.psi),
            ("remainder", self.remainder),
            ("v0", self.v0),
            ("q_growth", self.q_growth),
            ("p_growth", self.p_growth),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub l: usize,
    pub cutoff: usize,
    pub g: f64,
    pub r: f64,
    pub kappa_s: f64,
    pub drawn: usize,
    pub rejected: usize,
    pub accepted: usize,
    /// Accepted samples whose flow or solve failed; they count as violating every bound.
    pub failed: usize,
    pub violations: BoundCounts,
}

impl BoundReport {
    /// Violation rate per bound over accepted samples.
    pub fn rates(&self) -> [(&'static str, f64); 5] {
        self.violations
            .as_array()
            .map(|(k, v)| (k, v as f64 / self.accepted.max(1) as f64))
    }
}

fn sample_bounds(
    noise: &EnhancedNoise,
    c: &Couplings,
    cutoff: usize,
    kappa_s: f64,
) -> Result<BoundCounts> {
    let cfg = noise.config();
    let lf = cfg.l as f64;
    let a = alpha(cfg.d);
    let g = c.g();
    let flow = run_flow(noise, c, cutoff)?;
    let traj = rg_solve(&BareProblem::new(noise, cutoff, *c)?)?;
    let psi_weighted = (0..=cutoff)
        .map(|n| lf.powf(-3.0 * kappa_s * n as f64) * flow.psi[n].max_abs())
        .fold(0.0, f64::max);
    let remainder_bad = (1..=cutoff).any(|n| {
        let rn = flow.remainder[n]
            .as_ref()
            .expect("stored for n >= 1")
            .max_abs();
        let tail_norm = (n..=cutoff)
            .map(|k| stochastic_norm_from(noise, k, kappa_s, n))
            .fold(0.0, f64::max);
        rn > 16.0 * lf.powf(2.0 * kappa_s * n as f64) / g * tail_norm
    });
    let q_bad = (1..=cutoff).any(|n| {
        coarsen(&traj.v[n]).expect("n >= 1").max_abs() > (8.0 * lf.powf(a)).powi(n as i32)
    });
    let p_bad = (1..=cutoff).any(|n| {
        fluct(&traj.v[n]).expect("n >= 1").max_abs() > (32.0 * lf.powf(kappa_s)).powi(n as i32)
    });
    Ok(BoundCounts {
        psi: (psi_weighted > (2.0 * g).powi(-3)) as usize,
        remainder: remainder_bad as usize,
        v0: (traj.v[0].values()[0].abs() > 8.0) as usize,
        q_growth: q_bad as usize,
        p_growth: p_bad as usize,
    })
}

/// Checks the deterministic bounds of the effective-force and solution
/// estimates on `samples` Ω_g samples at cutoff N.
#[allow(clippy::too_many_arguments)]
pub fn bound_monitor(
    l: usize,
    d: usize,
    cutoff: usize,
    g: f64,
    r: f64,
    kappa_s: f64,
    samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    let cfg = NoiseConfig::new(seed, cutoff, l, d)?;
    let c = Couplings::new(g, r)?;
    check_g(g)?;
    let draws = draw_omega(
        samples,
        samples.saturating_mul(20),
        seed,
        g,
        cfg,
        kappa_s,
        |_, noise| sample_bounds(&noise, &c, cutoff, kappa_s),
    );
    let mut violations = BoundCounts::default();
    let mut failed = 0;
    for (_, r) in &draws.accepted {
        match r {
            Ok(b) => violations.add(b),
            Err(_) => {
                failed += 1;
                violations.add(&BoundCounts::all());
            }
        }
    }
    Ok(BoundReport {
        l,
        cutoff,
        g,
        r,
        kappa_s,
        drawn: draws.drawn,
        rejected: draws.rejected,
        accepted: draws.accepted.len(),
        failed,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_statistics() {
        let e = McEstimate::from_values("x", &[1.0, 2.0, 3.0, 4.0], Some(2.0));
        assert_eq!(e.estimate, 2.5);
        let se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((e.standard_error - se).abs() < 1e-15);
        assert!((e.z_score.unwrap() - 0.5 / se).abs() < 1e-12);
        let c = McEstimate::from_values("c", &[1.0; 5], Some(1.0));
        assert_eq!(c.z_score, Some(0.0));
        assert!(McEstimate::from_values("n", &[1.0], None).within(0.0));
    }

    #[test]
    fn linear_fit_exact_and_noisy() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let f = linear_fit(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert_eq!(f.p_value, 0.0);
        let flat = linear_fit(&x, &[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!((flat.p_value - 1.0).abs() < 1e-12);
        // slope 0.3, residuals ±0.1: t = 0.3/√(0.04/2/5) = 4.743 on 2 df
        let f = linear_fit(&x, &[0.4, 0.5, 1.0, 1.1]).unwrap();
        assert!((f.slope - 0.26).abs() < 1e-12);
        assert!(f.p_value > 0.01 && f.p_value < 0.1, "{}", f.p_value);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn t_test_p_value() {
        // Symmetric data: mean 0, p = 1.
        assert!((one_sample_t_p_value(&[-1.0, 1.0, -2.0, 2.0]) - 1.0).abs() < 1e-12);
        // n = 2, t = 3 on 1 df: p = 1 − 2·atan(3)/π.
        let p = one_sample_t_p_value(&[2.0, 4.0]);
        let oracle = 1.0 - 2.0 * 3.0f64.atan() / std::f64::consts::PI;
        assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
    }

    #[test]
    fn moment_root_matches_direct() {
        let v = [0.5, 1.5, 2.0, 3.0];
        for p in [2.0, 5.0, 12.0] {
            let direct = (v.iter().map(|x: &f64| x.powf(p)).sum::<f64>() / 4.0).powf(1.0 / p);
            assert!((moment_root(&v, p) - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let run = || {
            mc_tail_probability(3, 2, 2, &[1.0, 0.5], 64, 9, 0.5)
                .unwrap()
                .rows[0]
                .rejected
        };
        let a = with_threads(1, run).unwrap();
        let b = with_threads(3, run).unwrap();
        assert_eq!(a, b);
        let m = |t| with_threads(t, || mc_pair_moment(3, 2, 2, 1, 1000, 4).unwrap()).unwrap();
        assert_eq!(m(1), m(4));
    }

    #[test]
    fn preconditions() {
        assert!(matches!(
            mc_pair_moment(3, 2, 2, 1, 999, 0),
            Err(Error::InsufficientData { .. })
        ));
        assert!(mc_pair_moment(3, 2, 2, 3, 1000, 0).is_err());
        assert!(mc_chaos_increment_variance(3, 2, 2, 2, 1000, 0).is_err());
        assert!(mc_fluct_covariance(3, 2, 1, 1000, 0).is_err());
        assert!(mc_tail_probability(3, 2, 2, &[0.0], 10, 0, 0.05).is_err());
        assert!(mc_norm_moment_growth(3, 2, 2, &[1.0], 10, 0, 0.05).is_err());
        let o = ConvergenceOptions::from_kappa_s(0.05);
        assert!(convergence_study(3, 2, 3, 0.1, 1.0, 20, 0, &o).is_err());
        assert!(matches!(
            convergence_study(3, 2, 4, 0.1, 1.0, 5, 0, &o),
            Err(Error::InsufficientData {
                usable: 5,
                required: 10
            })
        ));
    }

    #[test]
    fn retry_only_on_miss() {
        let hit = check_with_retry(1, 3.0, |_| {
            Ok(McEstimate::from_values("a", &[0.0, 1.0], Some(0.5)))
        })
        .unwrap();
        assert!(hit.passed && hit.retry.is_none());
        let miss = check_with_retry(1, 3.0, |s| {
            let t = if s == 1 { 50.0 } else { 0.5 };
            Ok(McEstimate::from_values("a", &[0.0, 1.0], Some(t)))
        })
        .unwrap();
        assert!(miss.passed && miss.retry.is_some());
    }

    #[test]
    fn zero_noise_study_has_zero_distances() {
        let cfg = NoiseConfig::new(0, 5, 3, 2).unwrap();
        let z = EnhancedNoise::zero(&cfg);
        let c = Couplings::new(0.1, 1.0).unwrap();
        let s = convergence_study_single(&z, &c, &ConvergenceOptions::from_kappa_s(0.05)).unwrap();
        for r in &s.reports {
            assert!(
                r.distances.iter().all(|&x| x < 1e-14),
                "{}: {:?}",
                r.quantity,
                r.distances
            );
        }
    }
}
