//! Command dispatch. Each command writes its tables and a `summary.json`
//! into the output directory and returns the criteria it asserted.

use crate::config::RunConfig;
use crate::output::{Artifacts, Cell};
use crate::selftest;
use hrg_core::flow::{remainder_residual, run_flow_with, Couplings, FlowOptions};
use hrg_core::lattice::coords_of;
use hrg_core::noise::{alpha, EnhancedNoise, NoiseConfig};
use hrg_core::norms::{stochastic_norm, uniform_stochastic_norm};
use hrg_core::operators::{coarsen, fluct, mean_total};
use hrg_core::rng::stable_hash;
use hrg_core::solver::{dense_solve, residual, rg_solve_with, BareProblem, SolverOptions};
use hrg_core::verify::{self, check_with_retry, ConvergenceOptions, QUANTITIES};
use serde::Serialize;
use std::path::PathBuf;

pub const TAIL_G_GRID: [f64; 5] = [1.0, 0.5, 0.33, 0.25, 0.2];
pub const MOMENT_P_GRID: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Selftest,
    Sample,
    Flow,
    Solve,
    VerifyMoments,
    Tail,
    MomentsGrowth,
    Converge,
    Ablate,
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Selftest => "selftest",
            Command::Sample => "sample",
            Command::Flow => "flow",
            Command::Solve => "solve",
            Command::VerifyMoments => "verify-moments",
            Command::Tail => "tail",
            Command::MomentsGrowth => "moments-growth",
            Command::Converge => "converge",
            Command::Ablate => "ablate",
            Command::Bounds => "bounds",
        }
    }

    /// Defaults before the config file and flags are applied.
    pub fn default_config(self) -> RunConfig {
        let base = RunConfig::default();
        let (nmax, samples, g) = match self {
            Command::Selftest => (3, 10, base.g),
            Command::Sample | Command::Flow => (4, 1, base.g),
            Command::Solve => (3, 1, base.g),
            Command::VerifyMoments => (2, 100_000, base.g),
            Command::Tail | Command::MomentsGrowth => (4, 10_000, base.g),
            Command::Converge => (5, 50, base.g),
            Command::Ablate => (5, 200, 0.5),
            Command::Bounds => (3, 1000, base.g),
        };
        RunConfig {
            nmax,
            samples,
            g,
            ..base
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub criteria: Vec<Criterion>,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.criteria
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Engine(#[from] hrg_core::Error),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    criteria: &'a [Criterion],
    data: T,
}

fn finish<T: Serialize>(
    mut art: Artifacts,
    criteria: Vec<Criterion>,
    data: T,
    summary: String,
) -> Result<Outcome, RunError> {
    art.write_json(
        "summary.json",
        &Summary {
            criteria: &criteria,
            data,
        },
    )?;
    Ok(Outcome {
        criteria,
        summary,
        files: art.written().to_vec(),
    })
}

fn couplings(cfg: &RunConfig) -> Result<Couplings, RunError> {
    Ok(Couplings::new(cfg.g, cfg.r)?)
}

fn require_positive_g(cfg: &RunConfig, what: &str) -> Result<(), RunError> {
    if cfg.g > 0.0 {
        Ok(())
    } else {
        Err(RunError::Usage(format!(
            "{what} conditions on Ω_g and needs g > 0"
        )))
    }
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome, RunError> {
    let art = Artifacts::create(cfg, cmd.name())?;
    match cmd {
        Command::Selftest => selftest_cmd(cfg, art),
        Command::Sample => sample_cmd(cfg, art),
        Command::Flow => flow_cmd(cfg, art),
        Command::Solve => solve_cmd(cfg, art),
        Command::VerifyMoments => moments_cmd(cfg, art),
        Command::Tail => tail_cmd(cfg, art),
        Command::MomentsGrowth => growth_cmd(cfg, art),
        Command::Converge => converge_cmd(cfg, art),
        Command::Ablate => ablate_cmd(cfg, art),
        Command::Bounds => bounds_cmd(cfg, art),
    }
}

fn selftest_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let checks = selftest::run(cfg);
    let rows: Vec<Vec<Cell>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone().into(),
                c.value.into(),
                c.tolerance.into(),
                c.pass.into(),
            ]
        })
        .collect();
    art.write_csv(
        "selftest.csv",
        &["check", "max_error", "tolerance", "pass"],
        &rows,
    )?;
    let criteria: Vec<Criterion> = checks
        .iter()
        .map(|c| {
            Criterion::new(
                &c.name,
                c.pass,
                format!("{:e} <= {:e}", c.value, c.tolerance),
            )
        })
        .collect();
    let passed = criteria.iter().filter(|c| c.pass).count();
    let summary = format!("selftest: {passed}/{} checks passed", criteria.len());
    finish(art, criteria, &checks, summary)
}

fn noise(cfg: &RunConfig) -> Result<EnhancedNoise, RunError> {
    Ok(EnhancedNoise::sample(&NoiseConfig::new(
        cfg.seed, cfg.nmax, cfg.l, cfg.d,
    )?)?)
}

fn coord_columns(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn sample_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let noise = noise(cfg)?;
    let mut cols = vec!["level".to_string(), "index".to_string()];
    cols.extend(coord_columns(cfg.d));
    cols.extend(["xi".to_string(), "chaos".to_string()]);
    let mut rows = Vec::new();
    for n in 0..=cfg.nmax {
        let xi = noise.xi(n);
        let ch = noise.chaos(cfg.nmax, n);
        for i in 0..xi.len() {
            let mut row: Vec<Cell> = vec![n.into(), i.into()];
            row.extend(coords_of(xi.spec(), i)?.0.into_iter().map(Cell::from));
            row.extend([xi.values()[i].into(), ch.values()[i].into()]);
            rows.push(row);
        }
    }
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    art.write_csv("noise.csv", &cols, &rows)?;
    let norm = stochastic_norm(&noise, cfg.nmax, cfg.kappa_s);
    let uniform = uniform_stochastic_norm(&noise, cfg.kappa_s);
    let data = serde_json::json!({
        "max_abs_xi_top": noise.xi(cfg.nmax).max_abs(),
        "stochastic_norm": norm,
        "uniform_stochastic_norm": uniform,
    });
    let summary = format!(
        "sample: L={} Nmax={} seed={} stochastic norm {:.6}",
        cfg.l, cfg.nmax, cfg.seed, norm
    );
    finish(art, Vec::new(), data, summary)
}

fn flow_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let noise = noise(cfg)?;
    let c = couplings(cfg)?;
    let opts = FlowOptions {
        condition_threshold: cfg.condition_threshold,
        ..FlowOptions::default()
    };
    let flow = run_flow_with(&noise, &c, cfg.nmax, &opts)?;
    let coeff_rows: Vec<Vec<Cell>> = flow
        .coeffs
        .iter()
        .map(|k| vec![k.n.into(), k.lambda.into(), k.mu.into(), k.gamma.into()])
        .collect();
    art.write_csv(
        "coefficients.csv",
        &["n", "lambda", "mu", "gamma"],
        &coeff_rows,
    )?;
    let mut worst_mean: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut rows = Vec::new();
    for n in 0..=cfg.nmax {
        let psi = &flow.psi[n];
        let (r_max, r_mean, r_res) = match &flow.remainder[n] {
            Some(r) => {
                let block = coarsen(r)?.max_abs();
                let res = if flow.coeffs[n].lambda == 0.0 {
                    0.0
                } else {
                    remainder_residual(
                        noise.xi(n),
                        noise.chaos(cfg.nmax, n),
                        psi,
                        &flow.coeffs[n],
                        r,
                    )?
                };
                worst_mean = worst_mean.max(block);
                worst_residual = worst_residual.max(res);
                (r.max_abs(), block, res)
            }
            None => (0.0, 0.0, 0.0),
        };
        rows.push(vec![
            n.into(),
            psi.max_abs().into(),
            mean_total(psi).into(),
            r_max.into(),
            r_mean.into(),
            r_res.into(),
        ]);
    }
    art.write_csv(
        "fields.csv",
        &[
            "n",
            "psi_max_abs",
            "psi_mean",
            "remainder_max_abs",
            "remainder_max_block_mean",
            "remainder_residual",
        ],
        &rows,
    )?;
    let psi_max = flow.psi.iter().map(|p| p.max_abs()).fold(0.0, f64::max);
    let criteria = vec![
        Criterion::new(
            "remainder_block_means",
            worst_mean <= 1e-10,
            format!("{worst_mean:e} <= 1e-10"),
        ),
        Criterion::new(
            "remainder_equation",
            worst_residual <= 1e-10,
            format!("{worst_residual:e} <= 1e-10"),
        ),
    ];
    let summary = format!("flow: N={} g={} max|Psi| {:.6e}", cfg.nmax, cfg.g, psi_max);
    finish(
        art,
        criteria,
        serde_json::json!({ "psi_max_abs": psi_max }),
        summary,
    )
}

fn solve_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let noise = noise(cfg)?;
    let c = couplings(cfg)?;
    let p = BareProblem::new(&noise, cfg.nmax, c)?;
    let opts = SolverOptions {
        condition_threshold: cfg.condition_threshold,
        ..SolverOptions::default()
    };
    let traj = rg_solve_with(&p, &opts)?;
    let top = &traj.v[cfg.nmax];
    let mut cols = vec!["index".to_string()];
    cols.extend(coord_columns(cfg.d));
    cols.extend(["u".to_string(), "v".to_string()]);
    let rows: Vec<Vec<Cell>> = (0..top.len())
        .map(|i| {
            let mut row: Vec<Cell> = vec![i.into()];
            row.extend(
                coords_of(top.spec(), i)
                    .expect("in range")
                    .0
                    .into_iter()
                    .map(Cell::from),
            );
            row.extend([traj.u_values.values()[i].into(), top.values()[i].into()]);
            row
        })
        .collect();
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    art.write_csv("solution.csv", &cols, &rows)?;
    let level_rows: Vec<Vec<Cell>> = (0..=cfg.nmax)
        .map(|n| {
            let v = &traj.v[n];
            let p1 = if n == 0 {
                0.0
            } else {
                fluct(v).expect("n >= 1").max_abs()
            };
            vec![
                n.into(),
                mean_total(v).into(),
                v.max_abs().into(),
                p1.into(),
                traj.gammas[n].into(),
                traj.condition_max.get(n).copied().unwrap_or(0.0).into(),
            ]
        })
        .collect();
    art.write_csv(
        "levels.csv",
        &[
            "n",
            "v_mean",
            "v_max_abs",
            "p1_max_abs",
            "gamma",
            "condition_max",
        ],
        &level_rows,
    )?;
    let res = residual(&p, top);
    let cons = traj.consistency_error();
    let mut criteria = vec![
        Criterion::new("residual", res <= 1e-10, format!("{res:e} <= 1e-10")),
        Criterion::new("consistency", cons <= 1e-10, format!("{cons:e} <= 1e-10")),
    ];
    let mut dense_rel = None;
    if top.len() <= cfg.dense_cap {
        let dense = dense_solve(&p, cfg.dense_cap)?;
        let rel = top.max_abs_diff(&dense.v) / dense.v.max_abs().max(f64::MIN_POSITIVE);
        criteria.push(Criterion::new(
            "dense_agreement",
            rel <= 1e-9,
            format!("{rel:e} <= 1e-9"),
        ));
        dense_rel = Some(rel);
    }
    let data = serde_json::json!({
        "v0": traj.v[0].values()[0],
        "residual": res,
        "consistency": cons,
        "dense_relative_difference": dense_rel,
    });
    let summary = format!(
        "solve: N={} v0={:.10} residual {:.2e} mean u {:.10}",
        cfg.nmax,
        traj.v[0].values()[0],
        res,
        mean_total(&traj.u_values)
    );
    finish(art, criteria, data, summary)
}

fn moments_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let (l, d, s) = (cfg.l, cfg.d, cfg.samples);
    let n = cfg.nmax.max(2);
    let mut checks = Vec::new();
    for depth in [1, 2] {
        let seed = stable_hash(cfg.seed, depth as u64);
        checks.push(check_with_retry(seed, 3.0, |sd| {
            verify::mc_pair_moment(l, d, n, depth, s, sd)
        })?);
    }
    // All covariance entries come from one run; retry them together.
    let cov_seed = stable_hash(cfg.seed, 10);
    let first = verify::mc_fluct_covariance(l, d, n, s, cov_seed)?;
    let retry = if first.iter().all(|e| e.within(3.0)) {
        None
    } else {
        Some(verify::mc_fluct_covariance(
            l,
            d,
            n,
            s,
            verify::retry_seed(cov_seed),
        )?)
    };
    for (j, e) in first.into_iter().enumerate() {
        let r = retry.as_ref().map(|v| v[j].clone());
        let passed = r.as_ref().map_or(e.within(3.0), |r| r.within(3.0));
        checks.push(verify::CheckedEstimate {
            first: e,
            retry: r,
            passed,
        });
    }
    for k in [1, 2] {
        let seed = stable_hash(cfg.seed, 20 + k as u64);
        checks.push(check_with_retry(seed, 3.0, |sd| {
            verify::mc_chaos_increment_variance(l, d, 0, k, s, sd)
        })?);
    }
    let f = |x: Option<f64>| Cell::F(x.unwrap_or(f64::NAN));
    let rows: Vec<Vec<Cell>> = checks
        .iter()
        .map(|c| {
            vec![
                c.first.target_name.clone().into(),
                c.first.estimate.into(),
                c.first.standard_error.into(),
                c.first.n_samples.into(),
                f(c.first.target),
                f(c.first.z_score),
                f(c.retry.as_ref().map(|r| r.estimate)),
                f(c.retry.as_ref().and_then(|r| r.z_score)),
                c.passed.into(),
            ]
        })
        .collect();
    art.write_csv(
        "moments.csv",
        &[
            "target",
            "estimate",
            "standard_error",
            "samples",
            "closed_form",
            "z",
            "retry_estimate",
            "retry_z",
            "pass",
        ],
        &rows,
    )?;
    let criteria: Vec<Criterion> = checks
        .iter()
        .map(|c| {
            let z = c.retry.as_ref().unwrap_or(&c.first).z_score.unwrap_or(0.0);
            let retried = if c.retry.is_some() {
                " after retry"
            } else {
                ""
            };
            Criterion::new(
                &c.first.target_name,
                c.passed,
                format!("|z| = {:.3}{retried}", z.abs()),
            )
        })
        .collect();
    let passed = criteria.iter().filter(|c| c.pass).count();
    let summary = format!(
        "verify-moments: {passed}/{} estimates within 3 sigma",
        criteria.len()
    );
    finish(art, criteria, &checks, summary)
}

fn tail_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let t = verify::mc_tail_probability(
        cfg.l,
        cfg.d,
        cfg.nmax,
        &TAIL_G_GRID,
        cfg.samples,
        cfg.seed,
        cfg.kappa_s,
    )?;
    let rows: Vec<Vec<Cell>> = t
        .rows
        .iter()
        .map(|r| {
            vec![
                r.g.into(),
                r.inv_g2.into(),
                r.rejected.into(),
                r.p_hat.into(),
            ]
        })
        .collect();
    art.write_csv("tail.csv", &["g", "inv_g2", "rejected", "p_hat"], &rows)?;
    let (slope, r2) = t
        .fit
        .map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared));
    let criteria = vec![
        Criterion::new(
            "tail_monotone",
            t.monotone,
            "P(not Omega_g) non-increasing in 1/g",
        ),
        Criterion::new(
            "tail_log_linear",
            slope < 0.0 && r2 >= 0.9,
            format!("slope {slope:.4} < 0, R^2 {r2:.4} >= 0.9"),
        ),
    ];
    let summary = format!("tail: kappa_s={} slope {slope:.4} R^2 {r2:.4}", cfg.kappa_s);
    finish(art, criteria, &t, summary)
}

fn growth_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let t = verify::mc_norm_moment_growth(
        cfg.l,
        cfg.d,
        cfg.nmax,
        &MOMENT_P_GRID,
        cfg.samples,
        cfg.seed,
        cfg.kappa_s,
    )?;
    let rows: Vec<Vec<Cell>> = t
        .rows
        .iter()
        .map(|r| vec![r.p.into(), r.moment_root.into(), r.ratio_to_sqrt_p.into()])
        .collect();
    art.write_csv(
        "moments_growth.csv",
        &["p", "moment_root", "ratio_to_sqrt_p"],
        &rows,
    )?;
    let slope = t.fit.slope;
    let criteria = vec![Criterion::new(
        "moment_growth_slope",
        slope <= 0.6,
        format!("{slope:.4} <= 0.6"),
    )];
    let summary = format!("moments-growth: log-log slope {slope:.4}");
    finish(art, criteria, &t, summary)
}

fn converge_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    require_positive_g(cfg, "converge")?;
    let opts = ConvergenceOptions::uniform(cfg.kappa_s, cfg.distance_kappa);
    let s = verify::convergence_study(
        cfg.l,
        cfg.d,
        cfg.nmax,
        cfg.g,
        cfg.r,
        cfg.samples,
        cfg.seed,
        &opts,
    )?;
    let mut rows = Vec::new();
    for r in &s.reports {
        for (n, dist) in r.cutoffs.iter().zip(&r.distances) {
            rows.push(vec![r.quantity.clone().into(), (*n).into(), (*dist).into()]);
        }
    }
    art.write_csv("convergence.csv", &["quantity", "N", "distance"], &rows)?;
    let mut criteria: Vec<Criterion> = s.reports[..4]
        .iter()
        .map(|r| {
            let rate = r.rate.unwrap_or(f64::NAN);
            Criterion::new(
                format!("rate_{}", r.quantity),
                rate < 0.0,
                format!("{rate:.4} < 0"),
            )
        })
        .collect();
    criteria.push(Criterion::new(
        "v_consistency",
        s.consistency_max <= 1e-10,
        format!("{:e} <= 1e-10", s.consistency_max),
    ));
    let reference = -alpha(cfg.d) * (cfg.l as f64).ln();
    let level0 = s.reports[QUANTITIES.len() - 1].rate.unwrap_or(f64::NAN);
    criteria.push(Criterion::new(
        "chaos_rate_vs_closed_form",
        (level0 / reference - 1.0).abs() <= 0.5,
        format!("{level0:.4} within 50% of {reference:.4}"),
    ));
    let rates: Vec<String> = s
        .reports
        .iter()
        .map(|r| format!("{}={:.3}", r.quantity, r.rate.unwrap_or(f64::NAN)))
        .collect();
    let summary = format!(
        "converge: {} samples ({} rejected), rates {}",
        s.used,
        s.rejected,
        rates.join(" ")
    );
    finish(art, criteria, &s, summary)
}

fn ablate_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    let a =
        verify::ablate_counterterm(cfg.l, cfg.d, cfg.nmax, cfg.g, cfg.r, cfg.samples, cfg.seed)?;
    let rows: Vec<Vec<Cell>> = a
        .cutoffs
        .iter()
        .enumerate()
        .map(|(j, &n)| vec![n.into(), a.mean_without[j].into(), a.mean_with[j].into()])
        .collect();
    art.write_csv(
        "ablation.csv",
        &["N", "mean_rho0_without", "mean_rho0_with"],
        &rows,
    )?;
    let slope_ok = if a.slope_target == 0.0 {
        a.fit_without.slope.abs() <= 1e-12
    } else {
        a.slope_relative_error() <= 0.1
    };
    // Means equal to round-off carry no trend even if the t statistic is noise.
    let spread = a
        .mean_with
        .iter()
        .map(|m| (m - a.mean_with[0]).abs())
        .fold(0.0, f64::max);
    let flat = a.fit_with.p_value > 0.05 || spread <= 1e-12;
    let criteria = vec![
        Criterion::new(
            "ablated_slope",
            slope_ok,
            format!("{:.5} vs {:.5}", a.fit_without.slope, a.slope_target),
        ),
        Criterion::new(
            "renormalised_no_trend",
            flat,
            format!(
                "p = {:.4} > 0.05 (paired p = {:.4})",
                a.fit_with.p_value, a.paired_slope_p_value
            ),
        ),
    ];
    let summary = format!(
        "ablate: slope {:.5} (target {:.5}), renormalised trend p {:.4}",
        a.fit_without.slope, a.slope_target, a.fit_with.p_value
    );
    finish(art, criteria, &a, summary)
}

fn bounds_cmd(cfg: &RunConfig, mut art: Artifacts) -> Result<Outcome, RunError> {
    require_positive_g(cfg, "bounds")?;
    let b = verify::bound_monitor(
        cfg.l,
        cfg.d,
        cfg.nmax,
        cfg.g,
        cfg.r,
        cfg.kappa_s,
        cfg.samples,
        cfg.seed,
    )?;
    let rows: Vec<Vec<Cell>> = b
        .violations
        .as_array()
        .iter()
        .zip(b.rates())
        .map(|((name, count), (_, rate))| vec![(*name).into(), (*count).into(), rate.into()])
        .collect();
    art.write_csv("bounds.csv", &["bound", "violations", "rate"], &rows)?;
    let criteria = b
        .rates()
        .iter()
        .map(|(name, rate)| {
            Criterion::new(
                format!("bound_{name}"),
                *rate <= 0.01,
                format!("violation rate {rate:.4} <= 0.01"),
            )
        })
        .collect();
    let summary = format!(
        "bounds: L={} N={} {} accepted, {} rejected, {} failed",
        b.l, b.cutoff, b.accepted, b.rejected, b.failed
    );
    finish(art, criteria, &b, summary)
}
