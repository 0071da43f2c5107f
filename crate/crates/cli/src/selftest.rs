//! Operator identities and solver cross-checks on seeded random inputs.

use crate::config::RunConfig;
use hrg_core::flow::{coefficients_closed_form, coefficients_step, run_flow, Couplings};
use hrg_core::lattice::{coords_of, index_of, LatticeSpec, Point};
use hrg_core::noise::{chaos_direct, EnhancedNoise, NoiseConfig};
use hrg_core::norms::{omega_indicator, uniform_stochastic_norm};
use hrg_core::operators::*;
use hrg_core::rng::{stable_hash, NormalStream};
use hrg_core::solver::{crosscheck_effective_force, dense_solve, residual, rg_solve, BareProblem};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Default)]
struct Worst(Vec<(String, f64, f64)>);

impl Worst {
    fn record(&mut self, name: &str, value: f64, tolerance: f64) {
        match self.0.iter_mut().find(|(n, _, _)| n == name) {
            Some(e) => e.1 = e.1.max(value),
            None => self.0.push((name.to_string(), value, tolerance)),
        }
    }

    fn into_checks(self) -> Vec<Check> {
        self.0
            .into_iter()
            .map(|(name, value, tolerance)| Check {
                pass: value <= tolerance,
                name,
                value,
                tolerance,
            })
            .collect()
    }
}

pub fn random_field(spec: LatticeSpec, seed: u64, label: &str) -> Field {
    let mut v = vec![0.0; spec.len()];
    NormalStream::new(seed, label).fill(&mut v);
    Field::new(spec, v).expect("length matches")
}

/// Block average over side-L^k blocks, by coordinates: fine coordinate c
/// lies in the block centred at L^k·round(c / L^k).
pub fn brute_force_average(f: &Field, k: usize) -> Field {
    let spec = f.spec();
    let coarse = spec.at_level(spec.n() - k);
    let side = (spec.l() as i64).pow(k as u32);
    let mut sums = vec![0.0; coarse.len()];
    for (i, &x) in f.values().iter().enumerate() {
        let c = coords_of(spec, i).expect("in range");
        let up: Vec<i64> =
            c.0.iter()
                .map(|&a| (a + (side - 1) / 2).div_euclid(side))
                .collect();
        sums[index_of(&coarse, &Point(up)).expect("in range")] += x;
    }
    let inv = 1.0 / (side as f64).powi(spec.d() as i32);
    Field::new(coarse, sums.into_iter().map(|s| s * inv).collect()).expect("length matches")
}

/// The identity suite on `fields` random fields per level n = 1..=max_level.
pub fn operator_checks(
    l: usize,
    d: usize,
    max_level: usize,
    fields: usize,
    seed: u64,
    dense_cap: usize,
) -> Vec<Check> {
    let mut w = Worst::default();
    for j in 0..fields {
        let n = 1 + j % max_level;
        let spec = LatticeSpec::new(l, d, n).expect("validated");
        let f = random_field(spec, stable_hash(seed, j as u64), "selftest-f");
        let c = random_field(
            spec.at_level(n - 1),
            stable_hash(seed, j as u64),
            "selftest-w",
        );

        let mut sum = Field::constant(spec, mean_total(&f));
        for k in 1..=n {
            sum = sum.add(&fluct_level(&f, k).unwrap());
        }
        w.record("decomposition", sum.max_abs_diff(&f), 1e-12);

        for a in 1..=n {
            let pa = fluct_level(&f, a).unwrap();
            for b in 1..=n {
                let pba = fluct_level(&pa, b).unwrap();
                let err = if a == b {
                    pba.max_abs_diff(&pa)
                } else {
                    pba.max_abs()
                };
                w.record("orthogonality", err, 1e-12);
            }
        }

        w.record(
            "coarsen_refine",
            coarsen(&refine(&c)).unwrap().max_abs_diff(&c),
            1e-12,
        );
        let fact = coarsen(&f.mul(&refine(&c)))
            .unwrap()
            .max_abs_diff(&coarsen(&f).unwrap().mul(&c));
        w.record("factorisation", fact, 1e-12);
        for k in 1..=n {
            let err = coarsen_by(&f, k)
                .unwrap()
                .max_abs_diff(&brute_force_average(&f, k));
            w.record("composition", err, 1e-12);
        }

        let g = fluct(&f).unwrap();
        w.record(
            "inverse_on_p1",
            apply_inverse_laplacian(&g).unwrap().max_abs_diff(&g),
            1e-12,
        );
        let h = f.shift(-mean_total(&f));
        let back = apply_inverse_laplacian(&apply_neg_laplacian(&h)).unwrap();
        w.record("inverse_after_laplacian", back.max_abs_diff(&h), 1e-12);

        if spec.len() <= dense_cap {
            let kinds = [
                (DenseKind::Coarsen, &f, coarsen(&f).unwrap()),
                (DenseKind::Refine, &c, refine(&c)),
                (DenseKind::Fluct, &f, g.clone()),
                (DenseKind::NegLaplacian, &f, apply_neg_laplacian(&f)),
                (DenseKind::Inverse, &h, apply_inverse_laplacian(&h).unwrap()),
                (
                    DenseKind::Propagator(n),
                    &h,
                    apply_fluct_propagator(&h, n).unwrap(),
                ),
            ];
            for (kind, input, expect) in kinds {
                let op = assemble_dense_operator(kind, &spec, dense_cap).unwrap();
                w.record(
                    "dense_vs_recursive",
                    op.apply(input).unwrap().max_abs_diff(&expect),
                    1e-12,
                );
            }
        }
    }
    w.into_checks()
}

/// Chaos routes, coefficient flow and solver cross-checks.
pub fn engine_checks(cfg: &RunConfig) -> Vec<Check> {
    let mut w = Worst::default();
    let chaos_cutoff = cfg.nmax.min(3);
    for i in 0..cfg.samples.min(10) {
        let nc = NoiseConfig::new(
            stable_hash(cfg.seed, 1000 + i as u64),
            chaos_cutoff,
            cfg.l,
            cfg.d,
        )
        .unwrap();
        let noise = EnhancedNoise::sample(&nc).unwrap();
        for n in 0..=chaos_cutoff {
            let direct = chaos_direct(noise.xi(chaos_cutoff), n).unwrap();
            w.record(
                "chaos_direct_vs_recursive",
                direct.max_abs_diff(noise.chaos(chaos_cutoff, n)),
                1e-9,
            );
        }
    }

    let coupling = Couplings::new(cfg.g, cfg.r).unwrap();
    for cutoff in 1..=8 {
        let mut k = coefficients_closed_form(&coupling, cutoff, cfg.l, cfg.d);
        for n in (0..cutoff).rev() {
            k = coefficients_step(&k, cfg.l, cfg.d).unwrap();
            let e = coefficients_closed_form(&coupling, n, cfg.l, cfg.d);
            let rel = |a: f64, b: f64| {
                if b == 0.0 {
                    a.abs()
                } else {
                    ((a - b) / b).abs()
                }
            };
            let err = rel(k.lambda, e.lambda)
                .max(rel(k.mu, e.mu))
                .max(rel(k.gamma, e.gamma));
            w.record("coefficient_flow", err, 1e-14);
        }
    }

    // Largest cutoff whose dense system fits under the cap.
    let mut cutoff = 1;
    while cutoff < cfg.nmax
        && (cfg.l as u128).pow(((cutoff + 1) * cfg.d) as u32) <= cfg.dense_cap as u128
    {
        cutoff += 1;
    }
    let mut done = 0;
    let mut i = 0u64;
    while done < cfg.samples.min(10) && i < 200 {
        i += 1;
        let nc = NoiseConfig::new(stable_hash(cfg.seed, 2000 + i), cutoff, cfg.l, cfg.d).unwrap();
        let noise = EnhancedNoise::sample(&nc).unwrap();
        if cfg.g > 0.0
            && !omega_indicator(uniform_stochastic_norm(&noise, cfg.kappa_s), cfg.g).unwrap()
        {
            continue;
        }
        done += 1;
        let p = BareProblem::new(&noise, cutoff, coupling).unwrap();
        let (traj, dense) = match (rg_solve(&p), dense_solve(&p, cfg.dense_cap)) {
            (Ok(t), Ok(d)) => (t, d),
            _ => {
                w.record("solver_completed", 1.0, 0.0);
                continue;
            }
        };
        w.record("solver_completed", 0.0, 0.0);
        let rel = traj.v[cutoff].max_abs_diff(&dense.v) / dense.v.max_abs().max(f64::MIN_POSITIVE);
        w.record("rg_vs_dense", rel, 1e-9);
        w.record("residual", residual(&p, &traj.v[cutoff]), 1e-10);
        w.record("consistency", traj.consistency_error(), 1e-10);
        match run_flow(&noise, &coupling, cutoff).and_then(|f| crosscheck_effective_force(&p, &f)) {
            Ok(c) => w.record("effective_force", c.worst_relative(), 1e-8),
            Err(_) => w.record("effective_force", f64::INFINITY, 1e-8),
        }
    }
    w.into_checks()
}

pub fn run(cfg: &RunConfig) -> Vec<Check> {
    let mut checks = operator_checks(cfg.l, cfg.d, cfg.nmax.min(4), 50, cfg.seed, cfg.dense_cap);
    checks.extend(engine_checks(cfg));
    checks
}
