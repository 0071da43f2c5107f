//! Hierarchical Hölder–Besov norms, the stochastic norm of (ξ, Ⅱ), the good
//! event Ω_g and distances between solution trajectories.

use crate::error::{Error, Result};
use crate::noise::EnhancedNoise;
use crate::operators::{coarsen, fluct, mean_total, Field};
use crate::solver::SolutionTrajectory;

pub const DEFAULT_KAPPA_S: f64 = 0.05;

/// κ for Hölder distances: the smallest admissible value 3κ_s plus a margin.
pub fn default_holder_kappa(kappa_s: f64) -> f64 {
    3.0 * kappa_s + 0.01
}

/// coarsen^{N-n}(u) for n = 0..=N, indexed by n.
fn pyramid(u: &Field) -> Vec<Field> {
    let mut out = vec![u.clone()];
    for _ in 0..u.level() {
        out.push(coarsen(out.last().unwrap()).expect("level >= 1"));
    }
    out.reverse();
    out
}

/// |mean u| + max_{1≤n≤N} L^{βn} max|P₁(coarsen^{N−n} u)| for u on Λ^N.
pub fn besov_norm(u: &Field, beta: f64) -> f64 {
    let lf = u.spec().l() as f64;
    let levels = pyramid(u);
    let fl = (1..levels.len())
        .map(|n| lf.powf(beta * n as f64) * fluct(&levels[n]).expect("n >= 1").max_abs())
        .fold(0.0, f64::max);
    mean_total(u).abs() + fl
}

/// The equivalent norm with block averages in place of fluctuations:
/// max_{0≤n≤N} L^{βn} max|coarsen^{N−n} u|.
pub fn besov_norm_averaged(u: &Field, beta: f64) -> f64 {
    let lf = u.spec().l() as f64;
    pyramid(u)
        .iter()
        .enumerate()
        .map(|(n, f)| lf.powf(beta * n as f64) * f.max_abs())
        .fold(0.0, f64::max)
}

/// L^{−κ_s n}(max|ξ_{-n}| ∨ max|Ⅱ^{(N)}_{-n}|^{1/2}) for n = 0..=N.
pub fn stochastic_norm_levels(noise: &EnhancedNoise, cutoff: usize, kappa_s: f64) -> Vec<f64> {
    let lf = noise.config().l as f64;
    (0..=cutoff)
        .map(|n| {
            let x = noise.xi(n).max_abs();
            let c = noise.chaos(cutoff, n).max_abs().sqrt();
            lf.powf(-kappa_s * n as f64) * x.max(c)
        })
        .collect()
}

/// |||ξ, Ⅱ||| at cutoff N.
pub fn stochastic_norm(noise: &EnhancedNoise, cutoff: usize, kappa_s: f64) -> f64 {
    stochastic_norm_from(noise, cutoff, kappa_s, 0)
}

/// |||ξ, Ⅱ|||_{n₀}: the supremum restricted to levels n ≥ n₀.
pub fn stochastic_norm_from(noise: &EnhancedNoise, cutoff: usize, kappa_s: f64, n0: usize) -> f64 {
    stochastic_norm_levels(noise, cutoff, kappa_s)
        .into_iter()
        .skip(n0)
        .fold(0.0, f64::max)
}

/// sup over cutoffs N ≤ Nmax of the stochastic norm.
pub fn uniform_stochastic_norm(noise: &EnhancedNoise, kappa_s: f64) -> f64 {
    (0..=noise.nmax())
        .map(|cutoff| stochastic_norm(noise, cutoff, kappa_s))
        .fold(0.0, f64::max)
}

/// Ω_g = {norm ≤ 1/(2g)}.
pub fn omega_indicator(norm: f64, g: f64) -> Result<bool> {
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::Argument(format!("g must lie in (0, 1], got {g}")));
    }
    Ok(norm <= 1.0 / (2.0 * g))
}

/// |v₀ᵃ − v₀ᵇ| + max_{1≤n≤m} L^{−κn} max|P₁(vᵃ_{-n} − vᵇ_{-n})|, m the smaller cutoff.
pub fn holder_distance(a: &SolutionTrajectory, b: &SolutionTrajectory, kappa: f64) -> Result<f64> {
    if a.l != b.l || a.d != b.d {
        return Err(Error::Argument(
            "trajectories live on different lattices".into(),
        ));
    }
    let lf = a.l as f64;
    let m = a.cutoff.min(b.cutoff);
    let top = (1..=m)
        .map(|n| {
            let diff = a.v[n].sub(&b.v[n]);
            lf.powf(-kappa * n as f64) * fluct(&diff).expect("n >= 1").max_abs()
        })
        .fold(0.0, f64::max);
    Ok((a.v[0].values()[0] - b.v[0].values()[0]).abs() + top)
}

/// sup_n L^{−κn} max|aₙ − bₙ| over two level-indexed trajectories; a level
/// missing from the shorter one counts as zero.
pub fn weighted_sup_distance(a: &[Field], b: &[Field], kappa: f64) -> Result<f64> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut best: f64 = 0.0;
    for (n, f) in long.iter().enumerate() {
        if f.level() != n || short.get(n).is_some_and(|g| g.spec() != f.spec()) {
            return Err(Error::Argument(
                "trajectories must be indexed by level on one lattice family".into(),
            ));
        }
        let lf = f.spec().l() as f64;
        let diff = match short.get(n) {
            Some(g) => f.max_abs_diff(g),
            None => f.max_abs(),
        };
        best = best.max(lf.powf(-kappa * n as f64) * diff);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Couplings;
    use crate::lattice::LatticeSpec;
    use crate::noise::NoiseConfig;
    use crate::operators::coarsen_by;
    use crate::solver::{rg_solve, BareProblem};

    fn noise(seed: u64, nmax: usize) -> EnhancedNoise {
        EnhancedNoise::sample(&NoiseConfig::new(seed, nmax, 3, 2).unwrap()).unwrap()
    }

    #[test]
    fn constant_field_norm() {
        let c = Field::constant(LatticeSpec::new(3, 2, 3).unwrap(), -1.7);
        for beta in [-1.0, 0.0, 0.5] {
            assert!(
                (besov_norm(&c, beta) - 1.7).abs() < 1e-12,
                "{}",
                besov_norm(&c, beta)
            );
        }
    }

    #[test]
    fn white_noise_identity() {
        let nz = noise(3, 3);
        let ks = 0.05;
        let top = nz.xi(3).scale(27.0);
        let got = besov_norm_averaged(&top, -1.0 - ks);
        let want = (0..=3)
            .map(|n| 3f64.powf(-ks * n as f64) * nz.xi(n).max_abs())
            .fold(0.0, f64::max);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn averaged_and_fluctuation_norms_are_equivalent() {
        let nz = noise(4, 3);
        for beta in [-0.3, -1.05] {
            let u = nz.xi(3);
            let p = besov_norm(u, beta);
            let q = besov_norm_averaged(u, beta);
            assert!(q <= p / (1.0 - 3f64.powf(beta)) + 1e-12);
            assert!(p <= (2.0 + 3f64.powf(-beta)) * q + 1e-12);
        }
    }

    #[test]
    fn stochastic_norm_brute_force() {
        let nz = noise(5, 3);
        let ks = 0.07;
        let mut want: f64 = 0.0;
        for n in 0..=3 {
            let w = 3f64.powf(-ks * n as f64);
            for (x, c) in nz.xi(n).values().iter().zip(nz.chaos(3, n).values()) {
                want = want.max(w * x.abs()).max(w * c.abs().sqrt());
            }
        }
        assert_eq!(stochastic_norm(&nz, 3, ks), want);
        let z = EnhancedNoise::zero(nz.config());
        assert_eq!(uniform_stochastic_norm(&z, ks), 0.0);
    }

    #[test]
    fn chaos_enters_with_square_root() {
        let nz = noise(6, 2);
        let levels = stochastic_norm_levels(&nz, 2, 0.0);
        let chaos_part = (0..=2)
            .map(|n| nz.chaos(2, n).max_abs().sqrt())
            .fold(0.0, f64::max);
        let doubled = (0..=2)
            .map(|n| (2.0 * nz.chaos(2, n).max_abs()).sqrt())
            .fold(0.0, f64::max);
        assert!((doubled - 2f64.sqrt() * chaos_part).abs() < 1e-12);
        assert!(levels.iter().cloned().fold(0.0, f64::max) >= chaos_part);
    }

    #[test]
    fn omega_threshold() {
        assert!(omega_indicator(0.5, 1.0).unwrap());
        assert!(!omega_indicator(0.51, 1.0).unwrap());
        assert!(omega_indicator(0.0, 0.3).unwrap());
        assert!(omega_indicator(1.0, 0.0).is_err());
        assert!(omega_indicator(1.0, 1.5).is_err());
    }

    #[test]
    fn holder_distance_is_a_metric() {
        let c = Couplings::new(0.1, 1.0).unwrap();
        let trajs: Vec<_> = (0..3)
            .map(|s| {
                let nz = noise(10 + s, 3);
                rg_solve(&BareProblem::new(&nz, 3, c).unwrap()).unwrap()
            })
            .collect();
        let k = default_holder_kappa(DEFAULT_KAPPA_S);
        let d = |i: usize, j: usize| holder_distance(&trajs[i], &trajs[j], k).unwrap();
        assert_eq!(d(0, 0), 0.0);
        assert!((d(0, 1) - d(1, 0)).abs() < 1e-15);
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
    }

    #[test]
    fn weighted_distance_counts_missing_levels() {
        let nz = noise(7, 3);
        let a = nz.chaos_trajectory(3);
        let b = nz.chaos_trajectory(2);
        let want = (0..=3)
            .map(|n| {
                let other = if n <= 2 {
                    b[n].clone()
                } else {
                    Field::zeros(*a[n].spec())
                };
                3f64.powf(-0.1 * n as f64) * a[n].max_abs_diff(&other)
            })
            .fold(0.0, f64::max);
        assert!((weighted_sup_distance(a, b, 0.1).unwrap() - want).abs() < 1e-15);
        assert_eq!(weighted_sup_distance(a, a, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn besov_pyramid_matches_coarsen_by() {
        let nz = noise(8, 3);
        let u = nz.xi(3);
        let want = (1..=3)
            .map(|n| {
                3f64.powf(0.4 * n as f64) * fluct(&coarsen_by(u, 3 - n).unwrap()).unwrap().max_abs()
            })
            .fold(0.0, f64::max)
            + mean_total(u).abs();
        assert!((besov_norm(u, 0.4) - want).abs() < 1e-12);
    }
}
