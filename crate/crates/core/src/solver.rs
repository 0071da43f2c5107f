//! Exact solution of the bare equation (−Δ_H)v = (λξ + μ)v + γ on Λ^N by
//! hierarchical block elimination.
//!
//! Downward, each level splits v into a block-constant background w and a
//! fluctuation z = m·w, with m solved per block; averaging the equation
//! gives the coarse potential ρ' for the next level. Level 0 is a scalar
//! equation. Upward, v is rebuilt from the stored gains m.

use crate::error::{Error, Result};
use crate::flow::{bare_mass_with_variance, Couplings, FlowTrajectory};
use crate::lattice::BlockLayout;
use crate::linalg::{
    dense_solve_with_condition, solve_block, BlockMethod, DEFAULT_CONDITION_THRESHOLD,
};
use crate::noise::{alpha, EnhancedNoise};
use crate::operators::{
    apply_neg_laplacian, assemble_dense_operator, coarsen, coarsen_by, fluct, refine, DenseKind,
    Field,
};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BareProblem<'a> {
    noise: &'a EnhancedNoise,
    cutoff: usize,
    couplings: Couplings,
    counterterm: bool,
}

impl<'a> BareProblem<'a> {
    pub fn new(noise: &'a EnhancedNoise, cutoff: usize, couplings: Couplings) -> Result<Self> {
        if cutoff > noise.nmax() {
            return Err(Error::Argument(format!(
                "cutoff {cutoff} exceeds Nmax {}",
                noise.nmax()
            )));
        }
        Ok(Self {
            noise,
            cutoff,
            couplings,
            counterterm: true,
        })
    }

    /// Same problem with the bare mass fixed at r instead of r_N.
    pub fn without_counterterm(self) -> Self {
        Self {
            counterterm: false,
            ..self
        }
    }

    pub fn noise(&self) -> &EnhancedNoise {
        self.noise
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn couplings(&self) -> &Couplings {
        &self.couplings
    }

    pub fn has_counterterm(&self) -> bool {
        self.counterterm
    }

    fn lf(&self) -> f64 {
        self.noise.config().l as f64
    }

    fn alpha(&self) -> f64 {
        alpha(self.noise.config().d)
    }

    /// (λ_{-N}, μ_{-N}, γ_{-N}) of the bare equation on the unit lattice.
    pub fn bare_scalars(&self) -> (f64, f64, f64) {
        let cfg = self.noise.config();
        let n = self.cutoff as f64;
        let mass = if self.counterterm {
            bare_mass_with_variance(
                &self.couplings,
                self.cutoff,
                cfg.l,
                cfg.d,
                self.noise.variance(),
            )
        } else {
            self.couplings.r()
        };
        let lf = self.lf();
        (
            lf.powf(-self.alpha() * n) * self.couplings.g(),
            lf.powi(-2 * self.cutoff as i32) * mass,
            lf.powf(-(2.0 - self.alpha()) * n),
        )
    }

    /// λ_{-N}ξ_{-N} + μ_{-N}.
    pub fn bare_potential(&self) -> Field {
        let (lam, mu, _) = self.bare_scalars();
        self.noise.xi(self.cutoff).map(|x| lam * x + mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: BlockMethod,
    pub condition_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: BlockMethod::Structured,
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
        }
    }
}

/// Output of the elimination sweep from level N down to level 0.
#[derive(Debug, Clone)]
pub struct DownwardPass {
    /// ρ_{-n} on Λ^n, n = 0..=N.
    pub potentials: Vec<Field>,
    /// γ_{-n}, n = 0..=N.
    pub gammas: Vec<f64>,
    /// Fluctuation gains m on Λ^n, stored at index n = 1..=N.
    pub gains: Vec<Option<Field>>,
    /// Largest block condition number met at each level (0 at level 0).
    pub condition_max: Vec<f64>,
}

impl DownwardPass {
    /// ρ'₀, the scalar effective potential at level 0.
    pub fn level0_potential(&self) -> f64 {
        self.potentials[0].values()[0]
    }
}

pub fn downward_pass(p: &BareProblem, opts: &SolverOptions) -> Result<DownwardPass> {
    let cutoff = p.cutoff;
    let l2 = p.lf() * p.lf();
    let up_gamma = p.lf().powf(2.0 - p.alpha());
    let mut potentials = vec![p.bare_potential()];
    let mut gammas = vec![p.bare_scalars().2];
    let mut gains = vec![];
    let mut condition_max = vec![];
    for n in (1..=cutoff).rev() {
        let rho = potentials.last().unwrap();
        let spec = *rho.spec();
        let layout = BlockLayout::new(&spec)?;
        let bl = spec.block_len();
        let inv = 1.0 / bl as f64;
        let rv = rho.values();
        let mut m = vec![0.0; spec.len()];
        let mut coarse = vec![0.0; layout.bases.len()];
        let (mut dg, mut b, mut x, mut rb) =
            (vec![0.0; bl], vec![0.0; bl], vec![0.0; bl], vec![0.0; bl]);
        let mut worst: f64 = 0.0;
        for (c, &base) in layout.bases.iter().enumerate() {
            for (j, &o) in layout.offsets.iter().enumerate() {
                rb[j] = rv[base + o];
            }
            let mean = rb.iter().sum::<f64>() * inv;
            for j in 0..bl {
                // I − P₁diag(ρ) = diag(1−ρ) + L^{-d} 1 ρᵀ, right-hand side P₁ρ.
                dg[j] = 1.0 - rb[j];
                b[j] = rb[j] - mean;
            }
            let cond = solve_block(&dg, &rb, &b, &mut x, opts.method);
            if cond.is_nan() || cond > opts.condition_threshold {
                return Err(crate::flow::singular(&spec, n, c, cond));
            }
            worst = worst.max(cond);
            let mut corr = 0.0;
            for (j, &o) in layout.offsets.iter().enumerate() {
                m[base + o] = x[j];
                corr += rb[j] * x[j];
            }
            coarse[c] = l2 * (mean + corr * inv);
        }
        condition_max.push(worst);
        gains.push(Some(Field::from_raw(spec, m)));
        potentials.push(Field::from_raw(spec.coarser()?, coarse));
        gammas.push(up_gamma * gammas.last().unwrap());
    }
    condition_max.push(0.0);
    gains.push(None);
    potentials.reverse();
    gammas.reverse();
    gains.reverse();
    condition_max.reverse();
    Ok(DownwardPass {
        potentials,
        gammas,
        gains,
        condition_max,
    })
}

#[derive(Debug, Clone)]
pub struct SolutionTrajectory {
    pub cutoff: usize,
    pub l: usize,
    pub d: usize,
    /// v_{-n} on Λ^n, n = 0..=N.
    pub v: Vec<Field>,
    pub potentials: Vec<Field>,
    pub gammas: Vec<f64>,
    pub condition_max: Vec<f64>,
    /// u_N(L^{-N}x) = L^{-αN} v_{-N}(x).
    pub u_values: Field,
}

impl SolutionTrajectory {
    /// max over levels of |v[n] − L^{-α} coarsen(v[n+1])|.
    pub fn consistency_error(&self) -> f64 {
        let down = (self.l as f64).powf(-alpha(self.d));
        (0..self.cutoff)
            .map(|n| {
                let c = coarsen(&self.v[n + 1]).expect("level >= 1").scale(down);
                c.max_abs_diff(&self.v[n])
            })
            .fold(0.0, f64::max)
    }
}

pub fn rg_solve(p: &BareProblem) -> Result<SolutionTrajectory> {
    rg_solve_with(p, &SolverOptions::default())
}

pub fn rg_solve_with(p: &BareProblem, opts: &SolverOptions) -> Result<SolutionTrajectory> {
    let down = downward_pass(p, opts)?;
    let rho0 = down.level0_potential();
    let v0 = -down.gammas[0] / rho0;
    if rho0 == 0.0 || !v0.is_finite() {
        return Err(Error::Singular {
            level: 0,
            center: vec![0; p.noise.config().d],
            condition: f64::INFINITY,
        });
    }
    let up = p.lf().powf(p.alpha());
    let mut v = vec![Field::constant(p.noise.config().spec(0), v0)];
    for n in 1..=p.cutoff {
        let w = refine(&v[n - 1]).scale(up);
        let m = down.gains[n].as_ref().expect("gain stored for n >= 1");
        v.push(w.zip_map(m, |a, b| a + b * a));
    }
    let u_values = v[p.cutoff].scale(p.lf().powf(-p.alpha() * p.cutoff as f64));
    let cfg = p.noise.config();
    Ok(SolutionTrajectory {
        cutoff: p.cutoff,
        l: cfg.l,
        d: cfg.d,
        v,
        potentials: down.potentials,
        gammas: down.gammas,
        condition_max: down.condition_max,
        u_values,
    })
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub v: Field,
    pub condition: f64,
}

/// Dense LU of A = (−Δ_H) − diag(λξ + μ) against γ·1.
pub fn dense_solve(p: &BareProblem, cap: usize) -> Result<DenseSolution> {
    let spec = p.noise.config().spec(p.cutoff);
    let lap = assemble_dense_operator(DenseKind::NegLaplacian, &spec, cap)?;
    let pot = p.bare_potential();
    let len = spec.len();
    let mut a = DMatrix::from_row_slice(len, len, &lap.matrix);
    for i in 0..len {
        a[(i, i)] -= pot.values()[i];
    }
    let (_, _, gamma) = p.bare_scalars();
    let (sol, condition) = dense_solve_with_condition(&a, &DVector::from_element(len, gamma));
    match sol {
        Some(s) if condition <= DEFAULT_CONDITION_THRESHOLD => Ok(DenseSolution {
            v: Field::new(spec, s.as_slice().to_vec())?,
            condition,
        }),
        _ => Err(Error::Singular {
            level: p.cutoff,
            center: vec![0; spec.d()],
            condition,
        }),
    }
}

/// max|(−Δ_H)v − (λξ+μ)v − γ| / (1 + max|v|).
pub fn residual(p: &BareProblem, v: &Field) -> f64 {
    let (_, _, gamma) = p.bare_scalars();
    let lap = apply_neg_laplacian(v);
    let pot = p.bare_potential();
    let r = Field::from_fn(*v.spec(), |i| {
        lap.values()[i] - pot.values()[i] * v.values()[i] - gamma
    });
    r.max_abs() / (1.0 + v.max_abs())
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub u: Field,
    /// Mean of u_N over the torus; equals v₀.
    pub mean: f64,
    /// L^{(1−κ)n} · max|P₁ of u coarse-grained to level n|, at index n − 1 for n = 1..=N.
    pub amplitudes: Vec<f64>,
}

pub fn reconstruct_u(traj: &SolutionTrajectory, kappa: f64) -> Reconstruction {
    let u = traj.u_values.clone();
    let lf = traj.l as f64;
    let amplitudes = (1..=traj.cutoff)
        .map(|n| {
            let c = coarsen_by(&u, traj.cutoff - n).expect("n <= N");
            lf.powf((1.0 - kappa) * n as f64) * fluct(&c).expect("n >= 1").max_abs()
        })
        .collect();
    let mean = crate::operators::mean_total(&u);
    Reconstruction {
        u,
        mean,
        amplitudes,
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveForceCheck {
    /// max|ρ'_{-n}(solver) − ρ_{-n}(flow)| per level n = 0..=N.
    pub deviation: Vec<f64>,
    /// 1 + max|ρ'_{-n}(solver)| per level.
    pub scale: Vec<f64>,
    /// Ψ̂ = (ρ' − λξ − λ²Ⅱ − μ)/λ³ per level; `None` when λ = 0.
    pub psi_hat: Vec<Option<Field>>,
}

impl EffectiveForceCheck {
    pub fn worst_relative(&self) -> f64 {
        self.deviation
            .iter()
            .zip(&self.scale)
            .map(|(d, s)| d / s)
            .fold(0.0, f64::max)
    }
}

pub fn crosscheck_effective_force(
    p: &BareProblem,
    flow: &FlowTrajectory,
) -> Result<EffectiveForceCheck> {
    if flow.cutoff != p.cutoff {
        return Err(Error::Argument(format!(
            "flow cutoff {} differs from problem cutoff {}",
            flow.cutoff, p.cutoff
        )));
    }
    let (lam, mu, _) = p.bare_scalars();
    let top = &flow.coeffs[p.cutoff];
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    if !same(lam, top.lambda) || !same(mu, top.mu) {
        return Err(Error::Argument(
            "flow and problem use different bare coefficients".into(),
        ));
    }
    let down = downward_pass(p, &SolverOptions::default())?;
    let mut deviation = vec![];
    let mut scale = vec![];
    let mut psi_hat = vec![];
    for n in 0..=p.cutoff {
        let solver = &down.potentials[n];
        let from_flow = flow.effective_potential(p.noise, n);
        deviation.push(solver.max_abs_diff(&from_flow));
        scale.push(1.0 + solver.max_abs());
        let k = &flow.coeffs[n];
        psi_hat.push((k.lambda != 0.0).then(|| {
            let xi = p.noise.xi(n).values();
            let ch = p.noise.chaos(p.cutoff, n).values();
            let l3 = k.lambda.powi(3);
            Field::from_fn(*solver.spec(), |i| {
                (solver.values()[i] - k.lambda * xi[i] - k.lambda * k.lambda * ch[i] - k.mu) / l3
            })
        }));
    }
    Ok(EffectiveForceCheck {
        deviation,
        scale,
        psi_hat,
    })
}
