//! Discrete obstacle problem and its primal–dual active set solver.
//!
//! The discrete variational inequality is written as the complementarity
//! system
//!
//! ```text
//! S̲ U̲ − Λ̲ = F̲,   U̲ ≥ Ψ̲,   Λ̲ ≥ 0,   Λ̲ᵢ (U̲ − Ψ̲)ᵢ = 0,
//! ```
//!
//! with `S̲ = ι A̲₀ + A̲_β + (fractional part)` applied matrix-free. Each PDAS
//! iteration guesses the contact set `𝒜 = {j : Λ̲ⱼ − ρ(U̲ − Ψ̲)ⱼ > 0}` and solves
//! the equality-constrained system with `U̲ = Ψ̲` on `𝒜` and `Λ̲ = 0` off it.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fespace::Coefficients;
use crate::fraclap::SincScheme;
use crate::linsolve::{solve, KrylovConfig, LinearOperator, Method};
use crate::mesh::{BoundaryMark, Mesh, Point};
use crate::sparse::{dot, norm2, norm_inf, CsrMatrix, Symmetry};

/// `S̲ = local + fractional`, where the sparse local part collects
/// `ι A̲₀ + A̲_β`.
pub struct SystemOperator {
    scheme: Arc<SincScheme>,
    iota: f64,
    local: Option<CsrMatrix>,
    symmetry: Symmetry,
}

impl SystemOperator {
    pub fn new(
        scheme: Arc<SincScheme>,
        iota: f64,
        coeff: &Coefficients,
        beta: Option<&dyn Fn(Point) -> [f64; 2]>,
    ) -> Result<Self> {
        if iota != 0.0 && iota != 1.0 {
            return Err(Error::Config(format!("ι must be 0 or 1 (got {iota})")));
        }
        let space = scheme.base();
        let mut local = if iota != 0.0 { Some(space.assemble_stiffness(coeff)?) } else { None };
        let mut symmetry = Symmetry::Symmetric;
        if let Some(beta) = beta {
            let ab = space.assemble_advection(beta);
            symmetry = Symmetry::General;
            local = Some(match local {
                Some(a) => a.linear_combination(1.0, &ab, 1.0),
                None => ab,
            });
        }
        Ok(SystemOperator { scheme, iota, local, symmetry })
    }

    /// Operator with an arbitrary sparse local part added to the fractional
    /// one; `iota` only enters the energy norm.
    pub fn with_local(scheme: Arc<SincScheme>, iota: f64, local: Option<CsrMatrix>) -> Self {
        let symmetry = match &local {
            Some(m) if m.symmetry() != Symmetry::Symmetric => Symmetry::General,
            _ => Symmetry::Symmetric,
        };
        SystemOperator { scheme, iota, local, symmetry }
    }

    pub fn scheme(&self) -> &Arc<SincScheme> {
        &self.scheme
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn local(&self) -> Option<&CsrMatrix> {
        self.local.as_ref()
    }

    /// `‖v‖_{h,ι}`.
    pub fn energy_norm(&self, v: &[f64]) -> Result<f64> {
        self.scheme.energy_norm(self.iota, v)
    }

    /// Dense matrix of `S̲`, one column per application.
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.dim();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            d.column_mut(j).copy_from_slice(&self.apply_vec(&e)?);
            e[j] = 0.0;
        }
        Ok(d)
    }
}

impl LinearOperator for SystemOperator {
    fn dim(&self) -> usize {
        self.scheme.base_dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.scheme.apply_fractional_into(x, y)?;
        if let Some(local) = &self.local {
            local.matvec_add(1.0, x, y);
        }
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        self.symmetry
    }
}

pub struct DiscreteObstacleProblem {
    pub operator: SystemOperator,
    /// Obstacle at the free DoFs.
    pub psi: Vec<f64>,
    /// `F̲ᵢ = (f, φᵢ)`.
    pub load: Vec<f64>,
}

impl DiscreteObstacleProblem {
    pub fn new(operator: SystemOperator, psi: Vec<f64>, load: Vec<f64>) -> Result<Self> {
        let n = operator.dim();
        if psi.len() != n || load.len() != n {
            return Err(Error::Config(format!(
                "obstacle ({}) and load ({}) must both have {n} entries",
                psi.len(),
                load.len()
            )));
        }
        if psi.iter().chain(&load).any(|x| !x.is_finite()) {
            return Err(Error::Config("obstacle and load must be finite".into()));
        }
        Ok(DiscreteObstacleProblem { operator, psi, load })
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    /// `S̲U̲ − F̲`.
    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.operator.apply_vec(u)?;
        r.iter_mut().zip(&self.load).for_each(|(ri, fi)| *ri -= fi);
        Ok(r)
    }
}

/// Nodal interpolation of the obstacle.
pub fn interpolate_obstacle(chi: &dyn Fn(Point) -> f64, space: &crate::fespace::FeSpace) -> Vec<f64> {
    space.interpolate(chi)
}

/// Boundary vertices of `mesh` where `χ ≥ 0`.
pub fn obstacle_boundary_violations(mesh: &Mesh, chi: &dyn Fn(Point) -> f64) -> Vec<usize> {
    mesh.marked_vertices(BoundaryMark::InteriorDomainBoundary)
        .iter()
        .enumerate()
        .filter(|&(v, &b)| b && chi(mesh.vertices()[v]) >= 0.0)
        .map(|(v, _)| v)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdasState {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Strictly increasing.
    pub active: Vec<usize>,
    pub iteration: usize,
}

impl PdasState {
    /// `U̲⁰ = Ψ̲`, `Λ̲⁰ = max(S̲Ψ̲ − F̲, 0)`.
    pub fn initial(prob: &DiscreteObstacleProblem) -> Result<Self> {
        let lambda = prob.residual(&prob.psi)?.into_iter().map(|x| x.max(0.0)).collect();
        Ok(PdasState { u: prob.psi.clone(), lambda, active: Vec::new(), iteration: 0 })
    }
}

/// How the equality-constrained system of one PDAS iteration is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerStrategy {
    /// Krylov on the Schur complement `𝓘 S̲⁻¹ 𝓘ᵀ`, each application an inner
    /// Krylov solve with `S̲`.
    Schur,
    /// One Krylov solve on the inactive block with `U̲ = Ψ̲` substituted on the
    /// active set, then `Λ̲ = S̲U̲ − F̲` on the active set.
    Reduced,
}

#[derive(Clone, Copy, Debug)]
pub struct PdasConfig {
    pub rho: f64,
    pub eps_stop: f64,
    pub max_outer: usize,
    pub inner: InnerStrategy,
    pub krylov: KrylovConfig,
    /// Factor applied to `krylov.rel_tol` for the `S̲` solves nested inside the
    /// Schur complement.
    pub nested_tol_factor: f64,
}

impl Default for PdasConfig {
    fn default() -> Self {
        PdasConfig {
            rho: 1.0,
            eps_stop: 1e-8,
            max_outer: 100,
            inner: InnerStrategy::Reduced,
            krylov: KrylovConfig::default(),
            nested_tol_factor: 1e-2,
        }
    }
}

impl PdasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("ρ must be positive (got {})", self.rho)));
        }
        if !(self.eps_stop > 0.0) {
            return Err(Error::Config(format!("stopping tolerance must be positive (got {})", self.eps_stop)));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("outer iteration cap must be at least 1".into()));
        }
        self.krylov.validate()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ComplementarityReport {
    /// `min (U̲ − Ψ̲)ᵢ`.
    pub min_gap: f64,
    pub min_multiplier: f64,
    /// `max |Λ̲ᵢ (U̲ − Ψ̲)ᵢ|`.
    pub max_product: f64,
    /// `‖S̲U̲ − Λ̲ − F̲‖_∞`.
    pub equation_residual: f64,
}

impl ComplementarityReport {
    pub fn holds(&self, tol: f64, load_scale: f64) -> bool {
        self.min_gap >= -tol && self.min_multiplier >= -tol && self.max_product <= tol * load_scale
    }
}

pub fn complementarity(prob: &DiscreteObstacleProblem, u: &[f64], lambda: &[f64]) -> Result<ComplementarityReport> {
    let r = prob.residual(u)?;
    let mut rep = ComplementarityReport {
        min_gap: f64::INFINITY,
        min_multiplier: f64::INFINITY,
        max_product: 0.0,
        equation_residual: 0.0,
    };
    for i in 0..u.len() {
        let gap = u[i] - prob.psi[i];
        rep.min_gap = rep.min_gap.min(gap);
        rep.min_multiplier = rep.min_multiplier.min(lambda[i]);
        rep.max_product = rep.max_product.max((gap * lambda[i]).abs());
        rep.equation_residual = rep.equation_residual.max((r[i] - lambda[i]).abs());
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub strategy: InnerStrategy,
    pub outer_iterations: usize,
    pub active_set_sizes: Vec<usize>,
    pub inner_iterations: Vec<usize>,
    pub inner_iterations_total: usize,
    pub increments: Vec<f64>,
    pub last_increment: f64,
    /// `"repeated_active_set"` or `"small_increment"`.
    pub stopped_by: &'static str,
    pub complementarity: ComplementarityReport,
}

#[derive(Clone, Debug)]
pub struct PdasSolution {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub active: Vec<usize>,
    pub report: SolverReport,
}

fn method_for(op: &dyn LinearOperator) -> Method {
    if op.symmetry() == Symmetry::Symmetric {
        Method::Cg
    } else {
        Method::Bicgstab
    }
}

struct InnerSolver<'a> {
    op: &'a SystemOperator,
    cfg: KrylovConfig,
    precond: Option<&'a dyn LinearOperator>,
    iterations: std::cell::Cell<usize>,
}

impl InnerSolver<'_> {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let cfg = KrylovConfig { method: method_for(self.op), ..self.cfg };
        let out = solve(self.op, rhs, &cfg, self.precond, None)?;
        self.iterations.set(self.iterations.get() + out.iterations);
        Ok(out.solution)
    }
}

/// `λ_𝒜 ↦ 𝓘 S̲⁻¹ 𝓘ᵀ λ_𝒜`.
struct SchurComplement<'a> {
    inner: &'a InnerSolver<'a>,
    active: &'a [usize],
}

impl LinearOperator for SchurComplement<'_> {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let mut full = vec![0.0; self.inner.op.dim()];
        for (&a, &xa) in self.active.iter().zip(x) {
            full[a] = xa;
        }
        let w = self.inner.solve(&full)?;
        for (ya, &a) in y.iter_mut().zip(self.active) {
            *ya = w[a];
        }
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        self.inner.op.symmetry()
    }
}

/// Solves the PDAS block system for a fixed active set through the Schur
/// complement. Returns `(U̲, Λ̲, Krylov iterations)`.
pub fn schur_step(
    prob: &DiscreteObstacleProblem,
    active: &[usize],
    krylov: &KrylovConfig,
    nested_tol_factor: f64,
    precond: Option<&dyn LinearOperator>,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let nested = KrylovConfig { rel_tol: krylov.rel_tol * nested_tol_factor, ..*krylov };
    let inner = InnerSolver { op: &prob.operator, cfg: nested, precond, iterations: Default::default() };
    let g = inner.solve(&prob.load)?;
    let n = prob.dim();
    let mut lambda = vec![0.0; n];
    let mut u = g.clone();
    let mut schur_iterations = 0;
    if !active.is_empty() {
        let schur = SchurComplement { inner: &inner, active };
        let rhs: Vec<f64> = active.iter().map(|&a| prob.psi[a] - g[a]).collect();
        let cfg = KrylovConfig { method: method_for(&schur), ..*krylov };
        let out = solve(&schur, &rhs, &cfg, None, None)?;
        schur_iterations = out.iterations;
        for (&a, &l) in active.iter().zip(&out.solution) {
            lambda[a] = l;
        }
        let w = inner.solve(&lambda)?;
        u.iter_mut().zip(&w).for_each(|(ui, wi)| *ui += wi);
    }
    Ok((u, lambda, schur_iterations + inner.iterations.get()))
}

/// `x ↦ P_I S̲ P_I x + P_A x`.
struct ReducedOperator<'a> {
    op: &'a dyn LinearOperator,
    is_active: &'a [bool],
}

impl LinearOperator for ReducedOperator<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let masked: Vec<f64> = x.iter().zip(self.is_active).map(|(&v, &a)| if a { 0.0 } else { v }).collect();
        self.op.apply(&masked, y)?;
        for i in 0..y.len() {
            if self.is_active[i] {
                y[i] = x[i];
            }
        }
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        self.op.symmetry()
    }
}

/// Solves the PDAS block system for a fixed active set by eliminating the
/// active unknowns. Returns `(U̲, Λ̲, Krylov iterations)`.
pub fn reduced_step(
    prob: &DiscreteObstacleProblem,
    active: &[usize],
    krylov: &KrylovConfig,
    precond: Option<&dyn LinearOperator>,
    initial: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = prob.dim();
    let mut is_active = vec![false; n];
    for &a in active {
        is_active[a] = true;
    }
    let psi_a: Vec<f64> = (0..n).map(|i| if is_active[i] { prob.psi[i] } else { 0.0 }).collect();
    let s_psi = prob.operator.apply_vec(&psi_a)?;
    let rhs: Vec<f64> = (0..n).map(|i| if is_active[i] { prob.psi[i] } else { prob.load[i] - s_psi[i] }).collect();
    let reduced = ReducedOperator { op: &prob.operator, is_active: &is_active };
    let masked_pc = precond.map(|p| ReducedOperator { op: p, is_active: &is_active });
    // a poor warm start (e.g. a far-away obstacle) costs digits in the
    // recursive residual, so it is used only when it beats the zero guess
    let initial = match initial {
        Some(x0) => {
            let mut r0 = reduced.apply_vec(x0)?;
            r0.iter_mut().zip(&rhs).for_each(|(a, b)| *a = b - *a);
            (norm2(&r0) < norm2(&rhs)).then_some(x0)
        }
        None => None,
    };
    let cfg = KrylovConfig { method: method_for(&reduced), ..*krylov };
    let out = solve(&reduced, &rhs, &cfg, masked_pc.as_ref().map(|p| p as &dyn LinearOperator), initial)?;
    let mut u = out.solution;
    for &a in active {
        u[a] = prob.psi[a];
    }
    let r = prob.residual(&u)?;
    let lambda = (0..n).map(|i| if is_active[i] { r[i] } else { 0.0 }).collect();
    Ok((u, lambda, out.iterations))
}

fn active_set(state: &PdasState, psi: &[f64], rho: f64) -> Vec<usize> {
    (0..psi.len()).filter(|&j| state.lambda[j] - rho * (state.u[j] - psi[j]) > 0.0).collect()
}

/// Primal–dual active set iteration. Stops when the active set repeats or
/// when `‖U̲ᵏ⁺¹ − U̲ᵏ‖_{h,ι} < eps_stop`.
pub fn pdas_solve(
    prob: &DiscreteObstacleProblem,
    init: Option<PdasState>,
    cfg: &PdasConfig,
    precond: Option<&dyn LinearOperator>,
) -> Result<PdasSolution> {
    cfg.validate()?;
    let mut state = match init {
        Some(s) => s,
        None => PdasState::initial(prob)?,
    };
    let mut previous: Option<Vec<usize>> = (state.iteration > 0).then(|| state.active.clone());
    let mut sizes = Vec::new();
    let mut inner_its = Vec::new();
    let mut increments = Vec::new();
    let stopped_by;
    loop {
        let active = active_set(&state, &prob.psi, cfg.rho);
        if previous.as_ref() == Some(&active) {
            stopped_by = "repeated_active_set";
            increments.push(0.0);
            break;
        }
        if sizes.len() >= cfg.max_outer {
            return Err(Error::OuterCap(cfg.max_outer));
        }
        let iteration = state.iteration + 1;
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::InnerSolve { iteration, source: Box::new(other) },
        };
        let (u, lambda, its) = match cfg.inner {
            InnerStrategy::Schur => schur_step(prob, &active, &cfg.krylov, cfg.nested_tol_factor, precond),
            InnerStrategy::Reduced => reduced_step(prob, &active, &cfg.krylov, precond, Some(&state.u)),
        }
        .map_err(wrap)?;
        let diff: Vec<f64> = u.iter().zip(&state.u).map(|(a, b)| a - b).collect();
        let inc = prob.operator.energy_norm(&diff).map_err(wrap)?;
        sizes.push(active.len());
        inner_its.push(its);
        increments.push(inc);
        previous = Some(active.clone());
        state = PdasState { u, lambda, active, iteration };
        if inc < cfg.eps_stop {
            stopped_by = "small_increment";
            break;
        }
    }
    let comp = complementarity(prob, &state.u, &state.lambda)?;
    let report = SolverReport {
        strategy: cfg.inner,
        outer_iterations: sizes.len(),
        inner_iterations_total: inner_its.iter().sum(),
        active_set_sizes: sizes,
        inner_iterations: inner_its,
        last_increment: *increments.last().unwrap_or(&0.0),
        increments,
        stopped_by,
        complementarity: comp,
    };
    Ok(PdasSolution { u: state.u, lambda: state.lambda, active: state.active, report })
}

/// `ϑ_ε(t) = 1 − 3(t/ε)² + 2(t/ε)³` on `[0, ε]`, 1 below and 0 above.
pub fn cutoff(t: f64, eps: f64) -> f64 {
    let x = (t / eps).clamp(0.0, 1.0);
    1.0 - x * x * (3.0 - 2.0 * x)
}

fn cutoff_derivative(t: f64, eps: f64) -> f64 {
    if t <= 0.0 || t >= eps {
        0.0
    } else {
        let x = t / eps;
        6.0 * x * (x - 1.0) / eps
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PenalizedReport {
    pub newton_iterations: usize,
    pub inner_iterations_total: usize,
    pub residual: f64,
}

/// Solves `S̲U̲ = F̲ + W F⁺ ϑ_ε(U̲ − Ψ̲)` with `W = diag(weights)` by damped
/// Newton iteration, to `‖residual‖₂ ≤ 1e−8 · max(‖F̲‖₂, ‖W F⁺‖₂)`.
pub fn penalized_solve(
    prob: &DiscreteObstacleProblem,
    epsilon: f64,
    f_plus: &[f64],
    weights: &[f64],
    krylov: &KrylovConfig,
    precond: Option<&dyn LinearOperator>,
) -> Result<(Vec<f64>, PenalizedReport)> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("penalty parameter ε must be positive (got {epsilon})")));
    }
    let n = prob.dim();
    if f_plus.len() != n || weights.len() != n {
        return Err(Error::Config("F⁺ and weights must match the number of DoFs".into()));
    }
    if f_plus.iter().any(|&x| x < 0.0) {
        return Err(Error::Config("F⁺ must be nonnegative".into()));
    }
    let wf: Vec<f64> = weights.iter().zip(f_plus).map(|(w, f)| w * f).collect();
    let scale = norm2(&prob.load).max(norm2(&wf)).max(f64::MIN_POSITIVE);
    let tol = 1e-8 * scale;
    let residual = |u: &[f64]| -> Result<Vec<f64>> {
        let mut r = prob.residual(u)?;
        for i in 0..n {
            r[i] -= wf[i] * cutoff(u[i] - prob.psi[i], epsilon);
        }
        Ok(r)
    };
    let inner = InnerSolver { op: &prob.operator, cfg: *krylov, precond, iterations: Default::default() };
    let mut u = inner.solve(&prob.load)?;
    let mut r = residual(&u)?;
    let mut rnorm = norm2(&r);
    let max_newton = 100;
    for it in 0..max_newton {
        if rnorm <= tol {
            return Ok((
                u,
                PenalizedReport {
                    newton_iterations: it,
                    inner_iterations_total: inner.iterations.get(),
                    residual: rnorm,
                },
            ));
        }
        let diag: Vec<f64> = (0..n).map(|i| -wf[i] * cutoff_derivative(u[i] - prob.psi[i], epsilon)).collect();
        let jac = Jacobian { op: &prob.operator, diag: &diag };
        let cfg = KrylovConfig {
            method: method_for(&jac),
            rel_tol: krylov.rel_tol.min(1e-3 * tol / rnorm).max(1e-14),
            ..*krylov
        };
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let out = solve(&jac, &neg, &cfg, precond, None)?;
        inner.iterations.set(inner.iterations.get() + out.iterations);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&out.solution).map(|(a, d)| a + step * d).collect();
            let rt = residual(&trial)?;
            let nt = norm2(&rt);
            if nt < (1.0 - 1e-4 * step) * rnorm || step < 1e-6 {
                u = trial;
                r = rt;
                rnorm = nt;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::NoConvergence { method: "penalized Newton", iterations: max_newton, residual: rnorm / scale })
}

/// `S̲ + diag(d)` with `d ≥ 0`.
struct Jacobian<'a> {
    op: &'a SystemOperator,
    diag: &'a [f64],
}

impl LinearOperator for Jacobian<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.op.apply(x, y)?;
        for i in 0..y.len() {
            y[i] += self.diag[i] * x[i];
        }
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        self.op.symmetry()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierReport {
    pub passed: bool,
    /// First index with `Λ̲ᵢ < −tol`.
    pub offending: Option<usize>,
    pub min_multiplier: f64,
    /// Fraction of DoFs with `Λ̲ᵢ ≤ (W F⁺)ᵢ + tol`.
    pub bounded_fraction: f64,
}

/// Sign check `Λ̲ ≥ −tol` and the upper bound `Λ̲ ≤ W F⁺` (informational);
/// `weighted_f_plus` is `F⁺` scaled by the basis integrals.
pub fn multiplier_sign_check(lambda: &[f64], weighted_f_plus: &[f64], tol: f64) -> MultiplierReport {
    let offending = lambda.iter().position(|&l| l < -tol);
    let bounded = lambda.iter().zip(weighted_f_plus).filter(|(l, f)| **l <= **f + tol).count();
    MultiplierReport {
        passed: offending.is_none(),
        offending,
        min_multiplier: lambda.iter().copied().fold(f64::INFINITY, f64::min),
        bounded_fraction: if lambda.is_empty() { 1.0 } else { bounded as f64 / lambda.len() as f64 },
    }
}

/// `max{F, 0}` at the DoFs for `F = ιLχ + β·∇χ − f + (−Δ)^s χ`, with the
/// fractional term approximated by the discrete operator applied to `Ψ̲`
/// and divided by the basis integrals. `local` holds the nodal values of
/// `ιLχ + β·∇χ` and `f_nodal` those of `f`.
pub fn penalty_source(
    prob: &DiscreteObstacleProblem,
    local: &[f64],
    f_nodal: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let frac = prob.operator.scheme().apply_fractional(&prob.psi)?;
    Ok((0..prob.dim()).map(|i| (local[i] - f_nodal[i] + frac[i] / weights[i]).max(0.0)).collect())
}

/// `max |a − b|`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    norm_inf(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// Random Rayleigh quotient helper: `xᵀ T x` for the Schur complement on
/// `active`, with inner solves at `krylov`.
pub fn schur_rayleigh(
    prob: &DiscreteObstacleProblem,
    active: &[usize],
    x: &[f64],
    krylov: &KrylovConfig,
) -> Result<f64> {
    let inner = InnerSolver { op: &prob.operator, cfg: *krylov, precond: None, iterations: Default::default() };
    let t = SchurComplement { inner: &inner, active };
    Ok(dot(x, &t.apply_vec(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::FeSpace;
    use crate::mesh::{build_base_mesh, DomainId};
    use nalgebra::{DMatrix, DVector};

    fn scheme_1d(s: f64, level: usize) -> Arc<SincScheme> {
        let mesh = Arc::new(build_base_mesh(DomainId::Interval, level).unwrap());
        Arc::new(SincScheme::build(s, 0.4, 3.0, FeSpace::on_base(mesh)).unwrap())
    }

    fn case_a(s: f64, level: usize) -> DiscreteObstacleProblem {
        let scheme = scheme_1d(s, level);
        let space = scheme.base().clone();
        let op = SystemOperator::new(scheme, 0.0, &Coefficients::scaled_identity(1.0), None).unwrap();
        let psi = interpolate_obstacle(&|p| 3.0 - 6.0 * p[0] * p[0], &space);
        let load = space.assemble_load(&|_| 1.0);
        DiscreteObstacleProblem::new(op, psi, load).unwrap()
    }

    #[test]
    fn cutoff_endpoints() {
        assert_eq!(cutoff(-1.0, 0.1), 1.0);
        assert_eq!(cutoff(0.0, 0.1), 1.0);
        assert_eq!(cutoff(0.1, 0.1), 0.0);
        assert_eq!(cutoff(5.0, 0.1), 0.0);
        assert!((cutoff(0.05, 0.1) - 0.5).abs() < 1e-15);
        let h = 1e-7;
        for t in [0.01, 0.03, 0.07] {
            let fd = (cutoff(t + h, 0.1) - cutoff(t - h, 0.1)) / (2.0 * h);
            assert!((fd - cutoff_derivative(t, 0.1)).abs() < 1e-5);
        }
    }

    #[test]
    fn obstacle_interpolation() {
        let space = FeSpace::on_base(Arc::new(build_base_mesh(DomainId::Interval, 2).unwrap()));
        let psi = interpolate_obstacle(&|p| 3.0 - 6.0 * p[0] * p[0], &space);
        let mid = space.dof_coords().iter().position(|p| p[0] == 0.0).unwrap();
        assert_eq!(psi[mid], 3.0);
        assert!(interpolate_obstacle(&|_| 0.0, &space).iter().all(|&x| x == 0.0));
        assert!(interpolate_obstacle(&|p| p[0] * p[0], &space).iter().all(|&x| x >= 0.0));
        let mesh = space.mesh();
        assert!(obstacle_boundary_violations(mesh, &|p| 3.0 - 6.0 * p[0] * p[0]).is_empty());
        assert_eq!(obstacle_boundary_violations(mesh, &|_| 1.0).len(), 2);
    }

    #[test]
    fn low_obstacle_gives_unconstrained_solution() {
        let mut prob = case_a(0.5, 3);
        prob.psi.iter_mut().for_each(|x| *x = -1e6);
        let sol = pdas_solve(&prob, None, &PdasConfig::default(), None).unwrap();
        assert!(sol.active.is_empty());
        assert!(sol.lambda.iter().all(|&l| l == 0.0));
        let r = prob.residual(&sol.u).unwrap();
        assert!(norm2(&r) <= 1e-9 * norm2(&prob.load));
    }

    #[test]
    fn contact_set_is_symmetric_and_complementarity_holds() {
        let prob = case_a(0.5, 4);
        let sol = pdas_solve(&prob, None, &PdasConfig::default(), None).unwrap();
        assert!(!sol.active.is_empty());
        let x = prob.operator.scheme().base().dof_coords();
        let mut xs: Vec<i64> = sol.active.iter().map(|&a| (x[a][0] * 1e9).round() as i64).collect();
        let mut mirrored: Vec<i64> = xs.iter().map(|v| -v).collect();
        xs.sort();
        mirrored.sort();
        assert_eq!(xs, mirrored);
        let c = &sol.report.complementarity;
        assert!(c.holds(1e-8, norm_inf(&prob.load)), "{c:?}");
        assert!(c.equation_residual <= 1e-8 * norm_inf(&prob.load).max(1.0));
        assert_eq!(sol.report.stopped_by, "repeated_active_set");
    }

    #[test]
    fn schur_and_reduced_steps_agree() {
        let prob = case_a(0.3, 3);
        let krylov = KrylovConfig::default();
        for active in [vec![], vec![2, 3, 4], (0..prob.dim()).collect::<Vec<_>>()] {
            let (u1, l1, _) = schur_step(&prob, &active, &krylov, 1e-2, None).unwrap();
            let (u2, l2, _) = reduced_step(&prob, &active, &krylov, None, None).unwrap();
            assert!(max_abs_diff(&u1, &u2) < 1e-8, "{active:?}");
            assert!(max_abs_diff(&l1, &l2) < 1e-8 * norm_inf(&l2).max(1.0), "{active:?}");
        }
        let full: Vec<usize> = (0..prob.dim()).collect();
        let (u, _, _) = schur_step(&prob, &full, &krylov, 1e-2, None).unwrap();
        assert!(max_abs_diff(&u, &prob.psi) < 1e-8);
    }

    #[test]
    fn one_node_active_matches_dense_block_system() {
        let prob = case_a(0.7, 2);
        let n = prob.dim();
        let s = prob.operator.to_dense().unwrap();
        let a = n / 2;
        let mut block = DMatrix::zeros(n + 1, n + 1);
        block.view_mut((0, 0), (n, n)).copy_from(&s);
        block[(a, n)] = -1.0;
        block[(n, a)] = 1.0;
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from_slice(&prob.load);
        rhs[n] = prob.psi[a];
        let x = block.lu().solve(&rhs).unwrap();
        let (u, l, _) = schur_step(&prob, &[a], &KrylovConfig::default(), 1e-2, None).unwrap();
        for i in 0..n {
            assert!((u[i] - x[i]).abs() < 1e-9);
        }
        assert!((l[a] - x[n]).abs() < 1e-9 * x[n].abs().max(1.0));
    }

    #[test]
    fn schur_complement_is_positive_definite() {
        let prob = case_a(0.5, 3);
        let active = vec![1, 3, 4];
        let mut rng_state = 1u64;
        for _ in 0..10 {
            let x: Vec<f64> = (0..3)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            assert!(schur_rayleigh(&prob, &active, &x, &KrylovConfig::default()).unwrap() > 0.0);
        }
    }

    #[test]
    fn repeated_set_stops_within_one_iteration() {
        let prob = case_a(0.5, 4);
        let sol = pdas_solve(&prob, None, &PdasConfig { eps_stop: 1e-300, ..Default::default() }, None).unwrap();
        let sizes = &sol.report.active_set_sizes;
        assert_eq!(sol.report.stopped_by, "repeated_active_set");
        assert!(sizes.len() <= 10);
    }

    #[test]
    fn raising_the_obstacle_does_not_lower_the_solution() {
        let prob = case_a(0.5, 4);
        let sol = pdas_solve(&prob, None, &PdasConfig::default(), None).unwrap();
        let mut raised = case_a(0.5, 4);
        for &a in &sol.active {
            raised.psi[a] += 0.1;
        }
        let sol2 = pdas_solve(&raised, None, &PdasConfig::default(), None).unwrap();
        assert!(sol2.u.iter().zip(&sol.u).all(|(b, a)| b >= &(a - 1e-8)));
    }

    #[test]
    fn penalized_solve_without_penalty_is_the_unconstrained_solution() {
        let prob = case_a(0.5, 3);
        let zeros = vec![0.0; prob.dim()];
        let w = prob.operator.scheme().base().basis_integrals();
        let (u, _) = penalized_solve(&prob, 0.1, &zeros, &w, &KrylovConfig::default(), None).unwrap();
        let r = prob.residual(&u).unwrap();
        assert!(norm2(&r) <= 1e-8 * norm2(&prob.load));
    }

    #[test]
    fn penalized_solution_sits_above_the_obstacle_solution() {
        let prob = case_a(0.5, 4);
        let sol = pdas_solve(&prob, None, &PdasConfig::default(), None).unwrap();
        let space = prob.operator.scheme().base();
        let w = space.basis_integrals();
        let f_nodal = vec![1.0; prob.dim()];
        let local = vec![0.0; prob.dim()];
        let fp = penalty_source(&prob, &local, &f_nodal, &w).unwrap();
        let (ue, rep) = penalized_solve(&prob, 1e-2, &fp, &w, &KrylovConfig::default(), None).unwrap();
        assert!(rep.residual <= 1e-8 * norm2(&prob.load).max(1.0));
        let h = space.mesh().h_max();
        let delta = 10.0 * (1e-8 + h * h);
        let d: Vec<f64> = ue.iter().zip(&sol.u).map(|(a, b)| a - b).collect();
        assert!(d.iter().all(|&x| x <= 1e-2 + delta), "{d:?}");
    }

    #[test]
    fn multiplier_checks() {
        let rep = multiplier_sign_check(&[0.0, 0.0], &[0.0, 0.0], 1e-10);
        assert!(rep.passed);
        let rep = multiplier_sign_check(&[0.5, -1.0, 0.2], &[1.0, 1.0, 0.0], 1e-10);
        assert!(!rep.passed);
        assert_eq!(rep.offending, Some(1));
        assert!((rep.bounded_fraction - 2.0 / 3.0).abs() < 1e-15);
        let prob = case_a(0.5, 4);
        let sol = pdas_solve(&prob, None, &PdasConfig::default(), None).unwrap();
        let rep = multiplier_sign_check(&sol.lambda, &vec![f64::INFINITY; prob.dim()], 1e-10);
        assert!(rep.passed);
    }

    #[test]
    fn configuration_errors() {
        let bad = PdasConfig { rho: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let prob = case_a(0.5, 2);
        assert!(matches!(
            penalized_solve(&prob, 0.0, &vec![0.0; prob.dim()], &vec![1.0; prob.dim()], &KrylovConfig::default(), None),
            Err(Error::Config(_))
        ));
        let scheme = scheme_1d(0.5, 2);
        let op = SystemOperator::with_local(scheme, 0.0, None);
        assert!(matches!(DiscreteObstacleProblem::new(op, vec![0.0; 2], vec![0.0; 2]), Err(Error::Config(_))));
    }
}
