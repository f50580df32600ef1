//! Krylov solvers over matrix-free operators and the two preconditioners
//! used for the obstacle systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{prolongation, FeSpace};
use crate::mesh::MeshHierarchy;
use crate::sparse::{axpy, dot, norm2, CsrMatrix, Symmetry};

/// Square operator available only through its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
    fn symmetry(&self) -> Symmetry {
        Symmetry::General
    }

    fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y)?;
        Ok(y)
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.matvec(x, y);
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        CsrMatrix::symmetry(self)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        (**self).apply(x, y)
    }

    fn symmetry(&self) -> Symmetry {
        (**self).symmetry()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::Symmetric
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cg,
    Bicgstab,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    None,
    SpectralFraclap,
    Multilevel,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { method: Method::Cg, rel_tol: 1e-10, max_iter: 2000, preconditioner: PreconditionerKind::None }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Config(format!("relative tolerance {} must lie in (0, 1)", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − A x‖ / ‖b‖` as tracked by the iteration.
    pub residual: f64,
}

/// Solves `op x = rhs` from the initial guess `x0` (zero if absent).
pub fn solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    cfg: &KrylovConfig,
    precond: Option<&dyn LinearOperator>,
    x0: Option<&[f64]>,
) -> Result<KrylovOutcome> {
    cfg.validate()?;
    let n = op.dim();
    if rhs.len() != n || precond.is_some_and(|p| p.dim() != n) {
        return Err(Error::Config("operator, preconditioner and right-hand side sizes differ".into()));
    }
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }
    match cfg.method {
        Method::Cg => cg(op, rhs, cfg, precond, x0),
        Method::Bicgstab => bicgstab(op, rhs, cfg, precond, x0),
    }
}

fn initial_residual(op: &dyn LinearOperator, rhs: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rhs.len();
    match x0 {
        Some(x0) => {
            let mut r = op.apply_vec(x0)?;
            r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri = bi - *ri);
            Ok((x0.to_vec(), r))
        }
        None => Ok((vec![0.0; n], rhs.to_vec())),
    }
}

fn precondition(precond: Option<&dyn LinearOperator>, r: &[f64], z: &mut [f64]) -> Result<()> {
    match precond {
        Some(p) => p.apply(r, z),
        None => {
            z.copy_from_slice(r);
            Ok(())
        }
    }
}

fn cg(
    op: &dyn LinearOperator,
    rhs: &[f64],
    cfg: &KrylovConfig,
    precond: Option<&dyn LinearOperator>,
    x0: Option<&[f64]>,
) -> Result<KrylovOutcome> {
    if op.symmetry() != Symmetry::Symmetric || precond.is_some_and(|p| p.symmetry() != Symmetry::Symmetric) {
        return Err(Error::NonSymmetricOperator);
    }
    let n = rhs.len();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { solution: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let (mut x, mut r) = initial_residual(op, rhs, x0)?;
    let mut rel = norm2(&r) / bnorm;
    if rel <= cfg.rel_tol {
        return Ok(KrylovOutcome { solution: x, iterations: 0, residual: rel });
    }
    let mut z = vec![0.0; n];
    precondition(precond, &r, &mut z)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=cfg.max_iter {
        op.apply(&p, &mut q)?;
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Breakdown("conjugate gradient (operator not positive definite)"));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::Numerical("conjugate gradient residual is not finite".into()));
        }
        if rel <= cfg.rel_tol {
            return Ok(KrylovOutcome { solution: x, iterations: it, residual: rel });
        }
        precondition(precond, &r, &mut z)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NoConvergence { method: "conjugate gradient", iterations: cfg.max_iter, residual: rel })
}

/// Right-preconditioned BiCGSTAB.
fn bicgstab(
    op: &dyn LinearOperator,
    rhs: &[f64],
    cfg: &KrylovConfig,
    precond: Option<&dyn LinearOperator>,
    x0: Option<&[f64]>,
) -> Result<KrylovOutcome> {
    let n = rhs.len();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { solution: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let (mut x, mut r) = initial_residual(op, rhs, x0)?;
    let mut rel = norm2(&r) / bnorm;
    if rel <= cfg.rel_tol {
        return Ok(KrylovOutcome { solution: x, iterations: 0, residual: rel });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let tiny = f64::EPSILON * f64::EPSILON;
    for it in 1..=cfg.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= tiny * bnorm * bnorm {
            return Err(Error::Breakdown("BiCGSTAB (ρ = 0)"));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precondition(precond, &p, &mut p_hat)?;
        op.apply(&p_hat, &mut v)?;
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(Error::Breakdown("BiCGSTAB (r̂·v = 0)"));
        }
        alpha = rho / rv;
        axpy(alpha, &p_hat, &mut x);
        axpy(-alpha, &v, &mut r);
        rel = norm2(&r) / bnorm;
        if rel <= cfg.rel_tol {
            return Ok(KrylovOutcome { solution: x, iterations: it, residual: rel });
        }
        precondition(precond, &r, &mut s_hat)?;
        op.apply(&s_hat, &mut t)?;
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::Breakdown("BiCGSTAB (t = 0)"));
        }
        omega = dot(&t, &r) / tt;
        if omega == 0.0 {
            return Err(Error::Breakdown("BiCGSTAB (ω = 0)"));
        }
        axpy(omega, &s_hat, &mut x);
        axpy(-omega, &t, &mut r);
        rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::Numerical("BiCGSTAB residual is not finite".into()));
        }
        if rel <= cfg.rel_tol {
            return Ok(KrylovOutcome { solution: x, iterations: it, residual: rel });
        }
    }
    Err(Error::NoConvergence { method: "BiCGSTAB", iterations: cfg.max_iter, residual: rel })
}

/// Largest system handled by the dense spectral preconditioner.
pub const SPECTRAL_MAX_DOFS: usize = 5000;

/// `v ↦ Σⱼ λⱼ^{−s} (ψⱼᵀ v) ψⱼ` for the generalized eigenpairs `A ψ = λ M ψ`
/// with `M`-orthonormal `ψⱼ`: the inverse of the discrete spectral
/// fractional Laplacian.
pub struct SpectralPreconditioner {
    /// Columns `λⱼ^{−s/2} ψⱼ`.
    scaled_modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl SpectralPreconditioner {
    pub fn new(stiffness: &CsrMatrix, mass: &CsrMatrix, s: f64) -> Result<Self> {
        let n = stiffness.nrows();
        if n > SPECTRAL_MAX_DOFS {
            return Err(Error::Config(format!(
                "spectral preconditioner is dense and limited to {SPECTRAL_MAX_DOFS} DoFs (got {n})"
            )));
        }
        let l = mass.to_dense().cholesky().ok_or_else(|| Error::Numerical("mass matrix Cholesky failed".into()))?.l();
        let a = stiffness.to_dense();
        // C = L⁻¹ A L⁻ᵀ
        let linv_a = l.solve_lower_triangular(&a).ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        let c = l
            .solve_lower_triangular(&linv_a.transpose())
            .ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        let c = 0.5 * (&c + c.transpose());
        let eig = c.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&lam| !(lam > 0.0)) {
            return Err(Error::Numerical("stiffness matrix has a non-positive generalized eigenvalue".into()));
        }
        // Ψ = L⁻ᵀ Q
        let mut modes = l
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let w = lam.powf(-0.5 * s);
            modes.column_mut(j).iter_mut().for_each(|x| *x *= w);
        }
        Ok(SpectralPreconditioner { scaled_modes: modes, eigenvalues: eig.eigenvalues.iter().copied().collect() })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

impl LinearOperator for SpectralPreconditioner {
    fn dim(&self) -> usize {
        self.scaled_modes.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let coeffs = self.scaled_modes.tr_mul(&DVector::from_column_slice(x));
        let out = &self.scaled_modes * coeffs;
        y.copy_from_slice(out.as_slice());
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::Symmetric
    }
}

/// Nested spaces `V₁ ⊂ … ⊂ V_J` with the quasi-interpolants
/// `Q̃ⱼ w = Σᵢ (w, φᵢʲ)/(1, φᵢʲ) φᵢʲ` expressed on the finest space.
pub struct MultilevelHierarchy {
    /// Composite prolongation from level `j` to the finest level.
    prolongations: Vec<CsrMatrix>,
    /// `1/(1, φᵢʲ)` per level.
    inverse_integrals: Vec<Vec<f64>>,
    mesh_sizes: Vec<f64>,
    fine_mass: CsrMatrix,
    abar: f64,
}

impl MultilevelHierarchy {
    /// `spaces[j]` must live on the uniform refinement of the mesh of
    /// `spaces[j − 1]`, related by `parents[j − 1]`.
    pub fn new(spaces: &[FeSpace], parents: &[crate::mesh::ParentMap], abar: f64) -> Result<Self> {
        if spaces.len() < 2 {
            return Err(Error::Config("a multilevel hierarchy needs at least two levels".into()));
        }
        if parents.len() < spaces.len() - 1 {
            return Err(Error::Config("missing parent maps for the hierarchy".into()));
        }
        if !(abar >= 0.0 && abar.is_finite()) {
            return Err(Error::Config(format!("diffusion scale {abar} must be nonnegative")));
        }
        let finest = spaces.last().expect("nonempty");
        let mut steps = Vec::with_capacity(spaces.len() - 1);
        for j in 1..spaces.len() {
            if spaces[j].mesh().num_vertices() != parents[j - 1].len()
                || spaces[j].mesh().level() != spaces[j - 1].mesh().level() + 1
            {
                return Err(Error::Config(format!("levels {} and {} are not nested", j - 1, j)));
            }
            steps.push(prolongation(&spaces[j - 1], &spaces[j], &parents[j - 1])?);
        }
        let mut prolongations = vec![CsrMatrix::identity(finest.dof_count()); spaces.len()];
        for j in (0..spaces.len() - 1).rev() {
            prolongations[j] = prolongations[j + 1].matmul(&steps[j]);
        }
        Ok(MultilevelHierarchy {
            prolongations,
            inverse_integrals: spaces.iter().map(|v| v.basis_integrals().iter().map(|w| 1.0 / w).collect()).collect(),
            mesh_sizes: spaces.iter().map(|v| v.mesh().h_max()).collect(),
            fine_mass: finest.assemble_mass(),
            abar,
        })
    }

    /// Hierarchy on the base meshes of all levels of `hierarchy`.
    pub fn from_meshes(hierarchy: &MeshHierarchy, abar: f64) -> Result<Self> {
        let spaces: Vec<FeSpace> = hierarchy.meshes.iter().map(|m| FeSpace::on_base(m.clone())).collect();
        Self::new(&spaces, &hierarchy.parents, abar)
    }

    pub fn levels(&self) -> usize {
        self.prolongations.len()
    }

    pub fn fine_dofs(&self) -> usize {
        self.fine_mass.nrows()
    }

    pub fn mesh_sizes(&self) -> &[f64] {
        &self.mesh_sizes
    }

    pub fn abar(&self) -> f64 {
        self.abar
    }

    pub fn fine_mass(&self) -> &CsrMatrix {
        &self.fine_mass
    }

    /// `K_j r = P_j D_j⁻¹ P_jᵀ r`, the action of `Q̃_j` on a residual.
    pub fn quasi_interpolate(&self, j: usize, r: &[f64]) -> Vec<f64> {
        let p = &self.prolongations[j];
        let mut c = p.tr_mul_vec(r);
        c.iter_mut().zip(&self.inverse_integrals[j]).for_each(|(ci, w)| *ci *= w);
        p.mul_vec(&c)
    }
}

/// `B_J r = Σⱼ (Ā hⱼ⁻² + hⱼ^{−2s})⁻¹ (Q̃ⱼ₊₁ − Q̃ⱼ) M̲ (Q̃ⱼ₊₁ − Q̃ⱼ) r`, optionally
/// with the coarse term `(Ā h₁⁻² + h₁^{−2s})⁻¹ Q̃₁ M̲ Q̃₁`.
pub struct MultilevelPreconditioner<'a> {
    hierarchy: &'a MultilevelHierarchy,
    weights: Vec<f64>,
    coarse_weight: Option<f64>,
}

impl<'a> MultilevelPreconditioner<'a> {
    pub fn new(hierarchy: &'a MultilevelHierarchy, s: f64, coarse_term: bool) -> Self {
        let weight = |h: f64| 1.0 / (hierarchy.abar * h.powi(-2) + h.powf(-2.0 * s));
        let h = &hierarchy.mesh_sizes;
        MultilevelPreconditioner {
            hierarchy,
            weights: h[..h.len() - 1].iter().map(|&hj| weight(hj)).collect(),
            coarse_weight: coarse_term.then(|| weight(h[0])),
        }
    }
}

impl LinearOperator for MultilevelPreconditioner<'_> {
    fn dim(&self) -> usize {
        self.hierarchy.fine_dofs()
    }

    fn apply(&self, r: &[f64], y: &mut [f64]) -> Result<()> {
        let hier = self.hierarchy;
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut prev = hier.quasi_interpolate(0, r);
        if let Some(w) = self.coarse_weight {
            let m = hier.fine_mass.mul_vec(&prev);
            axpy(w, &hier.quasi_interpolate(0, &m), y);
        }
        for (j, &w) in self.weights.iter().enumerate() {
            let next = hier.quasi_interpolate(j + 1, r);
            let d: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
            let md = hier.fine_mass.mul_vec(&d);
            let kd1 = hier.quasi_interpolate(j + 1, &md);
            let kd0 = hier.quasi_interpolate(j, &md);
            for i in 0..y.len() {
                y[i] += w * (kd1[i] - kd0[i]);
            }
            prev = next;
        }
        Ok(())
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::Symmetric
    }
}
