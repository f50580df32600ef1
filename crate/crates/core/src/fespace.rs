//! Continuous P1 (1D) and Q1 (2D) spaces with eliminated Dirichlet DoFs.
//!
//! Element integrals use Gauss rules on the reference cell: two points per
//! direction for matrices, which is exact for piecewise-constant coefficients
//! on intervals and parallelograms, and three points per direction for load
//! vectors.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryMark, ExtendedMesh, Mesh, ParentMap, Point};
use crate::sparse::{CsrMatrix, Symmetry};

type Tensor = [[f64; 2]; 2];

/// Coefficients of `𝓛(v, w) = ∫ ∇wᵀ A ∇v + c v w`.
pub struct Coefficients {
    pub diffusion: Box<dyn Fn(Point) -> Tensor + Send + Sync>,
    pub reaction: Box<dyn Fn(Point) -> f64 + Send + Sync>,
}

impl Coefficients {
    /// `A = scale·I`, `c = 0`.
    pub fn scaled_identity(scale: f64) -> Self {
        Coefficients { diffusion: Box::new(move |_| [[scale, 0.0], [0.0, scale]]), reaction: Box::new(|_| 0.0) }
    }

    /// Largest eigenvalue of `A` over the given sample points.
    pub fn max_diffusion_eigenvalue(&self, points: impl Iterator<Item = Point>) -> f64 {
        points
            .map(|p| {
                let a = (self.diffusion)(p);
                let tr = a[0][0] + a[1][1];
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

struct QuadPoint {
    weight: f64,
    x: Point,
    phi: [f64; 4],
    grad: [[f64; 2]; 4],
}

const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
const GAUSS3: [(f64, f64); 3] =
    [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

fn cell_quadrature(mesh: &Mesh, c: usize, rule: &[(f64, f64)]) -> Vec<QuadPoint> {
    let v = mesh.cell(c);
    let p = mesh.vertices();
    if mesh.dimension() == 1 {
        let (x0, x1) = (p[v[0]][0], p[v[1]][0]);
        let h = x1 - x0;
        rule.iter()
            .map(|&(xi, w)| QuadPoint {
                weight: w * 0.5 * h,
                x: [x0 + 0.5 * (xi + 1.0) * h, 0.0],
                phi: [0.5 * (1.0 - xi), 0.5 * (1.0 + xi), 0.0, 0.0],
                grad: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0; 2], [0.0; 2]],
            })
            .collect()
    } else {
        const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        let mut out = Vec::with_capacity(rule.len() * rule.len());
        for &(eta, wy) in rule {
            for &(xi, wx) in rule {
                let mut phi = [0.0; 4];
                let mut dref = [[0.0; 2]; 4];
                for a in 0..4 {
                    let [ca, cb] = CORNERS[a];
                    phi[a] = 0.25 * (1.0 + ca * xi) * (1.0 + cb * eta);
                    dref[a] = [0.25 * ca * (1.0 + cb * eta), 0.25 * cb * (1.0 + ca * xi)];
                }
                let mut x = [0.0; 2];
                let mut jac = [[0.0; 2]; 2];
                for a in 0..4 {
                    let q = p[v[a]];
                    x[0] += phi[a] * q[0];
                    x[1] += phi[a] * q[1];
                    for r in 0..2 {
                        for s in 0..2 {
                            jac[r][s] += q[r] * dref[a][s];
                        }
                    }
                }
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let inv_t = [[jac[1][1] / det, -jac[1][0] / det], [-jac[0][1] / det, jac[0][0] / det]];
                let mut grad = [[0.0; 2]; 4];
                for a in 0..4 {
                    grad[a] = [
                        inv_t[0][0] * dref[a][0] + inv_t[0][1] * dref[a][1],
                        inv_t[1][0] * dref[a][0] + inv_t[1][1] * dref[a][1],
                    ];
                }
                out.push(QuadPoint { weight: wx * wy * det, x, phi, grad });
            }
        }
        out
    }
}

/// Nodal Lagrange space on a mesh; vertices on facets with the Dirichlet
/// mark carry no DoF.
#[derive(Clone, Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, dirichlet: BoundaryMark) -> Self {
        let fixed = mesh.marked_vertices(dirichlet);
        let mut dof_of_vertex = vec![None; mesh.num_vertices()];
        let mut vertex_of_dof = Vec::new();
        for (v, &f) in fixed.iter().enumerate() {
            if !f {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }
        FeSpace { mesh, dof_of_vertex, vertex_of_dof }
    }

    /// Space on a base mesh, vanishing on the domain boundary.
    pub fn on_base(mesh: Arc<Mesh>) -> Self {
        Self::new(mesh, BoundaryMark::InteriorDomainBoundary)
    }

    /// Space on an extended mesh, vanishing on the outer boundary only.
    pub fn on_extension(ext: &ExtendedMesh) -> Self {
        Self::new(Arc::clone(&ext.mesh), BoundaryMark::ExtensionBoundary)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dof_count(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, i: usize) -> usize {
        self.vertex_of_dof[i]
    }

    pub fn dof_coords(&self) -> Vec<Point> {
        self.vertex_of_dof.iter().map(|&v| self.mesh.vertices()[v]).collect()
    }

    fn assemble_matrix<F>(&self, symmetry: Symmetry, mut local: F) -> Result<CsrMatrix>
    where
        F: FnMut(&QuadPoint, usize, usize) -> Result<f64>,
    {
        let nloc = self.mesh.vertices_per_cell();
        let mut triplets = Vec::with_capacity(self.mesh.num_cells() * nloc * nloc);
        for c in 0..self.mesh.num_cells() {
            let cell = self.mesh.cell(c);
            let qps = cell_quadrature(&self.mesh, c, &GAUSS2);
            for (a, &va) in cell.iter().enumerate().take(nloc) {
                let Some(i) = self.dof_of_vertex[va] else { continue };
                for (b, &vb) in cell.iter().enumerate().take(nloc) {
                    let Some(j) = self.dof_of_vertex[vb] else { continue };
                    let mut sum = 0.0;
                    for q in &qps {
                        sum += q.weight * local(q, a, b)?;
                    }
                    triplets.push((i, j, sum));
                }
            }
        }
        let n = self.dof_count();
        Ok(CsrMatrix::from_triplets(n, n, triplets, symmetry))
    }

    /// `(A̲)ᵢⱼ = 𝓛(φⱼ, φᵢ)`.
    pub fn assemble_stiffness(&self, coeff: &Coefficients) -> Result<CsrMatrix> {
        let dim = self.mesh.dimension();
        self.assemble_matrix(Symmetry::Symmetric, |q, a, b| {
            let k = (coeff.diffusion)(q.x);
            let c = (coeff.reaction)(q.x);
            check_coefficients(dim, &k, c, q.x)?;
            let (gi, gj) = (q.grad[a], q.grad[b]);
            let mut s = 0.0;
            for r in 0..dim {
                for t in 0..dim {
                    s += gi[r] * k[r][t] * gj[t];
                }
            }
            Ok(s + c * q.phi[a] * q.phi[b])
        })
    }

    /// Stiffness matrix of the pure Dirichlet form `∫ ∇v·∇w`.
    pub fn assemble_dirichlet_stiffness(&self) -> CsrMatrix {
        self.assemble_stiffness(&Coefficients::scaled_identity(1.0)).expect("identity coefficient is admissible")
    }

    pub fn assemble_mass(&self) -> CsrMatrix {
        self.assemble_matrix(Symmetry::Symmetric, |q, a, b| Ok(q.phi[a] * q.phi[b]))
            .expect("mass assembly has no failure mode")
    }

    /// `(A̲_β)ᵢⱼ = ∫ β·∇φⱼ φᵢ`.
    pub fn assemble_advection(&self, beta: &dyn Fn(Point) -> [f64; 2]) -> CsrMatrix {
        let dim = self.mesh.dimension();
        self.assemble_matrix(Symmetry::Skew, |q, a, b| {
            let bv = beta(q.x);
            let g = q.grad[b];
            Ok((0..dim).map(|r| bv[r] * g[r]).sum::<f64>() * q.phi[a])
        })
        .expect("advection assembly has no failure mode")
    }

    /// `bᵢ = ∫ f φᵢ`.
    pub fn assemble_load(&self, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
        let mut b = vec![0.0; self.dof_count()];
        for c in 0..self.mesh.num_cells() {
            let cell = self.mesh.cell(c);
            for q in cell_quadrature(&self.mesh, c, &GAUSS3) {
                let fx = f(q.x);
                for (a, &v) in cell.iter().enumerate() {
                    if let Some(i) = self.dof_of_vertex[v] {
                        b[i] += q.weight * fx * q.phi[a];
                    }
                }
            }
        }
        b
    }

    /// `∫ φᵢ` for every DoF.
    pub fn basis_integrals(&self) -> Vec<f64> {
        self.assemble_load(&|_| 1.0)
    }

    /// Nodal interpolation at the free DoFs.
    pub fn interpolate(&self, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.vertex_of_dof.iter().map(|&v| g(self.mesh.vertices()[v])).collect()
    }
}

fn check_coefficients(dim: usize, a: &Tensor, c: f64, x: Point) -> Result<()> {
    let spd = if dim == 1 {
        a[0][0] > 0.0
    } else {
        (a[0][1] - a[1][0]).abs() <= 1e-14 * (a[0][0].abs() + a[1][1].abs())
            && a[0][0] > 0.0
            && a[0][0] * a[1][1] - a[0][1] * a[1][0] > 0.0
    };
    if !spd {
        return Err(Error::Assembly(format!("diffusion coefficient {a:?} at {x:?} is not SPD")));
    }
    if !(c >= 0.0) {
        return Err(Error::Assembly(format!("reaction coefficient {c} at {x:?} is negative")));
    }
    Ok(())
}

/// Zero extension `E̲` from a base space into an extended space and its
/// left inverse, the restriction `R̲ = E̲ᵀ`.
#[derive(Clone, Debug)]
pub struct Embedding {
    ext_of_base: Vec<usize>,
    ext_dofs: usize,
}

impl Embedding {
    pub fn base_dofs(&self) -> usize {
        self.ext_of_base.len()
    }

    pub fn ext_dofs(&self) -> usize {
        self.ext_dofs
    }

    pub fn ext_index(&self, base_dof: usize) -> usize {
        self.ext_of_base[base_dof]
    }

    pub fn extend(&self, v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.ext_dofs];
        for (i, &e) in self.ext_of_base.iter().enumerate() {
            w[e] = v[i];
        }
        w
    }

    pub fn restrict(&self, w: &[f64]) -> Vec<f64> {
        self.ext_of_base.iter().map(|&e| w[e]).collect()
    }

    /// `out += alpha·R̲ w`.
    pub fn restrict_add(&self, alpha: f64, w: &[f64], out: &mut [f64]) {
        for (o, &e) in out.iter_mut().zip(&self.ext_of_base) {
            *o += alpha * w[e];
        }
    }
}

/// Builds `E̲`/`R̲` between `base` and a space on an extension of its mesh.
pub fn extension_op(base: &FeSpace, ext: &FeSpace, node_map: &[usize]) -> Result<Embedding> {
    if node_map.len() != base.mesh.num_vertices() {
        return Err(Error::Config(format!(
            "node map covers {} vertices, base mesh has {}",
            node_map.len(),
            base.mesh.num_vertices()
        )));
    }
    let mut ext_of_base = Vec::with_capacity(base.dof_count());
    for &v in &base.vertex_of_dof {
        let e = *node_map.get(v).ok_or_else(|| Error::Config("node map too short".into()))?;
        if e >= ext.mesh.num_vertices() || base.mesh.vertices()[v] != ext.mesh.vertices()[e] {
            return Err(Error::Config(format!("base vertex {v} has no matching extended vertex")));
        }
        let dof = ext.dof_of_vertex[e]
            .ok_or_else(|| Error::Config(format!("base DoF at vertex {v} is fixed in the extension")))?;
        ext_of_base.push(dof);
    }
    Ok(Embedding { ext_of_base, ext_dofs: ext.dof_count() })
}

/// Interpolation from `coarse` to the uniformly refined `fine` space.
pub fn prolongation(coarse: &FeSpace, fine: &FeSpace, parents: &ParentMap) -> Result<CsrMatrix> {
    if parents.len() != fine.mesh.num_vertices() {
        return Err(Error::Config("parent map does not match the fine mesh".into()));
    }
    let mut triplets = Vec::new();
    for (i, &v) in fine.vertex_of_dof.iter().enumerate() {
        for &(p, w) in &parents[v] {
            if p >= coarse.mesh.num_vertices() {
                return Err(Error::Config("parent map references a missing coarse vertex".into()));
            }
            if let Some(j) = coarse.dof_of_vertex[p] {
                triplets.push((i, j, w));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.dof_count(), coarse.dof_count(), triplets, Symmetry::General))
}
