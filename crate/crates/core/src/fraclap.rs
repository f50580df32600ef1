//! Sinc quadrature of the Dunford–Taylor integral for the integral
//! fractional Laplacian.
//!
//! With `t = e^{−y/2}` the bilinear form becomes an integral over `y ∈ ℝ` of
//! resolvent solves `(I − t²Δ)⁻¹`, each posed on the whole space. The scheme
//! samples `y` on `jk`, `−N⁻ ≤ j ≤ N⁺`, and replaces every whole-space solve
//! by a homogeneous Dirichlet problem on a dilated ball discretized by a
//! graded extension of the base mesh. In matrix form
//!
//! ```text
//! a(v, w) = (sin(πs) k / π) Σⱼ e^{s yⱼ} wᵀ E̲ᵀ M̲ⱼ zⱼ,   zⱼ = (e^{yⱼ} M̲ⱼ + A̲ⱼ)⁻¹ A̲ⱼ E̲ v
//! ```
//!
//! where `M̲ⱼ`, `A̲ⱼ` are the mass and Dirichlet stiffness of the extension
//! used by node `j`. Nodes with `t ≤ 1` all use the same dilation radius and
//! share one extended space.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::cholesky::SkylineCholesky;
use crate::error::{Error, Result};
use crate::fespace::{extension_op, Embedding, FeSpace};
use crate::mesh::{build_extended_mesh, dilation_radius, ExtendedMesh, Mesh};
use crate::sparse::{dot, CsrMatrix};

/// `(N⁻, N⁺)` for fractional order `s` and spacing `k`.
pub fn node_counts(s: f64, k: f64) -> (usize, usize) {
    let n_plus = (PI * PI / (2.0 * k * k * (1.0 - s))).ceil() as usize;
    let n_minus = (PI * PI / (4.0 * s * k * k)).ceil() as usize;
    (n_minus, n_plus)
}

/// `c_{d,s} = 2^{2s} s Γ(s + d/2) / (π^{d/2} Γ(1 − s))`.
pub fn normalization_c(d: usize, s: f64) -> f64 {
    let half_d = d as f64 / 2.0;
    4f64.powf(s) * s * libm::tgamma(s + half_d) / (PI.powf(half_d) * libm::tgamma(1.0 - s))
}

/// One extended space together with the matrices every node on it needs.
pub struct ExtendedSystem {
    pub mesh: ExtendedMesh,
    pub space: FeSpace,
    pub embedding: Embedding,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
}

impl ExtendedSystem {
    pub fn radius(&self) -> f64 {
        self.mesh.outer_radius
    }
}

pub struct SincNode {
    pub j: i64,
    pub y: f64,
    pub t: f64,
    pub radius: f64,
    /// Index into [`SincScheme::systems`].
    pub system: usize,
    factor: SkylineCholesky,
}

pub struct SincScheme {
    s: f64,
    k: f64,
    truncation: f64,
    n_minus: usize,
    n_plus: usize,
    base: FeSpace,
    base_stiffness: CsrMatrix,
    systems: Vec<ExtendedSystem>,
    nodes: Vec<SincNode>,
    /// Node indices grouped by system.
    groups: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemSummary {
    pub radius: f64,
    pub dofs: usize,
    pub nodes: usize,
    pub factor_entries: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeSummary {
    pub s: f64,
    pub k: f64,
    pub truncation: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub node_count: usize,
    pub base_dofs: usize,
    pub systems: Vec<SystemSummary>,
}

impl SincScheme {
    /// Builds the scheme with graded extension meshes from
    /// [`build_extended_mesh`].
    pub fn build(s: f64, k: f64, truncation: f64, base: FeSpace) -> Result<Self> {
        Self::build_with(s, k, truncation, base, build_extended_mesh)
    }

    /// Builds the scheme with a caller-supplied extension mesh generator
    /// `(base mesh, radius) ↦ extension`.
    pub fn build_with<B>(s: f64, k: f64, truncation: f64, base: FeSpace, mesh_builder: B) -> Result<Self>
    where
        B: Fn(&Arc<Mesh>, f64) -> Result<ExtendedMesh>,
    {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config(format!("fractional order s = {s} must lie in (0, 1)")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("sinc spacing k = {k} must be positive")));
        }
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(Error::Config(format!("truncation M = {truncation} must be positive")));
        }
        let (n_minus, n_plus) = node_counts(s, k);
        let base_stiffness = base.assemble_dirichlet_stiffness();
        let mut systems: Vec<ExtendedSystem> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut nodes = Vec::with_capacity(n_minus + n_plus + 1);
        for j in -(n_minus as i64)..=(n_plus as i64) {
            let y = j as f64 * k;
            let t = (-0.5 * y).exp();
            let radius = dilation_radius(t, truncation);
            let system = match systems.iter().position(|sys| sys.radius() == radius) {
                Some(i) => i,
                None => {
                    let mesh = mesh_builder(base.mesh(), radius)?;
                    let space = FeSpace::on_extension(&mesh);
                    let embedding = extension_op(&base, &space, &mesh.node_map)?;
                    let mass = space.assemble_mass();
                    let stiffness = space.assemble_dirichlet_stiffness();
                    systems.push(ExtendedSystem { mesh, space, embedding, mass, stiffness });
                    groups.push(Vec::new());
                    systems.len() - 1
                }
            };
            let sys = &systems[system];
            let op = sys.mass.linear_combination(y.exp(), &sys.stiffness, 1.0);
            let factor =
                SkylineCholesky::factor(&op).map_err(|e| Error::NodeFactorization { node: j, source: Box::new(e) })?;
            groups[system].push(nodes.len());
            nodes.push(SincNode { j, y, t, radius, system, factor });
        }
        Ok(SincScheme { s, k, truncation, n_minus, n_plus, base, base_stiffness, systems, nodes, groups })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    pub fn base(&self) -> &FeSpace {
        &self.base
    }

    pub fn base_dofs(&self) -> usize {
        self.base.dof_count()
    }

    /// Dirichlet stiffness `∫ ∇φⱼ·∇φᵢ` on the base space.
    pub fn base_stiffness(&self) -> &CsrMatrix {
        &self.base_stiffness
    }

    pub fn nodes(&self) -> &[SincNode] {
        &self.nodes
    }

    pub fn systems(&self) -> &[ExtendedSystem] {
        &self.systems
    }

    /// Position of node `j` in [`Self::nodes`].
    pub fn node_index(&self, j: i64) -> Option<usize> {
        let i = j + self.n_minus as i64;
        (0..self.nodes.len() as i64).contains(&i).then_some(i as usize)
    }

    /// `sin(πs) k / π`.
    pub fn prefactor(&self) -> f64 {
        (PI * self.s).sin() * self.k / PI
    }

    /// Solves `(M̲ + t²A̲) ξ = −M̲ E̲ v` on the extension of node `j`.
    pub fn node_solve(&self, j: i64, v: &[f64]) -> Result<Vec<f64>> {
        let idx = self.node_index(j).ok_or_else(|| Error::Config(format!("no sinc node {j}")))?;
        let node = &self.nodes[idx];
        let sys = &self.systems[node.system];
        let ev = sys.embedding.extend(v);
        // (e^y M + A) ξ = −e^y M E v
        let mut rhs = sys.mass.mul_vec(&ev);
        let scale = -node.y.exp();
        rhs.iter_mut().for_each(|r| *r *= scale);
        let xi = node.factor.solve(&rhs);
        check_finite(&xi, "node solve")?;
        Ok(xi)
    }

    /// Applies the fractional part of the system matrix.
    pub fn apply_fractional(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.base_dofs()];
        self.apply_fractional_into(v, &mut out)?;
        Ok(out)
    }

    /// `out = Σⱼ …`; overwrites `out`.
    pub fn apply_fractional_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        assert_eq!(v.len(), self.base_dofs());
        out.iter_mut().for_each(|o| *o = 0.0);
        let c = self.prefactor();
        for (sys, group) in self.systems.iter().zip(&self.groups) {
            let ev = sys.embedding.extend(v);
            let aev = sys.stiffness.mul_vec(&ev);
            let mut acc = vec![0.0; ev.len()];
            let mut z = vec![0.0; ev.len()];
            for &n in group {
                let node = &self.nodes[n];
                node.factor.solve_into(&aev, &mut z);
                let w = (self.s * node.y).exp();
                acc.iter_mut().zip(&z).for_each(|(a, zi)| *a += w * zi);
            }
            let macc = sys.mass.mul_vec(&acc);
            sys.embedding.restrict_add(c, &macc, out);
        }
        check_finite(out, "fractional apply")
    }

    /// `a_{s,h}^{k,M}(v, w)`.
    pub fn form(&self, v: &[f64], w: &[f64]) -> Result<f64> {
        Ok(dot(w, &self.apply_fractional(v)?))
    }

    /// `√(a(v, v) + ι ∫|∇v|²)`.
    pub fn energy_norm(&self, iota: f64, v: &[f64]) -> Result<f64> {
        let frac = self.form(v, v)?;
        let local = if iota != 0.0 { iota * dot(v, &self.base_stiffness.mul_vec(v)) } else { 0.0 };
        let sq = frac + local;
        let scale = frac.abs() + local.abs();
        if sq < -1e-12 * scale.max(1.0) {
            return Err(Error::Numerical(format!("negative squared energy norm {sq:e}")));
        }
        Ok(sq.max(0.0).sqrt())
    }

    pub fn summary(&self) -> SchemeSummary {
        SchemeSummary {
            s: self.s,
            k: self.k,
            truncation: self.truncation,
            n_minus: self.n_minus,
            n_plus: self.n_plus,
            node_count: self.nodes.len(),
            base_dofs: self.base_dofs(),
            systems: self
                .systems
                .iter()
                .zip(&self.groups)
                .map(|(sys, group)| SystemSummary {
                    radius: sys.radius(),
                    dofs: sys.space.dof_count(),
                    nodes: group.len(),
                    factor_entries: group.iter().map(|&n| self.nodes[n].factor.envelope_size()).sum(),
                })
                .collect(),
        }
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} produced a non-finite value")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_base_mesh, DomainId};
    use crate::sparse::norm2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scheme(s: f64, level: usize) -> SincScheme {
        let mesh = Arc::new(build_base_mesh(DomainId::Interval, level).unwrap());
        SincScheme::build(s, 0.4, 3.0, FeSpace::on_base(mesh)).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn node_counts_match_examples() {
        assert_eq!(node_counts(0.5, 0.2), (124, 247));
        assert_eq!(node_counts(0.3, 0.2), (206, 177));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn node_counts_are_ceilings(s in 0.05f64..0.95, k in 0.1f64..1.0) {
            let (nm, np) = node_counts(s, k);
            let a = PI * PI / (2.0 * k * k * (1.0 - s));
            let b = PI * PI / (4.0 * s * k * k);
            prop_assert!((np as f64) >= a && (np as f64) < a + 1.0);
            prop_assert!((nm as f64) >= b && (nm as f64) < b + 1.0);
        }
    }

    #[test]
    fn normalization_constant() {
        assert!((normalization_c(1, 0.5) - 1.0 / PI).abs() < 1e-14);
        // Γ(3/2)/Γ(1/2) = 1/2
        assert!((normalization_c(2, 0.5) - 1.0 / (2.0 * PI)).abs() < 1e-14);
        let c = normalization_c(2, 0.999);
        assert!(c.is_finite() && c > 0.0);
    }

    #[test]
    fn nodes_and_shared_systems() {
        let sch = scheme(0.5, 2);
        let (nm, np) = node_counts(0.5, 0.4);
        assert_eq!(sch.nodes().len(), nm + np + 1);
        assert_eq!(sch.systems().len(), nm + 1);
        let shared = sch.nodes()[sch.node_index(0).unwrap()].system;
        for node in sch.nodes() {
            assert!(node.t > 0.0);
            assert!((node.y - node.j as f64 * 0.4).abs() < 1e-14);
            if node.j >= 0 {
                assert_eq!(node.system, shared);
                assert_eq!(node.radius, 5.0);
            }
        }
        assert_eq!(sch.summary().node_count, nm + np + 1);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mesh = Arc::new(build_base_mesh(DomainId::Interval, 1).unwrap());
        for (s, k, m) in [(0.0, 0.2, 5.0), (1.0, 0.2, 5.0), (0.5, 0.0, 5.0), (0.5, 0.2, -1.0)] {
            let r = SincScheme::build(s, k, m, FeSpace::on_base(Arc::clone(&mesh)));
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn node_solve_contract() {
        let sch = scheme(0.3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_vec(sch.base_dofs(), &mut rng);
        for j in [-(sch.n_minus() as i64), -3, 0, 4, sch.n_plus() as i64] {
            let zero = sch.node_solve(j, &vec![0.0; sch.base_dofs()]).unwrap();
            assert!(zero.iter().all(|&x| x == 0.0));
            let node = &sch.nodes()[sch.node_index(j).unwrap()];
            let sys = &sch.systems()[node.system];
            let xi = sch.node_solve(j, &v).unwrap();
            let ev = sys.embedding.extend(&v);
            let mev = sys.mass.mul_vec(&ev);
            // (M + t²A) ξ + M E v, relative to |t²A||ξ| since the stiffness
            // product cancels heavily when t is large
            let mut r = sys.mass.mul_vec(&xi);
            let t2a_xi: Vec<f64> = sys.stiffness.mul_vec(&xi).iter().map(|x| node.t * node.t * x).collect();
            r.iter_mut().zip(&t2a_xi).zip(&mev).for_each(|((a, b), c)| *a += b + c);
            let abs_a_xi: Vec<f64> = (0..xi.len())
                .map(|i| sys.stiffness.row(i).map(|(c, a)| (a * xi[c]).abs()).sum::<f64>() * node.t * node.t)
                .collect();
            assert!(norm2(&r) <= 1e-10 * (norm2(&mev) + norm2(&abs_a_xi)), "node {j}");
            // E v + ξ = (e^y M + A)⁻¹ A E v
            let z: Vec<f64> = ev.iter().zip(&xi).map(|(a, b)| a + b).collect();
            let mut lhs = sys.mass.mul_vec(&z);
            lhs.iter_mut().for_each(|x| *x *= node.y.exp());
            sys.stiffness.matvec_add(1.0, &z, &mut lhs);
            let aev = sys.stiffness.mul_vec(&ev);
            let diff: Vec<f64> = lhs.iter().zip(&aev).map(|(a, b)| a - b).collect();
            assert!(norm2(&diff) <= 1e-9 * (norm2(&aev) + node.y.exp() * norm2(&mev)), "node {j}");
        }
        assert!(matches!(sch.node_solve(10_000, &v), Err(Error::Config(_))));
    }

    #[test]
    fn fractional_operator_is_symmetric_and_coercive() {
        let sch = scheme(0.7, 3);
        let n = sch.base_dofs();
        assert!(sch.apply_fractional(&vec![0.0; n]).unwrap().iter().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = random_vec(n, &mut rng);
            let w = random_vec(n, &mut rng);
            let avw = sch.form(v.as_slice(), &w).unwrap();
            let awv = sch.form(&w, &v).unwrap();
            assert!((avw - awv).abs() <= 1e-10 * norm2(&v) * norm2(&w));
            assert!(sch.form(&v, &v).unwrap() > 0.0);
        }
    }

    #[test]
    fn energy_norm_properties() {
        let sch = scheme(0.5, 3);
        let n = sch.base_dofs();
        assert_eq!(sch.energy_norm(1.0, &vec![0.0; n]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let v = random_vec(n, &mut rng);
            let e0 = sch.energy_norm(0.0, &v).unwrap();
            let e1 = sch.energy_norm(1.0, &v).unwrap();
            assert!((e0 * e0 - sch.form(&v, &v).unwrap()).abs() < 1e-12 * e0 * e0);
            assert!(e1 >= e0);
        }
    }

    #[test]
    fn form_approximates_the_sobolev_seminorm_scaling() {
        // for s = 1/2 the form of a smooth bump is bounded by its H¹ and L² norms
        let sch = scheme(0.5, 4);
        let v = sch.base().interpolate(&|p| 1.0 - p[0] * p[0]);
        let a = sch.form(&v, &v).unwrap();
        let grad = dot(&v, &sch.base_stiffness().mul_vec(&v));
        let mass = dot(&v, &sch.base().assemble_mass().mul_vec(&v));
        assert!(a > 0.0 && a <= (grad * mass).sqrt() * 1.01, "{a} vs {}", (grad * mass).sqrt());
    }
}
