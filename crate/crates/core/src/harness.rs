//! Experiment driver: level sweeps for the three model cases, discrete
//! energy errors against a refined reference solution, observed rates and
//! the `rates.csv` / `report.json` / `plot.gp` artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fespace::{prolongation, Coefficients, FeSpace};
use crate::fraclap::{SchemeSummary, SincScheme};
use crate::linsolve::{
    KrylovConfig, LinearOperator, MultilevelHierarchy, MultilevelPreconditioner, PreconditionerKind,
    SpectralPreconditioner, SPECTRAL_MAX_DOFS,
};
use crate::mesh::{DomainId, Mesh, MeshHierarchy, Point};
use crate::obstacle::{
    interpolate_obstacle, obstacle_boundary_violations, pdas_solve, penalty_source, DiscreteObstacleProblem,
    InnerStrategy, PdasConfig, PdasSolution, SolverReport, SystemOperator,
};
use crate::rates::{predicted_rate, sigma, sigma_star, CaseId, CaseSpec, Prediction};
use crate::sparse::CsrMatrix;

/// Named obstacles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiId {
    /// `3 − 6x²`.
    Chi1d,
    /// `3 − 6|x|²`.
    ChiDisk,
    /// `16² x(x + ½) y(y − ½)`.
    ChiLshape,
    /// `16² x(x + ½) y(y + ½)`, the mirror image `y ↦ −y` of `ChiLshape`;
    /// nonpositive on the boundary of the L-shape with `(0, ½)²` removed.
    ChiLshapeMirrored,
}

impl ChiId {
    pub fn value(self, p: Point) -> f64 {
        let [x, y] = p;
        match self {
            ChiId::Chi1d => 3.0 - 6.0 * x * x,
            ChiId::ChiDisk => 3.0 - 6.0 * (x * x + y * y),
            ChiId::ChiLshape => 256.0 * x * (x + 0.5) * y * (y - 0.5),
            ChiId::ChiLshapeMirrored => 256.0 * x * (x + 0.5) * y * (y + 0.5),
        }
    }

    pub fn gradient(self, p: Point) -> [f64; 2] {
        let [x, y] = p;
        match self {
            ChiId::Chi1d => [-12.0 * x, 0.0],
            ChiId::ChiDisk => [-12.0 * x, -12.0 * y],
            ChiId::ChiLshape => [256.0 * (2.0 * x + 0.5) * y * (y - 0.5), 256.0 * x * (x + 0.5) * (2.0 * y - 0.5)],
            ChiId::ChiLshapeMirrored => {
                [256.0 * (2.0 * x + 0.5) * y * (y + 0.5), 256.0 * x * (x + 0.5) * (2.0 * y + 0.5)]
            }
        }
    }

    pub fn laplacian(self, p: Point) -> f64 {
        let [x, y] = p;
        match self {
            ChiId::Chi1d => -12.0,
            ChiId::ChiDisk => -24.0,
            ChiId::ChiLshape => 512.0 * (y * (y - 0.5) + x * (x + 0.5)),
            ChiId::ChiLshapeMirrored => 512.0 * (y * (y + 0.5) + x * (x + 0.5)),
        }
    }
}

impl FromStr for ChiId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "chi_1d" => Ok(ChiId::Chi1d),
            "chi_disk" => Ok(ChiId::ChiDisk),
            "chi_lshape" => Ok(ChiId::ChiLshape),
            "chi_lshape_mirrored" => Ok(ChiId::ChiLshapeMirrored),
            other => Err(Error::Config(format!(
                "unknown obstacle `{other}` (chi_1d, chi_disk, chi_lshape, chi_lshape_mirrored)"
            ))),
        }
    }
}

/// Named right-hand sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadId {
    /// `f ≡ 1`.
    FOne,
    /// `2` on the disk `(x − ½)² + y² < ¼`, zero elsewhere.
    FBump,
}

impl LoadId {
    pub fn value(self, p: Point) -> f64 {
        match self {
            LoadId::FOne => 1.0,
            LoadId::FBump => {
                if (p[0] - 0.5).powi(2) + p[1] * p[1] < 0.25 {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for LoadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f_one" => Ok(LoadId::FOne),
            "f_bump" => Ok(LoadId::FBump),
            other => Err(Error::Config(format!("unknown load `{other}` (f_one, f_bump)"))),
        }
    }
}

/// Preconditioner selection for the inner Krylov solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondChoice {
    /// Spectral for `ι = 0` in 1D, multilevel otherwise.
    Auto,
    None,
    Spectral,
    Multilevel,
}

impl FromStr for PrecondChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(PrecondChoice::Auto),
            "none" => Ok(PrecondChoice::None),
            "spectral" => Ok(PrecondChoice::Spectral),
            "multilevel" => Ok(PrecondChoice::Multilevel),
            other => Err(Error::Config(format!("unknown preconditioner `{other}` (auto, none, spectral, multilevel)"))),
        }
    }
}

fn parse_inner(s: &str) -> Result<InnerStrategy> {
    match s.trim() {
        "reduced" => Ok(InnerStrategy::Reduced),
        "schur" => Ok(InnerStrategy::Schur),
        other => Err(Error::Config(format!("unknown inner strategy `{other}` (reduced, schur)"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub case: CaseId,
    pub dim: usize,
    pub domain: DomainId,
    pub s: f64,
    pub beta: [f64; 2],
    /// Scale `a` of the diffusion matrix `A = a·I` (case C only).
    pub diffusion: f64,
    pub chi: ChiId,
    pub f: LoadId,
    pub k: f64,
    #[serde(rename = "M")]
    pub truncation: f64,
    pub levels: Vec<usize>,
    pub ref_level: usize,
    pub rho: f64,
    pub eps_stop: f64,
    pub inner: InnerStrategy,
    pub precond: PrecondChoice,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Elliptic regularity index `r` used by the rate predictor.
    pub regularity: f64,
    /// Pair of levels whose rate is reported as the headline value.
    pub oroc_pair: Option<(usize, usize)>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Data of the numerical experiments for `case` on `domain`.
    pub fn preset(case: CaseId, domain: DomainId, s: f64) -> Self {
        let one_d = domain == DomainId::Interval;
        let beta = match (case, domain) {
            (CaseId::A, _) | (_, DomainId::Lshape) | (_, DomainId::Square) => [0.0, 0.0],
            (_, DomainId::Interval) => [0.5, 0.0],
            (_, DomainId::Polydisk) => [-0.5, 0.0],
        };
        let chi = match domain {
            DomainId::Interval => ChiId::Chi1d,
            DomainId::Lshape => ChiId::ChiLshapeMirrored,
            DomainId::Square | DomainId::Polydisk => ChiId::ChiDisk,
        };
        let f = if case == CaseId::B && domain == DomainId::Polydisk { LoadId::FBump } else { LoadId::FOne };
        let (levels, ref_level, oroc_pair) = match domain {
            DomainId::Interval => ((1..=4).collect(), 7, None),
            DomainId::Lshape | DomainId::Square => (vec![1, 2], 4, Some((1, 2))),
            DomainId::Polydisk => (vec![1, 2, 3], 5, Some((2, 3))),
        };
        ExperimentConfig {
            case,
            dim: domain.dimension(),
            domain,
            s,
            beta,
            diffusion: if one_d { 1.0 } else { 0.3 },
            chi,
            f,
            k: if one_d { 0.2 } else { 0.25 },
            truncation: if one_d { 5.0 } else { 4.0 },
            levels,
            ref_level,
            rho: 1.0,
            eps_stop: 1e-8,
            inner: InnerStrategy::Reduced,
            precond: PrecondChoice::Auto,
            rel_tol: 1e-10,
            max_iter: 2000,
            regularity: if domain == DomainId::Lshape { 2.0 / 3.0 } else { 1.0 },
            oroc_pair,
            out: PathBuf::from("out"),
        }
    }

    /// Builds a configuration from `key=value` pairs; later pairs override
    /// earlier ones. `case`, `domain`, `dim` and `s` select the preset, the
    /// remaining keys adjust it.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (k, v) in pairs {
            let key = normalize_key(k);
            if !map.contains_key(&key) {
                order.push(key.clone());
            }
            map.insert(key, v.trim().to_string());
        }
        let case: CaseId = map.get("case").map(|v| v.parse()).transpose()?.unwrap_or(CaseId::A);
        let dim: Option<usize> = map.get("dim").map(|v| parse_num(v, "dim")).transpose()?;
        let domain = match (map.get("domain"), dim) {
            (Some(d), _) => d.parse::<DomainId>()?,
            (None, Some(1)) | (None, None) => DomainId::Interval,
            (None, Some(2)) => DomainId::Lshape,
            (None, Some(d)) => return Err(Error::Config(format!("dimension must be 1 or 2 (got {d})"))),
        };
        let s = map.get("s").map(|v| parse_num(v, "s")).transpose()?.unwrap_or(0.5);
        let mut cfg = ExperimentConfig::preset(case, domain, s);
        if let Some(d) = dim {
            cfg.dim = d;
        }
        for key in order {
            let value = &map[&key];
            match key.as_str() {
                "case" | "domain" | "dim" | "s" => {}
                _ => cfg.set(&key, value)?,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match normalize_key(key).as_str() {
            "case" => self.case = value.parse()?,
            "dim" => self.dim = parse_num(value, "dim")?,
            "domain" => self.domain = value.parse()?,
            "s" => self.s = parse_num(value, "s")?,
            "beta" => self.beta = parse_beta(value)?,
            "diffusion" => self.diffusion = parse_num(value, "diffusion")?,
            "chi" => self.chi = value.parse()?,
            "f" => self.f = value.parse()?,
            "k" => self.k = parse_num(value, "k")?,
            "M" => self.truncation = parse_num(value, "M")?,
            "levels" => self.levels = parse_levels(value)?,
            "ref-level" => self.ref_level = parse_num(value, "ref-level")?,
            "rho" => self.rho = parse_num(value, "rho")?,
            "eps-stop" => self.eps_stop = parse_num(value, "eps-stop")?,
            "inner" => self.inner = parse_inner(value)?,
            "precond" => self.precond = value.parse()?,
            "rel-tol" => self.rel_tol = parse_num(value, "rel-tol")?,
            "max-iter" => self.max_iter = parse_num(value, "max-iter")?,
            "r" | "regularity" => self.regularity = parse_num(value, "regularity")?,
            "oroc-pair" => {
                let l = parse_levels(value)?;
                if l.len() != 2 {
                    return Err(Error::Config(format!("oroc-pair needs two levels (got `{value}`)")));
                }
                self.oroc_pair = Some((l[0], l[1]));
            }
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn iota(&self) -> f64 {
        if self.case == CaseId::C {
            1.0
        } else {
            0.0
        }
    }

    pub fn has_drift(&self) -> bool {
        self.beta != [0.0, 0.0]
    }

    pub fn case_spec(&self) -> CaseSpec {
        CaseSpec { case: self.case, iota: self.iota(), s: self.s, beta_nonzero: self.has_drift(), r: self.regularity }
    }

    /// Drift `s = ½` in case B lies outside the regularity theory.
    pub fn out_of_theory(&self) -> bool {
        self.case == CaseId::B && self.s == 0.5
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != self.domain.dimension() {
            return Err(Error::Config(format!(
                "domain {} is {}-dimensional, not {}",
                self.domain,
                self.domain.dimension(),
                self.dim
            )));
        }
        self.case_spec().validate()?;
        if self.levels.is_empty() {
            return Err(Error::Config("the list of levels is empty".into()));
        }
        let max = *self.levels.iter().max().expect("nonempty");
        if self.ref_level <= max {
            return Err(Error::Config(format!(
                "reference level {} must exceed the finest level {max}",
                self.ref_level
            )));
        }
        if !(self.k > 0.0 && self.k.is_finite()) || !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::Config(format!("k = {} and M = {} must be positive", self.k, self.truncation)));
        }
        if self.case == CaseId::C && !(self.diffusion > 0.0) {
            return Err(Error::Config(format!("diffusion scale must be positive (got {})", self.diffusion)));
        }
        if self.dim == 1 && self.beta[1] != 0.0 {
            return Err(Error::Config("a 1D drift has a single component".into()));
        }
        if let Some((a, b)) = self.oroc_pair {
            if a >= b || !self.levels.contains(&a) || !self.levels.contains(&b) {
                return Err(Error::Config(format!("oroc-pair ({a}, {b}) must be two increasing configured levels")));
            }
        }
        self.pdas_config().validate()
    }

    pub fn pdas_config(&self) -> PdasConfig {
        PdasConfig {
            rho: self.rho,
            eps_stop: self.eps_stop,
            inner: self.inner,
            krylov: KrylovConfig { rel_tol: self.rel_tol, max_iter: self.max_iter, ..KrylovConfig::default() },
            ..PdasConfig::default()
        }
    }
}

fn normalize_key(k: &str) -> String {
    let k = k.trim().trim_start_matches("--").replace('_', "-");
    match k.as_str() {
        "M" | "truncation" => "M".into(),
        _ => k.to_ascii_lowercase(),
    }
}

fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
}

fn parse_beta(v: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    match parts.as_slice() {
        [x] => Ok([parse_num(x, "beta")?, 0.0]),
        [x, y] => Ok([parse_num(x, "beta")?, parse_num(y, "beta")?]),
        _ => Err(Error::Config(format!("beta must have one or two components (got `{v}`)"))),
    }
}

/// `a..b` (inclusive) or a comma separated list.
pub fn parse_levels(v: &str) -> Result<Vec<usize>> {
    let v = v.trim();
    let mut levels: Vec<usize> = if let Some((a, b)) = v.split_once("..") {
        let (a, b): (usize, usize) = (parse_num(a, "levels")?, parse_num(b.trim_start_matches('='), "levels")?);
        (a..=b).collect()
    } else {
        v.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| parse_num(p, "levels")).collect::<Result<_>>()?
    };
    levels.sort_unstable();
    levels.dedup();
    Ok(levels)
}

/// Assembles the discrete obstacle problem of `cfg` on `mesh`.
pub fn build_problem(cfg: &ExperimentConfig, mesh: Arc<Mesh>) -> Result<DiscreteObstacleProblem> {
    let space = FeSpace::on_base(mesh);
    let chi = cfg.chi;
    let load_id = cfg.f;
    let psi = interpolate_obstacle(&|p| chi.value(p), &space);
    let load = space.assemble_load(&|p| load_id.value(p));
    let scheme = Arc::new(SincScheme::build(cfg.s, cfg.k, cfg.truncation, space)?);
    let beta = cfg.beta;
    let drift = move |_: Point| beta;
    let operator = SystemOperator::new(
        scheme,
        cfg.iota(),
        &Coefficients::scaled_identity(cfg.diffusion),
        cfg.has_drift().then_some(&drift as &dyn Fn(Point) -> [f64; 2]),
    )?;
    DiscreteObstacleProblem::new(operator, psi, load)
}

/// `(F⁺, basis integrals)` for the penalized cross-check of `prob`.
pub fn penalty_data(cfg: &ExperimentConfig, prob: &DiscreteObstacleProblem) -> Result<(Vec<f64>, Vec<f64>)> {
    let space = prob.operator.scheme().base();
    let coords = space.dof_coords();
    let (iota, a, beta, chi) = (cfg.iota(), cfg.diffusion, cfg.beta, cfg.chi);
    let local: Vec<f64> = coords
        .iter()
        .map(|&p| {
            let g = chi.gradient(p);
            -iota * a * chi.laplacian(p) + beta[0] * g[0] + beta[1] * g[1]
        })
        .collect();
    let f_nodal: Vec<f64> = coords.iter().map(|&p| cfg.f.value(p)).collect();
    let weights = space.basis_integrals();
    Ok((penalty_source(prob, &local, &f_nodal, &weights)?, weights))
}

/// Solution of one level of a sweep.
pub struct LevelSolve {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub problem: DiscreteObstacleProblem,
    pub solution: PdasSolution,
    pub preconditioner: PreconditionerKind,
}

fn choose_preconditioner(cfg: &ExperimentConfig, level: usize, dofs: usize) -> PreconditionerKind {
    match cfg.precond {
        PrecondChoice::None => PreconditionerKind::None,
        PrecondChoice::Spectral => PreconditionerKind::SpectralFraclap,
        PrecondChoice::Multilevel if level > 0 => PreconditionerKind::Multilevel,
        PrecondChoice::Multilevel => PreconditionerKind::None,
        PrecondChoice::Auto => {
            if cfg.iota() == 0.0 && cfg.dim == 1 && dofs <= SPECTRAL_MAX_DOFS {
                PreconditionerKind::SpectralFraclap
            } else if level > 0 {
                PreconditionerKind::Multilevel
            } else {
                PreconditionerKind::None
            }
        }
    }
}

/// Solves the obstacle problem of `cfg` on level `level` of `hierarchy`.
pub fn solve_level(cfg: &ExperimentConfig, hierarchy: &MeshHierarchy, level: usize) -> Result<LevelSolve> {
    let mesh = hierarchy
        .meshes
        .get(level)
        .ok_or_else(|| Error::Config(format!("level {level} is not in the mesh hierarchy")))?
        .clone();
    let h = mesh.h_max();
    let problem = build_problem(cfg, mesh)?;
    let dofs = problem.dim();
    let kind = choose_preconditioner(cfg, level, dofs);
    let mut pcfg = cfg.pdas_config();
    pcfg.krylov.preconditioner = kind;
    let solution = match kind {
        PreconditionerKind::None => pdas_solve(&problem, None, &pcfg, None)?,
        PreconditionerKind::SpectralFraclap => {
            let scheme = problem.operator.scheme();
            let pc = SpectralPreconditioner::new(scheme.base_stiffness(), &scheme.base().assemble_mass(), cfg.s)?;
            pdas_solve(&problem, None, &pcfg, Some(&pc))?
        }
        PreconditionerKind::Multilevel => {
            let spaces: Vec<FeSpace> = hierarchy.meshes[..=level].iter().map(|m| FeSpace::on_base(m.clone())).collect();
            let abar = cfg.iota() * cfg.diffusion;
            let mh = MultilevelHierarchy::new(&spaces, &hierarchy.parents[..level], abar)?;
            let pc = MultilevelPreconditioner::new(&mh, cfg.s, true);
            pdas_solve(&problem, None, &pcfg, Some(&pc as &dyn LinearOperator))?
        }
    };
    Ok(LevelSolve { level, h, dofs, problem, solution, preconditioner: kind })
}

/// Composite prolongation from level `from` to level `to` of `hierarchy`.
/// Fails on non-nested hierarchies unless `allow_non_nested`, in which case
/// the parent-map interpolation is used as the transfer.
pub fn injection(hierarchy: &MeshHierarchy, from: usize, to: usize, allow_non_nested: bool) -> Result<CsrMatrix> {
    if !is_nested(hierarchy) && !allow_non_nested {
        return Err(Error::Config(format!("meshes of the {} hierarchy are not nested", hierarchy.domain)));
    }
    if from > to || to >= hierarchy.meshes.len() {
        return Err(Error::Config(format!("cannot inject level {from} into level {to}")));
    }
    let spaces: Vec<FeSpace> = hierarchy.meshes[from..=to].iter().map(|m| FeSpace::on_base(m.clone())).collect();
    let mut p = CsrMatrix::identity(spaces[0].dof_count());
    for j in 1..spaces.len() {
        let step = prolongation(&spaces[j - 1], &spaces[j], &hierarchy.parents[from + j - 1])?;
        p = step.matmul(&p);
    }
    Ok(p)
}

/// Boundary vertices of the polygonal disk move under refinement.
pub fn is_nested(hierarchy: &MeshHierarchy) -> bool {
    hierarchy.domain != DomainId::Polydisk
}

/// `‖P u_h − u_ref‖_{h,ι}` on the reference space, `P` the injection.
pub fn energy_error(
    u_h: &[f64],
    u_ref: &[f64],
    scheme_ref: &SincScheme,
    iota: f64,
    injection: &CsrMatrix,
) -> Result<f64> {
    if injection.ncols() != u_h.len() || injection.nrows() != u_ref.len() || u_ref.len() != scheme_ref.base_dofs() {
        return Err(Error::Config(format!(
            "injection {}×{} does not connect {} coarse to {} reference DoFs",
            injection.nrows(),
            injection.ncols(),
            u_h.len(),
            u_ref.len()
        )));
    }
    let mut diff = injection.mul_vec(u_h);
    diff.iter_mut().zip(u_ref).for_each(|(d, r)| *d -= r);
    scheme_ref.energy_norm(iota, &diff)
}

#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    /// NaN when the level failed.
    pub energy_error: f64,
    /// `log(e_j / e_{j+1}) / log 2` towards the next row; NaN on the last.
    pub oroc: f64,
    pub predicted_rate: Prediction,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

fn oroc_value(e1: f64, h1: f64, e2: f64, h2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}

impl RateTable {
    /// Fills the `oroc` column from adjacent rows.
    pub fn new(mut rows: Vec<RateRow>) -> Self {
        for i in 0..rows.len() {
            rows[i].oroc = match rows.get(i + 1) {
                Some(next) => oroc_value(rows[i].energy_error, rows[i].h, next.energy_error, next.h),
                None => f64::NAN,
            };
        }
        RateTable { rows }
    }

    /// Rate between two levels of the table.
    pub fn oroc(&self, a: usize, b: usize) -> Option<f64> {
        let ra = self.rows.iter().find(|r| r.level == a)?;
        let rb = self.rows.iter().find(|r| r.level == b)?;
        Some(oroc_value(ra.energy_error, ra.h, rb.energy_error, rb.h))
    }

    /// Mean of the finite adjacent-pair rates.
    pub fn mean_oroc(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().map(|r| r.oroc).filter(|x| x.is_finite()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,dofs,energy_error,oroc,predicted_rate\n");
        for r in &self.rows {
            let pred = match r.predicted_rate {
                Prediction::Value(v) => v.value,
                Prediction::UnknownDelta => f64::NAN,
            };
            writeln!(out, "{},{},{},{},{},{}", r.level, sci(r.h), r.dofs, sci(r.energy_error), sci(r.oroc), sci(pred))
                .expect("writing to a String");
        }
        out
    }
}

fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.17e}")
    } else {
        "nan".into()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub preconditioner: PreconditionerKind,
    pub scheme: Option<SchemeSummary>,
    pub solver: Option<SolverReport>,
    pub energy_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrocEntry {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub case_spec: CaseSpec,
    pub sigma: String,
    pub sigma_star: String,
    pub predicted_rate: String,
    pub out_of_theory: bool,
    pub nested: bool,
    pub warnings: Vec<String>,
    pub reference: LevelReport,
    pub levels: Vec<LevelReport>,
    pub oroc: Vec<OrocEntry>,
    pub mean_oroc: Option<f64>,
    pub designated_oroc: Option<OrocEntry>,
}

impl RunReport {
    pub fn failed_levels(&self) -> Vec<usize> {
        self.levels.iter().filter(|l| l.error.is_some()).map(|l| l.level).collect()
    }
}

pub struct RunOutput {
    pub table: RateTable,
    pub report: RunReport,
    /// Reference solution on level `ref_level`.
    pub reference: Vec<f64>,
}

fn level_report(ls: &LevelSolve) -> LevelReport {
    LevelReport {
        level: ls.level,
        h: ls.h,
        dofs: ls.dofs,
        preconditioner: ls.preconditioner,
        scheme: Some(ls.problem.operator.scheme().summary()),
        solver: Some(ls.solution.report.clone()),
        energy_error: None,
        error: None,
    }
}

/// Runs the level sweep of `cfg`. A failing level is recorded in the report
/// and the sweep continues; a failing reference solve aborts.
pub fn run_case(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = cfg.case_spec();
    let prediction = predicted_rate(&spec)?;
    let mut warnings = Vec::new();
    if cfg.out_of_theory() {
        warnings
            .push("case B at s = 1/2 lies outside the regularity theory; the predicted rate is not asserted".into());
    }
    let hierarchy = MeshHierarchy::build(cfg.domain, cfg.ref_level)?;
    let nested = is_nested(&hierarchy);
    if !nested {
        warnings.push("polygonal disk meshes are not nested; errors use parent-map interpolation".into());
    }
    let chi = cfg.chi;
    let violations = obstacle_boundary_violations(hierarchy.finest(), &|p| chi.value(p));
    if !violations.is_empty() {
        warnings
            .push(format!("obstacle is nonnegative at {} boundary vertices of the reference mesh", violations.len()));
    }

    let reference = solve_level(cfg, &hierarchy, cfg.ref_level)?;
    let ref_scheme = reference.problem.operator.scheme().clone();
    let iota = cfg.iota();

    let mut rows = Vec::new();
    let mut level_reports = Vec::new();
    for &level in &cfg.levels {
        let mut h = hierarchy.meshes[level].h_max();
        let attempt = solve_level(cfg, &hierarchy, level).and_then(|ls| {
            let p = injection(&hierarchy, level, cfg.ref_level, true)?;
            let e = energy_error(&ls.solution.u, &reference.solution.u, &ref_scheme, iota, &p)?;
            Ok((ls, e))
        });
        match attempt {
            Ok((ls, e)) => {
                h = ls.h;
                let mut rep = level_report(&ls);
                rep.energy_error = Some(e);
                rows.push(RateRow {
                    level,
                    h,
                    dofs: ls.dofs,
                    energy_error: e,
                    oroc: f64::NAN,
                    predicted_rate: prediction,
                });
                level_reports.push(rep);
            }
            Err(err) => {
                let dofs = FeSpace::on_base(hierarchy.meshes[level].clone()).dof_count();
                rows.push(RateRow {
                    level,
                    h,
                    dofs,
                    energy_error: f64::NAN,
                    oroc: f64::NAN,
                    predicted_rate: prediction,
                });
                level_reports.push(LevelReport {
                    level,
                    h,
                    dofs,
                    preconditioner: choose_preconditioner(cfg, level, dofs),
                    scheme: None,
                    solver: None,
                    energy_error: None,
                    error: Some(err.to_string()),
                });
            }
        }
    }
    let table = RateTable::new(rows);
    let oroc: Vec<OrocEntry> =
        table.rows.windows(2).map(|w| OrocEntry { from: w[0].level, to: w[1].level, value: w[0].oroc }).collect();
    let designated_oroc =
        cfg.oroc_pair.and_then(|(a, b)| table.oroc(a, b).map(|value| OrocEntry { from: a, to: b, value }));
    let report = RunReport {
        config: cfg.clone(),
        case_spec: spec,
        sigma: sigma(&spec)?.to_string(),
        sigma_star: sigma_star(&spec)?.to_string(),
        predicted_rate: prediction.to_string(),
        out_of_theory: cfg.out_of_theory(),
        nested,
        warnings,
        reference: level_report(&reference),
        levels: level_reports,
        mean_oroc: table.mean_oroc(),
        oroc,
        designated_oroc,
    };
    Ok(RunOutput { table, report, reference: reference.solution.u })
}

/// Gnuplot script plotting `rates.csv` against the predicted slope.
pub fn plot_script(table: &RateTable) -> String {
    let mut out = String::new();
    out.push_str("set datafile separator ','\n");
    out.push_str("set logscale xy\nset key top left\n");
    out.push_str("set xlabel 'h'\nset ylabel 'energy error'\n");
    out.push_str("set terminal svg\nset output 'rates.svg'\n");
    let first = table.rows.iter().find(|r| r.energy_error.is_finite());
    match (first, first.map(|r| r.predicted_rate)) {
        (Some(r), Some(Prediction::Value(p))) => {
            let c = r.energy_error / r.h.powf(p.value);
            writeln!(out, "p = {}\nc = {}", sci(p.value), sci(c)).expect("writing to a String");
            out.push_str(
                "plot 'rates.csv' every ::1 using 2:4 with linespoints title 'energy error', \\\n     c*x**p with lines dashtype 2 title sprintf('h^{%.2f}', p)\n",
            );
        }
        _ => out.push_str("plot 'rates.csv' every ::1 using 2:4 with linespoints title 'energy error'\n"),
    }
    out
}

/// Writes `rates.csv`, `report.json` and `plot.gp` into `dir`.
pub fn write_artifacts(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rates.csv"), output.table.to_csv())?;
    let json = serde_json::to_string_pretty(&output.report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    std::fs::write(dir.join("plot.gp"), plot_script(&output.table))?;
    Ok(())
}
