//! Base meshes, uniform refinement and exponentially graded extensions.
//!
//! Cells are intervals in 1D and counterclockwise quadrilaterals in 2D.
//! Vertices are stored as `[x, y]` with `y = 0` in 1D.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Weighted parent vertices of every vertex of a refined mesh, indexed by
/// vertex of the fine mesh and pointing into the coarse mesh.
pub type ParentMap = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainId {
    /// `(−1, 1)`.
    Interval,
    /// `(−1/2, 1/2)²`.
    Square,
    /// `(−1/2, 1/2)² ∖ (0, 1/2)²`.
    Lshape,
    /// Regular polygon inscribed in the unit circle.
    Polydisk,
}

impl DomainId {
    pub fn dimension(self) -> usize {
        match self {
            DomainId::Interval => 1,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainId::Interval => "interval",
            DomainId::Square => "square",
            DomainId::Lshape => "lshape",
            DomainId::Polydisk => "polydisk",
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interval" => Ok(DomainId::Interval),
            "square" => Ok(DomainId::Square),
            "lshape" | "l-shape" => Ok(DomainId::Lshape),
            "polydisk" | "disk" => Ok(DomainId::Polydisk),
            other => Err(Error::Config(format!("unknown domain id `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryMark {
    InteriorDomainBoundary,
    ExtensionBoundary,
    None,
}

/// A boundary facet: one vertex in 1D, an edge in 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub vertices: Vec<usize>,
    pub mark: BoundaryMark,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    facets: Vec<Facet>,
    level: usize,
    h_max: f64,
}

impl Mesh {
    /// Builds a mesh from raw connectivity; cells are flattened with
    /// `2^dim` vertices per cell.
    pub fn new(dim: usize, vertices: Vec<Point>, cells: Vec<usize>, facets: Vec<Facet>, level: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        let nv = 1 << dim;
        if !cells.len().is_multiple_of(nv) {
            return Err(Error::Config("cell connectivity is not a multiple of the cell size".into()));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::Config(format!("cell references missing vertex {bad}")));
        }
        let mut mesh = Mesh { dim, vertices, cells, facets, level, h_max: 0.0 };
        for c in 0..mesh.num_cells() {
            let m = mesh.cell_measure(c);
            if !(m > 0.0) {
                return Err(Error::Config(format!("cell {c} has non-positive measure {m:e}")));
            }
            if dim == 2 && !mesh.quad_is_valid(c) {
                return Err(Error::Config(format!("cell {c} has a degenerate bilinear map")));
            }
        }
        mesh.h_max = (0..mesh.num_cells()).map(|c| mesh.cell_diameter(c)).fold(0.0, f64::max);
        Ok(mesh)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / self.vertices_per_cell()
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let n = self.vertices_per_cell();
        &self.cells[c * n..(c + 1) * n]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.vertices_per_cell())
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Largest distance of a vertex from the origin.
    pub fn circumradius(&self) -> f64 {
        self.vertices.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max)
    }

    /// Vertices lying on a facet carrying `mark`.
    pub fn marked_vertices(&self, mark: BoundaryMark) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for f in self.facets.iter().filter(|f| f.mark == mark) {
            for &v in &f.vertices {
                flags[v] = true;
            }
        }
        flags
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        let v = self.cell(c);
        if self.dim == 1 {
            self.vertices[v[1]][0] - self.vertices[v[0]][0]
        } else {
            // shoelace
            let mut a = 0.0;
            for i in 0..4 {
                let p = self.vertices[v[i]];
                let q = self.vertices[v[(i + 1) % 4]];
                a += p[0] * q[1] - q[0] * p[1];
            }
            0.5 * a
        }
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let v = self.cell(c);
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let p = self.vertices[v[i]];
                let q = self.vertices[v[j]];
                d = d.max((p[0] - q[0]).hypot(p[1] - q[1]));
            }
        }
        d
    }

    fn quad_is_valid(&self, c: usize) -> bool {
        // Jacobian of the bilinear map is positive at all four corners.
        let v = self.cell(c);
        (0..4).all(|i| {
            let p = self.vertices[v[i]];
            let a = self.vertices[v[(i + 1) % 4]];
            let b = self.vertices[v[(i + 3) % 4]];
            (a[0] - p[0]) * (b[1] - p[1]) - (a[1] - p[1]) * (b[0] - p[0]) > 0.0
        })
    }

    /// Plain-text dump: `dim ncells nverts`, then one vertex per line, then
    /// one cell per line.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.num_cells(), self.num_vertices())?;
        for p in &self.vertices {
            if self.dim == 1 {
                writeln!(w, "{:.17e}", p[0])?;
            } else {
                writeln!(w, "{:.17e} {:.17e}", p[0], p[1])?;
            }
        }
        for cell in self.cells() {
            let line: Vec<String> = cell.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dump is ASCII")
    }

    /// One step of uniform refinement. Returns the fine mesh and, for every
    /// fine vertex, its weighted parents in `self`. Old vertices keep their
    /// indices. When `snap_to_circle` is set, new midpoints of boundary edges
    /// are projected onto the circle through the edge endpoints.
    pub fn refine(&self, snap_to_circle: bool) -> Result<(Mesh, ParentMap)> {
        let mut vertices = self.vertices.clone();
        let mut parents: ParentMap = (0..vertices.len()).map(|v| vec![(v, 1.0)]).collect();
        let mut cells = Vec::with_capacity(self.cells.len() * (1 << self.dim));
        let mut facets = Vec::with_capacity(self.facets.len() * 2);

        if self.dim == 1 {
            let mut mids = HashMap::new();
            for cell in self.cells() {
                let (a, b) = (cell[0], cell[1]);
                let m = vertices.len();
                vertices.push([0.5 * (self.vertices[a][0] + self.vertices[b][0]), 0.0]);
                parents.push(vec![(a, 0.5), (b, 0.5)]);
                mids.insert((a, b), m);
                cells.extend_from_slice(&[a, m, m, b]);
            }
            facets.extend(self.facets.iter().cloned());
        } else {
            let boundary_edges: HashMap<(usize, usize), BoundaryMark> =
                self.facets.iter().map(|f| (edge_key(f.vertices[0], f.vertices[1]), f.mark)).collect();
            let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>, parents: &mut ParentMap| {
                *mids.entry(edge_key(a, b)).or_insert_with(|| {
                    let (p, q) = (vertices[a], vertices[b]);
                    let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                    if snap_to_circle && boundary_edges.contains_key(&edge_key(a, b)) {
                        let r = 0.5 * (p[0].hypot(p[1]) + q[0].hypot(q[1]));
                        let n = m[0].hypot(m[1]);
                        m = [m[0] * r / n, m[1] * r / n];
                    }
                    vertices.push(m);
                    parents.push(vec![(a, 0.5), (b, 0.5)]);
                    vertices.len() - 1
                })
            };
            for cell in self.cells() {
                let c = [cell[0], cell[1], cell[2], cell[3]];
                let e: Vec<usize> =
                    (0..4).map(|i| midpoint(c[i], c[(i + 1) % 4], &mut vertices, &mut parents)).collect();
                let center = vertices.len();
                let mut p = [0.0; 2];
                for &v in &c {
                    p[0] += 0.25 * self.vertices[v][0];
                    p[1] += 0.25 * self.vertices[v][1];
                }
                vertices.push(p);
                parents.push(c.iter().map(|&v| (v, 0.25)).collect());
                // child i keeps corner i
                cells.extend_from_slice(&[c[0], e[0], center, e[3]]);
                cells.extend_from_slice(&[e[0], c[1], e[1], center]);
                cells.extend_from_slice(&[center, e[1], c[2], e[2]]);
                cells.extend_from_slice(&[e[3], center, e[2], c[3]]);
            }
            for f in &self.facets {
                let (a, b) = (f.vertices[0], f.vertices[1]);
                let m = midpoint(a, b, &mut vertices, &mut parents);
                facets.push(Facet { vertices: vec![a, m], mark: f.mark });
                facets.push(Facet { vertices: vec![m, b], mark: f.mark });
            }
        }
        let fine = Mesh::new(self.dim, vertices, cells, facets, self.level + 1)?;
        Ok((fine, parents))
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Facets that belong to exactly one cell, tagged as domain boundary.
fn detect_boundary(dim: usize, cells: &[usize]) -> Vec<Facet> {
    let nv = 1 << dim;
    let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for cell in cells.chunks(nv) {
        if dim == 1 {
            for &v in cell {
                count.entry((v, v)).or_insert((v, v, 0)).2 += 1;
            }
        } else {
            for i in 0..4 {
                let (a, b) = (cell[i], cell[(i + 1) % 4]);
                count.entry(edge_key(a, b)).or_insert((a, b, 0)).2 += 1;
            }
        }
    }
    let mut facets: Vec<Facet> = count
        .into_values()
        .filter(|&(_, _, n)| n == 1)
        .map(|(a, b, _)| Facet {
            vertices: if dim == 1 { vec![a] } else { vec![a, b] },
            mark: BoundaryMark::InteriorDomainBoundary,
        })
        .collect();
    facets.sort_by(|x, y| x.vertices.cmp(&y.vertices));
    facets
}

fn coarse_mesh(domain: DomainId) -> Result<Mesh> {
    match domain {
        DomainId::Interval => {
            let vertices = vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
            let cells = vec![0, 1, 1, 2];
            let facets = detect_boundary(1, &cells);
            Mesh::new(1, vertices, cells, facets, 0)
        }
        DomainId::Square | DomainId::Lshape => {
            // 4×4 grid of squares of side 1/4 on (−1/2, 1/2)²
            let n = 4;
            let coord = |i: usize| -0.5 + 0.25 * i as f64;
            let keep = |i: usize, j: usize| domain == DomainId::Square || !(coord(i) >= 0.0 && coord(j) >= 0.0);
            let mut index = vec![usize::MAX; (n + 1) * (n + 1)];
            let mut vertices = Vec::new();
            let mut cells = Vec::new();
            let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
                let k = j * (n + 1) + i;
                if index[k] == usize::MAX {
                    index[k] = vertices.len();
                    vertices.push([coord(i), coord(j)]);
                }
                index[k]
            };
            for j in 0..n {
                for i in 0..n {
                    if keep(i, j) {
                        let a = vid(i, j, &mut vertices);
                        let b = vid(i + 1, j, &mut vertices);
                        let c = vid(i + 1, j + 1, &mut vertices);
                        let d = vid(i, j + 1, &mut vertices);
                        cells.extend_from_slice(&[a, b, c, d]);
                    }
                }
            }
            let facets = detect_boundary(2, &cells);
            Mesh::new(2, vertices, cells, facets, 0)
        }
        DomainId::Polydisk => {
            // three kites around the origin; boundary is a regular hexagon
            let mut vertices = vec![[0.0, 0.0]];
            for a in 0..6 {
                let th = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * a as f64 / 3.0;
                vertices.push([th.cos(), th.sin()]);
            }
            // boundary vertex 1 + 2a is a triangle corner, 1 + 2a ± 1 its neighbours
            let bv = |i: usize| 1 + (i % 6);
            let mut cells = Vec::new();
            for a in 0..3 {
                let corner = 2 * a;
                cells.extend_from_slice(&[0, bv(corner + 5), bv(corner), bv(corner + 1)]);
            }
            let facets = detect_boundary(2, &cells);
            Mesh::new(2, vertices, cells, facets, 0)
        }
    }
}

/// Nested sequence of uniformly refined meshes with vertex parent maps.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub domain: DomainId,
    pub meshes: Vec<Arc<Mesh>>,
    /// `parents[l]` maps vertices of `meshes[l + 1]` to `meshes[l]`.
    pub parents: Vec<ParentMap>,
}

impl MeshHierarchy {
    pub fn build(domain: DomainId, level: usize) -> Result<Self> {
        let mut meshes = vec![Arc::new(coarse_mesh(domain)?)];
        let mut parents = Vec::with_capacity(level);
        let snap = domain == DomainId::Polydisk;
        for _ in 0..level {
            let (fine, map) = meshes.last().expect("non-empty").refine(snap)?;
            meshes.push(Arc::new(fine));
            parents.push(map);
        }
        Ok(MeshHierarchy { domain, meshes, parents })
    }

    pub fn finest(&self) -> &Arc<Mesh> {
        self.meshes.last().expect("hierarchy is never empty")
    }
}

/// Uniform mesh of `domain` after `level` refinements of the coarse layout.
pub fn build_base_mesh(domain: DomainId, level: usize) -> Result<Mesh> {
    let mut mesh = coarse_mesh(domain)?;
    for _ in 0..level {
        mesh = mesh.refine(domain == DomainId::Polydisk)?.0;
    }
    Ok(mesh)
}

/// Radius of the dilated ball used for the truncated resolvent at `t`.
pub fn dilation_radius(t: f64, truncation: f64) -> f64 {
    if t >= 1.0 {
        1.0 + t * (1.0 + truncation)
    } else {
        2.0 + truncation
    }
}

/// Base mesh together with a conforming extension out to `outer_radius`.
#[derive(Clone, Debug)]
pub struct ExtendedMesh {
    pub base: Arc<Mesh>,
    pub mesh: Arc<Mesh>,
    pub outer_radius: f64,
    /// Widths of the graded layers, innermost first.
    pub layers: Vec<f64>,
    /// Vertex of `mesh` for every vertex of `base`.
    pub node_map: Vec<usize>,
}

impl ExtendedMesh {
    /// Cells of `mesh` whose vertices are all images of base vertices, in
    /// terms of base vertex indices.
    pub fn restricted_cells(&self) -> Vec<Vec<usize>> {
        let mut inverse = vec![usize::MAX; self.mesh.num_vertices()];
        for (b, &e) in self.node_map.iter().enumerate() {
            inverse[e] = b;
        }
        let base_centers: std::collections::HashSet<(i64, i64)> = self
            .base
            .cells()
            .map(|cell| {
                let c = centroid(self.base.vertices(), cell);
                quantize(c)
            })
            .collect();
        self.mesh
            .cells()
            .filter(|cell| cell.iter().all(|&v| inverse[v] != usize::MAX))
            .filter(|cell| base_centers.contains(&quantize(centroid(self.mesh.vertices(), cell))))
            .map(|cell| cell.iter().map(|&v| inverse[v]).collect())
            .collect()
    }
}

fn centroid(vertices: &[Point], cell: &[usize]) -> Point {
    let mut c = [0.0; 2];
    for &v in cell {
        c[0] += vertices[v][0] / cell.len() as f64;
        c[1] += vertices[v][1] / cell.len() as f64;
    }
    c
}

fn quantize(p: Point) -> (i64, i64) {
    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
}

/// Default ratio between consecutive extension layer widths.
pub const GRADING_RATIO: f64 = 2.0;

/// Geometric widths `start·2^k` covering `gap`, with the last cell clipped to
/// end exactly at `gap`. A clipped cell narrower than its predecessor is
/// merged into it so that widths never decrease.
pub fn graded_widths(start: f64, gap: f64) -> Vec<f64> {
    graded_widths_with_ratio(start, gap, GRADING_RATIO)
}

/// [`graded_widths`] with widths `start·ratio^k`.
pub fn graded_widths_with_ratio(start: f64, gap: f64, ratio: f64) -> Vec<f64> {
    let mut widths: Vec<f64> = Vec::new();
    let mut covered = 0.0;
    let mut w = start;
    while covered + w < gap * (1.0 - 1e-12) {
        widths.push(w);
        covered += w;
        w *= ratio;
    }
    let rest = gap - covered;
    match widths.last_mut() {
        Some(prev) if rest < *prev => *prev += rest,
        _ => widths.push(rest),
    }
    widths
}

/// Extension of `base` by geometrically graded layers out to `radius`.
///
/// 1D meshes grow on both sides of the interval. 2D meshes whose vertices lie
/// on a tensor grid are embedded in a graded tensor grid covering the square
/// `[−radius, radius]²`; other 2D meshes (the polygonal disk) are extruded
/// radially so that the outer polygon circumscribes the disk of `radius`.
pub fn build_extended_mesh(base: &Arc<Mesh>, radius: f64) -> Result<ExtendedMesh> {
    build_graded_extension(base, radius, GRADING_RATIO)
}

/// [`build_extended_mesh`] with layer widths growing by `ratio > 1`.
pub fn build_graded_extension(base: &Arc<Mesh>, radius: f64, ratio: f64) -> Result<ExtendedMesh> {
    if !(ratio > 1.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("grading ratio {ratio} must exceed 1")));
    }
    let r0 = base.circumradius();
    if !(radius > r0) || !radius.is_finite() {
        return Err(Error::Config(format!("extension radius {radius} must exceed the base circumradius {r0}")));
    }
    match base.dimension() {
        1 => extend_1d(base, radius, ratio),
        _ => match tensor_lines(base) {
            Some((xs, ys)) => extend_tensor(base, radius, &xs, &ys, ratio),
            None => extend_radial(base, radius, ratio),
        },
    }
}

fn extend_1d(base: &Arc<Mesh>, radius: f64, ratio: f64) -> Result<ExtendedMesh> {
    let xs: Vec<f64> = base.vertices().iter().map(|p| p[0]).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h = (0..base.num_cells()).map(|c| base.cell_measure(c)).fold(f64::INFINITY, f64::min);
    let right = graded_widths_with_ratio(h, radius - hi, ratio);
    let left = graded_widths_with_ratio(h, radius + lo, ratio);

    let mut vertices = base.vertices().to_vec();
    let mut cells: Vec<usize> = base.cells().flatten().copied().collect();
    let hi_v = xs.iter().position(|&x| x == hi).expect("max exists");
    let lo_v = xs.iter().position(|&x| x == lo).expect("min exists");

    let mut grow = |start_v: usize, start_x: f64, widths: &[f64], sign: f64, end: f64| {
        let mut prev = start_v;
        let mut x = start_x;
        for (i, w) in widths.iter().enumerate() {
            x += sign * w;
            if i + 1 == widths.len() {
                x = end;
            }
            vertices.push([x, 0.0]);
            let v = vertices.len() - 1;
            if sign > 0.0 {
                cells.extend_from_slice(&[prev, v]);
            } else {
                cells.extend_from_slice(&[v, prev]);
            }
            prev = v;
        }
        prev
    };
    let outer_right = grow(hi_v, hi, &right, 1.0, radius);
    let outer_left = grow(lo_v, lo, &left, -1.0, -radius);
    let facets = vec![
        Facet { vertices: vec![outer_left], mark: BoundaryMark::ExtensionBoundary },
        Facet { vertices: vec![outer_right], mark: BoundaryMark::ExtensionBoundary },
    ];
    let mesh = Mesh::new(1, vertices, cells, facets, base.level())?;
    Ok(ExtendedMesh {
        base: Arc::clone(base),
        mesh: Arc::new(mesh),
        outer_radius: radius,
        layers: right,
        node_map: (0..base.num_vertices()).collect(),
    })
}

/// Distinct x and y coordinates if every base cell is an axis-aligned cell of
/// the grid they span.
fn tensor_lines(base: &Mesh) -> Option<(Vec<f64>, Vec<f64>)> {
    let uniq = |k: usize| {
        let mut v: Vec<f64> = base.vertices().iter().map(|p| p[k]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        v
    };
    let (xs, ys) = (uniq(0), uniq(1));
    let find = |lines: &[f64], x: f64| lines.iter().position(|&l| (l - x).abs() < 1e-12);
    for cell in base.cells() {
        let idx: Option<Vec<(usize, usize)>> = cell
            .iter()
            .map(|&v| {
                let p = base.vertices()[v];
                Some((find(&xs, p[0])?, find(&ys, p[1])?))
            })
            .collect();
        let idx = idx?;
        let (i0, j0) = idx[0];
        let expect = [(i0, j0), (i0 + 1, j0), (i0 + 1, j0 + 1), (i0, j0 + 1)];
        if idx != expect {
            return None;
        }
    }
    Some((xs, ys))
}

fn extend_tensor(base: &Arc<Mesh>, radius: f64, xs: &[f64], ys: &[f64], ratio: f64) -> Result<ExtendedMesh> {
    let spacing = |lines: &[f64]| lines.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let h = spacing(xs).min(spacing(ys));
    let grade = |lines: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let lo = lines[0];
        let hi = *lines.last().expect("non-empty");
        let left = graded_widths_with_ratio(h, radius + lo, ratio);
        let right = graded_widths_with_ratio(h, radius - hi, ratio);
        let mut out = Vec::with_capacity(lines.len() + left.len() + right.len());
        let mut acc = lo;
        for (i, w) in left.iter().enumerate() {
            acc -= w;
            out.push(if i + 1 == left.len() { -radius } else { acc });
        }
        out.reverse();
        out.extend_from_slice(lines);
        let mut acc = hi;
        for (i, w) in right.iter().enumerate() {
            acc += w;
            out.push(if i + 1 == right.len() { radius } else { acc });
        }
        (out, right)
    };
    let (gx, layers) = grade(xs);
    let (gy, _) = grade(ys);
    let nx = gx.len();
    let ny = gy.len();
    let mut vertices = Vec::with_capacity(nx * ny);
    for &y in &gy {
        for &x in &gx {
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| j * nx + i;
    let mut cells = Vec::with_capacity(4 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            cells.extend_from_slice(&[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    let mut facets = Vec::new();
    for i in 0..nx - 1 {
        facets.push(Facet { vertices: vec![vid(i, 0), vid(i + 1, 0)], mark: BoundaryMark::ExtensionBoundary });
        facets
            .push(Facet { vertices: vec![vid(i + 1, ny - 1), vid(i, ny - 1)], mark: BoundaryMark::ExtensionBoundary });
    }
    for j in 0..ny - 1 {
        facets.push(Facet { vertices: vec![vid(0, j + 1), vid(0, j)], mark: BoundaryMark::ExtensionBoundary });
        facets
            .push(Facet { vertices: vec![vid(nx - 1, j), vid(nx - 1, j + 1)], mark: BoundaryMark::ExtensionBoundary });
    }
    let offset_x = gx.iter().position(|&x| x == xs[0]).expect("base lines are embedded");
    let offset_y = gy.iter().position(|&y| y == ys[0]).expect("base lines are embedded");
    let find =
        |lines: &[f64], x: f64| lines.iter().position(|&l| (l - x).abs() < 1e-12).expect("vertex on a grid line");
    let node_map = base.vertices().iter().map(|p| vid(offset_x + find(xs, p[0]), offset_y + find(ys, p[1]))).collect();
    let mesh = Mesh::new(2, vertices, cells, facets, base.level())?;
    Ok(ExtendedMesh { base: Arc::clone(base), mesh: Arc::new(mesh), outer_radius: radius, layers, node_map })
}

fn extend_radial(base: &Arc<Mesh>, radius: f64, ratio: f64) -> Result<ExtendedMesh> {
    let loop_ = boundary_loop(base)?;
    let n = loop_.len();
    let pts = base.vertices();
    let edge_len: f64 = (0..n)
        .map(|i| {
            let (p, q) = (pts[loop_[i]], pts[loop_[(i + 1) % n]]);
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .sum::<f64>()
        / n as f64;
    let r_in = base.circumradius();
    let r_out = radius / (std::f64::consts::PI / n as f64).cos();
    let layers = graded_widths_with_ratio(edge_len, r_out - r_in, ratio);

    let mut vertices = base.vertices().to_vec();
    let mut cells: Vec<usize> = base.cells().flatten().copied().collect();
    let mut ring: Vec<usize> = loop_.clone();
    let mut r = r_in;
    for (k, w) in layers.iter().enumerate() {
        r = if k + 1 == layers.len() { r_out } else { r + w };
        let next: Vec<usize> = loop_
            .iter()
            .map(|&v| {
                let p = pts[v];
                let s = r / p[0].hypot(p[1]);
                vertices.push([p[0] * s, p[1] * s]);
                vertices.len() - 1
            })
            .collect();
        for i in 0..n {
            let j = (i + 1) % n;
            let mut quad = [ring[i], next[i], next[j], ring[j]];
            if signed_area(&vertices, &quad) < 0.0 {
                quad.reverse();
            }
            cells.extend_from_slice(&quad);
        }
        ring = next;
    }
    let facets = (0..n)
        .map(|i| Facet { vertices: vec![ring[i], ring[(i + 1) % n]], mark: BoundaryMark::ExtensionBoundary })
        .collect();
    let mesh = Mesh::new(2, vertices, cells, facets, base.level())?;
    Ok(ExtendedMesh {
        base: Arc::clone(base),
        mesh: Arc::new(mesh),
        outer_radius: radius,
        layers,
        node_map: (0..base.num_vertices()).collect(),
    })
}

fn signed_area(vertices: &[Point], quad: &[usize; 4]) -> f64 {
    let mut a = 0.0;
    for i in 0..4 {
        let p = vertices[quad[i]];
        let q = vertices[quad[(i + 1) % 4]];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn boundary_loop(base: &Mesh) -> Result<Vec<usize>> {
    let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
    for f in base.facets() {
        let (a, b) = (f.vertices[0], f.vertices[1]);
        next.entry(a).or_default().push(b);
        next.entry(b).or_default().push(a);
    }
    let start = *next.keys().min().ok_or_else(|| Error::Config("mesh has no boundary".into()))?;
    let mut out = vec![start];
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        let nb = &next[&cur];
        if nb.len() != 2 {
            return Err(Error::Config("boundary is not a simple closed curve".into()));
        }
        let nxt = if nb[0] != prev { nb[0] } else { nb[1] };
        if nxt == start {
            break;
        }
        out.push(nxt);
        prev = cur;
        cur = nxt;
        if out.len() > next.len() {
            return Err(Error::Config("boundary walk did not close".into()));
        }
    }
    Ok(out)
}
