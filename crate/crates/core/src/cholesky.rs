//! Skyline (envelope) Cholesky factorization with reverse Cuthill–McKee
//! ordering, used for the extended-domain solves at every sinc node.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each row in `data`; row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors a symmetric positive definite matrix. Only the lower triangle
    /// of `a` (after permutation) is read.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "skyline Cholesky needs a square matrix");
        let perm = reverse_cuthill_mckee(&a.adjacency());
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for (j_old, _) in a.row(old) {
                let j = inv[j_old];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        // fill stays inside each row's envelope first[i]..=i
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for old in 0..n {
            let i = inv[old];
            for (j_old, v) in a.row(old) {
                let j = inv[j_old];
                if j <= i {
                    data[start[i] + (j - first[i])] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (before, row_i) = data.split_at_mut(start[i]);
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &before[start[j]..start[j + 1]];
                let mut sum = 0.0;
                let a_off = k0 - fi;
                let b_off = k0 - fj;
                let len = j - k0;
                for t in 0..len {
                    sum += row_i[a_off + t] * row_j[b_off + t];
                }
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - sum) / ljj;
            }
            let d = i - fi;
            let sq: f64 = row_i[..d].iter().map(|x| x * x).sum();
            let pivot = row_i[d] - sq;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: perm[i], value: pivot });
            }
            row_i[d] = pivot.sqrt();
        }
        Ok(SkylineCholesky { n, perm, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve_into(b, &mut x);
        x
    }

    pub fn solve_into(&self, b: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let d = i - fi;
            let mut s = y[i];
            for t in 0..d {
                s -= row[t] * y[fi + t];
            }
            y[i] = s / row[d];
        }
        // Lᵀ x = y, column sweep over stored rows
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let d = i - fi;
            y[i] /= row[d];
            let xi = y[i];
            for t in 0..d {
                y[fi + t] -= row[t] * xi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
    }
}

/// Reverse Cuthill–McKee ordering of an undirected graph, returned as
/// `order[new] = old`. Each connected component starts from a
/// pseudo-peripheral vertex.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(adj, seed, &degree);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            nbrs.dedup();
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (Vec<usize>, usize) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = root;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (dist, last)
}

fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let (mut dist, _) = bfs_levels(adj, root);
    let mut ecc = dist.iter().filter(|&&d| d != usize::MAX).max().copied().unwrap_or(0);
    for _ in 0..8 {
        // lowest-degree vertex on the last level
        let candidate = (0..adj.len()).filter(|&v| dist[v] == ecc).min_by_key(|&v| (degree[v], v)).unwrap_or(root);
        let (d2, _) = bfs_levels(adj, candidate);
        let e2 = d2.iter().filter(|&&d| d != usize::MAX).max().copied().unwrap_or(0);
        if e2 <= ecc {
            break;
        }
        root = candidate;
        dist = d2;
        ecc = e2;
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Symmetry;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_laplacian(n: usize, shift: f64) -> CsrMatrix {
        let id = |i: usize, j: usize| j * n + i;
        let mut t = Vec::new();
        for j in 0..n {
            for i in 0..n {
                t.push((id(i, j), id(i, j), 4.0 + shift));
                if i + 1 < n {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                    t.push((id(i + 1, j), id(i, j), -1.0));
                }
                if j + 1 < n {
                    t.push((id(i, j), id(i, j + 1), -1.0));
                    t.push((id(i, j + 1), id(i, j), -1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n * n, n * n, t, Symmetry::Symmetric)
    }

    #[test]
    fn solves_grid_laplacian() {
        let a = grid_laplacian(12, 0.01);
        let f = SkylineCholesky::factor(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..a.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.mul_vec(&x);
        let y = f.solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        // RCM keeps the envelope near n·bandwidth
        assert!(f.envelope_size() < 144 * 30);
    }

    #[test]
    fn matches_dense_on_scrambled_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 10.0));
            for _ in 0..2 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v = rng.random_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t, Symmetry::Symmetric);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = SkylineCholesky::factor(&a).unwrap().solve(&b);
        let xd = a.to_dense().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)],
            Symmetry::Symmetric,
        );
        assert!(matches!(SkylineCholesky::factor(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = grid_laplacian(7, 0.0);
        let mut p = reverse_cuthill_mckee(&a.adjacency());
        p.sort();
        assert_eq!(p, (0..49).collect::<Vec<_>>());
    }
}
