//! Independent reference computations for the test suites.
//!
//! Nothing here reuses the production assembly or solvers: the exact
//! fractional form on hat functions is evaluated from its Fourier
//! representation with a self-contained Gauss–Legendre rule, and small
//! obstacle problems are solved densely by projected SOR.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Clone, Copy, Debug)]
pub struct FourierOracleConfig {
    /// Initial frequency cutoff in the scaled variable `u = hξ/2`.
    pub cutoff: f64,
    /// Gauss points per panel.
    pub points: usize,
    /// Panels per unit length beyond the near-zero region.
    pub panels_per_unit: f64,
    /// Relative change tolerated when the cutoff is doubled.
    pub tail_tol: f64,
    pub max_doublings: usize,
}

impl Default for FourierOracleConfig {
    fn default() -> Self {
        FourierOracleConfig { cutoff: 64.0, points: 16, panels_per_unit: 1.0, tail_tol: 1e-8, max_doublings: 8 }
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                x[i] = -z;
                x[n - 1 - i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                w[n - 1 - i] = w[i];
                break;
            }
        }
    }
    (x, w)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// `I(m, s) = ∫₀^∞ u^{2s} (sin u / u)⁴ cos(2mu) du`.
pub fn hat_fourier_integral(m: usize, s: f64, cfg: &FourierOracleConfig) -> Result<f64> {
    let rule = gauss_legendre(cfg.points);
    let f = |u: f64| {
        let sinc = if u < 1e-8 { 1.0 - u * u / 6.0 } else { u.sin() / u };
        u.powf(2.0 * s) * sinc.powi(4) * (2.0 * m as f64 * u).cos()
    };
    // sin⁴u cos 2mu = Σ c cos(ωu); beyond the cutoff U each term of
    // ∫_U^∞ u^p cos(ωu) du is replaced by its two-term asymptotic expansion
    let mf = m as f64;
    let terms = [
        (3.0 / 8.0, 2.0 * mf),
        (-0.25, 2.0 * (mf + 1.0)),
        (-0.25, 2.0 * (mf - 1.0)),
        (1.0 / 16.0, 2.0 * (mf + 2.0)),
        (1.0 / 16.0, 2.0 * (mf - 2.0)),
    ];
    let p = 2.0 * s - 4.0;
    let tail = |u: f64| -> f64 {
        terms
            .iter()
            .map(|&(c, w)| {
                if w == 0.0 {
                    -c * u.powf(p + 1.0) / (p + 1.0)
                } else {
                    let w = w.abs();
                    c * (-u.powf(p) * (w * u).sin() / w - p * u.powf(p - 1.0) * (w * u).cos() / (w * w))
                }
            })
            .sum()
    };
    // at most about one period of the fastest cosine per panel
    let omega = 2.0 * (mf + 2.0);
    let density = cfg.panels_per_unit.max(omega / (2.0 * PI));
    let start = (1.0 / density).min(1.0);
    // graded panels on (0, start] for the u^{2s} behaviour at the origin
    let mut head = 0.0;
    let mut b = start;
    for _ in 0..60 {
        head += integrate(&f, 0.5 * b, b, &rule);
        b *= 0.5;
    }
    let mut covered = start;
    let mut body = 0.0;
    let mut cutoff = cfg.cutoff;
    let mut previous: Option<f64> = None;
    for _ in 0..=cfg.max_doublings {
        let panels = ((cutoff - covered) * density).ceil().max(1.0) as usize;
        let width = (cutoff - covered) / panels as f64;
        for k in 0..panels {
            let a = covered + k as f64 * width;
            body += integrate(&f, a, a + width, &rule);
        }
        covered = cutoff;
        let value = head + body + tail(cutoff);
        if let Some(prev) = previous {
            if (value - prev).abs() <= cfg.tail_tol * value.abs().max(1e-12) {
                return Ok(value);
            }
        }
        previous = Some(value);
        cutoff *= 2.0;
    }
    Err(Error::Config(format!("Fourier oracle did not stabilise for m = {m}, s = {s} up to cutoff {}", cutoff / 2.0)))
}

/// `a_s(φᵢ, φⱼ)` for hat functions of a uniform 1D mesh with spacing `h`
/// whose supports are separated by `m = |i − j|` cells, with the fractional
/// Laplacian normalized to the Fourier symbol `|ξ|^{2s}`.
pub fn exact_form_uniform(m: usize, h: f64, s: f64, cfg: &FourierOracleConfig) -> Result<f64> {
    Ok(h.powf(1.0 - 2.0 * s) * 2f64.powf(2.0 * s + 1.0) / PI * hat_fourier_integral(m, s, cfg)?)
}

/// `a_s(φ_a, φ_b)` for the hats at vertices `a`, `b` of a uniform 1D mesh.
pub fn exact_form_1d(a: usize, b: usize, mesh: &Mesh, s: f64, cfg: &FourierOracleConfig) -> Result<f64> {
    if mesh.dimension() != 1 {
        return Err(Error::Config("the Fourier oracle handles 1D meshes only".into()));
    }
    let h = mesh.h_max();
    if (0..mesh.num_cells()).any(|c| (mesh.cell_measure(c) - h).abs() > 1e-12 * h) {
        return Err(Error::Config("the Fourier oracle needs a uniform mesh".into()));
    }
    let (xa, xb) = (mesh.vertices()[a][0], mesh.vertices()[b][0]);
    let m = ((xa - xb).abs() / h).round() as usize;
    exact_form_uniform(m, h, s, cfg)
}

/// Closed form of [`hat_fourier_integral`] for `s ≠ ½` from
/// `∫₀^∞ u^{p−1} cos(ωu) du = Γ(p) cos(πp/2) ω^{−p}`, continued to
/// `p = 2s − 3` after expanding `sin⁴u cos 2mu` into cosines.
pub fn hat_fourier_closed_form(m: usize, s: f64) -> f64 {
    let p = 2.0 * s - 3.0;
    let m = m as f64;
    let terms = [
        (3.0 / 8.0, 2.0 * m),
        (-0.25, 2.0 * (m + 1.0)),
        (-0.25, 2.0 * (m - 1.0)),
        (1.0 / 16.0, 2.0 * (m + 2.0)),
        (1.0 / 16.0, 2.0 * (m - 2.0)),
    ];
    let sum: f64 = terms.iter().filter(|(_, w)| *w != 0.0).map(|(c, w)| c * w.abs().powf(-p)).sum();
    libm::tgamma(p) * (PI * p / 2.0).cos() * sum
}

/// Dense solution of `S U − Λ = F`, `U ≥ Ψ`, `Λ ≥ 0`, `Λ·(U − Ψ) = 0` by
/// projected SOR followed by an exact solve on the identified contact set.
pub fn dense_obstacle_solve(s: &DMatrix<f64>, f: &[f64], psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = f.len();
    if s.nrows() != n || s.ncols() != n || psi.len() != n {
        return Err(Error::Config("dense obstacle oracle: inconsistent sizes".into()));
    }
    if n > 200 {
        return Err(Error::Config("dense obstacle oracle is limited to 200 DoFs".into()));
    }
    let omega = 1.2;
    let mut u: Vec<f64> = psi.to_vec();
    let scale = u.iter().chain(f).fold(1.0f64, |m, x| m.max(x.abs()));
    let mut converged = false;
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let mut r = f[i];
            for j in 0..n {
                if j != i {
                    r -= s[(i, j)] * u[j];
                }
            }
            let gs = r / s[(i, i)];
            let new = (u[i] + omega * (gs - u[i])).max(psi[i]);
            change = change.max((new - u[i]).abs());
            u[i] = new;
        }
        if change <= 1e-14 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { method: "projected SOR", iterations: 200_000, residual: f64::NAN });
    }
    // exact polish on the contact set, repeated until it is consistent
    let mut active: Vec<bool> = (0..n).map(|i| u[i] - psi[i] <= 1e-10 * scale).collect();
    for _ in 0..n + 1 {
        let (un, lambda) = solve_with_contact(s, f, psi, &active)?;
        let mut changed = false;
        for i in 0..n {
            if active[i] && lambda[i] < 0.0 {
                active[i] = false;
                changed = true;
            } else if !active[i] && un[i] < psi[i] {
                active[i] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok((un, lambda));
        }
    }
    Err(Error::NoConvergence { method: "dense contact polish", iterations: n + 1, residual: f64::NAN })
}

fn solve_with_contact(s: &DMatrix<f64>, f: &[f64], psi: &[f64], active: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = f.len();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let mut u: Vec<f64> = (0..n).map(|i| if active[i] { psi[i] } else { 0.0 }).collect();
    if !free.is_empty() {
        let k = free.len();
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (p, &i) in free.iter().enumerate() {
            b[p] = f[i];
            for j in 0..n {
                if active[j] {
                    b[p] -= s[(i, j)] * psi[j];
                }
            }
            for (q, &j) in free.iter().enumerate() {
                a[(p, q)] = s[(i, j)];
            }
        }
        let x = a.lu().solve(&b).ok_or_else(|| Error::Numerical("singular free block".into()))?;
        for (p, &i) in free.iter().enumerate() {
            u[i] = x[p];
        }
    }
    let su = s * DVector::from_column_slice(&u);
    let lambda = (0..n).map(|i| if active[i] { su[i] - f[i] } else { 0.0 }).collect();
    Ok((u, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_base_mesh, DomainId};

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(7);
        for k in 0..14 {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got: f64 = rule.0.iter().zip(&rule.1).map(|(x, w)| w * x.powi(k)).sum();
            assert!((got - exact).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let cfg = FourierOracleConfig::default();
        for s in [0.3, 0.7, 0.9] {
            for m in [0, 1, 2, 3, 4, 10, 22, 40] {
                let q = hat_fourier_integral(m, s, &cfg).unwrap();
                let c = hat_fourier_closed_form(m, s);
                assert!((q - c).abs() < 1e-8 * c.abs().max(1e-5), "s={s} m={m}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn near_local_limit_matches_stiffness() {
        let cfg = FourierOracleConfig::default();
        let h = 0.125;
        let diag = exact_form_uniform(0, h, 0.999, &cfg).unwrap();
        let off = exact_form_uniform(1, h, 0.999, &cfg).unwrap();
        assert!((diag - 2.0 / h).abs() < 0.02 * 2.0 / h, "{diag}");
        assert!((off + 1.0 / h).abs() < 0.02 / h, "{off}");
    }

    #[test]
    fn translation_invariance_and_scaling() {
        let cfg = FourierOracleConfig::default();
        let mesh = build_base_mesh(DomainId::Interval, 3).unwrap();
        let x = mesh.vertices();
        let interior: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| x[v][0].abs() < 1.0).collect();
        let by_x = |t: f64| *interior.iter().find(|&&v| (x[v][0] - t).abs() < 1e-12).unwrap();
        let a = exact_form_1d(by_x(-0.5), by_x(-0.25), &mesh, 0.4, &cfg).unwrap();
        let b = exact_form_1d(by_x(0.25), by_x(0.5), &mesh, 0.4, &cfg).unwrap();
        let c = exact_form_1d(by_x(0.5), by_x(0.25), &mesh, 0.4, &cfg).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs());
        assert!((b - c).abs() < 1e-10 * b.abs());
        for s in [0.3, 0.7] {
            let e1 = exact_form_uniform(1, 0.1, s, &cfg).unwrap();
            let e2 = exact_form_uniform(1, 0.2, s, &cfg).unwrap();
            assert!((e2 / e1 - 2f64.powf(1.0 - 2.0 * s)).abs() < 1e-6 * 2f64.powf(1.0 - 2.0 * s));
        }
    }

    #[test]
    fn hand_obstacle_problem() {
        let h = 0.25;
        let s = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]) / h;
        let (u, l) = dense_obstacle_solve(&s, &[0.0; 3], &[-1.0, 0.5, -1.0]).unwrap();
        // u₁ = u₃ = u₂/2 from the reduced rows
        assert!((u[1] - 0.5).abs() < 1e-14);
        assert!((u[0] - 0.25).abs() < 1e-14 && (u[2] - 0.25).abs() < 1e-14);
        assert!(l[1] > 0.0 && l[0] == 0.0 && l[2] == 0.0);
        let (u, l) = dense_obstacle_solve(&s, &[1.0; 3], &[-1e6; 3]).unwrap();
        let su = &s * DVector::from_column_slice(&u);
        assert!(su.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dense_oracle_satisfies_complementarity() {
        let n = 12;
        let s = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                3.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let f: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let psi: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 * 0.7).cos()).collect();
        let (u, l) = dense_obstacle_solve(&s, &f, &psi).unwrap();
        for i in 0..n {
            assert!((u[i] - psi[i]).min(l[i]) >= -1e-12);
            assert!(((u[i] - psi[i]) * l[i]).abs() < 1e-12);
        }
    }
}
