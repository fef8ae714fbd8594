//! The 4x4 task-covariance matrix relating the four output heads
//! (`W_s`, `W_sc`, `W_t`, `W_tc`): eigensolver, PSD square root, closed-form
//! update, ridge inverse and correlation reporting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::StackedW;

pub type Mat4 = [[f64; 4]; 4];

/// Labels of the stacked-weight columns, in order.
pub const HEAD_LABELS: [&str; 4] = ["W_s", "W_sc", "W_t", "W_tc"];

/// Symmetry tolerance accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Jacobi stops once the off-diagonal Frobenius norm is below this fraction
/// of the matrix norm.
pub const JACOBI_TOL: f64 = 1e-14;
/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as round-off and clamped to 0.
pub const PSD_CLAMP: f64 = 1e-6;
pub const DEFAULT_RIDGE: f64 = 1e-6;

pub fn identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn transpose(a: &Mat4) -> Mat4 {
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn trace(a: &Mat4) -> f64 {
    (0..4).map(|i| a[i][i]).sum()
}

pub fn max_abs_diff(a: &Mat4, b: &Mat4) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

fn asymmetry(a: &Mat4) -> f64 {
    max_abs_diff(a, &transpose(a))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as the columns of the second matrix, so that
/// `A = V diag(λ) Vᵀ`.
pub fn sym_eig(a: &Mat4) -> Result<([f64; 4], Mat4)> {
    let asym = asymmetry(a);
    if asym >= SYMMETRY_TOL || !asym.is_finite() {
        return Err(Error::NotSymmetric { max_asym: asym });
    }
    let mut s = *a;
    for i in 0..4 {
        for j in i + 1..4 {
            let avg = 0.5 * (s[i][j] + s[j][i]);
            s[i][j] = avg;
            s[j][i] = avg;
        }
    }
    let mut v = identity();
    let norm = Float::sqrt(s.iter().flatten().map(|x| x * x).sum::<f64>());
    for _sweep in 0..100 {
        let off = Float::sqrt(
            (0..4)
                .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| s[i][j] * s[i][j])
                .sum::<f64>(),
        );
        if off <= JACOBI_TOL * norm || off == 0.0 {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                let apq = s[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[q][q] - s[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + Float::sqrt(theta * theta + 1.0));
                let c = 1.0 / Float::sqrt(t * t + 1.0);
                let sn = t * c;
                for k in 0..4 {
                    let skp = s[k][p];
                    let skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for k in 0..4 {
                    let spk = s[p][k];
                    let sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - sn * vkq;
                    row[q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| s[j][j].partial_cmp(&s[i][i]).unwrap_or(core::cmp::Ordering::Equal));
    let mut vals = [0.0; 4];
    let mut vecs = [[0.0; 4]; 4];
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = s[src][src];
        for k in 0..4 {
            vecs[k][dst] = v[k][src];
        }
    }
    Ok((vals, vecs))
}

/// `V diag(f(λ)) Vᵀ`.
fn spectral_map(vals: &[f64; 4], vecs: &Mat4, f: impl Fn(f64) -> f64) -> Mat4 {
    let fv: Vec<f64> = vals.iter().map(|&x| f(x)).collect();
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| vecs[i][k] * fv[k] * vecs[j][k]).sum();
        }
    }
    out
}

/// Principal square root of a symmetric PSD matrix.
pub fn psd_sqrt(a: &Mat4) -> Result<Mat4> {
    let (vals, vecs) = sym_eig(a)?;
    if let Some(&bad) = vals.iter().find(|&&x| x < -PSD_CLAMP) {
        return Err(Error::NotPsd { eigenvalue: bad });
    }
    let mut r = spectral_map(&vals, &vecs, |x| Float::sqrt(x.max(0.0)));
    symmetrize(&mut r);
    Ok(r)
}

fn symmetrize(a: &mut Mat4) {
    for i in 0..4 {
        for j in i + 1..4 {
            let avg = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = avg;
            a[j][i] = avg;
        }
    }
}

/// Symmetric PSD matrix with unit trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Omega {
    pub matrix: Mat4,
}

impl Default for Omega {
    fn default() -> Self {
        Self::quarter_identity()
    }
}

impl Omega {
    /// `I / 4`, the initial covariance.
    pub fn quarter_identity() -> Self {
        let mut m = identity();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 0.25;
        }
        Omega { matrix: m }
    }

    /// Checks symmetry (1e-12), PSD (λ ≥ −1e-10) and unit trace (1e-10).
    pub fn validate(&self) -> Result<()> {
        let asym = asymmetry(&self.matrix);
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { max_asym: asym });
        }
        let (vals, _) = sym_eig(&self.matrix)?;
        if vals[3] < -1e-10 {
            return Err(Error::NotPsd { eigenvalue: vals[3] });
        }
        let tr = trace(&self.matrix);
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("omega", format!("trace {tr} is not 1")));
        }
        Ok(())
    }
}

/// Closed-form minimizer of `tr(W Ω⁻¹ Wᵀ)` over PSD, unit-trace `Ω`:
/// `(WᵀW)^{1/2} / tr((WᵀW)^{1/2})`. A zero `W` yields `I / 4`.
pub fn update_omega(w: &StackedW) -> Result<Omega> {
    let gram = w.gram();
    if !gram.iter().flatten().all(|x| x.is_finite()) {
        return Err(Error::non_finite("WᵀW"));
    }
    if gram.iter().flatten().all(|&x| x == 0.0) {
        return Ok(Omega::quarter_identity());
    }
    let root = psd_sqrt(&gram)?;
    let tr = trace(&root);
    if tr <= 0.0 || !tr.is_finite() {
        return Ok(Omega::quarter_identity());
    }
    let mut m = root;
    m.iter_mut().flatten().for_each(|x| *x /= tr);
    symmetrize(&mut m);
    Ok(Omega { matrix: m })
}

/// `(Ω + εI)⁻¹` through the eigendecomposition. Eigenvalues are clamped at
/// zero before the ridge is added.
pub fn omega_inverse(omega: &Omega, ridge: f64) -> Result<Mat4> {
    let (vals, vecs) = sym_eig(&omega.matrix)?;
    let mut r = spectral_map(&vals, &vecs, |x| 1.0 / (x.max(0.0) + ridge));
    symmetrize(&mut r);
    Ok(r)
}

/// `tr(W A Wᵀ) = tr(A WᵀW)` for a 4-column `W`.
pub fn trace_objective(w: &StackedW, a: &Mat4) -> f64 {
    let gram = w.gram();
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += a[i][j] * gram[j][i];
        }
    }
    s
}

/// Correlation matrix derived from `Ω`. `None` marks entries whose row or
/// column has a non-positive variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: [[Option<f64>; 4]; 4],
}

impl CorrelationReport {
    /// Element-wise signed square root `sign(ρ)·√|ρ|`.
    pub fn signed_sqrt(&self) -> [[Option<f64>; 4]; 4] {
        let mut out = [[None; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = self.rho[i][j].map(|r| r.signum() * Float::sqrt(r.abs()));
            }
        }
        out
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = HEAD_LABELS.iter().position(|&l| l == a)?;
        let j = HEAD_LABELS.iter().position(|&l| l == b)?;
        self.rho[i][j]
    }

    /// Two fixed-layout tables (ρ, then signed √|ρ|) with rows and columns
    /// ordered `W_s, W_sc, W_t, W_tc`.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for (title, m) in [("correlation", self.rho), ("signed sqrt of correlation", self.signed_sqrt())] {
            let _ = writeln!(s, "# {title}");
            let _ = write!(s, "{:<6}", "");
            for l in HEAD_LABELS {
                let _ = write!(s, "{l:>8}");
            }
            s.push('\n');
            for (i, row) in m.iter().enumerate() {
                let _ = write!(s, "{:<6}", HEAD_LABELS[i]);
                for v in row {
                    match v {
                        Some(v) => {
                            let _ = write!(s, "{v:>8.3}");
                        }
                        None => {
                            let _ = write!(s, "{:>8}", "undef");
                        }
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    /// `rho.<row>.<col>=<value>` and `sqrt_rho.<row>.<col>=<value>` lines.
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for (key, m) in [("rho", self.rho), ("sqrt_rho", self.signed_sqrt())] {
            for i in 0..4 {
                for j in 0..4 {
                    let _ = match m[i][j] {
                        Some(v) => writeln!(s, "{key}.{}.{}={v:.17e}", HEAD_LABELS[i], HEAD_LABELS[j]),
                        None => writeln!(s, "{key}.{}.{}=undefined", HEAD_LABELS[i], HEAD_LABELS[j]),
                    };
                }
            }
        }
        s
    }
}

/// `ρ_ij = Ω_ij / √(Ω_ii Ω_jj)`.
pub fn correlation_report(omega: &Omega) -> CorrelationReport {
    let m = &omega.matrix;
    let mut rho = [[None; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            if m[i][i] > 0.0 && m[j][j] > 0.0 {
                rho[i][j] = Some(m[i][j] / Float::sqrt(m[i][i] * m[j][j]));
            }
        }
    }
    CorrelationReport { rho }
}
