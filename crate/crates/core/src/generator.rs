//! Truncated tridiagonal generators for the population block and for each
//! coherence band, in physical time units.

use crate::error::{Error, Result};
use crate::model::BathParams;

/// Tridiagonal rate matrix `A` acting as `dx/dt = A x`.
///
/// `upper[n]` is `A[n][n+1]` (inflow into `n` from `n+1`) and `lower[n]` is
/// `A[n+1][n]` (inflow into `n+1` from `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalGenerator {
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// Band offset; 0 for populations.
    pub s: usize,
    /// `omega0 * s`, carried as an exact phase instead of being integrated.
    pub phase_rate: f64,
    /// Rate of the coupling that the truncation cut out of the last level.
    pub boundary_outflow: f64,
}

impl TridiagonalGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            if i > 0 {
                acc += self.lower[i - 1] * x[i - 1];
            }
            out[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// `A^T x`, the action on left vectors.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i + 1 < n {
                    acc += self.lower[i] * x[i + 1];
                }
                if i > 0 {
                    acc += self.upper[i - 1] * x[i - 1];
                }
                acc
            })
            .collect()
    }

    /// Column sums; zero columns conserve the summed weight.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut acc = self.diag[j];
                if j > 0 {
                    acc += self.upper[j - 1];
                }
                if j + 1 < n {
                    acc += self.lower[j];
                }
                acc
            })
            .collect()
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i].abs();
                if i + 1 < n {
                    acc += self.upper[i].abs();
                }
                if i > 0 {
                    acc += self.lower[i - 1].abs();
                }
                acc
            })
            .fold(0.0, f64::max)
    }

    /// Gershgorin bound on the spectral radius, used for step-size guesses.
    pub fn spectral_bound(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut r = self.diag[i].abs();
                if i + 1 < n {
                    r += self.upper[i].abs();
                }
                if i > 0 {
                    r += self.lower[i - 1].abs();
                }
                r
            })
            .fold(0.0, f64::max)
    }

    /// Rows `(n, diag, upper, lower)` for debugging dumps; `upper` and
    /// `lower` are the couplings into row `n` from `n+1` and `n-1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,diag,upper,lower\n");
        let n = self.len();
        for i in 0..n {
            let up = if i + 1 < n { self.upper[i] } else { 0.0 };
            let lo = if i > 0 { self.lower[i - 1] } else { 0.0 };
            out.push_str(&format!("{i},{:.16e},{:.16e},{:.16e}\n", self.diag[i], up, lo));
        }
        out
    }
}

/// Pauli master equation on `n < size`.
///
/// The last level is closed reflectively, so the summed weight is conserved
/// exactly and the truncated geometric law is stationary; the cut upward
/// rate `W_up * size` is kept in `boundary_outflow`.
pub fn population_generator(params: &BathParams, size: usize) -> Result<TridiagonalGenerator> {
    if size < 2 {
        return Err(Error::GeneratorTooSmall(size));
    }
    let (up, down) = (params.w_up(), params.w_down());
    let mut diag: Vec<f64> = (0..size)
        .map(|n| -(up * (n + 1) as f64 + down * n as f64))
        .collect();
    diag[size - 1] = -down * (size - 1) as f64;
    let upper = (0..size - 1).map(|n| down * (n + 1) as f64).collect();
    let lower = (0..size - 1).map(|n| up * (n + 1) as f64).collect();
    Ok(TridiagonalGenerator {
        diag,
        upper,
        lower,
        s: 0,
        phase_rate: 0.0,
        boundary_outflow: up * size as f64,
    })
}

/// Band-`s` generator for `b_n = sqrt((n+s)!/n!) rho_{n,n+s} e^{-i omega0 s t}`
/// on `n < size`, plain truncation at the top.
pub fn coherence_generator(
    params: &BathParams,
    s: usize,
    size: usize,
) -> Result<TridiagonalGenerator> {
    if s == 0 {
        return Err(Error::ZeroBand);
    }
    if size < 2 {
        return Err(Error::GeneratorTooSmall(size));
    }
    let g2 = 2.0 * params.gamma;
    let nt = params.n_th;
    let sf = s as f64;
    let diag = (0..size)
        .map(|n| {
            let n = n as f64;
            -g2 * (n * (1.0 + 2.0 * nt) + nt + 0.5 * sf * (2.0 * nt + 1.0))
        })
        .collect();
    let upper = (0..size - 1).map(|n| g2 * (1.0 + nt) * (n + 1) as f64).collect();
    let lower = (0..size - 1).map(|n| g2 * nt * (n + 1 + s) as f64).collect();
    Ok(TridiagonalGenerator {
        diag,
        upper,
        lower,
        s,
        phase_rate: params.omega0 * sf,
        boundary_outflow: g2 * nt * (size + s) as f64,
    })
}

/// Symmetric tridiagonal `D A D^{-1}` with `D = diag(scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizedGenerator {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    /// `ln scale[n]`, with `scale[0] = 1`. Stored in log form because the
    /// similarity grows geometrically in `n`.
    pub log_scale: Vec<f64>,
}

impl SymmetrizedGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// The similarity as plain numbers (may overflow for long chains).
    pub fn scale(&self) -> Vec<f64> {
        self.log_scale.iter().map(|l| l.exp()).collect()
    }

    /// `D x` evaluated in log space so that huge scales times tiny entries
    /// stay finite.
    pub fn to_symmetric_basis(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.log_scale)
            .map(|(&v, &ls)| scaled(v, ls))
            .collect()
    }

    /// `D^{-1} y`.
    pub fn from_symmetric_basis(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.log_scale)
            .map(|(&v, &ls)| scaled(v, -ls))
            .collect()
    }
}

pub(crate) fn scaled(v: f64, log_factor: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * (v.abs().ln() + log_factor).exp()
    }
}

/// Diagonal similarity to a symmetric matrix. Fails on a vanishing coupling
/// product, which is the cue to fall back to direct integration.
pub fn symmetrize(gen: &TridiagonalGenerator) -> Result<SymmetrizedGenerator> {
    let n = gen.len();
    let mut offdiag = Vec::with_capacity(n.saturating_sub(1));
    let mut log_scale = Vec::with_capacity(n);
    log_scale.push(0.0);
    for k in 0..n.saturating_sub(1) {
        let (u, l) = (gen.upper[k], gen.lower[k]);
        if !(u > 0.0 && l > 0.0) {
            return Err(Error::DegenerateChain(k));
        }
        offdiag.push((u * l).sqrt());
        let prev = log_scale[k];
        log_scale.push(prev + 0.5 * (u / l).ln());
    }
    Ok(SymmetrizedGenerator {
        diag: gen.diag.clone(),
        offdiag,
        log_scale,
    })
}
