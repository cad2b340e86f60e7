//! Exact eigensystem of the population block and the analytic eigenvalues of
//! the coherence bands.
//!
//! The right eigenvectors are the `alpha`-th derivative of the generating
//! function `(z-1)^alpha / z^(n+1)` at `z = 1 + 1/n_th`. Expanding the
//! derivative with the Leibniz rule and applying Pfaff's transformation to the
//! resulting terminating hypergeometric sum gives
//!
//! ```text
//! psi_n^(alpha) = P_n^(S) r^alpha K_alpha(n),      r = n_th / (1 + n_th)
//! phi_n^(alpha) = K_alpha(n)
//! K_alpha(n)    = sum_j C(alpha, j) C(n, j) (-1/n_th)^j
//! ```
//!
//! so the left eigenvectors are Meixner polynomials of degree `alpha`, and the
//! dual pairing fixes `B_alpha = (1 + n_th)^(alpha+1) / n_th^alpha`. The sum
//! has `min(alpha, n) + 1` terms and is accumulated in double-double with
//! binary rescaling, so neither cancellation nor overflow limits the range.

use num_complex::Complex64;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::generator::scaled;
use crate::model::{boltzmann_ratio, ln_thermal_prob, thermal_probs, BathParams, PopulationState};
use crate::par;

const RESCALE_ABOVE: f64 = 1e200;
const RESCALE_EXP: i32 = 600;

fn check_n_th(n_th: f64) -> Result<()> {
    if n_th > 0.0 && n_th.is_finite() {
        Ok(())
    } else {
        Err(Error::ZeroTemperatureSpectrum)
    }
}

/// `K_alpha(n)` as `(mantissa, ln_scale)` with value `mantissa * e^ln_scale`.
pub(crate) fn meixner_scaled(alpha: usize, n: usize, n_th: f64) -> (f64, f64) {
    let m = alpha.min(n);
    let mut term = Dd::ONE;
    let mut sum = Dd::ONE;
    let mut ln_scale = 0.0;
    let down = 2f64.powi(-RESCALE_EXP);
    for j in 0..m {
        let num = (alpha - j) as f64 * (n - j) as f64;
        let den = ((j + 1) * (j + 1)) as f64;
        term = term.mul_f64(num).div_f64(den).div_f64(-n_th);
        sum = sum.add(term);
        if term.abs_hi() > RESCALE_ABOVE {
            term = term.mul_f64(down);
            sum = sum.mul_f64(down);
            ln_scale += RESCALE_EXP as f64 * std::f64::consts::LN_2;
        }
    }
    (sum.to_f64(), ln_scale)
}

/// Meixner polynomial `K_alpha(n)`; overflows to infinity only when the value
/// itself exceeds the double range.
pub fn meixner(alpha: usize, n: usize, n_th: f64) -> f64 {
    let (v, ls) = meixner_scaled(alpha, n, n_th);
    if ls == 0.0 {
        v
    } else {
        scaled(v, ls)
    }
}

pub fn population_eigenvalue(alpha: usize, gamma: f64) -> f64 {
    -2.0 * gamma * alpha as f64
}

/// `-2 gamma (alpha + |s|/2) + i s omega0` for `s != 0`.
pub fn coherence_eigenvalue(alpha: usize, s: i64, params: &BathParams) -> Result<Complex64> {
    if s == 0 {
        return Err(Error::ZeroBand);
    }
    let re = -2.0 * params.gamma * (alpha as f64 + 0.5 * s.unsigned_abs() as f64);
    Ok(Complex64::new(re, params.omega0 * s as f64))
}

/// Single entry `psi_n^(alpha)`.
pub fn right_eigenvector_entry(alpha: usize, n: usize, n_th: f64) -> f64 {
    let (v, ls) = meixner_scaled(alpha, n, n_th);
    let ln_mag = ln_thermal_prob(n_th, n) + alpha as f64 * boltzmann_ratio(n_th).ln() + ls;
    scaled(v, ln_mag)
}

pub fn right_eigenvector(alpha: usize, n_th: f64, size: usize) -> Result<Vec<f64>> {
    check_n_th(n_th)?;
    if alpha == 0 {
        return Ok(thermal_probs(n_th, size));
    }
    Ok(par::map_range(size, |n| right_eigenvector_entry(alpha, n, n_th)))
}

/// `phi^(alpha)`, normalized so that `sum_n phi_n^(alpha) psi_n^(alpha) = 1`.
pub fn left_eigenvector(alpha: usize, n_th: f64, size: usize) -> Result<Vec<f64>> {
    check_n_th(n_th)?;
    Ok((0..size).map(|n| meixner(alpha, n, n_th)).collect())
}

/// `ln B_alpha`, the factor in `phi_n = B_alpha e^{n hbar omega0 / k_B T} psi_n`.
pub fn ln_dual_normalization(alpha: usize, n_th: f64) -> f64 {
    (alpha as f64 + 1.0) * (1.0 + n_th).ln() - alpha as f64 * n_th.ln()
}

/// Upper summation index past which `n^k r^n` is below `1e-40` of its peak.
fn lattice_extent(k: usize, n_th: f64) -> usize {
    let ln_r = boltzmann_ratio(n_th).ln();
    let k = k as f64;
    let peak = (k / -ln_r).max(0.0);
    let ln_peak = if peak > 0.0 { k * peak.ln() + peak * ln_r } else { 0.0 };
    let mut n = peak.ceil() as usize + 1;
    loop {
        let nf = n as f64;
        let ln_v = if k > 0.0 { k * nf.ln() } else { 0.0 } + nf * ln_r;
        if ln_v < ln_peak - 92.0 || n > 2_000_000 {
            return n;
        }
        n += 1 + n / 16;
    }
}

/// `sum_n phi_n^(alpha) psi_n^(beta)` on the full lattice.
pub fn dual_pairing(alpha: usize, beta: usize, n_th: f64) -> Result<f64> {
    check_n_th(n_th)?;
    let extent = lattice_extent(alpha + beta, n_th);
    let mut acc = Dd::ZERO;
    for n in 0..extent {
        acc = acc.add(Dd::from_f64(meixner(alpha, n, n_th)).mul_f64(right_eigenvector_entry(beta, n, n_th)));
    }
    Ok(acc.to_f64())
}

/// `Theta_{alpha,l} = sum_n n^l psi_n^(alpha)`; vanishes for `l < alpha`.
pub fn eigen_moment(alpha: usize, l: u32, n_th: f64) -> Result<f64> {
    check_n_th(n_th)?;
    let extent = lattice_extent(alpha + l as usize, n_th);
    let mut acc = Dd::ZERO;
    for n in 0..extent {
        let w = (n as f64).powi(l as i32);
        if w == 0.0 && l > 0 {
            continue;
        }
        acc = acc.add(Dd::from_f64(right_eigenvector_entry(alpha, n, n_th)).mul_f64(if l == 0 { 1.0 } else { w }));
    }
    Ok(acc.to_f64())
}

/// `C_alpha = sum_n P_n(0) phi_n^(alpha)` for `alpha = 0..=alpha_max`.
pub fn spectral_amplitudes(p0: &PopulationState, n_th: f64, alpha_max: usize) -> Result<Vec<f64>> {
    check_n_th(n_th)?;
    let probs = p0.probs();
    Ok(par::map_range(alpha_max + 1, |alpha| {
        let mut acc = Dd::ZERO;
        for (n, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (v, ls) = meixner_scaled(alpha, n, n_th);
            acc = acc.add(Dd::from_f64(scaled(v, p.ln() + ls)));
        }
        acc.to_f64()
    }))
}

/// `max_{n,m < window} |sum_{alpha <= alpha_max} psi_n^(alpha) phi_m^(alpha) - delta_{nm}|`.
pub fn identity_resolution_residual(n_th: f64, window: usize, alpha_max: usize) -> Result<f64> {
    check_n_th(n_th)?;
    let rows = par::map_range(window, |n| {
        let mut worst: f64 = 0.0;
        for m in 0..window {
            let mut acc = Dd::ZERO;
            for alpha in 0..=alpha_max {
                let psi = right_eigenvector_entry(alpha, n, n_th);
                let phi = meixner(alpha, m, n_th);
                acc = acc.add(Dd::from_f64(psi).mul_f64(phi));
            }
            let target = if n == m { 1.0 } else { 0.0 };
            worst = worst.max((acc.to_f64() - target).abs());
        }
        worst
    });
    Ok(rows.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMode {
    pub alpha: usize,
    pub s: i64,
    pub eigenvalue: Complex64,
    pub right_vec: Vec<f64>,
    pub left_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub modes: Vec<SpectralMode>,
    pub amplitudes: Vec<f64>,
}

impl SpectralDecomposition {
    /// `sum_alpha C_alpha psi^(alpha) e^{lambda_alpha t}` truncated at the
    /// stored modes.
    pub fn populations_at(&self, t: f64) -> Vec<f64> {
        let size = self.modes.first().map_or(0, |m| m.right_vec.len());
        let mut out = vec![0.0; size];
        for (mode, &c) in self.modes.iter().zip(&self.amplitudes) {
            let w = c * (mode.eigenvalue.re * t).exp();
            if w == 0.0 {
                continue;
            }
            for (o, &psi) in out.iter_mut().zip(&mode.right_vec) {
                *o += w * psi;
            }
        }
        out
    }
}

/// Population-block modes `alpha = 0..=alpha_max` on `n < N` together with
/// the amplitudes of `p0`.
pub fn population_decomposition(
    p0: &PopulationState,
    params: &BathParams,
    alpha_max: usize,
) -> Result<SpectralDecomposition> {
    let n_th = params.n_th;
    check_n_th(n_th)?;
    let size = p0.n_max();
    let amplitudes = spectral_amplitudes(p0, n_th, alpha_max)?;
    let modes = (0..=alpha_max)
        .map(|alpha| {
            Ok(SpectralMode {
                alpha,
                s: 0,
                eigenvalue: Complex64::new(population_eigenvalue(alpha, params.gamma), 0.0),
                right_vec: right_eigenvector(alpha, n_th, size)?,
                left_vec: left_eigenvector(alpha, n_th, size)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralDecomposition { modes, amplitudes })
}
