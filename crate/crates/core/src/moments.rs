//! Population and coherence moments, their exact dynamics, and the
//! moment-matching acceleration order.
//!
//! With `tau = 2 gamma t`, the weighted band moments
//! `Q_l^(s) = sum_n n^l sqrt((n+s)!/n!) rho_{n,n+s}` (populations for `s = 0`)
//! obey a lower-triangular hierarchy
//!
//! ```text
//! dQ_l/dtau + (l + s/2) Q_l = sum_{k<l} c_lk Q_k
//! c_lk = n_th [C(l+1,k) + s C(l,k)] + (1+n_th) (-1)^(l-k-1) C(l,k-1)
//! ```
//!
//! (the last term only for `k >= 1`). Its solution is a finite exponential
//! sum `Q_l = sum_{j<=l} a_lj exp(-(j + s/2) tau)` whose coefficients are
//! built layer by layer in exact rational arithmetic.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use serde::Serialize;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::evolve::TimeGrid;
use crate::model::{DensityState, PopulationState, TruncationPolicy};

/// Relative tolerance for deciding that a moment condition holds.
pub const MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    /// Band offset; 0 for populations.
    pub s: usize,
    pub values: Vec<Complex64>,
}

impl MomentVector {
    pub fn real(s: usize, values: &[f64]) -> Self {
        Self {
            s,
            values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn l_max(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

fn moment_sum<'a>(entries: impl Iterator<Item = (usize, f64)> + 'a, l: usize) -> f64 {
    let mut acc = Dd::ZERO;
    for (n, w) in entries {
        if w != 0.0 {
            acc = acc.add(Dd::from_f64(w).mul_f64((n as f64).powi(l as i32)));
        }
    }
    acc.to_f64()
}

/// `Q_l = sum_n n^l P_n` for `l = 0..=l_max`.
pub fn population_moments(p: &PopulationState, l_max: usize) -> MomentVector {
    let values: Vec<f64> = (0..=l_max)
        .map(|l| moment_sum(p.probs().iter().copied().enumerate(), l))
        .collect();
    MomentVector::real(0, &values)
}

fn band_weights(s: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (0.5 * (1..=s).map(|j| ((n + j) as f64).ln()).sum::<f64>()).exp())
        .collect()
}

/// `Q_l^(s)` of the stored band (zero when absent).
pub fn coherence_moments(rho: &DensityState, s: usize, l_max: usize) -> MomentVector {
    let Some(band) = rho.bands.get(&s) else {
        return MomentVector {
            s,
            values: vec![Complex64::new(0.0, 0.0); l_max + 1],
        };
    };
    let w = band_weights(s, band.amps.len());
    let values = (0..=l_max)
        .map(|l| {
            let re = moment_sum(band.amps.iter().zip(&w).map(|(a, w)| a.re * w).enumerate(), l);
            let im = moment_sum(band.amps.iter().zip(&w).map(|(a, w)| a.im * w).enumerate(), l);
            Complex64::new(re, im)
        })
        .collect();
    MomentVector { s, values }
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

fn int(x: i64) -> BigRational {
    BigRational::from_i64(x).expect("integer")
}

fn binom(n: usize, k: usize) -> i64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
}

fn coupling(l: usize, k: usize, s: usize, n_th: &BigRational) -> BigRational {
    let mut c = n_th * int(binom(l + 1, k) + s as i64 * binom(l, k));
    if k >= 1 {
        let sign = if (l - k - 1) % 2 == 0 { 1 } else { -1 };
        c += (n_th + BigRational::one()) * int(sign * binom(l, k - 1));
    }
    c
}

/// Stationary population moments from the hierarchy with `Q_0 = 1`.
pub fn stationary_moments_exact(n_th: f64, l_max: usize) -> Vec<BigRational> {
    let nt = rational(n_th);
    let mut q = vec![BigRational::one()];
    for l in 1..=l_max {
        let mut acc = BigRational::zero();
        for (k, qk) in q.iter().enumerate() {
            acc += coupling(l, k, 0, &nt) * qk;
        }
        q.push(acc / int(l as i64));
    }
    q
}

pub fn stationary_moments(n_th: f64, l_max: usize) -> MomentVector {
    let values: Vec<f64> = stationary_moments_exact(n_th, l_max)
        .iter()
        .map(|q| q.to_f64().unwrap_or(f64::NAN))
        .collect();
    MomentVector::real(0, &values)
}

/// `a[l][j]` with `Q_l(tau) = sum_j a[l][j] exp(-(j + s/2) tau)`.
fn exp_sum_coeffs(q0: &[BigRational], s: usize, n_th: &BigRational) -> Vec<Vec<BigRational>> {
    let mut a: Vec<Vec<BigRational>> = Vec::with_capacity(q0.len());
    for l in 0..q0.len() {
        let c: Vec<BigRational> = (0..l).map(|k| coupling(l, k, s, n_th)).collect();
        let mut row = Vec::with_capacity(l + 1);
        let mut particular = BigRational::zero();
        for j in 0..l {
            let mut b = BigRational::zero();
            for k in j..l {
                b += &c[k] * &a[k][j];
            }
            let coeff = b / int((l - j) as i64);
            particular += &coeff;
            row.push(coeff);
        }
        row.push(&q0[l] - particular);
        a.push(row);
    }
    a
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `b[l][k]` with `sum_j a[l][j] x^j = sum_k b[l][k] (1 - x)^k`.
fn shifted_coeffs(a: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    a.iter()
        .map(|row| {
            (0..row.len())
                .map(|k| {
                    let mut b = BigRational::zero();
                    for (j, aj) in row.iter().enumerate().skip(k) {
                        b += aj * int(binom(j, k));
                    }
                    if k % 2 == 1 {
                        -b
                    } else {
                        b
                    }
                })
                .collect()
        })
        .collect()
}

/// One real moment trajectory stored in both the exponential and the shifted
/// polynomial form; the first cancels badly at small `tau`, the second at
/// large `tau`.
struct ExpSum {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl ExpSum {
    fn new(q0: &[BigRational], s: usize, n_th: &BigRational) -> Self {
        let exact = exp_sum_coeffs(q0, s, n_th);
        let shifted = shifted_coeffs(&exact);
        let rows = |m: &[Vec<BigRational>]| m.iter().map(|r| r.iter().map(to_f64).collect()).collect();
        ExpSum {
            a: rows(&exact),
            b: rows(&shifted),
        }
    }

    fn eval(&self, s: usize, tau: f64) -> Vec<f64> {
        let x = (-tau).exp();
        let u = -(-tau).exp_m1();
        let damp = (-0.5 * s as f64 * tau).exp();
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| {
                let (mut acc_a, mut abs_a, mut pow) = (Dd::ZERO, 0.0, 1.0);
                for &c in a {
                    acc_a = acc_a.add(Dd::from_f64(c).mul_f64(pow));
                    abs_a += (c * pow).abs();
                    pow *= x;
                }
                let (mut acc_b, mut abs_b, mut pow) = (Dd::ZERO, 0.0, 1.0);
                for &c in b {
                    acc_b = acc_b.add(Dd::from_f64(c).mul_f64(pow));
                    abs_b += (c * pow).abs();
                    pow *= u;
                }
                damp * if abs_b < abs_a { acc_b.to_f64() } else { acc_a.to_f64() }
            })
            .collect()
    }
}

fn evolve_hierarchy(q0: &MomentVector, s: usize, n_th: f64, gamma: f64, grid: &TimeGrid) -> Vec<MomentVector> {
    let nt = rational(n_th);
    let re: Vec<BigRational> = q0.values.iter().map(|v| rational(v.re)).collect();
    let im: Vec<BigRational> = q0.values.iter().map(|v| rational(v.im)).collect();
    let (sum_re, sum_im) = (ExpSum::new(&re, s, &nt), ExpSum::new(&im, s, &nt));
    grid.gamma_times(gamma)
        .iter()
        .map(|&gt| {
            if gt == 0.0 {
                return q0.clone();
            }
            let tau = 2.0 * gt;
            let values = sum_re
                .eval(s, tau)
                .into_iter()
                .zip(sum_im.eval(s, tau))
                .map(|(r, i)| Complex64::new(r, i))
                .collect();
            MomentVector { s, values }
        })
        .collect()
}

/// Exact population-moment trajectory on `grid`.
pub fn evolve_population_moments(q0: &MomentVector, n_th: f64, gamma: f64, grid: &TimeGrid) -> Vec<MomentVector> {
    evolve_hierarchy(q0, 0, n_th, gamma, grid)
}

/// Exact band-moment trajectory in the frame rotating with `e^{i s omega0 t}`;
/// multiply by that phase to compare with lab-frame band moments.
pub fn evolve_coherence_moments(
    q0: &MomentVector,
    s: usize,
    n_th: f64,
    gamma: f64,
    grid: &TimeGrid,
) -> Vec<MomentVector> {
    evolve_hierarchy(q0, s, n_th, gamma, grid)
}

/// One moment condition: `s = 0` means `Q_l = Q_l^(S)`, otherwise `Q_l^(s) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Condition {
    pub s: usize,
    pub l: usize,
}

impl Condition {
    /// Rate index `2l + s` the condition guards.
    pub fn index(&self) -> usize {
        2 * self.l + self.s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccelerationOrder {
    /// Relaxation is no slower than `gamma * h`.
    pub h: usize,
    /// Leading population moments equal to the thermal ones.
    pub matched_moments: usize,
    /// First violated condition, if any lies below `h_max`.
    pub limiting: Option<Condition>,
}

impl AccelerationOrder {
    pub fn predicted_rate(&self, gamma: f64) -> f64 {
        gamma * self.h as f64
    }

    /// No speed-up over the generic population rate `2 gamma`.
    pub fn is_accelerated(&self) -> bool {
        self.h > 2
    }
}

fn has_divergent_moments(p: &PopulationState) -> bool {
    if p.heavy_tail() {
        return true;
    }
    let probs = p.probs();
    let start = probs.len() - probs.len() / 10;
    let tail: f64 = probs[start..].iter().sum();
    probs.len() >= 20 && tail > p.tail_tol().sqrt()
}

fn matches_thermal(q: f64, q_s: f64) -> bool {
    (q - q_s).abs() <= MATCH_TOL * q.abs().max(q_s.abs())
}

/// Largest `h <= h_max` such that every condition of index below `h` holds.
pub fn acceleration_order(rho0: &DensityState, n_th: f64, h_max: usize) -> Result<AccelerationOrder> {
    if h_max < 1 {
        return Err(Error::InvalidParameter {
            name: "h_max",
            reason: "must be at least 1".into(),
        });
    }
    if has_divergent_moments(&rho0.diag) {
        return Err(Error::DivergentMoments);
    }
    let l_pop = h_max / 2 + 1;
    let q = population_moments(&rho0.diag, l_pop).re();
    let qs = stationary_moments(n_th, l_pop).re();
    let matched_moments = (1..=l_pop).take_while(|&l| matches_thermal(q[l], qs[l])).count();

    let mut failing: Vec<Condition> = Vec::new();
    if matched_moments < l_pop {
        failing.push(Condition {
            s: 0,
            l: matched_moments + 1,
        });
    }
    for (&s, band) in &rho0.bands {
        if s >= h_max || band.is_zero() {
            continue;
        }
        let w = band_weights(s, band.amps.len());
        for l in 0..=(h_max - s) / 2 {
            let mut sum = Complex64::new(0.0, 0.0);
            let mut scale = 0.0;
            for (n, (a, w)) in band.amps.iter().zip(&w).enumerate() {
                let term = a * (w * (n as f64).powi(l as i32));
                sum += term;
                scale += term.norm();
            }
            if sum.norm() > MATCH_TOL * scale {
                failing.push(Condition { s, l });
                break;
            }
        }
    }
    let limiting = failing
        .into_iter()
        .filter(|c| c.index() < h_max)
        .min_by_key(|c| (c.index(), c.s));
    Ok(AccelerationOrder {
        h: limiting.map_or(h_max, |c| c.index()),
        matched_moments,
        limiting,
    })
}

/// Lawson–Hanson nonnegative least squares.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut x = DVector::zeros(m);
    let mut passive = vec![false; m];
    let tol = 10.0 * f64::EPSILON * a.norm() * m as f64;
    for _ in 0..3 * m + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..m)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let z = solve_passive(a, b, &passive);
            if (0..m).all(|i| !passive[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = 1.0f64;
            for i in 0..m {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x = &x + (z - &x) * alpha;
            for i in 0..m {
                if passive[i] && x[i].abs() <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..a.ncols()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let svd = sub.clone().svd(true, true);
    let mut z = svd.solve(b, 1e-14).unwrap_or_else(|_| DVector::zeros(cols.len()));
    // one step of iterative refinement
    let r = b - &sub * &z;
    if let Ok(dz) = svd.solve(&r, 1e-14) {
        z += dz;
    }
    let mut full = DVector::zeros(a.ncols());
    for (k, &j) in cols.iter().enumerate() {
        full[j] = z[k];
    }
    full
}

pub fn construct_matched_state(n_th: f64, r: usize, support: &[usize]) -> Result<PopulationState> {
    construct_matched_state_with(n_th, r, support, &TruncationPolicy::default())
}

/// Nonnegative weights on `support` whose first `r` moments are thermal.
pub fn construct_matched_state_with(
    n_th: f64,
    r: usize,
    support: &[usize],
    policy: &TruncationPolicy,
) -> Result<PopulationState> {
    let mut pts = support.to_vec();
    pts.sort_unstable();
    pts.dedup();
    let two_point = pts.len() == 2 && pts[0] == 0;
    if r == 0 || (pts.len() < r + 1 && !two_point) {
        return Err(Error::InvalidParameter {
            name: "support",
            reason: format!("need at least r + 1 = {} distinct points, got {}", r + 1, pts.len()),
        });
    }
    let qs = stationary_moments(n_th, r).re();
    let len = policy.support_size(*pts.last().unwrap_or(&0))?;

    let weights: Vec<f64> = if two_point {
        // two-point closed form: the mean fixes the weight on n1
        let p = n_th / pts[1] as f64;
        vec![1.0 - p, p]
    } else {
        let rows = r + 1;
        let mut a = DMatrix::zeros(rows, pts.len());
        let mut b = DVector::zeros(rows);
        for l in 0..rows {
            let row: Vec<f64> = pts.iter().map(|&n| (n as f64).powi(l as i32)).collect();
            let scale = row.iter().fold(qs[l].abs(), |m, v| m.max(v.abs())).max(1.0);
            for (k, v) in row.iter().enumerate() {
                a[(l, k)] = v / scale;
            }
            b[l] = qs[l] / scale;
        }
        nnls(&a, &b).iter().copied().collect()
    };
    if weights.iter().any(|&w| !(w >= 0.0) || w > 1.0 + 1e-12) {
        return Err(Error::InfeasibleSupport(r));
    }
    let mut probs = vec![0.0; len];
    for (&n, &w) in pts.iter().zip(&weights) {
        probs[n] = w;
    }
    let q = population_moments(&PopulationState::from_evolved(probs.clone(), policy.tail_tol, false), r).re();
    if (0..=r).any(|l| !matches_thermal(q[l], qs[l])) {
        return Err(Error::InfeasibleSupport(r));
    }
    let state = PopulationState::new(probs, policy.tail_tol)?;
    let order = acceleration_order(&DensityState::diagonal(state.clone()), n_th, 2 * (r + 1))?;
    if order.h < 2 * (r + 1) {
        return Err(Error::InfeasibleSupport(r));
    }
    Ok(state)
}

/// `true` when `x` and `y` agree to `rel` relative to the larger magnitude.
pub fn rel_close(x: Complex64, y: Complex64, rel: f64) -> bool {
    (x - y).norm() <= rel * x.norm().max(y.norm())
}
