//! Distances to the thermal state, decay-rate fits and Mpemba crossings.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::TimeGrid;
use crate::model::{boltzmann_ratio, ln_thermal_prob, DensityState, PopulationState};
use crate::par;

/// Samples at or below this value are treated as numerically zero.
pub const DISTANCE_FLOOR: f64 = 1e-12;
/// Eigenvalues below this are dropped from entropy sums.
pub const EIG_EPS: f64 = 1e-14;
/// Negative eigenvalues above this are clipped to zero.
pub const NEG_EIG_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Kl,
    Trace,
    Hs,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Kl, Measure::Trace, Measure::Hs];
}

/// `(1+e) ln(1+e) - e`, accurate for small `e`.
fn bregman(e: f64) -> f64 {
    if e.abs() < 0.01 {
        let mut acc = 0.0;
        let mut pow = e * e;
        for k in 2..12 {
            let kf = k as f64;
            acc += pow / (kf * (kf - 1.0));
            pow *= -e;
        }
        acc
    } else if e <= -1.0 {
        1.0
    } else {
        (1.0 + e) * e.ln_1p() - e
    }
}

/// Generalized Kullback–Leibler divergence `sum P ln(P/Q) - P + Q` against
/// the thermal law, including the analytic weight of `Q` beyond the
/// truncation. Equals the plain divergence for unit-mass `P`.
pub fn kl_population(p: &PopulationState, n_th: f64) -> f64 {
    let probs = p.probs();
    if n_th == 0.0 {
        if probs[1..].iter().any(|&x| x > 1e-300) {
            return f64::INFINITY;
        }
        return bregman(probs[0] - 1.0).max(0.0);
    }
    let mut acc = 0.0;
    for (n, &pn) in probs.iter().enumerate() {
        let ln_q = ln_thermal_prob(n_th, n);
        let q = ln_q.exp();
        let pn = if pn < 1e-300 { 0.0 } else { pn };
        let term = if pn == 0.0 {
            q
        } else if q > 0.0 && ((pn - q) / q).abs() < 0.01 {
            q * bregman((pn - q) / q)
        } else {
            pn * (pn.ln() - ln_q) - pn + q
        };
        acc += term;
    }
    acc += boltzmann_ratio(n_th).powi(probs.len() as i32);
    acc.max(0.0)
}

/// Index sets of the blocks left after dropping vanishing coherences.
fn components(rho: &DensityState) -> Vec<Vec<usize>> {
    let n = rho.dim();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for band in rho.bands.values() {
        for (k, a) in band.amps.iter().enumerate() {
            if a.norm_sqr() != 0.0 {
                let (ra, rb) = (find(&mut parent, k), find(&mut parent, k + band.s));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn block(rho: &DensityState, idx: &[usize], shift: impl Fn(usize) -> f64) -> DMatrix<Complex64> {
    let m = idx.len();
    DMatrix::from_fn(m, m, |i, j| {
        let mut v = rho.entry(idx[i], idx[j]);
        if i == j {
            v -= shift(idx[i]);
        }
        v
    })
}

/// Eigenvalues of the blocks coupled by coherences, with the index sets.
fn coupled_spectra(rho: &DensityState, shift: impl Fn(usize) -> f64 + Sync) -> Vec<(Vec<usize>, Vec<f64>)> {
    let comps: Vec<Vec<usize>> = components(rho).into_iter().filter(|c| c.len() > 1).collect();
    par::map_slice(&comps, |idx| {
        let ev = block(rho, idx, &shift).symmetric_eigenvalues();
        (idx.clone(), ev.iter().copied().collect())
    })
}

fn x_ln_x(x: f64) -> f64 {
    if x > EIG_EPS {
        x * x.ln()
    } else {
        0.0
    }
}

/// `Tr rho (ln rho - ln rho_S)`, split as the population divergence plus the
/// entropy gap `S(diag rho) - S(rho)`, which only involves the blocks joined
/// by nonzero coherences.
pub fn quantum_relative_entropy(rho: &DensityState, n_th: f64) -> Result<f64> {
    let kl = kl_population(&rho.diag, n_th);
    if rho.is_diagonal() {
        return Ok(kl);
    }
    let probs = rho.diag.probs();
    let mut gap = 0.0;
    for (idx, ev) in coupled_spectra(rho, |_| 0.0) {
        if let Some(&low) = ev.iter().min_by(|a, b| a.total_cmp(b)) {
            if low < NEG_EIG_TOL {
                return Err(Error::NotPositive(low));
            }
        }
        let s_full: f64 = ev.iter().map(|&m| x_ln_x(m.max(0.0))).sum();
        let s_diag: f64 = idx.iter().map(|&i| x_ln_x(probs[i])).sum();
        gap += s_full - s_diag;
    }
    Ok((kl + gap).max(0.0))
}

fn thermal_tail_sq(n_th: f64, len: usize) -> f64 {
    if n_th == 0.0 {
        return 0.0;
    }
    let r = boltzmann_ratio(n_th);
    let p0 = 1.0 / (1.0 + n_th);
    p0 * p0 * r.powi(2 * len as i32) / (1.0 - r * r)
}

/// `1/2 ||rho - rho_S||_1`.
pub fn trace_distance(rho: &DensityState, n_th: f64) -> f64 {
    let n = rho.dim();
    let q = |i: usize| ln_thermal_prob(n_th, i).exp();
    let comps = components(rho);
    let mut acc = 0.0;
    for idx in comps.iter().filter(|c| c.len() == 1) {
        acc += (rho.diag.probs()[idx[0]] - q(idx[0])).abs();
    }
    for (_, ev) in coupled_spectra(rho, q) {
        acc += ev.iter().map(|e| e.abs()).sum::<f64>();
    }
    let tail = if n_th > 0.0 { boltzmann_ratio(n_th).powi(n as i32) } else { 0.0 };
    0.5 * (acc + tail)
}

/// Hilbert–Schmidt distance `sqrt(Tr (rho - rho_S)^2)`.
pub fn hs_distance(rho: &DensityState, n_th: f64) -> f64 {
    let mut acc = 0.0;
    for (n, &p) in rho.diag.probs().iter().enumerate() {
        let d = p - ln_thermal_prob(n_th, n).exp();
        acc += d * d;
    }
    for band in rho.bands.values() {
        acc += 2.0 * band.amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
    }
    (acc + thermal_tail_sq(n_th, rho.dim())).sqrt()
}

pub fn distance(rho: &DensityState, n_th: f64, measure: Measure) -> Result<f64> {
    match measure {
        Measure::Kl => quantum_relative_entropy(rho, n_th),
        Measure::Trace => Ok(trace_distance(rho, n_th)),
        Measure::Hs => Ok(hs_distance(rho, n_th)),
    }
}

/// Distance samples; rates are in the inverse units of the grid's times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub fitted_rate: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub fit_r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub r2: f64,
    pub window: (f64, f64),
}

impl DistanceTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid,
            values,
            fitted_rate: None,
            fit_window: None,
            fit_r2: None,
        })
    }

    /// Runs [`fit_decay_rate`] and records the result; a failed or poor fit
    /// leaves the rate absent.
    pub fn with_fit(mut self, window_fraction: f64) -> Self {
        match fit_decay_rate(&self, window_fraction) {
            Ok(fit) => {
                self.fitted_rate = Some(fit.rate);
                self.fit_window = Some(fit.window);
                self.fit_r2 = Some(fit.r2);
            }
            Err(Error::PoorFit(r2)) => self.fit_r2 = Some(r2),
            Err(_) => {}
        }
        self
    }
}

/// Least-squares slope of `ln D` over the final `window_fraction` of the
/// samples above [`DISTANCE_FLOOR`].
pub fn fit_decay_rate(traj: &DistanceTrajectory, window_fraction: f64) -> Result<RateFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "window_fraction",
            reason: format!("{window_fraction} not in (0, 1]"),
        });
    }
    let usable: Vec<(f64, f64)> = traj
        .grid
        .times()
        .iter()
        .zip(&traj.values)
        .filter(|(_, &d)| d > DISTANCE_FLOOR && d.is_finite())
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    let take = ((usable.len() as f64) * window_fraction).ceil() as usize;
    let window = &usable[usable.len() - take.min(usable.len())..];
    if window.len() < 5 {
        return Err(Error::TooFewSamples(window.len()));
    }
    let m = window.len() as f64;
    let (st, sy) = window.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / m, sy / m);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in window {
        sxx += (t - mt) * (t - mt);
        sxy += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    if r2 < 0.999 || !(slope < 0.0) {
        return Err(Error::PoorFit(r2));
    }
    Ok(RateFit {
        rate: -slope,
        r2,
        window: (window[0].0, window[window.len() - 1].0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    I,
    II,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingReport {
    pub crossings: Vec<f64>,
    pub initially_farther: Which,
    pub mpemba_detected: bool,
}

/// Sign changes of `D_II - D_I`, located by linear interpolation of
/// `ln D_II - ln D_I`.
pub fn detect_crossing(traj_i: &DistanceTrajectory, traj_ii: &DistanceTrajectory) -> Result<CrossingReport> {
    if traj_i.grid.times() != traj_ii.grid.times() || traj_i.values.len() != traj_ii.values.len() {
        return Err(Error::GridMismatch);
    }
    let times = traj_i.grid.times();
    let samples: Vec<(f64, f64)> = times
        .iter()
        .zip(traj_i.values.iter().zip(&traj_ii.values))
        .filter(|(_, (&a, &b))| a > DISTANCE_FLOOR || b > DISTANCE_FLOOR)
        .map(|(&t, (&a, &b))| (t, b.max(1e-300).ln() - a.max(1e-300).ln()))
        .collect();
    let initially_farther = if traj_ii.values[0] > traj_i.values[0] { Which::II } else { Which::I };

    let mut crossings = Vec::new();
    let mut last_sign = 0.0;
    let mut last_pt: Option<(f64, f64)> = None;
    for &(t, d) in &samples {
        let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        if sign != 0.0 {
            if last_sign != 0.0 && sign != last_sign {
                let (t0, d0) = last_pt.expect("previous sample");
                crossings.push(t0 + (t - t0) * d0 / (d0 - d));
            }
            last_sign = sign;
            last_pt = Some((t, d));
        }
    }
    let after = crossings.last().copied();
    let farther_below = |d: f64| match initially_farther {
        Which::II => d < 0.0,
        Which::I => d > 0.0,
    };
    let mpemba_detected = after.is_some_and(|tc| samples.iter().filter(|(t, _)| *t > tc).all(|(_, d)| farther_below(*d)));
    Ok(CrossingReport {
        crossings,
        initially_farther,
        mpemba_detected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fock_population, pure_superposition_state, thermal_population, TruncationPolicy};
    use approx::assert_relative_eq;

    fn policy() -> TruncationPolicy {
        TruncationPolicy::default()
    }

    #[test]
    fn bregman_branches_agree() {
        for e in [0.0099f64, -0.0099, 0.00999999] {
            let direct = (1.0 + e) * (1.0 + e).ln() - e;
            assert_relative_eq!(bregman(e), direct, max_relative = 1e-9);
        }
        assert_eq!(bregman(0.0), 0.0);
        assert_eq!(bregman(-1.0), 1.0);
    }

    #[test]
    fn kl_examples() {
        let th = thermal_population(2.0, &policy()).unwrap();
        assert!(kl_population(&th, 2.0) < 1e-12);
        let hot = thermal_population(3.0, &policy()).unwrap();
        assert_relative_eq!(kl_population(&hot, 2.0), 0.06566703451736944, max_relative = 1e-9);
        let f = fock_population(2, &policy()).unwrap();
        assert_relative_eq!(kl_population(&f, 2.0), (27.0f64 / 4.0).ln(), max_relative = 1e-11);
    }

    #[test]
    fn relative_entropy_examples() {
        let f = DensityState::diagonal(fock_population(2, &policy()).unwrap());
        assert_eq!(quantum_relative_entropy(&f, 2.0).unwrap(), kl_population(&f.diag, 2.0));
        let rho = pure_superposition_state(2.0, 4, &policy()).unwrap();
        let expect = -0.5 * (1.0f64 / 3.0).ln() - 0.5 * (16.0f64 / 243.0).ln();
        assert_relative_eq!(quantum_relative_entropy(&rho, 2.0).unwrap(), expect, max_relative = 1e-10);
        let th = DensityState::diagonal(thermal_population(2.0, &policy()).unwrap());
        assert!(quantum_relative_entropy(&th, 2.0).unwrap() < 1e-12);

        let mut bad = rho.clone();
        bad.bands.get_mut(&4).unwrap().amps[0] = Complex64::new(0.9, 0.0);
        assert!(matches!(quantum_relative_entropy(&bad, 2.0), Err(Error::NotPositive(_))));
    }

    #[test]
    fn secondary_measures() {
        let th = DensityState::diagonal(thermal_population(2.0, &policy()).unwrap());
        assert!(trace_distance(&th, 2.0) < 1e-12);
        assert!(hs_distance(&th, 2.0) < 1e-12);
        let rho = pure_superposition_state(2.0, 4, &policy()).unwrap();
        // dense reference for the trace norm
        let n = rho.dim();
        let m = DMatrix::from_fn(n, n, |i, j| {
            rho.entry(i, j) - if i == j { ln_thermal_prob(2.0, i).exp() } else { 0.0 }
        });
        let dense: f64 = 0.5 * m.clone().symmetric_eigenvalues().iter().map(|e| e.abs()).sum::<f64>();
        assert_relative_eq!(trace_distance(&rho, 2.0), dense, max_relative = 1e-9);
        let fro = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert_relative_eq!(hs_distance(&rho, 2.0), fro, max_relative = 1e-9);
    }

    fn traj(values: Vec<f64>) -> DistanceTrajectory {
        let grid = TimeGrid::uniform(4.0, values.len(), true).unwrap();
        DistanceTrajectory::new(grid, values).unwrap()
    }

    #[test]
    fn rate_fit() {
        let grid = TimeGrid::uniform(4.0, 101, true).unwrap();
        let values: Vec<f64> = grid.times().iter().map(|t| 0.3 * (-4.0 * t).exp() + 0.01 * (-8.0 * t).exp()).collect();
        let tr = DistanceTrajectory::new(grid, values).unwrap().with_fit(0.4);
        assert_relative_eq!(tr.fitted_rate.unwrap(), 4.0, max_relative = 1e-3);
        assert!(tr.fit_r2.unwrap() > 0.999);
        assert!(matches!(fit_decay_rate(&traj(vec![1e-13; 50]), 0.4), Err(Error::TooFewSamples(0))));
        let noisy = traj((0..50).map(|k| if k % 2 == 0 { 1.0 } else { 0.1 }).collect());
        assert!(matches!(fit_decay_rate(&noisy, 0.4), Err(Error::PoorFit(_))));
        assert_eq!(noisy.with_fit(0.4).fitted_rate, None);
    }

    #[test]
    fn crossings() {
        let grid = TimeGrid::uniform(2.0, 201, true).unwrap();
        let a: Vec<f64> = grid.times().iter().map(|t| 0.1 * (-4.0 * t).exp()).collect();
        let b: Vec<f64> = grid.times().iter().map(|t| 1.0 * (-8.0 * t).exp()).collect();
        let ta = DistanceTrajectory::new(grid.clone(), a).unwrap();
        let tb = DistanceTrajectory::new(grid.clone(), b).unwrap();
        let rep = detect_crossing(&ta, &tb).unwrap();
        assert_eq!(rep.crossings.len(), 1);
        assert_relative_eq!(rep.crossings[0], 10f64.ln() / 4.0, max_relative = 1e-9);
        assert_eq!(rep.initially_farther, Which::II);
        assert!(rep.mpemba_detected);

        let same = detect_crossing(&ta, &ta).unwrap();
        assert!(same.crossings.is_empty() && !same.mpemba_detected);

        let short = traj(vec![1.0; 10]);
        assert_eq!(detect_crossing(&ta, &short), Err(Error::GridMismatch));
    }
}
