//! Bath parameters, truncated population and density states, and the
//! initial-state constructors used throughout the crate.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries above this negative threshold are treated as round-off and clipped.
pub const NEGATIVE_SLACK: f64 = 1e-12;

/// Oscillator and reservoir parameters. All rates in the crate derive from
/// these three numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub gamma: f64,
    pub omega0: f64,
    pub n_th: f64,
}

impl BathParams {
    /// Absorption rate `2 gamma n_th`.
    pub fn w_up(&self) -> f64 {
        2.0 * self.gamma * self.n_th
    }

    /// Emission rate `2 gamma (n_th + 1)`.
    pub fn w_down(&self) -> f64 {
        2.0 * self.gamma * (self.n_th + 1.0)
    }

    /// Geometric ratio `n_th / (1 + n_th)` of the thermal distribution.
    pub fn boltzmann_ratio(&self) -> f64 {
        boltzmann_ratio(self.n_th)
    }
}

pub(crate) fn boltzmann_ratio(n_th: f64) -> f64 {
    n_th / (1.0 + n_th)
}

pub fn make_bath(gamma: f64, omega0: f64, n_th: f64) -> Result<BathParams> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NonPositiveGamma(gamma));
    }
    if !(omega0 >= 0.0) || !omega0.is_finite() {
        return Err(Error::NegativeFrequency(omega0));
    }
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::NegativeOccupation(n_th));
    }
    Ok(BathParams { gamma, omega0, n_th })
}

/// Builds the bath from `x = hbar omega0 / (k_B T)` using the Planck law
/// `n_th = 1 / (e^x - 1)`.
pub fn make_bath_from_temperature_ratio(gamma: f64, omega0: f64, x: f64) -> Result<BathParams> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveTemperatureRatio(x));
    }
    // exp_m1 keeps full precision for small x; large x underflows to 0 cleanly.
    let n_th = 1.0 / x.exp_m1();
    make_bath(gamma, omega0, n_th)
}

/// How a state is cut down to a finite Fock space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub tail_tol: f64,
    pub n_min: usize,
    pub n_max_cap: usize,
    /// Thermal truncation requires `N^moment_order * ratio^N < tail_tol`, so
    /// moments up to this order are also converged. Zero gives the plain
    /// tail-mass rule.
    pub moment_order: u32,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            tail_tol: 1e-12,
            n_min: 64,
            n_max_cap: 4096,
            moment_order: 8,
        }
    }
}

impl TruncationPolicy {
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.n_max_cap = cap;
        self
    }

    pub fn with_moment_order(mut self, order: u32) -> Self {
        self.moment_order = order;
        self
    }

    fn check(&self, n: usize) -> Result<usize> {
        if n > self.n_max_cap {
            Err(Error::TruncationExceeded {
                required: n,
                cap: self.n_max_cap,
            })
        } else {
            Ok(n)
        }
    }

    /// Smallest admissible N for the thermal law with mean `n_th`.
    pub fn thermal_size(&self, n_th: f64) -> Result<usize> {
        if n_th <= 0.0 {
            return self.check(self.n_min);
        }
        let ln_ratio = boltzmann_ratio(n_th).ln();
        let ln_tol = self.tail_tol.ln();
        let k = self.moment_order as f64;
        // N^k r^N is unimodal; start the scan past its peak.
        let peak = (k / -ln_ratio).ceil() as usize;
        let mut n = self.n_min.max(peak).max(2);
        loop {
            let nf = n as f64;
            let lhs = if k > 0.0 { k * nf.ln() } else { 0.0 } + nf * ln_ratio;
            if lhs < ln_tol {
                return self.check(n);
            }
            if n > self.n_max_cap {
                return self.check(n);
            }
            n += 1;
        }
    }

    /// N for a state whose support ends at `max_index`.
    pub fn support_size(&self, max_index: usize) -> Result<usize> {
        self.check(self.n_min.max(max_index + 1))
    }
}

/// Populations `P_n` on `n = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    probs: Vec<f64>,
    tail_tol: f64,
    /// Set for states whose untruncated law has divergent moments.
    heavy_tail: bool,
}

impl PopulationState {
    /// Validates a probability vector: tiny negatives are clipped, and the
    /// total must lie in `[1 - tail_tol, 1]` up to rounding.
    pub fn new(mut probs: Vec<f64>, tail_tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        for (n, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidDistribution(format!("entry {n} is not finite")));
            }
            if *p < 0.0 {
                if *p < -NEGATIVE_SLACK {
                    return Err(Error::InvalidDistribution(format!(
                        "entry {n} = {p} is negative"
                    )));
                }
                *p = 0.0;
            }
        }
        let mass: f64 = probs.iter().sum();
        if mass > 1.0 + 1e-12 || mass < 1.0 - tail_tol - 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "total mass {mass} outside [1 - {tail_tol}, 1]"
            )));
        }
        Ok(Self {
            probs,
            tail_tol,
            heavy_tail: false,
        })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_weights(weights: Vec<f64>, tail_tol: f64) -> Result<Self> {
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidDistribution(format!("total weight {mass}")));
        }
        Self::new(weights.into_iter().map(|w| w / mass).collect(), tail_tol)
    }

    /// Wraps an evolved vector without clipping, so integrator artefacts stay
    /// visible.
    pub(crate) fn from_evolved(probs: Vec<f64>, tail_tol: f64, heavy_tail: bool) -> Self {
        Self {
            probs,
            tail_tol,
            heavy_tail,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len()
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    pub fn heavy_tail(&self) -> bool {
        self.heavy_tail
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mass_deficit(&self) -> f64 {
        1.0 - self.mass()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Largest index carrying nonzero weight.
    pub fn support_end(&self) -> usize {
        self.probs.iter().rposition(|&p| p != 0.0).unwrap_or(0)
    }

    /// Zero-pads (or keeps) the state to length `n`. Shrinking is refused if
    /// it would drop weight.
    pub fn resized(&self, n: usize) -> Result<Self> {
        if n < self.probs.len() && self.probs[n..].iter().any(|&p| p != 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "cannot truncate to {n} entries without dropping weight"
            )));
        }
        let mut probs = self.probs.clone();
        probs.resize(n, 0.0);
        Ok(Self { probs, ..self.clone() })
    }
}

/// Coherences `rho_{n, n+s}` for one positive offset `s`. On an `N`-level
/// truncation the band holds `N - s` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceBand {
    pub s: usize,
    pub amps: Vec<Complex64>,
}

impl CoherenceBand {
    pub fn zeros(s: usize, n: usize) -> Self {
        Self {
            s,
            amps: vec![Complex64::new(0.0, 0.0); n.saturating_sub(s)],
        }
    }

    /// `rho_{n, n+s}` for positive `s`; the conjugate band is `conj` of this.
    pub fn get(&self, n: usize) -> Complex64 {
        self.amps.get(n).copied().unwrap_or_default()
    }

    pub fn is_zero(&self) -> bool {
        self.amps.iter().all(|a| a.norm_sqr() == 0.0)
    }
}

/// Band-sparse Hermitian density matrix: populations plus the `s > 0` bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub diag: PopulationState,
    pub bands: BTreeMap<usize, CoherenceBand>,
}

impl DensityState {
    pub fn diagonal(diag: PopulationState) -> Self {
        Self {
            diag,
            bands: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.n_max()
    }

    /// Inserts a band, checking its length against the truncation.
    pub fn with_band(mut self, band: CoherenceBand) -> Result<Self> {
        if band.s == 0 {
            return Err(Error::ZeroBand);
        }
        let expected = self.dim().saturating_sub(band.s);
        if band.amps.len() != expected {
            return Err(Error::InvalidDistribution(format!(
                "band {} has {} entries, expected {expected}",
                band.s,
                band.amps.len()
            )));
        }
        self.bands.insert(band.s, band);
        Ok(self)
    }

    /// Matrix element in the Fock basis, using `rho_{m,n} = conj(rho_{n,m})`.
    pub fn entry(&self, n: usize, m: usize) -> Complex64 {
        use std::cmp::Ordering::*;
        match n.cmp(&m) {
            Equal => Complex64::new(self.diag.probs().get(n).copied().unwrap_or(0.0), 0.0),
            Less => self.bands.get(&(m - n)).map_or_else(Default::default, |b| b.get(n)),
            Greater => self
                .bands
                .get(&(n - m))
                .map_or_else(Default::default, |b| b.get(m).conj()),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag.mass()
    }

    /// True when every stored band vanishes.
    pub fn is_diagonal(&self) -> bool {
        self.bands.values().all(CoherenceBand::is_zero)
    }

    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (k, &p) in self.diag.probs().iter().enumerate() {
            m[(k, k)] = Complex64::new(p, 0.0);
        }
        for band in self.bands.values() {
            for (k, &a) in band.amps.iter().enumerate() {
                m[(k, k + band.s)] = a;
                m[(k + band.s, k)] = a.conj();
            }
        }
        m
    }

    /// Eigenvalues of the truncated matrix, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_matrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Smallest eigenvalue; positivity is checked on demand only.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn resized(&self, n: usize) -> Result<Self> {
        let diag = self.diag.resized(n)?;
        let mut bands = BTreeMap::new();
        for (&s, band) in &self.bands {
            let len = n.saturating_sub(s);
            if band.amps.len() > len && band.amps[len..].iter().any(|a| a.norm_sqr() != 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "band {s} has weight beyond N = {n}"
                )));
            }
            let mut amps = band.amps.clone();
            amps.resize(len, Complex64::new(0.0, 0.0));
            bands.insert(s, CoherenceBand { s, amps });
        }
        Ok(Self { diag, bands })
    }
}

fn check_occupation(n_th: f64) -> Result<()> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::NegativeOccupation(n_th));
    }
    Ok(())
}

/// Thermal (geometric) populations with mean `n_th`, truncated where the
/// analytic tail falls below the policy tolerance.
pub fn thermal_population(n_th: f64, policy: &TruncationPolicy) -> Result<PopulationState> {
    check_occupation(n_th)?;
    let n = policy.thermal_size(n_th)?;
    let probs = thermal_probs(n_th, n);
    Ok(PopulationState {
        probs,
        tail_tol: policy.tail_tol,
        heavy_tail: false,
    })
}

/// `P_n^(S)` for `n < len`, no truncation logic.
pub fn thermal_probs(n_th: f64, len: usize) -> Vec<f64> {
    let ratio = boltzmann_ratio(n_th);
    let p0 = 1.0 / (1.0 + n_th);
    let mut out = Vec::with_capacity(len);
    let mut p = p0;
    for _ in 0..len {
        out.push(p);
        p *= ratio;
    }
    out
}

/// `ln P_n^(S)`, finite wherever `n_th > 0` even when `P_n^(S)` underflows.
pub fn ln_thermal_prob(n_th: f64, n: usize) -> f64 {
    if n_th == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -(1.0 + n_th).ln() + n as f64 * boltzmann_ratio(n_th).ln()
}

pub fn fock_population(n: usize, policy: &TruncationPolicy) -> Result<PopulationState> {
    let len = policy.support_size(n)?;
    let mut probs = vec![0.0; len];
    probs[n] = 1.0;
    PopulationState::new(probs, policy.tail_tol)
}

/// Mixture of `|0>` and `|n1>` with weight `p = n_th / n1` on `|n1>`, whose
/// mean is exactly `n_th`.
pub fn two_point_population(
    n_th: f64,
    n1: usize,
    policy: &TruncationPolicy,
) -> Result<PopulationState> {
    check_occupation(n_th)?;
    if n1 == 0 || (n1 as f64) < n_th {
        return Err(Error::TwoPointOutOfRange { n1, n_th });
    }
    if n1 >= policy.n_max_cap {
        return Err(Error::TruncationExceeded {
            required: n1 + 1,
            cap: policy.n_max_cap,
        });
    }
    let p = n_th / n1 as f64;
    let len = policy.support_size(n1)?;
    let mut probs = vec![0.0; len];
    probs[0] = 1.0 - p;
    probs[n1] += p;
    PopulationState::new(probs, policy.tail_tol)
}

/// `P_n ∝ 1/(1+n)^2` on `n < n_max_cap`, renormalized after truncation.
pub fn power_law_population(policy: &TruncationPolicy) -> Result<PopulationState> {
    let len = policy.n_max_cap;
    if len < 2 {
        return Err(Error::InvalidParameter {
            name: "n_max_cap",
            reason: "power-law state needs at least two levels".into(),
        });
    }
    let weights: Vec<f64> = (0..len).map(|n| 1.0 / ((1 + n) as f64).powi(2)).collect();
    let mut state = PopulationState::from_weights(weights, policy.tail_tol)?;
    state.heavy_tail = true;
    Ok(state)
}

/// Pure state `sqrt(1-p)|0> + sqrt(p)|n1>` with `p = n_th / n1`.
pub fn pure_superposition_state(
    n_th: f64,
    n1: usize,
    policy: &TruncationPolicy,
) -> Result<DensityState> {
    check_occupation(n_th)?;
    if n1 == 0 {
        return Err(Error::InvalidParameter {
            name: "n1",
            reason: "must be positive".into(),
        });
    }
    let p = n_th / n1 as f64;
    if p >= 1.0 {
        return Err(Error::SuperpositionWeight(p));
    }
    let len = policy.support_size(n1)?;
    let mut probs = vec![0.0; len];
    probs[0] = 1.0 - p;
    probs[n1] += p;
    let diag = PopulationState::new(probs, policy.tail_tol)?;
    let state = DensityState::diagonal(diag);
    if p == 0.0 {
        return Ok(state);
    }
    let mut band = CoherenceBand::zeros(n1, len);
    band.amps[0] = Complex64::new((p * (1.0 - p)).sqrt(), 0.0);
    state.with_band(band)
}
