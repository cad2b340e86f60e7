//! Time evolution of populations and band-sparse density matrices.
//!
//! The default path diagonalizes the symmetrized generator once and applies
//! `exp(M t)` exactly at every sample. When the chain cannot be symmetrized
//! or the initial vector is badly conditioned in the symmetric basis, the run
//! falls back to Dormand–Prince integration and records the reason.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{coherence_generator, population_generator, symmetrize, TridiagonalGenerator};
use crate::model::{BathParams, CoherenceBand, DensityState, PopulationState};
use crate::ode::{integrate, OdeOptions};
use crate::par;
use crate::tridiag::SymTridiagEigen;

/// Largest tolerated `|D x0|_2 / |x0|_inf` before spectral projection is
/// considered unreliable.
const MAX_PROJECTION_GAIN: f64 = 1e6;

/// Sample times, stored either in physical units or as `gamma t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    dimensionless: bool,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        Self::checked(times, false)
    }

    /// Grid given in units of `1/gamma`.
    pub fn dimensionless(gamma_times: Vec<f64>) -> Result<Self> {
        Self::checked(gamma_times, true)
    }

    /// `samples` equally spaced points on `[0, t_end]`.
    pub fn uniform(t_end: f64, samples: usize, dimensionless: bool) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() || samples < 2 {
            return Err(Error::InvalidGrid(format!("t_end = {t_end}, samples = {samples}")));
        }
        let step = t_end / (samples - 1) as f64;
        let mut times: Vec<f64> = (0..samples).map(|k| k as f64 * step).collect();
        times[samples - 1] = t_end;
        Self::checked(times, dimensionless)
    }

    fn checked(times: Vec<f64>, dimensionless: bool) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("no samples".into()));
        }
        if !(times[0] >= 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("times must be finite and nonnegative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("times must be strictly increasing".into()));
        }
        Ok(Self { times, dimensionless })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_dimensionless(&self) -> bool {
        self.dimensionless
    }

    pub fn physical_times(&self, gamma: f64) -> Vec<f64> {
        if self.dimensionless {
            self.times.iter().map(|t| t / gamma).collect()
        } else {
            self.times.clone()
        }
    }

    pub fn gamma_times(&self, gamma: f64) -> Vec<f64> {
        if self.dimensionless {
            self.times.clone()
        } else {
            self.times.iter().map(|t| t * gamma).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Spectral,
    Ode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub grid: TimeGrid,
    pub states: Vec<S>,
    /// Missing weight per sample: the lost mass plus the weight the
    /// reflecting top level would have let out of an untruncated lattice.
    pub mass_deficit: Vec<f64>,
    pub method: Method,
    /// Why the spectral path was abandoned, if it was.
    pub fallback: Option<String>,
    pub tail_tol: f64,
}

impl<S> Trajectory<S> {
    pub fn max_mass_deficit(&self) -> f64 {
        self.mass_deficit.iter().fold(0.0, |m, &d| m.max(d.abs()))
    }

    pub fn truncation_limited(&self) -> bool {
        self.max_mass_deficit() > 10.0 * self.tail_tol
    }
}

pub type PopulationTrajectory = Trajectory<PopulationState>;
pub type DensityTrajectory = Trajectory<DensityState>;

struct RealPaths {
    /// `paths[i][k]`: input `i` at sample `k`.
    paths: Vec<Vec<Vec<f64>>>,
    method: Method,
    fallback: Option<String>,
}

fn spectral_paths(
    gen: &TridiagonalGenerator,
    inputs: &[&[f64]],
    times: &[f64],
) -> std::result::Result<Vec<Vec<Vec<f64>>>, String> {
    let sym = symmetrize(gen).map_err(|e| e.to_string())?;
    let mut projected = Vec::with_capacity(inputs.len());
    for x0 in inputs {
        let y0 = sym.to_symmetric_basis(x0);
        let x_max = x0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let y_norm = y0.iter().map(|y| y * y).sum::<f64>().sqrt();
        if !y_norm.is_finite() {
            return Err("symmetric-basis vector overflows".into());
        }
        if x_max > 0.0 && y_norm / x_max > MAX_PROJECTION_GAIN {
            return Err(format!(
                "spectral projection ill-conditioned (|D x0| / |x0| = {:.3e})",
                y_norm / x_max
            ));
        }
        projected.push(y0);
    }
    let eig = SymTridiagEigen::compute(&sym.diag, &sym.offdiag);
    let n = sym.len();
    let mut out = Vec::with_capacity(inputs.len());
    for (x0, y0) in inputs.iter().zip(&projected) {
        let coeffs: Vec<f64> = (0..n)
            .map(|k| eig.vector(k).iter().zip(y0).map(|(v, y)| v * y).sum())
            .collect();
        let samples = par::map_slice(times, |&t| {
            if t == 0.0 {
                return x0.to_vec();
            }
            let mut y = vec![0.0; n];
            for (k, &c) in coeffs.iter().enumerate() {
                let w = c * (eig.values[k] * t).exp();
                if w == 0.0 {
                    continue;
                }
                for (yi, vi) in y.iter_mut().zip(eig.vector(k)) {
                    *yi += w * vi;
                }
            }
            sym.from_symmetric_basis(&y)
        });
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err("spectral reconstruction overflows".into());
        }
        out.push(samples);
    }
    Ok(out)
}

fn ode_paths(
    gen: &TridiagonalGenerator,
    inputs: &[&[f64]],
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<Vec<f64>>>> {
    par::map_slice(inputs, |x0| integrate(|x, dx| gen.apply_into(x, dx), x0, times, opts))
        .into_iter()
        .collect()
}

fn evolve_real(
    gen: &TridiagonalGenerator,
    inputs: &[&[f64]],
    times: &[f64],
    method: Method,
    opts: &OdeOptions,
) -> Result<RealPaths> {
    if gen.len() == 1 {
        let paths = inputs
            .iter()
            .map(|x0| times.iter().map(|&t| vec![x0[0] * (gen.diag[0] * t).exp()]).collect())
            .collect();
        return Ok(RealPaths { paths, method, fallback: None });
    }
    let fallback = match method {
        Method::Spectral => match spectral_paths(gen, inputs, times) {
            Ok(paths) => {
                return Ok(RealPaths {
                    paths,
                    method: Method::Spectral,
                    fallback: None,
                })
            }
            Err(reason) => Some(reason),
        },
        Method::Ode => None,
    };
    Ok(RealPaths {
        paths: ode_paths(gen, inputs, times, opts)?,
        method: Method::Ode,
        fallback,
    })
}

/// `(1 - mass) + integral of boundary_outflow * P_{N-1}` at each sample.
fn deficits(gen: &TridiagonalGenerator, samples: &[Vec<f64>], times: &[f64]) -> Vec<f64> {
    let mut leaked = 0.0;
    let mut out = Vec::with_capacity(samples.len());
    for (k, p) in samples.iter().enumerate() {
        if k > 0 {
            let prev = *samples[k - 1].last().unwrap_or(&0.0);
            let cur = *p.last().unwrap_or(&0.0);
            leaked += 0.5 * gen.boundary_outflow * (prev.max(0.0) + cur.max(0.0)) * (times[k] - times[k - 1]);
        }
        out.push(1.0 - p.iter().sum::<f64>() + leaked);
    }
    out
}

pub fn propagate_population(
    p0: &PopulationState,
    gen: &TridiagonalGenerator,
    grid: &TimeGrid,
    method: Method,
    gamma: f64,
) -> Result<PopulationTrajectory> {
    propagate_population_with(p0, gen, grid, method, gamma, &OdeOptions::default())
}

/// Population block only. `gamma` converts a dimensionless grid.
pub fn propagate_population_with(
    p0: &PopulationState,
    gen: &TridiagonalGenerator,
    grid: &TimeGrid,
    method: Method,
    gamma: f64,
    opts: &OdeOptions,
) -> Result<PopulationTrajectory> {
    if gen.s != 0 {
        return Err(Error::InvalidParameter {
            name: "generator",
            reason: format!("population propagation needs s = 0, got {}", gen.s),
        });
    }
    if p0.n_max() != gen.len() {
        return Err(Error::LengthMismatch {
            state: p0.n_max(),
            generator: gen.len(),
        });
    }
    let times = grid.physical_times(gamma);
    let mut run = evolve_real(gen, &[p0.probs()], &times, method, opts)?;
    let samples = run.paths.pop().unwrap_or_default();
    let mass_deficit = deficits(gen, &samples, &times);
    let states = samples
        .into_iter()
        .zip(&times)
        .map(|(p, &t)| {
            if t == 0.0 {
                p0.clone()
            } else {
                PopulationState::from_evolved(p, p0.tail_tol(), p0.heavy_tail())
            }
        })
        .collect();
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        mass_deficit,
        method: run.method,
        fallback: run.fallback,
        tail_tol: p0.tail_tol(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptions {
    pub method: Method,
    /// Largest coherence offset accepted.
    pub band_cap: usize,
    pub ode: OdeOptions,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            method: Method::Spectral,
            band_cap: 64,
            ode: OdeOptions::default(),
        }
    }
}

/// `ln sqrt((n+s)!/n!)`.
fn ln_band_weight(n: usize, s: usize) -> f64 {
    0.5 * (1..=s).map(|j| ((n + j) as f64).ln()).sum::<f64>()
}

pub fn propagate_density(rho0: &DensityState, params: &BathParams, grid: &TimeGrid) -> Result<DensityTrajectory> {
    propagate_density_with(rho0, params, grid, &DensityOptions::default())
}

/// Diagonal and each band evolve independently; bands are integrated in the
/// rotating frame and the phase `e^{i omega0 s t}` is put back on output.
pub fn propagate_density_with(
    rho0: &DensityState,
    params: &BathParams,
    grid: &TimeGrid,
    opts: &DensityOptions,
) -> Result<DensityTrajectory> {
    if let Some(&s) = rho0.bands.keys().find(|&&s| s > opts.band_cap) {
        return Err(Error::BandCapExceeded { s, cap: opts.band_cap });
    }
    let n = rho0.dim();
    let gen = population_generator(params, n)?;
    let pop = propagate_population_with(&rho0.diag, &gen, grid, opts.method, params.gamma, &opts.ode)?;
    let times = grid.physical_times(params.gamma);

    let bands: Vec<(usize, &CoherenceBand)> = rho0.bands.iter().map(|(&s, b)| (s, b)).collect();
    let evolved = par::map_slice(&bands, |&(s, band)| evolve_band(band, s, params, &times, opts));
    let mut band_paths: BTreeMap<usize, Vec<CoherenceBand>> = BTreeMap::new();
    let mut method = pop.method;
    let mut fallback = pop.fallback.clone();
    for ((s, _), res) in bands.iter().zip(evolved) {
        let (path, m, fb) = res?;
        if m == Method::Ode {
            method = Method::Ode;
        }
        if fallback.is_none() {
            fallback = fb.map(|r| format!("band {s}: {r}"));
        }
        band_paths.insert(*s, path);
    }

    let states = pop
        .states
        .into_iter()
        .enumerate()
        .map(|(k, diag)| DensityState {
            diag,
            bands: band_paths.iter().map(|(&s, path)| (s, path[k].clone())).collect(),
        })
        .collect();
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        mass_deficit: pop.mass_deficit,
        method,
        fallback,
        tail_tol: pop.tail_tol,
    })
}

type BandPath = (Vec<CoherenceBand>, Method, Option<String>);

fn evolve_band(
    band: &CoherenceBand,
    s: usize,
    params: &BathParams,
    times: &[f64],
    opts: &DensityOptions,
) -> Result<BandPath> {
    let len = band.amps.len();
    if band.is_zero() || len == 0 {
        return Ok((vec![band.clone(); times.len()], opts.method, None));
    }
    let ln_w: Vec<f64> = (0..len).map(|n| ln_band_weight(n, s)).collect();
    let re: Vec<f64> = band.amps.iter().zip(&ln_w).map(|(a, l)| a.re * l.exp()).collect();
    let im: Vec<f64> = band.amps.iter().zip(&ln_w).map(|(a, l)| a.im * l.exp()).collect();
    let gen = if len >= 2 {
        coherence_generator(params, s, len)?
    } else {
        // single surviving entry: only its own decay remains
        let mut g = coherence_generator(params, s, 2)?;
        g.diag.truncate(1);
        g.upper.clear();
        g.lower.clear();
        g
    };
    let run = evolve_real(&gen, &[&re, &im], times, opts.method, &opts.ode)?;
    let path = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if t == 0.0 {
                return band.clone();
            }
            let phase = Complex64::from_polar(1.0, gen.phase_rate * t);
            let amps = (0..len)
                .map(|n| Complex64::new(run.paths[0][k][n], run.paths[1][k][n]) * (-ln_w[n]).exp() * phase)
                .collect();
            CoherenceBand { s, amps }
        })
        .collect();
    Ok((path, run.method, run.fallback))
}
