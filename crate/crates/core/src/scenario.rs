//! JSON-described relaxation experiments: initial states, bath, grid and
//! measures in; trajectories, distances, fitted rates and crossing reports
//! out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{detect_crossing, distance, CrossingReport, DistanceTrajectory, Measure};
use crate::error::{Error, Result};
use crate::evolve::{propagate_density_with, DensityOptions, DensityTrajectory, Method, TimeGrid};
use crate::generator::{coherence_generator, population_generator, symmetrize, TridiagonalGenerator};
use crate::model::{
    fock_population, make_bath, make_bath_from_temperature_ratio, power_law_population, pure_superposition_state,
    thermal_population, two_point_population, BathParams, DensityState, PopulationState, TruncationPolicy,
};
use crate::ode::OdeOptions;
use crate::moments::{
    acceleration_order, construct_matched_state_with, population_moments, stationary_moments, AccelerationOrder,
};
use crate::par;
use crate::spectral::{coherence_eigenvalue, population_eigenvalue};
use crate::tridiag;

/// Truncation used for the power-law state when none is given.
pub const POWER_LAW_DEFAULT_N: usize = 1800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    pub gamma: f64,
    #[serde(default)]
    pub omega0: f64,
    /// Mean thermal occupation; alternatively give `temperature_ratio`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    /// `hbar omega0 / (k_B T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_ratio: Option<f64>,
}

impl BathSpec {
    pub fn params(&self) -> Result<BathParams> {
        match (self.n_th, self.temperature_ratio) {
            (Some(n), None) => make_bath(self.gamma, self.omega0, n),
            (None, Some(x)) => make_bath_from_temperature_ratio(self.gamma, self.omega0, x),
            _ => Err(Error::InvalidScenario(
                "bath needs exactly one of `n_th` and `temperature_ratio`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Thermal { n_th: f64 },
    /// `|0>`/`|n1>` mixture with mean equal to the bath occupation.
    TwoPoint { n1: usize },
    Fock { n: usize },
    PowerLaw {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_max: Option<usize>,
    },
    /// `sqrt(1-p)|0> + sqrt(p)|n1>` with `p = n_th / n1`.
    PureSuperposition { n1: usize },
    /// Populations matching the first `r` thermal moments on `support`.
    Matched { r: usize, support: Vec<usize> },
    Explicit { probs: Vec<f64> },
}

impl StateSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            StateSpec::Thermal { .. } => "thermal",
            StateSpec::TwoPoint { .. } => "two_point",
            StateSpec::Fock { .. } => "fock",
            StateSpec::PowerLaw { .. } => "power_law",
            StateSpec::PureSuperposition { .. } => "pure_superposition",
            StateSpec::Matched { .. } => "matched",
            StateSpec::Explicit { .. } => "explicit",
        }
    }

    /// Builds the state on its own natural truncation.
    fn build_raw(&self, bath: &BathParams, policy: &TruncationPolicy) -> Result<DensityState> {
        let diag = |p: Result<PopulationState>| p.map(DensityState::diagonal);
        match self {
            StateSpec::Thermal { n_th } => diag(thermal_population(*n_th, policy)),
            StateSpec::TwoPoint { n1 } => diag(two_point_population(bath.n_th, *n1, policy)),
            StateSpec::Fock { n } => diag(fock_population(*n, policy)),
            StateSpec::PowerLaw { n_max } => {
                let n = n_max.unwrap_or(POWER_LAW_DEFAULT_N);
                diag(power_law_population(&policy.with_cap(n)))
            }
            StateSpec::PureSuperposition { n1 } => pure_superposition_state(bath.n_th, *n1, policy),
            StateSpec::Matched { r, support } => diag(construct_matched_state_with(bath.n_th, *r, support, policy)),
            StateSpec::Explicit { probs } => diag(PopulationState::new(probs.clone(), policy.tail_tol)),
        }
    }

    /// Builds the state padded to the larger of its own truncation and the
    /// bath's thermal one, or to exactly `n_max` when given.
    pub fn build(&self, bath: &BathParams, policy: &TruncationPolicy, n_max: Option<usize>) -> Result<DensityState> {
        match n_max {
            Some(n) => {
                let capped = TruncationPolicy {
                    n_min: policy.n_min.min(n),
                    ..policy.with_cap(n)
                };
                let state = match self {
                    StateSpec::PowerLaw { .. } => StateSpec::PowerLaw { n_max: Some(n) }.build_raw(bath, &capped)?,
                    _ => self.build_raw(bath, &capped)?,
                };
                state.resized(n)
            }
            None => {
                let state = self.build_raw(bath, policy)?;
                let n = state.dim().max(policy.thermal_size(bath.n_th)?);
                state.resized(n)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedState {
    pub name: String,
    pub init: StateSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// End time in units of `1/gamma`.
    pub t_end: f64,
    pub samples: usize,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_measures() -> Vec<Measure> {
    vec![Measure::Kl]
}

fn default_fit_window() -> f64 {
    0.4
}

fn default_h_max() -> usize {
    12
}

fn default_dump_levels() -> usize {
    16
}

fn default_ode_rel_tol() -> f64 {
    1e-12
}

fn default_ode_abs_tol() -> f64 {
    1e-20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub bath: BathSpec,
    pub states: Vec<NamedState>,
    pub grid: GridSpec,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    /// Common truncation for every state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub method: Method,
    /// Final fraction of usable samples used for rate fits.
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
    #[serde(default = "default_h_max")]
    pub h_max: usize,
    /// Pairs `[I, II]` checked for crossings; defaults to the first two
    /// states when there are exactly two.
    #[serde(default)]
    pub compare: Vec<[String; 2]>,
    /// Populations `P_0..P_{k-1}` written to each trajectory CSV.
    #[serde(default = "default_dump_levels")]
    pub dump_levels: usize,
    /// Integrator tolerances for states propagated by ODE. Tail entries with
    /// tiny thermal weight dominate the KL error, hence the small `abs`.
    #[serde(default = "default_ode_rel_tol")]
    pub ode_rel_tol: f64,
    #[serde(default = "default_ode_abs_tol")]
    pub ode_abs_tol: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.states.is_empty() {
            return bad("at least one state is required".into());
        }
        if !(self.grid.t_end > 0.0) || !self.grid.t_end.is_finite() {
            return bad(format!("t_end must be positive, got {}", self.grid.t_end));
        }
        if self.grid.samples < 16 {
            return bad(format!("samples must be at least 16, got {}", self.grid.samples));
        }
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return bad(format!("fit_window must lie in (0, 1], got {}", self.fit_window));
        }
        if !(self.ode_rel_tol > 0.0 && self.ode_abs_tol > 0.0) {
            return bad("ODE tolerances must be positive".into());
        }
        if self.measures.is_empty() {
            return bad("at least one measure is required".into());
        }
        if self.n_max.is_some_and(|n| n < 2) {
            return bad("n_max must be at least 2".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for st in &self.states {
            if st.name.is_empty() || !st.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("state name `{}` must be nonempty [A-Za-z0-9_-]", st.name));
            }
            if !seen.insert(st.name.as_str()) {
                return bad(format!("duplicate state name `{}`", st.name));
            }
        }
        for [a, b] in &self.compare {
            for n in [a, b] {
                if !seen.contains(n.as_str()) {
                    return bad(format!("compare refers to unknown state `{n}`"));
                }
            }
        }
        self.bath.params()?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.grid.t_end, self.grid.samples, true)
    }

    fn pairs(&self) -> Vec<(String, String)> {
        if !self.compare.is_empty() {
            return self.compare.iter().map(|[a, b]| (a.clone(), b.clone())).collect();
        }
        if self.states.len() == 2 {
            return vec![(self.states[0].name.clone(), self.states[1].name.clone())];
        }
        Vec::new()
    }
}

fn bath(n_th: f64) -> BathSpec {
    BathSpec {
        gamma: 1.0,
        omega0: 1.0,
        n_th: Some(n_th),
        temperature_ratio: None,
    }
}

fn named(name: &str, init: StateSpec) -> NamedState {
    NamedState {
        name: name.into(),
        init,
    }
}

fn base(name: &str, n_th: f64, states: Vec<NamedState>, t_end: f64, samples: usize) -> Scenario {
    Scenario {
        name: name.into(),
        bath: bath(n_th),
        states,
        grid: GridSpec { t_end, samples },
        measures: default_measures(),
        n_max: None,
        method: Method::Spectral,
        fit_window: default_fit_window(),
        h_max: default_h_max(),
        compare: Vec::new(),
        dump_levels: default_dump_levels(),
        ode_rel_tol: default_ode_rel_tol(),
        ode_abs_tol: default_ode_abs_tol(),
    }
}

/// Thermal `n'_th = 3` against the Fock state `|2>` in a bath with `n_th = 2`.
pub fn fig2() -> Scenario {
    base(
        "fig2",
        2.0,
        vec![
            named("I", StateSpec::Thermal { n_th: 3.0 }),
            named("II", StateSpec::Fock { n: 2 }),
        ],
        4.0,
        401,
    )
}

/// The five initial populations relaxing in a bath with `n_th = 2.5`.
pub fn fig3() -> Scenario {
    base(
        "fig3",
        2.5,
        vec![
            named("1", StateSpec::Thermal { n_th: 3.0 }),
            named("2", StateSpec::TwoPoint { n1: 4 }),
            named("3", StateSpec::Fock { n: 1 }),
            named("4", StateSpec::PowerLaw { n_max: Some(POWER_LAW_DEFAULT_N) }),
            named("5", StateSpec::TwoPoint { n1: 6 }),
        ],
        8.0,
        801,
    )
}

/// Thermal `n'_th = 3` against the pure superposition of `|0>` and `|4>`.
pub fn fig4() -> Scenario {
    base(
        "fig4",
        2.0,
        vec![
            named("I", StateSpec::Thermal { n_th: 3.0 }),
            named("II", StateSpec::PureSuperposition { n1: 4 }),
        ],
        4.0,
        401,
    )
}

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "fig2" => Some(fig2()),
        "fig3" => Some(fig3()),
        "fig4" => Some(fig4()),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct StateRun {
    pub name: String,
    pub spec: StateSpec,
    pub initial: DensityState,
    pub trajectory: DensityTrajectory,
    pub distances: BTreeMap<Measure, DistanceTrajectory>,
    pub acceleration: std::result::Result<AccelerationOrder, String>,
}

impl StateRun {
    pub fn kl(&self) -> Option<&DistanceTrajectory> {
        self.distances.get(&Measure::Kl)
    }

    /// Truncation-limited in a way that matters: heavy-tailed states are
    /// defined by their truncation, so for them this is only a warning.
    pub fn fails_truncation(&self) -> bool {
        self.trajectory.truncation_limited() && !self.initial.diag.heavy_tail()
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub bath: BathParams,
    pub grid: TimeGrid,
    pub states: Vec<StateRun>,
    pub crossings: Vec<(String, String, CrossingReport)>,
    pub warnings: Vec<String>,
}

impl ScenarioRun {
    pub fn state(&self, name: &str) -> Option<&StateRun> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn truncation_limited(&self) -> bool {
        self.states.iter().any(StateRun::fails_truncation)
    }
}

fn run_state(
    st: &NamedState,
    bath: &BathParams,
    grid: &TimeGrid,
    scenario: &Scenario,
    policy: &TruncationPolicy,
) -> Result<StateRun> {
    let initial = st.init.build(bath, policy, scenario.n_max)?;
    let opts = DensityOptions {
        method: scenario.method,
        ode: OdeOptions {
            rel_tol: scenario.ode_rel_tol,
            abs_tol: scenario.ode_abs_tol,
            ..Default::default()
        },
        ..Default::default()
    };
    let trajectory = propagate_density_with(&initial, bath, grid, &opts)?;
    let mut distances = BTreeMap::new();
    for &m in &scenario.measures {
        let values = par::map_slice(&trajectory.states, |s| distance(s, bath.n_th, m))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let traj = DistanceTrajectory::new(grid.clone(), values)?.with_fit(scenario.fit_window);
        distances.insert(m, traj);
    }
    let acceleration = acceleration_order(&initial, bath.n_th, scenario.h_max).map_err(|e| e.to_string());
    Ok(StateRun {
        name: st.name.clone(),
        spec: st.init.clone(),
        initial,
        trajectory,
        distances,
        acceleration,
    })
}

/// Evolves every state (concurrently) and analyses the results.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun> {
    run_scenario_with(scenario, &TruncationPolicy::default())
}

pub fn run_scenario_with(scenario: &Scenario, policy: &TruncationPolicy) -> Result<ScenarioRun> {
    scenario.validate()?;
    let bath = scenario.bath.params()?;
    let grid = scenario.time_grid()?;
    let states = par::map_slice(&scenario.states, |st| run_state(st, &bath, &grid, scenario, policy))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    for s in &states {
        if let Some(reason) = &s.trajectory.fallback {
            warnings.push(format!("state {}: integrated by ODE ({reason})", s.name));
        }
        if s.trajectory.truncation_limited() {
            warnings.push(format!(
                "state {}: truncation-limited, estimated lost weight {:.3e} at N = {}",
                s.name,
                s.trajectory.max_mass_deficit(),
                s.initial.dim()
            ));
        }
        if bath.n_th > 0.0 && s.kl().is_some_and(|d| d.fitted_rate.is_none()) {
            warnings.push(format!("state {}: no reliable KL decay-rate fit", s.name));
        }
    }
    let mut crossings = Vec::new();
    let kl_of = |name: &str| states.iter().find(|s| s.name == name).and_then(StateRun::kl);
    for (a, b) in scenario.pairs() {
        if let (Some(da), Some(db)) = (kl_of(&a), kl_of(&b)) {
            crossings.push((a, b, detect_crossing(da, db)?));
        }
    }
    Ok(ScenarioRun {
        scenario: scenario.clone(),
        bath,
        grid,
        states,
        crossings,
        warnings,
    })
}

/// Reporting units for rates and times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// Rates in units of `gamma`, times as `gamma t`.
    #[default]
    GammaT,
    Physical,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn measure_name(m: Measure) -> &'static str {
    match m {
        Measure::Kl => "kl",
        Measure::Trace => "trace",
        Measure::Hs => "hs",
    }
}

/// `t, gamma_t, P_0..P_{k-1}` plus the Frobenius norm of each band.
pub fn trajectory_csv(run: &StateRun, gamma: f64, levels: usize) -> String {
    let k = levels.min(run.initial.dim());
    let bands: Vec<usize> = run.initial.bands.keys().copied().collect();
    let mut out = String::from("t,gamma_t");
    for n in 0..k {
        let _ = write!(out, ",P_{n}");
    }
    for s in &bands {
        let _ = write!(out, ",band_{s}_norm");
    }
    out.push('\n');
    let grid = &run.trajectory.grid;
    for ((t, gt), st) in grid
        .physical_times(gamma)
        .iter()
        .zip(grid.gamma_times(gamma))
        .zip(&run.trajectory.states)
    {
        let _ = write!(out, "{},{}", fmt(*t), fmt(gt));
        for p in &st.diag.probs()[..k] {
            let _ = write!(out, ",{}", fmt(*p));
        }
        for s in &bands {
            let norm = st.bands.get(s).map_or(0.0, |b| b.amps.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt());
            let _ = write!(out, ",{}", fmt(norm));
        }
        out.push('\n');
    }
    out
}

/// `t, gamma_t, D_<state>` for KL and `D_<state>_<measure>` otherwise.
pub fn distances_csv(run: &ScenarioRun) -> String {
    let mut out = String::from("t,gamma_t");
    let measures = &run.scenario.measures;
    for m in measures {
        for s in &run.states {
            match m {
                Measure::Kl => {
                    let _ = write!(out, ",D_{}", s.name);
                }
                _ => {
                    let _ = write!(out, ",D_{}_{}", s.name, measure_name(*m));
                }
            }
        }
    }
    out.push('\n');
    let gamma = run.bath.gamma;
    for (k, (t, gt)) in run
        .grid
        .physical_times(gamma)
        .iter()
        .zip(run.grid.gamma_times(gamma))
        .enumerate()
    {
        let _ = write!(out, "{},{}", fmt(*t), fmt(gt));
        for m in measures {
            for s in &run.states {
                let _ = write!(out, ",{}", fmt(s.distances[m].values[k]));
            }
        }
        out.push('\n');
    }
    out
}

fn scale_rate(rate: Option<f64>, units: Units, gamma: f64) -> Option<f64> {
    rate.map(|r| match units {
        Units::GammaT => r,
        Units::Physical => r * gamma,
    })
}

fn scale_time(t: f64, units: Units, gamma: f64) -> f64 {
    match units {
        Units::GammaT => t,
        Units::Physical => t / gamma,
    }
}

pub fn report_json(run: &ScenarioRun, units: Units) -> Value {
    let gamma = run.bath.gamma;
    let states: Vec<Value> = run
        .states
        .iter()
        .map(|s| {
            let distances: serde_json::Map<String, Value> = s
                .distances
                .iter()
                .map(|(m, d)| {
                    (
                        measure_name(*m).to_string(),
                        json!({
                            "initial": d.values.first(),
                            "final": d.values.last(),
                            "fitted_rate": scale_rate(d.fitted_rate, units, gamma),
                            "fit_r2": d.fit_r2,
                            "fit_window": d.fit_window.map(|(a, b)| [scale_time(a, units, gamma), scale_time(b, units, gamma)]),
                        }),
                    )
                })
                .collect();
            let acceleration = match &s.acceleration {
                Ok(o) => json!({
                    "h": o.h,
                    "matched_moments": o.matched_moments,
                    "predicted_rate": scale_rate(Some(o.predicted_rate(1.0)), units, gamma),
                    "limiting": o.limiting,
                }),
                Err(e) => json!({ "error": e }),
            };
            json!({
                "name": s.name,
                "init": s.spec,
                "n_max": s.initial.dim(),
                "heavy_tail": s.initial.diag.heavy_tail(),
                "method": s.trajectory.method,
                "fallback": s.trajectory.fallback,
                "max_mass_deficit": s.trajectory.max_mass_deficit(),
                "truncation_limited": s.trajectory.truncation_limited(),
                "acceleration": acceleration,
                "distances": distances,
            })
        })
        .collect();
    let crossings: Vec<Value> = run
        .crossings
        .iter()
        .map(|(a, b, rep)| {
            let rate = |n: &str| run.state(n).and_then(StateRun::kl).and_then(|d| scale_rate(d.fitted_rate, units, gamma));
            json!({
                "I": a,
                "II": b,
                "measure": "kl",
                "crossings": rep.crossings.iter().map(|&t| scale_time(t, units, gamma)).collect::<Vec<_>>(),
                "initially_farther": rep.initially_farther,
                "mpemba": rep.mpemba_detected,
                "rate_I": rate(a),
                "rate_II": rate(b),
            })
        })
        .collect();
    json!({
        "name": run.scenario.name,
        "units": units,
        "bath": run.bath,
        "grid": run.scenario.grid,
        "states": states,
        "crossings": crossings,
        "truncation_limited": run.truncation_limited(),
        "warnings": run.warnings,
    })
}

/// Writes per-state trajectories, the distance table and `report.json`.
/// Returns the written paths.
pub fn write_outputs(run: &ScenarioRun, dir: &Path, units: Units) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let gamma = run.bath.gamma;
    let mut put = |name: String, body: String| -> std::io::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };
    for s in &run.states {
        put(
            format!("{}_{}_trajectory.csv", run.scenario.name, file_stem(&s.name)),
            trajectory_csv(s, gamma, run.scenario.dump_levels),
        )?;
    }
    put(format!("{}_distances.csv", run.scenario.name), distances_csv(run))?;
    let report = serde_json::to_string_pretty(&report_json(run, units)).expect("report serializes");
    put(format!("{}_report.json", run.scenario.name), report + "\n")?;
    Ok(files)
}

/// Eigenvalues of a truncated generator, descending. Chains with one-sided
/// couplings are triangular, so their spectrum is the diagonal.
pub fn generator_eigenvalues(gen: &TridiagonalGenerator) -> Vec<f64> {
    match symmetrize(gen) {
        Ok(sym) => tridiag::eigenvalues(&sym.diag, &sym.offdiag),
        Err(_) => {
            let mut d = gen.diag.clone();
            d.sort_by(|a, b| b.total_cmp(a));
            d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub alpha: usize,
    pub s: i64,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub numerical_re: f64,
    pub numerical_im: f64,
    pub abs_deviation: f64,
}

/// Analytic `(alpha, s)` eigenvalues next to those of the truncated
/// generators at size `n`.
pub fn spectrum_table(params: &BathParams, alpha_max: usize, s_max: usize, n: usize) -> Result<Vec<SpectrumRow>> {
    let mut numeric: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let blocks: Vec<usize> = (0..=s_max).collect();
    let spectra = par::map_slice(&blocks, |&s| -> Result<Vec<f64>> {
        let gen = if s == 0 {
            population_generator(params, n)?
        } else {
            coherence_generator(params, s, n.saturating_sub(s))?
        };
        Ok(generator_eigenvalues(&gen))
    });
    for (s, ev) in blocks.iter().zip(spectra) {
        numeric.insert(*s, ev?);
    }
    let mut rows = Vec::new();
    for s in -(s_max as i64)..=(s_max as i64) {
        for alpha in 0..=alpha_max {
            let exact = if s == 0 {
                Complex64::new(population_eigenvalue(alpha, params.gamma), 0.0)
            } else {
                coherence_eigenvalue(alpha, s, params)?
            };
            let num_re = numeric[&(s.unsigned_abs() as usize)].get(alpha).copied().unwrap_or(f64::NAN);
            let num = Complex64::new(num_re, params.omega0 * s as f64);
            rows.push(SpectrumRow {
                alpha,
                s,
                re_lambda: exact.re + 0.0,
                im_lambda: exact.im + 0.0,
                numerical_re: num.re,
                numerical_im: num.im,
                abs_deviation: (num - exact).norm(),
            });
        }
    }
    Ok(rows)
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("alpha,s,re_lambda,im_lambda,numerical_re,numerical_im,abs_deviation\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.alpha,
            r.s,
            fmt(r.re_lambda),
            fmt(r.im_lambda),
            fmt(r.numerical_re),
            fmt(r.numerical_im),
            fmt(r.abs_deviation)
        );
    }
    out
}

/// Initial and thermal moments of a state with its acceleration order.
pub fn moments_report(
    spec: &StateSpec,
    bath_spec: &BathSpec,
    l_max: usize,
    h_max: usize,
    n_max: Option<usize>,
) -> Result<Value> {
    let bath = bath_spec.params()?;
    let policy = TruncationPolicy::default();
    let state = spec.build(&bath, &policy, n_max)?;
    let q0 = population_moments(&state.diag, l_max).re();
    let qs = stationary_moments(bath.n_th, l_max).re();
    let acceleration = match acceleration_order(&state, bath.n_th, h_max) {
        Ok(o) => json!({
            "h": o.h,
            "matched_moments": o.matched_moments,
            "predicted_rate": o.predicted_rate(bath.gamma),
            "limiting": o.limiting,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    Ok(json!({
        "bath": bath,
        "init": spec,
        "n_max": state.dim(),
        "Q0": q0,
        "Q_stationary": qs,
        "acceleration": acceleration,
    }))
}
