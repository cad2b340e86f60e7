use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mpemba_core::analysis::Measure;
use mpemba_core::evolve::Method;
use mpemba_core::generator::{coherence_generator, population_generator};
use mpemba_core::scenario::{
    builtin, moments_report, report_json, run_scenario, spectrum_csv, spectrum_table, write_outputs, BathSpec,
    Scenario, ScenarioRun, StateSpec, Units,
};
use serde_json::json;

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_TRUNCATION: u8 = 3;

#[derive(Parser)]
#[command(name = "mpemba", version, about = "Thermal relaxation of a damped quantum oscillator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write trajectories, distances and a report.
    Simulate(RunArgs),
    /// Compare analytic and truncated-generator eigenvalues.
    Spectrum(SpectrumArgs),
    /// Moments and acceleration order of initial states.
    Moments(MomentsArgs),
    /// Run a scenario and print only its crossing reports.
    Mpemba(RunArgs),
    /// Run one of the built-in figure scenarios.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Kl,
    Trace,
    Hs,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Kl => Measure::Kl,
            MeasureArg::Trace => Measure::Trace,
            MeasureArg::Hs => Measure::Hs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    GammaT,
    Physical,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spectral,
    Ode,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
}

#[derive(Args)]
struct RunOpts {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Common Fock-space truncation for every state.
    #[arg(long)]
    n_max: Option<usize>,
    /// Distance measures (repeatable); replaces the scenario's list.
    #[arg(long, value_enum)]
    measure: Vec<MeasureArg>,
    #[arg(long, value_enum, default_value = "gamma-t")]
    units: UnitsArg,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Skip writing output files.
    #[arg(long)]
    no_write: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    omega0: f64,
    #[arg(long)]
    n_th: f64,
    #[arg(long, default_value_t = 10)]
    alpha_max: usize,
    #[arg(long, default_value_t = 3)]
    s_max: usize,
    /// Truncation of the numerical generators.
    #[arg(long, default_value_t = 400)]
    n_max: usize,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw generator band `s` as CSV to this directory.
    #[arg(long, value_name = "DIR")]
    dump_generators: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    /// Scenario JSON file; reports every state in it.
    #[arg(long, conflicts_with_all = ["n_th", "state"])]
    config: Option<PathBuf>,
    #[arg(long)]
    n_th: Option<f64>,
    /// Initial state as JSON, e.g. '{"kind":"fock","n":2}'.
    #[arg(long, requires = "n_th")]
    state: Option<String>,
    #[arg(long, default_value_t = 6)]
    l_max: usize,
    #[arg(long, default_value_t = 12)]
    h_max: usize,
    #[arg(long)]
    n_max: Option<usize>,
}

/// Failures sorted by exit code.
enum Failure {
    Input(anyhow::Error),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        match e.downcast_ref::<mpemba_core::Error>() {
            Some(core) if core.is_input_error() => Failure::Input(e),
            _ => Failure::Other(e),
        }
    }
}

fn input<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Input)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = input(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())))?;
    input(Scenario::from_json(&text).with_context(|| format!("parsing {}", path.display())))
}

fn apply_opts(scenario: &mut Scenario, opts: &RunOpts) {
    if let Some(n) = opts.n_max {
        scenario.n_max = Some(n);
    }
    if !opts.measure.is_empty() {
        scenario.measures = opts.measure.iter().map(|&m| m.into()).collect();
        scenario.measures.dedup();
    }
    if let Some(m) = opts.method {
        scenario.method = match m {
            MethodArg::Spectral => Method::Spectral,
            MethodArg::Ode => Method::Ode,
        };
    }
}

fn units(opts: &RunOpts) -> Units {
    match opts.units {
        UnitsArg::GammaT => Units::GammaT,
        UnitsArg::Physical => Units::Physical,
    }
}

fn run(mut scenario: Scenario, opts: &RunOpts) -> Result<ScenarioRun, Failure> {
    apply_opts(&mut scenario, opts);
    let run = run_scenario(&scenario).map_err(Failure::from)?;
    if !opts.no_write {
        let files = write_outputs(&run, &opts.out_dir, units(opts))
            .with_context(|| format!("writing to {}", opts.out_dir.display()))?;
        for f in files {
            eprintln!("wrote {}", f.display());
        }
    }
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    Ok(run)
}

fn summarize(run: &ScenarioRun) {
    for s in &run.states {
        let rate = s
            .kl()
            .and_then(|d| d.fitted_rate)
            .map_or("-".to_string(), |r| format!("{r:.4}"));
        let h = match &s.acceleration {
            Ok(a) => a.h.to_string(),
            Err(_) => "-".to_string(),
        };
        println!(
            "{:<12} N={:<5} method={:?} kl_rate={} h={}",
            s.name,
            s.initial.dim(),
            s.trajectory.method,
            rate,
            h
        );
    }
    for (a, b, rep) in &run.crossings {
        let times: Vec<String> = rep.crossings.iter().map(|t| format!("{t:.4}")).collect();
        println!(
            "{a} vs {b}: crossings [{}], mpemba {}",
            times.join(", "),
            if rep.mpemba_detected { "yes" } else { "no" }
        );
    }
}

fn finish(run: &ScenarioRun) -> u8 {
    if run.truncation_limited() {
        eprintln!("error: run is truncation-limited; increase --n-max");
        EXIT_TRUNCATION
    } else {
        0
    }
}

fn spectrum(args: &SpectrumArgs) -> Result<u8, Failure> {
    let bath = BathSpec {
        gamma: args.gamma,
        omega0: args.omega0,
        n_th: Some(args.n_th),
        temperature_ratio: None,
    };
    let params = bath.params()?;
    let rows = spectrum_table(&params, args.alpha_max, args.s_max, args.n_max)?;
    let csv = spectrum_csv(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    if let Some(dir) = &args.dump_generators {
        std::fs::create_dir_all(dir)?;
        for s in 0..=args.s_max {
            let gen = if s == 0 {
                population_generator(&params, args.n_max)?
            } else {
                coherence_generator(&params, s, args.n_max - s)?
            };
            std::fs::write(dir.join(format!("generator_s{s}.csv")), gen.to_csv())?;
        }
    }
    Ok(0)
}

fn moments(args: &MomentsArgs) -> Result<u8, Failure> {
    let report = if let Some(path) = &args.config {
        let sc = load_scenario(path)?;
        let n_max = args.n_max.or(sc.n_max);
        let mut out = serde_json::Map::new();
        for st in &sc.states {
            out.insert(
                st.name.clone(),
                moments_report(&st.init, &sc.bath, args.l_max, args.h_max, n_max)?,
            );
        }
        serde_json::Value::Object(out)
    } else {
        let (Some(n_th), Some(state)) = (args.n_th, &args.state) else {
            return Err(Failure::Input(anyhow::anyhow!("give --config or both --n-th and --state")));
        };
        let spec: StateSpec = input(serde_json::from_str(state).context("parsing --state"))?;
        let bath = BathSpec {
            gamma: 1.0,
            omega0: 1.0,
            n_th: Some(n_th),
            temperature_ratio: None,
        };
        moments_report(&spec, &bath, args.l_max, args.h_max, args.n_max)?
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let run = run(load_scenario(&args.config)?, &args.opts)?;
            summarize(&run);
            Ok(finish(&run))
        }
        Command::Reproduce { figure, opts } => {
            let Some(sc) = builtin(figure.name()) else {
                return Err(Failure::Input(anyhow::anyhow!("unknown figure")));
            };
            let run = run(sc, &opts)?;
            summarize(&run);
            Ok(finish(&run))
        }
        Command::Mpemba(args) => {
            let sc = load_scenario(&args.config)?;
            if sc.compare.is_empty() && sc.states.len() != 2 {
                return Err(Failure::Input(anyhow::anyhow!(
                    "mpemba needs exactly two states or an explicit `compare` list"
                )));
            }
            let run = run(sc, &args.opts)?;
            let report = report_json(&run, units(&args.opts));
            println!("{}", serde_json::to_string_pretty(&json!({ "crossings": report["crossings"] }))?);
            Ok(finish(&run))
        }
        Command::Spectrum(args) => spectrum(&args),
        Command::Moments(args) => moments(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
