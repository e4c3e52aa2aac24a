use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eulerlab::beltrami::{invariant_suite, DirectionSet};
use eulerlab::certifier::{self, BatterySpec, WeakMode};
use eulerlab::fields::io::{read_field, read_header, read_series, write_field, write_series};
use eulerlab::fields::{Grid, SymTensorField, TimeSeries, VectorField};
use eulerlab::multiscale::reynolds_stress;
use eulerlab::run::{self, RunConfig};
use eulerlab::Error;

/// Desk-scale convex integration, alpha-scaled ensembles and transport noise.
///
/// Exit status: 0 on PASS, 1 on a numerical failure, 2 on a usage or config error.
#[derive(Parser)]
#[command(name = "eulerlab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Euler-Reynolds ladder runs.
    #[command(subcommand)]
    Ci(CiCmd),
    /// Alpha-scaled ensembles over a ladder.
    #[command(subcommand)]
    Ensemble(EnsembleCmd),
    /// Transport noise: quadratic form, corrector fit, SPDE simulation.
    #[command(subcommand)]
    Noise(NoiseCmd),
    /// Weak-form residual of a candidate (u, R) against a test-field battery.
    Certify(CertifyArgs),
    /// Large/small scale decomposition.
    #[command(subcommand)]
    Multiscale(MultiscaleCmd),
    /// Beltrami waves and the geometric lemma.
    #[command(subcommand)]
    Beltrami(BeltramiCmd),
}

#[derive(Args)]
struct ConfigOut {
    /// TOML config; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CiCmd {
    /// Runs the ladder and writes a run directory.
    Run(ConfigOut),
    /// Re-checks a run directory: checksums and recomputed residuals.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum EnsembleCmd {
    Run {
        #[command(flatten)]
        io: ConfigOut,
        /// Reuse the stage dumps of a `ci run` directory instead of rebuilding the ladder.
        #[arg(long)]
        from_run: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NoiseCmd {
    Quadform(ConfigOut),
    Corrector(ConfigOut),
    Simulate(ConfigOut),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Spatial,
}

#[derive(Args)]
struct CertifyArgs {
    /// Velocity time-series dump.
    #[arg(long)]
    u: PathBuf,
    /// Reynolds-stress time-series dump; zero when omitted (membership in S).
    #[arg(long)]
    r: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    #[arg(long, default_value_t = 20)]
    battery: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    kmax: f64,
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// Report file; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MultiscaleCmd {
    /// `Λ(u⊗u) - Λu⊗Λu` of a velocity dump (single field or time series).
    Reynolds {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BeltramiCmd {
    /// Random Beltrami flows and random matrices through the invariant suite.
    Verify {
        #[arg(long, default_value_t = 5.0)]
        lambda_bar: f64,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        flows: usize,
        #[arg(long, default_value_t = 1000)]
        matrices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidSchedule(_) | Error::AlphaOutOfRange(_) => {
                Failure::Usage(e.to_string())
            }
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

fn config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn report<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn ci(cmd: CiCmd) -> Outcome {
    match cmd {
        CiCmd::Run(io) => {
            let cfg = config(&io.config)?;
            let (_, summary) = run::ci_run(&cfg, &io.out)?;
            report(&summary)?;
            eprintln!(
                "residual {} | R decreasing {} | estimates {} | onset {}",
                verdict(summary.er_pass),
                verdict(summary.r_strictly_decreasing),
                verdict(summary.estimates.pass),
                verdict(summary.onset_pass)
            );
            // the run itself succeeds when every stage satisfies the Euler-Reynolds system
            Ok(summary.er_pass && summary.initial_zero)
        }
        CiCmd::Verify { run } => {
            let rep = run::ci_verify(&run)?;
            report(&rep)?;
            Ok(rep.pass)
        }
    }
}

fn ensemble(cmd: EnsembleCmd) -> Outcome {
    let EnsembleCmd::Run { io, from_run } = cmd;
    let cfg = config(&io.config)?;
    let states = match from_run {
        Some(dir) => run::load_states(&dir)?,
        None => {
            let spec = cfg.grid_spec()?;
            eulerlab::convexint::run(&cfg.iteration_config()?, &spec, cfg.iteration.q_max)?
        }
    };
    let (_, summary) = run::ensemble_run(&states, &cfg, &io.out)?;
    report(&summary)?;
    Ok(summary.members_valid)
}

fn noise(cmd: NoiseCmd) -> Outcome {
    match cmd {
        NoiseCmd::Quadform(io) => {
            let cfg = config(&io.config)?;
            let rows = run::noise_quadform(&cfg, &io.out)?;
            report(&rows)?;
            Ok(rows.iter().all(|r| {
                r.x_variation <= 1e-12 && (r.trace - r.trace_closed_form).abs() <= 1e-12 * (1.0 + r.trace_closed_form)
            }))
        }
        NoiseCmd::Corrector(io) => {
            let cfg = config(&io.config)?;
            let fits = run::noise_corrector(&cfg, &io.out)?;
            report(&fits)?;
            Ok(fits.iter().all(|f| f.ratio.map_or(true, |r| (0.7..=1.3).contains(&r))))
        }
        NoiseCmd::Simulate(io) => {
            let cfg = config(&io.config)?;
            let s = run::noise_simulate(&cfg, &io.out)?;
            report(&serde_json::json!({
                "predicted_slope": s.predicted_slope,
                "mean_log_slope": s.mean_log_slope,
                "relative_slope_error": s.relative_slope_error,
                "kappa_eff": s.kappa_eff,
                "energy_identity": s.stats.energy_identity,
                "energy_identity_t": s.stats.energy_identity_t,
                "dt_bound": s.stats.dt_bound,
            }))?;
            Ok(s.relative_slope_error <= 0.25)
        }
    }
}

fn certify(a: CertifyArgs) -> Outcome {
    let u = read_series::<VectorField>(&a.u)?;
    let r = match &a.r {
        Some(p) => read_series::<SymTensorField>(p)?,
        None => certifier::zero_stress(&u),
    };
    let battery = BatterySpec {
        count: a.battery,
        kmax: a.kmax,
        seed: a.seed,
        ..BatterySpec::default()
    };
    let mode = match a.mode {
        ModeArg::Full => WeakMode::Full,
        ModeArg::Spatial => WeakMode::Spatial,
    };
    let rep = certifier::certify(&u, &r, a.nu, &battery, a.threshold, mode)?;
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&rep).map_err(|e| Failure::Numerical(e.to_string()))?;
        std::fs::write(out, text + "\n").map_err(|e| Failure::Usage(e.to_string()))?;
    }
    report(&rep)?;
    Ok(rep.pass)
}

fn multiscale(cmd: MultiscaleCmd) -> Outcome {
    let MultiscaleCmd::Reynolds { kappa, u, out } = cmd;
    let header = read_header(&u)?;
    if header.t_end.is_some() {
        let s = read_series::<VectorField>(&u)?;
        let r: TimeSeries<SymTensorField> = s.map(|f| reynolds_stress(f, kappa));
        write_series(&out, &r)?;
        report(&serde_json::json!({ "kappa": kappa, "slices": r.slices.len(), "r_sup": r.sup(), "r_l2": r.l2() }))?;
    } else {
        let f = read_field::<VectorField>(&u)?;
        let r = reynolds_stress(&f, kappa);
        write_field(&out, &r)?;
        report(&serde_json::json!({ "kappa": kappa, "r_sup": eulerlab::fields::sup_norm(&r) }))?;
    }
    Ok(true)
}

fn beltrami(cmd: BeltramiCmd) -> Outcome {
    let BeltramiCmd::Verify {
        lambda_bar,
        n,
        flows,
        matrices,
        seed,
    } = cmd;
    let ds = DirectionSet::default_for(lambda_bar)?;
    let rep = invariant_suite(&ds, Grid::new(n)?, flows, matrices, seed)?;
    report(&serde_json::json!({ "report": rep, "pass": rep.pass(), "sets": ds.describe() }))?;
    Ok(rep.pass())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.cmd {
        Cmd::Ci(c) => ci(c),
        Cmd::Ensemble(c) => ensemble(c),
        Cmd::Noise(c) => noise(c),
        Cmd::Certify(a) => certify(a),
        Cmd::Multiscale(c) => multiscale(c),
        Cmd::Beltrami(c) => beltrami(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match dispatch(cli) {
        Ok(true) => {
            eprintln!("PASS");
            ExitCode::SUCCESS
        }
        Ok(false) => {
            eprintln!("FAIL");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}
