use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use hdqkd_core::channel::{self, Channel, MarginPoint, RunOutcome, Simulation, Summary};
use hdqkd_core::config::{ChannelKind, RunConfig};
use hdqkd_core::keylength::KeyLengthReport;
use hdqkd_core::pipeline::Calculator;
use hdqkd_core::statistics::ObservationVector;
use hdqkd_core::{selftest, Regime};

#[derive(Parser, Debug)]
#[command(name = "hdqkd", version, about = "Finite-size key rates for high-dimensional time-bin QKD")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set visibility=0.9` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master seed for sampling and simulation
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (default: standard output)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Regimes to evaluate; overrides the config list
    #[arg(long, global = true, value_delimiter = ',')]
    regime: Vec<Regime>,

    /// Worker threads for simulations (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the epsilon budget of each regime
    Budget,
    /// Key lengths from exact, sampled or supplied observations
    Keyrate {
        /// Sample finite-size observations at the configured visibility
        #[arg(long)]
        sample: bool,
        /// Also write the observation vector used to this CSV
        #[arg(long)]
        write_observations: Option<PathBuf>,
    },
    /// One report per grid point along an axis
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated grid values; empty or absent gives a header-only table
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        grid: String,
    },
    /// Paired fixed/variable-length runs over a fluctuating channel
    Simulate,
    /// Fast invariant checks
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    JsonLines,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Axis {
    #[value(name = "N")]
    N,
    V,
    Loss,
    #[value(name = "t_F")]
    TF,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::V => "v",
            Axis::Loss => "loss",
            Axis::TF => "t_F",
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
    Selftest,
}

type Outcome<T> = Result<T, Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn compute<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Compute(e.into())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::with_overrides(&text, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.regime.is_empty() {
        cfg.regimes = cli.regime.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_out(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_grid(axis: Axis, grid: &str) -> anyhow::Result<Vec<f64>> {
    grid.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let v: f64 = s.trim().parse().with_context(|| format!("grid value `{s}`"))?;
            if axis == Axis::N && !(v >= 1.0 && v.fract() == 0.0) {
                bail!("N grid values must be positive integers, got {s}");
            }
            Ok(v)
        })
        .collect()
}

fn cmd_budget(cfg: &RunConfig, format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    let calc = cfg.calculator()?;
    if format == Format::Csv {
        writeln!(out, "regime,key,value")?;
    }
    for &regime in &cfg.regimes {
        let b = calc.budget(regime)?;
        match format {
            Format::Csv => {
                for (k, v) in b.to_key_values() {
                    writeln!(out, "{regime},{k},{v}")?;
                }
            }
            Format::JsonLines => json_line(out, &b)?,
        }
    }
    Ok(())
}

fn observations(cfg: &RunConfig, calc: &Calculator, sample: bool) -> anyhow::Result<ObservationVector> {
    if let Some(path) = &cfg.observations {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let obs = ObservationVector::read_csv(BufReader::new(f))?;
        obs.validate(&calc.witnesses)?;
        return Ok(obs);
    }
    if sample {
        Ok(channel::sample_observations(&calc.witnesses, cfg.visibility, &calc.counts, cfg.seed)?)
    } else {
        Ok(calc.expected_observations(cfg.visibility)?)
    }
}

fn reports(cfg: &RunConfig, calc: &Calculator, obs: &ObservationVector) -> anyhow::Result<Vec<KeyLengthReport>> {
    let centers = calc.witnesses.expected_isotropic(cfg.visibility);
    cfg.regimes
        .iter()
        .map(|&r| {
            info!("evaluating {r}");
            Ok(calc.evaluate(r, obs, Some(centers.clone()))?.report)
        })
        .collect()
}

fn cmd_keyrate(
    cfg: &RunConfig,
    sample: bool,
    write_obs: &Option<PathBuf>,
    format: Format,
    out: &mut dyn Write,
) -> Outcome<()> {
    let calc = cfg.calculator().map_err(usage)?;
    let obs = observations(cfg, &calc, sample).map_err(usage)?;
    if let Some(path) = write_obs {
        let f = File::create(path).with_context(|| format!("creating {}", path.display())).map_err(usage)?;
        obs.write_csv(BufWriter::new(f)).map_err(compute)?;
    }
    let reps = reports(cfg, &calc, &obs).map_err(compute)?;
    write_reports(&reps, format, out).map_err(compute)
}

fn write_reports(reps: &[KeyLengthReport], format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            writeln!(out, "{}", KeyLengthReport::csv_header())?;
            for r in reps {
                writeln!(out, "{}", r.csv_row())?;
            }
        }
        Format::JsonLines => {
            for r in reps {
                json_line(out, r)?;
            }
        }
    }
    Ok(())
}

fn simulate(cfg: &RunConfig) -> anyhow::Result<(Calculator, Vec<f64>, Simulation)> {
    let calc = cfg.calculator()?;
    let device = cfg.device();
    info!("simulating {} runs over the {:?} channel", cfg.runs, cfg.channel);
    Ok(match cfg.channel {
        ChannelKind::Stat => {
            let ch = cfg.stat_channel();
            let centers = ch.design_centers(&device, &calc.witnesses)?;
            let sim = channel::run_stat_fluct(&ch, &device, &calc, cfg.attack, cfg.runs, cfg.seed)?;
            (calc, centers, sim)
        }
        ChannelKind::Rapid => {
            let ch = cfg.rapid_channel()?;
            let centers = ch.design_centers(&device, &calc.witnesses)?;
            let sim = channel::run_rapid_fluct(&ch, &device, &calc, cfg.attack, cfg.runs, cfg.seed)?;
            (calc, centers, sim)
        }
    })
}

fn cmd_sweep(cfg: &RunConfig, axis: Axis, grid: &[f64], format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    if axis == Axis::TF {
        return sweep_margin(cfg, grid, format, out);
    }
    if format == Format::Csv {
        writeln!(out, "{},rate,{}", axis.name(), KeyLengthReport::csv_header())?;
    }
    for &x in grid {
        let mut c = cfg.clone();
        match axis {
            Axis::N => c.total_rounds = x as u128,
            Axis::V => c.visibility = x,
            Axis::Loss => {
                c.visibility = channel::effective_visibility(&cfg.device(), cfg.dim, x, cfg.mu_sol)?;
            }
            Axis::TF => unreachable!(),
        }
        c.validate()?;
        let calc = c.calculator()?;
        let obs = calc.expected_observations(c.visibility)?;
        for r in reports(&c, &calc, &obs)? {
            let rate = r.ell as f64 / c.total_rounds as f64;
            match format {
                Format::Csv => writeln!(out, "{x:?},{rate:?},{}", r.csv_row())?,
                Format::JsonLines => json_line(
                    out,
                    &serde_json::json!({ "axis": axis.name(), "value": x, "rate": rate, "report": r }),
                )?,
            }
        }
    }
    Ok(())
}

fn sweep_margin(cfg: &RunConfig, grid: &[f64], format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    if format == Format::Csv {
        writeln!(out, "t_F,acceptance_ratio,one_shot_rate,expected_rate,varlen_rate")?;
    }
    if grid.is_empty() {
        return Ok(());
    }
    let (calc, centers, sim) = simulate(cfg)?;
    let summary = Summary::new(&sim.outcomes, cfg.total_rounds);
    let points: Vec<MarginPoint> = channel::margin_sweep(&calc, cfg.attack, &centers, &sim.outcomes, grid)?;
    for p in points {
        match format {
            Format::Csv => writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?}",
                p.t_f, p.acceptance_ratio, p.one_shot_rate, p.expected_rate, summary.varlen_rate
            )?,
            Format::JsonLines => json_line(out, &serde_json::json!({ "point": p, "varlen_rate": summary.varlen_rate }))?,
        }
    }
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    let (_, _, sim) = simulate(cfg)?;
    let summary = Summary::new(&sim.outcomes, cfg.total_rounds);
    match format {
        Format::Csv => {
            writeln!(out, "{}", RunOutcome::csv_header(cfg.dim))?;
            for o in &sim.outcomes {
                writeln!(out, "{}", o.csv_row())?;
            }
            let s = &summary;
            writeln!(out, "# runs={}", s.runs)?;
            writeln!(out, "# accepted={}", s.accepted)?;
            writeln!(out, "# acceptance_ratio={:?}", s.acceptance_ratio)?;
            writeln!(out, "# one_shot_rate={:?}", s.one_shot_rate)?;
            writeln!(out, "# fixed_rate={:?}", s.fixed_rate)?;
            writeln!(out, "# varlen_rate={:?}", s.varlen_rate)?;
            writeln!(out, "# varlen_nonzero={}", s.varlen_nonzero)?;
            writeln!(out, "# ratio={:?}", s.ratio)?;
            writeln!(out, "# loss_clipped={}", s.loss_clipped)?;
            writeln!(out, "# sol_clipped={}", s.sol_clipped)?;
            writeln!(out, "# design_ell={}", sim.design.report.ell)?;
        }
        Format::JsonLines => {
            for o in &sim.outcomes {
                json_line(out, o)?;
            }
            json_line(out, &serde_json::json!({ "summary": summary, "design": sim.design.report }))?;
        }
    }
    info!(
        "acceptance {:.3}, fixed rate {:.4e}, variable rate {:.4e}, ratio {:.3}",
        summary.acceptance_ratio, summary.fixed_rate, summary.varlen_rate, summary.ratio
    );
    Ok(())
}

fn cmd_selftest(format: Format, out: &mut dyn Write) -> Outcome<()> {
    let report = selftest::run();
    let write = |out: &mut dyn Write| -> anyhow::Result<()> {
        match format {
            Format::Csv => {
                writeln!(out, "check,passed,detail")?;
                for c in &report.checks {
                    writeln!(out, "{},{},\"{}\"", c.name, c.passed, c.detail)?;
                }
            }
            Format::JsonLines => {
                for c in &report.checks {
                    json_line(out, c)?;
                }
            }
        }
        Ok(())
    };
    write(out).map_err(compute)?;
    info!("selftest finished in {:.2} s", report.seconds);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(usage)?;
    }
    let mut out = open_out(&cli.out).map_err(usage)?;
    let result = match &cli.command {
        Command::Selftest => cmd_selftest(cli.format, &mut *out),
        cmd => {
            let cfg = load_config(&cli).map_err(usage)?;
            match cmd {
                Command::Budget => cmd_budget(&cfg, cli.format, &mut *out).map_err(compute),
                Command::Keyrate {
                    sample,
                    write_observations,
                } => cmd_keyrate(&cfg, *sample, write_observations, cli.format, &mut *out),
                Command::Sweep { axis, grid } => {
                    let grid = parse_grid(*axis, grid).map_err(usage)?;
                    cmd_sweep(&cfg, *axis, &grid, cli.format, &mut *out).map_err(compute)
                }
                Command::Simulate => cmd_simulate(&cfg, cli.format, &mut *out).map_err(compute),
                Command::Selftest => unreachable!(),
            }
        }
    };
    out.flush().map_err(compute)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => {
            eprintln!("selftest failed");
            ExitCode::from(3)
        }
    }
}
