mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tower_ldp::conditions::Schedule;
use tower_ldp::io::{parse_interval_observable, parse_threshold, HeightSpec, ObservableSpec};
use tower_ldp::NumericMode;

use commands::{Artifact, Context, Engine, RateMethod, SideArg};
use error::CliError;
use output::Format;

const PRECISION_ENV: &str = "TOWERLDP_PRECISION_BITS";

#[derive(Parser, Debug)]
#[command(
    name = "towerldp",
    version,
    about = "Large deviations for sequence towers and intermittent maps"
)]
struct Cli {
    /// `rational` or `log:<bits>`. Defaults to `log:$TOWERLDP_PRECISION_BITS`, else `log:53`.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Seed for Monte Carlo engines.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Output file (output directory for `run`). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TowerArgs {
    /// e.g. `geometric:p=1/2`, `harmonic`, `blockexp:base=8`, `polynomial:alpha=2`, `explicit:1,1/2,1/4`, `mp:s=1/2`.
    #[arg(long)]
    seq: String,
    /// `level0`, `returns`, `zero`, `counterexample[:base=B]` or `levels:0,3`.
    #[arg(long, default_value = "level0")]
    obs: String,
    #[arg(long, default_value_t = 64)]
    truncation: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shape report for a height sequence.
    Classify {
        #[arg(long)]
        seq: String,
        #[arg(long, default_value_t = 256)]
        horizon: usize,
        #[arg(long, default_value_t = 8)]
        l_max: usize,
        /// Comma separated: `sqrt`, `k/log`, `const:N`.
        #[arg(long, value_delimiter = ',')]
        schedules: Vec<String>,
    },
    /// Level-set measures `m{S_n/n ≥ a}`.
    Ldp {
        #[command(flatten)]
        tower: TowerArgs,
        #[arg(long)]
        a: String,
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value = "at-least")]
        side: SideArg,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_enum, default_value = "auto")]
        engine: Engine,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
    },
    /// Finite-n, extrapolated and induced pressures.
    Pressure {
        #[command(flatten)]
        tower: TowerArgs,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        beta: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long = "L", default_value_t = 32)]
        max_height: usize,
    },
    /// Rate function on a grid of `t`.
    Rate {
        #[command(flatten)]
        tower: TowerArgs,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        t: Vec<f64>,
        #[arg(long = "L", default_value_t = 32)]
        max_height: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "induced")]
        method: Vec<RateMethod>,
        #[arg(long, default_value_t = 60)]
        legendre_n: usize,
        #[arg(long, default_value_t = -8.0, allow_negative_numbers = true)]
        beta_min: f64,
        #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
        beta_max: f64,
        #[arg(long, default_value_t = 3201)]
        beta_count: usize,
    },
    /// Block-exponential tower level sets.
    Counterexample {
        #[arg(long, default_value_t = 8)]
        base: u64,
        #[arg(long, value_delimiter = ',', default_value = "8,64")]
        strict_n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,16")]
        nonstrict_n: Vec<usize>,
    },
    /// Interval-map level sets or orbit averages.
    Interval {
        /// Breakpoint sequence for the piecewise-linear map, or `mp:s=...`.
        #[arg(long)]
        seq: String,
        /// `top`, `cells:0,2`, `indicator:lo,hi`, `identity`, `const:c`.
        #[arg(long, default_value = "top")]
        phi: String,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value = "1/2")]
        a: String,
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        /// Print the Birkhoff average along the orbit of this point instead.
        #[arg(long)]
        x0: Option<f64>,
    },
    /// Compare level-set curves with the induced rate-function bounds.
    GapReport {
        #[command(flatten)]
        tower: TowerArgs,
        #[arg(long)]
        a: String,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long = "L", default_value_t = 32)]
        max_height: usize,
    },
    /// Run a JSON experiment config.
    Run { config: PathBuf },
}

fn resolve_mode(flag: Option<&str>) -> Result<NumericMode, CliError> {
    if let Some(m) = flag {
        return m
            .parse()
            .map_err(|e| CliError::Config(format!("--mode: {e}")));
    }
    match std::env::var(PRECISION_ENV) {
        Ok(bits) => format!("log:{}", bits.trim())
            .parse()
            .map_err(|e| CliError::Config(format!("{PRECISION_ENV}: {e}"))),
        Err(_) => Ok(NumericMode::default()),
    }
}

fn context(t: &TowerArgs, mode: NumericMode, seed: u64) -> Result<Context, CliError> {
    Ok(Context {
        seq: HeightSpec::parse_short(&t.seq)?,
        obs: ObservableSpec::parse_short(&t.obs)?,
        mode,
        seed,
        truncation: t.truncation,
    })
}

fn threshold(s: &str) -> Result<tower_ldp::Rational64, CliError> {
    Ok(parse_threshold("a", s)?)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mode = resolve_mode(cli.mode.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    let artifact: Artifact = match cli.command {
        Command::Run { config } => {
            let cfg = config::load(&config)?;
            let written = config::run(&cfg, mode, cli.seed, cli.out.as_deref())?;
            for p in written {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Classify {
            seq,
            horizon,
            l_max,
            schedules,
        } => {
            let schedules = if schedules.is_empty() {
                Schedule::defaults()
            } else {
                schedules
                    .iter()
                    .map(|s| {
                        s.parse::<Schedule>()
                            .map_err(|e| CliError::Config(format!("--schedules: {e}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let ctx = Context {
                seq: HeightSpec::parse_short(&seq)?,
                obs: ObservableSpec::Level0,
                mode,
                seed,
                truncation: 64,
            };
            commands::classify_cmd(
                &ctx,
                &commands::ClassifyParams {
                    horizon,
                    l_max,
                    schedules,
                },
            )?
        }
        Command::Ldp {
            tower,
            a,
            strict,
            side,
            n,
            engine,
            samples,
        } => commands::ldp(
            &context(&tower, mode, seed)?,
            &commands::LdpParams {
                a: threshold(&a)?,
                strict,
                side,
                n,
                engine,
                samples,
            },
        )?,
        Command::Pressure {
            tower,
            beta,
            n,
            max_height,
        } => commands::pressure(
            &context(&tower, mode, seed)?,
            &commands::PressureParams {
                betas: beta,
                n,
                max_height,
            },
        )?,
        Command::Rate {
            tower,
            t,
            max_height,
            method,
            legendre_n,
            beta_min,
            beta_max,
            beta_count,
        } => commands::rate(
            &context(&tower, mode, seed)?,
            &commands::RateParams {
                t,
                max_height,
                methods: method,
                legendre_n,
                beta_range: (beta_min, beta_max),
                beta_count,
            },
        )?,
        Command::Counterexample {
            base,
            strict_n,
            nonstrict_n,
        } => commands::counterexample(
            mode,
            &commands::CounterexampleParams {
                base,
                strict_n,
                nonstrict_n,
            },
        )?,
        Command::Interval {
            seq,
            phi,
            n,
            a,
            strict,
            samples,
            x0,
        } => {
            let ctx = Context {
                seq: HeightSpec::parse_short(&seq)?,
                obs: ObservableSpec::Returns,
                mode,
                seed,
                truncation: 64,
            };
            let phi = parse_interval_observable(&phi)?;
            commands::interval(
                &ctx,
                &commands::IntervalParams {
                    phi,
                    n,
                    a: threshold(&a)?,
                    strict,
                    samples,
                    x0,
                },
            )?
        }
        Command::GapReport {
            tower,
            a,
            n,
            max_height,
        } => {
            let (artifact, violated) = commands::gap_report(
                &context(&tower, mode, seed)?,
                &commands::GapParams {
                    a: threshold(&a)?,
                    n,
                    max_height,
                },
            )?;
            output::emit(&output::render(&artifact, cli.format)?, cli.out.as_deref())?;
            return if violated {
                Err(CliError::GapViolation)
            } else {
                Ok(())
            };
        }
    };
    output::emit(&output::render(&artifact, cli.format)?, cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("towerldp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
