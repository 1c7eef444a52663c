//! Batch configuration for `towerldp run`. See `config.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_ldp::conditions::Schedule;
use tower_ldp::io::{parse_interval_observable, parse_threshold, ObsField, SeqField};
use tower_ldp::NumericMode;

use crate::commands::{self, Artifact, Context, Engine, RateMethod, SideArg};
use crate::error::CliError;
use crate::output::{self, Format};

fn default_truncation() -> usize {
    64
}

fn default_obs() -> ObsField {
    ObsField::Short("level0".into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seq: Option<SeqField>,
    #[serde(default = "default_obs")]
    pub obs: ObsField,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    /// `rational` or `log:<bits>`; falls back to the command line / environment.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub queries: Vec<Query>,
}

fn default_samples() -> u64 {
    100_000
}
fn default_l() -> usize {
    32
}
fn default_pressure_n() -> usize {
    64
}
fn default_legendre_n() -> usize {
    60
}
fn default_beta_min() -> f64 {
    -8.0
}
fn default_beta_max() -> f64 {
    8.0
}
fn default_beta_count() -> usize {
    3201
}
fn default_methods() -> Vec<RateMethod> {
    vec![RateMethod::Induced]
}
fn default_horizon() -> usize {
    256
}
fn default_l_max() -> usize {
    8
}
fn default_base() -> u64 {
    8
}
fn default_strict_n() -> Vec<usize> {
    vec![8, 64]
}
fn default_nonstrict_n() -> Vec<usize> {
    vec![2, 16]
}
fn default_phi() -> String {
    "top".into()
}
fn default_half() -> String {
    "1/2".into()
}
fn default_side() -> SideArg {
    SideArg::AtLeast
}
fn default_engine() -> Engine {
    Engine::Auto
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Query {
    Ldp {
        a: String,
        #[serde(default)]
        strict: bool,
        #[serde(default = "default_side")]
        side: SideArg,
        n: Vec<usize>,
        #[serde(default = "default_engine")]
        engine: Engine,
        #[serde(default = "default_samples")]
        samples: u64,
        #[serde(default)]
        output: Option<String>,
    },
    Pressure {
        betas: Vec<f64>,
        #[serde(default = "default_pressure_n")]
        n: usize,
        #[serde(rename = "L", default = "default_l")]
        max_height: usize,
        #[serde(default)]
        output: Option<String>,
    },
    Rate {
        t: Vec<f64>,
        #[serde(rename = "L", default = "default_l")]
        max_height: usize,
        #[serde(default = "default_methods")]
        methods: Vec<RateMethod>,
        #[serde(default = "default_legendre_n")]
        legendre_n: usize,
        #[serde(default = "default_beta_min")]
        beta_min: f64,
        #[serde(default = "default_beta_max")]
        beta_max: f64,
        #[serde(default = "default_beta_count")]
        beta_count: usize,
        #[serde(default)]
        output: Option<String>,
    },
    Classify {
        #[serde(default = "default_horizon")]
        horizon: usize,
        #[serde(default = "default_l_max")]
        l_max: usize,
        #[serde(default)]
        schedules: Option<Vec<String>>,
        #[serde(default)]
        output: Option<String>,
    },
    Counterexample {
        #[serde(default = "default_base")]
        base: u64,
        #[serde(default = "default_strict_n")]
        strict_n: Vec<usize>,
        #[serde(default = "default_nonstrict_n")]
        nonstrict_n: Vec<usize>,
        #[serde(default)]
        output: Option<String>,
    },
    Interval {
        #[serde(default = "default_phi")]
        phi: String,
        n: Vec<usize>,
        #[serde(default = "default_half")]
        a: String,
        #[serde(default)]
        strict: bool,
        #[serde(default = "default_samples")]
        samples: u64,
        #[serde(default)]
        x0: Option<f64>,
        #[serde(default)]
        output: Option<String>,
    },
    GapReport {
        a: String,
        n: Vec<usize>,
        #[serde(rename = "L", default = "default_l")]
        max_height: usize,
        #[serde(default)]
        output: Option<String>,
    },
}

impl Query {
    fn kind(&self) -> &'static str {
        match self {
            Query::Ldp { .. } => "ldp",
            Query::Pressure { .. } => "pressure",
            Query::Rate { .. } => "rate",
            Query::Classify { .. } => "classify",
            Query::Counterexample { .. } => "counterexample",
            Query::Interval { .. } => "interval",
            Query::GapReport { .. } => "gap-report",
        }
    }

    fn output(&self) -> Option<&str> {
        match self {
            Query::Ldp { output, .. }
            | Query::Pressure { output, .. }
            | Query::Rate { output, .. }
            | Query::Classify { output, .. }
            | Query::Counterexample { output, .. }
            | Query::Interval { output, .. }
            | Query::GapReport { output, .. } => output.as_deref(),
        }
    }
}

fn config_err(field: impl std::fmt::Display, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display(), e))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            "config".to_string()
        } else {
            path
        };
        config_err(field, e.into_inner())
    })
}

/// Runs every query, writes artifacts and `manifest.json` under the output
/// directory. Returns the artifact paths.
pub fn run(
    cfg: &ExperimentConfig,
    cli_mode: NumericMode,
    cli_seed: Option<u64>,
    out_override: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let mode = match &cfg.mode {
        Some(m) => m
            .parse::<NumericMode>()
            .map_err(|e| config_err("mode", e))?,
        None => cli_mode,
    };
    let seed = cli_seed.unwrap_or(cfg.seed);
    let seq = match &cfg.seq {
        Some(s) => Some(s.spec()?),
        None => None,
    };
    let obs = cfg.obs.spec()?;
    let dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| "out".into());

    let mut resolved = cfg.clone();
    resolved.seq = seq.clone().map(SeqField::Full);
    resolved.obs = ObsField::Full(obs.clone());
    resolved.mode = Some(mode.to_string());
    resolved.seed = seed;
    resolved.output_dir = Some(dir.clone());

    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut violated = false;
    for (i, q) in cfg.queries.iter().enumerate() {
        let field = format!("queries[{i}]");
        let needs_seq = !matches!(q, Query::Counterexample { .. });
        let ctx = match (&seq, needs_seq) {
            (Some(s), _) => Some(Context {
                seq: s.clone(),
                obs: obs.clone(),
                mode,
                seed,
                truncation: cfg.truncation,
            }),
            (None, false) => None,
            (None, true) => {
                return Err(config_err(
                    "seq",
                    format!("required by {field} ({})", q.kind()),
                ))
            }
        };
        let ctx = ctx.as_ref();
        let artifact = run_query(q, ctx, mode, &field, &mut violated)?;
        let name = match q.output() {
            Some(o) => o.to_string(),
            None => format!("{i:02}_{}.{}", q.kind(), artifact.extension()),
        };
        let format = if name.ends_with(".json") {
            Format::Json
        } else {
            Format::Csv
        };
        let path = dir.join(&name);
        output::emit(&output::render(&artifact, format)?, Some(&path))?;
        written.push(path);
    }

    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "config": resolved,
        "artifacts": written.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let path = dir.join("manifest.json");
    output::emit(&output::json_bytes(&manifest)?, Some(&path))?;
    if violated {
        return Err(CliError::GapViolation);
    }
    Ok(written)
}

fn threshold(field: &str, key: &str, s: &str) -> Result<tower_ldp::Rational64, CliError> {
    parse_threshold(&format!("{field}.{key}"), s).map_err(CliError::from)
}

fn run_query(
    q: &Query,
    ctx: Option<&Context>,
    mode: NumericMode,
    field: &str,
    violated: &mut bool,
) -> Result<Artifact, CliError> {
    let ctx = || ctx.expect("checked by caller");
    match q {
        Query::Ldp {
            a,
            strict,
            side,
            n,
            engine,
            samples,
            ..
        } => commands::ldp(
            ctx(),
            &commands::LdpParams {
                a: threshold(field, "a", a)?,
                strict: *strict,
                side: *side,
                n: n.clone(),
                engine: *engine,
                samples: *samples,
            },
        ),
        Query::Pressure {
            betas,
            n,
            max_height,
            ..
        } => commands::pressure(
            ctx(),
            &commands::PressureParams {
                betas: betas.clone(),
                n: *n,
                max_height: *max_height,
            },
        ),
        Query::Rate {
            t,
            max_height,
            methods,
            legendre_n,
            beta_min,
            beta_max,
            beta_count,
            ..
        } => commands::rate(
            ctx(),
            &commands::RateParams {
                t: t.clone(),
                max_height: *max_height,
                methods: methods.clone(),
                legendre_n: *legendre_n,
                beta_range: (*beta_min, *beta_max),
                beta_count: *beta_count,
            },
        ),
        Query::Classify {
            horizon,
            l_max,
            schedules,
            ..
        } => {
            let schedules = match schedules {
                Some(list) => list
                    .iter()
                    .map(|s| {
                        s.parse::<Schedule>()
                            .map_err(|e| config_err(format!("{field}.schedules"), e))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => Schedule::defaults(),
            };
            commands::classify_cmd(
                ctx(),
                &commands::ClassifyParams {
                    horizon: *horizon,
                    l_max: *l_max,
                    schedules,
                },
            )
        }
        Query::Counterexample {
            base,
            strict_n,
            nonstrict_n,
            ..
        } => commands::counterexample(
            mode,
            &commands::CounterexampleParams {
                base: *base,
                strict_n: strict_n.clone(),
                nonstrict_n: nonstrict_n.clone(),
            },
        ),
        Query::Interval {
            phi,
            n,
            a,
            strict,
            samples,
            x0,
            ..
        } => commands::interval(
            ctx(),
            &commands::IntervalParams {
                phi: parse_interval_observable(phi)
                    .map_err(|e| config_err(format!("{field}.phi"), e))?,
                n: n.clone(),
                a: threshold(field, "a", a)?,
                strict: *strict,
                samples: *samples,
                x0: *x0,
            },
        ),
        Query::GapReport {
            a, n, max_height, ..
        } => {
            let (artifact, v) = commands::gap_report(
                ctx(),
                &commands::GapParams {
                    a: threshold(field, "a", a)?,
                    n: n.clone(),
                    max_height: *max_height,
                },
            )?;
            *violated |= v;
            Ok(artifact)
        }
    }
}
