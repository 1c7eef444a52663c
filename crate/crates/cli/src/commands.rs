//! Subcommand bodies. Each returns an [`Artifact`]; `main` and `run` decide
//! where it goes.

use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_ldp::conditions::{classify, Schedule};
use tower_ldp::fmt_ext::format_ext;
use tower_ldp::interval::{
    levelset_measure_interval, mc_ldp_interval, orbit_birkhoff, IntervalMap, IntervalObservable,
    PiecewiseLinearMap,
};
use tower_ldp::io::{HeightSpec, ObservableSpec};
use tower_ldp::ldp::{
    extrapolated_pressure, ldp_curve, levelset_measure_dp, levelset_measure_enum,
    monte_carlo_levelset, pressure_dp, EnumQueryOptions, LevelSetQuery, LevelSetResult, Method,
    MonteCarloOptions,
};
use tower_ldp::rate::{
    khinchin_rate, legendre_conjugate, linspace, rate_from_tower, sandwich_gap_report, GapVerdict,
    InducedSystem, SampledPressure,
};
use tower_ldp::{NumericMode, Observable, Rational64, Tower};

use crate::error::CliError;

pub enum Artifact {
    Csv {
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    },
    Json(serde_json::Value),
}

impl Artifact {
    fn csv(header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Artifact::Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Artifact::Csv { .. } => "csv",
            Artifact::Json(_) => "json",
        }
    }
}

/// Tower, observable and numeric settings shared by most subcommands.
pub struct Context {
    pub seq: HeightSpec,
    pub obs: ObservableSpec,
    pub mode: NumericMode,
    pub seed: u64,
    pub truncation: usize,
}

impl Context {
    fn tower(&self) -> Result<Tower, CliError> {
        Ok(self.seq.tower(self.truncation)?)
    }

    fn observable(&self) -> Result<Observable, CliError> {
        Ok(self.obs.observable()?)
    }
}

fn f(x: f64) -> String {
    format_ext(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Auto,
    Dp,
    Enum,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SideArg {
    AtLeast,
    AtMost,
}

pub struct LdpParams {
    pub a: Rational64,
    pub strict: bool,
    pub side: SideArg,
    pub n: Vec<usize>,
    pub engine: Engine,
    pub samples: u64,
}

fn query(p: &LdpParams, n: usize) -> LevelSetQuery {
    match p.side {
        SideArg::AtLeast => LevelSetQuery::at_least(n, p.a, p.strict),
        SideArg::AtMost => LevelSetQuery::at_most(n, p.a, p.strict),
    }
}

const LDP_HEADER: [&str; 7] = [
    "n",
    "a",
    "strict",
    "log_measure",
    "normalized",
    "method",
    "discarded_mass_bound",
];

fn ldp_row(r: &LevelSetResult) -> Vec<String> {
    vec![
        r.query.n.to_string(),
        r.query.a.to_string(),
        r.query.strict.to_string(),
        f(r.log_measure),
        f(r.normalized),
        r.method.tag().to_string(),
        f(r.discarded_mass_bound.to_f64()),
    ]
}

pub fn ldp(ctx: &Context, p: &LdpParams) -> Result<Artifact, CliError> {
    let tower = ctx.tower()?;
    let obs = ctx.observable()?;
    let mut rows = Vec::new();
    for &n in &p.n {
        let q = query(p, n);
        let engine = match p.engine {
            Engine::Auto if obs.depth() == 1 && tower.distortion().branches.is_linear() => {
                Engine::Dp
            }
            Engine::Auto if tower.distortion().branches.is_linear() => Engine::Enum,
            Engine::Auto => Engine::Mc,
            e => e,
        };
        let r = match engine {
            Engine::Dp => levelset_measure_dp(&tower, &obs, &q, ctx.mode)?,
            Engine::Enum => levelset_measure_enum(&tower, &obs, &q, EnumQueryOptions::default())?,
            _ => monte_carlo_levelset(
                &tower,
                &obs,
                &q,
                MonteCarloOptions::new(p.samples, ctx.seed),
            )?,
        };
        rows.push(ldp_row(&r));
    }
    Ok(Artifact::csv(&LDP_HEADER, rows))
}

pub struct ClassifyParams {
    pub horizon: usize,
    pub l_max: usize,
    pub schedules: Vec<Schedule>,
}

pub fn classify_cmd(ctx: &Context, p: &ClassifyParams) -> Result<Artifact, CliError> {
    let seq = ctx.seq.sequence()?;
    let report = classify(&seq, p.horizon, p.l_max, &p.schedules)?;
    Ok(Artifact::Json(
        serde_json::to_value(report).expect("serializable"),
    ))
}

pub struct PressureParams {
    pub betas: Vec<f64>,
    pub n: usize,
    pub max_height: usize,
}

pub fn pressure(ctx: &Context, p: &PressureParams) -> Result<Artifact, CliError> {
    let tower = ctx.tower()?;
    let obs = ctx.observable()?;
    let extrapolated = extrapolated_pressure(&tower, &obs, &p.betas, p.n, ctx.mode)?;
    let sys = InducedSystem::new(&tower, &obs, p.max_height)?;
    let mut rows = Vec::new();
    for (i, &b) in p.betas.iter().enumerate() {
        rows.push(vec![
            f(b),
            p.n.to_string(),
            f(pressure_dp(&tower, &obs, b, p.n, ctx.mode)?),
            f(extrapolated[i]),
            p.max_height.to_string(),
            f(sys.pressure(b)),
        ]);
    }
    Ok(Artifact::csv(
        &[
            "beta",
            "n",
            "pressure_dp",
            "pressure_extrapolated",
            "L",
            "induced_pressure",
        ],
        rows,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Khinchin,
    Legendre,
    Induced,
}

impl RateMethod {
    fn column(&self) -> &'static str {
        match self {
            RateMethod::Khinchin => "closed_form_khinchin",
            RateMethod::Legendre => "legendre_of_pressure",
            RateMethod::Induced => "induced_pressure",
        }
    }
}

pub struct RateParams {
    pub t: Vec<f64>,
    pub max_height: usize,
    pub methods: Vec<RateMethod>,
    /// `n` of the Richardson-extrapolated DP pressure.
    pub legendre_n: usize,
    pub beta_range: (f64, f64),
    pub beta_count: usize,
}

fn rate_column(ctx: &Context, p: &RateParams, m: RateMethod) -> Result<Vec<f64>, CliError> {
    match m {
        RateMethod::Khinchin => {
            let prob =
                match (&ctx.seq, &ctx.obs) {
                    (HeightSpec::Geometric { p }, ObservableSpec::Level0) => {
                        let r = tower_ldp::number::parse_rational(p)
                            .map_err(|e| CliError::Config(e.to_string()))?;
                        tower_ldp::number::rational_to_f64(&r)
                    }
                    _ => return Err(CliError::Compute(
                        "the closed-form rate needs a geometric sequence and the level0 observable"
                            .into(),
                    )),
                };
            p.t.iter()
                .map(|&t| khinchin_rate(prob, t).map_err(CliError::from))
                .collect()
        }
        RateMethod::Legendre => {
            let tower = ctx.tower()?;
            let obs = ctx.observable()?;
            let betas = linspace(p.beta_range.0, p.beta_range.1, p.beta_count);
            let values = extrapolated_pressure(&tower, &obs, &betas, p.legendre_n, ctx.mode)?;
            let (lo, hi) = (obs.min_value(), obs.max_value());
            let to_f = |r: Rational64| *r.numer() as f64 / *r.denom() as f64;
            let sp = SampledPressure::new(betas, values)?;
            let sp = if lo == hi {
                sp
            } else {
                sp.with_domain(to_f(lo), to_f(hi))
            };
            Ok(legendre_conjugate(&sp, &p.t)?.values())
        }
        RateMethod::Induced => {
            let tower = ctx.tower()?;
            let obs = ctx.observable()?;
            Ok(rate_from_tower(&tower, &obs, &p.t, p.max_height)?.values())
        }
    }
}

pub fn rate(ctx: &Context, p: &RateParams) -> Result<Artifact, CliError> {
    let columns = p
        .methods
        .iter()
        .map(|&m| rate_column(ctx, p, m))
        .collect::<Result<Vec<_>, _>>()?;
    if let [only] = &p.methods[..] {
        let provenance = match only {
            RateMethod::Induced => format!("induced_pressure_L{}", p.max_height),
            m => m.column().to_string(),
        };
        let rows =
            p.t.iter()
                .zip(&columns[0])
                .map(|(t, q)| vec![f(*t), f(*q), provenance.clone(), p.max_height.to_string()])
                .collect();
        return Ok(Artifact::csv(&["t", "q", "provenance", "L"], rows));
    }
    let mut header = vec!["t"];
    header.extend(p.methods.iter().map(RateMethod::column));
    header.push("L");
    let rows =
        p.t.iter()
            .enumerate()
            .map(|(i, t)| {
                let mut row = vec![f(*t)];
                row.extend(columns.iter().map(|c| f(c[i])));
                row.push(p.max_height.to_string());
                row
            })
            .collect();
    Ok(Artifact::csv(&header, rows))
}

pub struct CounterexampleParams {
    pub base: u64,
    pub strict_n: Vec<usize>,
    pub nonstrict_n: Vec<usize>,
}

/// Level-set curves for the block-exponential heights with the block-union
/// observable: `{S_n/n > 7/16}` and `{S_n/n ≥ 1/2}`.
pub fn counterexample(mode: NumericMode, p: &CounterexampleParams) -> Result<Artifact, CliError> {
    let tower = Tower::new(tower_ldp::HeightSequence::block_exp(p.base, 1)?, 64)?;
    let obs = ObservableSpec::Counterexample { base: p.base }.observable()?;
    let mut rows = Vec::new();
    let runs = [
        (Rational64::new(7, 16), true, &p.strict_n),
        (Rational64::new(1, 2), false, &p.nonstrict_n),
    ];
    for (a, strict, ns) in runs {
        if ns.is_empty() {
            continue;
        }
        let curve = ldp_curve(
            &tower,
            &obs,
            LevelSetQuery::at_least(1, a, strict),
            ns,
            mode,
        )?;
        for pt in &curve.points {
            rows.push(vec![
                pt.n.to_string(),
                a.to_string(),
                strict.to_string(),
                f(pt.log_measure),
                f(pt.normalized),
                f(pt.tail_min),
                f(pt.tail_max),
                curve.method.to_string(),
            ]);
        }
    }
    Ok(Artifact::csv(
        &[
            "n",
            "a",
            "strict",
            "log_measure",
            "normalized",
            "tail_min",
            "tail_max",
            "method",
        ],
        rows,
    ))
}

pub struct IntervalParams {
    pub phi: IntervalObservable,
    pub n: Vec<usize>,
    pub a: Rational64,
    pub strict: bool,
    pub samples: u64,
    pub x0: Option<f64>,
}

fn mc_row(engine: &str, r: &LevelSetResult) -> Vec<String> {
    let (est, lo, hi) = match r.method {
        Method::MonteCarlo {
            hits,
            samples,
            ci_low,
            ci_high,
            ..
        } => (hits as f64 / samples as f64, ci_low, ci_high),
        _ => {
            let v = r.measure.to_f64();
            (v, v, v)
        }
    };
    vec![
        engine.to_string(),
        r.query.n.to_string(),
        r.query.a.to_string(),
        r.query.strict.to_string(),
        f(r.log_measure),
        f(r.normalized),
        f(est),
        f(lo),
        f(hi),
    ]
}

pub fn interval(ctx: &Context, p: &IntervalParams) -> Result<Artifact, CliError> {
    let mp = ctx.seq.mp_map()?;
    let pl: Option<PiecewiseLinearMap> = match mp {
        Some(_) => None,
        None => Some(
            ctx.seq
                .piecewise_linear(p.n.iter().max().copied().unwrap_or(1) + 8)?,
        ),
    };
    let map: &dyn IntervalMap = match (&mp, &pl) {
        (Some(m), _) => m,
        (_, Some(m)) => m,
        _ => unreachable!(),
    };
    if let Some(x0) = p.x0 {
        let rows =
            p.n.iter()
                .map(|&n| vec![n.to_string(), f(x0), f(orbit_birkhoff(map, &p.phi, x0, n))])
                .collect();
        return Ok(Artifact::csv(&["n", "x0", "average"], rows));
    }
    let opts = MonteCarloOptions::new(p.samples, ctx.seed);
    let mut rows = Vec::new();
    for &n in &p.n {
        let q = LevelSetQuery::at_least(n, p.a, p.strict);
        if let Some(m) = &pl {
            if matches!(
                p.phi,
                IntervalObservable::Cells { .. } | IntervalObservable::Constant { .. }
            ) {
                rows.push(mc_row(
                    "exact_map",
                    &levelset_measure_interval(m, &p.phi, &q)?,
                ));
            }
        }
        rows.push(mc_row("map_mc", &mc_ldp_interval(map, &p.phi, &q, opts)?));
        if p.phi == IntervalObservable::top_cell() {
            let tower = match (&mp, &pl) {
                (Some(m), _) => m.lift_tower(n + 1)?,
                (_, Some(m)) => m.lift_tower(n + 1)?,
                _ => unreachable!(),
            };
            let psi = Observable::return_indicator();
            if tower.distortion().branches.is_linear() {
                rows.push(mc_row(
                    "tower_dp",
                    &levelset_measure_dp(&tower, &psi, &q, ctx.mode)?,
                ));
            }
            // Independent stream, so the two estimates can be compared statistically.
            let tower_opts = MonteCarloOptions::new(p.samples, ctx.seed.wrapping_add(1));
            rows.push(mc_row(
                "tower_mc",
                &monte_carlo_levelset(&tower, &psi, &q, tower_opts)?,
            ));
        }
    }
    Ok(Artifact::csv(
        &[
            "engine",
            "n",
            "a",
            "strict",
            "log_measure",
            "normalized",
            "estimate",
            "ci_low",
            "ci_high",
        ],
        rows,
    ))
}

pub struct GapParams {
    pub a: Rational64,
    pub n: Vec<usize>,
    pub max_height: usize,
}

/// Report plus whether the sandwich was violated.
pub fn gap_report(ctx: &Context, p: &GapParams) -> Result<(Artifact, bool), CliError> {
    let tower = ctx.tower()?;
    let obs = ctx.observable()?;
    let r = sandwich_gap_report(&tower, &obs, p.a, &p.n, p.max_height, ctx.mode)?;
    let violated = r.verdict == GapVerdict::SandwichViolated;
    let mut v = serde_json::to_value(&r).expect("serializable");
    v["sequence"] = json!(ctx.seq);
    v["observable"] = json!(ctx.obs);
    Ok((Artifact::Json(v), violated))
}
