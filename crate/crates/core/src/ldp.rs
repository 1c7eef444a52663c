//! Level-set measures `m{x ∈ X : S_nψ(x,0)/n ⋛ a}` and finite-n pressures.
//!
//! Three engines compute the same quantity:
//!
//! * [`LevelDp`]: a dynamic program over `(level, S)` states for depth-1
//!   observables. Mass at level `k` splits into the climbing fraction
//!   `a_{k+1}/a_k` and the returning fraction `(a_k - a_{k+1})/a_k`.
//! * cylinder enumeration, for observables of any depth;
//! * Monte Carlo over symbolic tower orbits.
//!
//! Birkhoff sums are always exact: observable values are rationals and sums
//! are kept as integers over the observable's common denominator, so empty
//! level sets come out as an honest `-inf`.

use std::collections::BTreeMap;

use num_rational::{BigRational, Rational64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fmt_ext::ser_ext;
use crate::number::{log_sum_exp, LogValue, Mass, NumberError, NumberValue, NumericMode};
use crate::tower::{BranchMaps, Cell, EnumerationOptions, Observable, Tower, TowerError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpError {
    #[error("the dynamic program needs a depth-1 observable (got depth {0})")]
    NotDepthOne(usize),
    #[error("window requires lo ≤ hi")]
    EmptyWindow,
    #[error("n must be at least 1")]
    ZeroSteps,
    #[error("n = {n} exceeds the enumeration cap {cap}")]
    TooLong { n: usize, cap: usize },
    #[error("n list must be increasing")]
    UnsortedSteps,
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Number(#[from] NumberError),
}

/// Which side of the threshold the average must fall on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    AtLeast,
    AtMost,
    /// `lo ⋜ S_n/n ⋜ hi`.
    Window {
        #[serde(serialize_with = "ser_r64")]
        lo: Rational64,
        #[serde(serialize_with = "ser_r64")]
        hi: Rational64,
    },
}

fn ser_r64<S: serde::Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

/// `{x : S_nψ(x,0)/n ≥ a}` and its variants. `strict` turns every
/// comparison into its strict form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelSetQuery {
    pub n: usize,
    #[serde(serialize_with = "ser_r64")]
    pub a: Rational64,
    pub strict: bool,
    pub side: Side,
}

impl LevelSetQuery {
    pub fn at_least(n: usize, a: Rational64, strict: bool) -> Self {
        LevelSetQuery {
            n,
            a,
            strict,
            side: Side::AtLeast,
        }
    }

    pub fn at_most(n: usize, a: Rational64, strict: bool) -> Self {
        LevelSetQuery {
            n,
            a,
            strict,
            side: Side::AtMost,
        }
    }

    pub fn window(
        n: usize,
        lo: Rational64,
        hi: Rational64,
        strict: bool,
    ) -> Result<Self, LdpError> {
        if lo > hi {
            return Err(LdpError::EmptyWindow);
        }
        Ok(LevelSetQuery {
            n,
            a: lo,
            strict,
            side: Side::Window { lo, hi },
        })
    }

    pub fn with_n(self, n: usize) -> Self {
        LevelSetQuery { n, ..self }
    }

    fn validate(&self) -> Result<(), LdpError> {
        if self.n == 0 {
            return Err(LdpError::ZeroSteps);
        }
        if let Side::Window { lo, hi } = self.side {
            if lo > hi {
                return Err(LdpError::EmptyWindow);
            }
        }
        Ok(())
    }

    /// Whether `S_n = scaled / denom` satisfies the query.
    pub fn accepts_scaled(&self, scaled: i64, denom: i64) -> bool {
        // S_n / n ⋛ r  ⇔  scaled · r.den ⋛ r.num · n · denom
        let cmp = |r: Rational64| {
            let lhs = scaled as i128 * *r.denom() as i128;
            let rhs = *r.numer() as i128 * self.n as i128 * denom as i128;
            lhs.cmp(&rhs)
        };
        use std::cmp::Ordering::*;
        let above = |r| {
            if self.strict {
                cmp(r) == Greater
            } else {
                cmp(r) != Less
            }
        };
        let below = |r| {
            if self.strict {
                cmp(r) == Less
            } else {
                cmp(r) != Greater
            }
        };
        match self.side {
            Side::AtLeast => above(self.a),
            Side::AtMost => below(self.a),
            Side::Window { lo, hi } => above(lo) && below(hi),
        }
    }

    pub fn accepts(&self, sum: Rational64) -> bool {
        self.accepts_scaled(*sum.numer(), *sum.denom())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    ExactDp,
    ExactEnum,
    MonteCarlo {
        samples: u64,
        hits: u64,
        stderr: f64,
        confidence: f64,
        ci_low: f64,
        ci_high: f64,
    },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::ExactDp => "exact_dp",
            Method::ExactEnum => "exact_enum",
            Method::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetResult {
    pub query: LevelSetQuery,
    pub measure: NumberValue,
    #[serde(serialize_with = "ser_ext")]
    pub log_measure: f64,
    /// `log_measure / n`.
    #[serde(serialize_with = "ser_ext")]
    pub normalized: f64,
    pub method: Method,
    pub discarded_mass_bound: NumberValue,
}

impl LevelSetResult {
    fn new(
        query: LevelSetQuery,
        measure: NumberValue,
        method: Method,
        discarded: NumberValue,
    ) -> Self {
        let log_measure = measure.ln().min(0.0);
        LevelSetResult {
            query,
            normalized: log_measure / query.n as f64,
            log_measure,
            measure,
            method,
            discarded_mass_bound: discarded,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_zero()
    }
}

/// Exact evolution of the joint law of (level, Birkhoff sum) for base points.
#[derive(Clone, Debug)]
pub struct LevelDp<M: Mass> {
    climb_frac: Vec<M>,
    ret_frac: Vec<Option<M>>,
    climb_val: Vec<i64>,
    ret_val: Vec<i64>,
    denom: i64,
    horizon: usize,
    time: usize,
    /// `states[k][s]`: measure of base points now at level `k` with `S_t = s / denom`.
    states: Vec<BTreeMap<i64, M>>,
}

impl<M: Mass> LevelDp<M> {
    /// Prepares a program that can run up to `horizon` steps.
    pub fn new(tower: &Tower, obs: &Observable, horizon: usize) -> Result<Self, LdpError> {
        if obs.depth() != 1 {
            return Err(LdpError::NotDepthOne(obs.depth()));
        }
        if !tower.distortion().branches.is_linear() {
            return Err(TowerError::NonlinearBranches(tower.distortion().branches.name()).into());
        }
        let tower = tower.extended(horizon + 1)?;
        let mut climb_frac = Vec::with_capacity(horizon + 1);
        let mut ret_frac = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let a_k = tower.level(k);
            climb_frac.push(M::from_number(&tower.level(k + 1).div(a_k))?);
            ret_frac.push(match tower.branch_measure(k + 1) {
                Some(b) => Some(M::from_number(&b.div(a_k))?),
                None => None,
            });
        }
        let climb_val = (0..=horizon)
            .map(|k| obs.scaled(&[Cell::climb(k)]))
            .collect();
        let ret_val = (0..=horizon).map(|k| obs.scaled(&[Cell::ret(k)])).collect();
        let mut base = BTreeMap::new();
        base.insert(0, M::unit());
        Ok(LevelDp {
            climb_frac,
            ret_frac,
            climb_val,
            ret_val,
            denom: obs.denominator(),
            horizon,
            time: 0,
            states: vec![base],
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn denominator(&self) -> i64 {
        self.denom
    }

    /// Advances one step. Panics past the horizon given to [`LevelDp::new`].
    pub fn step(&mut self) {
        assert!(
            self.time < self.horizon,
            "dynamic program ran past its horizon"
        );
        let mut next: Vec<BTreeMap<i64, M>> = vec![BTreeMap::new(); self.states.len() + 1];
        for (k, level) in self.states.iter().enumerate() {
            for (&s, m) in level {
                let up = m.times(&self.climb_frac[k]);
                if !up.is_empty() {
                    accumulate(&mut next[k + 1], s + self.climb_val[k], up);
                }
                if let Some(r) = &self.ret_frac[k] {
                    accumulate(&mut next[0], s + self.ret_val[k], m.times(r));
                }
            }
        }
        while next.last().is_some_and(BTreeMap::is_empty) {
            next.pop();
        }
        self.states = next;
        self.time += 1;
    }

    pub fn run_to(&mut self, n: usize) {
        while self.time < n {
            self.step();
        }
    }

    pub fn total_mass(&self) -> M {
        self.states
            .iter()
            .flat_map(|l| l.values())
            .fold(M::empty(), |acc, m| acc.plus(m))
    }

    /// Number of live `(level, sum)` states.
    pub fn state_count(&self) -> usize {
        self.states.iter().map(BTreeMap::len).sum()
    }

    /// Law of the scaled Birkhoff sum at the current time.
    pub fn sum_distribution(&self) -> BTreeMap<i64, M> {
        let mut out = BTreeMap::new();
        for level in &self.states {
            for (&s, m) in level {
                accumulate(&mut out, s, m.clone());
            }
        }
        out
    }

    /// Measure of the points whose current Birkhoff sum satisfies `query`
    /// (the query's `n` is replaced by the current time).
    pub fn measure(&self, query: &LevelSetQuery) -> M {
        let q = query.with_n(self.time);
        self.states
            .iter()
            .flat_map(|l| l.iter())
            .filter(|(&s, _)| q.accepts_scaled(s, self.denom))
            .fold(M::empty(), |acc, (_, m)| acc.plus(m))
    }

    /// `ln ∫ exp(β S_t ψ) dm` at the current time.
    pub fn log_partition(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            return self.total_mass().ln();
        }
        let terms: Vec<f64> = self
            .states
            .iter()
            .flat_map(|l| l.iter())
            .map(|(&s, m)| m.ln() + beta * s as f64 / self.denom as f64)
            .collect();
        log_sum_exp(&terms)
    }
}

fn accumulate<M: Mass>(map: &mut BTreeMap<i64, M>, key: i64, m: M) {
    match map.get_mut(&key) {
        Some(v) => *v = v.plus(&m),
        None => {
            map.insert(key, m);
        }
    }
}

fn with_mode<R>(
    mode: NumericMode,
    exact: impl FnOnce() -> Result<R, LdpError>,
    log: impl FnOnce() -> Result<R, LdpError>,
) -> Result<R, LdpError> {
    match mode {
        NumericMode::Rational => exact(),
        NumericMode::Log { .. } => log(),
    }
}

/// Exact level-set measure via the (level, sum) dynamic program.
pub fn levelset_measure_dp(
    tower: &Tower,
    obs: &Observable,
    query: &LevelSetQuery,
    mode: NumericMode,
) -> Result<LevelSetResult, LdpError> {
    query.validate()?;
    fn run<M: Mass>(
        tower: &Tower,
        obs: &Observable,
        q: &LevelSetQuery,
    ) -> Result<NumberValue, LdpError> {
        let mut dp = LevelDp::<M>::new(tower, obs, q.n)?;
        dp.run_to(q.n);
        Ok(dp.measure(q).into_number())
    }
    let measure = with_mode(
        mode,
        || run::<BigRational>(tower, obs, query),
        || run::<LogValue>(tower, obs, query),
    )?;
    Ok(LevelSetResult::new(
        *query,
        measure,
        Method::ExactDp,
        NumberValue::zero(),
    ))
}

#[derive(Clone, Copy, Debug)]
pub struct EnumQueryOptions {
    pub prune_ln: Option<f64>,
    pub max_words: usize,
    /// Longest window (n + depth - 1) that may be enumerated.
    pub max_n: usize,
}

impl Default for EnumQueryOptions {
    fn default() -> Self {
        EnumQueryOptions {
            prune_ln: Some(-80.0),
            max_words: 1 << 24,
            max_n: 26,
        }
    }
}

/// Level-set measure as a sum of cylinder measures.
///
/// If pruning discarded mass that is not negligible against the answer, the
/// query is repeated without pruning.
pub fn levelset_measure_enum(
    tower: &Tower,
    obs: &Observable,
    query: &LevelSetQuery,
    opts: EnumQueryOptions,
) -> Result<LevelSetResult, LdpError> {
    query.validate()?;
    let len = query.n + obs.depth() - 1;
    if len > opts.max_n {
        return Err(LdpError::TooLong {
            n: len,
            cap: opts.max_n,
        });
    }
    let run = |prune_ln: Option<f64>| -> Result<(NumberValue, NumberValue), LdpError> {
        let mut hit = NumberValue::zero();
        let mut cells: Vec<Cell> = Vec::with_capacity(len);
        let eopts = EnumerationOptions {
            prune_ln,
            max_words: opts.max_words,
        };
        let stats = tower.visit_cylinders(len, eopts, |w, m| {
            cells.clear();
            cells.extend(w.cells());
            let s: Rational64 = (0..query.n).map(|i| obs.value(&cells[i..])).sum();
            if query.accepts(s) {
                hit = hit.add(m);
            }
        })?;
        Ok((hit, stats.discarded))
    };
    let (mut hit, mut discarded) = run(opts.prune_ln)?;
    let overlaps =
        !discarded.is_zero() && (hit.is_zero() || discarded.ln() > hit.ln() + (1e-9f64).ln());
    if overlaps {
        (hit, discarded) = run(None)?;
    }
    Ok(LevelSetResult::new(
        *query,
        hit,
        Method::ExactEnum,
        discarded,
    ))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    #[serde(serialize_with = "ser_ext")]
    pub log_measure: f64,
    #[serde(serialize_with = "ser_ext")]
    pub normalized: f64,
    /// Minimum / maximum of `normalized` over this and all later points.
    #[serde(serialize_with = "ser_ext")]
    pub tail_min: f64,
    #[serde(serialize_with = "ser_ext")]
    pub tail_max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpCurve {
    pub query: LevelSetQuery,
    pub method: &'static str,
    pub points: Vec<CurvePoint>,
}

/// `(1/n) log m(level set)` along `n_list`, with running tail extrema as
/// liminf / limsup diagnostics. Depth-1 observables use one DP pass;
/// deeper ones fall back to enumeration.
pub fn ldp_curve(
    tower: &Tower,
    obs: &Observable,
    template: LevelSetQuery,
    n_list: &[usize],
    mode: NumericMode,
) -> Result<LdpCurve, LdpError> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LdpError::UnsortedSteps);
    }
    if n_list.first() == Some(&0) {
        return Err(LdpError::ZeroSteps);
    }
    let mut raw = Vec::with_capacity(n_list.len());
    let method;
    if obs.depth() == 1 {
        method = "exact_dp";
        fn run<M: Mass>(
            tower: &Tower,
            obs: &Observable,
            t: &LevelSetQuery,
            n_list: &[usize],
        ) -> Result<Vec<(usize, f64)>, LdpError> {
            let horizon = n_list.last().copied().unwrap_or(0);
            let mut dp = LevelDp::<M>::new(tower, obs, horizon)?;
            let mut raw = Vec::with_capacity(n_list.len());
            for &n in n_list {
                dp.run_to(n);
                raw.push((n, dp.measure(t).ln().min(0.0)));
            }
            Ok(raw)
        }
        raw = with_mode(
            mode,
            || run::<BigRational>(tower, obs, &template, n_list),
            || run::<LogValue>(tower, obs, &template, n_list),
        )?;
    } else {
        method = "exact_enum";
        for &n in n_list {
            let r = levelset_measure_enum(
                tower,
                obs,
                &template.with_n(n),
                EnumQueryOptions::default(),
            )?;
            raw.push((n, r.log_measure));
        }
    }
    let mut points: Vec<CurvePoint> = raw
        .iter()
        .map(|&(n, lm)| CurvePoint {
            n,
            log_measure: lm,
            normalized: lm / n as f64,
            tail_min: f64::INFINITY,
            tail_max: f64::NEG_INFINITY,
        })
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points.iter_mut().rev() {
        lo = lo.min(p.normalized);
        hi = hi.max(p.normalized);
        p.tail_min = lo;
        p.tail_max = hi;
    }
    Ok(LdpCurve {
        query: template,
        method,
        points,
    })
}

/// `(1/n) log ∫_X exp(β S_nψ) dm`.
pub fn pressure_dp(
    tower: &Tower,
    obs: &Observable,
    beta: f64,
    n: usize,
    mode: NumericMode,
) -> Result<f64, LdpError> {
    let profile = pressure_profile(tower, obs, &[beta], n, mode)?;
    Ok(profile[n - 1][0] / n as f64)
}

/// `log Z_n(β)` for every `n` in `1..=n_max` (outer index `n - 1`) and every β.
pub fn pressure_profile(
    tower: &Tower,
    obs: &Observable,
    betas: &[f64],
    n_max: usize,
    mode: NumericMode,
) -> Result<Vec<Vec<f64>>, LdpError> {
    if n_max == 0 {
        return Err(LdpError::ZeroSteps);
    }
    fn run<M: Mass>(
        tower: &Tower,
        obs: &Observable,
        betas: &[f64],
        n_max: usize,
    ) -> Result<Vec<Vec<f64>>, LdpError> {
        let mut dp = LevelDp::<M>::new(tower, obs, n_max)?;
        let mut out = Vec::with_capacity(n_max);
        for _ in 0..n_max {
            dp.step();
            out.push(betas.iter().map(|&b| dp.log_partition(b)).collect());
        }
        Ok(out)
    }
    with_mode(
        mode,
        || run::<BigRational>(tower, obs, betas, n_max),
        || run::<LogValue>(tower, obs, betas, n_max),
    )
}

/// `log Z_n(β)` only at the listed `n` (increasing); outer index follows `ns`.
pub fn log_partitions_at(
    tower: &Tower,
    obs: &Observable,
    betas: &[f64],
    ns: &[usize],
    mode: NumericMode,
) -> Result<Vec<Vec<f64>>, LdpError> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LdpError::UnsortedSteps);
    }
    if ns.first().is_none_or(|&n| n == 0) {
        return Err(LdpError::ZeroSteps);
    }
    fn run<M: Mass>(
        tower: &Tower,
        obs: &Observable,
        betas: &[f64],
        ns: &[usize],
    ) -> Result<Vec<Vec<f64>>, LdpError> {
        let mut dp = LevelDp::<M>::new(tower, obs, *ns.last().expect("nonempty"))?;
        let mut out = Vec::with_capacity(ns.len());
        for &n in ns {
            dp.run_to(n);
            out.push(betas.par_iter().map(|&b| dp.log_partition(b)).collect());
        }
        Ok(out)
    }
    with_mode(
        mode,
        || run::<BigRational>(tower, obs, betas, ns),
        || run::<LogValue>(tower, obs, betas, ns),
    )
}

/// Pressure estimate `(log Z_n - log Z_m) / (n - m)` with `m = n / 2`, which
/// cancels the `O(1/n)` boundary term of `(1/n) log Z_n`.
pub fn extrapolated_pressure(
    tower: &Tower,
    obs: &Observable,
    betas: &[f64],
    n: usize,
    mode: NumericMode,
) -> Result<Vec<f64>, LdpError> {
    if n < 2 {
        return Err(LdpError::ZeroSteps);
    }
    let m = n / 2;
    let z = log_partitions_at(tower, obs, betas, &[m, n], mode)?;
    Ok((0..betas.len())
        .map(|j| (z[1][j] - z[0][j]) / (n - m) as f64)
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct MonteCarloOptions {
    pub samples: u64,
    pub seed: u64,
    /// Two-sided confidence level of the reported Wilson interval.
    pub confidence: f64,
    /// Samples per independently seeded substream.
    pub chunk: u64,
}

impl MonteCarloOptions {
    pub fn new(samples: u64, seed: u64) -> Self {
        MonteCarloOptions {
            samples,
            seed,
            confidence: 0.95,
            chunk: 1 << 16,
        }
    }
}

/// Wilson score interval for `hits / n` at the given two-sided confidence.
pub fn wilson_interval(hits: u64, n: u64, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + confidence / 2.0);
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Builds a Monte Carlo result from raw counts.
pub fn monte_carlo_result(
    query: LevelSetQuery,
    hits: u64,
    samples: u64,
    confidence: f64,
) -> LevelSetResult {
    let p = hits as f64 / samples as f64;
    let (ci_low, ci_high) = wilson_interval(hits, samples, confidence);
    let method = Method::MonteCarlo {
        samples,
        hits,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
        confidence,
        ci_low,
        ci_high,
    };
    let measure = if hits == 0 {
        NumberValue::zero()
    } else {
        NumberValue::from_ln(p.ln())
    };
    LevelSetResult::new(query, measure, method, NumberValue::zero())
}

/// Runs `count` seeded chunks in parallel and sums their hit counts. The
/// total depends only on `(seed, samples, chunk)`.
pub(crate) fn chunked_hits<F>(opts: &MonteCarloOptions, per_chunk: F) -> u64
where
    F: Fn(&mut ChaCha8Rng, u64) -> u64 + Sync,
{
    let chunk = opts.chunk.max(1);
    let chunks = opts.samples.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c);
            let size = chunk.min(opts.samples - c * chunk);
            per_chunk(&mut rng, size)
        })
        .sum()
}

/// Uniform draw on `(0, 1]`.
pub(crate) fn unit_open_closed(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Monte Carlo estimate of a level-set measure from symbolic tower orbits.
///
/// Each base point is located in its level cell by comparing with the
/// heights. With linear branches the image of a uniform point of a returning
/// cell is uniform on the base and independent of the past, so a fresh draw
/// is taken after each return; custom branches are applied explicitly.
pub fn monte_carlo_levelset(
    tower: &Tower,
    obs: &Observable,
    query: &LevelSetQuery,
    opts: MonteCarloOptions,
) -> Result<LevelSetResult, LdpError> {
    query.validate()?;
    if opts.samples == 0 {
        return Err(LdpError::ZeroSteps);
    }
    let len = query.n + obs.depth() - 1;
    let tower = tower.extended(len)?;
    let ln_levels: &[f64] = &tower.ln_levels()[..=len];
    let denom = obs.denominator();
    let branches = &tower.distortion().branches;

    // Index of the first level strictly below x, searched among 1..=rem.
    let return_time = |ln_x: f64, rem: usize| -> Option<usize> {
        let k = 1 + ln_levels[1..=rem].partition_point(|&l| l >= ln_x);
        (k <= rem).then_some(k)
    };

    let hits = if obs.depth() == 1 {
        let mut climb_prefix = vec![0i64; len + 1];
        for k in 0..len {
            climb_prefix[k + 1] = climb_prefix[k] + obs.scaled(&[Cell::climb(k)]);
        }
        let ret_val: Vec<i64> = (0..len).map(|k| obs.scaled(&[Cell::ret(k)])).collect();
        chunked_hits(&opts, |rng, size| {
            let mut hits = 0;
            for _ in 0..size {
                let mut x = unit_open_closed(rng);
                let mut rem = query.n;
                let mut s = 0i64;
                while rem > 0 {
                    match return_time(x.ln(), rem) {
                        Some(k) => {
                            s += climb_prefix[k - 1] + ret_val[k - 1];
                            rem -= k;
                            x = match branches {
                                BranchMaps::Linear => unit_open_closed(rng),
                                BranchMaps::Custom(g) => g.apply(x, k),
                            };
                        }
                        None => {
                            s += climb_prefix[rem];
                            rem = 0;
                        }
                    }
                }
                if query.accepts_scaled(s, denom) {
                    hits += 1;
                }
            }
            hits
        })
    } else {
        chunked_hits(&opts, |rng, size| {
            let mut hits = 0;
            let mut cells = Vec::with_capacity(len);
            for _ in 0..size {
                cells.clear();
                let mut x = unit_open_closed(rng);
                while cells.len() < len {
                    let rem = len - cells.len();
                    match return_time(x.ln(), rem) {
                        Some(k) => {
                            cells.extend((0..k - 1).map(Cell::climb));
                            cells.push(Cell::ret(k - 1));
                            x = match branches {
                                BranchMaps::Linear => unit_open_closed(rng),
                                BranchMaps::Custom(g) => g.apply(x, k),
                            };
                        }
                        None => cells.extend((0..rem).map(Cell::climb)),
                    }
                }
                let s: Rational64 = (0..query.n).map(|i| obs.value(&cells[i..])).sum();
                if query.accepts(s) {
                    hits += 1;
                }
            }
            hits
        })
    };
    Ok(monte_carlo_result(
        *query,
        hits,
        opts.samples,
        opts.confidence,
    ))
}

/// Smallest and largest possible value of `S_nψ / n` bounds: `[min ψ, max ψ]`.
pub fn observable_range(obs: &Observable) -> (Rational64, Rational64) {
    (obs.min_value(), obs.max_value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::number::parse_rational;
    use crate::tower::{HeightSequence, LevelSet};
    use num_traits::{One, Zero};

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn geometric_half() -> Tower {
        Tower::new(
            HeightSequence::geometric(parse_rational("1/2").unwrap()).unwrap(),
            4,
        )
        .unwrap()
    }

    fn level0() -> Observable {
        Observable::level_indicator(LevelSet::Finite([0].into()))
    }

    fn block8() -> Tower {
        Tower::new(HeightSequence::block_exp(8, 1).unwrap(), 8).unwrap()
    }

    #[test]
    fn dp_khinchin_two_steps() {
        let q = LevelSetQuery::at_least(2, r(1, 1), false);
        let res =
            levelset_measure_dp(&geometric_half(), &level0(), &q, NumericMode::Rational).unwrap();
        assert_eq!(res.measure, NumberValue::ratio(1, 2));
        assert!((res.log_measure - (0.5f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn dp_full_base_for_zero_threshold() {
        let q = LevelSetQuery::at_least(7, Rational64::zero(), false);
        let res =
            levelset_measure_dp(&geometric_half(), &level0(), &q, NumericMode::Rational).unwrap();
        assert_eq!(res.measure, NumberValue::one());
        assert_eq!(res.log_measure, 0.0);
    }

    #[test]
    fn counterexample_emptiness_by_dp() {
        let cex = Observable::level_indicator(LevelSet::BlockUnion { base: 8 });
        let q = LevelSetQuery::at_least(8, r(7, 16), true);
        let res = levelset_measure_dp(&block8(), &cex, &q, NumericMode::default()).unwrap();
        assert!(res.is_empty());
        assert_eq!(res.log_measure, f64::NEG_INFINITY);
    }

    #[test]
    fn counterexample_lower_bound_by_enumeration() {
        let cex = Observable::level_indicator(LevelSet::BlockUnion { base: 8 });
        let q = LevelSetQuery::at_least(16, r(1, 2), false);
        let res = levelset_measure_enum(&block8(), &cex, &q, EnumQueryOptions::default()).unwrap();
        assert!(res.log_measure >= -64.0);
        assert!(res.normalized >= -4.0);
    }

    #[test]
    fn rational_mode_rejects_log_towers() {
        let q = LevelSetQuery::at_least(2, r(1, 2), false);
        let err = levelset_measure_dp(&block8(), &level0(), &q, NumericMode::Rational).unwrap_err();
        assert!(matches!(err, LdpError::Number(NumberError::NotExact(_))));
    }

    #[test]
    fn dp_requires_depth_one() {
        let mut table = BTreeMap::new();
        table.insert(vec![Cell::climb(0), Cell::climb(1)], Rational64::one());
        let obs = Observable::cylinder("pair", 2, table, Rational64::zero());
        let q = LevelSetQuery::at_least(3, Rational64::zero(), false);
        assert_eq!(
            levelset_measure_dp(&geometric_half(), &obs, &q, NumericMode::Rational).unwrap_err(),
            LdpError::NotDepthOne(2)
        );
    }

    #[test]
    fn zero_observable_strict_positive_threshold_is_empty() {
        let q = LevelSetQuery::at_least(6, r(1, 3), true);
        let res = levelset_measure_enum(
            &geometric_half(),
            &Observable::zero(),
            &q,
            EnumQueryOptions::default(),
        )
        .unwrap();
        assert!(res.is_empty());
    }

    #[test]
    fn query_comparisons_are_exact() {
        let q = LevelSetQuery::at_least(16, r(7, 16), true);
        assert!(!q.accepts(r(7, 1)));
        assert!(q.accepts(r(15, 2)));
        let q = q.with_n(16);
        let nonstrict = LevelSetQuery { strict: false, ..q };
        assert!(nonstrict.accepts(r(7, 1)));
        let w = LevelSetQuery::window(4, r(1, 4), r(1, 2), false).unwrap();
        assert!(w.accepts(r(1, 1)) && w.accepts(r(2, 1)) && !w.accepts(r(3, 1)));
        assert!(LevelSetQuery::window(4, r(1, 2), r(1, 4), false).is_err());
        assert!(LevelSetQuery::at_most(4, r(1, 2), true).accepts(r(1, 1)));
    }

    #[test]
    fn pressure_at_zero_is_zero() {
        for n in [1, 5, 17] {
            let p =
                pressure_dp(&geometric_half(), &level0(), 0.0, n, NumericMode::Rational).unwrap();
            assert_eq!(p, 0.0);
            let p = pressure_dp(&block8(), &level0(), 0.0, n, NumericMode::default()).unwrap();
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_converges_for_geometric_tower() {
        let p = pressure_dp(
            &geometric_half(),
            &level0(),
            1.0,
            40,
            NumericMode::default(),
        )
        .unwrap();
        let limit = ((1.0 + std::f64::consts::E) / 2.0).ln();
        assert!((p - limit).abs() < 0.05);
        let lower = pressure_dp(
            &geometric_half(),
            &level0(),
            -3.0,
            40,
            NumericMode::default(),
        )
        .unwrap();
        let lowest = pressure_dp(
            &geometric_half(),
            &level0(),
            -6.0,
            40,
            NumericMode::default(),
        )
        .unwrap();
        assert!(lowest < lower && lower < 0.0);
    }

    #[test]
    fn curve_tail_extrema() {
        let q = LevelSetQuery::at_least(1, r(3, 4), false);
        let c = ldp_curve(
            &geometric_half(),
            &level0(),
            q,
            &[4, 8, 16, 24],
            NumericMode::Rational,
        )
        .unwrap();
        assert_eq!(c.points.len(), 4);
        let last = c.points.last().unwrap();
        assert_eq!(last.tail_min, last.normalized);
        assert!(c.points[0].tail_min <= c.points[0].normalized);
        assert!(ldp_curve(
            &geometric_half(),
            &level0(),
            q,
            &[4, 4],
            NumericMode::Rational
        )
        .is_err());
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(500, 1000, 0.95);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!((hi - lo - 2.0 * 1.959964 * (0.25f64 / 1000.0).sqrt()).abs() < 1e-3);
        let (lo, hi) = wilson_interval(0, 1000, 0.95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
    }

    #[test]
    fn monte_carlo_matches_exact_value() {
        let q = LevelSetQuery::at_least(2, r(1, 1), false);
        let mc = monte_carlo_levelset(
            &geometric_half(),
            &level0(),
            &q,
            MonteCarloOptions::new(200_000, 7),
        )
        .unwrap();
        match mc.method {
            Method::MonteCarlo {
                ci_low, ci_high, ..
            } => assert!(ci_low <= 0.5 && 0.5 <= ci_high),
            _ => unreachable!(),
        }
        let q0 = LevelSetQuery::at_least(5, Rational64::zero(), false);
        let mc = monte_carlo_levelset(
            &geometric_half(),
            &level0(),
            &q0,
            MonteCarloOptions::new(10_000, 1),
        )
        .unwrap();
        assert_eq!(mc.log_measure, 0.0);
        let cex = Observable::level_indicator(LevelSet::BlockUnion { base: 8 });
        let qe = LevelSetQuery::at_least(8, r(7, 16), true);
        let mc =
            monte_carlo_levelset(&block8(), &cex, &qe, MonteCarloOptions::new(10_000, 3)).unwrap();
        assert!(mc.is_empty());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let q = LevelSetQuery::at_least(6, r(1, 2), false);
        let a = monte_carlo_levelset(
            &geometric_half(),
            &level0(),
            &q,
            MonteCarloOptions::new(50_000, 11),
        )
        .unwrap();
        let b = monte_carlo_levelset(
            &geometric_half(),
            &level0(),
            &q,
            MonteCarloOptions::new(50_000, 11),
        )
        .unwrap();
        assert_eq!(a.method, b.method);
    }
}
