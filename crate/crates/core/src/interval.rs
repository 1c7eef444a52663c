//! Intermittent interval maps and their towers.
//!
//! * [`PiecewiseLinearMap`]: the countable piecewise-linear map with
//!   breakpoints `1 = β_0 > β_1 > … → 0`. The cell `(β_1, 1]` maps affinely
//!   onto `(0, 1]`, and `(β_{k+1}, β_k]` onto `(β_k, β_{k-1}]` for `k ≥ 1`.
//! * [`SmoothIntermittentMap`]: `f(x) = x + x^{1+s} mod 1`.
//!
//! Both lift to the sequence tower with heights `a_k = β_k` through
//! `π(x, k) = f^k(x)`. Cell `c` below always means `(β_{c+1}, β_c]`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ldp::{
    chunked_hits, monte_carlo_result, unit_open_closed, LevelSetQuery, LevelSetResult, Method,
    MonteCarloOptions,
};
use crate::number::{rational_to_f64, NumberValue};
use crate::tower::{
    BranchMaps, DistortionProfile, HeightSequence, ReturnBranch, Tower, TowerError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("breakpoints must strictly decrease after index {0}")]
    NotDecreasing(usize),
    #[error("parameter s = {0} must lie in (0, 1)")]
    BadParameter(f64),
    #[error("bisection failed to bracket the root at level {0}")]
    NoConvergence(usize),
    #[error("point {0} lies outside (0, 1]")]
    OutOfDomain(String),
    #[error("exact evaluation needs breakpoints beyond the materialized depth {0}")]
    DepthExceeded(usize),
    #[error("breakpoints are not exact rationals")]
    NotExact,
    #[error("this observable has no exact level-set engine")]
    UnsupportedObservable,
    #[error("tower does not lift this map: {0}")]
    LiftUndefined(String),
    #[error(transparent)]
    Tower(#[from] TowerError),
}

/// Interval maps that can be iterated in floating point.
pub trait IntervalMap: Send + Sync {
    fn apply(&self, x: f64) -> f64;
    /// Index `c` with `x ∈ (β_{c+1}, β_c]`.
    fn cell_of(&self, x: f64) -> usize;
    fn name(&self) -> String;
}

/// Depth of the floating breakpoint table; below `β_K` points are treated as
/// lying in cell `K - 1`.
const FLOAT_DEPTH_CAP: usize = 1 << 16;
const FLOAT_LN_FLOOR: f64 = -60.0;

fn float_table(ln_beta: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut k = 1;
    while k < FLOAT_DEPTH_CAP && *out.last().unwrap() > FLOAT_LN_FLOOR {
        out.push(ln_beta(k));
        k += 1;
    }
    out
}

fn locate(ln_table: &[f64], x: f64) -> usize {
    // first k ≥ 1 with ln β_k < ln x, minus one
    let lx = x.ln();
    let k = 1 + ln_table[1..].partition_point(|&l| l >= lx);
    (k - 1).min(ln_table.len() - 2)
}

#[derive(Clone, Debug)]
pub struct PiecewiseLinearMap {
    heights: HeightSequence,
    exact: Option<Vec<BigRational>>,
    beta: Vec<f64>,
    ln_beta: Vec<f64>,
}

impl PiecewiseLinearMap {
    /// Materializes `β_0..=β_depth` exactly when the sequence is rational.
    pub fn new(heights: HeightSequence, exact_depth: usize) -> Result<Self, IntervalError> {
        let ln_beta = float_table(|k| heights.ln_value(k));
        for k in 0..ln_beta.len() - 1 {
            if ln_beta[k + 1] >= ln_beta[k] {
                return Err(IntervalError::NotDecreasing(k));
            }
        }
        let exact = if heights.is_exact() {
            let v: Vec<BigRational> = (0..=exact_depth)
                .map(|k| heights.value(k).as_exact().cloned().expect("exact"))
                .collect();
            if let Some(k) = v.windows(2).position(|w| w[1] >= w[0]) {
                return Err(IntervalError::NotDecreasing(k));
            }
            Some(v)
        } else {
            None
        };
        let beta = ln_beta.iter().map(|l| l.exp()).collect();
        Ok(PiecewiseLinearMap {
            heights,
            exact,
            beta,
            ln_beta,
        })
    }

    pub fn heights(&self) -> &HeightSequence {
        &self.heights
    }

    pub fn exact_depth(&self) -> Option<usize> {
        self.exact.as_ref().map(|v| v.len() - 1)
    }

    fn exact_beta(&self, k: usize) -> Result<&BigRational, IntervalError> {
        let v = self.exact.as_ref().ok_or(IntervalError::NotExact)?;
        v.get(k).ok_or(IntervalError::DepthExceeded(v.len() - 1))
    }

    /// `λ_k = (β_{k-1} - β_k)/(β_k - β_{k+1})` for `k ≥ 1`; `λ_0 = 1/(1 - β_1)`.
    pub fn slope_exact(&self, k: usize) -> Result<BigRational, IntervalError> {
        let b1 = self.exact_beta(k + 1)?;
        let b0 = self.exact_beta(k)?;
        if k == 0 {
            return Ok((b0 - b1).recip());
        }
        Ok((self.exact_beta(k - 1)? - b0) / (b0 - b1))
    }

    pub fn slope(&self, k: usize) -> f64 {
        let b = &self.beta;
        if k == 0 {
            1.0 / (1.0 - b[1])
        } else {
            (b[k - 1] - b[k]) / (b[k] - b[k + 1])
        }
    }

    pub fn cell_of_exact(&self, x: &BigRational) -> Result<usize, IntervalError> {
        if !x.is_positive() || *x > BigRational::one() {
            return Err(IntervalError::OutOfDomain(x.to_string()));
        }
        let mut k = 0;
        while x <= self.exact_beta(k + 1)? {
            k += 1;
        }
        Ok(k)
    }

    /// Exact branch evaluation.
    pub fn apply_exact(&self, x: &BigRational) -> Result<BigRational, IntervalError> {
        let k = self.cell_of_exact(x)?;
        let b_next = self.exact_beta(k + 1)?;
        if k == 0 {
            Ok((x - b_next) / (BigRational::one() - b_next))
        } else {
            Ok(self.slope_exact(k)? * (x - b_next) + self.exact_beta(k)?)
        }
    }

    /// Tower with heights `a_k = β_k` and linear return branches.
    pub fn lift_tower(&self, truncation: usize) -> Result<Tower, IntervalError> {
        Ok(Tower::new(self.heights.clone(), truncation)?)
    }
}

impl IntervalMap for PiecewiseLinearMap {
    fn apply(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = locate(&self.ln_beta, x);
        let b = &self.beta;
        if k == 0 {
            (x - b[1]) / (1.0 - b[1])
        } else {
            self.slope(k) * (x - b[k + 1]) + b[k]
        }
    }

    fn cell_of(&self, x: f64) -> usize {
        locate(&self.ln_beta, x)
    }

    fn name(&self) -> String {
        format!("piecewise_linear({})", self.heights.label())
    }
}

/// Piecewise-linear map from a decreasing breakpoint sequence.
pub fn build_takahashi(betas: HeightSequence) -> Result<PiecewiseLinearMap, IntervalError> {
    PiecewiseLinearMap::new(betas, 64)
}

/// `f(x) = x + x^{1+s} mod 1`, with `f(x*) = 1` at the discontinuity.
#[derive(Clone, Debug)]
pub struct SmoothIntermittentMap {
    s: f64,
    levels: Vec<f64>,
    ln_levels: Vec<f64>,
}

impl SmoothIntermittentMap {
    /// Preimage levels are materialized down to `a_depth`.
    pub fn new(s: f64, depth: usize) -> Result<Self, IntervalError> {
        let levels = mp_levels(s, depth)?;
        let ln_levels = levels.iter().map(|a| a.ln()).collect();
        Ok(SmoothIntermittentMap {
            s,
            levels,
            ln_levels,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `x*` with `x* + x*^{1+s} = 1`.
    pub fn discontinuity(&self) -> f64 {
        self.levels[1]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn derivative(&self, x: f64) -> f64 {
        1.0 + (1.0 + self.s) * x.powf(self.s)
    }

    /// Tower over the level sequence whose return branches are the true
    /// first-return maps `f^k` of this map.
    pub fn lift_tower(&self, truncation: usize) -> Result<Tower, IntervalError> {
        let values = self
            .ln_levels
            .iter()
            .map(|&l| NumberValue::from_ln(l))
            .collect::<Vec<_>>();
        let mut values = values;
        values[0] = NumberValue::one();
        let seq = HeightSequence::explicit(values)?;
        let branches = BranchMaps::Custom(Arc::new(self.clone()));
        let distortion = DistortionProfile {
            branches,
            ..DistortionProfile::linear()
        };
        Ok(Tower::with_distortion(
            seq,
            truncation.min(self.levels.len() - 1),
            distortion,
        )?)
    }
}

impl IntervalMap for SmoothIntermittentMap {
    fn apply(&self, x: f64) -> f64 {
        let y = x + x.powf(1.0 + self.s);
        if x > self.levels[1] {
            y - 1.0
        } else {
            y.min(1.0)
        }
    }

    fn cell_of(&self, x: f64) -> usize {
        locate(&self.ln_levels, x)
    }

    fn name(&self) -> String {
        format!("manneville_pomeau(s={})", self.s)
    }
}

impl ReturnBranch for SmoothIntermittentMap {
    fn apply(&self, x: f64, return_time: usize) -> f64 {
        let mut y = x;
        for _ in 0..return_time {
            y = IntervalMap::apply(self, y);
        }
        y
    }

    fn name(&self) -> String {
        IntervalMap::name(self)
    }
}

fn mp_levels(s: f64, depth: usize) -> Result<Vec<f64>, IntervalError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(IntervalError::BadParameter(s));
    }
    let mut out = Vec::with_capacity(depth + 1);
    out.push(1.0f64);
    for k in 0..depth {
        let target = out[k];
        let h = |y: f64| y + y.powf(1.0 + s) - target;
        let (mut lo, mut hi) = (0.0f64, target);
        if !(h(lo) < 0.0 && h(hi) > 0.0) {
            return Err(IntervalError::NoConvergence(k + 1));
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let y = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
        if !(y > 0.0 && y < target) || h(y).abs() > 1e-13 {
            return Err(IntervalError::NoConvergence(k + 1));
        }
        out.push(y);
    }
    Ok(out)
}

/// `a_0 = 1`, `a_{k+1} + a_{k+1}^{1+s} = a_k`, for `k ≤ depth`.
pub fn mp_level_sequence(s: f64, depth: usize) -> Result<HeightSequence, IntervalError> {
    let levels = mp_levels(s, depth)?;
    let values = levels
        .iter()
        .enumerate()
        .map(|(k, a)| {
            if k == 0 {
                NumberValue::one()
            } else {
                NumberValue::from_ln(a.ln())
            }
        })
        .collect();
    Ok(HeightSequence::explicit(values)?)
}

/// `s·k·a_k^s` at the given `k`; tends to 1 for the preimage sequence.
pub fn mp_scaling_trend(s: f64, ks: &[usize]) -> Result<Vec<f64>, IntervalError> {
    let depth = ks.iter().copied().max().unwrap_or(0);
    let levels = mp_levels(s, depth)?;
    Ok(ks
        .iter()
        .map(|&k| s * k as f64 * levels[k].powf(s))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntervalObservable {
    Constant {
        #[serde(serialize_with = "ser_r64")]
        c: Rational64,
    },
    /// Indicator of a finite union of cells.
    Cells {
        cells: BTreeSet<usize>,
    },
    /// Indicator of `(lo, hi]`.
    Indicator {
        lo: f64,
        hi: f64,
    },
    Identity,
}

fn ser_r64<S: serde::Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl IntervalObservable {
    /// Indicator of the top cell `(β_1, 1]`.
    pub fn top_cell() -> Self {
        IntervalObservable::Cells { cells: [0].into() }
    }

    pub fn eval(&self, map: &dyn IntervalMap, x: f64) -> f64 {
        match self {
            IntervalObservable::Constant { c } => *c.numer() as f64 / *c.denom() as f64,
            IntervalObservable::Cells { cells } => {
                if x > 0.0 && cells.contains(&map.cell_of(x)) {
                    1.0
                } else {
                    0.0
                }
            }
            IntervalObservable::Indicator { lo, hi } => {
                if x > *lo && x <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            IntervalObservable::Identity => x,
        }
    }

    fn eval_exact(
        &self,
        map: &PiecewiseLinearMap,
        x: &BigRational,
    ) -> Result<BigRational, IntervalError> {
        Ok(match self {
            IntervalObservable::Constant { c } => {
                BigRational::new((*c.numer()).into(), (*c.denom()).into())
            }
            IntervalObservable::Cells { cells } => {
                if x.is_positive() && cells.contains(&map.cell_of_exact(x)?) {
                    BigRational::one()
                } else {
                    BigRational::zero()
                }
            }
            IntervalObservable::Identity => x.clone(),
            IntervalObservable::Indicator { .. } => {
                return Err(IntervalError::UnsupportedObservable)
            }
        })
    }

    /// Smallest value, for the trivial `a ≤ min φ` case.
    pub fn min_value(&self) -> f64 {
        match self {
            IntervalObservable::Constant { c } => *c.numer() as f64 / *c.denom() as f64,
            _ => 0.0,
        }
    }
}

/// `(1/n) S_nφ(x0)` in floating point.
pub fn orbit_birkhoff(map: &dyn IntervalMap, phi: &IntervalObservable, x0: f64, n: usize) -> f64 {
    let mut x = x0;
    let mut s = 0.0;
    for _ in 0..n {
        s += phi.eval(map, x);
        x = map.apply(x);
    }
    s / n as f64
}

/// `(1/n) S_nφ(x0)` along exact branch evaluations.
pub fn orbit_birkhoff_exact(
    map: &PiecewiseLinearMap,
    phi: &IntervalObservable,
    x0: &BigRational,
    n: usize,
) -> Result<BigRational, IntervalError> {
    let mut x = x0.clone();
    let mut s = BigRational::zero();
    for i in 0..n {
        s += phi.eval_exact(map, &x)?;
        if i + 1 < n {
            x = map.apply_exact(&x)?;
        }
    }
    Ok(s / BigRational::from_integer((n as i64).into()))
}

/// Monte Carlo level-set measure for the map itself: `x` uniform on `(0, 1]`,
/// iterated `n` times in floating point.
pub fn mc_ldp_interval(
    map: &dyn IntervalMap,
    phi: &IntervalObservable,
    query: &LevelSetQuery,
    opts: MonteCarloOptions,
) -> Result<LevelSetResult, IntervalError> {
    let n = query.n;
    let hits = match phi {
        IntervalObservable::Constant { .. } | IntervalObservable::Cells { .. } => {
            // integer-valued sums: compare exactly
            let (num, den) = match phi {
                IntervalObservable::Constant { c } => (*c.numer(), *c.denom()),
                _ => (1, 1),
            };
            chunked_hits(&opts, |rng, size| {
                let mut hits = 0;
                for _ in 0..size {
                    let mut x = unit_open_closed(rng);
                    let mut s = 0i64;
                    for _ in 0..n {
                        if phi.eval(map, x) != 0.0 {
                            s += num;
                        }
                        x = map.apply(x);
                    }
                    if query.accepts_scaled(s, den) {
                        hits += 1;
                    }
                }
                hits
            })
        }
        _ => {
            let a = *query.a.numer() as f64 / *query.a.denom() as f64;
            chunked_hits(&opts, |rng, size| {
                let mut hits = 0;
                for _ in 0..size {
                    let avg = orbit_birkhoff(map, phi, unit_open_closed(rng), n);
                    let ok = match query.side {
                        crate::ldp::Side::AtLeast => {
                            if query.strict {
                                avg > a
                            } else {
                                avg >= a
                            }
                        }
                        crate::ldp::Side::AtMost => {
                            if query.strict {
                                avg < a
                            } else {
                                avg <= a
                            }
                        }
                        crate::ldp::Side::Window { lo, hi } => {
                            let (lo, hi) = (rational_f64(lo), rational_f64(hi));
                            if query.strict {
                                avg > lo && avg < hi
                            } else {
                                avg >= lo && avg <= hi
                            }
                        }
                    };
                    if ok {
                        hits += 1;
                    }
                }
                hits
            })
        }
    };
    Ok(monte_carlo_result(
        *query,
        hits,
        opts.samples,
        opts.confidence,
    ))
}

fn rational_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Where the image of a cylinder currently lies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Image {
    /// All of `(0, 1]`.
    Full,
    Cell(usize),
}

/// Exact level-set measure for the piecewise-linear map, by following the
/// images of cylinder intervals under `f`.
///
/// A cylinder whose image is all of `(0, 1]` splits along the cells; the
/// part below `β_R` with `R` = remaining steps + largest observed cell + 1
/// never reaches an observed cell again and is settled at once.
pub fn levelset_measure_interval(
    map: &PiecewiseLinearMap,
    phi: &IntervalObservable,
    query: &LevelSetQuery,
) -> Result<LevelSetResult, IntervalError> {
    let (cells, constant) = match phi {
        IntervalObservable::Cells { cells } => (cells.clone(), None),
        IntervalObservable::Constant { c } => (BTreeSet::new(), Some(*c)),
        _ => return Err(IntervalError::UnsupportedObservable),
    };
    let value = |c: usize| -> Rational64 {
        match constant {
            Some(v) => v,
            None => Rational64::from_integer(cells.contains(&c) as i64),
        }
    };
    let reach = cells.iter().next_back().map_or(0, |m| m + 1);
    let n = query.n;
    let mut settled = NumberValue::zero();
    let mut states: BTreeMap<(Image, Rational64), NumberValue> = BTreeMap::new();
    states.insert((Image::Full, Rational64::zero()), NumberValue::one());
    let beta = |k: usize| -> Result<NumberValue, IntervalError> {
        match &map.exact {
            Some(_) => Ok(NumberValue::Exact(map.exact_beta(k)?.clone())),
            None => Ok(NumberValue::from_ln(map.heights.ln_value(k))),
        }
    };
    for step in 0..n {
        let remaining = n - step;
        let mut next: BTreeMap<(Image, Rational64), NumberValue> = BTreeMap::new();
        let mut push = |key, m: NumberValue| {
            let e = next.entry(key).or_insert_with(NumberValue::zero);
            *e = e.add(&m);
        };
        for ((img, s), m) in states {
            match img {
                Image::Cell(c) => {
                    let to = if c == 0 {
                        Image::Full
                    } else {
                        Image::Cell(c - 1)
                    };
                    push((to, s + value(c)), m);
                }
                Image::Full => {
                    let cut = remaining + reach;
                    for c in 0..cut {
                        // preimage measure scales with the piece length
                        let piece = beta(c)?.checked_sub(&beta(c + 1)?).expect("decreasing");
                        let to = if c == 0 {
                            Image::Full
                        } else {
                            Image::Cell(c - 1)
                        };
                        push((to, s + value(c)), m.mul(&piece));
                    }
                    let low = m.mul(&beta(cut)?);
                    let total = s + value(cut) * Rational64::from_integer(remaining as i64);
                    if query.accepts(total) {
                        settled = settled.add(&low);
                    }
                }
            }
        }
        states = next;
    }
    let mut measure = settled;
    for ((_, s), m) in states {
        if query.accepts(s) {
            measure = measure.add(&m);
        }
    }
    let log_measure = measure.ln().min(0.0);
    Ok(LevelSetResult {
        query: *query,
        normalized: log_measure / n as f64,
        log_measure,
        measure,
        method: Method::ExactDp,
        discarded_mass_bound: NumberValue::zero(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftReport {
    pub samples: usize,
    pub exact: bool,
    /// `max |f(π(z)) - π(T(z))|` over the sampled tower points `z`.
    pub max_defect: f64,
    pub returns_checked: usize,
}

/// Samples tower points `(x, k)` and compares `f(π(x, k))` with `π(T(x, k))`,
/// where `T` is the tower map with its own linear return branches.
pub fn lift_consistency(
    map: &PiecewiseLinearMap,
    tower: &Tower,
    samples: usize,
    seed: u64,
) -> Result<LiftReport, IntervalError> {
    if !tower.distortion().branches.is_linear() {
        return Err(IntervalError::LiftUndefined(
            "tower branches are not linear".into(),
        ));
    }
    let depth = map
        .exact_depth()
        .unwrap_or(48)
        .min(tower.truncation())
        .min(48);
    for k in 0..=depth {
        let (a, b) = (tower.ln_level(k), map.heights.ln_value(k));
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(IntervalError::LiftUndefined(format!(
                "level {k} differs from breakpoint {k}"
            )));
        }
    }
    let max_level = depth.saturating_sub(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_defect: f64 = 0.0;
    let mut returns_checked = 0;
    let exact = map.exact.is_some() && tower.is_exact();
    for _ in 0..samples {
        let k = rng.gen_range(0..=max_level);
        let u: u64 = rng.gen_range(1..=1u64 << 32);
        if exact {
            let frac = BigRational::new(u.into(), (1u64 << 32).into());
            let x = map.exact_beta(k)? * frac;
            let mut pi = x.clone();
            for _ in 0..k {
                pi = map.apply_exact(&pi)?;
            }
            let lhs = map.apply_exact(&pi)?;
            let (b0, b1) = (map.exact_beta(k)?, map.exact_beta(k + 1)?);
            let rhs = if x <= *b1 {
                let mut y = x.clone();
                for _ in 0..k + 1 {
                    y = map.apply_exact(&y)?;
                }
                y
            } else {
                returns_checked += 1;
                (&x - b1) / (b0 - b1)
            };
            max_defect = max_defect.max(rational_to_f64(&(lhs - rhs).abs()));
        } else {
            let x = map.beta[k] * (u as f64 / (1u64 << 32) as f64);
            let mut pi = x;
            for _ in 0..k {
                pi = map.apply(pi);
            }
            let lhs = map.apply(pi);
            let rhs = if x <= map.beta[k + 1] {
                let mut y = x;
                for _ in 0..k + 1 {
                    y = map.apply(y);
                }
                y
            } else {
                returns_checked += 1;
                (x - map.beta[k + 1]) / (map.beta[k] - map.beta[k + 1])
            };
            max_defect = max_defect.max((lhs - rhs).abs());
        }
    }
    Ok(LiftReport {
        samples,
        exact,
        max_defect,
        returns_checked,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MapDiagnostics {
    pub map: String,
    /// Smallest sampled derivative of a full return branch `f^k` on cell `k - 1`.
    pub min_return_expansion: f64,
    /// Largest sampled ratio `(f^k)'(x) / (f^k)'(y)` within one cell.
    pub max_distortion_ratio: f64,
    pub cells_checked: usize,
}

/// Sampled expansion and distortion of the return branches of the MP map.
pub fn mp_diagnostics(
    map: &SmoothIntermittentMap,
    cells: usize,
    per_cell: usize,
    seed: u64,
) -> MapDiagnostics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = map.levels();
    let cells = cells.min(levels.len() - 1);
    let mut min_exp = f64::INFINITY;
    let mut max_ratio: f64 = 1.0;
    for c in 0..cells {
        let (lo, hi) = (levels[c + 1], levels[c]);
        let ln_deriv = |x: f64| {
            let mut y = x;
            let mut acc = 0.0;
            for _ in 0..=c {
                acc += map.derivative(y).ln();
                y = IntervalMap::apply(map, y);
            }
            acc
        };
        let vals: Vec<f64> = (0..per_cell.max(2))
            .map(|_| ln_deriv(lo + (hi - lo) * unit_open_closed(&mut rng)))
            .collect();
        let (mn, mx) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        min_exp = min_exp.min(mn.exp());
        max_ratio = max_ratio.max((mx - mn).exp());
    }
    MapDiagnostics {
        map: IntervalMap::name(map),
        min_return_expansion: min_exp,
        max_distortion_ratio: max_ratio,
        cells_checked: cells,
    }
}
