//! Shape of a height sequence: tail decay class, bounded slope, nonsteepness.
//!
//! All of these are statements about limits, so every verdict here is about
//! a finite horizon only and carries that horizon with it.

use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fmt_ext::{ser_ext, ser_ext_vec};
use crate::number::{log_sum_exp, rational_to_f64};
use crate::tower::HeightSequence;

pub const MIN_HORIZON: usize = 16;
/// Last-quartile mean threshold for "the curve tends to 0".
pub const NONSTEEP_TOL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("horizon {0} is below the minimum of {MIN_HORIZON}")]
    HorizonTooShort(usize),
    #[error("l_max must be at least 1")]
    BadLMax,
    #[error("schedule {0} is not sublinear")]
    ScheduleNotSublinear(String),
    #[error("unknown schedule '{0}'")]
    UnknownSchedule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    WitnessedOnHorizon,
    RefutedOnHorizon,
    Inconclusive,
}

/// Rule `k ↦ l_k` for the nonsteep search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant(usize),
    /// `⌈√k⌉`
    Sqrt,
    /// `⌈k / log(k + 2)⌉`
    KOverLog,
    /// `⌈f·k⌉`; linear, so never a valid schedule. Kept so that configs
    /// asking for it get a clear error.
    Fraction(f64),
}

impl Schedule {
    pub fn defaults() -> Vec<Schedule> {
        let mut v: Vec<Schedule> = (1..=8).map(Schedule::Constant).collect();
        v.push(Schedule::Sqrt);
        v.push(Schedule::KOverLog);
        v
    }

    pub fn l(&self, k: usize) -> usize {
        let kf = k as f64;
        let l = match *self {
            Schedule::Constant(l) => return l,
            Schedule::Sqrt => kf.sqrt().ceil(),
            Schedule::KOverLog => (kf / (kf + 2.0).ln()).ceil(),
            Schedule::Fraction(f) => (f * kf).ceil(),
        };
        (l as usize).max(1)
    }

    pub fn label(&self) -> String {
        match self {
            Schedule::Constant(l) => format!("const:{l}"),
            Schedule::Sqrt => "sqrt".into(),
            Schedule::KOverLog => "k/log".into(),
            Schedule::Fraction(f) => format!("frac:{f}"),
        }
    }

    fn check(&self) -> Result<(), ConditionError> {
        match self {
            Schedule::Constant(0) | Schedule::Fraction(_) => {
                Err(ConditionError::ScheduleNotSublinear(self.label()))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = ConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let sched = match s {
            "sqrt" => Schedule::Sqrt,
            "k/log" | "klog" => Schedule::KOverLog,
            _ => {
                if let Some(v) = s.strip_prefix("const:") {
                    Schedule::Constant(
                        v.parse()
                            .map_err(|_| ConditionError::UnknownSchedule(s.into()))?,
                    )
                } else if let Some(v) = s.strip_prefix("frac:") {
                    Schedule::Fraction(
                        v.parse()
                            .map_err(|_| ConditionError::UnknownSchedule(s.into()))?,
                    )
                } else if let Ok(l) = s.parse() {
                    Schedule::Constant(l)
                } else {
                    return Err(ConditionError::UnknownSchedule(s.into()));
                }
            }
        };
        sched.check()?;
        Ok(sched)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundedSlopeWitness {
    pub l: usize,
    /// `min_{k ≤ horizon} (a_k - a_{k+l}) / a_k`.
    pub c: f64,
    /// The same minimum computed exactly, for rational sequences.
    pub c_exact: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleCurve {
    pub schedule: Schedule,
    pub label: String,
    /// `(1/k) log((a_k - a_{k+l_k}) / a_k)` for `k = 1..=horizon`.
    #[serde(serialize_with = "ser_ext_vec")]
    pub curve: Vec<f64>,
    #[serde(serialize_with = "ser_ext")]
    pub last_quartile_mean: f64,
    #[serde(serialize_with = "ser_ext")]
    pub theil_sen_slope: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct NonsteepReport {
    pub horizon: usize,
    pub curves: Vec<ScheduleCurve>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct Checkpoint {
    pub k: usize,
    #[serde(serialize_with = "ser_ext")]
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeReport {
    pub sequence: String,
    pub horizon: usize,
    pub summable: Verdict,
    /// `log Σ_{j ≤ k} a_j` at doubling checkpoints.
    pub partial_sums: Vec<Checkpoint>,
    /// `max_{H/2 ≤ k ≤ H} (log a_k)/k`, a finite-horizon limsup estimate.
    #[serde(serialize_with = "ser_ext")]
    pub tail_log_rate: f64,
    /// Same statistic over `[k/2, k]` at doubling checkpoints.
    pub tail_log_rate_trend: Vec<Checkpoint>,
    /// `-Δ log a_k / Δ log k` between `H/4` and `H`.
    #[serde(serialize_with = "ser_ext")]
    pub loglog_exponent: f64,
    pub superexp: Verdict,
    /// `min_{c ≤ k ≤ H} -(log a_k)/k` at doubling checkpoints `c`.
    pub decay_rate_trend: Vec<Checkpoint>,
    pub bounded_slope_witness: Option<BoundedSlopeWitness>,
    pub nonsteep: Option<NonsteepReport>,
}

/// `ln a_k` for `k ≤ upto`.
fn ln_heights(seq: &HeightSequence, upto: usize) -> Vec<f64> {
    (0..=upto).map(|k| seq.ln_value(k)).collect()
}

fn ratio(ln: &[f64], k: usize, l: usize) -> f64 {
    -(ln[k + l] - ln[k]).exp_m1()
}

fn doubling_checkpoints(horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = MIN_HORIZON;
    while k < horizon {
        out.push(k);
        k *= 2;
    }
    out.push(horizon);
    out
}

/// Summability, exponential-rate and super-exponential diagnostics.
pub fn classify_tail(seq: &HeightSequence, horizon: usize) -> Result<ShapeReport, ConditionError> {
    if horizon < MIN_HORIZON {
        return Err(ConditionError::HorizonTooShort(horizon));
    }
    let ln = ln_heights(seq, horizon);
    let checkpoints = doubling_checkpoints(horizon);

    let partial_sums = checkpoints
        .iter()
        .map(|&k| Checkpoint {
            k,
            value: log_sum_exp(&ln[..=k]),
        })
        .collect();

    let rate_over = |lo: usize, hi: usize| {
        (lo.max(1)..=hi)
            .map(|k| ln[k] / k as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let tail_log_rate = rate_over(horizon / 2, horizon);
    let tail_log_rate_trend = checkpoints
        .iter()
        .map(|&k| Checkpoint {
            k,
            value: rate_over(k / 2, k),
        })
        .collect();

    let q = horizon / 4;
    let loglog_exponent = -(ln[horizon] - ln[q]) / ((horizon as f64).ln() - (q as f64).ln());

    let summable = if tail_log_rate < -1e-3 || loglog_exponent > 1.1 {
        Verdict::WitnessedOnHorizon
    } else if loglog_exponent <= 1.0 + 1e-9 {
        Verdict::RefutedOnHorizon
    } else {
        Verdict::Inconclusive
    };

    // u(k) = -(log a_k)/k; tail minima over [c, H].
    let mut tail_min = vec![f64::INFINITY; horizon + 2];
    for k in (1..=horizon).rev() {
        tail_min[k] = tail_min[k + 1].min(-ln[k] / k as f64);
    }
    let decay_rate_trend = checkpoints
        .iter()
        .map(|&k| Checkpoint {
            k,
            value: tail_min[k],
        })
        .collect();
    let early = tail_min[(horizon / 64).max(1)];
    let late = tail_min[(horizon / 8).max(1)];
    let superexp = if late >= 2.0 * early && late > 8.0 {
        Verdict::WitnessedOnHorizon
    } else if late < 1.05 * early {
        Verdict::RefutedOnHorizon
    } else {
        Verdict::Inconclusive
    };

    Ok(ShapeReport {
        sequence: seq.label(),
        horizon,
        summable,
        partial_sums,
        tail_log_rate,
        tail_log_rate_trend,
        loglog_exponent,
        superexp,
        decay_rate_trend,
        bounded_slope_witness: None,
        nonsteep: None,
    })
}

/// Smallest `l ≤ l_max` with `(a_k - a_{k+l})/a_k ≥ c > 0` for all `k ≤ horizon`.
///
/// A positive minimum on a finite horizon is not enough by itself (`l/(k+l)`
/// is positive everywhere), so the minimum over the last half of the horizon
/// must also hold at least 3/4 of the minimum over the quarter before it.
pub fn check_bounded_slope(
    seq: &HeightSequence,
    l_max: usize,
    horizon: usize,
) -> Result<Option<BoundedSlopeWitness>, ConditionError> {
    if l_max == 0 {
        return Err(ConditionError::BadLMax);
    }
    let ln = ln_heights(seq, horizon + l_max);
    for l in 1..=l_max {
        let ratios: Vec<f64> = (0..=horizon).map(|k| ratio(&ln, k, l)).collect();
        let min_of = |r: &[f64]| r.iter().copied().fold(f64::INFINITY, f64::min);
        let c = min_of(&ratios);
        if c <= 0.0 {
            continue;
        }
        let recent = min_of(&ratios[horizon / 2..]);
        let before = min_of(&ratios[horizon / 4..horizon / 2]);
        if recent < 0.75 * before {
            continue;
        }
        let c_exact = seq
            .is_exact()
            .then(|| exact_min_ratio(seq, l, horizon))
            .flatten();
        if let Some(ce) = &c_exact {
            if !ce.is_positive_ratio() {
                continue;
            }
        }
        return Ok(Some(BoundedSlopeWitness {
            l,
            c: c_exact.as_ref().map_or(c, |r| rational_to_f64(&r.0)),
            c_exact: c_exact.map(|r| r.0.to_string()),
        }));
    }
    Ok(None)
}

struct ExactRatio(BigRational);

impl ExactRatio {
    fn is_positive_ratio(&self) -> bool {
        self.0 > BigRational::zero()
    }
}

fn exact_min_ratio(seq: &HeightSequence, l: usize, horizon: usize) -> Option<ExactRatio> {
    let vals: Vec<BigRational> = (0..=horizon + l)
        .map(|k| seq.value(k).as_exact().cloned())
        .collect::<Option<_>>()?;
    (0..=horizon)
        .map(|k| BigRational::one() - &vals[k + l] / &vals[k])
        .min()
        .map(ExactRatio)
}

/// Median of pairwise slopes over at most 256 evenly spaced finite points.
pub fn theil_sen_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..xs.len()).filter(|&i| ys[i].is_finite()).collect();
    if idx.len() < 2 {
        return f64::NAN;
    }
    let step = idx.len().div_ceil(256);
    let pts: Vec<(f64, f64)> = idx.iter().step_by(step).map(|&i| (xs[i], ys[i])).collect();
    let mut slopes = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if pts[j].0 != pts[i].0 {
                slopes.push((pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0));
            }
        }
    }
    slopes.sort_by(f64::total_cmp);
    let m = slopes.len();
    if m % 2 == 1 {
        slopes[m / 2]
    } else {
        0.5 * (slopes[m / 2 - 1] + slopes[m / 2])
    }
}

/// Per-schedule curves `(1/k) log((a_k - a_{k+l_k})/a_k)` and verdicts.
pub fn check_nonsteep(
    seq: &HeightSequence,
    horizon: usize,
    schedules: &[Schedule],
) -> Result<NonsteepReport, ConditionError> {
    if horizon < MIN_HORIZON {
        return Err(ConditionError::HorizonTooShort(horizon));
    }
    for s in schedules {
        s.check()?;
    }
    let reach = schedules.iter().map(|s| s.l(horizon)).max().unwrap_or(1);
    let ln = ln_heights(seq, horizon + reach);
    let curves: Vec<ScheduleCurve> = schedules
        .par_iter()
        .map(|&schedule| {
            let curve: Vec<f64> = (1..=horizon)
                .map(|k| ratio(&ln, k, schedule.l(k)).ln() / k as f64)
                .collect();
            let quartile = &curve[horizon - horizon / 4..];
            let last_quartile_mean = quartile.iter().sum::<f64>() / quartile.len() as f64;
            let half = horizon / 2;
            let xs: Vec<f64> = (half + 1..=horizon).map(|k| k as f64).collect();
            let theil_sen = theil_sen_slope(&xs, &curve[half..]);
            let tail = &curve[half..];
            let verdict = if tail.contains(&f64::NEG_INFINITY)
                || tail.iter().all(|v| *v < -NONSTEEP_TOL)
            {
                Verdict::RefutedOnHorizon
            } else if last_quartile_mean >= -NONSTEEP_TOL && theil_sen >= -1.0 / horizon as f64 {
                Verdict::WitnessedOnHorizon
            } else {
                Verdict::Inconclusive
            };
            ScheduleCurve {
                schedule,
                label: schedule.label(),
                curve,
                last_quartile_mean,
                theil_sen_slope: theil_sen,
                verdict,
            }
        })
        .collect();
    let verdict = if curves
        .iter()
        .any(|c| c.verdict == Verdict::WitnessedOnHorizon)
    {
        Verdict::WitnessedOnHorizon
    } else if !curves.is_empty()
        && curves
            .iter()
            .all(|c| c.verdict == Verdict::RefutedOnHorizon)
    {
        Verdict::RefutedOnHorizon
    } else {
        Verdict::Inconclusive
    };
    Ok(NonsteepReport {
        horizon,
        curves,
        verdict,
    })
}

/// Tail classification, bounded slope and nonsteepness in one report.
pub fn classify(
    seq: &HeightSequence,
    horizon: usize,
    l_max: usize,
    schedules: &[Schedule],
) -> Result<ShapeReport, ConditionError> {
    let mut report = classify_tail(seq, horizon)?;
    report.bounded_slope_witness = check_bounded_slope(seq, l_max, horizon)?;
    report.nonsteep = Some(check_nonsteep(seq, horizon, schedules)?);
    Ok(report)
}
