//! Rate functions for level-1 large deviations.
//!
//! Three constructions:
//!
//! * the Bernoulli relative entropy for geometric towers ([`khinchin_rate`]);
//! * the Legendre conjugate `q(t) = inf_β (P(β) - βt)` of a sampled pressure;
//! * induced pressure over return words of height at most `L`
//!   ([`InducedSystem`]), where every candidate measure is a tilted Bernoulli
//!   measure on words and entropy / Jacobian are per unit tower time.
//!
//! Every [`InvariantMeasureSummary`] built here is checked against
//! `entropy_rate - jacobian_integral ≤ 0` and recorded in a process-wide
//! audit, see [`ruelle_audit`].

use std::sync::Mutex;

use num_rational::Rational64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fmt_ext::{ser_ext, ser_ext_vec};
use crate::ldp::{ldp_curve, LdpCurve, LdpError, LevelSetQuery};
use crate::number::{log_sum_exp, NumericMode};
use crate::tower::{Cell, Observable, Tower, TowerError};

/// Slack allowed above zero for free energies, for rounding.
pub const RUELLE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("p = {0} must lie strictly between 0 and 1")]
    BadP(f64),
    #[error("no return times in [1, {0}]")]
    EmptySystem(usize),
    #[error("pressure samples need at least two increasing β values")]
    BadSamples,
    #[error("β grid slopes [{lo}, {hi}] do not reach t = {t}")]
    GridTooNarrow { t: f64, lo: f64, hi: f64 },
    #[error("the induced system needs a depth-1 observable (got depth {0})")]
    NotDepthOne(usize),
    #[error("finite Markov system needs positive weights, times ≥ 1 and C ≥ 1")]
    BadMarkovSystem,
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Ldp(#[from] LdpError),
}

/// `H(t, 1-t | p, 1-p) = -t log t - (1-t) log(1-t) + t log p + (1-t) log(1-p)`
/// on `[0, 1]`, `-inf` elsewhere.
pub fn khinchin_rate(p: f64, t: f64) -> Result<f64, RateError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RateError::BadP(p));
    }
    if !(0.0..=1.0).contains(&t) {
        return Ok(f64::NEG_INFINITY);
    }
    let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    let mut v = -xlogx(t) - xlogx(1.0 - t);
    if t > 0.0 {
        v += t * p.ln();
    }
    if t < 1.0 {
        v += (1.0 - t) * (-p).ln_1p();
    }
    Ok(v)
}

static AUDIT: Mutex<(u64, f64)> = Mutex::new((0, f64::NEG_INFINITY));

/// Number of summaries built in this process and their largest free energy.
pub fn ruelle_audit() -> (u64, f64) {
    *AUDIT.lock().expect("audit lock")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    /// Per step of the tower map.
    TowerStep,
    /// Per step of an induced (first-return) map.
    InducedStep,
}

/// Bernoulli measure on return words with its thermodynamic quantities.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantMeasureSummary {
    pub word_times: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub time_unit: TimeUnit,
    pub entropy_rate: f64,
    pub jacobian_integral: f64,
    pub observable_mean: f64,
    pub mean_return_time: f64,
    pub free_energy: f64,
}

impl InvariantMeasureSummary {
    /// `ln_jac[j]` is the log Jacobian of word `j` over its whole length and
    /// `totals[j]` its observable sum.
    pub fn bernoulli(
        word_times: Vec<usize>,
        probabilities: Vec<f64>,
        ln_jac: &[f64],
        totals: &[f64],
        time_unit: TimeUnit,
    ) -> Self {
        let mean_return_time: f64 = probabilities
            .iter()
            .zip(&word_times)
            .map(|(q, &k)| q * k as f64)
            .sum();
        let entropy: f64 = probabilities
            .iter()
            .filter(|q| **q > 0.0)
            .map(|q| -q * q.ln())
            .sum();
        let jac: f64 = probabilities
            .iter()
            .zip(ln_jac)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, j)| q * j)
            .sum();
        // Free energy as one sum, so the ≤ 0 check does not suffer from cancellation.
        let fe: f64 = probabilities
            .iter()
            .zip(ln_jac)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, j)| q * (-q.ln() - j))
            .sum();
        let total: f64 = probabilities.iter().zip(totals).map(|(q, s)| q * s).sum();
        let scale = match time_unit {
            TimeUnit::TowerStep => mean_return_time,
            TimeUnit::InducedStep => 1.0,
        };
        let summary = InvariantMeasureSummary {
            word_times,
            probabilities,
            time_unit,
            entropy_rate: entropy / scale,
            jacobian_integral: jac / scale,
            observable_mean: total / mean_return_time,
            mean_return_time,
            free_energy: fe / scale,
        };
        let mut audit = AUDIT.lock().expect("audit lock");
        audit.0 += 1;
        audit.1 = audit.1.max(summary.free_energy);
        summary
    }

    pub fn satisfies_ruelle(&self) -> bool {
        self.free_energy <= RUELLE_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    ClosedFormKhinchin,
    LegendreOfPressure,
    InducedPressure { l: usize },
}

impl Provenance {
    pub fn tag(&self) -> String {
        match self {
            Provenance::ClosedFormKhinchin => "closed_form_khinchin".into(),
            Provenance::LegendreOfPressure => "legendre_of_pressure".into(),
            Provenance::InducedPressure { l } => format!("induced_pressure_L{l}"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateSample {
    pub t: f64,
    #[serde(serialize_with = "ser_ext")]
    pub q: f64,
    /// Optimizing β, when the infimum is attained at a finite β.
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFunction {
    pub provenance: Provenance,
    pub samples: Vec<RateSample>,
    /// `[c, d]`: `q = -inf` outside.
    pub domain: (f64, f64),
    pub concave_hull_applied: bool,
    /// Maximizing measure per sample (induced pressure only).
    pub maximizers: Vec<Option<InvariantMeasureSummary>>,
}

impl RateFunction {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.q).collect()
    }

    /// Largest violation of midpoint concavity over consecutive finite samples
    /// on an evenly spaced grid; 0 if concave.
    pub fn concavity_defect(&self) -> f64 {
        let mut s: Vec<&RateSample> = self.samples.iter().collect();
        s.sort_by(|x, y| x.t.total_cmp(&y.t));
        let mut worst: f64 = 0.0;
        for w in s.windows(3) {
            if w.iter().any(|x| !x.q.is_finite()) {
                continue;
            }
            let (h1, h2) = (w[1].t - w[0].t, w[2].t - w[1].t);
            let chord = (w[0].q * h2 + w[2].q * h1) / (h1 + h2);
            worst = worst.max(chord - w[1].q);
        }
        worst
    }
}

/// Closed-form rate function of a geometric tower with `ψ = 1_{level 0}`.
pub fn khinchin_rate_function(p: f64, t_grid: &[f64]) -> Result<RateFunction, RateError> {
    let samples = t_grid
        .iter()
        .map(|&t| {
            Ok(RateSample {
                t,
                q: khinchin_rate(p, t)?,
                beta: None,
            })
        })
        .collect::<Result<Vec<_>, RateError>>()?;
    let n = samples.len();
    Ok(RateFunction {
        provenance: Provenance::ClosedFormKhinchin,
        samples,
        domain: (0.0, 1.0),
        concave_hull_applied: false,
        maximizers: vec![None; n],
    })
}

/// Convex pressure sampled on an increasing β grid.
#[derive(Clone, Debug, Serialize)]
pub struct SampledPressure {
    pub betas: Vec<f64>,
    #[serde(serialize_with = "ser_ext_vec")]
    pub values: Vec<f64>,
    /// Where the true slope range is known to lie (e.g. `[min ψ, max ψ]`).
    pub slope_domain: Option<(f64, f64)>,
}

impl SampledPressure {
    pub fn new(betas: Vec<f64>, values: Vec<f64>) -> Result<Self, RateError> {
        if betas.len() < 2 || betas.len() != values.len() || betas.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(RateError::BadSamples);
        }
        Ok(SampledPressure {
            betas,
            values,
            slope_domain: None,
        })
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.slope_domain = Some((lo, hi));
        self
    }

    /// Indices of the lower convex hull.
    fn hull(&self) -> Vec<usize> {
        let (b, v) = (&self.betas, &self.values);
        let mut h: Vec<usize> = Vec::with_capacity(b.len());
        for i in 0..b.len() {
            while h.len() >= 2 {
                let (j, k) = (h[h.len() - 2], h[h.len() - 1]);
                // drop k if it lies on or above the chord j..i
                let cross = (v[k] - v[j]) * (b[i] - b[j]) - (v[i] - v[j]) * (b[k] - b[j]);
                if cross >= 0.0 {
                    h.pop();
                } else {
                    break;
                }
            }
            h.push(i);
        }
        h
    }
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `q(t) = inf_β (P(β) - βt)` over the lower convex envelope of the samples,
/// refined by a parabola through the three samples around the minimizer.
pub fn legendre_conjugate(
    pressure: &SampledPressure,
    t_grid: &[f64],
) -> Result<RateFunction, RateError> {
    let (b, v) = (&pressure.betas, &pressure.values);
    let hull = pressure.hull();
    let concave_hull_applied = hull.len() < b.len();
    let slope = |i: usize, j: usize| (v[j] - v[i]) / (b[j] - b[i]);
    let slope_lo = slope(hull[0], hull[1]);
    let slope_hi = slope(hull[hull.len() - 2], hull[hull.len() - 1]);
    let on_hull: Vec<bool> = {
        let mut f = vec![false; b.len()];
        hull.iter().for_each(|&i| f[i] = true);
        f
    };
    let tol = 1e-12 * (1.0 + slope_lo.abs().max(slope_hi.abs()));
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if t < slope_lo - tol || t > slope_hi + tol {
            if let Some((lo, hi)) = pressure.slope_domain {
                if t >= lo && t <= hi {
                    return Err(RateError::GridTooNarrow {
                        t,
                        lo: slope_lo,
                        hi: slope_hi,
                    });
                }
            }
            samples.push(RateSample {
                t,
                q: f64::NEG_INFINITY,
                beta: None,
            });
            continue;
        }
        let f = |i: usize| v[i] - b[i] * t;
        let best = *hull
            .iter()
            .min_by(|&&i, &&j| f(i).total_cmp(&f(j)))
            .expect("hull nonempty");
        let mut q = f(best);
        let mut beta = b[best];
        if best > 0 && best + 1 < b.len() && on_hull[best - 1] && on_hull[best + 1] {
            let (x0, x1, x2) = (b[best - 1], b[best], b[best + 1]);
            let (y0, y1, y2) = (f(best - 1), f(best), f(best + 1));
            let d01 = (y1 - y0) / (x1 - x0);
            let d12 = (y2 - y1) / (x2 - x1);
            let curv = (d12 - d01) / (x2 - x0);
            if curv > 0.0 {
                // vertex of the interpolating parabola
                let xv = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
                if xv >= x0 && xv <= x2 {
                    let yv = y1 + (xv - x1) * (d01 + curv * (xv - x0));
                    if yv < q {
                        q = yv;
                        beta = xv;
                    }
                }
            }
        }
        samples.push(RateSample {
            t,
            q,
            beta: Some(beta),
        });
    }
    let n = samples.len();
    Ok(RateFunction {
        provenance: Provenance::LegendreOfPressure,
        samples,
        domain: (slope_lo, slope_hi),
        concave_hull_applied,
        maximizers: vec![None; n],
    })
}

/// Return-word system of a tower truncated at height `L`: word `k` has
/// measure `a_{k-1} - a_k`, Jacobian `1/(a_{k-1} - a_k)` and observable sum
/// `σ(k)` along climb cells `0..k-2` and the returning cell at `k-1`.
#[derive(Clone, Debug, Serialize)]
pub struct InducedSystem {
    pub max_height: usize,
    pub times: Vec<usize>,
    pub ln_weights: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(skip)]
    sigma_exact: Vec<Rational64>,
}

impl InducedSystem {
    pub fn new(tower: &Tower, obs: &Observable, max_height: usize) -> Result<Self, RateError> {
        if obs.depth() != 1 {
            return Err(RateError::NotDepthOne(obs.depth()));
        }
        let tower = tower.extended(max_height)?;
        let mut sys = InducedSystem {
            max_height,
            times: Vec::new(),
            ln_weights: Vec::new(),
            sigma: Vec::new(),
            sigma_exact: Vec::new(),
        };
        let mut climb = Rational64::from_integer(0);
        for k in 1..=max_height {
            if tower.branch_measure(k).is_some() {
                let s = climb + obs.value_at(Cell::ret(k - 1));
                sys.times.push(k);
                sys.ln_weights.push(tower.ln_branch_measure(k));
                sys.sigma.push(*s.numer() as f64 / *s.denom() as f64);
                sys.sigma_exact.push(s);
            }
            climb += obs.value_at(Cell::climb(k - 1));
        }
        if sys.times.is_empty() {
            return Err(RateError::EmptySystem(max_height));
        }
        Ok(sys)
    }

    fn subsystem(&self, keep: impl Fn(usize) -> bool) -> InducedSystem {
        let idx: Vec<usize> = (0..self.times.len()).filter(|&j| keep(j)).collect();
        InducedSystem {
            max_height: self.max_height,
            times: idx.iter().map(|&j| self.times[j]).collect(),
            ln_weights: idx.iter().map(|&j| self.ln_weights[j]).collect(),
            sigma: idx.iter().map(|&j| self.sigma[j]).collect(),
            sigma_exact: idx.iter().map(|&j| self.sigma_exact[j]).collect(),
        }
    }

    fn exponents(&self, beta: f64) -> Vec<f64> {
        self.ln_weights
            .iter()
            .zip(&self.sigma)
            .map(|(w, s)| w + if beta == 0.0 { 0.0 } else { beta * s })
            .collect()
    }

    /// Unique root `s` of `Σ_k m_k e^{βσ(k) - s k} = 1`.
    pub fn pressure(&self, beta: f64) -> f64 {
        let c = self.exponents(beta);
        let ln_g = |s: f64| {
            let terms: Vec<f64> = c
                .iter()
                .zip(&self.times)
                .map(|(c, &k)| c - s * k as f64)
                .collect();
            log_sum_exp(&terms)
        };
        let ln_count = (c.len() as f64).ln();
        let mut lo = c
            .iter()
            .zip(&self.times)
            .map(|(c, &k)| c / k as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut hi = c
            .iter()
            .zip(&self.times)
            .map(|(c, &k)| (c + ln_count + 1.0) / k as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ln_g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Tilted word probabilities `m_k e^{βσ(k) - s k}` at the pressure root.
    pub fn tilted(&self, beta: f64) -> (f64, Vec<f64>) {
        let s = self.pressure(beta);
        let c = self.exponents(beta);
        let lw: Vec<f64> = c
            .iter()
            .zip(&self.times)
            .map(|(c, &k)| c - s * k as f64)
            .collect();
        let z = log_sum_exp(&lw);
        (s, lw.iter().map(|x| (x - z).exp()).collect())
    }

    pub fn summary(&self, beta: f64) -> InvariantMeasureSummary {
        let (_, probs) = self.tilted(beta);
        let ln_jac: Vec<f64> = self.ln_weights.iter().map(|w| -w).collect();
        InvariantMeasureSummary::bernoulli(
            self.times.clone(),
            probs,
            &ln_jac,
            &self.sigma,
            TimeUnit::TowerStep,
        )
    }

    /// Observable mean per unit time under the tilted measure; `s'(β)`.
    pub fn mean(&self, beta: f64) -> f64 {
        let (_, probs) = self.tilted(beta);
        let num: f64 = probs.iter().zip(&self.sigma).map(|(q, s)| q * s).sum();
        let den: f64 = probs
            .iter()
            .zip(&self.times)
            .map(|(q, &k)| q * k as f64)
            .sum();
        num / den
    }

    /// Range of word frequencies `σ(k)/k`.
    pub fn domain(&self) -> (f64, f64) {
        let (lo, hi) = self.domain_exact();
        (
            *lo.numer() as f64 / *lo.denom() as f64,
            *hi.numer() as f64 / *hi.denom() as f64,
        )
    }

    fn frequencies(&self) -> Vec<Rational64> {
        self.sigma_exact
            .iter()
            .zip(&self.times)
            .map(|(s, &k)| s / k as i64)
            .collect()
    }

    fn domain_exact(&self) -> (Rational64, Rational64) {
        let f = self.frequencies();
        (
            *f.iter().min().expect("nonempty"),
            *f.iter().max().expect("nonempty"),
        )
    }

    /// `q_L(t) = inf_β (s_L(β) - βt)`, its optimizing β (if finite) and the
    /// tilted measure realizing it.
    pub fn rate(&self, t: f64) -> (f64, Option<f64>, Option<InvariantMeasureSummary>) {
        let (lo, hi) = self.domain();
        let tol = 1e-12;
        if t < lo - tol || t > hi + tol {
            return (f64::NEG_INFINITY, None, None);
        }
        let near = |x: f64| (t - x).abs() <= tol;
        if near(lo) || near(hi) {
            // infimum approached as β → ∓∞: only words at the extreme frequency survive
            let (elo, ehi) = self.domain_exact();
            let target = if near(lo) { elo } else { ehi };
            let f = self.frequencies();
            let sub = self.subsystem(|j| f[j] == target);
            return (sub.pressure(0.0), None, Some(sub.summary(0.0)));
        }
        let (mut blo, mut bhi) = (-1.0f64, 1.0f64);
        while self.mean(blo) > t && blo > -1e6 {
            blo *= 2.0;
        }
        while self.mean(bhi) < t && bhi < 1e6 {
            bhi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (blo + bhi);
            if mid <= blo || mid >= bhi {
                break;
            }
            if self.mean(mid) < t {
                blo = mid;
            } else {
                bhi = mid;
            }
        }
        let beta = 0.5 * (blo + bhi);
        let q = self.pressure(beta) - beta * t;
        (q.min(0.0), Some(beta), Some(self.summary(beta)))
    }

    pub fn pressure_curve(&self, betas: &[f64]) -> Vec<f64> {
        betas.par_iter().map(|&b| self.pressure(b)).collect()
    }
}

/// `s_L(β)`.
pub fn induced_pressure(
    tower: &Tower,
    obs: &Observable,
    beta: f64,
    max_height: usize,
) -> Result<f64, RateError> {
    Ok(InducedSystem::new(tower, obs, max_height)?.pressure(beta))
}

/// `q_L` on a grid of `t`, with the maximizing tilted measure per point.
pub fn rate_from_tower(
    tower: &Tower,
    obs: &Observable,
    t_grid: &[f64],
    max_height: usize,
) -> Result<RateFunction, RateError> {
    let sys = InducedSystem::new(tower, obs, max_height)?;
    let rows: Vec<_> = t_grid.par_iter().map(|&t| (t, sys.rate(t))).collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut maximizers = Vec::with_capacity(rows.len());
    for (t, (q, beta, m)) in rows {
        samples.push(RateSample { t, q, beta });
        maximizers.push(m);
    }
    Ok(RateFunction {
        provenance: Provenance::InducedPressure { l: max_height },
        samples,
        domain: sys.domain(),
        concave_hull_applied: false,
        maximizers,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MarkovBranch {
    /// `m(Y_j)`.
    pub weight: f64,
    pub time: usize,
    pub total: f64,
}

/// Branches `Y_j ⊂ Y` each mapped onto `Y` with distortion at most `C`.
#[derive(Clone, Debug, Serialize)]
pub struct FiniteMarkovSystem {
    pub branches: Vec<MarkovBranch>,
    pub total_mass: f64,
    pub distortion: f64,
}

impl FiniteMarkovSystem {
    pub fn new(
        branches: Vec<MarkovBranch>,
        total_mass: f64,
        distortion: f64,
    ) -> Result<Self, RateError> {
        let sum: f64 = branches.iter().map(|b| b.weight).sum();
        if branches.is_empty()
            || branches
                .iter()
                .any(|b| b.weight.is_nan() || b.weight <= 0.0 || b.time == 0)
            || distortion < 1.0
            || sum > total_mass * (1.0 + 1e-12)
        {
            return Err(RateError::BadMarkovSystem);
        }
        Ok(FiniteMarkovSystem {
            branches,
            total_mass,
            distortion,
        })
    }

    /// Equal-time system from weights alone.
    pub fn from_weights(
        weights: &[f64],
        total_mass: f64,
        distortion: f64,
    ) -> Result<Self, RateError> {
        let branches = weights
            .iter()
            .map(|&w| MarkovBranch {
                weight: w,
                time: 1,
                total: 0.0,
            })
            .collect();
        Self::new(branches, total_mass, distortion)
    }

    /// Bernoulli measure with the given branch probabilities, per step of the
    /// induced map; the Jacobian of branch `j` is taken as `m(Y)/m(Y_j)`.
    pub fn bernoulli(&self, probabilities: Vec<f64>) -> InvariantMeasureSummary {
        let ln_jac: Vec<f64> = self
            .branches
            .iter()
            .map(|b| self.total_mass.ln() - b.weight.ln())
            .collect();
        let totals: Vec<f64> = self.branches.iter().map(|b| b.total).collect();
        let times = self.branches.iter().map(|b| b.time).collect();
        InvariantMeasureSummary::bernoulli(
            times,
            probabilities,
            &ln_jac,
            &totals,
            TimeUnit::InducedStep,
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FreeEnergyBound {
    pub bound: f64,
    /// For `C = 1`: the Bernoulli measure `q_j ∝ m(Y_j)`, whose free energy
    /// equals the bound.
    pub maximizer: Option<InvariantMeasureSummary>,
}

/// `log Σ_j m(Y_j) - log m(Y) - log C`.
pub fn free_energy_bound(sys: &FiniteMarkovSystem) -> FreeEnergyBound {
    let ln_w: Vec<f64> = sys.branches.iter().map(|b| b.weight.ln()).collect();
    let ln_sum = log_sum_exp(&ln_w);
    let bound = ln_sum - sys.total_mass.ln() - sys.distortion.ln();
    let maximizer = (sys.distortion == 1.0)
        .then(|| sys.bernoulli(ln_w.iter().map(|w| (w - ln_sum).exp()).collect()));
    FreeEnergyBound { bound, maximizer }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GapVerdict {
    SandwichHolds,
    SandwichViolated,
    NoRateFunctionWitnessed,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub n: usize,
    /// `(1/n) log m{S_n/n > a}`.
    #[serde(serialize_with = "ser_ext")]
    pub strict: f64,
    /// `(1/n) log m{S_n/n ≥ a}`.
    #[serde(serialize_with = "ser_ext")]
    pub nonstrict: f64,
    pub slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub a: f64,
    pub max_height: usize,
    /// `sup_{t > a} q(t)`.
    #[serde(serialize_with = "ser_ext")]
    pub lower_bound: f64,
    /// `max_{t ≥ a} q(t)`.
    #[serde(serialize_with = "ser_ext")]
    pub upper_bound: f64,
    #[serde(serialize_with = "ser_ext")]
    pub optimizing_t: f64,
    pub rows: Vec<GapRow>,
    pub oscillating: bool,
    pub verdict: GapVerdict,
    pub note: String,
}

/// `(log n + 3)/n`.
pub fn finite_size_slack(n: usize) -> f64 {
    ((n as f64).ln() + 3.0) / n as f64
}

/// Compares exact level-set curves at each `n` against the two bounds
/// `sup_{t>a} q(t) ≤ liminf … ≤ limsup … ≤ max_{t≥a} q(t)`, with `q = q_L`.
///
/// Curves that are empty at some `n` and nonempty at others, or whose values
/// spread by more than 1 over the second half of `n_list`, are reported as
/// having no rate function; no sandwich is then checked.
pub fn sandwich_gap_report(
    tower: &Tower,
    obs: &Observable,
    a: Rational64,
    n_list: &[usize],
    max_height: usize,
    mode: NumericMode,
) -> Result<GapReport, RateError> {
    let af = *a.numer() as f64 / *a.denom() as f64;
    let sys = InducedSystem::new(tower, obs, max_height)?;
    let (_, d) = sys.domain();
    let peak = sys.mean(0.0);
    let t_opt = af.max(peak);
    let q_opt = if t_opt <= d + 1e-12 {
        sys.rate(t_opt).0
    } else {
        f64::NEG_INFINITY
    };
    let lower_bound = if t_opt < d - 1e-12 {
        q_opt
    } else {
        f64::NEG_INFINITY
    };
    let upper_bound = q_opt;

    let strict: LdpCurve = ldp_curve(
        tower,
        obs,
        LevelSetQuery::at_least(1, a, true),
        n_list,
        mode,
    )?;
    let nonstrict: LdpCurve = ldp_curve(
        tower,
        obs,
        LevelSetQuery::at_least(1, a, false),
        n_list,
        mode,
    )?;
    let rows: Vec<GapRow> = strict
        .points
        .iter()
        .zip(&nonstrict.points)
        .map(|(s, ns)| {
            let slack = finite_size_slack(s.n);
            GapRow {
                n: s.n,
                strict: s.normalized,
                nonstrict: ns.normalized,
                slack,
                lower_ok: lower_bound == f64::NEG_INFINITY || s.normalized >= lower_bound - slack,
                upper_ok: ns.normalized <= upper_bound + slack,
            }
        })
        .collect();

    let values: Vec<f64> = rows.iter().map(|r| r.nonstrict).collect();
    let mixed = values.iter().any(|v| v.is_finite()) && values.contains(&f64::NEG_INFINITY);
    let late = &values[values.len() / 2..];
    let spread = late.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - late.iter().copied().fold(f64::INFINITY, f64::min);
    let oscillating = mixed || spread > 1.0;

    let (verdict, note) = if rows.is_empty() {
        (GapVerdict::Inconclusive, "no n values".to_string())
    } else if oscillating {
        (
            GapVerdict::NoRateFunctionWitnessed,
            "level-set curve alternates between empty and nonempty (or spreads by more than 1); liminf and limsup differ, so no single rate function can bound both".to_string(),
        )
    } else if rows.iter().all(|r| r.lower_ok && r.upper_ok) {
        (
            GapVerdict::SandwichHolds,
            "every n lies within the bounds up to (log n + 3)/n".to_string(),
        )
    } else {
        (
            GapVerdict::SandwichViolated,
            "some n falls outside the bounds beyond the finite-size slack".to_string(),
        )
    };
    Ok(GapReport {
        a: af,
        max_height,
        lower_bound,
        upper_bound,
        optimizing_t: t_opt,
        rows,
        oscillating,
        verdict,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::extrapolated_pressure;
    use crate::number::{parse_rational, NumberValue};
    use crate::tower::{HeightSequence, LevelSet};

    fn geo_tower(h: usize) -> Tower {
        Tower::new(
            HeightSequence::geometric(parse_rational("1/2").unwrap()).unwrap(),
            h,
        )
        .unwrap()
    }

    fn level0() -> Observable {
        Observable::level_indicator(LevelSet::Finite([0].into()))
    }

    #[test]
    fn khinchin_examples() {
        assert!(khinchin_rate(0.3, 0.3).unwrap().abs() < 1e-15);
        assert!((khinchin_rate(0.5, 1.0).unwrap() - (0.5f64).ln()).abs() < 1e-15);
        assert_eq!(khinchin_rate(0.5, 1.2).unwrap(), f64::NEG_INFINITY);
        assert!((khinchin_rate(0.5, 0.75).unwrap() + 0.130812035941137).abs() < 1e-12);
        assert_eq!(khinchin_rate(1.0, 0.5), Err(RateError::BadP(1.0)));
    }

    fn bernoulli_pressure(betas: &[f64]) -> SampledPressure {
        let v = betas.iter().map(|b| (0.5 + 0.5 * b.exp()).ln()).collect();
        SampledPressure::new(betas.to_vec(), v).unwrap()
    }

    #[test]
    fn legendre_of_bernoulli() {
        let p = bernoulli_pressure(&linspace(-8.0, 8.0, 1601));
        let r = legendre_conjugate(&p, &[0.5, 0.75, 1.5]).unwrap();
        assert!(r.samples[0].q.abs() < 1e-12);
        assert!((r.samples[1].q - khinchin_rate(0.5, 0.75).unwrap()).abs() < 1e-8);
        assert_eq!(r.samples[2].q, f64::NEG_INFINITY);
        assert!(!r.concave_hull_applied);
    }

    #[test]
    fn legendre_degenerate_and_narrow() {
        let betas = linspace(-2.0, 2.0, 41);
        let p =
            SampledPressure::new(betas.clone(), betas.iter().map(|b| 0.25 * b).collect()).unwrap();
        let r = legendre_conjugate(&p, &[0.25, 0.3]).unwrap();
        assert!(r.samples[0].q.abs() < 1e-12);
        assert_eq!(r.samples[1].q, f64::NEG_INFINITY);
        let narrow = bernoulli_pressure(&linspace(-1.0, 1.0, 21)).with_domain(0.0, 1.0);
        assert!(matches!(
            legendre_conjugate(&narrow, &[0.9]),
            Err(RateError::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn induced_pressure_closed_forms() {
        let t = geo_tower(64);
        let sys = InducedSystem::new(&t, &level0(), 1).unwrap();
        assert!((sys.pressure(0.7) - (0.7 + (0.5f64).ln())).abs() < 1e-13);
        let s = induced_pressure(&t, &level0(), 1.0, 64).unwrap();
        assert!((s - ((1.0 + std::f64::consts::E) / 2.0).ln()).abs() < 1e-12);
        let c = parse_rational("1/3").unwrap();
        let single = Tower::new(
            HeightSequence::explicit(vec![NumberValue::one(), NumberValue::Exact(c)]).unwrap(),
            10,
        )
        .unwrap();
        for l in [1, 5, 10] {
            let s = induced_pressure(&single, &level0(), 0.4, l).unwrap();
            assert!((s - (0.4 + (2.0f64 / 3.0).ln())).abs() < 1e-13);
        }
    }

    #[test]
    fn truncation_is_monotone() {
        let t = geo_tower(64);
        for beta in [-2.0, 0.0, 1.5] {
            let s: Vec<f64> = (1..=12)
                .map(|l| induced_pressure(&t, &level0(), beta, l).unwrap())
                .collect();
            assert!(s.windows(2).all(|w| w[1] >= w[0]));
            assert!(s[11] <= 0.0 || beta > 0.0);
        }
    }

    #[test]
    fn induced_rate_matches_khinchin() {
        let t = geo_tower(256);
        let r = rate_from_tower(&t, &level0(), &[0.5, 0.75, 0.2, 1.0, 1.1], 256).unwrap();
        assert!(r.samples[0].q.abs() < 1e-8);
        assert!((r.samples[1].q - khinchin_rate(0.5, 0.75).unwrap()).abs() < 1e-9);
        assert!((r.samples[2].q - khinchin_rate(0.5, 0.2).unwrap()).abs() < 1e-9);
        assert!((r.samples[3].q - (0.5f64).ln()).abs() < 1e-12);
        assert_eq!(r.samples[4].q, f64::NEG_INFINITY);
        for m in r.maximizers.iter().flatten() {
            assert!(m.satisfies_ruelle());
        }
        assert!(r.concavity_defect() < 1e-9);
    }

    #[test]
    fn duality_between_induced_and_legendre() {
        let t = geo_tower(32);
        let sys = InducedSystem::new(&t, &level0(), 32).unwrap();
        let betas = linspace(-8.0, 8.0, 3201);
        let sp = SampledPressure::new(betas.clone(), sys.pressure_curve(&betas)).unwrap();
        let grid = [0.3, 0.5, 0.7];
        let leg = legendre_conjugate(&sp, &grid).unwrap();
        let ind = rate_from_tower(&t, &level0(), &grid, 32).unwrap();
        for (x, y) in leg.samples.iter().zip(&ind.samples) {
            assert!((x.q - y.q).abs() < 1e-8, "{} vs {}", x.q, y.q);
        }
    }

    #[test]
    fn dp_pressure_legendre() {
        let betas = linspace(-8.0, 8.0, 1601);
        let p = extrapolated_pressure(
            &geo_tower(64),
            &level0(),
            &betas,
            60,
            NumericMode::default(),
        )
        .unwrap();
        let r =
            legendre_conjugate(&SampledPressure::new(betas, p).unwrap(), &[0.25, 0.75]).unwrap();
        for s in &r.samples {
            assert!((s.q - khinchin_rate(0.5, s.t).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn free_energy_bound_examples() {
        let r =
            free_energy_bound(&FiniteMarkovSystem::from_weights(&[0.5, 0.5], 1.0, 1.0).unwrap());
        assert!(r.bound.abs() < 1e-15);
        let m = r.maximizer.unwrap();
        assert!((m.entropy_rate - 2f64.ln()).abs() < 1e-15);
        assert!((m.jacobian_integral - 2f64.ln()).abs() < 1e-15);

        let r =
            free_energy_bound(&FiniteMarkovSystem::from_weights(&[0.5, 0.25], 1.0, 1.0).unwrap());
        assert!((r.bound - (0.75f64).ln()).abs() < 1e-15);
        let m = r.maximizer.unwrap();
        assert!((m.probabilities[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.free_energy - r.bound).abs() < 1e-15);

        let r =
            free_energy_bound(&FiniteMarkovSystem::from_weights(&[0.5, 0.25], 1.0, 2.0).unwrap());
        assert!((r.bound - ((0.75f64).ln() - 2f64.ln())).abs() < 1e-15);
        assert!(r.maximizer.is_none());
        assert!(FiniteMarkovSystem::from_weights(&[0.7, 0.7], 1.0, 1.0).is_err());
    }

    #[test]
    fn gap_report_geometric() {
        let r = sandwich_gap_report(
            &geo_tower(64),
            &level0(),
            Rational64::new(7, 10),
            &[20, 40, 80],
            128,
            NumericMode::default(),
        )
        .unwrap();
        assert!((r.upper_bound - khinchin_rate(0.5, 0.7).unwrap()).abs() < 1e-9);
        assert_eq!(r.verdict, GapVerdict::SandwichHolds);
        let r = sandwich_gap_report(
            &geo_tower(64),
            &level0(),
            Rational64::new(-1, 1),
            &[10, 20],
            128,
            NumericMode::default(),
        )
        .unwrap();
        assert!(r.upper_bound.abs() < 1e-9, "{r:?}");
        assert!(r.rows.iter().all(|x| x.nonstrict.abs() < 1e-12), "{r:?}");
    }

    #[test]
    fn gap_report_counterexample() {
        let t = Tower::new(HeightSequence::block_exp(8, 1).unwrap(), 64).unwrap();
        let cex = Observable::level_indicator(LevelSet::BlockUnion { base: 8 });
        let r = sandwich_gap_report(
            &t,
            &cex,
            Rational64::new(7, 16),
            &[8, 16, 64],
            64,
            NumericMode::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, GapVerdict::NoRateFunctionWitnessed);
    }
}
