//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower_ldp::conditions::{classify, Schedule, Verdict};
use tower_ldp::interval::{
    build_takahashi, levelset_measure_interval, mc_ldp_interval, IntervalObservable,
    SmoothIntermittentMap,
};
use tower_ldp::ldp::{
    extrapolated_pressure, levelset_measure_dp, levelset_measure_enum, monte_carlo_levelset,
    pressure_profile, EnumQueryOptions, LevelSetQuery, Method, MonteCarloOptions,
};
use tower_ldp::number::parse_rational;
use tower_ldp::rate::{
    free_energy_bound, khinchin_rate, legendre_conjugate, linspace, rate_from_tower, ruelle_audit,
    sandwich_gap_report, FiniteMarkovSystem, SampledPressure, RUELLE_TOL,
};
use tower_ldp::{
    HeightSequence, LevelSet, NumberValue, NumericMode, Observable, Rational64, Tower,
};

const LOG: NumericMode = NumericMode::Log { bits: 53 };

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rat(s: &str) -> BigRational {
    parse_rational(s).unwrap()
}

fn geometric_tower(p: &str, h: usize) -> Tower {
    Tower::new(HeightSequence::geometric(rat(p)).unwrap(), h).unwrap()
}

fn level0() -> Observable {
    Observable::level_indicator(LevelSet::Finite([0].into()))
}

/// Relative entropy `-H(t, 1-t | p, 1-p)`, written out independently.
fn relative_entropy(t: f64, p: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    -(term(t, p) + term(1.0 - t, 1.0 - p))
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn khinchin_three_ways() -> Outcome {
    let start = Instant::now();
    let tower = geometric_tower("1/2", 64);
    let obs = level0();
    let ts: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();

    let closed: Vec<f64> = ts.iter().map(|&t| khinchin_rate(0.5, t).unwrap()).collect();
    let oracle_gap = max_abs(
        closed
            .iter()
            .zip(&ts)
            .map(|(q, &t)| q - relative_entropy(t, 0.5)),
    );

    let betas = linspace(-8.0, 8.0, 3201);
    let values = extrapolated_pressure(&tower, &obs, &betas, 60, LOG).unwrap();
    let sampled = SampledPressure::new(betas, values)
        .unwrap()
        .with_domain(0.0, 1.0);
    let legendre = legendre_conjugate(&sampled, &ts).unwrap().values();

    let induced = rate_from_tower(&tower, &obs, &ts, 32).unwrap().values();
    let elapsed = start.elapsed();

    let d_cl = max_abs(closed.iter().zip(&legendre).map(|(a, b)| a - b));
    let d_ci = max_abs(closed.iter().zip(&induced).map(|(a, b)| a - b));
    let d_li = max_abs(legendre.iter().zip(&induced).map(|(a, b)| a - b));
    let worst: Vec<String> = ts
        .iter()
        .zip(closed.iter().zip(&induced))
        .filter(|(_, (c, i))| (*c - *i).abs() > 1e-6)
        .map(|(t, (c, i))| format!("t={t}: {:.2e}", i - c))
        .collect();

    let induced_256 = rate_from_tower(&tower, &obs, &ts, 256).unwrap().values();
    let d_256 = max_abs(closed.iter().zip(&induced_256).map(|(a, b)| a - b));
    println!("    info: closed form vs induced pressure with L = 256: max diff {d_256:.2e}");

    let pass = oracle_gap < 1e-12
        && d_cl < 1e-4
        && d_ci < 1e-4
        && d_li < 1e-4
        && d_ci < 1e-6
        && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "closed-legendre {d_cl:.2e}, closed-induced(L=32) {d_ci:.2e}, legendre-induced {d_li:.2e}; over 1e-6: [{}]; {:.2}s",
            worst.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn counterexample_exactness() -> Outcome {
    let start = Instant::now();
    let tower = Tower::new(HeightSequence::block_exp(8, 1).unwrap(), 64).unwrap();
    let obs = Observable::level_indicator(LevelSet::BlockUnion { base: 8 });
    let strict8 = LevelSetQuery::at_least(8, Rational64::new(7, 16), true);
    let half16 = LevelSetQuery::at_least(16, Rational64::new(1, 2), false);
    let strict64 = LevelSetQuery::at_least(64, Rational64::new(7, 16), true);

    let dp8 = levelset_measure_dp(&tower, &obs, &strict8, LOG).unwrap();
    let en8 = levelset_measure_enum(&tower, &obs, &strict8, EnumQueryOptions::default()).unwrap();
    let dp16 = levelset_measure_dp(&tower, &obs, &half16, LOG).unwrap();
    let en16 = levelset_measure_enum(&tower, &obs, &half16, EnumQueryOptions::default()).unwrap();
    let dp64 = levelset_measure_dp(&tower, &obs, &strict64, LOG).unwrap();
    let elapsed = start.elapsed();

    let empty = dp8.log_measure == f64::NEG_INFINITY
        && en8.log_measure == f64::NEG_INFINITY
        && dp64.log_measure == f64::NEG_INFINITY;
    let v = dp16.normalized;
    let agree = (v - en16.normalized).abs() < 1e-12;
    let pass = empty && agree && (-4.0..=-3.5).contains(&v) && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "n=8 strict: dp {} enum {}; n=64 strict: dp {}; n=16 (>=1/2): dp {v:.6} enum {:.6}; {:.2}s",
            dp8.log_measure,
            en8.log_measure,
            dp64.log_measure,
            en16.normalized,
            elapsed.as_secs_f64()
        ),
    )
}

/// `log Z_n` from the renewal recursion, in log space.
fn renewal_log_z(p: f64, beta: f64, n_max: usize) -> Vec<f64> {
    let mut z = vec![0.0f64];
    for n in 1..=n_max {
        let mut terms: Vec<f64> = (1..=n)
            .map(|k| p.ln() + (k - 1) as f64 * (1.0 - p).ln() + z[n - k])
            .collect();
        terms.push(n as f64 * (1.0 - p).ln());
        let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = hi + terms.iter().map(|x| (x - hi).exp()).sum::<f64>().ln();
        z.push(beta + lse);
    }
    z
}

fn pressure_duality() -> Outcome {
    let tower = geometric_tower("1/2", 64);
    let obs = level0();
    let betas = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let profile = pressure_profile(&tower, &obs, &betas, 60, LOG).unwrap();
    let mut recursion_gap = 0.0f64;
    let mut limit_gaps = Vec::new();
    for (j, &b) in betas.iter().enumerate() {
        let oracle = renewal_log_z(0.5, b, 60);
        for n in 1..=60 {
            let ours = profile[n - 1][j] / n as f64;
            recursion_gap = recursion_gap.max((ours - oracle[n] / n as f64).abs());
        }
        let p = (0.5 + 0.5 * b.exp()).ln();
        limit_gaps.push((b, profile[59][j] / 60.0 - p));
    }
    let worst = limit_gaps.iter().map(|(_, g)| g.abs()).fold(0.0, f64::max);
    let over: Vec<String> = limit_gaps
        .iter()
        .filter(|(_, g)| g.abs() > 0.02)
        .map(|(b, g)| format!("beta={b}: {g:.4}"))
        .collect();
    outcome(
        recursion_gap < 1e-10 && worst <= 0.02,
        format!(
            "recursion max diff {recursion_gap:.2e} (n<=60); n=60 vs log((1-p)+p e^beta) max {worst:.4}; over 0.02: [{}]",
            over.join(", ")
        ),
    )
}

/// Free energy `-Σ q log q - Σ q log(m(Y)/m_j)` of a Bernoulli measure.
fn free_energy(q: &[f64], w: &[f64], total: f64) -> f64 {
    q.iter()
        .zip(w)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, w)| -q * q.ln() - q * (total / w).ln())
        .sum()
}

/// Grid maximum over the simplex, refined by repeated zooming around the
/// best grid point.
fn simplex_grid_max(w: &[f64], total: f64) -> f64 {
    let k = w.len();
    let mut center = vec![1.0 / k as f64; k];
    let mut radius = 1.0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..14 {
        let steps = 12i64;
        let h = radius / steps as f64;
        let mut best_q = center.clone();
        let mut idx = vec![-steps; k - 1];
        loop {
            let mut q: Vec<f64> = idx
                .iter()
                .zip(&center)
                .map(|(&i, c)| c + i as f64 * h)
                .collect();
            let last = 1.0 - q.iter().sum::<f64>();
            q.push(last);
            if q.iter().all(|x| (0.0..=1.0).contains(x)) {
                let v = free_energy(&q, w, total);
                if v > best {
                    best = v;
                    best_q = q;
                }
            }
            let mut d = 0;
            while d < k - 1 {
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = -steps;
                d += 1;
            }
            if d == k - 1 {
                break;
            }
        }
        center = best_q;
        radius = 3.0 * h;
    }
    best
}

fn free_energy_bound_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut bound_gap, mut max_gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.gen_range(2..=4);
        let total: f64 = rng.gen_range(0.5..2.0);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let fill: f64 = rng.gen_range(0.3..1.0);
        let sum: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / sum * total * fill).collect();
        let sys = FiniteMarkovSystem::from_weights(&w, total, 1.0).unwrap();
        let r = free_energy_bound(&sys);
        let grid = simplex_grid_max(&w, total);
        bound_gap = bound_gap.max((r.bound - grid).abs());
        let m = r.maximizer.expect("C = 1 has a maximizer");
        max_gap = max_gap.max((m.free_energy - r.bound).abs());
    }
    outcome(
        bound_gap < 1e-6 && max_gap < 1e-9,
        format!("100 systems: |bound - grid max| <= {bound_gap:.2e}, |F(q ∝ m_j) - bound| <= {max_gap:.2e}"),
    )
}

fn ruelle_inequality() -> Outcome {
    let (count, worst) = ruelle_audit();
    outcome(
        count > 0 && worst <= RUELLE_TOL,
        format!("{count} invariant-measure summaries, max entropy_rate - jacobian_integral = {worst:.3e}"),
    )
}

fn shape_classification() -> Outcome {
    let start = Instant::now();
    let h = 4096;
    let geo = classify(
        &HeightSequence::geometric(rat("1/2")).unwrap(),
        h,
        8,
        &Schedule::defaults(),
    )
    .unwrap();
    let harm = classify(&HeightSequence::harmonic(), h, 8, &Schedule::defaults()).unwrap();
    let blk = classify(
        &HeightSequence::block_exp(8, 1).unwrap(),
        h,
        8,
        &Schedule::defaults(),
    )
    .unwrap();
    let blk2 = classify(
        &HeightSequence::block_exp(8, 2).unwrap(),
        h,
        8,
        &Schedule::defaults(),
    )
    .unwrap();
    let elapsed = start.elapsed();

    let geo_ok = geo
        .bounded_slope_witness
        .as_ref()
        .is_some_and(|w| w.l == 1 && w.c_exact.as_deref() == Some("1/2"));
    let harm_sqrt = harm
        .nonsteep
        .as_ref()
        .and_then(|n| n.curves.iter().find(|c| c.schedule == Schedule::Sqrt))
        .map(|c| c.verdict);
    let harm_ok = harm_sqrt == Some(Verdict::WitnessedOnHorizon)
        && harm.nonsteep.as_ref().map(|n| n.verdict) == Some(Verdict::WitnessedOnHorizon)
        && harm.bounded_slope_witness.is_none();
    let blk_nonsteep = blk.nonsteep.as_ref().map(|n| n.verdict);
    let pass = geo_ok
        && harm_ok
        && blk_nonsteep == Some(Verdict::RefutedOnHorizon)
        && blk2.superexp == Verdict::WitnessedOnHorizon
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "geometric witness {:?}; harmonic sqrt {:?}, bounded slope {}; blockexp nonsteep {:?}; blockexp^2 superexp {:?}; {:.2}s",
            geo.bounded_slope_witness.as_ref().map(|w| (w.l, w.c_exact.clone())),
            harm_sqrt,
            if harm.bounded_slope_witness.is_some() { "present" } else { "absent" },
            blk_nonsteep,
            blk2.superexp,
            elapsed.as_secs_f64()
        ),
    )
}

fn random_rational_tower(rng: &mut ChaCha8Rng) -> Tower {
    let len = rng.gen_range(3..=10);
    let mut values = vec![NumberValue::one()];
    let mut cur = NumberValue::one();
    for _ in 1..len {
        let d = rng.gen_range(2..=6i64);
        let n = rng.gen_range(1..=d);
        cur = cur.mul(&NumberValue::ratio(n, d));
        values.push(cur.clone());
    }
    Tower::new(HeightSequence::explicit(values).unwrap(), 16).unwrap()
}

fn random_observable(rng: &mut ChaCha8Rng) -> Observable {
    if rng.gen_bool(0.25) {
        return Observable::return_indicator();
    }
    let anchor = rng.gen_range(0..4);
    let levels = (0..6)
        .filter(|_| rng.gen_bool(0.4))
        .chain([anchor])
        .collect();
    Observable::level_indicator(LevelSet::Finite(levels))
}

fn engine_cross_validation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..50 {
        let tower = random_rational_tower(&mut rng);
        let obs = random_observable(&mut rng);
        let n = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=8i64);
        let a = Rational64::new(rng.gen_range(0..=d), d);
        let q = LevelSetQuery::at_least(n, a, rng.gen_bool(0.5));
        let dp = levelset_measure_dp(&tower, &obs, &q, NumericMode::Rational).unwrap();
        let en = levelset_measure_enum(&tower, &obs, &q, EnumQueryOptions::default()).unwrap();
        let equal =
            matches!((dp.measure.as_exact(), en.measure.as_exact()), (Some(x), Some(y)) if x == y);
        if !equal {
            mismatches += 1;
        }
    }

    let tower = Tower::new(HeightSequence::harmonic(), 64).unwrap();
    let obs = Observable::return_indicator();
    let q = LevelSetQuery::at_least(20, Rational64::new(1, 4), false);
    let exact = levelset_measure_dp(&tower, &obs, &q, LOG)
        .unwrap()
        .measure
        .to_f64();
    let mut covered = 0;
    for seed in 0..20u64 {
        let mut opts = MonteCarloOptions::new(1_000_000, 1000 + seed);
        opts.confidence = 0.99;
        let r = monte_carlo_levelset(&tower, &obs, &q, opts).unwrap();
        if let Method::MonteCarlo {
            ci_low, ci_high, ..
        } = r.method
        {
            if (ci_low..=ci_high).contains(&exact) {
                covered += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && covered >= 19,
        format!(
            "dp vs enum: {} / 50 exact matches; MC 99% CI coverage {covered}/20 (exact {exact:.6})",
            50 - mismatches
        ),
    )
}

fn sandwich_at_finite_n() -> Outcome {
    let tower = geometric_tower("1/2", 64);
    let obs = level0();
    let mut pass = true;
    let mut parts = Vec::new();
    for a in [
        Rational64::new(3, 5),
        Rational64::new(7, 10),
        Rational64::new(4, 5),
    ] {
        let report = sandwich_gap_report(&tower, &obs, a, &[50, 100, 200], 64, LOG).unwrap();
        let q = khinchin_rate(0.5, report.optimizing_t).unwrap();
        let gaps: Vec<f64> = report
            .rows
            .iter()
            .map(|r| {
                let n = r.n as f64;
                (r.nonstrict + n.ln() / (2.0 * n) - q).abs()
            })
            .collect();
        let raw200 = (report.rows[2].nonstrict - q).abs();
        let ok = raw200 <= 0.03 && gaps.windows(2).all(|w| w[1] < w[0]);
        pass &= ok;
        parts.push(format!(
            "a={a}: |gap(200)| {raw200:.4}, corrected {:.4}/{:.4}/{:.4}",
            gaps[0], gaps[1], gaps[2]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn interval_conjugacy() -> Outcome {
    let mut exact_checks = 0;
    let mut exact_fail = Vec::new();
    let phi = IntervalObservable::top_cell();
    let psi = Observable::return_indicator();
    for p in ["1/2", "1/3"] {
        let map = build_takahashi(HeightSequence::geometric(rat(p)).unwrap()).unwrap();
        let tower = map.lift_tower(16).unwrap();
        for n in 1..=12 {
            for a in [
                Rational64::new(1, 4),
                Rational64::new(1, 2),
                Rational64::new(2, 3),
            ] {
                for strict in [false, true] {
                    let q = LevelSetQuery::at_least(n, a, strict);
                    let lhs = levelset_measure_interval(&map, &phi, &q).unwrap();
                    let rhs = levelset_measure_dp(&tower, &psi, &q, NumericMode::Rational).unwrap();
                    exact_checks += 1;
                    let same = matches!((lhs.measure.as_exact(), rhs.measure.as_exact()), (Some(x), Some(y)) if x == y);
                    if !same {
                        exact_fail.push(format!("p={p} n={n} a={a} strict={strict}"));
                    }
                }
            }
        }
    }

    let mp = SmoothIntermittentMap::new(0.5, 4096).unwrap();
    let tower = mp.lift_tower(21).unwrap();
    let mut mc_parts = Vec::new();
    let mut mc_ok = true;
    for a in [Rational64::new(1, 4), Rational64::new(1, 2)] {
        let q = LevelSetQuery::at_least(20, a, false);
        let direct = mc_ldp_interval(&mp, &phi, &q, MonteCarloOptions::new(1_000_000, 11)).unwrap();
        let lifted =
            monte_carlo_levelset(&tower, &psi, &q, MonteCarloOptions::new(1_000_000, 12)).unwrap();
        let (
            Method::MonteCarlo {
                hits: h1,
                samples: n1,
                stderr: s1,
                ..
            },
            Method::MonteCarlo {
                hits: h2,
                samples: n2,
                stderr: s2,
                ..
            },
        ) = (&direct.method, &lifted.method)
        else {
            unreachable!()
        };
        let (p1, p2) = (*h1 as f64 / *n1 as f64, *h2 as f64 / *n2 as f64);
        let band = 1.96 * (s1 * s1 + s2 * s2).sqrt();
        mc_ok &= (p1 - p2).abs() <= band;
        mc_parts.push(format!(
            "a={a}: map {p1:.5} tower {p2:.5} (|diff| {:.5} vs {band:.5})",
            (p1 - p2).abs()
        ));
    }
    outcome(
        exact_fail.is_empty() && mc_ok,
        format!(
            "takahashi lift == tower DP in {}/{exact_checks} exact checks{}; MP n=20: {}",
            exact_checks - exact_fail.len(),
            if exact_fail.is_empty() {
                String::new()
            } else {
                format!(" (first miss {})", exact_fail[0])
            },
            mc_parts.join("; ")
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "khinchin rate, three ways", khinchin_three_ways),
        (2, "counterexample exactness", counterexample_exactness),
        (3, "pressure duality", pressure_duality),
        (
            4,
            "free-energy bound optimality",
            free_energy_bound_optimality,
        ),
        (6, "shape classification", shape_classification),
        (7, "engine cross-validation", engine_cross_validation),
        (8, "finite-n sandwich", sandwich_at_finite_n),
        (9, "interval-map conjugacy", interval_conjugacy),
    ];
    let mut results = Vec::new();
    for (id, name, run) in criteria {
        let t = Instant::now();
        let o = run();
        results.push((id, name, o, t.elapsed()));
    }
    // Runs last so the audit covers every summary built above.
    let t = Instant::now();
    results.push((5, "ruelle inequality", ruelle_inequality(), t.elapsed()));
    results.sort_by_key(|r| r.0);

    println!();
    for (id, name, o, dt) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{tag}] {name} ({:.2}s): {}",
            dt.as_secs_f64(),
            o.detail
        );
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "\n{} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
