//! Towers built from height sequences, their cylinders, and observables.
//!
//! A height sequence `1 = a_0 ≥ a_1 ≥ … > 0` gives levels `X_k = (0, a_k]`
//! over the base `X = (0, 1]`. At level `k` the cell `X_{k+1}` climbs to level
//! `k + 1`; the cell `X_k \ X_{k+1}` (when nonempty) returns to the base after
//! `k + 1` steps through the linear bijection
//! `g_k(x) = (x - a_{k+1}) / (a_k - a_{k+1})`. Return times are indexed from 1:
//! return time `k` belongs to the level-`(k-1)` cell of measure
//! `a_{k-1} - a_k`.
//!
//! Every point of the base is coded by a [`CylinderWord`]: the return times it
//! completes within a window followed by a final climb. With linear branches
//! the measure of a word is the product of its branch measures times the
//! height of the final climb.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::number::{ln_rational, NumberError, NumberValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TowerError {
    #[error("height sequence increases at k = {0} (a_{{k+1}} > a_k)")]
    NonMonotone(usize),
    #[error("height a_{0} is not positive")]
    NonPositive(usize),
    #[error("height sequence must start with a_0 = 1")]
    Unnormalized,
    #[error("invalid height-sequence parameter: {0}")]
    BadParameter(String),
    #[error("return time {0} is not in the return support")]
    NotABranch(usize),
    #[error("word is not realizable: return time {0} has no branch")]
    NotRealizable(usize),
    #[error("cylinder enumeration would produce {count:.3e} words (cap {cap})")]
    Explosion { count: f64, cap: usize },
    #[error("observable of depth {depth} needs words of length at least {depth}, got {len}")]
    DepthMismatch { depth: usize, len: usize },
    #[error("operation requires linear return branches; tower uses `{0}`")]
    NonlinearBranches(String),
    #[error(transparent)]
    Number(#[from] NumberError),
}

/// Closed-form and explicit height sequences.
#[derive(Clone, Debug, PartialEq)]
pub enum HeightKind {
    /// `a_k = (1 - p)^k`.
    ///
    /// The source example prints `(1-p)^{-k}`, which increases and cannot be a
    /// height sequence; the decreasing form used here is the one whose base
    /// visits give the Khinchin (Bernoulli relative entropy) rate function.
    Geometric { p: BigRational },
    /// `a_0 = 1`, `a_k = 1/k` for `k ≥ 1`. Not summable.
    Harmonic,
    /// `a_0 = 1`, `a_k = exp(-base^{power·(l+1)})` for `base^l ≤ k < base^{l+1}`.
    BlockExp { base: u64, power: u32 },
    /// `a_k = (k + 1)^{-alpha}`.
    Polynomial { alpha: BigRational },
    /// Listed values; the last one repeats forever.
    Explicit(Vec<NumberValue>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeightSequence {
    kind: HeightKind,
}

impl HeightSequence {
    pub fn geometric(p: BigRational) -> Result<Self, TowerError> {
        if !(p.is_positive() && p < BigRational::one()) {
            return Err(TowerError::BadParameter(format!(
                "geometric p = {p} must lie in (0, 1)"
            )));
        }
        Ok(HeightSequence {
            kind: HeightKind::Geometric { p },
        })
    }

    pub fn harmonic() -> Self {
        HeightSequence {
            kind: HeightKind::Harmonic,
        }
    }

    pub fn block_exp(base: u64, power: u32) -> Result<Self, TowerError> {
        if base < 2 || power == 0 {
            return Err(TowerError::BadParameter(format!(
                "blockexp needs base ≥ 2 and power ≥ 1 (got base {base}, power {power})"
            )));
        }
        Ok(HeightSequence {
            kind: HeightKind::BlockExp { base, power },
        })
    }

    pub fn polynomial(alpha: BigRational) -> Result<Self, TowerError> {
        if !alpha.is_positive() {
            return Err(TowerError::BadParameter(format!(
                "polynomial alpha = {alpha} must be positive"
            )));
        }
        Ok(HeightSequence {
            kind: HeightKind::Polynomial { alpha },
        })
    }

    /// Checks the listed values: `a_0 = 1`, positive, nonincreasing.
    pub fn explicit(values: Vec<NumberValue>) -> Result<Self, TowerError> {
        if values.is_empty() || values[0] != NumberValue::one() {
            return Err(TowerError::Unnormalized);
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_positive() {
                return Err(TowerError::NonPositive(k));
            }
            if k > 0 && *v > values[k - 1] {
                return Err(TowerError::NonMonotone(k - 1));
            }
        }
        Ok(HeightSequence {
            kind: HeightKind::Explicit(values),
        })
    }

    pub fn kind(&self) -> &HeightKind {
        &self.kind
    }

    /// True when every `a_k` is an exact rational.
    pub fn is_exact(&self) -> bool {
        match &self.kind {
            HeightKind::Geometric { .. } | HeightKind::Harmonic => true,
            HeightKind::BlockExp { .. } => false,
            HeightKind::Polynomial { alpha } => alpha.is_integer(),
            HeightKind::Explicit(v) => v.iter().all(NumberValue::is_exact),
        }
    }

    pub fn value(&self, k: usize) -> NumberValue {
        match &self.kind {
            HeightKind::Geometric { p } => {
                let q = BigRational::one() - p;
                NumberValue::Exact(num_traits::pow(q, k))
            }
            HeightKind::Harmonic => {
                NumberValue::Exact(BigRational::new(1.into(), (k.max(1) as u64).into()))
            }
            HeightKind::BlockExp { .. } => NumberValue::from_ln(self.ln_value(k)),
            HeightKind::Polynomial { alpha } => {
                if let Some(e) = alpha.to_integer().to_usize().filter(|_| alpha.is_integer()) {
                    let d = num_traits::pow(num_bigint::BigInt::from(k as u64 + 1), e);
                    NumberValue::Exact(BigRational::new(1.into(), d))
                } else {
                    NumberValue::from_ln(self.ln_value(k))
                }
            }
            HeightKind::Explicit(v) => v
                .get(k)
                .unwrap_or_else(|| v.last().expect("nonempty"))
                .clone(),
        }
    }

    /// `ln a_k` without building exact values.
    pub fn ln_value(&self, k: usize) -> f64 {
        match &self.kind {
            HeightKind::Geometric { p } => {
                let q = BigRational::one() - p;
                k as f64 * ln_rational(&q)
            }
            HeightKind::Harmonic => -((k.max(1)) as f64).ln(),
            HeightKind::BlockExp { base, power } => {
                if k == 0 {
                    return 0.0;
                }
                let l = block_index(k as u64, *base);
                -(*base as f64).powi((*power as i32) * (l as i32 + 1))
            }
            HeightKind::Polynomial { alpha } => {
                -crate::number::rational_to_f64(alpha) * ((k + 1) as f64).ln()
            }
            HeightKind::Explicit(v) => v.get(k).unwrap_or_else(|| v.last().expect("nonempty")).ln(),
        }
    }

    /// Checks normalization, positivity and monotonicity for `k ≤ upto`.
    pub fn validate(&self, upto: usize) -> Result<(), TowerError> {
        let first = self.value(0);
        if first != NumberValue::one() {
            return Err(TowerError::Unnormalized);
        }
        let mut prev = first;
        for k in 1..=upto {
            let cur = self.value(k);
            if !cur.is_positive() {
                return Err(TowerError::NonPositive(k));
            }
            if cur > prev {
                return Err(TowerError::NonMonotone(k - 1));
            }
            prev = cur;
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match &self.kind {
            HeightKind::Geometric { p } => format!("geometric:p={p}"),
            HeightKind::Harmonic => "harmonic".to_string(),
            HeightKind::BlockExp { base, power } => format!("blockexp:base={base},power={power}"),
            HeightKind::Polynomial { alpha } => format!("polynomial:alpha={alpha}"),
            HeightKind::Explicit(v) => format!("explicit[{}]", v.len()),
        }
    }
}

/// Largest `l` with `base^l ≤ k` (for `k ≥ 1`).
pub(crate) fn block_index(k: u64, base: u64) -> u32 {
    debug_assert!(k >= 1);
    let mut l = 0;
    let mut pow = base;
    while pow <= k {
        l += 1;
        match pow.checked_mul(base) {
            Some(p) => pow = p,
            None => break,
        }
    }
    l
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// `X_{k+1} × {k}`: moves up one level.
    Climb,
    /// `(X_k \ X_{k+1}) × {k}`: maps back onto the base.
    Return,
}

/// An element of the tower partition: a level and which of its two cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Cell {
    pub level: usize,
    pub kind: CellKind,
}

impl Cell {
    pub fn climb(level: usize) -> Self {
        Cell {
            level,
            kind: CellKind::Climb,
        }
    }

    pub fn ret(level: usize) -> Self {
        Cell {
            level,
            kind: CellKind::Return,
        }
    }
}

/// A base cylinder of length `n`: completed return times `k_0, …, k_{j-1}`
/// followed by a climb of `tail` steps (the point lies in `X_tail` after its
/// last return).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CylinderWord {
    pub prefix: Vec<usize>,
    pub tail: usize,
}

impl CylinderWord {
    pub fn new(prefix: Vec<usize>, tail: usize) -> Self {
        CylinderWord { prefix, tail }
    }

    pub fn len(&self) -> usize {
        self.prefix.iter().sum::<usize>() + self.tail
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The partition cells visited at times `0..len`.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.prefix
            .iter()
            .flat_map(|&k| {
                (0..k).map(move |lvl| {
                    if lvl + 1 == k {
                        Cell::ret(lvl)
                    } else {
                        Cell::climb(lvl)
                    }
                })
            })
            .chain((0..self.tail).map(Cell::climb))
    }
}

impl fmt::Display for CylinderWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.prefix.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")+{}", self.tail)
    }
}

/// Image of a returning cell under its branch, as a point of the base.
pub trait ReturnBranch: Send + Sync + fmt::Debug {
    /// Maps `x ∈ X_{k-1} \ X_k` (return time `k`) onto `X = (0, 1]`.
    fn apply(&self, x: f64, return_time: usize) -> f64;
    fn name(&self) -> String;
}

#[derive(Clone, Debug)]
pub enum BranchMaps {
    /// The affine `g_k`; Jacobian `1 / (a_{k-1} - a_k)` on return cells.
    Linear,
    Custom(Arc<dyn ReturnBranch>),
}

impl BranchMaps {
    pub fn is_linear(&self) -> bool {
        matches!(self, BranchMaps::Linear)
    }

    pub fn name(&self) -> String {
        match self {
            BranchMaps::Linear => "linear".to_string(),
            BranchMaps::Custom(b) => b.name(),
        }
    }
}

/// Bounded-distortion data of a tower map.
#[derive(Clone, Debug)]
pub struct DistortionProfile {
    pub d_t: f64,
    /// `ε_k`, indexed by the number of returns; zero for linear branches.
    pub epsilon: Vec<f64>,
    pub branches: BranchMaps,
}

impl DistortionProfile {
    pub fn linear() -> Self {
        DistortionProfile {
            d_t: 1.0,
            epsilon: Vec::new(),
            branches: BranchMaps::Linear,
        }
    }

    pub fn epsilon(&self, k: usize) -> f64 {
        self.epsilon.get(k).copied().unwrap_or(0.0)
    }
}

/// Options for [`Tower::enumerate_cylinders`].
#[derive(Clone, Copy, Debug)]
pub struct EnumerationOptions {
    /// Drop subtrees whose total mass has log below this.
    pub prune_ln: Option<f64>,
    /// Maximum number of words produced.
    pub max_words: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            prune_ln: None,
            max_words: 1 << 22,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CylinderEnumeration {
    pub words: Vec<(CylinderWord, NumberValue)>,
    /// Total mass of pruned subtrees (zero without pruning).
    pub discarded: NumberValue,
    pub pruned_subtrees: usize,
}

#[derive(Clone, Debug)]
pub struct EnumerationStats {
    pub words: usize,
    pub discarded: NumberValue,
    pub pruned_subtrees: usize,
}

/// A sequence tower materialized up to `truncation` levels.
#[derive(Clone, Debug)]
pub struct Tower {
    heights: HeightSequence,
    truncation: usize,
    levels: Vec<NumberValue>,
    ln_levels: Vec<f64>,
    /// Indexed by return time; `branch[0]` is unused.
    branch: Vec<Option<NumberValue>>,
    ln_branch: Vec<f64>,
    support: Vec<usize>,
    distortion: DistortionProfile,
}

impl Tower {
    /// Materializes `a_0..=a_truncation` and the return branches `1..=truncation`.
    pub fn new(heights: HeightSequence, truncation: usize) -> Result<Self, TowerError> {
        Self::with_distortion(heights, truncation, DistortionProfile::linear())
    }

    pub fn with_distortion(
        heights: HeightSequence,
        truncation: usize,
        distortion: DistortionProfile,
    ) -> Result<Self, TowerError> {
        heights.validate(truncation)?;
        let levels: Vec<NumberValue> = (0..=truncation).map(|k| heights.value(k)).collect();
        let ln_levels: Vec<f64> = levels.iter().map(NumberValue::ln).collect();
        let mut branch = vec![None];
        let mut ln_branch = vec![f64::NEG_INFINITY];
        let mut support = Vec::new();
        for k in 1..=truncation {
            let m = levels[k - 1].checked_sub(&levels[k])?;
            if m.is_positive() {
                ln_branch.push(m.ln());
                branch.push(Some(m));
                support.push(k);
            } else {
                ln_branch.push(f64::NEG_INFINITY);
                branch.push(None);
            }
        }
        Ok(Tower {
            heights,
            truncation,
            levels,
            ln_levels,
            branch,
            ln_branch,
            support,
            distortion,
        })
    }

    /// Same heights and branches, materialized to at least `height` levels.
    pub fn extended(&self, height: usize) -> Result<Cow<'_, Tower>, TowerError> {
        if height <= self.truncation {
            return Ok(Cow::Borrowed(self));
        }
        Tower::with_distortion(self.heights.clone(), height, self.distortion.clone())
            .map(Cow::Owned)
    }

    pub fn heights(&self) -> &HeightSequence {
        &self.heights
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn distortion(&self) -> &DistortionProfile {
        &self.distortion
    }

    pub fn is_exact(&self) -> bool {
        self.levels.iter().all(NumberValue::is_exact)
    }

    /// `a_k` for `k ≤ truncation`.
    pub fn level(&self, k: usize) -> &NumberValue {
        &self.levels[k]
    }

    pub fn ln_level(&self, k: usize) -> f64 {
        self.ln_levels[k]
    }

    pub fn ln_levels(&self) -> &[f64] {
        &self.ln_levels
    }

    /// Return times `k ≤ truncation` whose branch has positive measure.
    pub fn return_support(&self) -> &[usize] {
        &self.support
    }

    /// `a_{k-1} - a_k`, when positive.
    pub fn branch_measure(&self, k: usize) -> Option<&NumberValue> {
        self.branch.get(k).and_then(Option::as_ref)
    }

    pub fn ln_branch_measure(&self, k: usize) -> f64 {
        self.ln_branch.get(k).copied().unwrap_or(f64::NEG_INFINITY)
    }

    fn require_linear(&self) -> Result<(), TowerError> {
        if self.distortion.branches.is_linear() {
            Ok(())
        } else {
            Err(TowerError::NonlinearBranches(
                self.distortion.branches.name(),
            ))
        }
    }

    /// Jacobian of the returning branch with return time `k`: `1 / (a_{k-1} - a_k)`.
    pub fn branch_jacobian(&self, k: usize) -> Result<NumberValue, TowerError> {
        self.require_linear()?;
        self.branch_measure(k)
            .map(|m| self.levels[0].div(m))
            .ok_or(TowerError::NotABranch(k))
    }

    /// `Jac(T)` on a partition cell: 1 on climbing cells.
    pub fn jacobian(&self, cell: Cell) -> Result<NumberValue, TowerError> {
        match cell.kind {
            CellKind::Climb => Ok(NumberValue::one()),
            CellKind::Return => self.branch_jacobian(cell.level + 1),
        }
    }

    /// `Π branch_measure(k_i) · a_tail`.
    pub fn word_measure(&self, w: &CylinderWord) -> Result<NumberValue, TowerError> {
        self.require_linear()?;
        let need = w.prefix.iter().copied().chain([w.tail]).max().unwrap_or(0);
        let tower = self.extended(need)?;
        let mut m = tower.levels[w.tail].clone();
        for &k in &w.prefix {
            let b = tower
                .branch_measure(k)
                .ok_or(TowerError::NotRealizable(k))?;
            m = m.mul(b);
        }
        Ok(m)
    }

    /// Number of length-`n` words (without pruning), as a float.
    pub fn count_words(&self, n: usize) -> f64 {
        let mut c = vec![0f64; n + 1];
        c[0] = 1.0;
        for m in 1..=n {
            c[m] = 1.0
                + self
                    .support
                    .iter()
                    .take_while(|&&k| k <= m)
                    .map(|&k| c[m - k])
                    .sum::<f64>();
        }
        c[n]
    }

    /// Calls `visit` on every length-`n` base cylinder in lexicographic order
    /// of return times (tail-only words last among siblings).
    pub fn visit_cylinders<F>(
        &self,
        n: usize,
        opts: EnumerationOptions,
        mut visit: F,
    ) -> Result<EnumerationStats, TowerError>
    where
        F: FnMut(&CylinderWord, &NumberValue),
    {
        self.require_linear()?;
        let tower = self.extended(n)?;
        if opts.prune_ln.is_none() {
            let count = tower.count_words(n);
            if count > opts.max_words as f64 {
                return Err(TowerError::Explosion {
                    count,
                    cap: opts.max_words,
                });
            }
        }
        let mut state = VisitState {
            tower: &tower,
            opts,
            word: CylinderWord::new(Vec::new(), 0),
            stats: EnumerationStats {
                words: 0,
                discarded: NumberValue::zero(),
                pruned_subtrees: 0,
            },
        };
        state.descend(n, NumberValue::one(), &mut visit)?;
        Ok(state.stats)
    }

    pub fn enumerate_cylinders(
        &self,
        n: usize,
        opts: EnumerationOptions,
    ) -> Result<CylinderEnumeration, TowerError> {
        let mut words = Vec::new();
        let stats = self.visit_cylinders(n, opts, |w, m| words.push((w.clone(), m.clone())))?;
        Ok(CylinderEnumeration {
            words,
            discarded: stats.discarded,
            pruned_subtrees: stats.pruned_subtrees,
        })
    }
}

struct VisitState<'t> {
    tower: &'t Tower,
    opts: EnumerationOptions,
    word: CylinderWord,
    stats: EnumerationStats,
}

impl VisitState<'_> {
    fn descend<F>(
        &mut self,
        remaining: usize,
        mass: NumberValue,
        visit: &mut F,
    ) -> Result<(), TowerError>
    where
        F: FnMut(&CylinderWord, &NumberValue),
    {
        if let Some(cut) = self.opts.prune_ln {
            if mass.ln() < cut {
                self.stats.discarded = self.stats.discarded.add(&mass);
                self.stats.pruned_subtrees += 1;
                return Ok(());
            }
        }
        let tower = self.tower;
        for &k in tower.support.iter().take_while(|&&k| k <= remaining) {
            let b = tower.branch[k].as_ref().expect("support has branches");
            self.word.prefix.push(k);
            self.descend(remaining - k, mass.mul(b), visit)?;
            self.word.prefix.pop();
        }
        self.word.tail = remaining;
        let m = mass.mul(&tower.levels[remaining]);
        self.stats.words += 1;
        if self.stats.words > self.opts.max_words {
            return Err(TowerError::Explosion {
                count: self.stats.words as f64,
                cap: self.opts.max_words,
            });
        }
        visit(&self.word, &m);
        self.word.tail = 0;
        Ok(())
    }
}

/// A set of tower levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSet {
    Finite(BTreeSet<usize>),
    /// `∪_{l ≥ 0} [base^l, 2·base^l)`.
    BlockUnion {
        base: u64,
    },
    All,
}

impl LevelSet {
    pub fn contains(&self, level: usize) -> bool {
        match self {
            LevelSet::Finite(s) => s.contains(&level),
            LevelSet::All => true,
            LevelSet::BlockUnion { base } => {
                if level == 0 {
                    return false;
                }
                let l = block_index(level as u64, *base);
                let start = base.checked_pow(l).unwrap_or(u64::MAX);
                (level as u64) < start.saturating_mul(2)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFilter {
    Any,
    Climb,
    Return,
}

impl CellFilter {
    fn matches(self, kind: CellKind) -> bool {
        match self {
            CellFilter::Any => true,
            CellFilter::Climb => kind == CellKind::Climb,
            CellFilter::Return => kind == CellKind::Return,
        }
    }
}

/// One rule of a depth-1 observable: `value` on matching cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelTerm {
    pub levels: LevelSet,
    pub cells: CellFilter,
    #[serde(serialize_with = "ser_ratio")]
    pub value: Rational64,
}

fn ser_ratio<S: serde::Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

#[derive(Clone, Debug, PartialEq)]
enum ObservableKind {
    /// First matching term wins; otherwise `default`.
    Depth1 {
        terms: Vec<LevelTerm>,
        default: Rational64,
    },
    /// Values on cylinders of `depth` consecutive cells.
    Cylinder {
        depth: usize,
        table: BTreeMap<Vec<Cell>, Rational64>,
        default: Rational64,
    },
}

/// A bounded observable constant on cylinders of some depth, with rational
/// values so Birkhoff sums stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    name: String,
    kind: ObservableKind,
}

impl Observable {
    pub fn depth1(name: impl Into<String>, terms: Vec<LevelTerm>, default: Rational64) -> Self {
        Observable {
            name: name.into(),
            kind: ObservableKind::Depth1 { terms, default },
        }
    }

    pub fn cylinder(
        name: impl Into<String>,
        depth: usize,
        table: BTreeMap<Vec<Cell>, Rational64>,
        default: Rational64,
    ) -> Self {
        assert!(depth >= 1, "cylinder depth must be positive");
        assert!(
            table.keys().all(|k| k.len() == depth),
            "table keys must have length {depth}"
        );
        Observable {
            name: name.into(),
            kind: ObservableKind::Cylinder {
                depth,
                table,
                default,
            },
        }
    }

    /// Indicator of a set of levels (both cells of each level).
    pub fn level_indicator(levels: LevelSet) -> Self {
        let name = match &levels {
            LevelSet::Finite(s) if s.len() == 1 && s.contains(&0) => "level0".to_string(),
            LevelSet::Finite(s) => format!("levels{:?}", s),
            LevelSet::BlockUnion { base } => format!("blockunion{base}"),
            LevelSet::All => "one".to_string(),
        };
        Observable::depth1(
            name,
            vec![LevelTerm {
                levels,
                cells: CellFilter::Any,
                value: Rational64::one(),
            }],
            Rational64::zero(),
        )
    }

    /// `1` on every returning cell: counts completed returns.
    pub fn return_indicator() -> Self {
        Observable::depth1(
            "returns",
            vec![LevelTerm {
                levels: LevelSet::All,
                cells: CellFilter::Return,
                value: Rational64::one(),
            }],
            Rational64::zero(),
        )
    }

    pub fn zero() -> Self {
        Observable::depth1("zero", Vec::new(), Rational64::zero())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn depth(&self) -> usize {
        match &self.kind {
            ObservableKind::Depth1 { .. } => 1,
            ObservableKind::Cylinder { depth, .. } => *depth,
        }
    }

    fn values(&self) -> Vec<Rational64> {
        match &self.kind {
            ObservableKind::Depth1 { terms, default } => {
                terms.iter().map(|t| t.value).chain([*default]).collect()
            }
            ObservableKind::Cylinder { table, default, .. } => {
                table.values().copied().chain([*default]).collect()
            }
        }
    }

    /// Value on a depth-1 observable's cell.
    pub fn value_at(&self, cell: Cell) -> Rational64 {
        self.value(std::slice::from_ref(&cell))
    }

    /// Value at the start of `window` (which must hold at least `depth` cells).
    pub fn value(&self, window: &[Cell]) -> Rational64 {
        match &self.kind {
            ObservableKind::Depth1 { terms, default } => {
                let cell = window[0];
                terms
                    .iter()
                    .find(|t| t.cells.matches(cell.kind) && t.levels.contains(cell.level))
                    .map(|t| t.value)
                    .unwrap_or(*default)
            }
            ObservableKind::Cylinder {
                depth,
                table,
                default,
            } => table.get(&window[..*depth]).copied().unwrap_or(*default),
        }
    }

    /// Common denominator of all values.
    pub fn denominator(&self) -> i64 {
        self.values().iter().fold(1i64, |acc, v| acc.lcm(v.denom()))
    }

    /// `value · denominator` as an integer.
    pub fn scaled(&self, window: &[Cell]) -> i64 {
        let v = self.value(window);
        (v * Rational64::from_integer(self.denominator())).to_integer()
    }

    pub fn min_value(&self) -> Rational64 {
        self.values().into_iter().min().unwrap_or_default()
    }

    pub fn max_value(&self) -> Rational64 {
        self.values().into_iter().max().unwrap_or_default()
    }

    pub fn sup_norm(&self) -> Rational64 {
        self.values()
            .into_iter()
            .map(|v| v.abs())
            .max()
            .unwrap_or_default()
    }

    /// Upper bound on `var_n(ψ)`: zero once cylinders of length `n` resolve the observable.
    pub fn var_n(&self, n: usize) -> Rational64 {
        if n >= self.depth() {
            Rational64::zero()
        } else {
            self.max_value() - self.min_value()
        }
    }

    /// Serializable description for reports.
    pub fn describe(&self) -> serde_json::Value {
        match &self.kind {
            ObservableKind::Depth1 { terms, default } => serde_json::json!({
                "name": self.name,
                "depth": 1,
                "terms": terms,
                "default": default.to_string(),
            }),
            ObservableKind::Cylinder {
                depth,
                table,
                default,
            } => serde_json::json!({
                "name": self.name,
                "depth": depth,
                "entries": table.len(),
                "default": default.to_string(),
            }),
        }
    }
}

/// `S_m ψ` on a word, over the `m = len - depth + 1` positions the word resolves.
pub fn birkhoff_on_word(obs: &Observable, w: &CylinderWord) -> Result<Rational64, TowerError> {
    let cells: Vec<Cell> = w.cells().collect();
    let depth = obs.depth();
    if cells.len() < depth {
        return Err(TowerError::DepthMismatch {
            depth,
            len: cells.len(),
        });
    }
    Ok((0..=cells.len() - depth)
        .map(|i| obs.value(&cells[i..]))
        .sum())
}

pub fn build_sequence_tower(seq: HeightSequence, truncation: usize) -> Result<Tower, TowerError> {
    Tower::new(seq, truncation)
}

pub fn branch_jacobian(tower: &Tower, k: usize) -> Result<NumberValue, TowerError> {
    tower.branch_jacobian(k)
}

pub fn word_measure(tower: &Tower, w: &CylinderWord) -> Result<NumberValue, TowerError> {
    tower.word_measure(w)
}

pub fn enumerate_cylinders(
    tower: &Tower,
    n: usize,
    prune_ln: Option<f64>,
) -> Result<CylinderEnumeration, TowerError> {
    tower.enumerate_cylinders(
        n,
        EnumerationOptions {
            prune_ln,
            ..Default::default()
        },
    )
}

pub fn make_level_indicator(levels: LevelSet) -> Observable {
    Observable::level_indicator(levels)
}
