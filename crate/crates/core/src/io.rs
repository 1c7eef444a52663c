//! Text forms of height sequences and observables.
//!
//! Short forms, as used on the command line:
//!
//! ```text
//! geometric:p=1/2   harmonic   blockexp:base=8,power=2   polynomial:alpha=2
//! explicit:1,1/2,1/3   mp:s=1/2,depth=4000
//! level0   returns   zero   counterexample[:base=8]   levels:0,3,4
//! ```
//!
//! JSON forms use a `kind` tag with the same keys, e.g.
//! `{"kind": "geometric", "p": "1/2"}`.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{
    IntervalError, IntervalObservable, PiecewiseLinearMap, SmoothIntermittentMap,
};
use crate::number::{parse_rational, NumberError, NumberValue};
use crate::tower::{HeightSequence, LevelSet, Observable, Tower, TowerError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

fn invalid(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeightSpec {
    Geometric {
        p: String,
    },
    Harmonic,
    Blockexp {
        base: u64,
        #[serde(default = "one_u32")]
        power: u32,
    },
    Polynomial {
        alpha: String,
    },
    Explicit {
        values: Vec<String>,
    },
    /// Preimage levels of `x + x^{1+s} mod 1`.
    Mp {
        s: String,
        #[serde(default = "default_mp_depth")]
        depth: usize,
    },
}

fn one_u32() -> u32 {
    1
}

fn default_mp_depth() -> usize {
    4096
}

fn parse_kv<'a>(field: &str, body: &'a str) -> Result<BTreeMap<&'a str, &'a str>, SpecError> {
    let mut out = BTreeMap::new();
    for part in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| invalid(field, format!("expected key=value, got '{part}'")))?;
        out.insert(k.trim(), v.trim());
    }
    Ok(out)
}

fn finish(field: &str, kv: BTreeMap<&str, &str>) -> Result<(), SpecError> {
    match kv.keys().next() {
        Some(k) => Err(invalid(field, format!("unknown key '{k}'"))),
        None => Ok(()),
    }
}

fn required<'a>(field: &str, v: Option<&'a str>, key: &str) -> Result<&'a str, SpecError> {
    v.ok_or_else(|| invalid(field, format!("missing '{key}'")))
}

fn num<T: std::str::FromStr>(field: &str, key: &str, v: &str) -> Result<T, SpecError> {
    v.parse()
        .map_err(|_| invalid(field, format!("bad value for '{key}': '{v}'")))
}

fn rational(field: &str, v: &str) -> Result<num_rational::BigRational, SpecError> {
    parse_rational(v).map_err(|e: NumberError| invalid(field, e.to_string()))
}

impl HeightSpec {
    /// Parses the short form.
    pub fn parse_short(s: &str) -> Result<Self, SpecError> {
        const F: &str = "seq";
        let (head, body) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        if head == "explicit" {
            let values: Vec<String> = body
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            return Ok(HeightSpec::Explicit { values });
        }
        let mut kv = parse_kv(F, body)?;
        let spec = match head {
            "geometric" => HeightSpec::Geometric {
                p: required(F, kv.remove("p"), "p")?.to_string(),
            },
            "harmonic" => HeightSpec::Harmonic,
            "blockexp" => HeightSpec::Blockexp {
                base: num(F, "base", kv.remove("base").unwrap_or("8"))?,
                power: num(F, "power", kv.remove("power").unwrap_or("1"))?,
            },
            "polynomial" => HeightSpec::Polynomial {
                alpha: required(F, kv.remove("alpha"), "alpha")?.to_string(),
            },
            "mp" => HeightSpec::Mp {
                s: required(F, kv.remove("s"), "s")?.to_string(),
                depth: match kv.remove("depth") {
                    Some(d) => num(F, "depth", d)?,
                    None => default_mp_depth(),
                },
            },
            other => return Err(invalid(F, format!("unknown sequence kind '{other}'"))),
        };
        finish(F, kv)?;
        Ok(spec)
    }

    pub fn sequence(&self) -> Result<HeightSequence, SpecError> {
        const F: &str = "seq";
        Ok(match self {
            HeightSpec::Geometric { p } => HeightSequence::geometric(rational(F, p)?)?,
            HeightSpec::Harmonic => HeightSequence::harmonic(),
            HeightSpec::Blockexp { base, power } => HeightSequence::block_exp(*base, *power)?,
            HeightSpec::Polynomial { alpha } => HeightSequence::polynomial(rational(F, alpha)?)?,
            HeightSpec::Explicit { values } => {
                let v = values
                    .iter()
                    .map(|s| rational(F, s).map(NumberValue::Exact))
                    .collect::<Result<Vec<_>, _>>()?;
                HeightSequence::explicit(v)?
            }
            HeightSpec::Mp { .. } => {
                let map = self.mp_map()?.expect("mp");
                crate::interval::mp_level_sequence(map.s(), map.levels().len() - 1)?
            }
        })
    }

    pub fn mp_map(&self) -> Result<Option<SmoothIntermittentMap>, SpecError> {
        match self {
            HeightSpec::Mp { s, depth } => {
                let s = crate::number::rational_to_f64(&rational("seq", s)?);
                Ok(Some(SmoothIntermittentMap::new(s, *depth)?))
            }
            _ => Ok(None),
        }
    }

    /// Tower truncated at `truncation`; MP towers carry their true return branches.
    pub fn tower(&self, truncation: usize) -> Result<Tower, SpecError> {
        match self.mp_map()? {
            Some(map) => Ok(map.lift_tower(truncation)?),
            None => Ok(Tower::new(self.sequence()?, truncation)?),
        }
    }

    /// Piecewise-linear map with these heights as breakpoints.
    pub fn piecewise_linear(&self, exact_depth: usize) -> Result<PiecewiseLinearMap, SpecError> {
        Ok(PiecewiseLinearMap::new(self.sequence()?, exact_depth)?)
    }
}

impl std::str::FromStr for HeightSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeightSpec::parse_short(s)
    }
}

/// Accepts either the short string or the tagged object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeqField {
    Short(String),
    Full(HeightSpec),
}

impl SeqField {
    pub fn spec(&self) -> Result<HeightSpec, SpecError> {
        match self {
            SeqField::Short(s) => HeightSpec::parse_short(s),
            SeqField::Full(h) => Ok(h.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Indicator of level 0.
    Level0,
    /// Indicator of the returning cells.
    Returns,
    Zero,
    /// Indicator of the union of levels `[base^l, 2·base^l)`.
    Counterexample {
        #[serde(default = "eight")]
        base: u64,
    },
    Levels {
        levels: BTreeSet<usize>,
    },
}

fn eight() -> u64 {
    8
}

impl ObservableSpec {
    pub fn parse_short(s: &str) -> Result<Self, SpecError> {
        const F: &str = "obs";
        let (head, body) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        Ok(match head {
            "level0" => ObservableSpec::Level0,
            "returns" => ObservableSpec::Returns,
            "zero" => ObservableSpec::Zero,
            "counterexample" => {
                let mut kv = parse_kv(F, body)?;
                let base = num(F, "base", kv.remove("base").unwrap_or("8"))?;
                finish(F, kv)?;
                ObservableSpec::Counterexample { base }
            }
            "levels" => ObservableSpec::Levels {
                levels: body
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| num(F, "levels", v))
                    .collect::<Result<_, _>>()?,
            },
            other => return Err(invalid(F, format!("unknown observable '{other}'"))),
        })
    }

    pub fn observable(&self) -> Result<Observable, SpecError> {
        Ok(match self {
            ObservableSpec::Level0 => Observable::level_indicator(LevelSet::Finite([0].into())),
            ObservableSpec::Returns => Observable::return_indicator(),
            ObservableSpec::Zero => Observable::zero(),
            ObservableSpec::Counterexample { base } => {
                if *base < 2 {
                    return Err(invalid("obs", "counterexample base must be at least 2"));
                }
                Observable::level_indicator(LevelSet::BlockUnion { base: *base })
            }
            ObservableSpec::Levels { levels } => {
                Observable::level_indicator(LevelSet::Finite(levels.clone()))
            }
        })
    }
}

impl std::str::FromStr for ObservableSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObservableSpec::parse_short(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsField {
    Short(String),
    Full(ObservableSpec),
}

impl ObsField {
    pub fn spec(&self) -> Result<ObservableSpec, SpecError> {
        match self {
            ObsField::Short(s) => ObservableSpec::parse_short(s),
            ObsField::Full(o) => Ok(o.clone()),
        }
    }
}

/// `top`, `cells:0,2`, `indicator:0.5,1`, `identity` or `const:1/3`.
pub fn parse_interval_observable(s: &str) -> Result<IntervalObservable, SpecError> {
    const F: &str = "phi";
    let (head, body) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
    let list = || body.split(',').map(str::trim).filter(|v| !v.is_empty());
    Ok(match head {
        "top" => IntervalObservable::top_cell(),
        "identity" => IntervalObservable::Identity,
        "const" => IntervalObservable::Constant {
            c: parse_threshold(F, body)?,
        },
        "cells" => IntervalObservable::Cells {
            cells: list()
                .map(|v| num(F, "cells", v))
                .collect::<Result<_, _>>()?,
        },
        "indicator" => {
            let v: Vec<f64> = list()
                .map(|v| num(F, "indicator", v))
                .collect::<Result<_, _>>()?;
            match v[..] {
                [lo, hi] if lo < hi => IntervalObservable::Indicator { lo, hi },
                _ => return Err(invalid(F, "indicator needs lo,hi with lo < hi")),
            }
        }
        other => return Err(invalid(F, format!("unknown interval observable '{other}'"))),
    })
}

/// Parses `"7/16"`, `"0.75"` or `"3"` into a small rational.
pub fn parse_threshold(field: &str, s: &str) -> Result<Rational64, SpecError> {
    let r = rational(field, s)?;
    let (n, d) = (r.numer().try_into(), r.denom().try_into());
    match (n, d) {
        (Ok(n), Ok(d)) => Ok(Rational64::new(n, d)),
        _ => Err(invalid(
            field,
            format!("'{s}' does not fit a 64-bit rational"),
        )),
    }
}
