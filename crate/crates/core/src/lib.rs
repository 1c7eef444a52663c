//! Large deviations for tower maps.
//!
//! Towers are built from height sequences ([`tower`]), classified by shape
//! ([`conditions`]), and analysed with exact level-set engines ([`ldp`]) and
//! rate-function constructions ([`rate`]). [`interval`] holds the concrete
//! intermittent interval maps the towers model.

pub mod conditions;
pub mod fmt_ext;
pub mod interval;
pub mod io;
pub mod ldp;
pub mod number;
pub mod rate;
pub mod tower;

pub use num_rational::Rational64;
pub use number::{LogValue, NumberValue, NumericMode};
pub use tower::{Cell, CellKind, CylinderWord, HeightSequence, LevelSet, Observable, Tower};
