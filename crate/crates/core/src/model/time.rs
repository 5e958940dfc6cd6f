use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A signed nanosecond count. Used both for instants on the logical
/// timeline and for durations (WCETs, periods, delays, offsets).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimeValue(pub i64);

impl TimeValue {
    pub const ZERO: TimeValue = TimeValue(0);
    /// Stands in for an unbounded deadline (the tail of a terminal phase).
    pub const INFINITY: TimeValue = TimeValue(i64::MAX);

    pub const fn ns(n: i64) -> Self {
        TimeValue(n)
    }

    pub const fn us(n: i64) -> Self {
        TimeValue(n * 1_000)
    }

    pub const fn ms(n: i64) -> Self {
        TimeValue(n * 1_000_000)
    }

    pub const fn secs(n: i64) -> Self {
        TimeValue(n * 1_000_000_000)
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    pub fn as_us_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn is_infinite(self) -> bool {
        self.0 == i64::MAX
    }

    pub fn saturating_add(self, rhs: TimeValue) -> TimeValue {
        TimeValue(self.0.saturating_add(rhs.0))
    }

    /// Subtraction where an infinite left operand stays infinite.
    pub fn saturating_sub(self, rhs: TimeValue) -> TimeValue {
        if self.is_infinite() {
            self
        } else {
            TimeValue(self.0.saturating_sub(rhs.0))
        }
    }
}

impl Add for TimeValue {
    type Output = TimeValue;
    fn add(self, rhs: TimeValue) -> TimeValue {
        TimeValue(self.0 + rhs.0)
    }
}

impl Sub for TimeValue {
    type Output = TimeValue;
    fn sub(self, rhs: TimeValue) -> TimeValue {
        TimeValue(self.0 - rhs.0)
    }
}

impl fmt::Display for TimeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}ns", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration `{0}` (expected <integer><ns|us|ms|s>)")]
pub struct DurationParseError(pub String);

impl FromStr for TimeValue {
    type Err = DurationParseError;

    /// Accepts `<digits><unit>` with unit one of `ns`, `us`, `ms`, `s`.
    /// A bare `0` is also accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DurationParseError(s.to_string());
        let s = s.trim();
        let split = s
            .find(|c: char| !c.is_ascii_digit() && c != '-')
            .unwrap_or(s.len());
        let (digits, unit) = s.split_at(split);
        let n: i64 = digits.parse().map_err(|_| err())?;
        let scale = match unit {
            "ns" => 1,
            "us" => 1_000,
            "ms" => 1_000_000,
            "s" => 1_000_000_000,
            "" if n == 0 => 1,
            _ => return Err(err()),
        };
        n.checked_mul(scale).map(TimeValue).ok_or_else(err)
    }
}

/// A superdense logical timestamp. Ordered lexicographically on
/// `(time, microstep)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Tag {
    pub time: TimeValue,
    pub microstep: u32,
}

impl Tag {
    pub const fn new(time: TimeValue, microstep: u32) -> Self {
        Tag { time, microstep }
    }

    pub const fn at(time: TimeValue) -> Self {
        Tag { time, microstep: 0 }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.time, self.microstep)
    }
}
