//! Unit-tagged scalars used throughout the simulator.
//!
//! Time is kept in integer microseconds so that event ordering is exact and
//! runs replay bit-for-bit. Voltages and currents live on integer µV / nA
//! grids; power, energy and illuminance are `f64` in nW, nJ and lux.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantityError {
    #[error("time arithmetic overflow")]
    Overflow,
    #[error("{what} must be non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("time point would become negative")]
    NegativeTime,
}

/// Microseconds since the start of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePoint(i64);

/// A span of time in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Duration(i64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0);

    pub fn from_micros(us: i64) -> Result<Self, QuantityError> {
        if us < 0 {
            return Err(QuantityError::NegativeTime);
        }
        Ok(TimePoint(us))
    }

    pub const fn from_millis(ms: i64) -> Self {
        TimePoint(ms * 1_000)
    }

    pub const fn from_secs(s: i64) -> Self {
        TimePoint(s * 1_000_000)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn checked_add(self, d: Duration) -> Result<TimePoint, QuantityError> {
        let v = self.0.checked_add(d.0).ok_or(QuantityError::Overflow)?;
        TimePoint::from_micros(v)
    }

    pub fn checked_sub(self, d: Duration) -> Result<TimePoint, QuantityError> {
        let v = self.0.checked_sub(d.0).ok_or(QuantityError::Overflow)?;
        TimePoint::from_micros(v)
    }

    /// Elapsed time from `earlier` to `self`; negative when `earlier` is later.
    pub fn since(self, earlier: TimePoint) -> Duration {
        Duration(self.0 - earlier.0)
    }
}

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_micros(us: i64) -> Self {
        Duration(us)
    }

    pub const fn from_millis(ms: i64) -> Self {
        Duration(ms * 1_000)
    }

    pub const fn from_secs(s: i64) -> Self {
        Duration(s * 1_000_000)
    }

    pub const fn from_mins(m: i64) -> Self {
        Duration(m * 60_000_000)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, other: Duration) -> Result<Duration, QuantityError> {
        self.0
            .checked_add(other.0)
            .map(Duration)
            .ok_or(QuantityError::Overflow)
    }

    pub fn checked_sub(self, other: Duration) -> Result<Duration, QuantityError> {
        self.0
            .checked_sub(other.0)
            .map(Duration)
            .ok_or(QuantityError::Overflow)
    }

    pub fn checked_mul(self, n: i64) -> Result<Duration, QuantityError> {
        self.0.checked_mul(n).map(Duration).ok_or(QuantityError::Overflow)
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fixed_point(self.0, 6))?;
        f.write_str(" s")
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fixed_point(self.0, 6))?;
        f.write_str(" s")
    }
}

/// Exact decimal rendering of `value × 10^-scale`, trailing zeros trimmed.
pub(crate) fn fixed_point(value: i64, scale: u32) -> String {
    let div = 10i64.pow(scale);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let int = abs / div as u64;
    let frac = abs % div as u64;
    if frac == 0 {
        format!("{sign}{int}")
    } else {
        let digits = format!("{frac:0width$}", width = scale as usize);
        format!("{sign}{int}.{}", digits.trim_end_matches('0'))
    }
}

/// Storage, rail, or harvester voltage in microvolts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Voltage(i64);

/// Current in nanoamperes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Current(i64);

impl Voltage {
    pub const ZERO: Voltage = Voltage(0);

    pub const fn from_micro_volts(uv: i64) -> Self {
        Voltage(uv)
    }

    pub const fn from_milli_volts(mv: i64) -> Self {
        Voltage(mv * 1_000)
    }

    pub const fn as_micro_volts(self) -> i64 {
        self.0
    }

    pub fn as_volts(self) -> f64 {
        self.0 as f64 * 1e-6
    }
}

impl fmt::Display for Voltage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} V", fixed_point(self.0, 6))
    }
}

impl Add for Voltage {
    type Output = Voltage;
    fn add(self, rhs: Voltage) -> Voltage {
        Voltage(self.0 + rhs.0)
    }
}

impl Sub for Voltage {
    type Output = Voltage;
    fn sub(self, rhs: Voltage) -> Voltage {
        Voltage(self.0 - rhs.0)
    }
}

impl Current {
    pub const ZERO: Current = Current(0);

    pub const fn from_nano_amps(na: i64) -> Self {
        Current(na)
    }

    pub const fn from_micro_amps(ua: i64) -> Self {
        Current(ua * 1_000)
    }

    pub const fn as_nano_amps(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Current {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nA", self.0)
    }
}

impl Add for Current {
    type Output = Current;
    fn add(self, rhs: Current) -> Current {
        Current(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Current {
    fn sum<I: Iterator<Item = Current>>(iter: I) -> Current {
        iter.fold(Current::ZERO, Add::add)
    }
}

macro_rules! float_quantity {
    ($name:ident, $unit:literal, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(f64);

        impl $name {
            pub const ZERO: $name = $name(0.0);

            pub const fn new(value: f64) -> Self {
                $name(value)
            }

            pub const fn value(self) -> f64 {
                self.0
            }

            pub fn abs(self) -> Self {
                $name(self.0.abs())
            }

            pub fn max(self, other: Self) -> Self {
                $name(self.0.max(other.0))
            }

            pub fn min(self, other: Self) -> Self {
                $name(self.0.min(other.0))
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0 - rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                self.0 += rhs.0;
            }
        }

        impl SubAssign for $name {
            fn sub_assign(&mut self, rhs: $name) {
                self.0 -= rhs.0;
            }
        }

        impl Neg for $name {
            type Output = $name;
            fn neg(self) -> $name {
                $name(-self.0)
            }
        }

        impl Mul<f64> for $name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(self.0 * rhs)
            }
        }

        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                iter.fold($name::ZERO, Add::add)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $unit)
            }
        }
    };
}

float_quantity!(Power, "nW", "Power in nanowatts.");
float_quantity!(Energy, "nJ", "Energy in nanojoules.");
float_quantity!(Illuminance, "lux", "Illuminance in lux.");

impl Power {
    pub fn from_micro_watts(uw: f64) -> Self {
        Power(uw * 1e3)
    }

    pub fn as_micro_watts(self) -> f64 {
        self.0 * 1e-3
    }
}

impl Energy {
    pub fn from_milli_joules(mj: f64) -> Self {
        Energy(mj * 1e6)
    }

    pub fn from_micro_joules(uj: f64) -> Self {
        Energy(uj * 1e3)
    }

    pub fn from_joules(j: f64) -> Self {
        Energy(j * 1e9)
    }

    pub fn as_milli_joules(self) -> f64 {
        self.0 * 1e-6
    }

    pub fn as_micro_joules(self) -> f64 {
        self.0 * 1e-3
    }

    pub fn as_joules(self) -> f64 {
        self.0 * 1e-9
    }
}

/// `v · i`, converted from µV·nA to nW.
pub fn power_of(v: Voltage, i: Current) -> Result<Power, QuantityError> {
    if v.0 < 0 {
        return Err(QuantityError::Negative { what: "voltage", value: v.0 as f64 });
    }
    if i.0 < 0 {
        return Err(QuantityError::Negative { what: "current", value: i.0 as f64 });
    }
    // µV·nA = 1e-15 W = 1e-6 nW. The integer product is exact.
    let product = i128::from(v.0) * i128::from(i.0);
    Ok(Power(product as f64 / 1e6))
}

/// `p · d`, converted from nW·µs to nJ.
pub fn energy_of(p: Power, d: Duration) -> Result<Energy, QuantityError> {
    if d.0 < 0 {
        return Err(QuantityError::Negative { what: "duration", value: d.0 as f64 });
    }
    Ok(Energy(p.0 * d.0 as f64 / 1e6))
}

/// Signed variant of [`energy_of`] for net power flows; `d` must still be non-negative.
pub(crate) fn signed_energy(p: Power, d: Duration) -> Energy {
    debug_assert!(d.0 >= 0);
    Energy(p.0 * d.0 as f64 / 1e6)
}

/// Power that delivers `e` over `d`; zero-length spans yield zero power.
pub fn average_power(e: Energy, d: Duration) -> Power {
    if d.0 == 0 {
        Power::ZERO
    } else {
        Power(e.0 * 1e6 / d.0 as f64)
    }
}
