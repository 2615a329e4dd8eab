//! SI-prefixed values with unit suffixes, e.g. `452nA`, `2.2V`, `10min`.
//!
//! Integer-grid quantities (time, voltage, current) must land exactly on
//! their grid; float quantities are rounded once from the decimal text.

use thiserror::Error;

use crate::quantities::{fixed_point, Current, Duration, Energy, Power, Voltage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("`{0}` is not a number with a unit")]
    Malformed(String),
    #[error("unknown unit `{unit}` for {dimension} (expected one of {expected})")]
    UnknownUnit { unit: String, dimension: &'static str, expected: String },
    #[error("`{0}` is finer than the {1} resolution")]
    NotRepresentable(String, &'static str),
    #[error("`{0}` is out of range")]
    OutOfRange(String),
    #[error("`{0}` must be non-negative")]
    Negative(String),
}

struct Decimal {
    negative: bool,
    digits: i128,
    exp10: i32,
}

fn split(text: &str) -> Result<(Decimal, &str), UnitError> {
    let malformed = || UnitError::Malformed(text.to_string());
    let s = text.trim();
    let end = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && is_exponent(s, i)))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(end);
    let unit = unit.trim();

    let (mantissa, exp) = match num.find(['e', 'E']) {
        Some(i) => (&num[..i], num[i + 1..].parse::<i32>().map_err(|_| malformed())?),
        None => (num, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(malformed());
    }
    if !(int.chars().all(|c| c.is_ascii_digit()) && frac.chars().all(|c| c.is_ascii_digit())) {
        return Err(malformed());
    }
    let all: String = format!("{int}{frac}");
    let trimmed = all.trim_start_matches('0');
    if trimmed.len() > 30 {
        return Err(UnitError::OutOfRange(text.to_string()));
    }
    let digits = if trimmed.is_empty() { 0 } else { trimmed.parse::<i128>().map_err(|_| malformed())? };
    Ok((Decimal { negative, digits, exp10: exp - frac.len() as i32 }, unit))
}

// `e` is an exponent marker only when followed by a digit or sign and preceded by a digit/dot.
fn is_exponent(s: &str, i: usize) -> bool {
    let bytes = s.as_bytes();
    let prev_ok = i > 0 && (bytes[i - 1].is_ascii_digit() || bytes[i - 1] == b'.');
    let next_ok = bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'-' || *b == b'+');
    prev_ok && next_ok
}

/// Unit suffix → (multiplier, power of ten) relative to the base unit.
type UnitTable = &'static [(&'static str, i128, i32)];

const TIME_US: UnitTable = &[
    ("us", 1, 0),
    ("µs", 1, 0),
    ("ms", 1, 3),
    ("s", 1, 6),
    ("min", 60, 6),
    ("h", 3600, 6),
    ("d", 86_400, 6),
];
const VOLTAGE_UV: UnitTable = &[("uV", 1, 0), ("µV", 1, 0), ("mV", 1, 3), ("V", 1, 6)];
const CURRENT_NA: UnitTable = &[("nA", 1, 0), ("uA", 1, 3), ("µA", 1, 3), ("mA", 1, 6), ("A", 1, 9)];
const POWER_NW: UnitTable = &[("pW", 1, -3), ("nW", 1, 0), ("uW", 1, 3), ("µW", 1, 3), ("mW", 1, 6), ("W", 1, 9)];
const ENERGY_NJ: UnitTable = &[("pJ", 1, -3), ("nJ", 1, 0), ("uJ", 1, 3), ("µJ", 1, 3), ("mJ", 1, 6), ("J", 1, 9)];
const CHARGE_MAH: UnitTable = &[("uAh", 1, -3), ("µAh", 1, -3), ("mAh", 1, 0), ("Ah", 1, 3)];
const LUX: UnitTable = &[("lux", 1, 0), ("lx", 1, 0), ("", 1, 0)];

fn lookup(unit: &str, table: UnitTable, dimension: &'static str) -> Result<(i128, i32), UnitError> {
    table
        .iter()
        .find(|(u, _, _)| *u == unit)
        .map(|(_, m, e)| (*m, *e))
        .ok_or_else(|| UnitError::UnknownUnit {
            unit: unit.to_string(),
            dimension,
            expected: table.iter().map(|(u, _, _)| *u).filter(|u| !u.is_empty()).collect::<Vec<_>>().join(", "),
        })
}

fn parse_exact(text: &str, table: UnitTable, dimension: &'static str) -> Result<i64, UnitError> {
    let (d, unit) = split(text)?;
    let (mult, exp) = lookup(unit, table, dimension)?;
    let exp10 = d.exp10 + exp;
    let out_of_range = || UnitError::OutOfRange(text.to_string());
    let mut value = d.digits.checked_mul(mult).ok_or_else(out_of_range)?;
    if exp10 >= 0 {
        let scale = 10i128.checked_pow(exp10 as u32).ok_or_else(out_of_range)?;
        value = value.checked_mul(scale).ok_or_else(out_of_range)?;
    } else {
        let scale = 10i128.checked_pow((-exp10) as u32).ok_or_else(out_of_range)?;
        if value % scale != 0 {
            return Err(UnitError::NotRepresentable(text.to_string(), dimension));
        }
        value /= scale;
    }
    if d.negative {
        value = -value;
    }
    i64::try_from(value).map_err(|_| out_of_range())
}

fn parse_float(text: &str, table: UnitTable, dimension: &'static str) -> Result<f64, UnitError> {
    let (d, unit) = split(text)?;
    let (mult, exp) = lookup(unit, table, dimension)?;
    let sign = if d.negative { "-" } else { "" };
    let digits = d.digits.checked_mul(mult).ok_or_else(|| UnitError::OutOfRange(text.to_string()))?;
    let v: f64 = format!("{sign}{digits}e{}", d.exp10 + exp)
        .parse()
        .map_err(|_| UnitError::Malformed(text.to_string()))?;
    if !v.is_finite() {
        return Err(UnitError::OutOfRange(text.to_string()));
    }
    Ok(v)
}

fn non_negative<T>(text: &str, v: T, negative: bool) -> Result<T, UnitError> {
    if negative {
        Err(UnitError::Negative(text.to_string()))
    } else {
        Ok(v)
    }
}

pub fn parse_duration(text: &str) -> Result<Duration, UnitError> {
    let us = parse_exact(text, TIME_US, "time")?;
    non_negative(text, Duration::from_micros(us), us < 0)
}

pub fn parse_voltage(text: &str) -> Result<Voltage, UnitError> {
    let uv = parse_exact(text, VOLTAGE_UV, "voltage")?;
    non_negative(text, Voltage::from_micro_volts(uv), uv < 0)
}

pub fn parse_current(text: &str) -> Result<Current, UnitError> {
    let na = parse_exact(text, CURRENT_NA, "current")?;
    non_negative(text, Current::from_nano_amps(na), na < 0)
}

pub fn parse_power(text: &str) -> Result<Power, UnitError> {
    let v = parse_float(text, POWER_NW, "power")?;
    non_negative(text, Power::new(v), v < 0.0)
}

pub fn parse_energy(text: &str) -> Result<Energy, UnitError> {
    let v = parse_float(text, ENERGY_NJ, "energy")?;
    non_negative(text, Energy::new(v), v < 0.0)
}

pub fn parse_charge_mah(text: &str) -> Result<f64, UnitError> {
    let v = parse_float(text, CHARGE_MAH, "charge")?;
    non_negative(text, v, v < 0.0)
}

pub fn parse_lux(text: &str) -> Result<f64, UnitError> {
    let v = parse_float(text, LUX, "illuminance")?;
    non_negative(text, v, v < 0.0)
}

pub fn format_duration(d: Duration) -> String {
    format!("{}s", fixed_point(d.as_micros(), 6))
}

pub fn format_voltage(v: Voltage) -> String {
    format!("{}V", fixed_point(v.as_micro_volts(), 6))
}

pub fn format_current(i: Current) -> String {
    format!("{}nA", i.as_nano_amps())
}

pub fn format_power(p: Power) -> String {
    format!("{}nW", p.value())
}

pub fn format_energy(e: Energy) -> String {
    format!("{}nJ", e.value())
}

pub fn format_charge_mah(mah: f64) -> String {
    format!("{mah}mAh")
}
