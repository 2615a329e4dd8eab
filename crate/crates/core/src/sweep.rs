//! Breakeven illuminance by bisection on the steady-state per-cycle net energy.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{run, EngineError};
use crate::quantities::{Energy, Illuminance, TimePoint};
use crate::scenario::Scenario;

pub const SWEEP_RESOLUTION_LUX: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("bracket [{lo}, {hi}] lux is not a valid interval")]
    BadBracket { lo: f64, hi: f64 },
    #[error("net energy does not change sign over [{lo}, {hi}] lux ({net_lo} at lo, {net_hi} at hi)")]
    NoSignChange { lo: f64, hi: f64, net_lo: Energy, net_hi: Energy },
    #[error("probe at {0} lux completed no RTC cycle")]
    NoCycle(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub lux: f64,
    pub net: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub breakeven: Illuminance,
    /// Per-cycle net energy at `breakeven`.
    pub net_at_breakeven: Energy,
    pub probes: Vec<Probe>,
}

/// Net energy of the second RTC cycle under constant `lux`, touches removed.
pub fn cycle_net_at(scenario: &Scenario, lux: f64) -> Result<Energy, SweepError> {
    let mut s = scenario.with_constant_lux(Illuminance::new(lux));
    s.touch.press_times.clear();
    s.rtc.first_alarm = TimePoint::ZERO;
    s.duration = s.rtc.alarm_period.checked_mul(2).map_err(EngineError::from)?;
    let report = run(&s)?;
    report.completed_cycles().last().map(|c| c.net).ok_or(SweepError::NoCycle(lux))
}

pub fn sweep_lux(scenario: &Scenario, lo: f64, hi: f64) -> Result<SweepResult, SweepError> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(SweepError::BadBracket { lo, hi });
    }
    let mut probes = Vec::new();
    let mut probe = |lux: f64| -> Result<Energy, SweepError> {
        let net = cycle_net_at(scenario, lux)?;
        probes.push(Probe { lux, net });
        Ok(net)
    };
    let net_lo = probe(lo)?;
    if net_lo == Energy::ZERO {
        return Ok(SweepResult { breakeven: Illuminance::new(lo), net_at_breakeven: net_lo, probes });
    }
    let net_hi = probe(hi)?;
    if net_hi == Energy::ZERO {
        return Ok(SweepResult { breakeven: Illuminance::new(hi), net_at_breakeven: net_hi, probes });
    }
    if !(net_lo < Energy::ZERO && net_hi > Energy::ZERO) {
        return Err(SweepError::NoSignChange { lo, hi, net_lo, net_hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > SWEEP_RESOLUTION_LUX {
        let mid = 0.5 * (lo + hi);
        let net = probe(mid)?;
        if net == Energy::ZERO {
            return Ok(SweepResult { breakeven: Illuminance::new(mid), net_at_breakeven: net, probes });
        }
        if net < Energy::ZERO {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let breakeven = 0.5 * (lo + hi);
    let at = probe(breakeven)?;
    Ok(SweepResult { breakeven: Illuminance::new(breakeven), net_at_breakeven: at, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DpmVariant;
    use crate::quantities::Current;

    #[test]
    fn case_study_breakeven_near_sixteen_and_a_half_lux() {
        let s = Scenario::case_study();
        let r = sweep_lux(&s, 1.0, 200.0).unwrap();
        let lux = r.breakeven.value();
        assert!((lux - 16.485).abs() < 0.1, "breakeven {lux}");
        let slope = s.harvester.harvest_power(Illuminance::new(SWEEP_RESOLUTION_LUX)).unwrap();
        let bound = crate::quantities::energy_of(slope, s.rtc.alarm_period).unwrap();
        assert!(r.net_at_breakeven.abs() <= bound, "{} vs {}", r.net_at_breakeven, bound);
    }

    #[test]
    fn software_variant_needs_more_light() {
        let hw = Scenario::case_study();
        let mut sw = hw.clone();
        sw.dpm_variant = DpmVariant::SoftwareSleep { i_sleep: Current::from_micro_amps(3) };
        let a = sweep_lux(&hw, 1.0, 200.0).unwrap().breakeven.value();
        let b = sweep_lux(&sw, 1.0, 200.0).unwrap().breakeven.value();
        assert!(b > a, "{b} <= {a}");
    }

    #[test]
    fn zero_consumption_breaks_even_in_the_dark() {
        let mut s = Scenario::case_study();
        s.load_script.steps.clear();
        s.dpm_variant = DpmVariant::SoftwareSleep { i_sleep: Current::ZERO };
        let r = sweep_lux(&s, 0.0, 200.0).unwrap();
        assert_eq!(r.breakeven.value(), 0.0);
    }

    #[test]
    fn non_bracketing_interval_is_rejected() {
        let s = Scenario::case_study();
        assert!(matches!(sweep_lux(&s, 100.0, 200.0), Err(SweepError::NoSignChange { .. })));
        assert!(matches!(sweep_lux(&s, 5.0, 5.0), Err(SweepError::BadBracket { .. })));
    }
}
