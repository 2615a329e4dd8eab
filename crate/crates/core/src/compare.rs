//! Hardware-gated versus software-sleep idle comparison.

use serde::Serialize;
use thiserror::Error;

use crate::energy::{cycle_energy_at, Approach, EnergyError};
use crate::quantities::{Current, Duration, Energy, Power};
use crate::report::Report;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("scenarios differ in more than the DPM variant: {}", .0.join(", "))]
    Mismatched(Vec<&'static str>),
    #[error("idle current of the reference run is zero")]
    ZeroIdle,
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Side-by-side figures for two runs of the same node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub idle_current_hw: Current,
    pub idle_current_sw: Current,
    /// `idle_current_sw / idle_current_hw`.
    pub idle_ratio: f64,
    pub cycle_energy_hw: Energy,
    pub cycle_energy_sw: Energy,
    /// `cycle_energy_sw / cycle_energy_hw`.
    pub cycle_energy_ratio: f64,
    /// Time from the initial charge down to the charge-ready threshold with no harvest.
    pub dark_lifetime_hw: Duration,
    pub dark_lifetime_sw: Duration,
    /// `dark_lifetime_hw − dark_lifetime_sw`.
    pub lifetime_delta: Duration,
}

/// Analytical per-cycle energy: one activity burst plus idling for the rest of the RTC period.
fn cycle_energy_of(s: &Scenario) -> Result<Energy, EnergyError> {
    let sleep = match s.rtc.alarm_period.checked_sub(s.load_script.active_duration()) {
        Ok(d) if !d.is_negative() => d,
        _ => Duration::ZERO,
    };
    cycle_energy_at(&s.load_script, s.dpm_variant.idle_power(&s.always_on), sleep)
}

fn dark_lifetime(s: &Scenario, cycle: Energy) -> Result<Duration, EnergyError> {
    let storage = s.storage.build()?;
    let floor = storage.energy_at(s.pmic.v_chrdy, Approach::Falling)?;
    let usable = (storage.e_store - floor).max(Energy::ZERO);
    let mean: Power = Power::new(cycle.value() / s.rtc.alarm_period.as_secs_f64());
    if mean.value() <= 0.0 {
        return Ok(Duration::from_micros(i64::MAX));
    }
    // nJ / nW = s
    let us = (usable.value() / mean.value() * 1e6).floor();
    Ok(Duration::from_micros(if us >= i64::MAX as f64 { i64::MAX } else { us as i64 }))
}

pub fn compare_dpm(hw: &Report, sw: &Report) -> Result<ComparisonReport, CompareError> {
    let (a, b) = (&hw.scenario, &sw.scenario);
    let diff = a.differences_except_variant(b);
    if !diff.is_empty() {
        return Err(CompareError::Mismatched(diff));
    }
    let idle_current_hw = a.dpm_variant.idle_current(&a.always_on);
    let idle_current_sw = b.dpm_variant.idle_current(&b.always_on);
    if idle_current_hw == Current::ZERO {
        return Err(CompareError::ZeroIdle);
    }
    let idle_ratio = idle_current_sw.as_nano_amps() as f64 / idle_current_hw.as_nano_amps() as f64;
    let cycle_energy_hw = cycle_energy_of(a)?;
    let cycle_energy_sw = cycle_energy_of(b)?;
    let dark_lifetime_hw = dark_lifetime(a, cycle_energy_hw)?;
    let dark_lifetime_sw = dark_lifetime(b, cycle_energy_sw)?;
    Ok(ComparisonReport {
        idle_current_hw,
        idle_current_sw,
        idle_ratio,
        cycle_energy_hw,
        cycle_energy_sw,
        cycle_energy_ratio: cycle_energy_sw.value() / cycle_energy_hw.value(),
        dark_lifetime_hw,
        dark_lifetime_sw,
        lifetime_delta: Duration::from_micros(dark_lifetime_hw.as_micros().saturating_sub(dark_lifetime_sw.as_micros())),
    })
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let days = |d: Duration| d.as_secs_f64() / 86_400.0;
        format!(
            "idle current: hardware {} vs software {}\n\
             idle ratio (software / hardware): {}\n\
             cycle energy: hardware {:.6} mJ vs software {:.6} mJ (ratio {})\n\
             lifetime without light: hardware {:.2} d vs software {:.2} d (delta {:.2} d)\n",
            self.idle_current_hw,
            self.idle_current_sw,
            self.idle_ratio,
            self.cycle_energy_hw.as_milli_joules(),
            self.cycle_energy_sw.as_milli_joules(),
            self.cycle_energy_ratio,
            days(self.dark_lifetime_hw),
            days(self.dark_lifetime_sw),
            days(self.lifetime_delta),
        )
    }
}
