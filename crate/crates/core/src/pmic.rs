//! PMIC operating modes and the rails each mode powers.
//!
//! Mode changes are driven only by storage voltage, harvester availability
//! and the shutdown grace timer. The MCU is never consulted.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantities::{Current, Duration, Power, QuantityError, TimePoint, Voltage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmicError {
    #[error("time went backwards: last step at {last}, now {now}")]
    NonMonotoneTime { last: TimePoint, now: TimePoint },
    #[error("invalid PMIC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PmicMode {
    DeepSleep,
    WakeUp,
    Normal,
    Overcharge,
    Shutdown { grace_deadline: TimePoint },
}

/// [`PmicMode`] without the shutdown deadline; used as a map key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModeKind {
    DeepSleep,
    WakeUp,
    Normal,
    Overcharge,
    Shutdown,
}

impl PmicMode {
    pub fn kind(self) -> ModeKind {
        match self {
            PmicMode::DeepSleep => ModeKind::DeepSleep,
            PmicMode::WakeUp => ModeKind::WakeUp,
            PmicMode::Normal => ModeKind::Normal,
            PmicMode::Overcharge => ModeKind::Overcharge,
            PmicMode::Shutdown { .. } => ModeKind::Shutdown,
        }
    }

    pub fn is_operating(self) -> bool {
        matches!(self, PmicMode::Normal | PmicMode::Overcharge)
    }
}

impl ModeKind {
    pub const ALL: [ModeKind; 5] = [
        ModeKind::DeepSleep,
        ModeKind::WakeUp,
        ModeKind::Normal,
        ModeKind::Overcharge,
        ModeKind::Shutdown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModeKind::DeepSleep => "deep_sleep",
            ModeKind::WakeUp => "wake_up",
            ModeKind::Normal => "normal",
            ModeKind::Overcharge => "overcharge",
            ModeKind::Shutdown => "shutdown",
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for PmicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmicConfig {
    pub v_cold_start: Voltage,
    pub p_cold_start: Power,
    pub v_chrdy: Voltage,
    pub v_ovch: Voltage,
    pub v_ovch_hysteresis: Voltage,
    pub grace_window: Duration,
    pub i_quiescent: Current,
}

impl PmicConfig {
    pub const DEFAULT_V_CHRDY: Voltage = Voltage::from_milli_volts(3000);
    pub const DEFAULT_V_OVCH: Voltage = Voltage::from_milli_volts(3600);
    pub const DEFAULT_HYSTERESIS: Voltage = Voltage::from_milli_volts(50);

    /// Checks threshold ordering against the storage's empty-cell voltage.
    pub fn validate(&self, v_empty_storage: Voltage) -> Result<(), PmicError> {
        let fail = |msg: String| Err(PmicError::InvalidConfig(msg));
        if v_empty_storage >= self.v_chrdy {
            return fail(format!(
                "v_chrdy ({}) must exceed the empty-storage voltage ({})",
                self.v_chrdy, v_empty_storage
            ));
        }
        if self.v_chrdy >= self.v_ovch {
            return fail(format!("v_chrdy ({}) must be below v_ovch ({})", self.v_chrdy, self.v_ovch));
        }
        if self.v_ovch_hysteresis <= Voltage::ZERO {
            return fail("v_ovch_hysteresis must be positive".into());
        }
        if self.v_ovch - self.v_ovch_hysteresis < self.v_chrdy {
            return fail(format!(
                "v_ovch - hysteresis ({}) must not fall below v_chrdy ({})",
                self.v_ovch - self.v_ovch_hysteresis,
                self.v_chrdy
            ));
        }
        if self.grace_window <= Duration::ZERO {
            return fail("grace_window must be positive".into());
        }
        if self.v_cold_start < Voltage::ZERO || self.p_cold_start.value() < 0.0 || self.i_quiescent < Current::ZERO {
            return fail("cold-start thresholds and quiescent current must be non-negative".into());
        }
        Ok(())
    }

    /// Storage level at or below which an overcharged PMIC resumes charging.
    pub fn v_ovch_release(&self) -> Voltage {
        self.v_ovch - self.v_ovch_hysteresis
    }
}

impl Default for PmicConfig {
    fn default() -> Self {
        PmicConfig {
            v_cold_start: Voltage::from_milli_volts(300),
            p_cold_start: Power::from_micro_watts(2.0),
            v_chrdy: Self::DEFAULT_V_CHRDY,
            v_ovch: Self::DEFAULT_V_OVCH,
            v_ovch_hysteresis: Self::DEFAULT_HYSTERESIS,
            grace_window: Duration::from_millis(600),
            i_quiescent: Current::from_nano_amps(200),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmicInputs {
    pub v_store: Voltage,
    pub v_harvester: Voltage,
    pub p_harvester: Power,
    pub latch_set: bool,
    pub now: TimePoint,
}

/// One edge of the mode graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    ColdStart,
    ChargeReady,
    OvervoltageEnter,
    OvervoltageRelease,
    Undervoltage,
    Recover,
    GraceExpired,
}

/// Every transition guard that holds for `mode` under `inputs`.
///
/// The mode machine is well-formed when this never returns more than one entry.
pub fn fired_guards(mode: PmicMode, cfg: &PmicConfig, inputs: &PmicInputs) -> Vec<Transition> {
    let mut fired = Vec::new();
    let v = inputs.v_store;
    match mode {
        PmicMode::DeepSleep => {
            if inputs.v_harvester >= cfg.v_cold_start && inputs.p_harvester >= cfg.p_cold_start {
                fired.push(Transition::ColdStart);
            }
        }
        PmicMode::WakeUp => {
            if v >= cfg.v_chrdy {
                fired.push(Transition::ChargeReady);
            }
        }
        PmicMode::Normal => {
            if v >= cfg.v_ovch {
                fired.push(Transition::OvervoltageEnter);
            }
            if v < cfg.v_chrdy {
                fired.push(Transition::Undervoltage);
            }
        }
        PmicMode::Overcharge => {
            if v <= cfg.v_ovch_release() {
                fired.push(Transition::OvervoltageRelease);
            }
        }
        PmicMode::Shutdown { grace_deadline } => {
            // Equality with the deadline belongs to the higher mode.
            if v >= cfg.v_chrdy && inputs.now <= grace_deadline {
                fired.push(Transition::Recover);
            }
            if v < cfg.v_chrdy && inputs.now >= grace_deadline {
                fired.push(Transition::GraceExpired);
            }
        }
    }
    fired
}

/// The successor of `mode`; unchanged when no guard holds.
pub fn step_mode(mode: PmicMode, cfg: &PmicConfig, inputs: &PmicInputs) -> PmicMode {
    let fired = fired_guards(mode, cfg, inputs);
    debug_assert!(fired.len() <= 1, "ambiguous transition from {mode:?}: {fired:?}");
    match fired.first() {
        None => mode,
        Some(Transition::ColdStart) => PmicMode::WakeUp,
        Some(Transition::ChargeReady | Transition::OvervoltageRelease | Transition::Recover) => PmicMode::Normal,
        Some(Transition::OvervoltageEnter) => PmicMode::Overcharge,
        Some(Transition::Undervoltage) => PmicMode::Shutdown {
            // A deadline past i64::MAX µs cannot arise from a validated scenario.
            grace_deadline: inputs.now.checked_add(cfg.grace_window).unwrap_or(inputs.now),
        },
        Some(Transition::GraceExpired) => PmicMode::DeepSleep,
    }
}

/// Mode plus the time of the last evaluation, rejecting time regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmicState {
    pub mode: PmicMode,
    pub last_step: TimePoint,
}

impl PmicState {
    pub fn new(mode: PmicMode, now: TimePoint) -> Self {
        PmicState { mode, last_step: now }
    }

    pub fn step(&mut self, cfg: &PmicConfig, inputs: &PmicInputs) -> Result<PmicMode, PmicError> {
        if inputs.now < self.last_step {
            return Err(PmicError::NonMonotoneTime { last: self.last_step, now: inputs.now });
        }
        self.last_step = inputs.now;
        self.mode = step_mode(self.mode, cfg, inputs);
        Ok(self.mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailStates {
    pub ao_out: bool,
    pub lv_out: bool,
    pub hv_out_available: bool,
    pub rail_voltage_ao: Voltage,
    pub rail_voltage_lv: Voltage,
    pub rail_voltage_hv: Voltage,
}

pub const AO_RAIL_VOLTAGE: Voltage = Voltage::from_milli_volts(2200);
pub const LV_RAIL_VOLTAGE: Voltage = Voltage::from_milli_volts(2200);
pub const HV_RAIL_VOLTAGE: Voltage = Voltage::from_milli_volts(3300);

pub fn rails_for(mode: PmicMode, latch_set: bool) -> RailStates {
    let ao_out = !matches!(mode, PmicMode::DeepSleep);
    let operating = mode.is_operating();
    RailStates {
        ao_out,
        lv_out: operating && latch_set,
        hv_out_available: operating,
        rail_voltage_ao: AO_RAIL_VOLTAGE,
        rail_voltage_lv: LV_RAIL_VOLTAGE,
        rail_voltage_hv: HV_RAIL_VOLTAGE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    NotOperating,
    /// Only the always-on rail is powered.
    Stage1,
    /// The switched rail powers the MCU, sensor and radio.
    Stage2,
}

pub fn operating_stage(mode: PmicMode, latch_set: bool) -> Stage {
    if rails_for(mode, latch_set).lv_out {
        Stage::Stage2
    } else if mode.is_operating() {
        Stage::Stage1
    } else {
        Stage::NotOperating
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(v_store_mv: i64, now: TimePoint) -> PmicInputs {
        PmicInputs {
            v_store: Voltage::from_milli_volts(v_store_mv),
            v_harvester: Voltage::ZERO,
            p_harvester: Power::ZERO,
            latch_set: false,
            now,
        }
    }

    #[test]
    fn cold_start_at_exact_threshold() {
        let cfg = PmicConfig::default();
        let mut i = inputs(0, TimePoint::ZERO);
        i.v_harvester = Voltage::from_milli_volts(300);
        i.p_harvester = Power::from_micro_watts(2.0);
        assert_eq!(step_mode(PmicMode::DeepSleep, &cfg, &i), PmicMode::WakeUp);
        i.p_harvester = Power::new(1999.0);
        assert_eq!(step_mode(PmicMode::DeepSleep, &cfg, &i), PmicMode::DeepSleep);
    }

    #[test]
    fn normal_self_loop_between_thresholds() {
        let cfg = PmicConfig::default();
        assert_eq!(step_mode(PmicMode::Normal, &cfg, &inputs(3300, TimePoint::ZERO)), PmicMode::Normal);
    }

    #[test]
    fn grace_expiry_returns_to_deep_sleep() {
        let cfg = PmicConfig::default();
        let t0 = TimePoint::from_secs(10);
        let deadline = t0.checked_add(Duration::from_millis(600)).unwrap();
        let mode = PmicMode::Shutdown { grace_deadline: deadline };
        assert_eq!(step_mode(mode, &cfg, &inputs(2900, deadline)), PmicMode::DeepSleep);
        let before = TimePoint::from_micros(deadline.as_micros() - 1).unwrap();
        assert_eq!(step_mode(mode, &cfg, &inputs(2900, before)), mode);
        assert_eq!(step_mode(mode, &cfg, &inputs(3000, before)), PmicMode::Normal);
    }

    #[test]
    fn undervoltage_sets_grace_deadline() {
        let cfg = PmicConfig::default();
        let now = TimePoint::from_secs(5);
        let next = step_mode(PmicMode::Normal, &cfg, &inputs(2999, now));
        assert_eq!(next, PmicMode::Shutdown { grace_deadline: TimePoint::from_millis(5600) });
    }

    #[test]
    fn overcharge_boundaries() {
        let cfg = PmicConfig::default();
        assert_eq!(step_mode(PmicMode::Normal, &cfg, &inputs(3600, TimePoint::ZERO)), PmicMode::Overcharge);
        assert_eq!(step_mode(PmicMode::Overcharge, &cfg, &inputs(3551, TimePoint::ZERO)), PmicMode::Overcharge);
        assert_eq!(step_mode(PmicMode::Overcharge, &cfg, &inputs(3550, TimePoint::ZERO)), PmicMode::Normal);
    }

    #[test]
    fn state_rejects_time_regression() {
        let cfg = PmicConfig::default();
        let mut s = PmicState::new(PmicMode::Normal, TimePoint::from_secs(2));
        assert!(matches!(
            s.step(&cfg, &inputs(3300, TimePoint::from_secs(1))),
            Err(PmicError::NonMonotoneTime { .. })
        ));
        assert_eq!(s.step(&cfg, &inputs(3300, TimePoint::from_secs(2))).unwrap(), PmicMode::Normal);
    }

    #[test]
    fn rails_per_mode() {
        let on = rails_for(PmicMode::Normal, true);
        assert!(on.ao_out && on.lv_out && on.hv_out_available);
        let stage1 = rails_for(PmicMode::Normal, false);
        assert!(stage1.ao_out && !stage1.lv_out && stage1.hv_out_available);
        for latch in [false, true] {
            let off = rails_for(PmicMode::DeepSleep, latch);
            assert!(!off.ao_out && !off.lv_out && !off.hv_out_available);
            let wake = rails_for(PmicMode::WakeUp, latch);
            assert!(wake.ao_out && !wake.lv_out && !wake.hv_out_available);
            let shut = rails_for(PmicMode::Shutdown { grace_deadline: TimePoint::ZERO }, latch);
            assert!(shut.ao_out && !shut.lv_out);
        }
        assert!(rails_for(PmicMode::Overcharge, true).lv_out);
        assert_eq!(on.rail_voltage_hv, Voltage::from_milli_volts(3300));
    }

    #[test]
    fn stages() {
        assert_eq!(operating_stage(PmicMode::Normal, false), Stage::Stage1);
        assert_eq!(operating_stage(PmicMode::Normal, true), Stage::Stage2);
        assert_eq!(operating_stage(PmicMode::Overcharge, true), Stage::Stage2);
        assert_eq!(operating_stage(PmicMode::DeepSleep, true), Stage::NotOperating);
        assert_eq!(operating_stage(PmicMode::WakeUp, true), Stage::NotOperating);
    }

    #[test]
    fn validate_rejects_bad_ordering() {
        let empty = Voltage::from_milli_volts(2800);
        assert!(PmicConfig::default().validate(empty).is_ok());
        assert!(PmicConfig::default().validate(Voltage::from_milli_volts(3000)).is_err());
        let cfg = PmicConfig { v_ovch: Voltage::from_milli_volts(2900), ..PmicConfig::default() };
        assert!(cfg.validate(empty).is_err());
        let cfg = PmicConfig { v_ovch_hysteresis: Voltage::from_milli_volts(700), ..PmicConfig::default() };
        assert!(cfg.validate(empty).is_err());
        let cfg = PmicConfig { v_ovch_hysteresis: Voltage::ZERO, ..PmicConfig::default() };
        assert!(cfg.validate(empty).is_err());
    }
}
