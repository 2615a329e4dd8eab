//! Simulation inputs: the full description of one node and its environment.

mod format;
pub mod units;

pub use format::{emit_scenario, parse_scenario, ParsedScenario, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{
    AlwaysOnBudget, CalibrationPoint, DpmVariant, EnergyError, HarvesterModel, LoadScript, OcvCurve, StorageElement,
};
use crate::latch::{RtcConfig, TouchScript};
use crate::pmic::{PmicConfig, PmicError};
use crate::quantities::{Current, Duration, Illuminance, Power, TimePoint, Voltage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Field { field: String, line: Option<usize>, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pmic(#[from] PmicError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub capacity_mah: f64,
    pub nominal_voltage: Voltage,
    pub ocv: OcvCurve,
    pub initial_soc: f64,
}

impl StorageSpec {
    pub fn build(&self) -> Result<StorageElement, EnergyError> {
        StorageElement::new(self.capacity_mah, self.nominal_voltage, self.ocv.clone(), self.initial_soc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightChange {
    pub at: TimePoint,
    pub lux: Illuminance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub meta: Meta,
    pub pmic: PmicConfig,
    pub storage: StorageSpec,
    pub always_on: AlwaysOnBudget,
    pub rtc: RtcConfig,
    pub touch: TouchScript,
    pub harvester: HarvesterModel,
    pub light_timeline: Vec<LightChange>,
    pub load_script: LoadScript,
    pub dpm_variant: DpmVariant,
    pub duration: Duration,
}

/// Sleep phase of one case-study cycle.
pub const CASE_STUDY_SLEEP: Duration = Duration::from_mins(10);

impl Scenario {
    /// The evaluated node: 10 mAh cell, RTC wake every 10 min of sleep plus the
    /// 3535 ms activity burst, measured 452 nA idle budget, constant 200 lux.
    pub fn case_study() -> Scenario {
        let load_script = LoadScript::case_study();
        let period = CASE_STUDY_SLEEP.checked_add(load_script.active_duration()).expect("small durations");
        let cycle_s = period.as_secs_f64();
        let calib = |lux: f64, mj: f64| CalibrationPoint {
            lux: Illuminance::new(lux),
            power: Power::new(mj * 1e6 / cycle_s),
        };
        Scenario {
            meta: Meta {
                name: "case-study".into(),
                description: "Thermal-comfort BLE node, 10-minute RTC cycle, measured per-step loads".into(),
            },
            pmic: PmicConfig {
                v_chrdy: Voltage::from_milli_volts(3500),
                v_ovch: Voltage::from_milli_volts(4100),
                ..PmicConfig::default()
            },
            storage: StorageSpec {
                capacity_mah: 10.0,
                nominal_voltage: Voltage::from_milli_volts(3700),
                ocv: OcvCurve::default_li_ion(),
                initial_soc: 0.8,
            },
            always_on: AlwaysOnBudget::default(),
            rtc: RtcConfig { alarm_period: period, first_alarm: TimePoint::ZERO, i_quiescent: Current::from_nano_amps(45) },
            touch: TouchScript::default(),
            harvester: HarvesterModel {
                calibration: vec![calib(200.0, 26.04), calib(300.0, 38.2), calib(500.0, 72.42)],
                v_open_circuit: Voltage::from_milli_volts(1200),
            },
            light_timeline: vec![LightChange { at: TimePoint::ZERO, lux: Illuminance::new(200.0) }],
            load_script,
            dpm_variant: DpmVariant::HardwareGated,
            duration: period,
        }
    }

    /// Same scenario under constant illumination.
    pub fn with_constant_lux(&self, lux: Illuminance) -> Scenario {
        Scenario { light_timeline: vec![LightChange { at: TimePoint::ZERO, lux }], ..self.clone() }
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let storage = self.storage.build()?;
        self.pmic.validate(storage.ocv_curve.v_empty())?;
        HarvesterModel::new(self.harvester.calibration.clone(), self.harvester.v_open_circuit)?;
        self.load_script.validate()?;

        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let b = &self.always_on;
        if b.i_pmic != self.pmic.i_quiescent {
            return invalid(format!("always-on PMIC current {} differs from pmic.i_quiescent {}", b.i_pmic, self.pmic.i_quiescent));
        }
        if b.i_rtc != self.rtc.i_quiescent {
            return invalid(format!("always-on RTC current {} differs from rtc.i_quiescent {}", b.i_rtc, self.rtc.i_quiescent));
        }
        if b.i_touch != self.touch.i_quiescent {
            return invalid(format!("always-on touch current {} differs from touch.i_quiescent {}", b.i_touch, self.touch.i_quiescent));
        }
        if [b.i_pmic, b.i_rtc, b.i_touch, b.i_extra_leakage].iter().any(|i| *i < Current::ZERO) {
            return invalid("currents must be non-negative".into());
        }
        if b.rail_voltage < Voltage::ZERO {
            return invalid("rail voltage must be non-negative".into());
        }
        if let DpmVariant::SoftwareSleep { i_sleep } = self.dpm_variant {
            if i_sleep < Current::ZERO {
                return invalid("software sleep current must be non-negative".into());
            }
        }
        if self.rtc.alarm_period <= Duration::ZERO {
            return invalid("rtc.alarm_period must be positive".into());
        }
        if !self.touch.is_strictly_increasing() {
            return invalid("touch press times must be strictly increasing".into());
        }
        match self.light_timeline.first() {
            Some(first) if first.at == TimePoint::ZERO => {}
            _ => return invalid("light timeline must start at t = 0".into()),
        }
        if !self.light_timeline.windows(2).all(|w| w[0].at < w[1].at) {
            return invalid("light timeline must be strictly increasing in time".into());
        }
        if self.light_timeline.iter().any(|l| !(l.lux.value() >= 0.0 && l.lux.value().is_finite())) {
            return invalid("illuminance must be finite and non-negative".into());
        }
        if self.duration.is_negative() {
            return invalid("sim.duration must be non-negative".into());
        }
        Ok(())
    }

    /// Names of top-level fields that differ, ignoring `dpm_variant` and `meta`.
    pub fn differences_except_variant(&self, other: &Scenario) -> Vec<&'static str> {
        let mut diff = Vec::new();
        if self.pmic != other.pmic {
            diff.push("pmic");
        }
        if self.storage != other.storage {
            diff.push("storage");
        }
        if self.always_on != other.always_on {
            diff.push("always_on");
        }
        if self.rtc != other.rtc {
            diff.push("rtc");
        }
        if self.touch != other.touch {
            diff.push("touch");
        }
        if self.harvester != other.harvester {
            diff.push("harvester");
        }
        if self.light_timeline != other.light_timeline {
            diff.push("light");
        }
        if self.load_script != other.load_script {
            diff.push("load");
        }
        if self.duration != other.duration {
            diff.push("sim.duration");
        }
        diff
    }
}
