//! Storage element, harvester and load accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latch::ClearVia;
use crate::quantities::{
    average_power, energy_of, power_of, signed_energy, Current, Duration, Energy, Illuminance, Power,
    QuantityError, Voltage,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("voltage {0} outside the OCV curve range")]
    VoltageOutOfRange(Voltage),
    #[error("illuminance must be non-negative, got {0}")]
    NegativeIlluminance(f64),
    #[error("invalid OCV curve: {0}")]
    InvalidCurve(String),
    #[error("invalid harvester calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid load step `{name}`: {reason}")]
    InvalidStep { name: String, reason: String },
    #[error("invalid storage: {0}")]
    InvalidStorage(String),
    #[error("cycle duration must be positive")]
    EmptyCycle,
    #[error(transparent)]
    Quantity(#[from] QuantityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcvPoint {
    pub soc: f64,
    pub voltage: Voltage,
}

/// Which side of a voltage level a moving storage approaches from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Rising,
    Falling,
}

/// Piecewise-linear open-circuit voltage over state of charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OcvPoint>", into = "Vec<OcvPoint>")]
pub struct OcvCurve {
    points: Vec<OcvPoint>,
}

impl TryFrom<Vec<OcvPoint>> for OcvCurve {
    type Error = EnergyError;
    fn try_from(points: Vec<OcvPoint>) -> Result<Self, EnergyError> {
        OcvCurve::new(points)
    }
}

impl From<OcvCurve> for Vec<OcvPoint> {
    fn from(c: OcvCurve) -> Self {
        c.points
    }
}

impl OcvCurve {
    pub fn new(points: Vec<OcvPoint>) -> Result<Self, EnergyError> {
        let bad = |m: &str| Err(EnergyError::InvalidCurve(m.to_string()));
        if points.len() < 2 {
            return bad("needs at least two points");
        }
        if points.first().map(|p| p.soc) != Some(0.0) || points.last().map(|p| p.soc) != Some(1.0) {
            return bad("must start at soc 0 and end at soc 1");
        }
        for w in points.windows(2) {
            if w[1].soc <= w[0].soc {
                return bad("soc must be strictly increasing");
            }
            if w[1].voltage < w[0].voltage {
                return bad("voltage must be non-decreasing in soc");
            }
        }
        if points[0].voltage < Voltage::ZERO {
            return bad("voltages must be non-negative");
        }
        Ok(OcvCurve { points })
    }

    /// Generic small li-ion shape used when a scenario gives no curve.
    pub fn default_li_ion() -> Self {
        OcvCurve {
            points: vec![
                OcvPoint { soc: 0.0, voltage: Voltage::from_milli_volts(3000) },
                OcvPoint { soc: 0.1, voltage: Voltage::from_milli_volts(3600) },
                OcvPoint { soc: 1.0, voltage: Voltage::from_milli_volts(4200) },
            ],
        }
    }

    pub fn points(&self) -> &[OcvPoint] {
        &self.points
    }

    pub fn v_empty(&self) -> Voltage {
        self.points[0].voltage
    }

    pub fn v_full(&self) -> Voltage {
        self.points[self.points.len() - 1].voltage
    }

    fn interpolate_uv(&self, soc: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.soc <= soc);
        if idx == 0 {
            return self.points[0].voltage.as_micro_volts() as f64;
        }
        if idx >= self.points.len() {
            return self.v_full().as_micro_volts() as f64;
        }
        let (a, b) = (self.points[idx - 1], self.points[idx]);
        let (va, vb) = (a.voltage.as_micro_volts() as f64, b.voltage.as_micro_volts() as f64);
        va + (vb - va) * (soc - a.soc) / (b.soc - a.soc)
    }

    /// Voltage at `soc`, rounded to the nearest µV.
    pub fn ocv(&self, soc: f64) -> Result<Voltage, EnergyError> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(EnergyError::SocOutOfRange(soc));
        }
        Ok(Voltage::from_micro_volts(self.interpolate_uv(soc).round() as i64))
    }

    /// State of charge at which the curve reaches `v`.
    ///
    /// On a flat segment a rising storage meets `v` at the segment start and a
    /// falling storage at its end.
    pub fn soc_at(&self, v: Voltage, approach: Approach) -> Result<f64, EnergyError> {
        if v < self.v_empty() || v > self.v_full() {
            return Err(EnergyError::VoltageOutOfRange(v));
        }
        let target = v.as_micro_volts();
        let solve = |a: OcvPoint, b: OcvPoint| -> f64 {
            let (va, vb) = (a.voltage.as_micro_volts(), b.voltage.as_micro_volts());
            if vb == va {
                match approach {
                    Approach::Rising => a.soc,
                    Approach::Falling => b.soc,
                }
            } else {
                a.soc + (b.soc - a.soc) * (target - va) as f64 / (vb - va) as f64
            }
        };
        let covers = |w: &[OcvPoint]| w[0].voltage.as_micro_volts() <= target && target <= w[1].voltage.as_micro_volts();
        let segment = match approach {
            Approach::Rising => self.points.windows(2).find(|w| covers(w)),
            Approach::Falling => self.points.windows(2).rev().find(|w| covers(w)),
        };
        let w = segment.expect("voltage within range is covered by some segment");
        Ok(solve(w[0], w[1]).clamp(0.0, 1.0))
    }
}

/// Energy clipped by [`StorageElement::apply_net_power`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Clamp {
    /// Charge rejected because the store was full.
    pub overflow: Energy,
    /// Drain that the empty store could not supply.
    pub shortfall: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageElement {
    pub capacity_mah: f64,
    pub nominal_voltage: Voltage,
    pub e_capacity: Energy,
    pub e_store: Energy,
    pub ocv_curve: OcvCurve,
}

impl StorageElement {
    pub fn new(capacity_mah: f64, nominal_voltage: Voltage, ocv_curve: OcvCurve, initial_soc: f64) -> Result<Self, EnergyError> {
        if !(capacity_mah.is_finite() && capacity_mah > 0.0) {
            return Err(EnergyError::InvalidStorage(format!("capacity must be positive, got {capacity_mah} mAh")));
        }
        if nominal_voltage <= Voltage::ZERO {
            return Err(EnergyError::InvalidStorage("nominal voltage must be positive".into()));
        }
        if !(0.0..=1.0).contains(&initial_soc) {
            return Err(EnergyError::SocOutOfRange(initial_soc));
        }
        // mAh × 3.6 C/mAh × V = J
        let e_capacity = Energy::from_joules(capacity_mah * 3.6 * nominal_voltage.as_volts());
        Ok(StorageElement { capacity_mah, nominal_voltage, e_capacity, e_store: e_capacity * initial_soc, ocv_curve })
    }

    pub fn soc(&self) -> f64 {
        (self.e_store.value() / self.e_capacity.value()).clamp(0.0, 1.0)
    }

    pub fn voltage(&self) -> Voltage {
        self.ocv_curve.ocv(self.soc()).expect("soc is clamped to [0, 1]")
    }

    pub fn ocv(&self, soc: f64) -> Result<Voltage, EnergyError> {
        self.ocv_curve.ocv(soc)
    }

    /// Stored energy at which the terminal voltage reaches `v`.
    pub fn energy_at(&self, v: Voltage, approach: Approach) -> Result<Energy, EnergyError> {
        Ok(self.e_capacity * self.ocv_curve.soc_at(v, approach)?)
    }

    /// Integrates a constant net power over `dt`, clamping to `[0, e_capacity]`.
    pub fn apply_net_power(&self, p_net: Power, dt: Duration) -> Result<(StorageElement, Clamp), EnergyError> {
        if dt.is_negative() {
            return Err(QuantityError::Negative { what: "duration", value: dt.as_micros() as f64 }.into());
        }
        let raw = self.e_store + signed_energy(p_net, dt);
        let mut clamp = Clamp::default();
        let e_store = if raw > self.e_capacity {
            clamp.overflow = raw - self.e_capacity;
            self.e_capacity
        } else if raw < Energy::ZERO {
            clamp.shortfall = -raw;
            Energy::ZERO
        } else {
            raw
        };
        Ok((StorageElement { e_store, ..self.clone() }, clamp))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub lux: Illuminance,
    pub power: Power,
}

/// Light-to-power calibration of the photovoltaic cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvesterModel {
    pub calibration: Vec<CalibrationPoint>,
    /// Cell voltage presented to the cold-start circuit whenever any light falls on it.
    pub v_open_circuit: Voltage,
}

impl HarvesterModel {
    pub fn new(calibration: Vec<CalibrationPoint>, v_open_circuit: Voltage) -> Result<Self, EnergyError> {
        let bad = |m: &str| Err(EnergyError::InvalidCalibration(m.to_string()));
        if calibration.is_empty() {
            return bad("needs at least one point");
        }
        let mut prev = CalibrationPoint { lux: Illuminance::ZERO, power: Power::ZERO };
        for p in &calibration {
            if !(p.lux.value().is_finite() && p.power.value().is_finite()) {
                return bad("values must be finite");
            }
            if p.lux <= prev.lux {
                return bad("lux must be strictly increasing and above the (0 lux, 0 W) anchor");
            }
            if p.power < prev.power {
                return bad("power must be non-decreasing in lux");
            }
            prev = *p;
        }
        Ok(HarvesterModel { calibration, v_open_circuit })
    }

    pub fn harvest_power(&self, lux: Illuminance) -> Result<Power, EnergyError> {
        let x = lux.value();
        if x.is_nan() || x < 0.0 {
            return Err(EnergyError::NegativeIlluminance(x));
        }
        let anchor = CalibrationPoint { lux: Illuminance::ZERO, power: Power::ZERO };
        let pts: Vec<CalibrationPoint> = std::iter::once(anchor).chain(self.calibration.iter().copied()).collect();
        let idx = pts.partition_point(|p| p.lux.value() <= x).clamp(1, pts.len() - 1);
        let (a, b) = (pts[idx - 1], pts[idx]);
        let slope = (b.power.value() - a.power.value()) / (b.lux.value() - a.lux.value());
        Ok(Power::new(a.power.value() + slope * (x - a.lux.value())))
    }

    pub fn harvester_voltage(&self, lux: Illuminance) -> Voltage {
        if lux.value() > 0.0 {
            self.v_open_circuit
        } else {
            Voltage::ZERO
        }
    }
}

/// Quiescent currents of everything on the always-on rail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlwaysOnBudget {
    pub i_pmic: Current,
    pub i_rtc: Current,
    pub i_touch: Current,
    /// Residual between the measured total and the datasheet sum.
    pub i_extra_leakage: Current,
    pub rail_voltage: Voltage,
}

impl Default for AlwaysOnBudget {
    fn default() -> Self {
        AlwaysOnBudget {
            i_pmic: Current::from_nano_amps(200),
            i_rtc: Current::from_nano_amps(45),
            i_touch: Current::from_nano_amps(65),
            i_extra_leakage: Current::from_nano_amps(142),
            rail_voltage: Voltage::from_milli_volts(2200),
        }
    }
}

impl AlwaysOnBudget {
    pub fn total_current(&self) -> Current {
        [self.i_pmic, self.i_rtc, self.i_touch, self.i_extra_leakage].into_iter().sum()
    }

    pub fn always_on_power(&self) -> Power {
        power_of(self.rail_voltage, self.total_current()).expect("budget currents are validated non-negative")
    }
}

/// How the node idles between activity bursts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpmVariant {
    /// MCU and peripherals fully power-gated; only the always-on budget drains.
    HardwareGated,
    /// MCU held in a stop mode; `i_sleep` replaces the always-on budget.
    SoftwareSleep { i_sleep: Current },
}

impl DpmVariant {
    pub fn idle_current(&self, budget: &AlwaysOnBudget) -> Current {
        match self {
            DpmVariant::HardwareGated => budget.total_current(),
            DpmVariant::SoftwareSleep { i_sleep } => *i_sleep,
        }
    }

    pub fn idle_power(&self, budget: &AlwaysOnBudget) -> Power {
        power_of(budget.rail_voltage, self.idle_current(budget)).expect("idle current is validated non-negative")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rail {
    #[serde(rename = "LV")]
    Lv,
    #[serde(rename = "HV")]
    Hv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub name: String,
    pub duration: Duration,
    pub energy: Energy,
    pub rail: Rail,
}

impl LoadStep {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let bad = |reason: &str| Err(EnergyError::InvalidStep { name: self.name.clone(), reason: reason.into() });
        if self.duration.is_negative() {
            return bad("duration must be non-negative");
        }
        if !(self.energy.value().is_finite() && self.energy.value() >= 0.0) {
            return bad("energy must be finite and non-negative");
        }
        if self.duration == Duration::ZERO && self.energy.value() > 0.0 {
            return bad("a zero-length step cannot carry energy");
        }
        Ok(())
    }

    /// Constant draw while the step runs.
    pub fn power(&self) -> Power {
        average_power(self.energy, self.duration)
    }
}

/// MCU active current per MHz of core clock.
pub const MCU_RUN_CURRENT_PER_MHZ: Current = Current::from_nano_amps(37_000);

/// A run-mode MCU step derived from clock frequency instead of a measurement.
pub fn mcu_run_step(name: &str, duration: Duration, clock_mhz: f64, rail_voltage: Voltage) -> Result<LoadStep, EnergyError> {
    let per_mhz = power_of(rail_voltage, MCU_RUN_CURRENT_PER_MHZ)?;
    let energy = energy_of(per_mhz * clock_mhz, duration)?;
    Ok(LoadStep { name: name.to_string(), duration, energy, rail: Rail::Lv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScript {
    pub steps: Vec<LoadStep>,
    pub clear_via: ClearVia,
    /// Pre-measured always-on energy per cycle; when set, [`cycle_energy`] uses it verbatim.
    pub always_on_literal: Option<Energy>,
}

impl LoadScript {
    /// Sense, compute and advertise steps with their measured energies.
    pub fn case_study() -> Self {
        let step = |name: &str, ms: i64, energy: Energy| LoadStep {
            name: name.to_string(),
            duration: Duration::from_millis(ms),
            energy,
            rail: Rail::Lv,
        };
        LoadScript {
            steps: vec![
                step("Data acquisition", 1500, Energy::from_milli_joules(1.1)),
                step("MCU", 35, Energy::from_micro_joules(46.2)),
                step("System advertising", 2000, Energy::from_milli_joules(0.4)),
            ],
            clear_via: ClearVia::I2cCommand,
            always_on_literal: None,
        }
    }

    pub fn active_duration(&self) -> Duration {
        Duration::from_micros(self.steps.iter().map(|s| s.duration.as_micros()).sum())
    }

    pub fn active_energy(&self) -> Energy {
        self.steps.iter().map(|s| s.energy).sum()
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        self.steps.iter().try_for_each(LoadStep::validate)
    }
}

/// Energy for one activity burst followed by `sleep` of idling.
pub fn cycle_energy(script: &LoadScript, budget: &AlwaysOnBudget, sleep: Duration) -> Result<Energy, EnergyError> {
    cycle_energy_at(script, budget.always_on_power(), sleep)
}

/// [`cycle_energy`] with an explicit idle power.
pub fn cycle_energy_at(script: &LoadScript, idle_power: Power, sleep: Duration) -> Result<Energy, EnergyError> {
    let always_on = match script.always_on_literal {
        Some(e) => e,
        None => energy_of(idle_power, sleep.checked_add(script.active_duration())?)?,
    };
    Ok(script.active_energy() + always_on)
}

/// Harvest over one cycle minus the cycle's consumption.
pub fn net_gain(model: &HarvesterModel, lux: Illuminance, cycle: Energy, cycle_duration: Duration) -> Result<Energy, EnergyError> {
    if cycle_duration <= Duration::ZERO {
        return Err(EnergyError::EmptyCycle);
    }
    Ok(energy_of(model.harvest_power(lux)?, cycle_duration)? - cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn two_point() -> OcvCurve {
        OcvCurve::new(vec![
            OcvPoint { soc: 0.0, voltage: Voltage::from_milli_volts(3000) },
            OcvPoint { soc: 1.0, voltage: Voltage::from_milli_volts(4200) },
        ])
        .unwrap()
    }

    /// Case-study calibration: per-cycle harvest over 603.535 s.
    fn case_study_harvester() -> HarvesterModel {
        let cycle_s = 603.535;
        let pt = |lux: f64, mj: f64| CalibrationPoint {
            lux: Illuminance::new(lux),
            power: Power::new(mj * 1e6 / cycle_s),
        };
        HarvesterModel::new(vec![pt(200.0, 26.04), pt(300.0, 38.2), pt(500.0, 72.42)], Voltage::from_milli_volts(1200)).unwrap()
    }

    #[test]
    fn ocv_endpoints_and_midpoint() {
        let c = two_point();
        assert_eq!(c.ocv(0.0).unwrap(), Voltage::from_milli_volts(3000));
        assert_eq!(c.ocv(1.0).unwrap(), Voltage::from_milli_volts(4200));
        assert_eq!(c.ocv(0.5).unwrap(), Voltage::from_milli_volts(3600));
        assert!(matches!(c.ocv(1.01), Err(EnergyError::SocOutOfRange(_))));
        assert!(c.ocv(-0.1).is_err());
    }

    #[test]
    fn ocv_rejects_malformed_curves() {
        let p = |soc, mv| OcvPoint { soc, voltage: Voltage::from_milli_volts(mv) };
        assert!(OcvCurve::new(vec![p(0.0, 3000)]).is_err());
        assert!(OcvCurve::new(vec![p(0.0, 3000), p(0.9, 4000)]).is_err());
        assert!(OcvCurve::new(vec![p(0.0, 3000), p(1.0, 2900)]).is_err());
        assert!(OcvCurve::new(vec![p(0.0, 3000), p(0.5, 3500), p(0.5, 3600), p(1.0, 4000)]).is_err());
    }

    #[test]
    fn inverse_on_flat_segment_depends_on_approach() {
        let p = |soc, mv| OcvPoint { soc, voltage: Voltage::from_milli_volts(mv) };
        let c = OcvCurve::new(vec![p(0.0, 3000), p(0.2, 3600), p(0.8, 3600), p(1.0, 4200)]).unwrap();
        let v = Voltage::from_milli_volts(3600);
        assert_eq!(c.soc_at(v, Approach::Rising).unwrap(), 0.2);
        assert_eq!(c.soc_at(v, Approach::Falling).unwrap(), 0.8);
        assert!(close(c.soc_at(Voltage::from_milli_volts(3300), Approach::Rising).unwrap(), 0.1, 1e-12));
        assert!(c.soc_at(Voltage::from_milli_volts(4300), Approach::Rising).is_err());
    }

    #[test]
    fn storage_capacity_from_charge() {
        let s = StorageElement::new(10.0, Voltage::from_milli_volts(3700), OcvCurve::default_li_ion(), 1.0).unwrap();
        assert!(close(s.e_capacity.as_joules(), 133.2, 1e-9));
        assert_eq!(s.voltage(), Voltage::from_milli_volts(4200));
    }

    #[test]
    fn apply_net_power_cases() {
        let s = StorageElement::new(10.0, Voltage::from_milli_volts(3700), OcvCurve::default_li_ion(), 0.5).unwrap();
        let (same, clamp) = s.apply_net_power(Power::ZERO, Duration::from_secs(1000)).unwrap();
        assert_eq!(same.e_store, s.e_store);
        assert_eq!(clamp, Clamp::default());

        let s = StorageElement { e_store: Energy::from_joules(0.5), ..s };
        let (drained, _) = s.apply_net_power(Power::new(-994.4), Duration::from_secs(600)).unwrap();
        assert!(close((s.e_store - drained.e_store).as_milli_joules(), 0.59664, 1e-12));

        let near_full = StorageElement { e_store: s.e_capacity - Energy::from_micro_joules(1.0), ..s.clone() };
        let (full, clamp) = near_full.apply_net_power(Power::from_micro_watts(10.0), Duration::from_secs(1)).unwrap();
        assert_eq!(full.e_store, s.e_capacity);
        assert!(close(clamp.overflow.as_micro_joules(), 9.0, 1e-6));

        assert!(s.apply_net_power(Power::ZERO, Duration::from_micros(-1)).is_err());
    }

    #[test]
    fn harvest_power_calibration() {
        let h = case_study_harvester();
        // 26.04 mJ / 603.535 s and 72.42 mJ / 603.535 s
        assert!(close(h.harvest_power(Illuminance::new(200.0)).unwrap().as_micro_watts(), 43.15, 0.005));
        assert!(close(h.harvest_power(Illuminance::new(500.0)).unwrap().as_micro_watts(), 119.99, 0.005));
        assert_eq!(h.harvest_power(Illuminance::ZERO).unwrap(), Power::ZERO);
        assert!(h.harvest_power(Illuminance::new(-1.0)).is_err());
        // last segment extrapolates: slope (72.42 - 38.2) mJ / 200 lux per cycle
        let p600 = h.harvest_power(Illuminance::new(600.0)).unwrap().value();
        let expected = (72.42 + (72.42 - 38.2) / 2.0) * 1e6 / 603.535;
        assert!(close(p600, expected, 1e-6));
    }

    #[test]
    fn harvester_rejects_bad_calibration() {
        let pt = |lux: f64, uw: f64| CalibrationPoint { lux: Illuminance::new(lux), power: Power::from_micro_watts(uw) };
        let v = Voltage::from_milli_volts(1200);
        assert!(HarvesterModel::new(vec![], v).is_err());
        assert!(HarvesterModel::new(vec![pt(0.0, 0.0)], v).is_err());
        assert!(HarvesterModel::new(vec![pt(200.0, 40.0), pt(100.0, 50.0)], v).is_err());
        assert!(HarvesterModel::new(vec![pt(100.0, 40.0), pt(200.0, 30.0)], v).is_err());
    }

    #[test]
    fn always_on_budgets() {
        let b = AlwaysOnBudget::default();
        assert_eq!(b.total_current(), Current::from_nano_amps(452));
        assert_eq!(b.always_on_power().value(), 994.4);
        let theoretical = AlwaysOnBudget { i_extra_leakage: Current::ZERO, ..b };
        assert_eq!(theoretical.total_current(), Current::from_nano_amps(310));
        assert_eq!(theoretical.always_on_power().value(), 682.0);
        let zero = AlwaysOnBudget {
            i_pmic: Current::ZERO,
            i_rtc: Current::ZERO,
            i_touch: Current::ZERO,
            i_extra_leakage: Current::ZERO,
            ..b
        };
        assert_eq!(zero.always_on_power(), Power::ZERO);
    }

    #[test]
    fn case_study_cycle_energy() {
        let b = AlwaysOnBudget::default();
        let literal = LoadScript { always_on_literal: Some(Energy::from_milli_joules(0.6)), ..LoadScript::case_study() };
        let e = cycle_energy(&literal, &b, Duration::from_mins(10)).unwrap();
        assert!(close(e.as_milli_joules(), 2.1462, 1e-12));

        // computed always-on term: 994.4 nW × 603.535 s
        let e = cycle_energy(&LoadScript::case_study(), &b, Duration::from_mins(10)).unwrap();
        assert!(close(e.as_milli_joules(), 1.5462 + 0.994_4e-6 * 603.535 * 1e3, 1e-12));

        let empty = LoadScript { steps: vec![], ..LoadScript::case_study() };
        let e = cycle_energy(&empty, &b, Duration::from_secs(600)).unwrap();
        assert!(close(e.as_milli_joules(), 0.59664, 1e-12));
    }

    #[test]
    fn software_baseline_cycle_energy() {
        let b = AlwaysOnBudget::default();
        let variant = DpmVariant::SoftwareSleep { i_sleep: Current::from_micro_amps(3) };
        let e = cycle_energy_at(&LoadScript::case_study(), variant.idle_power(&b), Duration::from_mins(10)).unwrap();
        // 1.5462 mJ + 6.6 µW × 603.535 s
        assert!(close(e.as_milli_joules(), 1.5462 + 3.983_331, 1e-9));
        assert!(close(e.as_milli_joules(), 5.51, 0.03));
    }

    #[test]
    fn net_gains_from_calibration() {
        let h = case_study_harvester();
        let cycle = Energy::from_milli_joules(2.14);
        let d = Duration::from_micros(603_535_000);
        for (lux, expect) in [(200.0, 23.9), (300.0, 36.06), (500.0, 70.28)] {
            let g = net_gain(&h, Illuminance::new(lux), cycle, d).unwrap();
            assert!(close(g.as_milli_joules(), expect, 1e-9), "{lux} lux: {}", g.as_milli_joules());
        }
        assert!(net_gain(&h, Illuminance::new(1.0), cycle, Duration::ZERO).is_err());
    }

    #[test]
    fn mcu_run_mode_estimate() {
        // 37 µA/MHz × 2 MHz × 2.2 V × 35 ms
        let s = mcu_run_step("MCU", Duration::from_millis(35), 2.0, Voltage::from_milli_volts(2200)).unwrap();
        assert!(close(s.energy.as_micro_joules(), 5.698, 1e-9));
    }

    #[test]
    fn zero_length_step_with_energy_is_invalid() {
        let s = LoadStep { name: "x".into(), duration: Duration::ZERO, energy: Energy::new(1.0), rail: Rail::Lv };
        assert!(s.validate().is_err());
        assert_eq!(LoadStep { energy: Energy::ZERO, ..s }.power(), Power::ZERO);
    }

    proptest! {
        #[test]
        fn harvest_power_is_monotone(a in 0.0f64..2000.0, b in 0.0f64..2000.0) {
            let h = case_study_harvester();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(h.harvest_power(Illuminance::new(lo)).unwrap() <= h.harvest_power(Illuminance::new(hi)).unwrap());
        }

        #[test]
        fn ocv_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = OcvCurve::default_li_ion();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.ocv(lo).unwrap() <= c.ocv(hi).unwrap());
        }

        #[test]
        fn inverse_ocv_round_trips(mv in 3000i64..=4200) {
            let c = OcvCurve::default_li_ion();
            let v = Voltage::from_milli_volts(mv);
            for approach in [Approach::Rising, Approach::Falling] {
                let soc = c.soc_at(v, approach).unwrap();
                prop_assert_eq!(c.ocv(soc).unwrap(), v);
            }
        }
    }
}
