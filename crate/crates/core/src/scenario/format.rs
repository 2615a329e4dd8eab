//! TOML scenario files: parsing with defaults and a canonical emitter.
//!
//! Every dimensioned value is a string carrying its unit (`"452nA"`,
//! `"10min"`); illuminance and state of charge are plain numbers.

use std::fmt::Write as _;

use serde::Deserialize;
use toml::Spanned;

use super::units::{self, UnitError};
use super::{LightChange, Meta, Scenario, ScenarioError, StorageSpec};
use crate::energy::{
    AlwaysOnBudget, CalibrationPoint, DpmVariant, HarvesterModel, LoadScript, LoadStep, OcvCurve, OcvPoint, Rail,
};
use crate::latch::{ClearVia, RtcConfig, TouchScript};
use crate::pmic::PmicConfig;
use crate::quantities::{Duration, Illuminance, TimePoint, Voltage};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub scenario: Scenario,
    /// Fields that were filled from defaults.
    pub notes: Vec<String>,
    /// Defaulted fields whose default is unlikely to suit the storage element.
    pub warnings: Vec<String>,
}

type Text = Spanned<String>;

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Float(f64),
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Spanned<i64>,
    meta: RawMeta,
    pmic: Option<RawPmic>,
    storage: RawStorage,
    always_on: Option<RawAlwaysOn>,
    rtc: Option<RawRtc>,
    touch: Option<RawTouch>,
    harvester: RawHarvester,
    light: RawLight,
    load: Option<RawLoad>,
    dpm: Option<RawDpm>,
    sim: RawSim,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    name: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPmic {
    v_cold_start: Option<Text>,
    p_cold_start: Option<Text>,
    v_chrdy: Option<Text>,
    v_ovch: Option<Text>,
    v_ovch_hysteresis: Option<Text>,
    grace_window: Option<Text>,
    i_quiescent: Option<Text>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStorage {
    capacity: Text,
    nominal_voltage: Option<Text>,
    initial_soc: Spanned<Number>,
    ocv: Option<Vec<RawOcvPoint>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOcvPoint {
    soc: Spanned<Number>,
    voltage: Text,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAlwaysOn {
    extra_leakage: Option<Text>,
    rail_voltage: Option<Text>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRtc {
    alarm_period: Option<Text>,
    first_alarm: Option<Text>,
    i_quiescent: Option<Text>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTouch {
    #[serde(default)]
    presses: Vec<Text>,
    i_quiescent: Option<Text>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHarvester {
    v_open_circuit: Option<Text>,
    calibration: Vec<RawCalibration>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibration {
    lux: Spanned<Number>,
    power: Text,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLight {
    timeline: Vec<RawLightChange>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLightChange {
    at: Text,
    lux: Spanned<Number>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    clear_via: Option<Text>,
    always_on_literal: Option<Text>,
    #[serde(default)]
    step: Vec<RawStep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    name: String,
    duration: Text,
    energy: Text,
    rail: Option<Text>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDpm {
    variant: Text,
    i_sleep: Option<Text>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    duration: Text,
}

struct Ctx<'a> {
    source: &'a str,
    notes: Vec<String>,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn line(&self, span: std::ops::Range<usize>) -> usize {
        let end = span.start.min(self.source.len());
        self.source[..end].bytes().filter(|b| *b == b'\n').count() + 1
    }

    fn field_error<T>(&self, field: &str, span: std::ops::Range<usize>, message: impl ToString) -> Result<T, ScenarioError> {
        Err(ScenarioError::Field { field: field.to_string(), line: Some(self.line(span)), message: message.to_string() })
    }

    fn unit<T>(&self, field: &str, value: &Text, parse: fn(&str) -> Result<T, UnitError>) -> Result<T, ScenarioError> {
        parse(value.get_ref()).or_else(|e| self.field_error(field, value.span(), e))
    }

    fn number(&self, field: &str, value: &Spanned<Number>) -> Result<f64, ScenarioError> {
        let v = match value.get_ref() {
            Number::Float(f) => *f,
            Number::Int(i) => *i as f64,
            Number::Text(t) => return units::parse_lux(t).or_else(|e| self.field_error(field, value.span(), e)),
        };
        if !v.is_finite() || v < 0.0 {
            return self.field_error(field, value.span(), "must be a finite non-negative number");
        }
        Ok(v)
    }

    fn or_default<T: std::fmt::Display>(
        &mut self,
        field: &str,
        value: Option<&Text>,
        parse: fn(&str) -> Result<T, UnitError>,
        default: T,
    ) -> Result<T, ScenarioError> {
        match value {
            Some(v) => self.unit(field, v, parse),
            None => {
                self.notes.push(format!("{field} defaulted to {default}"));
                Ok(default)
            }
        }
    }
}

fn time_point(d: Duration) -> TimePoint {
    TimePoint::from_micros(d.as_micros()).expect("parsed durations are non-negative")
}

pub fn parse_scenario(source: &str) -> Result<ParsedScenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1).unwrap_or(0);
        ScenarioError::Syntax { line, message: e.message().trim().to_string() }
    })?;
    let mut cx = Ctx { source, notes: Vec::new(), warnings: Vec::new() };

    if *raw.schema_version.get_ref() != SCHEMA_VERSION {
        return cx.field_error(
            "schema_version",
            raw.schema_version.span(),
            format!("unsupported version {} (expected {SCHEMA_VERSION})", raw.schema_version.get_ref()),
        );
    }

    let meta = Meta { name: raw.meta.name, description: raw.meta.description };

    let pmic_defaulted = raw.pmic.is_none();
    let p = raw.pmic.unwrap_or_default();
    let d = PmicConfig::default();
    let volt = units::parse_voltage;
    let pmic = PmicConfig {
        v_cold_start: cx.or_default("pmic.v_cold_start", p.v_cold_start.as_ref(), volt, d.v_cold_start)?,
        p_cold_start: cx.or_default("pmic.p_cold_start", p.p_cold_start.as_ref(), units::parse_power, d.p_cold_start)?,
        v_chrdy: cx.or_default("pmic.v_chrdy", p.v_chrdy.as_ref(), volt, d.v_chrdy)?,
        v_ovch: cx.or_default("pmic.v_ovch", p.v_ovch.as_ref(), volt, d.v_ovch)?,
        v_ovch_hysteresis: cx.or_default("pmic.v_ovch_hysteresis", p.v_ovch_hysteresis.as_ref(), volt, d.v_ovch_hysteresis)?,
        grace_window: cx.or_default("pmic.grace_window", p.grace_window.as_ref(), units::parse_duration, d.grace_window)?,
        i_quiescent: cx.or_default("pmic.i_quiescent", p.i_quiescent.as_ref(), units::parse_current, d.i_quiescent)?,
    };
    for (field, given) in [
        ("pmic.v_chrdy", p.v_chrdy.is_some()),
        ("pmic.v_ovch", p.v_ovch.is_some()),
        ("pmic.v_ovch_hysteresis", p.v_ovch_hysteresis.is_some()),
    ] {
        if !given {
            cx.warnings.push(format!(
                "{field} uses the generic default; thresholds should be set for the storage element{}",
                if pmic_defaulted { " ([pmic] section missing)" } else { "" }
            ));
        }
    }

    let s = raw.storage;
    let capacity_mah = cx.unit("storage.capacity", &s.capacity, units::parse_charge_mah)?;
    let nominal_voltage =
        cx.or_default("storage.nominal_voltage", s.nominal_voltage.as_ref(), volt, Voltage::from_milli_volts(3700))?;
    let initial_soc = cx.number("storage.initial_soc", &s.initial_soc)?;
    let ocv = match s.ocv {
        Some(points) => {
            let mut out = Vec::with_capacity(points.len());
            for pt in &points {
                out.push(OcvPoint {
                    soc: cx.number("storage.ocv.soc", &pt.soc)?,
                    voltage: cx.unit("storage.ocv.voltage", &pt.voltage, volt)?,
                });
            }
            OcvCurve::new(out).map_err(|e| ScenarioError::Field { field: "storage.ocv".into(), line: None, message: e.to_string() })?
        }
        None => {
            cx.notes.push("storage.ocv defaulted to the built-in Li-ion curve".into());
            OcvCurve::default_li_ion()
        }
    };
    let storage = StorageSpec { capacity_mah, nominal_voltage, ocv, initial_soc };

    let rtc_raw = raw.rtc.unwrap_or_default();
    let rd = RtcConfig::default();
    let rtc = RtcConfig {
        alarm_period: cx.or_default("rtc.alarm_period", rtc_raw.alarm_period.as_ref(), units::parse_duration, rd.alarm_period)?,
        first_alarm: time_point(cx.or_default(
            "rtc.first_alarm",
            rtc_raw.first_alarm.as_ref(),
            units::parse_duration,
            Duration::ZERO,
        )?),
        i_quiescent: cx.or_default("rtc.i_quiescent", rtc_raw.i_quiescent.as_ref(), units::parse_current, rd.i_quiescent)?,
    };

    let touch_raw = raw.touch.unwrap_or_default();
    let mut press_times = Vec::with_capacity(touch_raw.presses.len());
    for t in &touch_raw.presses {
        press_times.push(time_point(cx.unit("touch.presses", t, units::parse_duration)?));
    }
    let touch = TouchScript {
        press_times,
        i_quiescent: cx.or_default(
            "touch.i_quiescent",
            touch_raw.i_quiescent.as_ref(),
            units::parse_current,
            TouchScript::default().i_quiescent,
        )?,
    };

    let ao = raw.always_on.unwrap_or_default();
    let ad = AlwaysOnBudget::default();
    let always_on = AlwaysOnBudget {
        i_pmic: pmic.i_quiescent,
        i_rtc: rtc.i_quiescent,
        i_touch: touch.i_quiescent,
        i_extra_leakage: cx.or_default("always_on.extra_leakage", ao.extra_leakage.as_ref(), units::parse_current, ad.i_extra_leakage)?,
        rail_voltage: cx.or_default("always_on.rail_voltage", ao.rail_voltage.as_ref(), volt, ad.rail_voltage)?,
    };

    let h = raw.harvester;
    let mut calibration = Vec::with_capacity(h.calibration.len());
    for c in &h.calibration {
        calibration.push(CalibrationPoint {
            lux: Illuminance::new(cx.number("harvester.calibration.lux", &c.lux)?),
            power: cx.unit("harvester.calibration.power", &c.power, units::parse_power)?,
        });
    }
    let v_open_circuit =
        cx.or_default("harvester.v_open_circuit", h.v_open_circuit.as_ref(), volt, Voltage::from_milli_volts(1200))?;
    let harvester = HarvesterModel::new(calibration, v_open_circuit)
        .map_err(|e| ScenarioError::Field { field: "harvester.calibration".into(), line: None, message: e.to_string() })?;

    let mut light_timeline = Vec::with_capacity(raw.light.timeline.len());
    for l in &raw.light.timeline {
        light_timeline.push(LightChange {
            at: time_point(cx.unit("light.timeline.at", &l.at, units::parse_duration)?),
            lux: Illuminance::new(cx.number("light.timeline.lux", &l.lux)?),
        });
    }

    let load_script = match raw.load {
        Some(load) => {
            let clear_via = match &load.clear_via {
                None => {
                    cx.notes.push("load.clear_via defaulted to i2c".into());
                    ClearVia::I2cCommand
                }
                Some(v) => match v.get_ref().as_str() {
                    "i2c" => ClearVia::I2cCommand,
                    "sw_dis" => ClearVia::SwDisSignal,
                    other => return cx.field_error("load.clear_via", v.span(), format!("`{other}` is not i2c or sw_dis")),
                },
            };
            let always_on_literal = match &load.always_on_literal {
                Some(v) => Some(cx.unit("load.always_on_literal", v, units::parse_energy)?),
                None => None,
            };
            let mut steps = Vec::with_capacity(load.step.len());
            for st in &load.step {
                let rail = match &st.rail {
                    None => Rail::Lv,
                    Some(r) => match r.get_ref().as_str() {
                        "LV" => Rail::Lv,
                        "HV" => Rail::Hv,
                        other => return cx.field_error("load.step.rail", r.span(), format!("`{other}` is not LV or HV")),
                    },
                };
                steps.push(LoadStep {
                    name: st.name.clone(),
                    duration: cx.unit("load.step.duration", &st.duration, units::parse_duration)?,
                    energy: cx.unit("load.step.energy", &st.energy, units::parse_energy)?,
                    rail,
                });
            }
            LoadScript { steps, clear_via, always_on_literal }
        }
        None => {
            cx.notes.push("load defaulted to the case-study sense/compute/advertise script".into());
            LoadScript::case_study()
        }
    };

    let dpm_variant = match &raw.dpm {
        None => DpmVariant::HardwareGated,
        Some(dpm) => match dpm.variant.get_ref().as_str() {
            "hardware" => {
                if let Some(i) = &dpm.i_sleep {
                    return cx.field_error("dpm.i_sleep", i.span(), "only valid with variant = \"software\"");
                }
                DpmVariant::HardwareGated
            }
            "software" => match &dpm.i_sleep {
                Some(i) => DpmVariant::SoftwareSleep { i_sleep: cx.unit("dpm.i_sleep", i, units::parse_current)? },
                None => return cx.field_error("dpm.i_sleep", dpm.variant.span(), "required when variant = \"software\""),
            },
            other => {
                return cx.field_error("dpm.variant", dpm.variant.span(), format!("`{other}` is not hardware or software"))
            }
        },
    };

    let duration = cx.unit("sim.duration", &raw.sim.duration, units::parse_duration)?;

    let scenario = Scenario {
        meta,
        pmic,
        storage,
        always_on,
        rtc,
        touch,
        harvester,
        light_timeline,
        load_script,
        dpm_variant,
        duration,
    };
    scenario.validate()?;
    Ok(ParsedScenario { scenario, notes: cx.notes, warnings: cx.warnings })
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Canonical text form; `parse_scenario(&emit_scenario(s))` yields `s` for any valid scenario.
pub fn emit_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let dur = units::format_duration;
    let tp = |t: TimePoint| dur(Duration::from_micros(t.as_micros()));
    let volt = units::format_voltage;
    let cur = units::format_current;

    let _ = writeln!(out, "schema_version = {SCHEMA_VERSION}\n");
    let _ = writeln!(out, "[meta]\nname = {}\ndescription = {}\n", quote(&s.meta.name), quote(&s.meta.description));

    let p = &s.pmic;
    let _ = writeln!(out, "[pmic]");
    let _ = writeln!(out, "v_cold_start = \"{}\"", volt(p.v_cold_start));
    let _ = writeln!(out, "p_cold_start = \"{}\"", units::format_power(p.p_cold_start));
    let _ = writeln!(out, "v_chrdy = \"{}\"", volt(p.v_chrdy));
    let _ = writeln!(out, "v_ovch = \"{}\"", volt(p.v_ovch));
    let _ = writeln!(out, "v_ovch_hysteresis = \"{}\"", volt(p.v_ovch_hysteresis));
    let _ = writeln!(out, "grace_window = \"{}\"", dur(p.grace_window));
    let _ = writeln!(out, "i_quiescent = \"{}\"\n", cur(p.i_quiescent));

    let st = &s.storage;
    let _ = writeln!(out, "[storage]");
    let _ = writeln!(out, "capacity = \"{}\"", units::format_charge_mah(st.capacity_mah));
    let _ = writeln!(out, "nominal_voltage = \"{}\"", volt(st.nominal_voltage));
    let _ = writeln!(out, "initial_soc = {:?}", st.initial_soc);
    let _ = writeln!(out, "ocv = [");
    for pt in st.ocv.points() {
        let _ = writeln!(out, "  {{ soc = {:?}, voltage = \"{}\" }},", pt.soc, volt(pt.voltage));
    }
    let _ = writeln!(out, "]\n");

    let _ = writeln!(out, "[always_on]");
    let _ = writeln!(out, "extra_leakage = \"{}\"", cur(s.always_on.i_extra_leakage));
    let _ = writeln!(out, "rail_voltage = \"{}\"\n", volt(s.always_on.rail_voltage));

    let _ = writeln!(out, "[rtc]");
    let _ = writeln!(out, "alarm_period = \"{}\"", dur(s.rtc.alarm_period));
    let _ = writeln!(out, "first_alarm = \"{}\"", tp(s.rtc.first_alarm));
    let _ = writeln!(out, "i_quiescent = \"{}\"\n", cur(s.rtc.i_quiescent));

    let _ = writeln!(out, "[touch]");
    let presses: Vec<String> = s.touch.press_times.iter().map(|t| format!("\"{}\"", tp(*t))).collect();
    let _ = writeln!(out, "presses = [{}]", presses.join(", "));
    let _ = writeln!(out, "i_quiescent = \"{}\"\n", cur(s.touch.i_quiescent));

    let _ = writeln!(out, "[harvester]");
    let _ = writeln!(out, "v_open_circuit = \"{}\"", volt(s.harvester.v_open_circuit));
    let _ = writeln!(out, "calibration = [");
    for c in &s.harvester.calibration {
        let _ = writeln!(out, "  {{ lux = {:?}, power = \"{}\" }},", c.lux.value(), units::format_power(c.power));
    }
    let _ = writeln!(out, "]\n");

    let _ = writeln!(out, "[light]\ntimeline = [");
    for l in &s.light_timeline {
        let _ = writeln!(out, "  {{ at = \"{}\", lux = {:?} }},", tp(l.at), l.lux.value());
    }
    let _ = writeln!(out, "]\n");

    let ls = &s.load_script;
    let _ = writeln!(out, "[load]");
    let via = match ls.clear_via {
        ClearVia::I2cCommand => "i2c",
        ClearVia::SwDisSignal => "sw_dis",
    };
    let _ = writeln!(out, "clear_via = \"{via}\"");
    if let Some(e) = ls.always_on_literal {
        let _ = writeln!(out, "always_on_literal = \"{}\"", units::format_energy(e));
    }
    for step in &ls.steps {
        let rail = match step.rail {
            Rail::Lv => "LV",
            Rail::Hv => "HV",
        };
        let _ = writeln!(out, "\n[[load.step]]");
        let _ = writeln!(out, "name = {}", quote(&step.name));
        let _ = writeln!(out, "duration = \"{}\"", dur(step.duration));
        let _ = writeln!(out, "energy = \"{}\"", units::format_energy(step.energy));
        let _ = writeln!(out, "rail = \"{rail}\"");
    }
    out.push('\n');

    let _ = writeln!(out, "[dpm]");
    match s.dpm_variant {
        DpmVariant::HardwareGated => {
            let _ = writeln!(out, "variant = \"hardware\"\n");
        }
        DpmVariant::SoftwareSleep { i_sleep } => {
            let _ = writeln!(out, "variant = \"software\"\ni_sleep = \"{}\"\n", cur(i_sleep));
        }
    }

    let _ = writeln!(out, "[sim]\nduration = \"{}\"", dur(s.duration));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::Current;

    const MINIMAL: &str = r#"
schema_version = 1

[meta]
name = "minimal"

[storage]
capacity = "10mAh"
initial_soc = 0.5

[harvester]
calibration = [{ lux = 200, power = "43uW" }]

[light]
timeline = [{ at = "0s", lux = 200 }]

[sim]
duration = "1h"
"#;

    #[test]
    fn case_study_round_trips() {
        let s = Scenario::case_study();
        let text = emit_scenario(&s);
        let parsed = parse_scenario(&text).unwrap();
        assert_eq!(parsed.scenario, s);
        assert!(parsed.notes.is_empty(), "{:?}", parsed.notes);
        assert!(parsed.warnings.is_empty());
        assert_eq!(emit_scenario(&parsed.scenario), text);
    }

    #[test]
    fn defaults_are_reported() {
        let mut text = MINIMAL.to_string();
        text.push_str("\n[pmic]\nv_chrdy = \"3.5V\"\nv_ovch = \"4.1V\"\n");
        let parsed = parse_scenario(&text).unwrap();
        assert!(parsed.notes.iter().any(|n| n.starts_with("pmic.grace_window defaulted to 0.6 s")), "{:?}", parsed.notes);
        assert!(parsed.notes.iter().any(|n| n.starts_with("load defaulted")));
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("v_ovch_hysteresis"));
        assert_eq!(parsed.scenario.always_on.total_current(), Current::from_nano_amps(452));
    }

    #[test]
    fn generic_thresholds_conflict_with_default_curve() {
        let err = parse_scenario(MINIMAL).unwrap_err();
        assert!(matches!(err, ScenarioError::Pmic(_)), "{err}");
    }

    #[test]
    fn unknown_field_names_line() {
        let text = MINIMAL.replace("initial_soc = 0.5", "initial_soc = 0.5\nvolume = 3");
        match parse_scenario(&text).unwrap_err() {
            ScenarioError::Syntax { line, message } => {
                assert_eq!(line, 10);
                assert!(message.contains("volume"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_unit_names_field_and_line() {
        let text = MINIMAL.replace("\"10mAh\"", "\"10mV\"");
        match parse_scenario(&text).unwrap_err() {
            ScenarioError::Field { field, line, .. } => {
                assert_eq!(field, "storage.capacity");
                assert_eq!(line, Some(8));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_section_is_a_syntax_error() {
        let text = MINIMAL.replace("[sim]\nduration = \"1h\"\n", "");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Syntax { .. })));
    }

    #[test]
    fn wrong_schema_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Field { line: Some(2), .. })));
    }

    #[test]
    fn software_variant_needs_sleep_current() {
        let base = MINIMAL.to_string() + "\n[pmic]\nv_chrdy = \"3.5V\"\nv_ovch = \"4.1V\"\n";
        assert!(parse_scenario(&(base.clone() + "\n[dpm]\nvariant = \"software\"\n")).is_err());
        let ok = parse_scenario(&(base + "\n[dpm]\nvariant = \"software\"\ni_sleep = \"3uA\"\n")).unwrap();
        assert_eq!(ok.scenario.dpm_variant, DpmVariant::SoftwareSleep { i_sleep: Current::from_micro_amps(3) });
    }
}
