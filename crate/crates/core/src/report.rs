//! Run results and their CSV / JSON / text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::DpmVariant;
use crate::engine::{Anomaly, Ledger, ModeTransition, TraceRecord, ALWAYS_ON_COMPONENT};
use crate::pmic::ModeKind;
use crate::quantities::{Duration, Energy, TimePoint, Voltage};
use crate::scenario::Scenario;

/// Energy flows between two consecutive RTC alarms.
///
/// Cycle 0 covers the time before the first alarm; the last row may be cut
/// short by the end of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle: u64,
    pub start: TimePoint,
    pub end: TimePoint,
    pub completed: bool,
    pub consumed: Energy,
    pub harvested: Energy,
    pub net: Energy,
    pub end_soc: f64,
    pub consumed_by_component: BTreeMap<String, Energy>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario_name: String,
    pub variant: DpmVariant,
    /// Defaults and warnings collected while loading the scenario.
    pub notes: Vec<String>,
    pub ledger: Ledger,
    pub cycles: Vec<CycleSummary>,
    pub final_soc: f64,
    pub final_voltage: Voltage,
    pub final_mode: ModeKind,
    pub transitions: Vec<ModeTransition>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Text,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!("unknown report format `{other}` (expected csv, json or text)")),
        }
    }
}

pub const CSV_HEADER: &str = "cycle,start_us,consumed_nJ,harvested_nJ,net_nJ,end_soc";

impl Report {
    pub fn anomalies(&self) -> &[Anomaly] {
        &self.ledger.anomalies
    }

    pub fn completed_cycles(&self) -> impl Iterator<Item = &CycleSummary> {
        self.cycles.iter().filter(|c| c.completed)
    }

    /// Mean consumption per completed cycle, by component.
    pub fn mean_cycle_breakdown(&self) -> Option<BTreeMap<String, Energy>> {
        let n = self.completed_cycles().count();
        if n == 0 {
            return None;
        }
        let mut sum: BTreeMap<String, Energy> = BTreeMap::new();
        for c in self.completed_cycles() {
            for (k, e) in &c.consumed_by_component {
                *sum.entry(k.clone()).or_insert(Energy::ZERO) += *e;
            }
        }
        Some(sum.into_iter().map(|(k, e)| (k, e * (1.0 / n as f64))).collect())
    }

    pub fn trace_lines(&self) -> String {
        let mut out = String::from(TraceRecord::HEADER);
        out.push('\n');
        for r in &self.trace {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Text => emit_text(report),
    }
}

fn emit_csv(report: &Report) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.cycles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.cycle,
            c.start.as_micros(),
            c.consumed.value(),
            c.harvested.value(),
            c.net.value(),
            c.end_soc
        );
    }
    out
}

fn mj(e: Energy) -> String {
    format!("{:.4} mJ", e.as_milli_joules())
}

fn emit_text(report: &Report) -> String {
    let mut out = String::new();
    let s = &report.scenario;
    let variant = match report.variant {
        DpmVariant::HardwareGated => "hardware-gated".to_string(),
        DpmVariant::SoftwareSleep { i_sleep } => format!("software sleep at {i_sleep}"),
    };
    let _ = writeln!(out, "Scenario: {} ({variant} idle)", report.scenario_name);
    for note in &report.notes {
        let _ = writeln!(out, "  note: {note}");
    }
    let _ = writeln!(out, "Simulated: {}, completed cycles: {}", report.ledger.total_time(), report.ledger.cycles_completed);
    let _ = writeln!(
        out,
        "Final state: soc {:.6}, {}, mode {}",
        report.final_soc, report.final_voltage, report.final_mode
    );

    if let Some(breakdown) = report.mean_cycle_breakdown() {
        let n = report.completed_cycles().count();
        let period = s.rtc.alarm_period;
        let _ = writeln!(out, "\nPer-cycle energy (mean of {n} completed cycles)");
        let _ = writeln!(out, "  {:<32} {:>14} {:>14}", "Event", "Duration", "Energy");
        let row = |out: &mut String, name: &str, d: Duration, e: Energy| {
            let _ = writeln!(out, "  {:<32} {:>14} {:>14}", name, d.to_string(), mj(e));
        };
        for step in &s.load_script.steps {
            row(&mut out, &step.name, step.duration, breakdown.get(&step.name).copied().unwrap_or(Energy::ZERO));
        }
        row(&mut out, ALWAYS_ON_COMPONENT, period, breakdown.get(ALWAYS_ON_COMPONENT).copied().unwrap_or(Energy::ZERO));
        let total: Energy = breakdown.values().copied().sum();
        row(&mut out, "Total per cycle", period, total);
        let harvested: Energy = report.completed_cycles().map(|c| c.harvested).sum::<Energy>() * (1.0 / n as f64);
        let _ = writeln!(out, "  {:<32} {:>14} {:>14}", "Harvested", "", mj(harvested));
        let _ = writeln!(out, "  {:<32} {:>14} {:>14}", "Net gain", "", mj(harvested - total));
    }

    let l = &report.ledger;
    let _ = writeln!(out, "\nEnergy ledger");
    let _ = writeln!(out, "  {:<32} {:>14}", "harvested", mj(l.e_harvested));
    for (name, e) in &l.e_consumed_by_component {
        let _ = writeln!(out, "  {:<32} {:>14}", format!("consumed: {name}"), mj(*e));
    }
    let _ = writeln!(out, "  {:<32} {:>14}", "overcharge discarded", mj(l.e_overcharge_discarded));
    let _ = writeln!(out, "  {:<32} {:>14}", "storage change", mj(l.e_store_final - l.e_store_initial));
    let _ = writeln!(out, "  {:<32} {:>14.3e}", "conservation error", l.conservation_error());

    let _ = writeln!(out, "\nMode residency");
    for (mode, d) in &l.time_in_mode {
        let _ = writeln!(out, "  {:<32} {:>14}", mode.name(), d.to_string());
    }

    if !report.cycles.is_empty() {
        let _ = writeln!(out, "\nCycles");
        let _ = writeln!(out, "  {:>6} {:>14} {:>14} {:>14} {:>14} {:>9}", "cycle", "start", "consumed", "harvested", "net", "end soc");
        for c in &report.cycles {
            let _ = writeln!(
                out,
                "  {:>6} {:>14} {:>14} {:>14} {:>14} {:>9.6}",
                c.cycle,
                c.start.to_string(),
                mj(c.consumed),
                mj(c.harvested),
                mj(c.net),
                c.end_soc
            );
        }
    }

    if !l.anomalies.is_empty() {
        let _ = writeln!(out, "\nAnomalies ({})", l.anomalies.len());
        for a in &l.anomalies {
            let _ = writeln!(out, "  {a}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn empty_run_has_only_headers() {
        let mut s = Scenario::case_study();
        s.duration = Duration::ZERO;
        let r = run(&s).unwrap();
        assert_eq!(emit_report(&r, ReportFormat::Csv), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn text_report_lists_each_load_step() {
        let r = run(&Scenario::case_study()).unwrap();
        let text = emit_report(&r, ReportFormat::Text);
        for needle in ["Data acquisition", "1.1000 mJ", "MCU", "0.0462 mJ", "System advertising", "0.4000 mJ", "Always-on domain", "0.6002 mJ"] {
            assert!(text.contains(needle), "missing {needle} in\n{text}");
        }
    }
}
