//! Deterministic discrete-event loop.
//!
//! Between two events every power flow is constant, so stored energy moves
//! linearly and threshold crossings are solved in closed form. At most one
//! crossing event is outstanding; it is recomputed after every dispatch.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{Approach, EnergyError, StorageElement};
use crate::latch::{ClearCommand, LatchError, LatchState, WakeSource};
use crate::pmic::{operating_stage, ModeKind, PmicError, PmicInputs, PmicMode, PmicState, Stage};
use crate::quantities::{energy_of, Duration, Energy, Illuminance, Power, QuantityError, TimePoint, Voltage};
use crate::report::{CycleSummary, Report};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("logic error: {0}")]
    Logic(String),
    #[error("MCU clear latch issued at {0} while the switched rail is unpowered")]
    ClearWithoutPower(TimePoint),
    #[error("advance to {target} would skip queued event {pending} at {at}")]
    SkippedEvent { target: TimePoint, pending: String, at: TimePoint },
    #[error("while handling {event} at {time}: {source}")]
    AtEvent { event: String, time: TimePoint, source: Box<EngineError> },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Latch(#[from] LatchError),
    #[error(transparent)]
    Pmic(#[from] PmicError),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThresholdKind {
    ChrdyUp,
    ChrdyDown,
    OvchUp,
    OvchDown,
    /// Storage runs empty in wake-up or shutdown.
    Depleted,
}

impl ThresholdKind {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdKind::ChrdyUp => "chrdy_up",
            ThresholdKind::ChrdyDown => "chrdy_down",
            ThresholdKind::OvchUp => "ovch_up",
            ThresholdKind::OvchDown => "ovch_down",
            ThresholdKind::Depleted => "depleted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    RtcAlarm,
    TouchPress,
    LoadStepComplete,
    ThresholdCross(ThresholdKind),
    ShutdownGraceExpire,
    LightChange(Illuminance),
    McuClearLatch,
    SimEnd,
}

impl EventKind {
    /// Tie-break rank at equal timestamps; lower runs first.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::RtcAlarm => 0,
            EventKind::TouchPress => 1,
            EventKind::LoadStepComplete => 2,
            EventKind::ThresholdCross(_) => 3,
            EventKind::ShutdownGraceExpire => 4,
            EventKind::LightChange(_) => 5,
            EventKind::McuClearLatch => 6,
            EventKind::SimEnd => 7,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EventKind::RtcAlarm => "rtc_alarm".into(),
            EventKind::TouchPress => "touch_press".into(),
            EventKind::LoadStepComplete => "load_step_complete".into(),
            EventKind::ThresholdCross(k) => format!("threshold_cross:{}", k.name()),
            EventKind::ShutdownGraceExpire => "shutdown_grace_expire".into(),
            EventKind::LightChange(_) => "light_change".into(),
            EventKind::McuClearLatch => "mcu_clear_latch".into(),
            EventKind::SimEnd => "sim_end".into(),
        }
    }
}

/// Total order of the queue: time, then kind priority, then insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub time: TimePoint,
    pub priority: u8,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: TimePoint,
    pub kind: EventKind,
    pub seq: u64,
}

impl Event {
    pub fn key(&self) -> EventKey {
        EventKey { time: self.time, priority: self.kind.priority(), seq: self.seq }
    }
}

#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    events: BTreeMap<EventKey, EventKind>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: TimePoint, kind: EventKind) -> EventKey {
        let key = EventKey { time, priority: kind.priority(), seq: self.next_seq };
        self.next_seq += 1;
        self.events.insert(key, kind);
        key
    }

    pub fn cancel(&mut self, key: EventKey) -> Option<EventKind> {
        self.events.remove(&key)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.events
            .pop_first()
            .map(|(k, kind)| Event { time: k.time, kind, seq: k.seq })
    }

    pub fn peek(&self) -> Option<(EventKey, EventKind)> {
        self.events.first_key_value().map(|(k, v)| (*k, *v))
    }

    /// Earliest queued time other than `skip`.
    fn next_time_excluding(&self, skip: Option<EventKey>) -> Option<TimePoint> {
        self.events.keys().find(|k| Some(**k) != skip).map(|k| k.time)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub time: TimePoint,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub e_harvested: Energy,
    pub e_consumed_by_component: BTreeMap<String, Energy>,
    pub e_overcharge_discarded: Energy,
    /// Drain the empty store could not supply; zero unless rounding pushed it below empty.
    pub e_shortfall: Energy,
    pub time_in_mode: BTreeMap<ModeKind, Duration>,
    pub cycles_completed: u64,
    pub anomalies: Vec<Anomaly>,
    pub e_store_initial: Energy,
    pub e_store_final: Energy,
}

impl Ledger {
    fn new(e_store: Energy) -> Self {
        Ledger {
            e_harvested: Energy::ZERO,
            e_consumed_by_component: BTreeMap::new(),
            e_overcharge_discarded: Energy::ZERO,
            e_shortfall: Energy::ZERO,
            time_in_mode: ModeKind::ALL.iter().map(|m| (*m, Duration::ZERO)).collect(),
            cycles_completed: 0,
            anomalies: Vec::new(),
            e_store_initial: e_store,
            e_store_final: e_store,
        }
    }

    pub fn total_consumed(&self) -> Energy {
        self.e_consumed_by_component.values().copied().sum()
    }

    /// `E_harvested − E_consumed − E_discarded (+ shortfall) − ΔE_store`.
    pub fn conservation_residual(&self) -> Energy {
        self.e_harvested - self.total_consumed() - self.e_overcharge_discarded + self.e_shortfall
            - (self.e_store_final - self.e_store_initial)
    }

    /// Residual relative to the largest flow in the ledger.
    pub fn conservation_error(&self) -> f64 {
        let delta = (self.e_store_final - self.e_store_initial).abs();
        let scale = [self.e_harvested, self.total_consumed(), self.e_overcharge_discarded, delta]
            .iter()
            .fold(0.0f64, |m, e| m.max(e.value()));
        let r = self.conservation_residual().value().abs();
        if r == 0.0 {
            0.0
        } else {
            r / scale
        }
    }

    pub fn total_time(&self) -> Duration {
        Duration::from_micros(self.time_in_mode.values().map(|d| d.as_micros()).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: TimePoint,
    pub event: String,
    pub mode: ModeKind,
    pub latch_set: bool,
    pub wake_source: WakeSource,
    pub stage: Stage,
    pub v_store: Voltage,
    pub e_store: Energy,
    pub active_step: Option<String>,
    pub note: Option<String>,
}

impl TraceRecord {
    pub const HEADER: &'static str = "time_us,event_kind,mode,latch,v_store_uV,e_store_nJ";

    /// One line of the debugging trace stream.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time.as_micros(),
            self.event,
            self.mode,
            u8::from(self.latch_set),
            self.v_store.as_micro_volts(),
            self.e_store.value()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTransition {
    pub time: TimePoint,
    pub from: ModeKind,
    pub to: ModeKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activity {
    Idle,
    Running { index: usize, started: TimePoint, complete: EventKey },
    AwaitingClear { clear: EventKey },
}

#[derive(Debug, Clone)]
struct OpenCycle {
    index: u64,
    start: TimePoint,
    from_alarm: bool,
    consumed: BTreeMap<String, Energy>,
    harvested: Energy,
}

/// Constant flows between two events.
#[derive(Debug, Clone)]
struct Flows {
    harvest: Power,
    idle: Power,
    step: Option<(String, Power)>,
}

impl Flows {
    fn drain(&self) -> Power {
        self.idle + self.step.as_ref().map(|(_, p)| *p).unwrap_or(Power::ZERO)
    }
}

pub const ALWAYS_ON_COMPONENT: &str = "Always-on domain";

pub struct Simulation<'a> {
    scenario: &'a Scenario,
    now: TimePoint,
    pmic: PmicState,
    latch: LatchState,
    storage: StorageElement,
    lux: Illuminance,
    activity: Activity,
    queue: EventQueue,
    ledger: Ledger,
    threshold: Option<(EventKey, ThresholdKind)>,
    grace: Option<EventKey>,
    /// The current latch episode lost its switched rail mid-script.
    brownout: bool,
    last_cross: Option<(TimePoint, ThresholdKind)>,
    cycle: OpenCycle,
    cycles: Vec<CycleSummary>,
    trace: Vec<TraceRecord>,
    transitions: Vec<ModeTransition>,
    finished: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, EngineError> {
        scenario.validate()?;
        let storage = scenario.storage.build()?;
        let lux = scenario.light_timeline[0].lux;
        let mode = initial_mode(scenario, &storage, lux)?;
        let mut queue = EventQueue::default();
        for change in &scenario.light_timeline[1..] {
            queue.push(change.at, EventKind::LightChange(change.lux));
        }
        for &t in &scenario.touch.press_times {
            queue.push(t, EventKind::TouchPress);
        }
        queue.push(scenario.rtc.first_alarm, EventKind::RtcAlarm);
        queue.push(TimePoint::ZERO.checked_add(scenario.duration)?, EventKind::SimEnd);

        let ledger = Ledger::new(storage.e_store);
        let mut sim = Simulation {
            scenario,
            now: TimePoint::ZERO,
            pmic: PmicState::new(mode, TimePoint::ZERO),
            latch: LatchState::default(),
            storage,
            lux,
            activity: Activity::Idle,
            queue,
            ledger,
            threshold: None,
            grace: None,
            brownout: false,
            last_cross: None,
            cycle: OpenCycle {
                index: 0,
                start: TimePoint::ZERO,
                from_alarm: false,
                consumed: BTreeMap::new(),
                harvested: Energy::ZERO,
            },
            cycles: Vec::new(),
            trace: Vec::new(),
            transitions: Vec::new(),
            finished: false,
        };
        sim.reschedule_threshold()?;
        sim.record("init", None);
        Ok(sim)
    }

    pub fn now(&self) -> TimePoint {
        self.now
    }

    pub fn mode(&self) -> PmicMode {
        self.pmic.mode
    }

    pub fn latch(&self) -> LatchState {
        self.latch
    }

    pub fn storage(&self) -> &StorageElement {
        &self.storage
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn stage(&self) -> Stage {
        operating_stage(self.pmic.mode, self.latch.set)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn active_step(&self) -> Option<&str> {
        match self.activity {
            Activity::Running { index, .. } => Some(self.scenario.load_script.steps[index].name.as_str()),
            _ => None,
        }
    }

    fn flows(&self) -> Result<Flows, EngineError> {
        let mode = self.pmic.mode;
        let harvest = if matches!(mode, PmicMode::DeepSleep) {
            Power::ZERO
        } else {
            self.scenario.harvester.harvest_power(self.lux)?
        };
        let idle = if matches!(mode, PmicMode::DeepSleep) {
            Power::ZERO
        } else {
            self.scenario.dpm_variant.idle_power(&self.scenario.always_on)
        };
        let step = match self.activity {
            Activity::Running { index, .. } => {
                let s = &self.scenario.load_script.steps[index];
                Some((s.name.clone(), s.power()))
            }
            _ => None,
        };
        let mut flows = Flows { harvest, idle, step };
        if self.starved(&flows) {
            // An empty store passes the harvest straight through to the always-on rail.
            flows.idle = flows.harvest;
        }
        Ok(flows)
    }

    fn starved(&self, flows: &Flows) -> bool {
        matches!(self.pmic.mode, PmicMode::WakeUp | PmicMode::Shutdown { .. })
            && self.storage.e_store <= Energy::ZERO
            && flows.harvest < flows.drain()
    }

    /// Net power into the store; harvest is rejected while overcharged.
    fn storage_power(&self, flows: &Flows) -> Power {
        if matches!(self.pmic.mode, PmicMode::Overcharge) {
            -flows.drain()
        } else {
            flows.harvest - flows.drain()
        }
    }

    /// Integrates constant flows from `now` to `t`.
    pub fn advance_to(&mut self, t: TimePoint) -> Result<(), EngineError> {
        if t < self.now {
            return Err(EngineError::Logic(format!("advance_to({t}) before now ({})", self.now)));
        }
        if let Some((key, kind)) = self.queue.peek() {
            if key.time < t {
                return Err(EngineError::SkippedEvent { target: t, pending: kind.label(), at: key.time });
            }
        }
        let dt = t.since(self.now);
        if dt == Duration::ZERO {
            return Ok(());
        }
        let flows = self.flows()?;
        let harvested = energy_of(flows.harvest, dt)?;
        self.ledger.e_harvested += harvested;
        self.cycle.harvested += harvested;

        let consume = |name: &str, p: Power, ledger: &mut Ledger, cycle: &mut OpenCycle| -> Result<(), EngineError> {
            if p == Power::ZERO {
                return Ok(());
            }
            let e = energy_of(p, dt)?;
            *ledger.e_consumed_by_component.entry(name.to_string()).or_insert(Energy::ZERO) += e;
            *cycle.consumed.entry(name.to_string()).or_insert(Energy::ZERO) += e;
            Ok(())
        };
        consume(ALWAYS_ON_COMPONENT, flows.idle, &mut self.ledger, &mut self.cycle)?;
        if let Some((name, p)) = &flows.step {
            consume(name, *p, &mut self.ledger, &mut self.cycle)?;
        }

        if matches!(self.pmic.mode, PmicMode::Overcharge) {
            self.ledger.e_overcharge_discarded += harvested;
        }
        let (storage, clamp) = self.storage.apply_net_power(self.storage_power(&flows), dt)?;
        self.storage = storage;
        self.ledger.e_overcharge_discarded += clamp.overflow;
        self.ledger.e_shortfall += clamp.shortfall;
        self.ledger.e_store_final = self.storage.e_store;

        *self.ledger.time_in_mode.entry(self.pmic.mode.kind()).or_insert(Duration::ZERO) =
            self.ledger.time_in_mode[&self.pmic.mode.kind()].checked_add(dt)?;
        self.now = t;
        Ok(())
    }

    /// Exact time at which the store reaches `v_target` under the current net
    /// power, if that happens no later than the next queued event.
    pub fn find_threshold_crossing(&self, v_target: Voltage, approach: Approach) -> Result<Option<TimePoint>, EngineError> {
        let e_target = self.storage.energy_at(v_target, approach)?;
        let p_net = self.storage_power(&self.flows()?);
        let horizon = self.queue.next_time_excluding(self.threshold.map(|(k, _)| k));
        Ok(self.crossing_time(e_target, p_net, horizon))
    }

    fn crossing_time(&self, e_target: Energy, p_net: Power, horizon: Option<TimePoint>) -> Option<TimePoint> {
        let gap = (e_target - self.storage.e_store).value();
        if gap == 0.0 {
            return Some(self.now);
        }
        let p = p_net.value();
        if p == 0.0 || gap.signum() != p.signum() {
            return None;
        }
        // nJ / nW = s
        // Rounding up puts the store on or just past the target.
        let us = (gap / p * 1e6).ceil();
        if us.is_nan() || us >= i64::MAX as f64 / 2.0 {
            return None;
        }
        let t = self.now.checked_add(Duration::from_micros(us as i64)).ok()?;
        match horizon {
            Some(h) if t > h => None,
            _ => Some(t),
        }
    }

    /// The threshold the store is heading for in the current mode, if any.
    fn pending_threshold(&self, p_net: Power) -> Option<(ThresholdKind, Option<(Voltage, Approach)>)> {
        let cfg = &self.scenario.pmic;
        let rising = p_net.value() > 0.0;
        let falling = p_net.value() < 0.0;
        match self.pmic.mode {
            PmicMode::WakeUp | PmicMode::Shutdown { .. } if rising => {
                Some((ThresholdKind::ChrdyUp, Some((cfg.v_chrdy, Approach::Rising))))
            }
            PmicMode::WakeUp | PmicMode::Shutdown { .. } if falling => Some((ThresholdKind::Depleted, None)),
            PmicMode::Normal if rising => Some((ThresholdKind::OvchUp, Some((cfg.v_ovch, Approach::Rising)))),
            PmicMode::Normal if falling => Some((
                ThresholdKind::ChrdyDown,
                Some((cfg.v_chrdy - Voltage::from_micro_volts(1), Approach::Falling)),
            )),
            PmicMode::Overcharge if falling => {
                Some((ThresholdKind::OvchDown, Some((cfg.v_ovch_release(), Approach::Falling))))
            }
            _ => None,
        }
    }

    fn threshold_voltage(&self, kind: ThresholdKind) -> Voltage {
        let cfg = &self.scenario.pmic;
        match kind {
            ThresholdKind::ChrdyUp => cfg.v_chrdy,
            ThresholdKind::ChrdyDown => cfg.v_chrdy - Voltage::from_micro_volts(1),
            ThresholdKind::OvchUp => cfg.v_ovch,
            ThresholdKind::OvchDown => cfg.v_ovch_release(),
            ThresholdKind::Depleted => self.storage.ocv_curve.v_empty(),
        }
    }

    fn reschedule_threshold(&mut self) -> Result<(), EngineError> {
        if let Some((key, _)) = self.threshold.take() {
            self.queue.cancel(key);
        }
        let p_net = self.storage_power(&self.flows()?);
        let Some((kind, target)) = self.pending_threshold(p_net) else {
            return Ok(());
        };
        let e_target = match target {
            None => Energy::ZERO,
            Some((v, approach)) => {
                let curve = &self.storage.ocv_curve;
                if v < curve.v_empty() || v > curve.v_full() {
                    return Ok(());
                }
                self.storage.energy_at(v, approach)?
            }
        };
        let horizon = self.queue.next_time_excluding(None);
        let Some(mut t) = self.crossing_time(e_target, p_net, horizon) else {
            return Ok(());
        };
        if t <= self.now && self.last_cross == Some((self.now, kind)) {
            // Already dispatched this crossing without a transition; nudge past rounding.
            t = self.now.checked_add(Duration::from_micros(1))?;
        }
        let key = self.queue.push(t, EventKind::ThresholdCross(kind));
        self.threshold = Some((key, kind));
        Ok(())
    }

    fn pmic_inputs(&self) -> Result<PmicInputs, EngineError> {
        Ok(PmicInputs {
            v_store: self.storage.voltage(),
            v_harvester: self.scenario.harvester.harvester_voltage(self.lux),
            p_harvester: self.scenario.harvester.harvest_power(self.lux)?,
            latch_set: self.latch.set,
            now: self.now,
        })
    }

    fn anomaly(&mut self, kind: &str, message: String) {
        self.ledger.anomalies.push(Anomaly { time: self.now, kind: kind.to_string(), message });
    }

    fn set_mode(&mut self, to: PmicMode, notes: &mut Vec<String>) -> Result<(), EngineError> {
        let from = self.pmic.mode;
        if from == to {
            return Ok(());
        }
        self.pmic.mode = to;
        self.transitions.push(ModeTransition { time: self.now, from: from.kind(), to: to.kind() });
        notes.push(format!("{} -> {}", from, to));
        if matches!(from, PmicMode::Shutdown { .. }) {
            if let Some(key) = self.grace.take() {
                self.queue.cancel(key);
            }
        }
        if let PmicMode::Shutdown { grace_deadline } = to {
            self.grace = Some(self.queue.push(grace_deadline, EventKind::ShutdownGraceExpire));
        }
        if matches!(to, PmicMode::DeepSleep) && self.latch.set {
            self.latch = LatchState::cleared(self.now);
            self.brownout = false;
            notes.push("latch lost power".into());
        }
        Ok(())
    }

    /// Runs the mode machine to a fixed point, then reconciles the load script with the stage.
    fn settle(&mut self, notes: &mut Vec<String>) -> Result<(), EngineError> {
        for _ in 0..8 {
            let inputs = self.pmic_inputs()?;
            let from = self.pmic.mode;
            let mut probe = self.pmic;
            let to = probe.step(&self.scenario.pmic, &inputs)?;
            self.pmic.last_step = probe.last_step;
            if to == from {
                break;
            }
            self.set_mode(to, notes)?;
        }
        let stage2 = self.stage() == Stage::Stage2;
        match self.activity {
            Activity::Idle if stage2 && self.brownout => {
                // Rebooted MCU finds a brown-out reset and drops straight back to stage 1.
                notes.push("resumed after brown-out; cycle skipped".into());
                self.activity = Activity::AwaitingClear { clear: self.queue.push(self.now, EventKind::McuClearLatch) };
            }
            Activity::Idle if stage2 => self.start_step(0)?,
            Activity::Running { index, started, complete } if !stage2 => {
                self.queue.cancel(complete);
                self.activity = Activity::Idle;
                let step = &self.scenario.load_script.steps[index];
                let msg = format!(
                    "step `{}` aborted after {} of {} (switched rail lost)",
                    step.name,
                    self.now.since(started),
                    step.duration
                );
                notes.push(msg.clone());
                self.anomaly("step_aborted", msg);
                self.brownout = true;
            }
            Activity::AwaitingClear { clear } if !stage2 => {
                self.queue.cancel(clear);
                self.activity = Activity::Idle;
                self.anomaly("clear_lost", "MCU lost power before clearing the latch".into());
            }
            _ => {}
        }
        Ok(())
    }

    fn start_step(&mut self, index: usize) -> Result<(), EngineError> {
        let steps = &self.scenario.load_script.steps;
        self.activity = if index >= steps.len() {
            Activity::AwaitingClear { clear: self.queue.push(self.now, EventKind::McuClearLatch) }
        } else {
            let done = self.now.checked_add(steps[index].duration)?;
            Activity::Running { index, started: self.now, complete: self.queue.push(done, EventKind::LoadStepComplete) }
        };
        Ok(())
    }

    fn close_cycle(&mut self, at_alarm: bool) {
        let cycle = &self.cycle;
        let consumed: Energy = cycle.consumed.values().copied().sum();
        let empty = self.now == cycle.start && consumed == Energy::ZERO && cycle.harvested == Energy::ZERO;
        if !empty {
            let completed = cycle.from_alarm && at_alarm;
            if completed {
                self.ledger.cycles_completed += 1;
            }
            self.cycles.push(CycleSummary {
                cycle: cycle.index,
                start: cycle.start,
                end: self.now,
                completed,
                consumed,
                harvested: cycle.harvested,
                net: cycle.harvested - consumed,
                end_soc: self.storage.soc(),
                consumed_by_component: cycle.consumed.clone(),
            });
        }
    }

    /// Applies the queue-head event `ev`; `now` must already equal `ev.time`.
    pub fn dispatch(&mut self, ev: Event) -> Result<(), EngineError> {
        if ev.time != self.now {
            return Err(EngineError::Logic(format!("dispatch of event at {} while now is {}", ev.time, self.now)));
        }
        self.dispatch_inner(ev).map_err(|e| EngineError::AtEvent {
            event: ev.kind.label(),
            time: ev.time,
            source: Box::new(e),
        })
    }

    fn dispatch_inner(&mut self, ev: Event) -> Result<(), EngineError> {
        let mut notes = Vec::new();
        let ao_on = !matches!(self.pmic.mode, PmicMode::DeepSleep);
        match ev.kind {
            EventKind::RtcAlarm => {
                self.close_cycle(true);
                self.cycle = OpenCycle {
                    index: self.cycle.index + 1,
                    start: self.now,
                    from_alarm: true,
                    consumed: BTreeMap::new(),
                    harvested: Energy::ZERO,
                };
                let next = self.now.checked_add(self.scenario.rtc.alarm_period)?;
                self.queue.push(next, EventKind::RtcAlarm);
                if ao_on {
                    let was_stage2 = self.stage() == Stage::Stage2;
                    let (latch, _) = self.latch.on_rtc_alarm(self.now, self.scenario.rtc.alarm_period)?;
                    self.latch = latch;
                    self.brownout = false;
                    if was_stage2 {
                        notes.push("alarm while switched rail already on".into());
                    }
                    if matches!(self.pmic.mode, PmicMode::Shutdown { .. }) {
                        notes.push("alarm during shutdown grace; switched rail deferred".into());
                    }
                } else {
                    notes.push("alarm ignored: always-on rail off".into());
                }
            }
            EventKind::TouchPress => {
                if ao_on {
                    if self.stage() == Stage::Stage2 {
                        notes.push("touch while switched rail already on".into());
                    }
                    self.latch = self.latch.on_touch(self.now)?;
                    self.brownout = false;
                } else {
                    notes.push("touch ignored: always-on rail off".into());
                }
            }
            EventKind::LoadStepComplete => {
                let Activity::Running { index, complete, .. } = self.activity else {
                    return Err(EngineError::Logic("step completion with no active step".into()));
                };
                if complete.seq != ev.seq {
                    return Err(EngineError::Logic("completion of a step that is not the active one".into()));
                }
                self.start_step(index + 1)?;
            }
            EventKind::ThresholdCross(kind) => {
                self.threshold = None;
                self.last_cross = Some((self.now, kind));
                let target = self.threshold_voltage(kind);
                let v = self.storage.voltage();
                if (v - target).as_micro_volts().abs() > 1 {
                    let msg = format!("stale {} crossing: v_store {} vs target {}", kind.name(), v, target);
                    self.anomaly("stale_threshold", msg);
                }
                if kind == ThresholdKind::Depleted {
                    notes.push("storage depleted; always-on rail limited to harvest".into());
                }
            }
            EventKind::ShutdownGraceExpire => {
                self.grace = None;
            }
            EventKind::LightChange(lux) => {
                self.lux = lux;
            }
            EventKind::McuClearLatch => {
                if self.stage() != Stage::Stage2 {
                    return Err(EngineError::ClearWithoutPower(self.now));
                }
                let cmd = ClearCommand { via: self.scenario.load_script.clear_via, time: self.now };
                let (latch, redundant) = self.latch.mcu_clear(cmd)?;
                self.latch = latch;
                self.brownout = false;
                if redundant.is_some() {
                    self.anomaly("redundant_clear", "latch already clear".into());
                }
                self.activity = Activity::Idle;
            }
            EventKind::SimEnd => {
                self.close_cycle(false);
                self.finished = true;
            }
        }
        if !self.finished {
            self.settle(&mut notes)?;
            self.reschedule_threshold()?;
        }
        self.check_invariants()?;
        let note = if notes.is_empty() { None } else { Some(notes.join("; ")) };
        self.record(&ev.kind.label(), note);
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), EngineError> {
        if matches!(self.activity, Activity::Running { .. }) && self.stage() != Stage::Stage2 {
            return Err(EngineError::Logic("load step active outside stage 2".into()));
        }
        if !self.latch.is_consistent() {
            return Err(EngineError::Logic("latch clear but wake source recorded".into()));
        }
        Ok(())
    }

    fn record(&mut self, event: &str, note: Option<String>) {
        let record = TraceRecord {
            time: self.now,
            event: event.to_string(),
            mode: self.pmic.mode.kind(),
            latch_set: self.latch.set,
            wake_source: self.latch.wake_source,
            stage: self.stage(),
            v_store: self.storage.voltage(),
            e_store: self.storage.e_store,
            active_step: self.active_step().map(str::to_string),
            note,
        };
        self.trace.push(record);
    }

    /// Pops and applies the next event. Returns `false` once the run has ended.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.finished {
            return Ok(false);
        }
        let ev = self
            .queue
            .pop()
            .ok_or_else(|| EngineError::Logic("event queue drained before SimEnd".into()))?;
        self.advance_to(ev.time).map_err(|e| EngineError::AtEvent {
            event: ev.kind.label(),
            time: ev.time,
            source: Box::new(e),
        })?;
        self.dispatch(ev)?;
        Ok(!self.finished)
    }

    pub fn into_report(self) -> Report {
        let scenario = self.scenario.clone();
        Report {
            scenario_name: scenario.meta.name.clone(),
            variant: scenario.dpm_variant,
            notes: Vec::new(),
            final_soc: self.storage.soc(),
            final_voltage: self.storage.voltage(),
            final_mode: self.pmic.mode.kind(),
            ledger: self.ledger,
            cycles: self.cycles,
            transitions: self.transitions,
            trace: self.trace,
            scenario,
        }
    }
}

/// Mode at t = 0, read off the initial storage voltage and light level.
pub fn initial_mode(scenario: &Scenario, storage: &StorageElement, lux: Illuminance) -> Result<PmicMode, EngineError> {
    let cfg = &scenario.pmic;
    let v = storage.voltage();
    Ok(if v >= cfg.v_ovch {
        PmicMode::Overcharge
    } else if v >= cfg.v_chrdy {
        PmicMode::Normal
    } else if scenario.harvester.harvester_voltage(lux) >= cfg.v_cold_start
        && scenario.harvester.harvest_power(lux)? >= cfg.p_cold_start
    {
        PmicMode::WakeUp
    } else {
        PmicMode::DeepSleep
    })
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario) -> Result<Report, EngineError> {
    let mut sim = Simulation::new(scenario)?;
    while sim.step()? {}
    Ok(sim.into_report())
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.time, self.kind, self.message)
    }
}
