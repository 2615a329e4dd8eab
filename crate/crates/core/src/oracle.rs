//! Fixed-timestep reference integrator.
//!
//! Walks time in steps of at most `dt`. A step that carries the store across
//! a threshold is cut at the first microsecond where the mode machine reacts,
//! found by bisection on the forward voltage model. Scheduled events (alarms,
//! touches, light changes, step completions, grace deadlines) land on their
//! exact instants. It shares no scheduling code with the event-driven engine
//! and exists to cross-check it.

use serde::Serialize;

use crate::engine::{EngineError, ModeTransition};
use crate::pmic::{step_mode, PmicInputs, PmicMode};
use crate::quantities::{energy_of, signed_energy, Duration, Energy, Illuminance, Power, TimePoint};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub transitions: Vec<ModeTransition>,
    pub e_store_initial: Energy,
    pub e_store_final: Energy,
    pub e_harvested: Energy,
    pub e_consumed: Energy,
    pub e_discarded: Energy,
    pub e_shortfall: Energy,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Job {
    Idle,
    Running { index: usize, until: TimePoint },
    Clearing { at: TimePoint },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Due {
    Alarm,
    Touch,
    StepDone,
    Grace,
    Light,
    Clear,
    End,
}

struct State<'a> {
    s: &'a Scenario,
    t: TimePoint,
    mode: PmicMode,
    latch: bool,
    brownout: bool,
    job: Job,
    e: Energy,
    e_cap: Energy,
    lux: Illuminance,
    harvest: Power,
    idle: Power,
    storage: crate::energy::StorageElement,
    next_alarm: TimePoint,
    touch_i: usize,
    light_i: usize,
    out: OracleRun,
}

impl State<'_> {
    fn voltage(&mut self) -> crate::quantities::Voltage {
        self.storage.e_store = self.e;
        self.storage.voltage()
    }

    fn operating(&self) -> bool {
        matches!(self.mode, PmicMode::Normal | PmicMode::Overcharge)
    }

    /// Store power and the flows behind it, constant until the next mode or job change.
    fn flows(&self) -> (Power, Power, Power) {
        let asleep = matches!(self.mode, PmicMode::DeepSleep);
        let harvest = if asleep { Power::ZERO } else { self.harvest };
        let mut idle = if asleep { Power::ZERO } else { self.idle };
        let load = match self.job {
            Job::Running { index, .. } => self.s.load_script.steps[index].power(),
            _ => Power::ZERO,
        };
        let pass_through = matches!(self.mode, PmicMode::WakeUp | PmicMode::Shutdown { .. });
        if pass_through && self.e <= Energy::ZERO && harvest < idle + load {
            idle = harvest;
        }
        (harvest, idle + load, if matches!(self.mode, PmicMode::Overcharge) { -(idle + load) } else { harvest - (idle + load) })
    }

    fn integrate(&mut self, to: TimePoint) -> Result<(), EngineError> {
        let dt = to.since(self.t);
        if dt <= Duration::ZERO {
            return Ok(());
        }
        let (harvest, drain, into_store) = self.flows();
        let gained = energy_of(harvest, dt)?;
        self.out.e_harvested += gained;
        self.out.e_consumed += energy_of(drain, dt)?;
        if matches!(self.mode, PmicMode::Overcharge) {
            self.out.e_discarded += gained;
        }
        let e = self.e + signed_energy(into_store, dt);
        self.e = if e > self.e_cap {
            self.out.e_discarded += e - self.e_cap;
            self.e_cap
        } else if e < Energy::ZERO {
            self.out.e_shortfall += -e;
            Energy::ZERO
        } else {
            e
        };
        self.t = to;
        self.out.steps += 1;
        Ok(())
    }

    /// Whether the mode machine would move at time `t` with stored energy `e`.
    fn would_transition(&mut self, e: Energy, t: TimePoint) -> bool {
        self.storage.e_store = e.max(Energy::ZERO).min(self.e_cap);
        let inputs = PmicInputs {
            v_store: self.storage.voltage(),
            v_harvester: self.s.harvester.harvester_voltage(self.lux),
            p_harvester: self.harvest,
            latch_set: self.latch,
            now: t,
        };
        step_mode(self.mode, &self.s.pmic, &inputs) != self.mode
    }

    /// One fixed step towards `to`; if a voltage threshold is passed inside
    /// it, stops at the first microsecond where the mode machine reacts.
    fn tick(&mut self, to: TimePoint) -> Result<(), EngineError> {
        let (_, _, into_store) = self.flows();
        let e_at = |t: TimePoint, e0: Energy, t0: TimePoint| e0 + signed_energy(into_store, t.since(t0));
        let (e0, t0) = (self.e, self.t);
        if !self.would_transition(e_at(to, e0, t0), to) {
            return self.integrate(to);
        }
        let (mut lo, mut hi) = (t0.as_micros(), to.as_micros());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let tm = TimePoint::from_micros(mid)?;
            if self.would_transition(e_at(tm, e0, t0), tm) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.integrate(TimePoint::from_micros(hi)?)
    }

    fn settle(&mut self) -> Result<(), EngineError> {
        for _ in 0..8 {
            let inputs = PmicInputs {
                v_store: self.voltage(),
                v_harvester: self.s.harvester.harvester_voltage(self.lux),
                p_harvester: self.harvest,
                latch_set: self.latch,
                now: self.t,
            };
            let next = step_mode(self.mode, &self.s.pmic, &inputs);
            if next == self.mode {
                break;
            }
            self.out.transitions.push(ModeTransition { time: self.t, from: self.mode.kind(), to: next.kind() });
            self.mode = next;
            if matches!(next, PmicMode::DeepSleep) {
                self.latch = false;
                self.brownout = false;
            }
        }
        let powered = self.operating() && self.latch;
        match self.job {
            Job::Idle if powered && self.brownout => self.job = Job::Clearing { at: self.t },
            Job::Idle if powered => self.begin(0)?,
            Job::Running { .. } if !powered => {
                self.job = Job::Idle;
                self.brownout = true;
            }
            Job::Clearing { .. } if !powered => self.job = Job::Idle,
            _ => {}
        }
        Ok(())
    }

    fn begin(&mut self, index: usize) -> Result<(), EngineError> {
        let steps = &self.s.load_script.steps;
        self.job = match steps.get(index) {
            Some(step) => Job::Running { index, until: self.t.checked_add(step.duration)? },
            None => Job::Clearing { at: self.t },
        };
        Ok(())
    }

    fn next_due(&self, end: TimePoint) -> (TimePoint, Due) {
        let touch = self.s.touch.press_times.get(self.touch_i).map(|&t| (t, Due::Touch));
        let light = self.s.light_timeline.get(self.light_i).map(|l| (l.at, Due::Light));
        let job = match self.job {
            Job::Running { until, .. } => Some((until, Due::StepDone)),
            Job::Clearing { at } => Some((at, Due::Clear)),
            Job::Idle => None,
        };
        let grace = match self.mode {
            PmicMode::Shutdown { grace_deadline } => Some((grace_deadline, Due::Grace)),
            _ => None,
        };
        [Some((self.next_alarm, Due::Alarm)), Some((end, Due::End)), touch, light, job, grace]
            .into_iter()
            .flatten()
            .min()
            .expect("end is always due")
    }

    fn set_lux(&mut self, lux: Illuminance) -> Result<(), EngineError> {
        self.lux = lux;
        self.harvest = self.s.harvester.harvest_power(lux)?;
        Ok(())
    }

    fn handle(&mut self, due: Due) -> Result<(), EngineError> {
        let awake = !matches!(self.mode, PmicMode::DeepSleep);
        match due {
            Due::Alarm => {
                self.next_alarm = self.next_alarm.checked_add(self.s.rtc.alarm_period)?;
                if awake {
                    self.latch = true;
                    self.brownout = false;
                }
            }
            Due::Touch => {
                self.touch_i += 1;
                if awake {
                    self.latch = true;
                    self.brownout = false;
                }
            }
            Due::StepDone => {
                if let Job::Running { index, .. } = self.job {
                    self.begin(index + 1)?;
                }
            }
            Due::Grace => {}
            Due::Light => {
                let lux = self.s.light_timeline[self.light_i].lux;
                self.light_i += 1;
                self.set_lux(lux)?;
            }
            Due::Clear => {
                self.latch = false;
                self.brownout = false;
                self.job = Job::Idle;
            }
            Due::End => {}
        }
        Ok(())
    }
}

/// Integrates `scenario` with steps of at most `dt`.
pub fn run_oracle(scenario: &Scenario, dt: Duration) -> Result<OracleRun, EngineError> {
    scenario.validate()?;
    if dt <= Duration::ZERO {
        return Err(EngineError::Logic("oracle timestep must be positive".into()));
    }
    let storage = scenario.storage.build()?;
    let end = TimePoint::ZERO.checked_add(scenario.duration)?;
    let mut st = State {
        s: scenario,
        t: TimePoint::ZERO,
        mode: PmicMode::DeepSleep,
        latch: false,
        brownout: false,
        job: Job::Idle,
        e: storage.e_store,
        e_cap: storage.e_capacity,
        lux: Illuminance::ZERO,
        harvest: Power::ZERO,
        idle: scenario.dpm_variant.idle_power(&scenario.always_on),
        next_alarm: scenario.rtc.first_alarm,
        touch_i: 0,
        light_i: 1,
        out: OracleRun {
            transitions: Vec::new(),
            e_store_initial: storage.e_store,
            e_store_final: storage.e_store,
            e_harvested: Energy::ZERO,
            e_consumed: Energy::ZERO,
            e_discarded: Energy::ZERO,
            e_shortfall: Energy::ZERO,
            steps: 0,
        },
        storage,
    };
    st.set_lux(scenario.light_timeline[0].lux)?;
    let v0 = st.voltage();
    let cfg = &scenario.pmic;
    st.mode = if v0 >= cfg.v_ovch {
        PmicMode::Overcharge
    } else if v0 >= cfg.v_chrdy {
        PmicMode::Normal
    } else if scenario.harvester.harvester_voltage(st.lux) >= cfg.v_cold_start && st.harvest >= cfg.p_cold_start {
        PmicMode::WakeUp
    } else {
        PmicMode::DeepSleep
    };

    loop {
        let (at, due) = st.next_due(end);
        if st.t < at {
            let to = st.t.checked_add(dt)?.min(at);
            st.tick(to)?;
            if st.t < at {
                st.settle()?;
                continue;
            }
        }
        if due == Due::End {
            break;
        }
        // Threshold crossings rank between step completions and grace expiry.
        if due > Due::StepDone {
            st.settle()?;
            if st.next_due(end) != (at, due) {
                continue;
            }
        }
        st.handle(due)?;
        st.settle()?;
    }
    st.out.e_store_final = st.e;
    Ok(st.out)
}
