//! Wake latch and its set/clear sources.
//!
//! Touch and RTC events set the latch, which holds the switched-rail enable
//! until the MCU clears it over I²C or the dedicated disable line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantities::{Current, Duration, QuantityError, TimePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatchError {
    #[error("latch event at {at} precedes last change at {last}")]
    TimeRegression { last: TimePoint, at: TimePoint },
    #[error("RTC alarm handled at {at}, but it was scheduled for {scheduled}")]
    AlarmMismatch { scheduled: TimePoint, at: TimePoint },
    #[error(transparent)]
    Quantity(#[from] QuantityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WakeSource {
    None,
    Touch,
    Rtc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatchState {
    pub set: bool,
    pub wake_source: WakeSource,
    pub last_change: TimePoint,
}

impl Default for LatchState {
    fn default() -> Self {
        LatchState::cleared(TimePoint::ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtcConfig {
    pub alarm_period: Duration,
    pub first_alarm: TimePoint,
    pub i_quiescent: Current,
}

impl Default for RtcConfig {
    fn default() -> Self {
        RtcConfig {
            alarm_period: Duration::from_mins(10),
            first_alarm: TimePoint::ZERO,
            i_quiescent: Current::from_nano_amps(45),
        }
    }
}

impl RtcConfig {
    /// Alarm instants in `[first_alarm, until]`.
    pub fn alarms_until(&self, until: TimePoint) -> impl Iterator<Item = TimePoint> + '_ {
        let period = self.alarm_period;
        std::iter::successors(Some(self.first_alarm), move |t| t.checked_add(period).ok())
            .take_while(move |t| *t <= until)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchScript {
    pub press_times: Vec<TimePoint>,
    pub i_quiescent: Current,
}

impl Default for TouchScript {
    fn default() -> Self {
        TouchScript { press_times: Vec::new(), i_quiescent: Current::from_nano_amps(65) }
    }
}

impl TouchScript {
    pub fn is_strictly_increasing(&self) -> bool {
        self.press_times.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClearVia {
    I2cCommand,
    SwDisSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClearCommand {
    pub via: ClearVia,
    pub time: TimePoint,
}

/// A clear that found the latch already clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedundantClear {
    pub at: TimePoint,
    pub via: ClearVia,
}

impl LatchState {
    pub fn cleared(at: TimePoint) -> Self {
        LatchState { set: false, wake_source: WakeSource::None, last_change: at }
    }

    fn check_time(&self, t: TimePoint) -> Result<(), LatchError> {
        if t < self.last_change {
            Err(LatchError::TimeRegression { last: self.last_change, at: t })
        } else {
            Ok(())
        }
    }

    pub fn on_touch(self, t: TimePoint) -> Result<LatchState, LatchError> {
        self.check_time(t)?;
        Ok(LatchState { set: true, wake_source: WakeSource::Touch, last_change: t })
    }

    /// Sets the latch from an RTC alarm firing at its scheduled instant `t`.
    /// Returns the next alarm instant.
    pub fn on_rtc_alarm(self, t: TimePoint, period: Duration) -> Result<(LatchState, TimePoint), LatchError> {
        self.check_time(t)?;
        let next = t.checked_add(period)?;
        Ok((LatchState { set: true, wake_source: WakeSource::Rtc, last_change: t }, next))
    }

    /// Like [`LatchState::on_rtc_alarm`], also checking `t` against the schedule.
    pub fn on_scheduled_rtc_alarm(
        self,
        scheduled: TimePoint,
        t: TimePoint,
        period: Duration,
    ) -> Result<(LatchState, TimePoint), LatchError> {
        if scheduled != t {
            return Err(LatchError::AlarmMismatch { scheduled, at: t });
        }
        self.on_rtc_alarm(t, period)
    }

    /// Clears the latch. Both clear paths are equivalent here.
    ///
    /// Whether the MCU is powered to issue the command is the caller's concern.
    pub fn mcu_clear(self, cmd: ClearCommand) -> Result<(LatchState, Option<RedundantClear>), LatchError> {
        self.check_time(cmd.time)?;
        if !self.set {
            return Ok((self, Some(RedundantClear { at: cmd.time, via: cmd.via })));
        }
        Ok((LatchState::cleared(cmd.time), None))
    }

    pub fn read_wake_source(&self) -> WakeSource {
        self.wake_source
    }

    pub fn is_consistent(&self) -> bool {
        self.set || self.wake_source == WakeSource::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: i64) -> TimePoint {
        TimePoint::from_secs(s)
    }

    #[test]
    fn touch_sets_latch() {
        let l = LatchState::default().on_touch(t(3)).unwrap();
        assert_eq!(l, LatchState { set: true, wake_source: WakeSource::Touch, last_change: t(3) });
        assert_eq!(l.read_wake_source(), WakeSource::Touch);
    }

    #[test]
    fn touch_overrides_rtc_source() {
        let (l, _) = LatchState::default().on_rtc_alarm(t(1), Duration::from_secs(600)).unwrap();
        let l = l.on_touch(t(2)).unwrap();
        assert_eq!(l.wake_source, WakeSource::Touch);
        assert!(l.set);
    }

    #[test]
    fn repeated_touch_only_moves_timestamp() {
        let a = LatchState::default().on_touch(t(1)).unwrap();
        let b = a.on_touch(t(4)).unwrap();
        assert_eq!(b.set, a.set);
        assert_eq!(b.wake_source, a.wake_source);
        assert_eq!(b.last_change, t(4));
    }

    #[test]
    fn touch_rejects_time_regression() {
        let a = LatchState::default().on_touch(t(5)).unwrap();
        assert!(matches!(a.on_touch(t(4)), Err(LatchError::TimeRegression { .. })));
    }

    #[test]
    fn rtc_alarm_sets_and_schedules_next() {
        let (l, next) = LatchState::default().on_rtc_alarm(t(600), Duration::from_mins(10)).unwrap();
        assert_eq!(l, LatchState { set: true, wake_source: WakeSource::Rtc, last_change: t(600) });
        assert_eq!(next, t(1200));
        assert_eq!(l.read_wake_source(), WakeSource::Rtc);
        let (l2, _) = l.on_rtc_alarm(t(1200), Duration::from_mins(10)).unwrap();
        assert!(l2.set);
        assert!(LatchState::default()
            .on_scheduled_rtc_alarm(t(600), t(601), Duration::from_mins(10))
            .is_err());
    }

    #[test]
    fn alarm_stream_is_arithmetic() {
        let rtc = RtcConfig { alarm_period: Duration::from_secs(600), ..RtcConfig::default() };
        let alarms: Vec<_> = rtc.alarms_until(t(1800)).collect();
        assert_eq!(alarms, vec![t(0), t(600), t(1200), t(1800)]);
    }

    #[test]
    fn both_clear_paths_clear() {
        let set = LatchState::default().on_touch(t(1)).unwrap();
        for via in [ClearVia::I2cCommand, ClearVia::SwDisSignal] {
            let (l, anomaly) = set.mcu_clear(ClearCommand { via, time: t(2) }).unwrap();
            assert!(!l.set);
            assert_eq!(l.read_wake_source(), WakeSource::None);
            assert!(anomaly.is_none());
        }
    }

    #[test]
    fn clearing_a_clear_latch_is_flagged() {
        let (l, anomaly) = LatchState::default()
            .mcu_clear(ClearCommand { via: ClearVia::I2cCommand, time: t(1) })
            .unwrap();
        assert!(!l.set);
        assert_eq!(anomaly, Some(RedundantClear { at: t(1), via: ClearVia::I2cCommand }));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Touch(i64),
        Rtc(i64),
        Clear(i64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0i64..1_000).prop_map(Op::Touch),
            (0i64..1_000).prop_map(Op::Rtc),
            (0i64..1_000).prop_map(Op::Clear),
        ]
    }

    proptest! {
        // Reference: replay the event log and take the last set source after the last clear.
        #[test]
        fn wake_source_matches_log_replay(ops in proptest::collection::vec(op(), 0..200)) {
            let mut latch = LatchState::default();
            let mut now = TimePoint::ZERO;
            let mut log: Vec<&Op> = Vec::new();
            for op in &ops {
                let dt = match op { Op::Touch(d) | Op::Rtc(d) | Op::Clear(d) => *d };
                now = now.checked_add(Duration::from_micros(dt)).unwrap();
                latch = match op {
                    Op::Touch(_) => latch.on_touch(now).unwrap(),
                    Op::Rtc(_) => latch.on_rtc_alarm(now, Duration::from_secs(1)).unwrap().0,
                    Op::Clear(_) => latch.mcu_clear(ClearCommand { via: ClearVia::I2cCommand, time: now }).unwrap().0,
                };
                log.push(op);
                let since_clear = log.iter().rev().take_while(|o| !matches!(o, Op::Clear(_)));
                let expected = since_clear
                    .map(|o| match o { Op::Touch(_) => WakeSource::Touch, _ => WakeSource::Rtc })
                    .next()
                    .unwrap_or(WakeSource::None);
                prop_assert_eq!(latch.read_wake_source(), expected);
                prop_assert_eq!(latch.set, expected != WakeSource::None);
                prop_assert!(latch.is_consistent());
            }
        }
    }
}
