#![allow(dead_code)]

use dpmsim::energy::{DpmVariant, LoadStep, Rail};
use dpmsim::latch::ClearVia;
use dpmsim::quantities::{Current, Duration, Energy, Illuminance, TimePoint, Voltage};
use dpmsim::scenario::{LightChange, Scenario};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn load(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    dpmsim::parse_scenario(&text).unwrap_or_else(|e| panic!("{path}: {e}")).scenario
}

/// A small-store node under a random light script, so that every PMIC mode
/// is reachable within a couple of simulated hours.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let mut s = Scenario::case_study();
    s.meta.name = format!("random-{}", rng.gen::<u32>());
    s.storage.capacity_mah = rng.gen_range(0.002..0.03);
    s.storage.initial_soc = rng.gen_range(0.0..1.0);

    s.pmic.v_chrdy = Voltage::from_milli_volts(rng.gen_range(3300..3700));
    s.pmic.v_ovch = Voltage::from_milli_volts(rng.gen_range(3900..4150));
    s.pmic.v_ovch_hysteresis = Voltage::from_milli_volts(rng.gen_range(10..120));

    let horizon_s = rng.gen_range(1800..=7200);
    s.duration = Duration::from_secs(horizon_s);
    s.rtc.alarm_period = Duration::from_millis(rng.gen_range(30_000..600_000));
    s.rtc.first_alarm = TimePoint::from_millis(rng.gen_range(0..60_000));

    let mut t = 0i64;
    s.light_timeline.clear();
    while t < horizon_s * 1000 {
        let lux = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..800.0) };
        s.light_timeline.push(LightChange { at: TimePoint::from_millis(t), lux: Illuminance::new(lux) });
        t += rng.gen_range(60_000..1_200_000);
    }

    let presses = rng.gen_range(0..12);
    let mut times: Vec<i64> = (0..presses).map(|_| rng.gen_range(0..horizon_s * 1000)).collect();
    times.sort_unstable();
    times.dedup();
    s.touch.press_times = times.into_iter().map(TimePoint::from_millis).collect();

    let n_steps = rng.gen_range(0..=3);
    s.load_script.steps = (0..n_steps)
        .map(|i| LoadStep {
            name: format!("step {i}"),
            duration: Duration::from_millis(rng.gen_range(5..3000)),
            energy: Energy::from_micro_joules(rng.gen_range(5.0..2500.0)),
            rail: if rng.gen_bool(0.5) { Rail::Lv } else { Rail::Hv },
        })
        .collect();
    s.load_script.clear_via = if rng.gen_bool(0.5) { ClearVia::I2cCommand } else { ClearVia::SwDisSignal };
    if rng.gen_bool(0.3) {
        s.dpm_variant = DpmVariant::SoftwareSleep { i_sleep: Current::from_nano_amps(rng.gen_range(500..5000)) };
    }
    s.validate().expect("generated scenario is valid");
    s
}
