mod common;

use dpmsim::energy::DpmVariant;
use dpmsim::quantities::Current;
use dpmsim::scenario::Scenario;
use dpmsim::{emit_scenario, parse_scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn bundled_file_is_the_case_study() {
    let loaded = common::load("case_study.scenario");
    let built = Scenario::case_study();
    assert_eq!(loaded.meta.name, built.meta.name);
    assert!(loaded.differences_except_variant(&built).is_empty(), "{:?}", loaded.differences_except_variant(&built));
    assert_eq!(loaded.dpm_variant, built.dpm_variant);
}

#[test]
fn software_twin_differs_only_in_idle_mode() {
    let hw = common::load("case_study.scenario");
    let sw = common::load("case_study_software.scenario");
    assert!(hw.differences_except_variant(&sw).is_empty());
    assert_eq!(sw.dpm_variant, DpmVariant::SoftwareSleep { i_sleep: Current::from_nano_amps(3000) });
}

#[test]
fn random_scenarios_survive_emit_and_parse() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let s = common::random_scenario(&mut rng);
        let text = emit_scenario(&s);
        let back = parse_scenario(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(back.scenario, s, "{text}");
        assert_eq!(emit_scenario(&back.scenario), text);
    }
}
