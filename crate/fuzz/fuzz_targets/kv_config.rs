#![no_main]

use libfuzzer_sys::fuzz_target;
use survey_hazard::config::KeyValueConfig;
use survey_hazard::synthetic::ScenarioSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = KeyValueConfig::parse(text, "fuzz") {
        let _ = ScenarioSpec::from_config(&cfg);
    }
});
