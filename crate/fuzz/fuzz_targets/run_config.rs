#![no_main]

use filterscope::config::RunConfig;
use libfuzzer_sys::fuzz_target;

// Whole input as a config document, or each line as a `key=value` override.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let _ = cfg.validate();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
    let overrides: Vec<String> = text.lines().map(str::to_string).collect();
    if let Ok(cfg) = RunConfig::default().with_overrides(&overrides) {
        let _ = cfg.seeded().validate();
    }
});
