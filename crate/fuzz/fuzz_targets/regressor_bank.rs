#![no_main]

use filterscope::regression::parse_regressor_bank;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(bank) = parse_regressor_bank(text) {
        for r in &bank {
            r.model().unwrap();
        }
    }
});
