#![no_main]

use filterscope::nn::NetworkSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = NetworkSpec::from_json(text) {
        if spec.validate().is_ok() {
            let _ = spec.param_counts();
        }
    }
});
