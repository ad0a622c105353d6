#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = rvsd::config::RunConfig::parse(text) {
            assert_eq!(rvsd::config::RunConfig::parse(&cfg.to_json()).unwrap(), cfg);
        }
    }
});
