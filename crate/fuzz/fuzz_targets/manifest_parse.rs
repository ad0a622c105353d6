#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = rvsd::dataset::parse_manifest(text, Path::new("root")) {
            // Whatever parses must survive a save/parse round trip.
            let again = rvsd::dataset::parse_manifest(&m.to_json(), Path::new("root")).unwrap();
            assert_eq!(again, m);
        }
    }
});
