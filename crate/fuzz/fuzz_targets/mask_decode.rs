#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = rvsd::imageio::decode_mask(data) {
        assert!(mask.count() <= mask.width() * mask.height());
    }
});
