#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = rvsd::imageio::decode_frame(data) {
        assert_eq!(frame.rgb().len(), frame.width() * frame.height() * 3);
    }
});
