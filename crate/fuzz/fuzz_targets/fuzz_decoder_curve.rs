//! Fuzzes the decoder transfer-curve CSV parser: arbitrary bytes must
//! either yield a monotone curve usable by the rate analysis or a
//! structured error, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rmlab::coding::DecoderCurve;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(curve) = DecoderCurve::from_csv(text, "fuzz") {
            let _ = rmlab::coding::achievable_rate(&curve, 1.0);
        }
    }
});
