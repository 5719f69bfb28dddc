//! Fuzzes the custom-constellation JSON parser: arbitrary bytes must
//! either yield a normalized constellation or a structured error, never
//! panic. Accepted constellations must uphold unit average energy.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rmlab::constellation::Constellation;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = Constellation::from_json_str(text) {
            let energy: f64 = c
                .points
                .iter()
                .zip(&c.priors)
                .map(|(p, &w)| w * p.norm_sqr())
                .sum();
            if !c.points.is_empty() {
                assert!((energy - 1.0).abs() < 1e-6, "energy {energy}");
            }
        }
    }
});
