//! Fuzzes the experiment-configuration JSON parser: arbitrary bytes must
//! either parse into a validated config or return a structured error,
//! never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use rmlab::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json_str(text) {
            // Parsed configs must satisfy their own invariants.
            let _ = cfg.hash();
            let _ = cfg.p_sum();
            let _ = cfg.sigma2_at(10.0);
        }
    }
});
