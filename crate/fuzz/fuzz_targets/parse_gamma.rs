#![no_main]

use gfe_core::parse::{parse_gamma_grid, parse_gamma_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    if let Ok(v) = parse_gamma_list(s) {
        assert!(v.iter().all(|g| *g > 0.0 && *g <= 1.0));
    }
    if let Ok(v) = parse_gamma_grid(s) {
        assert!(v.iter().all(|g| *g > 0.0 && *g <= 1.0));
    }
});
