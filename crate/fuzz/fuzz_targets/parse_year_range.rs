#![no_main]

use gfe_core::parse::parse_year_range;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    let _ = parse_year_range(s);
});
