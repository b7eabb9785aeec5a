#![no_main]

use gfe_core::data::{read_csv, write_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(data) = read_csv(bytes, &CsvSchema::default()) {
        let mut out = Vec::new();
        write_csv(&data, &mut out).expect("a parsed panel writes back");
        let back = read_csv(out.as_slice(), &CsvSchema::default()).expect("written panel reparses");
        assert_eq!(back.n_units(), data.n_units());
        assert_eq!(back.n_periods(), data.n_periods());
    }
});
