#![no_main]

use libfuzzer_sys::fuzz_target;
use reducible_sde::data::{parse_csv, Columns, Duplicates};

fuzz_target!(|data: &[u8]| {
    for dup in [Duplicates::Reject, Duplicates::Allow] {
        let _ = parse_csv(data, &Columns::new("t", "x", Some("unit")), dup);
        let _ = parse_csv(data, &Columns::new("age", "height", Some("Seed")), dup);
        let _ = parse_csv(data, &Columns::new("t", "x", None), dup);
    }
});
