#![no_main]

use libfuzzer_sys::fuzz_target;
use reducible_sde::run::parse_theta;

fuzz_target!(|data: &[u8]| {
    let _ = parse_theta(data);
});
