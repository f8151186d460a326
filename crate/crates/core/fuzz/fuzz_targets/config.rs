#![no_main]

use libfuzzer_sys::fuzz_target;
use reducible_sde::config::ModelConfig;
use reducible_sde::TransformRegistry;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ModelConfig::from_json(data) {
        let _ = cfg.validate(&TransformRegistry::with_builtins());
        // the echo must parse back
        let again = ModelConfig::from_json(cfg.to_json().as_bytes()).expect("echo parses");
        assert_eq!(again.parameters.len(), cfg.parameters.len());
    }
});
