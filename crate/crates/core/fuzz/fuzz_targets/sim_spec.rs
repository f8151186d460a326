#![no_main]

use libfuzzer_sys::fuzz_target;
use reducible_sde::simulate::SimulationSpec;
use reducible_sde::TransformRegistry;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = SimulationSpec::from_json(data) {
        // simulate only small requests
        if spec.times.len() <= 64 && spec.n_units <= 4 {
            if let Ok(traj) = spec.to_trajectory(&TransformRegistry::with_builtins()) {
                let _ = reducible_sde::simulate::simulate_units(&traj, spec.n_units);
            }
        }
    }
});
