//! Every input parser returns an error, never panics, on arbitrary bytes.

use proptest::prelude::*;

use reducible_sde::config::ModelConfig;
use reducible_sde::data::{parse_csv, Columns, Duplicates};
use reducible_sde::report::FitReport;
use reducible_sde::run::parse_theta;
use reducible_sde::simulate::SimulationSpec;
use reducible_sde::TransformRegistry;

fn csv_like() -> impl Strategy<Value = String> {
    let cell = prop_oneof![
        "-?[0-9]{1,3}(\\.[0-9]{0,3})?",
        "\"[0-9],[0-9]\"",
        "[a-z]{0,3}",
        Just(String::new()),
        Just("NaN".to_string()),
        Just("inf".to_string()),
    ];
    let row = proptest::collection::vec(cell, 0..5).prop_map(|c| c.join(","));
    proptest::collection::vec(row, 0..8).prop_map(|rows| format!("unit,t,x\n{}", rows.join("\n")))
}

fn json_like() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("null".to_string()),
        Just("true".to_string()),
        "-?[0-9]{1,4}(\\.[0-9]{1,3})?(e-?[0-9])?",
        "\"[a-z_]{0,8}\"",
    ];
    leaf.prop_recursive(3, 24, 6, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..4).prop_map(|v| format!("[{}]", v.join(","))),
            proptest::collection::vec(
                (
                    prop_oneof![
                        Just("data"),
                        Just("parameters"),
                        Just("name"),
                        Just("start"),
                        Just("times"),
                        Just("beta0"),
                        Just("beta1"),
                        Just("transform"),
                        Just("scope"),
                        Just("seed"),
                        Just("a"),
                    ],
                    inner
                ),
                0..5
            )
            .prop_map(|kv| {
                let body: Vec<String> = kv.into_iter().map(|(k, v)| format!("\"{k}\":{v}")).collect();
                format!("{{{}}}", body.join(","))
            }),
        ]
    })
}

fn exercise(bytes: &[u8]) {
    let registry = TransformRegistry::with_builtins();
    for dup in [Duplicates::Reject, Duplicates::Allow] {
        let _ = parse_csv(bytes, &Columns::new("t", "x", Some("unit")), dup);
        let _ = parse_csv(bytes, &Columns::new("t", "x", None), dup);
    }
    if let Ok(cfg) = ModelConfig::from_json(bytes) {
        let _ = cfg.validate(&registry);
    }
    let _ = parse_theta(bytes);
    if let Ok(spec) = SimulationSpec::from_json(bytes) {
        let _ = spec.to_trajectory(&registry);
    }
    let _ = FitReport::from_json(bytes);
}

proptest! {
    #[test]
    fn arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        exercise(&bytes);
    }

    #[test]
    fn csv_shaped_text(text in csv_like()) {
        exercise(text.as_bytes());
    }

    #[test]
    fn json_shaped_text(text in json_like()) {
        exercise(text.as_bytes());
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let registry = TransformRegistry::with_builtins();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ModelConfig::load(&path).unwrap();
        cfg.validate(&registry).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
