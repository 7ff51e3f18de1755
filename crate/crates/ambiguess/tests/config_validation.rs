mod common;

use ambiguess::config::{BenchConfig, ConfigError};
use serde_json::{json, Value};

fn desk_value() -> Value {
    let text = std::fs::read_to_string(common::desk_config_path()).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["data"]["nominal_dir"] = json!(common::data_dir().join("mnist"));
    v["data"]["foreign_dir"] = json!(common::data_dir().join("fashion"));
    v
}

fn check(v: &Value) -> Result<BenchConfig, ConfigError> {
    let c = BenchConfig::from_json(&v.to_string(), "test")?;
    c.validate()?;
    Ok(c)
}

fn message(v: &Value) -> String {
    check(v).unwrap_err().to_string()
}

#[test]
fn shipped_desk_config_validates() {
    let c = check(&desk_value()).unwrap();
    assert_eq!(c.pairs().len(), 3);
    assert_eq!(c.supervisors().len(), 16);
    let reparsed = BenchConfig::from_json(&c.to_json(), "round trip").unwrap();
    assert_eq!(reparsed, c);
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    let mut v = desk_value();
    v["colour"] = json!("blue");
    assert!(message(&v).contains("colour"));
    let mut v = desk_value();
    v["generation"]["raae"]["epoch"] = json!(3);
    assert!(message(&v).contains("epoch"));
    let mut v = desk_value();
    v["test_sets"]["attack"] = json!({ "eps": 0.1 });
    assert!(matches!(check(&v), Err(ConfigError::Parse { .. })));
}

#[test]
fn identical_and_duplicate_pairs_are_rejected() {
    let mut v = desk_value();
    v["generation"]["pairs"] = json!([[3, 3]]);
    assert!(matches!(check(&v), Err(ConfigError::Invalid(_))));
    let mut v = desk_value();
    v["generation"]["pairs"] = json!([[3, 8], [8, 3]]);
    assert!(message(&v).contains("duplicate"));
    let mut v = desk_value();
    v["generation"]["pairs"] = json!([[3, 10]]);
    assert!(check(&v).is_err());
}

#[test]
fn missing_dataset_files_are_rejected() {
    let mut v = desk_value();
    v["data"]["foreign_dir"] = json!("/nonexistent/fashion");
    assert!(message(&v).contains("/nonexistent/fashion"));
}

#[test]
fn out_of_range_settings_are_rejected() {
    let cases: [(&str, &str, Value); 6] = [
        ("version", "", json!(2)),
        ("generation", "delta_test", json!(1.0)),
        ("generation", "raae_seeds", json!([])),
        ("classifier", "dropout", json!(1.0)),
        ("test_sets", "severity", json!(6)),
        ("test_sets", "nominal", json!(9500)),
    ];
    for (section, key, value) in cases {
        let mut v = desk_value();
        if key.is_empty() {
            v[section] = value;
        } else {
            v[section][key] = value;
        }
        assert!(matches!(check(&v), Err(ConfigError::Invalid(_))), "{section}.{key} accepted");
    }
    let mut v = desk_value();
    v["supervisors"]["enabled"] = json!(["softmax-entropy", "no-such-supervisor"]);
    assert!(check(&v).is_err());
}

#[test]
fn digest_ignores_output_but_not_settings() {
    let a = check(&desk_value()).unwrap();
    let mut b = a.clone();
    b.output = "elsewhere".into();
    assert_eq!(a.digest(), b.digest());
    b.seed += 1;
    assert_ne!(a.digest(), b.digest());
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn digest_does_not_depend_on_how_data_paths_are_spelled() {
    let a = check(&desk_value()).unwrap();
    let mut b = a.clone();
    b.data.nominal_dir = a.data.nominal_dir.join("../mnist");
    assert_eq!(a.digest(), b.digest());
    b.data.nominal_dir = a.data.foreign_dir.clone();
    assert_ne!(a.digest(), b.digest());
}
