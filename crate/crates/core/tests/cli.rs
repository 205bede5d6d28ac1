use std::fs;
use std::path::Path;
use std::process::Command;

fn latgas(args: &[&str], dir: &Path, config: &str) -> (i32, String) {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_latgas"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn valid_rates_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = latgas(&["validate-rates"], dir.path(), r#"{"family":{"kind":"metropolis"},"bound":2.0}"#);
    assert_eq!(code, 0);
    let report = fs::read_to_string(dir.path().join("out/rates_report.json")).unwrap();
    assert!(report.contains("\"pass\": true") || report.contains("\"pass\":true"));
}

#[test]
fn perturbed_table_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"family":{"kind":"custom_table","alphabet":[0.0],"tables":[[1.0,1.0,2.0,1.0]]},"bound":1.0}"#;
    let (code, _) = latgas(&["validate-rates"], dir.path(), cfg);
    assert_eq!(code, 1);
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = latgas(&["thermo"], dir.path(), r#"{"law":{"kind":"uniform","bound":1},"typo":0}"#);
    assert_eq!(code, 1);
    assert!(err.contains("typo"));
}

#[test]
fn oversized_sector_hits_resource_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"law":{"kind":"uniform","bound":1},"family":{"kind":"metropolis"},"shape":"segment","ells":[70],"samples":1,"seed":1}"#;
    let (code, _) = latgas(&["gap-scaling"], dir.path(), cfg);
    assert_eq!(code, 3);
}

#[test]
fn thermo_cache_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = r#"{"law":{"kind":"uniform","bound":1.5},"grid":[0.2,0.5,0.8]}"#;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let sub = dir.path().join(run);
        fs::create_dir_all(&sub).unwrap();
        fs::write(sub.join("config.json"), cfg).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_latgas"))
            .args(["thermo", "--config"])
            .arg(sub.join("config.json"))
            .arg("--out")
            .arg(&sub)
            .env("LATGAS_CACHE", &cache)
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push(fs::read(sub.join("thermo.csv")).unwrap());
    }
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"dims":[8,8],"law":{"kind":"uniform","bound":1},"ensemble":{"kind":"canonical","particles":20},"seed":1}"#;
    let read = |d: &Path| fs::read(d.join("out/disorder.csv")).unwrap();
    latgas(&["sample", "--seed", "5"], dir.path(), cfg);
    let overridden = read(dir.path());
    latgas(&["sample"], dir.path(), &cfg.replace("\"seed\":1", "\"seed\":5"));
    assert_eq!(overridden, read(dir.path()));
    latgas(&["sample"], dir.path(), cfg);
    assert_ne!(overridden, read(dir.path()));
}
