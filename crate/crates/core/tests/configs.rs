//! The shipped experiment configs parse and validate.

use std::path::PathBuf;

use swalp::harness::{ExperimentConfig, SweepSpec};

#[test]
fn shipped_configs_validate() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            if c.sweep.is_some() {
                SweepSpec::from_config(c).unwrap().validate().unwrap();
            }
            seen += 1;
        }
    }
    assert!(seen >= 8);
    for name in ["linreg.toml", "logreg.toml"] {
        let c = ExperimentConfig::load(&dir.join("acceptance").join(name)).unwrap();
        c.validate().unwrap();
    }
}
