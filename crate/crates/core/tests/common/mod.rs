#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use pbcbf::harness::{Scenario, ScenarioFile};
use pbcbf::qpfilter::FilterMode;

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn spec(name: &str) -> ScenarioFile {
    ScenarioFile::load(scenarios_dir().join(name)).expect("shipped scenario parses")
}

pub fn build(spec: ScenarioFile) -> Scenario {
    Scenario::build(spec, &scenarios_dir()).expect("scenario builds")
}

pub fn scenario(name: &str, mode: FilterMode) -> Scenario {
    let mut s = spec(name);
    s.filter.mode = mode;
    build(s)
}

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
