#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;

use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    // both crates sit under crates/, so this also resolves from the cli crate
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Rows of a fixture CSV, header skipped.
pub fn fixture_rows(name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
