#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn hub() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hub"));
    for var in ["HUB_URL", "HUB_SECRET", "HUB_DATA_DIR", "HUB_PORT", "HUB_PROVIDERS", "HUB_AUTO_APPROVE"] {
        c.env_remove(var);
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    hub().args(args).output().expect("hub runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

pub fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}
