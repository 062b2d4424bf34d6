//! Helpers for driving the `gdv` binary and the grading service.
#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

pub fn gdv<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_gdv")).args(args).output().expect("gdv binary runs")
}

/// Runs `gdv` and fails the test with its stderr unless it exits 0.
pub fn gdv_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = gdv(args);
    assert!(out.status.success(), "gdv failed ({:?}): {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

pub fn sha256_file(path: &Path) -> String {
    gdv_cli::manifest::sha256_file(path).expect("file hashes")
}

pub fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(10)))
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post(agent: &ureq::Agent, url: &str, body: &str) -> (u16, String) {
    let mut resp = agent.post(url).header("content-type", "application/json").send(body).expect("request sent");
    let status = resp.status().as_u16();
    let mut text = String::new();
    std::io::Read::read_to_string(&mut resp.body_mut().as_reader(), &mut text).expect("body reads");
    (status, text)
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, String) {
    let mut resp = agent.get(url).call().expect("request sent");
    let status = resp.status().as_u16();
    let mut text = String::new();
    std::io::Read::read_to_string(&mut resp.body_mut().as_reader(), &mut text).expect("body reads");
    (status, text)
}
