#![cfg(feature = "cli")]

use std::path::Path;
use std::process::Command;

fn edca(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_edca")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn fixture(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const ONE_STATION: &str = "[[stations]]\nname = \"a\"\nactivity = [0, 0, 0, 1]\ntraffic = [{ ac = 3, kind = \"saturated\", packet_bytes = 1000 }]\n";

#[test]
fn solve_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, stdout, stderr) = edca(&["solve", "--scenario", &fixture("fig3_saturation.toml"), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("12 rows"));
    let csv = std::fs::read_to_string(out.join("solve.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "n,tc,ac,stations,tau,p_collision,p_drop,throughput_norm,service_time_us,cycle_time_us");
    assert_eq!(csv.lines().count(), 13);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["access"], "rts_cts");
}

#[test]
fn one_station_has_no_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "one.toml", ONE_STATION);
    let out = dir.path().join("o");
    let (code, _, stderr) = edca(&["solve", "--scenario", &s, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    let csv = std::fs::read_to_string(out.join("solve.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "0.000000");
}

#[test]
fn outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "one.toml", ONE_STATION);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let (code, _, stderr) =
            edca(&["simulate", "--scenario", &s, "--out", out.to_str().unwrap(), "--duration", "2", "--seeds", "4,5"]);
        assert_eq!(code, 0, "{stderr}");
        std::fs::read(out.join("simulate.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn capacity_and_admission_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let (code, _, stderr) = edca(&["capacity", "--scenario", &fixture("table1_g711.toml"), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    let csv = std::fs::read_to_string(out.join("capacity.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let flows: usize = first[1].parse().unwrap();

    let out = dir.path().join("a");
    let snap = dir.path().join("snap.toml");
    let (code, _, stderr) = edca(&[
        "admit",
        "--scenario",
        &fixture("table1_g711.toml"),
        "--out",
        out.to_str().unwrap(),
        "--events",
        &fixture("voice_events.txt"),
        "--save-snapshot",
        snap.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    let log = std::fs::read_to_string(out.join("decisions.csv")).unwrap();
    // Calls 0..flows are admitted in full before the first rejection.
    let first_reject = log.lines().skip(1).position(|l| l.contains(",reject,")).unwrap();
    assert_eq!(first_reject, 2 * flows);
    assert!(std::fs::read_to_string(snap).unwrap().contains("rho_threshold"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    let (code, _, stderr) = edca(&["solve", "--scenario", "/definitely/missing.toml", "--out", out]);
    assert_eq!(code, 4);
    assert!(stderr.contains("missing.toml"));

    let bad = write(dir.path(), "bad.toml", &ONE_STATION.replace("1000", "0"));
    let (code, _, stderr) = edca(&["solve", "--scenario", &bad, "--out", out]);
    assert_eq!(code, 2);
    assert!(stderr.contains("packet_bytes"));

    let stuck = write(
        dir.path(),
        "stuck.toml",
        &format!("[solver]\nmax_iterations = 1\n{}", ONE_STATION.replace("name = \"a\"", "name = \"a\"\ncount = 10")),
    );
    let (code, _, _) = edca(&["solve", "--scenario", &stuck, "--out", out]);
    assert_eq!(code, 3);

    let good = write(dir.path(), "good.toml", ONE_STATION);
    let (code, _, stderr) = edca(&["solve", "--scenario", &good, "--rho-th", "2", "--out", out]);
    assert_eq!(code, 2);
    assert!(stderr.contains("rho_threshold"));
}
