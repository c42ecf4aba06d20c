use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hamshoot"));
    c.env_remove("HAMSHOOT_WORKERS");
    c
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("hamshoot-it-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tmp("det-a"), tmp("det-b"));
    for d in [&a, &b] {
        let o = run(&["swallowtail", "--d4-slices", "21", "--out", d.to_str().unwrap()]);
        stdout_json(&o);
    }
    for f in ["swallowtails.csv", "swallowtails.json", "swallowtails.svg", "report.json"] {
        assert!(read(&a, f) == read(&b, f), "{f} differs");
    }
    // Manifests differ only in the output directory they record.
    let manifest = |d: &Path| {
        let mut v: Value = serde_json::from_slice(&read(d, "manifest.json")).unwrap();
        v["data"]["config"]["out_dir"] = Value::Null;
        v
    };
    assert_eq!(manifest(&a), manifest(&b));
}

#[test]
fn manifest_reruns_exactly() {
    let (a, b) = (tmp("man-a"), tmp("man-b"));
    stdout_json(&run(&["catastrophe-d4", "--kind", "minus", "--mu4", "0.1", "--d4-slices", "11", "--out", a.to_str().unwrap()]));
    let manifest: Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["data"]["command"], "catastrophe-d4");
    assert!(manifest["data"]["version"].is_string());
    assert!(manifest["data"]["tolerances"].is_object());
    stdout_json(&run(&["run", a.join("manifest.json").to_str().unwrap(), "--out", b.to_str().unwrap()]));
    for f in ["level_set.csv", "level_set.json", "level_set.svg", "report.json"] {
        assert!(read(&a, f) == read(&b, f), "{f} differs");
    }
}

#[test]
fn scenario_file_drives_a_run() {
    let d = tmp("toml");
    std::fs::create_dir_all(&d).unwrap();
    let path = d.join("s.toml");
    std::fs::write(
        &path,
        "command = \"sweep\"\nscenario = \"example5_fold\"\nmu_points = 5\nformats = [\"csv\"]\n",
    )
    .unwrap();
    let out = d.join("out");
    let v = stdout_json(&run(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(v["command"], "sweep");
    let csv = String::from_utf8(read(&out, "diagram.csv")).unwrap();
    assert!(csv.starts_with("branch,index,mu_0,y_0,tag\n"));
    assert!(!out.join("diagram.svg").exists());
}

#[test]
fn one_ray_locus_has_one_row() {
    let d = tmp("ray");
    stdout_json(&run(&[
        "conjugate-locus",
        "--surface",
        "ellipsoid",
        "--rays",
        "circle:1",
        "--h",
        "0.01",
        "--format",
        "csv",
        "--out",
        d.to_str().unwrap(),
    ]));
    let csv = String::from_utf8(read(&d, "locus.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let o = run(&["sweep", "--scenario", "no_such_system", "--out", tmp("err").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    assert_eq!(v["error"], "unknown_name");
    assert!(v["message"].as_str().unwrap().contains("no_such_system"));

    let o = run(&["pitchfork", "--steps", "many"]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    assert!(v["error"].is_string());
}

#[test]
fn worker_count_comes_from_the_environment() {
    let o = bin()
        .env("HAMSHOOT_WORKERS", "zero")
        .args(["catastrophe-d4", "--out", tmp("w0").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(v["message"].as_str().unwrap().contains("HAMSHOOT_WORKERS"));

    let (a, b) = (tmp("w1"), tmp("w2"));
    for (d, n) in [(&a, "1"), (&b, "3")] {
        let o = bin()
            .env("HAMSHOOT_WORKERS", n)
            .args(["sweep", "--scenario", "example5_fold", "--format", "csv", "--out", d.to_str().unwrap()])
            .output()
            .unwrap();
        stdout_json(&o);
    }
    assert!(read(&a, "diagram.csv") == read(&b, "diagram.csv"));
}
