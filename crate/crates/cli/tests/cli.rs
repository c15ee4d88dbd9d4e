use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcs")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn gauss(hbar: Value) -> Value {
    json!({
        "model": {"kind": "gauss", "m": 1.0, "gamma": 1.0, "v0": -1.0, "kappa": 1.0},
        "initial": {"b": [0.3, 0.9]},
        "t_end": 0.5,
        "n_outputs": 2,
        "hbar": hbar
    })
}

fn harmonic() -> Value {
    json!({
        "model": {"kind": "polynomial", "m": 1.0, "coeffs": [0.0, 0.0, 0.5]},
        "initial": {"x0": 0.5, "state": {"fock": 1}},
        "t_end": 1.0,
        "n_outputs": 4,
        "hbar": [0.05]
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn out_of_range_hbar_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &gauss(json!([1.5])));
    let o = tcs(&["compare", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("hbar[0]"), "{}", stderr(&o));
    let o = tcs(&["compare", "--config", &cfg, "--hbar", "0.01", "--hbar", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hbar[1]"), "{}", stderr(&o));
}

#[test]
fn unknown_field_and_missing_file_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = gauss(json!([0.01]));
    v["tolerances"] = json!({"dt": 1e-3, "rtol": 1e-9});
    let cfg = write_config(dir.path(), "c.json", &v);
    let o = tcs(&["compare", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("rtol"), "{}", stderr(&o));
    let o = tcs(&["compare", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let mut v = harmonic();
    v["initial"]["state"] = json!({"grid_file": "absent.csv"});
    let cfg = write_config(dir.path(), "g.json", &v);
    let o = tcs(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("initial.state"), "{}", stderr(&o));
}

#[test]
fn sweep_needs_three_hbar_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &gauss(json!([0.02, 0.01])));
    let o = tcs(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("at least 3"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = harmonic();
    v["tolerances"] = json!({"kmax": 1});
    v["initial"]["state"] = json!({"fock": 3});
    let cfg = write_config(dir.path(), "c.json", &v);
    let o = tcs(&["semiclassical", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("kmax"), "{}", stderr(&o));
}

#[test]
fn compare_tracks_the_grid_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &gauss(json!([0.01])));
    let out = dir.path().join("out");
    let o = tcs(&["compare", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("hbar_0/compare.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[3] < 2e-2, "relative sigma_xx error {}", r[3]);
        assert!(r[4] < 1e-2, "infidelity {}", r[4]);
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "compare");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["hbar"], json!([0.01]));
}

#[test]
fn variations_conserve_the_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &gauss(json!([0.01])));
    let o = tcs(&["variations", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hbar_0/invariants.json")).unwrap()).unwrap();
    for key in ["d0_drift", "d0_tilde_drift", "skew_product_drift"] {
        let v = report[key].as_f64().unwrap();
        assert!(v < 1e-10, "{key} = {v}");
    }
    assert!(report["im_q_min_eigenvalue"].as_f64().unwrap() > 0.0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &harmonic());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tcs(&["semiclassical", "--config", &cfg, "--out", out.to_str().unwrap(), "--hbar", "0.05", "--hbar", "0.02"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut files = Vec::new();
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap().to_path_buf();
        assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.join(&rel)).unwrap(), "{}", rel.display());
        files.push(rel);
    }
    assert!(files.len() >= 11, "{files:?}");
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn sweep_fits_the_power_law_or_reports_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &gauss(json!([0.04, 0.02, 0.01])));
    let out = dir.path().join("gauss");
    let o = tcs(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fits: Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_fit.json")).unwrap()).unwrap();
    let slope = fits["max_infidelity"]["slope"].as_f64().unwrap();
    assert!(slope > 1.4, "infidelity slope {slope}");
    let sigma = fits["final_sigma_xx_oracle"]["slope"].as_f64().unwrap();
    assert!((sigma - 1.0).abs() < 0.05, "variance slope {sigma}");
    assert_eq!(read_csv(&out.join("sweep.csv")).len(), 3);

    // A free packet is exact, so both errors sit at the rounding floor.
    let mut v = gauss(json!([0.04, 0.02, 0.01]));
    v["model"] = json!({"kind": "polynomial", "m": 1.0, "coeffs": [0.0]});
    v["tolerances"] = json!({"dt": 0.05});
    let cfg = write_config(dir.path(), "free.json", &v);
    let out = dir.path().join("free");
    let o = tcs(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("rounding floor"), "{}", stderr(&o));
    let fits: Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_fit.json")).unwrap()).unwrap();
    assert!(fits["max_infidelity"]["skipped"].is_string());
}

#[test]
fn superpose_prefers_the_common_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = gauss(json!([0.02]));
    v["t_end"] = json!(1.0);
    v["superpose"] = json!({"second": {"fock": 1}});
    let cfg = write_config(dir.path(), "c.json", &v);
    let o = tcs(&["superpose", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hbar_0/superpose.json")).unwrap()).unwrap();
    assert!(r["linearity_error"].as_f64().unwrap() < 1e-10);
    assert!(r["gap"].as_f64().unwrap() > 0.0, "{r}");
}

#[test]
fn green_and_grid_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &harmonic());
    let first = dir.path().join("first");
    let o = tcs(&["simulate", "--config", &cfg, "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut v = harmonic();
    v["initial"]["state"] = json!({"grid_file": "first/hbar_0/psi_initial.csv"});
    let cfg2 = write_config(dir.path(), "again.json", &v);
    let second = dir.path().join("second");
    let o = tcs(&["simulate", "--config", &cfg2, "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (read_csv(&first.join("hbar_0/oracle.csv")), read_csv(&second.join("hbar_0/oracle.csv")));
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() < 1e-10, "{ra:?} vs {rb:?}");
        }
    }

    let o = tcs(&["green", "--config", &cfg2, "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in read_csv(&second.join("hbar_0/green.csv")) {
        assert!(r[2] > 1.0 - 1e-6, "kernel vs grid fidelity {r:?}");
        assert!(r[3] > 1.0 - 1e-6, "kernel vs packet fidelity {r:?}");
    }
    assert_eq!(read_csv(&second.join("hbar_0/kernel.csv")).len(), 64 * 64);
}
