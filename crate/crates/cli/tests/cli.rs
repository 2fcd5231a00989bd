use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn blochlap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blochlap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn blochlap_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blochlap"))
        .args(args)
        .env(key, val)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bands_free_rows_are_exact() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("b");
    ok(&blochlap(&[
        "bands",
        "--d",
        "2",
        "--S",
        "3",
        "--grid",
        "5",
        "-o",
        s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k1,k2,s1,s2,lambda"));
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut n = 0;
    for l in lines {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        let want = (f[0] + two_pi * f[2]).powi(2) + (f[1] + two_pi * f[3]).powi(2);
        assert!((f[4] - want).abs() < 1e-10, "{l}");
        n += 1;
    }
    assert_eq!(n, 25 * 25);
    let gaps = json(&out.join("gaps.json"));
    assert!(gaps["max_free_deviation"].as_f64().unwrap() < 1e-10);

    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "bands");
    assert_eq!(m["status"], "ok");
    let files: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["file"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["bands.csv", "gaps.json"]);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn bands_mathieu_interlaces() {
    let t = tempfile::tempdir().unwrap();
    let pot = t.path().join("mathieu.json");
    std::fs::write(
        &pot,
        r#"{"mode": "fourier", "d": 1, "coeffs": [[1, 1.0, 0.0], [-1, 1.0, 0.0]]}"#,
    )
    .unwrap();
    let out = t.path().join("b");
    ok(&blochlap(&["bands", "--potential", s(&pot), "-o", s(&out)]));
    let g = json(&out.join("gaps.json"));
    assert_eq!(g["d"], 1);
    assert_eq!(g["interlacing"], true);
    let bands = g["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 6);
    assert!(!g["gaps"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 17 * 6);
}

#[test]
fn invalid_input_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = blochlap(&[
        "bands",
        "--potential",
        s(&bad),
        "-o",
        s(&t.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));

    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda_typo": 3}"#).unwrap();
    let o = blochlap(&["kernel", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let o = blochlap(&["fermi", "--potential", "builtin:nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = blochlap(&["kernel", "--nk", "7"]);
    assert_eq!(o.status.code(), Some(2));
    let o = blochlap(&["fermi", "--d", "1", "-o", s(&t.path().join("d1"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = blochlap_env(&["bands", "--grid", "3"], "BLOCHLAP_THREADS", "zero");
    assert_eq!(o.status.code(), Some(2));
    let o = blochlap(&["bands", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fermi_circle_for_free_field() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("f");
    ok(&blochlap(&["fermi", "--tau", "5", "-o", s(&out)]));
    let csv = std::fs::read_to_string(out.join("fermi_tau5.csv")).unwrap();
    for l in csv.lines().skip(1) {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((f[1].hypot(f[2]) - 5f64.sqrt()).abs() < 1e-6);
    }
    let rep = json(&out.join("fermi.json"));
    assert_eq!(rep[0]["curvature"]["positive"], true);
    let svg = std::fs::read_to_string(out.join("fermi.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polygon"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = |o: &Path| {
        vec![
            "bands".to_string(),
            "--potential".into(),
            "builtin:sin2cos".into(),
            "--S".into(),
            "3".into(),
            "--grid".into(),
            "6".into(),
            "-o".into(),
            s(o).to_string(),
        ]
    };
    let aa = args(&a);
    let bb = args(&b);
    ok(&blochlap_env(
        &aa.iter().map(String::as_str).collect::<Vec<_>>(),
        "BLOCHLAP_THREADS",
        "1",
    ));
    ok(&blochlap_env(
        &bb.iter().map(String::as_str).collect::<Vec<_>>(),
        "BLOCHLAP_THREADS",
        "3",
    ));
    for f in ["bands.csv", "gaps.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(json(&b.join("manifest.json"))["threads"], 3);
}

#[test]
fn eigen_cache_round_trips() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let first = blochlap(&[
        "bands",
        "--S",
        "3",
        "--grid",
        "5",
        "--cache-dir",
        s(&cache),
        "-o",
        s(&a),
    ]);
    ok(&first);
    assert!(String::from_utf8_lossy(&first.stderr).contains("cache miss"));
    let second = blochlap_env(
        &["bands", "--S", "3", "--grid", "5", "-o", s(&b)],
        "BLOCHLAP_CACHE_DIR",
        s(&cache),
    );
    ok(&second);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));
    assert_eq!(
        std::fs::read(a.join("bands.csv")).unwrap(),
        std::fs::read(b.join("bands.csv")).unwrap()
    );
    // A different truncation is a different key.
    let third = blochlap(&[
        "bands",
        "--S",
        "2",
        "--grid",
        "5",
        "--cache-dir",
        s(&cache),
        "-o",
        s(&b),
    ]);
    assert!(String::from_utf8_lossy(&third.stderr).contains("cache miss"));
}

#[test]
fn config_file_and_replay() {
    let t = tempfile::tempdir().unwrap();
    let pot = t.path().join("cos.json");
    let cells: Vec<String> = (0..32)
        .map(|j| {
            format!(
                "{}",
                0.1 * (2.0 * std::f64::consts::PI * j as f64 / 32.0).cos()
            )
        })
        .collect();
    let part = format!(r#"{{"samples": [{}]}}"#, cells.join(","));
    std::fs::write(
        &pot,
        format!(r#"{{"mode": "separable", "parts": [{part}, {part}]}}"#),
    )
    .unwrap();
    let out = t.path().join("v");
    let cfg = t.path().join("verify.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"command": "verify", "potential": "cos.json", "resolvent": {{"lambda": 4.0}},
                "pairs": [["2", "inf"]], "scan_n": 20, "output": "{}"}}"#,
            s(&out)
        ),
    )
    .unwrap();
    ok(&blochlap(&["verify", "--config", s(&cfg)]));
    let rep = json(&out.join("verify.json"));
    assert_eq!(rep["assumptions"]["pass"], true);
    assert_eq!(rep["perturbation"]["pass"], true);
    assert_eq!(rep["exponent_pairs"][0]["p"], "2");
    for scan in rep["equivalence_scans"].as_array().unwrap() {
        assert_eq!(scan["disagreements"], 0);
    }

    let again = t.path().join("again");
    ok(&blochlap(&[
        "replay",
        s(&out.join("manifest.json")),
        "-o",
        s(&again),
    ]));
    assert_eq!(
        std::fs::read(out.join("verify.json")).unwrap(),
        std::fs::read(again.join("verify.json")).unwrap()
    );

    let o = blochlap(&["bands", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn farfield_matches_kernel() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("ff");
    ok(&blochlap(&[
        "farfield",
        "--lambda",
        "5",
        "--direction",
        "0.6,0.8",
        "--sigma",
        "50",
        "-o",
        s(&out),
    ]));
    let r = json(&out.join("farfield.json"));
    assert!((r["im_ratio"].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert_eq!(r["resonant_points"].as_array().unwrap().len(), 2);
}

#[test]
fn kernel_decay_and_mountain_pass() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("k");
    ok(&blochlap(&[
        "kernel",
        "--lambda",
        "4",
        "--theta-points",
        "512",
        "--sigmas",
        "5,10,20,40,80",
        "-o",
        s(&out),
    ]));
    let r = json(&out.join("decay.json"));
    for side in ["plus", "minus"] {
        assert!((r["fits"][side]["slope"].as_f64().unwrap() + 0.5).abs() < 0.15);
    }
    let csv = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    let out = t.path().join("n");
    ok(&blochlap(&[
        "nlh-geometry",
        "--lambda",
        "4",
        "--delta",
        "0.1",
        "-o",
        s(&out),
    ]));
    let r = json(&out.join("nlh_geometry.json"));
    assert_eq!(r["mountain_pass"]["negative"], true);
    assert!(
        (r["mountain_pass"]["plus"].as_f64().unwrap() + std::f64::consts::PI * 2f64.ln()).abs()
            < 1e-6
    );
}

#[test]
fn strong_potential_fails_curvature_with_witness() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("v");
    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"assumptions": {"levels": 1, "grid_cells": 32}, "S": 3, "scan_n": 10, "random_pairs": 0}"#)
        .unwrap();
    ok(&blochlap(&[
        "verify",
        "--config",
        s(&cfg),
        "--potential",
        "builtin:sin2cos-strong",
        "--lambda",
        "30",
        "-o",
        s(&out),
    ]));
    let a = &json(&out.join("verify.json"))["assumptions"];
    assert_eq!(a["pass"], false);
    assert_eq!(a["a2"]["pass"], false);
    let lvl = &a["a2"]["levels"][0];
    assert!(lvl["min_curvature"].as_f64().unwrap() < 0.0);
    assert!(lvl["witness"].is_array());
    let m = json(&out.join("manifest.json"));
    assert!(!m["warnings"].as_array().unwrap().is_empty());
}
