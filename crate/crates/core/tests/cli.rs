use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use minsense::io;

const BIN: &str = env!("CARGO_BIN_EXE_minsense");

const BOX: &str = r#"{"A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [1,0,1,0]}"#;
const TARGET: &str = r#"{"A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [0.95,-0.8,0.95,-0.8]}"#;

fn env_json(obstacles: &[&str]) -> String {
    format!(
        r#"{{"domain": {BOX}, "obstacles": [{}], "target": {TARGET}, "start": [0.1, 0.1]}}"#,
        obstacles.join(",")
    )
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_env(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn plan_in_empty_environment_succeeds_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_env(dir.path(), "empty.json", &env_json(&[]));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["plan", "--env", &env, "--nodes", "200", "--seed", "3", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let pa = fs::read_to_string(a.join("path.json")).unwrap();
    assert_eq!(pa, fs::read_to_string(b.join("path.json")).unwrap());
    assert_eq!(fs::read(a.join("tree.json")).unwrap(), fs::read(b.join("tree.json")).unwrap());
    let path = io::parse_path(&pa).unwrap();
    assert!(path.k() >= 1);
}

#[test]
fn walled_off_target_exits_with_no_solution() {
    let dir = tempfile::tempdir().unwrap();
    let wall = r#"{"A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [0.55,-0.5,1.5,0.5]}"#;
    let env = write_env(dir.path(), "walled.json", &env_json(&[wall]));
    let o = run(&["plan", "--env", &env, "--nodes", "150", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_environment_reports_line_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_env(dir.path(), "bad.json", "{\n  \"domain\": {\"A\": [[1,0]],\n  \"b\": [1,]\n}");
    let o = run(&["plan", "--env", &env, "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

/// Plans on the bundled environment once and smooths the result.
fn analog_run(dir: &Path) -> (String, String) {
    let o = run(&["plan", "--env", "analog", "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let seed = dir.join("path.json");
    let out = dir.join("smoothed");
    let o = run(&["smooth", "--env", "analog", "--path", s(&seed), "--iters", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (s(&seed).to_string(), s(&out).to_string())
}

#[test]
fn smooth_validate_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let (seed, out) = analog_run(dir.path());
    let out = Path::new(&out);
    for f in ["smoothed.json", "trace.csv", "certificates.json", "before.svg", "after.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,cost,cost_control,cost_info,viol,ms"));
    let costs: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(costs.len(), 5);
    assert!(costs.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{costs:?}");

    let smoothed = out.join("smoothed.json");
    let o = run(&["validate", "--env", "analog", "--path", s(&smoothed)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    for name in ["transitions", "final_state", "kf_tightness", "monte_carlo"] {
        assert!(table.lines().any(|l| l.starts_with(name) && l.contains("PASS")), "{table}");
    }

    // inflated covariances overlap obstacles
    let path = io::parse_path(&fs::read_to_string(&smoothed).unwrap()).unwrap();
    let fat = minsense::pipeline::inflate(&path, 25.0).unwrap();
    let fat_file = dir.path().join("fat.json");
    fs::write(&fat_file, io::to_json_string(&io::path_to_json(&fat, None)).unwrap()).unwrap();
    let o = run(&["validate", "--env", "analog", "--path", s(&fat_file), "--samples", "2000"]);
    assert_eq!(code(&o), 4);
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(table.contains("ellipse overlap"), "{table}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("transitions"));

    // move one interior mean onto the middle of an obstacle
    let mut raw: io::PathJson = serde_json::from_str(&fs::read_to_string(&seed).unwrap()).unwrap();
    let sc = io::parse_environment(minsense::pipeline::ANALOG_ENV).unwrap();
    let (lo, hi) = sc.env.obstacles[0].bounding_box().unwrap();
    let mid = raw.steps.len() / 2;
    raw.steps[mid].x = vec![0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let bad = dir.path().join("tampered.json");
    fs::write(&bad, io::to_json_string(&raw).unwrap()).unwrap();
    let o = run(&["smooth", "--env", "analog", "--path", s(&bad), "--out", s(&dir.path().join("t"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k="));
}

#[test]
fn straight_seed_needs_at_most_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let target = r#"{"A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [0.95,-0.8,0.6,-0.4]}"#;
    let env = write_env(
        dir.path(),
        "corridor.json",
        &format!(r#"{{"domain": {BOX}, "obstacles": [], "target": {target}, "start": [0.1, 0.5]}}"#),
    );
    // equally spaced means, no measurements, filter-consistent information
    let (mut p, w, n) = (1e-4f64, 0.2e-3, 5);
    let mut steps = vec![serde_json::json!({"x": [0.1, 0.5], "Q": [[1.0 / p, 0.0], [0.0, 1.0 / p]], "S": [[0.0, 0.0], [0.0, 0.0]]})];
    for k in 1..=n {
        p += w;
        let x = 0.1 + (0.875 - 0.1) * k as f64 / n as f64;
        steps.push(serde_json::json!({"x": [x, 0.5], "Q": [[1.0 / p, 0.0], [0.0, 1.0 / p]], "S": [[0.0, 0.0], [0.0, 0.0]]}));
    }
    let seed = dir.path().join("straight.json");
    fs::write(&seed, serde_json::json!({"alpha": 1.0, "steps": steps}).to_string()).unwrap();
    let out = dir.path().join("out");
    let o = run(&["smooth", "--env", &env, "--path", s(&seed), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let costs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let effective = costs.windows(2).filter(|w| w[0] - w[1] > 1e-6).count();
    assert!(effective <= 1, "{csv}");
}

#[test]
fn render_is_byte_identical_and_handles_no_path() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_env(dir.path(), "e.json", &env_json(&[]));
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    for f in [&a, &b] {
        assert_eq!(code(&run(&["render", "--env", &env, "--out", s(f)])), 0);
    }
    let svg = fs::read_to_string(&a).unwrap();
    assert_eq!(svg, fs::read_to_string(&b).unwrap());
    assert!(svg.starts_with("<svg") && !svg.contains("class=\"prior\""));
    let bad = write_env(dir.path(), "bad.json", "not json");
    assert_eq!(code(&run(&["render", "--env", &bad, "--out", s(&a)])), 1);
}

#[test]
fn bench_reports_both_weights() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_env(dir.path(), "e.json", &env_json(&[]));
    let o = run(&["bench", "--env", &env, "--nodes", "120", "--iters", "2", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0.1,") && rows[1].starts_with("1,"));
}
