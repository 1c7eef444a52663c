use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_towerldp"));
    c.env_remove("TOWERLDP_PRECISION_BITS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn towerldp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn classify_geometric_witness() {
    let o = run(&["classify", "--seq", "geometric:p=1/2", "--horizon", "64"]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let w = &v["bounded_slope_witness"];
    assert_eq!(w["l"], 1);
    assert_eq!(w["c_exact"], "1/2");
}

#[test]
fn rate_geometric_three_quarters() {
    let o = run(&[
        "rate",
        "--seq",
        "geometric:p=1/2",
        "--obs",
        "level0",
        "--t",
        "0.75",
        "--L",
        "32",
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0], ["t", "q", "provenance", "L"]);
    let q: f64 = rows[1][1].parse().unwrap();
    assert!((q - -0.13081).abs() < 1e-5, "q = {q}");
}

#[test]
fn counterexample_strict_level_set_is_empty() {
    let o = run(&[
        "ldp",
        "--seq",
        "blockexp:base=8",
        "--obs",
        "counterexample",
        "--a",
        "7/16",
        "--strict",
        "--n",
        "8",
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = csv_rows(&stdout(&o));
    assert_eq!(
        rows[0],
        [
            "n",
            "a",
            "strict",
            "log_measure",
            "normalized",
            "method",
            "discarded_mass_bound"
        ]
    );
    assert_eq!(rows[1][3], "-inf");
    assert_eq!(rows[1][4], "-inf");
}

#[test]
fn json_format_keeps_infinities_as_strings() {
    let o = run(&[
        "--format",
        "json",
        "ldp",
        "--seq",
        "blockexp:base=8",
        "--obs",
        "counterexample",
        "--a",
        "7/16",
        "--strict",
        "--n",
        "8,16",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["normalized"], "-inf");
    assert!(v[1]["normalized"].as_f64().unwrap() > -4.0);
}

#[test]
fn negative_beta_list_parses() {
    let o = run(&[
        "pressure",
        "--seq",
        "geometric:p=1/2",
        "--beta",
        "-1,0,1",
        "--n",
        "32",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(csv_rows(&stdout(&o)).len(), 4);
}

#[test]
fn exit_codes() {
    assert_eq!(
        run(&["ldp", "--seq", "nonsense", "--a", "1/2", "--n", "4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["--mode", "log:80", "ldp", "--seq", "harmonic", "--a", "1/2", "--n", "4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&[
            "--mode",
            "rational",
            "ldp",
            "--seq",
            "blockexp:base=8",
            "--obs",
            "counterexample",
            "--a",
            "1/2",
            "--n",
            "4"
        ])
        .status
        .code(),
        Some(3)
    );
    let ok = run(&[
        "gap-report",
        "--seq",
        "geometric:p=1/2",
        "--a",
        "3/4",
        "--n",
        "64,128,256",
        "--L",
        "32",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = run(&[
        "gap-report",
        "--seq",
        "geometric:p=1/2",
        "--a",
        "3/4",
        "--n",
        "64,128,256",
        "--L",
        "2",
    ]);
    assert_eq!(bad.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v["verdict"], "SandwichViolated");
}

#[test]
fn precision_env_var_sets_default_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    fs::write(&cfg, r#"{"queries": []}"#).unwrap();
    let o = bin()
        .env("TOWERLDP_PRECISION_BITS", "40")
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["mode"], "log:40");
    let bad = bin()
        .env("TOWERLDP_PRECISION_BITS", "zero")
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn empty_query_list_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    fs::write(&cfg, r#"{"seq": "harmonic", "queries": []}"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, ["manifest.json"]);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["seq"]["kind"], "harmonic");
    assert!(m["timestamp_unix"].is_u64());
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, r#"{"seq": "harmonic", "queries": [{"type": "ldp", "a": "1/2", "n": [4], "strictly": true}]}"#).unwrap();
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("strictly") && err.contains("queries[0]"),
        "{err}"
    );

    fs::write(&cfg, r#"{"sequence": "harmonic"}"#).unwrap();
    let o = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sequence"));
}

fn run_example(name: &str, out: &Path) {
    let cfg = crate_dir().join("examples").join(format!("{name}.cfg"));
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(
        o.status.success(),
        "{name}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const EXAMPLES: [&str; 3] = ["khinchin", "counterexample", "takahashi"];

#[test]
fn example_artifacts_are_byte_identical_across_runs() {
    for name in EXAMPLES {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_example(name, a.path());
        run_example(name, b.path());
        assert_eq!(artifacts(a.path()), artifacts(b.path()), "{name}");
    }
}

/// Set `TOWERLDP_BLESS=1` to rewrite the golden files.
#[test]
fn example_artifacts_match_golden_files() {
    let bless = std::env::var_os("TOWERLDP_BLESS").is_some();
    for name in EXAMPLES {
        let out = tempfile::tempdir().unwrap();
        run_example(name, out.path());
        let golden = crate_dir().join("tests/golden").join(name);
        for (file, bytes) in artifacts(out.path()) {
            let path = golden.join(&file);
            if bless {
                fs::create_dir_all(&golden).unwrap();
                fs::write(&path, &bytes).unwrap();
            }
            let expected = fs::read(&path)
                .unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
            assert!(expected == bytes, "{name}/{file} differs from golden copy");
        }
    }
}

#[test]
fn khinchin_example_columns_agree() {
    let out = tempfile::tempdir().unwrap();
    run_example("khinchin", out.path());
    let text = fs::read_to_string(out.path().join("rate.csv")).unwrap();
    let rows = csv_rows(&text);
    assert_eq!(
        rows[0],
        [
            "t",
            "closed_form_khinchin",
            "legendre_of_pressure",
            "induced_pressure",
            "L"
        ]
    );
    for row in &rows[1..] {
        let v: Vec<f64> = row[1..4].iter().map(|c| c.parse().unwrap()).collect();
        assert!(
            (v[0] - v[1]).abs() < 1e-6 && (v[0] - v[2]).abs() < 1e-6,
            "{row:?}"
        );
    }
}

#[test]
fn counterexample_example_curve() {
    let out = tempfile::tempdir().unwrap();
    run_example("counterexample", out.path());
    let rows = csv_rows(&fs::read_to_string(out.path().join("curve.csv")).unwrap());
    let value = |n: &str, strict: &str| {
        rows.iter().find(|r| r[0] == n && r[2] == strict).unwrap()[4].clone()
    };
    assert_eq!(value("8", "true"), "-inf");
    assert_eq!(value("64", "true"), "-inf");
    assert!(value("16", "false").parse::<f64>().unwrap() >= -4.0);
}

#[test]
fn takahashi_example_orbit_average() {
    let out = tempfile::tempdir().unwrap();
    run_example("takahashi", out.path());
    let rows = csv_rows(&fs::read_to_string(out.path().join("orbit.csv")).unwrap());
    let avg: f64 = rows[1][2].parse().unwrap();
    assert!((avg - 2.0 / 3.0).abs() < 1e-12);
    let gap: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("gap.json")).unwrap()).unwrap();
    assert_eq!(gap["verdict"], "SandwichHolds");
}
