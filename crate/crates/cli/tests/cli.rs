use std::path::Path;
use std::process::{Command, Output};

fn rrdps(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(args)
        .current_dir(dir)
        .env_remove("RRDPS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn parse_csv(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn bare_invocation_sweeps_both_sources_with_and_without_decoys() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrdps(&[], dir.path());
    let (header, rows) = parse_csv(&stdout(&out));
    assert_eq!(
        header,
        ["distance_km", "transmittance", "mu_opt", "v_th_opt", "tier", "Q", "e_bit", "e_src", "e_ph", "R", "source"]
    );
    assert_eq!(rows.len(), 2 * 2 * 161);
    let first = &rows[0];
    assert_eq!(first[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(first[1].parse::<f64>().unwrap(), 0.045);
    assert_eq!((first[4].as_str(), first[10].as_str()), ("none", "wcp"));
    let r = column(&header, "R");
    let v = column(&header, "v_th_opt");
    for row in &rows {
        assert!(row[r].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(row[v].is_empty(), row[4] != "none");
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("wcp infinite: key up to 134.0 km"), "{stderr}");
}

#[test]
fn single_point_and_tier_ordering() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"source": {"kinds": ["wcp"]},
            "protocol": {"tiers": ["three", "infinite"]},
            "sweep": {"distances_km": [0, 50, 100, 130]}}"#,
    )
    .unwrap();
    let (header, rows) = parse_csv(&stdout(&rrdps(&["rate", "-c", "run.json"], dir.path())));
    assert_eq!(rows.len(), 8);
    let r = column(&header, "R");
    for i in 0..4 {
        let three: f64 = rows[i][r].parse().unwrap();
        let infinite: f64 = rows[i + 4][r].parse().unwrap();
        assert!(three > 0.0 && infinite >= three, "row {i}: {three} vs {infinite}");
    }

    std::fs::write(dir.path().join("one.json"), r#"{"sweep": {"distances_km": [0]}, "source": {"kinds": ["wcp"]}, "protocol": {"tiers": ["none"]}}"#).unwrap();
    let (_, rows) = parse_csv(&stdout(&rrdps(&["-c", "one.json"], dir.path())));
    assert_eq!(rows.len(), 1);
}

#[test]
fn landscape_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cell.json"),
        r#"{"source": {"kinds": ["wcp"], "mu": 0.05},
            "protocol": {"packet_length": 128, "v_th": 21},
            "channel": {"y0": 1.7e-6, "eta_b": 1.0}}"#,
    )
    .unwrap();
    let (header, rows) = parse_csv(&stdout(&rrdps(&["landscape", "-c", "cell.json", "--eta", "1e-5"], dir.path())));
    assert_eq!(header, ["mu", "v_th", "R", "source"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "21");
    assert!(rows[0][2].parse::<f64>().unwrap() > 6e-6);

    let missing = rrdps(&["landscape"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn three_observations_give_two_decoy_bounds() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("obs.csv"),
        "intensity_per_pulse,gain,qber\n0.0,0.0000544,0.5\n0.05,0.0723,0.0335\n0.001,0.00153,0.046\n",
    )
    .unwrap();
    let (header, rows) = parse_csv(&stdout(&rrdps(&["bounds", "--observations", "obs.csv"], dir.path())));
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row[column(&header, "tier")], "two");
    for name in ["Y0_L", "Y1_L", "e1_U"] {
        assert!(!row[column(&header, name)].is_empty(), "{name}");
    }
    for name in ["Y2_L", "Y3_L", "e2_U", "e3_U", "Y1", "e1"] {
        assert!(row[column(&header, name)].is_empty(), "{name}");
    }
    let y1: f64 = row[column(&header, "Y1_L")].parse().unwrap();
    assert!(y1 > 0.0 && y1 < 0.045, "{y1}");
}

#[test]
fn simulated_bounds_sit_below_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrdps(&["bounds", "--source", "wcp", "--tier", "four", "-o", "b.csv"], dir.path());
    assert!(out.status.success());
    let (header, rows) = parse_csv(&std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert_eq!(rows.len(), 161);
    for row in &rows {
        for n in 0..=3 {
            let lo: f64 = row[column(&header, &format!("Y{n}_L"))].parse().unwrap();
            let truth: f64 = row[column(&header, &format!("Y{n}"))].parse().unwrap();
            assert!(lo <= truth * (1.0 + 1e-10), "Y{n}: {lo} > {truth}");
        }
    }
}

#[test]
fn broken_configs_exit_with_a_located_error() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.json", "{\n  \"protocol\": {\"packet_length\": 32,,}\n}", "line 2"),
        ("unknown.json", r#"{"protocol": {"vth": 3}}"#, "vth"),
        ("range.json", r#"{"protocol": {"v_th": 16}}"#, "protocol.v_th"),
        ("finite.json", r#"{"protocol": {"tiers": ["four"]}}"#, "weak-coherent"),
    ];
    for (name, text, needle) in cases {
        std::fs::write(dir.path().join(name), text).unwrap();
        let out = rrdps(&["-c", name], dir.path());
        assert_eq!(out.status.code(), Some(1), "{name}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(needle), "{name}: {stderr}");
    }
    let out = rrdps(&["-c", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validation_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = rrdps(&["validate", "--seed", "7"], dir.path());
    let b = rrdps(&["validate", "--seed", "7"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 7);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"sweep": {"distance_km": {"start": 0, "stop": 140, "step": 20}}}"#).unwrap();
    let one = Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(["-c", "run.json"])
        .current_dir(dir.path())
        .env("RRDPS_THREADS", "1")
        .output()
        .unwrap();
    let many = Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(["-c", "run.json", "--threads", "4"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(one.status.success() && many.status.success());
    assert_eq!(one.stdout, many.stdout);
}
