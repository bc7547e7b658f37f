use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use affinity::Trajectory;

fn affinity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affinity")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = affinity(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

#[test]
fn degree_table() {
    let csv = ok(&["tables", "--which", "degree"]);
    assert_eq!(csv, "k,d_min\n2,31\n3,34\n4,36\n5,38\n10,42\n15,44\n25,46\n");
}

#[test]
fn d1star_table() {
    let csv = ok(&["tables", "--which", "d1star", "--mu2", "0.5,0.3333333"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "mu2,0.4,0.5,0.6,0.7,0.8,0.9");
    assert_eq!(rows[1], "0.5,,,5,9,18,46");
    assert_eq!(rows[2], "0.3333333,3,5,7,12,22,54");
}

#[test]
fn lambda0_of_two_pairs() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["lambda0", "--family", "path:3", "--rates", "1,1"])).unwrap();
    let l = json["lambda0"].as_f64().unwrap();
    assert!((l - 2.0 / 3.0).abs() < 1e-8, "{l}");
    let sym: serde_json::Value =
        serde_json::from_str(&ok(&["lambda0", "--family", "combinatorial:10:3", "--rates", "0.7"])).unwrap();
    assert_eq!(sym["lambda0"].as_f64(), Some(0.7));
}

#[test]
fn config_errors_exit_2() {
    let out = affinity(&["simulate", "--n", "10", "--d1", "2", "--lambda", "0.5", "--horizon", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(affinity(&["simulate", "--horizon", "0"]).status.code(), Some(2));
    assert_eq!(affinity(&["couple", "--ref", "mjsq", "--graph", "cycle:20", "--k", "3"]).status.code(), Some(2));
    assert_eq!(affinity(&["lambda0", "--family", "path:3", "--rates", "1,1,1"]).status.code(), Some(2));
    assert_eq!(affinity(&["simulate", "--bogus"]).status.code(), Some(2));
}

fn read_traj(path: &Path) -> Trajectory {
    Trajectory::read_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_round_trippable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "simulate", "--model", "combinatorial", "--n", "200", "--d1", "25", "--lambda", "0.8", "--mu1", "1",
        "--mu2", "0.5", "--horizon", "5", "--seed", "7", "--out-dir", d,
    ];
    let first = ok(&args);
    let traj = read_traj(&dir.path().join("trajectory.csv"));
    assert_eq!(traj.len(), 51);
    let mut again = Vec::new();
    traj.write_csv(&mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), fs::read_to_string(dir.path().join("trajectory.csv")).unwrap());
    let summary: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(summary["seed"], 7);
    assert!(summary["events"].as_u64().unwrap() > 0);
    // same seed, same output
    assert_eq!(ok(&args), first);
}

#[test]
fn simulate_on_a_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["simulate", "--model", "graph", "--graph", "cycle:10", "--lambda", "0.5", "--horizon", "10", "--out-dir", d]);
    assert_eq!(read_traj(&dir.path().join("trajectory.csv")).len(), 101);
}

#[test]
fn edge_list_graph() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("g.txt");
    fs::write(&edges, "# triangle\n0 1\n1 2\n2 0\n").unwrap();
    let e = edges.to_str().unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["lambda0", "--family", &format!("graph:{e}"), "--rates", "0.5"])).unwrap();
    assert!((json["lambda0"].as_f64().unwrap() - 0.5).abs() < 1e-8);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[simulate]\nmodel = \"combinatorial\"\nn = 100\nd1 = 5\nlambda = 0.8\nhorizon = 50.0\nsample_dt = 1.0\n",
    )
    .unwrap();
    let (c, d) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    ok(&["simulate", "--config", c, "--horizon", "3", "--out-dir", d]);
    assert_eq!(read_traj(&dir.path().join("trajectory.csv")).len(), 4);

    fs::write(&cfg, "[simulate]\nn = 100\nbogus = 1\n").unwrap();
    assert_eq!(affinity(&["simulate", "--config", c]).status.code(), Some(2));
}

#[test]
fn fluid_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fluid.csv");
    let o = out.to_str().unwrap();
    ok(&["fluid", "--d1", "3", "--horizon", "2", "--sample-dt", "0.5", "--initial", "queueing", "--out", o]);
    let traj = read_traj(&out);
    assert_eq!(traj.times(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    let last = traj.last().unwrap().1;
    assert!((last[1][1] - 0.6).abs() < 1e-9);
    ok(&["fluid", "--initial", "0.5,0.1;0.4,0.0", "--horizon", "1", "--out", o]);
    assert_eq!(affinity(&["fluid", "--initial", "0.5,0.1", "--out", o]).status.code(), Some(2));
}

#[test]
fn fixpoint_report_and_sweep() {
    let json: serde_json::Value = serde_json::from_str(&ok(&["fixpoint", "--d1", "25"])).unwrap();
    let pts = json["no_queueing_fps"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts.iter().any(|p| p["stability"] == "stable" && (p["q00"].as_f64().unwrap() - 0.1966).abs() < 5e-5));
    assert_eq!(json["d1_star"], 18);
    assert!((json["metrics"]["switch_fraction"].as_f64().unwrap() - 0.25).abs() < 1e-12);

    let csv = ok(&["fixpoint", "--d1", "2", "--sweep", "0.6,0.7,0.8"]);
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), [
        "lambda", "EQ_cm", "EQ_jsq", "EQ_ra", "EW_I", "EW_II", "EW_ra", "EW_jsq"
    ]);
    assert_eq!(r.records().count(), 3);
}

#[test]
fn couple_reports_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.csv");
    let l = log.to_str().unwrap();
    let out = ok(&["couple", "--ref", "jsq", "--seeds", "3", "--events", "2000", "--log", l]);
    assert!(out.lines().any(|s| s == "majorization held: yes"), "{out}");
    let mut r = csv::Reader::from_path(&log).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "event_kind", "pos_aff", "pos_ref", "ok"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2000);
    assert!(rows.iter().all(|row| &row[4] == "true"));
    let out = ok(&["couple", "--ref", "mjsq", "--seeds", "2", "--events", "2000"]);
    assert!(out.contains("majorization held: yes"));
    let out = ok(&["couple", "--ref", "ra", "--family", "0,1;1,2;2,3", "--rates", "0.5", "--seeds", "2", "--events", "2000"]);
    assert!(out.contains("majorization held: yes"));
}
