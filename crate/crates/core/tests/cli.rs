use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_LOGISTIC: &str = r#"
task = "logistic"
features = 9
classes = 3
samples = 300
clients = 5
rounds = 15
eta = 0.5
"#;

const SMALL_QUADRATIC: &str = r#"
task = "quadratic"
d = 20
clients = 4
rounds = 40
eta = 0.5
fading = "gaussian"
sigma_h_sq = 0.1
sigma_z_sq = 0.01
"#;

fn agetopk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agetopk")).args(args).output().unwrap()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn run_writes_header_and_one_row_per_round() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let o = out(&dir, "m.csv");
    let res = agetopk(&["run", "--config", &cfg, "--seed", "4", "--out", &o]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&o).unwrap();
    assert!(text.contains("# seed = 4\n"));
    assert!(text.contains("# derived r = 9\n"));
    assert!(text.contains("# derived k = 6\n"));
    let rows = data_rows(Path::new(&o));
    assert_eq!(rows[0], agetopk::experiment::METRICS_COLUMNS);
    assert_eq!(rows.len(), 1 + 15);
    let last: Vec<&str> = rows[15].split(',').collect();
    assert_eq!(last[0], "14");
    let acc: f64 = last[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let (a, b, c) = (out(&dir, "a.csv"), out(&dir, "b.csv"), out(&dir, "c.csv"));
    for (path, threads) in [(&a, "1"), (&b, "1"), (&c, "3")] {
        let res = agetopk(&["run", "--config", &cfg, "--seed", "11", "--out", path, "--threads", threads]);
        assert!(res.status.success());
    }
    let first = fs::read(&a).unwrap();
    assert_eq!(first, fs::read(&b).unwrap());
    assert_eq!(first, fs::read(&c).unwrap());
}

#[test]
fn timing_column_is_opt_in() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let o = out(&dir, "t.csv");
    assert!(agetopk(&["run", "--config", &cfg, "--seed", "1", "--out", &o, "--timing"]).status.success());
    let rows = data_rows(Path::new(&o));
    assert!(rows[0].ends_with(",wall_ms"));
    assert_eq!(rows[1].split(',').count(), 8);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "x.csv");
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["run", "--seed", "1", "--out", &o], "rounds"),
        (vec!["run", "--rounds", "3", "--out", &o], "seed"),
        (vec!["run", "--rounds", "3", "--seed", "1", "--out", &o, "--set", "rho_k=0.5"], "rho_k"),
        (vec!["run", "--rounds", "3", "--seed", "1", "--out", &o, "--set", "colour=blue"], "colour"),
        (vec!["run", "--rounds", "3", "--seed", "1", "--out", &o, "--strategy", "best-k"], "best-k"),
        (vec!["run", "--config", "/nonexistent/cfg.toml", "--seed", "1", "--out", &o], "cfg.toml"),
        (vec!["run", "--seed", "1"], "--out"),
    ];
    for (args, needle) in cases {
        let res = agetopk(&args);
        assert_eq!(res.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}

#[test]
fn divergence_exits_with_two_and_marks_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "q.toml", SMALL_QUADRATIC);
    let o = out(&dir, "div.csv");
    let res = agetopk(&["run", "--config", &cfg, "--seed", "1", "--out", &o, "--set", "eta=1e8", "--rounds", "2000"]);
    assert_eq!(res.status.code(), Some(2));
    let text = fs::read_to_string(&o).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# ABORTED round="), "{last}");
    assert!(data_rows(Path::new(&o)).len() < 2001);
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let target = dir.path().display().to_string();
    let res = agetopk(&["run", "--config", &cfg, "--seed", "1", "--out", &target]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn sweep_summarises_each_axis_value() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let o = out(&dir, "sweep.csv");
    let res = agetopk(&[
        "sweep", "--config", &cfg, "--out", &o, "--axis", "rho_r", "--values", "0.2,0.3,0.5,1.0", "--seeds", "1,2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = data_rows(Path::new(&o));
    assert_eq!(rows.len(), 1 + 4);
    for (row, value) in rows[1..].iter().zip(["0.2", "0.3", "0.5", "1.0"]) {
        assert!(row.starts_with(&format!("{value},2,0,")), "{row}");
    }
}

#[test]
fn single_cell_sweep_matches_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let (s, r) = (out(&dir, "s.csv"), out(&dir, "r.csv"));
    assert!(agetopk(&["sweep", "--config", &cfg, "--out", &s, "--axis", "strategy", "--values", "topk", "--seeds", "7"])
        .status
        .success());
    assert!(agetopk(&["run", "--config", &cfg, "--seed", "7", "--strategy", "topk", "--out", &r]).status.success());
    let summary: Vec<String> = data_rows(Path::new(&s))[1].split(',').map(str::to_owned).collect();
    let last: Vec<String> = data_rows(Path::new(&r)).last().unwrap().split(',').map(str::to_owned).collect();
    assert_eq!(summary[3], last[1]);
    assert_eq!(summary[5], last[2]);
    assert_eq!(summary[7], last[3]);
    assert_eq!(summary[9], last[4]);
}

#[test]
fn bound_check_reports_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "q.toml", SMALL_QUADRATIC);
    let o = out(&dir, "bound.csv");
    let res = agetopk(&["bound-check", "--config", &cfg, "--out", &o, "--seeds", "0..5", "--checkpoints", "5,20,40"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = data_rows(Path::new(&o));
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.ends_with(",pass")), "{rows:?}");
    let text = fs::read_to_string(&o).unwrap();
    assert!(text.contains("# seeds = 0,1,2,3,4\n"));
    assert!(text.contains("# constant gamma = "));
}

#[test]
fn bound_check_rejects_classifiers() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let o = out(&dir, "bound.csv");
    let res = agetopk(&["bound-check", "--config", &cfg, "--out", &o, "--seeds", "1"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn echoed_header_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", SMALL_LOGISTIC);
    let first = out(&dir, "first.csv");
    assert!(agetopk(&["run", "--config", &cfg, "--seed", "3", "--set", "alpha=0.7", "--out", &first]).status.success());
    let echoed: String = fs::read_to_string(&first)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains(" = ") && !l.starts_with("derived"))
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            if v.parse::<f64>().is_ok() { format!("{k} = {v}\n") } else { format!("{k} = \"{v}\"\n") }
        })
        .collect();
    let replay = write_config(&dir, "replay.toml", &echoed);
    let second = out(&dir, "second.csv");
    assert!(agetopk(&["run", "--config", &replay, "--out", &second]).status.success());
    assert_eq!(data_rows(Path::new(&first)), data_rows(Path::new(&second)));
}
