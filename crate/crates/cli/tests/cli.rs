use std::path::Path;
use std::process::{Command, Output};

fn knr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knr"))
        .args(args)
        .output()
        .expect("knr runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The maze preset, trimmed so the tests stay fast.
fn small_maze(dir: &Path, episodes: usize) -> String {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/assets/presets/maze.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["driver"]["episodes"] = episodes.into();
    v["planner"]["number of planning samples"] = 64.into();
    let path = dir.join("maze.json");
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn run_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_maze(dir.path(), 4);
    let out = dir.path().join("run");
    let o = knr(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("results.csv")).len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["episodes"], 4);
    assert!(summary["config"]["planner"]["temperature parameter"].is_number());
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_maze(dir.path(), 3);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = knr(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_maze(dir.path(), 3);
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = knr(&["--threads", threads, "run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_maze(dir.path(), 2);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"temperature parameter\"", "\"temprature\"");
    std::fs::write(&cfg, text).unwrap();
    let o = knr(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("temprature"), "{}", stderr(&o));

    std::fs::write(&cfg, "{ \"env\": ").unwrap();
    let o = knr(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    let o = knr(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = knr(&["run", "--preset", "cartpole"]);
    assert_eq!(o.status.code(), Some(2));
    let o = knr(&["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_error_exits_1_with_episode() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/assets/presets/lqr-toy.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    // Pinned planning needs true weights, which random features do not have.
    v["features"] = serde_json::json!({ "kind": "rff", "number of features": 4, "RFF bandwidth": 1.0 });
    v["driver"]["mode"] = "pinned".into();
    v["driver"]["oracle_rollouts"] = 2.into();
    v["driver"]["episodes"] = 2.into();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = knr(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("episode 0"), "{}", stderr(&o));
}

#[test]
fn verify_single_check_and_unknown_id() {
    let o = knr(&["verify", "chi2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("chi2") && out.contains("PASS"), "{out}");

    let o = knr(&["verify", "info-gain", "mean-difference", "--trials", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);

    let o = knr(&["verify", "no-such-lemma"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_reports_exact_maze_cost() {
    let dir = tempfile::tempdir().unwrap();
    let o = knr(&["oracle", "--preset", "maze", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["std_err"], 0.0);
    assert!(v["mean"].as_f64().unwrap() < 0.0);
    assert!(dir.path().join("oracle.json").exists());
}

#[test]
fn sweep_writes_seed_files_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_maze(dir.path(), 3);
    let out = dir.path().join("sweep");
    let o = knr(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in 0..4 {
        assert_eq!(csv_rows(&out.join(format!("seed_{seed}.csv"))).len(), 3);
    }
    let agg = csv_rows(&out.join("aggregate.csv"));
    assert_eq!(agg.len(), 3);

    // Hand-average of the per-seed files.
    let header = csv::Reader::from_path(out.join("aggregate.csv")).unwrap().headers().unwrap().clone();
    let col = header.iter().position(|h| h == "cum_regret_mean").unwrap();
    for (t, row) in agg.iter().enumerate() {
        let mean: f64 = (0..4)
            .map(|s| csv_rows(&out.join(format!("seed_{s}.csv")))[t][3].parse::<f64>().unwrap())
            .sum::<f64>()
            / 4.0;
        let got: f64 = row[col].parse().unwrap();
        assert!((got - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{got} vs {mean}");
    }

    let single = dir.path().join("single");
    let o = knr(&["sweep", "--config", &cfg, "--out", single.to_str().unwrap(), "--seeds", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = csv::Reader::from_path(single.join("aggregate.csv")).unwrap().headers().unwrap().clone();
    for row in csv_rows(&single.join("aggregate.csv")) {
        for (h, v) in header.iter().zip(row.iter()) {
            if h.ends_with("_std") {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h}");
            }
        }
    }
}
