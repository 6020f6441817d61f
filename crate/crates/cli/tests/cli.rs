use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mcrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// 30 users × 25 items, about a third observed, 1-based sparse ids.
fn fixture(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for u in 0..30 {
        for i in 0..25 {
            if (u * 13 + i * 7) % 3 == 0 {
                writeln!(text, "{}\t{}\t{}\t880000000", u + 1, 2 * i + 1, 1 + (u * 7 + i * 3) % 5).unwrap();
            }
        }
    }
    let path = dir.join("ratings.tsv");
    fs::write(&path, text).unwrap();
    path
}

fn setup() -> (TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path()).display().to_string();
    let out = dir.path().join("out").display().to_string();
    (dir, data, out)
}

#[test]
fn stats_reports_counts() {
    let (_dir, data, out) = setup();
    let res = mcrec(&["stats", "--data", &data, "--out", &out]);
    assert!(res.status.success(), "{}", stderr(&res));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&out).join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["#users"], 30);
    assert_eq!(stats["#items"], 25);
    assert_eq!(stats["ratings"], "1-5");
    let csv = fs::read_to_string(Path::new(&out).join("stats.csv")).unwrap();
    assert!(csv.starts_with("#users,#items,#trns,rsize,csize,density,ratings"));
    assert!(Path::new(&out).join("manifest.json").exists());
}

#[test]
fn missing_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv").display().to_string();
    let res = mcrec(&["stats", "--data", &missing, "--out", &dir.path().display().to_string()]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("cannot open dataset"), "{}", stderr(&res));
}

#[test]
fn gamma_not_above_one_is_rejected() {
    let (_dir, data, out) = setup();
    let res = mcrec(&["complete", "--data", &data, "--gamma", "0.9", "--out", &out]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("gamma"), "{}", stderr(&res));
}

#[test]
fn complete_writes_trace_and_report() {
    let (_dir, data, out) = setup();
    let res = mcrec(&["complete", "--data", &data, "--mu0", "0.05", "--gamma", "1.5", "--trace", "--dump-threshold", "0.5", "--out", &out]);
    assert!(res.status.success(), "{}", stderr(&res));
    let out = Path::new(&out);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solver_report.json")).unwrap()).unwrap();
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count() as u64, report["iterations"].as_u64().unwrap());
    for line in trace.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["mu"].as_f64().unwrap() > 0.0);
    }
    assert!(fs::read_to_string(out.join("id_map.csv")).unwrap().contains("item,3,1"));
    assert!(fs::read_to_string(out.join("completed.csv")).unwrap().starts_with("user_id,item_id,value"));
}

#[test]
fn evaluate_single_fold() {
    let (_dir, data, out) = setup();
    let res = mcrec(&["evaluate", "--data", &data, "--method", "puresvd", "--rank", "3", "--folds", "1", "--N", "5", "--out", &out]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["per_fold"].as_array().unwrap().len(), 1);
    assert_eq!(report["n_users_evaluated"], 30);
    let table = fs::read_to_string(Path::new(&out).join("table2.csv")).unwrap();
    assert!(table.starts_with("method,params,HR,ARHR\npuresvd,rank=3,"));
}

#[test]
fn sweep_requires_a_grid() {
    let (_dir, data, out) = setup();
    let res = mcrec(&["sweep", "--data", &data, "--out", &out]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("grid"), "{}", stderr(&res));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let (_dir, data, out) = setup();
    let res = mcrec(&[
        "sweep", "--data", &data, "--folds", "2", "--mu0", "0.05", "--grid-gamma", "1.5,2", "--grid-n", "5,10", "--out", &out,
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(Path::new(&out).join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,mu0,gamma,rank,k,n,hr,arhr,iterations,wall_time");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1..].iter().all(|l| l.starts_with("logdet,0.05,")));
}

#[test]
fn config_file_and_flags_combine() {
    let (dir, data, out) = setup();
    let config = dir.path().join("run.toml");
    fs::write(&config, "method = \"itemknn\"\nk = 4\nfolds = 1\nN = 7\n").unwrap();
    let res = mcrec(&["evaluate", "--data", &data, "--config", &config.display().to_string(), "--k", "6", "--out", &out]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "itemknn");
    assert_eq!(report["params"], "k=6");
    assert_eq!(report["n_list"], 7);
}
