use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;

fn frugal() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_frugal"));
    c.env_remove("FRUGAL_STORE_DIR").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    frugal()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn frugal")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_pool(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let o = run(
        &[
            "gen",
            "--n",
            &n.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            ".",
            "--name",
            name,
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join(format!("{name}.json"))
}

fn write_config(dir: &Path, file: &str, body: Value) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, body.to_string()).unwrap();
    p
}

fn read_log(path: &Path) -> (Value, Vec<Value>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

#[test]
fn gen_defaults_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2200 items, 39 positive"));
    assert!(run(&["gen", "--out", "b"], dir.path()).status.success());

    let csv_a = std::fs::read(dir.path().join("a/pool.csv")).unwrap();
    let csv_b = std::fs::read(dir.path().join("b/pool.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/pool.json")).unwrap()).unwrap();
    assert_eq!(manifest["d"], 8);
    assert_eq!(manifest["csv"], "pool.csv");
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 2201);
    assert!(text.starts_with("id,f0,f1,f2,f3,f4,f5,f6,f7,truth\n"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--pos-frac", "0", "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pos_fraction"), "{}", stderr(&o));
    assert!(!dir.path().join("p").exists());

    assert_eq!(
        run(&["report", "--out", "r"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn malformed_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"display_size\": ").unwrap();
    let o = run(
        &["run", "--config", "bad.json", "--out", "log.jsonl"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json"), "{}", stderr(&o));

    write_config(
        dir.path(),
        "neg.json",
        serde_json::json!({ "display_size": 0 }),
    );
    let o = run(
        &["run", "--config", "neg.json", "--out", "log.jsonl"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(!dir.path().join("log.jsonl").exists());
}

#[test]
fn rl_run_logs_actions_and_rewards() {
    let dir = tempfile::tempdir().unwrap();
    gen_pool(dir.path(), "small", 600, 3);
    let cfg = write_config(
        dir.path(),
        "rl.json",
        serde_json::json!({
            "strategy": "rl-adaptive",
            "display_size": 8,
            "pool": { "manifest": "small.json" },
        }),
    );
    let o = run(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            "out/log.jsonl",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, records) = read_log(&dir.path().join("out/log.jsonl"));
    assert_eq!(header["record"], "run");
    assert_eq!(header["seed"], 5);
    assert_eq!(header["train_pool"]["size"], 300);
    assert!(records.len() >= 2);
    let budget = header["budget"].as_u64().unwrap();
    let last = records.last().unwrap();
    assert_eq!(last["labels_used"].as_u64().unwrap(), budget);
    for r in &records[1..] {
        assert!(r["action"].as_u64().unwrap() < 21);
        assert!(r["reward"].is_f64());
    }
}

fn parse_pool_csv(path: &Path) -> Vec<(u64, Vec<f64>)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            let feats = cols[1..cols.len() - 1]
                .iter()
                .map(|c| c.parse().unwrap())
                .collect();
            (cols[0].parse().unwrap(), feats)
        })
        .collect()
}

/// Replays every maxmin display with a from-scratch farthest-point search:
/// each pick must maximise the minimum distance to everything labeled or
/// already picked, ties to the lowest id.
#[test]
fn maxmin_displays_follow_farthest_point_rule() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_pool(dir.path(), "mm", 400, 9);
    let cfg = write_config(
        dir.path(),
        "mm-run.json",
        serde_json::json!({
            "strategy": "maxmin",
            "display_size": 4,
            "split_seed": 2,
            "pool": { "manifest": "mm.json" },
        }),
    );
    let o = run(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "mm.jsonl",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, records) = read_log(&dir.path().join("mm.jsonl"));

    let pool = frugal_core::pool::load_pool(&manifest).unwrap();
    let split = frugal_core::pool::split_train_test(&pool, 2).unwrap();
    let train: std::collections::BTreeSet<u64> = split.train.ids().into_iter().collect();
    let rows: std::collections::BTreeMap<u64, Vec<f64>> =
        parse_pool_csv(&dir.path().join("mm.csv"))
            .into_iter()
            .filter(|(id, _)| train.contains(id))
            .collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut seen: Vec<u64> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let shown: Vec<u64> = r["display_ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect();
        if i > 0 {
            let mut anchor = seen.clone();
            for &pick in &shown {
                let score = |id: u64| -> f64 {
                    anchor
                        .iter()
                        .map(|a| dist(&rows[&id], &rows[a]))
                        .fold(f64::INFINITY, f64::min)
                };
                let expected = rows
                    .keys()
                    .filter(|id| !anchor.contains(id))
                    .fold(None::<(u64, f64)>, |best, &id| {
                        let s = score(id);
                        match best {
                            Some((_, bs)) if bs >= s => best,
                            _ => Some((id, s)),
                        }
                    })
                    .unwrap()
                    .0;
                assert_eq!(pick, expected, "iteration {}", i + 1);
                anchor.push(pick);
            }
        }
        seen.extend(shown);
    }
    assert!(records.len() > 2);
}

#[test]
fn ablate_writes_nine_rows_per_block() {
    let dir = tempfile::tempdir().unwrap();
    gen_pool(dir.path(), "ab", 600, 1);
    let cfg = write_config(
        dir.path(),
        "ab-run.json",
        serde_json::json!({ "pool": { "manifest": "ab.json" } }),
    );
    let o = run(
        &[
            "ablate",
            "--config",
            cfg.to_str().unwrap(),
            "--seeds",
            "2",
            "--sizes",
            "4,8",
            "--out",
            "tables",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("tables/ablation.csv")).unwrap();
    let mut header = csv.lines().next().unwrap().split(',');
    assert_eq!(header.next(), Some("block"));
    for block in ["display size 4", "display size 8"] {
        let rows: std::collections::BTreeSet<&str> = csv
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(block))
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        let strategies = rows.iter().filter(|r| **r != "fully-supervised").count();
        assert_eq!(strategies, 9, "{block}: {rows:?}");
    }
    let text = std::fs::read_to_string(dir.path().join("tables/ablation.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
    assert!(text.contains("RL-adaptive"));
}

#[test]
fn report_compares_runs_and_refuses_mixed_pools() {
    let dir = tempfile::tempdir().unwrap();
    gen_pool(dir.path(), "p0", 500, 0);
    gen_pool(dir.path(), "p1", 500, 1);
    for (name, pool, strategy) in [
        ("a", "p0.json", "random"),
        ("b", "p0.json", "uncertainty"),
        ("c", "p1.json", "random"),
    ] {
        let cfg = write_config(
            dir.path(),
            &format!("{name}.json"),
            serde_json::json!({ "strategy": strategy, "pool": { "manifest": pool } }),
        );
        let o = run(
            &[
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                &format!("{name}.jsonl"),
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }

    let o = run(
        &["report", "--runs", "a.jsonl", "b.jsonl", "--out", "cmp"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("cmp/comparison.txt")).unwrap();
    assert!(
        text.contains("random") && text.contains("uncertainty"),
        "{text}"
    );
    assert!(dir.path().join("cmp/comparison.csv").exists());

    let o = run(
        &["report", "--runs", "a.jsonl", "c.jsonl", "--out", "bad"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    assert!(!dir.path().join("bad/comparison.txt").exists());
}

#[test]
fn serve_refuses_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = run(&["serve", "--port", &port], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bind"), "{}", stderr(&o));
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_health_and_lists_pools() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_pool(dir.path(), "srv", 200, 4);
    let child = frugal()
        .args(["serve", "--port", "0", "--pool", manifest.to_str().unwrap()])
        .current_dir(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut server = Server(child);
    let mut out = BufReader::new(server.0.stdout.take().unwrap());

    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    assert!(
        line.starts_with("pool ") && line.contains("srv.json ->"),
        "{line}"
    );
    line.clear();
    out.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect("address line");

    let mut stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .unwrap();
    write!(
        stream,
        "GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"ok\""));
}
