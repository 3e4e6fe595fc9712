use std::collections::BTreeSet;

use frugal_core::config::{RunConfig, Strategy};
use frugal_core::pool::{sampling_rate, split_train_test, Pool, SyntheticSpec};
use frugal_core::report::{fmt2, run_ablation, MISSING};
use frugal_core::session::{run_simulated, RunLog};

fn default_split() -> (Pool, Pool) {
    let pool = SyntheticSpec::default().generate().unwrap();
    let s = split_train_test(&pool, 0).unwrap();
    (s.train, s.test)
}

fn check_log_invariants(log: &RunLog, train_size: usize) {
    let mut seen = BTreeSet::new();
    let mut sizes = Vec::new();
    for (t, rec) in log.records.iter().enumerate() {
        assert_eq!(rec.iteration, t + 1);
        for id in &rec.display_ids {
            assert!(seen.insert(*id), "id {id} displayed twice");
        }
        sizes.push(rec.display_size);
        assert_eq!(rec.labels_used, sizes.iter().sum::<usize>());
        assert_eq!(
            rec.samp_pct,
            sampling_rate(&sizes, train_size).unwrap().reported()
        );
    }
    assert_eq!(sizes.iter().sum::<usize>(), log.header.budget);
}

#[test]
fn size_eight_runs_sixteen_iterations_on_1100_items() {
    let (train, test) = default_split();
    assert_eq!(train.len(), 1100);
    let cfg = RunConfig {
        strategy: Strategy::Fixed(frugal_core::policy::Combo::DivRep),
        display_size: 8,
        ..RunConfig::default()
    };
    let log = run_simulated(&train, &test, &cfg, 0).unwrap();
    assert_eq!(log.header.budget, 128);
    assert_eq!(log.records.len(), 16);
    let samp: Vec<String> = log.records.iter().map(|r| fmt2(r.samp_pct)).collect();
    assert_eq!(samp[1], "1.45");
    assert_eq!(samp[15], "11.63");
    check_log_invariants(&log, train.len());
}

#[test]
fn every_strategy_keeps_log_invariants() {
    let pool = SyntheticSpec {
        n: 500,
        ..SyntheticSpec::default()
    }
    .generate()
    .unwrap();
    let s = split_train_test(&pool, 1).unwrap();
    for name in [
        "rl-adaptive",
        "rl-fixed-size",
        "fixed:rep",
        "fixed:div+amb",
        "random",
        "maxmin",
        "uncertainty",
    ] {
        let cfg = RunConfig {
            strategy: name.parse().unwrap(),
            budget: Some(70),
            ..RunConfig::default()
        };
        let log = run_simulated(&s.train, &s.test, &cfg, 4).unwrap();
        check_log_invariants(&log, s.train.len());
        if cfg.strategy.is_rl() {
            assert!(log.records[1..]
                .iter()
                .all(|r| r.action.is_some() && r.reward.is_some()));
        }
    }
}

#[test]
fn learning_progress_on_a_separable_pool() {
    let pool = SyntheticSpec {
        n: 1000,
        d: 4,
        pos_fraction: 0.1,
        separation: 4.0,
        seed: 3,
    }
    .generate()
    .unwrap();
    let s = split_train_test(&pool, 0).unwrap();
    for name in [
        "rl-adaptive",
        "random",
        "maxmin",
        "uncertainty",
        "fixed:all",
    ] {
        let cfg = RunConfig {
            strategy: name.parse().unwrap(),
            budget_fraction: 0.1,
            display_size: 8,
            ..RunConfig::default()
        };
        let improved = (0..10u64)
            .filter(|&seed| {
                let log = run_simulated(&s.train, &s.test, &cfg, seed).unwrap();
                let first = log.records.first().unwrap().test_eer.unwrap();
                log.final_eer().unwrap() <= first
            })
            .count();
        assert!(improved >= 8, "{name}: {improved}/10");
    }
}

#[test]
fn rl_adaptive_is_no_worse_than_random_on_average() {
    let (train, test) = default_split();
    let mean = |strategy: Strategy| {
        let cfg = RunConfig {
            strategy,
            ..RunConfig::default()
        };
        (0..10u64)
            .map(|seed| {
                run_simulated(&train, &test, &cfg, seed)
                    .unwrap()
                    .final_eer()
                    .unwrap()
            })
            .sum::<f64>()
            / 10.0
    };
    let rl = mean(Strategy::RlAdaptive);
    let random = mean(Strategy::Random);
    assert!(rl <= random, "rl {rl} random {random}");
}

#[test]
fn ablation_grid_layout_and_renderings() {
    let (train, test) = default_split();
    let table = run_ablation(&train, &test, &RunConfig::default(), &[8, 16, 32], &[0]).unwrap();
    assert_eq!(table.blocks.len(), 3);
    for block in &table.blocks {
        assert_eq!(block.rows.len(), 9);
    }
    let expected: [&[&str]; 3] = [
        &[
            "0.72", "1.45", "2.18", "2.90", "3.63", "4.36", "5.09", "5.81", "6.54", "7.27", "8.00",
            "8.72", "9.45", "10.18", "10.90", "11.63",
        ],
        &[
            "1.45", "2.90", "4.36", "5.81", "7.27", "8.72", "10.18", "11.63",
        ],
        &["2.90", "5.81", "8.72", "11.63"],
    ];
    for (block, want) in table.blocks.iter().zip(expected) {
        let shared: Vec<String> = block
            .shared_samp()
            .into_iter()
            .map(|v| v.map_or_else(|| MISSING.to_string(), fmt2))
            .collect();
        assert_eq!(&shared[..want.len()], want, "{}", block.title);
    }

    let text = table.render_text();
    let csv = table.render_csv();
    let numbers = |s: &str| -> BTreeSet<String> {
        s.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| t.contains('.') && t.parse::<f64>().is_ok())
            .map(str::to_string)
            .collect()
    };
    assert_eq!(numbers(&text), numbers(&csv));
    assert!(text.contains("RL-adaptive"));
    assert!(text.contains("fully-supervised"));
}

#[test]
fn runlog_file_roundtrip() {
    let (train, test) = default_split();
    let cfg = RunConfig {
        budget: Some(40),
        ..RunConfig::default()
    };
    let log = run_simulated(&train, &test, &cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    log.write_jsonl(std::fs::File::create(&path).unwrap())
        .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains("\"record\":\"run\""));
    let back =
        RunLog::read_jsonl(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.to_jsonl(), text);
}
