use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kgrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrec"))
        .args(args)
        .output()
        .expect("spawn kgrec")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Two user groups with disjoint tastes; each user has one held-out test item.
fn write_corpus(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut train = String::new();
    let mut test = String::new();
    for u in 0..12u32 {
        let base = if u < 6 { 100 } else { 200 };
        let items: Vec<u32> = (0..6).map(|j| base + j).collect();
        let held = items[(u as usize) % 6];
        let kept: Vec<String> = items
            .iter()
            .filter(|&&i| i != held)
            .map(u32::to_string)
            .collect();
        train.push_str(&format!("{} {}\n", 1000 + u, kept.join(" ")));
        test.push_str(&format!("{} {held}\n", 1000 + u));
    }
    fs::write(dir.join("train.txt"), train).unwrap();
    fs::write(dir.join("test.txt"), test).unwrap();
}

fn write_config(path: &Path, extra: &str) {
    fs::write(
        path,
        format!(
            "dataset.path = toy\nmodel.kind = distmult\nmodel.dim = 8\ntrain.strategy = 1vsall\ntrain.loss = kl\n\
             train.batch = 16\ntrain.epochs = 30\ntrain.patience = none\ntrain.reg = n3\ntrain.reg_weight = 0.001\n\
             dataset.valid_fraction = 0.2\nseed = 1\n{extra}"
        ),
    )
    .unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_row() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    write_corpus(&toy);
    let out = stdout(&kgrec(&["stats", "--data", s(&toy)]));
    assert_eq!(out, format!("toy\t12\t12\t72\t{:.4}\n", 1.0 - 72.0 / 144.0));
}

#[test]
fn train_evaluate_recommend() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_corpus(&root.join("toy"));
    let cfg = root.join("run.cfg");
    write_config(&cfg, "");
    let ckpt = root.join("m.ckpt");
    let trace = root.join("trace.tsv");
    stdout(&kgrec(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&ckpt),
        "--trace",
        s(&trace),
    ]));
    assert!(root.join("m.ckpt.manifest.json").is_file());
    let trace = fs::read_to_string(trace).unwrap();
    assert!(trace.starts_with("epoch\ttrain_loss\tvalid_recall@20\telapsed_seconds\n"));
    assert_eq!(trace.lines().count(), 31);

    let report = stdout(&kgrec(&["evaluate", "--checkpoint", s(&ckpt), "--k", "5"]));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "model\tdataset\tk\trecall\tndcg\tusers_evaluated");
    let fields: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(&fields[..3], &["distmult", "toy", "5"]);
    assert_eq!(fields[5], "12");
    let recall: f64 = fields[3].parse().unwrap();
    assert!(recall > 0.9, "recall {recall}");

    let recs = stdout(&kgrec(&[
        "recommend",
        "--checkpoint",
        s(&ckpt),
        "--users",
        "1000,1011",
        "--k",
        "2",
    ]));
    let rows: Vec<&str> = recs.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1000\t1"), "{}", rows[0]);
    assert!(rows[1].starts_with("1011\t2"), "{}", rows[1]);

    let unknown = kgrec(&["recommend", "--checkpoint", s(&ckpt), "--users", "5"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn baselines_and_prepared_data() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let toy = root.join("toy");
    write_corpus(&toy);
    let prepared = root.join("toy.json");
    let summary = stdout(&kgrec(&[
        "prepare",
        "--data",
        s(&toy),
        "--valid-fraction",
        "0",
        "--out",
        s(&prepared),
    ]));
    assert_eq!(summary, "12 users, 12 items, 60 train, 0 valid, 12 test\n");

    for baseline in ["mostpop", "random", "userknn", "itemknn"] {
        let out = stdout(&kgrec(&[
            "evaluate",
            "--baseline",
            baseline,
            "--data",
            s(&prepared),
            "--k",
            "3",
        ]));
        let row: Vec<String> = out
            .lines()
            .nth(1)
            .unwrap()
            .split('\t')
            .map(String::from)
            .collect();
        assert_eq!(row[0], baseline);
        let recall: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&recall));
        if baseline.ends_with("knn") {
            // The held-out item is the only unseen in-group item, so neighbors find it.
            assert_eq!(recall, 1.0, "{baseline}");
        }
    }
}

#[test]
fn grid_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_corpus(&root.join("toy"));
    let cfg = root.join("run.cfg");
    write_config(&cfg, "train.eval_every = 5\n");
    let table = root.join("trials.tsv");
    let args = [
        "grid",
        "--config",
        s(&cfg),
        "--table",
        s(&table),
        "--splits",
        "2",
        "--dim",
        "4",
        "--strategies",
        "1vsall,kvsall",
        "--losses",
        "kl,bce",
        "--batch-sizes",
        "16",
        "--optimizers",
        "adagrad",
        "--learning-rates",
        "0.1",
        "--regularizers",
        "n3",
        "--reg-weights",
        "0.001",
    ];
    let best = stdout(&kgrec(&args));
    assert!(best.starts_with("config_id\t"));
    assert_eq!(best.lines().count(), 2);
    let rows = fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    // A second run resumes and computes nothing new.
    assert_eq!(stdout(&kgrec(&args)), best);
    assert_eq!(fs::read_to_string(&table).unwrap(), rows);

    let sweep = stdout(&kgrec(&["sweep", "--config", s(&cfg), "--sizes", "2,8"]));
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "size\trecall@20\tstatus");
    assert!(lines[1].starts_with("2\t") && lines[1].ends_with("\tok"));
    assert!(lines[2].starts_with("8\t") && lines[2].ends_with("\tok"));
}

#[test]
fn config_errors_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.kind = distmult\nmodel.colour = blue\n").unwrap();
    let o = kgrec(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":2"), "{err}");

    fs::write(&cfg, "dataset.path = x\nmodel.kind = mf\nmodel.dim = 4\ntrain.strategy = 1vsall\ntrain.loss = bpr\n").unwrap();
    assert_eq!(
        kgrec(&["train", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
    assert_eq!(kgrec(&["evaluate"]).status.code(), Some(1));
}
