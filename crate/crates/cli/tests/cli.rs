use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_banglahate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Short synthetic documents that a small ensemble fits quickly.
fn synth(dir: &Path, name: &str, examples: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let o = run(&[
        "synth",
        "--examples",
        &examples.to_string(),
        "--seed",
        &seed.to_string(),
        "--min-tokens",
        "3",
        "--max-tokens",
        "6",
        "--out",
        p(&path),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn train(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", p(corpus), "--task", "1a", "--out", p(out)];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "10"]);
    }
    args.extend_from_slice(extra);
    run(&args)
}

fn dir_listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(
        run(&["distribution", "x.tsv", "--task", "1a", "--nope"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["distribution", "x.tsv", "--task", "9z"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn normalize_lines_and_tsv() {
    let o = run_with_stdin(&["normalize"], "ক\u{200B}খ\nHELLO   World!!!!!!\n");
    assert!(o.status.success());
    assert_eq!(stdout(&o), "কখ\nhello world!!!\n");

    let o = run_with_stdin(&["normalize", "--rules", "latin_lowercase"], "ABC  D\n");
    assert_eq!(stdout(&o), "abc  d\n");

    let o = run_with_stdin(&["normalize", "--tsv"], "id\ttext\tlabel\nA1\tFOO  BAR\tNone\n");
    assert_eq!(stdout(&o), "id\ttext\tlabel\nA1\tfoo bar\tNone\n");

    assert_eq!(
        run_with_stdin(&["normalize", "--rules", "bogus"], "x\n").status.code(),
        Some(2)
    );
}

#[test]
fn distribution_json_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut tsv = String::from("id\ttext\tlabel\n");
    for i in 0..200 {
        let label = if i < 199 { "None" } else { "Sexism" };
        tsv.push_str(&format!("{i}\tমন্তব্য\t{label}\n"));
    }
    let corpus = dir.path().join("c.tsv");
    std::fs::write(&corpus, tsv).unwrap();
    let o = run(&["distribution", p(&corpus), "--task", "1a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 200);
    let sexism = v["classes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "Sexism")
        .unwrap();
    assert_eq!(sexism["count"], 1);
    assert_eq!(sexism["percent"], 0.5);

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "id\ttext\tlabel\n").unwrap();
    let o = run(&["distribution", p(&empty), "--task", "1b"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 0);

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "id\ttext\tlabel\n1\tx\tNone\n2\ty\tMystery\n").unwrap();
    let o = run(&["distribution", p(&bad), "--task", "1a"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn build_vocab_writes_reserved_tokens_first() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 50, 1);
    let out = dir.path().join("vocab.txt");
    let o = run(&[
        "build-vocab",
        p(&corpus),
        "--task",
        "1a",
        "--max-size",
        "10",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(&lines[..2], &["[PAD]", "[UNK]"]);
    assert_eq!(lines.len(), 10);
}

#[test]
fn train_evaluate_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 1000, 3);
    let ens = dir.path().join("ens");
    let o = train(&corpus, &ens, &["--jobs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        dir_listing(&ens),
        [
            "ensemble.json",
            "member_0.bin",
            "member_1.bin",
            "member_2.bin",
            "member_3.bin",
            "member_4.bin",
            "run_manifest.json",
            "training_report.json",
            "vocab.txt"
        ]
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(ens.join("training_report.json")).unwrap()).unwrap();
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 5);
    assert_eq!(folds[0]["epochs"].as_array().unwrap().len(), 10);
    assert_eq!(folds[0]["epochs"][1]["perturbed"], true);

    let report_file = dir.path().join("eval.json");
    let o = run(&[
        "evaluate",
        "--ensemble",
        p(&ens),
        "--corpus",
        p(&corpus),
        "--format",
        "json",
        "--out",
        p(&report_file),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(eval["micro_f1"].as_f64().unwrap() >= 0.99, "{eval}");
    assert_eq!(eval["classes"].as_array().unwrap().len(), 6);
    assert_eq!(std::fs::read_to_string(&report_file).unwrap(), stdout(&o));

    let table = run(&["evaluate", "--ensemble", p(&ens), "--corpus", p(&corpus)]);
    assert!(stdout(&table).starts_with("micro-F1"));

    // predictions fed back as gold labels score 1.0
    let unlabeled = dir.path().join("u.tsv");
    let rows: Vec<String> = std::fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .skip(1)
        .take(100)
        .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
        .collect();
    std::fs::write(&unlabeled, format!("id\ttext\n{}\n", rows.join("\n"))).unwrap();
    let pred = run(&["predict", "--ensemble", p(&ens), "--input", p(&unlabeled)]);
    assert!(pred.status.success(), "{}", stderr(&pred));
    let out = stdout(&pred);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("id\tlabel\tprob"));
    let mut relabeled = String::from("id\ttext\tlabel\n");
    for (row, line) in rows.iter().zip(lines) {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f[0], row.split('\t').next().unwrap());
        let prob: f64 = f[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&prob));
        relabeled.push_str(&format!("{}\t{}\n", row, f[1]));
    }
    let relabeled_path = dir.path().join("relabeled.tsv");
    std::fs::write(&relabeled_path, relabeled).unwrap();
    let o = run(&[
        "evaluate",
        "--ensemble",
        p(&ens),
        "--corpus",
        p(&relabeled_path),
        "--format",
        "json",
    ]);
    let eval: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["micro_f1"], 1.0);

    // a single keyword-only example lands in its class
    let one = dir.path().join("one.tsv");
    std::fs::write(&one, "id\ttext\nq\tkw4x0 kw4x1 kw4x2\n").unwrap();
    let o = run(&["predict", "--ensemble", p(&ens), "--input", p(&one)]);
    assert!(stdout(&o).contains("q\tReligious Hate\t"), "{}", stdout(&o));

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "id\ttext\n").unwrap();
    let o = run(&["predict", "--ensemble", p(&ens), "--input", p(&empty)]);
    assert_eq!(stdout(&o), "id\tlabel\tprob\n");

    let malformed = dir.path().join("malformed.tsv");
    std::fs::write(&malformed, "id\ttext\nonly-one-field\n").unwrap();
    assert_eq!(
        run(&["predict", "--ensemble", p(&ens), "--input", p(&malformed)])
            .status
            .code(),
        Some(2)
    );

    let unknown = dir.path().join("unknown.tsv");
    std::fs::write(&unknown, "id\ttext\tlabel\n1\tx\tNotAClass\n").unwrap();
    assert_eq!(
        run(&["evaluate", "--ensemble", p(&ens), "--corpus", p(&unknown)])
            .status
            .code(),
        Some(2)
    );

    // target-group corpus against a type-of-hate ensemble
    let other = dir.path().join("other.tsv");
    std::fs::write(&other, "id\ttext\tlabel\n1\tx\tCommunity\n").unwrap();
    assert_eq!(
        run(&["evaluate", "--ensemble", p(&ens), "--corpus", p(&other)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 300, 4);
    let first = dir.path().join("first");
    let o = train(&corpus, &first, &["--seed", "11", "--epochs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("second");
    let o = run(&[
        "train",
        "--from-manifest",
        p(&first.join("run_manifest.json")),
        "--out",
        p(&second),
        "--jobs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in dir_listing(&first) {
        assert_eq!(
            std::fs::read(first.join(&name)).unwrap(),
            std::fs::read(second.join(&name)).unwrap(),
            "{name}"
        );
    }
    let third = dir.path().join("third");
    let o = train(&corpus, &third, &["--seed", "11", "--epochs", "3", "--jobs", "2"]);
    assert!(o.status.success());
    for i in 0..5 {
        let name = format!("member_{i}.bin");
        assert_eq!(
            std::fs::read(first.join(&name)).unwrap(),
            std::fs::read(third.join(&name)).unwrap()
        );
    }
}

#[test]
fn schedule_never_overrides_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 150, 5);
    let out = dir.path().join("ens");
    let o = train(
        &corpus,
        &out,
        &["--fgsm-schedule", "never", "--epsilon", "0.3", "--epochs", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    let adv = &manifest["pipeline"]["train"]["adv"];
    assert_eq!(adv["epsilon"], 0.3);
    assert_eq!(adv["schedule"], "never");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("training_report.json")).unwrap()).unwrap();
    for fold in report["folds"].as_array().unwrap() {
        assert!(fold["epochs"]
            .as_array()
            .unwrap()
            .iter()
            .all(|e| e["perturbed"] == false));
    }
}

#[test]
fn extra_corpus_with_label_map_is_merged() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 100, 6);
    let extra = dir.path().join("extra.tsv");
    std::fs::write(
        &extra,
        "id\ttext\tlabel\nx1\tkw5x0 kw5x1 নতুন\tsexist\nx2\tkw5x0 kw5x1 নতুন\tsexist\nx3\tkw0x0 অন্য\tneutral\n",
    )
    .unwrap();
    let map = dir.path().join("map.json");
    std::fs::write(&map, r#"{"sexist": "Sexism", "neutral": "None"}"#).unwrap();
    let out = dir.path().join("ens");
    let o = train(
        &corpus,
        &out,
        &["--extra", p(&extra), "--label-map", p(&map), "--epochs", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("training_report.json")).unwrap()).unwrap();
    let total: u64 = report["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["val_size"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 102);

    let o = train(
        &corpus,
        &dir.path().join("bad"),
        &["--extra", p(&extra), "--epochs", "1"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path(), "c.tsv", 60, 7);
    let o = train(
        &corpus,
        &dir.path().join("ens"),
        &["--learning-rate", "1e300", "--epochs", "1"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1"));
}

#[test]
fn train_writes_only_inside_out() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("inputs");
    std::fs::create_dir(&inputs).unwrap();
    let corpus = synth(&inputs, "c.tsv", 100, 8);
    let out = dir.path().join("nested").join("ens");
    let o = bin()
        .args(["train", p(&corpus), "--task", "1a", "--out", p(&out), "--epochs", "1"])
        .current_dir(&inputs)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(dir_listing(&inputs), ["c.tsv"]);
    assert_eq!(dir_listing(dir.path()), ["inputs", "nested"]);
    assert_eq!(dir_listing(&dir.path().join("nested")), ["ens"]);
}
