mod common;

use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::{MockServer, Reply};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affect-eval"));
    c.env_remove("AFFECT_EVAL_API_KEY").env_remove("RUST_LOG");
    c
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn run_code(args: &[&str]) -> (i32, Output) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), out)
}

fn piped(args: &[&str], input: &Path, output: &Path) {
    let out = bin()
        .args(args)
        .stdin(Stdio::from(std::fs::File::open(input).unwrap()))
        .stdout(Stdio::from(std::fs::File::create(output).unwrap()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: impl AsRef<Path>) -> &'static str {
    Box::leak(p.as_ref().to_str().unwrap().to_string().into_boxed_str())
}

#[test]
fn validate_reports_record_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.csv");
    run_ok(&["mock", "--records", "1177", "--seed", "4", "-o", s(&corpus)]);
    let out = run_ok(&["validate", "--corpus", s(&corpus), "--format", "two-annotator"]);
    assert_eq!(out.trim(), "1177 records, 0 errors");
}

#[test]
fn identity_run_prints_all_hundreds() {
    let out = run_ok(&["run", "--protocol", "full", "--endpoint", "mock:identity", "--synthetic", "300"]);
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| {
            let first = l.split_whitespace().next().unwrap_or_default();
            affect_eval::dimension::Dimension::from_name(first).is_some()
        })
        .collect();
    assert_eq!(rows.len(), 10, "{out}");
    for row in rows {
        assert_eq!(row.split_whitespace().nth(1), Some("100.0"), "{row}");
    }
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_code(&["run", "--protocol", "leave-one-out", "--endpoint", "mock:identity", "--synthetic", "20"]);
    assert_eq!(code, 2);
    let (code, _) = run_code(&["run", "--endpoint", "ftp://x", "--synthetic", "20"]);
    assert_eq!(code, 2);
    let (code, _) = run_code(&["validate", "--corpus", s(dir.path().join("absent.csv"))]);
    assert_eq!(code, 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,text,Anger,Anxiety,Fear,Sadness,Disgust,Optimism,Excitement,Surprise,Valence,Arousal\na,hi,1,2,3,4,5,6,7,8,-150,9\n").unwrap();
    let (code, out) = run_code(&["validate", "--corpus", s(&bad)]);
    assert_eq!(code, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Valence"));

    let server = MockServer::start(|_, _| Reply::status(401));
    let corpus = dir.path().join("c.csv");
    run_ok(&["mock", "--records", "20", "-o", s(&corpus)]);
    let (code, out) = run_code(&[
        "run", "--corpus", s(&corpus), "--format", "two-annotator", "--endpoint", &server.base_url,
    ]);
    assert_eq!(code, 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stage_pipeline_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    run_ok(&["mock", "--records", "400", "--seed", "7", "-o", s(p("corpus.csv"))]);
    let corpus = ["--corpus", s(p("corpus.csv")), "--format", "two-annotator"];
    let endpoint = "mock:shift=4,sigma=8,drop=0.1,malform=0.05,seed=11";

    let mut args = vec!["run", "--protocol", "full", "--endpoint", endpoint, "--policy", "impute-zero", "--seed", "5"];
    args.extend(corpus);
    args.extend(["--output-dir", s(p("run"))]);
    run_ok(&args);

    let mut args = vec!["prompt", "--part", "test", "--seed", "5", "-o", s(p("prompts.jsonl"))];
    args.extend(corpus);
    run_ok(&args);
    let mut args = vec!["infer", "--endpoint", endpoint];
    args.extend(corpus);
    piped(&args, &p("prompts.jsonl"), &p("completions.jsonl"));
    piped(&["parse", "--policy", "impute-zero"], &p("completions.jsonl"), &p("predictions.jsonl"));
    let mut args = vec!["eval", "--predictions", s(p("predictions.jsonl")), "-o", s(p("report.json"))];
    args.extend(corpus);
    run_ok(&args);

    let read = |f: &Path| std::fs::read_to_string(f).unwrap();
    assert_eq!(read(&p("report.json")), read(&p("run/report.json")));
    assert_eq!(read(&p("completions.jsonl")), read(&p("run/completions.jsonl")));
    assert_eq!(read(&p("predictions.jsonl")), read(&p("run/predictions.jsonl")));
}

#[test]
fn infer_against_http_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let server = MockServer::start(|req, _| {
        assert!(req.prompt().ends_with("Output:"));
        Reply::ok("Here you go: {\"Anger\": 10, \"Anxiety\": 0, \"Fear\": 0, \"Sadness\": 5, \"Disgust\": 0, \"Optimism\": 50, \"Excitement\": 40, \"Surprise\": 0, \"Valence\": 30, \"Arousal\": 20}")
    });
    run_ok(&["mock", "--records", "12", "-o", s(p("c.csv"))]);
    run_ok(&["prompt", "--corpus", s(p("c.csv")), "--format", "two-annotator", "-o", s(p("prompts.jsonl"))]);
    piped(
        &["infer", "--endpoint", &server.base_url, "--model", "m", "--cache-dir", s(p("cache"))],
        &p("prompts.jsonl"),
        &p("completions.jsonl"),
    );
    assert_eq!(server.count(), 12);
    piped(
        &["infer", "--endpoint", &server.base_url, "--model", "m", "--cache-dir", s(p("cache"))],
        &p("prompts.jsonl"),
        &p("again.jsonl"),
    );
    assert_eq!(server.count(), 12);
    piped(&["parse"], &p("completions.jsonl"), &p("predictions.jsonl"));
    let preds = std::fs::read_to_string(p("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 12);
    assert!(preds.lines().all(|l| l.contains("\"Optimism\":50.0")));
}

#[test]
fn report_merges_six_sources() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    run_ok(&["mock", "--records", "300", "--seed", "2", "-o", s(p("c.csv"))]);
    let corpus = ["--corpus", s(p("c.csv")), "--format", "two-annotator"];
    let runs: [(&str, &[&str]); 5] = [
        ("baseline", &["--protocol", "baseline", "--endpoint", "mock:sigma=20,shift=-5"]),
        ("full", &["--protocol", "full", "--endpoint", "mock:sigma=5"]),
        ("loo-fear", &["--protocol", "leave-one-out", "--held-out", "Fear", "--endpoint", "mock:sigma=8"]),
        ("loo-optimism", &["--protocol", "leave-one-out", "--held-out", "Optimism", "--endpoint", "mock:sigma=8"]),
        ("emotion-only", &["--protocol", "emotion-only", "--endpoint", "mock:sigma=6"]),
    ];
    let mut inputs = Vec::new();
    for (name, extra) in runs {
        let dir = p(name);
        let mut args = vec!["run"];
        args.extend(extra);
        args.extend(corpus);
        args.extend(["--output-dir", s(&dir)]);
        run_ok(&args);
        inputs.push(dir.join("manifest.json"));
    }
    // A sixth column scored on emotions only, so Valence and Arousal are absent.
    let full = p("full");
    let mut args = vec!["eval", "--predictions", s(full.join("predictions.jsonl")), "--dimensions", "emotions", "-o"];
    let partial = p("emotions-report.json");
    args.push(s(&partial));
    args.extend(corpus);
    run_ok(&args);

    let mut args = vec!["report", "--csv"];
    let strs: Vec<String> = inputs.iter().map(|i| i.to_str().unwrap().to_string()).collect();
    args.extend(strs.iter().map(String::as_str));
    let partial_arg = format!("partial={}", s(&partial));
    args.push(&partial_arg);
    let csv = run_ok(&args);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "Dimension,baseline,full,loo-fear,loo-optimism,emotion-only,partial");
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 7);
    }
    assert!(lines[9].starts_with("Valence,") && lines[9].ends_with(",--"));
    assert!(lines[10].starts_with("Arousal,") && lines[10].ends_with(",--"));
    assert!(!lines[1].contains("--"));

    let text = run_ok(&["report", s(&inputs[0]), s(&inputs[1])]);
    assert!(text.starts_with("CCC (%)"));
}

#[test]
fn split_manifest_drives_prompt_partition() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    run_ok(&["mock", "--records", "1177", "-o", s(p("c.csv"))]);
    let corpus = ["--corpus", s(p("c.csv")), "--format", "two-annotator"];
    let mut args = vec!["split", "--seed", "3", "-o", s(p("split.jsonl"))];
    args.extend(corpus);
    run_ok(&args);
    let split = std::fs::read_to_string(p("split.jsonl")).unwrap();
    assert_eq!(split.lines().filter(|l| l.contains("\"train\"")).count(), 706);
    assert_eq!(split.lines().filter(|l| l.contains("\"validation\"")).count(), 176);
    assert_eq!(split.lines().filter(|l| l.contains("\"test\"")).count(), 295);

    let mut a = vec!["prompt", "--part", "validation", "--split-manifest", s(p("split.jsonl"))];
    a.extend(corpus);
    let mut b = vec!["prompt", "--part", "validation", "--seed", "3"];
    b.extend(corpus);
    let from_manifest = run_ok(&a);
    assert_eq!(from_manifest, run_ok(&b));
    assert_eq!(from_manifest.lines().count(), 176);
}

#[test]
fn help_lists_every_subcommand() {
    let help = run_ok(&["--help"]);
    for cmd in ["validate", "split", "prompt", "infer", "parse", "eval", "run", "select", "report", "mock"] {
        assert!(help.contains(cmd), "{cmd}");
    }
}

#[test]
fn select_picks_best_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    run_ok(&["mock", "--records", "200", "-o", s(p("c.csv"))]);
    let corpus = ["--corpus", s(p("c.csv")), "--format", "two-annotator"];
    let mut args = vec!["prompt", "-o", s(p("prompts.jsonl"))];
    args.extend(corpus);
    run_ok(&args);
    for (name, spec) in [("e1", "mock:sigma=20"), ("e2", "mock:sigma=2"), ("e3", "mock:sigma=10")] {
        let mut args = vec!["infer", "--endpoint", spec];
        args.extend(corpus);
        piped(&args, &p("prompts.jsonl"), &p(&format!("{name}.c.jsonl")));
        piped(&["parse"], &p(&format!("{name}.c.jsonl")), &p(&format!("{name}.jsonl")));
    }
    let c = |n: &str| format!("{n}={}", s(p(&format!("{n}.jsonl"))));
    let (e1, e2, e3) = (c("e1"), c("e2"), c("e3"));
    let mut args = vec!["select", "--candidate", &e1, "--candidate", &e2, "--candidate", &e3];
    args.extend(corpus);
    let out = run_ok(&args);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["selected"], "e2");
    assert_eq!(v["scores"].as_array().unwrap().len(), 3);
}
