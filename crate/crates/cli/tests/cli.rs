use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn streamq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamq")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name);
    let path_str = path.to_str().unwrap().to_string();
    let mut args = vec!["synth", "--length", "20000", "--shifts", "1", "--seed", "4", "--output", &path_str];
    args.extend_from_slice(extra);
    stdout(&streamq(&args));
    path_str
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.csv", &[]);
    let b = synth(dir.path(), "b.csv", &[]);
    let (a, b) = (fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 20_001);
    assert!(a.starts_with("index,proxy,stat,matches"));

    let s = synth(dir.path(), "s.csv", &["--streaming"]);
    assert_eq!(fs::read_to_string(s).unwrap().lines().count(), 20_001);
}

#[test]
fn parse_prints_canonical_form() {
    let q = "select avg(count(car)) from video tumble(frame_idx, interval '1,000' frames) oracle limit 100 using proxy(frame)";
    let text = stdout(&streamq(&["parse", "--query", q]));
    let again = stdout(&streamq(&["parse", "--query", text.trim_end()]));
    assert_eq!(text, again);
    assert!(text.contains("ORACLE LIMIT 100"));

    let json = stdout(&streamq(&["parse", "--json", "--query", q]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["oracle_limit"], 100);
}

#[test]
fn parse_error_reports_position_and_grammar() {
    let out = streamq(&["parse", "--query", "SELECT MEDIAN(x) FROM s TUMBLE(t, 5 RECORDS) ORACLE LIMIT 5 USING p"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1:8"), "{err}");
    assert!(err.contains("unsupported-aggregate"), "{err}");
    assert!(err.contains("query grammar"), "{err}");
}

#[test]
fn run_emits_one_line_per_segment_and_a_final_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &[]);
    let q = "SELECT AVG(x) FROM d WHERE hit(x) TUMBLE(idx, 5000 RECORDS) ORACLE LIMIT 200 USING p(x)";
    for method in ["inquest", "inquest-fixed-strata", "inquest-fixed-alloc", "uniform", "fixed-stratified"] {
        let out = stdout(&streamq(&["run", "--query", q, "--data", &data, "--method", method, "--bootstrap", "200"]));
        let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 5, "{method}");
        for seg in &lines[..4] {
            assert_eq!(seg["records"], 5000);
            if method != "uniform" {
                assert!(seg["oracle_calls"].as_u64().unwrap() <= 200, "{method}");
            }
        }
        let last = &lines[4];
        assert_eq!(last["final"], true);
        let est = last["estimate"].as_f64().unwrap();
        assert!(est.is_finite() && est > 0.0, "{method}: {est}");
        if method == "inquest" {
            assert!(last["ci_low"].as_f64().unwrap() <= est && est <= last["ci_high"].as_f64().unwrap());
        }
    }
}

#[test]
fn run_with_external_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("p.csv");
    let mut csv = String::from("index,proxy\n");
    for i in 0..2000 {
        csv.push_str(&format!("{i},{}\n", (i % 100) as f64 / 100.0));
    }
    fs::write(&data, csv).unwrap();
    let script = dir.path().join("oracle.sh");
    fs::write(&script, "while read i; do echo \"1 3\"; done\n").unwrap();
    let cmd = format!("sh {}", script.display());
    let q = "SELECT AVG(x) FROM d TUMBLE(idx, 1000 RECORDS) ORACLE LIMIT 50 USING p(x)";
    let out = stdout(&streamq(&[
        "run", "--query", q, "--data", data.to_str().unwrap(), "--oracle-cmd", &cmd, "--bootstrap", "0",
    ]));
    let last: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(last["estimate"].as_f64().unwrap(), 3.0);

    // Without stat columns and without an oracle command the run is refused.
    let out = streamq(&["run", "--query", q, "--data", data.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_reports_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.toml");
    fs::write(
        &config,
        r#"
methods = ["inquest", "uniform"]
budgets = [500]
trials = 3
base_seed = 1
segments = 5

[[datasets]]
name = "s"
synth = { shifts = 1, length = 20000, k = 3, beta = 0.75, seed = 1 }
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    stdout(&streamq(&["bench", "--config", config.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]));
    let reports = fs::read_to_string(out_dir.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 6);
    let tables = fs::read_to_string(out_dir.join("tables.tsv")).unwrap();
    assert!(tables.contains("inquest") && tables.contains("uniform"));
    assert!(out_dir.join("aggregates.json").exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "methods = [\"nope\"]\n").unwrap();
    assert!(!streamq(&["bench", "--config", bad.to_str().unwrap()]).status.success());
}
