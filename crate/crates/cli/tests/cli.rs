use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use polynorm_core::model::Category;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn polynorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polynorm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn replay_eval(runs: &Path, cassette: &Path) -> Output {
    polynorm(&[
        "eval",
        "--dataset",
        p(&fixture("en-US.dev.tsv")),
        "--icl",
        p(&fixture("en-US.icl.tsv")),
        "--provider",
        "gpt-4o",
        "--replay",
        p(cassette),
        "--out",
        p(runs),
        "--deterministic",
    ])
}

fn only_run(runs: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(runs).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1);
    dirs[0].clone()
}

#[test]
fn replay_eval_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let out = replay_eval(&runs, &fixture("en-US.cassette.jsonl"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dir = only_run(&runs);
    for f in ["report.md", "report.json", "report.tsv", "samples.jsonl"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert!(runs.join("index.jsonl").is_file());
    let md = std::fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(md.contains("| WER (%) | BLEU (%) |"), "{md}");
    assert!(stdout(&out).contains("0 item errors"));

    // Same deterministic config into the same runs directory is refused.
    let again = replay_eval(&runs, &fixture("en-US.cassette.jsonl"));
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = polynorm(&["eval", "--dataset", p(&tmp.path().join("nope.tsv")), "--locale", "en-US", "--provider", "baseline", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.tsv"), "{}", stderr(&out));
}

#[test]
fn cassette_miss_is_an_item_error() {
    let tmp = tempfile::tempdir().unwrap();
    let full = std::fs::read_to_string(fixture("en-US.cassette.jsonl")).unwrap();
    let partial = tmp.path().join("partial.jsonl");
    let kept: Vec<&str> = full.lines().skip(2).collect();
    std::fs::write(&partial, kept.join("\n") + "\n").unwrap();
    let runs = tmp.path().join("runs");
    let out = replay_eval(&runs, &partial);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let samples = std::fs::read_to_string(only_run(&runs).join("samples.jsonl")).unwrap();
    let errors: Vec<serde_json::Value> = samples
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v.get("error").is_some_and(|e| !e.is_null()))
        .collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|e| e["hypothesis"] == "" && e["error"].as_str().unwrap().contains("cassette")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(polynorm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(polynorm(&["eval", "--replay", "a", "--record", "b"]).status.code(), Some(1));
    assert_eq!(polynorm(&["--help"]).status.code(), Some(0));
}

#[test]
fn baseline_command_normalizes_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("out.txt");
    let out = polynorm(&["baseline", "--in", p(&fixture("baseline.in.txt")), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(out_path).unwrap(), std::fs::read_to_string(fixture("baseline.expected.txt")).unwrap());
    let de = polynorm(&["--locale", "de-DE", "baseline", "--in", p(&fixture("baseline.in.txt"))]);
    assert_eq!(de.status.code(), Some(1));
}

/// Word-level edit distance, memoized recursion.
fn distance(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let d = sub.min(go(&a[1..], b, memo) + 1).min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

/// Corpus BLEU straight from the definition, effective order, no smoothing
/// beyond a 1e-9 floor on zero matches.
fn bleu(pairs: &[(Vec<&str>, Vec<&str>)]) -> f64 {
    let (mut r, mut c) = (0usize, 0usize);
    let mut logs = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for (reference, hyp) in pairs {
            let grams = |v: &[&str]| {
                let mut h: HashMap<Vec<String>, usize> = HashMap::new();
                for w in v.windows(n) {
                    *h.entry(w.iter().map(|s| s.to_string()).collect()).or_default() += 1;
                }
                h
            };
            let (rg, hg) = (grams(reference), grams(hyp));
            m += hg.iter().map(|(g, k)| (*k).min(rg.get(g).copied().unwrap_or(0))).sum::<usize>();
            t += hyp.len().saturating_sub(n - 1);
        }
        if t > 0 {
            orders += 1;
            logs += if m == 0 { 1e-9f64.ln() } else { (m as f64 / t as f64).ln() };
        }
    }
    for (reference, hyp) in pairs {
        r += reference.len();
        c += hyp.len();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logs / orders as f64).exp()
}

#[test]
fn score_matches_oracles_on_ten_lines() {
    let refs = [
        "may twentieth twenty twenty three",
        "three to two",
        "april eighteenth",
        "the f b i opened a case",
        "twelve thirty",
        "seven oh five p m",
        "one thousand two hundred four people",
        "henry the eighth had six wives",
        "info at example dot com",
        "c sharp major",
    ];
    let hyps = [
        "the twentieth of may two thousand and twenty three",
        "three to two",
        "april the eighteenth",
        "the fbi opened a case",
        "twelve thirty p m",
        "seven zero five p m",
        "one thousand two hundred and four people",
        "henry eight had six wives",
        "info at example dot com",
        "c sharp",
    ];
    let tmp = tempfile::tempdir().unwrap();
    let (rp, hp) = (tmp.path().join("ref.txt"), tmp.path().join("hyp.txt"));
    std::fs::write(&rp, refs.join("\n") + "\n").unwrap();
    std::fs::write(&hp, hyps.join("\n") + "\n").unwrap();
    let out = polynorm(&["score", "--ref", p(&rp), "--hyp", p(&hp), "--locale", "en-US"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let pairs: Vec<(Vec<&str>, Vec<&str>)> =
        refs.iter().zip(&hyps).map(|(r, h)| (r.split(' ').collect(), h.split(' ').collect())).collect();
    let edits: usize = pairs.iter().map(|(r, h)| distance(r, h)).sum();
    let n: usize = pairs.iter().map(|(r, _)| r.len()).sum();
    let expected = format!("WER: {:.2}%  BLEU: {:.2}%\n", edits as f64 / n as f64 * 100.0, bleu(&pairs) * 100.0);
    assert_eq!(edits, 6 + 1 + 3 + 2 + 1 + 1 + 2 + 1);
    assert_eq!(stdout(&out), expected);
}

#[test]
fn score_identical_and_mismatched_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.txt");
    let b = tmp.path().join("b.txt");
    std::fs::write(&a, "I have three cats.\nHe is seventeenth.\n").unwrap();
    std::fs::write(&b, "I have three cats.\n").unwrap();
    let same = polynorm(&["score", "--ref", p(&a), "--hyp", p(&a)]);
    assert_eq!(stdout(&same), "WER: 0.00%  BLEU: 100.00%\n");
    let cjk = tmp.path().join("ja.txt");
    std::fs::write(&cjk, "五月二十日\n").unwrap();
    let ja = polynorm(&["--locale", "ja-JP", "score", "--ref", p(&cjk), "--hyp", p(&cjk)]);
    assert_eq!(stdout(&ja), "CER: 0.00%  BLEU: 100.00%\n");
    let bad = polynorm(&["score", "--ref", p(&a), "--hyp", p(&b)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("2 lines"), "{}", stderr(&bad));
}

#[test]
fn curate_generates_and_checks() {
    let out = polynorm(&[
        "curate",
        "--category",
        "cardinal",
        "--n",
        "3",
        "--provider",
        "gpt-4o",
        "--replay",
        p(&fixture("en-US.cassette.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("candidate-") && r.contains("\ten-US\tcardinal\t")));
    let zero = polynorm(&["curate", "--category", "cardinal", "--n", "0", "--provider", "gpt-4o", "--replay", p(&fixture("en-US.cassette.jsonl"))]);
    assert_eq!(zero.status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("full.tsv");
    let mut text = String::new();
    for (i, c) in Category::ALL.iter().enumerate() {
        for j in 0..20 {
            text.push_str(&format!("s{i}-{j}\ten-US\t{}\tx {j}\ty {j}\n", c.as_str()));
        }
    }
    std::fs::write(&path, &text).unwrap();
    let ok = polynorm(&["curate", "--check", p(&path)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("540 rows, 0 categories"));

    let broken = text.replacen("\tdate\t", "\tdatum\t", 1);
    std::fs::write(&path, broken).unwrap();
    let bad = polynorm(&["curate", "--check", p(&path)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("line 21: unknown category"), "{}", stdout(&bad));
}

#[test]
fn report_and_diff_read_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    assert_eq!(replay_eval(&runs, &fixture("en-US.cassette.jsonl")).status.code(), Some(0));
    let base = polynorm(&["eval", "--dataset", p(&fixture("en-US.dev.tsv")), "--provider", "baseline", "--out", p(&runs), "--deterministic"]);
    assert_eq!(base.status.code(), Some(0), "{}", stderr(&base));
    let index = std::fs::read_to_string(runs.join("index.jsonl")).unwrap();
    let ids: Vec<String> = index.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["run_id"].as_str().unwrap().to_string()).collect();

    let json = polynorm(&["report", &ids[0], "--runs", p(&runs), "--format", "json"]);
    assert_eq!(stdout(&json), std::fs::read_to_string(runs.join(&ids[0]).join("report.json")).unwrap());
    // Different systems are not comparable.
    let cmp = polynorm(&["report", &ids[0], "--runs", p(&runs), "--compare", &ids[1]]);
    assert_eq!(cmp.status.code(), Some(1));
    let same = polynorm(&["report", p(&runs.join(&ids[0])), "--compare", p(&runs.join(&ids[0])), "--clusters", "2"]);
    assert!(stdout(&same).contains("| Overall | 10.16 | 10.16 | 0.00 |"), "{}", stdout(&same));
    assert!(stdout(&same).contains("1. Date - 6 edits"));

    let diff = polynorm(&["diff", &ids[0], "--runs", p(&runs), "--sample", "en-0008"]);
    assert_eq!(
        stdout(&diff),
        "en-0008 [fraction] WER 16.67%\n  original:   Add 3/4 cup of sugar.\n  reference:  add three [quarters] cup of sugar\n  hypothesis: add three [fourths] cup of sugar\n  edits:      substitute\n"
    );
    let errors = polynorm(&["diff", &ids[0], "--runs", p(&runs), "--only-errors", "--json"]);
    assert_eq!(stdout(&errors).lines().count(), 9);
    assert_eq!(polynorm(&["diff", "missing", "--runs", p(&runs)]).status.code(), Some(1));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    let status = buf.split(' ').nth(1)?.parse().ok()?;
    let body = buf.split_once("\r\n\r\n")?.1.to_string();
    Some((status, body))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_exposes_runs_and_rejects_busy_ports() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    assert_eq!(replay_eval(&runs, &fixture("en-US.cassette.jsonl")).status.code(), Some(0));
    let port = free_port();
    let server = Server(
        Command::new(env!("CARGO_BIN_EXE_polynorm"))
            .args(["serve", "--runs", p(&runs), "--port", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let start = Instant::now();
    let (status, body) = loop {
        if let Some(r) = http_get(port, "/api/runs") {
            break r;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status, 200);
    // Chunked or not, the body holds the JSON array.
    assert!(body.contains("\"run_id\""), "{body}");
    let run_id = only_run(&runs).file_name().unwrap().to_str().unwrap().to_string();
    let (status, page) = http_get(port, &format!("/api/runs/{run_id}/samples?only_errors=true")).unwrap();
    assert_eq!(status, 200);
    assert!(page.contains("\"highlights\"") && page.contains("en-0008"));

    let busy = polynorm(&["serve", "--runs", p(&runs), "--port", &port.to_string()]);
    assert_eq!(busy.status.code(), Some(1));
    assert!(stderr(&busy).contains("cannot bind"), "{}", stderr(&busy));
    drop(server);

    let missing = polynorm(&["serve", "--runs", p(&tmp.path().join("none")), "--port", "0"]);
    assert_eq!(missing.status.code(), Some(1));
}
