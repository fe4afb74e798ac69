//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Run: cargo test -p polynorm-cli --test acceptance

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::DateTime;
use polynorm_core::baseline::normalize_sentence;
use polynorm_core::dataset::{gate_dataset, validate_coverage, Dataset, FileFormat};
use polynorm_core::hillclimb::compare_runs;
use polynorm_core::metrics::{align_tokens, bleu, canonicalize, error_rate_str, EditKind};
use polynorm_core::model::{parse_locale, Decoding, RunConfig, Sample};
use polynorm_core::reporting::{aggregate_at, score_sample, RunReport};
use polynorm_core::scalar::parse_decimal;
use polynorm_core::{Category, Exact, Locale};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Published source text the fixture values are checked against.
const SOURCE: &str = "paper.md";

fn source_text() -> Result<String, String> {
    std::fs::read_to_string(workspace().join(SOURCE)).map_err(|e| format!("{SOURCE}: {e}"))
}

fn loc(tag: &str) -> Locale {
    parse_locale(tag).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

/// Bottom-up edit distance over suffixes; shares no code with the library.
fn dp_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            d[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let keep = d[i + 1][j + 1] + usize::from(a[i] != b[j]);
                keep.min(d[i + 1][j] + 1).min(d[i][j + 1] + 1)
            };
        }
    }
    d[0][0]
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let alphabet = ["a", "b", "c", "d", "e"];
    let pairs = 2000;
    for k in 0..pairs {
        let word = |rng: &mut StdRng| -> Vec<&str> {
            let len = rng.random_range(0..=8);
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let (r, h) = (word(&mut rng), word(&mut rng));
        let al = align_tokens(&r, &h);
        let oracle = dp_distance(&r, &h);
        ensure(al.distance() == oracle, || format!("pair {k} {r:?}/{h:?}: {} != {oracle}", al.distance()))?;
        // The ops must also replay to the two sequences.
        let (mut ri, mut hi) = (Vec::new(), Vec::new());
        for op in &al.ops {
            if let Some(i) = op.ref_index {
                ri.push(i);
            }
            if let Some(j) = op.hyp_index {
                hi.push(j);
            }
            if op.kind == EditKind::Match {
                ensure(r[op.ref_index.unwrap()] == h[op.hyp_index.unwrap()], || format!("pair {k}: bad match op"))?;
            }
        }
        ensure(ri == (0..r.len()).collect::<Vec<_>>() && hi == (0..h.len()).collect::<Vec<_>>(), || {
            format!("pair {k}: ops do not cover both sequences in order")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} pairs, lengths 0-8, alphabet 5, exact, {elapsed:.2?}"))
}

fn date_fixture() -> Check {
    let text = source_text()?;
    let (accepted, rejected) = ("may twentieth twenty twenty three", "the twentieth of may two thousand and twenty three");
    ensure(text.contains(&format!("\\texttt{{{accepted}}}")) && text.contains(&format!("\\texttt{{{rejected}}}")), || {
        format!("date example not found in {SOURCE}")
    })?;
    let en = loc("en-US");
    let r: Vec<String> = canonicalize(accepted, &en).tokens;
    let h: Vec<String> = canonicalize(rejected, &en).tokens;
    let oracle = dp_distance(&r, &h);
    let rate = error_rate_str::<Exact>(accepted, rejected, &en).map_err(|e| e.to_string())?;
    ensure(oracle == 6, || format!("oracle distance {oracle}"))?;
    ensure(rate.wer_or_cer == Exact::new(6, 5), || format!("rate {}", rate.wer_or_cer))?;
    Ok(format!("distance {oracle}, rate {}", rate.wer_or_cer))
}

fn baseline_examples() -> Check {
    let text = source_text()?;
    let cases = [
        ("4/18", "april eighteenth"),
        ("2020", "twenty twenty"),
        ("05/20/2023", "may twentieth twenty twenty three"),
        ("3-2", "three to two"),
        ("It's the 17th century.", "It's the seventeenth century."),
    ];
    for needle in ["\"4/18\"", "april eighteenth", "\"2020\"", "twenty twenty", "05/20/2023", "\"3-2\" as \"three to two\"", "seventeenth"] {
        ensure(text.contains(needle), || format!("{needle:?} not in {SOURCE}"))?;
    }
    for (input, expected) in cases {
        let got = normalize_sentence(input);
        ensure(got == expected, || format!("{input:?} -> {got:?}, expected {expected:?}"))?;
    }
    for input in ["12:30", "Meet me at 12:30.", "The 12:30 train"] {
        let got = normalize_sentence(input).to_lowercase();
        let words: Vec<&str> = got.split(|c: char| !c.is_alphanumeric()).collect();
        ensure(!["am", "pm", "a", "p"].iter().any(|m| words.contains(m)), || format!("{input:?} -> {got:?} has a meridiem"))?;
    }
    Ok(format!("{} published examples, no meridiem on bare 12:30", cases.len()))
}

fn german_canonicalization() -> Check {
    let de = loc("de-DE");
    for (a, b) in [("Hauptstraße", "hauptstrasse"), ("HAUPTSTRASSE", "hauptStraße"), ("Die Straße", "die strasse")] {
        let m = error_rate_str::<Exact>(a, b, &de).map_err(|e| e.to_string())?;
        ensure(m.edit_counts.edits() == 0, || format!("{a:?} vs {b:?}: {} edits", m.edit_counts.edits()))?;
    }
    let text = source_text()?;
    let row = text
        .lines()
        .find(|l| l.starts_with("German & Address &"))
        .ok_or(format!("German baseline example row not in {SOURCE}"))?;
    let cells: Vec<&str> = row.trim_end_matches("\\\\").split(" & ").map(str::trim).collect();
    let (example, truth) = (cells[2], cells[3]);
    let expected = ["die", "wohnung", "befindet", "sich", "in", "der", "hauptstrasse", "fünfundvierzig"];
    let tokens = canonicalize(truth, &de).tokens;
    ensure(tokens == expected, || format!("ground truth tokens {tokens:?}"))?;
    let spoken = example.replace("45", "fünfundvierzig");
    let m = error_rate_str::<Exact>(truth, &spoken, &de).map_err(|e| e.to_string())?;
    ensure(m.edit_counts.edits() == 0, || format!("{spoken:?} vs ground truth: {} edits", m.edit_counts.edits()))?;
    Ok(format!("ß/ss and casing free; ground truth {} tokens reproduced", tokens.len()))
}

fn cjk_pairs() -> Check {
    let pairs = [
        ("ja-JP", "価格は一万五千ウォン", "価格は一万五千ウォン"),
        ("ja-JP", "カカクワ イチマン ゴセンワン", "カカク ハ イチマン ゴセンワン"),
        ("ja-JP", "今日は五月二十日です", "今日は五月二十日だ"),
        ("ja-JP", "三時半に会いましょう", "三時三十分に会いましょう"),
        ("ja-JP", "電話番号はゼロサンです", "電話番号は零三です"),
        ("ja-JP", "第十七世紀", "十七世紀"),
        ("ja-JP", "二千二十年", "二〇二〇年"),
        ("ja-JP", "ひゃくにじゅう", "ひゃく にじゅう"),
        ("ja-JP", "スコアは三対二", "スコアは三たい二"),
        ("ja-JP", "あ", "いう"),
        ("zh-CN", "速度标记四分音符等于一百二十", "速度 标记 等于 一 百 二 十"),
        ("zh-CN", "今天是五月二十日", "今天是五月二十号"),
        ("zh-CN", "比分是三比二", "比分是三比二"),
        ("zh-CN", "价格是二十元", "价格是二十块钱"),
        ("zh-CN", "第十七名", "第十七"),
        ("zh-CN", "电话号码是零一二三", "电话号码是一二三"),
        ("zh-CN", "二零二零年", "两千零二十年"),
        ("zh-CN", "三点半", "三点三十分"),
        ("zh-CN", "百分之五", "五百分"),
        ("zh-CN", "一", "二"),
    ];
    for (tag, r, h) in pairs {
        let chars = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<Vec<char>>();
        let (rc, hc) = (chars(r), chars(h));
        let oracle = Exact::new(dp_distance(&rc, &hc) as i64, rc.len() as i64);
        let got = error_rate_str::<Exact>(r, h, &loc(tag)).map_err(|e| e.to_string())?;
        ensure(got.wer_or_cer == oracle, || format!("{tag} {r:?}/{h:?}: {} != {oracle}", got.wer_or_cer))?;
        ensure(got.ref_len == rc.len(), || format!("{r:?}: {} tokens, expected {} codepoints", got.ref_len, rc.len()))?;
    }
    Ok(format!("{} pairs exact against the character oracle", pairs.len()))
}

fn bleu_fixtures() -> Check {
    let en = loc("en-US");
    let corpus = |pairs: &[(&str, &str)]| -> Result<f64, String> {
        let texts: Vec<_> = pairs.iter().map(|(r, h)| (canonicalize(r, &en), canonicalize(h, &en))).collect();
        bleu::<f64>(&texts).map_err(|e| e.to_string())
    };
    let identical = [("the cat sat on the mat", "the cat sat on the mat"), ("april eighteenth", "April eighteenth.")];
    let one = corpus(&identical)?;
    ensure(one == 1.0, || format!("identical corpus scored {one}"))?;
    let fixtures: [(&[(&str, &str)], f64); 3] = [
        // p = 5/6, 4/5, 3/4, 2/3; no brevity penalty.
        (&[("a b c d e f", "a b c d e g")], (5.0 / 6.0 * 4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0f64).powf(0.25)),
        // All precisions 1; c = 5, r = 8.
        (&[("a b c d e f g h", "a b c d e")], (1.0 - 8.0 / 5.0f64).exp()),
        // Pooled: 7/8, 4/6, 2/4, 1/2.
        (&[("a b c d", "a b c d"), ("e f g h", "e f x h")], (7.0 / 8.0 * 4.0 / 6.0 * 2.0 / 4.0 * 1.0 / 2.0f64).powf(0.25)),
    ];
    for (i, (pairs, expected)) in fixtures.iter().enumerate() {
        let got = corpus(pairs)?;
        ensure((got - expected).abs() <= 1e-9, || format!("fixture {}: {got} vs {expected}", i + 1))?;
    }
    Ok("identical corpus 1.0; 3 fixtures within 1e-9".into())
}

fn dataset_gate() -> Check {
    let text = source_text()?;
    ensure(text.contains("20 examples per category"), || format!("per-category count not in {SOURCE}"))?;
    ensure(Category::ALL.len() == 27, || format!("{} categories", Category::ALL.len()))?;
    let en = loc("en-US");
    let mut rows = Vec::new();
    for c in Category::ALL {
        for j in 0..20 {
            rows.push(format!("{}-{j:02}\ten-US\t{}\tinput {j}\toutput {j}", c.as_str(), c.as_str()));
        }
    }
    let full = rows.join("\n") + "\n";
    let report = gate_dataset(&full, FileFormat::Tsv, &en, 20);
    ensure(report.passed() && report.coverage.total == 540 && report.coverage.missing_categories.is_empty(), || {
        format!("conforming file flagged: {:?}", report.issues)
    })?;
    let dataset = Dataset::parse(&full, FileFormat::Tsv, &en, Path::new("full.tsv")).map_err(|e| e.to_string())?;
    let cov = validate_coverage(&dataset, 20);
    ensure(cov.total == 540 && cov.missing_categories.is_empty(), || format!("coverage {cov:?}"))?;

    // Drop the first cardinal row (line 1): the rest of the cardinal lines are named.
    let dropped: Vec<&str> = rows.iter().skip(1).map(String::as_str).collect();
    let r = gate_dataset(&dropped.join("\n"), FileFormat::Tsv, &en, 20);
    let expected_lines: Vec<usize> = (1..=19).collect();
    ensure(
        r.issues.len() == 1 && r.issues[0].lines == expected_lines && r.issues[0].message.contains("cardinal"),
        || format!("dropped row: {:?}", r.issues),
    )?;
    // Bad category on line 45: reported at that line, and its category comes up short.
    let mut bad = rows.clone();
    bad[44] = bad[44].replace("\tdecimal\t", "\temoji\t");
    let r = gate_dataset(&bad.join("\n"), FileFormat::Tsv, &en, 20);
    ensure(r.issues.iter().any(|i| i.lines == [45] && i.message.contains("emoji")), || format!("bad category: {:?}", r.issues))?;
    ensure(r.issues.iter().any(|i| i.message.contains("decimal has 19")), || format!("bad category: {:?}", r.issues))?;
    Ok("27x20 passes with total 540; dropped row and bad category flagged by line".into())
}

fn config(tag: &str) -> RunConfig {
    RunConfig { locale: loc(tag), system_id: "gpt-4o".into(), iteration: 2, icl_set_hash: String::new(), decoding: Decoding::default() }
}

fn aggregation() -> Check {
    // Mean of 27 category rates, each micro-averaged from synthetic samples.
    let mut rng = StdRng::seed_from_u64(27);
    let words = ["a", "b", "c", "d", "e"];
    let en = loc("en-US");
    let mut scored = Vec::new();
    let mut oracle_rates = Vec::new();
    for c in Category::ALL {
        let (mut edits, mut len) = (0usize, 0usize);
        for k in 0..rng.random_range(1..=4) {
            let mut gen = |lo: usize| -> Vec<&str> { (0..rng.random_range(lo..=8)).map(|_| words[rng.random_range(0..5)]).collect() };
            let (r, h) = (gen(1), gen(0));
            edits += dp_distance(&r, &h);
            len += r.len();
            let sample = Sample { id: format!("{}-{k}", c.as_str()), locale: en.clone(), category: c, original: r.join(" "), reference: r.join(" ") };
            scored.push(score_sample::<f64>(&sample, &h.join(" ")).map_err(|e| e.to_string())?);
        }
        oracle_rates.push(edits as f64 / len as f64);
    }
    let report = aggregate_at(&scored, config("en-US"), DateTime::UNIX_EPOCH).map_err(|e| e.to_string())?;
    let mean = oracle_rates.iter().sum::<f64>() / 27.0;
    ensure(report.per_category.len() == 27, || format!("{} categories", report.per_category.len()))?;
    ensure((report.overall_rate - mean).abs() <= 1e-9, || format!("overall {} vs mean {mean}", report.overall_rate))?;

    // German iteration 2 -> 3 from the published tables, in exact arithmetic.
    let text = source_text()?;
    let german: Vec<Vec<Exact>> = text
        .lines()
        .filter(|l| l.starts_with("German ") && l.matches('&').count() == 8)
        .map(|l| l.trim_end_matches("\\\\").split('&').skip(1).map(|c| parse_decimal::<Exact>(c.trim()).unwrap()).collect())
        .collect();
    // Baseline column first, then iterations 2 and 3.
    let [_, it2, it3] = german.as_slice() else { return Err(format!("expected 3 German rows, found {}", german.len())) };
    ensure(it2[0] == Exact::new(424, 100) && it3[0] == Exact::new(417, 100), || "German overall values moved".into())?;
    let columns = [
        Category::Address,
        Category::LegalReference,
        Category::Currency,
        Category::MathExpression,
        Category::MusicalNotation,
        Category::Telephone,
        Category::SportsScore,
    ];
    // The other 20 categories share what is left of 27 x overall.
    let report_for = |row: &[Exact], iteration: u32| {
        let listed: Exact = row[1..].iter().copied().sum();
        let rest = (row[0] * Exact::from_integer(27) - listed) / Exact::from_integer(20);
        let rates = Category::ALL.iter().map(|c| {
            let v = columns.iter().position(|x| x == c).map_or(rest, |i| row[i + 1]);
            (*c, v)
        });
        let mut cfg = config("de-DE");
        cfg.iteration = iteration;
        RunReport::<Exact>::from_rates(cfg, rates, DateTime::UNIX_EPOCH)
    };
    let (before, after) = (report_for(it2, 2), report_for(it3, 3));
    ensure(before.overall_rate == it2[0] && after.overall_rate == it3[0], || "reconstructed overall rates differ".into())?;
    let cmp = compare_runs(&before, &after).map_err(|e| e.to_string())?;
    ensure(cmp.overall_delta == Exact::new(-7, 100), || format!("delta {}", cmp.overall_delta))?;
    let legal = cmp.categories.iter().find(|d| d.category == Category::LegalReference).unwrap();
    ensure(legal.delta == Exact::new(-305, 100), || format!("legal delta {}", legal.delta))?;
    Ok(format!("27-category mean within 1e-9; German 4.24 -> 4.17 = {} exactly", cmp.overall_delta))
}

fn replay_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut reports = Vec::new();
    for name in ["first", "second"] {
        let runs = tmp.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_polynorm"))
            .arg("eval")
            .arg("--dataset")
            .arg(fixture("en-US.dev.tsv"))
            .arg("--icl")
            .arg(fixture("en-US.icl.tsv"))
            .args(["--provider", "gpt-4o", "--replay"])
            .arg(fixture("en-US.cassette.jsonl"))
            .arg("--out")
            .arg(&runs)
            .arg("--deterministic")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{name} run exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
        let dir = std::fs::read_dir(&runs)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.is_dir())
            .ok_or("no run directory")?;
        reports.push(std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())?);
    }
    let elapsed = start.elapsed();
    let samples = std::fs::read_to_string(fixture("en-US.dev.tsv")).map_err(|e| e.to_string())?.lines().count();
    ensure(samples == 30, || format!("{samples} samples in the fixture"))?;
    ensure(reports[0] == reports[1], || "report.json differs between runs".into())?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{samples}-sample replay, {} identical bytes, {elapsed:.2?} for both runs", reports[0].len()))
}

fn idempotence() -> Check {
    let read = |name: &str| std::fs::read_to_string(fixture(name)).map_err(|e| format!("{name}: {e}"));
    let (inputs, outputs) = (read("baseline.in.txt")?, read("baseline.expected.txt")?);
    let mut n = 0;
    for (input, expected) in inputs.lines().zip(outputs.lines()) {
        let once = normalize_sentence(input);
        ensure(once == expected, || format!("{input:?} -> {once:?}, fixture says {expected:?}"))?;
        let twice = normalize_sentence(&once);
        ensure(twice == once, || format!("{once:?} -> {twice:?}"))?;
        n += 1;
    }
    ensure(n > 0 && n == inputs.lines().count(), || "fixture line counts differ".into())?;
    Ok(format!("{n} fixture outputs are fixpoints"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle", metric_oracle),
        ("date fixture 6/5", date_fixture),
        ("baseline published examples", baseline_examples),
        ("de-DE canonicalization", german_canonicalization),
        ("CJK character error rate", cjk_pairs),
        ("BLEU fixtures", bleu_fixtures),
        ("dataset gate", dataset_gate),
        ("aggregation and compare", aggregation),
        ("replay determinism", replay_determinism),
        ("baseline idempotence", idempotence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
