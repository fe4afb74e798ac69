//! Plain-text views for `report --compare`, `report --clusters` and `diff`.

use std::fmt::Write;

use polynorm_core::hillclimb::{ErrorCluster, RunComparison};
use polynorm_core::reporting::{DiffRecord, HighlightKind};

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn signed_pct(x: f64) -> String {
    let v = x * 100.0;
    // Avoid printing "-0.00" for tiny negative noise.
    if v.abs() < 0.005 {
        "0.00".into()
    } else {
        format!("{v:+.2}")
    }
}

pub fn comparison(cmp: &RunComparison<f64>, label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Category | Before {label} (%) | After {label} (%) | Delta |");
    let _ = writeln!(out, "|---|---:|---:|---:|");
    let cell = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());
    for d in &cmp.categories {
        let _ = writeln!(out, "| {} | {} | {} | {} |", d.category.display_name(), cell(d.before), cell(d.after), signed_pct(d.delta));
    }
    let _ = writeln!(
        out,
        "| Overall | {} | {} | {} |",
        pct(cmp.overall_before),
        pct(cmp.overall_after),
        signed_pct(cmp.overall_delta)
    );
    out
}

pub fn clusters(clusters: &[ErrorCluster]) -> String {
    let mut out = String::new();
    for (i, c) in clusters.iter().enumerate() {
        let _ = writeln!(out, "{}. {} - {} edits - e.g. {}", i + 1, c.category.display_name(), c.error_count, c.example_ids.join(", "));
    }
    if clusters.is_empty() {
        out.push_str("no errors\n");
    }
    out
}

/// Tokens with the highlighted ranges wrapped in `[...]`.
fn marked(tokens: &[String], ranges: impl Iterator<Item = [usize; 2]>) -> String {
    let mut open = vec![false; tokens.len()];
    let mut close = vec![false; tokens.len()];
    for [a, b] in ranges {
        if a < b && b <= tokens.len() {
            open[a] = true;
            close[b - 1] = true;
        }
    }
    let mut words = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        let mut w = String::new();
        if open[i] {
            w.push('[');
        }
        w.push_str(t);
        if close[i] {
            w.push(']');
        }
        words.push(w);
    }
    words.join(" ")
}

pub fn diff(record: &DiffRecord, label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} [{}] {label} {}%", record.sample_id, record.category, pct(record.rate));
    let _ = writeln!(out, "  original:   {}", record.original);
    let _ = writeln!(out, "  reference:  {}", marked(&record.ref_tokens, record.highlights.iter().filter_map(|h| h.reference)));
    let _ = writeln!(out, "  hypothesis: {}", marked(&record.hyp_tokens, record.highlights.iter().filter_map(|h| h.hypothesis)));
    if !record.highlights.is_empty() {
        let kinds: Vec<&str> = record
            .highlights
            .iter()
            .map(|h| match h.kind {
                HighlightKind::Substitute => "substitute",
                HighlightKind::Delete => "delete",
                HighlightKind::Insert => "insert",
            })
            .collect();
        let _ = writeln!(out, "  edits:      {}", kinds.join(", "));
    }
    if let Some(e) = &record.error {
        let _ = writeln!(out, "  error:      {e}");
    }
    out
}
