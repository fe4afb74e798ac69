//! The shipped en-US cassette answers every prompt the fixture dataset and
//! ICL store produce. Regenerate it after changing either (or the prompt
//! rendering) with `cargo test -p polynorm-cli --test fixtures -- --ignored`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polynorm_core::dataset::{curation_prompt, load_dataset};
use polynorm_core::llm::{payload_with_content, Cassette, ProviderConfig};
use polynorm_core::model::parse_locale;
use polynorm_core::prompting::{IclSelection, IclStore, InstructionTemplate, PromptBuilder, RenderedPrompt};
use polynorm_core::Category;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

const MODEL: &str = "gpt-4o";

/// Every (digest, reply) pair the cassette must hold.
fn expected_entries() -> Vec<(String, String)> {
    let en = parse_locale("en-US").unwrap();
    let cfg = ProviderConfig::for_model(MODEL);
    let dataset = load_dataset(fixture("en-US.dev.tsv"), &en).unwrap();
    let icl = IclStore::load(&fixture("en-US.icl.tsv")).unwrap();
    let hyps: BTreeMap<String, String> = std::fs::read_to_string(fixture("en-US.hypotheses.tsv"))
        .unwrap()
        .lines()
        .map(|l| {
            let (id, h) = l.split_once('\t').unwrap();
            (id.to_string(), h.to_string())
        })
        .collect();
    let builder = PromptBuilder::new(&InstructionTemplate::default(), &icl, &en, IclSelection::All).unwrap();
    let mut prompts: Vec<(RenderedPrompt, String)> = dataset
        .samples
        .iter()
        .map(|s| (builder.build(&s.original).unwrap().render(), hyps[&s.id].clone()))
        .collect();
    let curation = std::fs::read_to_string(fixture("curation-en-US-cardinal.txt")).unwrap();
    prompts.push((curation_prompt(&en, Category::Cardinal, 3), curation));
    prompts.into_iter().map(|(p, reply)| (cfg.request_digest(&p), reply)).collect()
}

#[test]
fn cassette_covers_the_fixture_prompts() {
    let cassette = Cassette::open_replay(fixture("en-US.cassette.jsonl")).unwrap();
    let entries = expected_entries();
    assert_eq!(entries.len(), 31);
    assert_eq!(cassette.len(), entries.len(), "stale cassette; regenerate it");
    for (digest, reply) in entries {
        let payload = cassette.get(&digest).unwrap_or_else(|| panic!("stale cassette: no entry {digest}"));
        assert_eq!(payload, payload_with_content(MODEL, &reply));
    }
}

#[test]
#[ignore = "rewrites fixtures/en-US.cassette.jsonl"]
fn regenerate_cassette() {
    let path = fixture("en-US.cassette.jsonl");
    let _ = std::fs::remove_file(&path);
    let cassette = Cassette::open_record(&path).unwrap();
    for (digest, reply) in expected_entries() {
        cassette.store(&digest, &payload_with_content(MODEL, &reply)).unwrap();
    }
}
