//! Descriptor fixture loading and round-trip properties.

use finegrain::thesaurus::{
    fine_grained_labels, load_thesaurus, save_thesaurus, Relation, ThesaurusError,
};
use proptest::prelude::*;
use std::fs;
use std::path::PathBuf;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../data/{name}"))
}

#[test]
fn alzheimer_fixture_has_seven_concepts_six_narrower() {
    let d = load_thesaurus(fixture("ad.json")).unwrap();
    assert_eq!(d.concepts.len(), 7);
    assert_eq!(d.preferred_concept_id, d.top_concept_id);
    let narrower = d
        .concepts
        .iter()
        .filter(|c| c.relation_to_preferred == Relation::Narrower)
        .count();
    assert_eq!(narrower, 6);
    let labels = fine_grained_labels(&d);
    assert_eq!(labels.len(), 6);
    assert!(!labels.contains(&d.top_concept_id));
}

#[test]
fn duchenne_fixture_top_is_the_broader_concept() {
    let d = load_thesaurus(fixture("dmd.json")).unwrap();
    assert_eq!(d.concepts.len(), 3);
    assert_eq!(d.top_concept_id, "M0029076");
    assert_eq!(d.preferred_concept_id, "M0029077");
    assert_eq!(fine_grained_labels(&d), vec!["M0029077", "M0029078"]);
}

#[test]
fn save_then_load_then_save_is_byte_identical() {
    let d = load_thesaurus(fixture("ad.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    save_thesaurus(&d, &first).unwrap();
    let reloaded = load_thesaurus(&first).unwrap();
    assert_eq!(reloaded, d);
    save_thesaurus(&reloaded, &second).unwrap();
    assert_eq!(
        fs::read(&first).unwrap(),
        fs::read(&second).unwrap(),
        "canonical serialization is stable"
    );
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{not json").unwrap();
    assert!(matches!(
        load_thesaurus(&path),
        Err(ThesaurusError::Json(_))
    ));
}

fn arbitrary_descriptor_json() -> impl Strategy<Value = String> {
    // 1..5 narrower concepts plus the preferred one; 1..3 plain terms each.
    let term = "[a-z]{1,8}( [a-z]{1,8})?";
    let terms = prop::collection::vec(term, 1..3);
    prop::collection::vec(terms, 1..5).prop_map(|conceptwise| {
        let mut concepts = vec![serde_json::json!({
            "concept_id": "C-PREF",
            "name": "Preferred",
            "relation": "preferred",
            "terms": ["preferred term"],
        })];
        for (i, terms) in conceptwise.into_iter().enumerate() {
            concepts.push(serde_json::json!({
                "concept_id": format!("C-{i}"),
                "name": terms[0],
                "relation": "narrower",
                "terms": terms,
            }));
        }
        serde_json::json!({
            "descriptor_id": "D-TEST",
            "name": "Test",
            "preferred_concept_id": "C-PREF",
            "top_concept_id": "C-PREF",
            "concepts": concepts,
        })
        .to_string()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_descriptors_roundtrip_and_exclude_top(doc in arbitrary_descriptor_json()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        fs::write(&path, &doc).unwrap();
        let d = load_thesaurus(&path).unwrap();

        let labels = fine_grained_labels(&d);
        prop_assert_eq!(labels.len(), d.concepts.len() - 1);
        prop_assert!(!labels.contains(&d.top_concept_id));

        let out = dir.path().join("out.json");
        save_thesaurus(&d, &out).unwrap();
        let back = load_thesaurus(&out).unwrap();
        prop_assert_eq!(back, d);
    }
}
