use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use conceptprobe::corpus::{load_wordnet, synsets_of, Pos, WordNetIndex};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wordnet")
}

fn fixture() -> WordNetIndex {
    load_wordnet(&fixture_dir()).expect("fixture loads")
}

#[test]
fn fixture_size_and_symmetry() {
    let wn = fixture();
    assert_eq!(wn.synset_count(), 51);
    wn.check_symmetry().unwrap();
    for ((lemma, pos), ids) in wn.lemma_to_synsets() {
        for id in ids {
            assert_eq!(id.pos, *pos);
            assert!(wn.lemmas(*id).unwrap().contains(lemma), "{lemma} missing from {id}");
        }
    }
    for (id, lemmas) in wn.synset_to_lemmas() {
        for l in lemmas {
            assert!(synsets_of(&wn, l, Some(id.pos)).contains(id));
        }
    }
}

#[test]
fn dog_has_the_domestic_dog_synset() {
    let wn = fixture();
    let ids = synsets_of(&wn, "dog", Some(Pos::Noun));
    assert_eq!(ids.len(), 7);
    let domestic: Vec<_> = ids.iter().filter(|id| wn.lemmas(**id).unwrap().contains("domestic dog")).collect();
    assert_eq!(domestic.len(), 1);
    let lemmas = wn.lemmas(*domestic[0]).unwrap();
    assert_eq!(lemmas, &BTreeSet::from(["dog".to_string(), "domestic dog".into(), "canis familiaris".into()]));
    assert!(wn.gloss(*domestic[0]).unwrap().starts_with("a member of the genus Canis"));
}

#[test]
fn sofa_and_couch_share_a_synset() {
    let wn = fixture();
    let sofa = synsets_of(&wn, "sofa", Some(Pos::Noun));
    let couch = synsets_of(&wn, "couch", Some(Pos::Noun));
    assert_eq!(sofa.intersection(&couch).count(), 1);
    assert!(synsets_of(&wn, "sofa", Some(Pos::Verb)).is_empty());
}

#[test]
fn lookups_fold_case_and_union_pos() {
    let wn = fixture();
    assert_eq!(synsets_of(&wn, "Dog", None), synsets_of(&wn, "dog", None));
    assert_eq!(synsets_of(&wn, "dog", None).len(), 8);
    assert_eq!(synsets_of(&wn, "Ice_Cream", None), synsets_of(&wn, "ice cream", None));
    assert!(!synsets_of(&wn, "ice cream", Some(Pos::Noun)).is_empty());
    assert!(synsets_of(&wn, "zzzz-nonword", None).is_empty());
    assert!(synsets_of(&wn, "", None).is_empty());
}

#[test]
fn adjective_markers_and_satellites() {
    let wn = fixture();
    assert!(!synsets_of(&wn, "afraid", Some(Pos::Adj)).is_empty());
    assert!(!synsets_of(&wn, "handy", Some(Pos::Adj)).is_empty());
    for lemmas in wn.synset_to_lemmas().values() {
        assert!(lemmas.iter().all(|l| !l.contains('(')), "{lemmas:?}");
    }
}

/// Runs against a full WNDB install when `WNSEARCHDIR` points at one.
#[test]
fn full_database_when_available() {
    let Ok(dir) = std::env::var("WNSEARCHDIR") else { return };
    let wn = load_wordnet(Path::new(&dir)).unwrap();
    assert!(wn.synset_count() > 100_000);
    let dog = synsets_of(&wn, "dog", Some(Pos::Noun));
    assert!(dog.iter().any(|id| wn.lemmas(*id).unwrap().contains("domestic dog")));
    let sofa = synsets_of(&wn, "sofa", Some(Pos::Noun));
    assert!(!sofa.is_disjoint(&synsets_of(&wn, "couch", Some(Pos::Noun))));
}
