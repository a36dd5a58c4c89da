use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReprDataset, ReprError};
use crate::corpus::{ConceptSet, CorpusError};

/// Categories smaller than this are dropped.
pub const MIN_CATEGORY_SIZE: usize = 10;

/// Single-category membership for the concepts kept after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub assignment: BTreeMap<String, String>,
    pub categories: BTreeSet<String>,
}

impl CategoryAssignment {
    pub fn members(&self, category: &str) -> Vec<&str> {
        self.assignment.iter().filter(|(_, c)| *c == category).map(|(id, _)| id.as_str()).collect()
    }
}

pub fn filter_categories(
    set: &ConceptSet,
    raw_memberships: &BTreeMap<String, BTreeSet<String>>,
    subcategory_pairs: &BTreeSet<(String, String)>,
) -> CategoryAssignment {
    filter_categories_with(set, raw_memberships, subcategory_pairs, MIN_CATEGORY_SIZE)
}

/// Drop child categories, then concepts left with other than exactly one
/// category, then categories with fewer than `min_size` members, repeating
/// until nothing changes.
pub fn filter_categories_with(
    set: &ConceptSet,
    raw_memberships: &BTreeMap<String, BTreeSet<String>>,
    subcategory_pairs: &BTreeSet<(String, String)>,
    min_size: usize,
) -> CategoryAssignment {
    let children: BTreeSet<&str> = subcategory_pairs.iter().map(|(child, _)| child.as_str()).collect();
    let mut memberships: BTreeMap<&str, BTreeSet<&str>> = raw_memberships
        .iter()
        .filter(|(id, _)| set.get(id).is_some())
        .map(|(id, cats)| (id.as_str(), cats.iter().map(String::as_str).filter(|c| !children.contains(c)).collect()))
        .collect();
    loop {
        let before: usize = memberships.values().map(BTreeSet::len).sum::<usize>() + memberships.len();
        memberships.retain(|_, cats| cats.len() == 1);
        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for cats in memberships.values() {
            for c in cats {
                *sizes.entry(c).or_default() += 1;
            }
        }
        for cats in memberships.values_mut() {
            cats.retain(|c| sizes[c] >= min_size);
        }
        memberships.retain(|_, cats| !cats.is_empty());
        let after: usize = memberships.values().map(BTreeSet::len).sum::<usize>() + memberships.len();
        if after == before {
            break;
        }
    }
    let assignment: BTreeMap<String, String> = memberships
        .into_iter()
        .map(|(id, cats)| (id.to_string(), cats.into_iter().next().expect("one category").to_string()))
        .collect();
    let categories = assignment.values().cloned().collect();
    CategoryAssignment { assignment, categories }
}

fn read_pairs(path: &Path, what: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let text = crate::corpus::read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CorpusError::MalformedRow { line: i + 2, reason: e.to_string() })?;
        match (rec.get(0), rec.get(1)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => out.push((a.to_string(), b.to_string())),
            _ => {
                return Err(CorpusError::MalformedRow { line: i + 2, reason: format!("expected two {what} cells") })
            }
        }
    }
    Ok(out)
}

/// Read `concept_id,category` rows (header required); a concept may appear
/// on several rows.
pub fn load_memberships(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>, CorpusError> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, cat) in read_pairs(path, "membership")? {
        out.entry(id).or_default().insert(cat);
    }
    Ok(out)
}

/// Read `child,parent` category rows (header required).
pub fn load_subcategory_pairs(path: &Path) -> Result<BTreeSet<(String, String)>, CorpusError> {
    Ok(read_pairs(path, "category")?.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizationResult {
    pub accuracy: f64,
    pub predictions: BTreeMap<String, String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 − cos(a, b)`; a zero vector is treated as orthogonal to everything.
pub(crate) fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let denom = dot(a, a).sqrt() * dot(b, b).sqrt();
    if denom == 0.0 {
        1.0
    } else {
        1.0 - dot(a, b) / denom
    }
}

/// Leave-one-out nearest-centroid classification under cosine distance.
///
/// Each concept is compared against every category mean, with its own
/// category's mean recomputed without it. Ties go to the
/// lexicographically smallest category.
pub fn nearest_centroid_loocv(ds: &ReprDataset, cats: &CategoryAssignment) -> Result<CategorizationResult, ReprError> {
    let dim = ds.table.dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, cat) in &cats.assignment {
        let row = ds.table.get(id).ok_or_else(|| ReprError::MissingRow(id.clone()))?;
        if row.iter().all(|v| *v == 0.0) {
            return Err(ReprError::ZeroVector(id.clone()));
        }
        let e = sums.entry(cat.as_str()).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, v) in e.0.iter_mut().zip(row) {
            *s += v;
        }
        e.1 += 1;
    }
    if let Some((c, _)) = sums.iter().find(|(_, (_, n))| *n < 2) {
        return Err(ReprError::DegenerateCategory(c.to_string()));
    }
    let means: BTreeMap<&str, Vec<f64>> =
        sums.iter().map(|(c, (s, n))| (*c, s.iter().map(|v| v / *n as f64).collect())).collect();

    let mut predictions = BTreeMap::new();
    let mut correct = 0usize;
    let mut held_out = vec![0.0; dim];
    for (id, own) in &cats.assignment {
        let row = ds.table.get(id).expect("checked above");
        let mut best: Option<(&str, f64)> = None;
        for (cat, mean) in &means {
            let d = if *cat == own.as_str() {
                let (sum, n) = &sums[cat];
                for ((h, s), v) in held_out.iter_mut().zip(sum).zip(row) {
                    *h = (s - v) / (*n - 1) as f64;
                }
                cosine_distance(row, &held_out)
            } else {
                cosine_distance(row, mean)
            };
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((cat, d));
            }
        }
        let predicted = best.expect("at least one category").0;
        correct += (predicted == own.as_str()) as usize;
        predictions.insert(id.clone(), predicted.to_string());
    }
    let accuracy = if predictions.is_empty() { 0.0 } else { correct as f64 / predictions.len() as f64 };
    Ok(CategorizationResult { accuracy, predictions })
}

/// CSV with columns (concept, category, predicted, correct).
pub fn write_categorization_csv(
    result: &CategorizationResult,
    cats: &CategoryAssignment,
    out: impl Write,
) -> Result<(), ReprError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| ReprError::Io(std::io::Error::other(e));
    w.write_record(["concept", "category", "predicted", "correct"]).map_err(err)?;
    for (id, predicted) in &result.predictions {
        let truth = cats.assignment.get(id).map(String::as_str).unwrap_or("");
        w.write_record([id.as_str(), truth, predicted.as_str(), if truth == predicted { "1" } else { "0" }])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Concept, EmbeddingTable};
    use crate::promptgen::Condition;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn set_of(ids: &[String]) -> ConceptSet {
        ConceptSet::new("s", ids.iter().map(|id| Concept::new(id, id, "d")).collect()).unwrap()
    }

    fn memberships(spec: &[(&str, usize, &[&str])]) -> (Vec<String>, BTreeMap<String, BTreeSet<String>>) {
        let mut ids = Vec::new();
        let mut m = BTreeMap::new();
        for (prefix, n, cats) in spec {
            for i in 0..*n {
                let id = format!("{prefix}{i:02}");
                ids.push(id.clone());
                m.insert(id, cats.iter().map(|c| c.to_string()).collect());
            }
        }
        (ids, m)
    }

    #[test]
    fn filter_rules() {
        let (ids, m) = memberships(&[
            ("tool", 12, &["tool"]),
            ("small", 9, &["small"]),
            ("fruit", 11, &["fruit", "food"]),
            ("food", 10, &["food"]),
            ("bird", 15, &["bird", "animal"]),
            ("mix", 1, &["food", "plant"]),
        ]);
        let pairs = BTreeSet::from([("bird".to_string(), "animal".to_string())]);
        let a = filter_categories(&set_of(&ids), &m, &pairs);
        let cats: Vec<&str> = a.categories.iter().map(String::as_str).collect();
        assert_eq!(cats, ["animal", "food", "tool"]);
        assert_eq!(a.members("animal").len(), 15);
        assert_eq!(a.members("food").len(), 10);
        assert!(!a.assignment.contains_key("mix00"));
        assert!(!a.assignment.contains_key("small00"));
        assert!(!a.assignment.contains_key("fruit00"));
    }

    #[test]
    fn unknown_concepts_are_ignored() {
        let (ids, m) = memberships(&[("a", 10, &["x"])]);
        let a = filter_categories(&set_of(&ids[..9]), &m, &BTreeSet::new());
        assert!(a.assignment.is_empty());
    }

    fn table(rows: &[(String, Vec<f64>)]) -> ReprDataset {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (i, (id, v)) in rows.iter().enumerate() {
            t.insert(id, v.clone(), i).unwrap();
        }
        super::super::dataset_from_table(t, "test")
    }

    fn synthetic(n_cats: usize, per: usize, dim: usize, sigma: f64, sep: f64, seed: u64) -> (ReprDataset, CategoryAssignment) {
        let mut rng = SeededRng::new(seed);
        let mut rows = Vec::new();
        let mut assignment = BTreeMap::new();
        for c in 0..n_cats {
            let centre: Vec<f64> = (0..dim).map(|_| rng.normal() * sep).collect();
            for i in 0..per {
                let id = format!("k{c:02}_{i:02}");
                rows.push((id.clone(), centre.iter().map(|x| x + sigma * rng.normal()).collect()));
                assignment.insert(id, format!("cat{c:02}"));
            }
        }
        let categories = assignment.values().cloned().collect();
        (table(&rows), CategoryAssignment { assignment, categories })
    }

    fn brute_force(ds: &ReprDataset, cats: &CategoryAssignment) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for id in cats.assignment.keys() {
            let row = ds.table.get(id).unwrap();
            let mut best: Option<(String, f64)> = None;
            for cat in &cats.categories {
                let members: Vec<&[f64]> = cats
                    .assignment
                    .iter()
                    .filter(|(other, c)| *c == cat && *other != id)
                    .map(|(other, _)| ds.table.get(other).unwrap())
                    .collect();
                let mean: Vec<f64> = (0..row.len())
                    .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                    .collect();
                let d = cosine_distance(row, &mean);
                if best.as_ref().is_none_or(|(_, b)| d < *b) {
                    best = Some((cat.clone(), d));
                }
            }
            out.insert(id.clone(), best.unwrap().0);
        }
        out
    }

    #[test]
    fn noise_free_embeddings_are_perfect() {
        let (ds, cats) = synthetic(4, 5, 6, 0.0, 1.0, 3);
        assert_eq!(nearest_centroid_loocv(&ds, &cats).unwrap().accuracy, 1.0);
    }

    #[test]
    fn well_separated_synthetic_categories() {
        let (ds, cats) = synthetic(18, 60, 32, 0.1, 1.0, 17);
        assert!(nearest_centroid_loocv(&ds, &cats).unwrap().accuracy >= 0.99);
    }

    #[test]
    fn matches_brute_force_on_noisy_fixture() {
        for seed in 0..5 {
            let (ds, cats) = synthetic(4, 15, 5, 1.0, 1.0, seed);
            let fast = nearest_centroid_loocv(&ds, &cats).unwrap();
            assert_eq!(fast.predictions, brute_force(&ds, &cats), "seed {seed}");
        }
    }

    #[test]
    fn ties_go_to_smallest_category() {
        let rows = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![1.0, 0.0]),
            ("c".to_string(), vec![1.0, 0.0]),
            ("d".to_string(), vec![1.0, 0.0]),
        ];
        let assignment: BTreeMap<String, String> =
            [("a", "zeta"), ("b", "zeta"), ("c", "alpha"), ("d", "alpha")].map(|(a, b)| (a.into(), b.into())).into();
        let cats = CategoryAssignment { categories: assignment.values().cloned().collect(), assignment };
        let r = nearest_centroid_loocv(&table(&rows), &cats).unwrap();
        assert!(r.predictions.values().all(|p| p == "alpha"));
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn errors() {
        let rows = vec![("a".to_string(), vec![1.0]), ("b".to_string(), vec![2.0])];
        let ds = table(&rows);
        let one: BTreeMap<String, String> = [("a", "x"), ("b", "y")].map(|(a, b)| (a.into(), b.into())).into();
        let cats = CategoryAssignment { categories: one.values().cloned().collect(), assignment: one };
        assert!(matches!(nearest_centroid_loocv(&ds, &cats), Err(ReprError::DegenerateCategory(_))));
        let missing: BTreeMap<String, String> = [("a", "x"), ("zz", "x")].map(|(a, b)| (a.into(), b.into())).into();
        let cats = CategoryAssignment { categories: BTreeSet::from(["x".into()]), assignment: missing };
        assert!(matches!(nearest_centroid_loocv(&ds, &cats), Err(ReprError::MissingRow(id)) if id == "zz"));
        assert_eq!(ds.condition, Condition::WordOnly);
    }

    #[test]
    fn loaders_read_long_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "concept,category\ndog,animal\ndog,pet\ncat,animal\n").unwrap();
        let got = load_memberships(&m).unwrap();
        assert_eq!(got["dog"].len(), 2);
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "child,parent\nbird,animal\n").unwrap();
        assert!(load_subcategory_pairs(&p).unwrap().contains(&("bird".into(), "animal".into())));
        std::fs::write(&p, "child,parent\nbird\n").unwrap();
        assert!(load_subcategory_pairs(&p).is_err());
    }

    fn rotation(dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for b in &basis {
                let p = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
            let n = dot(&v, &v).sqrt();
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
        basis
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn invariant_under_scaling_and_rotation(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let (ds, cats) = synthetic(3, 8, 4, 0.8, 1.0, seed);
            let base = nearest_centroid_loocv(&ds, &cats).unwrap().predictions;
            let q = rotation(4, seed ^ 0xabc);
            let transformed: Vec<(String, Vec<f64>)> = ds
                .table
                .rows()
                .iter()
                .map(|(id, v)| (id.clone(), q.iter().map(|r| scale * dot(r, v)).collect()))
                .collect();
            let moved = nearest_centroid_loocv(&table(&transformed), &cats).unwrap().predictions;
            prop_assert_eq!(base, moved);
        }
    }
}
