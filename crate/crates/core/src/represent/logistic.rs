use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ReprDataset, ReprError};
use crate::corpus::FeatureNorm;
use crate::rng::SeededRng;
use crate::stats::{auc, f1, mean};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { l2: 1.0, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting from the zero model.
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Objective and gradient of L2-regularized logistic regression.
///
/// The objective is `(1/n)·Σ[log(1+e^z) − y·z] + (l2/(2n))·‖w‖²` with
/// `z = x·w + b`; the bias is not penalized. Returns
/// `(objective, ∂/∂w, ∂/∂b)`.
pub fn logistic_objective(x: &DMatrix<f64>, y: &[bool], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.nrows() as f64;
    let wv = DVector::from_column_slice(w);
    let z = x * &wv;
    let mut loss = 0.0;
    let mut residual = DVector::zeros(x.nrows());
    for (i, (&zi, &yi)) in z.iter().zip(y).enumerate() {
        let z = zi + b;
        let t = if yi { 1.0 } else { 0.0 };
        loss += softplus(z) - t * z;
        residual[i] = sigmoid(z) - t;
    }
    let penalty = 0.5 * l2 * wv.norm_squared();
    let grad_w = (x.transpose() * &residual + l2 * &wv) / n;
    let grad_b = residual.sum() / n;
    ((loss + penalty) / n, grad_w.iter().copied().collect(), grad_b)
}

/// Fit by full-batch gradient descent with Armijo backtracking.
///
/// Stops when the largest gradient component drops below `tol` or after
/// `max_iter` iterations. The step size grows after every accepted step
/// and halves on every rejected trial.
pub fn train_logistic(x: &DMatrix<f64>, y: &[bool], opts: &LogisticOptions) -> Result<LogisticModel, ReprError> {
    if x.nrows() != y.len() {
        return Err(ReprError::NonFiniteInput(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) || !opts.l2.is_finite() || opts.l2 < 0.0 {
        return Err(ReprError::NonFiniteInput("design matrix or l2".into()));
    }
    let positives = y.iter().filter(|v| **v).count();
    if positives == 0 || positives == y.len() {
        return Err(ReprError::OneClassOnly);
    }
    let d = x.ncols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut f, mut gw, mut gb) = logistic_objective(x, y, &w, b, opts.l2);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let gnorm2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        let mut accepted = false;
        while step > 1e-16 {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b_new = b - step * gb;
            let (f_new, gw_new, gb_new) = logistic_objective(x, y, &w_new, b_new, opts.l2);
            if f_new <= f - 0.5 * step * gnorm2 {
                (w, b, f, gw, gb) = (w_new, b_new, f_new, gw_new, gb_new);
                trace.push(f);
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LogisticModel { weights: w, bias: b, l2: opts.l2, iterations_run: iterations, converged, loss_trace: trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub k: usize,
    pub seed: u64,
    pub logistic: LogisticOptions,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { k: 10, seed: 0, logistic: LogisticOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub f1: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub feature_id: String,
    pub per_fold: Vec<FoldScore>,
    pub mean_f1: f64,
    pub mean_auc: f64,
}

/// Stratified fold index per concept (same order as `labels`).
///
/// Positives and negatives are shuffled separately and dealt round-robin,
/// negatives continuing where positives stopped, so every fold holds
/// within one of its proportional share of each class.
pub fn fold_assignment(labels: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = SeededRng::derived(seed, "folds");
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut folds = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        folds[i] = slot % k;
    }
    folds
}

/// Seeded permutation of a feature's labels over the same concepts.
pub fn shuffle_labels(feature: &FeatureNorm, seed: u64) -> FeatureNorm {
    let ids: Vec<&String> = feature.values.keys().collect();
    let mut labels: Vec<bool> = feature.values.values().copied().collect();
    SeededRng::derived(seed, "shuffle_labels").shuffle(&mut labels);
    FeatureNorm {
        values: ids.into_iter().cloned().zip(labels).collect(),
        feature_id: format!("{}#shuffled", feature.feature_id),
        ..feature.clone()
    }
}

/// k-fold cross-validated logistic decoding of one binary feature.
pub fn decode_feature(ds: &ReprDataset, feature: &FeatureNorm, opts: &DecodeOptions) -> Result<DecodeResult, ReprError> {
    let ids: Vec<&String> = feature.values.keys().collect();
    let labels: Vec<bool> = feature.values.values().copied().collect();
    let positives = labels.iter().filter(|v| **v).count();
    let negatives = labels.len() - positives;
    if opts.k < 2 || positives < opts.k || negatives < opts.k {
        return Err(ReprError::TooFewExamples { feature: feature.feature_id.clone(), positives, negatives, k: opts.k });
    }
    let rows: Vec<&[f64]> = ids
        .iter()
        .map(|id| ds.table.get(id).ok_or_else(|| ReprError::MissingRow((*id).clone())))
        .collect::<Result<_, _>>()?;
    let dim = ds.table.dim();
    let folds = fold_assignment(&labels, opts.k, opts.seed);
    let mut per_fold = Vec::with_capacity(opts.k);
    for fold in 0..opts.k {
        let train: Vec<usize> = (0..ids.len()).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..ids.len()).filter(|&i| folds[i] == fold).collect();
        let x = DMatrix::from_fn(train.len(), dim, |r, c| rows[train[r]][c]);
        let y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = train_logistic(&x, &y, &opts.logistic)?;
        let probs: Vec<f64> = test.iter().map(|&i| model.predict_proba(rows[i])).collect();
        let truth: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let preds: Vec<bool> = probs.iter().map(|p| *p >= 0.5).collect();
        let f1 = f1(&preds, &truth).map_err(|e| ReprError::NonFiniteInput(e.to_string()))?;
        let auc = auc(&probs, &truth).map_err(|e| ReprError::NonFiniteInput(e.to_string()))?;
        per_fold.push(FoldScore { f1, auc });
    }
    let mean_f1 = mean(&per_fold.iter().map(|f| f.f1).collect::<Vec<_>>());
    let mean_auc = mean(&per_fold.iter().map(|f| f.auc).collect::<Vec<_>>());
    Ok(DecodeResult { feature_id: feature.feature_id.clone(), per_fold, mean_f1, mean_auc })
}

/// Decode many features in parallel; results are ordered by feature id.
pub fn decode_features(
    ds: &ReprDataset,
    features: &[FeatureNorm],
    opts: &DecodeOptions,
) -> Vec<(String, Result<DecodeResult, ReprError>)> {
    let mut out: Vec<(String, Result<DecodeResult, ReprError>)> =
        features.par_iter().map(|f| (f.feature_id.clone(), decode_feature(ds, f, opts))).collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// CSV with columns (feature, feature_type, mean_f1, mean_auc, folds).
pub fn write_decode_csv(
    results: &[DecodeResult],
    types: &BTreeMap<String, String>,
    out: impl Write,
) -> Result<(), ReprError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| ReprError::Io(std::io::Error::other(e));
    w.write_record(["feature", "feature_type", "mean_f1", "mean_auc", "folds"]).map_err(err)?;
    for r in results {
        w.write_record([
            r.feature_id.clone(),
            types.get(&r.feature_id).cloned().unwrap_or_default(),
            format!("{:.6}", r.mean_f1),
            format!("{:.6}", r.mean_auc),
            r.per_fold.len().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingTable, FeatureType};
    use proptest::prelude::*;

    fn random_problem(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>) {
        let mut rng = SeededRng::new(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.normal());
        let y = (0..n).map(|i| (i % 3 == 0) ^ (rng.next_f64() < 0.2)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = random_problem(50, 16, 7);
        let mut rng = SeededRng::new(70);
        let w: Vec<f64> = (0..16).map(|_| rng.normal() * 0.5).collect();
        let b = 0.3;
        let (_, gw, gb) = logistic_objective(&x, &y, &w, b, 1.0);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..=16 {
            let bump = |delta: f64| {
                let mut w2 = w.clone();
                let mut b2 = b;
                if j < 16 {
                    w2[j] += delta;
                } else {
                    b2 += delta;
                }
                logistic_objective(&x, &y, &w2, b2, 1.0).0
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = if j < 16 { gw[j] } else { gb };
            worst = worst.max((numeric - analytic).abs() / analytic.abs().max(1e-8));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn separable_data_is_fit_perfectly() {
        let pts = [(-2.0, -1.0, false), (-1.5, 0.5, false), (-1.0, -2.0, false), (1.0, 2.0, true), (1.5, -0.5, true), (2.0, 1.0, true)];
        let x = DMatrix::from_fn(6, 2, |r, c| if c == 0 { pts[r].0 } else { pts[r].1 });
        let y: Vec<bool> = pts.iter().map(|p| p.2).collect();
        let m = train_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        for (r, p) in pts.iter().enumerate() {
            assert_eq!(m.predict_proba(&[x[(r, 0)], x[(r, 1)]]) >= 0.5, p.2);
        }
    }

    #[test]
    fn one_class_and_bad_input_rejected() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(train_logistic(&x, &[true; 3], &LogisticOptions::default()), Err(ReprError::OneClassOnly)));
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(
            train_logistic(&bad, &[true, false, true], &LogisticOptions::default()),
            Err(ReprError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn loss_trace_never_increases() {
        let (x, y) = random_problem(80, 6, 3);
        let m = train_logistic(&x, &y, &LogisticOptions { l2: 0.1, ..LogisticOptions::default() }).unwrap();
        assert!(m.loss_trace.len() > 2);
        assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }

    fn decodable(n: usize, positives: usize, dim: usize, seed: u64) -> (ReprDataset, FeatureNorm) {
        let mut rng = SeededRng::new(seed);
        let mut table = EmbeddingTable::new(dim);
        let mut values = BTreeMap::new();
        for i in 0..n {
            let label = i < positives;
            let mut row: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            row[0] = if label { 1.0 } else { 0.0 };
            let id = format!("c{i:03}");
            table.insert(&id, row, i).unwrap();
            values.insert(id, label);
        }
        let feature =
            FeatureNorm { feature_id: "planted".into(), label: "planted".into(), feature_type: FeatureType::Visual, values };
        (super::super::dataset_from_table(table, "synthetic"), feature)
    }

    #[test]
    fn perfectly_decodable_feature() {
        let (ds, f) = decodable(200, 40, 8, 1);
        let r = decode_feature(&ds, &f, &DecodeOptions::default()).unwrap();
        assert_eq!(r.per_fold.len(), 10);
        assert_eq!((r.mean_f1, r.mean_auc), (1.0, 1.0));
    }

    #[test]
    fn shuffled_labels_decode_at_chance() {
        let (ds, f) = decodable(200, 60, 8, 2);
        let r = decode_feature(&ds, &shuffle_labels(&f, 9), &DecodeOptions::default()).unwrap();
        assert!((r.mean_auc - 0.5).abs() <= 0.1, "{}", r.mean_auc);
    }

    #[test]
    fn too_few_examples() {
        let (ds, f) = decodable(30, 5, 3, 2);
        assert!(matches!(
            decode_feature(&ds, &f, &DecodeOptions::default()),
            Err(ReprError::TooFewExamples { positives: 5, negatives: 25, k: 10, .. })
        ));
    }

    #[test]
    fn fixed_seed_golden_scores() {
        let (ds, f) = decodable(120, 30, 6, 5);
        let mut noisy = f.clone();
        for (i, v) in noisy.values.values_mut().enumerate() {
            if i % 7 == 0 {
                *v = !*v;
            }
        }
        let opts = DecodeOptions { seed: 3, ..DecodeOptions::default() };
        let r = decode_feature(&ds, &noisy, &opts).unwrap();
        let again = decode_feature(&ds, &noisy, &opts).unwrap();
        assert_eq!(r, again);
        assert_eq!((r.mean_f1, r.mean_auc), (GOLDEN_F1, GOLDEN_AUC));
        assert_eq!(r.mean_f1, mean(&r.per_fold.iter().map(|f| f.f1).collect::<Vec<_>>()));
    }

    // Cross-checked with scripts/decode_reference.py.
    const GOLDEN_F1: f64 = 0.6599999999999999;
    const GOLDEN_AUC: f64 = 0.8063657407407406;

    #[test]
    fn parallel_decoding_is_ordered() {
        let (ds, f) = decodable(100, 30, 4, 8);
        let g = FeatureNorm { feature_id: "another".into(), ..f.clone() };
        let out = decode_features(&ds, &[f, g], &DecodeOptions::default());
        let ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["another", "planted"]);
        let mut csv = Vec::new();
        let results: Vec<DecodeResult> = out.into_iter().map(|(_, r)| r.unwrap()).collect();
        write_decode_csv(&results, &BTreeMap::new(), &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    proptest! {
        #[test]
        fn folds_are_stratified_cover(n_pos in 10usize..60, n_neg in 10usize..80, k in 2usize..11, seed in any::<u64>()) {
            let labels: Vec<bool> = (0..n_pos + n_neg).map(|i| i < n_pos).collect();
            let folds = fold_assignment(&labels, k, seed);
            prop_assert!(folds.iter().all(|f| *f < k));
            for fold in 0..k {
                let pos = (0..labels.len()).filter(|&i| folds[i] == fold && labels[i]).count() as f64;
                prop_assert!((pos - n_pos as f64 / k as f64).abs() <= 1.0);
            }
        }
    }
}
