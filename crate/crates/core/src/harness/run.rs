use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, DatasetConfig, ExperimentConfig, RunConfig};
use super::HarnessError;
use crate::corpus::{load_concepts, load_feature_norms, load_protoqa, load_wordnet, restrict_features, ConceptSet, WordNetIndex};
use crate::lmclient::{
    Backend, BackendDescriptor, CachedBackend, HttpBackend, OracleBackend, OracleSpec, ReplayBackend, ServerInfo,
};
use crate::probe::{
    accuracy_report, run_probe_with_pool, score_mc, score_minimal_pair, template_for, write_records_jsonl,
    write_report_csv, BootstrapConfig, MCItem, MinimalPair, ProbeConfig, TrialRecord,
};
use crate::promptgen::sample_demonstrations;
use crate::protoqa::{aggregate, run_protoqa, write_aggregate_csv, write_results_jsonl, ProtoQAConfig};
use crate::represent::{
    decode_features, extract_reprs, filter_categories, load_memberships, load_subcategory_pairs,
    nearest_centroid_loocv, pca_project, shuffle_labels, write_categorization_csv, write_decode_csv,
    write_repr_dataset, DecodeOptions, DecodeResult, LogisticOptions, ReprDataset,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub name: String,
    pub kind: String,
    pub status: ExperimentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub summary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub path: PathBuf,
    pub backend_calls: usize,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
    pub backend: BackendDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_info: Option<ServerInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_info_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    pub experiments: Vec<ExperimentEntry>,
}

impl RunManifest {
    pub fn failed(&self) -> impl Iterator<Item = &ExperimentEntry> {
        self.experiments.iter().filter(|e| e.status == ExperimentStatus::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

/// Parse one JSON value per nonempty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = File::open(path).map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| HarnessError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Datasets<'a> {
    config: &'a RunConfig,
    concepts: BTreeMap<String, Arc<ConceptSet>>,
    wordnet: BTreeMap<String, Arc<WordNetIndex>>,
}

impl<'a> Datasets<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Self { config, concepts: BTreeMap::new(), wordnet: BTreeMap::new() }
    }

    fn path(&self, name: &str) -> Result<(PathBuf, &'a DatasetConfig), HarnessError> {
        let ds = self.config.datasets.get(name).ok_or_else(|| HarnessError::ConfigInvalid {
            field: "datasets".into(),
            reason: format!("unknown dataset `{name}`"),
        })?;
        Ok((self.config.resolve(ds.path()), ds))
    }

    fn concepts(&mut self, name: &str) -> Result<Arc<ConceptSet>, HarnessError> {
        if let Some(set) = self.concepts.get(name) {
            return Ok(set.clone());
        }
        let (path, ds) = self.path(name)?;
        let DatasetConfig::Concepts { format, .. } = ds else {
            return Err(HarnessError::ConfigInvalid { field: name.into(), reason: "not a concepts dataset".into() });
        };
        let set = Arc::new(load_concepts(&path, *format)?);
        self.concepts.insert(name.to_string(), set.clone());
        Ok(set)
    }

    fn wordnet(&mut self, name: &str) -> Result<Arc<WordNetIndex>, HarnessError> {
        if let Some(wn) = self.wordnet.get(name) {
            return Ok(wn.clone());
        }
        let (path, _) = self.path(name)?;
        let wn = Arc::new(load_wordnet(&path)?);
        self.wordnet.insert(name.to_string(), wn.clone());
        Ok(wn)
    }
}

fn build_backend(config: &RunConfig, data: &mut Datasets) -> Result<Arc<dyn Backend>, HarnessError> {
    Ok(match &config.backend {
        BackendConfig::Http { url, timeout_secs } => Arc::new(HttpBackend::connect(url, Duration::from_secs(*timeout_secs))?),
        BackendConfig::Replay { path, model_id } => Arc::new(ReplayBackend::open(&config.resolve(path), model_id)?),
        BackendConfig::Oracle { spec, concepts } => {
            let spec = match concepts {
                Some(name) => {
                    let set = data.concepts(name)?;
                    let mut known = OracleSpec::from_concepts(&set, spec.correct_prob, spec.seed);
                    known.model_id = spec.model_id.clone();
                    known.queries.extend(spec.queries.clone());
                    known.answer_map.extend(spec.answer_map.clone());
                    known.categories.extend(spec.categories.clone());
                    known.centroids = spec.centroids.clone();
                    known.noise_sigma = spec.noise_sigma;
                    known.token_logprob = spec.token_logprob;
                    if !spec.distractors.is_empty() {
                        known.distractors = spec.distractors.clone();
                    }
                    known.canned = spec.canned.clone();
                    known.style = spec.style.clone();
                    known.max_context = spec.max_context;
                    known
                }
                None => spec.clone(),
            };
            Arc::new(OracleBackend::new(spec)?)
        }
    })
}

/// Backend described by `config`, without the response cache.
pub fn open_backend(config: &RunConfig) -> Result<Arc<dyn Backend>, HarnessError> {
    build_backend(config, &mut Datasets::new(config))
}

struct Context<'a> {
    config: &'a RunConfig,
    run_dir: PathBuf,
    backend: Arc<dyn Backend>,
    data: Datasets<'a>,
    reprs: BTreeMap<String, (ReprDataset, Arc<ConceptSet>)>,
    records: Vec<TrialRecord>,
}

#[derive(Default)]
struct Produced {
    artifacts: Vec<String>,
    summary: BTreeMap<String, f64>,
}

impl Produced {
    fn file(&mut self, ctx: &Context, rel: &str) -> Result<BufWriter<File>, HarnessError> {
        let path = ctx.run_dir.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.artifacts.push(rel.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn execute(ctx: &mut Context, exp: &ExperimentConfig) -> Result<Produced, HarnessError> {
    let mut out = Produced::default();
    let backend = ctx.backend.clone();
    let name = exp.name().to_string();
    match exp {
        ExperimentConfig::Probe { concepts, pool, condition, n_demos, runs, base_seed, permute_ratio, .. } => {
            let queries = ctx.data.concepts(concepts)?;
            let pool = match pool {
                Some(p) => ctx.data.concepts(p)?,
                None => queries.clone(),
            };
            let probe = ProbeConfig {
                condition: *condition,
                n_demos: *n_demos,
                runs: *runs,
                base_seed: *base_seed,
                permute_ratio: *permute_ratio,
                in_flight: ctx.config.in_flight,
                style: ctx.config.style.clone(),
            };
            let records = run_probe_with_pool(&*backend, &queries, &pool, &probe)?;
            let boot = BootstrapConfig { resamples: ctx.config.bootstrap_resamples, level: 0.95, seed: *base_seed };
            let reports = accuracy_report(&records, &boot)?;
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            write_report_csv(&reports, &mut w)?;
            w.flush()?;
            if let Some(r) = reports.first() {
                out.summary.insert("accuracy".into(), r.mean);
                out.summary.insert("ci_lo".into(), r.ci_lo);
                out.summary.insert("ci_hi".into(), r.ci_hi);
            }
            out.summary.insert("trials".into(), records.len() as f64);
            ctx.records.extend(records);
        }
        ExperimentConfig::Reprs { concepts, condition, n_demos, seed, .. } => {
            let set = ctx.data.concepts(concepts)?;
            let ds = extract_reprs(&*backend, &set, *condition, *n_demos, *seed)?;
            let rel = format!("reprs/{name}");
            write_repr_dataset(&ds, &ctx.run_dir.join(&rel))?;
            out.artifacts.push(format!("{rel}.f32"));
            out.artifacts.push(format!("{rel}.json"));
            out.summary.insert("rows".into(), ds.table.len() as f64);
            out.summary.insert("dim".into(), ds.table.dim() as f64);
            ctx.reprs.insert(name.clone(), (ds, set));
        }
        ExperimentConfig::Categorize { reprs, memberships, subcategories, .. } => {
            let (ds, set) = ctx.reprs.get(reprs).cloned().ok_or_else(|| missing_reprs(reprs))?;
            let raw: BTreeMap<String, BTreeSet<String>> = match memberships {
                Some(m) => load_memberships(&ctx.data.path(m)?.0)?,
                None => set
                    .iter()
                    .filter_map(|c| c.category.clone().map(|cat| (c.id.clone(), BTreeSet::from([cat]))))
                    .collect(),
            };
            let pairs = match subcategories {
                Some(s) => load_subcategory_pairs(&ctx.data.path(s)?.0)?,
                None => BTreeSet::new(),
            };
            let cats = filter_categories(&set, &raw, &pairs);
            let result = nearest_centroid_loocv(&ds, &cats)?;
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            write_categorization_csv(&result, &cats, &mut w)?;
            w.flush()?;
            out.summary.insert("accuracy".into(), result.accuracy);
            out.summary.insert("categories".into(), cats.categories.len() as f64);
            out.summary.insert("concepts".into(), cats.assignment.len() as f64);
        }
        ExperimentConfig::Decode { reprs, features, k, seed, l2, shuffled_control, .. } => {
            let (ds, _) = ctx.reprs.get(reprs).cloned().ok_or_else(|| missing_reprs(reprs))?;
            let (path, dscfg) = ctx.data.path(features)?;
            let min_concepts = match dscfg {
                DatasetConfig::Features { min_concepts, .. } => *min_concepts,
                _ => 1,
            };
            let norms = load_feature_norms(&path, min_concepts)?;
            let ids: BTreeSet<String> = ds.table.rows().keys().cloned().collect();
            let norms = restrict_features(&norms, &ids, min_concepts);
            let types: BTreeMap<String, String> = norms
                .features
                .iter()
                .map(|f| {
                    let t = serde_json::to_value(f.feature_type).ok().and_then(|v| v.as_str().map(String::from));
                    (f.feature_id.clone(), t.unwrap_or_default())
                })
                .collect();
            let opts = DecodeOptions { k: *k, seed: *seed, logistic: LogisticOptions { l2: *l2, ..LogisticOptions::default() } };
            let (ok, skipped) = decoded(decode_features(&ds, &norms.features, &opts));
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            write_decode_csv(&ok, &types, &mut w)?;
            w.flush()?;
            out.summary.insert("features".into(), ok.len() as f64);
            out.summary.insert("skipped".into(), skipped as f64);
            out.summary.insert("mean_f1".into(), mean(ok.iter().map(|r| r.mean_f1)));
            out.summary.insert("mean_auc".into(), mean(ok.iter().map(|r| r.mean_auc)));
            if *shuffled_control {
                let shuffled: Vec<_> = norms.features.iter().map(|f| shuffle_labels(f, *seed)).collect();
                let (ok, _) = decoded(decode_features(&ds, &shuffled, &opts));
                let types = ok.iter().map(|r| (r.feature_id.clone(), "shuffled".to_string())).collect();
                let mut w = out.file(ctx, &format!("reports/{name}_shuffled.csv"))?;
                write_decode_csv(&ok, &types, &mut w)?;
                w.flush()?;
                out.summary.insert("shuffled_mean_auc".into(), mean(ok.iter().map(|r| r.mean_auc)));
            }
        }
        ExperimentConfig::Project { reprs, dims, .. } => {
            let (ds, _) = ctx.reprs.get(reprs).cloned().ok_or_else(|| missing_reprs(reprs))?;
            let p = pca_project(&ds.table, *dims)?;
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            let header: Vec<String> =
                std::iter::once("concept".to_string()).chain((1..=*dims).map(|i| format!("pc{i}"))).collect();
            writeln!(w, "{}", header.join(","))?;
            for (id, c) in &p.coords {
                let cells: Vec<String> = c.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(w, "{id},{}", cells.join(","))?;
            }
            w.flush()?;
            for (i, v) in p.explained_variance.iter().enumerate() {
                out.summary.insert(format!("explained_variance_pc{}", i + 1), *v);
            }
            out.summary.insert("rank_deficient".into(), if p.rank_deficient { 1.0 } else { 0.0 });
        }
        ExperimentConfig::Mc { items, task, .. } => {
            let items: Vec<MCItem> = read_jsonl(&ctx.data.path(items)?.0)?;
            for item in &items {
                item.validate()?;
            }
            let template = template_for(task).expect("validated task");
            let outcomes = items.par_iter().map(|i| score_mc(&*backend, i, template)).collect::<Result<Vec<_>, _>>()?;
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            writeln!(w, "item,chosen,gold,correct,scores")?;
            for (i, (item, o)) in items.iter().zip(&outcomes).enumerate() {
                let scores: Vec<String> = o.scores.iter().map(|s| format!("{s:.6}")).collect();
                writeln!(w, "{i},{},{},{},{}", o.chosen, item.gold, o.correct(item), scores.join(";"))?;
            }
            w.flush()?;
            out.summary.insert("accuracy".into(), mean(items.iter().zip(&outcomes).map(|(i, o)| o.correct(i) as u8 as f64)));
            out.summary.insert("items".into(), items.len() as f64);
        }
        ExperimentConfig::MinimalPairs { pairs, .. } => {
            let pairs: Vec<MinimalPair> = read_jsonl(&ctx.data.path(pairs)?.0)?;
            let results = pairs.par_iter().map(|p| score_minimal_pair(&*backend, p)).collect::<Result<Vec<_>, _>>()?;
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            writeln!(w, "pair,correct")?;
            for (i, ok) in results.iter().enumerate() {
                writeln!(w, "{i},{ok}")?;
            }
            w.flush()?;
            out.summary.insert("accuracy".into(), mean(results.iter().map(|ok| *ok as u8 as f64)));
            out.summary.insert("pairs".into(), results.len() as f64);
        }
        ExperimentConfig::Protoqa {
            items, wordnet, demos, n_demos, samples, base_seed, modes, max_answers_ks, max_incorrect_ks, ..
        } => {
            let questions = load_protoqa(&ctx.data.path(items)?.0)?;
            let wn = match wordnet {
                Some(w) => ctx.data.wordnet(w)?,
                None => Arc::new(WordNetIndex::default()),
            };
            let pairs = match demos {
                Some(d) => sample_demonstrations(&*ctx.data.concepts(d)?, *n_demos, *base_seed, None)
                    .map_err(crate::protoqa::ProtoQAError::from)?,
                None => Vec::new(),
            };
            let pq = ProtoQAConfig {
                samples: *samples,
                base_seed: *base_seed,
                modes: modes.clone(),
                max_answers_ks: max_answers_ks.clone(),
                max_incorrect_ks: max_incorrect_ks.clone(),
            };
            let results = run_protoqa(&*backend, &questions, &pairs, &ctx.config.style, &pq, &wn)?;
            let mut w = out.file(ctx, &format!("reports/{name}.jsonl"))?;
            write_results_jsonl(&results, &mut w)?;
            w.flush()?;
            let rows = aggregate(&results);
            let mut w = out.file(ctx, &format!("reports/{name}.csv"))?;
            write_aggregate_csv(&rows, &mut w)?;
            w.flush()?;
            for r in &rows {
                out.summary.insert(format!("{}@{}/{}", r.metric.as_str(), r.k, r.mode.as_str()), r.mean_score);
            }
        }
    }
    Ok(out)
}

fn missing_reprs(name: &str) -> HarnessError {
    HarnessError::MissingArtifact(format!("representations `{name}` were not produced"))
}

fn decoded(results: Vec<(String, Result<DecodeResult, crate::represent::ReprError>)>) -> (Vec<DecodeResult>, usize) {
    let mut ok = Vec::new();
    let mut skipped = 0;
    for (_, r) in results {
        match r {
            Ok(r) => ok.push(r),
            Err(_) => skipped += 1,
        }
    }
    (ok, skipped)
}

/// Execute every experiment of `config` in order under
/// `output_dir/<config digest>/`.
///
/// A failing experiment is recorded in the manifest and the remaining
/// experiments still run. Responses are cached in `output_dir/cache/`
/// unless caching is off, so an identical re-run makes no backend calls.
pub fn run(config: &RunConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let started_at = now();
    let out_root = config.resolve(&config.output_dir);
    let run_dir = out_root.join(config.digest());
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join(CONFIG_FILE), config.to_canonical_json())?;
    for stale in [RECORDS_FILE, MANIFEST_FILE] {
        let p = run_dir.join(stale);
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }

    let mut data = Datasets::new(config);
    let raw = build_backend(config, &mut data)?;
    let cached = if config.cache {
        let path = CachedBackend::<Arc<dyn Backend>>::default_path(&out_root.join("cache"), &raw.descriptor().id);
        Some(Arc::new(CachedBackend::open(raw.clone(), &path)?))
    } else {
        None
    };
    let backend: Arc<dyn Backend> = match &cached {
        Some(c) => c.clone(),
        None => raw.clone(),
    };
    let (backend_info, backend_info_error) = match backend.info() {
        Ok(i) => (Some(i), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.in_flight)
        .build()
        .map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
    let mut ctx = Context { config, run_dir: run_dir.clone(), backend, data, reprs: BTreeMap::new(), records: Vec::new() };
    let mut entries = Vec::new();
    let mut wrote_records = false;
    for exp in &config.experiments {
        let result = pool.install(|| execute(&mut ctx, exp));
        let mut entry = ExperimentEntry {
            name: exp.name().to_string(),
            kind: exp.kind().to_string(),
            status: ExperimentStatus::Ok,
            error_kind: None,
            error: None,
            artifacts: Vec::new(),
            summary: BTreeMap::new(),
        };
        match result {
            Ok(p) => {
                entry.artifacts = p.artifacts;
                entry.summary = p.summary;
            }
            Err(e) => {
                entry.status = ExperimentStatus::Failed;
                let kind = if e.is_backend() {
                    "backend"
                } else if e.is_config() {
                    "config"
                } else {
                    "data"
                };
                entry.error_kind = Some(kind.into());
                entry.error = Some(e.to_string());
            }
        }
        if matches!(exp, ExperimentConfig::Probe { .. }) && entry.status == ExperimentStatus::Ok {
            wrote_records = true;
            entry.artifacts.insert(0, RECORDS_FILE.to_string());
        }
        entries.push(entry);
    }
    if wrote_records {
        let mut w = BufWriter::new(File::create(run_dir.join(RECORDS_FILE))?);
        write_records_jsonl(&ctx.records, &mut w)?;
        w.flush()?;
    }

    for e in &entries {
        for a in &e.artifacts {
            if !run_dir.join(a).is_file() {
                return Err(HarnessError::MissingArtifact(format!("{} (experiment {})", a, e.name)));
            }
        }
    }
    let manifest = RunManifest {
        config_digest: config.digest(),
        started_at,
        finished_at: now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        backend: raw.descriptor().clone(),
        backend_info,
        backend_info_error,
        cache: cached.map(|c| CacheStats {
            path: c.path().map(Path::to_path_buf).unwrap_or_default(),
            backend_calls: c.backend_calls(),
            hits: c.hits(),
        }),
        experiments: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Format(e.to_string()))?;
    std::fs::write(run_dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(RunOutcome { run_dir, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_concepts_jsonl, Concept};

    fn concepts(dir: &Path, n: usize) {
        let set = ConceptSet::new(
            "c",
            (0..n)
                .map(|i| {
                    let mut c = Concept::new(&format!("c{i:02}"), &format!("word{i}"), &format!("a thing numbered {i}"));
                    c.category = Some(format!("cat{}", i % 2));
                    c
                })
                .collect(),
        )
        .unwrap();
        let mut f = File::create(dir.join("c.jsonl")).unwrap();
        write_concepts_jsonl(&set, &mut f).unwrap();
    }

    fn config(dir: &Path, experiments: &str) -> RunConfig {
        let text = format!(
            r#"{{
                "backend": {{"kind": "oracle", "concepts": "c", "spec": {{"correct_prob": 0.7, "seed": 3,
                    "centroids": {{"cat0": [1.0, 0.0], "cat1": [0.0, 1.0]}}, "noise_sigma": 0.1}}}},
                "datasets": {{"c": {{"kind": "concepts", "path": "c.jsonl", "format": "jsonl"}}}},
                "experiments": [{experiments}],
                "bootstrap_resamples": 200
            }}"#
        );
        RunConfig::from_json(&text, dir).unwrap()
    }

    #[test]
    fn probe_only_run_lists_records() {
        let dir = tempfile::tempdir().unwrap();
        concepts(dir.path(), 30);
        let c = config(dir.path(), r#"{"kind": "probe", "name": "demo", "concepts": "c", "condition": "demo", "n_demos": 4, "runs": 2}"#);
        let out = run(&c).unwrap();
        let e = &out.manifest.experiments[0];
        assert_eq!(e.status, ExperimentStatus::Ok);
        assert_eq!(e.artifacts, [RECORDS_FILE, "reports/demo.csv"]);
        let records: Vec<TrialRecord> = read_jsonl(&out.run_dir.join(RECORDS_FILE)).unwrap();
        assert_eq!(records.len(), 60);
        assert_eq!(load_manifest(&out.run_dir).unwrap(), out.manifest);
        assert_eq!(std::fs::read(out.run_dir.join("config.json")).unwrap(), c.to_canonical_json());
    }

    #[test]
    fn rerun_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        concepts(dir.path(), 24);
        let c = config(
            dir.path(),
            r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "nl", "runs": 1},
               {"kind": "reprs", "name": "r", "concepts": "c", "condition": "demo", "n_demos": 3},
               {"kind": "categorize", "name": "k", "reprs": "r"}"#,
        );
        let first = run(&c).unwrap();
        assert!(first.manifest.cache.as_ref().unwrap().backend_calls > 0);
        let second = run(&c).unwrap();
        assert_eq!(second.manifest.cache.as_ref().unwrap().backend_calls, 0);
        for rel in [RECORDS_FILE, "reports/p.csv", "reports/k.csv", "reprs/r.f32", "reprs/r.json"] {
            let a = std::fs::read(first.run_dir.join(rel)).unwrap();
            let b = std::fs::read(second.run_dir.join(rel)).unwrap();
            assert_eq!(a, b, "{rel}");
        }
    }

    #[test]
    fn failures_are_recorded_and_later_experiments_run() {
        let dir = tempfile::tempdir().unwrap();
        concepts(dir.path(), 12);
        std::fs::write(dir.path().join("f.csv"), "not,a,feature,matrix\n").unwrap();
        let mut c = config(
            dir.path(),
            r#"{"kind": "reprs", "name": "r", "concepts": "c", "condition": "nl"},
               {"kind": "decode", "name": "d", "reprs": "r", "features": "f"},
               {"kind": "probe", "name": "p", "concepts": "c", "condition": "nl", "runs": 1}"#,
        );
        c.datasets.insert("f".into(), DatasetConfig::Features { path: "f.csv".into(), min_concepts: 1 });
        let out = run(&c).unwrap();
        let kinds: Vec<_> = out.manifest.experiments.iter().map(|e| e.status).collect();
        assert_eq!(kinds, [ExperimentStatus::Ok, ExperimentStatus::Failed, ExperimentStatus::Ok]);
        assert_eq!(out.manifest.experiments[1].error_kind.as_deref(), Some("data"));
    }

    #[test]
    fn uncached_runs_have_no_cache_stats() {
        let dir = tempfile::tempdir().unwrap();
        concepts(dir.path(), 12);
        let mut c = config(dir.path(), r#"{"kind": "probe", "name": "p", "concepts": "c", "condition": "nl", "runs": 1}"#);
        c.cache = false;
        let out = run(&c).unwrap();
        assert!(out.manifest.cache.is_none());
        assert!(!dir.path().join("runs/cache").exists());
    }
}
