use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use conceptprobe::corpus::{
    load_concepts, load_feature_norms, load_frequency_table, load_protoqa, load_wordnet, write_concepts_jsonl,
    ConceptSet, WordNetIndex,
};
use conceptprobe::harness::{
    correlate_models, correlate_with, export_report, load_model_scores, load_task_scores, read_jsonl, run,
    write_correlation_csv, ReportFormat, RunConfig,
};
use conceptprobe::lmclient::server::spawn_backend;
use conceptprobe::lmclient::{verify_backend, HttpBackend, OracleBackend, OracleSpec};
use conceptprobe::probe::{
    accuracy_report, property_correlations, read_records_jsonl, run_probe_with_pool, score_mc, score_minimal_pair,
    template_for, write_records_jsonl, BootstrapConfig, MCItem, MinimalPair, ProbeConfig,
};
use conceptprobe::promptgen::sample_demonstrations;
use conceptprobe::protoqa::{
    aggregate, run_protoqa, score_question, write_aggregate_csv, write_results_jsonl, MatchMode, ProtoQAConfig,
    QuestionResult, MAX_ANSWERS_KS, MAX_INCORRECT_KS,
};
use conceptprobe::represent::{
    decode_features, dataset_from_table, extract_reprs, filter_categories, load_memberships, load_subcategory_pairs,
    nearest_centroid_loocv, pca_project, read_repr_dataset, shuffle_labels, write_categorization_csv,
    write_decode_csv, write_repr_dataset, DecodeOptions, LogisticOptions,
};

use crate::backend::read_oracle_spec;
use crate::{BackendCommand, BenchCommand, Command, ConceptArgs, MatchModeArg, ProbeCommand, ProtoqaCommand, ReprCommand, ReportFormatArg};

/// The backend answered but did not behave as required.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BackendFailure(pub String);

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_set(args: &ConceptArgs) -> Result<ConceptSet> {
    Ok(load_concepts(&args.concepts, args.format.into())?)
}

fn load_wn(path: Option<&PathBuf>) -> Result<WordNetIndex> {
    Ok(match path {
        Some(p) => load_wordnet(p)?,
        None => WordNetIndex::default(),
    })
}

fn modes(m: &[MatchModeArg], wordnet: Option<&PathBuf>) -> Result<Vec<MatchMode>> {
    let modes: Vec<MatchMode> = m.iter().map(|&m| m.into()).collect();
    if modes.contains(&MatchMode::WordNet) && wordnet.is_none() {
        bail!(conceptprobe::harness::HarnessError::ConfigInvalid {
            field: "modes".into(),
            reason: "wordnet matching needs --wordnet".into()
        });
    }
    Ok(modes)
}

/// `path` with `suffix` appended to the file stem and extension `ext`.
fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Import { input, format, output } => {
            let set = load_concepts(&input, format.into())?;
            let mut w = create(&output)?;
            write_concepts_jsonl(&set, &mut w)?;
            w.flush()?;
            println!("imported {} concepts", set.len());
        }
        Command::Probe(cmd) => probe(cmd)?,
        Command::Repr(cmd) => repr(cmd)?,
        Command::Bench(cmd) => bench(cmd)?,
        Command::Protoqa(cmd) => protoqa(cmd)?,
        Command::Correlate { probe, tasks, sizes, out } => {
            let scores = load_model_scores(&probe)?;
            let mut rows = Vec::new();
            if let Some(t) = tasks {
                let report = correlate_models(&scores, &load_task_scores(&t)?)?;
                rows.extend(report.tasks);
                rows.push(report.average);
            }
            if let Some(s) = sizes {
                rows.push(correlate_with(&scores, &load_model_scores(&s)?, "model_size")?);
            }
            if rows.is_empty() {
                bail!(conceptprobe::harness::HarnessError::ConfigInvalid {
                    field: "tasks".into(),
                    reason: "give --tasks and/or --sizes".into()
                });
            }
            let mut w = create(&out)?;
            write_correlation_csv(&rows, &mut w)?;
            w.flush()?;
            for r in &rows {
                println!("{}: spearman {:?} pearson {:?} (n={})", r.target, r.spearman, r.pearson, r.n_models);
            }
        }
        Command::Backend(cmd) => backend(cmd)?,
        Command::Run { config } => {
            let config = RunConfig::from_file(&config)?;
            let outcome = run(&config)?;
            println!("run directory: {}", outcome.run_dir.display());
            for e in &outcome.manifest.experiments {
                match &e.error {
                    None => println!("{} ({}): ok {:?}", e.name, e.kind, e.summary),
                    Some(err) => println!("{} ({}): FAILED {err}", e.name, e.kind),
                }
            }
            if let Some(c) = &outcome.manifest.cache {
                println!("backend calls: {} (cache hits {})", c.backend_calls, c.hits);
            }
            let failed: Vec<_> = outcome.manifest.failed().collect();
            if failed.iter().any(|e| e.error_kind.as_deref() == Some("backend")) {
                return Err(BackendFailure(format!("{} experiment(s) failed", failed.len())).into());
            }
            if !failed.is_empty() {
                bail!("{} experiment(s) failed", failed.len());
            }
        }
    }
    Ok(())
}

fn probe(cmd: ProbeCommand) -> Result<()> {
    match cmd {
        ProbeCommand::Run { backend, concepts, pool, condition, n_demos, runs, seed, permute_ratio, in_flight, out } => {
            let queries = load_set(&concepts)?;
            let pool_set = match &pool {
                Some(p) => load_concepts(p, concepts.format.into())?,
                None => queries.clone(),
            };
            let b = backend.open(Some((&concepts.concepts, concepts.format.into())))?;
            let n_demos = if condition.takes_demonstrations() { n_demos } else { 0 };
            let config = ProbeConfig {
                condition,
                n_demos,
                runs,
                base_seed: seed,
                permute_ratio,
                in_flight,
                ..ProbeConfig::default()
            };
            let records = run_probe_with_pool(&*b, &queries, &pool_set, &config)?;
            let mut w = create(&out)?;
            write_records_jsonl(&records, &mut w)?;
            w.flush()?;
            let reports = accuracy_report(&records, &BootstrapConfig { seed, ..BootstrapConfig::default() })?;
            for r in reports {
                println!("{}: {:.4} [{:.4}, {:.4}] over {} trials", r.key, r.mean, r.ci_lo, r.ci_hi, r.n_trials);
            }
        }
        ProbeCommand::Report { records, out_dir, format, resamples, seed } => {
            let format = match format {
                ReportFormatArg::Csv => ReportFormat::Csv,
                ReportFormatArg::Markdown => ReportFormat::Markdown,
            };
            let boot = BootstrapConfig { resamples, seed, ..BootstrapConfig::default() };
            let path = export_report(&records, &out_dir, format, &boot)?;
            println!("wrote {}", path.display());
        }
        ProbeCommand::Factors { records, concepts, freq, wordnet, out } => {
            let file = File::open(&records).with_context(|| format!("opening {}", records.display()))?;
            let recs = read_records_jsonl(BufReader::new(file))?;
            let set = load_set(&concepts)?;
            let corr = property_correlations(&recs, &load_frequency_table(&freq)?, &load_wordnet(&wordnet)?, &set)?;
            let mut w = create(&out)?;
            writeln!(w, "factor,rho,n,missing,note")?;
            for name in ["word_freq", "num_senses", "desc_length"] {
                let f = corr.get(name).expect("known factor");
                let rho = f.rho.map(|r| format!("{r:.6}")).unwrap_or_default();
                writeln!(w, "{name},{rho},{},{},{}", f.n, f.missing, f.reason.as_deref().unwrap_or(""))?;
                println!("{name}: rho {rho} (n={}, missing {})", f.n, f.missing);
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn repr(cmd: ReprCommand) -> Result<()> {
    match cmd {
        ReprCommand::Extract { backend, concepts, condition, n_demos, seed, out } => {
            let set = load_set(&concepts)?;
            let b = backend.open(Some((&concepts.concepts, concepts.format.into())))?;
            let n_demos = if condition.takes_demonstrations() { n_demos } else { 0 };
            let ds = extract_reprs(&*b, &set, condition, n_demos, seed)?;
            let (bin, json) = write_repr_dataset(&ds, &out)?;
            println!("{} rows × {} dims → {} + {}", ds.table.len(), ds.table.dim(), bin.display(), json.display());
        }
        ReprCommand::Categorize { reprs, concepts, memberships, subcategories, out } => {
            let ds = read_repr_dataset(&reprs)?;
            let set = load_set(&concepts)?;
            let raw = match &memberships {
                Some(p) => load_memberships(p)?,
                None => set
                    .iter()
                    .filter_map(|c| c.category.clone().map(|cat| (c.id.clone(), [cat].into())))
                    .collect(),
            };
            let pairs = match &subcategories {
                Some(p) => load_subcategory_pairs(p)?,
                None => Default::default(),
            };
            let cats = filter_categories(&set, &raw, &pairs);
            let result = nearest_centroid_loocv(&ds, &cats)?;
            let mut w = create(&out)?;
            write_categorization_csv(&result, &cats, &mut w)?;
            w.flush()?;
            println!(
                "accuracy {:.4} over {} concepts in {} categories",
                result.accuracy,
                cats.assignment.len(),
                cats.categories.len()
            );
        }
        ReprCommand::Decode { reprs, features, min_concepts, k, seed, l2, shuffled, out } => {
            let ds = read_repr_dataset(&reprs)?;
            let norms = load_feature_norms(&features, min_concepts)?;
            let ids = ds.table.rows().keys().cloned().collect();
            let norms = conceptprobe::corpus::restrict_features(&norms, &ids, min_concepts);
            let types: BTreeMap<String, String> = norms
                .features
                .iter()
                .map(|f| {
                    let t = serde_json::to_value(f.feature_type).ok().and_then(|v| v.as_str().map(String::from));
                    (f.feature_id.clone(), t.unwrap_or_default())
                })
                .collect();
            let opts = DecodeOptions { k, seed, logistic: LogisticOptions { l2, ..LogisticOptions::default() } };
            let mut runs = vec![("", norms.features.clone())];
            if shuffled {
                runs.push(("_shuffled", norms.features.iter().map(|f| shuffle_labels(f, seed)).collect()));
            }
            for (suffix, features) in runs {
                let mut ok = Vec::new();
                for (id, r) in decode_features(&ds, &features, &opts) {
                    match r {
                        Ok(r) => ok.push(r),
                        Err(e) => eprintln!("skipping {id}: {e}"),
                    }
                }
                let path = if suffix.is_empty() { out.clone() } else { sibling(&out, suffix, "csv") };
                let mut w = create(&path)?;
                write_decode_csv(&ok, &types, &mut w)?;
                w.flush()?;
                let n = ok.len().max(1) as f64;
                println!(
                    "{}{suffix}: {} features, mean F1 {:.4}, mean AUC {:.4}",
                    out.display(),
                    ok.len(),
                    ok.iter().map(|r| r.mean_f1).sum::<f64>() / n,
                    ok.iter().map(|r| r.mean_auc).sum::<f64>() / n
                );
            }
        }
        ReprCommand::Project { reprs, dims, out } => {
            let ds = match read_repr_dataset(&reprs) {
                Ok(ds) => ds,
                Err(_) if reprs.is_file() => {
                    dataset_from_table(conceptprobe::corpus::load_embedding_table(&reprs)?, "static")
                }
                Err(e) => return Err(e.into()),
            };
            let p = pca_project(&ds.table, dims)?;
            let mut w = create(&out)?;
            let header: Vec<String> = (1..=dims).map(|i| format!("pc{i}")).collect();
            writeln!(w, "concept,{}", header.join(","))?;
            for (id, c) in &p.coords {
                let cells: Vec<String> = c.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(w, "{id},{}", cells.join(","))?;
            }
            w.flush()?;
            if p.rank_deficient {
                eprintln!("warning: data span fewer than {dims} directions; missing components are zero");
            }
        }
    }
    Ok(())
}

fn bench(cmd: BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Mc { backend, items, task, out } => {
            let template = template_for(&task).with_context(|| format!("no template for task `{task}`"))?;
            let items: Vec<MCItem> = read_jsonl(&items)?;
            let b = backend.open(None)?;
            let mut w = create(&out)?;
            writeln!(w, "item,chosen,gold,correct,scores")?;
            let mut correct = 0;
            for (i, item) in items.iter().enumerate() {
                item.validate()?;
                let o = score_mc(&*b, item, template)?;
                correct += o.correct(item) as usize;
                let scores: Vec<String> = o.scores.iter().map(|s| format!("{s:.6}")).collect();
                writeln!(w, "{i},{},{},{},{}", o.chosen, item.gold, o.correct(item), scores.join(";"))?;
            }
            w.flush()?;
            println!("{task}: {correct}/{} correct", items.len());
        }
        BenchCommand::Pairs { backend, pairs, out } => {
            let pairs: Vec<MinimalPair> = read_jsonl(&pairs)?;
            let b = backend.open(None)?;
            let mut w = create(&out)?;
            writeln!(w, "pair,correct")?;
            let mut correct = 0;
            for (i, p) in pairs.iter().enumerate() {
                let ok = score_minimal_pair(&*b, p)?;
                correct += ok as usize;
                writeln!(w, "{i},{ok}")?;
            }
            w.flush()?;
            println!("{correct}/{} pairs prefer the grammatical sentence", pairs.len());
        }
    }
    Ok(())
}

fn write_protoqa(results: &[QuestionResult], out: &Path) -> Result<()> {
    let mut w = create(out)?;
    write_results_jsonl(results, &mut w)?;
    w.flush()?;
    let rows = aggregate(results);
    let csv_path = sibling(out, "_summary", "csv");
    let mut w = create(&csv_path)?;
    write_aggregate_csv(&rows, &mut w)?;
    w.flush()?;
    for r in rows {
        println!("{} {}@{}: {:.4}", r.mode.as_str(), r.metric.as_str(), r.k, r.mean_score);
    }
    Ok(())
}

fn protoqa(cmd: ProtoqaCommand) -> Result<()> {
    match cmd {
        ProtoqaCommand::Run { backend, items, wordnet, demos, n_demos, samples, seed, modes: m, out } => {
            let modes = modes(&m, wordnet.as_ref())?;
            let questions = load_protoqa(&items)?;
            let wn = load_wn(wordnet.as_ref())?;
            let pairs = match &demos {
                Some(p) => sample_demonstrations(&load_concepts(p, conceptprobe::corpus::ConceptFormat::Jsonl)?, n_demos, seed, None)?,
                None => Vec::new(),
            };
            let b = backend.open(None)?;
            let config = ProtoQAConfig {
                samples,
                base_seed: seed,
                modes,
                max_answers_ks: MAX_ANSWERS_KS.to_vec(),
                max_incorrect_ks: MAX_INCORRECT_KS.to_vec(),
            };
            let results = run_protoqa(&*b, &questions, &pairs, &Default::default(), &config, &wn)?;
            write_protoqa(&results, &out)?;
        }
        ProtoqaCommand::Score { results, items, wordnet, modes: m, out } => {
            let modes = modes(&m, wordnet.as_ref())?;
            let questions = load_protoqa(&items)?;
            let wn = load_wn(wordnet.as_ref())?;
            let by_id: BTreeMap<&str, _> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
            let mut previous: Vec<QuestionResult> = read_jsonl(&results)?;
            for r in &mut previous {
                let q = by_id
                    .get(r.question_id.as_str())
                    .with_context(|| format!("question {} not in {}", r.question_id, items.display()))?;
                r.scores = score_question(&r.ranked, &q.clusters, &modes, &MAX_ANSWERS_KS, &MAX_INCORRECT_KS, &wn);
            }
            write_protoqa(&previous, &out)?;
        }
    }
    Ok(())
}

fn backend(cmd: BackendCommand) -> Result<()> {
    match cmd {
        BackendCommand::Verify { url, prompt, timeout_secs } => {
            let b = HttpBackend::connect(&url, Duration::from_secs(timeout_secs))?;
            let report = verify_backend(&b, &prompt);
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !report.passed() {
                return Err(BackendFailure(format!("{} failed conformance", report.backend_id)).into());
            }
            println!("{} conforms", report.backend_id);
        }
        BackendCommand::Serve { oracle_spec, addr } => {
            let spec = match &oracle_spec {
                Some(p) => read_oracle_spec(p)?,
                None => OracleSpec::default(),
            };
            let server = spawn_backend(&addr, Arc::new(OracleBackend::new(spec)?))?;
            println!("serving oracle at {}", server.url());
            server.join();
        }
    }
    Ok(())
}
