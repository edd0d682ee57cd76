//! End-to-end runs behind the `semicl` subcommands.
//!
//! Output directories are owned by one run at a time (an OS file lock on
//! `.lock`). Annotation runs write:
//!
//! * `pseudo.jsonl` / `pseudo.skips.jsonl`: the append-only store,
//! * `kept.jsonl`: the final demonstration pool (global percentile pass),
//! * `iterations.jsonl`: per-iteration bookkeeping (iterative runs),
//! * `manifest.json`: configuration, backend identity, output digests.
//!
//! Rerunning into the same directory with the same configuration resumes
//! from the store.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::annotate::{final_pool, Annotator, IterationSnapshot};
use crate::backend::{BackendKind, LanguageModel, RemoteLm, SimLm, SimParams};
use crate::config::{EmbedderKind, RunConfig};
use crate::dataset::Dataset;
use crate::embed::{CachingEmbedder, Embedder, EmbeddingCache, HashEmbedder, RemoteEmbedder, TableEmbedder};
use crate::error::{Error, Result};
use crate::fixture::{generate as generate_fixture, FixtureSpec};
use crate::manifest::{digest_json, now, RunManifest, RunStatus};
use crate::metrics::{summarize_run, write_metrics_csv, MetricRow};
use crate::select::{infer_all, InferenceRecord};
use crate::store::{file_digest, read_jsonl, write_jsonl, PsdStore};
use crate::types::{DemoSet, PseudoDemonstration};

pub const STORE_FILE: &str = "pseudo.jsonl";
pub const SKIPS_FILE: &str = "pseudo.skips.jsonl";
pub const KEPT_FILE: &str = "kept.jsonl";
pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
const LOCK_FILE: &str = ".lock";

pub fn results_file(n_psd: usize) -> String {
    format!("results.n_psd-{n_psd}.jsonl")
}

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
}

pub fn lock_dir(dir: &Path) -> Result<DirLock> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOCK_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(DirLock { _file: file }),
        Err(std::fs::TryLockError::WouldBlock) => Err(Error::config(format!(
            "{} is in use by another run",
            dir.display()
        ))),
        Err(std::fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
    }
}

/// The configured backend. The simulator's answer key comes from the gold
/// fields of every split and its seed is the run seed.
pub fn build_lm(cfg: &RunConfig, ds: &Dataset) -> Result<Box<dyn LanguageModel>> {
    match cfg.backend.kind {
        BackendKind::Sim => {
            let params = SimParams {
                seed: cfg.seed,
                ..cfg.sim.clone()
            };
            Ok(Box::new(SimLm::new(ds.task.clone(), params, ds.golds(), ds.inputs())?))
        }
        BackendKind::Remote => Ok(Box::new(RemoteLm::new(&cfg.backend)?)),
    }
}

/// The configured embedder, plus the cache to flush when the run ends.
pub struct EmbedderHandle {
    embedder: Arc<dyn Embedder>,
    cache: Option<(Arc<CachingEmbedder>, PathBuf)>,
}

impl EmbedderHandle {
    pub fn get(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn persist(&self) -> Result<usize> {
        match &self.cache {
            Some((c, path)) => c.persist(path),
            None => Ok(0),
        }
    }
}

/// Dataset vectors when the dataset ships them (the configured provider
/// covers free text); otherwise the configured provider, optionally behind a
/// read-through cache.
pub fn build_embedder(cfg: &RunConfig, ds: &Dataset) -> Result<EmbedderHandle> {
    let base: Box<dyn Embedder> = match cfg.embedder.kind {
        EmbedderKind::Hash => Box::new(HashEmbedder::new(cfg.embedder.dim, 0)),
        EmbedderKind::Remote => Box::new(RemoteEmbedder::new(&cfg.embedder.remote)?),
    };
    if cfg.embedder.use_dataset_embeddings {
        if let Some(cache) = &ds.embeddings {
            return Ok(EmbedderHandle {
                embedder: Arc::new(TableEmbedder::from_cache(cache, Some(base))),
                cache: None,
            });
        }
    }
    match &cfg.embedder.cache {
        Some(path) => {
            let caching = Arc::new(CachingEmbedder::new(base, EmbeddingCache::load(path)?));
            Ok(EmbedderHandle {
                embedder: caching.clone(),
                cache: Some((caching, path.clone())),
            })
        }
        None => Ok(EmbedderHandle {
            embedder: Arc::from(base),
            cache: None,
        }),
    }
}

fn ground_truth(cfg: &RunConfig, ds: &Dataset) -> Result<DemoSet> {
    DemoSet::from_ground_truth(ds.ground_truth(cfg.select.n_gt)?)
}

/// Creates the manifest for `command`, or picks up the one left by an
/// earlier attempt with the same configuration.
fn open_manifest(
    command: &str,
    cfg: &RunConfig,
    ds: &Dataset,
    out: &Path,
    lm: &dyn LanguageModel,
) -> Result<RunManifest> {
    let config = serde_json::to_value(cfg)?;
    let config_digest = digest_json(&json!({ "command": command, "config": config, "task": ds.task }))?;
    if let Some(mut prev) = RunManifest::load(out)? {
        if prev.command != command || prev.config_digest != config_digest {
            return Err(Error::config(format!(
                "{} holds run {} with a different command or configuration; use a fresh directory",
                out.display(),
                prev.run_id
            )));
        }
        log::info!("resuming run {} in {}", prev.run_id, out.display());
        prev.status = RunStatus::Running;
        prev.finished_at = None;
        prev.error = None;
        prev.iterations.clear();
        return Ok(prev);
    }
    let started = now();
    Ok(RunManifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        command: command.to_string(),
        status: RunStatus::Running,
        dataset: ds.dir.clone(),
        task: ds.task.clone(),
        backend_identity: lm.identity().to_string(),
        backend_config_digest: digest_json(&cfg.backend)?,
        config_digest,
        config,
        seed: cfg.seed,
        scorer: Some(cfg.confidence.scorer.to_string()),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: started.clone(),
        updated_at: started,
        finished_at: None,
        final_pool_rule: None,
        iterations: Vec::new(),
        outcome: None,
        error: None,
        outputs: Default::default(),
    })
}

/// Runs `body`, then records success or failure in the manifest.
fn finish<T>(
    manifest: &mut RunManifest,
    out: &Path,
    body: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    match body(manifest) {
        Ok(v) => {
            manifest.finish(RunStatus::Complete);
            manifest.save(out)?;
            Ok(v)
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.finish(RunStatus::Failed);
            if let Err(save) = manifest.save(out) {
                log::error!("could not record failure in manifest: {save}");
            }
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReport {
    pub run_id: String,
    pub annotated: usize,
    pub skipped: usize,
    pub kept: usize,
    pub iterations: usize,
    pub store_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Algorithm {
    Naive,
    Iterative,
}

fn annotate_run(alg: Algorithm, cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<AnnotateReport> {
    cfg.validate()?;
    let ds = Dataset::load(dataset)?;
    let _lock = lock_dir(out)?;
    let lm = build_lm(cfg, &ds)?;
    let command = match alg {
        Algorithm::Naive => "generate",
        Algorithm::Iterative => "iterpsd",
    };
    let mut manifest = open_manifest(command, cfg, &ds, out, lm.as_ref())?;
    manifest.final_pool_rule = Some(format!(
        "global top {} by confidence over every pseudo-demonstration",
        cfg.confidence.keep_fraction
    ));
    manifest.save(out)?;

    finish(&mut manifest, out, |manifest| {
        let embedder = build_embedder(cfg, &ds)?;
        let gt = ground_truth(cfg, &ds)?;
        let unlabeled = ds.unlabeled_inputs();
        let annotator = Annotator::new(&ds.task, lm.as_ref(), cfg.annotate_config())?
            .with_embedder(embedder.get())
            .with_temperatures(cfg.backend.temperature, cfg.backend.sampling_temperature)
            .with_logprobs(cfg.backend.logprobs);
        let mut store = PsdStore::open(&out.join(STORE_FILE))?;

        let (all, skipped, snapshots) = match alg {
            Algorithm::Naive => {
                let a = annotator.naive_semi_icl(&unlabeled, &gt, &mut store)?;
                (a.pseudo, a.skips.len(), Vec::new())
            }
            Algorithm::Iterative => {
                let mut observe = |s: &IterationSnapshot| {
                    manifest.iterations.push(s.clone());
                    manifest.save(out)
                };
                let run = annotator.iter_psd_observed(&unlabeled, &gt, embedder.get(), &mut store, &mut observe)?;
                (run.all, run.skips.len(), run.snapshots)
            }
        };
        embedder.persist()?;
        drop(store);

        let kept = final_pool(&all, cfg.confidence.keep_fraction)?;
        write_jsonl(&out.join(KEPT_FILE), &kept)?;
        let mut names = vec![STORE_FILE, SKIPS_FILE, KEPT_FILE];
        if alg == Algorithm::Iterative {
            write_jsonl(&out.join(ITERATIONS_FILE), &snapshots)?;
            names.push(ITERATIONS_FILE);
        }
        for name in names {
            manifest.record_output(out, name)?;
        }
        manifest.iterations = snapshots.clone();
        manifest.outcome = Some(json!({
            "annotated": all.len(),
            "skipped": skipped,
            "kept": kept.len(),
            "lambda": kept.iter().map(|p| p.confidence).reduce(f64::min),
        }));
        Ok(AnnotateReport {
            run_id: manifest.run_id.clone(),
            annotated: all.len(),
            skipped,
            kept: kept.len(),
            iterations: snapshots.len(),
            store_digest: file_digest(&out.join(STORE_FILE))?,
        })
    })
}

/// Single-pass annotation of the unlabeled split.
pub fn generate(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<AnnotateReport> {
    annotate_run(Algorithm::Naive, cfg, dataset, out)
}

/// Iterative annotation of the unlabeled split.
pub fn iterpsd(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<AnnotateReport> {
    annotate_run(Algorithm::Iterative, cfg, dataset, out)
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub run_id: String,
    #[serde(flatten)]
    pub record: InferenceRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub run_id: String,
    pub results: Vec<(usize, PathBuf)>,
    pub metrics: PathBuf,
    pub rows: Vec<MetricRow>,
}

/// Loads the final pool written by an annotation run.
pub fn load_pool(store_dir: &Path) -> Result<(Vec<PseudoDemonstration>, Option<RunManifest>)> {
    let path = store_dir.join(KEPT_FILE);
    if !path.exists() {
        return Err(Error::config(format!(
            "{} has no {KEPT_FILE}; run generate or iterpsd first",
            store_dir.display()
        )));
    }
    Ok((read_jsonl(&path)?, RunManifest::load(store_dir)?))
}

fn metric_rows(run_id: &str, scorer: &str, n_gt: usize, n_psd: usize, summary: &crate::metrics::RunSummary) -> Vec<MetricRow> {
    let row = |name: String, value: f64| MetricRow {
        run_id: run_id.to_string(),
        k_gt: n_gt,
        k_psd: n_psd,
        scorer: scorer.to_string(),
        metric_name: name,
        value,
    };
    let mut rows = vec![row(summary.metric.clone(), summary.mean)];
    for (label, b) in &summary.buckets {
        rows.push(row(format!("{}:{label}", summary.metric), b.mean));
    }
    rows
}

/// Inference over the test split for every `n_psd` value: one results file
/// each and a single metrics CSV.
pub fn infer(cfg: &RunConfig, dataset: &Path, store_dir: Option<&Path>, out: &Path) -> Result<InferReport> {
    cfg.validate()?;
    let ds = Dataset::load(dataset)?;
    if ds.test.is_empty() {
        return Err(Error::config(format!("{} has no test split", dataset.display())));
    }
    let needs_pool = cfg.select.n_psd.iter().any(|&n| n > 0);
    let (pool, pool_manifest) = match store_dir {
        Some(dir) => load_pool(dir)?,
        None if needs_pool => {
            return Err(Error::config("n_psd > 0 needs a pseudo-demonstration store (--store)"))
        }
        None => (Vec::new(), None),
    };
    let _lock = lock_dir(out)?;
    let lm = build_lm(cfg, &ds)?;
    let mut manifest = open_manifest("infer", cfg, &ds, out, lm.as_ref())?;
    manifest.scorer = pool_manifest.as_ref().and_then(|m| m.scorer.clone());
    manifest.save(out)?;
    let scorer = manifest.scorer.clone().unwrap_or_else(|| "none".into());

    finish(&mut manifest, out, |manifest| {
        let embedder = build_embedder(cfg, &ds)?;
        let gt = ground_truth(cfg, &ds)?;
        let test: Vec<_> = ds.test.iter().map(|e| crate::types::Example::new(e.id.clone(), e.input.clone())).collect();
        let golds: HashMap<String, String> = ds.golds();
        let mut results = Vec::new();
        let mut rows = Vec::new();
        for &n_psd in &cfg.select.n_psd {
            let records = infer_all(&test, &gt, &pool, &ds.task, lm.as_ref(), embedder.get(), &cfg.inference_config(n_psd))?;
            let name = results_file(n_psd);
            let lines: Vec<ResultLine> = records
                .iter()
                .map(|r| ResultLine {
                    run_id: manifest.run_id.clone(),
                    record: r.clone(),
                })
                .collect();
            write_jsonl(&out.join(&name), &lines)?;
            manifest.record_output(out, &name)?;
            let summary = summarize_run(&records, &golds, &ds.task)?;
            log::info!("n_psd = {n_psd}: {} = {:.4}", summary.metric, summary.mean);
            rows.extend(metric_rows(&manifest.run_id, &scorer, gt.len(), n_psd, &summary));
            results.push((n_psd, out.join(name)));
        }
        embedder.persist()?;
        let metrics = out.join(METRICS_FILE);
        write_metrics_csv(&metrics, &rows)?;
        manifest.record_output(out, METRICS_FILE)?;
        manifest.outcome = Some(serde_json::to_value(&rows)?);
        Ok(InferReport {
            run_id: manifest.run_id.clone(),
            results,
            metrics,
            rows,
        })
    })
}

/// Scores existing results files against the dataset's gold answers.
pub fn eval(dataset: &Path, results: &[PathBuf], out_csv: &Path) -> Result<Vec<MetricRow>> {
    if results.is_empty() {
        return Err(Error::config("eval needs at least one results file"));
    }
    let ds = Dataset::load(dataset)?;
    let golds = ds.golds();
    let mut rows = Vec::new();
    for path in results {
        let lines: Vec<ResultLine> = read_jsonl(path)?;
        let first = lines
            .first()
            .ok_or_else(|| Error::config(format!("{} is empty", path.display())))?;
        let run_id = first.run_id.clone();
        let (n_gt, n_psd) = (first.record.n_gt, first.record.n_psd);
        let scorer = path
            .parent()
            .map(RunManifest::load)
            .transpose()?
            .flatten()
            .and_then(|m| m.scorer)
            .unwrap_or_else(|| "none".into());
        let records: Vec<InferenceRecord> = lines.into_iter().map(|l| l.record).collect();
        let summary = summarize_run(&records, &golds, &ds.task)?;
        rows.extend(metric_rows(&run_id, &scorer, n_gt, n_psd, &summary));
    }
    write_metrics_csv(out_csv, &rows)?;
    Ok(rows)
}

/// Writes a synthetic dataset and returns a digest over its files.
pub fn simfixture(spec: &FixtureSpec, out: &Path) -> Result<String> {
    let fixture = generate_fixture(spec)?;
    fixture.write(out)?;
    let mut names: Vec<String> = std::fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    names.sort();
    let mut combined = String::new();
    for n in names {
        combined.push_str(&format!("{n} {}\n", file_digest(&out.join(&n))?));
    }
    Ok(crate::util::sha256_hex(combined.as_bytes()))
}
