//! Pseudo-demonstration generation: the single-pass annotator, the iterative
//! curriculum loop and its chunk sampler.

mod filter;
mod journal;
mod sampler;

use std::collections::HashSet;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{CompletionRequest, LanguageModel};
use crate::confidence::{
    back_translation_confidence, entropy_report, percentile_threshold, self_consistency,
    verbalized_confidence, ConfidenceReport,
};
use crate::embed::{Embedder, EmbeddingTable};
use crate::error::{Error, Result};
use crate::parse::{normalize_answer, parse_response};
use crate::prompt::render_prompt;
use crate::task::TaskSpec;
use crate::types::{DemoSet, Example, LmResponse, PseudoDemonstration, ScorerKind};
use crate::util::keyed_rng;

pub use filter::{chunk_filter, FilterMode};
pub use journal::{Journal, MemoryJournal, Outcome, SkipRecord};
pub use sampler::{epsilon_random_sampler, split_budget, SamplerVariant};

/// Cap on the kept working set of the iterative loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kappa {
    Finite(usize),
    Unbounded,
}

impl Kappa {
    pub fn limit(self) -> Option<usize> {
        match self {
            Kappa::Finite(k) => Some(k),
            Kappa::Unbounded => None,
        }
    }
}

impl std::fmt::Display for Kappa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kappa::Finite(k) => write!(f, "{k}"),
            Kappa::Unbounded => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Kappa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "none" | "unbounded" => Ok(Kappa::Unbounded),
            n => n
                .parse()
                .map(Kappa::Finite)
                .map_err(|_| Error::config(format!("kappa must be a positive integer or \"inf\", got {s:?}"))),
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Kappa::Finite(k) => s.serialize_u64(*k as u64),
            Kappa::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Kappa {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(Kappa::Finite(k as usize)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Threshold rule applied to each freshly annotated chunk of the iterative loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Keep the top `keep_fraction` of every chunk.
    PerChunk,
    /// Keep everything at or above a fixed confidence.
    Fixed(f64),
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "per-chunk" {
            return Ok(ThresholdMode::PerChunk);
        }
        s.strip_prefix("fixed:")
            .and_then(|v| v.parse().ok())
            .map(ThresholdMode::Fixed)
            .ok_or_else(|| Error::config(format!("threshold must be \"per-chunk\" or \"fixed:<lambda>\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub scorer: ScorerKind,
    pub keep_fraction: f64,
    pub chunk_size: usize,
    pub epsilon: f64,
    pub kappa: Kappa,
    /// Extra attempts per example after the first one fails.
    pub retries: u32,
    pub seed: u64,
    pub threshold: ThresholdMode,
    pub sampler: SamplerVariant,
    pub self_consistency_samples: usize,
    pub max_inflight: usize,
    /// Outcomes are committed to the journal in batches of this size.
    pub commit_batch: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            scorer: ScorerKind::Verbalized,
            keep_fraction: 0.1,
            chunk_size: 500,
            epsilon: 0.8,
            kappa: Kappa::Finite(1000),
            retries: 2,
            seed: 0,
            threshold: ThresholdMode::PerChunk,
            sampler: SamplerVariant::NearestAnnotated,
            self_consistency_samples: 10,
            max_inflight: 8,
            commit_batch: 64,
        }
    }
}

impl AnnotateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::config(format!("keep_fraction {} outside (0, 1]", self.keep_fraction)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.chunk_size == 0 {
            return Err(Error::config("chunk_size must be >= 1"));
        }
        if self.kappa == Kappa::Finite(0) {
            return Err(Error::config("kappa must be >= 1"));
        }
        if let ThresholdMode::Fixed(l) = self.threshold {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::config(format!("fixed threshold {l} outside [0, 1]")));
            }
        }
        if self.self_consistency_samples == 0 || self.max_inflight == 0 || self.commit_batch == 0 {
            return Err(Error::config(
                "self_consistency_samples, max_inflight and commit_batch must be >= 1",
            ));
        }
        if let Kappa::Finite(k) = self.kappa {
            if k < self.chunk_size {
                log::warn!("kappa {k} < chunk size {}; the kept set will be resampled every iteration", self.chunk_size);
            }
        }
        Ok(())
    }

    pub fn filter_mode(&self) -> FilterMode {
        match self.threshold {
            ThresholdMode::PerChunk => FilterMode::PerChunkPercentile(self.keep_fraction),
            ThresholdMode::Fixed(l) => FilterMode::Fixed(l),
        }
    }
}

/// Pseudo-demonstrations and skips of one annotation pass, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotation {
    pub pseudo: Vec<PseudoDemonstration>,
    pub skips: Vec<SkipRecord>,
}

impl Annotation {
    fn push(&mut self, o: Outcome) {
        match o {
            Outcome::Annotated(p) => self.pseudo.push(p),
            Outcome::Skipped(s) => self.skips.push(s),
        }
    }
}

/// Bookkeeping for one iteration of the curriculum loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub iteration: u32,
    /// Kept-set size entering the iteration, before the kappa cap.
    pub kept_before_cap: usize,
    /// Pseudo-demonstrations in this iteration's prompts.
    pub kept: usize,
    pub chunk: usize,
    pub annotated: usize,
    pub skipped: usize,
    pub chunk_kept: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterPsdRun {
    /// Every pseudo-demonstration produced, in production order.
    pub all: Vec<PseudoDemonstration>,
    /// The working set after the last iteration.
    pub kept: Vec<PseudoDemonstration>,
    pub skips: Vec<SkipRecord>,
    pub snapshots: Vec<IterationSnapshot>,
}

/// Global percentile pass over a finished pool; the demonstrations handed to
/// inference. Production order is preserved.
pub fn final_pool(all: &[PseudoDemonstration], keep_fraction: f64) -> Result<Vec<PseudoDemonstration>> {
    if all.is_empty() {
        return Ok(Vec::new());
    }
    let scores: Vec<f64> = all.iter().map(|p| p.confidence).collect();
    let (_, kept) = percentile_threshold(&scores, keep_fraction)?;
    Ok(kept.into_iter().map(|i| all[i].clone()).collect())
}

/// The `kappa` most confident items of `all` (ties: earlier iteration, then
/// smaller id), returned in `all` order.
pub fn top_kappa(all: &[PseudoDemonstration], kappa: usize) -> Vec<PseudoDemonstration> {
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&all[a], &all[b]);
        y.confidence
            .total_cmp(&x.confidence)
            .then(x.iteration.cmp(&y.iteration))
            .then_with(|| x.example_id.cmp(&y.example_id))
    });
    order.truncate(kappa);
    order.sort_unstable();
    order.into_iter().map(|i| all[i].clone()).collect()
}

fn is_fatal(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Io { .. })
}

/// Runs the model over examples and turns its answers into scored
/// pseudo-demonstrations.
pub struct Annotator<'a> {
    task: &'a TaskSpec,
    lm: &'a dyn LanguageModel,
    embedder: Option<&'a dyn Embedder>,
    cfg: AnnotateConfig,
    temperature: f64,
    sampling_temperature: f64,
    logprobs: bool,
    pool: rayon::ThreadPool,
}

impl<'a> Annotator<'a> {
    pub fn new(task: &'a TaskSpec, lm: &'a dyn LanguageModel, cfg: AnnotateConfig) -> Result<Self> {
        task.validate()?;
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.max_inflight)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(Annotator {
            task,
            lm,
            embedder: None,
            cfg,
            temperature: 0.0,
            sampling_temperature: 0.7,
            logprobs: false,
            pool,
        })
    }

    /// Needed by the back-translation scorer and the iterative sampler.
    pub fn with_embedder(mut self, embedder: &'a dyn Embedder) -> Self {
        self.embedder = Some(embedder);
        self
    }

    /// Single-shot and repeated-sampling temperatures.
    pub fn with_temperatures(mut self, single: f64, sampling: f64) -> Self {
        self.temperature = single;
        self.sampling_temperature = sampling;
        self
    }

    /// Requests token logprobs on single-shot calls even when the scorer does
    /// not need them.
    pub fn with_logprobs(mut self, on: bool) -> Self {
        self.logprobs = on;
        self
    }

    pub fn config(&self) -> &AnnotateConfig {
        &self.cfg
    }

    fn first(&self, req: &CompletionRequest<'_>) -> Result<LmResponse> {
        let c = self
            .lm
            .complete(req)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Protocol("backend returned no completion".into()))?;
        parse_response(self.task, &c.text, c.token_logprobs)
    }

    fn score(&self, prompt: &str, ex: &Example) -> Result<(LmResponse, ConfidenceReport)> {
        let single = CompletionRequest {
            prompt,
            temperature: self.temperature,
            n: 1,
            logprobs: self.logprobs,
        };
        match self.cfg.scorer {
            ScorerKind::Verbalized => {
                let resp = self.first(&single)?;
                let c = verbalized_confidence(&resp)?;
                let report = ConfidenceReport::new(ScorerKind::Verbalized, c, c, 1)?;
                Ok((resp, report))
            }
            ScorerKind::Entropy => {
                let resp = self.first(&CompletionRequest { logprobs: true, ..single })?;
                let lps: Vec<f64> = resp
                    .token_logprobs
                    .as_ref()
                    .filter(|t| !t.is_empty())
                    .ok_or(Error::ScorerMissing("entropy"))?
                    .iter()
                    .map(|t| t.logprob)
                    .collect();
                let report = entropy_report(&lps)?;
                Ok((resp, report))
            }
            ScorerKind::SelfConsistency => {
                let samples = self.lm.complete(&CompletionRequest {
                    prompt,
                    temperature: self.sampling_temperature,
                    n: self.cfg.self_consistency_samples,
                    logprobs: self.logprobs,
                })?;
                let mut raw_text = String::new();
                let parsed: Vec<LmResponse> = samples
                    .into_iter()
                    .filter_map(|c| {
                        raw_text = c.text.clone();
                        parse_response(self.task, &c.text, c.token_logprobs).ok()
                    })
                    .collect();
                if parsed.is_empty() {
                    return Err(Error::ParseFailure { raw: raw_text });
                }
                let answers: Vec<&str> = parsed.iter().map(|r| r.prediction.as_str()).collect();
                let (majority, share) = self_consistency(&answers, self.task)?;
                let used = answers.len();
                let key = normalize_answer(self.task, &majority);
                let resp = parsed
                    .into_iter()
                    .find(|r| normalize_answer(self.task, &r.prediction) == key)
                    .expect("majority answer comes from a sample");
                let report = ConfidenceReport::new(ScorerKind::SelfConsistency, share, share, used)?;
                Ok((resp, report))
            }
            ScorerKind::BackTranslation => {
                let embedder = self
                    .embedder
                    .ok_or_else(|| Error::config("back-translation scoring needs an embedder"))?;
                let resp = self.first(&single)?;
                let report = back_translation_confidence(&ex.input, &resp.prediction, self.lm, embedder, self.task)?;
                Ok((resp, report))
            }
        }
    }

    /// One example with retries. Only configuration and I/O problems are
    /// returned as errors; everything else becomes a skip record.
    pub fn annotate_one(&self, ex: &Example, demos: &DemoSet, iteration: u32) -> Result<Outcome> {
        let prompt = render_prompt(self.task, demos, &ex.input)?;
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.score(&prompt, ex) {
                Ok((resp, report)) => {
                    return Ok(Outcome::Annotated(PseudoDemonstration {
                        example_id: ex.id.clone(),
                        input: ex.input.clone(),
                        prediction: resp.prediction,
                        rationale: resp.rationale,
                        confidence: report.confidence,
                        scorer: report.scorer,
                        iteration,
                        created_by: self.lm.identity().to_string(),
                    }))
                }
                Err(e) if is_fatal(&e) => return Err(e),
                Err(e) => {
                    log::debug!("{}: attempt {attempt}/{attempts} failed: {e}", ex.id);
                    last = e.to_string();
                }
            }
        }
        log::warn!("skipping {} after {attempts} attempts: {last}", ex.id);
        Ok(Outcome::Skipped(SkipRecord {
            example_id: ex.id.clone(),
            reason: last,
            attempts,
            iteration,
        }))
    }

    /// Annotates `examples` against a fixed demonstration set. Outcomes
    /// already in the journal are reused; new ones are committed in input
    /// order, `commit_batch` at a time.
    pub fn annotate_chunk(
        &self,
        examples: &[&Example],
        demos: &DemoSet,
        iteration: u32,
        journal: &mut dyn Journal,
    ) -> Result<Annotation> {
        let mut out = Annotation::default();
        for batch in examples.chunks(self.cfg.commit_batch) {
            let cached: Vec<Option<Outcome>> = batch.iter().map(|e| journal.lookup(&e.id)).collect();
            let fresh: Vec<Result<Option<Outcome>>> = self.pool.install(|| {
                batch
                    .par_iter()
                    .zip(cached.par_iter())
                    .map(|(ex, hit)| match hit {
                        Some(_) => Ok(None),
                        None => self.annotate_one(ex, demos, iteration).map(Some),
                    })
                    .collect()
            });
            let mut new = Vec::new();
            let mut merged = Vec::with_capacity(batch.len());
            for (hit, f) in cached.into_iter().zip(fresh) {
                match (hit, f?) {
                    (Some(o), _) => merged.push(o),
                    (None, Some(o)) => {
                        new.push(o.clone());
                        merged.push(o);
                    }
                    (None, None) => unreachable!("uncached example without outcome"),
                }
            }
            if !new.is_empty() {
                journal.commit(&new)?;
            }
            for o in merged {
                out.push(o);
            }
        }
        Ok(out)
    }

    /// Single pass over `unlabeled` with the ground-truth demonstrations.
    pub fn naive_semi_icl(
        &self,
        unlabeled: &[Example],
        gt_demos: &DemoSet,
        journal: &mut dyn Journal,
    ) -> Result<Annotation> {
        let refs: Vec<&Example> = unlabeled.iter().collect();
        let out = self.annotate_chunk(&refs, gt_demos, 0, journal)?;
        if out.pseudo.is_empty() && !unlabeled.is_empty() {
            log::warn!("every example was skipped; no pseudo-demonstrations produced");
        }
        Ok(out)
    }

    /// The iterative curriculum loop.
    ///
    /// Each iteration caps the kept set at kappa (drawing the most confident
    /// items from everything annotated so far), samples a chunk of at most
    /// `chunk_size` remaining examples close to the annotated ones, annotates
    /// it with ground truth plus kept pseudo-demonstrations, and keeps the
    /// chunk's confident part. `embedder` supplies the sampler's geometry.
    pub fn iter_psd(
        &self,
        unlabeled: &[Example],
        gt_demos: &DemoSet,
        embedder: &dyn Embedder,
        journal: &mut dyn Journal,
    ) -> Result<IterPsdRun> {
        self.iter_psd_observed(unlabeled, gt_demos, embedder, journal, &mut |_| Ok(()))
    }

    /// [`Annotator::iter_psd`], calling `observe` after every iteration.
    pub fn iter_psd_observed(
        &self,
        unlabeled: &[Example],
        gt_demos: &DemoSet,
        embedder: &dyn Embedder,
        journal: &mut dyn Journal,
        observe: &mut dyn FnMut(&IterationSnapshot) -> Result<()>,
    ) -> Result<IterPsdRun> {
        let mut table = EmbeddingTable::new();
        let gt_examples: Vec<Example> = gt_demos
            .iter()
            .map(|d| Example::new(d.example_id.clone(), d.input.clone()))
            .collect();
        self.pool.install(|| {
            table.fill(&gt_examples, embedder)?;
            table.fill(unlabeled, embedder)
        })?;
        self.iter_psd_with_table(unlabeled, gt_demos, &table, journal, observe)
    }

    /// [`Annotator::iter_psd`] with precomputed embeddings for every
    /// ground-truth and unlabeled id.
    pub fn iter_psd_with_table(
        &self,
        unlabeled: &[Example],
        gt_demos: &DemoSet,
        table: &EmbeddingTable,
        journal: &mut dyn Journal,
        observe: &mut dyn FnMut(&IterationSnapshot) -> Result<()>,
    ) -> Result<IterPsdRun> {
        let mut run = IterPsdRun::default();
        let mut remaining: Vec<&Example> = unlabeled.iter().collect();
        let gt_vectors: Vec<&[f64]> = gt_demos
            .iter()
            .map(|d| table.get(&d.example_id))
            .collect::<Result<_>>()?;
        let filter = self.cfg.filter_mode();
        let mut iteration: u32 = 0;
        while !remaining.is_empty() {
            let kept_before_cap = run.kept.len();
            if let Some(kappa) = self.cfg.kappa.limit() {
                if run.kept.len() > kappa {
                    run.kept = top_kappa(&run.all, kappa);
                }
            }

            let mut annotated = gt_vectors.clone();
            for p in &run.kept {
                annotated.push(table.get(&p.example_id)?);
            }
            let pool: Vec<(&str, &[f64])> = remaining
                .iter()
                .map(|e| Ok((e.id.as_str(), table.get(&e.id)?)))
                .collect::<Result<_>>()?;
            let k = self.cfg.chunk_size.min(remaining.len());
            let mut epsilon = self.cfg.epsilon;
            if annotated.is_empty() && split_budget(k, epsilon).1 > 0 {
                log::info!("iteration {iteration}: nothing annotated yet, drawing the chunk uniformly");
                epsilon = 1.0;
            }
            let seed = keyed_rng(self.cfg.seed, &[b"iteration", &iteration.to_le_bytes()]).next_u64();
            let picked = epsilon_random_sampler(&annotated, &pool, k, epsilon, self.cfg.sampler, seed)?;
            let chunk: Vec<&Example> = picked.iter().map(|&j| remaining[j]).collect();

            let mut demos = gt_demos.clone();
            demos.extend_pseudo(&run.kept)?;
            let out = self.annotate_chunk(&chunk, &demos, iteration, journal)?;
            let chunk_kept = chunk_filter(&out.pseudo, filter)?;

            let taken: HashSet<&str> = chunk.iter().map(|e| e.id.as_str()).collect();
            remaining.retain(|e| !taken.contains(e.id.as_str()));
            let snapshot = IterationSnapshot {
                iteration,
                kept_before_cap,
                kept: demos.len() - gt_demos.len(),
                chunk: chunk.len(),
                annotated: out.pseudo.len(),
                skipped: out.skips.len(),
                chunk_kept: chunk_kept.len(),
                remaining: remaining.len(),
            };
            observe(&snapshot)?;
            run.snapshots.push(snapshot);
            log::info!(
                "iteration {iteration}: {} annotated, {} skipped, {} kept, {} remaining",
                out.pseudo.len(),
                out.skips.len(),
                chunk_kept.len(),
                remaining.len()
            );
            run.kept.extend(chunk_kept);
            run.all.extend(out.pseudo);
            run.skips.extend(out.skips);
            iteration += 1;
        }
        Ok(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, SimLm, SimParams};
    use crate::embed::HashEmbedder;
    use std::collections::HashMap;

    fn psd(id: &str, confidence: f64, iteration: u32) -> PseudoDemonstration {
        PseudoDemonstration {
            example_id: id.into(),
            input: id.into(),
            prediction: "p".into(),
            rationale: None,
            confidence,
            scorer: ScorerKind::Verbalized,
            iteration,
            created_by: "t".into(),
        }
    }

    fn fixture(n: usize) -> (TaskSpec, Vec<Example>, SimLm) {
        let task = TaskSpec::classification(["red", "green", "blue"]);
        let labels = ["red", "green", "blue"];
        let examples: Vec<Example> = (0..n)
            .map(|i| Example::labeled(format!("u{i}"), format!("[id:u{i}] item {i}"), labels[i % 3]))
            .collect();
        let truth = examples.iter().map(|e| (e.id.clone(), e.gold.clone().unwrap())).collect();
        let lm = SimLm::new(task.clone(), SimParams::default(), truth, HashMap::new()).unwrap();
        (task, examples, lm)
    }

    #[test]
    fn kappa_parsing() {
        assert_eq!("inf".parse::<Kappa>().unwrap(), Kappa::Unbounded);
        assert_eq!("12".parse::<Kappa>().unwrap(), Kappa::Finite(12));
        assert!("x".parse::<Kappa>().is_err());
        let v: AnnotateConfig = toml::from_str("kappa = \"inf\"\nthreshold = { fixed = 0.5 }").unwrap();
        assert_eq!((v.kappa, v.threshold), (Kappa::Unbounded, ThresholdMode::Fixed(0.5)));
        let v: AnnotateConfig = toml::from_str("kappa = 7\nthreshold = \"per-chunk\"").unwrap();
        assert_eq!((v.kappa, v.threshold), (Kappa::Finite(7), ThresholdMode::PerChunk));
    }

    #[test]
    fn config_validation() {
        assert!(AnnotateConfig::default().validate().is_ok());
        for bad in [
            AnnotateConfig { epsilon: 1.2, ..Default::default() },
            AnnotateConfig { keep_fraction: 0.0, ..Default::default() },
            AnnotateConfig { chunk_size: 0, ..Default::default() },
            AnnotateConfig { kappa: Kappa::Finite(0), ..Default::default() },
            AnnotateConfig { threshold: ThresholdMode::Fixed(2.0), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn top_kappa_ties() {
        let all = [psd("b", 0.9, 1), psd("a", 0.9, 1), psd("c", 0.9, 0), psd("d", 0.1, 0)];
        let top = top_kappa(&all, 2);
        assert_eq!(top.iter().map(|p| p.example_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
    }

    #[test]
    fn naive_empty_and_deterministic() {
        let (task, ex, lm) = fixture(100);
        let ann = Annotator::new(&task, &lm, AnnotateConfig::default()).unwrap();
        let empty = ann.naive_semi_icl(&[], &DemoSet::new(), &mut MemoryJournal::new()).unwrap();
        assert!(empty.pseudo.is_empty() && empty.skips.is_empty());
        let a = ann.naive_semi_icl(&ex, &DemoSet::new(), &mut MemoryJournal::new()).unwrap();
        assert_eq!(a.pseudo.len(), 100);
        assert!(a.pseudo.iter().all(|p| (0.0..=1.0).contains(&p.confidence) && p.iteration == 0));
        let one_thread = AnnotateConfig { max_inflight: 1, commit_batch: 7, ..Default::default() };
        let b = Annotator::new(&task, &lm, one_thread)
            .unwrap()
            .naive_semi_icl(&ex, &DemoSet::new(), &mut MemoryJournal::new())
            .unwrap();
        assert_eq!(a, b);
        let ids: Vec<&str> = a.pseudo.iter().map(|p| p.example_id.as_str()).collect();
        let want: Vec<&str> = ex.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, want);
    }

    struct Garbage;

    impl LanguageModel for Garbage {
        fn identity(&self) -> &str {
            "garbage"
        }

        fn complete(&self, _: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
            Ok(vec![Completion {
                text: "no idea".into(),
                token_logprobs: None,
            }])
        }
    }

    #[test]
    fn unparseable_backend_skips_everything() {
        let (task, ex, _) = fixture(100);
        let ann = Annotator::new(&task, &Garbage, AnnotateConfig::default()).unwrap();
        let out = ann.naive_semi_icl(&ex, &DemoSet::new(), &mut MemoryJournal::new()).unwrap();
        assert!(out.pseudo.is_empty());
        assert_eq!(out.skips.len(), 100);
        assert!(out.skips.iter().all(|s| s.attempts == 3));
    }

    #[test]
    fn journal_hits_are_not_recomputed() {
        let (task, ex, _) = fixture(3);
        let mut journal = MemoryJournal::new();
        journal.commit(&[Outcome::Annotated(psd("u1", 0.5, 0))]).unwrap();
        let ann = Annotator::new(&task, &Garbage, AnnotateConfig::default()).unwrap();
        let out = ann.naive_semi_icl(&ex, &DemoSet::new(), &mut journal).unwrap();
        assert_eq!(out.pseudo, vec![psd("u1", 0.5, 0)]);
        assert_eq!(out.skips.len(), 2);
        assert_eq!(journal.outcomes().len(), 3);
    }

    #[test]
    fn iter_psd_iterations_and_conservation() {
        let (task, ex, lm) = fixture(25);
        let cfg = AnnotateConfig { chunk_size: 10, kappa: Kappa::Finite(3), keep_fraction: 0.5, ..Default::default() };
        let gt = DemoSet::from_ground_truth(&[Example::labeled("g0", "[id:g0] seed", "red")]).unwrap();
        let ann = Annotator::new(&task, &lm, cfg).unwrap();
        let run = ann.iter_psd(&ex, &gt, &HashEmbedder::new(8, 1), &mut MemoryJournal::new()).unwrap();
        assert_eq!(run.snapshots.len(), 3);
        assert_eq!(run.all.len() + run.skips.len(), 25);
        let iters: HashSet<u32> = run.all.iter().map(|p| p.iteration).collect();
        assert_eq!(iters, HashSet::from([0, 1, 2]));
        assert!(run.snapshots.iter().all(|s| s.kept <= 3));
        assert_eq!(run.snapshots[1].kept_before_cap, 5);
    }

    #[test]
    fn iter_psd_reduces_to_naive() {
        let (task, ex, lm) = fixture(40);
        let cfg = AnnotateConfig { epsilon: 1.0, kappa: Kappa::Unbounded, chunk_size: 40, ..Default::default() };
        let ann = Annotator::new(&task, &lm, cfg).unwrap();
        let gt = DemoSet::new();
        let naive = ann.naive_semi_icl(&ex, &gt, &mut MemoryJournal::new()).unwrap();
        let iter = ann.iter_psd(&ex, &gt, &HashEmbedder::new(8, 1), &mut MemoryJournal::new()).unwrap();
        assert_eq!(naive.pseudo, iter.all);
    }

    #[test]
    fn final_pool_is_global_percentile() {
        let all = [psd("a", 0.1, 0), psd("b", 0.9, 0), psd("c", 0.5, 1)];
        let kept = final_pool(&all, 0.5).unwrap();
        assert_eq!(kept.iter().map(|p| p.example_id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert!(final_pool(&[], 0.1).unwrap().is_empty());
    }
}
