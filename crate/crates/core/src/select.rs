//! Choosing pseudo-demonstrations for the final prompt and running
//! inference with ground-truth plus pseudo demonstrations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{CompletionRequest, LanguageModel};
use crate::embed::{kmeans, ranked_members, Embedder, KMeansConfig};
use crate::error::{Error, Result};
use crate::parse::{normalize_answer, parse_response};
use crate::prompt::{prompt_hash, render_prompt};
use crate::task::{TaskFamily, TaskSpec};
use crate::types::{DemoSet, Example, LmResponse, PseudoDemonstration};
use crate::util::keyed_rng;

/// Classification pools: round-robin over predicted labels (largest group
/// first, ties by label), most confident member first. Returns pool indices.
fn label_round_robin(pool: &[PseudoDemonstration], n: usize, task: &TaskSpec) -> Vec<usize> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in pool.iter().enumerate() {
        groups.entry(normalize_answer(task, &p.prediction)).or_default().push(i);
    }
    let mut groups: Vec<(String, Vec<usize>)> = groups.into_iter().collect();
    // stable sort: equal sizes keep the BTreeMap's lexicographic order
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    for (_, members) in &mut groups {
        members.sort_by(|&a, &b| pool[b].confidence.total_cmp(&pool[a].confidence));
    }
    round_robin(groups.into_iter().map(|(_, m)| m).collect(), n)
}

fn round_robin<T: Copy>(lists: Vec<Vec<T>>, n: usize) -> Vec<T> {
    let mut picked = Vec::with_capacity(n);
    let mut depth = 0;
    while picked.len() < n {
        let mut any = false;
        for list in &lists {
            if let Some(&x) = list.get(depth) {
                any = true;
                picked.push(x);
                if picked.len() == n {
                    break;
                }
            }
        }
        if !any {
            break;
        }
        depth += 1;
    }
    picked
}

/// Other families: k-means with `k = n`, the member nearest each centroid
/// first, then the next-nearest of every cluster in turn.
fn cluster_round_robin(
    pool: &[PseudoDemonstration],
    n: usize,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<usize>> {
    let ids: Vec<String> = pool.iter().map(|p| p.example_id.clone()).collect();
    let vectors: Vec<Vec<f64>> = pool
        .par_iter()
        .map(|p| embedder.embed_example(&p.example_id, &p.input).map(|v| v.values))
        .collect::<Result<_>>()?;
    let clustering = kmeans(&ids, &vectors, &KMeansConfig::new(n.min(pool.len()), seed))?;
    let position: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let ranked: Vec<Vec<usize>> = ranked_members(&clustering, &vectors)
        .into_iter()
        .map(|members| members.iter().map(|id| position[id.as_str()]).collect())
        .collect();
    Ok(round_robin(ranked, n))
}

/// Picks `n` demonstrations spread over the pool.
///
/// Classification spreads evenly over predicted labels; other families
/// spread over embedding clusters. `n >= |pool|` returns the whole pool in
/// pool order. Ids never repeat.
pub fn diverse_sample(
    pool: &[PseudoDemonstration],
    n: usize,
    task: &TaskSpec,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<DemoSet> {
    if pool.is_empty() {
        return Err(Error::degenerate("cannot sample from an empty pseudo-demonstration pool"));
    }
    if n == 0 {
        return Err(Error::config("diverse_sample needs n >= 1"));
    }
    let picked: Vec<usize> = if n >= pool.len() {
        (0..pool.len()).collect()
    } else if task.task_family == TaskFamily::Classification {
        label_round_robin(pool, n, task)
    } else {
        cluster_round_robin(pool, n, embedder, seed)?
    };
    let mut set = DemoSet::new();
    set.extend_pseudo(picked.into_iter().map(|i| &pool[i]))?;
    Ok(set)
}

/// Ground-truth demonstrations followed by `n_psd` diverse pseudo ones.
pub fn build_demos(
    gt_demos: &DemoSet,
    pool: &[PseudoDemonstration],
    n_psd: usize,
    task: &TaskSpec,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<DemoSet> {
    if n_psd == 0 {
        return Ok(gt_demos.clone());
    }
    // a pseudo-demonstration can never duplicate a ground-truth item
    let pool: Vec<PseudoDemonstration> = pool
        .iter()
        .filter(|p| !gt_demos.contains(&p.example_id))
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::config(format!(
            "n_psd = {n_psd} requested but the pseudo-demonstration pool is empty"
        )));
    }
    gt_demos.concat(&diverse_sample(&pool, n_psd, task, embedder, seed)?)
}

/// One inference call with an already assembled demonstration set.
pub fn infer_with_demos(
    x: &Example,
    demos: &DemoSet,
    task: &TaskSpec,
    lm: &dyn LanguageModel,
    temperature: f64,
    retries: u32,
) -> Result<(String, LmResponse)> {
    let prompt = render_prompt(task, demos, &x.input)?;
    let mut last = None;
    for _ in 0..=retries {
        let req = CompletionRequest {
            temperature,
            ..CompletionRequest::greedy(&prompt)
        };
        let result = lm.complete(&req).and_then(|c| {
            let c = c
                .into_iter()
                .next()
                .ok_or_else(|| Error::Protocol("backend returned no completion".into()))?;
            parse_response(task, &c.text, c.token_logprobs)
        });
        match result {
            Ok(resp) => return Ok((prompt, resp)),
            Err(e @ (Error::Config(_) | Error::Io { .. })) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Prompts once with ground truth plus `n_psd` sampled pseudo-demonstrations.
#[allow(clippy::too_many_arguments)]
pub fn semi_supervised_infer(
    x: &Example,
    gt_demos: &DemoSet,
    psd_pool: &[PseudoDemonstration],
    n_psd: usize,
    task: &TaskSpec,
    lm: &dyn LanguageModel,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<LmResponse> {
    let demos = build_demos(gt_demos, psd_pool, n_psd, task, embedder, seed)?;
    infer_with_demos(x, &demos, task, lm, 0.0, 0).map(|(_, r)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub example_id: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub prompt_hash: String,
    pub n_gt: usize,
    pub n_psd: usize,
    /// Set when no prediction could be obtained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub n_psd: usize,
    pub seed: u64,
    pub temperature: f64,
    pub retries: u32,
    pub max_inflight: usize,
    /// Draw a fresh pseudo-demonstration sample for every query instead of
    /// one per run.
    pub resample_per_query: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            n_psd: 0,
            seed: 0,
            temperature: 0.0,
            retries: 2,
            max_inflight: 8,
            resample_per_query: false,
        }
    }
}

/// Runs inference over `test` with bounded parallelism. Records come back in
/// test order; an example that fails after retries gets an `error` record.
pub fn infer_all(
    test: &[Example],
    gt_demos: &DemoSet,
    psd_pool: &[PseudoDemonstration],
    task: &TaskSpec,
    lm: &dyn LanguageModel,
    embedder: &dyn Embedder,
    cfg: &InferenceConfig,
) -> Result<Vec<InferenceRecord>> {
    let shared = if cfg.resample_per_query {
        None
    } else {
        Some(build_demos(gt_demos, psd_pool, cfg.n_psd, task, embedder, cfg.seed)?)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_inflight.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let n_gt = gt_demos.len();
    pool.install(|| {
        test.par_iter()
            .map(|x| {
                let demos = match &shared {
                    Some(d) => d.clone(),
                    None => {
                        let seed = rand::RngCore::next_u64(&mut keyed_rng(cfg.seed, &[b"query", x.id.as_bytes()]));
                        build_demos(gt_demos, psd_pool, cfg.n_psd, task, embedder, seed)?
                    }
                };
                let n_psd = demos.len() - n_gt;
                let hash_of = |demos: &DemoSet| render_prompt(task, demos, &x.input).map(|p| prompt_hash(&p));
                Ok(match infer_with_demos(x, &demos, task, lm, cfg.temperature, cfg.retries) {
                    Ok((prompt, resp)) => InferenceRecord {
                        example_id: x.id.clone(),
                        prediction: resp.prediction,
                        rationale: resp.rationale,
                        confidence: resp.verbalized_confidence,
                        prompt_hash: prompt_hash(&prompt),
                        n_gt,
                        n_psd,
                        error: None,
                    },
                    Err(e @ (Error::Config(_) | Error::Io { .. })) => return Err(e),
                    Err(e) => InferenceRecord {
                        example_id: x.id.clone(),
                        prediction: String::new(),
                        rationale: None,
                        confidence: None,
                        prompt_hash: hash_of(&demos)?,
                        n_gt,
                        n_psd,
                        error: Some(e.to_string()),
                    },
                })
            })
            .collect()
    })
}
