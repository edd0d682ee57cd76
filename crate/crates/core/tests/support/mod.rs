//! Brute-force reference implementations and a seeded instance runner shared
//! by the oracle and acceptance targets.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semicl_core::confidence::{entropy_nll, percentile_threshold, self_consistency};
use semicl_core::embed::{cosine_similarity, kmeans, EmbeddingVector, HashEmbedder, KMeansConfig};
use semicl_core::metrics::chrf_pp;
use semicl_core::parse::normalize_answer;
use semicl_core::select::diverse_sample;
use semicl_core::{PseudoDemonstration, ScorerKind, TaskSpec};

pub fn psd(id: String, prediction: &str, confidence: f64, iteration: u32) -> PseudoDemonstration {
    PseudoDemonstration {
        input: format!("text of {id}"),
        example_id: id,
        prediction: prediction.to_string(),
        rationale: None,
        confidence,
        scorer: ScorerKind::Verbalized,
        iteration,
        created_by: "oracle".into(),
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= rel * scale || (a - b).abs() < 1e-12
}

pub fn ref_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Geometric-mean surprisal: `-ln(prod p)^(1/n)`.
pub fn ref_entropy_nll(lps: &[f64]) -> f64 {
    let prod: f64 = lps.iter().map(|lp| lp.exp()).product();
    -prod.powf(1.0 / lps.len() as f64).ln()
}

/// Rank of item i when sorting by score descending, ties by index.
pub fn rank_desc(scores: &[f64], i: usize) -> usize {
    (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

/// Kept indices for keeping the top `num/den` of `scores`.
pub fn ref_percentile(scores: &[f64], num: usize, den: usize) -> (f64, Vec<usize>) {
    let n = scores.len();
    let m = (num * n).div_ceil(den).clamp(1, n);
    let kept: Vec<usize> = (0..n).filter(|&i| rank_desc(scores, i) < m).collect();
    let lambda = kept.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    (lambda, kept)
}

/// Majority over normalized answers; earliest first occurrence wins ties.
pub fn ref_self_consistency(answers: &[String], task: &TaskSpec) -> (String, f64) {
    let keys: Vec<String> = answers.iter().map(|a| normalize_answer(task, a)).collect();
    let mut best = (0usize, 0usize);
    for i in 0..keys.len() {
        if keys[..i].contains(&keys[i]) {
            continue;
        }
        let c = keys.iter().filter(|k| **k == keys[i]).count();
        if c > best.1 {
            best = (i, c);
        }
    }
    (answers[best.0].trim().to_string(), best.1 as f64 / answers.len() as f64)
}

fn ref_char_ngrams(s: &str, n: usize) -> HashMap<String, usize> {
    let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
    let mut m = HashMap::new();
    for start in 0..chars.len() {
        if start + n <= chars.len() {
            *m.entry(chars[start..start + n].iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    m
}

fn ref_word_ngrams(s: &str, n: usize) -> HashMap<String, usize> {
    let words: Vec<&str> = s.split_whitespace().collect();
    let mut m = HashMap::new();
    for start in 0..words.len() {
        if start + n <= words.len() {
            *m.entry(words[start..start + n].join("\u{1}")).or_insert(0) += 1;
        }
    }
    m
}

fn ref_f2(h: &HashMap<String, usize>, r: &HashMap<String, usize>) -> Option<f64> {
    let ht: usize = h.values().sum();
    let rt: usize = r.values().sum();
    if ht == 0 && rt == 0 {
        return None;
    }
    let mut m = 0;
    for (g, c) in h {
        m += (*c).min(*r.get(g).unwrap_or(&0));
    }
    let p = if ht > 0 { m as f64 / ht as f64 } else { 0.0 };
    let rc = if rt > 0 { m as f64 / rt as f64 } else { 0.0 };
    if p == 0.0 && rc == 0.0 {
        return Some(0.0);
    }
    Some(5.0 * p * rc / (4.0 * p + rc))
}

pub fn ref_chrf(hyp: &str, reference: &str) -> f64 {
    if hyp.chars().all(char::is_whitespace) {
        return 0.0;
    }
    let mut fs = Vec::new();
    for n in 1..=6 {
        fs.extend(ref_f2(&ref_char_ngrams(hyp, n), &ref_char_ngrams(reference, n)));
    }
    for n in 1..=2 {
        fs.extend(ref_f2(&ref_word_ngrams(hyp, n), &ref_word_ngrams(reference, n)));
    }
    100.0 * fs.iter().sum::<f64>() / fs.len() as f64
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum inertia over every assignment of the points to k non-empty
/// clusters.
pub fn ref_best_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                let l = c % k;
                c /= k;
                l
            })
            .collect();
        if (0..k).any(|g| !labels.contains(&g)) {
            continue;
        }
        let mut inertia = 0.0;
        for g in 0..k {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| labels[i] == g).map(|i| &points[i]).collect();
            let mean: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            inertia += members.iter().map(|p| sq(p, &mean)).sum::<f64>();
        }
        best = best.min(inertia);
    }
    best
}

/// Label round-robin: groups by normalized prediction, larger groups first
/// (ties by label text), each group most confident first (ties by position),
/// one pick per group per round.
pub fn ref_label_sample(pool: &[PseudoDemonstration], n: usize, task: &TaskSpec) -> Vec<String> {
    if n >= pool.len() {
        return pool.iter().map(|p| p.example_id.clone()).collect();
    }
    let keys: Vec<String> = pool.iter().map(|p| normalize_answer(task, &p.prediction)).collect();
    let mut labels: Vec<String> = keys.clone();
    labels.sort();
    labels.dedup();
    let size = |l: &String| keys.iter().filter(|k| *k == l).count();
    labels.sort_by(|a, b| size(b).cmp(&size(a)).then(a.cmp(b)));
    let groups: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| {
            let mut g: Vec<usize> = (0..pool.len()).filter(|&i| &keys[i] == l).collect();
            g.sort_by(|&a, &b| pool[b].confidence.partial_cmp(&pool[a].confidence).unwrap().then(a.cmp(&b)));
            g
        })
        .collect();
    let mut out = Vec::new();
    for round in 0.. {
        if out.len() == n || groups.iter().all(|g| g.len() <= round) {
            break;
        }
        for g in &groups {
            if out.len() < n {
                if let Some(&i) = g.get(round) {
                    out.push(pool[i].example_id.clone());
                }
            }
        }
    }
    out
}

/// Outcome of one oracle family in [`oracle_suite`].
pub struct OracleTally {
    pub name: &'static str,
    pub instances: usize,
    pub mismatches: Vec<String>,
}

fn int_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-5i32..=5) as f64).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn words(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..6);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..5);
            (0..len).map(|_| (b'a' + rng.random_range(0..4u8)) as char).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn fail_if(bad: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if bad { Err(msg()) } else { Ok(()) }
}

/// Runs `instances` seeded random cases of every oracle family.
pub fn oracle_suite(instances: usize, seed: u64) -> Vec<OracleTally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut tally = |name: &'static str, check: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<(), String>| {
        let mismatches = (0..instances).filter_map(|_| check(&mut rng).err()).collect();
        out.push(OracleTally { name, instances, mismatches });
    };

    tally("entropy_nll", &mut |rng| {
        let lps: Vec<f64> = (0..rng.random_range(1..30)).map(|_| rng.random_range(0.01f64..=1.0).ln()).collect();
        let got = entropy_nll(&lps).map_err(|e| e.to_string())?;
        let want = ref_entropy_nll(&lps);
        fail_if(!rel_close(got, want, 1e-9), || format!("{lps:?}: {got} vs {want}"))
    });

    tally("self_consistency", &mut |rng| {
        let pick = ["alpha", "beta", "gamma", "delta"];
        let answers: Vec<String> = (0..rng.random_range(1..20))
            .map(|_| {
                let w = pick[rng.random_range(0..4)];
                if rng.random_bool(0.3) { format!(" {}.", w.to_uppercase()) } else { w.to_string() }
            })
            .collect();
        let task = TaskSpec::freeform();
        let got = self_consistency(&answers, &task).map_err(|e| e.to_string())?;
        let want = ref_self_consistency(&answers, &task);
        fail_if(got.0 != want.0 || !rel_close(got.1, want.1, 1e-12), || format!("{answers:?}: {got:?} vs {want:?}"))
    });

    tally("percentile_threshold", &mut |rng| {
        let scores: Vec<f64> = (0..rng.random_range(1..80)).map(|_| rng.random_range(0..=20u32) as f64 / 20.0).collect();
        let den = rng.random_range(1..=20usize);
        let num = rng.random_range(1..=den);
        let got = percentile_threshold(&scores, num as f64 / den as f64).map_err(|e| e.to_string())?;
        let want = ref_percentile(&scores, num, den);
        fail_if(got != want, || format!("{scores:?} {num}/{den}: {got:?} vs {want:?}"))
    });

    tally("cosine_similarity", &mut |rng| {
        let dim = rng.random_range(1..10);
        let (a, b) = (int_vector(rng, dim), int_vector(rng, dim));
        let got = cosine_similarity(&EmbeddingVector::new(a.clone(), "t"), &EmbeddingVector::new(b.clone(), "t")).map_err(|e| e.to_string())?;
        let want = ref_cosine(&a, &b);
        fail_if(!rel_close(got, want, 1e-9), || format!("{a:?} {b:?}: {got} vs {want}"))
    });

    tally("kmeans", &mut |rng| {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=3usize.min(n));
        let dim = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| int_vector(rng, dim)).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("k{i}")).collect();
        let got = kmeans(&ids, &points, &KMeansConfig::new(k, rng.random())).map_err(|e| e.to_string())?.inertia;
        let want = ref_best_inertia(&points, k);
        fail_if(!rel_close(got, want, 1e-9), || format!("k={k} {points:?}: {got} vs {want}"))
    });

    tally("chrf_pp", &mut |rng| {
        let h = if rng.random_bool(0.1) { String::new() } else { words(rng) };
        let r = words(rng);
        let got = chrf_pp(&h, &r).map_err(|e| e.to_string())?;
        let want = ref_chrf(&h, &r);
        fail_if(!rel_close(got, want, 1e-9), || format!("{h:?} / {r:?}: {got} vs {want}"))
    });

    tally("diverse_sample", &mut |rng| {
        let labels = ["a", "b", "c", "d", "e"];
        let task = TaskSpec::classification(labels);
        let used = rng.random_range(1..=5);
        let pool: Vec<PseudoDemonstration> = (0..rng.random_range(1..50))
            .map(|i| {
                let l = labels[rng.random_range(0..used)];
                let shown = if rng.random_bool(0.2) { l.to_uppercase() } else { l.to_string() };
                psd(format!("d{i:03}"), &shown, rng.random_range(0..=10u32) as f64 / 10.0, 0)
            })
            .collect();
        let n = rng.random_range(1..60);
        let got: Vec<String> = diverse_sample(&pool, n, &task, &HashEmbedder::new(4, 0), 0)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|d| d.example_id.clone())
            .collect();
        let want = ref_label_sample(&pool, n, &task);
        fail_if(got != want, || format!("n={n}: {got:?} vs {want:?}"))
    });
    out
}
