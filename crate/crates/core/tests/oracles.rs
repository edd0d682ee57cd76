//! Randomized checks of the numeric core against brute-force reference
//! implementations written independently of the library code.

use std::collections::BTreeSet;

use proptest::prelude::*;
use semicl_core::annotate::{epsilon_random_sampler, split_budget, top_kappa, SamplerVariant};
use semicl_core::confidence::{entropy_report, percentile_threshold, self_consistency};
use semicl_core::embed::{cosine_similarity, kmeans, EmbeddingVector, HashEmbedder, KMeansConfig};
use semicl_core::metrics::{accuracy, chrf_pp};
use semicl_core::parse::{normalize_answer, parse_confidence};
use semicl_core::select::diverse_sample;
use semicl_core::{PseudoDemonstration, TaskSpec};

mod support;

use support::{psd, rank_desc, ref_best_inertia, ref_chrf, ref_cosine, sq};

const CASES: u32 = 256;

fn config() -> ProptestConfig {
    ProptestConfig { cases: CASES, ..ProptestConfig::default() }
}

// ---- strategies ----

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    // a coarse grid makes ties common
    prop::collection::vec((0u32..=20).prop_map(|x| x as f64 / 20.0), 1..max)
}

fn vectors(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-5i32..=5, dim).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0)),
        n,
    )
    .prop_map(|vs| vs.into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn percentile_matches_rank_oracle(s in scores(60), num in 1u32..=20, den in 1u32..=20) {
        prop_assume!(num <= den);
        let f = num as f64 / den as f64;
        let (lambda, kept) = percentile_threshold(&s, f).unwrap();
        let n = s.len();
        let m = (num as usize * n).div_ceil(den as usize);
        let m = m.clamp(1, n);
        let expected: Vec<usize> = (0..n).filter(|&i| rank_desc(&s, i) < m).collect();
        prop_assert_eq!(&kept, &expected);
        let min_kept = kept.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(lambda, min_kept);
        for (i, &v) in s.iter().enumerate() {
            if !kept.contains(&i) {
                prop_assert!(v <= lambda);
            }
        }
    }

    #[test]
    fn top_kappa_matches_rank_oracle(
        items in prop::collection::vec((0u32..=10, 0u32..4), 1..40),
        kappa in 0usize..45,
    ) {
        let all: Vec<PseudoDemonstration> = items
            .iter()
            .enumerate()
            .map(|(i, &(c, it))| psd(format!("x{:03}", (i * 7919) % 1000), "p", c as f64 / 10.0, it))
            .collect();
        let got = top_kappa(&all, kappa);
        // brute force: item i survives when fewer than kappa items beat it
        let beats = |j: usize, i: usize| {
            let (a, b) = (&all[j], &all[i]);
            a.confidence > b.confidence
                || (a.confidence == b.confidence
                    && (a.iteration < b.iteration || (a.iteration == b.iteration && a.example_id < b.example_id)))
        };
        let expected: Vec<PseudoDemonstration> = (0..all.len())
            .filter(|&i| (0..all.len()).filter(|&j| beats(j, i)).count() < kappa)
            .map(|i| all[i].clone())
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn split_budget_rounds_half_up(k in 0usize..2000, pct in 0u32..=100) {
        let (r, s) = split_budget(k, pct as f64 / 100.0);
        // round(pct * k / 100), half up, in integers
        let expected = (2 * pct as usize * k + 100) / 200;
        prop_assert_eq!(r, expected);
        prop_assert_eq!(r + s, k);
    }

    #[test]
    fn similarity_sampler_matches_exhaustive_ranking(
        annotated in vectors(1..6, 4),
        pool in vectors(2..30, 4),
        k in 1usize..30,
        literal in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let ids: Vec<String> = (0..pool.len()).map(|j| format!("p{:02}", (j * 13) % 97)).collect();
        let pool_refs: Vec<(&str, &[f64])> = ids.iter().map(String::as_str).zip(pool.iter().map(Vec::as_slice)).collect();
        let ann_refs: Vec<&[f64]> = annotated.iter().map(Vec::as_slice).collect();
        let variant = if literal { SamplerVariant::Literal } else { SamplerVariant::NearestAnnotated };
        let got = epsilon_random_sampler(&ann_refs, &pool_refs, k, 0.0, variant, seed).unwrap();
        if pool.len() <= k {
            prop_assert_eq!(got, (0..pool.len()).collect::<Vec<_>>());
            return Ok(());
        }
        let d: Vec<f64> = pool
            .iter()
            .map(|x| {
                let cs = annotated.iter().map(|a| ref_cosine(a, x));
                if literal { cs.fold(f64::INFINITY, f64::min) } else { 1.0 - cs.fold(f64::NEG_INFINITY, f64::max) }
            })
            .collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(ids[a].cmp(&ids[b])));
        // skip instances whose cut falls inside a rounding-level near tie
        let gap = (d[order[k]] - d[order[k - 1]]).abs();
        prop_assume!(gap == 0.0 || gap > 1e-9);
        let mut expected: Vec<usize> = order[..k].to_vec();
        expected.sort_unstable();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn mixed_sampler_contains_similarity_part(
        annotated in vectors(1..4, 3),
        pool in vectors(10..40, 3),
        k in 1usize..10,
        pct in 0u32..=100,
        seed in any::<u64>(),
    ) {
        let eps = pct as f64 / 100.0;
        let ids: Vec<String> = (0..pool.len()).map(|j| format!("q{j:03}")).collect();
        let pool_refs: Vec<(&str, &[f64])> = ids.iter().map(String::as_str).zip(pool.iter().map(Vec::as_slice)).collect();
        let ann_refs: Vec<&[f64]> = annotated.iter().map(Vec::as_slice).collect();
        let got = epsilon_random_sampler(&ann_refs, &pool_refs, k, eps, SamplerVariant::NearestAnnotated, seed).unwrap();
        prop_assert_eq!(got.len(), k);
        prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        let again = epsilon_random_sampler(&ann_refs, &pool_refs, k, eps, SamplerVariant::NearestAnnotated, seed).unwrap();
        prop_assert_eq!(&got, &again);
        let (_, k_sim) = split_budget(k, eps);
        let sim_only = epsilon_random_sampler(&ann_refs, &pool_refs, k_sim, 0.0, SamplerVariant::NearestAnnotated, seed).unwrap();
        let set: BTreeSet<usize> = got.iter().copied().collect();
        prop_assert!(sim_only.iter().all(|j| set.contains(j)));
    }

    #[test]
    fn entropy_is_geometric_mean_probability(ps in prop::collection::vec(0.01f64..=1.0, 1..30)) {
        let lps: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
        let r = entropy_report(&lps).unwrap();
        let geo = ps.iter().product::<f64>().powf(1.0 / ps.len() as f64);
        prop_assert!((r.confidence - geo).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.confidence));
    }

    #[test]
    fn self_consistency_matches_tally(votes in prop::collection::vec(0usize..4, 1..20), upper in any::<bool>()) {
        let words = ["alpha", "beta", "gamma", "delta"];
        let answers: Vec<String> = votes
            .iter()
            .enumerate()
            .map(|(i, &v)| if upper && i % 2 == 0 { format!(" {} ", words[v].to_uppercase()) } else { words[v].to_string() })
            .collect();
        let task = TaskSpec::freeform();
        let (maj, share) = self_consistency(&answers, &task).unwrap();
        let mut counts = [0usize; 4];
        for &v in &votes { counts[v] += 1; }
        let top = *counts.iter().max().unwrap();
        let first = votes.iter().position(|&v| counts[v] == top).unwrap();
        prop_assert_eq!(maj, answers[first].trim().to_string());
        prop_assert!((share - top as f64 / votes.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn chrf_matches_reference(
        hyp in prop::collection::vec("[a-d]{1,4}", 0..6),
        reference in prop::collection::vec("[a-d]{1,4}", 1..6),
    ) {
        let h = hyp.join(" ");
        let r = reference.join(" ");
        let got = chrf_pp(&h, &r).unwrap();
        prop_assert!((got - ref_chrf(&h, &r)).abs() < 1e-9, "{got} vs {}", ref_chrf(&h, &r));
        prop_assert!((0.0..=100.0).contains(&got));
        prop_assert!((chrf_pp(&r, &r).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_counts_equivalent_pairs(pairs in prop::collection::vec((0usize..3, 0usize..3, any::<bool>()), 1..50)) {
        let labels = ["red", "green", "blue"];
        let task = TaskSpec::classification(labels);
        let preds: Vec<String> = pairs
            .iter()
            .map(|&(p, _, shout)| if shout { format!("{}.", labels[p].to_uppercase()) } else { labels[p].to_string() })
            .collect();
        let golds: Vec<&str> = pairs.iter().map(|&(_, g, _)| labels[g]).collect();
        let hits = pairs.iter().filter(|(p, g, _)| p == g).count();
        prop_assert!((accuracy(&preds, &golds, &task).unwrap() - hits as f64 / pairs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_reference(ab in vectors(2..3, 6)) {
        let (a, b) = (&ab[0], &ab[1]);
        let got = cosine_similarity(
            &EmbeddingVector::new(a.clone(), "t"),
            &EmbeddingVector::new(b.clone(), "t"),
        ).unwrap();
        prop_assert!((got - ref_cosine(a, b)).abs() < 1e-12);
    }

    #[test]
    fn confidence_tag_round_trips(c in 0.0f64..=1.0) {
        prop_assert_eq!(parse_confidence(&format!("Label: x\n**Confidence**: {c}")), Some(c));
        let pct = (c * 100.0).round();
        let got = parse_confidence(&format!("**Confidence**: {pct}%")).unwrap();
        prop_assert!((got - pct / 100.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_reaches_exhaustive_optimum_on_small_sets(points in vectors(3..8, 2), k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(k <= points.len());
        let ids: Vec<String> = (0..points.len()).map(|i| format!("k{i}")).collect();
        let c = kmeans(&ids, &points, &KMeansConfig::new(k, seed)).unwrap();
        // reported inertia is the sum of squared distances to assigned centroids
        let recomputed: f64 = ids.iter().zip(&points).map(|(id, p)| sq(p, &c.centroids[c.assignment[id]])).sum();
        prop_assert!((c.inertia - recomputed).abs() < 1e-9);
        // every point sits with its nearest centroid
        for (id, p) in ids.iter().zip(&points) {
            let own = sq(p, &c.centroids[c.assignment[id]]);
            prop_assert!(c.centroids.iter().all(|m| own <= sq(p, m) + 1e-9));
        }
        prop_assert!(c.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let best = ref_best_inertia(&points, k);
        prop_assert!(c.inertia >= best - 1e-9);
        // restarts make a miss of the optimum on these tiny sets rare; a miss
        // still has to be a local optimum, checked above
        if k == 1 {
            prop_assert!((c.inertia - best).abs() < 1e-9);
        }
    }

    #[test]
    fn label_balanced_sampling(preds in prop::collection::vec(0usize..4, 1..60), n in 1usize..70) {
        let labels = ["a", "b", "c", "d"];
        let task = TaskSpec::classification(labels);
        let pool: Vec<PseudoDemonstration> = preds
            .iter()
            .enumerate()
            .map(|(i, &l)| psd(format!("d{i:03}"), labels[l], ((i * 37) % 11) as f64 / 10.0, 0))
            .collect();
        let set = diverse_sample(&pool, n, &task, &HashEmbedder::new(8, 0), 0).unwrap();
        let ids: Vec<&str> = set.iter().map(|d| d.example_id.as_str()).collect();
        let unique: BTreeSet<&str> = ids.iter().copied().collect();
        prop_assert_eq!(ids.len(), n.min(pool.len()));
        prop_assert_eq!(unique.len(), ids.len());
        let mut size = [0usize; 4];
        let mut got = [0usize; 4];
        for &l in &preds { size[l] += 1; }
        for d in set.iter() {
            let l = labels.iter().position(|x| *x == normalize_answer(&task, &d.output)).unwrap();
            got[l] += 1;
        }
        // a label below its group size never trails another by more than one
        for a in 0..4 {
            if got[a] < size[a] {
                for b in 0..4 {
                    prop_assert!(got[b] <= got[a] + 1, "{got:?} from {size:?}");
                }
            }
        }
        // within a label the most confident members are taken
        for (l, label) in labels.iter().enumerate() {
            let mut confs: Vec<f64> = pool.iter().filter(|p| p.prediction == *label).map(|p| p.confidence).collect();
            confs.sort_by(|x, y| y.total_cmp(x));
            let chosen_min = set
                .iter()
                .filter(|d| d.output == *label)
                .map(|d| pool.iter().find(|p| p.example_id == d.example_id).unwrap().confidence)
                .fold(f64::INFINITY, f64::min);
            if got[l] > 0 && got[l] < size[l] {
                prop_assert!(chosen_min >= confs[got[l]]);
            }
        }
    }
}

#[test]
fn chrf_hand_computed_value() {
    // char orders 1 and 2 give 5/7 and 5/9, order 3 exists only in the
    // reference and scores 0, word unigrams score 0
    let expected = 100.0 * (5.0 / 7.0 + 5.0 / 9.0) / 4.0;
    assert!((chrf_pp("ab", "abc").unwrap() - expected).abs() < 1e-12);
    assert!((ref_chrf("ab", "abc") - expected).abs() < 1e-12);
}

#[test]
fn kmeans_unit_square() {
    let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
    let c = kmeans(&ids, &pts, &KMeansConfig::new(2, 0)).unwrap();
    assert!((c.inertia - ref_best_inertia(&pts, 2)).abs() < 1e-12);
    assert!((c.inertia - 1.0).abs() < 1e-12);
}
