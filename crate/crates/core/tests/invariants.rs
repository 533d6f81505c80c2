use proptest::prelude::*;
use rand::Rng;

use snuffy_core::attention::{
    dense_masked_oracle, mask_from_sets, sparse_head, stack_forward, stack_forward_masked,
    BlockParams, BlockShape, HeadWeights,
};
use snuffy_core::data::{kfold_plan, synth_generate, SynthConfig};
use snuffy_core::metrics::{ece, roc_auc, ScoredSample};
use snuffy_core::patterns::{
    build_snuffy_patterns, coverage_threshold, verify_universal, PatternSet, UnionGraph,
};
use snuffy_core::pooling::{
    max_pool_bag, select_top_lambda, snuffy_forward, RandomSource, SnuffyHyper, SnuffyModel,
};
use snuffy_core::rng;
use snuffy_core::training::{adamw_step, AdamWConfig, AdamWState, GradientSet, Parameterized};
use snuffy_core::Matrix;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, &[7]);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng::stream(seed, &[3]));
    p
}

/// All pairs, ties counted as one half.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Bins by explicit interval membership.
fn ece_by_intervals(samples: &[ScoredSample], m: usize) -> f64 {
    let n = samples.len() as f64;
    let mut total = 0.0;
    for b in 1..=m {
        let (lo, hi) = ((b - 1) as f64 / m as f64, b as f64 / m as f64);
        let members: Vec<&ScoredSample> = samples
            .iter()
            .filter(|s| {
                let c = s.score.max(1.0 - s.score);
                (c > lo && c <= hi) || (b == 1 && c == 0.0)
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members
            .iter()
            .filter(|s| u8::from(s.score >= 0.5) == s.label)
            .count() as f64
            / k;
        let conf = members
            .iter()
            .map(|s| s.score.max(1.0 - s.score))
            .sum::<f64>()
            / k;
        total += k / n * (acc - conf).abs();
    }
    total
}

fn small_model(
    d: usize,
    lambda_top: usize,
    lambda_r: usize,
    layers: usize,
    seed: u64,
) -> SnuffyModel {
    let mut hyper = SnuffyHyper::new(d, lambda_top, lambda_r, layers, 2);
    hyper.d_ff = 2 * d;
    SnuffyModel::init(hyper, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn built_patterns_respect_the_definition(n in 1usize..40, top in 0usize..6, r in 0usize..10, layers in 1usize..5, seed: u64) {
        let top = top.min(n);
        let r = r.min(n - top);
        let top_set: Vec<usize> = (0..top).map(|i| (i * 7) % n).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let r = r.min(n - top_set.len());
        let ps = build_snuffy_patterns(n, &top_set, r, layers, seed).unwrap();
        for l in 0..layers {
            let rs = ps.random_set(l);
            prop_assert_eq!(rs.len(), r);
            prop_assert!(rs.iter().all(|k| !top_set.contains(k)));
            let global = ps.global_set(l);
            for k in 0..n {
                let set = ps.attend_set(l, k).unwrap();
                prop_assert!(set.contains(&k));
                let expect = if global.contains(&k) { n } else { global.len() + usize::from(!global.contains(&k)) };
                prop_assert_eq!(set.len(), expect);
            }
        }
        // the same seed reproduces the same pattern
        prop_assert_eq!(ps, build_snuffy_patterns(n, &top_set, r, layers, seed).unwrap());
    }

    #[test]
    fn coverage_above_threshold_is_universal(n in 2usize..=12, layers in 1usize..4, seed: u64) {
        let need = coverage_threshold(n);
        let r = need.div_ceil(layers).max(1).min(n - 1);
        let ps = build_snuffy_patterns(n, &[0], r, layers, seed).unwrap();
        let report = verify_universal(&ps);
        prop_assert!(report.self_loops_ok);
        if ps.coverage() >= need {
            prop_assert!(report.hamiltonian_ok);
            prop_assert!(report.strongly_connected_ok);
            let path = UnionGraph::from_patterns(&ps).hamiltonian_path().unwrap().unwrap();
            let g = UnionGraph::from_patterns(&ps);
            for w in path.windows(2) {
                prop_assert!(g.has_edge(w[1], w[0]), "{:?}", path);
            }
        }
    }

    #[test]
    fn sparse_head_matches_dense_oracle(n in 1usize..24, d in 1usize..8, top in 1usize..4, r in 0usize..6, seed: u64) {
        let top = top.min(n);
        let top_set: Vec<usize> = (0..top).collect();
        let r = r.min(n - top);
        let ps = build_snuffy_patterns(n, &top_set, r, 1, seed).unwrap();
        let x = random_matrix(d, n, seed);
        let w = HeadWeights::random(d, 3, 2, &mut rng::stream(seed, &[1]));
        let layer = ps.layer(0);
        let sparse = sparse_head(&x, &w, &layer, false).unwrap();
        let dense = dense_masked_oracle(&x, &w, &mask_from_sets(&layer), false).unwrap();
        prop_assert!(sparse.max_abs_diff(&dense) <= 1e-10);
    }

    #[test]
    fn stack_matches_dense_oracle(n in 1usize..20, layers in 1usize..4, seed: u64) {
        let d = 4;
        let ps = build_snuffy_patterns(n, &[0], (n - 1).min(2), layers, seed).unwrap();
        let blocks: Vec<BlockParams> = (0..layers)
            .map(|l| BlockParams::random(BlockShape::standard(d, 2), &mut rng::stream(seed, &[2, l as u64])))
            .collect();
        let masks: Vec<_> = (0..layers).map(|l| mask_from_sets(&ps.layer(l))).collect();
        let x = random_matrix(d, n, seed ^ 1);
        let a = stack_forward(&x, &blocks, &ps, true).unwrap();
        let b = stack_forward_masked(&x, &blocks, &masks, true).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-10);
    }

    #[test]
    fn bag_prob_is_permutation_invariant(n in 1usize..16, seed: u64) {
        let d = 3;
        let m = small_model(d, 3, 2, 2, seed);
        let x = random_matrix(d, n, seed);
        let out = snuffy_forward(&x, &m, &RandomSource::Seeded(seed)).unwrap();
        let perm = permutation(n, seed);
        let mut cols = vec![Vec::new(); n];
        for k in 0..n {
            cols[perm[k]] = x.col(k).to_vec();
        }
        let xp = Matrix::from_columns(&cols).unwrap();
        let moved = out.pattern_set.relabeled(&perm).unwrap();
        let sets = moved.layers().iter().map(|l| l.random_set.clone()).collect();
        let outp = snuffy_forward(&xp, &m, &RandomSource::Fixed(sets)).unwrap();
        prop_assert!((out.bag_prob - outp.bag_prob).abs() <= 1e-12);
        for (k, &p) in perm.iter().enumerate() {
            prop_assert_eq!(out.instance_probs[k], outp.instance_probs[p]);
        }
    }

    #[test]
    fn outputs_are_probabilities_and_shift_stable(n in 1usize..16, shift in -5.0f64..5.0, seed: u64) {
        let d = 3;
        let m = small_model(d, 2, 3, 1, seed);
        let x = random_matrix(d, n, seed);
        let out = snuffy_forward(&x, &m, &RandomSource::Seeded(1)).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.bag_prob));
        prop_assert!(out.instance_probs.iter().all(|p| (0.0..=1.0).contains(p)));
        let logits: Vec<f64> = (0..n).map(|k| m.max_branch.apply(x.col(k))).collect();
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        prop_assert_eq!(select_top_lambda(&logits, 2), select_top_lambda(&shifted, 2));
        prop_assert_eq!(max_pool_bag(&logits).unwrap().1, max_pool_bag(&shifted).unwrap().1);
        let (mx, _) = max_pool_bag(&logits).unwrap();
        prop_assert!(logits.iter().all(|&z| mx >= z));
    }

    #[test]
    fn full_globals_equal_dense_attention(n in 1usize..10, seed: u64) {
        let d = 3;
        let m = small_model(d, 3, 10, 2, seed);
        let x = random_matrix(d, n, seed);
        let out = snuffy_forward(&x, &m, &RandomSource::Seeded(seed)).unwrap();
        let full = vec![vec![true; n]; n];
        let dense = stack_forward_masked(&x, &m.blocks, &[full.clone(), full], true).unwrap();
        let sparse = stack_forward(&x, &m.blocks, &out.pattern_set, true).unwrap();
        prop_assert!(sparse.max_abs_diff(&dense) <= 1e-10);
    }

    #[test]
    fn auc_matches_pairwise_count(scores in prop::collection::vec(0u8..6, 2..40), labels in prop::collection::vec(0u8..2, 2..40)) {
        let n = scores.len().min(labels.len());
        let s: Vec<f64> = scores[..n].iter().map(|&v| f64::from(v) / 5.0).collect();
        let y = &labels[..n];
        match (roc_auc(&s, y), pairwise_auc(&s, y)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn ece_matches_interval_binning(raw in prop::collection::vec((0u16..=1000, 0u8..2), 1..60), m in 1usize..15) {
        let samples: Vec<ScoredSample> = raw.iter().map(|&(s, y)| ScoredSample::new(f64::from(s) / 1000.0, y)).collect();
        let a = ece(&samples, m).unwrap();
        prop_assert!((a - ece_by_intervals(&samples, m)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn kfold_partitions_every_fold(n_bags in 10usize..60, k in 2usize..6, seed: u64) {
        let labels: Vec<u8> = (0..n_bags).map(|i| u8::from(i % 3 == 0)).collect();
        let plan = kfold_plan(&labels, k, 2, 0.2, seed).unwrap();
        for f in &plan.folds {
            let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n_bags).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_step_adamw_keeps_parameters(seed: u64) {
        let m0 = small_model(3, 1, 1, 1, seed);
        let mut m = m0.clone();
        let grads = GradientSet::from_model(&m.zeros_like());
        let mut st = AdamWState::new(&m);
        adamw_step(&mut m, &grads, &mut st, &AdamWConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
        prop_assert_eq!(m, m0);
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let cfg = SynthConfig {
        n_bags: 12,
        k_min: 3,
        k_max: 9,
        dim: 4,
        witness_rate: 0.2,
        separation: 2.0,
        seed: 5,
    };
    assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
}

#[test]
fn pattern_parts_reject_overlap() {
    assert!(PatternSet::from_parts(4, vec![0, 1], vec![vec![1]]).is_err());
    assert!(PatternSet::from_parts(4, vec![0], vec![vec![4]]).is_err());
}
