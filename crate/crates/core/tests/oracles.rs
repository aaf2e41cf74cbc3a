mod common;

use std::collections::HashSet;

use common::*;
use rand::Rng;
use trackflow::catalog::{build_training_sequences, FeatureVector, FrameMatrix};
use trackflow::features::{generate_planted, SynthSpec};
use trackflow::rnn::{forward, loss_and_gradients, lstm_step, LstmState};
use trackflow::segmentation::{
    checkerboard_kernel, novelty_curve, segment_catalog, segment_track, self_similarity, SegmentationParams,
};
use trackflow::similarity::{cosine_distance, dcg_similarity, l2_distance, nearest_neighbour_gap, rank_candidates, Metric};
use trackflow::{Catalog, Track};

#[test]
fn lstm_step_matches_direct_formula() {
    let mut r = rng(1);
    for seed in 0..10 {
        let mut model = trackflow::rnn::init_model(2, 3, 2, seed).unwrap();
        for b in model.params.blocks_mut() {
            b.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
        }
        let x = random_vec(&mut r, 2);
        let h: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut r, 3)).collect();
        let c: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut r, 3)).collect();
        let state = LstmState { h: h.clone(), c: c.clone() };
        let (top, next) = lstm_step(&x, &state, &model.params).unwrap();
        let (oh, oc) = oracle_step(&model.params, &x, &h, &c);
        for l in 0..2 {
            for k in 0..3 {
                assert!((next.h[l][k] - oh[l][k]).abs() <= 1e-12);
                assert!((next.c[l][k] - oc[l][k]).abs() <= 1e-12);
            }
        }
        assert_eq!(top, next.h[1]);
    }
}

#[test]
fn forward_matches_two_step_oracle() {
    let mut r = rng(2);
    for seed in 0..10 {
        let mut model = trackflow::rnn::init_model(2, 3, 2, seed).unwrap();
        model.meta.context_length = 2;
        let window: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut r, 2)).collect();
        let fw: Vec<FeatureVector> = window.iter().cloned().map(FeatureVector::new).collect();
        let y = forward(&model, &fw, &[true, true]).unwrap();
        let expected = oracle_forward(&model.params, &window, &[true, true]);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
            assert!(*a > 0.0 && *a < 1.0);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..8 {
        let (model, batch) = tiny_instance(seed);
        let (loss, grads) = loss_and_gradients(&model, &batch).unwrap();
        assert!((loss - oracle_loss(&model.params, &batch)).abs() < 1e-12);
        let numeric = finite_difference_gradient(&model.params, &batch, 1e-5);
        for (a, n) in grads.blocks().iter().zip(&numeric) {
            for (&a, &n) in a.iter().zip(n) {
                assert!(relative_error(a, n) <= 1e-4, "seed {seed}: analytic {a} numeric {n}");
            }
        }
    }
}

#[test]
fn duplicated_batch_keeps_loss_and_gradients() {
    let (model, batch) = tiny_instance(77);
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
    let (l1, g1) = loss_and_gradients(&model, &batch).unwrap();
    let (l2, g2) = loss_and_gradients(&model, &doubled).unwrap();
    assert!((l1 - l2).abs() <= 1e-12);
    for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn ssm_matches_brute_force() {
    let mut r = rng(3);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut r, 6)).collect();
    let frames = FrameMatrix::new(rows.iter().cloned().map(FeatureVector::new).collect(), 0.5);
    let s = self_similarity(&frames).unwrap();
    let b = brute_ssm(&rows);
    for i in 0..5 {
        for j in 0..5 {
            assert!((s.get(i, j) - b[i][j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn kernel_matches_formula() {
    let k = checkerboard_kernel(4, 1.0).unwrap();
    let f = formula_kernel(4, 1.0);
    for u in 0..4 {
        for v in 0..4 {
            assert!((k.get(u, v) - f[u][v]).abs() <= 1e-15);
        }
    }
    // spot values: centre c = 1.5, corner (0,0) has r² = 4.5
    assert!((k.get(0, 0) - (-2.25f64).exp()).abs() < 1e-15);
    assert!((k.get(0, 3) + (-2.25f64).exp()).abs() < 1e-15);
    for size in [2, 4, 6, 16, 32] {
        let sum: f64 = checkerboard_kernel(size, size as f64 / 4.0).unwrap().data().iter().sum();
        assert!(sum.abs() <= 1e-12);
    }
}

#[test]
fn novelty_matches_naive_correlation() {
    let mut r = rng(4);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| random_vec(&mut r, 4)).collect();
    let frames = FrameMatrix::new(rows.iter().cloned().map(FeatureVector::new).collect(), 0.5);
    let params = SegmentationParams {
        kernel_size: 8,
        ..SegmentationParams::default()
    };
    let nov = novelty_curve(&self_similarity(&frames).unwrap(), &params).unwrap();
    let naive = naive_novelty(&brute_ssm(&rows), &formula_kernel(8, 2.0));
    assert_eq!(nov.values.len(), 30);
    for (a, b) in nov.values.iter().zip(&naive) {
        assert!((a - b).abs() <= 1e-10);
    }
}

fn two_block_frames() -> FrameMatrix {
    let rows = (0..20)
        .map(|t| FeatureVector::new(if t < 10 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }))
        .collect();
    FrameMatrix::new(rows, 0.5)
}

#[test]
fn two_block_novelty_peaks_at_boundary() {
    let params = SegmentationParams {
        kernel_size: 8,
        ..SegmentationParams::default()
    };
    let frames = two_block_frames();
    let nov = novelty_curve(&self_similarity(&frames).unwrap(), &params).unwrap();
    let rows: Vec<Vec<f64>> = frames.rows.iter().map(|r| r.as_slice().to_vec()).collect();
    let naive = naive_novelty(&brute_ssm(&rows), &formula_kernel(8, 2.0));
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap();
    assert_eq!(argmax(&naive), 10);
    assert_eq!(argmax(&nov.values), 10);
    assert!(nov.values.iter().enumerate().all(|(t, &v)| t == 10 || v < nov.values[10]));

    let seg = segment_track(&Track::new("ab", frames), &params).unwrap();
    assert_eq!(seg.boundaries(), vec![0, 10, 20]);
    assert!((seg.segments[0].vector[0] - 1.0).abs() < 1e-9 && seg.segments[0].vector[1].abs() < 1e-9);
    assert!(seg.segments[1].vector[0].abs() < 1e-9 && (seg.segments[1].vector[1] - 1.0).abs() < 1e-9);
}

#[test]
fn seven_block_track_is_recovered() {
    let mut r = rng(5);
    let params = SegmentationParams::default();
    for i in 0..10 {
        let (track, planted) = planted_orthogonal_track(&mut r, &format!("p{i}"), 50, 7, (32, 40), 0.0);
        let seg = segment_track(&track, &params).unwrap();
        let found: Vec<usize> = seg.segments.iter().map(|s| s.start).collect();
        assert_eq!(found.len(), 7, "{found:?} vs {planted:?}");
        for (f, p) in found.iter().zip(&planted) {
            assert!(f.abs_diff(*p) <= 2);
        }
    }
}

#[test]
fn synthetic_generator_boundaries_are_recoverable() {
    let planted = generate_planted(&SynthSpec {
        tracks: 10,
        seed: 21,
        ..SynthSpec::default()
    })
    .unwrap();
    let seg = segment_catalog(&planted.catalog, &SegmentationParams::default()).unwrap();
    let mut hit = 0;
    let mut total = 0;
    for (track, starts) in seg.tracks().iter().zip(&planted.boundaries) {
        let found = track.boundaries();
        for &p in &starts[1..] {
            total += 1;
            if found.iter().any(|f| f.abs_diff(p) <= 2) {
                hit += 1;
            }
        }
    }
    // fluctuating dimensions can make neighbouring segments nearly alike
    assert!(hit as f64 >= 0.9 * total as f64, "{hit}/{total}");
}

#[test]
fn ten_tracks_of_seven_segments_give_sixty_pairs() {
    let tracks: Vec<(String, Vec<Vec<f64>>)> = (0..10)
        .map(|t| (format!("t{t}"), (0..7).map(|k| vec![t as f64 / 10.0, k as f64 / 7.0]).collect()))
        .collect();
    let cat = segmented_catalog(2, &tracks);
    let pairs = build_training_sequences(&cat, 3).unwrap();
    // enumerate transitions track by track
    let mut expected = 0;
    for (_, segs) in &tracks {
        for j in 0..segs.len() {
            if j + 1 < segs.len() {
                expected += 1;
            }
        }
    }
    assert_eq!(expected, 60);
    assert_eq!(pairs.len(), expected);
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(6);
    for _ in 0..200 {
        let a = random_vec(&mut r, 7);
        let b = random_vec(&mut r, 7);
        assert!((cosine_distance(&a, &b) - brute_cosine_distance(&a, &b)).abs() <= 1e-12);
        assert!((l2_distance(&a, &b).unwrap() - brute_l2(&a, &b)).abs() <= 1e-12);
        let k = r.random_range(1..=7);
        assert!((dcg_similarity(&a, &b, k).unwrap() - brute_dcg(&a, &b, k)).abs() <= 1e-12);
    }
}

fn brute_rank(pred: &[f64], cat: &Catalog, metric: Metric) -> Vec<String> {
    let mut scored: Vec<(String, f64)> = cat
        .tracks()
        .iter()
        .map(|t| {
            let s = t.segments[0].vector.as_slice();
            let v = match metric {
                Metric::Cosine => brute_cosine_distance(pred, s),
                Metric::L2 => brute_l2(pred, s),
                Metric::Dcg { depth } => -brute_dcg(pred, s, depth),
            };
            (t.id.clone(), v)
        })
        .collect();
    // insertion sort by (score, id)
    for i in 1..scored.len() {
        let mut j = i;
        while j > 0 && (scored[j].1 < scored[j - 1].1 || (scored[j].1 == scored[j - 1].1 && scored[j].0 < scored[j - 1].0)) {
            scored.swap(j, j - 1);
            j -= 1;
        }
    }
    scored.into_iter().map(|(id, _)| id).collect()
}

#[test]
fn ranking_matches_brute_force_sort() {
    let mut r = rng(7);
    let tracks: Vec<(String, Vec<Vec<f64>>)> = (0..20)
        .map(|t| (format!("t{t:02}"), (0..3).map(|_| random_vec(&mut r, 5)).collect()))
        .collect();
    let cat = segmented_catalog(5, &tracks);
    for _ in 0..10 {
        let pred = random_vec(&mut r, 5);
        for metric in [Metric::Cosine, Metric::L2, Metric::Dcg { depth: 5 }, Metric::Dcg { depth: 2 }] {
            let ranked = rank_candidates(&pred, &cat, metric, &HashSet::new()).unwrap();
            let ids: Vec<String> = ranked.ranked.iter().map(|r| r.0.clone()).collect();
            assert_eq!(ids, brute_rank(&pred, &cat, metric), "{metric}");
        }
    }
}

#[test]
fn candidate_equal_to_prediction_ranks_first() {
    let mut r = rng(8);
    let tracks: Vec<(String, Vec<Vec<f64>>)> = (0..8)
        .map(|t| (format!("t{t}"), vec![random_vec(&mut r, 4)]))
        .collect();
    let cat = segmented_catalog(4, &tracks);
    let pred = tracks[5].1[0].clone();
    for metric in [Metric::Cosine, Metric::L2] {
        let ranked = rank_candidates(&pred, &cat, metric, &HashSet::new()).unwrap();
        assert_eq!(ranked.best().0, "t5");
    }
    let nn = nearest_neighbour_gap(&pred, &cat, Metric::Cosine, 0.5).unwrap();
    assert!(nn.best_score.abs() < 1e-12);
    assert!(!nn.no_near_neighbour);
}

#[test]
fn orthogonal_catalog_fires_no_near_neighbour() {
    let cat = segmented_catalog(
        3,
        &[
            ("a".into(), vec![vec![0.0, 1.0, 0.0]]),
            ("b".into(), vec![vec![0.0, 0.0, 1.0]]),
        ],
    );
    let nn = nearest_neighbour_gap(&[1.0, 0.0, 0.0], &cat, Metric::Dcg { depth: 3 }, 0.5).unwrap();
    assert_eq!(nn.best_cosine_distance, 1.0);
    assert!(nn.no_near_neighbour);
}

#[test]
fn in_cluster_prediction_has_near_neighbour() {
    let planted = generate_planted(&SynthSpec {
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let seg = segment_catalog(&planted.catalog, &SegmentationParams::default()).unwrap();
    // a prediction at the centre of cluster 0: strong dims high, weak low, rest mid
    let mut pred = vec![0.5; 50];
    planted.strong_dims[0].iter().for_each(|&d| pred[d] = 0.8);
    planted.weak_dims[0].iter().for_each(|&d| pred[d] = 0.1);
    let nn = nearest_neighbour_gap(&pred, &seg, Metric::Cosine, 0.5).unwrap();
    assert!(nn.best_score < 0.5, "{}", nn.best_score);
    assert!(!nn.no_near_neighbour);
    assert_eq!(planted.clusters[seg.tracks().iter().position(|t| t.id == nn.best_id).unwrap()], 0);
}
