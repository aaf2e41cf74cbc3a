//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code paths; only plain data is read out
//! of library types.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackflow::catalog::{Catalog, FeatureVector, FrameMatrix, Segment, Track, TrainingPair};
use trackflow::rnn::{init_model, Params, SequenceModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ_c m[r][c] · v[c]` with explicit indexing.
fn affine(params_w: &trackflow::rnn::Matrix, v: &[f64], r: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..v.len() {
        s += params_w.get(r, c) * v[c];
    }
    s
}

/// One layer step evaluated unit by unit from the textbook equations.
pub fn oracle_layer_step(
    layer: &trackflow::rnn::LstmLayerParams,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for k in 0..hidden {
        let pre = |g: usize| {
            let gp = &layer.gates[g];
            affine(&gp.w, x, k) + affine(&gp.u, h, k) + gp.b[k]
        };
        let i = sig(pre(0));
        let f = sig(pre(1));
        let o = sig(pre(2));
        let g = pre(3).tanh();
        c_new[k] = f * c[k] + i * g;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

/// Full stacked step: returns per-layer (h, c).
pub fn oracle_step(params: &Params, x: &[f64], h: &[Vec<f64>], c: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut hs = Vec::new();
    let mut cs = Vec::new();
    let mut input = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let (hn, cn) = oracle_layer_step(layer, &input, &h[l], &c[l]);
        input = hn.clone();
        hs.push(hn);
        cs.push(cn);
    }
    (hs, cs)
}

pub fn oracle_forward(params: &Params, window: &[Vec<f64>], mask: &[bool]) -> Vec<f64> {
    let layers = params.layers.len();
    let hidden = params.output.w.cols();
    let mut h = vec![vec![0.0; hidden]; layers];
    let mut c = vec![vec![0.0; hidden]; layers];
    for (x, &m) in window.iter().zip(mask) {
        if m {
            let (hn, cn) = oracle_step(params, x, &h, &c);
            h = hn;
            c = cn;
        }
    }
    let top = &h[layers - 1];
    (0..params.output.b.len())
        .map(|d| sig(affine(&params.output.w, top, d) + params.output.b[d]))
        .collect()
}

pub fn oracle_loss(params: &Params, batch: &[TrainingPair]) -> f64 {
    let mut total = 0.0;
    for p in batch {
        let window: Vec<Vec<f64>> = p.window.iter().map(|v| v.as_slice().to_vec()).collect();
        let y = oracle_forward(params, &window, &p.mask);
        let d = y.len() as f64;
        total += y.iter().zip(p.target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d;
    }
    total / batch.len() as f64
}

/// Central-difference gradient of the oracle loss, one tensor element at a
/// time, in `Params::blocks` order.
pub fn finite_difference_gradient(params: &Params, batch: &[TrainingPair], step: f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (bi, &len) in sizes.iter().enumerate() {
        let mut grad = vec![0.0; len];
        for (k, g) in grad.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.blocks_mut()[bi][k] += step;
            let mut minus = params.clone();
            minus.blocks_mut()[bi][k] -= step;
            *g = (oracle_loss(&plus, batch) - oracle_loss(&minus, batch)) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// turning finite-difference round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random tiny model with a random (possibly partly padded) batch.
pub fn tiny_instance(seed: u64) -> (SequenceModel, Vec<TrainingPair>) {
    let mut r = rng(seed);
    let hidden = r.random_range(1..=4);
    let dim = r.random_range(1..=3);
    let n = r.random_range(1..=3);
    let mut model = init_model(2, hidden, dim, seed).unwrap();
    model.meta.context_length = n;
    // perturb biases so every gate is exercised away from its init value
    for b in model.params.blocks_mut() {
        for v in b.iter_mut() {
            *v += r.random_range(-0.5..0.5);
        }
    }
    let batch_size = r.random_range(1..=3);
    let batch = (0..batch_size)
        .map(|_| {
            let real = r.random_range(1..=n);
            let window = (0..n)
                .map(|k| {
                    if k < n - real {
                        FeatureVector::zeros(dim)
                    } else {
                        FeatureVector::new(random_vec(&mut r, dim))
                    }
                })
                .collect();
            let mask = (0..n).map(|k| k >= n - real).collect();
            TrainingPair {
                track_id: "x".into(),
                window,
                mask,
                target: FeatureVector::new(random_vec(&mut r, dim)),
            }
        })
        .collect();
    (model, batch)
}

pub fn brute_ssm(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for d in 0..rows[i].len() {
                ab += rows[i][d] * rows[j][d];
                aa += rows[i][d] * rows[i][d];
                bb += rows[j][d] * rows[j][d];
            }
            s[i][j] = if i == j {
                1.0
            } else if aa == 0.0 || bb == 0.0 {
                0.0
            } else {
                ab / (aa.sqrt() * bb.sqrt())
            };
        }
    }
    s
}

pub fn formula_kernel(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = vec![vec![0.0; size]; size];
    for u in 0..size {
        for v in 0..size {
            let su = if (u as f64) < c { -1.0 } else { 1.0 };
            let sv = if (v as f64) < c { -1.0 } else { 1.0 };
            let r2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            k[u][v] = su * sv * (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    k
}

pub fn naive_novelty(s: &[Vec<f64>], kernel: &[Vec<f64>]) -> Vec<f64> {
    let n = s.len() as i64;
    let k = kernel.len() as i64;
    let clamp = |i: i64| i.max(0).min(n - 1) as usize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for u in 0..k {
                for v in 0..k {
                    acc += kernel[u as usize][v as usize] * s[clamp(t - k / 2 + u)][clamp(t - k / 2 + v)];
                }
            }
            if acc > 0.0 {
                acc
            } else {
                0.0
            }
        })
        .collect()
}

pub fn brute_cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        1.0
    } else {
        1.0 - ab / (aa.sqrt() * bb.sqrt())
    }
}

pub fn brute_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// Selection-sort ranking of dimensions, then the discounted sum.
pub fn brute_dcg(pred: &[f64], cand: &[f64], depth: usize) -> f64 {
    let mut remaining: Vec<usize> = (0..pred.len()).collect();
    let mut score = 0.0;
    for rank in 1..=depth {
        let mut best = 0;
        for j in 1..remaining.len() {
            if pred[remaining[j]] > pred[remaining[best]] {
                best = j;
            }
        }
        let d = remaining.remove(best);
        score += cand[d] / (rank as f64 + 1.0).log2();
    }
    score
}

/// Planted blocks with pairwise-orthogonal adjacent block vectors.
/// Returns (track, planted starts).
pub fn planted_orthogonal_track(
    r: &mut ChaCha8Rng,
    id: &str,
    dim: usize,
    blocks: usize,
    block_len: (usize, usize),
    noise: f64,
) -> (Track, Vec<usize>) {
    let groups = 5;
    let width = dim / groups;
    let mut rows = Vec::new();
    let mut starts = Vec::new();
    let mut prev_group = usize::MAX;
    for _ in 0..blocks {
        let mut g = r.random_range(0..groups);
        while g == prev_group {
            g = r.random_range(0..groups);
        }
        prev_group = g;
        let mut base = vec![0.0; dim];
        for d in g * width..(g + 1) * width {
            base[d] = r.random_range(0.5..1.0);
        }
        let len = r.random_range(block_len.0..=block_len.1);
        starts.push(rows.len());
        for _ in 0..len {
            let row: Vec<f64> = base
                .iter()
                .map(|&b| {
                    if b > 0.0 && noise > 0.0 {
                        (b + r.random_range(-noise..=noise)).clamp(0.0, 1.0)
                    } else {
                        b
                    }
                })
                .collect();
            rows.push(FeatureVector::new(row));
        }
    }
    (Track::new(id, FrameMatrix::new(rows, 0.5)), starts)
}

/// A catalog whose tracks are pre-segmented with one frame per segment.
pub fn segmented_catalog(dim: usize, tracks: &[(String, Vec<Vec<f64>>)]) -> Catalog {
    let mut cat = Catalog::new(dim);
    for (id, segs) in tracks {
        let frames: Vec<FeatureVector> = segs.iter().map(|s| FeatureVector::new(s.clone())).collect();
        let mut t = Track::new(id.clone(), FrameMatrix::new(frames.clone(), 0.5));
        t.segments = frames
            .into_iter()
            .enumerate()
            .map(|(start, vector)| Segment { start, vector })
            .collect();
        cat.push(t).unwrap();
    }
    cat
}

/// The first 20 within-track pairs of a small segmented synthetic catalog.
pub fn twenty_pairs(n: usize) -> Vec<TrainingPair> {
    use trackflow::catalog::build_training_sequences;
    use trackflow::features::{generate_planted, SynthSpec};
    use trackflow::segmentation::{segment_catalog, SegmentationParams};
    let planted = generate_planted(&SynthSpec {
        tracks: 5,
        segments: (6, 6),
        noise: 0.0,
        seed: 13,
        ..SynthSpec::default()
    })
    .unwrap();
    let seg = segment_catalog(&planted.catalog, &SegmentationParams::default()).unwrap();
    let mut pairs = build_training_sequences(&seg, n).unwrap();
    assert!(pairs.len() >= 20);
    pairs.truncate(20);
    pairs
}
