//! Candidate scoring: cosine distance, l2 distance and a DCG-weighted
//! similarity, plus ranking of catalog start segments against a prediction.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::matrix::dot;

/// Default cosine distance above which a prediction is reported as having no
/// near neighbour.
pub const DEFAULT_NN_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    L2,
    /// DCG over the top `depth` dimensions of the prediction.
    Dcg { depth: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Lower is better.
    Distance,
    /// Higher is better.
    Similarity,
}

impl Metric {
    pub fn orientation(&self) -> Orientation {
        match self {
            Metric::Cosine | Metric::L2 => Orientation::Distance,
            Metric::Dcg { .. } => Orientation::Similarity,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::L2 => "l2",
            Metric::Dcg { .. } => "dcg",
        }
    }

    /// Parses `cosine`, `l2` or `dcg`; `dcg_depth` is used for the latter.
    pub fn parse(name: &str, dcg_depth: usize) -> Result<Self> {
        match name {
            "cosine" => Ok(Metric::Cosine),
            "l2" => Ok(Metric::L2),
            "dcg" => Ok(Metric::Dcg { depth: dcg_depth }),
            other => Err(Error::InvalidParameter(format!(
                "unknown metric {other:?} (expected cosine, l2 or dcg)"
            ))),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Metric::Dcg { depth } = *self {
            if depth == 0 || depth > dim {
                return Err(Error::InvalidParameter(format!(
                    "DCG depth {depth} outside [1, {dim}]"
                )));
            }
        }
        Ok(())
    }

    /// Scores `candidate` against `pred` in the metric's own orientation.
    pub fn score(&self, pred: &[f64], candidate: &[f64]) -> Result<f64> {
        match *self {
            Metric::Cosine => {
                check_dims(pred, candidate)?;
                Ok(cosine_distance(pred, candidate))
            }
            Metric::L2 => l2_distance(pred, candidate),
            Metric::Dcg { depth } => dcg_similarity(pred, candidate, depth),
        }
    }

    /// `Ordering::Less` when score `a` is better than `b`.
    pub fn compare(&self, a: f64, b: f64) -> Ordering {
        match self.orientation() {
            Orientation::Distance => a.total_cmp(&b),
            Orientation::Similarity => b.total_cmp(&a),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Dcg { depth } => write!(f, "dcg@{depth}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// Accepts `cosine`, `l2`, `dcg` (depth 50) or `dcg@K`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('@') {
            Some(("dcg", k)) => k
                .parse()
                .map(|depth| Metric::Dcg { depth })
                .map_err(|_| Error::InvalidParameter(format!("bad DCG depth in {s:?}"))),
            _ => Metric::parse(s, 50),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `1 − a·b / (‖a‖‖b‖)`; a zero-norm input gives the maximal distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let denom = dot(a, a).sqrt() * dot(b, b).sqrt();
    if denom == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / denom
}

pub fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Dimension indices sorted by descending `pred` value, ties by index.
pub fn dcg_order(pred: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
    order
}

/// The prediction ranks dimensions, the candidate supplies graded relevance:
/// `Σ_{i=1..K} candidate[π(i)] / log₂(i + 1)`.
pub fn dcg_similarity(pred: &[f64], candidate: &[f64], depth: usize) -> Result<f64> {
    check_dims(pred, candidate)?;
    Metric::Dcg { depth }.validate(pred.len())?;
    Ok(dcg_order(pred)
        .into_iter()
        .take(depth)
        .enumerate()
        .map(|(i, d)| candidate[d] / ((i + 2) as f64).log2())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub metric: Metric,
    /// Best first.
    pub ranked: Vec<(String, f64)>,
    /// Candidates whose start segment has zero norm (cosine distance defined
    /// as 1 for them).
    pub zero_norm: Vec<String>,
}

impl RankedCandidates {
    pub fn best(&self) -> &(String, f64) {
        &self.ranked[0]
    }
}

/// Ranks every track not in `exclude` by comparing `pred` with its first
/// segment. Ties go to the lexicographically smaller id.
pub fn rank_candidates(
    pred: &[f64],
    catalog: &Catalog,
    metric: Metric,
    exclude: &HashSet<String>,
) -> Result<RankedCandidates> {
    catalog.require_segmented()?;
    metric.validate(catalog.dim())?;
    if pred.len() != catalog.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has dimension {}, catalog {}",
            pred.len(),
            catalog.dim()
        )));
    }
    let mut ranked = Vec::new();
    let mut zero_norm = Vec::new();
    for track in catalog.tracks() {
        if exclude.contains(&track.id) {
            continue;
        }
        let start = track.start_segment().expect("segmented");
        if metric == Metric::Cosine && is_zero(start) {
            zero_norm.push(track.id.clone());
        }
        ranked.push((track.id.clone(), metric.score(pred, start)?));
    }
    if ranked.is_empty() {
        return Err(Error::NoCandidates);
    }
    ranked.sort_by(|a, b| metric.compare(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedCandidates {
        metric,
        ranked,
        zero_norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearNeighbour {
    pub best_id: String,
    /// Best score under the requested metric.
    pub best_score: f64,
    pub median_score: f64,
    /// `|best − median|`, how far the winner stands out.
    pub margin: f64,
    /// Smallest cosine distance from the prediction to any start segment.
    pub best_cosine_distance: f64,
    /// Set when `best_cosine_distance` exceeds the threshold.
    pub no_near_neighbour: bool,
}

pub fn nearest_neighbour_gap(
    pred: &[f64],
    catalog: &Catalog,
    metric: Metric,
    threshold: f64,
) -> Result<NearNeighbour> {
    let none = HashSet::new();
    let ranked = rank_candidates(pred, catalog, metric, &none)?;
    let cosine = if metric == Metric::Cosine {
        ranked.best().1
    } else {
        rank_candidates(pred, catalog, Metric::Cosine, &none)?.best().1
    };
    let mut scores: Vec<f64> = ranked.ranked.iter().map(|r| r.1).collect();
    scores.sort_by(f64::total_cmp);
    let mid = scores.len() / 2;
    let median = if scores.len() % 2 == 1 {
        scores[mid]
    } else {
        (scores[mid - 1] + scores[mid]) / 2.0
    };
    let (best_id, best_score) = ranked.best().clone();
    Ok(NearNeighbour {
        best_id,
        best_score,
        median_score: median,
        margin: (best_score - median).abs(),
        best_cosine_distance: cosine,
        no_near_neighbour: cosine > threshold,
    })
}
