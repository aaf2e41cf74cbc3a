//! The generation loop, transition-matrix export and coherence diagnostics.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, FeatureVector};
use crate::error::{Error, Result};
use crate::rnn::{predict_next, SequenceModel};
use crate::similarity::{cosine_distance, nearest_neighbour_gap, rank_candidates, Metric, NearNeighbour, DEFAULT_NN_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Cosine distance above which a step logs a no-near-neighbour event.
    pub nn_threshold: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            nn_threshold: DEFAULT_NN_THRESHOLD,
        }
    }
}

/// One transition: the prediction made from the playlist so far and the
/// track it selected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaylistStep {
    pub prediction: Vec<f64>,
    pub chosen: String,
    pub score: f64,
    pub near_neighbour: NearNeighbour,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Playlist {
    pub seed: String,
    pub metric: Metric,
    pub tracks: Vec<String>,
    /// `tracks.len() - 1` entries, one per transition.
    pub steps: Vec<PlaylistStep>,
    /// Set when the catalog ran out before the requested length.
    pub truncated: bool,
}

impl Playlist {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn no_near_neighbour_events(&self) -> usize {
        self.steps.iter().filter(|s| s.near_neighbour.no_near_neighbour).count()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds a playlist from `seed`: each step predicts from the last N segment
/// vectors of the tracks chosen so far (in order) and appends the best-ranked
/// unused track.
pub fn generate(
    catalog: &Catalog,
    model: &SequenceModel,
    seed: &str,
    length: usize,
    metric: Metric,
    config: &GenerateConfig,
) -> Result<Playlist> {
    if length == 0 {
        return Err(Error::InvalidParameter("playlist length must be at least 1".into()));
    }
    catalog.require_segmented()?;
    if model.dim() != catalog.dim() {
        return Err(Error::ShapeMismatch(format!(
            "model dimension {} does not match catalog dimension {}",
            model.dim(),
            catalog.dim()
        )));
    }
    metric.validate(catalog.dim())?;
    let seed_track = catalog
        .get(seed)
        .ok_or_else(|| Error::UnknownTrack(seed.to_string()))?;

    let n = model.context_length();
    let mut context: Vec<FeatureVector> = Vec::new();
    let push_context = |ctx: &mut Vec<FeatureVector>, id: &str| {
        ctx.extend(catalog.get(id).expect("chosen from catalog").segment_vectors().cloned());
        if ctx.len() > n {
            ctx.drain(..ctx.len() - n);
        }
    };
    push_context(&mut context, &seed_track.id);

    let mut tracks = vec![seed_track.id.clone()];
    let mut used: HashSet<String> = tracks.iter().cloned().collect();
    let mut steps = Vec::new();
    let mut truncated = false;
    while tracks.len() < length {
        if used.len() == catalog.len() {
            truncated = true;
            break;
        }
        let pred = predict_next(model, &context)?;
        let ranked = rank_candidates(&pred, catalog, metric, &used)?;
        let (chosen, score) = ranked.best().clone();
        let near_neighbour = nearest_neighbour_gap(&pred, catalog, metric, config.nn_threshold)?;
        if near_neighbour.no_near_neighbour {
            log::warn!(
                "step {}: no near neighbour (best cosine distance {:.3})",
                steps.len() + 1,
                near_neighbour.best_cosine_distance
            );
        }
        push_context(&mut context, &chosen);
        used.insert(chosen.clone());
        tracks.push(chosen.clone());
        steps.push(PlaylistStep {
            prediction: pred.into_inner(),
            chosen,
            score,
            near_neighbour,
        });
    }
    Ok(Playlist {
        seed: seed.to_string(),
        metric,
        tracks,
        steps,
        truncated,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RowLabel {
    /// Segment `index` (0-based) of `track`.
    Segment { track: String, index: usize },
    /// Prediction made for transition `step` (1-based).
    Prediction { step: usize },
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Segment { track, index } => write!(f, "seg:{track}:{index}"),
            RowLabel::Prediction { step } => write!(f, "pred:{step}"),
        }
    }
}

impl FromStr for RowLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad row label {s:?}"));
        if let Some(rest) = s.strip_prefix("seg:") {
            let (track, index) = rest.rsplit_once(':').ok_or_else(bad)?;
            return Ok(RowLabel::Segment {
                track: track.to_string(),
                index: index.parse().map_err(|_| bad())?,
            });
        }
        if let Some(step) = s.strip_prefix("pred:") {
            return Ok(RowLabel::Prediction {
                step: step.parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

impl RowLabel {
    /// True for the first segment row of a track, i.e. a track boundary.
    pub fn starts_track(&self) -> bool {
        matches!(self, RowLabel::Segment { index: 0, .. })
    }
}

/// Segment stacks of every playlist track with the predictions interleaved
/// at track boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub dim: usize,
    pub rows: Vec<(RowLabel, Vec<f64>)>,
}

impl TransitionMatrix {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|d| format!("dim_{d}")));
        w.write_record(&header)?;
        for (label, values) in &self.rows {
            let mut record = vec![label.to_string()];
            record.extend(values.iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<transition csv>", e))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::InvalidParameter("first column must be 'label'".into()));
        }
        let dim = header.len() - 1;
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let label: RowLabel = record[0].parse()?;
            let values = record
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::InvalidParameter(format!("bad number {v:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((label, values));
        }
        Ok(TransitionMatrix { dim, rows })
    }
}

pub fn export_transition_matrix(playlist: &Playlist, catalog: &Catalog) -> Result<TransitionMatrix> {
    if playlist.steps.len() + 1 != playlist.tracks.len() {
        return Err(Error::InvalidParameter(
            "playlist must carry one prediction per transition".into(),
        ));
    }
    let mut rows = Vec::new();
    for (k, id) in playlist.tracks.iter().enumerate() {
        let track = catalog.get(id).ok_or_else(|| Error::UnknownTrack(id.clone()))?;
        if k > 0 {
            let pred = &playlist.steps[k - 1].prediction;
            if pred.len() != catalog.dim() {
                return Err(Error::ShapeMismatch("prediction dimension".into()));
            }
            rows.push((RowLabel::Prediction { step: k }, pred.clone()));
        }
        if !track.is_segmented() {
            return Err(Error::NotSegmented(id.clone()));
        }
        for (index, v) in track.segment_vectors().enumerate() {
            rows.push((
                RowLabel::Segment {
                    track: id.clone(),
                    index,
                },
                v.as_slice().to_vec(),
            ));
        }
    }
    Ok(TransitionMatrix {
        dim: catalog.dim(),
        rows,
    })
}

/// Post-hoc diagnostics of one playlist. Similarities are `1 − cosine
/// distance` between track-mean frame vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub metric: Metric,
    pub tracks: Vec<String>,
    /// Similarity of each adjacent pair.
    pub adjacent_similarity: Vec<f64>,
    pub mean_adjacent_similarity: f64,
    /// Similarity of the seed to track k, for k = 0..len.
    pub seed_drift: Vec<f64>,
    pub no_near_neighbour_events: usize,
    /// Variance of each feature dimension across the playlist's track means.
    pub dimension_variance: Vec<f64>,
    pub mean_dimension_variance: f64,
}

pub fn coherence_report(playlist: &Playlist, catalog: &Catalog) -> Result<CoherenceReport> {
    if playlist.len() < 2 {
        return Err(Error::InvalidParameter(
            "coherence needs a playlist of at least 2 tracks".into(),
        ));
    }
    let means: Vec<FeatureVector> = playlist
        .tracks
        .iter()
        .map(|id| {
            catalog
                .get(id)
                .map(|t| t.frames.mean())
                .ok_or_else(|| Error::UnknownTrack(id.clone()))
        })
        .collect::<Result<_>>()?;
    let sim = |a: &FeatureVector, b: &FeatureVector| 1.0 - cosine_distance(a, b);
    let adjacent: Vec<f64> = means.windows(2).map(|w| sim(&w[0], &w[1])).collect();
    let drift = means.iter().map(|m| sim(&means[0], m)).collect();
    let n = means.len() as f64;
    let dim = catalog.dim();
    let variance: Vec<f64> = (0..dim)
        .map(|d| {
            let mu = means.iter().map(|m| m[d]).sum::<f64>() / n;
            means.iter().map(|m| (m[d] - mu) * (m[d] - mu)).sum::<f64>() / n
        })
        .collect();
    Ok(CoherenceReport {
        metric: playlist.metric,
        tracks: playlist.tracks.clone(),
        mean_adjacent_similarity: adjacent.iter().sum::<f64>() / adjacent.len() as f64,
        adjacent_similarity: adjacent,
        seed_drift: drift,
        no_near_neighbour_events: playlist.no_near_neighbour_events(),
        mean_dimension_variance: variance.iter().sum::<f64>() / dim as f64,
        dimension_variance: variance,
    })
}

/// DCG against cosine, as observed (not asserted) for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcgVsCosine {
    pub dcg_mean_adjacent_similarity: f64,
    pub cosine_mean_adjacent_similarity: f64,
    pub dcg_at_least_as_coherent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: String,
    pub length: usize,
    pub playlists: Vec<Playlist>,
    /// `None` for playlists too short to assess.
    pub reports: Vec<Option<CoherenceReport>>,
    pub dcg_vs_cosine: Option<DcgVsCosine>,
}

/// Generates one playlist per metric from the same seed and reports their
/// coherence side by side.
pub fn compare(
    catalog: &Catalog,
    model: &SequenceModel,
    seed: &str,
    length: usize,
    metrics: &[Metric],
    config: &GenerateConfig,
) -> Result<Comparison> {
    if metrics.is_empty() {
        return Err(Error::InvalidParameter("no metrics to compare".into()));
    }
    let mut playlists = Vec::with_capacity(metrics.len());
    let mut reports = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let p = generate(catalog, model, seed, length, metric, config)?;
        reports.push(if p.len() >= 2 {
            Some(coherence_report(&p, catalog)?)
        } else {
            None
        });
        playlists.push(p);
    }
    let find = |name: &str| {
        reports
            .iter()
            .flatten()
            .find(|r| r.metric.name() == name)
            .map(|r| r.mean_adjacent_similarity)
    };
    let dcg_vs_cosine = find("dcg").zip(find("cosine")).map(|(d, c)| DcgVsCosine {
        dcg_mean_adjacent_similarity: d,
        cosine_mean_adjacent_similarity: c,
        dcg_at_least_as_coherent: d >= c,
    });
    Ok(Comparison {
        seed: seed.to_string(),
        length,
        playlists,
        reports,
        dcg_vs_cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for label in [
            RowLabel::Segment {
                track: "a:b".into(),
                index: 3,
            },
            RowLabel::Prediction { step: 2 },
        ] {
            assert_eq!(label.to_string().parse::<RowLabel>().unwrap(), label);
        }
        assert!("segment:x".parse::<RowLabel>().is_err());
        assert!("pred:x".parse::<RowLabel>().is_err());
    }
}
