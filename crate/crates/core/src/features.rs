//! Per-dimension standardization and the synthetic catalog generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, FeatureVector, FrameMatrix, Track};
use crate::error::{Error, Result};

/// Floor applied to standard deviations before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension mean and population standard deviation of segment vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> FeatureVector {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s.max(STD_FLOOR))
            .collect::<Vec<_>>()
            .into()
    }

    pub fn invert(&self, v: &[f64]) -> FeatureVector {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s.max(STD_FLOOR) + m)
            .collect::<Vec<_>>()
            .into()
    }
}

pub fn fit_standardizer(catalog: &Catalog) -> Result<StandardizationStats> {
    catalog.require_segmented()?;
    if catalog.is_standardized() {
        return Err(Error::InvalidParameter("catalog is already standardized".into()));
    }
    let dim = catalog.dim();
    let vectors: Vec<&FeatureVector> = catalog.tracks().iter().flat_map(Track::segment_vectors).collect();
    if vectors.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 segment vectors, found {}",
            vectors.len()
        )));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in &vectors {
        mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in &vectors {
        for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(StandardizationStats { mean, std })
}

/// Returns a copy of `catalog` whose segment vectors are standardized.
/// Frames are left untouched.
pub fn standardize_catalog(catalog: &Catalog, stats: &StandardizationStats) -> Result<Catalog> {
    catalog.require_segmented()?;
    if stats.dim() != catalog.dim() {
        return Err(Error::ShapeMismatch("standardization stats dimension".into()));
    }
    let mut out = catalog.clone();
    for track in out.tracks_mut() {
        for seg in &mut track.segments {
            seg.vector = stats.apply(&seg.vector);
        }
    }
    out.set_standardization(Some(stats.clone()));
    Ok(out)
}

/// Parameters of the planted-structure generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub tracks: usize,
    /// Inclusive range of segments per track.
    pub segments: (usize, usize),
    /// Inclusive range of frames per segment.
    pub frames_per_segment: (usize, usize),
    pub dim: usize,
    /// Dimensions held near [`STRONG_LEVEL`] across a cluster's tracks.
    pub strong: usize,
    /// Dimensions held near [`WEAK_LEVEL`] across a cluster's tracks.
    pub weak: usize,
    pub clusters: usize,
    /// Half-width of the uniform per-frame noise.
    pub noise: f64,
    pub seed: u64,
    pub frame_hop: f64,
}

pub const STRONG_LEVEL: f64 = 0.8;
pub const WEAK_LEVEL: f64 = 0.1;
const FLUCTUATING_RANGE: (f64, f64) = (0.1, 0.9);

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tracks: 20,
            segments: (4, 9),
            frames_per_segment: (32, 40),
            dim: 50,
            strong: 6,
            weak: 30,
            clusters: 2,
            noise: 0.02,
            seed: 0,
            frame_hop: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("synthetic spec: {msg}")));
        if self.tracks == 0 || self.dim == 0 || self.clusters == 0 {
            return bad("tracks, dim and clusters must be positive");
        }
        if self.clusters > self.tracks {
            return bad("more clusters than tracks");
        }
        if self.strong == 0 || self.weak == 0 || self.strong + self.weak > self.dim {
            return bad("need 0 < strong, 0 < weak and strong + weak <= dim");
        }
        if self.segments.0 == 0 || self.segments.0 > self.segments.1 {
            return bad("invalid segment range");
        }
        if self.frames_per_segment.0 == 0 || self.frames_per_segment.0 > self.frames_per_segment.1 {
            return bad("invalid frames-per-segment range");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1]");
        }
        if self.frame_hop.is_nan() || self.frame_hop <= 0.0 {
            return bad("frame hop must be positive");
        }
        Ok(())
    }

    /// Zero-padded id of track `i`, e.g. `t03`.
    pub fn track_id(&self, i: usize) -> String {
        let width = (self.tracks.saturating_sub(1)).to_string().len().max(2);
        format!("t{i:0width$}")
    }

    /// Tracks are assigned to clusters in contiguous blocks.
    pub fn cluster_of(&self, i: usize) -> usize {
        i * self.clusters / self.tracks
    }
}

/// A generated catalog together with its planted ground truth.
#[derive(Clone, Debug)]
pub struct PlantedCatalog {
    pub catalog: Catalog,
    /// Cluster index per track, in catalog order.
    pub clusters: Vec<usize>,
    /// Planted segment starts per track (first entry is always 0).
    pub boundaries: Vec<Vec<usize>>,
    pub strong_dims: Vec<Vec<usize>>,
    pub weak_dims: Vec<Vec<usize>>,
}

pub fn generate_synthetic_catalog(spec: &SynthSpec) -> Result<Catalog> {
    generate_planted(spec).map(|p| p.catalog)
}

pub fn generate_planted(spec: &SynthSpec) -> Result<PlantedCatalog> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;

    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(&mut rng);
    let disjoint = spec.clusters * spec.strong <= dim;
    let mut strong_dims = Vec::with_capacity(spec.clusters);
    let mut weak_dims = Vec::with_capacity(spec.clusters);
    for c in 0..spec.clusters {
        let strong: Vec<usize> = if disjoint {
            perm[c * spec.strong..(c + 1) * spec.strong].to_vec()
        } else {
            let mut p: Vec<usize> = (0..dim).collect();
            p.shuffle(&mut rng);
            p.truncate(spec.strong);
            p
        };
        let mut rest: Vec<usize> = (0..dim).filter(|d| !strong.contains(d)).collect();
        rest.shuffle(&mut rng);
        rest.truncate(spec.weak);
        let mut strong = strong;
        strong.sort_unstable();
        rest.sort_unstable();
        strong_dims.push(strong);
        weak_dims.push(rest);
    }

    let mut catalog = Catalog::new(dim);
    let mut clusters = Vec::with_capacity(spec.tracks);
    let mut boundaries = Vec::with_capacity(spec.tracks);
    for i in 0..spec.tracks {
        let cluster = spec.cluster_of(i);
        let mut level = vec![None; dim];
        for &d in &strong_dims[cluster] {
            level[d] = Some(STRONG_LEVEL);
        }
        for &d in &weak_dims[cluster] {
            level[d] = Some(WEAK_LEVEL);
        }
        let n_segments = rng.random_range(spec.segments.0..=spec.segments.1);
        let mut rows = Vec::new();
        let mut starts = Vec::with_capacity(n_segments);
        for _ in 0..n_segments {
            let base: Vec<f64> = level
                .iter()
                .map(|l| match l {
                    Some(v) => *v,
                    None => rng.random_range(FLUCTUATING_RANGE.0..=FLUCTUATING_RANGE.1),
                })
                .collect();
            let n_frames = rng.random_range(spec.frames_per_segment.0..=spec.frames_per_segment.1);
            starts.push(rows.len());
            for _ in 0..n_frames {
                let frame: Vec<f64> = base
                    .iter()
                    .map(|&b| {
                        if spec.noise > 0.0 {
                            (b + rng.random_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0)
                        } else {
                            b
                        }
                    })
                    .collect();
                rows.push(FeatureVector::new(frame));
            }
        }
        catalog.push(Track::new(spec.track_id(i), FrameMatrix::new(rows, spec.frame_hop)))?;
        clusters.push(cluster);
        boundaries.push(starts);
    }
    Ok(PlantedCatalog {
        catalog,
        clusters,
        boundaries,
        strong_dims,
        weak_dims,
    })
}
