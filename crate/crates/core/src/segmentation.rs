//! Structural segmentation: frame self-similarity, checkerboard-kernel
//! novelty along the diagonal, and greedy peak picking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{mean_of, Catalog, FrameMatrix, Segment, Track};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// `S[i][j]` = cosine similarity of frames `i` and `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfSimilarityMatrix(Matrix);

impl SelfSimilarityMatrix {
    /// Wraps a precomputed square matrix.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::ShapeMismatch("self-similarity matrix must be square".into()));
        }
        Ok(SelfSimilarityMatrix(m))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoveltyCurve {
    pub values: Vec<f64>,
    pub kernel_size: usize,
}

/// How the peak threshold τ is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    /// Mean plus one population standard deviation of the novelty curve.
    MeanPlusStd,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub kernel_size: usize,
    /// Gaussian taper width; `None` means `kernel_size / 4`. Infinity disables
    /// the taper.
    pub sigma: Option<f64>,
    pub threshold: Threshold,
    /// Minimum distance in frames between accepted boundaries.
    pub min_segment: usize,
    /// Peaks below this fraction of the kernel's absolute mass are ignored,
    /// regardless of τ. Keeps noise ripples on homogeneous tracks from being
    /// picked by a purely relative threshold.
    pub novelty_floor: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            kernel_size: 16,
            sigma: None,
            threshold: Threshold::MeanPlusStd,
            min_segment: 4,
            novelty_floor: 0.02,
        }
    }
}

impl SegmentationParams {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.kernel_size as f64 / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 2 || !self.kernel_size.is_multiple_of(2) {
            return Err(Error::OddKernel(self.kernel_size));
        }
        if self.min_segment == 0 {
            return Err(Error::InvalidParameter("minimum segment length must be at least 1".into()));
        }
        if self.sigma().is_nan() || self.sigma() <= 0.0 {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if let Threshold::Fixed(t) = self.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter("threshold must be finite and ≥ 0".into()));
            }
        }
        if !(self.novelty_floor >= 0.0 && self.novelty_floor.is_finite()) {
            return Err(Error::InvalidParameter("novelty floor must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

pub fn self_similarity(frames: &FrameMatrix) -> Result<SelfSimilarityMatrix> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::TooFewFrames { needed: 2, found: n });
    }
    let norms: Vec<f64> = frames.rows.iter().map(|r| dot(r, r).sqrt()).collect();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        let data = s.data_mut();
        data[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            let v = if denom > 0.0 {
                (dot(&frames.rows[i], &frames.rows[j]) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(SelfSimilarityMatrix(s))
}

/// Sign-quadrant kernel with a radial Gaussian taper centred between the two
/// middle indices. Positive on the diagonal quadrants.
pub fn checkerboard_kernel(size: usize, sigma: f64) -> Result<Matrix> {
    if size < 2 || !size.is_multiple_of(2) {
        return Err(Error::OddKernel(size));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidParameter("sigma must be positive".into()));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Matrix::zeros(size, size);
    for u in 0..size {
        for v in 0..size {
            let (du, dv) = (u as f64 - c, v as f64 - c);
            let taper = if sigma.is_infinite() {
                1.0
            } else {
                (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
            };
            k.data_mut()[u * size + v] = du.signum() * dv.signum() * taper;
        }
    }
    Ok(k)
}

/// Correlates the checkerboard kernel along the diagonal of `ssm`, with edge
/// replication outside the matrix, and rectifies at zero.
pub fn novelty_curve(ssm: &SelfSimilarityMatrix, params: &SegmentationParams) -> Result<NoveltyCurve> {
    params.validate()?;
    let n = ssm.len();
    let k = params.kernel_size;
    if k > n {
        return Err(Error::KernelTooLarge { kernel: k, frames: n });
    }
    let kernel = checkerboard_kernel(k, params.sigma())?;
    let half = k / 2;
    let values = (0..n)
        .map(|t| {
            let idx: Vec<usize> = (0..k)
                .map(|u| (t + u).saturating_sub(half).min(n - 1))
                .collect();
            let mut acc = 0.0;
            for (u, &i) in idx.iter().enumerate() {
                let krow = kernel.row(u);
                let srow = ssm.matrix().row(i);
                acc += idx.iter().zip(krow).map(|(&j, kv)| kv * srow[j]).sum::<f64>();
            }
            acc.max(0.0)
        })
        .collect();
    Ok(NoveltyCurve { values, kernel_size: k })
}

fn effective_threshold(novelty: &NoveltyCurve, params: &SegmentationParams) -> Result<f64> {
    let tau = match params.threshold {
        Threshold::Fixed(t) => t,
        Threshold::MeanPlusStd => {
            let n = novelty.values.len() as f64;
            let mean = novelty.values.iter().sum::<f64>() / n;
            let var = novelty.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            mean + var.sqrt()
        }
    };
    let mass: f64 = checkerboard_kernel(novelty.kernel_size, params.sigma())?
        .data()
        .iter()
        .map(|v| v.abs())
        .sum();
    Ok(tau.max(params.novelty_floor * mass))
}

/// Greedy left-to-right boundary selection. A frame qualifies when it is a
/// local maximum (strictly above its left neighbour, at least its right
/// neighbour, so plateaus resolve to their first frame), reaches the
/// threshold, and lies at least `min_segment` frames after the previous
/// accepted boundary (initially frame 0). Frame 0 is never returned.
pub fn pick_peaks(novelty: &NoveltyCurve, params: &SegmentationParams) -> Result<Vec<usize>> {
    params.validate()?;
    let v = &novelty.values;
    if v.is_empty() {
        return Err(Error::InvalidParameter("empty novelty curve".into()));
    }
    let tau = effective_threshold(novelty, params)?;
    let mut peaks = Vec::new();
    let mut last = 0usize;
    for t in 1..v.len() {
        let right_ok = t + 1 >= v.len() || v[t] >= v[t + 1];
        if v[t] > v[t - 1] && right_ok && v[t] >= tau && t - last >= params.min_segment {
            peaks.push(t);
            last = t;
        }
    }
    Ok(peaks)
}

/// Returns `track` with segments filled: boundaries `[0] + peaks`, each
/// segment summarised by the clamped mean of its frames.
pub fn segment_track(track: &Track, params: &SegmentationParams) -> Result<Track> {
    let ssm = self_similarity(&track.frames)?;
    let novelty = novelty_curve(&ssm, params)?;
    let peaks = pick_peaks(&novelty, params)?;
    let mut starts = Vec::with_capacity(peaks.len() + 1);
    starts.push(0);
    starts.extend(peaks);
    let end = track.frames.len();
    let dim = track.frames.dim();
    let segments = starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let stop = starts.get(k + 1).copied().unwrap_or(end);
            let mut vector = mean_of(track.frames.rows[start..stop].iter().map(|r| r.as_slice()), dim);
            vector.as_mut_slice().iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
            Segment { start, vector }
        })
        .collect();
    Ok(Track {
        segments,
        ..track.clone()
    })
}

/// Segments every track in parallel. The first failing track (in catalog
/// order) determines the error.
pub fn segment_catalog(catalog: &Catalog, params: &SegmentationParams) -> Result<Catalog> {
    if catalog.is_standardized() {
        return Err(Error::InvalidParameter("cannot re-segment a standardized catalog".into()));
    }
    let results: Vec<Result<Track>> = catalog
        .tracks()
        .par_iter()
        .map(|t| {
            segment_track(t, params).map_err(|e| Error::InvalidSegments {
                track: t.id.clone(),
                message: e.to_string(),
            })
        })
        .collect();
    let mut out = catalog.clone();
    for (slot, result) in out.tracks_mut().iter_mut().zip(results) {
        *slot = result?;
    }
    Ok(out)
}
