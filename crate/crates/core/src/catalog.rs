//! Data model, catalog ingestion and persistence.
//!
//! Catalogs are JSON-lines files, one track per line:
//!
//! ```text
//! {"id": "t00", "frame_hop": 0.5, "frames": [[0.1, 0.8, ...], ...]}
//! ```
//!
//! A segmented catalog carries an extra `"segments"` array of
//! `{"start": <frame index>, "vector": [...]}` objects.
//!
//! Model files are little-endian binary:
//!
//! ```text
//! magic      b"SGM1"
//! header     L, H, D, N                       (u32 each)
//! flags      u32, bit 0 = standardization stats present
//! lr         f64 learning rate used for training
//! loss       u32 byte length + UTF-8 loss name
//! blocks     u32 rows, u32 cols, rows*cols f64 (row-major)
//! ```
//!
//! Blocks appear in [`Params::blocks`] order: for each layer the input,
//! forget, output and candidate gates as (W, U, b), then the output
//! projection (W, b), then optionally the standardization mean and stddev.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StandardizationStats;
use crate::rnn::{GateParams, LstmLayerParams, Matrix, ModelMeta, OutputParams, Params, SequenceModel};

/// Per-tag probabilities describing one frame or one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True when every element is finite and within `[0, 1]`.
    pub fn is_probability(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }
}

/// Time-ordered frame features of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub rows: Vec<FeatureVector>,
    /// Seconds per frame. Metadata only.
    pub frame_hop: f64,
}

impl FrameMatrix {
    pub fn new(rows: Vec<FeatureVector>, frame_hop: f64) -> Self {
        FrameMatrix { rows, frame_hop }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, FeatureVector::dim)
    }

    /// Arithmetic mean of all frames.
    pub fn mean(&self) -> FeatureVector {
        mean_of(self.rows.iter().map(|r| r.as_slice()), self.dim())
    }
}

/// A structural segment: its first frame and its aggregated feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub vector: FeatureVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: String,
    pub frames: FrameMatrix,
    /// Empty until the track is segmented.
    pub segments: Vec<Segment>,
}

impl Track {
    pub fn new(id: impl Into<String>, frames: FrameMatrix) -> Self {
        Track {
            id: id.into(),
            frames,
            segments: Vec::new(),
        }
    }

    pub fn is_segmented(&self) -> bool {
        !self.segments.is_empty()
    }

    /// Segment boundaries including the implicit end `T`.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.segments.iter().map(|s| s.start).collect();
        b.push(self.frames.len());
        b
    }

    pub fn segment_vectors(&self) -> impl Iterator<Item = &FeatureVector> {
        self.segments.iter().map(|s| &s.vector)
    }

    /// The first segment vector, used as the track's candidate representative.
    pub fn start_segment(&self) -> Option<&FeatureVector> {
        self.segments.first().map(|s| &s.vector)
    }

    fn validate(&self, dim: usize, check_range: bool) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::TooFewFrames {
                needed: 1,
                found: 0,
            });
        }
        for row in &self.frames.rows {
            check_vector(&self.id, row, dim, true)?;
        }
        let mut prev: Option<usize> = None;
        for seg in &self.segments {
            if prev.map_or(seg.start != 0, |p| seg.start <= p) || seg.start >= self.frames.len() {
                return Err(Error::InvalidSegments {
                    track: self.id.clone(),
                    message: format!(
                        "boundaries must start at 0 and increase strictly below {}",
                        self.frames.len()
                    ),
                });
            }
            prev = Some(seg.start);
            check_vector(&self.id, &seg.vector, dim, check_range)?;
        }
        Ok(())
    }
}

fn check_vector(track: &str, v: &FeatureVector, dim: usize, check_range: bool) -> Result<()> {
    if v.dim() != dim {
        return Err(Error::DimensionMismatch {
            track: track.to_string(),
            expected: dim,
            found: v.dim(),
        });
    }
    if let Some(&bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::OutOfRange {
            track: track.to_string(),
            value: bad,
        });
    }
    if check_range {
        if let Some(&bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::OutOfRange {
                track: track.to_string(),
                value: bad,
            });
        }
    }
    Ok(())
}

pub(crate) fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> FeatureVector {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        let inv = n as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
    }
    FeatureVector(acc)
}

/// An ordered, id-indexed collection of tracks sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    dim: usize,
    tracks: Vec<Track>,
    index: HashMap<String, usize>,
    standardization: Option<StandardizationStats>,
}

impl Catalog {
    pub fn new(dim: usize) -> Self {
        Catalog {
            dim,
            tracks: Vec::new(),
            index: HashMap::new(),
            standardization: None,
        }
    }

    pub fn from_tracks(dim: usize, tracks: impl IntoIterator<Item = Track>) -> Result<Self> {
        let mut catalog = Catalog::new(dim);
        for t in tracks {
            catalog.push(t)?;
        }
        Ok(catalog)
    }

    pub fn push(&mut self, track: Track) -> Result<()> {
        track.validate(self.dim, !self.is_standardized())?;
        if self.index.contains_key(&track.id) {
            return Err(Error::DuplicateId(track.id));
        }
        self.index.insert(track.id.clone(), self.tracks.len());
        self.tracks.push(track);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Mutable access for the segmentation build phase. Ids must not change.
    pub(crate) fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    pub fn get(&self, id: &str) -> Option<&Track> {
        self.index.get(id).map(|&i| &self.tracks[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn is_segmented(&self) -> bool {
        !self.tracks.is_empty() && self.tracks.iter().all(Track::is_segmented)
    }

    pub(crate) fn require_segmented(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        match self.tracks.iter().find(|t| !t.is_segmented()) {
            Some(t) => Err(Error::NotSegmented(t.id.clone())),
            None => Ok(()),
        }
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization.is_some()
    }

    pub fn standardization(&self) -> Option<&StandardizationStats> {
        self.standardization.as_ref()
    }

    pub(crate) fn set_standardization(&mut self, stats: Option<StandardizationStats>) {
        self.standardization = stats;
    }

    /// Writes the catalog as JSON-lines. Standardized catalogs are rejected
    /// since the file format only carries probabilities.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        if self.is_standardized() {
            return Err(Error::InvalidParameter(
                "standardized catalogs cannot be written as JSON-lines".into(),
            ));
        }
        for track in &self.tracks {
            let record = TrackRecord {
                id: track.id.clone(),
                frame_hop: track.frames.frame_hop,
                frames: track.frames.rows.iter().map(|r| r.0.clone()).collect(),
                segments: track
                    .is_segmented()
                    .then(|| track.segments.clone()),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<catalog>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut catalog: Option<Catalog> = None;
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io("<catalog>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TrackRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            let dim = record.frames.first().map_or(0, Vec::len);
            if dim == 0 {
                return Err(Error::Malformed {
                    line: lineno,
                    message: format!("track {} has no frames", record.id),
                });
            }
            let catalog = catalog.get_or_insert_with(|| Catalog::new(dim));
            let mut track = Track::new(
                record.id,
                FrameMatrix::new(
                    record.frames.into_iter().map(FeatureVector).collect(),
                    record.frame_hop,
                ),
            );
            track.segments = record.segments.unwrap_or_default();
            catalog.push(track)?;
        }
        catalog.ok_or(Error::EmptyCatalog)
    }
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    id: String,
    frame_hop: f64,
    frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<Segment>>,
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Catalog::read_jsonl(BufReader::new(file))
}

pub fn save_catalog(catalog: &Catalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    catalog.write_jsonl(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// One supervised example: a left-padded context window and the segment
/// vector that follows it inside the same track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub track_id: String,
    pub window: Vec<FeatureVector>,
    /// `false` marks padding steps.
    pub mask: Vec<bool>,
    pub target: FeatureVector,
}

/// Left-pads `recent` (keeping at most its last `n` entries) to a window of
/// exactly `n` vectors plus the matching mask.
pub fn pad_window(recent: &[FeatureVector], n: usize, dim: usize) -> (Vec<FeatureVector>, Vec<bool>) {
    let used = &recent[recent.len().saturating_sub(n)..];
    let pad = n - used.len();
    let mut window = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for _ in 0..pad {
        window.push(FeatureVector::zeros(dim));
        mask.push(false);
    }
    for v in used {
        window.push(v.clone());
        mask.push(true);
    }
    (window, mask)
}

/// Builds one (window, target) pair per within-track segment transition.
pub fn build_training_sequences(catalog: &Catalog, context_length: usize) -> Result<Vec<TrainingPair>> {
    if context_length == 0 {
        return Err(Error::InvalidParameter("context length must be at least 1".into()));
    }
    catalog.require_segmented()?;
    let dim = catalog.dim();
    let mut pairs = Vec::new();
    for track in catalog.tracks() {
        let vectors: Vec<FeatureVector> = track.segment_vectors().cloned().collect();
        for j in 1..vectors.len() {
            let (window, mask) = pad_window(&vectors[..j], context_length, dim);
            pairs.push(TrainingPair {
                track_id: track.id.clone(),
                window,
                mask,
                target: vectors[j].clone(),
            });
        }
    }
    Ok(pairs)
}

const MAGIC: &[u8; 4] = b"SGM1";
const FLAG_STANDARDIZED: u32 = 1;

pub fn write_model<W: Write>(model: &SequenceModel, mut out: W) -> Result<()> {
    model.validate()?;
    let mut buf = Vec::with_capacity(64 + 8 * model.params.param_count());
    buf.extend_from_slice(MAGIC);
    for v in [
        model.layers(),
        model.hidden(),
        model.dim(),
        model.meta.context_length,
    ] {
        buf.extend_from_slice(&to_u32(v)?.to_le_bytes());
    }
    let flags = if model.standardization.is_some() {
        FLAG_STANDARDIZED
    } else {
        0
    };
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&model.meta.learning_rate.to_le_bytes());
    buf.extend_from_slice(&to_u32(model.meta.loss.len())?.to_le_bytes());
    buf.extend_from_slice(model.meta.loss.as_bytes());

    let mut put_block = |rows: usize, cols: usize, data: &[f64]| -> Result<()> {
        buf.extend_from_slice(&to_u32(rows)?.to_le_bytes());
        buf.extend_from_slice(&to_u32(cols)?.to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    };
    for layer in &model.params.layers {
        for gate in &layer.gates {
            put_block(gate.w.rows(), gate.w.cols(), gate.w.data())?;
            put_block(gate.u.rows(), gate.u.cols(), gate.u.data())?;
            put_block(gate.b.len(), 1, &gate.b)?;
        }
    }
    let output = &model.params.output;
    put_block(output.w.rows(), output.w.cols(), output.w.data())?;
    put_block(output.b.len(), 1, &output.b)?;
    if let Some(stats) = &model.standardization {
        put_block(stats.mean.len(), 1, &stats.mean)?;
        put_block(stats.std.len(), 1, &stats.std)?;
    }
    out.write_all(&buf).map_err(|e| Error::io("<model>", e))
}

pub fn read_model<R: Read>(mut input: R) -> Result<SequenceModel> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<model>", e))?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };

    let magic = r.take(4)?;
    if magic != MAGIC {
        if &magic[..3] == b"SGM" {
            return Err(Error::VersionMismatch(String::from_utf8_lossy(magic).into_owned()));
        }
        return Err(Error::CorruptModel("bad magic".into()));
    }
    let layers = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let context_length = r.u32()? as usize;
    if layers == 0 || hidden == 0 || dim == 0 || context_length == 0 {
        return Err(Error::ShapeMismatch("header dimensions must be positive".into()));
    }
    let flags = r.u32()?;
    if flags & !FLAG_STANDARDIZED != 0 {
        return Err(Error::CorruptModel(format!("unknown flags {flags:#x}")));
    }
    let learning_rate = r.f64()?;
    let loss_len = r.u32()? as usize;
    let loss = String::from_utf8(r.take(loss_len)?.to_vec())
        .map_err(|_| Error::CorruptModel("loss name is not UTF-8".into()))?;

    let mut layer_params = Vec::with_capacity(layers);
    for l in 0..layers {
        let in_dim = if l == 0 { dim } else { hidden };
        let mut gate = || -> Result<GateParams> {
            Ok(GateParams {
                w: r.matrix(hidden, in_dim)?,
                u: r.matrix(hidden, hidden)?,
                b: r.matrix(hidden, 1)?.into_data(),
            })
        };
        layer_params.push(LstmLayerParams {
            gates: [gate()?, gate()?, gate()?, gate()?],
        });
    }
    let output = OutputParams {
        w: r.matrix(dim, hidden)?,
        b: r.matrix(dim, 1)?.into_data(),
    };
    let standardization = if flags & FLAG_STANDARDIZED != 0 {
        Some(StandardizationStats {
            mean: r.matrix(dim, 1)?.into_data(),
            std: r.matrix(dim, 1)?.into_data(),
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptModel(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = SequenceModel {
        params: Params {
            layers: layer_params,
            output,
        },
        meta: ModelMeta {
            context_length,
            learning_rate,
            loss,
        },
        standardization,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &SequenceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(model, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SequenceModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{v} does not fit in u32")))
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let got_rows = self.u32()? as usize;
        let got_cols = self.u32()? as usize;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(Error::ShapeMismatch(format!(
                "expected a {rows}x{cols} block, found {got_rows}x{got_cols}"
            )));
        }
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}
