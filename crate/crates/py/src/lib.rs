//! Python bindings: catalogs, the sequence model, playlist generation and the
//! three similarity metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use trackflow::catalog::{build_training_sequences, load_catalog, load_model, save_catalog, save_model};
use trackflow::features::{fit_standardizer, generate_synthetic_catalog, SynthSpec};
use trackflow::playlist::{self, GenerateConfig};
use trackflow::rnn::{self, init_model, Optimizer};
use trackflow::segmentation::{segment_catalog, SegmentationParams, Threshold};
use trackflow::similarity;
use trackflow::{Error, FeatureVector, Metric, SequenceModel, TrainConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::UnknownTrack(_) => PyKeyError::new_err(e.to_string()),
        Error::Divergence { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn metric(name: &str, dcg_depth: Option<usize>, dim: usize) -> PyResult<Metric> {
    Metric::parse(name, dcg_depth.unwrap_or(dim)).map_err(to_py)
}

/// A track catalog, optionally segmented.
#[pyclass(name = "Catalog", module = "trackflow_py")]
struct PyCatalog {
    inner: trackflow::Catalog,
}

#[pymethods]
impl PyCatalog {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCatalog {
            inner: load_catalog(path).map_err(to_py)?,
        })
    }

    /// Synthetic catalog with planted clusters and segments.
    #[staticmethod]
    #[pyo3(signature = (tracks=20, clusters=2, dim=50, seed=0, noise=0.02))]
    fn synth(tracks: usize, clusters: usize, dim: usize, seed: u64, noise: f64) -> PyResult<Self> {
        let spec = SynthSpec {
            tracks,
            clusters,
            dim,
            seed,
            noise,
            ..SynthSpec::default()
        };
        Ok(PyCatalog {
            inner: generate_synthetic_catalog(&spec).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_catalog(&self.inner, path).map_err(to_py)
    }

    /// Returns a segmented copy.
    #[pyo3(signature = (kernel_size=16, sigma=None, threshold=None, min_segment=4, novelty_floor=0.02))]
    fn segment(
        &self,
        py: Python<'_>,
        kernel_size: usize,
        sigma: Option<f64>,
        threshold: Option<f64>,
        min_segment: usize,
        novelty_floor: f64,
    ) -> PyResult<Self> {
        let params = SegmentationParams {
            kernel_size,
            sigma,
            threshold: threshold.map_or(Threshold::MeanPlusStd, Threshold::Fixed),
            min_segment,
            novelty_floor,
        };
        let inner = py.detach(|| segment_catalog(&self.inner, &params)).map_err(to_py)?;
        Ok(PyCatalog { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn is_segmented(&self) -> bool {
        self.inner.is_segmented()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.tracks().iter().map(|t| t.id.clone()).collect()
    }

    /// Segment starts of `track_id` followed by its frame count.
    fn boundaries(&self, track_id: &str) -> PyResult<Vec<usize>> {
        self.inner
            .get(track_id)
            .map(|t| t.boundaries())
            .ok_or_else(|| PyKeyError::new_err(track_id.to_string()))
    }

    fn segment_vectors(&self, track_id: &str) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .get(track_id)
            .map(|t| t.segment_vectors().map(|v| v.as_slice().to_vec()).collect())
            .ok_or_else(|| PyKeyError::new_err(track_id.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Catalog(tracks={}, dim={}, segmented={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.is_segmented()
        )
    }
}

/// The stacked LSTM sequence model.
#[pyclass(name = "Model", module = "trackflow_py")]
struct PyModel {
    inner: SequenceModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (dim, hidden=64, layers=2, seed=0))]
    fn init(dim: usize, hidden: usize, layers: usize, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: init_model(layers, hidden, dim, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, path).map_err(to_py)
    }

    /// Trains in place on the catalog's within-track transitions and returns
    /// the per-epoch losses.
    #[pyo3(signature = (catalog, context=8, epochs=200, lr=1e-3, optimizer="adam", batch_size=16, seed=0, clip_norm=5.0, standardize=false))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        catalog: &PyCatalog,
        context: usize,
        epochs: usize,
        lr: f64,
        optimizer: &str,
        batch_size: usize,
        seed: u64,
        clip_norm: f64,
        standardize: bool,
    ) -> PyResult<Vec<f64>> {
        let config = TrainConfig {
            context_length: context,
            epochs,
            learning_rate: lr,
            optimizer: optimizer.parse::<Optimizer>().map_err(to_py)?,
            batch_size,
            seed,
            clip_norm,
        };
        let mut model = self.inner.clone();
        if standardize {
            model.standardization = Some(fit_standardizer(&catalog.inner).map_err(to_py)?);
        }
        let (model, report) = py
            .detach(|| {
                let pairs = build_training_sequences(&catalog.inner, context)?;
                rnn::train(model, &pairs, &config)
            })
            .map_err(to_py)?;
        self.inner = model;
        Ok(report.epoch_losses)
    }

    /// Prediction for the segment that follows `recent` (oldest first).
    fn predict_next(&self, recent: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let recent: Vec<FeatureVector> = recent.into_iter().map(FeatureVector::new).collect();
        rnn::predict_next(&self.inner, &recent)
            .map(FeatureVector::into_inner)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden()
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers()
    }

    #[getter]
    fn context_length(&self) -> usize {
        self.inner.context_length()
    }

    fn param_count(&self) -> usize {
        self.inner.params.param_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(layers={}, hidden={}, dim={}, context={})",
            self.inner.layers(),
            self.inner.hidden(),
            self.inner.dim(),
            self.inner.context_length()
        )
    }
}

/// A generated playlist.
#[pyclass(name = "Playlist", module = "trackflow_py", get_all)]
struct PyPlaylist {
    seed: String,
    metric: String,
    tracks: Vec<String>,
    scores: Vec<f64>,
    truncated: bool,
    no_near_neighbour_events: usize,
    json: String,
}

#[pymethods]
impl PyPlaylist {
    fn __len__(&self) -> usize {
        self.tracks.len()
    }

    fn __repr__(&self) -> String {
        format!("Playlist({}, {:?})", self.metric, self.tracks)
    }
}

#[pyfunction]
#[pyo3(signature = (catalog, model, seed_track, length=10, metric="dcg", dcg_depth=None, nn_threshold=0.5))]
fn generate(
    catalog: &PyCatalog,
    model: &PyModel,
    seed_track: &str,
    length: usize,
    metric: &str,
    dcg_depth: Option<usize>,
    nn_threshold: f64,
) -> PyResult<PyPlaylist> {
    let m = self::metric(metric, dcg_depth, catalog.inner.dim())?;
    let p = playlist::generate(
        &catalog.inner,
        &model.inner,
        seed_track,
        length,
        m,
        &GenerateConfig { nn_threshold },
    )
    .map_err(to_py)?;
    Ok(PyPlaylist {
        seed: p.seed.clone(),
        metric: p.metric.to_string(),
        tracks: p.tracks.clone(),
        scores: p.steps.iter().map(|s| s.score).collect(),
        truncated: p.truncated,
        no_near_neighbour_events: p.no_near_neighbour_events(),
        json: p.to_json_pretty().map_err(to_py)?,
    })
}

/// One playlist per metric from the same seed, with coherence reports, as JSON.
#[pyfunction]
#[pyo3(signature = (catalog, model, seed_track, length=10, metrics=vec!["cosine".to_string(), "l2".to_string(), "dcg".to_string()], dcg_depth=None, nn_threshold=0.5))]
fn compare(
    catalog: &PyCatalog,
    model: &PyModel,
    seed_track: &str,
    length: usize,
    metrics: Vec<String>,
    dcg_depth: Option<usize>,
    nn_threshold: f64,
) -> PyResult<String> {
    let metrics = metrics
        .iter()
        .map(|m| metric(m, dcg_depth, catalog.inner.dim()))
        .collect::<PyResult<Vec<_>>>()?;
    let cmp = playlist::compare(
        &catalog.inner,
        &model.inner,
        seed_track,
        length,
        &metrics,
        &GenerateConfig { nn_threshold },
    )
    .map_err(to_py)?;
    serde_json::to_string_pretty(&cmp).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn cosine_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(similarity::cosine_distance(&a, &b))
}

#[pyfunction]
fn l2_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    similarity::l2_distance(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (prediction, candidate, depth=None))]
fn dcg_similarity(prediction: Vec<f64>, candidate: Vec<f64>, depth: Option<usize>) -> PyResult<f64> {
    let depth = depth.unwrap_or(prediction.len());
    similarity::dcg_similarity(&prediction, &candidate, depth).map_err(to_py)
}

#[pymodule]
fn trackflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPlaylist>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(l2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(dcg_similarity, m)?)?;
    Ok(())
}
