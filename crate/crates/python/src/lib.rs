//! Python bindings for `tuplecrf`.
//!
//! Matrices cross the boundary as row-major lists of lists, vectors as
//! lists, label tuples as lists of ints.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tuplecrf::evaluation::{evaluate as evaluate_model, independent_mode, predict_topk};
use tuplecrf::inference;
use tuplecrf::io::{load_model, save_model, ModelFile};
use tuplecrf::learning::nuclear;
use tuplecrf::learning::{fobos_train, StepSchedule, TrainConfig};
use tuplecrf::model::rank_report as params_rank_report;
use tuplecrf::synth::{generate, SynthConfig};
use tuplecrf::{AnnotatedImage, Dataset, Error, PotentialTables};

fn to_py(e: Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn tables(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>) -> PyResult<PotentialTables> {
    let unary = unary.into_iter().map(DVector::from_vec).collect();
    let binary = binary.iter().map(|b| matrix(b)).collect::<PyResult<_>>()?;
    PotentialTables::new(unary, binary).map_err(to_py)
}

fn dataset(model: &tuplecrf::Model, features: Vec<Vec<f64>>, tuples: Vec<Vec<usize>>) -> PyResult<Dataset> {
    if features.len() != tuples.len() {
        return Err(PyValueError::new_err("features and tuples differ in length"));
    }
    let images = features
        .into_iter()
        .zip(tuples)
        .enumerate()
        .map(|(i, (x, y))| AnnotatedImage {
            image_id: format!("img{i}"),
            features: DVector::from_vec(x),
            gold_tuples: [y].into_iter().collect(),
        })
        .collect();
    Dataset::new(model.spec.clone(), images).map_err(to_py)
}

type Ranked = Vec<(Vec<usize>, f64)>;
type Tables = (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);
type RankRow = (String, (usize, usize), usize, f64, Vec<f64>);

/// A chain model with its vocabularies, label embeddings and parameters.
#[pyclass(name = "Model", module = "tuplecrf_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: tuplecrf::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = load_model(&path).map_err(to_py)?;
        Ok(PyModel { inner: file.model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&ModelFile::new(self.inner.clone(), None), &path).map_err(to_py)
    }

    #[getter]
    fn argument_types(&self) -> Vec<String> {
        self.inner.spec.argument_types().into_iter().map(String::from).collect()
    }

    #[getter]
    fn vocabularies(&self) -> Vec<Vec<String>> {
        self.inner
            .spec
            .vocabularies()
            .iter()
            .map(|v| v.tokens().to_vec())
            .collect()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.spec.input_dim()
    }

    /// Potential tables `(unary, binary)` for one input.
    fn tables(&self, x: Vec<f64>) -> PyResult<Tables> {
        let t = self.inner.tables(&DVector::from_vec(x)).map_err(to_py)?;
        Ok((
            t.unary.iter().map(|u| u.iter().copied().collect()).collect(),
            t.binary.iter().map(rows).collect(),
        ))
    }

    fn score(&self, x: Vec<f64>, y: Vec<usize>) -> PyResult<f64> {
        let t = self.inner.tables(&DVector::from_vec(x)).map_err(to_py)?;
        t.check_labels(&y).map_err(to_py)?;
        Ok(t.score(&y))
    }

    #[pyo3(signature = (x, k = 5))]
    fn predict_topk(&self, x: Vec<f64>, k: usize) -> PyResult<Ranked> {
        let p = predict_topk(&self.inner, "", &DVector::from_vec(x), k).map_err(to_py)?;
        Ok(p.top_k)
    }

    /// Label tokens of a tuple.
    fn decode(&self, y: Vec<usize>) -> PyResult<Vec<String>> {
        self.inner.spec.check_labels(&y).map_err(to_py)?;
        Ok(self.inner.spec.decode(&y))
    }

    /// `(name, shape, effective_rank, nuclear_norm, singular_values)` per matrix.
    #[pyo3(signature = (tolerance = 1e-8))]
    fn rank_report(&self, tolerance: f64) -> Vec<RankRow> {
        params_rank_report(&self.inner.params, tolerance)
            .into_iter()
            .map(|r| (r.name, r.shape, r.effective_rank, r.nuclear_norm, r.singular_values))
            .collect()
    }

    /// Copy with every binary matrix zeroed.
    fn independent(&self) -> Self {
        let mut inner = self.inner.clone();
        inner.params = independent_mode(&inner.params);
        PyModel { inner }
    }

    /// Per-type micro precision of the top-k label sets against one gold
    /// tuple per image, plus the mean under key `"mean"`.
    #[pyo3(signature = (features, tuples, k = 5))]
    fn evaluate(&self, features: Vec<Vec<f64>>, tuples: Vec<Vec<usize>>, k: usize) -> PyResult<BTreeMap<String, f64>> {
        let data = dataset(&self.inner, features, tuples)?;
        let report = evaluate_model(&self.inner, &data, k).map_err(to_py)?;
        let mut out: BTreeMap<String, f64> = report
            .per_type
            .into_iter()
            .map(|p| (p.argument_type, p.precision))
            .collect();
        out.insert("mean".into(), report.mean_precision);
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(types={:?}, labels={:?}, input_dim={})",
            self.inner.spec.argument_types(),
            self.inner.spec.label_counts(),
            self.inner.spec.input_dim()
        )
    }
}

#[pyfunction]
fn log_partition(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    Ok(inference::log_partition(&tables(unary, binary)?))
}

/// `(unary, pairwise, log_partition)` marginals.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn marginals(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, f64)> {
    let m = inference::marginals(&tables(unary, binary)?);
    Ok((
        m.unary.iter().map(|u| u.iter().copied().collect()).collect(),
        m.pairwise.iter().map(rows).collect(),
        m.log_partition,
    ))
}

#[pyfunction]
fn viterbi(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>) -> PyResult<(Vec<usize>, f64)> {
    Ok(inference::viterbi(&tables(unary, binary)?))
}

#[pyfunction]
fn kbest(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>, k: usize) -> PyResult<Ranked> {
    inference::kbest(&tables(unary, binary)?, k).map_err(to_py)
}

/// Every tuple with its score, best first.
#[pyfunction]
#[pyo3(signature = (unary, binary, limit = 1_000_000))]
fn brute_force(unary: Vec<Vec<f64>>, binary: Vec<Vec<Vec<f64>>>, limit: u128) -> PyResult<Ranked> {
    inference::brute_force(&tables(unary, binary)?, limit).map_err(to_py)
}

#[pyfunction]
fn singular_values(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(nuclear::singular_values(&matrix(&m)?))
}

#[pyfunction]
fn nuclear_norm(m: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(nuclear::nuclear_norm(&matrix(&m)?))
}

#[pyfunction]
fn prox_nuclear(m: Vec<Vec<f64>>, tau: f64) -> PyResult<Vec<Vec<f64>>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(PyValueError::new_err("threshold must be >= 0"));
    }
    Ok(rows(&nuclear::prox_nuclear(&matrix(&m)?, tau)))
}

/// Row-normalized semantic-equivalence vectors from a symmetric count matrix.
#[pyfunction]
fn ser(counts: Vec<Vec<u64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = tuplecrf::embeddings::CooccurrenceCounts::from_rows("ser", &counts).map_err(to_py)?;
    Ok(rows(&tuplecrf::embeddings::ser_embeddings(&c)))
}

/// Samples a synthetic problem. Returns `(truth, train, heldout)` where the
/// two splits are lists of `(features, tuple)`.
#[pyfunction]
#[pyo3(signature = (
    labels = vec![15, 15, 15],
    embedding_dims = vec![10, 10, 10],
    input_dim = 20,
    rank = 2,
    samples = 2000,
    heldout = 500,
    noise = 0.0,
    scale = None,
    seed = 7,
))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn synth(
    labels: Vec<usize>,
    embedding_dims: Vec<usize>,
    input_dim: usize,
    rank: usize,
    samples: usize,
    heldout: usize,
    noise: f64,
    scale: Option<f64>,
    seed: u64,
) -> PyResult<(PyModel, Vec<(Vec<f64>, Vec<usize>)>, Vec<(Vec<f64>, Vec<usize>)>)> {
    let config = SynthConfig {
        labels,
        embedding_dims,
        input_dim,
        rank,
        samples,
        heldout,
        noise,
        scale: scale.unwrap_or(SynthConfig::default().scale),
        seed,
    };
    let data = generate(&config).map_err(to_py)?;
    let split = |s: &[tuplecrf::synth::SynthSample]| {
        s.iter()
            .map(|s| (s.features.iter().copied().collect(), s.tuple.clone()))
            .collect()
    };
    let train = split(&data.train);
    let held = split(&data.heldout);
    Ok((PyModel { inner: data.model }, train, held))
}

/// Trains a model with the vocabularies and embeddings of `template`.
/// Returns the trained model and the objective after every iteration,
/// starting with the all-zero point.
#[pyfunction]
#[pyo3(signature = (
    template, features, tuples,
    c1 = 0.1, c2 = 0.1, step = 0.01, max_iter = 200, schedule = "inverse-sqrt", tolerance = 1e-9,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    template: &PyModel,
    features: Vec<Vec<f64>>,
    tuples: Vec<Vec<usize>>,
    c1: f64,
    c2: f64,
    step: f64,
    max_iter: usize,
    schedule: &str,
    tolerance: f64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let step_schedule: StepSchedule = schedule.parse().map_err(PyValueError::new_err)?;
    let config = TrainConfig {
        c1,
        c2,
        base_step: step,
        max_iter,
        step_schedule,
        tolerance,
        ..TrainConfig::default()
    };
    let data = dataset(&template.inner, features, tuples)?;
    let emb = template.inner.embeddings.clone();
    let out = fobos_train(&data, &emb, &config).map_err(to_py)?;
    let objectives = out.objectives();
    let model = tuplecrf::Model::new(data.spec, emb, out.params).map_err(to_py)?;
    Ok((PyModel { inner: model }, objectives))
}

#[pymodule]
fn tuplecrf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(marginals, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(kbest, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(nuclear_norm, m)?)?;
    m.add_function(wrap_pyfunction!(prox_nuclear, m)?)?;
    m.add_function(wrap_pyfunction!(ser, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
