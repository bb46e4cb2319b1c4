//! Python module `ncdsearch`: compression distance, chunking, the Hampel
//! identifier and a searchable corpus.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use ncdsearch_core::corpus::{IngestOutcome, SizeBin};
use ncdsearch_core::{
    self as core, CorpusError, CorpusIndex, DocumentInput, Engine, GTable, IngestConfig,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

const DEFAULT_REPLICATES: usize = 10_000;
const DEFAULT_SEED: u64 = 20_090_101;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn corpus_err(e: CorpusError) -> PyErr {
    match e {
        CorpusError::Io { .. } | CorpusError::NotFound(_) => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Compressed size of `data` in bits.
#[pyfunction]
fn compressed_size(data: &[u8]) -> u64 {
    core::compressed_size(data).bits()
}

/// Normalized compression distance between two byte strings.
#[pyfunction]
fn ncd(x: &[u8], y: &[u8]) -> PyResult<f64> {
    core::ncd(x, y).map_err(value_err)
}

/// Block ranges `(start, end)` of a `length`-byte document in the `bin_kb` bin.
#[pyfunction]
#[pyo3(signature = (length, bin_kb, overlap = 0.1))]
fn chunk(length: usize, bin_kb: u32, overlap: f64) -> PyResult<Vec<(usize, usize)>> {
    if bin_kb == 0 {
        return Err(value_err("bin_kb must be at least 1"));
    }
    let ranges = core::chunk(length, SizeBin::new(bin_kb), overlap).map_err(corpus_err)?;
    Ok(ranges.iter().map(|r| (r.start, r.end)).collect())
}

/// `(median, mad)` of a sample.
#[pyfunction]
fn robust_stats(sample: Vec<f64>) -> PyResult<(f64, f64)> {
    let s = core::robust_stats(&sample).map_err(value_err)?;
    Ok((s.median, s.mad))
}

/// Indices of the lower outliers of `sample` at threshold `g`.
#[pyfunction]
fn hampel_lower(sample: Vec<f64>, g: f64) -> PyResult<Vec<usize>> {
    Ok(core::hampel_lower(&sample, g).map_err(value_err)?.flagged)
}

/// Monte Carlo threshold g(n; alpha).
#[pyfunction]
#[pyo3(signature = (n, alpha, replicates = DEFAULT_REPLICATES, seed = DEFAULT_SEED))]
fn estimate_g(py: Python<'_>, n: usize, alpha: f64, replicates: usize, seed: u64) -> PyResult<f64> {
    py.detach(|| core::estimate_g(n, alpha, replicates, seed))
        .map_err(value_err)
}

/// An in-memory corpus that can be persisted and queried.
#[pyclass(module = "ncdsearch")]
struct Corpus {
    index: CorpusIndex,
    gtables: HashMap<(usize, u64), Arc<GTable>>,
}

impl Corpus {
    fn wrap(index: CorpusIndex) -> Corpus {
        Corpus {
            index,
            gtables: HashMap::new(),
        }
    }

    fn gtable(&mut self, replicates: usize, seed: u64) -> Arc<GTable> {
        Arc::clone(
            self.gtables
                .entry((replicates, seed))
                .or_insert_with(|| Arc::new(GTable::new(replicates, seed))),
        )
    }
}

#[pymethods]
impl Corpus {
    #[new]
    #[pyo3(signature = (n_max = 32, overlap = 0.1))]
    fn new(n_max: u32, overlap: f64) -> PyResult<Corpus> {
        let config = IngestConfig {
            n_max,
            overlap_fraction: overlap,
            ..IngestConfig::default()
        };
        Ok(Corpus::wrap(CorpusIndex::new(config).map_err(corpus_err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Corpus> {
        Ok(Corpus::wrap(CorpusIndex::load(&path).map_err(corpus_err)?))
    }

    fn persist(&self, path: PathBuf) -> PyResult<()> {
        self.index.persist(&path).map_err(corpus_err)
    }

    /// Add one document; returns False if an identical copy was already present.
    #[pyo3(signature = (doc_id, data, name = None, subjects = None))]
    fn add(
        &mut self,
        py: Python<'_>,
        doc_id: String,
        data: Vec<u8>,
        name: Option<String>,
        subjects: Option<Vec<String>>,
    ) -> PyResult<bool> {
        let mut doc = DocumentInput::new(doc_id, data).with_subjects(subjects.unwrap_or_default());
        if let Some(name) = name {
            doc.name = name;
        }
        let index = &mut self.index;
        let outcome = py.detach(|| index.ingest(doc)).map_err(corpus_err)?;
        Ok(matches!(outcome, IngestOutcome::Added { .. }))
    }

    /// Add every text file of a directory; returns the number of files read.
    fn add_dir(&mut self, py: Python<'_>, path: PathBuf) -> PyResult<usize> {
        let docs = core::read_documents_dir(&path).map_err(corpus_err)?;
        let index = &mut self.index;
        py.detach(|| index.ingest_all(docs))
            .map(|o| o.len())
            .map_err(corpus_err)
    }

    #[getter]
    fn document_count(&self) -> usize {
        self.index.document_count()
    }

    #[getter]
    fn block_count(&self) -> usize {
        self.index.block_count()
    }

    fn doc_ids(&self) -> Vec<String> {
        self.index.documents().map(|d| d.doc_id.clone()).collect()
    }

    /// Search the corpus. Returns a dict with `flagged`, `votes`, `ranking`,
    /// `highlights` and friends.
    #[pyo3(signature = (text, alpha = 0.05, replicates = DEFAULT_REPLICATES, seed = DEFAULT_SEED))]
    fn query<'py>(
        &mut self,
        py: Python<'py>,
        text: Vec<u8>,
        alpha: f64,
        replicates: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let table = self.gtable(replicates, seed);
        let index = &self.index;
        let result = py
            .detach(|| Engine::new(index).query(&text, alpha, &table))
            .map_err(value_err)?;
        let json = serde_json::to_string(&result).map_err(value_err)?;
        json_to_py(py, &json)
    }

    fn __len__(&self) -> usize {
        self.index.document_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(documents={}, blocks={}, n_max={})",
            self.index.document_count(),
            self.index.block_count(),
            self.index.n_max()
        )
    }
}

#[pymodule]
pub fn ncdsearch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compressed_size, m)?)?;
    m.add_function(wrap_pyfunction!(ncd, m)?)?;
    m.add_function(wrap_pyfunction!(chunk, m)?)?;
    m.add_function(wrap_pyfunction!(robust_stats, m)?)?;
    m.add_function(wrap_pyfunction!(hampel_lower, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_g, m)?)?;
    m.add_class::<Corpus>()?;
    Ok(())
}
