//! Retrieval experiments and ROC analysis.
//!
//! Three kinds of labelled queries are built from a document collection:
//!
//! 1. a leading fragment of a document, with the document still indexed;
//! 2. the same fragment, but cut out of its document before indexing;
//! 3. fragments of outside documents, relevant to every indexed document
//!    that shares a subject label.
//!
//! A document counts as retrieved when it gets at least one vote. Sweeping
//! alpha from 0 (nothing flagged) to 1 traces a ROC curve per query.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusIndex, DocumentInput, IngestConfig};
use crate::engine::{Engine, EngineError, QueryResult, ScoredQuery};
use crate::outliers::GTable;

pub const MIN_FRAGMENT: usize = 1024;

pub const DEFAULT_ALPHA_GRID: [f64; 10] = [0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fragment length {0} is below the 1024-byte minimum")]
    FragmentTooShort(usize),
    #[error("no documents to build queries from")]
    EmptyCorpus,
    #[error("alpha grid must be strictly increasing and include 0 and 1")]
    AlphaGrid,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ExperimentKind {
    FragmentInCorpus,
    FragmentExcised,
    SubjectAffinity,
}

impl ExperimentKind {
    pub fn number(self) -> u8 {
        match self {
            ExperimentKind::FragmentInCorpus => 1,
            ExperimentKind::FragmentExcised => 2,
            ExperimentKind::SubjectAffinity => 3,
        }
    }
}

impl From<ExperimentKind> for u8 {
    fn from(k: ExperimentKind) -> u8 {
        k.number()
    }
}

impl TryFrom<u8> for ExperimentKind {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(ExperimentKind::FragmentInCorpus),
            2 => Ok(ExperimentKind::FragmentExcised),
            3 => Ok(ExperimentKind::SubjectAffinity),
            _ => Err(format!("unknown experiment {v}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Relevance {
    Documents(BTreeSet<String>),
    Subjects(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub id: String,
    pub kind: ExperimentKind,
    pub bytes: Vec<u8>,
    pub relevance: Relevance,
    /// Document the fragment was taken from.
    pub source: String,
}

impl LabeledQuery {
    /// Indexed documents that count as true positives.
    pub fn relevant_docs(&self, index: &CorpusIndex) -> BTreeSet<String> {
        match &self.relevance {
            Relevance::Documents(ids) => ids
                .iter()
                .filter(|id| index.document(id).is_some())
                .cloned()
                .collect(),
            Relevance::Subjects(subjects) => index
                .documents()
                .filter(|d| !d.subjects.is_disjoint(subjects))
                .map(|d| d.doc_id.clone())
                .collect(),
        }
    }
}

fn select_documents<'d>(
    docs: &'d [DocumentInput],
    fragment_length: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'d DocumentInput>, EvalError> {
    if fragment_length < MIN_FRAGMENT {
        return Err(EvalError::FragmentTooShort(fragment_length));
    }
    if docs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut eligible: Vec<&DocumentInput> = docs
        .iter()
        .filter(|d| {
            let ok = d.bytes.len() >= fragment_length;
            if !ok {
                log::warn!(
                    "skipping {}: {} bytes is shorter than the {fragment_length}-byte fragment",
                    d.doc_id,
                    d.bytes.len()
                );
            }
            ok
        })
        .collect();
    eligible.shuffle(rng);
    eligible.truncate(count);
    Ok(eligible)
}

/// Leading fragments of up to `count` randomly chosen documents, each
/// relevant only to its own document. The corpus is left as is.
pub fn make_experiment1(
    docs: &[DocumentInput],
    fragment_length: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledQuery>, EvalError> {
    Ok(select_documents(docs, fragment_length, count, rng)?
        .into_iter()
        .enumerate()
        .map(|(i, d)| LabeledQuery {
            id: format!("e1-q{i:03}-{}", d.doc_id),
            kind: ExperimentKind::FragmentInCorpus,
            bytes: d.bytes[..fragment_length].to_vec(),
            relevance: Relevance::Documents(BTreeSet::from([d.doc_id.clone()])),
            source: d.doc_id.clone(),
        })
        .collect())
}

/// As [`make_experiment1`] (same documents for the same RNG state), but the
/// fragment is removed from its document in the returned collection. The
/// source document stays the one relevant answer.
pub fn make_experiment2(
    docs: &[DocumentInput],
    fragment_length: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DocumentInput>, Vec<LabeledQuery>), EvalError> {
    let selected = select_documents(docs, fragment_length, count, rng)?;
    let mut excised: BTreeSet<&str> = BTreeSet::new();
    let mut queries = Vec::new();
    for d in selected {
        if d.bytes.len() == fragment_length {
            log::warn!("skipping {}: nothing would remain after excision", d.doc_id);
            continue;
        }
        excised.insert(&d.doc_id);
        queries.push(LabeledQuery {
            id: format!("e2-q{:03}-{}", queries.len(), d.doc_id),
            kind: ExperimentKind::FragmentExcised,
            bytes: d.bytes[..fragment_length].to_vec(),
            relevance: Relevance::Documents(BTreeSet::from([d.doc_id.clone()])),
            source: d.doc_id.clone(),
        });
    }
    let modified = docs
        .iter()
        .map(|d| {
            let mut d = d.clone();
            if excised.contains(d.doc_id.as_str()) {
                d.bytes.drain(..fragment_length);
            }
            d
        })
        .collect();
    Ok((modified, queries))
}

/// Start offsets of `k` evenly spaced, non-overlapping fragments, or fewer
/// when the document is too short.
pub fn fragment_offsets(len: usize, fragment_length: usize, k: usize) -> Vec<usize> {
    let fit = len.checked_div(fragment_length).unwrap_or(0);
    let k = k.min(fit);
    match k {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let span = len - fragment_length;
            (0..k).map(|i| i * span / (k - 1)).collect()
        }
    }
}

/// `fragments_per_doc` fragments of every outside document, each relevant
/// to the indexed documents that share one of its subjects.
pub fn make_experiment3(
    external: &[DocumentInput],
    fragment_length: usize,
    fragments_per_doc: usize,
) -> Result<Vec<LabeledQuery>, EvalError> {
    if fragment_length < MIN_FRAGMENT {
        return Err(EvalError::FragmentTooShort(fragment_length));
    }
    let mut queries = Vec::new();
    for d in external {
        let offsets = fragment_offsets(d.bytes.len(), fragment_length, fragments_per_doc);
        if offsets.len() < fragments_per_doc {
            log::warn!(
                "{}: room for only {} of {fragments_per_doc} fragments",
                d.doc_id,
                offsets.len()
            );
        }
        for (j, off) in offsets.into_iter().enumerate() {
            queries.push(LabeledQuery {
                id: format!("e3-q{:03}-{}-f{j}", queries.len(), d.doc_id),
                kind: ExperimentKind::SubjectAffinity,
                bytes: d.bytes[off..off + fragment_length].to_vec(),
                relevance: Relevance::Subjects(d.subjects.clone()),
                source: d.doc_id.clone(),
            });
        }
    }
    Ok(queries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn of(result: &QueryResult, relevant: &BTreeSet<String>, index: &CorpusIndex) -> Confusion {
        let mut c = Confusion::default();
        for doc in index.documents() {
            match (
                result.is_relevant(&doc.doc_id),
                relevant.contains(&doc.doc_id),
            ) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// True-positive rate; `None` without positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// False-positive rate; 0 when every document is relevant.
    pub fn one_minus_specificity(&self) -> f64 {
        let n = self.fp + self.tn;
        if n == 0 {
            0.0
        } else {
            self.fp as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub sensitivity: f64,
    pub one_minus_specificity: f64,
    #[serde(flatten)]
    pub counts: Confusion,
}

/// Area under a ROC curve by the trapezoid rule. The curve is anchored at
/// (0, 0) and (1, 1), the retrieve-nothing and retrieve-everything
/// classifiers, and points are taken in order of false-positive rate.
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.one_minus_specificity, p.sensitivity))
        .collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// The random classifier's curve.
pub fn diagonal(alpha_grid: &[f64]) -> Vec<(f64, f64)> {
    alpha_grid.iter().map(|&a| (a, a)).collect()
}

pub fn check_alpha_grid(grid: &[f64]) -> Result<(), EvalError> {
    let increasing = grid.windows(2).all(|w| w[0] < w[1]);
    if increasing && grid.first() == Some(&0.0) && grid.last() == Some(&1.0) {
        Ok(())
    } else {
        Err(EvalError::AlphaGrid)
    }
}

/// Query results at every alpha of the grid.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub query_id: String,
    pub source: String,
    pub relevant: BTreeSet<String>,
    pub results: Vec<QueryResult>,
}

/// Score each query once and resolve it at every alpha.
pub fn sweep(
    index: &CorpusIndex,
    queries: &[LabeledQuery],
    alpha_grid: &[f64],
    gtable: &GTable,
) -> Result<Vec<Sweep>, EvalError> {
    check_alpha_grid(alpha_grid)?;
    let engine = Engine::new(index);
    queries
        .iter()
        .map(|q| {
            let scored: ScoredQuery = engine.score(&q.bytes)?;
            let results = alpha_grid
                .iter()
                .map(|&a| engine.resolve(&scored, a, gtable))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Sweep {
                query_id: q.id.clone(),
                source: q.source.clone(),
                relevant: q.relevant_docs(index),
                results,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRoc {
    pub query_id: String,
    pub points: Vec<RocPoint>,
    /// `None` when the query has no relevant document.
    pub auc: Option<f64>,
}

/// ROC curve of one sweep against a relevant set.
pub fn roc_curve(
    index: &CorpusIndex,
    query_id: &str,
    results: &[QueryResult],
    relevant: &BTreeSet<String>,
) -> QueryRoc {
    let mut defined = true;
    let points = results
        .iter()
        .map(|r| {
            let counts = Confusion::of(r, relevant, index);
            let sensitivity = counts.sensitivity().unwrap_or_else(|| {
                defined = false;
                0.0
            });
            RocPoint {
                alpha: r.alpha,
                sensitivity,
                one_minus_specificity: counts.one_minus_specificity(),
                counts,
            }
        })
        .collect::<Vec<_>>();
    QueryRoc {
        query_id: query_id.to_string(),
        auc: defined.then(|| auc(&points)),
        points,
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean AUC after permuting the relevant sets among the queries.
pub fn shuffled_label_auc(index: &CorpusIndex, sweeps: &[Sweep], seed: u64) -> Option<f64> {
    let mut labels: Vec<&BTreeSet<String>> = sweeps.iter().map(|s| &s.relevant).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    mean(
        sweeps
            .iter()
            .zip(labels)
            .filter_map(|(s, rel)| roc_curve(index, &s.query_id, &s.results, rel).auc),
    )
}

/// Parameters of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub fragment_length: usize,
    /// Number of queries for kinds 1 and 2.
    pub queries: usize,
    pub fragments_per_doc: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    /// Alpha at which source ranks are reported; must be on the grid.
    pub report_alpha: f64,
    pub ingest: IngestConfig,
    pub replicates: usize,
    /// Number of shuffled-label null runs.
    pub null_seeds: usize,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            fragment_length: 2048,
            queries: 20,
            fragments_per_doc: 5,
            seed: 1,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            report_alpha: 0.05,
            ingest: IngestConfig::default(),
            replicates: 10_000,
            null_seeds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub query_id: String,
    pub source: String,
    pub relevant: usize,
    pub auc: Option<f64>,
    /// 1-based rank of the source document at the report alpha.
    pub source_rank: Option<usize>,
    pub source_votes: u32,
    pub retrieved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub spec: ExperimentSpec,
    pub documents: usize,
    pub blocks: usize,
    pub queries: Vec<QuerySummary>,
    pub curves: Vec<QueryRoc>,
    pub mean_auc: Option<f64>,
    pub diagonal_auc: f64,
    /// Queries left out of the mean because nothing is relevant to them.
    pub excluded: Vec<String>,
    pub null_mean_auc: Vec<f64>,
}

/// Build the queries, index the (possibly modified) collection, sweep and
/// summarise. `external` is only read for subject-affinity runs.
pub fn run_experiment(
    spec: &ExperimentSpec,
    docs: &[DocumentInput],
    external: &[DocumentInput],
) -> Result<ExperimentReport, EvalError> {
    check_alpha_grid(&spec.alpha_grid)?;
    let report_at = spec
        .alpha_grid
        .iter()
        .position(|&a| a == spec.report_alpha)
        .ok_or(EvalError::AlphaGrid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (indexed, queries) = match spec.kind {
        ExperimentKind::FragmentInCorpus => (
            docs.to_vec(),
            make_experiment1(docs, spec.fragment_length, spec.queries, &mut rng)?,
        ),
        ExperimentKind::FragmentExcised => {
            make_experiment2(docs, spec.fragment_length, spec.queries, &mut rng)?
        }
        ExperimentKind::SubjectAffinity => (
            docs.to_vec(),
            make_experiment3(external, spec.fragment_length, spec.fragments_per_doc)?,
        ),
    };
    let index = CorpusIndex::from_documents(spec.ingest, indexed)?;
    let gtable = GTable::new(spec.replicates, spec.seed);
    let sweeps = sweep(&index, &queries, &spec.alpha_grid, &gtable)?;

    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    let mut excluded = Vec::new();
    for s in &sweeps {
        let curve = roc_curve(&index, &s.query_id, &s.results, &s.relevant);
        if curve.auc.is_none() {
            log::warn!("{}: no relevant documents, left out of the AUC", s.query_id);
            excluded.push(s.query_id.clone());
        }
        let at = &s.results[report_at];
        summaries.push(QuerySummary {
            query_id: s.query_id.clone(),
            source: s.source.clone(),
            relevant: s.relevant.len(),
            auc: curve.auc,
            source_rank: at.rank_of(&s.source).map(|r| r + 1),
            source_votes: at.votes.get(&s.source).copied().unwrap_or(0),
            retrieved: at.ranking.len(),
        });
        curves.push(curve);
    }
    let null_mean_auc = (0..spec.null_seeds as u64)
        .filter_map(|k| shuffled_label_auc(&index, &sweeps, spec.seed.wrapping_add(1000 + k)))
        .collect();

    Ok(ExperimentReport {
        experiment: spec.kind,
        spec: spec.clone(),
        documents: index.document_count(),
        blocks: index.block_count(),
        mean_auc: mean(curves.iter().filter_map(|c| c.auc)),
        queries: summaries,
        curves,
        diagonal_auc: auc(&[]),
        excluded,
        null_mean_auc,
    })
}

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "query_id",
    "alpha",
    "tp",
    "fp",
    "tn",
    "fn",
    "sensitivity",
    "one_minus_specificity",
];

/// One row per (query, alpha).
pub fn write_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let exp = report.experiment.number().to_string();
    for curve in &report.curves {
        for p in &curve.points {
            w.write_record([
                exp.as_str(),
                &curve.query_id,
                &p.alpha.to_string(),
                &p.counts.tp.to_string(),
                &p.counts.fp.to_string(),
                &p.counts.tn.to_string(),
                &p.counts.fn_.to_string(),
                &p.sensitivity.to_string(),
                &p.one_minus_specificity.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: ExperimentKind,
    documents: usize,
    blocks: usize,
    alpha_grid: &'a [f64],
    report_alpha: f64,
    mean_auc: Option<f64>,
    diagonal_auc: f64,
    null_mean_auc: Option<f64>,
    excluded: &'a [String],
    queries: &'a [QuerySummary],
}

pub fn summary_json(report: &ExperimentReport) -> String {
    let s = Summary {
        experiment: report.experiment,
        documents: report.documents,
        blocks: report.blocks,
        alpha_grid: &report.spec.alpha_grid,
        report_alpha: report.spec.report_alpha,
        mean_auc: report.mean_auc,
        diagonal_auc: report.diagonal_auc,
        null_mean_auc: mean(report.null_mean_auc.iter().copied()),
        excluded: &report.excluded,
        queries: &report.queries,
    };
    let mut out = serde_json::to_string_pretty(&s).expect("summary serializes");
    out.push('\n');
    out
}
