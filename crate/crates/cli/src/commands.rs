use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ncdsearch_core::corpus::IngestOutcome;
use ncdsearch_core::evaluation::{
    run_experiment, summary_json, write_csv, ExperimentKind, ExperimentReport, ExperimentSpec,
    DEFAULT_ALPHA_GRID,
};
use ncdsearch_core::{
    read_documents_dir, CorpusError, CorpusIndex, DocumentInput, Engine, EngineConfig, GTable,
};

use crate::{CliError, QueryResponse};

pub const GTABLE_FILE: &str = "gtable.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub ingested: usize,
    pub added: usize,
    pub unchanged: usize,
    pub documents: usize,
    pub blocks: usize,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} documents ingested ({} added, {} unchanged); corpus holds {} documents in {} blocks",
            self.ingested, self.added, self.unchanged, self.documents, self.blocks
        )
    }
}

/// Open the corpus at `dir`, or an empty one built with `config` if none exists.
pub fn open_or_create(dir: &Path, config: &EngineConfig) -> Result<CorpusIndex, CliError> {
    match CorpusIndex::load(dir) {
        Ok(index) => {
            if *index.config() != config.ingest() {
                log::warn!(
                    "{} keeps the ingest settings it was built with: {:?}",
                    dir.display(),
                    index.config()
                );
            }
            Ok(index)
        }
        Err(CorpusError::NotFound(_)) => Ok(CorpusIndex::new(config.ingest())?),
        Err(e) => Err(e.into()),
    }
}

/// Add every text file of `input` to the corpus at `corpus`.
pub fn ingest(
    input: &Path,
    corpus: &Path,
    config: &EngineConfig,
) -> Result<IngestSummary, CliError> {
    let docs = read_documents_dir(input)?;
    let mut index = open_or_create(corpus, config)?;
    let outcomes = index.ingest_all(docs)?;
    index.persist(corpus)?;
    let added = outcomes
        .iter()
        .filter(|o| matches!(o, IngestOutcome::Added { .. }))
        .count();
    Ok(IngestSummary {
        ingested: outcomes.len(),
        added,
        unchanged: outcomes.len() - added,
        documents: index.document_count(),
        blocks: index.block_count(),
    })
}

pub fn load_corpus(dir: &Path) -> Result<CorpusIndex, CliError> {
    CorpusIndex::load(dir).map_err(|e| match e {
        CorpusError::NotFound(p) => CliError::Data(format!(
            "no corpus at {} (run `ncdsearch ingest` first)",
            p.display()
        )),
        other => other.into(),
    })
}

/// The g table stored next to the corpus, for the configured replicates and seed.
pub fn open_gtable(corpus: &Path, config: &EngineConfig) -> GTable {
    GTable::load_or_new(
        &corpus.join(GTABLE_FILE),
        config.gtable_replicates,
        config.rng_seed,
    )
}

pub fn save_gtable(corpus: &Path, table: &GTable) {
    if let Err(e) = table.save(&corpus.join(GTABLE_FILE)) {
        log::warn!("could not save {GTABLE_FILE}: {e}");
    }
}

pub fn query(corpus: &Path, text: &[u8], config: &EngineConfig) -> Result<QueryResponse, CliError> {
    if text.is_empty() {
        return Err(CliError::Usage("empty query".into()));
    }
    let index = load_corpus(corpus)?;
    let table = open_gtable(corpus, config);
    let before = table.len();
    let result = Engine::new(&index).query(text, config.alpha, &table)?;
    if table.len() != before {
        save_gtable(corpus, &table);
    }
    Ok(QueryResponse::new(&result, text, config.max_blocks_shown))
}

/// Evaluation parameters beyond the engine configuration.
#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub kind: ExperimentKind,
    pub docs: PathBuf,
    pub external: Option<PathBuf>,
    pub out: PathBuf,
    pub fragment_length: usize,
    pub queries: usize,
    pub fragments_per_doc: usize,
    pub seed: u64,
    pub null_seeds: usize,
}

pub const CSV_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Run one experiment and write `results.csv` and `summary.json` into `out`.
pub fn eval(args: &EvalArgs, config: &EngineConfig) -> Result<ExperimentReport, CliError> {
    if !DEFAULT_ALPHA_GRID.contains(&config.alpha) {
        return Err(CliError::Usage(format!(
            "alpha {} is not on the evaluation grid {DEFAULT_ALPHA_GRID:?}",
            config.alpha
        )));
    }
    let docs = read_documents_dir(&args.docs)?;
    let external: Vec<DocumentInput> = match (&args.external, args.kind) {
        (Some(dir), _) => read_documents_dir(dir)?,
        (None, ExperimentKind::SubjectAffinity) => {
            return Err(CliError::Usage(
                "experiment 3 needs --external with labelled documents".into(),
            ))
        }
        (None, _) => Vec::new(),
    };
    let spec = ExperimentSpec {
        fragment_length: args.fragment_length,
        queries: args.queries,
        fragments_per_doc: args.fragments_per_doc,
        seed: args.seed,
        ingest: config.ingest(),
        replicates: config.gtable_replicates,
        null_seeds: args.null_seeds,
        report_alpha: config.alpha,
        ..ExperimentSpec::new(args.kind)
    };
    let report = run_experiment(&spec, &docs, &external)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join(CSV_FILE);
    let file = fs::File::create(&csv_path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", csv_path.display())))?;
    write_csv(&report, file)?;
    fs::write(args.out.join(SUMMARY_FILE), summary_json(&report))
        .map_err(|e| CliError::Data(format!("cannot write {SUMMARY_FILE}: {e}")))?;
    Ok(report)
}

/// Short human summary of an experiment report.
pub fn describe(report: &ExperimentReport) -> String {
    let n = report.queries.len();
    let first = report
        .queries
        .iter()
        .filter(|q| q.source_rank == Some(1))
        .count();
    let top3 = report
        .queries
        .iter()
        .filter(|q| q.source_rank.is_some_and(|r| r <= 3))
        .count();
    let null = if report.null_mean_auc.is_empty() {
        "n/a".to_string()
    } else {
        let m = report.null_mean_auc.iter().sum::<f64>() / report.null_mean_auc.len() as f64;
        format!("{m:.4}")
    };
    let mut out = format!(
        "experiment {}: {} documents, {} blocks, {n} queries\n\
         mean AUC {}, shuffled-label AUC {null}",
        report.experiment.number(),
        report.documents,
        report.blocks,
        report
            .mean_auc
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
    );
    // held-out sources are not in the corpus, so their rank means nothing
    if report.experiment != ExperimentKind::SubjectAffinity {
        out.push_str(&format!(
            "\nat alpha {}: source first {first}/{n}, top 3 {top3}/{n}",
            report.spec.report_alpha
        ));
    }
    out
}
