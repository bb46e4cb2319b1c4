//! Document store: size-binned overlapping blocks with precomputed
//! compressed sizes, persisted as a JSON manifest plus verbatim blobs.
//!
//! On-disk layout of a corpus directory:
//!
//! ```text
//! manifest.json          format_version, config, documents, per-bin block tables
//! manifest.json.sha256   sha256 of manifest.json, `sha256sum` format
//! docs/<doc_id>          raw document bytes
//! ```
//!
//! Every document entry carries the sha256 of its blob, and every block entry
//! its byte range and cached cost in bits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compressor::{compressed_size, BitCost};
use crate::config::ConfigError;

pub const KIB: usize = 1024;
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKSUM_FILE: &str = "manifest.json.sha256";
pub const DOCS_DIR: &str = "docs";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("invalid document id {0:?}: use ASCII letters, digits, '.', '_' or '-'")]
    InvalidDocId(String),
    #[error("document {0:?} already exists with different content")]
    Conflict(String),
    #[error("corpus not found at {}", .0.display())]
    NotFound(PathBuf),
    #[error("manifest checksum mismatch in {}", .0.display())]
    ChecksumMismatch(PathBuf),
    #[error("blob for document {0:?} does not match its recorded checksum")]
    BlobChecksum(String),
    #[error("unsupported manifest format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Block-size partition `k`, holding blocks of nominally `k` KiB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeBin(u32);

impl SizeBin {
    /// Panics on `k == 0`.
    pub fn new(k: u32) -> SizeBin {
        assert!(k >= 1, "size bins start at 1");
        SizeBin(k)
    }

    pub fn k(self) -> u32 {
        self.0
    }

    pub fn nominal_bytes(self) -> usize {
        self.0 as usize * KIB
    }

    /// Bin for a piece of `len` bytes: `ceil(len / 1 KiB)` clamped to `[1, n_max]`.
    pub fn for_len(len: usize, n_max: u32) -> SizeBin {
        let k = len.div_ceil(KIB).clamp(1, n_max.max(1) as usize);
        SizeBin(k as u32)
    }
}

/// Half-open byte interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: usize,
    pub end: usize,
}

impl ByteRange {
    pub fn new(start: usize, end: usize) -> ByteRange {
        debug_assert!(start <= end);
        ByteRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub n_max: u32,
    pub overlap_fraction: f64,
    /// Trailing blocks shorter than this fraction of the nominal size are
    /// replaced by a full-size block ending at the document end.
    pub min_remainder_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            n_max: 32,
            overlap_fraction: 0.10,
            min_remainder_fraction: 0.5,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_overlap(self.overlap_fraction)?;
        if self.n_max == 0 {
            return Err(ConfigError::NMax(self.n_max));
        }
        let f = self.min_remainder_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(ConfigError::MinRemainder(f));
        }
        Ok(())
    }

    pub fn bins(&self) -> impl Iterator<Item = SizeBin> {
        (1..=self.n_max).map(SizeBin)
    }

    pub fn min_remainder(&self, bin: SizeBin) -> usize {
        (bin.nominal_bytes() as f64 * self.min_remainder_fraction).round() as usize
    }

    /// Block ranges for a document of `len` bytes in `bin`.
    pub fn chunk(&self, len: usize, bin: SizeBin) -> Result<Vec<ByteRange>, CorpusError> {
        chunk_with_remainder(len, bin, self.overlap_fraction, self.min_remainder(bin))
    }
}

fn check_overlap(overlap: f64) -> Result<(), ConfigError> {
    if (0.01..=0.99).contains(&overlap) {
        Ok(())
    } else {
        Err(ConfigError::Overlap(overlap))
    }
}

/// Distance between consecutive block starts.
pub fn chunk_step(bin: SizeBin, overlap_fraction: f64) -> usize {
    ((bin.nominal_bytes() as f64 * (1.0 - overlap_fraction)).round() as usize).max(1)
}

/// Block ranges for `len` bytes with the default remainder threshold (half a block).
pub fn chunk(
    len: usize,
    bin: SizeBin,
    overlap_fraction: f64,
) -> Result<Vec<ByteRange>, CorpusError> {
    chunk_with_remainder(len, bin, overlap_fraction, bin.nominal_bytes() / 2)
}

/// Block `i` starts at `i * step` and spans at most the nominal size. A
/// trailing block shorter than `min_remainder` is moved back to end exactly
/// at `len` with full nominal length, so no block exceeds the nominal size
/// and every byte stays covered.
pub fn chunk_with_remainder(
    len: usize,
    bin: SizeBin,
    overlap_fraction: f64,
    min_remainder: usize,
) -> Result<Vec<ByteRange>, CorpusError> {
    check_overlap(overlap_fraction)?;
    if len == 0 {
        return Err(CorpusError::EmptyDocument(String::new()));
    }
    let nominal = bin.nominal_bytes();
    let step = chunk_step(bin, overlap_fraction);
    let mut ranges = Vec::with_capacity(len / step + 1);
    let mut start = 0;
    loop {
        if start + nominal >= len {
            let rest = len - start;
            if start == 0 || rest >= min_remainder {
                ranges.push(ByteRange::new(start, len));
            } else {
                ranges.push(ByteRange::new(len - nominal, len));
            }
            return Ok(ranges);
        }
        ranges.push(ByteRange::new(start, start + nominal));
        start += step;
    }
}

/// A document to ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentInput {
    pub doc_id: String,
    pub name: String,
    pub subjects: BTreeSet<String>,
    pub source_uri: String,
    pub bytes: Vec<u8>,
}

impl DocumentInput {
    pub fn new(doc_id: impl Into<String>, bytes: impl Into<Vec<u8>>) -> DocumentInput {
        let doc_id = doc_id.into();
        DocumentInput {
            name: doc_id.clone(),
            doc_id,
            subjects: BTreeSet::new(),
            source_uri: String::new(),
            bytes: bytes.into(),
        }
    }

    pub fn with_subjects<I, S>(mut self, subjects: I) -> DocumentInput
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.subjects = subjects.into_iter().map(Into::into).collect();
        self
    }
}

/// Optional `<stem>.meta.json` next to a document file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sidecar {
    pub name: Option<String>,
    pub subjects: BTreeSet<String>,
    pub source_uri: Option<String>,
}

pub const SIDECAR_SUFFIX: &str = ".meta.json";

/// Document id for a file stem: characters outside `[A-Za-z0-9._-]` become `_`.
pub fn doc_id_from_stem(stem: &str) -> String {
    let id: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match id.strip_prefix('.') {
        Some(rest) => format!("_{rest}"),
        None => id,
    }
}

/// Read every regular file of `dir` (sidecars excluded) as a document,
/// sorted by file name. Empty files are skipped with a warning.
pub fn read_documents_dir(dir: &Path) -> Result<Vec<DocumentInput>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for path in paths {
        let file_name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if !path.is_file() || file_name.ends_with(SIDECAR_SUFFIX) || file_name.starts_with('.') {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(file_name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.is_empty() {
            log::warn!("skipping empty file {}", path.display());
            continue;
        }
        let sidecar_path = dir.join(format!("{stem}{SIDECAR_SUFFIX}"));
        let sidecar: Sidecar = match fs::read(&sidecar_path) {
            Ok(raw) => serde_json::from_slice(&raw)
                .map_err(|e| CorpusError::Corrupt(format!("{}: {e}", sidecar_path.display())))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Sidecar::default(),
            Err(e) => return Err(io_err(&sidecar_path)(e)),
        };
        let doc_id = doc_id_from_stem(stem);
        if !seen.insert(doc_id.clone()) {
            return Err(CorpusError::Conflict(doc_id));
        }
        docs.push(DocumentInput {
            name: sidecar.name.unwrap_or_else(|| file_name.to_string()),
            source_uri: sidecar
                .source_uri
                .unwrap_or_else(|| path.display().to_string()),
            subjects: sidecar.subjects,
            doc_id,
            bytes,
        });
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub name: String,
    pub byte_length: usize,
    pub subjects: BTreeSet<String>,
    pub source_uri: String,
    /// Hex sha256 of the document bytes.
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct StoredDocument {
    pub record: DocumentRecord,
    pub bytes: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub doc_id: String,
    pub bin: SizeBin,
    /// Position within the (document, bin) pair, from 0.
    pub ordinal: u32,
    pub range: ByteRange,
    pub cached_size: BitCost,
}

/// Position of a block in its bin's table. Tables are ordered by
/// `(doc_id, ordinal)`, so ids change when documents are added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub bin: SizeBin,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Added { blocks: usize },
    Unchanged,
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    config: IngestConfig,
    documents: BTreeMap<String, StoredDocument>,
    bins: BTreeMap<SizeBin, Vec<Block>>,
}

impl CorpusIndex {
    pub fn new(config: IngestConfig) -> Result<CorpusIndex, CorpusError> {
        config.validate()?;
        Ok(CorpusIndex {
            config,
            documents: BTreeMap::new(),
            bins: BTreeMap::new(),
        })
    }

    pub fn from_documents(
        config: IngestConfig,
        docs: impl IntoIterator<Item = DocumentInput>,
    ) -> Result<CorpusIndex, CorpusError> {
        let mut index = CorpusIndex::new(config)?;
        index.ingest_all(docs)?;
        Ok(index)
    }

    pub fn config(&self) -> &IngestConfig {
        &self.config
    }

    pub fn n_max(&self) -> u32 {
        self.config.n_max
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn block_count(&self) -> usize {
        self.bins.values().map(Vec::len).sum()
    }

    pub fn documents(&self) -> impl Iterator<Item = &DocumentRecord> {
        self.documents.values().map(|d| &d.record)
    }

    pub fn document(&self, doc_id: &str) -> Option<&StoredDocument> {
        self.documents.get(doc_id)
    }

    /// Bins holding at least one block, ascending.
    pub fn populated_bins(&self) -> impl Iterator<Item = SizeBin> + '_ {
        self.bins
            .iter()
            .filter(|(_, b)| !b.is_empty())
            .map(|(k, _)| *k)
    }

    pub fn blocks(&self, bin: SizeBin) -> &[Block] {
        self.bins.get(&bin).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks(id.bin).get(id.index as usize)
    }

    /// The bytes a block covers, sliced from its document blob.
    pub fn block_bytes(&self, block: &Block) -> &[u8] {
        let doc = &self.documents[&block.doc_id];
        &doc.bytes[block.range.start..block.range.end]
    }

    /// Add one document. Re-ingesting identical bytes under the same id is a
    /// no-op; different bytes under an existing id is a conflict.
    pub fn ingest(&mut self, doc: DocumentInput) -> Result<IngestOutcome, CorpusError> {
        validate_doc_id(&doc.doc_id)?;
        if doc.bytes.is_empty() {
            return Err(CorpusError::EmptyDocument(doc.doc_id));
        }
        let sha = sha256_hex(&doc.bytes);
        if let Some(existing) = self.documents.get(&doc.doc_id) {
            return if existing.record.sha256 == sha {
                Ok(IngestOutcome::Unchanged)
            } else {
                Err(CorpusError::Conflict(doc.doc_id))
            };
        }

        let bytes: Arc<[u8]> = doc.bytes.into();
        let mut layout = Vec::new();
        for bin in self.config.bins() {
            for (ordinal, range) in self.config.chunk(bytes.len(), bin)?.into_iter().enumerate() {
                layout.push((bin, ordinal as u32, range));
            }
        }
        let new_blocks: Vec<Block> = layout
            .into_par_iter()
            .map(|(bin, ordinal, range)| Block {
                doc_id: doc.doc_id.clone(),
                bin,
                ordinal,
                range,
                cached_size: compressed_size(&bytes[range.start..range.end]),
            })
            .collect();
        let added = new_blocks.len();
        for block in new_blocks {
            self.bins.entry(block.bin).or_default().push(block);
        }
        for blocks in self.bins.values_mut() {
            blocks.sort_by(|a, b| (&a.doc_id, a.ordinal).cmp(&(&b.doc_id, b.ordinal)));
        }

        let record = DocumentRecord {
            doc_id: doc.doc_id.clone(),
            name: doc.name,
            byte_length: bytes.len(),
            subjects: doc.subjects,
            source_uri: doc.source_uri,
            sha256: sha,
        };
        self.documents
            .insert(doc.doc_id, StoredDocument { record, bytes });
        Ok(IngestOutcome::Added { blocks: added })
    }

    pub fn ingest_all(
        &mut self,
        docs: impl IntoIterator<Item = DocumentInput>,
    ) -> Result<Vec<IngestOutcome>, CorpusError> {
        docs.into_iter().map(|d| self.ingest(d)).collect()
    }

    /// Write the corpus directory. Output bytes depend only on the index
    /// contents, never on ingestion order.
    pub fn persist(&self, dir: &Path) -> Result<(), CorpusError> {
        let docs_dir = dir.join(DOCS_DIR);
        fs::create_dir_all(&docs_dir).map_err(io_err(&docs_dir))?;

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config,
            documents: self
                .documents
                .values()
                .map(|d| ManifestDocument {
                    record: d.record.clone(),
                    blob: format!("{DOCS_DIR}/{}", d.record.doc_id),
                })
                .collect(),
            bins: self
                .bins
                .iter()
                .map(|(bin, blocks)| ManifestBin {
                    bin: bin.k(),
                    nominal_bytes: bin.nominal_bytes(),
                    blocks: blocks
                        .iter()
                        .map(|b| ManifestBlock {
                            doc_id: b.doc_id.clone(),
                            ordinal: b.ordinal,
                            start: b.range.start,
                            end: b.range.end,
                            bits: b.cached_size.bits(),
                        })
                        .collect(),
                })
                .collect(),
        };

        for (doc, entry) in self.documents.values().zip(&manifest.documents) {
            let path = dir.join(&entry.blob);
            let unchanged = fs::read(&path).map(|b| *b == *doc.bytes).unwrap_or(false);
            if !unchanged {
                write_atomic(&path, &doc.bytes)?;
            }
        }

        let mut body = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CorpusError::Corrupt(format!("serialize manifest: {e}")))?;
        body.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &body)?;
        let sum = format!("{}  {MANIFEST_FILE}\n", sha256_hex(&body));
        write_atomic(&dir.join(CHECKSUM_FILE), sum.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<CorpusIndex, CorpusError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let body = match fs::read(&manifest_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CorpusError::NotFound(dir.to_path_buf()))
            }
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        let sum_path = dir.join(CHECKSUM_FILE);
        let sum = fs::read_to_string(&sum_path).map_err(io_err(&sum_path))?;
        let expected = sum.split_whitespace().next().unwrap_or_default();
        if expected != sha256_hex(&body) {
            return Err(CorpusError::ChecksumMismatch(manifest_path));
        }

        let header: VersionProbe = serde_json::from_slice(&body)
            .map_err(|e| CorpusError::Corrupt(format!("manifest: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CorpusError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_slice(&body)
            .map_err(|e| CorpusError::Corrupt(format!("manifest: {e}")))?;
        manifest.config.validate()?;

        let mut documents = BTreeMap::new();
        for entry in manifest.documents {
            let path = dir.join(&entry.blob);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let record = entry.record;
            if sha256_hex(&bytes) != record.sha256 || bytes.len() != record.byte_length {
                return Err(CorpusError::BlobChecksum(record.doc_id));
            }
            documents.insert(
                record.doc_id.clone(),
                StoredDocument {
                    record,
                    bytes: bytes.into(),
                },
            );
        }

        let mut bins = BTreeMap::new();
        for mb in manifest.bins {
            if mb.bin == 0 || mb.bin > manifest.config.n_max {
                return Err(CorpusError::Corrupt(format!("bin {} out of range", mb.bin)));
            }
            let bin = SizeBin(mb.bin);
            let mut blocks = Vec::with_capacity(mb.blocks.len());
            for b in mb.blocks {
                let len = documents
                    .get(&b.doc_id)
                    .map(|d: &StoredDocument| d.bytes.len())
                    .ok_or_else(|| CorpusError::Corrupt(format!("unknown doc {:?}", b.doc_id)))?;
                if b.start >= b.end || b.end > len || b.end - b.start > bin.nominal_bytes() {
                    return Err(CorpusError::Corrupt(format!(
                        "bad range {}..{} for {:?}",
                        b.start, b.end, b.doc_id
                    )));
                }
                blocks.push(Block {
                    doc_id: b.doc_id,
                    bin,
                    ordinal: b.ordinal,
                    range: ByteRange::new(b.start, b.end),
                    cached_size: BitCost(b.bits),
                });
            }
            bins.insert(bin, blocks);
        }

        Ok(CorpusIndex {
            config: manifest.config,
            documents,
            bins,
        })
    }
}

fn validate_doc_id(id: &str) -> Result<(), CorpusError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidDocId(id.to_string()))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: IngestConfig,
    documents: Vec<ManifestDocument>,
    bins: Vec<ManifestBin>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDocument {
    #[serde(flatten)]
    record: DocumentRecord,
    blob: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestBin {
    bin: u32,
    nominal_bytes: usize,
    blocks: Vec<ManifestBlock>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestBlock {
    doc_id: String,
    ordinal: u32,
    start: usize,
    end: usize,
    bits: u64,
}
