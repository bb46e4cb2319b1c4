//! Document retrieval by compression distance.
//!
//! Documents are cut into overlapping blocks of 1..N KiB and stored in one
//! partition per block size. A query is compared against the blocks of the
//! neighbouring sizes with the Normalized Compression Distance, computed
//! with a windowless Lempel-Ziv cost model. Blocks whose distance is a lower
//! outlier of its sample (Hampel identifier) vote for their document, and
//! documents are ranked by votes.

pub mod compressor;
pub mod config;
pub mod corpus;
pub mod distance;
pub mod engine;
pub mod evaluation;
pub mod outliers;

pub use compressor::{compressed_size, concat_size, lz_parse, BitCost, Phrase};
pub use config::{ConfigError, EngineConfig};
pub use corpus::{
    chunk, read_documents_dir, Block, ByteRange, CorpusError, CorpusIndex, DocumentInput,
    DocumentRecord, IngestConfig, SizeBin,
};
pub use distance::{ncd, DistanceError, SizeCache};
pub use engine::{
    candidate_bins, segment_query, Engine, EngineError, FlaggedBlock, QueryResult, QueryUnit,
    ScoredQuery,
};
pub use outliers::{estimate_g, hampel_lower, robust_stats, GTable, OutlierError, RobustStats};
