use std::fmt::Write as _;

use ncdsearch_core::engine::{SkippedBin, UnitSummary};
use ncdsearch_core::{FlaggedBlock, QueryResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Stable id of a (query text, alpha) pair.
pub fn query_id(text: &[u8], alpha: f64) -> String {
    let mut h = Sha256::new();
    h.update(alpha.to_bits().to_be_bytes());
    h.update(text);
    hex::encode(&h.finalize()[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDocument {
    pub rank: usize,
    pub doc_id: String,
    pub name: String,
    pub votes: u32,
    pub best_ncd: f64,
}

/// Query output shared by the CLI's JSON format and `POST /query`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query_id: String,
    pub alpha: f64,
    pub query_bytes: usize,
    pub units: Vec<UnitSummary>,
    pub ranking: Vec<RankedDocument>,
    /// Flagged blocks by increasing NCD, cut to the requested maximum.
    pub flagged: Vec<FlaggedBlock>,
    pub flagged_total: usize,
    pub skipped: Vec<SkippedBin>,
}

impl QueryResponse {
    pub fn new(result: &QueryResult, query: &[u8], max_blocks: usize) -> QueryResponse {
        let ranking = result
            .ranking
            .iter()
            .enumerate()
            .map(|(i, doc_id)| {
                // flagged is sorted by NCD, so the first hit is the best
                let best = result
                    .flagged
                    .iter()
                    .find(|f| &f.doc_id == doc_id)
                    .expect("ranked documents have flagged blocks");
                RankedDocument {
                    rank: i + 1,
                    doc_id: doc_id.clone(),
                    name: best.name.clone(),
                    votes: result.votes[doc_id],
                    best_ncd: best.ncd,
                }
            })
            .collect();
        QueryResponse {
            query_id: query_id(query, result.alpha),
            alpha: result.alpha,
            query_bytes: query.len(),
            units: result.units.clone(),
            ranking,
            flagged: result.flagged.iter().take(max_blocks).cloned().collect(),
            flagged_total: result.flagged.len(),
            skipped: result.skipped.clone(),
        }
    }

    /// Plain-text report: ranking first, then the flagged blocks.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "query {} ({} bytes, {} unit(s)), alpha {}",
            self.query_id,
            self.query_bytes,
            self.units.len(),
            self.alpha
        );
        if self.ranking.is_empty() {
            out.push_str("no documents retrieved\n");
            return out;
        }
        out.push_str("\nrank  votes  best NCD  document\n");
        for r in &self.ranking {
            let _ = writeln!(
                out,
                "{:>4}  {:>5}  {:>8.4}  {} ({})",
                r.rank, r.votes, r.best_ncd, r.doc_id, r.name
            );
        }
        let _ = writeln!(
            out,
            "\nflagged blocks (showing {} of {})",
            self.flagged.len(),
            self.flagged_total
        );
        out.push_str("   NCD    document  bin  block  bytes\n");
        for f in &self.flagged {
            let _ = writeln!(
                out,
                "{:.4}  {}  {}KB  {}  {}..{}",
                f.ncd, f.doc_id, f.bin, f.ordinal, f.start, f.end
            );
        }
        out
    }
}
