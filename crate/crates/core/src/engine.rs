//! Query evaluation and voting.
//!
//! A query is split into units no larger than the biggest block size. Each
//! unit is compared against every block of its own size bin, the bin below
//! and the two bins above. Every such bin yields a sample of distances; lower
//! outliers of the sample vote for the document their block belongs to.
//!
//! Scoring (the expensive NCD part) is separated from resolution (flagging at
//! a given alpha), so a sweep over alphas reuses one set of distances.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{compressed_size, BitCost};
use crate::config::check_alpha;
use crate::corpus::{ByteRange, CorpusIndex, IngestConfig, SizeBin, KIB};
use crate::distance::ncd_with_sizes;
use crate::outliers::{hampel_lower, GTable, OutlierError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty query")]
    EmptyQuery,
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error(transparent)]
    Outlier(#[from] OutlierError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryUnit {
    pub ordinal: u32,
    pub bin: SizeBin,
    /// Position of the unit inside the query.
    pub range: ByteRange,
    pub bytes: Vec<u8>,
}

/// Split a query into units. Queries up to `n_max` KiB are a single unit;
/// longer ones are cut with the corpus block rule at the largest size.
pub fn segment_query(query: &[u8], config: &IngestConfig) -> Result<Vec<QueryUnit>, EngineError> {
    if query.is_empty() {
        return Err(EngineError::EmptyQuery);
    }
    let n_max = config.n_max;
    let ranges = if query.len() <= n_max as usize * KIB {
        vec![ByteRange::new(0, query.len())]
    } else {
        config
            .chunk(query.len(), SizeBin::new(n_max))
            .map_err(|_| EngineError::EmptyQuery)?
    };
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(i, range)| QueryUnit {
            ordinal: i as u32,
            bin: SizeBin::for_len(range.len(), n_max),
            range,
            bytes: query[range.start..range.end].to_vec(),
        })
        .collect())
}

/// The bin below, the unit's own bin and the two above, clipped to `[1, n_max]`.
pub fn candidate_bins(bin: SizeBin, n_max: u32) -> Vec<SizeBin> {
    let k = bin.k() as i64;
    (k - 1..=k + 2)
        .filter(|&b| b >= 1 && b <= n_max as i64)
        .map(|b| SizeBin::new(b as u32))
        .collect()
}

/// Distances from one query unit to every block of one bin, in block-table order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSample {
    pub unit: u32,
    pub bin: SizeBin,
    pub distances: Vec<f64>,
}

impl DistanceSample {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

pub fn sample_distances(
    unit: &QueryUnit,
    unit_size: BitCost,
    bin: SizeBin,
    index: &CorpusIndex,
) -> DistanceSample {
    let distances = index
        .blocks(bin)
        .par_iter()
        .map(|block| {
            ncd_with_sizes(
                &unit.bytes,
                unit_size,
                index.block_bytes(block),
                block.cached_size,
            )
            .expect("query units and blocks are never empty")
        })
        .collect();
    DistanceSample {
        unit: unit.ordinal,
        bin,
        distances,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub ordinal: u32,
    pub bin: u32,
    pub start: usize,
    pub end: usize,
}

/// All distance samples for one query, ready to be flagged at any alpha.
#[derive(Debug, Clone)]
pub struct ScoredQuery {
    pub units: Vec<UnitSummary>,
    pub samples: Vec<DistanceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedBlock {
    pub doc_id: String,
    pub name: String,
    pub bin: u32,
    pub ordinal: u32,
    pub start: usize,
    pub end: usize,
    pub ncd: f64,
    pub unit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedBin {
    pub unit: u32,
    pub bin: u32,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub alpha: f64,
    pub units: Vec<UnitSummary>,
    /// Every flagged (block, unit) pair, closest first.
    pub flagged: Vec<FlaggedBlock>,
    pub votes: BTreeMap<String, u32>,
    /// Documents with at least one vote: most votes first, then smallest
    /// flagged distance, then id.
    pub ranking: Vec<String>,
    /// Byte ranges of flagged blocks per document, sorted and deduplicated.
    pub highlights: BTreeMap<String, Vec<ByteRange>>,
    /// Samples below the 3 values the Hampel rule needs.
    pub skipped: Vec<SkippedBin>,
}

impl QueryResult {
    pub fn is_relevant(&self, doc_id: &str) -> bool {
        self.votes.get(doc_id).is_some_and(|&v| v > 0)
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.ranking.iter().position(|d| d == doc_id)
    }
}

/// Query evaluation against one immutable index snapshot.
pub struct Engine<'a> {
    index: &'a CorpusIndex,
}

impl<'a> Engine<'a> {
    pub fn new(index: &'a CorpusIndex) -> Engine<'a> {
        Engine { index }
    }

    pub fn index(&self) -> &CorpusIndex {
        self.index
    }

    /// Bins a unit is compared against: the candidate bins that hold blocks,
    /// or the largest populated bins when none of them do.
    fn bins_for(&self, unit: &QueryUnit) -> Vec<SizeBin> {
        let populated: Vec<SizeBin> = self.index.populated_bins().collect();
        let mut bins: Vec<SizeBin> = candidate_bins(unit.bin, self.index.n_max())
            .into_iter()
            .filter(|b| populated.contains(b))
            .collect();
        if bins.is_empty() {
            let keep = populated.len().saturating_sub(4);
            bins = populated[keep..].to_vec();
        }
        bins
    }

    pub fn score(&self, query: &[u8]) -> Result<ScoredQuery, EngineError> {
        let units = segment_query(query, self.index.config())?;
        let sizes: Vec<BitCost> = units
            .par_iter()
            .map(|u| compressed_size(&u.bytes))
            .collect();
        let jobs: Vec<(usize, SizeBin)> = units
            .iter()
            .enumerate()
            .flat_map(|(i, u)| self.bins_for(u).into_iter().map(move |b| (i, b)))
            .collect();
        let samples = jobs
            .par_iter()
            .map(|&(i, bin)| sample_distances(&units[i], sizes[i], bin, self.index))
            .collect();
        Ok(ScoredQuery {
            units: units
                .iter()
                .map(|u| UnitSummary {
                    ordinal: u.ordinal,
                    bin: u.bin.k(),
                    start: u.range.start,
                    end: u.range.end,
                })
                .collect(),
            samples,
        })
    }

    /// Flag and vote at `alpha`, using `gtable` for the thresholds.
    pub fn resolve(
        &self,
        scored: &ScoredQuery,
        alpha: f64,
        gtable: &GTable,
    ) -> Result<QueryResult, EngineError> {
        check_alpha(alpha).map_err(|_| EngineError::Alpha(alpha))?;
        let mut flagged = Vec::new();
        let mut skipped = Vec::new();
        for sample in &scored.samples {
            if sample.len() < 3 {
                log::debug!(
                    "skipping bin {} for unit {}: {} blocks",
                    sample.bin.k(),
                    sample.unit,
                    sample.len()
                );
                skipped.push(SkippedBin {
                    unit: sample.unit,
                    bin: sample.bin.k(),
                    blocks: sample.len(),
                });
                continue;
            }
            let g = gtable.g(sample.len(), alpha)?;
            let verdict = hampel_lower(&sample.distances, g)?;
            let blocks = self.index.blocks(sample.bin);
            for i in verdict.flagged {
                let block = &blocks[i];
                let name = self
                    .index
                    .document(&block.doc_id)
                    .map(|d| d.record.name.clone())
                    .unwrap_or_default();
                flagged.push(FlaggedBlock {
                    doc_id: block.doc_id.clone(),
                    name,
                    bin: block.bin.k(),
                    ordinal: block.ordinal,
                    start: block.range.start,
                    end: block.range.end,
                    ncd: sample.distances[i],
                    unit: sample.unit,
                });
            }
        }
        Ok(assemble(alpha, scored.units.clone(), flagged, skipped))
    }

    pub fn query(
        &self,
        query: &[u8],
        alpha: f64,
        gtable: &GTable,
    ) -> Result<QueryResult, EngineError> {
        check_alpha(alpha).map_err(|_| EngineError::Alpha(alpha))?;
        let scored = self.score(query)?;
        self.resolve(&scored, alpha, gtable)
    }
}

fn assemble(
    alpha: f64,
    units: Vec<UnitSummary>,
    mut flagged: Vec<FlaggedBlock>,
    skipped: Vec<SkippedBin>,
) -> QueryResult {
    flagged.sort_by(|a, b| {
        a.ncd
            .total_cmp(&b.ncd)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| (a.bin, a.ordinal, a.unit).cmp(&(b.bin, b.ordinal, b.unit)))
    });

    let mut votes: BTreeMap<String, u32> = BTreeMap::new();
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    let mut highlights: BTreeMap<String, Vec<ByteRange>> = BTreeMap::new();
    for f in &flagged {
        *votes.entry(f.doc_id.clone()).or_default() += 1;
        let b = best.entry(&f.doc_id).or_insert(f64::INFINITY);
        *b = b.min(f.ncd);
        highlights
            .entry(f.doc_id.clone())
            .or_default()
            .push(ByteRange::new(f.start, f.end));
    }
    for spans in highlights.values_mut() {
        spans.sort();
        spans.dedup();
    }

    let mut ranking: Vec<String> = votes.keys().cloned().collect();
    ranking.sort_by(|a, b| {
        votes[b]
            .cmp(&votes[a])
            .then_with(|| {
                best[a.as_str()]
                    .partial_cmp(&best[b.as_str()])
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.cmp(b))
    });

    QueryResult {
        alpha,
        units,
        flagged,
        votes,
        ranking,
        highlights,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_step, DocumentInput};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> IngestConfig {
        IngestConfig::default()
    }

    #[test]
    fn short_query_is_one_unit() {
        let units = segment_query(&[b'x'; 700], &cfg()).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].bin, SizeBin::new(1));
    }

    #[test]
    fn exactly_n_max_is_one_unit() {
        let units = segment_query(&vec![b'x'; 32 * KIB], &cfg()).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].bin, SizeBin::new(32));
    }

    #[test]
    fn long_query_uses_the_block_rule() {
        let len = 33_000;
        let units = segment_query(&vec![b'x'; len], &cfg()).unwrap();
        let step = chunk_step(SizeBin::new(32), 0.1);
        // round(32768 * 0.9) = round(29491.2)
        assert_eq!(step, 29_491);
        // enumerate starts 0, step, ... until a 32 KiB window reaches the end
        let mut starts = vec![0usize];
        while starts.last().unwrap() + 32 * KIB < len {
            starts.push(starts.last().unwrap() + step);
        }
        assert_eq!(units.len(), starts.len());
        assert_eq!(units.len(), 2);
        assert!(units.iter().all(|u| u.bytes.len() == 32 * KIB));
        assert!(units.iter().all(|u| u.bin == SizeBin::new(32)));
        assert_eq!(units.last().unwrap().range.end, len);
    }

    #[test]
    fn empty_query_is_rejected() {
        assert!(matches!(
            segment_query(b"", &cfg()),
            Err(EngineError::EmptyQuery)
        ));
    }

    #[test]
    fn candidate_bins_clip_at_both_ends() {
        let ks = |k, n| {
            candidate_bins(SizeBin::new(k), n)
                .iter()
                .map(|b| b.k())
                .collect::<Vec<_>>()
        };
        assert_eq!(ks(5, 32), vec![4, 5, 6, 7]);
        assert_eq!(ks(1, 32), vec![1, 2, 3]);
        assert_eq!(ks(32, 32), vec![31, 32]);
        assert_eq!(ks(31, 32), vec![30, 31, 32]);
    }

    fn random_doc(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
        (0..len).map(|_| rng.random_range(b'a'..=b'z')).collect()
    }

    #[test]
    fn sample_covers_every_block_and_self_match_is_closest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let docs: Vec<_> = (0..4)
            .map(|i| DocumentInput::new(format!("d{i}"), random_doc(&mut rng, 6 * KIB)))
            .collect();
        let config = IngestConfig { n_max: 4, ..cfg() };
        let index = CorpusIndex::from_documents(config, docs).unwrap();
        let bin = SizeBin::new(2);
        let target = index.blocks(bin)[3].clone();
        let unit = QueryUnit {
            ordinal: 0,
            bin,
            range: ByteRange::new(0, target.range.len()),
            bytes: index.block_bytes(&target).to_vec(),
        };
        let sample = sample_distances(&unit, compressed_size(&unit.bytes), bin, &index);
        assert_eq!(sample.len(), index.blocks(bin).len());
        let (argmin, _) = sample
            .distances
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(argmin, 3);
        let second = sample
            .distances
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 3)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min);
        assert!(sample.distances[3] < second);
    }

    #[test]
    fn empty_bin_gives_empty_sample() {
        let index = CorpusIndex::new(cfg()).unwrap();
        let unit = segment_query(b"hello there", &cfg()).unwrap().remove(0);
        let sample = sample_distances(&unit, compressed_size(&unit.bytes), SizeBin::new(1), &index);
        assert!(sample.is_empty());
    }

    #[test]
    fn ranking_order_and_vote_totals() {
        let mk = |doc: &str, ncd: f64, ordinal: u32| FlaggedBlock {
            doc_id: doc.into(),
            name: doc.into(),
            bin: 1,
            ordinal,
            start: ordinal as usize * 100,
            end: ordinal as usize * 100 + 150,
            ncd,
            unit: 0,
        };
        let flagged = vec![
            mk("b", 0.5, 0),
            mk("a", 0.6, 0),
            mk("c", 0.3, 0),
            mk("c", 0.4, 1),
            mk("a", 0.7, 1),
            mk("d", 0.5, 0),
        ];
        let r = assemble(0.05, vec![], flagged, vec![]);
        // c and a have 2 votes, c has the closer block; b and d tie on
        // votes and distance and fall back to id order
        assert_eq!(r.ranking, vec!["c", "a", "b", "d"]);
        assert_eq!(r.votes.values().sum::<u32>() as usize, r.flagged.len());
        assert_eq!(
            r.highlights["c"],
            vec![ByteRange::new(0, 150), ByteRange::new(100, 250)]
        );
        assert!(r.flagged.windows(2).all(|w| w[0].ncd <= w[1].ncd));
    }
}
