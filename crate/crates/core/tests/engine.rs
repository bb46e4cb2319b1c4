use ncdsearch_core::corpus::KIB;
use ncdsearch_core::{CorpusIndex, DocumentInput, Engine, GTable, IngestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prose(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    const WORDS: [&str; 24] = [
        "the", "of", "and", "a", "to", "in", "is", "was", "that", "for", "on", "are", "with",
        "they", "be", "at", "one", "have", "this", "from", "by", "hot", "word", "but",
    ];
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        out.extend_from_slice(WORDS[rng.random_range(0..WORDS.len())].as_bytes());
        out.push(if rng.random_bool(0.1) { b'\n' } else { b' ' });
    }
    out.truncate(len);
    out
}

/// 29 random 8KB documents plus one containing the 2KB query verbatim.
fn planted() -> (CorpusIndex, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let query = prose(&mut rng, 2 * KIB);
    let mut docs: Vec<DocumentInput> = (0..29)
        .map(|i| DocumentInput::new(format!("doc{i:02}"), prose(&mut rng, 8 * KIB)))
        .collect();
    let mut host = prose(&mut rng, 3 * KIB);
    host.extend_from_slice(&query);
    host.extend(prose(&mut rng, 3 * KIB));
    docs.push(DocumentInput::new("planted", host));
    let config = IngestConfig {
        n_max: 8,
        ..IngestConfig::default()
    };
    (CorpusIndex::from_documents(config, docs).unwrap(), query)
}

#[test]
fn planted_document_ranks_first() {
    let (index, query) = planted();
    let gtable = GTable::new(2000, 7);
    let result = Engine::new(&index).query(&query, 0.05, &gtable).unwrap();
    assert_eq!(result.ranking.first().map(String::as_str), Some("planted"));
    assert!(result.votes["planted"] >= 1);
    let total: u32 = result.votes.values().sum();
    assert_eq!(total as usize, result.flagged.len());
    for (doc, spans) in &result.highlights {
        let len = index.document(doc).unwrap().bytes.len();
        assert!(spans.iter().all(|s| s.end <= len && s.start < s.end));
    }
}

#[test]
fn alpha_zero_retrieves_nothing() {
    let (index, query) = planted();
    let result = Engine::new(&index)
        .query(&query, 0.0, &GTable::new(1000, 7))
        .unwrap();
    assert!(result.ranking.is_empty());
    assert!(result.flagged.is_empty());
}

#[test]
fn flags_grow_with_alpha_on_a_corpus() {
    let (index, query) = planted();
    let engine = Engine::new(&index);
    let gtable = GTable::new(1000, 7);
    let scored = engine.score(&query).unwrap();
    let mut previous = Vec::new();
    for alpha in [0.0, 0.01, 0.05, 0.2, 1.0] {
        let result = engine.resolve(&scored, alpha, &gtable).unwrap();
        let keys: Vec<_> = result
            .flagged
            .iter()
            .map(|f| (f.doc_id.clone(), f.bin, f.ordinal, f.unit))
            .collect();
        assert!(previous.iter().all(|k| keys.contains(k)));
        previous = keys;
    }
}

#[test]
fn queries_are_deterministic() {
    let (index, query) = planted();
    let gtable = GTable::new(1000, 7);
    let engine = Engine::new(&index);
    let a = engine.query(&query, 0.05, &gtable).unwrap();
    let b = engine.query(&query, 0.05, &gtable).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_document_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let doc = prose(&mut rng, 12 * KIB);
    let index = CorpusIndex::from_documents(
        IngestConfig::default(),
        [DocumentInput::new("only", doc.clone())],
    )
    .unwrap();
    let result = Engine::new(&index)
        .query(&doc[100..1100], 0.05, &GTable::new(1000, 1))
        .unwrap();
    assert!(result.ranking.is_empty() || result.ranking == ["only"]);
}
