//! Normalized Compression Distance over the windowless LZ cost model.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::RwLock;

use thiserror::Error;

use crate::compressor::{compressed_size, concat_size, BitCost};

/// Upper tolerance on NCD values. Ideal compressors stay within `[0, 1]`;
/// the greedy parser can overshoot slightly.
pub const NCD_CEILING: f64 = 1.1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistanceError {
    #[error("NCD is undefined for two empty inputs")]
    BothEmpty,
}

/// NCD from the four compressed sizes `C(x)`, `C(y)`, `C(xy)`, `C(yx)`.
///
/// Negative numerators clamp to zero.
pub fn ncd_from_sizes(
    cx: BitCost,
    cy: BitCost,
    cxy: BitCost,
    cyx: BitCost,
) -> Result<f64, DistanceError> {
    let denom = cx.max(cy).as_f64();
    if denom == 0.0 {
        return Err(DistanceError::BothEmpty);
    }
    let a = cxy.as_f64() - cx.as_f64();
    let b = cyx.as_f64() - cy.as_f64();
    Ok((a.max(b) / denom).max(0.0))
}

/// NCD between two byte strings, compressing everything from scratch.
pub fn ncd(x: &[u8], y: &[u8]) -> Result<f64, DistanceError> {
    ncd_with_sizes(x, compressed_size(x), y, compressed_size(y))
}

/// NCD when the standalone sizes are already known (cached block sizes).
/// Both concatenation orders are always compressed.
pub fn ncd_with_sizes(x: &[u8], cx: BitCost, y: &[u8], cy: BitCost) -> Result<f64, DistanceError> {
    if x.is_empty() && y.is_empty() {
        return Err(DistanceError::BothEmpty);
    }
    ncd_from_sizes(cx, cy, concat_size(x, y), concat_size(y, x))
}

/// Compressed sizes keyed by an identifier. Read-mostly: lookups take a
/// shared lock, inserts are serialized, and nothing is ever evicted.
#[derive(Debug)]
pub struct SizeCache<K> {
    sizes: RwLock<HashMap<K, BitCost>>,
}

impl<K> Default for SizeCache<K> {
    fn default() -> Self {
        SizeCache {
            sizes: RwLock::new(HashMap::new()),
        }
    }
}

impl<K: Hash + Eq + Clone> SizeCache<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &K) -> Option<BitCost> {
        self.sizes
            .read()
            .expect("size cache poisoned")
            .get(key)
            .copied()
    }

    /// Cached size for `key`, compressing `bytes` on a miss.
    pub fn size_of(&self, key: &K, bytes: &[u8]) -> BitCost {
        if let Some(c) = self.get(key) {
            return c;
        }
        let c = compressed_size(bytes);
        self.sizes
            .write()
            .expect("size cache poisoned")
            .entry(key.clone())
            .or_insert(c);
        c
    }

    pub fn len(&self) -> usize {
        self.sizes.read().expect("size cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// NCD between two keyed inputs, filling the cache as needed.
    pub fn ncd(&self, kx: &K, x: &[u8], ky: &K, y: &[u8]) -> Result<f64, DistanceError> {
        let cx = self.size_of(kx, x);
        let cy = self.size_of(ky, y);
        ncd_with_sizes(x, cx, y, cy)
    }
}
