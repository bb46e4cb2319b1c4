//! Windowless Lempel-Ziv parsing with an explicit bit-cost model.
//!
//! The parse is greedy: at every position the longest match of the remaining
//! input against the *entire* consumed prefix is taken (no 32 KiB window), and
//! ties on length go to the smallest offset. Matches shorter than
//! [`MIN_MATCH`] are replaced by a literal. Matches may overlap the position
//! being parsed and are then decoded byte by byte.
//!
//! The size of a parse is counted in bits:
//!
//! * literal: 1 flag bit + 8 bits
//! * match: 1 flag bit + Elias-gamma(offset) + Elias-gamma(length)
//!
//! No bitstream is ever emitted; only the cost is needed to estimate `C(x)`.

use std::cell::RefCell;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Shortest back-reference the parser will emit.
pub const MIN_MATCH: usize = 3;

const NIL: u32 = u32::MAX;

/// One token of the parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phrase {
    Literal(u8),
    /// Copy `length` bytes starting `offset` bytes back.
    Match {
        offset: usize,
        length: usize,
    },
}

impl Phrase {
    /// Number of input bytes this phrase covers.
    pub fn span(&self) -> usize {
        match *self {
            Phrase::Literal(_) => 1,
            Phrase::Match { length, .. } => length,
        }
    }

    pub fn cost(&self) -> BitCost {
        match *self {
            Phrase::Literal(_) => BitCost(9),
            Phrase::Match { offset, length } => {
                BitCost(1 + gamma_len(offset as u64) + gamma_len(length as u64))
            }
        }
    }
}

/// Compressed size in bits.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct BitCost(pub u64);

impl BitCost {
    pub const ZERO: BitCost = BitCost(0);

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl Add for BitCost {
    type Output = BitCost;
    fn add(self, rhs: BitCost) -> BitCost {
        BitCost(self.0 + rhs.0)
    }
}

impl AddAssign for BitCost {
    fn add_assign(&mut self, rhs: BitCost) {
        self.0 += rhs.0;
    }
}

impl Sum for BitCost {
    fn sum<I: Iterator<Item = BitCost>>(iter: I) -> BitCost {
        iter.fold(BitCost::ZERO, Add::add)
    }
}

impl fmt::Display for BitCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bits", self.0)
    }
}

/// Length in bits of the Elias-gamma code for `v >= 1`.
pub fn gamma_len(v: u64) -> u64 {
    assert!(v >= 1, "Elias-gamma is undefined for 0");
    2 * u64::from(63 - v.leading_zeros()) + 1
}

/// Parse `data` into phrases.
pub fn lz_parse(data: &[u8]) -> Vec<Phrase> {
    let mut out = Vec::new();
    parse_with(data, |p| out.push(p));
    out
}

/// Total bit cost of the parse of `data`.
pub fn compressed_size(data: &[u8]) -> BitCost {
    let mut total = BitCost::ZERO;
    parse_with(data, |p| total += p.cost());
    total
}

/// `compressed_size(x ‖ y)` without the caller building the concatenation.
pub fn concat_size(x: &[u8], y: &[u8]) -> BitCost {
    if y.is_empty() {
        return compressed_size(x);
    }
    if x.is_empty() {
        return compressed_size(y);
    }
    CONCAT_BUF.with(|buf| {
        let mut buf = buf.borrow_mut();
        buf.clear();
        buf.extend_from_slice(x);
        buf.extend_from_slice(y);
        compressed_size(&buf)
    })
}

/// Rebuild the original bytes from a parse.
///
/// Panics if a match points before the start of the output.
pub fn decode(phrases: &[Phrase]) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    for phrase in phrases {
        match *phrase {
            Phrase::Literal(b) => out.push(b),
            Phrase::Match { offset, length } => {
                assert!(
                    offset >= 1 && offset <= out.len(),
                    "match offset {offset} outside decoded prefix of {} bytes",
                    out.len()
                );
                let start = out.len() - offset;
                for k in 0..length {
                    let b = out[start + k];
                    out.push(b);
                }
            }
        }
    }
    out
}

thread_local! {
    static CONCAT_BUF: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
    static CHAINS: RefCell<HashChains> = RefCell::new(HashChains::default());
}

/// Drive the greedy parse, handing each phrase to `emit`.
fn parse_with<F: FnMut(Phrase)>(data: &[u8], mut emit: F) {
    let n = data.len();
    if n < MIN_MATCH + 1 {
        data.iter().for_each(|&b| emit(Phrase::Literal(b)));
        return;
    }
    CHAINS.with(|chains| {
        let mut chains = chains.borrow_mut();
        chains.reset(n);
        let mut pos = 0;
        while pos < n {
            let (length, offset) = chains.longest_match(data, pos);
            let step = if length >= MIN_MATCH {
                emit(Phrase::Match { offset, length });
                length
            } else {
                emit(Phrase::Literal(data[pos]));
                1
            };
            for p in pos..pos + step {
                chains.insert(data, p);
            }
            pos += step;
        }
    });
}

/// Hash chains over every position of the prefix. The chains are walked to
/// the end, so the search is exhaustive and the parse is exactly the
/// greedy-longest one.
#[derive(Default)]
struct HashChains {
    head: Vec<u32>,
    prev: Vec<u32>,
    mask: usize,
}

impl HashChains {
    fn reset(&mut self, n: usize) {
        let buckets = n.next_power_of_two().clamp(1 << 8, 1 << 16);
        self.head.clear();
        self.head.resize(buckets, NIL);
        self.mask = buckets - 1;
        self.prev.clear();
        self.prev.resize(n, NIL);
    }

    #[inline]
    fn bucket(&self, data: &[u8], p: usize) -> usize {
        let key = u32::from(data[p]) << 16 | u32::from(data[p + 1]) << 8 | u32::from(data[p + 2]);
        (key.wrapping_mul(0x9E37_79B1) >> 16) as usize & self.mask
    }

    #[inline]
    fn insert(&mut self, data: &[u8], p: usize) {
        if p + MIN_MATCH > data.len() {
            return;
        }
        let b = self.bucket(data, p);
        self.prev[p] = self.head[b];
        self.head[b] = p as u32;
    }

    /// Longest match for `data[pos..]` in the prefix, as `(length, offset)`.
    /// Candidates are visited nearest first, so keeping only strictly longer
    /// matches yields the smallest offset among the longest.
    fn longest_match(&self, data: &[u8], pos: usize) -> (usize, usize) {
        let n = data.len();
        if pos + MIN_MATCH > n {
            return (0, 0);
        }
        let max_len = n - pos;
        let target = &data[pos..];
        let mut best_len = 0;
        let mut best_off = 0;
        let mut cand = self.head[self.bucket(data, pos)];
        while cand != NIL {
            let j = cand as usize;
            // the byte that would extend the current best must agree first
            if data[j + best_len.min(max_len - 1)] == target[best_len.min(max_len - 1)] {
                let len = common_prefix(&data[j..], target);
                if len > best_len {
                    best_len = len;
                    best_off = pos - j;
                    if len == max_len {
                        break;
                    }
                }
            }
            cand = self.prev[j];
        }
        (best_len, best_off)
    }
}

#[inline]
fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic reference: scan every earlier start, nearest first.
    fn naive_parse(data: &[u8]) -> Vec<Phrase> {
        let n = data.len();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < n {
            let (mut best_len, mut best_off) = (0, 0);
            for j in (0..pos).rev() {
                let mut len = 0;
                while pos + len < n && data[j + len] == data[pos + len] {
                    len += 1;
                }
                if len > best_len {
                    best_len = len;
                    best_off = pos - j;
                }
            }
            if best_len >= MIN_MATCH {
                out.push(Phrase::Match {
                    offset: best_off,
                    length: best_len,
                });
                pos += best_len;
            } else {
                out.push(Phrase::Literal(data[pos]));
                pos += 1;
            }
        }
        out
    }

    fn random_bytes(rng: &mut ChaCha8Rng, len: usize, alphabet: u8) -> Vec<u8> {
        (0..len).map(|_| rng.random_range(0..alphabet)).collect()
    }

    #[test]
    fn empty_input() {
        assert!(lz_parse(b"").is_empty());
        assert_eq!(compressed_size(b""), BitCost(0));
    }

    #[test]
    fn single_byte_is_one_literal() {
        assert_eq!(lz_parse(b"x"), vec![Phrase::Literal(b'x')]);
        assert_eq!(compressed_size(b"x"), BitCost(9));
    }

    #[test]
    fn run_of_a_is_literal_then_self_overlapping_match() {
        let parse = lz_parse(b"aaaaaaaa");
        assert_eq!(
            parse,
            vec![
                Phrase::Literal(b'a'),
                Phrase::Match {
                    offset: 1,
                    length: 7
                }
            ]
        );
        assert_eq!(decode(&parse), b"aaaaaaaa");
        assert_eq!(compressed_size(b"aaaaaaaa"), BitCost(16));
    }

    #[test]
    fn gamma_lengths() {
        assert_eq!(gamma_len(1), 1);
        assert_eq!(gamma_len(2), 3);
        assert_eq!(gamma_len(3), 3);
        assert_eq!(gamma_len(7), 5);
        assert_eq!(gamma_len(8), 7);
        assert_eq!(gamma_len(4096), 25);
    }

    #[test]
    fn short_repeats_stay_literal() {
        // "abab": the only repeat has length 2 < MIN_MATCH
        assert!(lz_parse(b"abab")
            .iter()
            .all(|p| matches!(p, Phrase::Literal(_))));
        assert_eq!(
            lz_parse(b"abcabc"),
            vec![
                Phrase::Literal(b'a'),
                Phrase::Literal(b'b'),
                Phrase::Literal(b'c'),
                Phrase::Match {
                    offset: 3,
                    length: 3
                },
            ]
        );
    }

    #[test]
    fn tie_break_prefers_nearest_occurrence() {
        // "abcd" occurs at 0 and 5; the copy at 10 must reference offset 5
        let data = b"abcdXabcdYabcd";
        let parse = lz_parse(data);
        assert_eq!(
            parse.last(),
            Some(&Phrase::Match {
                offset: 5,
                length: 4
            })
        );
    }

    #[test]
    fn random_4k_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4096);
        let data = random_bytes(&mut rng, 4096, 255);
        let fast = lz_parse(&data);
        assert_eq!(fast, naive_parse(&data));
        let matched: usize = fast
            .iter()
            .filter(|p| matches!(p, Phrase::Match { .. }))
            .map(Phrase::span)
            .sum();
        // a uniform 4 KiB string has only a handful of 3-byte repeats
        assert!(
            matched * 50 < data.len(),
            "match fraction too high: {matched}"
        );
    }

    #[test]
    fn binary_alphabet_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let len = rng.random_range(0..=256);
            let data = random_bytes(&mut rng, len, 2);
            assert_eq!(lz_parse(&data), naive_parse(&data), "input {data:?}");
        }
    }

    #[test]
    fn window_spans_more_than_32k() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_bytes(&mut rng, 2048, 255);
        let b = random_bytes(&mut rng, 64 * 1024, 255);
        let data = [a.as_slice(), &b, &a].concat();
        let parse = lz_parse(&data);
        assert_eq!(decode(&parse), data);

        let second_a = data.len() - a.len();
        let mut pos = 0;
        let mut far_bytes = 0;
        for p in &parse {
            if pos >= second_a {
                if let Phrase::Match { offset, length } = *p {
                    if offset > b.len() {
                        far_bytes += length;
                    }
                }
            }
            pos += p.span();
        }
        assert!(
            far_bytes >= a.len() - 2,
            "second copy not covered: {far_bytes}"
        );
    }

    #[test]
    fn concat_size_identity_and_order() {
        let x = b"the quick brown fox jumps over the lazy dog";
        assert_eq!(concat_size(x, b""), compressed_size(x));
        assert_eq!(concat_size(b"", x), compressed_size(x));
        let y = b"pack my box with five dozen liquor jugs";
        assert_eq!(
            concat_size(x, y),
            compressed_size(&[&x[..], &y[..]].concat())
        );
    }

    #[test]
    fn second_copy_is_nearly_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let len = rng.random_range(1..=8192);
            let x = random_bytes(&mut rng, len, 255);
            let bound = compressed_size(&x).0 + 1 + 2 * gamma_len(len as u64);
            assert!(concat_size(&x, &x).0 <= bound, "len {len}");
        }
    }

    #[test]
    fn independent_random_strings_do_not_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let x = random_bytes(&mut rng, 4096, 255);
            let y = random_bytes(&mut rng, 4096, 255);
            let (cx, cy) = (compressed_size(&x).as_f64(), compressed_size(&y).as_f64());
            let cxy = concat_size(&x, &y).as_f64();
            assert!((cxy - cx - cy).abs() <= 0.02 * (cx + cy));
        }
    }

    #[test]
    #[should_panic(expected = "outside decoded prefix")]
    fn decode_rejects_dangling_match() {
        decode(&[Phrase::Match {
            offset: 1,
            length: 3,
        }]);
    }
}
