//! Lower-outlier detection with the Hampel identifier.
//!
//! A value `x` of a sample is flagged when `(M - x) / S > g(N; alpha)`, with
//! `M` the sample median and `S` the median absolute deviation. The
//! threshold `g` is the `(1 - alpha)` quantile of `max_i |X_i - M| / S` over
//! clean standard-normal samples of size `N`, so a clean sample is left
//! untouched with probability `1 - alpha`. It has no closed form and is
//! estimated by simulation.
//!
//! The calibrating statistic is two-sided while flagging only looks below
//! the median, so the realised false-alarm rate on clean data sits between
//! `alpha / 2` and `alpha`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GTABLE_FORMAT_VERSION: u32 = 1;

/// Relative scale substituted for a zero MAD.
pub const MAD_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OutlierError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample of size {0} is too small for the Hampel identifier (need at least 3)")]
    SampleTooSmall(usize),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("sample size {0} must be at least 3")]
    SampleSize(usize),
    #[error("need at least one Monte Carlo replicate")]
    Replicates,
    #[error("g-table: {0}")]
    Table(String),
    #[error("g-table i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustStats {
    pub median: f64,
    pub mad: f64,
    pub n: usize,
}

pub fn robust_stats(sample: &[f64]) -> Result<RobustStats, OutlierError> {
    if sample.is_empty() {
        return Err(OutlierError::EmptySample);
    }
    let mut buf = sample.to_vec();
    let median = median_in_place(&mut buf);
    for (d, x) in buf.iter_mut().zip(sample) {
        *d = (x - median).abs();
    }
    let mad = median_in_place(&mut buf);
    Ok(RobustStats {
        median,
        mad,
        n: sample.len(),
    })
}

/// Median by selection; reorders `v`. Even lengths average the two middle
/// order statistics.
fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower_max + upper) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierVerdict {
    pub flagged: Vec<usize>,
    pub g: f64,
    pub stats: RobustStats,
}

/// Flag lower outliers: indices with `x < M` and `(M - x) / S > g`.
///
/// `g = -inf` flags everything strictly below the median; `g = +inf` flags
/// nothing. A zero MAD is replaced by `1e-9 * max(|M|, 1)`.
pub fn hampel_lower(sample: &[f64], g: f64) -> Result<OutlierVerdict, OutlierError> {
    if sample.len() < 3 {
        return Err(OutlierError::SampleTooSmall(sample.len()));
    }
    let stats = robust_stats(sample)?;
    let m = stats.median;
    let s = if stats.mad > 0.0 {
        stats.mad
    } else {
        MAD_FLOOR * m.abs().max(1.0)
    };
    let flagged = sample
        .iter()
        .enumerate()
        .filter(|(_, &x)| x < m && (m - x) / s > g)
        .map(|(i, _)| i)
        .collect();
    Ok(OutlierVerdict { flagged, g, stats })
}

/// Order statistic (1-based) used as the `(1 - alpha)` quantile of `r` draws.
pub fn quantile_rank(alpha: f64, r: usize) -> usize {
    // the epsilon keeps e.g. (1 - 0.05) * 10000 from rounding up to 9501
    let k = ((1.0 - alpha) * r as f64 - 1e-9).ceil() as usize;
    k.clamp(1, r)
}

/// RNG for replicate `r`: one ChaCha stream per replicate under a shared seed,
/// so replicates can be drawn in any order or in parallel.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// `max_i |X_i - M| / S` for one standard-normal sample of size `n`. A
/// sample with zero MAD is discarded and redrawn from the same stream.
fn replicate_statistic(n: usize, rng: &mut ChaCha8Rng, buf: &mut Vec<f64>) -> f64 {
    loop {
        buf.clear();
        buf.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let stats = robust_stats(buf).expect("non-empty");
        if stats.mad > 0.0 {
            let worst = buf
                .iter()
                .map(|x| (x - stats.median).abs())
                .fold(0.0, f64::max);
            return worst / stats.mad;
        }
    }
}

/// All `r` replicate statistics for sample size `n`, sorted ascending.
pub fn replicate_statistics(n: usize, r: usize, seed: u64) -> Vec<f64> {
    let mut stats: Vec<f64> = (0..r)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            replicate_statistic(n, &mut replicate_rng(seed, i), buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    stats
}

fn check_g_args(n: usize, alpha: f64, r: usize) -> Result<(), OutlierError> {
    if n < 3 {
        return Err(OutlierError::SampleSize(n));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OutlierError::Alpha(alpha));
    }
    if r == 0 {
        return Err(OutlierError::Replicates);
    }
    Ok(())
}

fn g_from_sorted(sorted: &[f64], alpha: f64) -> f64 {
    if alpha == 0.0 {
        f64::INFINITY
    } else if alpha == 1.0 {
        f64::NEG_INFINITY
    } else {
        sorted[quantile_rank(alpha, sorted.len()) - 1]
    }
}

/// Monte Carlo estimate of `g(n; alpha)` from `r` replicates.
///
/// `alpha = 0` gives `+inf` (nothing is ever flagged) and `alpha = 1` gives
/// `-inf` (everything below the median is flagged).
pub fn estimate_g(n: usize, alpha: f64, r: usize, seed: u64) -> Result<f64, OutlierError> {
    check_g_args(n, alpha, r)?;
    if alpha == 0.0 || alpha == 1.0 {
        return Ok(g_from_sorted(&[], alpha));
    }
    Ok(g_from_sorted(&replicate_statistics(n, r, seed), alpha))
}

/// Cache of `g(N; alpha)` for a fixed replicate count and seed.
///
/// Rows are inserted on demand and never interpolated. The sorted replicate
/// statistics per `N` are kept in memory as well, so a sweep over many alphas
/// simulates each `N` only once; only the rows are persisted.
#[derive(Debug)]
pub struct GTable {
    replicates: usize,
    seed: u64,
    rows: RwLock<BTreeMap<(usize, u64), f64>>,
    simulated: RwLock<HashMap<usize, Arc<Vec<f64>>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GTableFile {
    format_version: u32,
    replicates: usize,
    seed: u64,
    rows: Vec<GRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GRow {
    n: usize,
    alpha: f64,
    g: f64,
}

impl GTable {
    pub fn new(replicates: usize, seed: u64) -> GTable {
        GTable {
            replicates,
            seed,
            rows: RwLock::new(BTreeMap::new()),
            simulated: RwLock::new(HashMap::new()),
        }
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.rows.read().expect("gtable poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cached row, if present.
    pub fn cached(&self, n: usize, alpha: f64) -> Option<f64> {
        self.rows
            .read()
            .expect("gtable poisoned")
            .get(&(n, alpha.to_bits()))
            .copied()
    }

    pub fn g(&self, n: usize, alpha: f64) -> Result<f64, OutlierError> {
        check_g_args(n, alpha, self.replicates)?;
        if alpha == 0.0 || alpha == 1.0 {
            return Ok(g_from_sorted(&[], alpha));
        }
        if let Some(g) = self.cached(n, alpha) {
            return Ok(g);
        }
        let sorted = self.simulated_for(n);
        let g = g_from_sorted(&sorted, alpha);
        self.rows
            .write()
            .expect("gtable poisoned")
            .insert((n, alpha.to_bits()), g);
        Ok(g)
    }

    fn simulated_for(&self, n: usize) -> Arc<Vec<f64>> {
        if let Some(s) = self.simulated.read().expect("gtable poisoned").get(&n) {
            return Arc::clone(s);
        }
        let s = Arc::new(replicate_statistics(n, self.replicates, self.seed));
        self.simulated
            .write()
            .expect("gtable poisoned")
            .entry(n)
            .or_insert(s)
            .clone()
    }

    pub fn to_json(&self) -> String {
        let rows = self.rows.read().expect("gtable poisoned");
        let file = GTableFile {
            format_version: GTABLE_FORMAT_VERSION,
            replicates: self.replicates,
            seed: self.seed,
            rows: rows
                .iter()
                .map(|(&(n, bits), &g)| GRow {
                    n,
                    alpha: f64::from_bits(bits),
                    g,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("gtable serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<GTable, OutlierError> {
        let file: GTableFile =
            serde_json::from_str(text).map_err(|e| OutlierError::Table(e.to_string()))?;
        if file.format_version != GTABLE_FORMAT_VERSION {
            return Err(OutlierError::Table(format!(
                "unsupported format version {}",
                file.format_version
            )));
        }
        let table = GTable::new(file.replicates, file.seed);
        {
            let mut rows = table.rows.write().expect("gtable poisoned");
            for row in file.rows {
                rows.insert((row.n, row.alpha.to_bits()), row.g);
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), OutlierError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GTable, OutlierError> {
        GTable::from_json(&fs::read_to_string(path)?)
    }

    /// Load `path` if it exists and was built with the same replicate count
    /// and seed; otherwise start empty.
    pub fn load_or_new(path: &Path, replicates: usize, seed: u64) -> GTable {
        match GTable::load(path) {
            Ok(t) if t.replicates == replicates && t.seed == seed => t,
            Ok(_) => {
                log::warn!("{} built with other settings, ignoring", path.display());
                GTable::new(replicates, seed)
            }
            Err(OutlierError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                GTable::new(replicates, seed)
            }
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}", path.display());
                GTable::new(replicates, seed)
            }
        }
    }
}

/// Text histogram of a distance sample, for eyeballing the normality
/// assumption behind the threshold.
pub fn histogram(sample: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if sample.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &x in sample {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}
