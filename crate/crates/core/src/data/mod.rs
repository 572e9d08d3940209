//! Market panel data: bar storage, CSV I/O, feature construction, splits,
//! normalization, and a synthetic panel generator.

pub mod csv_io;
pub mod features;
pub mod synth;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Slots of same-day history in every feature vector.
pub const SAME_DAY_SLOTS: usize = 12;
/// Prior trading days (same slot) in every feature vector.
pub const PRIOR_DAYS: usize = 20;
/// Log-scaled fields per context point: volume, open, close, high, low.
pub const FIELDS_PER_POINT: usize = 5;
/// Total feature width.
pub const FEATURE_DIM: usize = (SAME_DAY_SLOTS + PRIOR_DAYS) * FIELDS_PER_POINT;

/// One intraday bar. All values are raw (not logged) and positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub volume: f64,
    pub open: f64,
    pub close: f64,
    pub high: f64,
    pub low: f64,
}

impl Bar {
    pub fn is_valid(&self) -> bool {
        [self.volume, self.open, self.close, self.high, self.low]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Panel of bars keyed `(stock, day, slot)`. BTreeMaps keep iteration
/// order deterministic, which the data fingerprint relies on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketPanel {
    data: BTreeMap<String, BTreeMap<u32, BTreeMap<u32, Bar>>>,
}

pub fn valid_stock_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl MarketPanel {
    pub fn new() -> Self {
        MarketPanel::default()
    }

    /// Inserts a bar; rejects duplicate keys and invalid stock ids.
    pub fn insert(&mut self, stock: &str, day: u32, slot: u32, bar: Bar) -> Result<()> {
        if !valid_stock_id(stock) {
            return Err(Error::data(format!(
                "invalid stock id {stock:?} (allowed: ASCII letters, digits, '.', '_', '-')"
            )));
        }
        let slots = self.data.entry(stock.to_string()).or_default().entry(day).or_default();
        if slots.insert(slot, bar).is_some() {
            return Err(Error::data(format!("duplicate bar for ({stock}, {day}, {slot})")));
        }
        Ok(())
    }

    pub fn stocks(&self) -> impl Iterator<Item = &str> {
        self.data.keys().map(String::as_str)
    }

    pub fn num_stocks(&self) -> usize {
        self.data.len()
    }

    /// Sorted trading days on which `stock` has at least one bar.
    pub fn days(&self, stock: &str) -> Vec<u32> {
        self.data.get(stock).map(|d| d.keys().copied().collect()).unwrap_or_default()
    }

    pub fn slots(&self, stock: &str, day: u32) -> Vec<u32> {
        self.data
            .get(stock)
            .and_then(|d| d.get(&day))
            .map(|s| s.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn bar(&self, stock: &str, day: u32, slot: u32) -> Option<&Bar> {
        self.data.get(stock)?.get(&day)?.get(&slot)
    }

    pub fn num_bars(&self) -> usize {
        self.data.values().flat_map(|d| d.values()).map(BTreeMap::len).sum()
    }

    pub fn max_day(&self) -> Option<u32> {
        self.data.values().flat_map(|d| d.keys().copied()).max()
    }

    /// Iterates all bars in `(stock, day, slot)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, u32, &Bar)> {
        self.data.iter().flat_map(|(stock, days)| {
            days.iter().flat_map(move |(day, slots)| {
                slots.iter().map(move |(slot, bar)| (stock.as_str(), *day, *slot, bar))
            })
        })
    }

    /// SHA-256 of the canonical CSV rendering. Identical panels hash
    /// identically regardless of the row order they were loaded from.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(csv_io::render_csv(self).as_bytes());
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One supervised example: predict the log volume at `(stock, day, slot)`
/// from 12 preceding same-day bars and the same slot on 20 prior days.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub stock: String,
    pub day: u32,
    pub slot: u32,
    /// Flattened context, `FEATURE_DIM` wide; see [`features::build_instances`].
    pub x: Vec<f64>,
    /// Log volume at the target bar. Never normalized.
    pub y: f64,
    /// Log volume at `(day, slot-1)`, the naive carry-forward predictor.
    pub v_last: f64,
}

/// Day-based split boundaries: train `< dev_start`, dev `< test_start`,
/// test otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub dev_start: u32,
    pub test_start: u32,
}

impl SplitSpec {
    pub fn new(dev_start: u32, test_start: u32) -> Result<Self> {
        if dev_start == 0 || test_start <= dev_start {
            return Err(Error::config(format!(
                "split boundaries must satisfy 0 < dev_start < test_start, got {dev_start} and {test_start}"
            )));
        }
        Ok(SplitSpec { dev_start, test_start })
    }

    pub fn of_day(&self, day: u32) -> Split {
        if day < self.dev_start {
            Split::Train
        } else if day < self.test_start {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

/// All instances of one stock, split by target day. Instances inside each
/// split are ordered by `(day, slot)`.
#[derive(Debug, Clone)]
pub struct StockTask {
    pub stock: String,
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl StockTask {
    pub fn split(&self, which: Split) -> &[Instance] {
        match which {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Per-feature normalization fitted on training instances only. Targets
/// and `v_last` stay raw.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity transform (zero mean, unit scale).
    pub fn identity(dim: usize) -> Self {
        NormStats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population mean/std per coordinate; stds floored at `std_floor`.
    pub fn fit<'a>(xs: impl Iterator<Item = &'a [f64]> + Clone, dim: usize, std_floor: f64) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for x in xs.clone() {
            if x.len() != dim {
                return Err(Error::data(format!(
                    "normalization expects width {dim}, found {}",
                    x.len()
                )));
            }
            n += 1;
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        if n == 0 {
            return Err(Error::data("cannot fit normalization on zero instances"));
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(std_floor)).collect();
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, xn: &[f64]) -> Vec<f64> {
        xn.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(v: f64) -> Bar {
        Bar { volume: v, open: 1.0, close: 1.0, high: 1.0, low: 1.0 }
    }

    #[test]
    fn insert_rejects_duplicates_and_bad_ids() {
        let mut p = MarketPanel::new();
        p.insert("A", 0, 0, bar(1.0)).unwrap();
        assert!(p.insert("A", 0, 0, bar(2.0)).is_err());
        assert!(p.insert("bad id", 0, 1, bar(1.0)).is_err());
        assert!(p.insert("", 0, 1, bar(1.0)).is_err());
        p.insert("B.X-1_2", 0, 0, bar(1.0)).unwrap();
    }

    #[test]
    fn split_spec_assigns_days() {
        let s = SplitSpec::new(5, 8).unwrap();
        assert_eq!(s.of_day(4), Split::Train);
        assert_eq!(s.of_day(5), Split::Dev);
        assert_eq!(s.of_day(7), Split::Dev);
        assert_eq!(s.of_day(8), Split::Test);
        assert!(SplitSpec::new(0, 3).is_err());
        assert!(SplitSpec::new(5, 5).is_err());
    }

    #[test]
    fn norm_round_trips_and_uses_floor() {
        let xs = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let stats = NormStats::fit(xs.iter().map(Vec::as_slice), 2, 1e-8).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!((stats.std[0] - 1.0).abs() < 1e-15);
        // Constant coordinate gets the floor instead of zero.
        assert_eq!(stats.std[1], 1e-8);
        let x = [7.0, 5.0];
        let back = stats.inverse(&stats.apply(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fingerprint_ignores_insertion_order() {
        let mut a = MarketPanel::new();
        a.insert("A", 0, 0, bar(1.5)).unwrap();
        a.insert("A", 0, 1, bar(2.5)).unwrap();
        let mut b = MarketPanel::new();
        b.insert("A", 0, 1, bar(2.5)).unwrap();
        b.insert("A", 0, 0, bar(1.5)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = MarketPanel::new();
        c.insert("A", 0, 0, bar(1.5)).unwrap();
        c.insert("A", 0, 1, bar(2.5001)).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
