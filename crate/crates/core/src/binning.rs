//! Label-space intervals, reverse sampling rates and shot regions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "boundaries", rename_all = "kebab-case")]
pub enum BinningMode {
    EqualWidth,
    ExplicitBoundaries(Vec<f64>),
}

/// `C` half-open intervals `[b_i, b_{i+1})` with their training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    boundaries: Vec<f64>,
    centers: Vec<f64>,
    frequencies: Vec<usize>,
    sampling_rates: Vec<f64>,
}

impl IntervalPartition {
    /// Partition with fixed boundaries and frequencies counted from `labels`.
    pub fn from_boundaries(boundaries: Vec<f64>, labels: &[f64]) -> Result<Self> {
        if boundaries.len() < 3 {
            return Err(Error::Config(format!(
                "need at least 2 intervals, got {} boundaries",
                boundaries.len()
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("interval boundaries must be finite".into()));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "boundaries must be strictly increasing ({} >= {})",
                w[0], w[1]
            )));
        }
        let centers = boundaries.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let mut partition = Self {
            frequencies: vec![0; boundaries.len() - 1],
            sampling_rates: vec![0.0; boundaries.len() - 1],
            boundaries,
            centers,
        };
        partition.recount(labels)?;
        Ok(partition)
    }

    /// Replaces frequencies (and rates) with counts over `labels`, which must lie in range.
    pub fn recount(&mut self, labels: &[f64]) -> Result<()> {
        let (lo, hi) = (self.boundaries[0], *self.boundaries.last().unwrap());
        let mut freq = vec![0; self.len()];
        for &y in labels {
            if !(lo..hi).contains(&y) {
                return Err(Error::Config(format!(
                    "label {y} lies outside the partition range [{lo}, {hi})"
                )));
            }
            freq[self.assign(y)] += 1;
        }
        self.set_frequencies(freq);
        Ok(())
    }

    fn set_frequencies(&mut self, frequencies: Vec<usize>) {
        self.sampling_rates = reverse_sampling_rates(&frequencies).unwrap_or_else(|_| vec![0.0; frequencies.len()]);
        self.frequencies = frequencies;
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn frequencies(&self) -> &[usize] {
        &self.frequencies
    }

    pub fn sampling_rates(&self) -> &[f64] {
        &self.sampling_rates
    }

    pub fn range(&self) -> (f64, f64) {
        (self.boundaries[0], *self.boundaries.last().unwrap())
    }

    /// Interval index with `b_i <= y < b_{i+1}`; out-of-range values clamp to the
    /// nearest-center interval.
    pub fn assign(&self, y: f64) -> usize {
        let (lo, hi) = self.range();
        if (lo..hi).contains(&y) {
            return self.boundaries.partition_point(|&b| b <= y) - 1;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &a) in self.centers.iter().enumerate() {
            let d = (y - a).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Equal-width partition with the same outer range and `intervals` bins.
    pub fn rebinned(&self, intervals: usize, labels: &[f64]) -> Result<Self> {
        let (lo, hi) = self.range();
        Self::from_boundaries(linspace(lo, hi, intervals), labels)
    }
}

fn linspace(lo: f64, hi: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals)
        .map(|i| {
            if i == intervals {
                hi
            } else {
                lo + (hi - lo) * i as f64 / intervals as f64
            }
        })
        .collect()
}

pub fn build_partition(labels: &[f64], intervals: usize, mode: &BinningMode) -> Result<IntervalPartition> {
    if labels.is_empty() {
        return Err(Error::Empty("labels for partition"));
    }
    if let Some(y) = labels.iter().find(|y| !y.is_finite()) {
        return Err(Error::Config(format!("non-finite label {y}")));
    }
    if intervals < 2 {
        return Err(Error::Config(format!("need at least 2 intervals, got {intervals}")));
    }
    match mode {
        BinningMode::EqualWidth => {
            let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                return Err(Error::DegenerateRange(lo));
            }
            // nudge the top edge so the maximum label is inside the last half-open bin
            let mut b = linspace(lo, hi, intervals);
            *b.last_mut().unwrap() = hi.next_up();
            IntervalPartition::from_boundaries(b, labels)
        }
        BinningMode::ExplicitBoundaries(b) => {
            if b.len() != intervals + 1 {
                return Err(Error::Config(format!(
                    "{} explicit boundaries do not describe {intervals} intervals",
                    b.len()
                )));
            }
            IntervalPartition::from_boundaries(b.clone(), labels)
        }
    }
}

/// Reverse sampling: the i-th most frequent interval receives the i-th smallest
/// frequency, normalized by the largest frequency. Equal frequencies are ranked
/// by index so that the lower index receives the larger reversed value.
pub fn reverse_sampling_rates(frequencies: &[usize]) -> Result<Vec<f64>> {
    let max = frequencies.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::Empty("all interval frequencies are zero"));
    }
    let mut by_desc: Vec<usize> = (0..frequencies.len()).collect();
    by_desc.sort_by(|&a, &b| frequencies[b].cmp(&frequencies[a]).then(b.cmp(&a)));
    let mut ascending = frequencies.to_vec();
    ascending.sort_unstable();
    let mut rates = vec![0.0; frequencies.len()];
    for (rank, &idx) in by_desc.iter().enumerate() {
        rates[idx] = ascending[rank] as f64 / max as f64;
    }
    Ok(rates)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotRegion {
    Many,
    Medium,
    Few,
}

impl ShotRegion {
    pub const ALL: [ShotRegion; 3] = [ShotRegion::Many, ShotRegion::Medium, ShotRegion::Few];

    pub fn as_str(self) -> &'static str {
        match self {
            ShotRegion::Many => "many",
            ShotRegion::Medium => "medium",
            ShotRegion::Few => "few",
        }
    }
}

impl fmt::Display for ShotRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotThresholds {
    pub many: usize,
    pub few: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self { many: 100, few: 20 }
    }
}

impl ShotThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.few < 1 || self.many <= self.few {
            return Err(Error::Config(format!(
                "shot thresholds need many > few >= 1, got ({}, {})",
                self.many, self.few
            )));
        }
        Ok(())
    }

    pub fn region(&self, frequency: usize) -> ShotRegion {
        if frequency >= self.many {
            ShotRegion::Many
        } else if frequency < self.few {
            ShotRegion::Few
        } else {
            ShotRegion::Medium
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRegionMap {
    pub regions: Vec<ShotRegion>,
    pub thresholds: ShotThresholds,
}

pub fn shot_regions(frequencies: &[usize], thresholds: ShotThresholds) -> Result<ShotRegionMap> {
    thresholds.validate()?;
    Ok(ShotRegionMap {
        regions: frequencies.iter().map(|&f| thresholds.region(f)).collect(),
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Explicit pairing: sort descending (ties: higher index first), pair with ascending.
    fn rank_pairing_oracle(mu: &[usize]) -> Vec<f64> {
        let n = mu.len();
        let mut desc: Vec<(usize, usize)> = mu.iter().copied().zip(0..n).collect();
        desc.sort_by(|a, b| b.cmp(a));
        let mut asc = mu.to_vec();
        asc.sort();
        let max = *asc.last().unwrap() as f64;
        let mut out = vec![0.0; n];
        for (k, (_, i)) in desc.into_iter().enumerate() {
            out[i] = asc[k] as f64 / max;
        }
        out
    }

    #[test]
    fn equal_width_nudges_top_boundary() {
        let p = build_partition(&[0.0, 1.0, 2.0, 3.0], 2, &BinningMode::EqualWidth).unwrap();
        assert_eq!(p.boundaries(), &[0.0, 1.5, 3.0f64.next_up()]);
        assert_eq!(p.frequencies(), &[2, 2]);
    }

    #[test]
    fn constant_labels_are_degenerate() {
        assert!(matches!(
            build_partition(&[5.0; 4], 3, &BinningMode::EqualWidth),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn one_label_per_bin() {
        let labels: Vec<f64> = (0..10).map(f64::from).collect();
        let p = build_partition(&labels, 10, &BinningMode::EqualWidth).unwrap();
        assert_eq!(p.frequencies(), &[1; 10]);
    }

    #[test]
    fn explicit_boundaries_must_cover_labels() {
        let mode = BinningMode::ExplicitBoundaries(vec![0.0, 1.0, 2.0]);
        assert!(build_partition(&[0.5, 1.5], 2, &mode).is_ok());
        assert!(build_partition(&[0.5, 2.5], 2, &mode).is_err());
        assert!(build_partition(&[0.5], 3, &mode).is_err());
    }

    #[test]
    fn reverse_rates_examples() {
        assert_eq!(reverse_sampling_rates(&[10, 5, 1]).unwrap(), vec![0.1, 0.5, 1.0]);
        assert_eq!(reverse_sampling_rates(&[7, 7, 7]).unwrap(), vec![1.0; 3]);
        assert_eq!(reverse_sampling_rates(&[0, 4, 2]).unwrap(), vec![1.0, 0.0, 0.5]);
        assert_eq!(rank_pairing_oracle(&[0, 4, 2]), vec![1.0, 0.0, 0.5]);
        assert!(reverse_sampling_rates(&[0, 0]).is_err());
    }

    #[test]
    fn tie_break_favors_lower_index() {
        assert_eq!(reverse_sampling_rates(&[5, 5, 1]).unwrap(), vec![1.0, 0.2, 1.0]);
    }

    #[test]
    fn assign_boundary_clamp_and_center() {
        let p = IntervalPartition::from_boundaries(vec![0.0, 1.0, 2.0, 3.0], &[0.5]).unwrap();
        assert_eq!(p.assign(1.0), 1);
        assert_eq!(p.assign(-4.0), 0);
        assert_eq!(p.assign(99.0), 2);
        assert_eq!(p.assign(p.centers()[2]), 2);
    }

    #[test]
    fn shot_region_examples() {
        let t = ShotThresholds { many: 100, few: 20 };
        let map = shot_regions(&[150, 50, 5], t).unwrap();
        assert_eq!(map.regions, vec![ShotRegion::Many, ShotRegion::Medium, ShotRegion::Few]);
        assert!(shot_regions(&[200, 300], t).unwrap().regions.iter().all(|r| *r == ShotRegion::Many));
        assert!(shot_regions(&[0, 0], t).unwrap().regions.iter().all(|r| *r == ShotRegion::Few));
        assert!(shot_regions(&[1], ShotThresholds { many: 20, few: 20 }).is_err());
        assert!(shot_regions(&[1], ShotThresholds { many: 20, few: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn rates_match_pairing_oracle(mu in prop::collection::vec(0usize..50, 1..30)) {
            prop_assume!(mu.iter().any(|&m| m > 0));
            let rates = reverse_sampling_rates(&mu).unwrap();
            prop_assert_eq!(&rates, &rank_pairing_oracle(&mu));
            prop_assert!(rates.iter().any(|&r| r == 1.0));
            for i in 0..mu.len() {
                for j in 0..mu.len() {
                    if mu[i] > mu[j] {
                        prop_assert!(rates[i] <= rates[j]);
                    }
                }
            }
        }

        #[test]
        fn distinct_frequencies_permute_with_rates(
            mu in prop::collection::btree_set(1usize..1000, 2..20),
            seed in any::<u64>(),
        ) {
            let mu: Vec<usize> = mu.into_iter().collect();
            let rates = reverse_sampling_rates(&mu).unwrap();
            let mut perm: Vec<usize> = (0..mu.len()).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: Vec<usize> = perm.iter().map(|&i| mu[i]).collect();
            let permuted_rates = reverse_sampling_rates(&permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(permuted_rates[k], rates[i]);
            }
        }

        #[test]
        fn partition_is_total_and_centers_self_assign(
            labels in prop::collection::vec(-100.0f64..100.0, 2..200),
            c in 2usize..40,
        ) {
            prop_assume!(labels.iter().any(|&y| y != labels[0]));
            let p = build_partition(&labels, c, &BinningMode::EqualWidth).unwrap();
            prop_assert_eq!(p.frequencies().iter().sum::<usize>(), labels.len());
            for (i, &a) in p.centers().iter().enumerate() {
                prop_assert_eq!(p.assign(a), i);
            }
        }
    }
}
