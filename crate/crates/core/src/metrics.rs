//! Region-wise MAE/GM and interval margin diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::binning::{IntervalPartition, ShotRegion, ShotRegionMap};
use crate::error::{Error, Result};

/// Zero errors are clamped to this before taking logs.
pub const GM_EPS: f64 = 1e-8;
/// Floor on prediction-to-center distances in reciprocal scores.
pub const DISTANCE_EPS: f64 = 1e-9;

fn check_lengths(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            truths.len()
        )));
    }
    Ok(())
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// Geometric mean of absolute errors, each clamped below at `eps`.
///
/// Never exceeds the arithmetic mean of the clamped errors, even after rounding.
pub fn gm(preds: &[f64], truths: &[f64], eps: f64) -> Result<f64> {
    gm_with_flag(preds, truths, eps).map(|(v, _)| v)
}

/// GM plus whether any error was clamped.
pub fn gm_with_flag(preds: &[f64], truths: &[f64], eps: f64) -> Result<(f64, bool)> {
    check_lengths(preds, truths)?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("gm eps must be positive, got {eps}")));
    }
    let mut clamped = false;
    let errors: Vec<f64> = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let e = (p - t).abs();
            if e < eps {
                clamped = true;
            }
            e.max(eps)
        })
        .collect();
    let n = errors.len() as f64;
    let geometric = (errors.iter().map(|e| e.ln()).sum::<f64>() / n).exp();
    let arithmetic = errors.iter().sum::<f64>() / n;
    Ok((geometric.min(arithmetic), clamped))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub count: usize,
    /// Absent when the region has no test points.
    pub mae: Option<f64>,
    pub gm: Option<f64>,
    #[serde(default)]
    pub gm_clamped: bool,
}

impl RegionMetrics {
    fn compute(preds: &[f64], truths: &[f64]) -> Result<Self> {
        if preds.is_empty() {
            return Ok(Self::default());
        }
        let (g, clamped) = gm_with_flag(preds, truths, GM_EPS)?;
        Ok(Self {
            count: preds.len(),
            mae: Some(mae(preds, truths)?),
            gm: Some(g),
            gm_clamped: clamped,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub all: RegionMetrics,
    pub many: RegionMetrics,
    pub medium: RegionMetrics,
    pub few: RegionMetrics,
}

impl RegionReport {
    pub fn region(&self, region: ShotRegion) -> &RegionMetrics {
        match region {
            ShotRegion::Many => &self.many,
            ShotRegion::Medium => &self.medium,
            ShotRegion::Few => &self.few,
        }
    }

    /// `(name, metrics)` rows in display order.
    pub fn rows(&self) -> [(&'static str, &RegionMetrics); 4] {
        [
            ("all", &self.all),
            ("many", &self.many),
            ("medium", &self.medium),
            ("few", &self.few),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8} {:>6} {:>12} {:>12}\n", "region", "count", "MAE", "GM");
        for (name, m) in self.rows() {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>12} {:>12}{}",
                name,
                m.count,
                fmt_opt(m.mae),
                fmt_opt(m.gm),
                if m.gm_clamped { "  (gm eps clamp)" } else { "" }
            );
        }
        out
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Route each point by its true label's interval to a shot region.
pub fn region_report(
    preds: &[f64],
    truths: &[f64],
    partition: &IntervalPartition,
    shot_map: &ShotRegionMap,
) -> Result<RegionReport> {
    check_lengths(preds, truths)?;
    if shot_map.regions.len() != partition.len() {
        return Err(Error::Shape(format!(
            "shot map covers {} intervals, partition has {}",
            shot_map.regions.len(),
            partition.len()
        )));
    }
    let mut split: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    for (&p, &t) in preds.iter().zip(truths) {
        let slot = match shot_map.regions[partition.assign(t)] {
            ShotRegion::Many => 0,
            ShotRegion::Medium => 1,
            ShotRegion::Few => 2,
        };
        split[slot].0.push(p);
        split[slot].1.push(t);
    }
    let [many, medium, few] = split;
    Ok(RegionReport {
        all: RegionMetrics::compute(preds, truths)?,
        many: RegionMetrics::compute(&many.0, &many.1)?,
        medium: RegionMetrics::compute(&medium.0, &medium.1)?,
        few: RegionMetrics::compute(&few.0, &few.1)?,
    })
}

/// Reciprocal distances `S_i = 1 / max(|pred - a_i|, eps)`.
pub fn reciprocal_scores(pred: f64, centers: &[f64]) -> Vec<f64> {
    centers.iter().map(|a| 1.0 / (pred - a).abs().max(DISTANCE_EPS)).collect()
}

/// `S_true - max_{j != true} S_j`; with a single interval the max is taken as 0.
pub fn sample_margin(pred: f64, true_interval: usize, centers: &[f64]) -> f64 {
    let s_true = 1.0 / (pred - centers[true_interval]).abs().max(DISTANCE_EPS);
    let rival = centers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_interval)
        .map(|(_, a)| 1.0 / (pred - a).abs().max(DISTANCE_EPS))
        .fold(0.0, f64::max);
    s_true - rival
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub interval: usize,
    pub center: f64,
    /// Evaluation points whose true label falls here.
    pub members: usize,
    /// Training frequency of the interval.
    pub n_train: usize,
    pub margin: Option<f64>,
    pub error_rate: Option<f64>,
    /// `1 / (max(margin, eps) * sqrt(n_train))`.
    pub proxy_bound: Option<f64>,
    pub empty: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginDiagnostics {
    pub rows: Vec<MarginRow>,
}

impl MarginDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,center,members,n_train,margin,error_rate,proxy_bound,empty\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.interval,
                r.center,
                r.members,
                r.n_train,
                opt(r.margin),
                opt(r.error_rate),
                opt(r.proxy_bound),
                r.empty
            );
        }
        out
    }
}

/// Per-interval minimal margin, margin error rate and proxy bound term.
///
/// `train_frequencies` supplies the `n` in the proxy term.
pub fn margin_diagnostics(
    preds: &[f64],
    truths: &[f64],
    partition: &IntervalPartition,
    train_frequencies: &[usize],
) -> Result<MarginDiagnostics> {
    check_lengths(preds, truths)?;
    if train_frequencies.len() != partition.len() {
        return Err(Error::Shape(format!(
            "{} training frequencies for {} intervals",
            train_frequencies.len(),
            partition.len()
        )));
    }
    let centers = partition.centers();
    let mut margins: Vec<Vec<f64>> = vec![Vec::new(); partition.len()];
    for (&p, &t) in preds.iter().zip(truths) {
        let i = partition.assign(t);
        margins[i].push(sample_margin(p, i, centers));
    }
    let rows = margins
        .into_iter()
        .enumerate()
        .map(|(i, ms)| {
            let n_train = train_frequencies[i];
            if ms.is_empty() {
                return MarginRow {
                    interval: i,
                    center: centers[i],
                    members: 0,
                    n_train,
                    margin: None,
                    error_rate: None,
                    proxy_bound: None,
                    empty: true,
                };
            }
            let margin = ms.iter().copied().fold(f64::INFINITY, f64::min);
            let errors = ms.iter().filter(|&&g| g <= 0.0).count();
            let proxy = (n_train > 0).then(|| 1.0 / (margin.max(DISTANCE_EPS) * (n_train as f64).sqrt()));
            MarginRow {
                interval: i,
                center: centers[i],
                members: ms.len(),
                n_train,
                margin: Some(margin),
                error_rate: Some(errors as f64 / ms.len() as f64),
                proxy_bound: proxy,
                empty: false,
            }
        })
        .collect();
    Ok(MarginDiagnostics { rows })
}

/// Average ranks (1-based), ties share the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side has no rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTrend {
    /// Rank correlation between training count and margin error rate.
    pub spearman: Option<f64>,
    pub intervals_used: usize,
    pub distinct_counts: usize,
    /// The bound predicts fewer errors where there are more examples.
    pub expected_sign: String,
    pub matches_expectation: Option<bool>,
}

impl BoundTrend {
    pub fn summary(&self) -> String {
        match self.spearman {
            Some(r) => format!(
                "bound trend: spearman(n_train, error) = {r:.4} over {} intervals (expected negative: {})",
                self.intervals_used,
                if r < 0.0 { "yes" } else { "no" }
            ),
            None => format!(
                "bound trend: undefined, {} usable intervals with {} distinct counts",
                self.intervals_used, self.distinct_counts
            ),
        }
    }
}

/// Correlate training counts with error rates over nonempty intervals.
///
/// Needs at least 3 usable intervals and 3 distinct counts, otherwise the
/// correlation is reported as undefined.
pub fn bound_trend_check(diagnostics: &MarginDiagnostics) -> BoundTrend {
    let used: Vec<(f64, f64)> = diagnostics
        .rows
        .iter()
        .filter_map(|r| r.error_rate.map(|e| (r.n_train as f64, e)))
        .collect();
    let mut counts: Vec<f64> = used.iter().map(|p| p.0).collect();
    counts.sort_by(f64::total_cmp);
    counts.dedup();
    let defined = used.len() >= 3 && counts.len() >= 3;
    let rho = defined.then(|| {
        let (n, e): (Vec<f64>, Vec<f64>) = used.iter().copied().unzip();
        spearman(&n, &e)
    });
    BoundTrend {
        spearman: rho,
        intervals_used: used.len(),
        distinct_counts: counts.len(),
        expected_sign: "negative".into(),
        matches_expectation: rho.map(|r| r < 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{shot_regions, ShotThresholds};

    #[test]
    fn mae_and_gm_examples() {
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[4.0, 5.0], &[4.0, 5.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!((gm(&[1.0, 4.0], &[0.0, 0.0], GM_EPS).unwrap() - 2.0).abs() < 1e-12);
        assert!((gm(&[3.0, -1.0], &[0.5, 1.5], GM_EPS).unwrap() - 2.5).abs() < 1e-12);
        let (v, clamped) = gm_with_flag(&[1.0, 2.0], &[1.0, 1.0], GM_EPS).unwrap();
        assert!(v.is_finite() && clamped);
    }

    #[test]
    fn hand_built_region_table() {
        // intervals [0,1) many, [1,2) medium, [2,3) few
        let p = IntervalPartition::from_boundaries(vec![0.0, 1.0, 2.0, 3.0], &[]).unwrap();
        let map = shot_regions(&[150, 50, 5], ShotThresholds::default()).unwrap();
        let truths = [0.2, 0.8, 1.1, 1.9, 2.5, 2.9];
        let preds = [0.4, 0.8, 1.6, 1.9, 1.5, 2.0];
        let r = region_report(&preds, &truths, &p, &map).unwrap();
        assert_eq!((r.many.count, r.medium.count, r.few.count), (2, 2, 2));
        assert!((r.many.mae.unwrap() - 0.1).abs() < 1e-12);
        assert!((r.medium.mae.unwrap() - 0.25).abs() < 1e-12);
        assert!((r.few.mae.unwrap() - 0.95).abs() < 1e-12);
        assert!((r.all.mae.unwrap() - 2.6 / 6.0).abs() < 1e-12);
        assert!((r.few.gm.unwrap() - (1.0f64 * 0.9).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn absent_regions() {
        let p = IntervalPartition::from_boundaries(vec![0.0, 1.0, 2.0], &[]).unwrap();
        let map = shot_regions(&[500, 5], ShotThresholds::default()).unwrap();
        let r = region_report(&[0.1, 0.2], &[0.3, 0.4], &p, &map).unwrap();
        assert_eq!(r.few.count, 0);
        assert_eq!(r.few.mae, None);
        assert_eq!(r.medium.gm, None);
    }

    #[test]
    fn margin_hand_case() {
        let s = reciprocal_scores(1.2, &[1.0, 2.0, 3.0]);
        assert!((s[0] - 5.0).abs() < 1e-12 && (s[1] - 1.25).abs() < 1e-12 && (s[2] - 1.0 / 1.8).abs() < 1e-12);
        assert!((sample_margin(1.2, 0, &[1.0, 2.0, 3.0]) - 3.75).abs() < 1e-12);
        assert!(sample_margin(2.0, 1, &[1.0, 2.0, 3.0]) > 1e8);
        // equidistant between two wrong centers
        assert!(sample_margin(1.5, 2, &[1.0, 2.0, 3.0]) < 0.0);
    }

    #[test]
    fn margin_rows_and_empty_marking() {
        let p = IntervalPartition::from_boundaries(vec![0.0, 1.0, 2.0, 3.0], &[]).unwrap();
        let d = margin_diagnostics(&[0.5, 1.7, 0.4], &[0.5, 0.6, 1.5], &p, &[10, 4, 1]).unwrap();
        assert_eq!(d.rows[0].members, 2);
        assert_eq!(d.rows[0].error_rate, Some(0.5));
        assert_eq!(d.rows[1].error_rate, Some(1.0));
        assert!(d.rows[2].empty);
        assert!(d.rows[0].proxy_bound.unwrap() > 0.0 || d.rows[0].margin.unwrap() <= 0.0);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]), 0.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 3.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn bound_trend_requires_distinct_counts() {
        let row = |n: usize, e: f64| MarginRow {
            interval: 0,
            center: 0.0,
            members: 1,
            n_train: n,
            margin: Some(0.0),
            error_rate: Some(e),
            proxy_bound: None,
            empty: false,
        };
        let d = MarginDiagnostics { rows: vec![row(1, 0.9), row(5, 0.5), row(9, 0.1)] };
        let t = bound_trend_check(&d);
        assert_eq!(t.spearman, Some(-1.0));
        assert_eq!(t.matches_expectation, Some(true));
        let d = MarginDiagnostics { rows: vec![row(1, 0.9), row(1, 0.5)] };
        assert_eq!(bound_trend_check(&d).spearman, None);
    }
}
