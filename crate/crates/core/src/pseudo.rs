//! Confident, reverse-sampled pseudo-labels drawn from the unlabeled pool.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::{IntervalPartition, ShotRegion, ShotRegionMap};
use crate::confidence::{ConfidenceScore, Scorer, Threshold};
use crate::error::{Error, Result};
use crate::graph::{Graph, HiddenTruth};
use crate::model::GreaModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub graph_id: String,
    pub pseudo_label: f64,
    pub sigma: f64,
    pub interval_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    pub entries: Vec<PseudoEntry>,
    pub iteration: usize,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Graphs from `pool` carrying their pseudo-labels, in entry order.
    pub fn materialize(&self, pool: &[Graph]) -> Result<Vec<Graph>> {
        let index: BTreeMap<&str, &Graph> = pool.iter().map(|g| (g.id.as_str(), g)).collect();
        self.entries
            .iter()
            .map(|e| {
                let g = index.get(e.graph_id.as_str()).ok_or_else(|| Error::Validation {
                    id: e.graph_id.clone(),
                    message: "pseudo-labeled graph missing from the unlabeled pool".into(),
                })?;
                let mut g = (*g).clone();
                g.label = Some(e.pseudo_label);
                Ok(g)
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("graph_id,pseudo_label,sigma,interval_index\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.graph_id, e.pseudo_label, e.sigma, e.interval_index));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Keep `sigma >= tau`, bucket by interval, then take the `ceil(p_i * n_i)` most
/// confident per interval (ties broken by graph id).
pub fn select_confident(
    scores: &[ConfidenceScore],
    partition: &IntervalPartition,
    rates: &[f64],
    threshold: &Threshold,
    iteration: usize,
) -> Result<PseudoLabeledSet> {
    if rates.len() != partition.len() {
        return Err(Error::Shape(format!(
            "{} sampling rates for {} intervals",
            rates.len(),
            partition.len()
        )));
    }
    let mut buckets: Vec<Vec<&ConfidenceScore>> = vec![Vec::new(); partition.len()];
    for s in scores.iter().filter(|s| threshold.accepts(s.sigma)) {
        buckets[partition.assign(s.predicted_label)].push(s);
    }
    let mut entries = Vec::new();
    for (i, mut bucket) in buckets.into_iter().enumerate() {
        let keep = selection_quota(rates[i], bucket.len());
        bucket.sort_by(|a, b| b.sigma.total_cmp(&a.sigma).then_with(|| a.graph_id.cmp(&b.graph_id)));
        entries.extend(bucket.into_iter().take(keep).map(|s| PseudoEntry {
            graph_id: s.graph_id.clone(),
            pseudo_label: s.predicted_label,
            sigma: s.sigma,
            interval_index: i,
        }));
    }
    if entries.is_empty() && !scores.is_empty() {
        log::warn!("iteration {iteration}: no unlabeled graph passed confidence selection");
    }
    Ok(PseudoLabeledSet { entries, iteration })
}

/// `ceil(rate * available)`, with float noise below one part in 1e9 ignored.
pub fn selection_quota(rate: f64, available: usize) -> usize {
    let x = rate * available as f64;
    let q = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (q.max(0.0) as usize).min(available)
}

/// Score the unlabeled pool and select G_conf. Returns the set and every score.
pub fn build_gconf(
    unlabeled: &[Graph],
    model: &GreaModel,
    scorer: &Scorer<'_>,
    partition: &IntervalPartition,
    rates: &[f64],
    threshold: &Threshold,
    iteration: usize,
) -> Result<(PseudoLabeledSet, Vec<ConfidenceScore>)> {
    if unlabeled.is_empty() {
        return Ok((
            PseudoLabeledSet {
                entries: Vec::new(),
                iteration,
            },
            Vec::new(),
        ));
    }
    let refs: Vec<&Graph> = unlabeled.iter().collect();
    let scores = scorer.score_all(&refs, model)?;
    let set = select_confident(&scores, partition, rates, threshold, iteration)?;
    Ok((set, scores))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoQuality {
    /// `None` for an empty set.
    pub mae: Option<f64>,
    pub count: usize,
    /// Counts per region of the pseudo-label's interval.
    pub region_counts: BTreeMap<ShotRegion, usize>,
}

/// Pseudo-label accuracy against held-back truths. Never feeds back into training.
pub fn pseudo_label_quality(
    set: &PseudoLabeledSet,
    truth: Option<&HiddenTruth>,
    shot_map: &ShotRegionMap,
) -> Result<PseudoQuality> {
    let truth = truth.ok_or_else(|| Error::Unsupported("dataset has no hidden truths for pseudo-label quality".into()))?;
    let mut region_counts: BTreeMap<ShotRegion, usize> = ShotRegion::ALL.iter().map(|&r| (r, 0)).collect();
    let mut abs_sum = 0.0;
    for e in &set.entries {
        let y = truth.get(&e.graph_id).ok_or_else(|| {
            Error::Unsupported(format!("no hidden truth for pseudo-labeled graph {}", e.graph_id))
        })?;
        abs_sum += (e.pseudo_label - y).abs();
        let region = shot_map.regions.get(e.interval_index).copied().ok_or_else(|| {
            Error::Shape(format!("interval {} outside the shot map", e.interval_index))
        })?;
        *region_counts.entry(region).or_default() += 1;
    }
    Ok(PseudoQuality {
        mae: (!set.is_empty()).then(|| abs_sum / set.len() as f64),
        count: set.len(),
        region_counts,
    })
}

/// Per-graph confidence dump with the selection outcome.
pub fn write_confidence_csv(path: &Path, scores: &[ConfidenceScore], set: &PseudoLabeledSet) -> Result<()> {
    let selected: std::collections::HashSet<&str> = set.entries.iter().map(|e| e.graph_id.as_str()).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "graph_id,predicted_label,sigma,selected").map_err(io)?;
    for s in scores {
        writeln!(
            w,
            "{},{},{},{}",
            s.graph_id,
            s.predicted_label,
            s.sigma,
            selected.contains(s.graph_id.as_str())
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{build_partition, shot_regions, BinningMode, ShotThresholds};
    use crate::confidence::ConfidenceMethod;

    fn score(id: &str, y: f64, sigma: f64) -> ConfidenceScore {
        ConfidenceScore {
            graph_id: id.into(),
            predicted_label: y,
            sigma,
            method: ConfidenceMethod::GRation,
        }
    }

    fn partition() -> IntervalPartition {
        IntervalPartition::from_boundaries(vec![0.0, 1.0, 2.0], &[0.5, 0.5, 1.5]).unwrap()
    }

    #[test]
    fn half_rate_of_five_keeps_top_three() {
        let scores: Vec<_> = (0..5).map(|i| score(&format!("u{i}"), 0.5, i as f64)).collect();
        let set = select_confident(&scores, &partition(), &[0.5, 1.0], &Threshold::open(), 1).unwrap();
        let ids: Vec<_> = set.entries.iter().map(|e| e.graph_id.as_str()).collect();
        assert_eq!(ids, ["u4", "u3", "u2"]);
    }

    #[test]
    fn zero_and_full_rates() {
        let scores = vec![score("a", 0.2, 1.0), score("b", 0.7, 2.0), score("c", 1.5, 3.0)];
        let set = select_confident(&scores, &partition(), &[0.0, 1.0], &Threshold::open(), 1).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].graph_id, "c");
        assert_eq!(set.entries[0].interval_index, 1);
    }

    #[test]
    fn threshold_filters_and_ties_break_by_id() {
        let scores = vec![score("b", 0.5, 2.0), score("a", 0.5, 2.0), score("z", 0.5, 0.5)];
        let t = Threshold { tau: 1.0, tau_pct: 50.0 };
        let set = select_confident(&scores, &partition(), &[0.5, 1.0], &t, 2).unwrap();
        assert_eq!(set.entries.len(), 1);
        assert_eq!(set.entries[0].graph_id, "a");
        assert!(set.entries.iter().all(|e| e.sigma >= t.tau));
    }

    #[test]
    fn quota_is_a_ceiling() {
        assert_eq!(selection_quota(0.5, 5), 3);
        assert_eq!(selection_quota(0.2, 5), 1);
        assert_eq!(selection_quota(0.0, 5), 0);
        assert_eq!(selection_quota(1.0, 5), 5);
        assert_eq!(selection_quota(0.01, 1), 1);
    }

    #[test]
    fn quality_report_bookkeeping() {
        let p = build_partition(&[0.0, 1.0, 2.0, 3.0], 2, &BinningMode::EqualWidth).unwrap();
        let map = shot_regions(p.frequencies(), ShotThresholds { many: 2, few: 1 }).unwrap();
        let empty = PseudoLabeledSet::default();
        let truth: HiddenTruth = [("u1".to_string(), 1.0), ("u2".to_string(), 3.0)].into();
        let q = pseudo_label_quality(&empty, Some(&truth), &map).unwrap();
        assert_eq!((q.mae, q.count), (None, 0));
        assert!(pseudo_label_quality(&empty, None, &map).is_err());

        let set = PseudoLabeledSet {
            entries: vec![
                PseudoEntry { graph_id: "u1".into(), pseudo_label: 1.0, sigma: 1.0, interval_index: 0 },
                PseudoEntry { graph_id: "u2".into(), pseudo_label: 2.0, sigma: 1.0, interval_index: 1 },
            ],
            iteration: 1,
        };
        let q = pseudo_label_quality(&set, Some(&truth), &map).unwrap();
        assert_eq!(q.mae, Some(0.5));
        assert_eq!(q.region_counts.values().sum::<usize>(), 2);
    }
}
