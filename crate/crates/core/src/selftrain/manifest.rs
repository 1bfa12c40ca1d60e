use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::{reverse_sampling_rates, ShotRegion};
use crate::confidence::VARIANCE_FLOOR;
use crate::error::{Error, Result};
use crate::metrics::{fmt_opt, BoundTrend, RegionReport, DISTANCE_EPS, GM_EPS};
use crate::selftrain::config::RunConfig;
use crate::selftrain::run::{IterationRecord, Partitions, RunOutput};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub pseudo_boundaries: Vec<f64>,
    pub pseudo_frequencies: Vec<usize>,
    pub pseudo_rates: Vec<f64>,
    pub mixup_boundaries: Vec<f64>,
    pub mixup_frequencies: Vec<usize>,
    pub shot_regions: Vec<ShotRegion>,
}

impl PartitionSummary {
    pub fn new(p: &Partitions) -> Result<Self> {
        Ok(Self {
            pseudo_boundaries: p.pseudo.boundaries().to_vec(),
            pseudo_frequencies: p.pseudo.frequencies().to_vec(),
            pseudo_rates: reverse_sampling_rates(p.pseudo.frequencies())?,
            mixup_boundaries: p.mixup.boundaries().to_vec(),
            mixup_frequencies: p.mixup.frequencies().to_vec(),
            shot_regions: p.shots.regions.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsValues {
    pub gm: f64,
    pub distance: f64,
    pub variance: f64,
}

impl Default for EpsValues {
    fn default() -> Self {
        Self {
            gm: GM_EPS,
            distance: DISTANCE_EPS,
            variance: VARIANCE_FLOOR,
        }
    }
}

/// Choices the method description leaves open, echoed into every manifest.
pub fn deviation_ledger() -> Vec<String> {
    [
        "batch weights are softmax(sum_b |y_i - y_b| / t) over the batch; environment terms are weight-summed, other terms are batch means",
        "the first round trains on the labeled set only; history row 0 is the untrained model",
        "pseudo-label interval quotas are ceil(p_i * n_i), most confident first, ties by graph id",
        "mixup allocation uses reverse-sampling rates of labeled plus pseudo-labeled counts restricted to non-empty anchors",
        "mixup budgets are apportioned by largest remainder and capped by the pool size",
        "the mixup partition is equal-width over the pseudo-label partition's range",
        "augmented latents are constants: no gradient reaches the encoder through them",
        "the no-sampling ablation sets p_i = 1 for both pseudo-labels and mixup allocation",
        "shot regions and region metrics use the pseudo-label partition and labeled-set frequencies",
        "margin proxy terms use labeled-set interval counts for n",
        "zero variances are floored at 1e-12 before taking reciprocals",
        "the recorded threshold is absent when confidence filtering is off",
        "a checkpoint may resume under a larger iteration count; all other settings must match",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    /// Split name to SHA-256 of its data file.
    pub dataset_hashes: BTreeMap<String, String>,
    pub partitions: PartitionSummary,
    pub deviations: Vec<String>,
    pub eps: EpsValues,
    pub metric_table: Vec<IterationRecord>,
    pub final_test: Option<RegionReport>,
    pub bound_trend: Option<BoundTrend>,
}

impl RunManifest {
    pub fn new(
        config: &RunConfig,
        output: &RunOutput,
        dataset_hashes: BTreeMap<String, String>,
        threads: usize,
    ) -> Result<Self> {
        Ok(Self {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            threads,
            dataset_hashes,
            partitions: PartitionSummary::new(&output.partitions)?,
            deviations: deviation_ledger(),
            eps: EpsValues::default(),
            metric_table: output.history.clone(),
            final_test: output.final_test.clone(),
            bound_trend: output.bound_trend.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and checks that the stored hash matches the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.config.hash() != m.config_hash {
            return Err(Error::Config(format!(
                "{}: config hash {} does not match its config ({})",
                path.display(),
                m.config_hash,
                m.config.hash()
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub final_test: Option<RegionReport>,
    /// Final MAE minus the first run's, per region (all, many, medium, few).
    pub mae_delta: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn maes(r: Option<&RegionReport>) -> [Option<f64>; 4] {
    match r {
        Some(r) => [r.all.mae, r.many.mae, r.medium.mae, r.few.mae],
        None => [None; 4],
    }
}

/// Side-by-side final metrics. Runs must share shot thresholds and partition.
pub fn compare_manifests(runs: &[(String, RunManifest)]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Config(format!("compare needs at least 2 manifests, got {}", runs.len())));
    }
    let (first_name, first) = &runs[0];
    for (name, m) in &runs[1..] {
        if m.config.shots != first.config.shots {
            return Err(Error::Incomparable(format!(
                "{name} uses shot thresholds {:?}, {first_name} uses {:?}",
                m.config.shots, first.config.shots
            )));
        }
        if m.partitions.pseudo_boundaries != first.partitions.pseudo_boundaries
            || m.partitions.shot_regions != first.partitions.shot_regions
        {
            return Err(Error::Incomparable(format!(
                "{name} and {first_name} define label regions differently"
            )));
        }
    }
    let base = maes(first.final_test.as_ref());
    let rows = runs
        .iter()
        .map(|(name, m)| {
            let cur = maes(m.final_test.as_ref());
            let mut delta = [None; 4];
            for k in 0..4 {
                delta[k] = cur[k].zip(base[k]).map(|(a, b)| a - b);
            }
            ComparisonRow {
                name: name.clone(),
                final_test: m.final_test.clone(),
                mae_delta: delta,
            }
        })
        .collect();
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "run", "all MAE", "many MAE", "med MAE", "few MAE", "all GM", "few GM", "d all", "d many", "d few"
        );
        for r in &self.rows {
            let t = r.final_test.as_ref();
            let m = maes(t);
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.name,
                fmt_opt(m[0]),
                fmt_opt(m[1]),
                fmt_opt(m[2]),
                fmt_opt(m[3]),
                fmt_opt(t.and_then(|t| t.all.gm)),
                fmt_opt(t.and_then(|t| t.few.gm)),
                fmt_opt(r.mae_delta[0]),
                fmt_opt(r.mae_delta[1]),
                fmt_opt(r.mae_delta[3]),
            );
        }
        out
    }
}
