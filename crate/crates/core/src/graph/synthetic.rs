//! Synthetic graph regression benchmark with a controllable label imbalance.
//!
//! Graphs are random: a node count, a per-graph node-type mixture and an edge
//! density are drawn, then a label is computed exactly from the structure.
//! Rejection sampling fills a per-interval quota for each split so the
//! realized label histogram matches the requested profile exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{dataset_hash, save_dataset, save_hidden_truth, DataDir};
use super::{Dataset, Graph, HiddenTruth, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyProfile {
    /// `round(base * decay^i)` graphs in interval `i`.
    Exponential { base: f64, decay: f64 },
    Uniform { count: usize },
    Explicit { counts: Vec<usize> },
}

impl FrequencyProfile {
    pub fn counts(&self, intervals: usize) -> Result<Vec<usize>> {
        match self {
            FrequencyProfile::Exponential { base, decay } => {
                if !(*base >= 0.0 && base.is_finite()) || !(*decay > 0.0 && decay.is_finite()) {
                    return Err(Error::Config(format!(
                        "exponential profile needs base >= 0 and decay > 0, got {base}, {decay}"
                    )));
                }
                Ok((0..intervals)
                    .map(|i| (base * decay.powi(i as i32)).round() as usize)
                    .collect())
            }
            FrequencyProfile::Uniform { count } => Ok(vec![*count; intervals]),
            FrequencyProfile::Explicit { counts } => {
                if counts.len() != intervals {
                    return Err(Error::Config(format!(
                        "explicit profile has {} counts for {intervals} intervals",
                        counts.len()
                    )));
                }
                Ok(counts.clone())
            }
        }
    }
}

/// `label = triangle_weight * triangles + mean_degree_weight * mean_degree
///          + edge_weight * edges + sum_v type_weights[type(v)] + noise * N(0,1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSpec {
    pub triangle_weight: f64,
    pub mean_degree_weight: f64,
    pub edge_weight: f64,
    pub type_weights: Vec<f64>,
    pub noise: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            triangle_weight: 0.25,
            mean_degree_weight: 0.5,
            edge_weight: 0.0,
            type_weights: vec![0.0, 0.25, 0.5, 1.0],
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of one-hot node types.
    pub feature_dim: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: [f64; 2],
    /// Half-open label range `[lo, hi)` split into `intervals` equal-width bins.
    pub label_range: [f64; 2],
    pub intervals: usize,
    pub target: TargetSpec,
    pub train: FrequencyProfile,
    pub valid: FrequencyProfile,
    pub test: FrequencyProfile,
    pub unlabeled: FrequencyProfile,
    pub max_attempts: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            feature_dim: 4,
            min_nodes: 4,
            max_nodes: 20,
            edge_prob: [0.1, 0.4],
            label_range: [0.0, 16.0],
            intervals: 20,
            target: TargetSpec::default(),
            train: FrequencyProfile::Exponential {
                base: 100.0,
                decay: 0.8,
            },
            valid: FrequencyProfile::Uniform { count: 10 },
            test: FrequencyProfile::Uniform { count: 10 },
            unlabeled: FrequencyProfile::Uniform { count: 250 },
            max_attempts: 5_000_000,
        }
    }
}

impl SyntheticSpec {
    pub fn boundaries(&self) -> Vec<f64> {
        let [lo, hi] = self.label_range;
        let c = self.intervals;
        (0..=c)
            .map(|i| if i == c { hi } else { lo + (hi - lo) * i as f64 / c as f64 })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.feature_dim == 0 {
            problems.push("feature_dim must be positive".to_string());
        }
        if self.target.type_weights.len() != self.feature_dim {
            problems.push(format!(
                "target.type_weights has {} entries, feature_dim is {}",
                self.target.type_weights.len(),
                self.feature_dim
            ));
        }
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            problems.push(format!(
                "node range [{}, {}] is empty",
                self.min_nodes, self.max_nodes
            ));
        }
        let [p_lo, p_hi] = self.edge_prob;
        if !(0.0..=1.0).contains(&p_lo) || !(0.0..=1.0).contains(&p_hi) || p_lo > p_hi {
            problems.push(format!("edge_prob [{p_lo}, {p_hi}] is not a valid range"));
        }
        let [lo, hi] = self.label_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            problems.push(format!("label_range [{lo}, {hi}) is empty"));
        }
        if self.intervals < 2 {
            problems.push("intervals must be at least 2".into());
        }
        if !(self.target.noise >= 0.0 && self.target.noise.is_finite()) {
            problems.push("target.noise must be finite and non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

pub fn triangle_count(g: &Graph) -> usize {
    let n = g.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in g.edges() {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    let mut count = 0;
    for &(a, b) in g.edges() {
        // a < b; count each triangle once via its largest vertex c > b
        count += (b + 1..n).filter(|&c| adj[a][c] && adj[b][c]).count();
    }
    count
}

/// Noise-free label of `g` under `target`. Node types are the argmax of the one-hot features.
pub fn target_label(g: &Graph, target: &TargetSpec) -> f64 {
    let n = g.num_nodes();
    let edges = g.edges().len() as f64;
    let mean_degree = 2.0 * edges / n as f64;
    let type_sum: f64 = (0..n)
        .map(|v| {
            let row = g.feature_row(v);
            let t = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0;
            target.type_weights.get(t).copied().unwrap_or(0.0)
        })
        .sum();
    target.triangle_weight * triangle_count(g) as f64
        + target.mean_degree_weight * mean_degree
        + target.edge_weight * edges
        + type_sum
}

/// Generated splits plus the hidden true labels of the unlabeled pool.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub unlabeled: Dataset,
    pub hidden_truth: HiddenTruth,
    pub boundaries: Vec<f64>,
}

fn random_graph(spec: &SyntheticSpec, id: String, rng: &mut Rng) -> Graph {
    let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
    // per-graph type mixture ~ Dirichlet(1, ..., 1)
    let raw: Vec<f64> = (0..spec.feature_dim)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let mix: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let features = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut t = spec.feature_dim - 1;
            for (i, p) in mix.iter().enumerate() {
                acc += p;
                if u < acc {
                    t = i;
                    break;
                }
            }
            let mut row = vec![0.0; spec.feature_dim];
            row[t] = 1.0;
            row
        })
        .collect();
    let [p_lo, p_hi] = spec.edge_prob;
    let p = if p_hi > p_lo { rng.random_range(p_lo..=p_hi) } else { p_lo };
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Graph::new(id, n, edges, features, None).expect("generated graphs are valid")
}

fn fill_split(
    spec: &SyntheticSpec,
    tag: SplitTag,
    quotas: &[usize],
    seed: u64,
) -> Result<Vec<Graph>> {
    let split_index = SplitTag::ALL.iter().position(|t| *t == tag).unwrap() as u64;
    let mut rng = stream(seed, "synthetic", &[split_index]);
    let noise = Normal::new(0.0, spec.target.noise.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let [lo, hi] = spec.label_range;
    let boundaries = spec.boundaries();
    let inner = &boundaries[1..spec.intervals];
    let mut remaining = quotas.to_vec();
    let mut left: usize = remaining.iter().sum();
    let mut out = Vec::with_capacity(left);
    let mut attempts = 0;
    while left > 0 {
        if attempts >= spec.max_attempts {
            let missing: Vec<String> = remaining
                .iter()
                .enumerate()
                .filter(|(_, &r)| r > 0)
                .map(|(i, r)| format!("interval {i} short by {r}"))
                .collect();
            return Err(Error::Config(format!(
                "infeasible {tag} profile after {attempts} attempts: {}",
                missing.join(", ")
            )));
        }
        attempts += 1;
        let mut g = random_graph(spec, format!("{tag}-{:05}", out.len()), &mut rng);
        let mut y = target_label(&g, &spec.target);
        if spec.target.noise > 0.0 {
            y += noise.sample(&mut rng);
        }
        if !(lo..hi).contains(&y) {
            continue;
        }
        let bin = inner.partition_point(|&b| b <= y);
        if remaining[bin] == 0 {
            continue;
        }
        remaining[bin] -= 1;
        left -= 1;
        g.label = Some(y);
        out.push(g);
    }
    Ok(out)
}

/// Deterministic in `(spec, seed)`. Each split realizes its profile's per-interval counts exactly.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let c = spec.intervals;
    let train = fill_split(spec, SplitTag::Train, &spec.train.counts(c)?, seed)?;
    let valid = fill_split(spec, SplitTag::Valid, &spec.valid.counts(c)?, seed)?;
    let test = fill_split(spec, SplitTag::Test, &spec.test.counts(c)?, seed)?;
    let unlabeled = fill_split(spec, SplitTag::Unlabeled, &spec.unlabeled.counts(c)?, seed)?;
    let hidden_truth = unlabeled
        .iter()
        .map(|g| (g.id.clone(), g.label.expect("generated graphs carry labels")))
        .collect();
    Ok(SyntheticData {
        train: Dataset::from_graphs(train, SplitTag::Train)?,
        valid: Dataset::from_graphs(valid, SplitTag::Valid)?,
        test: Dataset::from_graphs(test, SplitTag::Test)?,
        unlabeled: Dataset::from_graphs(unlabeled, SplitTag::Unlabeled)?,
        hidden_truth,
        boundaries: spec.boundaries(),
    })
}

/// Per-split entry of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub sha256: String,
}

/// `dataset.json`: how a data directory was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub boundaries: Vec<f64>,
    pub splits: BTreeMap<String, SplitSummary>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Write every split, the hidden truths and `dataset.json` into `dir`.
pub fn write_synthetic(dir: &DataDir, spec: &SyntheticSpec, seed: u64, data: &SyntheticData) -> Result<DatasetManifest> {
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let mut splits = BTreeMap::new();
    for (tag, ds) in [
        (SplitTag::Train, &data.train),
        (SplitTag::Valid, &data.valid),
        (SplitTag::Test, &data.test),
        (SplitTag::Unlabeled, &data.unlabeled),
    ] {
        let path = dir.split_path(tag);
        save_dataset(&path, ds)?;
        splits.insert(
            tag.to_string(),
            SplitSummary {
                count: ds.len(),
                sha256: dataset_hash(&path)?,
            },
        );
    }
    save_hidden_truth(&dir.truth_path(), &data.hidden_truth)?;
    let manifest = DatasetManifest {
        seed,
        spec: spec.clone(),
        boundaries: data.boundaries.clone(),
        splits,
    };
    let path = dir.manifest_path();
    let text = serde_json::to_string_pretty(&manifest).expect("dataset manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            train: FrequencyProfile::Exponential {
                base: 20.0,
                decay: 0.7,
            },
            valid: FrequencyProfile::Uniform { count: 2 },
            test: FrequencyProfile::Uniform { count: 3 },
            unlabeled: FrequencyProfile::Uniform { count: 5 },
            intervals: 8,
            ..SyntheticSpec::default()
        }
    }

    fn histogram(ds: &Dataset, spec: &SyntheticSpec) -> Vec<usize> {
        crate::binning::IntervalPartition::from_boundaries(spec.boundaries(), &ds.labels())
            .unwrap()
            .frequencies()
            .to_vec()
    }

    #[test]
    fn triangle_free_graph_has_zero_triangle_label() {
        let path = Graph::new("p", 4, [(0, 1), (1, 2), (2, 3)], vec![vec![1.0]; 4], None).unwrap();
        let target = TargetSpec {
            triangle_weight: 1.0,
            mean_degree_weight: 0.0,
            edge_weight: 0.0,
            type_weights: vec![0.0],
            noise: 0.0,
        };
        assert_eq!(target_label(&path, &target), 0.0);
        let k4 = Graph::new(
            "k4",
            4,
            [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            vec![vec![1.0]; 4],
            None,
        )
        .unwrap();
        assert_eq!(triangle_count(&k4), 4);
    }

    #[test]
    fn generation_is_deterministic_and_realizes_profile() {
        let spec = small_spec();
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.unlabeled, b.unlabeled);
        assert_eq!(histogram(&a.train, &spec), spec.train.counts(8).unwrap());
        assert_eq!(histogram(&a.test, &spec), vec![3; 8]);
        assert!(a.unlabeled.unlabeled.iter().all(|g| g.label.is_none()));
        assert_eq!(a.hidden_truth.len(), 40);
    }

    #[test]
    fn unreachable_profile_is_a_configuration_error() {
        let spec = SyntheticSpec {
            label_range: [1000.0, 2000.0],
            max_attempts: 500,
            ..small_spec()
        };
        assert!(matches!(generate_synthetic(&spec, 1), Err(Error::Config(_))));
    }
}
