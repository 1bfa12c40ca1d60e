//! Graph regression data: validated graphs, datasets, file IO and the
//! synthetic imbalanced-label generator.

mod io;
mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    dataset_hash, load_data_dir, load_dataset, load_hidden_truth, read_sidecar, save_dataset,
    save_hidden_truth, DataDir, HiddenTruth, SplitData, SplitManifest,
};
pub use synthetic::{
    generate_synthetic, target_label, triangle_count, write_synthetic, DatasetManifest, FrequencyProfile,
    SplitSummary, SyntheticData, SyntheticSpec, TargetSpec,
};

/// A graph with node features and an optional scalar property.
///
/// Edges are undirected and stored once as `(lo, hi)` in sorted order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub id: String,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    feature_dim: usize,
    features: Vec<f64>,
    pub label: Option<f64>,
}

impl Graph {
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Vec<Vec<f64>>,
        label: Option<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |message: String| Error::Validation {
            id: id.clone(),
            message,
        };
        if num_nodes == 0 {
            return Err(invalid("graph has no nodes".into()));
        }
        if features.len() != num_nodes {
            return Err(invalid(format!(
                "{} feature rows for {num_nodes} nodes",
                features.len()
            )));
        }
        let feature_dim = features[0].len();
        let mut flat = Vec::with_capacity(num_nodes * feature_dim);
        for (i, row) in features.iter().enumerate() {
            if row.len() != feature_dim {
                return Err(invalid(format!(
                    "node {i} has {} features, expected {feature_dim}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(invalid(format!("node {i} has non-finite feature {v}")));
            }
            flat.extend_from_slice(row);
        }
        let mut canonical = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(invalid(format!(
                    "edge ({a},{b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                return Err(invalid(format!("self-loop on node {a}")));
            }
            canonical.insert((a.min(b), a.max(b)));
        }
        if let Some(y) = label {
            if !y.is_finite() {
                return Err(invalid(format!("non-finite label {y}")));
            }
        }
        Ok(Self {
            id,
            num_nodes,
            edges: canonical.into_iter().collect(),
            feature_dim,
            features: flat,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `num_nodes x feature_dim` buffer.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.feature_dim..(node + 1) * self.feature_dim]
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn without_label(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    Unlabeled,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Train, SplitTag::Valid, SplitTag::Test, SplitTag::Unlabeled];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "valid" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            "unlabeled" => Ok(SplitTag::Unlabeled),
            other => Err(Error::Config(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Immutable collection of graphs for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<Graph>,
    pub unlabeled: Vec<Graph>,
    pub split_tag: SplitTag,
}

impl Dataset {
    /// Routes graphs by split: the unlabeled split drops any labels, every other
    /// split requires them. Ids must be unique.
    pub fn from_graphs(graphs: Vec<Graph>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for g in &graphs {
            if !seen.insert(g.id.as_str()) {
                return Err(Error::Validation {
                    id: g.id.clone(),
                    message: "duplicate graph id".into(),
                });
            }
        }
        if let Some(first) = graphs.first() {
            let d = first.feature_dim();
            if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
                return Err(Error::Validation {
                    id: g.id.clone(),
                    message: format!("feature dimension {} differs from {d}", g.feature_dim()),
                });
            }
        }
        match split_tag {
            SplitTag::Unlabeled => Ok(Self {
                labeled: Vec::new(),
                unlabeled: graphs.iter().map(Graph::without_label).collect(),
                split_tag,
            }),
            _ => {
                if let Some(g) = graphs.iter().find(|g| g.label.is_none()) {
                    return Err(Error::Validation {
                        id: g.id.clone(),
                        message: format!("{split_tag} graph is missing its label"),
                    });
                }
                Ok(Self {
                    labeled: graphs,
                    unlabeled: Vec::new(),
                    split_tag,
                })
            }
        }
    }

    pub fn graphs(&self) -> impl Iterator<Item = &Graph> {
        self.labeled.iter().chain(&self.unlabeled)
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<f64> {
        self.labeled.iter().filter_map(|g| g.label).collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.graphs().next().map(Graph::feature_dim)
    }
}

/// Ids present in both datasets, in the order they appear in `a`.
pub fn split_overlap_check(a: &Dataset, b: &Dataset) -> Vec<String> {
    let in_b: HashSet<&str> = b.graphs().map(|g| g.id.as_str()).collect();
    a.graphs()
        .filter(|g| in_b.contains(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(id: &str, label: Option<f64>) -> Graph {
        Graph::new(id, 2, [(0, 1)], vec![vec![1.0], vec![0.0]], label).unwrap()
    }

    #[test]
    fn out_of_range_edge_is_rejected_with_id() {
        let err = Graph::new("g7", 3, [(0, 5)], vec![vec![0.0]; 3], Some(1.0)).unwrap_err();
        match err {
            Error::Validation { id, .. } => assert_eq!(id, "g7"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = Graph::new("g", 2, [(0, 1), (1, 0)], vec![vec![0.0]; 2], None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn self_loops_and_bad_features_rejected() {
        assert!(Graph::new("a", 2, [(1, 1)], vec![vec![0.0]; 2], None).is_err());
        assert!(Graph::new("b", 2, [], vec![vec![0.0]; 1], None).is_err());
        assert!(Graph::new("c", 1, [], vec![vec![f64::NAN]], None).is_err());
        assert!(Graph::new("d", 0, [], vec![], None).is_err());
    }

    #[test]
    fn overlap_check_cases() {
        let a = Dataset::from_graphs(vec![tiny("g1", Some(1.0)), tiny("g2", Some(2.0))], SplitTag::Train).unwrap();
        let b = Dataset::from_graphs(vec![tiny("g2", None)], SplitTag::Unlabeled).unwrap();
        let c = Dataset::from_graphs(vec![tiny("g3", None)], SplitTag::Unlabeled).unwrap();
        assert_eq!(split_overlap_check(&a, &b), vec!["g2".to_string()]);
        assert!(split_overlap_check(&a, &c).is_empty());
        assert_eq!(split_overlap_check(&a, &a), vec!["g1".to_string(), "g2".to_string()]);
    }

    #[test]
    fn labeled_split_requires_labels_and_unique_ids() {
        assert!(Dataset::from_graphs(vec![tiny("g1", None)], SplitTag::Train).is_err());
        assert!(Dataset::from_graphs(vec![tiny("g1", Some(1.0)), tiny("g1", Some(2.0))], SplitTag::Test).is_err());
        let u = Dataset::from_graphs(vec![tiny("g1", Some(1.0))], SplitTag::Unlabeled).unwrap();
        assert_eq!(u.unlabeled[0].label, None);
    }
}
