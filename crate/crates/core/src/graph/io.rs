use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Graph, SplitTag};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    id: String,
    n: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    y: Option<f64>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            id: g.id.clone(),
            n: g.num_nodes(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
            x: (0..g.num_nodes()).map(|i| g.feature_row(i).to_vec()).collect(),
            y: g.label,
        }
    }
}

/// Sidecar written next to each graph file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split_tag: SplitTag,
    pub count: usize,
    pub feature_dim: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Reads a line-delimited graph file. Blank lines are skipped.
pub fn load_dataset(path: &Path, split_tag: SplitTag) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut graphs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let edges = rec.edges.iter().map(|e| (e[0], e[1]));
        graphs.push(Graph::new(rec.id, rec.n, edges, rec.x, rec.y)?);
    }
    Dataset::from_graphs(graphs, split_tag)
}

/// Writes one graph per line in canonical edge order, plus the sidecar manifest.
pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for g in dataset.graphs() {
        let line = serde_json::to_string(&GraphRecord::from(g)).expect("graph records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let manifest = SplitManifest {
        split_tag: dataset.split_tag,
        count: dataset.len(),
        feature_dim: dataset.feature_dim().unwrap_or(0),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_sidecar(path: &Path) -> Result<SplitManifest> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        message: format!("{}: {e}", side.display()),
    })
}

/// Hex SHA-256 of a file's bytes.
pub fn dataset_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// True labels of unlabeled graphs. Only evaluation code reads this.
pub type HiddenTruth = BTreeMap<String, f64>;

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    id: String,
    y: f64,
}

pub fn save_hidden_truth(path: &Path, truth: &HiddenTruth) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, &y) in truth {
        let line = serde_json::to_string(&TruthRecord { id: id.clone(), y }).expect("truth serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_hidden_truth(path: &Path) -> Result<HiddenTruth> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut truth = HiddenTruth::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TruthRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        truth.insert(rec.id, rec.y);
    }
    Ok(truth)
}

/// Standard layout of a generated or prepared data directory.
#[derive(Clone, Debug)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn split_path(&self, tag: SplitTag) -> PathBuf {
        self.root.join(format!("{tag}.jsonl"))
    }

    pub fn truth_path(&self) -> PathBuf {
        self.root.join("unlabeled.truth.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
}

/// All four splits of a data directory. A missing unlabeled file yields an empty pool.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub unlabeled: Dataset,
}

pub fn load_data_dir(dir: &DataDir) -> Result<SplitData> {
    let unlabeled_path = dir.split_path(SplitTag::Unlabeled);
    let unlabeled = if unlabeled_path.exists() {
        load_dataset(&unlabeled_path, SplitTag::Unlabeled)?
    } else {
        Dataset::from_graphs(Vec::new(), SplitTag::Unlabeled)?
    };
    Ok(SplitData {
        train: load_dataset(&dir.split_path(SplitTag::Train), SplitTag::Train)?,
        valid: load_dataset(&dir.split_path(SplitTag::Valid), SplitTag::Valid)?,
        test: load_dataset(&dir.split_path(SplitTag::Test), SplitTag::Test)?,
        unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_single_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            r#"{"id":"g1","n":2,"edges":[[0,1]],"x":[[1.0],[0.0]],"y":1.5}"#,
        );
        let ds = load_dataset(&p, SplitTag::Train).unwrap();
        assert_eq!(ds.labeled.len(), 1);
        assert_eq!(ds.labeled[0].label, Some(1.5));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            "{\"id\":\"g1\",\"n\":1,\"edges\":[],\"x\":[[0.0]],\"y\":1.0}\n{not json}\n",
        );
        match load_dataset(&p, SplitTag::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_edge_names_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            r#"{"id":"bad","n":3,"edges":[[0,5]],"x":[[0.0],[0.0],[0.0]],"y":1.0}"#,
        );
        match load_dataset(&p, SplitTag::Train) {
            Err(Error::Validation { id, .. }) => assert_eq!(id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_canonicalizes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            concat!(
                r#"{"id":"g1","n":3,"edges":[[2,1],[1,0],[0,1]],"x":[[0.5],[1.0],[0.25]],"y":2.0}"#,
                "\n",
                r#"{"id":"g2","n":1,"edges":[],"x":[[3.0]],"y":-1.0}"#,
                "\n"
            ),
        );
        let ds = load_dataset(&p, SplitTag::Train).unwrap();
        let out = dir.path().join("b.jsonl");
        save_dataset(&out, &ds).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains(r#""edges":[[0,1],[1,2]]"#), "{text}");
        assert_eq!(load_dataset(&out, SplitTag::Train).unwrap(), ds);
        let side = read_sidecar(&out).unwrap();
        assert_eq!(side.count, 2);
        assert_eq!(side.feature_dim, 1);
        // a second save of the reloaded data is byte-identical
        let out2 = dir.path().join("c.jsonl");
        save_dataset(&out2, &load_dataset(&out, SplitTag::Train).unwrap()).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
    }
}
