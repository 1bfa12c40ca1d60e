use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{fmt_opt, RegionReport};
use crate::mixup::write_haug_csv;
use crate::pseudo::write_confidence_csv;
use crate::selftrain::manifest::RunManifest;
use crate::selftrain::run::{IterationRecord, RoundSets, RunCheckpoint, RunOutput};

/// Output directory layout of a training run.
#[derive(Clone, Debug)]
pub struct ArtifactSink {
    pub root: PathBuf,
}

impl ArtifactSink {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.clone(), root.join("checkpoints"), root.join("dumps")] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn checkpoint_path(&self, completed: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("iter_{completed}.json"))
    }

    pub fn dump_path(&self, round: usize, kind: &str) -> PathBuf {
        self.root.join("dumps").join(format!("round_{round}_{kind}.csv"))
    }

    pub fn write_round_dumps(&self, round: usize, sets: &RoundSets) -> Result<()> {
        if round == 0 {
            return Ok(());
        }
        write_confidence_csv(&self.dump_path(round, "confidence"), &sets.scores, &sets.gconf)?;
        sets.gconf.write_csv(&self.dump_path(round, "gconf"))?;
        write_haug_csv(&self.dump_path(round, "haug"), &sets.haug)
    }

    pub fn write_checkpoint(&self, ck: &RunCheckpoint) -> Result<()> {
        ck.save(&self.checkpoint_path(ck.completed))
    }

    /// Highest-numbered checkpoint in the directory, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.root.join("checkpoints");
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => return Ok(None),
        };
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let k = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.strip_prefix("iter_"))
                .and_then(|s| s.parse::<usize>().ok());
            if let Some(k) = k {
                if best.as_ref().is_none_or(|b| k > b.0) {
                    best = Some((k, path));
                }
            }
        }
        Ok(best.map(|b| b.1))
    }

    pub fn write_reports(&self, output: &RunOutput, manifest: &RunManifest) -> Result<()> {
        manifest.save(&self.manifest_path())?;
        let report = serde_json::json!({
            "final_test": output.final_test,
            "history": output.history,
            "margin": output.margin,
            "bound_trend": output.bound_trend,
        });
        write(&self.root.join("report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        write(&self.root.join("report.txt"), &report_text(output))?;
        write(&self.root.join("curves.csv"), &curves_csv(&output.history))?;
        if let Some(m) = &output.margin {
            write(&self.root.join("margin.csv"), &m.to_csv())?;
        }
        Ok(())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn report_text(output: &RunOutput) -> String {
    let mut out = String::new();
    match &output.final_test {
        Some(r) => {
            out.push_str("final test report\n");
            out.push_str(&r.to_text());
        }
        None => out.push_str("no test split\n"),
    }
    if let Some(t) = &output.bound_trend {
        let _ = writeln!(out, "\n{}", t.summary());
    }
    out.push_str("\nper-round test MAE\n");
    out.push_str(&curves_table(&output.history));
    out
}

fn region_maes(r: Option<&RegionReport>) -> [Option<f64>; 4] {
    match r {
        Some(r) => [r.all.mae, r.many.mae, r.medium.mae, r.few.mae],
        None => [None; 4],
    }
}

/// Round vs test MAE per region.
pub fn curves_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from("completed,stage,all,many,medium,few,gconf,haug\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for h in history {
        let m = region_maes(h.test.as_ref());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            h.completed,
            h.stage,
            opt(m[0]),
            opt(m[1]),
            opt(m[2]),
            opt(m[3]),
            h.gconf_size,
            h.haug_size
        );
    }
    out
}

fn curves_table(history: &[IterationRecord]) -> String {
    let mut out = format!(
        "{:>5} {:<14} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6}\n",
        "round", "stage", "all", "many", "medium", "few", "gconf", "haug"
    );
    for h in history {
        let m = region_maes(h.test.as_ref());
        let _ = writeln!(
            out,
            "{:>5} {:<14} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6}",
            h.completed,
            h.stage,
            fmt_opt(m[0]),
            fmt_opt(m[1]),
            fmt_opt(m[2]),
            fmt_opt(m[3]),
            h.gconf_size,
            h.haug_size
        );
    }
    out
}
