use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{BinningMode, ShotThresholds};
use crate::confidence::ConfidenceMethod;
use crate::error::{Error, Result};
use crate::mixup::{MixupSources, SourceSet};
use crate::model::{GreaHyper, ModelConfig};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Skip the confidence filter.
    pub no_sigma: bool,
    /// Use `p_i = 1` for every interval.
    pub no_sampling: bool,
    /// Build no augmented examples.
    pub no_mixup: bool,
    /// Ignore the unlabeled pool entirely.
    pub no_unlabeled: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = ["no-sigma", "no-sampling", "no-mixup", "no-unlabeled"];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no-sigma" => self.no_sigma = true,
            "no-sampling" => self.no_sampling = true,
            "no-mixup" => self.no_mixup = true,
            "no-unlabeled" => self.no_unlabeled = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let flags = [self.no_sigma, self.no_sampling, self.no_mixup, self.no_unlabeled];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningKind {
    #[default]
    EqualWidth,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub mode: BinningKind,
    /// `C_pseudo`: intervals for pseudo-label sampling and shot regions.
    pub pseudo_intervals: usize,
    /// `C_mixup`: intervals for mixup anchors, equal width over the pseudo range.
    pub mixup_intervals: usize,
    /// Pseudo-partition boundaries, required in explicit mode.
    pub boundaries: Option<Vec<f64>>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            mode: BinningKind::EqualWidth,
            pseudo_intervals: 20,
            mixup_intervals: 20,
            boundaries: None,
        }
    }
}

impl BinningConfig {
    pub fn pseudo_mode(&self) -> BinningMode {
        match (&self.mode, &self.boundaries) {
            (BinningKind::Explicit, Some(b)) => BinningMode::ExplicitBoundaries(b.clone()),
            _ => BinningMode::EqualWidth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub method: ConfidenceMethod,
    pub tau_pct: f64,
    /// Environments sampled from the labeled set for GRation.
    pub env_pool_size: usize,
    pub dropout_samples: usize,
    pub dropout_rate: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            method: ConfidenceMethod::GRation,
            tau_pct: 80.0,
            env_pool_size: 32,
            dropout_samples: 8,
            dropout_rate: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    /// Count the previous round's pseudo-labels in the reverse-sampling frequencies.
    pub rates_include_conf: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixupConfig {
    /// Augmentation budget per round. `None` means `|G_imb|`.
    pub n_aug: Option<usize>,
    pub beta: f64,
    pub z_source: SourceSet,
    pub h_source: SourceSet,
}

impl MixupConfig {
    pub fn sources(&self) -> MixupSources {
        MixupSources {
            z_source: self.z_source,
            h_source: self.h_source,
        }
    }
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            n_aug: None,
            beta: 2.0,
            z_source: MixupSources::default().z_source,
            h_source: MixupSources::default().h_source,
        }
    }
}

/// Every knob of a run. Serialized verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Self-training rounds `T`; the first trains on the labeled set alone.
    pub iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub model: ModelConfig,
    pub grea: GreaHyper,
    pub binning: BinningConfig,
    pub confidence: ConfidenceConfig,
    pub pseudo: PseudoConfig,
    pub mixup: MixupConfig,
    pub shots: ShotThresholds,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 5,
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
            grea: GreaHyper::default(),
            binning: BinningConfig::default(),
            confidence: ConfidenceConfig::default(),
            pseudo: PseudoConfig::default(),
            mixup: MixupConfig::default(),
            shots: ShotThresholds::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Every problem found, not only the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        need(self.epochs >= 1, format!("epochs must be >= 1, got {}", self.epochs));
        need(self.batch_size >= 1, format!("batch_size must be >= 1, got {}", self.batch_size));
        need(self.adam.lr > 0.0 && self.adam.lr.is_finite(), format!("adam.lr must be positive, got {}", self.adam.lr));
        need(
            (0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2),
            format!("adam betas must be in [0, 1), got ({}, {})", self.adam.beta1, self.adam.beta2),
        );
        need(self.adam.eps > 0.0, format!("adam.eps must be positive, got {}", self.adam.eps));
        need(self.model.hidden_dim >= 1, format!("model.hidden_dim must be >= 1, got {}", self.model.hidden_dim));
        need(self.model.gin_layers >= 1, format!("model.gin_layers must be >= 1, got {}", self.model.gin_layers));
        if let Err(e) = self.grea.validate() {
            need(false, format!("grea: {e}"));
        }
        let b = &self.binning;
        need(b.pseudo_intervals >= 2, format!("binning.pseudo_intervals must be >= 2, got {}", b.pseudo_intervals));
        need(b.mixup_intervals >= 2, format!("binning.mixup_intervals must be >= 2, got {}", b.mixup_intervals));
        match (&b.mode, &b.boundaries) {
            (BinningKind::Explicit, None) => need(false, "binning.mode = explicit needs binning.boundaries".into()),
            (BinningKind::EqualWidth, Some(_)) => need(
                false,
                "binning.boundaries conflicts with binning.mode = equal-width".into(),
            ),
            (BinningKind::Explicit, Some(bs)) => {
                need(
                    bs.len() == b.pseudo_intervals + 1,
                    format!(
                        "binning.boundaries has {} edges, pseudo_intervals = {} needs {}",
                        bs.len(),
                        b.pseudo_intervals,
                        b.pseudo_intervals + 1
                    ),
                );
                need(
                    bs.iter().all(|x| x.is_finite()) && bs.windows(2).all(|w| w[0] < w[1]),
                    "binning.boundaries must be finite and strictly increasing".into(),
                );
            }
            (BinningKind::EqualWidth, None) => {}
        }
        let c = &self.confidence;
        need(
            c.tau_pct >= 0.0 && c.tau_pct <= 100.0,
            format!("confidence.tau_pct must be in [0, 100], got {}", c.tau_pct),
        );
        need(c.env_pool_size >= 2, format!("confidence.env_pool_size must be >= 2, got {}", c.env_pool_size));
        need(c.dropout_samples >= 2, format!("confidence.dropout_samples must be >= 2, got {}", c.dropout_samples));
        need(
            (0.0..1.0).contains(&c.dropout_rate),
            format!("confidence.dropout_rate must be in [0, 1), got {}", c.dropout_rate),
        );
        need(
            self.mixup.beta > 0.0 && self.mixup.beta.is_finite(),
            format!("mixup.beta must be positive, got {}", self.mixup.beta),
        );
        if let Err(e) = self.shots.validate() {
            need(false, format!("shots: {e}"));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("run config serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Hash of every setting except the iteration count, so a checkpoint can be extended.
    pub fn resume_hash(&self) -> String {
        Self { iterations: 0, ..self.clone() }.hash()
    }

    pub fn n_aug(&self, labeled: usize) -> usize {
        if self.ablation.no_mixup {
            0
        } else {
            self.mixup.n_aug.unwrap_or(labeled)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn problems_are_exhaustive() {
        let text = "epochs = 0\nbatch_size = 0\n[mixup]\nbeta = -1.0\n[confidence]\ntau_pct = 120.0\n";
        let err = RunConfig::from_toml_str(text).unwrap_err().to_string();
        for key in ["epochs", "batch_size", "mixup.beta", "tau_pct"] {
            assert!(err.contains(key), "{err} lacks {key}");
        }
    }

    #[test]
    fn boundaries_conflict_with_equal_width() {
        let text = "[binning]\nmode = \"equal-width\"\nboundaries = [0.0, 1.0, 2.0]\npseudo_intervals = 2\n";
        assert!(RunConfig::from_toml_str(text).is_err());
        let ok = "[binning]\nmode = \"explicit\"\nboundaries = [0.0, 1.0, 2.0]\npseudo_intervals = 2\n";
        assert!(RunConfig::from_toml_str(ok).is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("epoch = 3\n").is_err());
    }

    #[test]
    fn ablation_names() {
        let mut a = Ablation::default();
        a.enable("no-sigma").unwrap();
        a.enable("no-sampling").unwrap();
        assert_eq!(a.active(), vec!["no-sigma", "no-sampling"]);
        assert!(a.enable("no-everything").is_err());
    }
}
