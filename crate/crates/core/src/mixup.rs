//! Label-anchored mixup in latent space.
//!
//! Each interval's anchor is the mean representation of its members. Real
//! examples whose labels lie nearest the anchor center are pulled toward it
//! with `lambda >= 0.5`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::binning::IntervalPartition;
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// A latent representation with its (true or pseudo) label.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub id: String,
    pub h: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorTable {
    /// Row `i` is the mean representation of interval `i` (zeros when masked).
    pub z: Vec<Vec<f64>>,
    pub centers: Vec<f64>,
    /// `true` for intervals with at least one member.
    pub mask: Vec<bool>,
    pub counts: Vec<usize>,
}

impl AnchorTable {
    pub fn from_samples(samples: &[LatentSample], partition: &IntervalPartition) -> Result<Self> {
        let c = partition.len();
        let d = samples.first().map_or(0, |s| s.h.len());
        let mut z = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for s in samples {
            if s.h.len() != d {
                return Err(Error::Shape(format!(
                    "representation of {} has dim {}, expected {d}",
                    s.id,
                    s.h.len()
                )));
            }
            let i = partition.assign(s.y);
            counts[i] += 1;
            z[i].iter_mut().zip(&s.h).for_each(|(acc, v)| *acc += v);
        }
        for (row, &n) in z.iter_mut().zip(&counts) {
            if n > 0 {
                row.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        Ok(Self {
            z,
            centers: partition.centers().to_vec(),
            mask: counts.iter().map(|&n| n > 0).collect(),
            counts,
        })
    }

    pub fn unmasked(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub h_tilde: Vec<f64>,
    pub y_tilde: f64,
    pub anchor_index: usize,
    pub source_graph_id: String,
    pub lambda: f64,
}

/// `Beta(1, beta)` by inverse CDF: `1 - u^(1/beta)`.
pub fn sample_beta_one(beta: f64, rng: &mut Rng) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("mixup beta must be positive, got {beta}")));
    }
    let u: f64 = rng.random();
    Ok(1.0 - u.powf(1.0 / beta))
}

/// `lambda = max(l, 1 - l)` with `l ~ Beta(1, beta)`.
pub fn sample_lambda(beta: f64, rng: &mut Rng) -> Result<f64> {
    let l = sample_beta_one(beta, rng)?;
    Ok(l.max(1.0 - l))
}

/// Mix one anchor with one real example.
///
/// Computed as offsets from the anchor, clamped to the segment and nudged
/// toward the anchor until convexity and anchor fidelity hold in floating point.
pub fn mix(z: &[f64], a: f64, h: &[f64], y: f64, lambda: f64) -> (Vec<f64>, f64) {
    let w = 1.0 - lambda;
    let mut h_tilde: Vec<f64> = z
        .iter()
        .zip(h)
        .map(|(&zi, &hi)| (zi + w * (hi - zi)).clamp(zi.min(hi), zi.max(hi)))
        .collect();
    let limit = w * distance(h, z);
    while distance(&h_tilde, z) > limit {
        for (v, &zi) in h_tilde.iter_mut().zip(z) {
            if *v < zi {
                *v = v.next_up();
            } else if *v > zi {
                *v = v.next_down();
            }
        }
    }
    let mut y_tilde = (a + w * (y - a)).clamp(a.min(y), a.max(y));
    if (y_tilde - a).abs() > (y_tilde - y).abs() {
        y_tilde = 0.5 * a + 0.5 * y;
        while (y_tilde - a).abs() > (y_tilde - y).abs() {
            y_tilde = if a < y { y_tilde.next_down() } else { y_tilde.next_up() };
        }
    }
    (h_tilde, y_tilde)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest-remainder apportionment of `total` proportional to `weights`.
///
/// Remainder ties go to the lower index. All-zero weights give all zeros.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        let (fi, fj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Indices of the `n` samples with labels closest to `center` (ties by id).
pub fn nearest_by_label(pool: &[LatentSample], center: f64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&i, &j| {
        (pool[i].y - center)
            .abs()
            .total_cmp(&(pool[j].y - center).abs())
            .then_with(|| pool[i].id.cmp(&pool[j].id))
    });
    idx.truncate(n);
    idx
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaugParams {
    pub n_aug: usize,
    pub beta: f64,
    pub seed: u64,
    /// Distinguishes iterations so each draws fresh lambdas.
    pub salt: u64,
}

/// Build `H_aug`: per unmasked anchor `i`, `n_i` nearest-label pool members mixed toward it.
///
/// `rates` are indexed by interval. Lambdas for anchor `i` come from their own
/// stream, so changing the pool never shifts them.
pub fn build_haug(
    anchors: &AnchorTable,
    pool: &[LatentSample],
    rates: &[f64],
    params: &HaugParams,
) -> Result<Vec<AugmentedExample>> {
    if !(params.beta > 0.0 && params.beta.is_finite()) {
        return Err(Error::Config(format!("mixup beta must be positive, got {}", params.beta)));
    }
    if rates.len() != anchors.mask.len() {
        return Err(Error::Shape(format!(
            "{} rates for {} anchors",
            rates.len(),
            anchors.mask.len()
        )));
    }
    if params.n_aug == 0 || pool.is_empty() {
        return Ok(Vec::new());
    }
    if anchors.unmasked().next().is_none() {
        log::warn!("every mixup anchor is empty; no augmented examples");
        return Ok(Vec::new());
    }
    let weights: Vec<f64> = rates
        .iter()
        .zip(&anchors.mask)
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    let counts = apportion(params.n_aug, &weights);
    let mut out = Vec::with_capacity(params.n_aug);
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let mut rng = stream(params.seed, "mixup", &[params.salt, i as u64]);
        let lambdas = (0..n)
            .map(|_| sample_lambda(params.beta, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let chosen = nearest_by_label(pool, anchors.centers[i], n);
        for (j, lambda) in chosen.into_iter().zip(lambdas) {
            let s = &pool[j];
            let (h_tilde, y_tilde) = mix(&anchors.z[i], anchors.centers[i], &s.h, s.y, lambda);
            out.push(AugmentedExample {
                h_tilde,
                y_tilde,
                anchor_index: i,
                source_graph_id: s.id.clone(),
                lambda,
            });
        }
    }
    Ok(out)
}

pub fn write_haug_csv(path: &Path, examples: &[AugmentedExample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "anchor_index,source_graph_id,lambda,y_tilde").map_err(io)?;
    for e in examples {
        writeln!(w, "{},{},{},{}", e.anchor_index, e.source_graph_id, e.lambda, e.y_tilde).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Which graphs feed the anchors or the real-example pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceSet {
    #[serde(rename = "imb")]
    Imb,
    #[serde(rename = "imb+conf")]
    ImbConf,
    #[serde(rename = "imb+unlbl")]
    ImbUnlbl,
}

impl SourceSet {
    pub const ALL: [SourceSet; 3] = [SourceSet::Imb, SourceSet::ImbConf, SourceSet::ImbUnlbl];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceSet::Imb => "imb",
            SourceSet::ImbConf => "imb+conf",
            SourceSet::ImbUnlbl => "imb+unlbl",
        }
    }

    /// Concatenate the chosen sets from their parts.
    pub fn gather(self, imb: &[LatentSample], conf: &[LatentSample], unlbl: &[LatentSample]) -> Vec<LatentSample> {
        let extra = match self {
            SourceSet::Imb => &[][..],
            SourceSet::ImbConf => conf,
            SourceSet::ImbUnlbl => unlbl,
        };
        imb.iter().chain(extra).cloned().collect()
    }
}

impl fmt::Display for SourceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixupSources {
    pub z_source: SourceSet,
    pub h_source: SourceSet,
}

impl Default for MixupSources {
    fn default() -> Self {
        Self {
            z_source: SourceSet::Imb,
            h_source: SourceSet::ImbUnlbl,
        }
    }
}

impl MixupSources {
    pub fn all() -> Vec<MixupSources> {
        SourceSet::ALL
            .iter()
            .flat_map(|&z_source| SourceSet::ALL.iter().map(move |&h_source| MixupSources { z_source, h_source }))
            .collect()
    }

    /// True when either side draws from the unlabeled pool.
    pub fn uses_unlabeled(&self) -> bool {
        self.z_source == SourceSet::ImbUnlbl || self.h_source == SourceSet::ImbUnlbl
    }
}
