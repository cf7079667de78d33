//! Teacher ensembles and the voting layer.
//!
//! Votes are plain per-class tallies. The noisy aggregator adds independent
//! `N(0, σ²)` noise to every tally before taking the argmax; the soft-label
//! variant releases the (noisy) tallies normalized to a distribution.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, LabelTarget, ModelParams};
use crate::numeric::{argmax, normal_sf};
use crate::rng::{SeedStream, StreamRng};
use crate::train::{train_on_dataset, TrainConfig};

/// `k` teachers sharing one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    teachers: Vec<ModelParams>,
}

impl EnsembleModel {
    pub fn new(teachers: Vec<ModelParams>) -> Result<Self> {
        let first = teachers.first().ok_or_else(|| {
            Error::InvalidParameter("an ensemble needs at least one teacher".into())
        })?;
        for t in &teachers[1..] {
            if t.arch() != first.arch()
                || t.input_dim() != first.input_dim()
                || t.num_classes() != first.num_classes()
            {
                return Err(Error::InvalidParameter(
                    "all teachers must share architecture and dimensions".into(),
                ));
            }
        }
        Ok(EnsembleModel { teachers })
    }

    pub fn teachers(&self) -> &[ModelParams] {
        &self.teachers
    }

    /// Number of teachers `k`.
    pub fn size(&self) -> usize {
        self.teachers.len()
    }

    pub fn arch(&self) -> Architecture {
        self.teachers[0].arch()
    }

    pub fn num_classes(&self) -> usize {
        self.teachers[0].num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.teachers[0].input_dim()
    }
}

/// Trains teacher `j` on `partitions[j]` only. Teachers train in parallel;
/// each derives its seed from `cfg.seed` and its index.
pub fn train_teachers(
    partitions: &[Dataset],
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<EnsembleModel> {
    if partitions.is_empty() {
        return Err(Error::InvalidParameter(
            "no teacher partitions supplied".into(),
        ));
    }
    let stream = SeedStream::new(cfg.seed).child("teacher");
    let teachers = partitions
        .par_iter()
        .enumerate()
        .map(|(j, part)| {
            let seed = stream.index(j as u64).seed();
            let wrap = |e| Error::Teacher {
                index: j,
                source: Box::new(e),
            };
            let init = ModelParams::init(arch, part.feature_dim(), part.num_classes(), seed)
                .map_err(wrap)?;
            train_on_dataset(part, &cfg.clone().with_seed(seed), &init).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(teachers)
}

/// Per-class vote tallies `#_c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts(Vec<u64>);

impl VoteCounts {
    /// Requires at least one class and at least one vote.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidParameter(
                "vote counts need at least one class".into(),
            ));
        }
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::InvalidParameter("vote counts sum to zero".into()));
        }
        Ok(VoteCounts(counts))
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    /// Number of voters `k`.
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// True when every vote went to one class.
    pub fn is_unanimous(&self) -> bool {
        self.0.iter().filter(|&&c| c > 0).count() == 1
    }

    fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

/// Tallies the teachers' predictions at `x`.
pub fn vote_counts(ensemble: &EnsembleModel, x: &[f64]) -> Result<VoteCounts> {
    let mut counts = vec![0u64; ensemble.num_classes()];
    for t in ensemble.teachers() {
        counts[t.predict(x)?] += 1;
    }
    VoteCounts::new(counts)
}

/// Plurality vote; ties go to the lowest class index.
pub fn clean_vote(counts: &VoteCounts) -> usize {
    argmax(&counts.as_f64())
}

/// `#_c + N(0, σ²)` for every class, drawn in class order.
pub fn noisy_counts<R: Rng + ?Sized>(counts: &VoteCounts, sigma: f64, rng: &mut R) -> Vec<f64> {
    counts
        .counts()
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            c as f64 + sigma * z
        })
        .collect()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Gaussian noisy-max vote. With `σ = 0` this is [`clean_vote`].
pub fn noisy_vote<R: Rng + ?Sized>(counts: &VoteCounts, sigma: f64, rng: &mut R) -> Result<usize> {
    check_sigma(sigma)?;
    Ok(argmax(&noisy_counts(counts, sigma, rng)))
}

/// Vote fractions `#_c / k`.
pub fn soft_label(counts: &VoteCounts) -> Vec<f64> {
    let k = counts.total() as f64;
    counts.counts().iter().map(|&c| c as f64 / k).collect()
}

/// Clamps negative entries to zero and renormalizes; all-zero input maps to
/// the uniform distribution.
pub fn sanitize_soft_label(noisy: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = noisy.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.into_iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / noisy.len() as f64; noisy.len()]
    }
}

/// Noisy soft label: Gaussian noise on the tallies, then
/// [`sanitize_soft_label`]. With `σ = 0` this is [`soft_label`].
pub fn noisy_soft_label<R: Rng + ?Sized>(
    counts: &VoteCounts,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    Ok(sanitize_soft_label(&noisy_counts(counts, sigma, rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VoteVariant {
    #[default]
    Hard,
    Soft,
}

/// A released label together with the noise scale that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VoteResult {
    Hard { class: usize, sigma: f64 },
    Soft { probs: Vec<f64>, sigma: f64 },
}

impl VoteResult {
    pub fn sigma(&self) -> f64 {
        match self {
            VoteResult::Hard { sigma, .. } | VoteResult::Soft { sigma, .. } => *sigma,
        }
    }

    pub fn target(&self) -> LabelTarget {
        match self {
            VoteResult::Hard { class, .. } => LabelTarget::Hard(*class),
            VoteResult::Soft { probs, .. } => LabelTarget::Soft(probs.clone()),
        }
    }

    /// Class the label points to; ties go to the lowest index.
    pub fn class(&self) -> usize {
        match self {
            VoteResult::Hard { class, .. } => *class,
            VoteResult::Soft { probs, .. } => argmax(probs),
        }
    }
}

/// Releases one label of the requested variant.
pub fn release<R: Rng + ?Sized>(
    counts: &VoteCounts,
    variant: VoteVariant,
    sigma: f64,
    rng: &mut R,
) -> Result<VoteResult> {
    Ok(match variant {
        VoteVariant::Hard => VoteResult::Hard {
            class: noisy_vote(counts, sigma, rng)?,
            sigma,
        },
        VoteVariant::Soft => VoteResult::Soft {
            probs: noisy_soft_label(counts, sigma, rng)?,
            sigma,
        },
    })
}

/// Noise source keyed on `(repetition, sample)`: the generator for a given
/// pair is independent of every other pair and of evaluation order, and
/// draws one normal per class in class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteNoise(SeedStream);

impl VoteNoise {
    pub fn new(stream: SeedStream) -> Self {
        VoteNoise(stream.child("vote-noise"))
    }

    pub fn rng(&self, repetition: u64, sample: u64) -> StreamRng {
        self.0.index(repetition).index(sample).rng()
    }
}

/// `Pr[noisy vote ≠ clean vote]` for unanimous binary tallies:
/// `1 − Φ(k / (√2 σ))`.
pub fn flip_prob_unanimous(k: u64, sigma: f64) -> f64 {
    if k == 0 {
        return 0.5;
    }
    if sigma <= 0.0 {
        return 0.0;
    }
    normal_sf(k as f64 / (std::f64::consts::SQRT_2 * sigma))
}

/// Monte Carlo estimate of `Pr[noisy vote ≠ clean vote]` and its standard
/// error `sqrt(p̂(1 − p̂) / trials)`.
pub fn flip_prob_mc<R: Rng + ?Sized>(
    counts: &VoteCounts,
    sigma: f64,
    trials: u64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_sigma(sigma)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let clean = clean_vote(counts);
    let mut flips = 0u64;
    for _ in 0..trials {
        if argmax(&noisy_counts(counts, sigma, rng)) != clean {
            flips += 1;
        }
    }
    let p = flips as f64 / trials as f64;
    Ok((p, (p * (1.0 - p) / trials as f64).sqrt()))
}

/// One row of an audit transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub index: usize,
    pub counts: VoteCounts,
    pub vote: VoteResult,
}

/// Writes `index,counts,vote,soft_label,sigma` rows; vectors are joined
/// with `;`.
pub fn write_transcript<W: Write>(records: &[VoteRecord], writer: W) -> Result<()> {
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "counts", "vote", "soft_label", "sigma"])?;
    for r in records {
        let soft = match &r.vote {
            VoteResult::Soft { probs, .. } => join(&mut probs.iter().map(|p| p.to_string())),
            VoteResult::Hard { .. } => String::new(),
        };
        w.write_record([
            r.index.to_string(),
            join(&mut r.counts.counts().iter().map(|c| c.to_string())),
            r.vote.class().to_string(),
            soft,
            r.vote.sigma().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
