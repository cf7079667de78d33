//! End-to-end runs: split, teachers, votes, clean and noisy students,
//! analytics and accounting, plus parameter sweeps over them.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, CsvSchema, Dataset, Split, SplitSpec, Standardization, SynthSpec};
use crate::ensemble::{
    self, clean_vote, flip_prob_mc, flip_prob_unanimous, release, soft_label, vote_counts,
    EnsembleModel, VoteCounts, VoteNoise, VoteRecord, VoteResult, VoteVariant,
};
use crate::error::{Error, Result};
use crate::fairness::{self, RiskLoss};
use crate::model::{Architecture, LabelTarget, ModelParams};
use crate::numeric::{mean_and_se, norm};
use crate::privacy::{rdp_to_dp, RdpLedger};
use crate::report::{
    rounded, AccuracyStats, BoundValues, FairnessReport, GroupStats, PrivacySummary,
    SampleDiagnostic,
};
use crate::rng::{derive_seed, SeedStream};
use crate::train::{train_erm, TrainConfig};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_col: String,
        group_col: String,
        #[serde(default)]
        categorical_cols: Vec<String>,
    },
    /// The two-group generator; its seed is derived from the root seed.
    Synth {
        n: usize,
        dim: usize,
        margins: [f64; 2],
        scales: [f64; 2],
    },
}

fn default_data() -> DataSource {
    DataSource::Synth {
        n: 4000,
        dim: 10,
        margins: [1.0, 1.0],
        scales: [1.0, 1.0],
    }
}

fn default_true() -> bool {
    true
}

fn default_arch() -> Architecture {
    Architecture::Logreg
}

fn default_teacher() -> TrainConfig {
    TrainConfig::gradient_descent(0.1)
}

fn default_student() -> TrainConfig {
    TrainConfig::gradient_descent(100.0)
}

fn default_sigma() -> f64 {
    50.0
}

fn default_repetitions() -> usize {
    100
}

fn default_delta() -> f64 {
    1e-5
}

fn default_flip_trials() -> u64 {
    10_000
}

/// Everything needed to reproduce one run. Missing fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_arch")]
    pub teacher_arch: Architecture,
    #[serde(default = "default_teacher")]
    pub teacher: TrainConfig,
    #[serde(default = "default_arch")]
    pub student_arch: Architecture,
    #[serde(default = "default_student")]
    pub student: TrainConfig,
    /// Regularizer of the true-label reference model behind `s(x)`;
    /// defaults to the student's.
    #[serde(default)]
    pub reference_lambda: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub vote: VoteVariant,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_flip_trials")]
    pub flip_trials: u64,
    #[serde(default)]
    pub risk_loss: RiskLoss,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.flip_trials < 1 {
            return Err(Error::Config("flip_trials must be >= 1".into()));
        }
        if let Some(l) = self.reference_lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!(
                    "reference_lambda must be >= 0, got {l}"
                )));
            }
        }
        if let DataSource::Synth { n, dim, .. } = self.data {
            if n == 0 || dim == 0 {
                return Err(Error::Config("synthetic n and dim must be >= 1".into()));
            }
        }
        self.split.validate().map_err(config)?;
        self.teacher.validate().map_err(config)?;
        self.student.validate().map_err(config)
    }

    fn stream(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    fn reference_config(&self) -> TrainConfig {
        let mut cfg = self.student.clone();
        if let Some(l) = self.reference_lambda {
            cfg.lambda = l;
        }
        cfg.with_seed(self.stream().child("reference").seed())
    }
}

/// Loads (and optionally standardizes) the configured data.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Standardization>)> {
    let raw = match &cfg.data {
        DataSource::Csv {
            path,
            label_col,
            group_col,
            categorical_cols,
        } => {
            let mut schema = CsvSchema::new(label_col.clone(), group_col.clone());
            schema.categorical_cols = categorical_cols.clone();
            data::load_csv(path, &schema)?
        }
        DataSource::Synth {
            n,
            dim,
            margins,
            scales,
        } => data::synth_two_group(&SynthSpec {
            n: *n,
            dim: *dim,
            margins: *margins,
            scales: *scales,
            seed: cfg.stream().child("synth").seed(),
        })?,
    };
    if cfg.standardize {
        let (d, stats) = data::standardize(&raw);
        Ok((d, Some(stats)))
    } else {
        Ok((raw, None))
    }
}

/// Trained artifacts of one run, before any analytics.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: ExperimentConfig,
    pub standardization: Option<Standardization>,
    pub split: Split,
    pub ensemble: EnsembleModel,
    /// Clean tallies for each public sample.
    pub counts: Vec<VoteCounts>,
    pub clean_votes: Vec<usize>,
    /// Student trained on the noiseless version of the configured labels.
    pub clean_student: ModelParams,
    /// `releases[r][i]`: label released for public sample `i` in repetition `r`.
    pub releases: Vec<Vec<VoteResult>>,
    pub noisy_students: Vec<ModelParams>,
    /// Trained on the public set's true labels; only used for `s(x)`.
    pub reference: ModelParams,
}

impl PipelineRun {
    pub fn public_inputs(&self) -> Vec<&[f64]> {
        self.split.public.inputs()
    }

    /// Clean votes as hard targets; the risks are measured against these.
    pub fn clean_targets(&self) -> Vec<LabelTarget> {
        self.clean_votes
            .iter()
            .map(|&c| LabelTarget::Hard(c))
            .collect()
    }

    /// Audit rows for repetition `r`.
    pub fn transcript(&self, r: usize) -> Vec<VoteRecord> {
        self.releases[r]
            .iter()
            .zip(&self.counts)
            .zip(&self.split.public_indices)
            .map(|((vote, counts), &index)| VoteRecord {
                index,
                counts: counts.clone(),
                vote: vote.clone(),
            })
            .collect()
    }
}

/// Runs every training stage.
pub fn train_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let stream = cfg.stream();
    let (dataset, standardization) = load_data(cfg).map_err(Error::at_stage("load"))?;

    let split_spec = SplitSpec {
        seed: stream.child("split").seed(),
        ..cfg.split.clone()
    };
    let split = data::split(&dataset, &split_spec).map_err(Error::at_stage("split"))?;

    let teacher_cfg = cfg
        .teacher
        .clone()
        .with_seed(stream.child("teachers").seed());
    let ensemble = ensemble::train_teachers(&split.teachers, cfg.teacher_arch, &teacher_cfg)
        .map_err(Error::at_stage("teachers"))?;

    let inputs = split.public.inputs();
    let counts = inputs
        .iter()
        .map(|x| vote_counts(&ensemble, x))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at_stage("votes"))?;
    let clean_votes: Vec<usize> = counts.iter().map(clean_vote).collect();

    let d = dataset.feature_dim();
    let c = dataset.num_classes().max(2);
    let student_seed = stream.child("student").seed();
    let student_cfg = cfg.student.clone().with_seed(student_seed);
    let init = ModelParams::init(cfg.student_arch, d, c, student_seed)
        .map_err(Error::at_stage("students"))?;

    let clean_targets: Vec<LabelTarget> = match cfg.vote {
        VoteVariant::Hard => clean_votes.iter().map(|&v| LabelTarget::Hard(v)).collect(),
        VoteVariant::Soft => counts
            .iter()
            .map(|c| LabelTarget::Soft(soft_label(c)))
            .collect(),
    };
    let clean_student = train_erm(&inputs, &clean_targets, &student_cfg, &init)
        .map_err(Error::at_stage("students"))?;

    let noise = VoteNoise::new(stream);
    let releases = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            counts
                .iter()
                .enumerate()
                .map(|(i, c)| release(c, cfg.vote, cfg.sigma, &mut noise.rng(r as u64, i as u64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at_stage("votes"))?;

    let noisy_students = releases
        .par_iter()
        .map(|rel| {
            let targets: Vec<LabelTarget> = rel.iter().map(VoteResult::target).collect();
            train_erm(&inputs, &targets, &student_cfg, &init)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::at_stage("students"))?;

    let truth: Vec<LabelTarget> = split
        .public
        .labels()
        .into_iter()
        .map(LabelTarget::Hard)
        .collect();
    let reference = train_erm(&inputs, &truth, &cfg.reference_config(), &init)
        .map_err(Error::at_stage("reference"))?;

    Ok(PipelineRun {
        config: cfg.clone(),
        standardization,
        split,
        ensemble,
        counts,
        clean_votes,
        clean_student,
        releases,
        noisy_students,
        reference,
    })
}

/// Per-sample flip probability: closed form for unanimous binary tallies,
/// Monte Carlo otherwise.
pub fn sample_flip_probs(run: &PipelineRun) -> Result<Vec<f64>> {
    let cfg = &run.config;
    let stream = cfg.stream().child("flip");
    run.counts
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if cfg.sigma == 0.0 {
                Ok(0.0)
            } else if c.num_classes() == 2 && c.is_unanimous() {
                Ok(flip_prob_unanimous(c.total(), cfg.sigma))
            } else {
                let mut rng = stream.index(i as u64).rng();
                flip_prob_mc(c, cfg.sigma, cfg.flip_trials, &mut rng).map(|(p, _)| p)
            }
        })
        .collect()
}

fn accuracy(model: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for s in data.samples() {
        if model.predict(&s.features)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Fairness analytics and privacy accounting for a trained pipeline.
pub fn analyze(run: &PipelineRun, loss: RiskLoss) -> Result<FairnessReport> {
    analyze_inner(run, loss).map_err(Error::at_stage("analysis"))
}

fn analyze_inner(run: &PipelineRun, loss: RiskLoss) -> Result<FairnessReport> {
    let cfg = &run.config;
    let public = &run.split.public;
    let inputs = run.public_inputs();
    let groups = public.groups();
    let targets = run.clean_targets();
    let theta = &run.clean_student;
    let runs = &run.noisy_students;

    let deviation = fairness::model_deviation(theta, runs)?;
    let excess01 = fairness::per_sample_excess(&inputs, &targets, theta, runs, RiskLoss::ZeroOne)?;
    let excess_ce =
        fairness::per_sample_excess(&inputs, &targets, theta, runs, RiskLoss::CrossEntropy)?;
    let chosen = match loss {
        RiskLoss::ZeroOne => &excess01,
        RiskLoss::CrossEntropy => &excess_ce,
    };
    let risks = fairness::group_means(chosen, &groups, public.num_groups())?;
    let gap = fairness::fairness_gap(&risks)?;

    let flip_probs = sample_flip_probs(run)?;
    let norms: Vec<f64> = inputs.iter().map(|x| norm(x)).collect();
    let closeness = inputs
        .iter()
        .map(|x| fairness::closeness_to_boundary(&run.reference, x))
        .collect::<Result<Vec<_>>>()?;

    let mut group_stats = Vec::with_capacity(public.num_groups());
    for (a, &risk) in risks.iter().enumerate() {
        let idx = public.group_indices(a);
        let xs: Vec<&[f64]> = idx.iter().map(|&i| inputs[i]).collect();
        let ts: Vec<LabelTarget> = idx.iter().map(|&i| targets[i].clone()).collect();
        let (_, gradient_norm) = fairness::group_gradient(a, theta, &xs, &ts)?;
        let smooth = fairness::group_smoothness(theta, &xs, &ts)?;
        let mean = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
        group_stats.push(GroupStats {
            group: a,
            size: idx.len(),
            gradient_norm,
            smoothness: smooth.beta,
            smoothness_exact: smooth.exact,
            mean_input_norm: mean(&norms),
            mean_closeness: mean(&closeness),
            excess_risk: risk,
            lemma_b1_bound: fairness::bound_lemma_b1(gradient_norm, smooth.beta, &deviation)?,
        });
    }

    let max_g = group_stats
        .iter()
        .map(|g| g.gradient_norm)
        .fold(0.0, f64::max);
    let max_b = group_stats.iter().map(|g| g.smoothness).fold(0.0, f64::max);
    let m = inputs.len();
    let lambda = cfg.student.lambda;
    let linear_binary = theta.arch() == Architecture::Logreg && theta.num_classes() == 2;
    let (cor1, cor2) = if linear_binary && lambda > 0.0 {
        (
            Some(fairness::bound_cor1(&flip_probs, &inputs, m, lambda)?),
            Some(fairness::bound_cor2(&flip_probs, &inputs, m, lambda)?),
        )
    } else {
        (None, None)
    };
    let bounds = BoundValues {
        thm2: fairness::bound_thm2(max_g, max_b, &deviation)?,
        cor1,
        cor2,
    };

    let accuracy = if run.split.test.is_empty() {
        None
    } else {
        let noisy = runs
            .iter()
            .map(|r| accuracy(r, &run.split.test))
            .collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_and_se(&noisy);
        Some(AccuracyStats {
            clean_student: accuracy(theta, &run.split.test)?,
            noisy_student_mean: mean,
            noisy_student_se: se,
        })
    };

    let privacy = if cfg.sigma > 0.0 {
        let mut ledger = RdpLedger::new();
        ledger.record(m as u64, cfg.sigma)?;
        Some(PrivacySummary {
            guarantee: rdp_to_dp(&ledger, cfg.delta)?,
            ledger,
        })
    } else {
        None
    };

    let diagnostics = (0..m)
        .map(|i| {
            let g = crate::model::sample_gradient(theta, inputs[i], &targets[i])?;
            Ok(SampleDiagnostic {
                idx: run.split.public_indices[i],
                group: groups[i],
                norm: norms[i],
                closeness: closeness[i],
                flip_prob: flip_probs[i],
                excess01: excess01[i],
                excess_ce: excess_ce[i],
                gradient_norm: norm(&g),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = FairnessReport {
        config: cfg.clone(),
        loss,
        non_private: cfg.sigma == 0.0,
        privacy,
        gap,
        groups: group_stats,
        deviation,
        bounds,
        mean_flip_prob: flip_probs.iter().sum::<f64>() / m as f64,
        unanimous_flip_prob: flip_prob_unanimous(run.ensemble.size() as u64, cfg.sigma),
        accuracy,
        standardization: run.standardization.clone(),
        diagnostics,
    };
    rounded(&report)
}

/// Trains and analyzes under the configured risk loss.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<FairnessReport> {
    analyze(&train_pipeline(cfg)?, cfg.risk_loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Student regularizer.
    Lambda,
    /// Number of teachers.
    K,
    Sigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// The configuration for value `index`, seeded by
    /// `derive_seed(base.seed, index)`.
    pub fn config_at(&self, index: usize) -> Result<ExperimentConfig> {
        let v = *self
            .values
            .get(index)
            .ok_or_else(|| Error::Config(format!("no sweep value at index {index}")))?;
        let mut cfg = self.base.clone();
        cfg.seed = derive_seed(self.base.seed, index as u64);
        match self.parameter {
            SweepParameter::Lambda => cfg.student.lambda = v,
            SweepParameter::Sigma => cfg.sigma = v,
            SweepParameter::K => {
                if !(v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64) {
                    return Err(Error::Config(format!(
                        "k must be a positive integer, got {v}"
                    )));
                }
                cfg.split.num_teachers = v as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of a sweep table; `error` is set when that value failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub xi: Option<f64>,
    pub e_delta: Option<f64>,
    pub e_delta2: Option<f64>,
    pub group_risks: Vec<f64>,
    pub accuracy: Option<f64>,
    pub epsilon: Option<f64>,
    pub mean_flip_prob: Option<f64>,
    pub unanimous_flip_prob: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_report(value: f64, seed: u64, r: &FairnessReport) -> Self {
        SweepRow {
            value,
            seed,
            xi: Some(r.gap),
            e_delta: Some(r.deviation.first_moment),
            e_delta2: Some(r.deviation.second_moment),
            group_risks: r.group_risks(),
            accuracy: r.accuracy.as_ref().map(|a| a.noisy_student_mean),
            epsilon: r.privacy.as_ref().map(|p| p.guarantee.epsilon),
            mean_flip_prob: Some(r.mean_flip_prob),
            unanimous_flip_prob: Some(r.unanimous_flip_prob),
            error: None,
        }
    }

    fn failed(value: f64, seed: u64, e: &Error) -> Self {
        SweepRow {
            value,
            seed,
            xi: None,
            e_delta: None,
            e_delta2: None,
            group_risks: Vec::new(),
            accuracy: None,
            epsilon: None,
            mean_flip_prob: None,
            unanimous_flip_prob: None,
            error: Some(e.to_string()),
        }
    }
}

/// Runs one experiment per value. A failing value is recorded in its row
/// and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    Ok(spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let seed = derive_seed(spec.base.seed, i as u64);
            match spec.config_at(i).and_then(|c| run_experiment(&c)) {
                Ok(r) => SweepRow::from_report(v, seed, &r),
                Err(e) => SweepRow::failed(v, seed, &e),
            }
        })
        .collect())
}

/// Writes the sweep table as CSV; group risks are joined with `;`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "value",
        "seed",
        "xi",
        "e_delta",
        "e_delta2",
        "group_risks",
        "accuracy",
        "epsilon",
        "mean_flip_prob",
        "unanimous_flip_prob",
        "error",
    ])?;
    for r in rows {
        let risks: Vec<String> = r.group_risks.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.value.to_string(),
            r.seed.to_string(),
            opt(r.xi),
            opt(r.e_delta),
            opt(r.e_delta2),
            risks.join(";"),
            opt(r.accuracy),
            opt(r.epsilon),
            opt(r.mean_flip_prob),
            opt(r.unanimous_flip_prob),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
