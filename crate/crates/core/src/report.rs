//! Experiment reports and their serialized forms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::fairness::{DeviationStats, RiskLoss};
use crate::privacy::{DpGuarantee, RdpLedger};

/// Significant digits kept in every reported number.
pub const REPORT_DIGITS: usize = 12;

/// Per-group measurements at the clean student `θ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: usize,
    pub size: usize,
    /// `‖G_a‖`, the norm of the mean group-loss gradient.
    pub gradient_norm: f64,
    /// `β_a`.
    pub smoothness: f64,
    /// False when `β_a` is a numerical estimate rather than a closed form.
    pub smoothness_exact: bool,
    pub mean_input_norm: f64,
    pub mean_closeness: f64,
    pub excess_risk: f64,
    pub lemma_b1_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub thm2: f64,
    /// Deviation bound; present for binary logistic regression students
    /// with `λ > 0`.
    pub cor1: Option<f64>,
    /// Second-moment bound; same availability as `cor1`.
    pub cor2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub clean_student: f64,
    pub noisy_student_mean: f64,
    pub noisy_student_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub guarantee: DpGuarantee,
    pub ledger: RdpLedger,
}

/// One public sample's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostic {
    /// Row index in the input dataset.
    pub idx: usize,
    pub group: usize,
    pub norm: f64,
    pub closeness: f64,
    pub flip_prob: f64,
    pub excess01: f64,
    pub excess_ce: f64,
    /// `‖∇ℓ(θ*; x)‖` against the clean vote.
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub config: ExperimentConfig,
    /// Loss behind `groups[*].excess_risk` and `gap`.
    pub loss: RiskLoss,
    /// Set when `σ = 0`; such runs carry no privacy guarantee.
    pub non_private: bool,
    pub privacy: Option<PrivacySummary>,
    pub gap: f64,
    pub groups: Vec<GroupStats>,
    pub deviation: DeviationStats,
    pub bounds: BoundValues,
    /// Mean per-sample flip probability over the public set.
    pub mean_flip_prob: f64,
    /// `1 − Φ(k/(√2σ))` at the configured ensemble size.
    pub unanimous_flip_prob: f64,
    /// `None` when the test split is empty.
    pub accuracy: Option<AccuracyStats>,
    pub standardization: Option<Standardization>,
    pub diagnostics: Vec<SampleDiagnostic>,
}

impl FairnessReport {
    pub fn group_risks(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.excess_risk).collect()
    }

    /// `(ε, δ, γ*)`, absent for non-private runs.
    pub fn privacy_triple(&self) -> Option<(f64, f64, Option<f64>)> {
        self.privacy.as_ref().map(|p| {
            (
                p.guarantee.epsilon,
                p.guarantee.delta,
                p.guarantee.gamma_star,
            )
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `idx,group,norm,closeness,flip_prob,excess01`.
    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["idx", "group", "norm", "closeness", "flip_prob", "excess01"])?;
        for d in &self.diagnostics {
            w.write_record([
                d.idx.to_string(),
                d.group.to_string(),
                d.norm.to_string(),
                d.closeness.to_string(),
                d.flip_prob.to_string(),
                d.excess01.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rounds `v` to [`REPORT_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", REPORT_DIGITS - 1, v).parse().unwrap_or(v)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Copy of `value` with every floating-point field rounded by [`round_sig`].
pub fn rounded<T: Serialize + DeserializeOwned>(value: &T) -> Result<T> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::from_value(v)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Usage(format!(
                "unknown report format '{other}', expected json or csv"
            ))),
        }
    }
}

/// Writes the full report as JSON or the per-sample diagnostics as CSV.
pub fn emit_report(
    report: &FairnessReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n")?;
        }
        ReportFormat::Csv => report.write_diagnostics_csv(&mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<FairnessReport> {
    FairnessReport::from_json(&std::fs::read_to_string(path)?)
}
