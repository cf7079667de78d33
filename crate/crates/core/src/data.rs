//! Tabular datasets: CSV ingestion, standardization, PATE-style splitting
//! and a synthetic two-group generator.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// One individual: standardized features, class label and protected group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub group: usize,
}

/// An ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    num_groups: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Validates and wraps `samples`. `feature_dim` is needed because the
    /// sample list may be empty.
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        num_groups: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes < 1 || num_groups < 1 {
            return Err(Error::InvalidParameter(
                "a dataset needs at least one class and one group".into(),
            ));
        }
        for (row, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: s.features.len(),
                });
            }
            if s.label >= num_classes {
                return Err(Error::InvalidParameter(format!(
                    "row {row}: label {} outside [0, {num_classes})",
                    s.label
                )));
            }
            if s.group >= num_groups {
                return Err(Error::InvalidParameter(format!(
                    "row {row}: group {} outside [0, {num_groups})",
                    s.group
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "row {row}: non-finite feature"
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            num_groups,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn groups(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.group).collect()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
            feature_dim: self.feature_dim,
        }
    }

    /// Row indices belonging to group `group`.
    pub fn group_indices(&self, group: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// Writes the dataset as CSV with columns `x0..x{d-1},label,group`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.feature_dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        header.push("group".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
            row.push(s.label.to_string());
            row.push(s.group.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_col: String,
    pub group_col: String,
    /// Feature columns to one-hot encode instead of parsing as numbers.
    #[serde(default)]
    pub categorical_cols: Vec<String>,
}

impl CsvSchema {
    pub fn new(label_col: impl Into<String>, group_col: impl Into<String>) -> Self {
        CsvSchema {
            label_col: label_col.into(),
            group_col: group_col.into(),
            categorical_cols: Vec::new(),
        }
    }

    pub fn with_categorical(mut self, cols: &[&str]) -> Self {
        self.categorical_cols = cols.iter().map(|c| c.to_string()).collect();
        self
    }
}

/// Names recovered while parsing a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvMetadata {
    pub feature_names: Vec<String>,
    /// Raw label value for each class index.
    pub class_values: Vec<String>,
    /// Raw group value for each group index.
    pub group_values: Vec<String>,
}

/// Assigns indices to raw cell values. All-integer columns keep their
/// values; anything else is numbered by first appearance.
fn encode_indices(cells: &[String]) -> (Vec<usize>, Vec<String>) {
    let as_ints: Option<Vec<usize>> = cells.iter().map(|c| c.parse::<usize>().ok()).collect();
    if let Some(ints) = as_ints {
        let count = ints.iter().copied().max().map_or(0, |m| m + 1);
        let names = (0..count).map(|i| i.to_string()).collect();
        return (ints, names);
    }
    first_appearance(cells)
}

/// Parses a CSV file with a header row into a [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema).map(|(d, _)| d)
}

/// Parses CSV text from any reader; see [`load_csv`].
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<(Dataset, CsvMetadata)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let label_pos = find(&schema.label_col)?;
    let group_pos = find(&schema.group_col)?;
    if label_pos == group_pos {
        return Err(Error::Schema("label and group columns must differ".into()));
    }
    for c in &schema.categorical_cols {
        let p = find(c)?;
        if p == label_pos || p == group_pos {
            return Err(Error::Schema(format!(
                "'{c}' cannot be both categorical feature and label/group"
            )));
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        rows.push(record.iter().map(str::to_string).collect());
    }

    let column = |pos: usize| -> Vec<String> { rows.iter().map(|r| r[pos].clone()).collect() };
    let (labels, class_values) = encode_indices(&column(label_pos));
    let (groups, group_values) = encode_indices(&column(group_pos));

    // Per input column: either a numeric feature or a list of one-hot levels.
    enum Encoding {
        Numeric,
        OneHot(Vec<String>),
    }
    let mut encodings = Vec::new();
    let mut feature_names = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        if pos == label_pos || pos == group_pos {
            continue;
        }
        if schema.categorical_cols.iter().any(|c| c == name) {
            let (_, levels) = first_appearance(&column(pos));
            for level in &levels {
                feature_names.push(format!("{name}={level}"));
            }
            encodings.push((pos, Encoding::OneHot(levels)));
        } else {
            feature_names.push(name.clone());
            encodings.push((pos, Encoding::Numeric));
        }
    }

    let mut samples = Vec::with_capacity(rows.len());
    for (row_idx, row) in rows.iter().enumerate() {
        let mut features = Vec::with_capacity(feature_names.len());
        for (pos, enc) in &encodings {
            let cell = &row[*pos];
            match enc {
                Encoding::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        row: row_idx,
                        column: header[*pos].clone(),
                        message: format!("'{cell}' is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: row_idx,
                            column: header[*pos].clone(),
                            message: format!("'{cell}' is not finite"),
                        });
                    }
                    features.push(v);
                }
                Encoding::OneHot(levels) => {
                    features.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                }
            }
        }
        samples.push(Sample {
            features,
            label: labels[row_idx],
            group: groups[row_idx],
        });
    }

    let dim = feature_names.len();
    let dataset = Dataset::new(
        samples,
        class_values.len().max(1),
        group_values.len().max(1),
        dim,
    )?;
    Ok((
        dataset,
        CsvMetadata {
            feature_names,
            class_values,
            group_values,
        },
    ))
}

fn first_appearance(cells: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let idx = cells
        .iter()
        .map(|c| {
            *seen.entry(c.as_str()).or_insert_with(|| {
                names.push(c.clone());
                names.len() - 1
            })
        })
        .collect();
    (idx, names)
}

/// Per-feature statistics used to standardize a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant column.
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(d: &Dataset) -> Self {
        let n = d.len().max(1) as f64;
        let dim = d.feature_dim();
        let mut mean = vec![0.0; dim];
        for s in d.samples() {
            for (m, v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for s in d.samples() {
            for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Standardization { mean, std }
    }

    /// Maps every feature to `(x - mean) / std`; constant columns become 0.
    pub fn apply(&self, d: &Dataset) -> Dataset {
        let samples = d
            .samples()
            .iter()
            .map(|s| Sample {
                features: s
                    .features
                    .iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, sd))| if *sd > 0.0 { (v - m) / sd } else { 0.0 })
                    .collect(),
                label: s.label,
                group: s.group,
            })
            .collect();
        Dataset {
            samples,
            ..d.clone_empty()
        }
    }
}

impl Dataset {
    fn clone_empty(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
            feature_dim: self.feature_dim,
        }
    }
}

/// Standardizes every feature column to zero mean and unit variance.
pub fn standardize(d: &Dataset) -> (Dataset, Standardization) {
    let stats = Standardization::fit(d);
    (stats.apply(d), stats)
}

/// How to carve a dataset into teacher shards, a public student set and a
/// test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_private_fraction")]
    pub private_fraction: f64,
    #[serde(default = "default_num_teachers")]
    pub num_teachers: usize,
    #[serde(default = "default_public_size")]
    pub public_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Deal teacher shards round-robin within (group, class) strata.
    #[serde(default)]
    pub stratify: bool,
}

fn default_private_fraction() -> f64 {
    0.75
}

fn default_num_teachers() -> usize {
    150
}

fn default_public_size() -> usize {
    200
}

impl Default for SplitSpec {
    /// 75% private rows, 150 teachers, 200 public rows.
    fn default() -> Self {
        SplitSpec {
            private_fraction: default_private_fraction(),
            num_teachers: default_num_teachers(),
            public_size: default_public_size(),
            seed: 0,
            stratify: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.private_fraction > 0.0 && self.private_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "private_fraction must be in (0, 1], got {}",
                self.private_fraction
            )));
        }
        if self.num_teachers < 1 {
            return Err(Error::InvalidParameter("num_teachers must be >= 1".into()));
        }
        if self.public_size < 1 {
            return Err(Error::InvalidParameter("public_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of [`split`]; index lists refer to rows of the input dataset.
#[derive(Debug, Clone)]
pub struct Split {
    pub teachers: Vec<Dataset>,
    pub public: Dataset,
    pub test: Dataset,
    pub teacher_indices: Vec<Vec<usize>>,
    pub public_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Randomly splits `d` into `k` disjoint teacher shards covering the
/// private fraction, a public set of `public_size` rows and a test set with
/// whatever remains.
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = d.len();
    let n_private = ((spec.private_fraction * n as f64) + 1e-9).floor() as usize;
    let n_private = n_private.min(n);
    if n_private < spec.num_teachers {
        return Err(Error::Sizing(format!(
            "{n_private} private rows cannot fill {} teacher partitions",
            spec.num_teachers
        )));
    }
    if n - n_private < spec.public_size {
        return Err(Error::Sizing(format!(
            "{} public rows requested but only {} remain after the private split",
            spec.public_size,
            n - n_private
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedStream::new(spec.seed).child("split").rng());
    let private = &order[..n_private];
    let public_indices = order[n_private..n_private + spec.public_size].to_vec();
    let test_indices = order[n_private + spec.public_size..].to_vec();

    let k = spec.num_teachers;
    let teacher_indices: Vec<Vec<usize>> = if spec.stratify {
        let mut sorted = private.to_vec();
        let samples = d.samples();
        sorted.sort_by_key(|&i| (samples[i].group, samples[i].label));
        let mut shards = vec![Vec::new(); k];
        for (j, i) in sorted.into_iter().enumerate() {
            shards[j % k].push(i);
        }
        shards
    } else {
        let base = n_private / k;
        let extra = n_private % k;
        let mut shards = Vec::with_capacity(k);
        let mut start = 0;
        for j in 0..k {
            let len = base + usize::from(j < extra);
            shards.push(private[start..start + len].to_vec());
            start += len;
        }
        shards
    };

    Ok(Split {
        teachers: teacher_indices.iter().map(|idx| d.subset(idx)).collect(),
        public: d.subset(&public_indices),
        test: d.subset(&test_indices),
        teacher_indices,
        public_indices,
        test_indices,
    })
}

/// Parameters of the synthetic two-group benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    /// Distance of each group's class clusters from the true boundary.
    pub margins: [f64; 2],
    /// Multiplier applied to each group's feature vectors.
    pub scales: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

/// Two groups of binary-labelled Gaussian points.
///
/// Each sample draws a group and a cluster uniformly, sits at
/// `±margin[g]` along the unit diagonal plus standard normal noise, is
/// labelled by the side of the hyperplane through the origin orthogonal to
/// that diagonal, and is finally multiplied by `scales[g]`.
pub fn synth_two_group(spec: &SynthSpec) -> Result<Dataset> {
    if spec.dim == 0 {
        return Err(Error::InvalidParameter("dim must be >= 1".into()));
    }
    if spec.margins.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(
            "margins must be finite and >= 0".into(),
        ));
    }
    if spec.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(
            "scales must be finite and > 0".into(),
        ));
    }
    let mut rng = SeedStream::new(spec.seed).child("synth").rng();
    let unit = 1.0 / (spec.dim as f64).sqrt();
    let mut samples = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let group = usize::from(rng.random_bool(0.5));
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let offset = side * spec.margins[group] * unit;
        let raw: Vec<f64> = (0..spec.dim)
            .map(|_| offset + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let projection: f64 = raw.iter().sum::<f64>() * unit;
        let label = usize::from(projection > 0.0);
        let scale = spec.scales[group];
        samples.push(Sample {
            features: raw.into_iter().map(|v| v * scale).collect(),
            label,
            group,
        });
    }
    Dataset::new(samples, 2, 2, spec.dim)
}
