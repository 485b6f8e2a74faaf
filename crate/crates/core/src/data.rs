//! EEG segment datasets: CSV ingestion, per-job label mapping, stratified
//! splitting, standardisation and a synthetic stand-in for offline runs.
//!
//! The CSV layout is the one published with the Epileptic Seizure
//! Recognition data: a header line, then per row an identifier, 178 signal
//! values `X1..X178` and an integer label `y` in `1..=5`. Labels map to the
//! recording sets as `5 -> Z`, `4 -> O`, `3 -> N`, `2 -> D`, `1 -> S`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SIGNAL_LENGTH;
use crate::tensor::{fill_normal, seeded_rng, Tensor};

/// Five-class names in label order.
pub const FIVE_CLASS_NAMES: [&str; 5] = ["Z", "O", "N", "D", "S"];
pub const BINARY_CLASS_NAMES: [&str; 2] = ["healthy", "seizure"];

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Job {
    /// Healthy (Z, O) against ictal (S).
    Binary,
    /// All five recording states.
    FiveClass,
}

impl Job {
    pub fn num_classes(self) -> usize {
        match self {
            Job::Binary => 2,
            Job::FiveClass => 5,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Job::Binary => &BINARY_CLASS_NAMES,
            Job::FiveClass => &FIVE_CLASS_NAMES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// CSV `y` code written for a class of this job. Binary classes are
    /// written as Z (healthy) and S (seizure) so that re-reading the file
    /// and re-applying the mapping is lossless.
    pub fn csv_code(self, class: usize) -> u8 {
        match (self, class) {
            (Job::Binary, 0) => 5,
            (Job::Binary, _) => 1,
            (Job::FiveClass, c) => 5 - c as u8,
        }
    }
}

impl FromStr for Job {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "job1" => Ok(Job::Binary),
            "multi" | "five-class" | "fiveclass" | "job2" => Ok(Job::FiveClass),
            other => Err(Error::InvalidParameter(format!(
                "unknown job '{other}' (expected 'binary' or 'multi')"
            ))),
        }
    }
}

impl fmt::Display for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Job::Binary => "binary",
            Job::FiveClass => "multi",
        })
    }
}

/// Per-feature mean and (floored) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `[len, signal_length]` samples.
    pub features: Vec<f64>,
    pub signal_length: usize,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Row identifiers carried through from the source file.
    pub ids: Vec<String>,
    pub stats: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        signal_length: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
        ids: Vec<String>,
    ) -> Result<Self> {
        if signal_length == 0 || features.len() != labels.len() * signal_length {
            return Err(Error::InvalidInput(format!(
                "{} feature values do not form {} rows of length {signal_length}",
                features.len(),
                labels.len()
            )));
        }
        if ids.len() != labels.len() {
            return Err(Error::InvalidInput(
                "one identifier per row is required".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidLabel(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features must be finite".into()));
        }
        Ok(Self {
            features,
            signal_length,
            labels,
            class_names,
            ids,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.signal_length..(i + 1) * self.signal_length]
    }

    /// Sample `i` as a `[1, L]` tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        Tensor::from_vec(&[1, self.signal_length], self.row(i).to_vec())
            .expect("row length is positive")
    }

    /// Features as an `[n, L]` tensor; fails for an empty dataset.
    pub fn features_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&[self.len(), self.signal_length], self.features.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.signal_length);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            signal_length: self.signal_length,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            stats: self.stats.clone(),
        }
    }

    /// Applies `(x - mean) / std` per feature and records the stats.
    pub fn apply_stats(&self, stats: &FeatureStats) -> Result<Self> {
        if stats.mean.len() != self.signal_length || stats.std.len() != self.signal_length {
            return Err(Error::ShapeMismatch(format!(
                "feature stats cover {} features, data has {}",
                stats.mean.len(),
                self.signal_length
            )));
        }
        let mut out = self.clone();
        for row in out.features.chunks_mut(self.signal_length) {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
        out.stats = Some(stats.clone());
        Ok(out)
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn parse_signal(record: &csv::StringRecord, line: u64) -> Result<Vec<f64>> {
    (1..=SIGNAL_LENGTH)
        .map(|col| {
            let field = record[col].trim();
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(
                    line,
                    format!("column {}: '{field}' is not a finite number", col + 1),
                )),
            }
        })
        .collect()
}

/// Reads a labelled CSV in the five-class labelling.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let expected = SIGNAL_LENGTH + 2;
    let header_len = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .len();
    if header_len != expected {
        return Err(parse_error(
            1,
            format!("header has {header_len} columns, expected {expected}"),
        ));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected {
            return Err(parse_error(
                line,
                format!("{} columns, expected {expected}", record.len()),
            ));
        }
        features.extend(parse_signal(&record, line)?);
        let y = record[expected - 1].trim();
        let code: u8 = y
            .parse()
            .map_err(|_| parse_error(line, format!("label '{y}' is not an integer")))?;
        if !(1..=5).contains(&code) {
            return Err(parse_error(line, format!("label {code} outside 1..5")));
        }
        labels.push(5 - code as usize);
        ids.push(record[0].to_string());
    }
    Dataset::new(
        features,
        SIGNAL_LENGTH,
        labels,
        Job::FiveClass.class_names(),
        ids,
    )
}

/// Identifiers and `[n, 178]` signal rows of a CSV without a label column.
pub fn load_unlabeled_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let expected = SIGNAL_LENGTH + 1;
    let header_len = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .len();
    if header_len != expected {
        return Err(parse_error(
            1,
            format!("header has {header_len} columns, expected {expected}"),
        ));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| parse_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected {
            return Err(parse_error(
                line,
                format!("{} columns, expected {expected}", record.len()),
            ));
        }
        rows.push(parse_signal(&record, line)?);
        ids.push(record[0].to_string());
    }
    Ok((ids, rows))
}

/// Writes `d` in the labelled CSV layout, encoding labels for `job`.
/// Values use the shortest representation that parses back to the same
/// `f64`.
pub fn write_csv(d: &Dataset, job: Job, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec![String::new()];
    header.extend((1..=d.signal_length).map(|i| format!("X{i}")));
    header.push("y".into());
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(&header).map_err(io)?;
    for i in 0..d.len() {
        let mut rec = Vec::with_capacity(d.signal_length + 2);
        rec.push(d.ids[i].clone());
        rec.extend(d.row(i).iter().map(|v| v.to_string()));
        rec.push(job.csv_code(d.labels[i]).to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Relabels a five-class dataset for `job`. The binary job keeps Z and O as
/// `healthy` and S as `seizure`; N and D rows are dropped.
pub fn map_labels_for_job(d: &Dataset, job: Job) -> Result<Dataset> {
    if d.class_names != Job::FiveClass.class_names() {
        return Err(Error::InvalidParameter(format!(
            "label mapping needs the five-class labelling, got classes {:?}",
            d.class_names
        )));
    }
    match job {
        Job::FiveClass => Ok(d.clone()),
        Job::Binary => {
            let keep: Vec<usize> = (0..d.len())
                .filter(|&i| matches!(d.labels[i], 0 | 1 | 4))
                .collect();
            let mut out = d.subset(&keep);
            for l in out.labels.iter_mut() {
                *l = usize::from(*l == 4);
            }
            out.class_names = Job::Binary.class_names();
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(
        train_fraction: f64,
        val_fraction: f64,
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let s = Self {
            train_fraction,
            val_fraction,
            test_fraction,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// 76 / 12 / 12.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_fraction: 0.76,
            val_fraction: 0.12,
            test_fraction: 0.12,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| x.is_nan() || x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must be positive and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

/// Row indices of the train, validation and test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified partition: each class is shuffled with its own seeded stream
/// and cut into `floor(train * n_c)`, `floor(val * n_c)` and the remainder.
/// Partitions list rows in ascending source order.
pub fn split_indices(d: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..d.num_classes() {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == class).collect();
        let n = idx.len();
        let n_train = (spec.train_fraction * n as f64 + 1e-9).floor() as usize;
        let n_val = (spec.val_fraction * n as f64 + 1e-9).floor() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::Stratification(format!(
                "class '{}' has {n} samples, too few for every partition",
                d.class_names[class]
            )));
        }
        let mut rng = seeded_rng(spec.seed, class as u64);
        idx.shuffle(&mut rng);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(d, spec)?;
    Ok((
        d.subset(&idx.train),
        d.subset(&idx.val),
        d.subset(&idx.test),
    ))
}

/// Per-feature mean and population standard deviation of `d`, with the
/// deviation floored at `1e-8`.
pub fn feature_stats(d: &Dataset) -> Result<FeatureStats> {
    if d.is_empty() {
        return Err(Error::InvalidInput(
            "cannot compute statistics of an empty dataset".into(),
        ));
    }
    let n = d.len() as f64;
    let l = d.signal_length;
    let mut mean = vec![0.0; l];
    for row in d.features.chunks(l) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; l];
    for row in d.features.chunks(l) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / n).sqrt().max(STD_FLOOR))
        .collect();
    Ok(FeatureStats { mean, std })
}

/// Fits statistics on `train` only and applies them to every dataset.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let stats = feature_stats(train)?;
    let t = train.apply_stats(&stats)?;
    let rest = others
        .iter()
        .map(|d| d.apply_stats(&stats))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, rest))
}

/// Noise level of the synthetic generator; adjacent class amplitudes differ
/// by `3 * SYNTH_NOISE_STD`.
pub const SYNTH_NOISE_STD: f64 = 0.25;

/// Seeded surrogate data. Class `c` is a sinusoid with amplitude
/// `1 + 0.75 c` and `3 + 2 c` cycles per segment, random phase, plus
/// Gaussian noise of standard deviation 0.25.
pub fn synth_generate(seed: u64, n_per_class: usize, num_classes: usize) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidParameter("n_per_class must be >= 1".into()));
    }
    let job = match num_classes {
        2 => Job::Binary,
        5 => Job::FiveClass,
        n => {
            return Err(Error::InvalidParameter(format!(
                "synthetic data supports 2 or 5 classes, got {n}"
            )))
        }
    };
    let l = SIGNAL_LENGTH;
    let mut rng = seeded_rng(seed, 0);
    let mut noise = vec![0.0; l];
    let mut features = Vec::with_capacity(num_classes * n_per_class * l);
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for i in 0..n_per_class {
        for c in 0..num_classes {
            let amplitude = 1.0 + 3.0 * SYNTH_NOISE_STD * c as f64;
            let cycles = 3.0 + 2.0 * c as f64;
            let phase = rand::Rng::random::<f64>(&mut rng) * std::f64::consts::TAU;
            fill_normal(&mut rng, &mut noise, 0.0, SYNTH_NOISE_STD);
            features.extend(noise.iter().enumerate().map(|(t, e)| {
                amplitude * (std::f64::consts::TAU * cycles * t as f64 / l as f64 + phase).sin() + e
            }));
            labels.push(c);
            ids.push(format!("synth.{c}.{i}"));
        }
    }
    Dataset::new(features, l, labels, job.class_names(), ids)
}
