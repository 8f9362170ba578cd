//! Dataset ingestion and the experimental protocol around it: z-score
//! standardization fit on training rows, the half-inlier train/test split,
//! optional training-set contamination, and the correlation-based feature
//! weights consumed by the labeling function.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::{Real, RealMatrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv structure error in {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("row {row}, column {column}: {message}")]
    BadValue {
        row: usize,
        column: String,
        message: String,
    },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("operation requires labels, dataset has none")]
    LabelsRequired,
    #[error("dataset contains no inliers")]
    NoInliers,
    #[error("contamination rate {0} outside [0, 0.10]")]
    InvalidRate(f64),
    #[error("contamination pool has {0} anomalies; synthesis needs at least 2")]
    InsufficientAnomalies(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// N x D feature matrix with optional binary labels (1 = anomaly).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: RealMatrix,
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: RealMatrix,
        labels: Option<Vec<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(DataError::DimMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        if feature_names.len() != features.cols() {
            return Err(DataError::DimMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
            .unwrap_or(0)
    }

    /// New dataset holding the given rows, labels carried along.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let d = self.d();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: RealMatrix::from_vec(indices.len(), d, data),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Load a CSV with a header row; every column is a feature except the
/// optional label column, which must hold 0/1.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: pstr.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Malformed {
                path: pstr.clone(),
                message: e.to_string(),
            },
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Malformed {
            path: pstr.clone(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();

    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.to_owned()))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(DataError::Malformed {
            path: pstr,
            message: "no feature columns".into(),
        });
    }

    let mut data: Vec<Real> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Malformed {
            path: pstr.clone(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::BadValue {
                row: row_idx + 1,
                column: "<record>".into(),
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        for (col_idx, field) in record.iter().enumerate() {
            if Some(col_idx) == label_idx {
                match field.trim() {
                    "0" => labels.push(0),
                    "1" => labels.push(1),
                    other => {
                        return Err(DataError::BadValue {
                            row: row_idx + 1,
                            column: headers[col_idx].clone(),
                            message: format!("label must be 0 or 1, got {other:?}"),
                        })
                    }
                }
            } else {
                let v: Real = field.trim().parse().map_err(|_| DataError::BadValue {
                    row: row_idx + 1,
                    column: headers[col_idx].clone(),
                    message: format!("not a number: {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::BadValue {
                        row: row_idx + 1,
                        column: headers[col_idx].clone(),
                        message: "non-finite value".into(),
                    });
                }
                data.push(v);
            }
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(DataError::Empty);
    }
    Dataset::new(
        RealMatrix::from_vec(n, d, data),
        label_idx.map(|_| labels),
        feature_names,
    )
}

/// Write a dataset as CSV: feature columns under their names, labels (if
/// any) as a trailing `label` column. Values print in shortest exact
/// form, so [`load_csv`] recovers them bit for bit.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = dataset.feature_names.join(",");
    if dataset.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for i in 0..dataset.n() {
        let mut first = true;
        for v in dataset.features.row(i) {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        if let Some(l) = &dataset.labels {
            out.push_str(&format!(",{}", l[i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Per-feature z-score parameters fit on training rows. Zero-deviation
/// features map to zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self, DataError> {
        let (n, d) = (train.n(), train.d());
        if n == 0 {
            return Err(DataError::Empty);
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(train.features.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as Real;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(train.features.row(i)).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        // Same guard as compute_feature_weights: an exactly constant column
        // is zero-deviation by definition, not by arithmetic.
        let constant = column_constancy(&train.features);
        let std = var
            .iter()
            .zip(&constant)
            .map(|(&s, &is_const)| {
                if is_const {
                    0.0
                } else {
                    (s / n as Real).sqrt()
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn transform_row(&self, row: &[Real], out: &mut [Real]) {
        for ((o, &v), (&m, &s)) in out
            .iter_mut()
            .zip(row)
            .zip(self.mean.iter().zip(&self.std))
        {
            *o = if s == 0.0 { 0.0 } else { (v - m) / s };
        }
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        if ds.d() != self.mean.len() {
            return Err(DataError::DimMismatch(format!(
                "dataset has {} features, standardizer was fit on {}",
                ds.d(),
                self.mean.len()
            )));
        }
        let mut out = ds.clone();
        for i in 0..ds.n() {
            let src = ds.features.row(i).to_vec();
            self.transform_row(&src, out.features.row_mut(i));
        }
        Ok(out)
    }
}

/// Fit on `train`, return (standardized train, standardized others, fitted
/// parameters).
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardizer), DataError> {
    let s = Standardizer::fit(train)?;
    let t = s.transform(train)?;
    let o = others
        .iter()
        .map(|d| s.transform(d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((t, o, s))
}

/// Index split: half the inliers train, everything else tests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Training set = floor(half) of the inliers, chosen by seeded shuffle;
/// test set = remaining inliers plus every anomaly.
pub fn split_protocol(dataset: &Dataset, seed: u64) -> Result<SplitSpec, DataError> {
    let labels = dataset.labels.as_ref().ok_or(DataError::LabelsRequired)?;
    let mut inliers: Vec<usize> = (0..dataset.n()).filter(|&i| labels[i] == 0).collect();
    let anomalies: Vec<usize> = (0..dataset.n()).filter(|&i| labels[i] == 1).collect();
    if inliers.is_empty() {
        return Err(DataError::NoInliers);
    }
    let mut r = rng::stream(seed, &[0x5B11]);
    rng::shuffle(&mut r, &mut inliers);
    let n_train = inliers.len() / 2;
    let mut train: Vec<usize> = inliers[..n_train].to_vec();
    let mut test: Vec<usize> = inliers[n_train..].to_vec();
    test.extend_from_slice(&anomalies);
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec { train, test, seed })
}

/// Result of contamination: a (possibly row-augmented) dataset, the
/// adjusted split over it, and how many rows were synthesized.
#[derive(Clone, Debug)]
pub struct ContaminationOutcome {
    pub dataset: Dataset,
    pub spec: SplitSpec,
    pub synthesized: usize,
}

/// Move anomalies into the training set until its anomaly fraction reaches
/// `rate`. Half the anomalies (rounded up) stay reserved for testing; the
/// rest form the pool. When the pool runs dry, new anomalies are
/// synthesized by swapping ceil(5% of D) feature positions (at least one)
/// between two pool members. rate == 0 returns the split untouched.
pub fn contaminate(
    dataset: &Dataset,
    spec: &SplitSpec,
    rate: f64,
    seed: u64,
) -> Result<ContaminationOutcome, DataError> {
    if !(0.0..=0.10).contains(&rate) {
        return Err(DataError::InvalidRate(rate));
    }
    if rate == 0.0 {
        return Ok(ContaminationOutcome {
            dataset: dataset.clone(),
            spec: spec.clone(),
            synthesized: 0,
        });
    }
    let labels = dataset.labels.as_ref().ok_or(DataError::LabelsRequired)?;
    let mut anomalies: Vec<usize> = spec
        .test
        .iter()
        .copied()
        .filter(|&i| labels[i] == 1)
        .collect();
    let test_inliers: Vec<usize> = spec
        .test
        .iter()
        .copied()
        .filter(|&i| labels[i] == 0)
        .collect();

    let mut r = rng::stream(seed, &[0xC047]);
    rng::shuffle(&mut r, &mut anomalies);
    let n_reserved = anomalies.len().div_ceil(2);
    let reserved = &anomalies[..n_reserved];
    let pool = &anomalies[n_reserved..];

    let n_train_inliers = spec.train.len();
    let needed = (rate * n_train_inliers as f64 / (1.0 - rate)).round() as usize;
    let from_pool = needed.min(pool.len());
    let shortfall = needed - from_pool;

    let d = dataset.d();
    let mut out = dataset.clone();
    let mut synth_indices = Vec::with_capacity(shortfall);
    if shortfall > 0 {
        if pool.len() < 2 {
            return Err(DataError::InsufficientAnomalies(pool.len()));
        }
        let k = ((0.05 * d as f64).ceil() as usize).max(1);
        let mut rows = out.features.data().to_vec();
        let mut labs = out.labels.clone().unwrap();
        for _ in 0..shortfall {
            let a = pool[rng::uniform_below(&mut r, pool.len() as u64) as usize];
            let b = loop {
                let cand = pool[rng::uniform_below(&mut r, pool.len() as u64) as usize];
                if cand != a {
                    break cand;
                }
            };
            let mut child = dataset.features.row(a).to_vec();
            for &pos in &rng::sample_distinct(&mut r, d, k) {
                child[pos] = dataset.features.get(b, pos);
            }
            synth_indices.push(labs.len());
            rows.extend_from_slice(&child);
            labs.push(1);
        }
        let n_total = labs.len();
        out = Dataset::new(
            RealMatrix::from_vec(n_total, d, rows),
            Some(labs),
            dataset.feature_names.clone(),
        )?;
    }

    let mut train = spec.train.clone();
    train.extend_from_slice(&pool[..from_pool]);
    train.extend_from_slice(&synth_indices);
    train.sort_unstable();
    let mut test = test_inliers;
    test.extend_from_slice(reserved);
    test.sort_unstable();

    Ok(ContaminationOutcome {
        dataset: out,
        spec: SplitSpec {
            train,
            test,
            seed: spec.seed,
        },
        synthesized: shortfall,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Correlation,
    Uniform,
}

/// Per-feature weights for the labeling function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub weights: Vec<Real>,
    pub mode: WeightMode,
}

impl FeatureWeights {
    pub fn uniform(d: usize) -> Self {
        FeatureWeights {
            weights: vec![1.0; d],
            mode: WeightMode::Uniform,
        }
    }
}

// True for columns whose values are all bit-identical. min/max would also
// work but NaN poisons those comparisons silently.
fn column_constancy(features: &RealMatrix) -> Vec<bool> {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 {
        return vec![true; d];
    }
    let first = features.row(0).to_vec();
    let mut constant = vec![true; d];
    for i in 1..n {
        for ((c, &v), &f) in constant.iter_mut().zip(features.row(i)).zip(&first) {
            *c &= v.to_bits() == f.to_bits();
        }
    }
    constant
}

/// Mean absolute Pearson correlation of each feature against all features
/// (self term included), switching to uniform weights at high dimension
/// where the correlation pass would dominate runtime.
pub fn compute_feature_weights(
    features: &RealMatrix,
    delta: usize,
) -> Result<FeatureWeights, DataError> {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 {
        return Err(DataError::Empty);
    }
    if d >= delta {
        return Ok(FeatureWeights::uniform(d));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as Real;
    }
    // cov[k][k'] accumulated in one pass; correlations derived after.
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (&v, &m)) in centered.iter_mut().zip(features.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for k in 0..d {
            let ck = centered[k];
            for kp in k..d {
                cov[k * d + kp] += ck * centered[kp];
            }
        }
    }
    // A constant column must read as exactly zero deviation; the mean's
    // rounding would otherwise leave a phantom variance of ~1e-30 whose
    // self-correlation is 1.
    let constant = column_constancy(features);
    let std: Vec<Real> = (0..d)
        .map(|k| {
            if constant[k] {
                0.0
            } else {
                (cov[k * d + k] / n as Real).sqrt()
            }
        })
        .collect();
    let mut weights = vec![0.0; d];
    for k in 0..d {
        let mut acc = 0.0;
        for kp in 0..d {
            let c = if kp >= k { cov[k * d + kp] } else { cov[kp * d + k] };
            // Zero-deviation features correlate with nothing, themselves
            // included.
            if std[k] > 0.0 && std[kp] > 0.0 {
                acc += (c / (n as Real * std[k] * std[kp])).abs();
            }
        }
        weights[k] = acc / d as Real;
    }
    Ok(FeatureWeights {
        weights,
        mode: WeightMode::Correlation,
    })
}
