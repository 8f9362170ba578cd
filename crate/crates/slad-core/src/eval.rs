//! Ranking metrics, per-class loss reporting, and the split/train/score
//! protocol used for every headline number.
//!
//! Both metrics are computed from integer pair counts and per-rank
//! rational terms so that a brute-force reference implementation produces
//! bit-identical values; the property tests hold them to exact equality.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::data::{contaminate, split_protocol, DataError, Dataset};
use crate::model::{ModelError, SladModel, TrainConfig};
use crate::rng;
use crate::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need both classes present to rank anomalies against inliers")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("no scores given")]
    Empty,
    #[error("labels are required for this report")]
    LabelsRequired,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

fn validate_inputs(scores: &[Real], labels: &[u8]) -> Result<(usize, usize), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Probability that a uniformly chosen anomaly outscores a uniformly
/// chosen inlier, ties counting one half. Computed via midranks with an
/// integer numerator: doubled rank sums cannot accumulate rounding.
pub fn auc_roc(scores: &[Real], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, neg) = validate_inputs(scores, labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j), doubled to stay integer.
        let doubled = (i + j + 1) as u128;
        for &k in &idx[i..j] {
            if labels[k] == 1 {
                doubled_rank_sum += doubled;
            }
        }
        i = j;
    }
    let two_u = doubled_rank_sum - (pos as u128) * (pos as u128 + 1);
    Ok(two_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision: precision accumulated at each anomaly's rank, ranks
/// ordered by descending score with index as the deterministic tiebreak.
pub fn auc_pr(scores: &[Real], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, _) = validate_inputs(scores, labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut tp = 0u64;
    let mut sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub n_inliers: usize,
    pub n_anomalies: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

pub fn evaluate_scores(
    scores: &[Real],
    labels: &[u8],
    seed: u64,
    config: &TrainConfig,
) -> Result<MetricReport, EvalError> {
    let (pos, neg) = validate_inputs(scores, labels)?;
    Ok(MetricReport {
        auc_roc: auc_roc(scores, labels)?,
        auc_pr: auc_pr(scores, labels)?,
        n_inliers: neg,
        n_anomalies: pos,
        seed,
        config: config.clone(),
    })
}

/// min, lower quartile, median, upper quartile, max with linear
/// interpolation between order statistics.
fn quartiles(values: &[f64]) -> [f64; 5] {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let at = |frac: f64| -> f64 {
        let pos = frac * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
}

#[derive(Clone, Debug, Serialize)]
pub struct LossRow {
    pub epoch: usize,
    pub class: String,
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LossReport {
    pub rows: Vec<LossRow>,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,class,q0,q1,q2,q3,q4\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.class, r.q0, r.q1, r.q2, r.q3, r.q4
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| EvalError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Train on `train` while measuring, after every epoch, the distribution
/// of per-sample losses (score divided by draw count) over `test`,
/// separately for inliers and anomalies. The same score seed is used each
/// epoch so the curves are comparable. Costly: scores the whole test set
/// once per epoch.
pub fn loss_distribution_report(
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    score_seed: u64,
) -> Result<(SladModel, LossReport), EvalError> {
    let labels = test.labels.as_ref().ok_or(EvalError::LabelsRequired)?;
    let mut report = LossReport::default();
    let mut epoch_err = None;
    let model = SladModel::train_with_observer(train, config, |epoch, _, m| {
        if epoch_err.is_some() {
            return;
        }
        match m.score_batch(&test.features, score_seed) {
            Ok(scores) => {
                let r = m.config().r as f64;
                for (class, wanted) in [("inlier", 0u8), ("anomaly", 1u8)] {
                    let losses: Vec<f64> = scores
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == wanted)
                        .map(|(&s, _)| s / r)
                        .collect();
                    if losses.is_empty() {
                        continue;
                    }
                    let q = quartiles(&losses);
                    report.rows.push(LossRow {
                        epoch,
                        class: class.to_string(),
                        q0: q[0],
                        q1: q[1],
                        q2: q[2],
                        q3: q[3],
                        q4: q[4],
                    });
                }
            }
            Err(e) => epoch_err = Some(e),
        }
    })?;
    if let Some(e) = epoch_err {
        return Err(e.into());
    }
    Ok((model, report))
}

/// Write scores as `index,score` rows. Scores print in shortest exact
/// form, so identical score vectors yield byte-identical files.
pub fn write_scores_csv(scores: &[Real], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::from("index,score\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    fs::write(path, out).map_err(|e| EvalError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Read a file written by [`write_scores_csv`].
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<Real>, EvalError> {
    let path = path.as_ref();
    let bad = |message: String| EvalError::File {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("index,score") => {}
        other => return Err(bad(format!("expected index,score header, got {other:?}"))),
    }
    let mut scores = Vec::new();
    for (row, line) in lines.enumerate() {
        let (idx, val) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("row {}: missing comma", row + 1)))?;
        if idx.parse::<usize>() != Ok(row) {
            return Err(bad(format!("row {}: index column holds {idx}", row + 1)));
        }
        let v: f64 = val
            .parse()
            .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
        scores.push(v);
    }
    Ok(scores)
}

/// One full protocol run: seeded split (half the inliers train), optional
/// training-set contamination, train, score the test rows, evaluate.
pub fn run_protocol(
    dataset: &Dataset,
    config: &TrainConfig,
    run_seed: u64,
    contamination_rate: f64,
) -> Result<MetricReport, EvalError> {
    run_protocol_scored(dataset, config, run_seed, contamination_rate).map(|(r, _, _)| r)
}

/// `run_protocol`, additionally handing back the test-split scores and
/// labels for callers that need per-instance values.
pub fn run_protocol_scored(
    dataset: &Dataset,
    config: &TrainConfig,
    run_seed: u64,
    contamination_rate: f64,
) -> Result<(MetricReport, Vec<f64>, Vec<u8>), EvalError> {
    let spec = split_protocol(dataset, rng::derive_seed(run_seed, &[0x3917]))?;
    let outcome = contaminate(
        dataset,
        &spec,
        contamination_rate,
        rng::derive_seed(run_seed, &[0xC0A7]),
    )?;
    let train_set = outcome.dataset.select_rows(&outcome.spec.train);
    let test_set = outcome.dataset.select_rows(&outcome.spec.test);
    let mut cfg = config.clone();
    cfg.seed = run_seed;
    let model = SladModel::train(&train_set, &cfg)?;
    let scores = model.score_batch(&test_set.features, rng::derive_seed(run_seed, &[0x5C02]))?;
    let labels = test_set
        .labels
        .clone()
        .expect("protocol split requires labels");
    let report = evaluate_scores(&scores, &labels, run_seed, &cfg)?;
    Ok((report, scores, labels))
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiSeedReport {
    pub runs: Vec<MetricReport>,
    pub mean_auc_roc: f64,
    pub std_auc_roc: f64,
    pub mean_auc_pr: f64,
    pub std_auc_pr: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Independent protocol runs with seeds base, base+1, ... and their
/// sample mean and deviation.
pub fn multi_seed_protocol(
    dataset: &Dataset,
    config: &TrainConfig,
    base_seed: u64,
    runs: usize,
    contamination_rate: f64,
) -> Result<MultiSeedReport, EvalError> {
    assert!(runs >= 1, "need at least one run");
    let mut reports = Vec::with_capacity(runs);
    for k in 0..runs {
        reports.push(run_protocol(
            dataset,
            config,
            base_seed + k as u64,
            contamination_rate,
        )?);
    }
    let rocs: Vec<f64> = reports.iter().map(|r| r.auc_roc).collect();
    let prs: Vec<f64> = reports.iter().map(|r| r.auc_pr).collect();
    let (mean_auc_roc, std_auc_roc) = mean_std(&rocs);
    let (mean_auc_pr, std_auc_pr) = mean_std(&prs);
    Ok(MultiSeedReport {
        runs: reports,
        mean_auc_roc,
        std_auc_roc,
        mean_auc_pr,
        std_auc_pr,
    })
}
