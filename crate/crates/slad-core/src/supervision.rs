//! Supervisory-signal machinery: random subspace draws, frozen random
//! transformations into a fixed-width representation, and the scale labels
//! the ranking head is trained to reproduce.
//!
//! Transform parameters are never trained. They are derived entirely from
//! (seed, cardinality, width), so a bank can be rebuilt bit-identically
//! from the three numbers a model file stores, and entries materialize
//! lazily the first time a cardinality is drawn.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureWeights;
use crate::nn::{Activation, Matrix};
use crate::rng;
use crate::{Real, RealMatrix};

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("empty subspace")]
    EmptySubspace,
    #[error("subspace indices must be strictly increasing, got {0:?}")]
    UnsortedIndices(Vec<usize>),
    #[error("subspace index {index} out of range for {d} features")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("feature weights cover {weights} features, instance has {d}")]
    WeightMismatch { weights: usize, d: usize },
    #[error("zero-pad transform undefined for cardinality {nu} > width {h}")]
    AblationInapplicable { nu: usize, h: usize },
    #[error("instance has no features")]
    EmptyInstance,
}

/// Strictly increasing feature indices; cardinality is the length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    indices: Vec<usize>,
}

impl SubspaceSpec {
    pub fn new(indices: Vec<usize>) -> Result<Self, SupervisionError> {
        if indices.is_empty() {
            return Err(SupervisionError::EmptySubspace);
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SupervisionError::UnsortedIndices(indices));
        }
        Ok(SubspaceSpec { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn cardinality(&self) -> usize {
        self.indices.len()
    }
}

/// Uniform cardinality in 1..=d, then that many distinct indices.
pub fn sample_subspace<R: rand_core::RngCore>(d: usize, rng: &mut R) -> SubspaceSpec {
    assert!(d >= 1, "cannot sample a subspace of zero features");
    let nu = 1 + rng::uniform_below(rng, d as u64) as usize;
    SubspaceSpec {
        indices: rng::sample_distinct(rng, d, nu),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Random affine map per cardinality (the default).
    Affine,
    /// Copy the subspace and pad with zeros; only defined for nu <= h.
    ZeroPad,
    /// Frozen two-layer map nu -> h -> h with a leaky rectifier between.
    DeepMlp,
}

/// Frozen per-cardinality parameters.
#[derive(Debug)]
struct BankEntry {
    w1: RealMatrix,
    b1: Vec<Real>,
    /// Second layer, present for the deep variant.
    w2: Option<(RealMatrix, Vec<Real>)>,
}

/// Lazily instantiated family of frozen transforms, one per subspace
/// cardinality, all derived from one seed.
#[derive(Debug)]
pub struct TransformBank {
    kind: TransformKind,
    h: usize,
    seed: u64,
    entries: RwLock<HashMap<usize, Arc<BankEntry>>>,
}

impl Clone for TransformBank {
    fn clone(&self) -> Self {
        TransformBank {
            kind: self.kind,
            h: self.h,
            seed: self.seed,
            entries: RwLock::new(self.entries.read().unwrap().clone()),
        }
    }
}

impl TransformBank {
    pub fn new(kind: TransformKind, h: usize, seed: u64) -> Self {
        assert!(h >= 1, "representation width must be positive");
        TransformBank {
            kind,
            h,
            seed,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Entry parameters are a pure function of (seed, nu, h, kind): draw
    /// order is fixed, so lazy instantiation order cannot change values.
    fn build_entry(&self, nu: usize) -> BankEntry {
        let mut r = rng::stream(self.seed, &[0xBA2C, nu as u64]);
        let bound1 = 1.0 / (nu as f64).sqrt();
        let draw =
            |r: &mut rand_chacha::ChaCha8Rng, count: usize, bound: f64| -> Vec<Real> {
                (0..count)
                    .map(|_| rng::uniform_range(r, -bound, bound))
                    .collect()
            };
        let w1 = Matrix::from_vec(self.h, nu, draw(&mut r, self.h * nu, bound1));
        let b1 = draw(&mut r, self.h, bound1);
        let w2 = match self.kind {
            TransformKind::DeepMlp => {
                let bound2 = 1.0 / (self.h as f64).sqrt();
                let w2 = Matrix::from_vec(self.h, self.h, draw(&mut r, self.h * self.h, bound2));
                let b2 = draw(&mut r, self.h, bound2);
                Some((w2, b2))
            }
            _ => None,
        };
        BankEntry { w1, b1, w2 }
    }

    fn entry(&self, nu: usize) -> Arc<BankEntry> {
        if let Some(e) = self.entries.read().unwrap().get(&nu) {
            return Arc::clone(e);
        }
        let built = Arc::new(self.build_entry(nu));
        let mut map = self.entries.write().unwrap();
        Arc::clone(map.entry(nu).or_insert(built))
    }

    /// Apply the transform for `subspace` to instance `x`, writing the
    /// h-dimensional representation into `out`.
    pub fn transform_into(
        &self,
        x: &[Real],
        subspace: &SubspaceSpec,
        out: &mut [Real],
    ) -> Result<(), SupervisionError> {
        assert_eq!(out.len(), self.h, "output buffer must have width h");
        let nu = subspace.cardinality();
        if let Some(&bad) = subspace.indices.iter().find(|&&i| i >= x.len()) {
            return Err(SupervisionError::IndexOutOfRange {
                index: bad,
                d: x.len(),
            });
        }
        let xs: Vec<Real> = subspace.indices.iter().map(|&i| x[i]).collect();
        match self.kind {
            TransformKind::ZeroPad => {
                if nu > self.h {
                    return Err(SupervisionError::AblationInapplicable { nu, h: self.h });
                }
                out[..nu].copy_from_slice(&xs);
                out[nu..].fill(0.0);
            }
            TransformKind::Affine => {
                let e = self.entry(nu);
                for (row, (o, &b)) in out.iter_mut().zip(&e.b1).enumerate() {
                    let w = e.w1.row(row);
                    *o = b + w.iter().zip(&xs).map(|(&wv, &xv)| wv * xv).sum::<Real>();
                }
            }
            TransformKind::DeepMlp => {
                let e = self.entry(nu);
                let mut hidden = vec![0.0; self.h];
                for (row, (hv, &b)) in hidden.iter_mut().zip(&e.b1).enumerate() {
                    let w = e.w1.row(row);
                    let z = b + w.iter().zip(&xs).map(|(&wv, &xv)| wv * xv).sum::<Real>();
                    *hv = Activation::LeakyRelu.apply(z);
                }
                let (w2, b2) = e.w2.as_ref().expect("deep entry carries a second layer");
                for (row, (o, &b)) in out.iter_mut().zip(b2).enumerate() {
                    let w = w2.row(row);
                    *o = b + w.iter().zip(&hidden).map(|(&wv, &hv)| wv * hv).sum::<Real>();
                }
            }
        }
        Ok(())
    }

    /// Allocating variant of [`transform_into`].
    pub fn transform(
        &self,
        x: &[Real],
        subspace: &SubspaceSpec,
    ) -> Result<Vec<Real>, SupervisionError> {
        let mut out = vec![0.0; self.h];
        self.transform_into(x, subspace, &mut out)?;
        Ok(out)
    }

    /// Instantiate every entry up to max_nu ahead of time. Useful before
    /// scoring in parallel so worker threads only ever take read locks.
    pub fn materialize_up_to(&self, max_nu: usize) {
        if self.kind != TransformKind::ZeroPad {
            for nu in 1..=max_nu {
                self.entry(nu);
            }
        }
    }

    /// Bit-level hash over the frozen parameters for cardinalities
    /// 1..=max_nu (materializing any missing ones). Training must leave
    /// this value untouched.
    pub fn fingerprint(&self, max_nu: usize) -> u64 {
        let mut acc: Vec<f64> = vec![self.h as f64, self.kind as u8 as f64];
        for nu in 1..=max_nu {
            if self.kind == TransformKind::ZeroPad {
                continue;
            }
            let e = self.entry(nu);
            acc.extend_from_slice(e.w1.data());
            acc.extend_from_slice(&e.b1);
            if let Some((w2, b2)) = &e.w2 {
                acc.extend_from_slice(w2.data());
                acc.extend_from_slice(b2);
            }
        }
        rng::hash_f64_slice(&acc)
    }
}

/// Scale label: gamma-scaled weighted subspace size relative to the
/// representation width.
pub fn scale_label(
    subspace: &SubspaceSpec,
    weights: &FeatureWeights,
    h: usize,
    gamma: Real,
) -> Result<Real, SupervisionError> {
    assert!(h >= 1 && gamma > 0.0, "width and gamma must be positive");
    let d = weights.weights.len();
    if let Some(&bad) = subspace.indices.iter().find(|&&i| i >= d) {
        return Err(SupervisionError::IndexOutOfRange { index: bad, d });
    }
    let sum: Real = subspace.indices.iter().map(|&i| weights.weights[i]).sum();
    Ok(gamma * sum / h as Real)
}

/// One supervised sample: c transformed subspace representations of a
/// single instance and their scale labels.
#[derive(Clone, Debug)]
pub struct ScaleSample {
    pub u: RealMatrix,
    pub y: Vec<Real>,
    pub subspaces: Vec<SubspaceSpec>,
    pub instance: usize,
}

/// Transform and label one instance under a fixed subspace group.
pub fn apply_subspace_group(
    x: &[Real],
    instance: usize,
    bank: &TransformBank,
    weights: &FeatureWeights,
    group: &[SubspaceSpec],
    gamma: Real,
) -> Result<ScaleSample, SupervisionError> {
    assert!(!group.is_empty(), "a sample needs at least one subspace row");
    let d = x.len();
    if d == 0 {
        return Err(SupervisionError::EmptyInstance);
    }
    if weights.weights.len() != d {
        return Err(SupervisionError::WeightMismatch {
            weights: weights.weights.len(),
            d,
        });
    }
    let h = bank.width();
    let mut u = RealMatrix::zeros(group.len(), h);
    let mut y = Vec::with_capacity(group.len());
    for (i, s) in group.iter().enumerate() {
        bank.transform_into(x, s, u.row_mut(i))?;
        y.push(scale_label(s, weights, h, gamma)?);
    }
    Ok(ScaleSample {
        u,
        y,
        subspaces: group.to_vec(),
        instance,
    })
}

/// Draw a group of c subspaces, then transform and label `x` under it.
pub fn make_scale_sample<R: rand_core::RngCore>(
    x: &[Real],
    instance: usize,
    bank: &TransformBank,
    weights: &FeatureWeights,
    c: usize,
    gamma: Real,
    rng: &mut R,
) -> Result<ScaleSample, SupervisionError> {
    assert!(c >= 1, "a sample needs at least one subspace row");
    let d = x.len();
    if d == 0 {
        return Err(SupervisionError::EmptyInstance);
    }
    let group: Vec<SubspaceSpec> = (0..c).map(|_| sample_subspace(d, rng)).collect();
    apply_subspace_group(x, instance, bank, weights, &group, gamma)
}

/// The c subspaces a given repeat applies to every instance. One group
/// per repeat, not per instance: every instance in a repeat is labeled
/// under the same subspace list, so the listwise target for that repeat
/// is one fixed distribution the head can converge to. Per-instance
/// groups leave the target jittering around the within-cardinality
/// label spread and the learned ranking never sharpens.
pub fn subspace_group_for_repeat(
    d: usize,
    c: usize,
    seed: u64,
    repeat: usize,
) -> Vec<SubspaceSpec> {
    let mut r = rng::stream(seed, &[0x5109, repeat as u64]);
    (0..c).map(|_| sample_subspace(d, &mut r)).collect()
}

/// The sample a given (repeat, instance) slot of a supervision pass
/// produces. The subspace group depends only on (seed, repeat), so
/// samples can be generated wholesale or regenerated piecemeal with
/// identical results.
pub fn sample_for_slot(
    x: &[Real],
    instance: usize,
    bank: &TransformBank,
    weights: &FeatureWeights,
    c: usize,
    gamma: Real,
    seed: u64,
    repeat: usize,
) -> Result<ScaleSample, SupervisionError> {
    let group = subspace_group_for_repeat(x.len(), c, seed, repeat);
    apply_subspace_group(x, instance, bank, weights, &group, gamma)
}

/// r supervision passes over every instance, repeat-major as in the
/// generation loop of the training algorithm. Each repeat draws its
/// subspace group once and shares it across all instances.
pub fn generate_supervision(
    features: &RealMatrix,
    bank: &TransformBank,
    weights: &FeatureWeights,
    c: usize,
    r: usize,
    gamma: Real,
    seed: u64,
) -> Result<Vec<ScaleSample>, SupervisionError> {
    assert!(r >= 1, "at least one supervision pass required");
    if features.rows() == 0 {
        return Err(SupervisionError::EmptyInstance);
    }
    let mut out = Vec::with_capacity(r * features.rows());
    for repeat in 0..r {
        let group = subspace_group_for_repeat(features.cols(), c, seed, repeat);
        for i in 0..features.rows() {
            out.push(apply_subspace_group(
                features.row(i),
                i,
                bank,
                weights,
                &group,
                gamma,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform_weights(d: usize) -> FeatureWeights {
        FeatureWeights::uniform(d)
    }

    #[test]
    fn scale_label_matches_hand_values() {
        // gamma * nu / h with unit weights.
        let s = SubspaceSpec::new(vec![0, 2, 5, 7]).unwrap();
        let v = scale_label(&s, &uniform_weights(8), 128, 200.0).unwrap();
        assert_relative_eq!(v, 6.25, epsilon = 1e-12);

        let s2 = SubspaceSpec::new(vec![0, 1]).unwrap();
        let w = FeatureWeights {
            weights: vec![0.5, 0.5],
            mode: crate::data::WeightMode::Correlation,
        };
        let v2 = scale_label(&s2, &w, 128, 200.0).unwrap();
        assert_relative_eq!(v2, 1.5625, epsilon = 1e-12);
    }

    #[test]
    fn scale_label_rejects_out_of_range_indices() {
        let s = SubspaceSpec::new(vec![0, 9]).unwrap();
        assert!(matches!(
            scale_label(&s, &uniform_weights(4), 128, 200.0),
            Err(SupervisionError::IndexOutOfRange { index: 9, d: 4 })
        ));
    }

    #[test]
    fn subspace_spec_validates_ordering() {
        assert!(SubspaceSpec::new(vec![]).is_err());
        assert!(SubspaceSpec::new(vec![3, 1]).is_err());
        assert!(SubspaceSpec::new(vec![1, 1]).is_err());
        assert!(SubspaceSpec::new(vec![1, 4, 9]).is_ok());
    }

    #[test]
    fn sampled_cardinality_is_uniform() {
        let mut r = rng::stream(42, &[1]);
        let mut counts = [0u64; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_subspace(4, &mut r).cardinality() - 1] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 3 dof, 99.9th percentile ~ 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn bank_entries_are_bit_identical_across_instances() {
        let b1 = TransformBank::new(TransformKind::Affine, 16, 99);
        let b2 = TransformBank::new(TransformKind::Affine, 16, 99);
        let s = SubspaceSpec::new(vec![0, 1, 2]).unwrap();
        let x = [0.3, -1.2, 0.8, 2.0];
        // Touch cardinalities in different orders first.
        let warm = SubspaceSpec::new(vec![1]).unwrap();
        b2.transform(&x, &warm).unwrap();
        let t1 = b1.transform(&x, &s).unwrap();
        let t2 = b2.transform(&x, &s).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(b1.fingerprint(4), b2.fingerprint(4));
    }

    #[test]
    fn different_seeds_give_different_parameters() {
        let b1 = TransformBank::new(TransformKind::Affine, 8, 1);
        let b2 = TransformBank::new(TransformKind::Affine, 8, 2);
        assert_ne!(b1.fingerprint(3), b2.fingerprint(3));
    }

    #[test]
    fn affine_transform_is_the_documented_linear_map() {
        let bank = TransformBank::new(TransformKind::Affine, 4, 7);
        let s = SubspaceSpec::new(vec![1, 3]).unwrap();
        let x = [9.0, 2.0, -4.0, 0.5];
        let out = bank.transform(&x, &s).unwrap();
        let e = bank.entry(2);
        for row in 0..4 {
            let expect = e.b1[row] + e.w1.get(row, 0) * 2.0 + e.w1.get(row, 1) * 0.5;
            assert_relative_eq!(out[row], expect, epsilon = 1e-15);
        }
        // Weights bounded by 1/sqrt(nu).
        let bound = 1.0 / (2.0f64).sqrt();
        assert!(e.w1.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_pad_copies_and_pads() {
        let bank = TransformBank::new(TransformKind::ZeroPad, 5, 0);
        let s = SubspaceSpec::new(vec![0, 2]).unwrap();
        let out = bank.transform(&[1.0, 2.0, 3.0], &s).unwrap();
        assert_eq!(out, vec![1.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_pad_rejects_wide_subspaces() {
        let bank = TransformBank::new(TransformKind::ZeroPad, 2, 0);
        let s = SubspaceSpec::new(vec![0, 1, 2]).unwrap();
        assert!(matches!(
            bank.transform(&[1.0, 2.0, 3.0], &s),
            Err(SupervisionError::AblationInapplicable { nu: 3, h: 2 })
        ));
    }

    #[test]
    fn deep_transform_differs_from_affine_and_is_deterministic() {
        let affine = TransformBank::new(TransformKind::Affine, 8, 5);
        let deep = TransformBank::new(TransformKind::DeepMlp, 8, 5);
        let s = SubspaceSpec::new(vec![0, 1]).unwrap();
        let x = [1.0, -2.0];
        let a = affine.transform(&x, &s).unwrap();
        let d1 = deep.transform(&x, &s).unwrap();
        let d2 = deep.transform(&x, &s).unwrap();
        assert_eq!(d1, d2);
        assert_ne!(a, d1);
    }

    #[test]
    fn sample_rows_match_their_subspaces() {
        let bank = TransformBank::new(TransformKind::Affine, 16, 3);
        let w = uniform_weights(6);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut r = rng::stream(8, &[0]);
        let sample = make_scale_sample(&x, 0, &bank, &w, 10, 200.0, &mut r).unwrap();
        assert_eq!(sample.u.rows(), 10);
        assert_eq!(sample.u.cols(), 16);
        assert_eq!(sample.y.len(), 10);
        for i in 0..10 {
            let expect = bank.transform(&x, &sample.subspaces[i]).unwrap();
            assert_eq!(sample.u.row(i), expect.as_slice());
            let label = scale_label(&sample.subspaces[i], &w, 16, 200.0).unwrap();
            assert_eq!(sample.y[i], label);
            assert!(label > 0.0);
        }
    }

    #[test]
    fn supervision_covers_every_slot_in_repeat_major_order() {
        let features = RealMatrix::from_vec(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let bank = TransformBank::new(TransformKind::Affine, 4, 1);
        let w = uniform_weights(2);
        let all = generate_supervision(&features, &bank, &w, 3, 4, 200.0, 77).unwrap();
        assert_eq!(all.len(), 12);
        for (k, s) in all.iter().enumerate() {
            assert_eq!(s.instance, k % 3);
        }
    }

    #[test]
    fn identical_instances_under_identical_streams_agree() {
        let bank = TransformBank::new(TransformKind::Affine, 4, 1);
        let w = uniform_weights(2);
        let a = sample_for_slot(&[0.5, -0.5], 0, &bank, &w, 5, 200.0, 10, 2).unwrap();
        let b = sample_for_slot(&[0.5, -0.5], 0, &bank, &w, 5, 200.0, 10, 2).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.u.data(), b.u.data());
        assert_eq!(a.subspaces, b.subspaces);
    }

    #[test]
    fn groups_differ_across_repeats_but_not_instances() {
        let bank = TransformBank::new(TransformKind::Affine, 4, 1);
        let w = uniform_weights(3);
        let x0 = [0.5, -0.5, 1.0];
        let x1 = [2.0, 0.25, -1.5];
        let a = sample_for_slot(&x0, 0, &bank, &w, 5, 200.0, 10, 0).unwrap();
        let b = sample_for_slot(&x0, 0, &bank, &w, 5, 200.0, 10, 1).unwrap();
        let c = sample_for_slot(&x1, 1, &bank, &w, 5, 200.0, 10, 0).unwrap();
        assert_ne!(a.subspaces, b.subspaces);
        // Same repeat, different instance: one shared group, one shared
        // label list, different representations.
        assert_eq!(a.subspaces, c.subspaces);
        assert_eq!(a.y, c.y);
        assert_ne!(a.u.data(), c.u.data());
    }

    #[test]
    fn supervision_shares_labels_within_each_repeat() {
        let features =
            RealMatrix::from_vec(3, 4, (0..12).map(|v| (v as Real * 0.31).cos()).collect());
        let bank = TransformBank::new(TransformKind::Affine, 8, 2);
        let w = uniform_weights(4);
        let all = generate_supervision(&features, &bank, &w, 6, 3, 200.0, 5).unwrap();
        for repeat in 0..3 {
            let base = &all[repeat * 3];
            for i in 1..3 {
                let s = &all[repeat * 3 + i];
                assert_eq!(s.subspaces, base.subspaces);
                assert_eq!(s.y, base.y);
            }
        }
        // And the wholesale path matches the per-slot path bit for bit.
        let lone = sample_for_slot(features.row(2), 2, &bank, &w, 6, 200.0, 5, 1).unwrap();
        assert_eq!(lone.u.data(), all[5].u.data());
        assert_eq!(lone.y, all[5].y);
    }
}
