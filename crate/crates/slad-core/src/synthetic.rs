//! Seeded synthetic data with planted outliers, so the end-to-end
//! pipeline can be exercised without shipping datasets: inliers follow a
//! correlated Gaussian in two informative dimensions, outliers fall
//! uniformly in an expanded box there, and everyone shares standard
//! normal noise dimensions.

use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::rng;
use crate::{Real, RealMatrix};

/// Correlation of the two informative dimensions for inliers.
const INLIER_CORRELATION: f64 = 0.8;
/// Outliers land anywhere in [-BOX, BOX]^2 on the informative pair.
const OUTLIER_BOX: f64 = 8.0;
const NOISE_DIMS: usize = 8;
const OUTLIER_FRACTION: f64 = 0.05;

/// Generate `n` rows (5% planted outliers, at least one) with labels.
/// Inliers first, outliers after; the evaluation split reshuffles anyway.
pub fn make_synthetic(n: usize, seed: u64) -> Dataset {
    assert!(n >= 20, "too small to plant a 5% outlier fraction");
    let n_outlier = ((n as f64 * OUTLIER_FRACTION).round() as usize).max(1);
    let n_inlier = n - n_outlier;
    let d = 2 + NOISE_DIMS;
    let mut r = rng::stream(seed, &[0x5A9D]);
    let mut normal = || -> Real { StandardNormal.sample(&mut r) };
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n_inlier {
        let a = normal();
        let b = normal();
        data.push(a);
        // Unit variance with the chosen correlation against the first dim.
        data.push(INLIER_CORRELATION * a + (1.0 - INLIER_CORRELATION * INLIER_CORRELATION).sqrt() * b);
        for _ in 0..NOISE_DIMS {
            data.push(normal());
        }
    }
    for _ in 0..n_outlier {
        data.push(rng::uniform_range(&mut r, -OUTLIER_BOX, OUTLIER_BOX));
        data.push(rng::uniform_range(&mut r, -OUTLIER_BOX, OUTLIER_BOX));
        for _ in 0..NOISE_DIMS {
            data.push(StandardNormal.sample(&mut r));
        }
    }
    let mut labels = vec![0u8; n_inlier];
    labels.extend(std::iter::repeat(1).take(n_outlier));
    Dataset::new(
        RealMatrix::from_vec(n, d, data),
        Some(labels),
        (0..d).map(|i| format!("f{i}")).collect(),
    )
    .expect("dimensions are consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_shape() {
        let ds = make_synthetic(2000, 1);
        assert_eq!(ds.n(), 2000);
        assert_eq!(ds.d(), 10);
        assert_eq!(ds.anomaly_count(), 100);
        assert!(ds.features.is_finite());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = make_synthetic(200, 7);
        let b = make_synthetic(200, 7);
        let c = make_synthetic(200, 8);
        assert_eq!(a.features.data(), b.features.data());
        assert_ne!(a.features.data(), c.features.data());
    }

    #[test]
    fn inlier_informative_dims_carry_the_designed_correlation() {
        let ds = make_synthetic(4000, 3);
        let labels = ds.labels.as_ref().unwrap();
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut m) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        for i in 0..ds.n() {
            if labels[i] == 1 {
                continue;
            }
            let row = ds.features.row(i);
            let (x, y) = (row[0], row[1]);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            m += 1;
        }
        let mf = m as f64;
        let cov = sxy / mf - (sx / mf) * (sy / mf);
        let vx = sxx / mf - (sx / mf) * (sx / mf);
        let vy = syy / mf - (sy / mf) * (sy / mf);
        let corr = cov / (vx * vy).sqrt();
        assert!((corr - 0.8).abs() < 0.05, "corr = {corr}");
        assert!((vx - 1.0).abs() < 0.15 && (vy - 1.0).abs() < 0.15);
    }

    #[test]
    fn outliers_fill_the_expanded_box() {
        let ds = make_synthetic(4000, 4);
        let labels = ds.labels.as_ref().unwrap();
        let mut widest = 0.0f64;
        for i in 0..ds.n() {
            if labels[i] == 0 {
                continue;
            }
            let row = ds.features.row(i);
            assert!(row[0].abs() <= 8.0 && row[1].abs() <= 8.0);
            widest = widest.max(row[0].abs()).max(row[1].abs());
        }
        // 200 uniform draws essentially always reach past 4 sigma.
        assert!(widest > 6.0, "widest outlier coordinate {widest}");
    }
}
