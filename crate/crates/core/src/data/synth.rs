use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::rng::RngStream;

/// Per-coordinate noise std of every blob.
pub const BLOB_STD: f64 = 0.05;

/// Spherical Gaussian blobs, one per class, clamped to `[0, 1]`.
///
/// Class `k` is centred at `0.5 ± a·e_{k mod d}` (sign flips every `d`
/// classes) with `a = separation·BLOB_STD/√2`, so two classes on different
/// axes are `separation` noise standard deviations apart. Labels cycle
/// through the classes; `separation = 0` makes every class identical.
pub fn synth_gaussian_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if n == 0 || d == 0 || classes == 0 {
        return Err(Error::invalid("blobs need n, d and classes >= 1"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be >= 0, got {separation}")));
    }
    let offset = separation * BLOB_STD / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let axis = k % d;
        let sign = if (k / d) % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..d {
            let centre = 0.5 + if j == axis { sign * offset } else { 0.0 };
            data.push((centre + BLOB_STD * rng.std_normal()).clamp(0.0, 1.0));
        }
        labels.push(k);
    }
    Dataset::new(RealMatrix::from_vec(n, d, data)?, labels, classes, SplitTag::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_gaussian_blobs(200, 3, 4, 4.0, &mut RngStream::new(1, 6)).unwrap();
        let b = synth_gaussian_blobs(200, 3, 4, 4.0, &mut RngStream::new(1, 6)).unwrap();
        assert_eq!(a, b);
        assert!(a.inputs().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.class_balance(), vec![0.25; 4]);
    }

    #[test]
    fn zero_separation_makes_classes_indistinguishable() {
        let d = synth_gaussian_blobs(40_000, 2, 2, 0.0, &mut RngStream::new(2, 6)).unwrap();
        let mean = |k: usize| {
            let rows: Vec<&[f64]> = (0..d.len())
                .filter(|&i| d.labels()[i] == k)
                .map(|i| d.inputs().row(i))
                .collect();
            rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64
        };
        // both class means sit at the same centre within a few standard errors
        assert!((mean(0) - mean(1)).abs() < 5.0 * BLOB_STD * (2.0 / 20_000.0f64).sqrt());
    }

    #[test]
    fn rejects_empty_shapes() {
        assert!(synth_gaussian_blobs(0, 2, 2, 1.0, &mut RngStream::new(0, 0)).is_err());
        assert!(synth_gaussian_blobs(5, 2, 2, -1.0, &mut RngStream::new(0, 0)).is_err());
    }
}
