//! Datasets: an immutable input matrix with integer labels.
//!
//! Loaders for MNIST IDX files and delimited UCI-style tables live in the
//! submodules, along with a Gaussian-blob generator for synthetic checks.
//! Every loader produces features in `[0, 1]`.

mod mnist;
mod synth;
mod tabular;

pub use mnist::{binarize_mnist, load_mnist_idx, load_mnist_idx_split, read_idx_images, read_idx_labels, IdxImages, MNIST_TRAIN_SIZE};
pub use synth::{synth_gaussian_blobs, BLOB_STD};
pub use tabular::{load_csv, ColumnKind, CsvSchema};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: RealMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    split: SplitTag,
}

/// A train split and the matching held-out test split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(
        inputs: RealMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "Dataset::new",
                left: format!("{} input rows", inputs.rows()),
                right: format!("{} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(v) = inputs.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("input value {v} outside [0, 1]")));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn inputs(&self) -> &RealMatrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
        }
    }

    /// First `n_train` rows become the train split, the rest the test split.
    pub fn split_at(&self, n_train: usize) -> Result<TrainTest> {
        if n_train > self.len() {
            return Err(Error::invalid(format!(
                "cannot take {n_train} training rows from {}",
                self.len()
            )));
        }
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        Ok(TrainTest {
            train: self.subset(&train, SplitTag::Train),
            test: self.subset(&test, SplitTag::Test),
        })
    }

    /// Seeded shuffle, then `test_fraction` of the rows (rounded) go to test.
    pub fn shuffle_split(&self, test_fraction: f64, seed: u64) -> Result<TrainTest> {
        let (train, test) = shuffled_partition(self.len(), test_fraction, seed)?;
        Ok(TrainTest {
            train: self.subset(&train, SplitTag::Train),
            test: self.subset(&test, SplitTag::Test),
        })
    }

    pub fn batch(&self, indices: &[usize]) -> (RealMatrix, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Contiguous rows `start..end` as a matrix (no copy of labels).
    pub fn rows(&self, start: usize, end: usize) -> RealMatrix {
        let idx: Vec<usize> = (start..end).collect();
        self.inputs.select_rows(&idx)
    }

    /// Fraction of examples in each class.
    pub fn class_balance(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.len().max(1) as f64)
            .collect()
    }

    /// SHA-256 over shape, labels and the bit patterns of every input.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.inputs.rows() as u64).to_le_bytes());
        h.update((self.inputs.cols() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for v in self.inputs.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Seeded permutation of `0..n`; returns `(train, test)` index lists.
pub(crate) fn shuffled_partition(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::for_stream(seed, crate::rng::Stream::Data).shuffle(&mut idx);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let x = RealMatrix::from_vec(5, 2, (0..10).map(|i| i as f64 / 10.0).collect()).unwrap();
        Dataset::new(x, vec![0, 1, 0, 1, 1], 2, SplitTag::Full).unwrap()
    }

    #[test]
    fn constructor_checks_invariants() {
        let x = RealMatrix::zeros(2, 3);
        assert!(Dataset::new(x.clone(), vec![0], 2, SplitTag::Full).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 2], 2, SplitTag::Full).is_err());
        let big = RealMatrix::from_vec(1, 1, vec![1.5]).unwrap();
        assert!(Dataset::new(big, vec![0], 1, SplitTag::Full).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_cover_everything() {
        let d = tiny();
        let (train, test) = shuffled_partition(d.len(), 0.4, 3).unwrap();
        assert_eq!(test.len(), 2);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let tt = d.shuffle_split(0.4, 3).unwrap();
        assert_eq!(tt.train.len() + tt.test.len(), 5);
        assert_eq!(tt, d.shuffle_split(0.4, 3).unwrap());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let d = tiny();
        assert_eq!(d.fingerprint(), tiny().fingerprint());
        let other = d.subset(&[1, 0, 2, 3, 4], SplitTag::Full);
        assert_ne!(d.fingerprint(), other.fingerprint());
    }
}
