//! Dense row-major matrices of `f64` and the handful of products the network needs.
//!
//! Every constructor and product checks that the result is finite, so a
//! `RealMatrix` never carries NaN or infinity.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("{} values", data.len()),
            });
        }
        let m = RealMatrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: format!("row 0 has {cols} columns"),
                    right: format!("row {i} has {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> RealMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        RealMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    fn check_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{op} result")))
        }
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// `a * b`, accumulated in `f64`.
pub fn matmul(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape_str(),
            right: b.shape_str(),
        });
    }
    let mut out = RealMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            axpy(aik, b.row(k), out_row);
        }
    }
    out.check_finite("matmul")?;
    Ok(out)
}

/// `a * bᵀ`. `b` is stored row-major with `b.cols == a.cols`.
pub fn matmul_nt(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "matmul_nt",
            left: a.shape_str(),
            right: format!("{}ᵀ", b.shape_str()),
        });
    }
    let mut out = RealMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ai, b.row(j));
        }
    }
    out.check_finite("matmul_nt")?;
    Ok(out)
}

/// `aᵀ * b`. Both operands share their row count.
pub fn matmul_tn(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul_tn",
            left: format!("{}ᵀ", a.shape_str()),
            right: b.shape_str(),
        });
    }
    let mut out = RealMatrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let br = b.row(r);
        for (i, &ari) in a.row(r).iter().enumerate() {
            if ari == 0.0 {
                continue;
            }
            axpy(ari, br, &mut out.data[i * b.cols..(i + 1) * b.cols]);
        }
    }
    out.check_finite("matmul_tn")?;
    Ok(out)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        s += a * b;
    }
    s
}

/// `ln(1 + e^x)` without overflow; returns `x` itself once `x > 30`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        // ln(1 + t) = t to double precision for t < 1e-13; floor keeps the
        // result strictly positive where e^x underflows
        x.exp().max(f64::MIN_POSITIVE)
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: the `rho` with `softplus(rho) == scale`.
pub fn softplus_inverse(scale: f64) -> f64 {
    if scale > 30.0 {
        scale
    } else {
        scale.exp_m1().ln()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_times_m_is_m() {
        let m = RealMatrix::from_rows(&[
            vec![1.0, -2.0, 3.5],
            vec![0.25, 8.0, -1.0],
            vec![4.0, 0.0, 2.0],
        ])
        .unwrap();
        assert_eq!(matmul(&RealMatrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn zeros_times_anything_is_zeros() {
        let b = RealMatrix::from_vec(3, 4, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(
            matmul(&RealMatrix::zeros(2, 3), &b).unwrap(),
            RealMatrix::zeros(2, 4)
        );
    }

    #[test]
    fn small_product_by_hand() {
        let a = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = RealMatrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = matmul(&RealMatrix::zeros(2, 3), &RealMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.matches("2x3").count() == 2, "{msg}");
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(RealMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let big = RealMatrix::from_vec(1, 1, vec![1e200]).unwrap();
        assert!(matches!(matmul(&big, &big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = RealMatrix::from_vec(3, 5, (0..15).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let b = RealMatrix::from_vec(4, 5, (0..20).map(|i| (i as f64 * 0.11).cos()).collect())
            .unwrap();
        let bt = transpose(&b);
        let nt = matmul_nt(&a, &b).unwrap();
        let plain = matmul(&a, &bt).unwrap();
        for (x, y) in nt.as_slice().iter().zip(plain.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
        let c = RealMatrix::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let tn = matmul_tn(&a, &c).unwrap();
        let plain = matmul(&transpose(&a), &c).unwrap();
        for (x, y) in tn.as_slice().iter().zip(plain.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    fn transpose(m: &RealMatrix) -> RealMatrix {
        let mut data = Vec::with_capacity(m.rows * m.cols);
        for j in 0..m.cols {
            for i in 0..m.rows {
                data.push(m.get(i, j));
            }
        }
        RealMatrix::from_vec(m.cols, m.rows, data).unwrap()
    }

    #[test]
    fn softplus_reference_values() {
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2, max_relative = 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0);
        assert_relative_eq!(tiny, (-100.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for s in [1e-3, 0.05, 0.1, 1.0, 5.0] {
            assert_relative_eq!(softplus(softplus_inverse(s)), s, max_relative = 1e-12);
        }
        assert_relative_eq!(softplus_inverse(0.05), -2.970_7, epsilon = 1e-4);
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = RealMatrix> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| RealMatrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn softplus_is_positive(x in -1e300f64..1e300) {
            prop_assert!(softplus(x) > 0.0);
        }
    }
}
