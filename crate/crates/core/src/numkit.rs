//! Dense linear-algebra kernel.
//!
//! Vectors are plain `[f64]` slices; matrices are row-major [`Mat`]. Everything
//! here is a pure function of its inputs. The batched product [`gemm_nt`] is
//! backed by `matrixmultiply`; all other kernels are written out directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for k in 0..n {
            m.data[k * n + k] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    format!("row 0 has {cols} columns"),
                    format!("row {r} has {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` as an owned vector. This is `M · one_hot(c)`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`, shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// `self += x · yᵀ`.
    pub fn add_outer(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (m, &yc) in self.row_mut(r).iter_mut().zip(y) {
                *m += xr * yc;
            }
        }
    }

    /// `self[:, c] += alpha * x`.
    pub fn add_to_column(&mut self, c: usize, alpha: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        for (r, &v) in x.iter().enumerate() {
            self.data[r * self.cols + c] += alpha * v;
        }
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `M · v`.
pub fn matvec(m: &Mat, v: &[f64]) -> Result<Vec<f64>> {
    if m.cols != v.len() {
        return Err(Error::shape(m.shape_str(), format!("vector of length {}", v.len())));
    }
    Ok((0..m.rows).map(|r| dot(m.row(r), v)).collect())
}

/// `out += M · v`, unchecked beyond debug assertions.
#[inline]
pub(crate) fn matvec_acc(m: &Mat, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(m.row(r), v);
    }
}

/// `out += Mᵀ · v`.
#[inline]
pub(crate) fn matvec_t_acc(m: &Mat, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(m.row(r)) {
            *o += vr * w;
        }
    }
}

/// `Mᵀ · v`.
pub fn matvec_t(m: &Mat, v: &[f64]) -> Result<Vec<f64>> {
    if m.rows != v.len() {
        return Err(Error::shape(
            format!("transpose of {}", m.shape_str()),
            format!("vector of length {}", v.len()),
        ));
    }
    let mut out = vec![0.0; m.cols];
    matvec_t_acc(m, v, &mut out);
    Ok(out)
}

/// `C = beta·C + A · Wᵀ` where `A` is `m×k` row-major, `W` is a `Mat` of shape
/// `out×k`, and `C` is `m×out` row-major.
pub fn gemm_nt(a: &[f64], m: usize, w: &Mat, beta: f64, c: &mut [f64]) {
    let (out, k) = w.shape();
    assert_eq!(a.len(), m * k, "gemm_nt: lhs has wrong length");
    assert_eq!(c.len(), m * out, "gemm_nt: output has wrong length");
    if m == 0 || out == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: slice lengths were checked above and the strides below address
    // exactly the row-major layouts of `a` (m×k), `wᵀ` (k×out) and `c` (m×out).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            out,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            w.data.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("length {}", a.len()), format!("length {}", b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("length {}", a.len()), format!("length {}", b.len())));
    }
    Ok(sq_dist(a, b).sqrt())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Flat, indexable view over a set of trainable scalars.
pub trait Parameters {
    fn num_params(&self) -> usize;
    fn param(&self, idx: usize) -> f64;
    fn set_param(&mut self, idx: usize, value: f64);
}

impl Parameters for Vec<f64> {
    fn num_params(&self) -> usize {
        self.len()
    }
    fn param(&self, idx: usize) -> f64 {
        self[idx]
    }
    fn set_param(&mut self, idx: usize, value: f64) {
        self[idx] = value;
    }
}

impl Parameters for Mat {
    fn num_params(&self) -> usize {
        self.data.len()
    }
    fn param(&self, idx: usize) -> f64 {
        self.data[idx]
    }
    fn set_param(&mut self, idx: usize, value: f64) {
        self.data[idx] = value;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param_index: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss_fn` at `params`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<P, F>(
    mut loss_fn: F,
    params: &P,
    analytic: &P,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if params.num_params() != analytic.num_params() {
        return Err(Error::shape(
            format!("{} params", params.num_params()),
            format!("{} gradients", analytic.num_params()),
        ));
    }
    let mut probe = params.clone();
    let mut worst = (0.0f64, 0usize);
    for idx in 0..params.num_params() {
        let orig = params.param(idx);
        probe.set_param(idx, orig + eps);
        let plus = loss_fn(&probe);
        probe.set_param(idx, orig - eps);
        let minus = loss_fn(&probe);
        probe.set_param(idx, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {idx}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.param(idx);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 {
            worst = (rel, idx);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_param_index: worst.1,
        passed: worst.0 < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(matvec(&Mat::identity(2), &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(matvec(&Mat::zeros(2, 2), &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let err = matvec(&Mat::zeros(2, 3), &[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(err.contains("length 2"), "{err}");
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!((sigmoid(&[1000.0])[0] - 1.0).abs() < 1e-12);
        assert!((sigmoid(&[3f64.ln()])[0] - 0.75).abs() < 1e-15);
        assert!(sigmoid(&[-1000.0])[0].is_finite());
    }

    #[test]
    fn hadamard_examples() {
        let a = [1.5, -2.0, 7.0];
        assert_eq!(hadamard(&a, &[1.0; 3]).unwrap(), a.to_vec());
        assert_eq!(hadamard(&a, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(hadamard(&[1.0, 2.0], &[3.0, -4.0]).unwrap(), vec![3.0, -8.0]);
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!((l2_distance(&[1.0, 1.0], &[2.0, 3.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(l2_distance(&[1.0], &[]).is_err());
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat(&[], &[1.0]), vec![1.0]);
        assert_eq!(concat(&[1.0], &[]), vec![1.0]);
        assert_eq!(concat(&[1.0, 2.0], &[3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gemm_matches_matvec() {
        let w = Mat::from_fn(5, 3, |r, c| (r as f64) - 0.5 * c as f64);
        let a = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25];
        let mut c = vec![1.0; 10];
        gemm_nt(&a, 2, &w, 0.0, &mut c);
        for row in 0..2 {
            let expect = matvec(&w, &a[row * 3..row * 3 + 3]).unwrap();
            assert!(close(&c[row * 5..row * 5 + 5], &expect, 1e-12));
        }
    }

    #[test]
    fn grad_check_quadratic() {
        let theta = vec![1.0, 2.0];
        let analytic = vec![2.0, 4.0];
        let loss = |p: &Vec<f64>| p.iter().map(|x| x * x).sum::<f64>();
        let report = finite_diff_check(loss, &theta, &analytic, 1e-5, 1e-8).unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-8);

        let zeros = vec![0.0, 0.0];
        let report = finite_diff_check(loss, &theta, &zeros, 1e-5, 1e-4).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn grad_check_rejects_non_finite_loss() {
        let theta = vec![1.0];
        let r = finite_diff_check(|_: &Vec<f64>| f64::NAN, &theta, &theta, 1e-5, 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn matvec_is_linear(
            m in vec_of(12), a in vec_of(4), b in vec_of(4),
            alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        ) {
            let m = Mat::from_vec(3, 4, m).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = matvec(&m, &combo).unwrap();
            let ma = matvec(&m, &a).unwrap();
            let mb = matvec(&m, &b).unwrap();
            let rhs: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| alpha * x + beta * y).collect();
            prop_assert!(close(&lhs, &rhs, 1e-10));
        }

        #[test]
        fn sigmoid_is_antisymmetric(x in vec_of(6)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let s = sigmoid(&x);
            let sn = sigmoid(&neg);
            for (p, q) in s.iter().zip(&sn) {
                prop_assert!((q - (1.0 - p)).abs() < 1e-12);
            }
        }

        #[test]
        fn l2_triangle_inequality(a in vec_of(5), b in vec_of(5), c in vec_of(5)) {
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn concat_splits_back(a in proptest::collection::vec(-1.0f64..1.0, 0..6),
                              b in proptest::collection::vec(-1.0f64..1.0, 0..6)) {
            let joined = concat(&a, &b);
            prop_assert_eq!(joined.len(), a.len() + b.len());
            let (l, r) = joined.split_at(a.len());
            prop_assert_eq!(l, &a[..]);
            prop_assert_eq!(r, &b[..]);
        }
    }
}
