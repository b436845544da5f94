//! Dense complex tensors with contraction, permutation and truncated SVD.
//!
//! Entries are stored row-major: the *last* index varies fastest, so the
//! linear offset of multi-index `(i_0, ..., i_{r-1})` is
//! `((i_0 * n_1 + i_1) * n_2 + i_2) * ...`. Every module in this crate uses
//! this one ordering; reshapes that group *adjacent* axes are free.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Relative threshold below which singular values are treated as exact zeros.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-14;

/// Relative gap below which adjacent singular values count as degenerate.
const DEGENERACY_GAP: f64 = 1e-12;

/// Dense complex tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

/// Outcome of a truncated factorization: how many values were kept, the raw
/// discarded weight (sum of squared dropped singular values, which equals the
/// squared Frobenius distance to the truncated reconstruction) and the
/// retained spectrum.
#[derive(Debug, Clone)]
pub struct TruncationReport {
    pub kept: usize,
    pub discarded_weight: f64,
    pub spectrum: Vec<f64>,
    /// Set when the input had zero norm and no factorization was possible.
    pub degenerate: bool,
}

impl TruncationReport {
    /// Discarded weight as a fraction of the total spectral weight.
    pub fn discarded_fraction(&self) -> f64 {
        let kept: f64 = self.spectrum.iter().map(|s| s * s).sum();
        let total = kept + self.discarded_weight;
        if total > 0.0 {
            self.discarded_weight / total
        } else {
            0.0
        }
    }
}

/// Result of [`Tensor::svd_truncate`]: `u · diag(s) · v` reconstructs the
/// input up to the report's discarded weight.
#[derive(Debug, Clone)]
pub struct SvdTruncation {
    /// Left factor, shape = left axis group + one new axis of extent `kept`.
    pub u: Tensor,
    /// Retained singular values, non-increasing.
    pub s: Vec<f64>,
    /// Right factor, shape = one new axis of extent `kept` + right axis group.
    pub v: Tensor,
    pub report: TruncationReport,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

impl Tensor {
    /// Build a tensor from a shape and row-major data. Extents must be
    /// positive, the data length must match and all entries must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("zero extent in tensor shape".into()));
        }
        if len != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} implies {} entries, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite tensor entry".into()));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<C64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![C64::new(0.0, 0.0); len] }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(z: C64) -> Self {
        Self { shape: vec![], data: vec![z] }
    }

    /// n-by-n identity matrix as a rank-2 tensor.
    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = C64::new(1.0, 0.0);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        debug_assert_eq!(idx.len(), self.rank());
        let st = strides(&self.shape);
        let off: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    /// Extract the scalar from a rank-0 tensor.
    pub fn as_scalar(&self) -> Result<C64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::InvalidArgument(format!(
                "tensor of shape {:?} is not a scalar",
                self.shape
            )))
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, a: C64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * a).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "cannot add shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Reinterpret with a new shape of equal total length (data unchanged).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reshape {:?} ({} entries) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    fn reshape_owned(mut self, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Reorder axes: output axis `k` is input axis `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if order.len() != rank {
            return Err(Error::InvalidArgument(format!(
                "permutation {:?} has wrong length for rank {}",
                order, rank
            )));
        }
        let mut seen = vec![false; rank];
        for &a in order {
            if a >= rank || seen[a] {
                return Err(Error::InvalidArgument(format!(
                    "{:?} is not a permutation of 0..{}",
                    order, rank
                )));
            }
            seen[a] = true;
        }
        if order.iter().enumerate().all(|(k, &a)| k == a) {
            return Ok(self.clone());
        }

        let new_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let old_strides = strides(&self.shape);
        let in_strides: Vec<usize> = order.iter().map(|&a| old_strides[a]).collect();

        let mut data = vec![C64::new(0.0, 0.0); self.data.len()];
        let mut idx = vec![0usize; rank];
        let mut in_off = 0usize;
        for slot in data.iter_mut() {
            *slot = self.data[in_off];
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                in_off += in_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                idx[ax] = 0;
                in_off -= in_strides[ax] * new_shape[ax];
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    /// Contract paired axes of `self` and `other`. The result carries the
    /// uncontracted axes of `self` (in order) followed by those of `other`.
    pub fn contract(&self, other: &Self, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut used_a = vec![false; self.rank()];
        let mut used_b = vec![false; other.rank()];
        for &(ia, ib) in pairs {
            if ia >= self.rank() || ib >= other.rank() {
                return Err(Error::InvalidArgument(format!(
                    "contraction pair ({}, {}) out of range for ranks {} and {}",
                    ia,
                    ib,
                    self.rank(),
                    other.rank()
                )));
            }
            if used_a[ia] || used_b[ib] {
                return Err(Error::InvalidArgument("axis contracted twice".into()));
            }
            used_a[ia] = true;
            used_b[ib] = true;
            if self.shape[ia] != other.shape[ib] {
                return Err(Error::DimensionMismatch(format!(
                    "contracted extents differ: axis {} of {:?} vs axis {} of {:?}",
                    ia, self.shape, ib, other.shape
                )));
            }
        }

        let free_a: Vec<usize> = (0..self.rank()).filter(|&k| !used_a[k]).collect();
        let free_b: Vec<usize> = (0..other.rank()).filter(|&k| !used_b[k]).collect();

        let mut order_a: Vec<usize> = free_a.clone();
        order_a.extend(pairs.iter().map(|&(ia, _)| ia));
        let mut order_b: Vec<usize> = pairs.iter().map(|&(_, ib)| ib).collect();
        order_b.extend(free_b.iter().copied());

        let m: usize = free_a.iter().map(|&k| self.shape[k]).product();
        let n: usize = free_b.iter().map(|&k| other.shape[k]).product();
        let k: usize = pairs.iter().map(|&(ia, _)| self.shape[ia]).product();

        let pa = self.permute(&order_a)?;
        let pb = other.permute(&order_b)?;
        let ma = DMatrix::from_row_slice(m, k, &pa.data);
        let mb = DMatrix::from_row_slice(k, n, &pb.data);
        let prod = ma * mb;

        let mut shape: Vec<usize> = free_a.iter().map(|&x| self.shape[x]).collect();
        shape.extend(free_b.iter().map(|&x| other.shape[x]));
        // transpose of a column-major matrix yields its row-major layout
        let data = prod.transpose().as_slice().to_vec();
        Ok(Self::from_parts(shape, data))
    }

    /// View the first `split` axes as rows and the rest as columns.
    pub fn to_matrix(&self, split: usize) -> Result<DMatrix<C64>> {
        if split == 0 || split >= self.rank() {
            return Err(Error::InvalidArgument(format!(
                "split {} must leave both groups nonempty for rank {}",
                split,
                self.rank()
            )));
        }
        let m: usize = self.shape[..split].iter().product();
        let n: usize = self.shape[split..].iter().product();
        Ok(DMatrix::from_row_slice(m, n, &self.data))
    }

    /// Build a tensor from a matrix, un-grouping rows and columns into the
    /// given axis extents.
    pub fn from_matrix(mat: &DMatrix<C64>, row_shape: &[usize], col_shape: &[usize]) -> Self {
        let m: usize = row_shape.iter().product();
        let n: usize = col_shape.iter().product();
        debug_assert_eq!((m, n), (mat.nrows(), mat.ncols()));
        let data = mat.transpose().as_slice().to_vec();
        let mut shape = row_shape.to_vec();
        shape.extend_from_slice(col_shape);
        Self::from_parts(shape, data)
    }

    /// Truncated SVD across the axis partition `[0, split)` vs `[split, rank)`.
    ///
    /// Keeps the smallest rank whose normalized discarded weight is at most
    /// `tol`, capped at `max_rank`; ties at the cap are cut by index, which is
    /// deterministic for identical inputs.
    pub fn svd_truncate(&self, split: usize, max_rank: usize, tol: f64) -> Result<SvdTruncation> {
        self.svd_truncate_policy(split, max_rank, tol, false)
    }

    /// Like [`Tensor::svd_truncate`], but when `tie_extension` is set a
    /// degenerate multiplet straddling the cap is kept whole if that needs at
    /// most `max_rank + 1` values. State compression uses this so that
    /// truncation of tied Schmidt values is reproducible.
    pub(crate) fn svd_truncate_policy(
        &self,
        split: usize,
        max_rank: usize,
        tol: f64,
        tie_extension: bool,
    ) -> Result<SvdTruncation> {
        if max_rank == 0 {
            return Err(Error::InvalidArgument("max_rank must be positive".into()));
        }
        if tol < 0.0 {
            return Err(Error::InvalidArgument("tol must be nonnegative".into()));
        }
        let row_shape = self.shape[..split.min(self.rank())].to_vec();
        let col_shape = self.shape[split.min(self.rank())..].to_vec();

        if self.norm() == 0.0 {
            let mut ushape = row_shape.clone();
            ushape.push(0);
            let mut vshape = vec![0];
            vshape.extend_from_slice(&col_shape);
            return Ok(SvdTruncation {
                u: Tensor { shape: ushape, data: vec![] },
                s: vec![],
                v: Tensor { shape: vshape, data: vec![] },
                report: TruncationReport {
                    kept: 0,
                    discarded_weight: 0.0,
                    spectrum: vec![],
                    degenerate: true,
                },
            });
        }

        let mat = self.to_matrix(split)?;
        let svd = mat.svd(true, true);
        let u_full = svd.u.expect("svd requested u");
        let vt_full = svd.v_t.expect("svd requested v_t");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

        let total: f64 = sv.iter().map(|s| s * s).sum();
        let floor = SINGULAR_VALUE_FLOOR * sv[0];
        let effective = sv.iter().take_while(|&&s| s > floor).count().max(1);

        // smallest kept count whose discarded tail stays within tol
        let mut kept = effective;
        let mut tail = 0.0;
        for k in (1..=effective).rev() {
            let cand = tail + sv[k - 1] * sv[k - 1];
            if cand <= tol * total {
                tail = cand;
                kept = k - 1;
            } else {
                break;
            }
        }
        let mut kept = kept.max(1).min(max_rank);

        // degenerate multiplet at the boundary
        if tie_extension && kept < effective && sv[kept - 1] - sv[kept] <= DEGENERACY_GAP * sv[0] {
            let mut end = kept;
            while end < effective && sv[kept - 1] - sv[end] <= DEGENERACY_GAP * sv[0] {
                end += 1;
            }
            if end <= max_rank + 1 {
                kept = end;
            }
        }
        let kept = kept.min(sv.len());

        let discarded: f64 = sv[kept..].iter().map(|s| s * s).sum();
        let s_kept = sv[..kept].to_vec();

        let mut u = DMatrix::zeros(u_full.nrows(), kept);
        let mut vt = DMatrix::zeros(kept, vt_full.ncols());
        for (col, &src) in order[..kept].iter().enumerate() {
            u.set_column(col, &u_full.column(src));
            vt.set_row(col, &vt_full.row(src));
        }

        let mut ushape = row_shape.clone();
        ushape.push(kept);
        let mut vshape = vec![kept];
        vshape.extend_from_slice(&col_shape);

        Ok(SvdTruncation {
            u: Tensor::from_matrix(&u, &row_shape, &[kept]).reshape_owned(ushape),
            s: s_kept.clone(),
            v: Tensor::from_matrix(&vt, &[kept], &col_shape).reshape_owned(vshape),
            report: TruncationReport {
                kept,
                discarded_weight: discarded,
                spectrum: s_kept,
                degenerate: false,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pseudo_random(shape: Vec<usize>, seed: u64) -> Tensor {
        // splitmix64-based filler, good enough for deterministic test data
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z = z ^ (z >> 31);
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let len = shape.iter().product();
        let data = (0..len).map(|_| c(next(), next())).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn contract_identity_on_vector() {
        let id = Tensor::identity(2);
        let v = Tensor::new(vec![2], vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let out = id.contract(&v, &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert!((out.data()[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(out.data()[1].norm() < 1e-15);
    }

    #[test]
    fn contract_is_matrix_product() {
        let a = pseudo_random(vec![2, 3], 1);
        let b = pseudo_random(vec![3, 4], 2);
        let out = a.contract(&b, &[(1, 0)]).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = c(0.0, 0.0);
                for k in 0..3 {
                    acc += a.get(&[i, k]) * b.get(&[k, j]);
                }
                assert!((out.get(&[i, j]) - acc).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn full_contraction_with_conjugate_is_norm_squared() {
        let a = pseudo_random(vec![2, 2, 2], 3);
        let out = a
            .contract(&a.conj(), &[(0, 0), (1, 1), (2, 2)])
            .unwrap()
            .as_scalar()
            .unwrap();
        // independent brute-force entry-wise sum
        let brute: f64 = a.data().iter().map(|z| z.norm_sqr()).sum();
        assert!((out.re - brute).abs() < 1e-13);
        assert!(out.im.abs() < 1e-13);
        assert!((out.re - a.norm() * a.norm()).abs() < 1e-13);
    }

    #[test]
    fn contract_extent_mismatch_errors() {
        let a = pseudo_random(vec![2, 3], 4);
        let b = pseudo_random(vec![4, 2], 5);
        assert!(matches!(
            a.contract(&b, &[(1, 0)]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn permute_symmetric_matrix_unchanged() {
        let id = Tensor::identity(3);
        let p = id.permute(&[1, 0]).unwrap();
        assert_eq!(p, id);
    }

    #[test]
    fn permute_roundtrip_is_exact() {
        let a = pseudo_random(vec![2, 3, 4], 6);
        let p = a.permute(&[2, 0, 1]).unwrap();
        // inverse of (2,0,1) is (1,2,0)
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn permute_index_arithmetic() {
        let a = pseudo_random(vec![2, 3, 4], 7);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.get(&[k, i, j]), a.get(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn permute_rejects_invalid_order() {
        let a = pseudo_random(vec![2, 2], 8);
        assert!(a.permute(&[0, 0]).is_err());
        assert!(a.permute(&[0]).is_err());
        assert!(a.permute(&[0, 2]).is_err());
    }

    #[test]
    fn svd_of_rank_one_product() {
        let x = [c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0)];
        let y = [c(0.0, 3.0), c(4.0, 0.0)];
        let mut data = Vec::new();
        for a in &x {
            for b in &y {
                data.push(a * b);
            }
        }
        let t = Tensor::new(vec![3, 2], data).unwrap();
        let f = t.svd_truncate(1, 4, 0.0).unwrap();
        assert_eq!(f.report.kept, 1);
        let nx = 3.0; // |x|
        let ny = 5.0; // |y|
        assert!((f.s[0] - nx * ny).abs() < 1e-12);
        assert!(f.report.discarded_weight < 1e-24);
    }

    #[test]
    fn svd_equal_spectrum_truncation() {
        let id = Tensor::identity(2);
        let f = id.svd_truncate(1, 1, 0.0).unwrap();
        assert_eq!(f.report.kept, 1);
        assert!((f.s[0] - 1.0).abs() < 1e-12);
        assert!((f.report.discarded_weight - 1.0).abs() < 1e-12);
    }

    fn scale_last_axis(t: &Tensor, s: &[f64]) -> Tensor {
        let shape = t.shape().to_vec();
        let k = *shape.last().unwrap();
        let mut d = t.clone().into_data();
        for (i, z) in d.iter_mut().enumerate() {
            *z *= s[i % k];
        }
        Tensor::new(shape, d).unwrap()
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let a = pseudo_random(vec![8, 8], 9);
        let f = a.svd_truncate(1, 8, 0.0).unwrap();
        let recon = scale_last_axis(&f.u, &f.s).contract(&f.v, &[(1, 0)]).unwrap();
        let diff: f64 = recon
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-12 * a.norm(), "reconstruction error {diff}");
    }

    #[test]
    fn svd_orthonormal_factors() {
        let a = pseudo_random(vec![6, 4], 10);
        let f = a.svd_truncate(1, 4, 0.0).unwrap();
        let gram_u = f.u.conj().contract(&f.u, &[(0, 0)]).unwrap();
        let gram_v = f.v.contract(&f.v.conj(), &[(1, 1)]).unwrap();
        let k = f.report.kept;
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram_u.get(&[i, j]) - c(expect, 0.0)).norm() < 1e-12);
                assert!((gram_v.get(&[i, j]) - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn svd_discarded_weight_is_squared_distance() {
        let a = pseudo_random(vec![8, 8], 11);
        let f = a.svd_truncate(1, 3, 0.0).unwrap();
        let recon = scale_last_axis(&f.u, &f.s).contract(&f.v, &[(1, 0)]).unwrap();
        let dist2: f64 = recon
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        let rel = (dist2 - f.report.discarded_weight).abs() / f.report.discarded_weight;
        assert!(rel < 1e-10, "relative mismatch {rel}");
    }

    #[test]
    fn svd_zero_tensor_degenerate() {
        let z = Tensor::zeros(vec![3, 3]);
        let f = z.svd_truncate(1, 3, 0.0).unwrap();
        assert_eq!(f.report.kept, 0);
        assert_eq!(f.report.discarded_weight, 0.0);
        assert!(f.report.degenerate);
    }

    #[test]
    fn contract_bilinear() {
        let a = pseudo_random(vec![3, 4], 12);
        let b = pseudo_random(vec![3, 4], 13);
        let cc = pseudo_random(vec![4, 2], 14);
        let alpha = c(0.7, -0.3);
        let lhs = a.scale(alpha).add(&b).unwrap().contract(&cc, &[(1, 0)]).unwrap();
        let rhs = a
            .contract(&cc, &[(1, 0)])
            .unwrap()
            .scale(alpha)
            .add(&b.contract(&cc, &[(1, 0)]).unwrap())
            .unwrap();
        let num: f64 = lhs
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(num < 1e-12 * rhs.norm());
    }
}
