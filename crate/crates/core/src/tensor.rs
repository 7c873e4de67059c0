//! Dense tensors and the multilinear primitives built on them.
//!
//! Conventions (fixed across the whole crate):
//!
//! * Tensors are stored column-major: the **first** index varies fastest in
//!   the linear buffer.
//! * Modes are **1-based** in every public signature (`mode = 1` contracts or
//!   matricizes the first index), matching the usual multilinear-algebra
//!   notation.
//! * `unfold(t, m)` places tensor element `(i_1, ..., i_M)` at row `i_m` and
//!   column `sum_{k != m} i_k * J_k` with `J_k = prod_{l < k, l != m} I_l`
//!   (all zero-based), i.e. among the remaining modes the lowest-numbered one
//!   varies fastest along the columns.
//! * `kronecker(a, b)` uses the standard layout in which the **second**
//!   operand's index varies fastest: row `i_a * rows(b) + i_b`.
//!
//! A consequence worth spelling out: for a column-major tensor, the mode-1
//! unfolding is the data buffer itself reshaped, and projecting it onto a
//! stack of per-mode vectors uses the Kronecker product of those vectors in
//! **reverse** mode order (`unfold(q, 1) * (z_M (x) ... (x) z_2)`), because the
//! lowest mode varies fastest in the unfolding while the last Kronecker
//! factor varies fastest in the product.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Dense column-major tensor of arbitrary order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Wrap a column-major buffer. Zero extents are rejected; an empty `dims`
    /// list denotes a scalar and requires a length-1 buffer.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<DenseTensor> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("tensor extents must be positive".into()));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "buffer of length {} cannot form a tensor with extents {:?}",
                data.len(),
                dims
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<DenseTensor> {
        let len: usize = dims.iter().product();
        DenseTensor::new(dims, vec![0.0; len])
    }

    /// Build from a closure over the multi-index (zero-based).
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<DenseTensor> {
        let mut t = DenseTensor::zeros(dims)?;
        let mut idx = vec![0usize; t.order()];
        for l in 0..t.data.len() {
            t.data[l] = f(&idx);
            // Odometer increment, first mode fastest.
            for k in 0..idx.len() {
                idx[k] += 1;
                if idx[k] < t.dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(t)
    }

    /// Number of modes.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a (zero-based) multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut off = 0;
        let mut stride = 1;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            off += i * stride;
            stride *= self.dims[k];
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    fn check_mode(&self, mode: usize) -> Result<usize> {
        if mode == 0 || mode > self.order() {
            return Err(Error::InvalidArgument(format!(
                "mode {} out of range for an order-{} tensor (modes are 1-based)",
                mode,
                self.order()
            )));
        }
        Ok(mode - 1)
    }
}

/// Mode-`m` matricization (see the module docs for the column ordering).
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Mat> {
    let m = t.check_mode(mode)?;
    let rows = t.dims()[m];
    let cols = t.len() / rows;
    // Column weight of each non-row mode: product of the extents of the
    // lower-numbered non-row modes.
    let mut jfac = vec![0usize; t.order()];
    let mut acc = 1;
    for k in 0..t.order() {
        if k != m {
            jfac[k] = acc;
            acc *= t.dims()[k];
        }
    }
    let mut out = Mat::zeros(rows, cols);
    let mut idx = vec![0usize; t.order()];
    for l in 0..t.len() {
        let mut col = 0;
        for k in 0..t.order() {
            if k != m {
                col += idx[k] * jfac[k];
            }
        }
        out[(idx[m], col)] = t.data()[l];
        for k in 0..idx.len() {
            idx[k] += 1;
            if idx[k] < t.dims()[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`]: rebuild a tensor with extents `dims` from its
/// mode-`m` matricization.
pub fn fold(mat: &Mat, mode: usize, dims: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(dims.to_vec())?;
    let m = t.check_mode(mode)?;
    if mat.rows() != dims[m] || mat.cols() != t.len() / dims[m] {
        return Err(Error::ShapeMismatch(format!(
            "a {}x{} matrix is not the mode-{} matricization of extents {:?}",
            mat.rows(),
            mat.cols(),
            mode,
            dims
        )));
    }
    let mut jfac = vec![0usize; t.order()];
    let mut acc = 1;
    for k in 0..t.order() {
        if k != m {
            jfac[k] = acc;
            acc *= dims[k];
        }
    }
    let mut idx = vec![0usize; t.order()];
    for l in 0..t.len() {
        let mut col = 0;
        for k in 0..t.order() {
            if k != m {
                col += idx[k] * jfac[k];
            }
        }
        t.data_mut()[l] = mat[(idx[m], col)];
        for k in 0..idx.len() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(t)
}

/// Contract mode `m` of `t` against the vector `v`; the result drops that
/// mode (an order-1 input yields a scalar tensor with empty `dims`).
pub fn mode_vec_product(t: &DenseTensor, v: &[f64], mode: usize) -> Result<DenseTensor> {
    let m = t.check_mode(mode)?;
    let dm = t.dims()[m];
    if v.len() != dm {
        return Err(Error::ShapeMismatch(format!(
            "mode-{} extent is {} but the vector has length {}",
            mode,
            dm,
            v.len()
        )));
    }
    let inner: usize = t.dims()[..m].iter().product();
    let outer: usize = t.dims()[m + 1..].iter().product();
    let mut out_dims = t.dims().to_vec();
    out_dims.remove(m);
    let mut out = vec![0.0; inner * outer];
    for o in 0..outer {
        let t_base = o * inner * dm;
        let out_base = o * inner;
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                let slab = &t.data()[t_base + j * inner..t_base + (j + 1) * inner];
                for i in 0..inner {
                    out[out_base + i] += vj * slab[i];
                }
            }
        }
    }
    DenseTensor::new(out_dims, out)
}

/// Contract several modes against vectors. Modes refer to the **original**
/// tensor's numbering and must be distinct; contractions are evaluated
/// lowest-mode-first, with later mode numbers shifted down as earlier modes
/// disappear.
pub fn mode_vec_chain(t: &DenseTensor, contractions: &[(usize, &[f64])]) -> Result<DenseTensor> {
    let mut order: Vec<usize> = (0..contractions.len()).collect();
    order.sort_by_key(|&i| contractions[i].0);
    for w in order.windows(2) {
        if contractions[w[0]].0 == contractions[w[1]].0 {
            return Err(Error::InvalidArgument(format!(
                "mode {} contracted twice",
                contractions[w[0]].0
            )));
        }
    }
    let mut cur = t.clone();
    for (removed, &i) in order.iter().enumerate() {
        let (mode, v) = contractions[i];
        t.check_mode(mode)?;
        cur = mode_vec_product(&cur, v, mode - removed)?;
    }
    Ok(cur)
}

/// Kronecker product. Row layout: `i_a * rows(b) + i_b` (second operand
/// fastest); columns likewise.
pub fn kronecker(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for ja in 0..a.cols() {
        for jb in 0..b.cols() {
            let col = ja * b.cols() + jb;
            for ia in 0..a.rows() {
                let av = a[(ia, ja)];
                if av != 0.0 {
                    for ib in 0..b.rows() {
                        out[(ia * b.rows() + ib, col)] = av * b[(ib, jb)];
                    }
                }
            }
        }
    }
    out
}

/// Khatri-Rao (column-wise Kronecker) product; operands must have the same
/// number of columns.
pub fn khatri_rao(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Mat::zeros(a.rows() * b.rows(), a.cols());
    for j in 0..a.cols() {
        let (ac, bc) = (a.col(j), b.col(j));
        let oc = out.col_mut(j);
        for (ia, &av) in ac.iter().enumerate() {
            for (ib, &bv) in bc.iter().enumerate() {
                oc[ia * bc.len() + ib] = av * bv;
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of a non-empty list, combined left to right.
pub fn khatri_rao_chain(mats: &[&Mat]) -> Result<Mat> {
    match mats.split_first() {
        None => Err(Error::InvalidArgument("khatri_rao_chain of an empty list".into())),
        Some((first, rest)) => {
            let mut acc = (*first).clone();
            for m in rest {
                acc = khatri_rao(&acc, m)?;
            }
            Ok(acc)
        }
    }
}

/// Column-major vectorization of a matrix.
pub fn vectorize(m: &Mat) -> Vec<f64> {
    m.data().to_vec()
}

/// Inverse of [`vectorize`].
pub fn matricize(v: &[f64], rows: usize, cols: usize) -> Result<Mat> {
    Mat::from_col_major(rows, cols, v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t222() -> DenseTensor {
        DenseTensor::new(vec![2, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn unfold_first_mode_of_2x2x2() {
        let m = unfold(&t222(), 1).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.cols(), 4);
        let expected = Mat::from_rows(&[&[1.0, 3.0, 5.0, 7.0], &[2.0, 4.0, 6.0, 8.0]]);
        assert_eq!(m, expected);
    }

    #[test]
    fn unfold_other_modes_of_2x2x2() {
        // Mode 2: rows are the second index, columns cycle (i1, i3) with i1 fastest.
        let m2 = unfold(&t222(), 2).unwrap();
        assert_eq!(m2, Mat::from_rows(&[&[1.0, 2.0, 5.0, 6.0], &[3.0, 4.0, 7.0, 8.0]]));
        let m3 = unfold(&t222(), 3).unwrap();
        assert_eq!(m3, Mat::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]]));
    }

    #[test]
    fn fold_inverts_unfold_on_every_mode() {
        let t = DenseTensor::from_fn(vec![2, 3, 4, 2], |idx| {
            (idx[0] + 10 * idx[1] + 100 * idx[2] + 1000 * idx[3]) as f64
        })
        .unwrap();
        for mode in 1..=4 {
            let m = unfold(&t, mode).unwrap();
            let back = fold(&m, mode, t.dims()).unwrap();
            assert_eq!(back, t, "round trip failed on mode {mode}");
        }
    }

    #[test]
    fn mode_product_on_matrix_columns() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = mode_vec_product(&t, &[1.0, 1.0], 2).unwrap();
        assert_eq!(out.dims(), &[2]);
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn mode_product_with_one_hot_extracts_a_slice() {
        let t = t222();
        let e1 = [0.0, 1.0];
        let out = mode_vec_product(&t, &e1, 2).unwrap();
        // Slice i2 = 1: elements t[i1, 1, i3].
        assert_eq!(out.dims(), &[2, 2]);
        assert_eq!(out.data(), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn mode_chain_contracts_lowest_first_by_original_numbering() {
        let t = t222();
        let a = [1.0, 2.0];
        let b = [3.0, -1.0];
        // Chain (mode 1 then mode 3), given in shuffled order.
        let chained = mode_vec_chain(&t, &[(3, &b), (1, &a)]).unwrap();
        let step1 = mode_vec_product(&t, &a, 1).unwrap();
        let step2 = mode_vec_product(&step1, &b, 2).unwrap(); // original mode 3 shifted down
        assert_eq!(chained, step2);
    }

    #[test]
    fn kronecker_of_column_vectors() {
        let a = Mat::col_vec(&[1.0, 3.0]);
        let b = Mat::col_vec(&[5.0, 7.0]);
        let k = kronecker(&a, &b);
        assert_eq!(k.rows(), 4);
        assert_eq!(k.cols(), 1);
        assert_eq!(k.data(), &[5.0, 7.0, 15.0, 21.0]);
    }

    #[test]
    fn khatri_rao_matches_frozen_example() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Mat::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let k = khatri_rao(&a, &b).unwrap();
        let expected = Mat::from_rows(&[
            &[5.0, 12.0],
            &[7.0, 16.0],
            &[15.0, 24.0],
            &[21.0, 32.0],
        ]);
        assert_eq!(k, expected);
    }

    #[test]
    fn khatri_rao_gram_identity() {
        // (A (.) B)^T (A (.) B) == (A^T A) hadamard (B^T B)
        let a = Mat::from_fn(3, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let b = Mat::from_fn(2, 4, |r, c| ((r * 3 + c * 11) % 7) as f64 - 3.0);
        let k = khatri_rao(&a, &b).unwrap();
        let gram = k.t_mul(&k);
        let ga = a.t_mul(&a);
        let gb = b.t_mul(&b);
        for r in 0..4 {
            for c in 0..4 {
                assert!((gram[(r, c)] - ga[(r, c)] * gb[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectorize_is_column_major() {
        let m = Mat::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]);
        assert_eq!(vectorize(&m), vec![1.0, 2.0, 3.0, 4.0]);
        let back = matricize(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mode_one_unfolding_pairs_with_reversed_kronecker() {
        // unfold(t, 1) * (z3 (x) z2) equals the chained mode products, because
        // the unfolding's lowest remaining mode varies fastest.
        let t = DenseTensor::from_fn(vec![3, 2, 4], |idx| {
            (idx[0] * 100 + idx[1] * 10 + idx[2]) as f64 + 1.0
        })
        .unwrap();
        let z2 = [0.5, -1.5];
        let z3 = [1.0, 2.0, -1.0, 0.25];
        let via_chain = mode_vec_chain(&t, &[(2, &z2), (3, &z3)]).unwrap();
        let kr = kronecker(&Mat::col_vec(&z3), &Mat::col_vec(&z2));
        let via_unfold = unfold(&t, 1).unwrap().mul_vec(kr.data());
        for (a, b) in via_chain.data().iter().zip(via_unfold.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_modes_and_extents() {
        let t = t222();
        assert!(unfold(&t, 0).is_err());
        assert!(unfold(&t, 4).is_err());
        assert!(mode_vec_product(&t, &[1.0, 2.0, 3.0], 1).is_err());
        assert!(DenseTensor::new(vec![2, 0, 2], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0]).is_err());
        let a = Mat::zeros(2, 2);
        let b = Mat::zeros(2, 3);
        assert!(khatri_rao(&a, &b).is_err());
        assert!(fold(&Mat::zeros(2, 3), 1, &[2, 2, 2]).is_err());
        assert!(mode_vec_chain(&t, &[(1, &[1.0, 0.0][..]), (1, &[0.0, 1.0][..])]).is_err());
    }
}
