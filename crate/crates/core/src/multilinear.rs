//! Multilinear latent decoders, the feature rotation layer, and shading.
//!
//! A [`CoreModel`] holds two core tensors: `q` of extents
//! `[k_x, k_l, k_exp, k_id]`, whose mode-wise projections of a lighting code,
//! an expression code and an identity code synthesize a frontal texture, and
//! `b` of extents `[k_3d, k_exp, k_id]`, which synthesizes a 3-D shape from
//! expression and identity alone. Two small affine maps (`exp_map`, `id_map`)
//! translate the codes into pseudo-label space for supervised regression.
//!
//! Per-sample decoding contracts the core tensor mode by mode; the batch path
//! multiplies the mode-1 matricization against a Khatri-Rao product of the
//! code matrices. Both evaluate the same multilinear map (see the `tensor`
//! module docs for why the batch path combines factors in reverse mode
//! order); tests pin their agreement.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::stack::Dense;
use crate::tensor::{khatri_rao_chain, mode_vec_chain, unfold, DenseTensor};

/// Shared multilinear parameters of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreModel {
    /// Texture core, extents `[k_x, k_l, k_exp, k_id]`.
    pub q: DenseTensor,
    /// Shape core, extents `[k_3d, k_exp, k_id]`.
    pub b: DenseTensor,
    /// Affine map from the expression code to the pseudo-expression target.
    pub exp_map: Dense,
    /// Affine map from the identity code to the pseudo-identity target.
    pub id_map: Dense,
}

impl CoreModel {
    pub fn new(q: DenseTensor, b: DenseTensor, exp_map: Dense, id_map: Dense) -> Result<CoreModel> {
        if q.order() != 4 {
            return Err(Error::InvalidArgument(format!(
                "texture core must have order 4, got {}",
                q.order()
            )));
        }
        if b.order() != 3 {
            return Err(Error::InvalidArgument(format!(
                "shape core must have order 3, got {}",
                b.order()
            )));
        }
        if q.dims()[2] != b.dims()[1] || q.dims()[3] != b.dims()[2] {
            return Err(Error::ShapeMismatch(format!(
                "texture core extents {:?} and shape core extents {:?} disagree on (k_exp, k_id)",
                q.dims(),
                b.dims()
            )));
        }
        if exp_map.in_dim() != q.dims()[2] {
            return Err(Error::ShapeMismatch(format!(
                "exp_map expects inputs of length {}, core has k_exp = {}",
                exp_map.in_dim(),
                q.dims()[2]
            )));
        }
        if id_map.in_dim() != q.dims()[3] {
            return Err(Error::ShapeMismatch(format!(
                "id_map expects inputs of length {}, core has k_id = {}",
                id_map.in_dim(),
                q.dims()[3]
            )));
        }
        Ok(CoreModel { q, b, exp_map, id_map })
    }

    pub fn k_x(&self) -> usize {
        self.q.dims()[0]
    }
    pub fn k_l(&self) -> usize {
        self.q.dims()[1]
    }
    pub fn k_exp(&self) -> usize {
        self.q.dims()[2]
    }
    pub fn k_id(&self) -> usize {
        self.q.dims()[3]
    }
    pub fn k_3d(&self) -> usize {
        self.b.dims()[0]
    }

    /// Mode-1 matricization of the texture core (a plain reshape of its
    /// column-major buffer).
    pub fn q1(&self) -> Mat {
        unfold(&self.q, 1).expect("order-4 core")
    }

    /// Mode-1 matricization of the shape core.
    pub fn b1(&self) -> Mat {
        unfold(&self.b, 1).expect("order-3 core")
    }
}

/// One sample's latent code as produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    /// Lighting code, length `k_l`.
    pub z_l: Vec<f64>,
    /// Pose code, length 9 (a row-major flattened 3x3 matrix).
    pub z_p: Vec<f64>,
    /// Expression code, length `k_exp`.
    pub z_exp: Vec<f64>,
    /// Identity code, length `k_id`.
    pub z_id: Vec<f64>,
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "{name} has length {}, expected {want}",
            v.len()
        )));
    }
    Ok(())
}

/// Frontal texture from one latent triple: contract the texture core against
/// the lighting, expression and identity codes (modes 2, 3, 4).
pub fn texture_decode(core: &CoreModel, z_l: &[f64], z_exp: &[f64], z_id: &[f64]) -> Result<Vec<f64>> {
    check_len("z_l", z_l, core.k_l())?;
    check_len("z_exp", z_exp, core.k_exp())?;
    check_len("z_id", z_id, core.k_id())?;
    let out = mode_vec_chain(&core.q, &[(2, z_l), (3, z_exp), (4, z_id)])?;
    Ok(out.into_data())
}

/// Batch variant of [`texture_decode`]: columns of the inputs are samples.
/// Computed as `q1 * (Z_id (.) Z_exp (.) Z_l)`; agrees with the per-sample
/// path to floating-point accuracy.
pub fn texture_decode_batch(core: &CoreModel, z_l: &Mat, z_exp: &Mat, z_id: &Mat) -> Result<Mat> {
    if z_l.cols() != z_exp.cols() || z_l.cols() != z_id.cols() {
        return Err(Error::ShapeMismatch(format!(
            "batch sizes disagree: {} / {} / {}",
            z_l.cols(),
            z_exp.cols(),
            z_id.cols()
        )));
    }
    check_len("z_l rows", &vec![0.0; z_l.rows()], core.k_l())?;
    check_len("z_exp rows", &vec![0.0; z_exp.rows()], core.k_exp())?;
    check_len("z_id rows", &vec![0.0; z_id.rows()], core.k_id())?;
    let kr = khatri_rao_chain(&[z_id, z_exp, z_l])?;
    Ok(core.q1().mul(&kr))
}

/// 3-D shape from an (expression, identity) pair: contract the shape core on
/// modes 2 and 3.
pub fn shape_decode(core: &CoreModel, z_exp: &[f64], z_id: &[f64]) -> Result<Vec<f64>> {
    check_len("z_exp", z_exp, core.k_exp())?;
    check_len("z_id", z_id, core.k_id())?;
    let out = mode_vec_chain(&core.b, &[(2, z_exp), (3, z_id)])?;
    Ok(out.into_data())
}

/// Normals from the texture core under a constant lighting code `1/k_l`.
pub fn normals_decode(core: &CoreModel, z_exp: &[f64], z_id: &[f64]) -> Result<Vec<f64>> {
    let uniform = vec![1.0 / core.k_l() as f64; core.k_l()];
    texture_decode(core, &uniform, z_exp, z_id)
}

/// Interpret a length-9 pose code as a 3x3 matrix, **row-major**.
pub fn pose_matrix(z_p: &[f64]) -> Result<Mat> {
    check_len("z_p", z_p, 9)?;
    Ok(Mat::from_fn(3, 3, |r, c| z_p[3 * r + c]))
}

/// Inverse of [`pose_matrix`]: flatten a 3x3 matrix row-major.
pub fn pose_vector(r: &Mat) -> Result<Vec<f64>> {
    if r.rows() != 3 || r.cols() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "pose matrix must be 3x3, got {}x{}",
            r.rows(),
            r.cols()
        )));
    }
    Ok((0..9).map(|i| r[(i / 3, i % 3)]).collect())
}

/// Rotate a feature vector: reshape it column-major into a 3-row matrix,
/// left-multiply by `r`, and flatten back. The feature length must be a
/// positive multiple of 3.
pub fn rotate_feature(feature: &[f64], r: &Mat) -> Result<Vec<f64>> {
    if r.rows() != 3 || r.cols() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "rotation must be 3x3, got {}x{}",
            r.rows(),
            r.cols()
        )));
    }
    if feature.is_empty() || feature.len() % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "feature length {} is not a positive multiple of 3",
            feature.len()
        )));
    }
    let mut out = vec![0.0; feature.len()];
    for (triple, out_triple) in feature.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
        for row in 0..3 {
            out_triple[row] =
                r[(row, 0)] * triple[0] + r[(row, 1)] * triple[1] + r[(row, 2)] * triple[2];
        }
    }
    Ok(out)
}

fn det3(m: &Mat) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

pub(crate) fn inv3(m: &Mat) -> Result<Mat> {
    let d = det3(m);
    if d == 0.0 {
        return Err(Error::Singular("3x3 matrix has zero determinant".into()));
    }
    let mut inv = Mat::zeros(3, 3);
    for r in 0..3 {
        for c in 0..3 {
            // Cofactor expansion; note the transpose (adjugate).
            let (r1, r2) = match c {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c1, c2) = match r {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[(r1, c1)] * m[(r2, c2)] - m[(r1, c2)] * m[(r2, c1)];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            inv[(r, c)] = sign * minor / d;
        }
    }
    Ok(inv)
}

/// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix. Returns the
/// eigenvalues (descending) and the matching orthonormal eigenvector columns.
fn jacobi_eig3(s: &Mat) -> ([f64; 3], Mat) {
    let mut a = s.clone();
    let mut v = Mat::identity(3);
    for _ in 0..50 {
        let off = a[(0, 1)].abs() + a[(0, 2)].abs() + a[(1, 2)].abs();
        if off < 1e-300 || off < 1e-15 * (a[(0, 0)].abs() + a[(1, 1)].abs() + a[(2, 2)].abs()) {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = 0.5 * (a[(q, q)] - a[(p, p)]) / apq;
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * c;
            // A <- J^T A J and V <- V J, with J the (p, q) Givens rotation.
            for k in 0..3 {
                let akp = a[(k, p)];
                let akq = a[(k, q)];
                a[(k, p)] = c * akp - sn * akq;
                a[(k, q)] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[(p, k)];
                let aqk = a[(q, k)];
                a[(p, k)] = c * apk - sn * aqk;
                a[(q, k)] = sn * apk + c * aqk;
            }
            for k in 0..3 {
                let vkp = v[(k, p)];
                let vkq = v[(k, q)];
                v[(k, p)] = c * vkp - sn * vkq;
                v[(k, q)] = sn * vkp + c * vkq;
            }
        }
    }
    let mut pairs: Vec<(f64, [f64; 3])> = (0..3)
        .map(|i| (a[(i, i)], [v[(0, i)], v[(1, i)], v[(2, i)]]))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite eigenvalues"));
    let vals = [pairs[0].0, pairs[1].0, pairs[2].0];
    let vecs = Mat::from_fn(3, 3, |r, c| pairs[c].1[r]);
    (vals, vecs)
}

/// Orthogonal-Procrustes projection: the rotation (determinant +1) nearest to
/// `m` in the Frobenius norm. Fails if `m` is not 3x3 or is rank-deficient.
pub fn nearest_rotation(m: &Mat) -> Result<Mat> {
    if m.rows() != 3 || m.cols() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "nearest_rotation expects a 3x3 matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("nearest_rotation input".into()));
    }
    let s = m.t_mul(m);
    let (vals, v) = jacobi_eig3(&s);
    let sigma: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    if sigma[2] <= 1e-12 * sigma[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(
            "nearest_rotation input has rank < 3".into(),
        ));
    }
    // U = M V diag(1/sigma); flip the smallest-singular-value column when
    // det(M) < 0 so the product has determinant +1.
    let mut u = Mat::zeros(3, 3);
    for c in 0..3 {
        let col = m.mul_vec(v.col(c));
        for r in 0..3 {
            u[(r, c)] = col[r] / sigma[c];
        }
    }
    let flip = if det3(m) < 0.0 { -1.0 } else { 1.0 };
    let mut r = Mat::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            r[(i, j)] = u[(i, 0)] * v[(j, 0)] + u[(i, 1)] * v[(j, 1)] + flip * u[(i, 2)] * v[(j, 2)];
        }
    }
    // A couple of Newton polar steps polish orthogonality without moving the
    // determinant sign.
    for _ in 0..2 {
        let rinv_t = inv3(&r)?.transpose();
        for i in 0..9 {
            r.data_mut()[i] = 0.5 * (r.data()[i] + rinv_t.data()[i]);
        }
    }
    Ok(r)
}

/// Rotation angle (radians) of an orthogonal 3x3 matrix.
pub fn rotation_angle(r: &Mat) -> Result<f64> {
    if r.rows() != 3 || r.cols() != 3 {
        return Err(Error::ShapeMismatch("rotation_angle expects a 3x3 matrix".into()));
    }
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    Ok(((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos())
}

/// Yaw rotation (about the vertical axis) by `theta` radians.
pub fn yaw_rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_rows(&[&[c, 0.0, s], &[0.0, 1.0, 0.0], &[-s, 0.0, c]])
}

/// Yaw angle (radians) of a rotation produced by [`yaw_rotation`]-like poses.
pub fn yaw_angle(r: &Mat) -> Result<f64> {
    if r.rows() != 3 || r.cols() != 3 {
        return Err(Error::ShapeMismatch("yaw_angle expects a 3x3 matrix".into()));
    }
    Ok(r[(0, 2)].atan2(r[(0, 0)]))
}

/// The 9-term second-order shading basis evaluated at a unit normal, in the
/// fixed order `[1, nx, ny, nz, nx*ny, nx*nz, ny*nz, nx^2 - ny^2, 3*nz^2 - 1]`.
pub fn sh_basis(n: &[f64; 3]) -> [f64; 9] {
    let [x, y, z] = *n;
    [1.0, x, y, z, x * y, x * z, y * z, x * x - y * y, 3.0 * z * z - 1.0]
}

/// Gradient of each basis term with respect to the normal.
pub(crate) fn sh_basis_grad(n: &[f64; 3]) -> [[f64; 3]; 9] {
    let [x, y, z] = *n;
    [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [y, x, 0.0],
        [z, 0.0, x],
        [0.0, z, y],
        [2.0 * x, -2.0 * y, 0.0],
        [0.0, 0.0, 6.0 * z],
    ]
}

/// Shading of unit normals (columns of a 3-row matrix) under the leading
/// `l.len()` terms of the 9-term basis. Callers are expected to pass unit
/// normals; no normalization happens here.
pub fn shade_leading(normals: &Mat, l: &[f64]) -> Result<Vec<f64>> {
    if normals.rows() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "normals must have 3 rows, got {}",
            normals.rows()
        )));
    }
    if l.is_empty() || l.len() > 9 {
        return Err(Error::InvalidArgument(format!(
            "lighting code length {} not in 1..=9",
            l.len()
        )));
    }
    let mut out = Vec::with_capacity(normals.cols());
    for j in 0..normals.cols() {
        let col = normals.col(j);
        let basis = sh_basis(&[col[0], col[1], col[2]]);
        out.push(basis[..l.len()].iter().zip(l.iter()).map(|(b, w)| b * w).sum());
    }
    Ok(out)
}

/// Shading of unit normals under the full 9-term basis. Normal columns must
/// have unit Euclidean length within `1e-6`.
pub fn sh_shading(normals: &Mat, l: &[f64]) -> Result<Vec<f64>> {
    if l.len() != 9 {
        return Err(Error::ShapeMismatch(format!(
            "lighting code must have length 9, got {}",
            l.len()
        )));
    }
    for j in 0..normals.cols().max(0) {
        if normals.rows() != 3 {
            break; // shade_leading reports the shape error
        }
        let col = normals.col(j);
        let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "normal column {j} has length {norm}, expected 1 within 1e-6"
            )));
        }
    }
    shade_leading(normals, l)
}

/// Expand one shading value per surface point into one value per vector
/// entry (each point covers three consecutive entries), so a per-point
/// shading can gate a full-length albedo in [`render`].
pub fn expand_shading(shading: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(shading.len() * 3);
    for &s in shading {
        out.extend_from_slice(&[s, s, s]);
    }
    out
}

/// Elementwise product of equal-length albedo and shading vectors.
pub fn render(albedo: &[f64], shading: &[f64]) -> Result<Vec<f64>> {
    if albedo.len() != shading.len() {
        return Err(Error::ShapeMismatch(format!(
            "albedo length {} and shading length {} disagree",
            albedo.len(),
            shading.len()
        )));
    }
    Ok(albedo.iter().zip(shading.iter()).map(|(a, s)| a * s).collect())
}

/// View a length-`3p` vector as a 3-row matrix of `p` per-point triples
/// (column-major reshape).
pub fn as_triples(v: &[f64]) -> Result<Mat> {
    if v.is_empty() || v.len() % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "length {} is not a positive multiple of 3",
            v.len()
        )));
    }
    Mat::from_col_major(3, v.len() / 3, v.to_vec())
}

/// Normalize each consecutive triple of `v` to unit Euclidean length.
/// Zero triples are rejected.
pub fn normalize_triples(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() || v.len() % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "length {} is not a positive multiple of 3",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    for (j, triple) in out.chunks_exact_mut(3).enumerate() {
        let n = (triple[0] * triple[0] + triple[1] * triple[1] + triple[2] * triple[2]).sqrt();
        if n == 0.0 {
            return Err(Error::NonFinite(format!("normal triple {j} has zero length")));
        }
        triple[0] /= n;
        triple[1] /= n;
        triple[2] /= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn_mat, randn_tensor, randn_vec, rng_for};
    use crate::tensor::DenseTensor;

    fn zero_maps(k_exp: usize, k_id: usize) -> (Dense, Dense) {
        (Dense::zeros(k_exp, k_exp), Dense::zeros(k_id, k_id))
    }

    fn tiny_core() -> CoreModel {
        // k_x = 2, k_l = 2, k_exp = k_id = 1; mode-2 slices [1,2] and [3,4].
        let q = DenseTensor::new(vec![2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::new(vec![1, 1, 1], vec![0.0]).unwrap();
        let (em, im) = zero_maps(1, 1);
        CoreModel::new(q, b, em, im).unwrap()
    }

    #[test]
    fn texture_decode_tiny_example() {
        let core = tiny_core();
        let out = texture_decode(&core, &[1.0, 1.0], &[1.0], &[1.0]).unwrap();
        assert_eq!(out, vec![4.0, 6.0]);
    }

    #[test]
    fn normals_decode_tiny_example() {
        let core = tiny_core();
        let out = normals_decode(&core, &[1.0], &[1.0]).unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
    }

    #[test]
    fn shape_decode_matches_matricized_form() {
        // Shape core with mode-1 matricization [[1,0,0,0],[0,0,0,1]] under the
        // id-fastest column convention of the reference identity
        // x = B1 (z_exp (x) z_id): B[0,0,0] = 1 and B[1,1,1] = 1.
        let mut b = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        b.set(&[0, 0, 0], 1.0);
        b.set(&[1, 1, 1], 1.0);
        let q = DenseTensor::zeros(vec![1, 1, 2, 2]).unwrap();
        let (em, im) = zero_maps(2, 2);
        let core = CoreModel::new(q, b, em, im).unwrap();
        let out = shape_decode(&core, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![3.0, 8.0]);
    }

    #[test]
    fn per_sample_and_batch_texture_paths_agree() {
        let mut rng = rng_for(21, 0);
        let (k_x, k_l, k_exp, k_id, n) = (5, 3, 2, 4, 6);
        let q = randn_tensor(&mut rng, vec![k_x, k_l, k_exp, k_id], 1.0);
        let b = randn_tensor(&mut rng, vec![2, k_exp, k_id], 1.0);
        let (em, im) = zero_maps(k_exp, k_id);
        let core = CoreModel::new(q, b, em, im).unwrap();
        let zl = randn_mat(&mut rng, k_l, n, 1.0);
        let ze = randn_mat(&mut rng, k_exp, n, 1.0);
        let zi = randn_mat(&mut rng, k_id, n, 1.0);
        let batch = texture_decode_batch(&core, &zl, &ze, &zi).unwrap();
        for c in 0..n {
            let single = texture_decode(&core, zl.col(c), ze.col(c), zi.col(c)).unwrap();
            for (a, b) in single.iter().zip(batch.col(c)) {
                let scale = a.abs().max(1.0);
                assert!((a - b).abs() / scale < 1e-12, "column {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rotate_feature_frozen_example() {
        let r = Mat::from_rows(&[&[-1.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let out = rotate_feature(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &r).unwrap();
        assert_eq!(out, vec![-1.0, -2.0, 3.0, -4.0, -5.0, 6.0]);
    }

    #[test]
    fn rotate_feature_rejects_bad_lengths() {
        let r = Mat::identity(3);
        assert!(rotate_feature(&[1.0, 2.0], &r).is_err());
        assert!(rotate_feature(&[], &r).is_err());
        assert!(rotate_feature(&[1.0; 6], &Mat::identity(2)).is_err());
    }

    #[test]
    fn pose_matrix_is_row_major() {
        let z_p: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let r = pose_matrix(&z_p).unwrap();
        assert_eq!(r[(0, 1)], 2.0);
        assert_eq!(r[(1, 0)], 4.0);
        assert_eq!(pose_vector(&r).unwrap(), z_p);
    }

    #[test]
    fn nearest_rotation_fixes_a_rotation() {
        let r0 = yaw_rotation(0.7);
        let r = nearest_rotation(&r0).unwrap();
        for (a, b) in r.data().iter().zip(r0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_rotation_is_orthogonal_with_positive_determinant() {
        let mut rng = rng_for(31, 0);
        for trial in 0..20 {
            let m = randn_mat(&mut rng, 3, 3, 1.0);
            if det3(&m).abs() < 1e-3 {
                continue;
            }
            let r = nearest_rotation(&m).unwrap();
            let gram = r.t_mul(&r);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (gram[(i, j)] - want).abs() < 1e-10,
                        "trial {trial}: R^T R deviates at ({i}, {j})"
                    );
                }
            }
            assert!((det3(&r) - 1.0).abs() < 1e-10, "trial {trial}: determinant {}", det3(&r));
        }
    }

    #[test]
    fn nearest_rotation_beats_random_rotations() {
        // Frobenius optimality against a seeded random search.
        let mut rng = rng_for(32, 0);
        let m = randn_mat(&mut rng, 3, 3, 1.0);
        let best = nearest_rotation(&m).unwrap();
        let best_dist = best.sub(&m).frob_sq();
        for _ in 0..1000 {
            let axis = randn_vec(&mut rng, 3, 1.0);
            let angle = crate::rng::randn(&mut rng);
            let candidate = rotation_from_axis_angle(&axis, angle);
            let dist = candidate.sub(&m).frob_sq();
            assert!(best_dist <= dist + 1e-12);
        }
    }

    fn rotation_from_axis_angle(axis: &[f64], angle: f64) -> Mat {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat::from_rows(&[
            &[t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            &[t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            &[t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    #[test]
    fn nearest_rotation_rejects_rank_deficient_input() {
        let mut m = Mat::zeros(3, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        assert!(matches!(nearest_rotation(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn ambient_lighting_shades_to_one() {
        let normals = Mat::from_col_major(3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut l = vec![0.0; 9];
        l[0] = 1.0;
        let s = sh_shading(&normals, &l).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn shading_matches_hand_basis() {
        let n = [0.6, 0.0, 0.8];
        let normals = Mat::from_col_major(3, 1, n.to_vec()).unwrap();
        let l: Vec<f64> = (1..=9).map(|v| v as f64 / 10.0).collect();
        let s = sh_shading(&normals, &l).unwrap();
        let basis = sh_basis(&n);
        let want: f64 = basis.iter().zip(&l).map(|(b, w)| b * w).sum();
        assert!((s[0] - want).abs() < 1e-15);
    }

    #[test]
    fn sh_shading_rejects_non_unit_normals() {
        let normals = Mat::from_col_major(3, 1, vec![1.0, 1.0, 0.0]).unwrap();
        let l = vec![0.0; 9];
        assert!(matches!(sh_shading(&normals, &l), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn render_multiplies_elementwise() {
        let out = render(&[1.0, 2.0, 3.0], &[4.0, 0.5, -1.0]).unwrap();
        assert_eq!(out, vec![4.0, 1.0, -3.0]);
        assert!(render(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_triples_yields_unit_normals() {
        let v = vec![3.0, 4.0, 0.0, 0.0, 0.0, -2.0];
        let n = normalize_triples(&v).unwrap();
        assert!((n[0] - 0.6).abs() < 1e-15);
        assert!((n[1] - 0.8).abs() < 1e-15);
        assert_eq!(&n[3..], &[0.0, 0.0, -1.0]);
        assert!(normalize_triples(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn yaw_angle_round_trip() {
        for &deg in &[-60.0, -20.0, 0.0, 45.0] {
            let theta = deg * std::f64::consts::PI / 180.0;
            let r = yaw_rotation(theta);
            assert!((yaw_angle(&r).unwrap() - theta).abs() < 1e-12);
            assert!((rotation_angle(&r).unwrap() - theta.abs()).abs() < 1e-12);
        }
    }
}
