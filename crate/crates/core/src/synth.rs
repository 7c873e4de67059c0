//! Planted-model data generator: a seeded generative process with known
//! cores and labeled factors produces observations the network should be
//! able to invert, plus the dataset file format.
//!
//! Each sample belongs to one `(expression, identity, pose)` cell. Latent
//! codes are class prototypes plus a small per-sample perturbation; poses
//! are fixed yaw rotations evenly spaced in [-60°, +60°]. The observation is
//! built with exactly the algebra the network decodes: a 2-way feature
//! rotated by the planted pose, an albedo map and a normals map applied to
//! the rotated feature, per-point normalization, spherical-harmonics shading
//! by the lighting code, and a final render plus optional Gaussian noise.
//! Frontal texture, shape and frontal normal targets come from the planted
//! multilinear cores, so every supervision target is exactly realizable.

use std::path::Path;

use crate::arrayfile::ArrayFile;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::multilinear::{
    as_triples, expand_shading, normalize_triples, pose_vector, render, shade_leading,
    yaw_rotation,
};
use crate::neuro::kron_pair;
use crate::rng::{randn, randn_tensor, randn_vec, rng_for};
use crate::tensor::{khatri_rao_chain, mode_vec_product, unfold, DenseTensor};

/// Magic bytes of the dataset file format.
pub const DATASET_MAGIC: [u8; 4] = *b"NTDS";

/// Extents, grid shape, noise level and seed of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub k_x: usize,
    pub k_3d: usize,
    pub k_l: usize,
    pub k_exp: usize,
    pub k_id: usize,
    pub n_identities: usize,
    pub n_expressions: usize,
    pub n_poses: usize,
    pub samples_per_cell: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            k_x: 24,
            k_3d: 15,
            k_l: 3,
            k_exp: 3,
            k_id: 4,
            n_identities: 20,
            n_expressions: 6,
            n_poses: 7,
            samples_per_cell: 1,
            noise_std: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_x", self.k_x),
            ("k_3d", self.k_3d),
            ("k_l", self.k_l),
            ("k_exp", self.k_exp),
            ("k_id", self.k_id),
            ("n_identities", self.n_identities),
            ("n_expressions", self.n_expressions),
            ("n_poses", self.n_poses),
            ("samples_per_cell", self.samples_per_cell),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.k_exp * self.k_id % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "k_exp * k_id = {} must be divisible by 3 for the rotation layer",
                self.k_exp * self.k_id
            )));
        }
        if self.k_x % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "k_x = {} must be divisible by 3 (three entries per surface point)",
                self.k_x
            )));
        }
        if self.k_l > 9 {
            return Err(Error::InvalidArgument(format!(
                "k_l = {} exceeds the 9-term shading basis",
                self.k_l
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Total sample count of the full grid.
    pub fn n_samples(&self) -> usize {
        self.n_expressions * self.n_identities * self.n_poses * self.samples_per_cell
    }
}

/// The planted yaw angles (radians), evenly spaced in [-60°, +60°];
/// a single pose is frontal.
pub fn yaw_angles(n_poses: usize) -> Vec<f64> {
    let span = 60f64.to_radians();
    if n_poses == 1 {
        return vec![0.0];
    }
    (0..n_poses)
        .map(|p| -span + 2.0 * span * p as f64 / (n_poses - 1) as f64)
        .collect()
}

/// A generated dataset: observations, every pseudo-supervision target, the
/// true latents and labels behind each sample, and the planted cores.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub cfg: SynthConfig,
    /// Posed observations, `k_x x n`.
    pub x: Mat,
    /// Frontal texture targets, `k_x x n`.
    pub x_f: Mat,
    /// Shape targets, `k_3d x n`.
    pub x_3d: Mat,
    /// Frontal unit-normal targets, `k_x x n`.
    pub normals: Mat,
    /// Planted pose rotations, row-major flattened, `9 x n`.
    pub pose: Mat,
    /// Pseudo expression targets (the true latents), `k_exp x n`.
    pub exp_target: Mat,
    /// Pseudo identity targets (the true latents), `k_id x n`.
    pub id_target: Mat,
    /// Class and pose labels per sample.
    pub label_exp: Vec<usize>,
    pub label_id: Vec<usize>,
    pub label_pose: Vec<usize>,
    /// True latent codes per sample.
    pub z_l: Mat,
    pub z_exp: Mat,
    pub z_id: Mat,
    /// Planted texture core, `k_x x k_l x k_exp x k_id`.
    pub core_q: DenseTensor,
    /// Planted shape core, `k_3d x k_exp x k_id`.
    pub core_b: DenseTensor,
    /// Planted albedo map from the rotated 2-way feature, `k_x x (k_exp k_id)`.
    pub albedo_map: Mat,
}

impl SynthDataset {
    pub fn n_samples(&self) -> usize {
        self.x.cols()
    }

    /// The planted yaw (radians) of each sample.
    pub fn yaw_per_sample(&self) -> Vec<f64> {
        let yaws = yaw_angles(self.cfg.n_poses);
        self.label_pose.iter().map(|&p| yaws[p]).collect()
    }

    /// Near-frontal mask at a |yaw| threshold given in degrees.
    pub fn frontal_mask(&self, threshold_degrees: f64) -> Vec<bool> {
        let limit = threshold_degrees.to_radians();
        self.yaw_per_sample().iter().map(|&y| y.abs() <= limit).collect()
    }
}

/// The normals map from the rotated 2-way feature: the texture core
/// contracted with uniform lighting `1/k_l`, matricized along the data mode,
/// with columns permuted from the core's (expression-fastest) order to the
/// 2-way feature's (identity-fastest) order.
pub(crate) fn normals_map(core_q: &DenseTensor) -> Result<Mat> {
    let dims = core_q.dims();
    let (k_x, k_l, k_exp, k_id) = (dims[0], dims[1], dims[2], dims[3]);
    let uniform = vec![1.0 / k_l as f64; k_l];
    let contracted = mode_vec_product(core_q, &uniform, 2)?;
    let n1 = unfold(&contracted, 1)?;
    let mut out = Mat::zeros(k_x, k_exp * k_id);
    for e in 0..k_exp {
        for i in 0..k_id {
            out.set_col(e * k_id + i, n1.col(i * k_exp + e));
        }
    }
    Ok(out)
}

/// Generate the full labeled grid from a seeded planted model.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    let n = cfg.n_samples();
    let m = cfg.k_exp * cfg.k_id;

    // Planted cores and maps, drawn once.
    let q_scale = 1.0 / ((cfg.k_l * cfg.k_exp * cfg.k_id) as f64).sqrt();
    let b_scale = 1.0 / (m as f64).sqrt();
    let core_q = randn_tensor(&mut rng, vec![cfg.k_x, cfg.k_l, cfg.k_exp, cfg.k_id], q_scale);
    let core_b = randn_tensor(&mut rng, vec![cfg.k_3d, cfg.k_exp, cfg.k_id], b_scale);
    let albedo_map = crate::rng::randn_mat(&mut rng, cfg.k_x, m, b_scale);
    let n_map = normals_map(&core_q)?;

    // Class prototypes (one global lighting prototype).
    let proto_l = randn_vec(&mut rng, cfg.k_l, 1.0);
    let proto_exp: Vec<Vec<f64>> = (0..cfg.n_expressions)
        .map(|_| randn_vec(&mut rng, cfg.k_exp, 1.0))
        .collect();
    let proto_id: Vec<Vec<f64>> = (0..cfg.n_identities)
        .map(|_| randn_vec(&mut rng, cfg.k_id, 1.0))
        .collect();

    let yaws = yaw_angles(cfg.n_poses);
    let rotations: Vec<Mat> = yaws.iter().map(|&y| yaw_rotation(y)).collect();
    let pose_vectors: Vec<Vec<f64>> =
        rotations.iter().map(|r| pose_vector(r)).collect::<Result<_>>()?;

    let mut x = Mat::zeros(cfg.k_x, n);
    let mut normals = Mat::zeros(cfg.k_x, n);
    let mut pose = Mat::zeros(9, n);
    let mut label_exp = Vec::with_capacity(n);
    let mut label_id = Vec::with_capacity(n);
    let mut label_pose = Vec::with_capacity(n);
    let mut z_l = Mat::zeros(cfg.k_l, n);
    let mut z_exp = Mat::zeros(cfg.k_exp, n);
    let mut z_id = Mat::zeros(cfg.k_id, n);

    const PERTURB: f64 = 0.1;
    let mut c = 0;
    for e in 0..cfg.n_expressions {
        for i in 0..cfg.n_identities {
            for p in 0..cfg.n_poses {
                for _ in 0..cfg.samples_per_cell {
                    let ze: Vec<f64> = proto_exp[e]
                        .iter()
                        .map(|&v| v + PERTURB * randn(&mut rng))
                        .collect();
                    let zi: Vec<f64> = proto_id[i]
                        .iter()
                        .map(|&v| v + PERTURB * randn(&mut rng))
                        .collect();
                    let zl: Vec<f64> =
                        proto_l.iter().map(|&v| v + PERTURB * randn(&mut rng)).collect();

                    let f = kron_pair(&ze, &zi);
                    let rf = crate::multilinear::rotate_feature(&f, &rotations[p])?;
                    let albedo = albedo_map.mul_vec(&rf);
                    let posed_normals = normalize_triples(&n_map.mul_vec(&rf))?;
                    let shading = shade_leading(&as_triples(&posed_normals)?, &zl)?;
                    let mut col = render(&albedo, &expand_shading(&shading))?;
                    for v in col.iter_mut() {
                        *v += cfg.noise_std * randn(&mut rng);
                    }
                    x.set_col(c, &col);

                    // Frontal normal target: the same map with the identity
                    // rotation, i.e. applied to the raw feature.
                    let frontal_normals = normalize_triples(&n_map.mul_vec(&f))?;
                    normals.set_col(c, &frontal_normals);
                    pose.set_col(c, &pose_vectors[p]);
                    z_l.set_col(c, &zl);
                    z_exp.set_col(c, &ze);
                    z_id.set_col(c, &zi);
                    label_exp.push(e);
                    label_id.push(i);
                    label_pose.push(p);
                    c += 1;
                }
            }
        }
    }

    // Frontal texture and shape targets in one planted batch product each,
    // so the stored targets satisfy the planted relations bit-exactly.
    let q1 = unfold(&core_q, 1)?;
    let b1 = unfold(&core_b, 1)?;
    let x_f = q1.mul(&khatri_rao_chain(&[&z_id, &z_exp, &z_l])?);
    let x_3d = b1.mul(&khatri_rao_chain(&[&z_id, &z_exp])?);

    Ok(SynthDataset {
        cfg: cfg.clone(),
        x,
        x_f,
        x_3d,
        normals,
        pose,
        exp_target: z_exp.clone(),
        id_target: z_id.clone(),
        label_exp,
        label_id,
        label_pose,
        z_l,
        z_exp,
        z_id,
        core_q,
        core_b,
        albedo_map,
    })
}

fn labels_to_f64(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&v| v as f64).collect()
}

fn labels_from_f64(name: &str, values: &[f64], limit: usize) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v < 0.0 || v >= limit as f64 {
                return Err(Error::InvalidArgument(format!(
                    "array `{name}` holds {v}, not a label below {limit}"
                )));
            }
            Ok(v as usize)
        })
        .collect()
}

fn tensor(file: &ArrayFile, name: &str, dims: &[usize]) -> Result<DenseTensor> {
    let t = file.require_tensor(name)?;
    if t.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "array `{name}` has extents {:?}, expected {dims:?}",
            t.dims()
        )));
    }
    Ok(t)
}

/// Split a 64-bit seed into two exactly representable 32-bit halves.
fn seed_to_f64_pair(seed: u64) -> [f64; 2] {
    [(seed >> 32) as f64, (seed & 0xffff_ffff) as f64]
}

fn seed_from_f64_pair(pair: &[f64]) -> Result<u64> {
    let valid = |v: f64| v.fract() == 0.0 && (0.0..4294967296.0).contains(&v);
    if pair.len() != 2 || !valid(pair[0]) || !valid(pair[1]) {
        return Err(Error::InvalidArgument("malformed seed record".into()));
    }
    Ok(((pair[0] as u64) << 32) | pair[1] as u64)
}

/// Serialize a dataset to the `NTDS` container.
pub fn write_dataset(dataset: &SynthDataset, path: impl AsRef<Path>) -> Result<()> {
    let cfg = &dataset.cfg;
    let mut file = ArrayFile::new();
    file.insert_vec(
        "cfg",
        &[
            cfg.k_x as f64,
            cfg.k_3d as f64,
            cfg.k_l as f64,
            cfg.k_exp as f64,
            cfg.k_id as f64,
            cfg.n_identities as f64,
            cfg.n_expressions as f64,
            cfg.n_poses as f64,
            cfg.samples_per_cell as f64,
            cfg.noise_std,
        ],
    )?;
    file.insert_vec("cfg_seed", &seed_to_f64_pair(cfg.seed))?;
    file.insert_mat("x", &dataset.x)?;
    file.insert_mat("x_f", &dataset.x_f)?;
    file.insert_mat("x_3d", &dataset.x_3d)?;
    file.insert_mat("normals", &dataset.normals)?;
    file.insert_mat("pose", &dataset.pose)?;
    file.insert_mat("exp_target", &dataset.exp_target)?;
    file.insert_mat("id_target", &dataset.id_target)?;
    file.insert_vec("label_exp", &labels_to_f64(&dataset.label_exp))?;
    file.insert_vec("label_id", &labels_to_f64(&dataset.label_id))?;
    file.insert_vec("label_pose", &labels_to_f64(&dataset.label_pose))?;
    file.insert_mat("z_l", &dataset.z_l)?;
    file.insert_mat("z_exp", &dataset.z_exp)?;
    file.insert_mat("z_id", &dataset.z_id)?;
    file.insert_tensor("core_q", &dataset.core_q)?;
    file.insert_tensor("core_b", &dataset.core_b)?;
    file.insert_mat("albedo_map", &dataset.albedo_map)?;
    file.write(path.as_ref(), DATASET_MAGIC)
}

/// Read a dataset back from the `NTDS` container, validating shapes and
/// label ranges.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<SynthDataset> {
    let file = ArrayFile::read(path.as_ref(), DATASET_MAGIC)?;
    let cfg_rec = file.require_vec("cfg")?;
    if cfg_rec.len() != 10 {
        return Err(Error::InvalidArgument(format!(
            "config record has {} entries, expected 10",
            cfg_rec.len()
        )));
    }
    let count = |v: f64, name: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
            return Err(Error::InvalidArgument(format!(
                "config entry {name} = {v} is not a positive count"
            )));
        }
        Ok(v as usize)
    };
    let cfg = SynthConfig {
        k_x: count(cfg_rec[0], "k_x")?,
        k_3d: count(cfg_rec[1], "k_3d")?,
        k_l: count(cfg_rec[2], "k_l")?,
        k_exp: count(cfg_rec[3], "k_exp")?,
        k_id: count(cfg_rec[4], "k_id")?,
        n_identities: count(cfg_rec[5], "n_identities")?,
        n_expressions: count(cfg_rec[6], "n_expressions")?,
        n_poses: count(cfg_rec[7], "n_poses")?,
        samples_per_cell: count(cfg_rec[8], "samples_per_cell")?,
        noise_std: cfg_rec[9],
        seed: seed_from_f64_pair(&file.require_vec("cfg_seed")?)?,
    };
    cfg.validate()?;
    let n = cfg.n_samples();

    let mat = |name: &str, rows: usize, cols: usize| -> Result<Mat> {
        let m = file.require_mat(name)?;
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` is {}x{}, expected {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m)
    };
    let dataset = SynthDataset {
        x: mat("x", cfg.k_x, n)?,
        x_f: mat("x_f", cfg.k_x, n)?,
        x_3d: mat("x_3d", cfg.k_3d, n)?,
        normals: mat("normals", cfg.k_x, n)?,
        pose: mat("pose", 9, n)?,
        exp_target: mat("exp_target", cfg.k_exp, n)?,
        id_target: mat("id_target", cfg.k_id, n)?,
        label_exp: labels_from_f64(
            "label_exp",
            &file.require_vec("label_exp")?,
            cfg.n_expressions,
        )?,
        label_id: labels_from_f64("label_id", &file.require_vec("label_id")?, cfg.n_identities)?,
        label_pose: labels_from_f64("label_pose", &file.require_vec("label_pose")?, cfg.n_poses)?,
        z_l: mat("z_l", cfg.k_l, n)?,
        z_exp: mat("z_exp", cfg.k_exp, n)?,
        z_id: mat("z_id", cfg.k_id, n)?,
        core_q: tensor(&file, "core_q", &[cfg.k_x, cfg.k_l, cfg.k_exp, cfg.k_id])?,
        core_b: tensor(&file, "core_b", &[cfg.k_3d, cfg.k_exp, cfg.k_id])?,
        albedo_map: mat("albedo_map", cfg.k_x, cfg.k_exp * cfg.k_id)?,
        cfg,
    };
    for (name, labels) in [
        ("label_exp", &dataset.label_exp),
        ("label_id", &dataset.label_id),
        ("label_pose", &dataset.label_pose),
    ] {
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "array `{name}` has {} entries, expected {n}",
                labels.len()
            )));
        }
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::MultilinearProblem;
    use crate::mat::norm_sq;

    fn small_config() -> SynthConfig {
        SynthConfig {
            k_x: 12,
            k_3d: 6,
            k_l: 3,
            k_exp: 3,
            k_id: 4,
            n_identities: 2,
            n_expressions: 3,
            n_poses: 7,
            samples_per_cell: 4,
            noise_std: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_generates_identical_datasets() {
        let cfg = small_config();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.x, other.x);
    }

    #[test]
    fn noiseless_targets_satisfy_the_planted_relations_exactly() {
        let cfg = small_config();
        let d = generate(&cfg).unwrap();
        let q1 = unfold(&d.core_q, 1).unwrap();
        let b1 = unfold(&d.core_b, 1).unwrap();
        let texture =
            MultilinearProblem::new(&d.x_f, &q1, vec![&d.z_id, &d.z_exp, &d.z_l]).unwrap();
        assert_eq!(texture.loss(), 0.0);
        let shape =
            MultilinearProblem::new(&d.x_3d, &b1, vec![&d.z_id, &d.z_exp]).unwrap();
        assert_eq!(shape.loss(), 0.0);
        // Frontal normals are the planted normals map applied to the raw
        // 2-way feature, then normalized per point.
        let n_map = normals_map(&d.core_q).unwrap();
        for c in 0..d.n_samples() {
            let f = kron_pair(d.z_exp.col(c), d.z_id.col(c));
            let expect = normalize_triples(&n_map.mul_vec(&f)).unwrap();
            assert_eq!(d.normals.col(c), &expect[..]);
        }
    }

    #[test]
    fn one_sample_matches_an_explicit_loop_reimplementation() {
        let cfg = small_config();
        let d = generate(&cfg).unwrap();
        let c = 5;
        let (ze, zi, zl) = (d.z_exp.col(c), d.z_id.col(c), d.z_l.col(c));
        // Rotation from the stored pose record (row-major flattening).
        let pv = d.pose.col(c);
        let r = |row: usize, col: usize| pv[3 * row + col];
        // 2-way feature, rotated point-by-point.
        let m = cfg.k_exp * cfg.k_id;
        let mut f = vec![0.0; m];
        for (j, &e) in ze.iter().enumerate() {
            for (k, &i) in zi.iter().enumerate() {
                f[j * cfg.k_id + k] = e * i;
            }
        }
        let mut rf = vec![0.0; m];
        for point in 0..m / 3 {
            for row in 0..3 {
                rf[3 * point + row] = (0..3)
                    .map(|col| r(row, col) * f[3 * point + col])
                    .sum();
            }
        }
        // Albedo and normals through the stored planted maps.
        let albedo: Vec<f64> = (0..cfg.k_x)
            .map(|row| (0..m).map(|col| d.albedo_map[(row, col)] * rf[col]).sum())
            .collect();
        let n_map = normals_map(&d.core_q).unwrap();
        let mut normals: Vec<f64> = (0..cfg.k_x)
            .map(|row| (0..m).map(|col| n_map[(row, col)] * rf[col]).sum())
            .collect();
        for t in normals.chunks_exact_mut(3) {
            let len = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            for v in t.iter_mut() {
                *v /= len;
            }
        }
        // Shading from the leading basis terms, then the render.
        let mut expect = vec![0.0; cfg.k_x];
        for j in 0..cfg.k_x / 3 {
            let (nx, ny, nz) = (normals[3 * j], normals[3 * j + 1], normals[3 * j + 2]);
            let basis = [1.0, nx, ny, nz];
            let s: f64 = zl.iter().zip(basis).map(|(&l, b)| l * b).sum();
            for row in 0..3 {
                expect[3 * j + row] = albedo[3 * j + row] * s;
            }
        }
        let got = d.x.col(c);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn label_histogram_fills_every_cell_exactly() {
        let cfg = small_config();
        let d = generate(&cfg).unwrap();
        let mut counts =
            vec![0usize; cfg.n_identities * cfg.n_expressions * cfg.n_poses];
        for s in 0..d.n_samples() {
            let cell = (d.label_id[s] * cfg.n_expressions + d.label_exp[s]) * cfg.n_poses
                + d.label_pose[s];
            counts[cell] += 1;
        }
        assert_eq!(counts.len(), 2 * 3 * 7);
        assert!(counts.iter().all(|&c| c == cfg.samples_per_cell));
    }

    #[test]
    fn normal_columns_are_unit_per_point() {
        let d = generate(&small_config()).unwrap();
        for c in 0..d.n_samples() {
            for t in d.normals.col(c).chunks_exact(3) {
                assert!((norm_sq(t).sqrt() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn frontal_pose_stores_the_identity_rotation() {
        let cfg = small_config();
        let d = generate(&cfg).unwrap();
        let yaws = yaw_angles(cfg.n_poses);
        let middle = cfg.n_poses / 2;
        assert!(yaws[middle].abs() < 1e-15);
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for s in 0..d.n_samples() {
            if d.label_pose[s] == middle {
                let pv = d.pose.col(s);
                for (a, b) in pv.iter().zip(identity) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
        let mask = d.frontal_mask(15.0);
        for s in 0..d.n_samples() {
            assert_eq!(mask[s], yaws[d.label_pose[s]].abs() <= 15f64.to_radians());
        }
    }

    #[test]
    fn yaw_angles_are_evenly_spaced_and_symmetric() {
        let y = yaw_angles(7);
        assert_eq!(y.len(), 7);
        assert!((y[0] + 60f64.to_radians()).abs() < 1e-15);
        assert!((y[6] - 60f64.to_radians()).abs() < 1e-15);
        for w in y.windows(2) {
            assert!((w[1] - w[0] - 20f64.to_radians()).abs() < 1e-12);
        }
        assert_eq!(yaw_angles(1), vec![0.0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = generate(&SynthConfig {
            noise_std: 0.05,
            seed: u64::MAX - 3,
            ..small_config()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ntds");
        write_dataset(&d, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn corrupted_files_are_rejected_with_distinct_errors() {
        let d = generate(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ntds");
        write_dataset(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        let bad_path = dir.path().join("bad.ntds");
        std::fs::write(&bad_path, &bad_magic).unwrap();
        assert!(matches!(read_dataset(&bad_path), Err(Error::BadMagic { .. })));

        let truncated = &bytes[..bytes.len() / 2];
        std::fs::write(&bad_path, truncated).unwrap();
        assert!(matches!(read_dataset(&bad_path), Err(Error::Truncated { .. })));

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        std::fs::write(&bad_path, &flipped).unwrap();
        assert!(matches!(read_dataset(&bad_path), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn invalid_extents_are_rejected() {
        let cfg = SynthConfig { k_x: 10, ..small_config() };
        assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
        let cfg = SynthConfig { k_exp: 2, k_id: 2, ..small_config() };
        assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
        let cfg = SynthConfig { noise_std: -0.1, ..small_config() };
        assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
        let cfg = SynthConfig { n_poses: 0, ..small_config() };
        assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
    }
}
