//! The desk-scale autoencoder: an encoder producing lighting, pose,
//! expression and identity codes, three decoder streams, every training loss
//! term, and the equilibrium balance for the adversarial term.
//!
//! Decoder streams, given a code:
//! 1. shape — expression and identity are joined by 2-way synthesis and
//!    projected through the shape core into a 3-D shape estimate;
//! 2. posed image — the same 2-way feature is rotated by the rotation
//!    nearest to the reshaped pose code, fed through the normal and albedo
//!    stacks, and composed into an image by spherical-harmonics shading;
//! 3. frontal texture — lighting, expression and identity are joined by
//!    3-way synthesis and projected through the texture core (the same code
//!    path as [`texture_decode`]).
//!
//! Every loss term is a batch mean. Gradients are exact: the multilinear
//! terms are routed through [`MultilinearProblem::grad_core`] /
//! [`MultilinearProblem::grad_factor`], the pose projection through a
//! closed-form polar-factor adjoint, and everything else through hand-rolled
//! reverse mode. `backprop` differentiates the full objective with respect
//! to **every** parameter, including the discriminator's view of the
//! generator objective; the discriminator's own objective has its separate
//! [`backprop_discriminator`].

use crate::error::{Error, Result};
use crate::grad::MultilinearProblem;
use crate::mat::{dot, norm_sq, Mat};
use crate::multilinear::{
    as_triples, expand_shading, inv3, nearest_rotation, normalize_triples, pose_matrix,
    rotate_feature, sh_basis, sh_basis_grad, shade_leading, shape_decode, texture_decode,
    CoreModel, LatentCode,
};
use crate::rng::{randn_tensor, rng_for};
use crate::stack::{Dense, Stack};

/// Extents and layer widths of a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub k_x: usize,
    pub k_3d: usize,
    pub k_l: usize,
    pub k_exp: usize,
    pub k_id: usize,
    /// Pseudo-expression target length (defaults to `k_exp`).
    pub d_exp: usize,
    /// Pseudo-identity target length (defaults to `k_id`).
    pub d_id: usize,
    /// Encoder trunk widths after the input (last entry is the shared
    /// feature fed to the heads).
    pub trunk_widths: Vec<usize>,
    /// Hidden widths of the normal and albedo stacks (empty = one affine layer).
    pub stack_widths: Vec<usize>,
    /// Hidden widths of the discriminator autoencoder.
    pub disc_widths: Vec<usize>,
}

impl NetConfig {
    /// Desk-scale defaults around the given extents.
    pub fn desk(k_x: usize, k_3d: usize, k_l: usize, k_exp: usize, k_id: usize) -> NetConfig {
        NetConfig {
            k_x,
            k_3d,
            k_l,
            k_exp,
            k_id,
            d_exp: k_exp,
            d_id: k_id,
            trunk_widths: vec![256, 128],
            stack_widths: vec![],
            disc_widths: vec![32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let any_zero = [
            self.k_x, self.k_3d, self.k_l, self.k_exp, self.k_id, self.d_exp, self.d_id,
        ]
        .iter()
        .any(|&d| d == 0);
        if any_zero {
            return Err(Error::InvalidArgument("all extents must be positive".into()));
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
        if self.trunk_widths.is_empty() {
            return Err(Error::InvalidArgument("the trunk needs at least one layer".into()));
        }
        Ok(())
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// Shared encoder trunk `k_x -> ... -> feature` (activated output).
    pub trunk: Stack,
    /// Linear heads on the trunk feature.
    pub head_l: Dense,
    pub head_p: Dense,
    pub head_exp: Dense,
    pub head_id: Dense,
    /// Decoder stack from the rotated 2-way feature to normals.
    pub normal_stack: Stack,
    /// Decoder stack from the rotated 2-way feature to albedo.
    pub albedo_stack: Stack,
    /// Multilinear cores and pseudo-label maps.
    pub core: CoreModel,
    /// Discriminator autoencoder `k_x -> ... -> k_x`.
    pub disc: Stack,
}

/// Which parameters an optimizer step touches: the alternating loop updates
/// the generator and the discriminator from different objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    Generator,
    Discriminator,
    All,
}

impl NetParams {
    /// Seeded initialization. Weights are standard-normal scaled by
    /// `1/sqrt(fan_in)`; biases are zero except the pose head (identity
    /// rotation, keeping the pose projection well-conditioned from step
    /// one) and the normal stack output (unit `z` per point, keeping the
    /// per-point normalization away from zero).
    pub fn seeded(cfg: &NetConfig, seed: u64) -> Result<NetParams> {
        cfg.validate()?;
        let mut rng = rng_for(seed, 0);
        let mut trunk_chain = vec![cfg.k_x];
        trunk_chain.extend_from_slice(&cfg.trunk_widths);
        let trunk = Stack::seeded(&trunk_chain, true, &mut rng)?;
        let feat = *trunk_chain.last().expect("nonempty chain");

        let head_l = Dense::seeded(cfg.k_l, feat, &mut rng);
        let mut head_p = Dense::seeded(9, feat, &mut rng);
        head_p.b = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let head_exp = Dense::seeded(cfg.k_exp, feat, &mut rng);
        let head_id = Dense::seeded(cfg.k_id, feat, &mut rng);

        let m = cfg.k_exp * cfg.k_id;
        let mut stack_chain = vec![m];
        stack_chain.extend_from_slice(&cfg.stack_widths);
        stack_chain.push(cfg.k_x);
        let mut normal_stack = Stack::seeded(&stack_chain, false, &mut rng)?;
        let last = normal_stack.layers.last_mut().expect("nonempty stack");
        for point in last.b.chunks_exact_mut(3) {
            point[2] = 1.0;
        }
        let albedo_stack = Stack::seeded(&stack_chain, false, &mut rng)?;

        let q_scale = 1.0 / ((cfg.k_l * cfg.k_exp * cfg.k_id) as f64).sqrt();
        let b_scale = 1.0 / ((cfg.k_exp * cfg.k_id) as f64).sqrt();
        let q = randn_tensor(&mut rng, vec![cfg.k_x, cfg.k_l, cfg.k_exp, cfg.k_id], q_scale);
        let b = randn_tensor(&mut rng, vec![cfg.k_3d, cfg.k_exp, cfg.k_id], b_scale);
        // Square component maps start at the identity so the latent heads
        // are anchored to the pseudo-target basis from the first step;
        // rectangular maps fall back to a random draw. Either way the rng
        // stream is consumed so the remaining draws stay put.
        let mut exp_map = Dense::seeded(cfg.d_exp, cfg.k_exp, &mut rng);
        if cfg.d_exp == cfg.k_exp {
            exp_map.w = Mat::identity(cfg.d_exp);
        }
        let mut id_map = Dense::seeded(cfg.d_id, cfg.k_id, &mut rng);
        if cfg.d_id == cfg.k_id {
            id_map.w = Mat::identity(cfg.d_id);
        }
        let core = CoreModel::new(q, b, exp_map, id_map)?;

        let mut disc_chain = vec![cfg.k_x];
        disc_chain.extend_from_slice(&cfg.disc_widths);
        disc_chain.push(cfg.k_x);
        let disc = Stack::seeded(&disc_chain, false, &mut rng)?;

        let params = NetParams {
            trunk,
            head_l,
            head_p,
            head_exp,
            head_id,
            normal_stack,
            albedo_stack,
            core,
            disc,
        };
        params.validate()?;
        Ok(params)
    }

    /// Check internal dimension consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        let k_x = self.core.k_x();
        let feat = self.trunk.out_dim();
        let m = self.core.k_exp() * self.core.k_id();
        let checks = [
            (self.trunk.in_dim() == k_x, "trunk input width"),
            (self.head_l.in_dim() == feat, "lighting head input"),
            (self.head_p.in_dim() == feat, "pose head input"),
            (self.head_exp.in_dim() == feat, "expression head input"),
            (self.head_id.in_dim() == feat, "identity head input"),
            (self.head_l.out_dim() == self.core.k_l(), "lighting head width"),
            (self.head_p.out_dim() == 9, "pose head width"),
            (self.head_exp.out_dim() == self.core.k_exp(), "expression head width"),
            (self.head_id.out_dim() == self.core.k_id(), "identity head width"),
            (self.normal_stack.in_dim() == m, "normal stack input"),
            (self.albedo_stack.in_dim() == m, "albedo stack input"),
            (self.normal_stack.out_dim() == k_x, "normal stack output"),
            (self.albedo_stack.out_dim() == k_x, "albedo stack output"),
            (self.disc.in_dim() == k_x, "discriminator input"),
            (self.disc.out_dim() == k_x, "discriminator output"),
            (m % 3 == 0, "2-way feature divisibility by 3"),
            (k_x % 3 == 0, "k_x divisibility by 3"),
            (self.core.k_l() <= 9, "lighting code length within the basis"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::ShapeMismatch(format!("inconsistent network: {what}")));
            }
        }
        Ok(())
    }

    pub fn k_x(&self) -> usize {
        self.core.k_x()
    }

    /// A same-shape parameter record of zeros (gradient / moment container).
    pub fn zeros_like(&self) -> NetParams {
        let zero_dense =
            |d: &Dense| -> Dense { Dense::zeros(d.out_dim(), d.in_dim()) };
        NetParams {
            trunk: self.trunk.zeros_like(),
            head_l: zero_dense(&self.head_l),
            head_p: zero_dense(&self.head_p),
            head_exp: zero_dense(&self.head_exp),
            head_id: zero_dense(&self.head_id),
            normal_stack: self.normal_stack.zeros_like(),
            albedo_stack: self.albedo_stack.zeros_like(),
            core: CoreModel::new(
                crate::tensor::DenseTensor::zeros(self.core.q.dims().to_vec())
                    .expect("valid dims"),
                crate::tensor::DenseTensor::zeros(self.core.b.dims().to_vec())
                    .expect("valid dims"),
                zero_dense(&self.core.exp_map),
                zero_dense(&self.core.id_map),
            )
            .expect("consistent zero core"),
            disc: self.disc.zeros_like(),
        }
    }

    /// Visit every parameter buffer of the chosen set in a fixed order.
    pub fn visit_mut(&mut self, set: ParamSet, f: &mut impl FnMut(&mut [f64])) {
        let stack = |s: &mut Stack, f: &mut dyn FnMut(&mut [f64])| {
            for layer in &mut s.layers {
                f(layer.w.data_mut());
                f(&mut layer.b);
            }
        };
        if set != ParamSet::Discriminator {
            stack(&mut self.trunk, f);
            for head in [
                &mut self.head_l,
                &mut self.head_p,
                &mut self.head_exp,
                &mut self.head_id,
            ] {
                f(head.w.data_mut());
                f(&mut head.b);
            }
            stack(&mut self.normal_stack, f);
            stack(&mut self.albedo_stack, f);
            f(self.core.q.data_mut());
            f(self.core.b.data_mut());
            f(self.core.exp_map.w.data_mut());
            f(&mut self.core.exp_map.b);
            f(self.core.id_map.w.data_mut());
            f(&mut self.core.id_map.b);
        }
        if set != ParamSet::Generator {
            stack(&mut self.disc, f);
        }
    }

    /// Total parameter count of the chosen set.
    pub fn param_count(&self, set: ParamSet) -> usize {
        let mut n = 0;
        let mut clone = self.clone();
        clone.visit_mut(set, &mut |buf| n += buf.len());
        n
    }
}

/// Nonnegative weights of the loss terms plus the balance hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_veri: f64,
    pub lambda_p: f64,
    pub lambda_exp: f64,
    pub lambda_id: f64,
    pub lambda_3d: f64,
    pub lambda_f: f64,
    pub lambda_n: f64,
    pub began_gamma: f64,
    pub began_lambda_k: f64,
}

impl Default for LossWeights {
    /// Defaults chosen so pseudo-supervision dominates early training; the
    /// adversarial term is a light regularizer.
    fn default() -> LossWeights {
        LossWeights {
            lambda_adv: 0.01,
            lambda_veri: 0.0,
            lambda_p: 1.0,
            lambda_exp: 1.0,
            lambda_id: 1.0,
            lambda_3d: 1.0,
            lambda_f: 1.0,
            lambda_n: 1.0,
            began_gamma: 0.5,
            began_lambda_k: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_adv", self.lambda_adv),
            ("lambda_veri", self.lambda_veri),
            ("lambda_p", self.lambda_p),
            ("lambda_exp", self.lambda_exp),
            ("lambda_id", self.lambda_id),
            ("lambda_3d", self.lambda_3d),
            ("lambda_f", self.lambda_f),
            ("lambda_n", self.lambda_n),
        ];
        for (name, v) in lambdas {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("began_gamma", self.began_gamma),
            ("began_lambda_k", self.began_lambda_k),
        ] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The scalar balancing the discriminator's fake-reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeganState {
    pub k_t: f64,
}

impl BeganState {
    pub fn new(k_t: f64) -> Result<BeganState> {
        if !(0.0..=1.0).contains(&k_t) {
            return Err(Error::InvalidArgument(format!(
                "k_t must lie in [0, 1], got {k_t}"
            )));
        }
        Ok(BeganState { k_t })
    }
}

impl Default for BeganState {
    fn default() -> BeganState {
        BeganState { k_t: 0.0 }
    }
}

/// Proportional-control update of the balance scalar:
/// `k <- clamp(k + lambda_k * (gamma * l_real - l_fake), 0, 1)`.
pub fn began_update(
    state: BeganState,
    l_real: f64,
    l_fake: f64,
    gamma: f64,
    lambda_k: f64,
) -> Result<BeganState> {
    if !(l_real >= 0.0 && l_fake >= 0.0) || !l_real.is_finite() || !l_fake.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "discriminator losses must be finite and nonnegative, got ({l_real}, {l_fake})"
        )));
    }
    for (name, v) in [("gamma", gamma), ("lambda_k", lambda_k)] {
        if !v.is_finite() || v <= 0.0 || v > 1.0 {
            return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    let k = (state.k_t + lambda_k * (gamma * l_real - l_fake)).clamp(0.0, 1.0);
    Ok(BeganState { k_t: k })
}

/// Per-sample pseudo-supervision targets aligned with the observation batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Pseudo {
    /// Frontal texture targets, `k_x x b` (used on near-frontal columns).
    pub x_f: Mat,
    /// Shape targets, `k_3d x b`.
    pub x_3d: Mat,
    /// Frontal normal targets, `k_x x b` (used on near-frontal columns).
    pub normals: Mat,
    /// Pose targets (row-major flattened rotations), `9 x b`.
    pub pose: Mat,
    /// Expression targets, `d_exp x b`.
    pub exp_target: Mat,
    /// Identity targets, `d_id x b`.
    pub id_target: Mat,
    /// Near-frontal mask, length `b`.
    pub frontal: Vec<bool>,
}

impl Pseudo {
    fn check(&self, params: &NetParams, x: &Mat) -> Result<()> {
        let b = x.cols();
        if b == 0 {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        if x.rows() != params.k_x() {
            return Err(Error::ShapeMismatch(format!(
                "batch rows {} do not match k_x = {}",
                x.rows(),
                params.k_x()
            )));
        }
        let cols = [
            ("x_f", self.x_f.cols()),
            ("x_3d", self.x_3d.cols()),
            ("normals", self.normals.cols()),
            ("pose", self.pose.cols()),
            ("exp_target", self.exp_target.cols()),
            ("id_target", self.id_target.cols()),
            ("frontal", self.frontal.len()),
        ];
        for (name, n) in cols {
            if n != b {
                return Err(Error::ShapeMismatch(format!(
                    "pseudo record `{name}` has {n} columns, batch has {b}"
                )));
            }
        }
        let rows = [
            ("x_f", self.x_f.rows(), params.k_x()),
            ("x_3d", self.x_3d.rows(), params.core.k_3d()),
            ("normals", self.normals.rows(), params.k_x()),
            ("pose", self.pose.rows(), 9),
            ("exp_target", self.exp_target.rows(), params.core.exp_map.out_dim()),
            ("id_target", self.id_target.rows(), params.core.id_map.out_dim()),
        ];
        for (name, got, want) in rows {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "pseudo record `{name}` has {got} rows, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Optional external face-embedding hook for the verification term. An
/// implementation must supply its own exact vector-Jacobian product so the
/// whole objective stays exactly differentiable.
pub trait VerificationEmbedding {
    fn embed(&self, x: &[f64]) -> Vec<f64>;
    /// `J(x)^T cot` for the Jacobian `J` of [`VerificationEmbedding::embed`].
    fn embed_vjp(&self, x: &[f64], cot: &[f64]) -> Vec<f64>;
}

/// Named loss values (all batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub recon: f64,
    pub adv: f64,
    pub veri: f64,
    pub pose: f64,
    pub exp: f64,
    pub id: f64,
    pub shape: f64,
    pub frontal_tex: f64,
    pub frontal_normals: f64,
    /// Weighted sum of every term above.
    pub total: f64,
    /// Discriminator reconstruction loss on real inputs.
    pub l_real: f64,
    /// Discriminator reconstruction loss on generated inputs (= `adv`).
    pub l_fake: f64,
    /// The discriminator objective `l_real - k_t * l_fake`.
    pub disc: f64,
}

/// One decoded sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Recon {
    /// Posed reconstruction (stream 2).
    pub x_hat: Vec<f64>,
    /// Unit normals behind the reconstruction.
    pub normals: Vec<f64>,
    /// Albedo behind the reconstruction.
    pub albedo: Vec<f64>,
    /// Shape estimate (stream 1).
    pub x_3d: Vec<f64>,
    /// Frontal texture (stream 3).
    pub x_frontal: Vec<f64>,
}

/// Encode one observation into latent codes.
pub fn encode(params: &NetParams, x: &[f64]) -> Result<LatentCode> {
    if x.len() != params.k_x() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} does not match k_x = {}",
            x.len(),
            params.k_x()
        )));
    }
    let h = params.trunk.forward(x);
    Ok(LatentCode {
        z_l: params.head_l.apply(&h),
        z_p: params.head_p.apply(&h),
        z_exp: params.head_exp.apply(&h),
        z_id: params.head_id.apply(&h),
    })
}

/// Column `c` of `a (.) b` for vectors: `out[j * len(b) + k] = a[j] b[k]`.
pub(crate) fn kron_pair(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &av in a {
        for &bv in b {
            out.push(av * bv);
        }
    }
    out
}

/// Stream 2 up to the rotated feature: the 2-way synthesis of the code pair
/// and the rotation nearest to the reshaped pose code.
fn rotated_feature(code: &LatentCode) -> Result<(Vec<f64>, Mat, Mat)> {
    let m = pose_matrix(&code.z_p)?;
    let r = nearest_rotation(&m)?;
    let f = kron_pair(&code.z_exp, &code.z_id);
    let rf = rotate_feature(&f, &r)?;
    Ok((rf, m, r))
}

/// Decode one latent code into all three streams.
pub fn decode(params: &NetParams, code: &LatentCode) -> Result<Recon> {
    let (rf, _, _) = rotated_feature(code)?;
    let normals_raw = params.normal_stack.forward(&rf);
    let normals = normalize_triples(&normals_raw)?;
    let albedo = params.albedo_stack.forward(&rf);
    let shading = shade_leading(&as_triples(&normals)?, &code.z_l)?;
    let x_hat = crate::multilinear::render(&albedo, &expand_shading(&shading))?;
    let x_3d = shape_decode(&params.core, &code.z_exp, &code.z_id)?;
    let x_frontal = texture_decode(&params.core, &code.z_l, &code.z_exp, &code.z_id)?;
    Ok(Recon { x_hat, normals, albedo, x_3d, x_frontal })
}

/// L1 distance.
fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Reconstruction losses of the discriminator autoencoder on a real and a
/// generated input.
pub fn discriminator_losses(disc: &Stack, x: &[f64], x_hat: &[f64]) -> Result<(f64, f64)> {
    if x.len() != x_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "real input length {} and generated input length {} disagree",
            x.len(),
            x_hat.len()
        )));
    }
    if x.len() != disc.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} does not match the discriminator width {}",
            x.len(),
            disc.in_dim()
        )));
    }
    let l_real = l1(x, &disc.forward(x));
    let l_fake = l1(x_hat, &disc.forward(x_hat));
    Ok((l_real, l_fake))
}

/// Per-sample forward state kept for the backward pass.
struct SampleCache {
    trunk: crate::stack::StackCache,
    h: Vec<f64>,
    code: LatentCode,
    f: Vec<f64>,
    m: Mat,
    r: Mat,
    normal: crate::stack::StackCache,
    normals_raw: Vec<f64>,
    normals: Vec<f64>,
    albedo_cache: crate::stack::StackCache,
    albedo: Vec<f64>,
    shading: Vec<f64>,
    x_hat: Vec<f64>,
    disc_cache: crate::stack::StackCache,
    d_fake: Vec<f64>,
}

struct BatchCache {
    samples: Vec<SampleCache>,
    z_l: Mat,
    z_exp: Mat,
    z_id: Mat,
}

fn forward_batch(params: &NetParams, x: &Mat) -> Result<BatchCache> {
    let b = x.cols();
    let mut samples = Vec::with_capacity(b);
    let mut z_l = Mat::zeros(params.core.k_l(), b);
    let mut z_exp = Mat::zeros(params.core.k_exp(), b);
    let mut z_id = Mat::zeros(params.core.k_id(), b);
    for c in 0..b {
        let (h, trunk) = params.trunk.forward_cached(x.col(c));
        let code = LatentCode {
            z_l: params.head_l.apply(&h),
            z_p: params.head_p.apply(&h),
            z_exp: params.head_exp.apply(&h),
            z_id: params.head_id.apply(&h),
        };
        z_l.set_col(c, &code.z_l);
        z_exp.set_col(c, &code.z_exp);
        z_id.set_col(c, &code.z_id);
        let (rf, m, r) = rotated_feature(&code)?;
        let f = kron_pair(&code.z_exp, &code.z_id);
        let (normals_raw, normal) = params.normal_stack.forward_cached(&rf);
        let normals = normalize_triples(&normals_raw)?;
        let (albedo, albedo_cache) = params.albedo_stack.forward_cached(&rf);
        let shading = shade_leading(&as_triples(&normals)?, &code.z_l)?;
        let x_hat = crate::multilinear::render(&albedo, &expand_shading(&shading))?;
        let (d_fake, disc_cache) = params.disc.forward_cached(&x_hat);
        samples.push(SampleCache {
            trunk,
            h,
            code,
            f,
            m,
            r,
            normal,
            normals_raw,
            normals,
            albedo_cache,
            albedo,
            shading,
            x_hat,
            disc_cache,
            d_fake,
        });
    }
    Ok(BatchCache { samples, z_l, z_exp, z_id })
}

/// Indices of near-frontal columns.
fn frontal_indices(frontal: &[bool]) -> Vec<usize> {
    frontal
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| if f { Some(i) } else { None })
        .collect()
}

fn loss_terms_from_cache(
    params: &NetParams,
    cache: &BatchCache,
    x: &Mat,
    pseudo: &Pseudo,
    w: &LossWeights,
    began: BeganState,
    veri: Option<&dyn VerificationEmbedding>,
) -> Result<LossTerms> {
    let b = x.cols();
    let inv_b = 1.0 / b as f64;
    let mut t = LossTerms::default();

    for (c, s) in cache.samples.iter().enumerate() {
        t.recon += s
            .x_hat
            .iter()
            .zip(x.col(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        t.adv += l1(&s.x_hat, &s.d_fake);
        t.l_real += l1(x.col(c), &params.disc.forward(x.col(c)));
        if let Some(v) = veri {
            let e_x = v.embed(x.col(c));
            let e_h = v.embed(&s.x_hat);
            t.veri += 1.0 - cosine(&e_x, &e_h)?;
        }
        t.pose += s
            .code
            .z_p
            .iter()
            .zip(pseudo.pose.col(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        let r_exp: Vec<f64> = params
            .core
            .exp_map
            .apply(&s.code.z_exp)
            .iter()
            .zip(pseudo.exp_target.col(c))
            .map(|(a, b)| a - b)
            .collect();
        t.exp += norm_sq(&r_exp);
        let r_id: Vec<f64> = params
            .core
            .id_map
            .apply(&s.code.z_id)
            .iter()
            .zip(pseudo.id_target.col(c))
            .map(|(a, b)| a - b)
            .collect();
        t.id += norm_sq(&r_id);
    }
    t.recon *= inv_b;
    t.adv *= inv_b;
    t.l_real *= inv_b;
    t.veri *= inv_b;
    t.pose *= inv_b;
    t.exp *= inv_b;
    t.id *= inv_b;
    t.l_fake = t.adv;

    // Shape term over the whole batch.
    let b1 = params.core.b1();
    let shape_problem =
        MultilinearProblem::new(&pseudo.x_3d, &b1, vec![&cache.z_id, &cache.z_exp])?;
    t.shape = shape_problem.loss() * inv_b;

    // Frontal texture / normals terms over the near-frontal columns.
    let sel = frontal_indices(&pseudo.frontal);
    if !sel.is_empty() {
        let q1 = params.core.q1();
        let zi = cache.z_id.select_cols(&sel);
        let ze = cache.z_exp.select_cols(&sel);
        let zl = cache.z_l.select_cols(&sel);
        let xf = pseudo.x_f.select_cols(&sel);
        t.frontal_tex =
            MultilinearProblem::new(&xf, &q1, vec![&zi, &ze, &zl])?.loss() * inv_b;
        let uniform = Mat::from_fn(params.core.k_l(), sel.len(), |_, _| {
            1.0 / params.core.k_l() as f64
        });
        let nf = pseudo.normals.select_cols(&sel);
        t.frontal_normals =
            MultilinearProblem::new(&nf, &q1, vec![&zi, &ze, &uniform])?.loss() * inv_b;
    }

    t.total = t.recon
        + w.lambda_adv * t.adv
        + w.lambda_veri * t.veri
        + w.lambda_p * t.pose
        + w.lambda_exp * t.exp
        + w.lambda_id * t.id
        + w.lambda_3d * t.shape
        + w.lambda_f * t.frontal_tex
        + w.lambda_n * t.frontal_normals;
    t.disc = t.l_real - began.k_t * t.l_fake;
    if !t.total.is_finite() {
        return Err(Error::NonFinite("loss total".into()));
    }
    Ok(t)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm_sq(a).sqrt();
    let nb = norm_sq(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::NonFinite("zero-length verification embedding".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Every loss term of the generator objective plus the discriminator view,
/// as batch means.
pub fn loss_total(
    params: &NetParams,
    x: &Mat,
    pseudo: &Pseudo,
    w: &LossWeights,
    began: BeganState,
    veri: Option<&dyn VerificationEmbedding>,
) -> Result<LossTerms> {
    w.validate()?;
    pseudo.check(params, x)?;
    let cache = forward_batch(params, x)?;
    loss_terms_from_cache(params, &cache, x, pseudo, w, began, veri)
}

/// Adjoint of the nearest-rotation map: given `m`, its projection `r`, and
/// the cotangent `gbar` of `r`, return the cotangent of `m`.
///
/// With the symmetric factor `s = r^T m`, a perturbation `dm` moves the
/// projection by `dr = r [p^{-1} axial(a - a^T)]_x` where `a = r^T dm` and
/// `p = tr(s) i - s`; transposing that linear map gives
/// `mbar = r [p^{-1} axial(w - w^T)]_x` with `w = r^T gbar`.
fn polar_vjp(m: &Mat, r: &Mat, gbar: &Mat) -> Result<Mat> {
    let s = r.t_mul(m);
    let tr = s[(0, 0)] + s[(1, 1)] + s[(2, 2)];
    let p = Mat::from_fn(3, 3, |i, j| if i == j { tr - s[(i, j)] } else { -s[(i, j)] });
    let p_inv = inv3(&p).map_err(|_| {
        Error::Singular("pose projection gradient is degenerate".into())
    })?;
    let w_mat = r.t_mul(gbar);
    let w = [
        w_mat[(2, 1)] - w_mat[(1, 2)],
        w_mat[(0, 2)] - w_mat[(2, 0)],
        w_mat[(1, 0)] - w_mat[(0, 1)],
    ];
    let v = p_inv.mul_vec(&w);
    let vx = Mat::from_rows(&[
        &[0.0, -v[2], v[1]],
        &[v[2], 0.0, -v[0]],
        &[-v[1], v[0], 0.0],
    ]);
    Ok(r.mul(&vx))
}

/// Exact gradient of [`loss_total`] with respect to every parameter,
/// returned in a same-shape record together with the loss values.
pub fn backprop(
    params: &NetParams,
    x: &Mat,
    pseudo: &Pseudo,
    w: &LossWeights,
    began: BeganState,
    veri: Option<&dyn VerificationEmbedding>,
) -> Result<(LossTerms, NetParams)> {
    w.validate()?;
    pseudo.check(params, x)?;
    let cache = forward_batch(params, x)?;
    let terms = loss_terms_from_cache(params, &cache, x, pseudo, w, began, veri)?;

    let b = x.cols();
    let inv_b = 1.0 / b as f64;
    let mut grads = params.zeros_like();
    let k_l = params.core.k_l();
    let k_exp = params.core.k_exp();
    let k_id = params.core.k_id();

    // Latent cotangents, accumulated across every term before the shared
    // encoder backward pass.
    let mut zbar_l = Mat::zeros(k_l, b);
    let mut zbar_p = Mat::zeros(9, b);
    let mut zbar_exp = Mat::zeros(k_exp, b);
    let mut zbar_id = Mat::zeros(k_id, b);

    // --- Stream-2 image path: recon + adversarial + verification. ---
    for (c, s) in cache.samples.iter().enumerate() {
        let k_x = s.x_hat.len();
        let mut xbar_hat = vec![0.0; k_x];
        for i in 0..k_x {
            xbar_hat[i] = 2.0 * inv_b * (s.x_hat[i] - x.col(c)[i]);
        }
        if w.lambda_adv > 0.0 {
            // adv = |x_hat - d(x_hat)|_1 / b: the sign routes both directly
            // to x_hat and back through the discriminator (params frozen in
            // this objective's discriminator view are still differentiated —
            // see module docs).
            let scale = w.lambda_adv * inv_b;
            let sigma: Vec<f64> = s
                .x_hat
                .iter()
                .zip(&s.d_fake)
                .map(|(a, d)| (a - d).signum() * scale)
                .collect();
            let neg_sigma: Vec<f64> = sigma.iter().map(|v| -v).collect();
            let through_disc =
                params
                    .disc
                    .backward_into(&s.disc_cache, &neg_sigma, &mut grads.disc, 1.0);
            for i in 0..k_x {
                xbar_hat[i] += sigma[i] + through_disc[i];
            }
        }
        if let Some(v) = veri {
            let e_x = v.embed(x.col(c));
            let e_h = v.embed(&s.x_hat);
            let na = norm_sq(&e_x).sqrt();
            let nb = norm_sq(&e_h).sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::NonFinite("zero-length verification embedding".into()));
            }
            let cos = dot(&e_x, &e_h) / (na * nb);
            let scale = w.lambda_veri * inv_b;
            let cot: Vec<f64> = e_h
                .iter()
                .zip(&e_x)
                .map(|(eh, ex)| scale * (cos * eh / (nb * nb) - ex / (na * nb)))
                .collect();
            let back = v.embed_vjp(&s.x_hat, &cot);
            if back.len() != k_x {
                return Err(Error::ShapeMismatch(
                    "verification hook returned a cotangent of the wrong length".into(),
                ));
            }
            for i in 0..k_x {
                xbar_hat[i] += back[i];
            }
        }

        // render: x_hat = albedo . expanded shading.
        let shading_expanded = expand_shading(&s.shading);
        let mut abar = vec![0.0; k_x];
        let mut sbar = vec![0.0; k_x / 3];
        for i in 0..k_x {
            abar[i] = xbar_hat[i] * shading_expanded[i];
            sbar[i / 3] += xbar_hat[i] * s.albedo[i];
        }

        // shading: s_j = sum_t z_l[t] basis_t(n_j).
        let mut nbar = vec![0.0; k_x];
        for j in 0..k_x / 3 {
            let n = [s.normals[3 * j], s.normals[3 * j + 1], s.normals[3 * j + 2]];
            let basis = sh_basis(&n);
            let basis_grad = sh_basis_grad(&n);
            for t in 0..k_l {
                zbar_l[(t, c)] += sbar[j] * basis[t];
                for axis in 0..3 {
                    nbar[3 * j + axis] += sbar[j] * s.code.z_l[t] * basis_grad[t][axis];
                }
            }
        }

        // per-point normalization: n = g / |g|.
        let mut gbar_raw = vec![0.0; k_x];
        for j in 0..k_x / 3 {
            let g = &s.normals_raw[3 * j..3 * j + 3];
            let n = &s.normals[3 * j..3 * j + 3];
            let len = norm_sq(g).sqrt();
            let proj = dot(&nbar[3 * j..3 * j + 3], n);
            for axis in 0..3 {
                gbar_raw[3 * j + axis] = (nbar[3 * j + axis] - proj * n[axis]) / len;
            }
        }

        // decoder stacks back to the rotated feature.
        let mut rfbar =
            params
                .albedo_stack
                .backward_into(&s.albedo_cache, &abar, &mut grads.albedo_stack, 1.0);
        let from_normals =
            params
                .normal_stack
                .backward_into(&s.normal, &gbar_raw, &mut grads.normal_stack, 1.0);
        for (a, g) in rfbar.iter_mut().zip(&from_normals) {
            *a += g;
        }

        // rotation layer: rf = vec(r * reshape(f)).
        let g3 = as_triples(&rfbar)?;
        let f3 = as_triples(&s.f)?;
        let rbar = g3.mul_t(&f3);
        let fbar_mat = s.r.t_mul(&g3);
        let fbar = fbar_mat.data();

        // pose projection and reshape back to the code.
        let mbar = polar_vjp(&s.m, &s.r, &rbar)?;
        for row in 0..3 {
            for col in 0..3 {
                zbar_p[(3 * row + col, c)] += mbar[(row, col)];
            }
        }

        // 2-way synthesis: f[j * k_id + k] = z_exp[j] z_id[k].
        for j in 0..k_exp {
            for k in 0..k_id {
                let g = fbar[j * k_id + k];
                zbar_exp[(j, c)] += g * s.code.z_id[k];
                zbar_id[(k, c)] += g * s.code.z_exp[j];
            }
        }
    }

    // --- Pose, expression and identity regressions. ---
    for (c, s) in cache.samples.iter().enumerate() {
        for i in 0..9 {
            zbar_p[(i, c)] += 2.0 * w.lambda_p * inv_b * (s.code.z_p[i] - pseudo.pose[(i, c)]);
        }
        let r_exp: Vec<f64> = params
            .core
            .exp_map
            .apply(&s.code.z_exp)
            .iter()
            .zip(pseudo.exp_target.col(c))
            .map(|(a, t)| 2.0 * w.lambda_exp * inv_b * (a - t))
            .collect();
        let back = params.core.exp_map.backward_into(
            &s.code.z_exp,
            &r_exp,
            &mut grads.core.exp_map,
            1.0,
        );
        for (i, v) in back.iter().enumerate() {
            zbar_exp[(i, c)] += v;
        }
        let r_id: Vec<f64> = params
            .core
            .id_map
            .apply(&s.code.z_id)
            .iter()
            .zip(pseudo.id_target.col(c))
            .map(|(a, t)| 2.0 * w.lambda_id * inv_b * (a - t))
            .collect();
        let back =
            params
                .core
                .id_map
                .backward_into(&s.code.z_id, &r_id, &mut grads.core.id_map, 1.0);
        for (i, v) in back.iter().enumerate() {
            zbar_id[(i, c)] += v;
        }
    }

    // --- Multilinear terms, routed through the structured gradients. ---
    {
        let b1 = params.core.b1();
        let problem =
            MultilinearProblem::new(&pseudo.x_3d, &b1, vec![&cache.z_id, &cache.z_exp])?;
        let scale = w.lambda_3d * inv_b;
        let g_core = problem.grad_core();
        for (g, v) in grads.core.b.data_mut().iter_mut().zip(g_core.data()) {
            *g += scale * v;
        }
        let g_id = problem.grad_factor(1)?;
        let g_exp = problem.grad_factor(2)?;
        for c in 0..b {
            for i in 0..k_id {
                zbar_id[(i, c)] += scale * g_id[(i, c)];
            }
            for i in 0..k_exp {
                zbar_exp[(i, c)] += scale * g_exp[(i, c)];
            }
        }
    }
    let sel = frontal_indices(&pseudo.frontal);
    if !sel.is_empty() {
        let q1 = params.core.q1();
        let zi = cache.z_id.select_cols(&sel);
        let ze = cache.z_exp.select_cols(&sel);
        let zl = cache.z_l.select_cols(&sel);

        let xf = pseudo.x_f.select_cols(&sel);
        let problem = MultilinearProblem::new(&xf, &q1, vec![&zi, &ze, &zl])?;
        let scale = w.lambda_f * inv_b;
        let g_core = problem.grad_core();
        for (g, v) in grads.core.q.data_mut().iter_mut().zip(g_core.data()) {
            *g += scale * v;
        }
        let g_id = problem.grad_factor(1)?;
        let g_exp = problem.grad_factor(2)?;
        let g_l = problem.grad_factor(3)?;
        for (pos, &c) in sel.iter().enumerate() {
            for i in 0..k_id {
                zbar_id[(i, c)] += scale * g_id[(i, pos)];
            }
            for i in 0..k_exp {
                zbar_exp[(i, c)] += scale * g_exp[(i, pos)];
            }
            for i in 0..k_l {
                zbar_l[(i, c)] += scale * g_l[(i, pos)];
            }
        }

        let uniform = Mat::from_fn(k_l, sel.len(), |_, _| 1.0 / k_l as f64);
        let nf = pseudo.normals.select_cols(&sel);
        let problem = MultilinearProblem::new(&nf, &q1, vec![&zi, &ze, &uniform])?;
        let scale = w.lambda_n * inv_b;
        let g_core = problem.grad_core();
        for (g, v) in grads.core.q.data_mut().iter_mut().zip(g_core.data()) {
            *g += scale * v;
        }
        let g_id = problem.grad_factor(1)?;
        let g_exp = problem.grad_factor(2)?;
        for (pos, &c) in sel.iter().enumerate() {
            for i in 0..k_id {
                zbar_id[(i, c)] += scale * g_id[(i, pos)];
            }
            for i in 0..k_exp {
                zbar_exp[(i, c)] += scale * g_exp[(i, pos)];
            }
        }
    }

    // --- Heads and trunk. ---
    for (c, s) in cache.samples.iter().enumerate() {
        let mut hbar = vec![0.0; s.h.len()];
        for (head, grad_head, cot) in [
            (&params.head_l, &mut grads.head_l, zbar_l.col(c)),
            (&params.head_p, &mut grads.head_p, zbar_p.col(c)),
            (&params.head_exp, &mut grads.head_exp, zbar_exp.col(c)),
            (&params.head_id, &mut grads.head_id, zbar_id.col(c)),
        ] {
            let back = head.backward_into(&s.h, cot, grad_head, 1.0);
            for (a, g) in hbar.iter_mut().zip(&back) {
                *a += g;
            }
        }
        params.trunk.backward_into(&s.trunk, &hbar, &mut grads.trunk, 1.0);
    }

    Ok((terms, grads))
}

/// Posed reconstructions of a batch (one decode per column).
pub fn reconstruct_batch(params: &NetParams, x: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(params.k_x(), x.cols());
    for c in 0..x.cols() {
        let code = encode(params, x.col(c))?;
        let recon = decode(params, &code)?;
        out.set_col(c, &recon.x_hat);
    }
    Ok(out)
}

/// Gradient of the discriminator objective `l_real - k_t * l_fake` (batch
/// means) with respect to the discriminator parameters; generated inputs are
/// treated as constants. Returns `(l_real, l_fake, gradient stack)`.
pub fn backprop_discriminator(
    disc: &Stack,
    x: &Mat,
    x_hat: &Mat,
    k_t: f64,
) -> Result<(f64, f64, Stack)> {
    if x.rows() != x_hat.rows() || x.cols() != x_hat.cols() {
        return Err(Error::ShapeMismatch(format!(
            "real batch {}x{} and generated batch {}x{} disagree",
            x.rows(),
            x.cols(),
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::InvalidArgument("batch must be nonempty".into()));
    }
    if !(0.0..=1.0).contains(&k_t) {
        return Err(Error::InvalidArgument(format!("k_t must lie in [0, 1], got {k_t}")));
    }
    let inv_b = 1.0 / x.cols() as f64;
    let mut grads = disc.zeros_like();
    let mut l_real = 0.0;
    let mut l_fake = 0.0;
    for c in 0..x.cols() {
        let (out, cache) = disc.forward_cached(x.col(c));
        l_real += l1(x.col(c), &out);
        // d|x - d(x)|_1 / d(params) = -sigma^T dD; sigma = sign(x - d(x)).
        let cot: Vec<f64> = x
            .col(c)
            .iter()
            .zip(&out)
            .map(|(a, d)| -inv_b * (a - d).signum())
            .collect();
        disc.backward_into(&cache, &cot, &mut grads, 1.0);

        let (out, cache) = disc.forward_cached(x_hat.col(c));
        l_fake += l1(x_hat.col(c), &out);
        let cot: Vec<f64> = x_hat
            .col(c)
            .iter()
            .zip(&out)
            .map(|(a, d)| k_t * inv_b * (a - d).signum())
            .collect();
        disc.backward_into(&cache, &cot, &mut grads, 1.0);
    }
    Ok((l_real * inv_b, l_fake * inv_b, grads))
}
