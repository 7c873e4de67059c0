//! Deterministic training: an alternating generator/discriminator loop with
//! adaptive-moment updates and proportional balance control, a per-step
//! metrics table, and bit-exact checkpointing.
//!
//! Every iteration runs, in order: a generator backward pass and update, a
//! fresh forward pass with the updated generator, a discriminator backward
//! pass and update against that fresh reconstruction, and the balance-scalar
//! update. Batch composition, reduction order, and every floating-point
//! operation are fixed functions of `(seed, config, data)`, so repeated runs
//! produce byte-identical checkpoints and metrics.

use std::fmt::Write as _;
use std::path::Path;

use crate::arrayfile::ArrayFile;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::multilinear::CoreModel;
use crate::neuro::{
    backprop, backprop_discriminator, began_update, reconstruct_batch, BeganState, LossTerms,
    LossWeights, NetConfig, NetParams, ParamSet, Pseudo,
};
use crate::rng::{permutation, rng_for};
use crate::stack::{Dense, Stack};
use crate::synth::SynthDataset;

/// Magic bytes of the checkpoint file format.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NTAE";

/// Fixed header of the metrics table.
pub const METRICS_HEADER: &str = "step,E_recon,E_adv,E_p,E_exp,E_id,E_3d,E_f,E_n,k_t,total";

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// |yaw| threshold (degrees) below which a sample counts as near-frontal.
    pub frontal_threshold_degrees: f64,
    /// Invoke the checkpoint sink every this many steps (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            steps: 5000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
            weights: LossWeights::default(),
            frontal_threshold_degrees: 15.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !v.is_finite() || !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.frontal_threshold_degrees.is_finite() && self.frontal_threshold_degrees >= 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "frontal threshold must be nonnegative degrees, got {}",
                self.frontal_threshold_degrees
            )));
        }
        self.weights.validate()
    }
}

/// First and second adaptive moments over a parameter set, in the canonical
/// visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> AdamMoments {
        AdamMoments { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Bias-corrected adaptive-moment update over one parameter set, in place.
fn adam_update_set(
    params: &mut NetParams,
    grads: &NetParams,
    set: ParamSet,
    moments: &mut AdamMoments,
    t: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut g = Vec::with_capacity(moments.m.len());
    let mut grads_clone = grads.clone();
    grads_clone.visit_mut(set, &mut |buf| g.extend_from_slice(buf));
    if g.len() != moments.m.len() || g.len() != moments.v.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries but the moments have {}/{}",
            g.len(),
            moments.m.len(),
            moments.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("adam step index starts at 1".into()));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let corr1 = 1.0 - b1.powi(t as i32);
    let corr2 = 1.0 - b2.powi(t as i32);
    let mut cursor = 0usize;
    let mut mismatch = false;
    params.visit_mut(set, &mut |buf| {
        if cursor + buf.len() > g.len() {
            mismatch = true;
            return;
        }
        for (j, p) in buf.iter_mut().enumerate() {
            let i = cursor + j;
            moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g[i];
            moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = moments.m[i] / corr1;
            let v_hat = moments.v[i] / corr2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        cursor += buf.len();
    });
    if mismatch || cursor != g.len() {
        return Err(Error::ShapeMismatch(
            "parameter and gradient records have different layouts".into(),
        ));
    }
    Ok(())
}

/// One bias-corrected adaptive-moment step over every parameter, returning
/// the updated copies.
pub fn adam_step(
    params: &NetParams,
    grads: &NetParams,
    moments: &AdamMoments,
    t: u64,
    cfg: &TrainConfig,
) -> Result<(NetParams, AdamMoments)> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut moments = moments.clone();
    adam_update_set(&mut params, grads, ParamSet::All, &mut moments, t, cfg)?;
    Ok((params, moments))
}

/// One metrics row: the pre-update loss values of the step and the balance
/// scalar after the step's update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub terms: LossTerms,
    pub k_t: f64,
}

/// Render metrics as CSV under [`METRICS_HEADER`].
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let t = &r.terms;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            t.recon,
            t.adv,
            t.pose,
            t.exp,
            t.id,
            t.shape,
            t.frontal_tex,
            t.frontal_normals,
            r.k_t,
            t.total
        )
        .expect("string write");
    }
    out
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub began: BeganState,
    pub gen_moments: AdamMoments,
    pub disc_moments: AdamMoments,
    pub step: u64,
    pub cfg: TrainConfig,
}

impl Checkpoint {
    /// A fresh checkpoint at step 0 with seeded parameters.
    pub fn initial(net: &NetConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
        cfg.validate()?;
        let params = NetParams::seeded(net, cfg.seed)?;
        let gen = params.param_count(ParamSet::Generator);
        let disc = params.param_count(ParamSet::Discriminator);
        Ok(Checkpoint {
            params,
            began: BeganState::default(),
            gen_moments: AdamMoments::zeros(gen),
            disc_moments: AdamMoments::zeros(disc),
            step: 0,
            cfg: cfg.clone(),
        })
    }
}

/// The desk-scale network fitted to a dataset's extents.
pub fn net_config_for(data: &SynthDataset) -> NetConfig {
    let c = &data.cfg;
    NetConfig::desk(c.k_x, c.k_3d, c.k_l, c.k_exp, c.k_id)
}

fn pseudo_batch(data: &SynthDataset, idx: &[usize], frontal: &[bool]) -> (Mat, Pseudo) {
    let x = data.x.select_cols(idx);
    let pseudo = Pseudo {
        x_f: data.x_f.select_cols(idx),
        x_3d: data.x_3d.select_cols(idx),
        normals: data.normals.select_cols(idx),
        pose: data.pose.select_cols(idx),
        exp_target: data.exp_target.select_cols(idx),
        id_target: data.id_target.select_cols(idx),
        frontal: idx.iter().map(|&i| frontal[i]).collect(),
    };
    (x, pseudo)
}

/// Prefix a numeric failure with the step that produced it.
fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("step {step}: {msg}")),
        Error::Singular(msg) => Error::Singular(format!("step {step}: {msg}")),
        Error::Tolerance(msg) => Error::Tolerance(format!("step {step}: {msg}")),
        Error::GuardExceeded(msg) => Error::GuardExceeded(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Train from a seeded initialization, returning the final checkpoint and
/// the per-step metrics. The optional sink receives intermediate checkpoints
/// every `checkpoint_every` steps.
pub fn train_with_sink(
    cfg: &TrainConfig,
    data: &SynthDataset,
    mut sink: Option<&mut dyn FnMut(&Checkpoint) -> Result<()>>,
) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    cfg.validate()?;
    let n = data.n_samples();
    if cfg.batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch_size {} exceeds the dataset size {n}",
            cfg.batch_size
        )));
    }
    let net = net_config_for(data);
    let mut ckpt = Checkpoint::initial(&net, cfg)?;
    let frontal = data.frontal_mask(cfg.frontal_threshold_degrees);
    let mut rows = Vec::with_capacity(cfg.steps);

    let mut batch_rng = rng_for(cfg.seed, 1);
    let mut order = permutation(&mut batch_rng, n);
    let mut offset = 0usize;

    for step in 1..=cfg.steps as u64 {
        if offset + cfg.batch_size > n {
            order = permutation(&mut batch_rng, n);
            offset = 0;
        }
        let idx = &order[offset..offset + cfg.batch_size];
        offset += cfg.batch_size;
        let (x, pseudo) = pseudo_batch(data, idx, &frontal);

        // Generator pass and update.
        let (terms, grads) =
            backprop(&ckpt.params, &x, &pseudo, &cfg.weights, ckpt.began, None)
                .map_err(|e| at_step(step, e))?;
        adam_update_set(
            &mut ckpt.params,
            &grads,
            ParamSet::Generator,
            &mut ckpt.gen_moments,
            step,
            cfg,
        )?;

        // Discriminator pass against the updated generator's output.
        let x_hat = reconstruct_batch(&ckpt.params, &x).map_err(|e| at_step(step, e))?;
        let (l_real, l_fake, disc_grads) =
            backprop_discriminator(&ckpt.params.disc, &x, &x_hat, ckpt.began.k_t)
                .map_err(|e| at_step(step, e))?;
        let mut disc_grad_params = ckpt.params.zeros_like();
        disc_grad_params.disc = disc_grads;
        adam_update_set(
            &mut ckpt.params,
            &disc_grad_params,
            ParamSet::Discriminator,
            &mut ckpt.disc_moments,
            step,
            cfg,
        )?;

        // Balance update from the fresh discriminator losses.
        ckpt.began = began_update(
            ckpt.began,
            l_real,
            l_fake,
            cfg.weights.began_gamma,
            cfg.weights.began_lambda_k,
        )
        .map_err(|e| at_step(step, e))?;

        ckpt.step = step;
        rows.push(MetricsRow { step, terms, k_t: ckpt.began.k_t });
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
            if let Some(f) = sink.as_deref_mut() {
                f(&ckpt)?;
            }
        }
    }
    Ok((ckpt, rows))
}

/// [`train_with_sink`] without intermediate checkpoints.
pub fn train(cfg: &TrainConfig, data: &SynthDataset) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    train_with_sink(cfg, data, None)
}

fn insert_dense(file: &mut ArrayFile, prefix: &str, d: &Dense) -> Result<()> {
    file.insert_mat(&format!("{prefix}_w"), &d.w)?;
    file.insert_vec(&format!("{prefix}_b"), &d.b)
}

fn insert_stack(file: &mut ArrayFile, prefix: &str, s: &Stack) -> Result<()> {
    for (i, layer) in s.layers.iter().enumerate() {
        insert_dense(file, &format!("{prefix}_{i:02}"), layer)?;
    }
    Ok(())
}

fn read_dense(file: &ArrayFile, prefix: &str) -> Result<Dense> {
    let w = file.require_mat(&format!("{prefix}_w"))?;
    let b = file.require_vec(&format!("{prefix}_b"))?;
    if b.len() != w.rows() {
        return Err(Error::ShapeMismatch(format!(
            "layer `{prefix}` bias length {} does not match its {} rows",
            b.len(),
            w.rows()
        )));
    }
    Ok(Dense { w, b })
}

fn read_stack(file: &ArrayFile, prefix: &str, layers: usize, activate_output: bool) -> Result<Stack> {
    if layers == 0 {
        return Err(Error::InvalidArgument(format!("stack `{prefix}` has no layers")));
    }
    let layers = (0..layers)
        .map(|i| read_dense(file, &format!("{prefix}_{i:02}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stack { layers, activate_output })
}

fn seed_pair(seed: u64) -> [f64; 2] {
    [(seed >> 32) as f64, (seed & 0xffff_ffff) as f64]
}

fn seed_from_pair(pair: &[f64]) -> Result<u64> {
    let valid = |v: f64| v.fract() == 0.0 && (0.0..4294967296.0).contains(&v);
    if pair.len() != 2 || !valid(pair[0]) || !valid(pair[1]) {
        return Err(Error::InvalidArgument("malformed seed record".into()));
    }
    Ok(((pair[0] as u64) << 32) | pair[1] as u64)
}

/// Serialize a checkpoint to the `NTAE` container.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut file = ArrayFile::new();
    let p = &ckpt.params;
    insert_stack(&mut file, "net_trunk", &p.trunk)?;
    insert_dense(&mut file, "net_head_l", &p.head_l)?;
    insert_dense(&mut file, "net_head_p", &p.head_p)?;
    insert_dense(&mut file, "net_head_exp", &p.head_exp)?;
    insert_dense(&mut file, "net_head_id", &p.head_id)?;
    insert_stack(&mut file, "net_normal", &p.normal_stack)?;
    insert_stack(&mut file, "net_albedo", &p.albedo_stack)?;
    insert_stack(&mut file, "net_disc", &p.disc)?;
    file.insert_tensor("net_core_q", &p.core.q)?;
    file.insert_tensor("net_core_b", &p.core.b)?;
    insert_dense(&mut file, "net_expmap", &p.core.exp_map)?;
    insert_dense(&mut file, "net_idmap", &p.core.id_map)?;
    file.insert_vec(
        "net_meta",
        &[
            p.trunk.layers.len() as f64,
            p.normal_stack.layers.len() as f64,
            p.albedo_stack.layers.len() as f64,
            p.disc.layers.len() as f64,
        ],
    )?;
    file.insert_scalar("began_k", ckpt.began.k_t)?;
    file.insert_scalar("step", ckpt.step as f64)?;
    file.insert_vec("adam_gen_m", &ckpt.gen_moments.m)?;
    file.insert_vec("adam_gen_v", &ckpt.gen_moments.v)?;
    file.insert_vec("adam_disc_m", &ckpt.disc_moments.m)?;
    file.insert_vec("adam_disc_v", &ckpt.disc_moments.v)?;
    let c = &ckpt.cfg;
    file.insert_vec(
        "cfg_train",
        &[
            c.steps as f64,
            c.batch_size as f64,
            c.learning_rate,
            c.beta1,
            c.beta2,
            c.epsilon,
            c.frontal_threshold_degrees,
            c.checkpoint_every as f64,
        ],
    )?;
    file.insert_vec("cfg_seed", &seed_pair(c.seed))?;
    let w = &c.weights;
    file.insert_vec(
        "cfg_weights",
        &[
            w.lambda_adv,
            w.lambda_veri,
            w.lambda_p,
            w.lambda_exp,
            w.lambda_id,
            w.lambda_3d,
            w.lambda_f,
            w.lambda_n,
            w.began_gamma,
            w.began_lambda_k,
        ],
    )?;
    file.write(path.as_ref(), CHECKPOINT_MAGIC)
}

/// Read a checkpoint back from the `NTAE` container, validating the network
/// and moment shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = ArrayFile::read(path.as_ref(), CHECKPOINT_MAGIC)?;
    let meta = file.require_vec("net_meta")?;
    if meta.len() != 4 || meta.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::InvalidArgument("malformed network metadata".into()));
    }
    let q = file.require_tensor("net_core_q")?;
    let b = file.require_tensor("net_core_b")?;
    if q.order() != 4 || b.order() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "core tensors have orders {}/{}, expected 4/3",
            q.order(),
            b.order()
        )));
    }
    let core = CoreModel::new(
        q,
        b,
        read_dense(&file, "net_expmap")?,
        read_dense(&file, "net_idmap")?,
    )?;
    let params = NetParams {
        trunk: read_stack(&file, "net_trunk", meta[0] as usize, true)?,
        head_l: read_dense(&file, "net_head_l")?,
        head_p: read_dense(&file, "net_head_p")?,
        head_exp: read_dense(&file, "net_head_exp")?,
        head_id: read_dense(&file, "net_head_id")?,
        normal_stack: read_stack(&file, "net_normal", meta[1] as usize, false)?,
        albedo_stack: read_stack(&file, "net_albedo", meta[2] as usize, false)?,
        core,
        disc: read_stack(&file, "net_disc", meta[3] as usize, false)?,
    };
    params.validate()?;

    let cfg_rec = file.require_vec("cfg_train")?;
    if cfg_rec.len() != 8 {
        return Err(Error::InvalidArgument(format!(
            "training config record has {} entries, expected 8",
            cfg_rec.len()
        )));
    }
    let w = file.require_vec("cfg_weights")?;
    if w.len() != 10 {
        return Err(Error::InvalidArgument(format!(
            "weight record has {} entries, expected 10",
            w.len()
        )));
    }
    let nonneg_count = |v: f64, name: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(Error::InvalidArgument(format!(
                "config entry {name} = {v} is not a count"
            )));
        }
        Ok(v as usize)
    };
    let cfg = TrainConfig {
        steps: nonneg_count(cfg_rec[0], "steps")?,
        batch_size: nonneg_count(cfg_rec[1], "batch_size")?,
        learning_rate: cfg_rec[2],
        beta1: cfg_rec[3],
        beta2: cfg_rec[4],
        epsilon: cfg_rec[5],
        frontal_threshold_degrees: cfg_rec[6],
        checkpoint_every: nonneg_count(cfg_rec[7], "checkpoint_every")?,
        seed: seed_from_pair(&file.require_vec("cfg_seed")?)?,
        weights: LossWeights {
            lambda_adv: w[0],
            lambda_veri: w[1],
            lambda_p: w[2],
            lambda_exp: w[3],
            lambda_id: w[4],
            lambda_3d: w[5],
            lambda_f: w[6],
            lambda_n: w[7],
            began_gamma: w[8],
            began_lambda_k: w[9],
        },
    };
    cfg.validate()?;

    let gen = params.param_count(ParamSet::Generator);
    let disc = params.param_count(ParamSet::Discriminator);
    let gen_moments = AdamMoments {
        m: file.require_vec("adam_gen_m")?,
        v: file.require_vec("adam_gen_v")?,
    };
    let disc_moments = AdamMoments {
        m: file.require_vec("adam_disc_m")?,
        v: file.require_vec("adam_disc_v")?,
    };
    if gen_moments.m.len() != gen
        || gen_moments.v.len() != gen
        || disc_moments.m.len() != disc
        || disc_moments.v.len() != disc
    {
        return Err(Error::ShapeMismatch(
            "optimizer moments do not match the parameter counts".into(),
        ));
    }
    let step_rec = file.require_scalar("step")?;
    if step_rec.fract() != 0.0 || step_rec < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step record {step_rec} is not a nonnegative integer"
        )));
    }
    Ok(Checkpoint {
        params,
        began: BeganState::new(file.require_scalar("began_k")?)?,
        gen_moments,
        disc_moments,
        step: step_rec as u64,
        cfg,
    })
}
