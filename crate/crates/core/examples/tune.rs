//! Scratch harness for inspecting end-to-end training quality at desk scale.

use detangle_core::eval::{encode_factor, probe, subspace_r2, yaw_mae, Factor};
use detangle_core::synth::generate;
use detangle_core::train::train;
use detangle_core::{SynthConfig, TrainConfig};
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "full".into());
    let steps: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(5000);
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(64);

    match which.as_str() {
        "planted" => planted(steps, lr, batch),
        "pose" => pose_only(steps, lr, batch),
        "ridge" => ridge_check(),
        "diag" => diag(steps, lr, batch),
        "deconly" => decoder_only(steps, lr),
        _ => full(steps, lr, batch),
    }
}

/// Fit only the two decoder stacks against frozen true codes, full batch,
/// with a hand-rolled Adam loop. Shading uses the leading 3 basis terms
/// `[1, nx, ny]`, matching the library's shading path at k_l = 3.
fn decoder_only(steps: usize, lr: f64) {
    use detangle_core::multilinear::{nearest_rotation, pose_matrix};
    use detangle_core::Mat;
    let data = generate(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let n = data.n_samples();
    let cfg = &data.cfg;
    let (k_x, k_l, m) = (cfg.k_x, cfg.k_l, cfg.k_exp * cfg.k_id);
    assert_eq!(k_l, 3);
    let triples = k_x / 3;

    // Precompute true rotated features.
    let mut rfs = Mat::zeros(m, n);
    for c in 0..n {
        let mut f = vec![0.0; m];
        for j in 0..cfg.k_exp {
            for k in 0..cfg.k_id {
                f[j * cfg.k_id + k] = data.z_exp[(j, c)] * data.z_id[(k, c)];
            }
        }
        let r = nearest_rotation(&pose_matrix(data.pose.col(c)).unwrap()).unwrap();
        let mut rf = vec![0.0; m];
        for col in 0..m / 3 {
            for row in 0..3 {
                let mut acc = 0.0;
                for inner in 0..3 {
                    acc += r[(row, inner)] * f[col * 3 + inner];
                }
                rf[col * 3 + row] = acc;
            }
        }
        rfs.set_col(c, &rf);
    }

    // Parameters: albedo map A (k_x x m + bias), normal map N (k_x x m + bias),
    // flattened column-major as [A, N, a_bias, n_bias].
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = detangle_core::rng_for(99, 0);
    let scale = 1.0 / (m as f64).sqrt();
    let mut params = Vec::with_capacity(2 * k_x * m + 2 * k_x);
    for _ in 0..2 * k_x * m {
        let g: f64 = StandardNormal.sample(&mut rng);
        params.push(g * scale);
    }
    let mut a_b = vec![0.0; k_x];
    let mut n_b = vec![0.0; k_x];
    for t in 0..triples {
        n_b[3 * t + 2] = 1.0;
    }
    params.extend_from_slice(&a_b);
    params.extend_from_slice(&n_b);
    let _ = (&mut a_b, );
    let total_p = params.len();
    let (mut mm, mut vv) = (vec![0.0; total_p], vec![0.0; total_p]);
    let (b1, b2, eps): (f64, f64, f64) = (0.95, 0.9999, 1e-8);

    let idx_a = 0;
    let idx_n = k_x * m;
    let idx_ab = 2 * k_x * m;
    let idx_nb = 2 * k_x * m + k_x;

    for step in 1..=steps {
        let mut grad = vec![0.0; total_p];
        let mut loss = 0.0;
        for c in 0..n {
            let rf = rfs.col(c);
            let zl = data.z_l.col(c);
            // Forward.
            let mut a = vec![0.0; k_x];
            let mut raw = vec![0.0; k_x];
            for r in 0..k_x {
                let mut sa = params[idx_ab + r];
                let mut sn = params[idx_nb + r];
                for j in 0..m {
                    sa += params[idx_a + r + j * k_x] * rf[j];
                    sn += params[idx_n + r + j * k_x] * rf[j];
                }
                a[r] = sa;
                raw[r] = sn;
            }
            let mut s = vec![0.0; triples];
            let mut norms = vec![0.0; triples];
            for t in 0..triples {
                let (x0, y0) = (raw[3 * t], raw[3 * t + 1]);
                let z0 = raw[3 * t + 2];
                let nn = (x0 * x0 + y0 * y0 + z0 * z0).sqrt();
                norms[t] = nn;
                // basis [1, nx, ny] dotted with z_l
                s[t] = zl[0] + zl[1] * x0 / nn + zl[2] * y0 / nn;
            }
            // Loss and backward.
            let mut ds = vec![0.0; triples];
            for r in 0..k_x {
                let t = r / 3;
                let pred = a[r] * s[t];
                let res = pred - data.x[(r, c)];
                loss += res * res;
                let da = 2.0 * res * s[t];
                ds[t] += 2.0 * res * a[r];
                grad[idx_ab + r] += da;
                for j in 0..m {
                    grad[idx_a + r + j * k_x] += da * rf[j];
                }
            }
            for t in 0..triples {
                let (x0, y0, z0) = (raw[3 * t], raw[3 * t + 1], raw[3 * t + 2]);
                let nn = norms[t];
                let inv = 1.0 / nn;
                let (nx, ny, nz) = (x0 * inv, y0 * inv, z0 * inv);
                // d s/d n = (z_l1, z_l2, 0); back through normalize: (I - n n^T)/|raw|
                let gx = zl[1];
                let gy = zl[2];
                let dot = gx * nx + gy * ny;
                let draw = [
                    (gx - dot * nx) * inv * ds[t],
                    (gy - dot * ny) * inv * ds[t],
                    (-dot * nz) * inv * ds[t],
                ];
                for k in 0..3 {
                    let r = 3 * t + k;
                    grad[idx_nb + r] += draw[k];
                    for j in 0..m {
                        grad[idx_n + r + j * k_x] += draw[k] * rfs[(j, c)];
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        loss *= inv_n;
        for g in grad.iter_mut() {
            *g *= inv_n;
        }
        let c1 = 1.0 - b1.powi(step as i32);
        let c2 = 1.0 - b2.powi(step as i32);
        for i in 0..total_p {
            mm[i] = b1 * mm[i] + (1.0 - b1) * grad[i];
            vv[i] = b2 * vv[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (mm[i] / c1) / ((vv[i] / c2).sqrt() + eps);
        }
        if step % (steps / 10).max(1) == 0 || step == 1 {
            println!("  step {step:5}  decoder-only recon {loss:.4e}");
        }
    }
}

fn diag(steps: usize, lr: f64, batch: usize) {
    use detangle_core::neuro::{decode, encode};
    use detangle_core::train::train;
    use detangle_core::LatentCode;
    let data = generate(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let mut cfg = TrainConfig {
        steps,
        learning_rate: lr,
        batch_size: batch,
        weights: weights_from_env(),
        ..TrainConfig::default()
    };
    betas_from_env(&mut cfg);
    let (ckpt, _) = train(&cfg, &data).unwrap();

    // Oracle decoder: planted maps and cores in place of the learned ones.
    let mut oracle = ckpt.params.clone();
    oracle.albedo_stack.layers[0].w = data.albedo_map.clone();
    for v in oracle.albedo_stack.layers[0].b.iter_mut() {
        *v = 0.0;
    }
    oracle.normal_stack.layers[0].w = {
        use detangle_core::tensor::{mode_vec_product, unfold};
        let dims = data.core_q.dims().to_vec();
        let (k_x, k_l, k_exp, k_id) = (dims[0], dims[1], dims[2], dims[3]);
        let uniform = vec![1.0 / k_l as f64; k_l];
        let contracted = mode_vec_product(&data.core_q, &uniform, 2).unwrap();
        let n1 = unfold(&contracted, 1).unwrap();
        let mut out = detangle_core::Mat::zeros(k_x, k_exp * k_id);
        for e in 0..k_exp {
            for i in 0..k_id {
                out.set_col(e * k_id + i, n1.col(i * k_exp + e));
            }
        }
        out
    };
    for v in oracle.normal_stack.layers[0].b.iter_mut() {
        *v = 0.0;
    }
    oracle.core.q = data.core_q.clone();
    oracle.core.b = data.core_b.clone();

    let n = data.n_samples();
    let true_code = |c: usize| LatentCode {
        z_l: data.z_l.col(c).to_vec(),
        z_p: data.pose.col(c).to_vec(),
        z_exp: data.z_exp.col(c).to_vec(),
        z_id: data.z_id.col(c).to_vec(),
    };
    let mut sums = [0.0f64; 4];
    for c in 0..n {
        let learned = encode(&ckpt.params, data.x.col(c)).unwrap();
        let truth = true_code(c);
        for (slot, (params, code)) in [
            (&ckpt.params, &learned),
            (&ckpt.params, &truth),
            (&oracle, &learned),
            (&oracle, &truth),
        ]
        .into_iter()
        .enumerate()
        {
            let r = decode(params, code).unwrap();
            let err: f64 = r
                .x_hat
                .iter()
                .zip(data.x.col(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sums[slot] += err;
        }
    }
    println!("diag after steps={steps} lr={lr} batch={batch}:");
    println!("  learned codes + learned decoder: {:.4e}", sums[0] / n as f64);
    println!("  true codes    + learned decoder: {:.4e}", sums[1] / n as f64);
    println!("  learned codes + oracle decoder : {:.4e}", sums[2] / n as f64);
    println!("  true codes    + oracle decoder : {:.4e}", sums[3] / n as f64);

    // Substitute one true code component at a time into the learned path.
    let labels = ["z_l", "z_p", "z_exp", "z_id"];
    for (slot, name) in labels.iter().enumerate() {
        let mut sum = 0.0;
        for c in 0..n {
            let mut code = encode(&ckpt.params, data.x.col(c)).unwrap();
            let truth = true_code(c);
            match slot {
                0 => code.z_l = truth.z_l,
                1 => code.z_p = truth.z_p,
                2 => code.z_exp = truth.z_exp,
                _ => code.z_id = truth.z_id,
            }
            let r = decode(&ckpt.params, &code).unwrap();
            sum += r
                .x_hat
                .iter()
                .zip(data.x.col(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        println!("  true {name:5} only + learned rest: {:.4e}", sum / n as f64);
    }

    // Substitute one planted decoder map at a time into the learned path.
    for which in 0..2 {
        let mut swapped = ckpt.params.clone();
        if which == 0 {
            swapped.albedo_stack.layers[0].w = oracle.albedo_stack.layers[0].w.clone();
            for v in swapped.albedo_stack.layers[0].b.iter_mut() {
                *v = 0.0;
            }
        } else {
            swapped.normal_stack.layers[0].w = oracle.normal_stack.layers[0].w.clone();
            for v in swapped.normal_stack.layers[0].b.iter_mut() {
                *v = 0.0;
            }
        }
        let mut sum = 0.0;
        for c in 0..n {
            let code = encode(&ckpt.params, data.x.col(c)).unwrap();
            let r = decode(&swapped, &code).unwrap();
            sum += r
                .x_hat
                .iter()
                .zip(data.x.col(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let name = if which == 0 { "albedo map" } else { "normal map" };
        println!("  planted {name} + learned rest: {:.4e}", sum / n as f64);
    }

    // How much residual would an exactly re-solved albedo map remove?
    {
        use detangle_core::multilinear::{nearest_rotation, pose_matrix};
        let k_exp = data.cfg.k_exp;
        let k_id = data.cfg.k_id;
        let m = k_exp * k_id;
        let k_x = data.cfg.k_x;
        let mut rfs = detangle_core::Mat::zeros(m, n);
        let mut shadings = detangle_core::Mat::zeros(k_x / 3, n);
        for c in 0..n {
            let code = encode(&ckpt.params, data.x.col(c)).unwrap();
            let mut f = vec![0.0; m];
            for j in 0..k_exp {
                for k in 0..k_id {
                    f[j * k_id + k] = code.z_exp[j] * code.z_id[k];
                }
            }
            let r = nearest_rotation(&pose_matrix(&code.z_p).unwrap()).unwrap();
            let mut rf = vec![0.0; m];
            for col in 0..m / 3 {
                for row in 0..3 {
                    let mut acc = 0.0;
                    for inner in 0..3 {
                        acc += r[(row, inner)] * f[col * 3 + inner];
                    }
                    rf[col * 3 + row] = acc;
                }
            }
            rfs.set_col(c, &rf);
            let dec = decode(&ckpt.params, &code).unwrap();
            let s = detangle_core::eval::shading_for(&dec.normals, &code.z_l).unwrap();
            shadings.set_col(c, &s);
        }
        // Row-by-row ridge: x_r,c = dot(a_r, rf_c) * s_{r/3,c} + b_r * s_{r/3,c}.
        let mut total = 0.0;
        for r in 0..k_x {
            let t = r / 3;
            let d = m + 1;
            let mut gram = detangle_core::Mat::zeros(d, d);
            let mut rhs = vec![0.0; d];
            for c in 0..n {
                let s = shadings[(t, c)];
                let mut reg = Vec::with_capacity(d);
                for j in 0..m {
                    reg.push(rfs[(j, c)] * s);
                }
                reg.push(s);
                for i in 0..d {
                    for j in 0..d {
                        gram[(i, j)] += reg[i] * reg[j];
                    }
                    rhs[i] += reg[i] * data.x[(r, c)];
                }
            }
            let mut rhs_mat = detangle_core::Mat::zeros(d, 1);
            for i in 0..d {
                rhs_mat[(i, 0)] = rhs[i];
            }
            let (sol, _) = gram.ridge_solve(&rhs_mat, 1e-9).unwrap();
            for c in 0..n {
                let s = shadings[(t, c)];
                let mut pred = sol[(m, 0)] * s;
                for j in 0..m {
                    pred += sol[(j, 0)] * rfs[(j, c)] * s;
                }
                let diff = pred - data.x[(r, c)];
                total += diff * diff;
            }
        }
        println!("  recon with re-solved albedo map: {:.4e}", total / n as f64);
    }

    // Norm structure of the shading path.
    {
        let mut pre_norm = 0.0;
        let mut zl_norm = 0.0;
        for c in 0..n {
            let code = encode(&ckpt.params, data.x.col(c)).unwrap();
            let raw = ckpt.params.normal_stack.forward(&{
                // same rotated feature as decode
                use detangle_core::multilinear::{nearest_rotation, pose_matrix};
                let k_exp = data.cfg.k_exp;
                let k_id = data.cfg.k_id;
                let m = k_exp * k_id;
                let mut f = vec![0.0; m];
                for j in 0..k_exp {
                    for k in 0..k_id {
                        f[j * k_id + k] = code.z_exp[j] * code.z_id[k];
                    }
                }
                let r = nearest_rotation(&pose_matrix(&code.z_p).unwrap()).unwrap();
                let mut rf = vec![0.0; m];
                for col in 0..m / 3 {
                    for row in 0..3 {
                        let mut acc = 0.0;
                        for inner in 0..3 {
                            acc += r[(row, inner)] * f[col * 3 + inner];
                        }
                        rf[col * 3 + row] = acc;
                    }
                }
                rf
            });
            let mut acc = 0.0;
            for t in raw.chunks(3) {
                acc += (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
            }
            pre_norm += acc / (raw.len() / 3) as f64;
            zl_norm += detangle_core::mat::norm_sq(&code.z_l).sqrt();
        }
        println!(
            "  mean pre-normalization triple norm {:.3e}   mean ||z_l|| {:.3e}",
            pre_norm / n as f64,
            zl_norm / n as f64
        );
        let true_zl: f64 = (0..n)
            .map(|c| detangle_core::mat::norm_sq(data.z_l.col(c)).sqrt())
            .sum::<f64>()
            / n as f64;
        println!("  planted mean ||z_l|| {true_zl:.3e}");
    }

    // Per-row residual: is the error concentrated in a few pixel triples?
    {
        let mut by_row = vec![0.0f64; data.cfg.k_x];
        for c in 0..n {
            let code = encode(&ckpt.params, data.x.col(c)).unwrap();
            let r = decode(&ckpt.params, &code).unwrap();
            for (row, (a, b)) in r.x_hat.iter().zip(data.x.col(c)).enumerate() {
                by_row[row] += (a - b) * (a - b);
            }
        }
        let shown: Vec<String> = by_row
            .iter()
            .map(|v| format!("{:.1e}", v / n as f64))
            .collect();
        println!("  per-row recon: {}", shown.join(" "));
    }

    // Reconstruction error bucketed by pose label.
    let n_poses = data.cfg.n_poses;
    let mut by_pose = vec![0.0f64; n_poses];
    let mut count = vec![0usize; n_poses];
    for c in 0..n {
        let learned = encode(&ckpt.params, data.x.col(c)).unwrap();
        let r = decode(&ckpt.params, &learned).unwrap();
        let err: f64 = r
            .x_hat
            .iter()
            .zip(data.x.col(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        by_pose[data.label_pose[c]] += err;
        count[data.label_pose[c]] += 1;
    }
    for p in 0..n_poses {
        println!("  pose {p}: recon {:.4e}", by_pose[p] / count[p] as f64);
    }
}

fn ridge_check() {
    use detangle_core::train::{net_config_for, Checkpoint};
    use detangle_core::Mat;
    let data = generate(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
    let ckpt = Checkpoint::initial(&net_config_for(&data), &cfg).unwrap();
    let n = data.n_samples();
    let trunk = &ckpt.params.trunk;
    let d = trunk.out_dim() + 1;
    let mut feats = Mat::zeros(d, n);
    for c in 0..n {
        let h = trunk.forward(data.x.col(c));
        for (r, v) in h.iter().enumerate() {
            feats[(r, c)] = *v;
        }
        feats[(d - 1, c)] = 1.0;
    }
    let gram = feats.mul_t(&feats);
    let rhs = feats.mul_t(&data.pose);
    let (w, _) = gram.ridge_solve(&rhs, 1e-6).unwrap();
    let mut mse = 0.0;
    for c in 0..n {
        let pred = w.t_mul_vec(feats.col(c));
        for (a, b) in pred.iter().zip(data.pose.col(c)) {
            mse += (a - b) * (a - b);
        }
    }
    println!("ridge on frozen init trunk: pose MSE {:.4e} (target scale {:.3})", mse / n as f64, {
        let mut tot = 0.0;
        for c in 0..n {
            for v in data.pose.col(c) {
                tot += v * v;
            }
        }
        tot / n as f64
    });
}

fn pose_only(steps: usize, lr: f64, batch: usize) {
    use detangle_core::LossWeights;
    let data = generate(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let weights = LossWeights {
        lambda_adv: 0.0,
        lambda_p: 1.0,
        lambda_exp: 0.0,
        lambda_id: 0.0,
        lambda_3d: 0.0,
        lambda_f: 0.0,
        lambda_n: 0.0,
        ..LossWeights::default()
    };
    let cfg = TrainConfig {
        steps,
        learning_rate: lr,
        batch_size: batch,
        weights,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, rows) = train(&cfg, &data).unwrap();
    println!("pose-only: lr={lr} batch={batch} time {:.1}s", t0.elapsed().as_secs_f64());
    for s in [100, 500, 1000, 2000, 3000, 4000, 5000] {
        if s <= rows.len() {
            let r = &rows[s - 1];
            println!("  step {:5}  p {:.3e}  recon {:.3e}", r.step, r.terms.pose, r.terms.recon);
        }
    }
}

fn weights_from_env() -> detangle_core::LossWeights {
    use detangle_core::LossWeights;
    let get = |k: &str, d: f64| -> f64 {
        std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
    };
    let base = LossWeights::default();
    LossWeights {
        lambda_adv: get("W_ADV", base.lambda_adv),
        lambda_p: get("W_P", base.lambda_p),
        lambda_exp: get("W_EXP", base.lambda_exp),
        lambda_id: get("W_ID", base.lambda_id),
        lambda_3d: get("W_3D", base.lambda_3d),
        lambda_f: get("W_F", base.lambda_f),
        lambda_n: get("W_N", base.lambda_n),
        ..base
    }
}

fn betas_from_env(cfg: &mut TrainConfig) {
    if let Ok(v) = std::env::var("B1") {
        cfg.beta1 = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("B2") {
        cfg.beta2 = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("FRONTAL") {
        cfg.frontal_threshold_degrees = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("EPS") {
        cfg.epsilon = v.parse().unwrap();
    }
}

fn planted(steps: usize, lr: f64, batch: usize) {
    // The noiseless planted-recovery run: n = 6*20*7 = 840.
    let data = generate(&SynthConfig { noise_std: 0.0, ..SynthConfig::default() }).unwrap();
    let mut cfg = TrainConfig {
        steps,
        learning_rate: lr,
        batch_size: batch,
        weights: weights_from_env(),
        ..TrainConfig::default()
    };
    betas_from_env(&mut cfg);
    let t0 = Instant::now();
    let (_, rows) = train(&cfg, &data).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let min_recon = rows.iter().map(|r| r.terms.recon).fold(f64::INFINITY, f64::min);
    let last = rows.last().unwrap();
    println!("planted: n={} steps={steps} lr={lr} batch={batch}", data.n_samples());
    println!("  time {secs:.1}s  last E_recon {:.3e}  min E_recon {min_recon:.3e}", last.terms.recon);
    let mut marks: Vec<usize> = vec![100, 500];
    let mut m = 1000;
    while m <= rows.len() {
        marks.push(m);
        m += rows.len() / 10;
    }
    for probe_step in marks {
        if probe_step <= rows.len() {
            let r = &rows[probe_step - 1];
            println!(
                "  step {:5}  recon {:.3e}  p {:.3e}  exp {:.3e}  id {:.3e}  3d {:.3e}  f {:.3e}  n {:.3e}  k_t {:.3}",
                r.step, r.terms.recon, r.terms.pose, r.terms.exp, r.terms.id, r.terms.shape, r.terms.frontal_tex, r.terms.frontal_normals, r.k_t
            );
        }
    }
}

fn full(steps: usize, lr: f64, batch: usize) {
    let data = generate(&SynthConfig {
        samples_per_cell: 10,
        noise_std: 0.01,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        steps,
        learning_rate: lr,
        batch_size: batch,
        weights: weights_from_env(),
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (ckpt, rows) = train(&cfg, &data).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let last = rows.last().unwrap();
    println!(
        "full: n={} steps={steps} lr={lr} batch={batch}  train {train_secs:.1}s",
        data.n_samples()
    );
    println!(
        "  last row: recon {:.3e}  p {:.3e}  exp {:.3e}  id {:.3e}  3d {:.3e}  f {:.3e}  n {:.3e}  k_t {:.3}",
        last.terms.recon, last.terms.pose, last.terms.exp, last.terms.id, last.terms.shape, last.terms.frontal_tex, last.terms.frontal_normals, last.k_t
    );

    let t1 = Instant::now();
    let p_exp = probe(&ckpt, &data, Factor::Expression, 10).unwrap();
    let p_id = probe(&ckpt, &data, Factor::Identity, 10).unwrap();
    let mae = yaw_mae(&ckpt, &data).unwrap().to_degrees();
    let z_learned = encode_factor(&ckpt, &data, Factor::Expression).unwrap();
    let fit = subspace_r2(&z_learned, &data.z_exp).unwrap();
    println!(
        "  probes: exp {:.4}  id {:.4}  yaw MAE {mae:.3} deg  subspace r2 {:.4} (damped {})",
        p_exp.mean_accuracy, p_id.mean_accuracy, fit.r2, fit.damped
    );
    println!("  eval {:.1}s  total {:.1}s", t1.elapsed().as_secs_f64(), t0.elapsed().as_secs_f64());
}
