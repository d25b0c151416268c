//! One function per acceptance criterion. Each returns a short summary on
//! success and the first failing measurement otherwise.
#![allow(dead_code)]

use super::*;
use candle_core::{DType, Device, Tensor};
use duet_core::diffusion::denoiser::{Denoiser, DenoiserConfig};
use duet_core::diffusion::schedule::{cfg_combine, cosine_schedule};
use duet_core::geometry::{rot6d_to_matrix, wrap_angle};
use duet_core::lm::{generate, SamplingConfig};
use duet_core::lm::{nll_loss, LmConfig, Stage, TokenLm};
use duet_core::metrics::beats::bas;
use duet_core::metrics::fid::{diversity, fid};
use duet_core::motion::relation_track;
use duet_core::prompt::{assemble_prompt, DuetTokens};
use duet_core::vocab::Vocabulary;
use duet_core::vq::model::{VqModel, VqVaeConfig};
use duet_core::vq::{motion_window_flat, Codebook, TokenizerKind, VqTokenizer};
use duet_core::window::{canonicalize_window, invert_canonicalization, motion_windows, transform_frames};
use std::time::Instant;

pub type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- geometry ----

pub fn canonical_round_trip_error(trials: usize) -> f64 {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let t = random_transform(&mut r);
        let frames = jittered_frames(20, t.tx, t.tz, t.yaw, &mut r);
        let w = canonicalize_window(&frames, 0).unwrap();
        for (a, b) in invert_canonicalization(&w).iter().zip(&frames) {
            worst = worst.max(max_abs_diff(&a.to_flat(), &b.to_flat()));
        }
    }
    worst
}

pub fn relation_invariance_error(transforms: usize) -> f64 {
    let mut r = rng(2);
    let leader = jittered_frames(20, 0.3, -0.2, 0.4, &mut r);
    let follower = jittered_frames(20, 0.5, 0.6, 2.9, &mut r);
    let base = relation_track(&leader, &follower);
    let mut worst: f64 = 0.0;
    for _ in 0..transforms {
        let t = random_transform(&mut r);
        let moved = relation_track(&transform_frames(&leader, &t), &transform_frames(&follower, &t));
        for (a, b) in moved.iter().zip(&base) {
            worst = worst
                .max((a.x - b.x).abs())
                .max((a.z - b.z).abs())
                .max(wrap_angle(a.theta - b.theta).abs());
        }
    }
    worst
}

pub fn rot6d_round_trip_error(trials: usize) -> f64 {
    let mut r = rng(3);
    (0..trials)
        .map(|_| {
            let m = random_rotation(&mut r);
            (rot6d_to_matrix(&rot6d(&m)) - m).abs().max()
        })
        .fold(0.0, f64::max)
}

pub fn criterion_1() -> Check {
    let t0 = Instant::now();
    let canon = canonical_round_trip_error(200);
    ensure(canon < 1e-6, || format!("canonicalization round trip {canon:e}"))?;
    let rel = relation_invariance_error(1000);
    ensure(rel < 1e-9, || format!("relation invariance {rel:e}"))?;
    let rot = rot6d_round_trip_error(10_000);
    ensure(rot < 1e-9, || format!("6D round trip {rot:e}"))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("geometry suite took {secs:.1}s"))?;
    Ok(format!("canon {canon:.1e}, relation {rel:.1e}, rot6d {rot:.1e}, {secs:.2}s"))
}

// ---- VQ ----

pub fn exhaustive_nearest(book: &Codebook, z: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..book.len() {
        let d: f64 = book.code(k).unwrap().iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

pub fn quantize_mismatches(queries: usize) -> usize {
    let mut r = rng(4);
    let book = Codebook::new_uniform(512, 16, &mut r);
    (0..queries)
        .filter(|_| {
            let z: Vec<f64> = (0..16).map(|_| r.random_range(-1.5..1.5)).collect();
            book.quantize(&z).unwrap().0 != exhaustive_nearest(&book, &z)
        })
        .count()
}

/// Two EMA updates checked against the closed form written out by hand.
pub fn ema_closed_form_error() -> f64 {
    let eps = duet_core::vq::codebook::EMA_EPSILON;
    let mu = 0.9;
    let mut cb = Codebook::from_codes(vec![0.0, 0.0, 1.0, 1.0, 5.0, 5.0], 2);
    let z = vec![vec![0.2, -0.2], vec![0.4, 0.0], vec![1.0, 2.0]];
    let a = vec![0, 0, 1];
    cb.ema_update(&z, &a, mu).unwrap();
    cb.ema_update(&z, &a, mu).unwrap();
    // N_k and m_k start at 1 and c_k
    let n = |n0: f64, c: f64| mu * (mu * n0 + (1.0 - mu) * c) + (1.0 - mu) * c;
    let sizes = [n(1.0, 2.0), n(1.0, 1.0), n(1.0, 0.0)];
    let m = |m0: f64, s: f64| mu * (mu * m0 + (1.0 - mu) * s) + (1.0 - mu) * s;
    let sums = [m(0.0, 0.6), m(0.0, -0.2), m(1.0, 1.0), m(1.0, 2.0), m(5.0, 0.0), m(5.0, 0.0)];
    let total: f64 = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let smoothed = (sizes[k] + eps) / (total + 3.0 * eps) * total;
        worst = worst.max((cb.cluster_sizes()[k] - sizes[k]).abs());
        for j in 0..2 {
            worst = worst.max((cb.embed_sums()[2 * k + j] - sums[2 * k + j]).abs());
            worst = worst.max((cb.code(k).unwrap()[j] - sums[2 * k + j] / smoothed).abs());
        }
    }
    worst
}

/// Codes exactly at the threshold survive; codes just below are replaced.
pub fn dead_code_threshold_ok() -> bool {
    let mut cb = Codebook::from_codes(vec![0.0; 8], 2);
    let thr = 0.5;
    for (k, n) in [thr, thr - 1e-12, thr + 1e-12, 0.0].into_iter().enumerate() {
        cb.set_cluster_size(k, n);
    }
    let replaced = cb.reset_dead_codes(&[vec![3.0, 4.0]], thr, &mut rng(5));
    replaced == vec![1, 3]
        && cb.code(1).unwrap() == [3.0, 4.0]
        && cb.code(0).unwrap() == [0.0, 0.0]
        && cb.cluster_sizes()[1] == 1.0
}

/// Trains a small motion tokenizer on four real windows. Returns the final
/// reconstruction loss, the number of steps and the wall time.
pub fn vq_overfit() -> (f64, usize, f64) {
    let d = duet(4.0, 11);
    let windows: Vec<Vec<f64>> = motion_windows(&d.follower, 20).unwrap().iter().take(4).map(motion_window_flat).collect();
    assert_eq!(windows.len(), 4);
    let cfg = VqVaeConfig {
        latent_dim: 16,
        codebook_size: 8,
        hidden: 64,
        layers: 1,
        batch_size: 4,
        epochs: 2000,
        lr: 3e-3,
        lr_gamma: 0.3,
        warmup_epochs: 10,
        dead_code_threshold: 0.05,
        ema_decay: 0.9,
        ..VqVaeConfig::motion(268, 66)
    };
    let t0 = Instant::now();
    let mut tok = VqTokenizer::new(TokenizerKind::Motion, cfg.clone(), 22, DType::F32, &mut rng(6)).unwrap();
    tok.fit_normalizer(&windows);
    tok.train(&windows, &mut rng(7)).unwrap();
    (tok.reconstruction_loss(&windows).unwrap(), cfg.epochs, t0.elapsed().as_secs_f64())
}

pub fn criterion_2() -> Check {
    let miss = quantize_mismatches(10_000);
    ensure(miss == 0, || format!("{miss} of 10^4 quantizations differ from exhaustive search"))?;
    let ema = ema_closed_form_error();
    ensure(ema < 1e-12, || format!("EMA update off by {ema:e}"))?;
    ensure(dead_code_threshold_ok(), || "dead-code reset fired at the wrong threshold".into())?;
    let (loss, steps, secs) = vq_overfit();
    ensure(loss < 1e-3 && steps <= 2000 && secs < 300.0, || {
        format!("overfit loss {loss:e} after {steps} steps in {secs:.0}s")
    })?;
    Ok(format!("quantize exact on 10^4, EMA {ema:.1e}, overfit {loss:.1e} in {secs:.0}s"))
}

// ---- gradient checks ----

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-3;
/// Absolute scale below which a gradient entry is compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn toy_vq() -> (VqModel, Tensor, Tensor) {
    let cfg = VqVaeConfig {
        input_dim: 4,
        window: 5,
        latent_dim: 3,
        codebook_size: 4,
        hidden: 5,
        layers: 2,
        velocity_channels: 2,
        ..VqVaeConfig::relation()
    };
    let model = VqModel::new(cfg, DType::F64, &mut rng(8)).unwrap();
    let mut r = rng(9);
    let x: Vec<f64> = (0..2 * 5 * 4).map(|_| r.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..2 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    (
        model,
        Tensor::from_vec(x, (2, 5, 4), &Device::Cpu).unwrap(),
        Tensor::from_vec(c, (2, 3), &Device::Cpu).unwrap(),
    )
}

/// Quantization is piecewise constant, so the check runs the autoencoder on
/// the unquantized latent (the path the straight-through estimator
/// differentiates) with the commitment term against fixed codes.
pub fn vq_gradcheck() -> (f64, String) {
    let (model, x, codes) = toy_vq();
    let loss = || {
        let z = model.encode(&x)?;
        let recon = model.decode(&z)?;
        Ok(model.losses_from(&x, &recon, &z, &codes)?.total)
    };
    gradcheck(&model.store, &loss, FD_STEP, 6, GRAD_FLOOR)
}

pub fn toy_lm_config() -> LmConfig {
    LmConfig {
        dim: 8,
        layers: 2,
        heads: 2,
        context: 16,
        lora_rank: 2,
        lora_alpha: 4.0,
        marker_rows: 1..3,
        ..LmConfig::standard(20, 6)
    }
}

/// LoRA `B` is zero at init, which zeroes the gradient of `A`; the check
/// randomizes `B` first so both factors are exercised.
pub fn lm_gradcheck() -> (f64, String) {
    let lm = TokenLm::new(toy_lm_config(), DType::F64, &mut rng(10)).unwrap();
    let mut r = rng(11);
    for (name, var) in lm.store.iter() {
        if name.starts_with("lora.") && name.ends_with(".b") {
            let n = var.as_tensor().elem_count();
            let v: Vec<f64> = (0..n).map(|_| r.random_range(-0.3..0.3)).collect();
            var.set(&Tensor::from_vec(v, var.as_tensor().dims(), &Device::Cpu).unwrap()).unwrap();
        }
    }
    let ids: Vec<u32> = (0..2 * 7).map(|_| r.random_range(0..20)).collect();
    let ids = Tensor::from_vec(ids, (2, 7), &Device::Cpu).unwrap();
    let targets: Vec<u32> = (0..2 * 7).map(|_| r.random_range(0..20)).collect();
    let targets = Tensor::from_vec(targets, (2, 7), &Device::Cpu).unwrap();
    let mask = Tensor::ones((2, 7), DType::U8, &Device::Cpu).unwrap();
    gradcheck(&lm.store, &|| nll_loss(&lm.forward(&ids)?, &targets, &mask), FD_STEP, 4, GRAD_FLOOR)
}

pub fn toy_denoiser_config() -> DenoiserConfig {
    DenoiserConfig {
        frames: 6,
        width: 8,
        layers: 1,
        heads: 2,
        train_steps: 100,
        inference_steps: 10,
        refine_start: 4,
        ..DenoiserConfig::standard(6, vec!["a".into(), "b".into()])
    }
}

pub fn denoiser_gradcheck() -> (f64, String) {
    let model = Denoiser::new(toy_denoiser_config(), DType::F64, &mut rng(12)).unwrap();
    let mut r = rng(13);
    let mut t = |n: usize| Tensor::from_vec((0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (2, 6, 6), &Device::Cpu).unwrap();
    let clean = t(72);
    let noisy = t(72);
    gradcheck(&model.store, &|| model.loss(&clean, &noisy, &[17, 60], &[0, 2]), FD_STEP, 4, GRAD_FLOOR)
}

pub fn criterion_3() -> Check {
    let mut parts = Vec::new();
    for (name, (err, at)) in [("vq", vq_gradcheck()), ("lm", lm_gradcheck()), ("denoiser", denoiser_gradcheck())] {
        ensure(err < GRAD_TOL, || format!("{name} gradient relative error {err:e} at {at}"))?;
        parts.push(format!("{name} {err:.1e}"));
    }
    Ok(parts.join(", "))
}

// ---- LM ----

/// Largest change of the logits at positions `<= p` when every token after
/// `p` is redrawn, over all `p` of several random prompts.
pub fn causality_violation() -> f64 {
    let lm = TokenLm::new(toy_lm_config(), DType::F64, &mut rng(14)).unwrap();
    let mut r = rng(15);
    let t = 12;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let ids: Vec<u32> = (0..t).map(|_| r.random_range(0..20)).collect();
        let base = lm.forward(&Tensor::from_vec(ids.clone(), (1, t), &Device::Cpu).unwrap()).unwrap();
        for p in 0..t {
            let mut alt = ids.clone();
            for v in alt.iter_mut().skip(p + 1) {
                *v = r.random_range(0..20);
            }
            alt[p + 1..].reverse();
            let out = lm.forward(&Tensor::from_vec(alt, (1, t), &Device::Cpu).unwrap()).unwrap();
            let d = (out.narrow(1, 0, p + 1).unwrap() - base.narrow(1, 0, p + 1).unwrap())
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            worst = worst.max(d);
        }
    }
    worst
}

pub fn lora_identity() -> bool {
    let lm = TokenLm::new(toy_lm_config(), DType::F32, &mut rng(16)).unwrap();
    let ids = Tensor::from_vec((0..10u32).map(|i| (i * 3) % 20).collect::<Vec<_>>(), (1, 10), &Device::Cpu).unwrap();
    let with: Vec<f32> = lm.forward_with(&ids, true, None).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let without: Vec<f32> = lm.forward_with(&ids, false, None).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    with.iter().zip(&without).all(|(a, b)| a.to_bits() == b.to_bits())
}

pub fn uniform_nll_error() -> f64 {
    let v = 37;
    let logits = Tensor::zeros((2, 5, v), DType::F64, &Device::Cpu).unwrap();
    let targets = Tensor::from_vec((0..10u32).map(|i| (i * 7) % v as u32).collect::<Vec<_>>(), (2, 5), &Device::Cpu).unwrap();
    let mask = Tensor::ones((2, 5), DType::U8, &Device::Cpu).unwrap();
    let sum = duet_core::nn::scalar(&nll_loss(&logits, &targets, &mask).unwrap()).unwrap();
    (sum / 10.0 - (v as f64).ln()).abs()
}

/// Trains a small LM on one leader-to-follower prompt and decodes the
/// follower greedily. Returns (target codes, decoded codes).
pub fn memorize_one() -> (Vec<usize>, Vec<usize>) {
    let vocab = Vocabulary::new(16, 8, 8).unwrap();
    let target = vec![3, 3, 7, 1, 12, 0];
    let tokens = DuetTokens {
        audio: Some(vec![1, 2, 3, 4, 5, 6]),
        leader: vec![5, 9, 9, 2, 14, 6],
        relation: Some(vec![1, 1, 2, 2, 3, 3]),
        follower: Some(target.clone()),
        caption: None,
    };
    let prompt = assemble_prompt(&vocab, &tokens).unwrap();
    let cfg = LmConfig {
        dim: 32,
        layers: 2,
        heads: 4,
        context: 128,
        lora_rank: 8,
        lora_alpha: 16.0,
        lora_dropout: 0.0,
        lr_stage1: 3e-3,
        batch_size: 1,
        epochs_stage1: 200,
        marker_rows: vocab.marker_rows(),
        ..LmConfig::standard(vocab.len(), vocab.text_rows())
    };
    let mut lm = TokenLm::new(cfg, DType::F32, &mut rng(17)).unwrap();
    lm.train_stage(Stage::Align, std::slice::from_ref(&prompt), &mut rng(18)).unwrap();
    let ctx = assemble_prompt(&vocab, &DuetTokens { follower: None, ..tokens }).unwrap();
    let g = generate(&lm, &vocab, &ctx.ids, SamplingConfig::greedy(), 32, &mut rng(19)).unwrap();
    (target, g.codes)
}

pub fn criterion_4() -> Check {
    let c = causality_violation();
    ensure(c == 0.0, || format!("future tokens changed earlier logits by {c:e}"))?;
    ensure(lora_identity(), || "zero-initialized LoRA changed the logits".into())?;
    let u = uniform_nll_error();
    ensure(u < 1e-9, || format!("uniform NLL off ln V by {u:e}"))?;
    let (want, got) = memorize_one();
    ensure(want == got, || format!("memorized follower {got:?}, expected {want:?}"))?;
    Ok(format!("causal over all positions, LoRA bit-exact, |NLL - ln V| {u:.1e}, memorized {} codes", want.len()))
}

// ---- diffusion ----

pub fn schedule_laws() -> std::result::Result<(), String> {
    let s = cosine_schedule(1000, 0.008).unwrap();
    ensure(s.alpha_bar(0) == 1.0, || format!("alpha_bar(0) = {}", s.alpha_bar(0)))?;
    ensure(s.alpha_bar(1000) < 1e-3, || format!("alpha_bar(N) = {:e}", s.alpha_bar(1000)))?;
    ensure((1..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)), || "alpha_bar not decreasing".into())?;
    ensure(s.sigma(0) == 0.0, || "sigma(0) is not zero".into())
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: (usize, usize)) -> Tensor {
    let v: Vec<f64> = (0..shape.0 * shape.1).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

/// Every intermediate state of a refinement carries the leader bit-exactly.
pub fn leader_bit_exact() -> bool {
    let model = Denoiser::new(toy_denoiser_config(), DType::F64, &mut rng(20)).unwrap();
    let mut r = rng(21);
    let leader = rand_tensor(&mut r, (6, 3));
    let follower = rand_tensor(&mut r, (6, 3));
    let mut trace = Vec::new();
    model.refine_follower(&leader, &follower, 1, &mut r, Some(&mut trace)).unwrap();
    let want: Vec<u64> = flat(&leader).iter().map(|v| v.to_bits()).collect();
    trace.len() == model.config.refine_start + 1
        && trace
            .iter()
            .all(|x| flat(&x.narrow(1, 0, 3).unwrap()).iter().map(|v| v.to_bits()).collect::<Vec<_>>() == want)
}

pub fn ddim_deterministic() -> bool {
    let model = Denoiser::new(toy_denoiser_config(), DType::F64, &mut rng(22)).unwrap();
    let mut r = rng(23);
    let leader = rand_tensor(&mut r, (6, 3));
    let follower = rand_tensor(&mut r, (6, 3));
    let a = model.refine_follower(&leader, &follower, 0, &mut rng(24), None).unwrap();
    let b = model.refine_follower(&leader, &follower, 0, &mut rng(24), None).unwrap();
    // at eta = 0 the step ignores any supplied noise
    let s = &model.schedule;
    let x = rand_tensor(&mut r, (6, 6));
    let x0 = rand_tensor(&mut r, (6, 6));
    let z = rand_tensor(&mut r, (6, 6));
    let p = s.ddim_step(&x, &x0, 50, 40, 0.0, None).unwrap();
    let q = s.ddim_step(&x, &x0, 50, 40, 0.0, Some(&z)).unwrap();
    model.config.eta == 0.0 && flat(&a) == flat(&b) && flat(&p) == flat(&q)
}

pub fn cfg_identities() -> bool {
    let model = Denoiser::new(toy_denoiser_config(), DType::F64, &mut rng(25)).unwrap();
    let x = rand_tensor(&mut rng(26), (6, 6)).unsqueeze(0).unwrap();
    let null = model.config.null_index();
    let cond = model.forward(&x, &[30], &[1]).unwrap();
    let uncond = model.forward(&x, &[30], &[null]).unwrap();
    let mut r = rng(27);
    let a = rand_tensor(&mut r, (3, 3));
    let b = rand_tensor(&mut r, (3, 3));
    flat(&model.cfg_predict(&x, 30, 1, 0.0).unwrap()) == flat(&uncond)
        && flat(&model.cfg_predict(&x, 30, 1, 1.0).unwrap()) == flat(&cond)
        && flat(&cfg_combine(&a, &b, 0.0).unwrap()) == flat(&a)
        && flat(&cfg_combine(&a, &b, 1.0).unwrap()) == flat(&b)
}

/// Relative error of the empirical variance of `add_noise` around a fixed
/// sample, against `1 - alpha_bar(t)`, worst over several timesteps.
pub fn add_noise_variance_error(samples: usize) -> f64 {
    let s = cosine_schedule(1000, 0.008).unwrap();
    let mut r = rng(28);
    let x = Tensor::full(0.7f64, samples, &Device::Cpu).unwrap();
    let mut worst: f64 = 0.0;
    for t in [10, 250, 500, 900] {
        let e: Vec<f64> = (0..samples).map(|_| r.sample(rand_distr::StandardNormal)).collect();
        let y = flat(&s.add_noise(&x, t, &Tensor::from_vec(e, samples, &Device::Cpu).unwrap()).unwrap());
        let mean = y.iter().sum::<f64>() / samples as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let want = 1.0 - s.alpha_bar(t);
        worst = worst.max((var - want).abs() / want);
        let mean_err = (mean - 0.7 * s.alpha_bar(t).sqrt()).abs();
        worst = worst.max(mean_err / want.sqrt() / 10.0);
    }
    worst
}

pub fn criterion_5() -> Check {
    schedule_laws()?;
    ensure(leader_bit_exact(), || "leader half changed during refinement".into())?;
    ensure(ddim_deterministic(), || "DDIM at eta = 0 is not deterministic".into())?;
    ensure(cfg_identities(), || "guidance identities at scales 0 and 1 fail".into())?;
    let v = add_noise_variance_error(200_000);
    ensure(v < 0.03, || format!("add_noise variance off by {:.2}%", 100.0 * v))?;
    Ok(format!("schedule laws, leader bit-exact, DDIM deterministic, CFG exact, variance {:.2}%", 100.0 * v))
}

// ---- metrics ----

pub fn criterion_6() -> Check {
    let mut r = rng(29);
    let a: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let same = fid(&a, &a).map_err(|e| e.to_string())?;
    ensure(same < 1e-8, || format!("FID(A, A) = {same:e}"))?;
    // unit sample variance, means 0 and 1
    let g0 = vec![vec![-1.0 / 2f64.sqrt()], vec![1.0 / 2f64.sqrt()]];
    let g1: Vec<Vec<f64>> = g0.iter().map(|v| vec![v[0] + 1.0]).collect();
    let one = fid(&g0, &g1).map_err(|e| e.to_string())?;
    ensure((one - 1.0).abs() < 1e-6, || format!("1-D Gaussian FID {one}"))?;
    let beats = [0.5, 1.0, 1.5, 2.0];
    let perfect = bas(&beats, &beats, 0.15).map_err(|e| e.to_string())?;
    ensure((perfect - 1.0).abs() < 1e-12, || format!("aligned BAS {perfect}"))?;
    let sigma = 0.15;
    let off = bas(&[1.0 + sigma], &[1.0], sigma).map_err(|e| e.to_string())?;
    ensure((off - 0.6065).abs() < 1e-4 && (off - (-0.5f64).exp()).abs() < 1e-6, || format!("sigma-offset BAS {off}"))?;
    let div = diversity(&vec![vec![1.0, -2.0, 3.0]; 10], 5, 0).map_err(|e| e.to_string())?;
    ensure(div == 0.0, || format!("diversity of identical set {div}"))?;
    Ok(format!("FID(A,A) {same:.1e}, 1-D FID {one:.6}, BAS {perfect} / {off:.6}, Div 0"))
}
