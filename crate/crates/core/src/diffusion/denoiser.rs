use super::schedule::{cfg_combine, cosine_schedule, NoiseSchedule};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{adam, scalar, Init, LayerNorm, Linear, ParamStore};
use crate::vq::model::Normalizer;
use candle_core::{DType, Device, Tensor, D};
use candle_nn::Optimizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Width of one frame of the two-person trajectory (both persons).
    pub feature_dim: usize,
    pub frames: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub train_steps: usize,
    pub inference_steps: usize,
    pub eta: f64,
    pub guidance: f64,
    pub cond_dropout: f64,
    /// Loss weight per timestep; only `"constant"` (weight 1) is defined.
    pub loss_weight: String,
    /// Refinement start, as an index into the inference grid.
    pub refine_start: usize,
    /// Probability of keeping the leader half clean during training, which
    /// matches refinement where the leader half is clamped.
    pub leader_clean_prob: f64,
    pub styles: Vec<String>,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub schedule_offset: f64,
    /// Weight of the frame-difference term added to the x0 loss.
    #[serde(default)]
    pub velocity_weight: f64,
}

impl DenoiserConfig {
    pub fn standard(feature_dim: usize, styles: Vec<String>) -> Self {
        Self {
            feature_dim,
            frames: 100,
            width: 128,
            layers: 2,
            heads: 4,
            train_steps: 1000,
            inference_steps: 50,
            eta: 0.0,
            guidance: 3.5,
            cond_dropout: 0.1,
            loss_weight: "constant".into(),
            refine_start: 10,
            leader_clean_prob: 0.5,
            styles,
            lr: 2e-4,
            batch_size: 8,
            iterations: 3000,
            schedule_offset: 0.008,
            velocity_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inference_steps == 0 || self.inference_steps > self.train_steps {
            return Err(Error::invalid("inference steps must lie in 1..=training steps"));
        }
        if self.refine_start > self.inference_steps {
            return Err(Error::invalid("refinement start exceeds the inference schedule"));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::invalid("denoiser width must be divisible by the head count"));
        }
        if !self.feature_dim.is_multiple_of(2) {
            return Err(Error::invalid("feature width must split evenly between two persons"));
        }
        if self.loss_weight != "constant" {
            return Err(Error::invalid(format!("unknown loss weighting {:?}", self.loss_weight)));
        }
        Ok(())
    }

    pub fn person_dim(&self) -> usize {
        self.feature_dim / 2
    }

    /// Style index, or the null index for unknown/absent labels.
    pub fn style_index(&self, style: Option<&str>) -> usize {
        style
            .and_then(|s| self.styles.iter().position(|x| x == s))
            .unwrap_or(self.styles.len())
    }

    pub fn null_index(&self) -> usize {
        self.styles.len()
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Transformer over frames predicting the clean trajectory from a noisy one.
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    pub schedule: NoiseSchedule,
    pub norm: Normalizer,
    input: Linear,
    pos: Tensor,
    step_mlp: Linear,
    cond: Tensor,
    blocks: Vec<EncoderBlock>,
    ln_f: LayerNorm,
    output: Linear,
}

fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64).ln() * i as f64 / half.max(1) as f64).exp();
        v[i] = (t as f64 * freq).sin();
        v[half + i] = (t as f64 * freq).cos();
    }
    v
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let schedule = cosine_schedule(config.train_steps, config.schedule_offset)?;
        let mut store = ParamStore::new(dtype);
        let w = config.width;
        let input = store.linear("input", config.feature_dim, w, rng)?;
        let pos = store.var("pos", &[config.frames, w], Init::Normal(0.02), rng)?;
        let step_mlp = store.linear("step", w, w, rng)?;
        let cond = store.var("cond", &[config.styles.len() + 1, w], Init::Normal(0.02), rng)?;
        let mut blocks = Vec::new();
        for l in 0..config.layers {
            blocks.push(EncoderBlock {
                ln1: store.layer_norm(&format!("blocks.{l}.ln1"), w, rng)?,
                qkv: store.linear(&format!("blocks.{l}.qkv"), w, 3 * w, rng)?,
                out: store.linear(&format!("blocks.{l}.out"), w, w, rng)?,
                ln2: store.layer_norm(&format!("blocks.{l}.ln2"), w, rng)?,
                fc1: store.linear(&format!("blocks.{l}.fc1"), w, 2 * w, rng)?,
                fc2: store.linear(&format!("blocks.{l}.fc2"), 2 * w, w, rng)?,
            });
        }
        let ln_f = store.layer_norm("ln_f", w, rng)?;
        let output = store.linear("output", w, config.feature_dim, rng)?;
        let norm = Normalizer::identity(config.feature_dim);
        Ok(Self { config, store, schedule, norm, input, pos, step_mlp, cond, blocks, ln_f, output })
    }

    fn dtype(&self) -> DType {
        self.store.dtype
    }

    /// Predicted clean trajectory for noisy `x` (`[B, T, F]`), per-item
    /// timesteps and style indices (the null index drops conditioning).
    pub fn forward(&self, x: &Tensor, t: &[usize], cond: &[usize]) -> Result<Tensor> {
        let (b, frames, f) = x.dims3()?;
        if f != self.config.feature_dim {
            return Err(Error::invalid(format!("expected {} features, got {f}", self.config.feature_dim)));
        }
        if frames > self.config.frames {
            return Err(Error::invalid(format!("crop of {frames} frames exceeds {}", self.config.frames)));
        }
        if t.len() != b || cond.len() != b {
            return Err(Error::LengthMismatch("timesteps/conditions do not match the batch".into()));
        }
        let w = self.config.width;
        let dev = Device::Cpu;
        let steps: Vec<f64> = t.iter().flat_map(|&s| sinusoid(s, w)).collect();
        let steps = Tensor::from_vec(steps, (b, w), &dev)?.to_dtype(self.dtype())?;
        let step_emb = self.step_mlp.forward(&steps)?.gelu()?;
        let idx = Tensor::from_vec(cond.iter().map(|&c| c as u32).collect::<Vec<_>>(), b, &dev)?;
        let cond_emb = self.cond.embedding(&idx)?;
        let ctx = (step_emb + cond_emb)?.unsqueeze(1)?;
        let mut h = self
            .input
            .forward(x)?
            .broadcast_add(&self.pos.narrow(0, 0, frames)?)?
            .broadcast_add(&ctx)?;
        let heads = self.config.heads;
        let hd = w / heads;
        for blk in &self.blocks {
            let n = blk.ln1.forward(&h)?;
            let qkv = blk.qkv.forward(&n)?;
            let split = |i: usize| -> Result<Tensor> {
                Ok(qkv
                    .narrow(2, i * w, w)?
                    .reshape((b, frames, heads, hd))?
                    .transpose(1, 2)?
                    .contiguous()?)
            };
            let (q, k, v) = (split(0)?, split(1)?, split(2)?);
            let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (hd as f64).sqrt())?;
            let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let a = att.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, frames, w))?;
            h = (h + blk.out.forward(&a)?)?;
            let n = blk.ln2.forward(&h)?;
            h = (&h + blk.fc2.forward(&blk.fc1.forward(&n)?.gelu()?)?)?;
        }
        self.output.forward(&self.ln_f.forward(&h)?)
    }

    /// Guided clean-sample estimate: `(1 - s) uncond + s cond`.
    pub fn cfg_predict(&self, x: &Tensor, t: usize, cond: usize, scale: f64) -> Result<Tensor> {
        let b = x.dim(0)?;
        let null = self.config.null_index();
        if scale == 1.0 || cond == null {
            return self.forward(x, &vec![t; b], &vec![cond; b]);
        }
        if scale == 0.0 {
            return self.forward(x, &vec![t; b], &vec![null; b]);
        }
        let both = Tensor::cat(&[x, x], 0)?;
        let mut conds = vec![cond; b];
        conds.extend(vec![null; b]);
        let out = self.forward(&both, &vec![t; 2 * b], &conds)?;
        cfg_combine(&out.narrow(0, b, b)?, &out.narrow(0, 0, b)?, scale)
    }

    /// x0-prediction loss `mean |X - D(X_t, t, c)|^2` (weight 1 at every step),
    /// plus `velocity_weight` times the same error on frame differences.
    pub fn loss(&self, clean: &Tensor, noisy: &Tensor, t: &[usize], cond: &[usize]) -> Result<Tensor> {
        let pred = self.forward(noisy, t, cond)?;
        let err = (pred - clean)?;
        let l = err.sqr()?.mean_all()?;
        let frames = err.dim(1)?;
        if self.config.velocity_weight == 0.0 || frames < 2 {
            return Ok(l);
        }
        let d = (err.narrow(1, 1, frames - 1)? - err.narrow(1, 0, frames - 1)?)?;
        Ok((l + (d.sqr()?.mean_all()? * self.config.velocity_weight)?)?)
    }

    /// One optimizer step on a batch of normalized crops (`[B, T, F]`).
    pub fn train_step(&self, clean: &Tensor, styles: &[usize], opt: &mut candle_nn::AdamW, rng: &mut ChaCha8Rng, step: usize) -> Result<f64> {
        let (b, frames, f) = clean.dims3()?;
        let n = self.config.train_steps;
        let half = f / 2;
        let mut t = Vec::with_capacity(b);
        let mut cond = Vec::with_capacity(b);
        let mut eps = Vec::with_capacity(b * frames * f);
        let mut noisy_rows = Vec::with_capacity(b);
        for (i, &style) in styles.iter().enumerate().take(b) {
            let ti = rng.random_range(1..=n);
            t.push(ti);
            cond.push(if rng.random::<f64>() < self.config.cond_dropout { self.config.null_index() } else { style });
            let clean_leader = rng.random::<f64>() < self.config.leader_clean_prob;
            let e: Vec<f64> = (0..frames * f).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            eps.extend_from_slice(&e);
            let x = clean.get(i)?;
            let e = Tensor::from_vec(e, (frames, f), &Device::Cpu)?.to_dtype(self.dtype())?;
            let noisy = self.schedule.add_noise(&x, ti, &e)?;
            let noisy = if clean_leader {
                Tensor::cat(&[&x.narrow(1, 0, half)?, &noisy.narrow(1, half, half)?], 1)?
            } else {
                noisy
            };
            noisy_rows.push(noisy);
        }
        let noisy = Tensor::stack(&noisy_rows, 0)?;
        let loss = self.loss(clean, &noisy, &t, &cond)?;
        let v = scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::Divergence { stage: "diffusion", step, detail: format!("loss {v}") });
        }
        opt.backward_step(&loss)?;
        Ok(v)
    }

    /// Trains on normalized crops (each `frames x feature_dim`, row-major) with
    /// their style indices. Returns the loss of every step.
    pub fn train(&mut self, crops: &[Vec<f32>], styles: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if crops.is_empty() || crops.len() != styles.len() {
            return Err(Error::invalid("diffusion training needs crops with matching styles"));
        }
        let frames = self.config.frames;
        let f = self.config.feature_dim;
        for c in crops {
            if c.len() != frames * f {
                return Err(Error::LengthMismatch(format!("crop has {} values, expected {}", c.len(), frames * f)));
            }
        }
        let mut opt = adam(self.store.all_vars(), self.config.lr)?;
        let mut history = Vec::with_capacity(self.config.iterations);
        let bs = self.config.batch_size.max(1);
        for step in 0..self.config.iterations {
            let picks: Vec<usize> = (0..bs).map(|_| rng.random_range(0..crops.len())).collect();
            let data: Vec<f32> = picks.iter().flat_map(|&i| crops[i].iter().copied()).collect();
            let clean = Tensor::from_vec(data, (bs, frames, f), &Device::Cpu)?.to_dtype(self.dtype())?;
            let st: Vec<usize> = picks.iter().map(|&i| styles[i]).collect();
            let l = self.train_step(&clean, &st, &mut opt, rng, step)?;
            if step % 100 == 0 {
                log::debug!("diffusion step {step}: {l:.4}");
            }
            history.push(l);
        }
        Ok(history)
    }

    /// Refines the follower half of a normalized crop. The follower is noised to
    /// the `refine_start`-th point of the inference grid and denoised with DDIM
    /// while the leader half is overwritten with `leader` after every step.
    /// `trace` receives every intermediate state.
    pub fn refine_follower(
        &self,
        leader: &Tensor,
        follower: &Tensor,
        cond: usize,
        rng: &mut ChaCha8Rng,
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Tensor> {
        if leader.dims() != follower.dims() {
            return Err(Error::LengthMismatch(format!(
                "leader {:?} and follower {:?} differ in shape",
                leader.dims(),
                follower.dims()
            )));
        }
        let k0 = self.config.refine_start;
        if k0 == 0 {
            return Ok(follower.clone());
        }
        let grid = self.schedule.inference_steps(self.config.inference_steps)?;
        let (frames, half) = follower.dims2()?;
        let t0 = grid[k0];
        let e: Vec<f64> = (0..frames * half).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let e = Tensor::from_vec(e, (frames, half), &Device::Cpu)?.to_dtype(follower.dtype())?;
        let noisy_f = self.schedule.add_noise(follower, t0, &e)?;
        let mut x = Tensor::cat(&[leader, &noisy_f], 1)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(x.clone());
        }
        for k in (1..=k0).rev() {
            let (t, t_prev) = (grid[k], grid[k - 1]);
            let x0 = self.cfg_predict(&x.unsqueeze(0)?, t, cond, self.config.guidance)?.squeeze(0)?;
            let noise = if self.config.eta > 0.0 {
                let z: Vec<f64> = (0..frames * 2 * half).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                Some(Tensor::from_vec(z, (frames, 2 * half), &Device::Cpu)?.to_dtype(x.dtype())?)
            } else {
                None
            };
            let next = self.schedule.ddim_step(&x, &x0, t, t_prev, self.config.eta, noise.as_ref())?;
            x = Tensor::cat(&[leader, &next.narrow(1, half, half)?], 1)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(x.clone());
            }
        }
        Ok(x.narrow(1, half, half)?)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (k, v) in self.store.snapshot()? {
            tensors.insert(k, v.to_dtype(DType::F32)?);
        }
        let dim = self.norm.mean.len();
        tensors.insert("norm.mean".into(), Tensor::from_vec(self.norm.mean.clone(), dim, &Device::Cpu)?);
        tensors.insert("norm.std".into(), Tensor::from_vec(self.norm.std.clone(), dim, &Device::Cpu)?);
        Ok(Checkpoint { kind: "denoiser".into(), config: serde_json::to_value(&self.config)?, meta, tensors })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("denoiser")?;
        let config: DenoiserConfig = serde_json::from_value(ck.config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Self::new(config, DType::F32, &mut rng)?;
        let model: BTreeMap<String, Tensor> = ck
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with("norm."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        d.store.load(&model)?;
        let get = |name: &str| -> Result<Vec<f64>> {
            let t = ck.tensors.get(name).ok_or_else(|| Error::Incompatible(format!("missing {name}")))?;
            Ok(t.to_dtype(DType::F64)?.to_vec1::<f64>()?)
        };
        d.norm = Normalizer { mean: get("norm.mean")?, std: get("norm.std")? };
        Ok(d)
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<String> {
        let ck = self.to_checkpoint(meta)?;
        ck.save(path)?;
        Ok(ck.config_hash())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Denoiser {
        let mut cfg = DenoiserConfig::standard(6, vec!["a".into(), "b".into()]);
        cfg.frames = 8;
        cfg.width = 8;
        cfg.heads = 2;
        cfg.inference_steps = 10;
        cfg.refine_start = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Denoiser::new(cfg, DType::F64, &mut rng).unwrap()
    }

    fn rand_tensor(shape: (usize, usize), seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..shape.0 * shape.1).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn leader_half_is_clamped_every_step() {
        let d = toy();
        let leader = rand_tensor((8, 3), 1);
        let follower = rand_tensor((8, 3), 2);
        let mut trace = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = d.refine_follower(&leader, &follower, 0, &mut rng, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 5);
        let want = leader.to_vec2::<f64>().unwrap();
        for s in &trace {
            assert_eq!(s.narrow(1, 0, 3).unwrap().to_vec2::<f64>().unwrap(), want);
        }
        assert_eq!(out.dims(), &[8, 3]);
    }

    #[test]
    fn zero_refine_start_is_identity() {
        let mut d = toy();
        d.config.refine_start = 0;
        let leader = rand_tensor((8, 3), 1);
        let follower = rand_tensor((8, 3), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = d.refine_follower(&leader, &follower, 0, &mut rng, None).unwrap();
        assert_eq!(out.to_vec2::<f64>().unwrap(), follower.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn deterministic_refinement() {
        let d = toy();
        let leader = rand_tensor((8, 3), 1);
        let follower = rand_tensor((8, 3), 2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            d.refine_follower(&leader, &follower, 1, &mut rng, None).unwrap().to_vec2::<f64>().unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let d = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(d
            .refine_follower(&rand_tensor((8, 3), 1), &rand_tensor((7, 3), 2), 0, &mut rng, None)
            .is_err());
    }

    #[test]
    fn cfg_scale_identities() {
        let d = toy();
        let x = rand_tensor((8, 6), 5).unsqueeze(0).unwrap();
        let cond = d.forward(&x, &[100], &[1]).unwrap().to_vec3::<f64>().unwrap();
        let uncond = d.forward(&x, &[100], &[2]).unwrap().to_vec3::<f64>().unwrap();
        assert_eq!(d.cfg_predict(&x, 100, 1, 1.0).unwrap().to_vec3::<f64>().unwrap(), cond);
        assert_eq!(d.cfg_predict(&x, 100, 1, 0.0).unwrap().to_vec3::<f64>().unwrap(), uncond);
    }
}
