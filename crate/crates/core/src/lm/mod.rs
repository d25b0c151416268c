//! Decoder-only transformer over the multimodal vocabulary.
//!
//! The model is a pre-norm transformer with learned absolute positions and an
//! output head tied to the token embeddings. The embedding table is stored in
//! three parts: base text rows (`base.embed_text`), the role and modality
//! markers among them (`mm.embed_markers`), and rows for motion, relation and
//! audio codes (`mm.embed`). LoRA adapters sit on the four attention
//! projections of every layer.
//!
//! Training stages differ only in which parameters move:
//! stage 0 trains every `base.*` parameter on text-only prompts, stage I trains
//! `mm.embed` and the adapters, stage II trains the adapters alone.

mod generate;

pub use generate::{generate, Generation, LogitSource, SamplingConfig};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{adam, dropout, scalar, Init, LayerNorm, Linear, ParamStore};
use crate::prompt::PromptSequence;
use candle_core::{DType, Device, Tensor, D};
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    /// Rows of the embedding table holding specials and words.
    pub text_rows: usize,
    /// Rows inside the text block that are new marker tokens, trained with
    /// the multimodal embeddings.
    #[serde(default)]
    pub marker_rows: std::ops::Range<usize>,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    pub dropout: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub lr_stage0: f64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub batch_size: usize,
    pub epochs_stage0: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub temperature: f64,
    pub top_k: usize,
}

impl LmConfig {
    /// 4 layers, 8 heads, width 256, context 1024; LoRA rank 64, alpha 64,
    /// dropout 0.1; stage I lr 2e-5, stage II lr 1e-5, 100 epochs, batch 4.
    pub fn standard(vocab_size: usize, text_rows: usize) -> Self {
        Self {
            vocab_size,
            text_rows,
            marker_rows: 0..0,
            dim: 256,
            layers: 4,
            heads: 8,
            context: 1024,
            dropout: 0.0,
            lora_rank: 64,
            lora_alpha: 64.0,
            lora_dropout: 0.1,
            lr_stage0: 3e-4,
            lr_stage1: 2e-5,
            lr_stage2: 1e-5,
            batch_size: 4,
            epochs_stage0: 20,
            epochs_stage1: 100,
            epochs_stage2: 100,
            temperature: 0.9,
            top_k: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("embedding width must be divisible by the head count"));
        }
        if self.text_rows > self.vocab_size {
            return Err(Error::invalid("text rows exceed the vocabulary"));
        }
        if self.marker_rows.start > self.marker_rows.end || self.marker_rows.end > self.text_rows {
            return Err(Error::invalid("marker rows must lie inside the text rows"));
        }
        if self.context == 0 || self.layers == 0 {
            return Err(Error::invalid("context length and layer count must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig { temperature: self.temperature, top_k: self.top_k }
    }
}

/// Low-rank update `scale * B A x` for one projection; `B` starts at zero.
#[derive(Clone, Debug)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl LoraAdapter {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, cfg: &LmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            a: store.var(&format!("{name}.a"), &[cfg.lora_rank, d_in], Init::Uniform(bound), rng)?,
            b: store.var(&format!("{name}.b"), &[d_out, cfg.lora_rank], Init::Zeros, rng)?,
            rank: cfg.lora_rank,
            alpha: cfg.lora_alpha,
            dropout: cfg.lora_dropout,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn delta(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let x = match rng {
            Some(r) => dropout(x, self.dropout, r)?,
            None => x.clone(),
        };
        let down = Linear { weight: self.a.clone(), bias: None }.forward(&x)?;
        let up = Linear { weight: self.b.clone(), bias: None }.forward(&down)?;
        Ok((up * self.scale())?)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    proj: [Linear; 4],
    lora: Option<[LoraAdapter; 4]>,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

const PROJ_NAMES: [&str; 4] = ["q", "k", "v", "o"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Base,
    Align,
    Follow,
}

impl Stage {
    pub fn trains(self, name: &str) -> bool {
        match self {
            Stage::Base => name.starts_with("base."),
            Stage::Align => name.starts_with("mm.") || name.starts_with("lora."),
            Stage::Follow => name.starts_with("lora."),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Base => "stage0",
            Stage::Align => "stage1",
            Stage::Follow => "stage2",
        }
    }

    fn lr(self, cfg: &LmConfig) -> f64 {
        match self {
            Stage::Base => cfg.lr_stage0,
            Stage::Align => cfg.lr_stage1,
            Stage::Follow => cfg.lr_stage2,
        }
    }

    fn epochs(self, cfg: &LmConfig) -> usize {
        match self {
            Stage::Base => cfg.epochs_stage0,
            Stage::Align => cfg.epochs_stage1,
            Stage::Follow => cfg.epochs_stage2,
        }
    }
}

/// Per-epoch record of a training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

pub struct TokenLm {
    pub config: LmConfig,
    pub store: ParamStore,
    embed_text: Tensor,
    embed_markers: Option<Tensor>,
    embed_mm: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    /// Stages completed so far, in order, with their epoch counts.
    pub history: Vec<serde_json::Value>,
}

/// Padded batch: inputs, next-token targets and loss mask, all `[B, T]`.
pub struct LmBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub mask: Tensor,
    pub count: usize,
}

impl TokenLm {
    pub fn new(config: LmConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype);
        let d = config.dim;
        let markers = config.marker_rows.len();
        let embed_text = store.var("base.embed_text", &[config.text_rows - markers, d], Init::Normal(0.02), rng)?;
        let embed_markers = if markers > 0 {
            Some(store.var("mm.embed_markers", &[markers, d], Init::Normal(0.02), rng)?)
        } else {
            None
        };
        let embed_mm = store.var(
            "mm.embed",
            &[config.vocab_size - config.text_rows, d],
            Init::Normal(0.02),
            rng,
        )?;
        let pos = store.var("base.pos", &[config.context, d], Init::Normal(0.02), rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("base.blocks.{l}");
            let ln1 = store.layer_norm(&format!("{p}.ln1"), d, rng)?;
            let mut proj = Vec::with_capacity(4);
            for n in PROJ_NAMES {
                proj.push(store.linear(&format!("{p}.attn.{n}"), d, d, rng)?);
            }
            let ln2 = store.layer_norm(&format!("{p}.ln2"), d, rng)?;
            let fc1 = store.linear(&format!("{p}.mlp.fc1"), d, 4 * d, rng)?;
            let fc2 = store.linear(&format!("{p}.mlp.fc2"), 4 * d, d, rng)?;
            let lora = if config.lora_rank > 0 {
                let mut v = Vec::with_capacity(4);
                for n in PROJ_NAMES {
                    v.push(LoraAdapter::new(&mut store, &format!("lora.{l}.{n}"), d, d, &config, rng)?);
                }
                Some(v.try_into().map_err(|_| Error::invalid("lora"))?)
            } else {
                None
            };
            blocks.push(Block {
                ln1,
                proj: proj.try_into().map_err(|_| Error::invalid("projections"))?,
                lora,
                ln2,
                fc1,
                fc2,
            });
        }
        let ln_f = store.layer_norm("base.ln_f", d, rng)?;
        Ok(Self { config, store, embed_text, embed_markers, embed_mm, pos, blocks, ln_f, history: Vec::new() })
    }

    pub fn embedding_table(&self) -> Result<Tensor> {
        let Some(markers) = &self.embed_markers else {
            return Ok(Tensor::cat(&[&self.embed_text, &self.embed_mm], 0)?);
        };
        let r = &self.config.marker_rows;
        let rest = self.config.text_rows - r.end;
        Ok(Tensor::cat(
            &[
                &self.embed_text.narrow(0, 0, r.start)?,
                markers,
                &self.embed_text.narrow(0, r.start, rest)?,
                &self.embed_mm,
            ],
            0,
        )?)
    }

    /// Logits `[B, T, V]` for ids `[B, T]`. `rng` enables dropout (training);
    /// `use_lora = false` runs the base model alone.
    pub fn forward_with(&self, ids: &Tensor, use_lora: bool, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let h = self.hidden(ids, use_lora, rng)?;
        let d = self.config.dim;
        let table = self.embedding_table()?;
        Ok(h.reshape((b * t, d))?.matmul(&table.t()?)?.reshape((b, t, self.config.vocab_size))?)
    }

    /// Final normalized hidden states `[B, T, D]`.
    fn hidden(&self, ids: &Tensor, use_lora: bool, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        if t > self.config.context {
            return Err(Error::invalid(format!(
                "sequence of {t} tokens exceeds the context length {}",
                self.config.context
            )));
        }
        let d = self.config.dim;
        let h = self.config.heads;
        let hd = d / h;
        let table = self.embedding_table()?;
        let flat = ids.flatten_all()?;
        let mut x = table
            .embedding(&flat)?
            .reshape((b, t, d))?
            .broadcast_add(&self.pos.narrow(0, 0, t)?)?;
        let causal = causal_mask(t, x.dtype())?;
        let p = self.config.dropout;
        for blk in &self.blocks {
            let n1 = blk.ln1.forward(&x)?;
            let proj = |i: usize, inp: &Tensor, r: Option<&mut ChaCha8Rng>| -> Result<Tensor> {
                let base = blk.proj[i].forward(inp)?;
                match (&blk.lora, use_lora) {
                    (Some(l), true) => Ok((base + l[i].delta(inp, r)?)?),
                    _ => Ok(base),
                }
            };
            let split = |y: Tensor| -> Result<Tensor> {
                Ok(y.reshape((b, t, h, hd))?.transpose(1, 2)?.contiguous()?)
            };
            let q = split(proj(0, &n1, rng.as_deref_mut())?)?;
            let k = split(proj(1, &n1, rng.as_deref_mut())?)?;
            let v = split(proj(2, &n1, rng.as_deref_mut())?)?;
            let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (hd as f64).sqrt())?
                .broadcast_add(&causal)?;
            let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let ctx = att.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
            let mut a = proj(3, &ctx, rng.as_deref_mut())?;
            if let Some(r) = rng.as_deref_mut() {
                a = dropout(&a, p, r)?;
            }
            x = (x + a)?;
            let n2 = blk.ln2.forward(&x)?;
            let mut m = blk.fc2.forward(&blk.fc1.forward(&n2)?.gelu()?)?;
            if let Some(r) = rng.as_deref_mut() {
                m = dropout(&m, p, r)?;
            }
            x = (x + m)?;
        }
        self.ln_f.forward(&x)
    }

    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        self.forward_with(ids, true, None)
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    /// Right-pads prompts into next-token batches. Padding positions are masked out.
    pub fn batch(&self, prompts: &[&PromptSequence]) -> Result<LmBatch> {
        let t = prompts.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0);
        if t == 0 {
            return Err(Error::invalid("prompts need at least two tokens"));
        }
        let mut inputs = Vec::with_capacity(prompts.len() * t);
        let mut targets = Vec::with_capacity(prompts.len() * t);
        let mut mask = Vec::with_capacity(prompts.len() * t);
        let mut count = 0;
        for p in prompts {
            if p.mask.len() != p.ids.len() {
                return Err(Error::LengthMismatch("prompt mask and ids differ in length".into()));
            }
            let n = p.len() - 1;
            for i in 0..t {
                if i < n {
                    inputs.push(p.ids[i]);
                    targets.push(p.ids[i + 1]);
                    mask.push(p.mask[i + 1]);
                    count += p.mask[i + 1] as usize;
                } else {
                    inputs.push(0);
                    targets.push(0);
                    mask.push(0);
                }
            }
        }
        let dev = self.device();
        let b = prompts.len();
        Ok(LmBatch {
            inputs: Tensor::from_vec(inputs, (b, t), dev)?,
            targets: Tensor::from_vec(targets, (b, t), dev)?,
            mask: Tensor::from_vec(mask, (b, t), dev)?,
            count,
        })
    }

    /// Summed masked NLL of a batch (training mode when `rng` is given).
    /// Only supervised positions go through the output head; the result equals
    /// `nll_loss` over the full logits.
    pub fn batch_loss(&self, batch: &LmBatch, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, t) = batch.inputs.dims2()?;
        let h = self.hidden(&batch.inputs, true, rng)?.reshape((b * t, self.config.dim))?;
        let mask = batch.mask.flatten_all()?.to_vec1::<u8>()?;
        let rows: Vec<u32> = (0..mask.len() as u32).filter(|&i| mask[i as usize] == 1).collect();
        if rows.is_empty() {
            return Ok(Tensor::zeros((), self.store.dtype, self.device())?);
        }
        let n = rows.len();
        let idx = Tensor::from_vec(rows, n, self.device())?;
        let picked = h.index_select(&idx, 0)?;
        let logits = picked.matmul(&self.embedding_table()?.t()?)?.reshape((1, n, self.config.vocab_size))?;
        let targets = batch.targets.flatten_all()?.index_select(&idx, 0)?.reshape((1, n))?;
        let ones = Tensor::ones((1, n), DType::U8, self.device())?;
        nll_loss(&logits, &targets, &ones)
    }

    /// Mean NLL per supervised token over `prompts`, without dropout.
    pub fn evaluate(&self, prompts: &[PromptSequence]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in prompts.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&PromptSequence> = chunk.iter().collect();
            let b = self.batch(&refs)?;
            total += scalar(&self.batch_loss(&b, None)?)?;
            count += b.count;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Runs one training stage. Parameters outside the stage's trainable set
    /// are never handed to the optimizer.
    pub fn train_stage(&mut self, stage: Stage, prompts: &[PromptSequence], rng: &mut ChaCha8Rng) -> Result<Vec<EpochLoss>> {
        if prompts.is_empty() {
            return Err(Error::invalid(format!("{} has no training prompts", stage.label())));
        }
        for p in prompts {
            if p.len() > self.config.context {
                return Err(Error::invalid(format!(
                    "prompt of {} tokens exceeds the context length {}",
                    p.len(),
                    self.config.context
                )));
            }
        }
        let cfg = self.config.clone();
        let vars = self.store.vars_where(|n| stage.trains(n));
        let mut opt = adam(vars, stage.lr(&cfg))?;
        let mut order: Vec<usize> = (0..prompts.len()).collect();
        let epochs = stage.epochs(&cfg);
        let mut out = Vec::with_capacity(epochs);
        let mut step = 0;
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut count = 0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let refs: Vec<&PromptSequence> = chunk.iter().map(|&i| &prompts[i]).collect();
                let b = self.batch(&refs)?;
                if b.count == 0 {
                    continue;
                }
                let sum = self.batch_loss(&b, Some(rng))?;
                let s = scalar(&sum)?;
                if !s.is_finite() {
                    return Err(Error::Divergence { stage: stage.label(), step, detail: format!("loss {s}") });
                }
                opt.backward_step(&(sum / b.count as f64)?)?;
                total += s;
                count += b.count;
                step += 1;
            }
            let loss = if count == 0 { 0.0 } else { total / count as f64 };
            log::debug!("{} epoch {epoch}: {loss:.4}", stage.label());
            out.push(EpochLoss { epoch, loss });
        }
        self.history.push(serde_json::json!({
            "stage": stage.label(),
            "epochs": epochs,
            "batch_size": cfg.batch_size,
            "lr": stage.lr(&cfg),
            "examples": prompts.len(),
            "final_loss": out.last().map(|e| e.loss),
        }));
        Ok(out)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (k, v) in self.store.snapshot()? {
            tensors.insert(k, v.to_dtype(DType::F32)?);
        }
        let mut meta = meta;
        if let serde_json::Value::Object(m) = &mut meta {
            m.insert("stages".into(), serde_json::Value::Array(self.history.clone()));
        }
        Ok(Checkpoint { kind: "lm".into(), config: serde_json::to_value(&self.config)?, meta, tensors })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("lm")?;
        let config: LmConfig = serde_json::from_value(ck.config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lm = Self::new(config, DType::F32, &mut rng)?;
        lm.store.load(&ck.tensors)?;
        if let Some(s) = ck.meta.get("stages").and_then(|s| s.as_array()) {
            lm.history = s.clone();
        }
        Ok(lm)
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

impl LogitSource for TokenLm {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let t = ids.len();
        let x = Tensor::from_vec(ids.to_vec(), (1, t), self.device())?;
        let logits = self.forward(&x)?;
        Ok(logits.get(0)?.get(t - 1)?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }
}

fn causal_mask(t: usize, dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j > i { f64::NEG_INFINITY } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(data, (t, t), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Sum over masked-in positions of `-log softmax(logits)[target]`; masked-out
/// positions contribute exactly zero.
pub fn nll_loss(logits: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let v = logits.dim(D::Minus1)?;
    let n = targets.elem_count();
    let logp = candle_nn::ops::log_softmax(&logits.reshape((n, v))?, D::Minus1)?;
    let picked = logp
        .gather(&targets.flatten_all()?.to_dtype(DType::U32)?.unsqueeze(1)?, 1)?
        .squeeze(1)?;
    let keep = mask.flatten_all()?.to_dtype(DType::U8)?;
    let zeros = picked.zeros_like()?;
    Ok(keep.where_cond(&picked.neg()?, &zeros)?.sum_all()?)
}
