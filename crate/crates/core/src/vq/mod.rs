//! Window-level VQ-VAE tokenizers for full-body motion and pairwise relation.

pub mod codebook;
pub mod model;

pub use codebook::Codebook;
pub use model::{Normalizer, VqLosses, VqModel, VqVaeConfig};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform2D;
use crate::motion::{MotionFrame, RelationFrame};
use crate::nn::{adam, scalar};
use crate::window::{canonicalize_window, invert_canonicalization, window_starts, MotionWindow};
use candle_core::{DType, Device, Tensor};
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    Motion,
    Relation,
}

impl TokenizerKind {
    fn checkpoint_kind(self) -> &'static str {
        match self {
            TokenizerKind::Motion => "vq-motion",
            TokenizerKind::Relation => "vq-relation",
        }
    }
}

/// Token indices of one track with the per-window data needed to undo tokenization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenizedTrack {
    pub indices: Vec<usize>,
    pub starts: Vec<usize>,
    /// Canonical-to-world transform per window (motion tracks only).
    pub transforms: Vec<RigidTransform2D>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub recon: f64,
    pub commit: f64,
    pub velocity: f64,
    pub total: f64,
}

pub struct VqTokenizer {
    pub kind: TokenizerKind,
    pub model: VqModel,
    pub codebook: Codebook,
    pub norm: Normalizer,
    /// Joint count for motion tokenizers (0 for relation).
    pub joints: usize,
}

pub fn motion_window_flat(w: &MotionWindow) -> Vec<f64> {
    w.frames.iter().flat_map(|f| f.to_flat()).collect()
}

pub fn relation_window_flat(r: &[RelationFrame]) -> Vec<f64> {
    r.iter().flat_map(|f| f.to_array()).collect()
}

impl VqTokenizer {
    pub fn new(kind: TokenizerKind, config: VqVaeConfig, joints: usize, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        let model = VqModel::new(config.clone(), dtype, rng)?;
        let codebook = Codebook::new_uniform(config.codebook_size, config.latent_dim, rng);
        Ok(Self {
            kind,
            norm: Normalizer::identity(config.input_dim),
            model,
            codebook,
            joints,
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.model.config
    }

    pub fn window(&self) -> usize {
        self.model.config.window
    }

    pub fn fit_normalizer(&mut self, windows: &[Vec<f64>]) {
        let d = self.config().input_dim;
        self.norm = Normalizer::fit(windows.iter().flat_map(|w| w.chunks_exact(d)), d);
    }

    fn check_window(&self, w: &[f64]) -> Result<()> {
        let cfg = self.config();
        if w.len() != cfg.window * cfg.input_dim {
            return Err(Error::WindowLength {
                expected: cfg.window,
                actual: w.len() / cfg.input_dim.max(1),
            });
        }
        Ok(())
    }

    /// Normalized `[B, tau, D]` tensor from raw flat windows.
    pub fn batch_tensor(&self, windows: &[&Vec<f64>]) -> Result<Tensor> {
        let cfg = self.config();
        let mut flat = Vec::with_capacity(windows.len() * cfg.window * cfg.input_dim);
        for w in windows {
            self.check_window(w)?;
            flat.extend(self.norm.normalize(w));
        }
        Ok(Tensor::from_vec(flat, (windows.len(), cfg.window, cfg.input_dim), &Device::Cpu)?
            .to_dtype(self.model.dtype())?)
    }

    fn rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// One latent per raw flat window.
    pub fn encode_windows(&self, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let refs: Vec<&Vec<f64>> = chunk.iter().collect();
            out.extend(Self::rows(&self.model.encode(&self.batch_tensor(&refs)?)?)?);
        }
        Ok(out)
    }

    pub fn codes_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let d = self.codebook.dim();
        let mut flat = Vec::with_capacity(indices.len() * d);
        for &k in indices {
            flat.extend_from_slice(self.codebook.code(k)?);
        }
        Ok(Tensor::from_vec(flat, (indices.len(), d), &Device::Cpu)?.to_dtype(self.model.dtype())?)
    }

    /// Decodes token indices into raw (denormalized) flat windows.
    pub fn decode_indices(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(256) {
            let recon = self.model.decode(&self.codes_tensor(chunk)?)?;
            for w in recon.to_dtype(DType::F64)?.flatten_from(1)?.to_vec2::<f64>()? {
                out.push(self.norm.denormalize(&w));
            }
        }
        Ok(out)
    }

    pub fn tokenize_windows(&self, windows: &[Vec<f64>]) -> Result<Vec<usize>> {
        let z = self.encode_windows(windows)?;
        self.codebook.quantize_all(&z)
    }

    /// One optimizer step on raw flat windows followed by the EMA codebook update.
    /// Returns the step losses and the batch latents.
    pub fn train_step(&mut self, batch: &[&Vec<f64>], opt: &mut candle_nn::AdamW, step: usize) -> Result<(StepLosses, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let x = self.batch_tensor(batch)?;
        let z = self.model.encode(&x)?;
        let latents = Self::rows(&z)?;
        let assign = self.codebook.quantize_all(&latents)?;
        let codes = self.codes_tensor(&assign)?;
        let zq = (&z + (&codes - &z)?.detach())?;
        let recon = self.model.decode(&zq)?;
        let l = self.model.losses_from(&x, &recon, &z, &codes)?;
        let losses = StepLosses {
            recon: scalar(&l.recon)?,
            commit: scalar(&l.commit)?,
            velocity: scalar(&l.velocity)?,
            total: scalar(&l.total)?,
        };
        if !losses.total.is_finite() {
            return Err(Error::Divergence {
                stage: "vq",
                step,
                detail: format!("{losses:?}"),
            });
        }
        opt.backward_step(&l.total)?;
        self.codebook
            .ema_update(&latents, &assign, self.model.config.ema_decay)?;
        Ok((losses, latents))
    }

    /// Full training loop: Adam, step learning-rate drop, EMA codebook and
    /// dead-code resets after the warmup epochs. Returns mean total loss per epoch.
    pub fn train(&mut self, windows: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<StepLosses>> {
        if windows.is_empty() {
            return Err(Error::invalid("no training windows"));
        }
        for w in windows {
            self.check_window(w)?;
        }
        let cfg = self.config().clone();
        let mut opt = adam(self.model.store.all_vars(), cfg.lr)?;
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            opt.set_learning_rate(cfg.lr_at_epoch(epoch));
            order.shuffle(rng);
            let mut recent = Vec::with_capacity(windows.len());
            let mut acc = StepLosses::default();
            let mut batches = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<&Vec<f64>> = chunk.iter().map(|&i| &windows[i]).collect();
                let (l, z) = self.train_step(&batch, &mut opt, step)?;
                step += 1;
                recent.extend(z);
                acc.recon += l.recon;
                acc.commit += l.commit;
                acc.velocity += l.velocity;
                acc.total += l.total;
                batches += 1.0;
            }
            if epoch + 1 > cfg.warmup_epochs {
                self.codebook
                    .reset_dead_codes(&recent, cfg.dead_code_threshold, rng);
            }
            let mean = StepLosses {
                recon: acc.recon / batches,
                commit: acc.commit / batches,
                velocity: acc.velocity / batches,
                total: acc.total / batches,
            };
            log::debug!("{:?} epoch {epoch}: {mean:?}", self.kind);
            history.push(mean);
        }
        Ok(history)
    }

    /// Mean reconstruction error (normalized units) of windows through quantization.
    pub fn reconstruction_loss(&self, windows: &[Vec<f64>]) -> Result<f64> {
        let idx = self.tokenize_windows(windows)?;
        let recon = self.decode_indices(&idx)?;
        let mut sum = 0.0;
        let mut n = 0.0;
        for (a, b) in recon.iter().zip(windows) {
            let na = self.norm.normalize(a);
            let nb = self.norm.normalize(b);
            for (u, v) in na.iter().zip(&nb) {
                sum += (u - v) * (u - v);
                n += 1.0;
            }
        }
        Ok(sum / n)
    }

    // ---- motion tracks ----

    pub fn motion_windows(&self, frames: &[MotionFrame]) -> Result<Vec<MotionWindow>> {
        let tau = self.window();
        window_starts(frames.len(), tau, tau)
            .into_iter()
            .map(|s| canonicalize_window(&frames[s..s + tau], s))
            .collect()
    }

    pub fn tokenize_motion(&self, frames: &[MotionFrame]) -> Result<TokenizedTrack> {
        self.expect(TokenizerKind::Motion)?;
        let windows = self.motion_windows(frames)?;
        let flats: Vec<Vec<f64>> = windows.iter().map(motion_window_flat).collect();
        Ok(TokenizedTrack {
            indices: self.tokenize_windows(&flats)?,
            starts: windows.iter().map(|w| w.start).collect(),
            transforms: windows.iter().map(|w| w.to_world).collect(),
        })
    }

    /// Canonical frames decoded from one motion token per entry.
    pub fn decode_motion_windows(&self, indices: &[usize]) -> Result<Vec<Vec<MotionFrame>>> {
        self.expect(TokenizerKind::Motion)?;
        let d = self.config().input_dim;
        self.decode_indices(indices)?
            .into_iter()
            .map(|w| {
                w.chunks_exact(d)
                    .map(|f| MotionFrame::from_flat(f, self.joints))
                    .collect()
            })
            .collect()
    }

    pub fn detokenize_motion(&self, track: &TokenizedTrack) -> Result<Vec<MotionFrame>> {
        if track.transforms.len() != track.indices.len() {
            return Err(Error::LengthMismatch("track transforms vs indices".into()));
        }
        let decoded = self.decode_motion_windows(&track.indices)?;
        let mut out = Vec::new();
        for ((frames, t), &start) in decoded.into_iter().zip(&track.transforms).zip(&track.starts) {
            out.extend(invert_canonicalization(&MotionWindow {
                frames,
                to_world: *t,
                start,
            }));
        }
        Ok(out)
    }

    // ---- relation tracks ----

    pub fn tokenize_relation(&self, relation: &[RelationFrame]) -> Result<TokenizedTrack> {
        self.expect(TokenizerKind::Relation)?;
        let tau = self.window();
        let starts = window_starts(relation.len(), tau, tau);
        let flats: Vec<Vec<f64>> = starts
            .iter()
            .map(|&s| relation_window_flat(&relation[s..s + tau]))
            .collect();
        Ok(TokenizedTrack {
            indices: self.tokenize_windows(&flats)?,
            starts,
            transforms: Vec::new(),
        })
    }

    pub fn decode_relation(&self, indices: &[usize]) -> Result<Vec<Vec<RelationFrame>>> {
        self.expect(TokenizerKind::Relation)?;
        Ok(self
            .decode_indices(indices)?
            .into_iter()
            .map(|w| {
                w.chunks_exact(3)
                    .map(|f| RelationFrame::from_array([f[0], f[1], f[2]]))
                    .collect()
            })
            .collect())
    }

    fn expect(&self, kind: TokenizerKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!("tokenizer is {:?}, not {kind:?}", self.kind)));
        }
        Ok(())
    }

    // ---- persistence ----

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = self.model.store.snapshot()?;
        let dev = Device::Cpu;
        let k = self.codebook.len();
        let d = self.codebook.dim();
        tensors.insert("codebook.codes".into(), Tensor::from_vec(self.codebook.codes().to_vec(), (k, d), &dev)?);
        tensors.insert("codebook.cluster_size".into(), Tensor::from_vec(self.codebook.cluster_sizes().to_vec(), k, &dev)?);
        tensors.insert("codebook.embed_sum".into(), Tensor::from_vec(self.codebook.embed_sums().to_vec(), (k, d), &dev)?);
        let dim = self.norm.mean.len();
        tensors.insert("norm.mean".into(), Tensor::from_vec(self.norm.mean.clone(), dim, &dev)?);
        tensors.insert("norm.std".into(), Tensor::from_vec(self.norm.std.clone(), dim, &dev)?);
        Ok(Checkpoint {
            kind: self.kind.checkpoint_kind().into(),
            config: serde_json::json!({ "vq": self.config(), "joints": self.joints }),
            meta,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, kind: TokenizerKind) -> Result<Self> {
        ck.expect_kind(kind.checkpoint_kind())?;
        let config: VqVaeConfig = serde_json::from_value(ck.config["vq"].clone())?;
        let joints = ck.config["joints"].as_u64().unwrap_or(0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tok = Self::new(kind, config, joints, DType::F32, &mut rng)?;
        let model_tensors: BTreeMap<String, Tensor> = ck
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with("codebook.") && !k.starts_with("norm."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        tok.model.store.load(&model_tensors)?;
        let get = |name: &str| -> Result<Vec<f64>> {
            let t = ck
                .tensors
                .get(name)
                .ok_or_else(|| Error::Incompatible(format!("missing {name}")))?;
            Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
        };
        tok.codebook = Codebook::from_parts(
            get("codebook.codes")?,
            get("codebook.cluster_size")?,
            get("codebook.embed_sum")?,
            tok.config().latent_dim,
        )?;
        tok.norm = Normalizer {
            mean: get("norm.mean")?,
            std: get("norm.std")?,
        };
        Ok(tok)
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<String> {
        let ck = self.to_checkpoint(meta)?;
        ck.save(path)?;
        Ok(ck.config_hash())
    }

    pub fn load(path: &Path, kind: TokenizerKind) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, kind)
    }
}

/// One line of the token corpus file: `<sequence id>\t<role>\t<space-separated indices>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub sequence: String,
    pub role: String,
    pub tokens: Vec<usize>,
}

pub fn write_token_corpus(path: &Path, records: &[TokenRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let toks: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", r.sequence, r.role, toks.join(" ")));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_token_corpus(path: &Path) -> Result<Vec<TokenRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_token_corpus(&text)
}

pub fn parse_token_corpus(text: &str) -> Result<Vec<TokenRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let mut parts = line.splitn(3, '\t');
            let sequence = parts.next().unwrap_or_default().to_string();
            let role = parts
                .next()
                .ok_or_else(|| Error::Format(format!("token corpus line {} has no role", i + 1)))?
                .to_string();
            let tokens = parts
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad token `{t}` on line {}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TokenRecord {
                sequence,
                role,
                tokens,
            })
        })
        .collect()
}
