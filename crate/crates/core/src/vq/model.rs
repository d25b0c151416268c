use crate::error::{Error, Result};
use crate::nn::{split_steps, GruCell, Init, Linear, ParamStore};
use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqVaeConfig {
    /// Per-frame feature width `D`.
    pub input_dim: usize,
    /// Window length `tau`.
    pub window: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub ema_decay: f64,
    pub commit_weight: f64,
    pub velocity_weight: f64,
    /// Leading channels holding positions; the velocity loss compares their frame differences.
    pub velocity_channels: usize,
    pub dead_code_threshold: f64,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning-rate multiplier applied once half of the epochs have run.
    pub lr_gamma: f64,
}

impl VqVaeConfig {
    /// Full-body motion tokenizer (`K = 512`, `d = 512`).
    pub fn motion(input_dim: usize, position_channels: usize) -> Self {
        Self {
            input_dim,
            window: crate::window::WINDOW_LEN,
            latent_dim: 512,
            codebook_size: 512,
            hidden: 128,
            layers: 2,
            ema_decay: 0.95,
            commit_weight: 0.02,
            velocity_weight: 0.1,
            velocity_channels: position_channels,
            dead_code_threshold: 1.0,
            warmup_epochs: 5,
            lr: 1e-4,
            batch_size: 2048,
            epochs: 2000,
            lr_gamma: 0.05,
        }
    }

    /// Pairwise relation tokenizer (`K = 512`, `d = 32`).
    pub fn relation() -> Self {
        Self {
            input_dim: 3,
            latent_dim: 32,
            velocity_channels: 3,
            epochs: 200,
            ..Self::motion(3, 3)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 1 {
            return Err(Error::invalid("codebook size must be at least 1"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid("EMA decay must lie in (0, 1)"));
        }
        if self.commit_weight < 0.0 || self.velocity_weight < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.velocity_channels > self.input_dim || self.layers == 0 || self.window == 0 {
            return Err(Error::invalid("inconsistent VQ-VAE shape settings"));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if 2 * epoch >= self.epochs {
            self.lr * self.lr_gamma
        } else {
            self.lr
        }
    }
}

/// Per-channel standardization fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-2;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits on frames (each of width `dim`); channel std is floored at [`STD_FLOOR`].
    pub fn fit<'a>(frames: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for f in frames {
            n += 1.0;
            for j in 0..dim {
                sum[j] += f[j];
                sq[j] += f[j] * f[j];
            }
        }
        if n == 0.0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = (0..dim)
            .map(|j| (sq[j] / n - mean[j] * mean[j]).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }
}

/// Sequence-to-one GRU encoder and one-to-sequence GRU decoder.
pub struct VqModel {
    pub config: VqVaeConfig,
    pub store: ParamStore,
    enc_fwd: Vec<GruCell>,
    enc_bwd: Vec<GruCell>,
    enc_out: Linear,
    dec_in: Linear,
    dec_pos: Tensor,
    dec_init: Vec<Linear>,
    dec_cells: Vec<GruCell>,
    dec_out: Linear,
}

pub struct VqLosses {
    pub recon: Tensor,
    pub commit: Tensor,
    pub velocity: Tensor,
    pub total: Tensor,
}

impl VqModel {
    pub fn new(config: VqVaeConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype);
        let h = config.hidden;
        let mut enc_fwd = Vec::new();
        let mut enc_bwd = Vec::new();
        for l in 0..config.layers {
            let d_in = if l == 0 { config.input_dim } else { 2 * h };
            enc_fwd.push(GruCell::new(&mut store, &format!("enc.{l}.fwd"), d_in, h, rng)?);
            enc_bwd.push(GruCell::new(&mut store, &format!("enc.{l}.bwd"), d_in, h, rng)?);
        }
        let enc_out = store.linear("enc.out", 2 * h, config.latent_dim, rng)?;
        let dec_in = store.linear("dec.in", config.latent_dim, h, rng)?;
        let dec_pos = store.var("dec.pos", &[config.window, h], Init::Normal(0.1), rng)?;
        let mut dec_init = Vec::new();
        let mut dec_cells = Vec::new();
        for l in 0..config.layers {
            dec_init.push(store.linear(&format!("dec.{l}.init"), config.latent_dim, h, rng)?);
            dec_cells.push(GruCell::new(&mut store, &format!("dec.{l}.gru"), h, h, rng)?);
        }
        let dec_out = store.linear("dec.out", h, config.input_dim, rng)?;
        Ok(Self {
            config,
            store,
            enc_fwd,
            enc_bwd,
            enc_out,
            dec_in,
            dec_pos,
            dec_init,
            dec_cells,
            dec_out,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    /// `[B, tau, D]` normalized windows to `[B, d]` latents.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        if t != self.config.window {
            return Err(Error::WindowLength {
                expected: self.config.window,
                actual: t,
            });
        }
        if d != self.config.input_dim {
            return Err(Error::invalid(format!(
                "window has {d} channels, expected {}",
                self.config.input_dim
            )));
        }
        let h0 = Tensor::zeros((b, self.config.hidden), x.dtype(), &Device::Cpu)?;
        let mut cur = split_steps(x)?;
        let mut last = None;
        for (f, bw) in self.enc_fwd.iter().zip(&self.enc_bwd) {
            let fo = f.run_steps(&cur, &h0, false)?;
            let bo = bw.run_steps(&cur, &h0, true)?;
            last = Some(Tensor::cat(&[&fo[t - 1], &bo[0]], 1)?);
            cur = fo.iter().zip(&bo).map(|(a, b)| Ok(Tensor::cat(&[a, b], 1)?)).collect::<Result<_>>()?;
        }
        self.enc_out.forward(&last.unwrap())
    }

    /// `[B, d]` (quantized) latents to `[B, tau, D]` normalized windows.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let e = self.dec_in.forward(z)?;
        let mut cur: Vec<Tensor> = (0..self.config.window)
            .map(|t| Ok(e.broadcast_add(&self.dec_pos.get(t)?)?))
            .collect::<Result<_>>()?;
        for (init, cell) in self.dec_init.iter().zip(&self.dec_cells) {
            let h0 = init.forward(z)?.tanh()?;
            cur = cell.run_steps(&cur, &h0, false)?;
        }
        self.dec_out.forward(&Tensor::stack(&cur, 1)?)
    }

    /// Losses with the straight-through estimator: the decoder sees `codes`
    /// while gradients flow to the encoder as if quantization were the identity.
    pub fn losses(&self, x: &Tensor, codes: &Tensor) -> Result<VqLosses> {
        let z = self.encode(x)?;
        let codes = codes.detach();
        let zq = (&z + (&codes - &z)?.detach())?;
        let recon = self.decode(&zq)?;
        self.losses_from(x, &recon, &z, &codes)
    }

    pub fn losses_from(&self, x: &Tensor, recon: &Tensor, z: &Tensor, codes: &Tensor) -> Result<VqLosses> {
        let cfg = &self.config;
        let l_rec = (recon - x)?.sqr()?.mean_all()?;
        let l_commit = (z - codes)?.sqr()?.mean_all()?;
        let l_vel = if cfg.velocity_channels > 0 && cfg.window > 1 {
            let t = cfg.window;
            let pr = recon.narrow(D::Minus1, 0, cfg.velocity_channels)?;
            let px = x.narrow(D::Minus1, 0, cfg.velocity_channels)?;
            let dr = (pr.narrow(1, 1, t - 1)? - pr.narrow(1, 0, t - 1)?)?;
            let dx = (px.narrow(1, 1, t - 1)? - px.narrow(1, 0, t - 1)?)?;
            (dr - dx)?.sqr()?.mean_all()?
        } else {
            l_rec.zeros_like()?
        };
        let total = ((&l_rec + (&l_commit * cfg.commit_weight)?)? + (&l_vel * cfg.velocity_weight)?)?;
        Ok(VqLosses {
            recon: l_rec,
            commit: l_commit,
            velocity: l_vel,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(dtype: DType) -> VqModel {
        let cfg = VqVaeConfig {
            input_dim: 4,
            window: 5,
            latent_dim: 3,
            codebook_size: 4,
            hidden: 6,
            velocity_channels: 2,
            ..VqVaeConfig::relation()
        };
        VqModel::new(cfg, dtype, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_checks_length() {
        let m = tiny(DType::F64);
        let x = Tensor::randn(0.0f64, 1.0, (2, 5, 4), &Device::Cpu).unwrap();
        let a = m.encode(&x).unwrap().to_vec2::<f64>().unwrap();
        let b = m.encode(&x).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(a, b);
        let short = Tensor::zeros((1, 4, 4), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(m.encode(&short), Err(Error::WindowLength { .. })));
    }

    #[test]
    fn zero_weights_zero_input_gives_zero_latent() {
        let m = tiny(DType::F64);
        for v in m.store.all_vars() {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let x = Tensor::zeros((1, 5, 4), DType::F64, &Device::Cpu).unwrap();
        let z = m.encode(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let m = tiny(DType::F64);
        let x = Tensor::randn(0.0f64, 1.0, (2, 5, 4), &Device::Cpu).unwrap();
        let z = Tensor::randn(0.0f64, 1.0, (2, 3), &Device::Cpu).unwrap();
        let l = m.losses_from(&x, &x, &z, &z).unwrap();
        assert_eq!(l.total.to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn normalizer_round_trip() {
        let frames = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(frames.iter().map(|f| f.as_slice()), 2);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, STD_FLOOR]);
        let x = vec![3.0, 5.5, 1.0, 4.0];
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lr_drops_at_half() {
        let cfg = VqVaeConfig { epochs: 10, lr: 1.0, lr_gamma: 0.05, ..VqVaeConfig::relation() };
        assert_eq!(cfg.lr_at_epoch(4), 1.0);
        assert_eq!(cfg.lr_at_epoch(5), 0.05);
    }
}
