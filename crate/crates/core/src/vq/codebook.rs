use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Laplace smoothing constant for EMA cluster sizes.
pub const EMA_EPSILON: f64 = 1e-5;

/// Learnable code vectors with exponential-moving-average statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    codes: Vec<f64>,
    cluster_size: Vec<f64>,
    embed_sum: Vec<f64>,
    usage: Vec<u64>,
}

impl Codebook {
    /// Codes drawn from `uniform(-1/K, 1/K)`; each code starts with unit EMA mass.
    pub fn new_uniform(size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / size as f64;
        let codes: Vec<f64> = (0..size * dim).map(|_| rng.random_range(-a..=a)).collect();
        Self::from_codes(codes, dim)
    }

    pub fn from_codes(codes: Vec<f64>, dim: usize) -> Self {
        let k = codes.len().checked_div(dim).unwrap_or(0);
        Self {
            dim,
            embed_sum: codes.clone(),
            codes,
            cluster_size: vec![1.0; k],
            usage: vec![0; k],
        }
    }

    pub fn from_parts(codes: Vec<f64>, cluster_size: Vec<f64>, embed_sum: Vec<f64>, dim: usize) -> Result<Self> {
        let k = cluster_size.len();
        if codes.len() != k * dim || embed_sum.len() != k * dim {
            return Err(Error::invalid("codebook parts have inconsistent sizes"));
        }
        Ok(Self {
            dim,
            codes,
            cluster_size,
            embed_sum,
            usage: vec![0; k],
        })
    }

    pub fn len(&self) -> usize {
        self.cluster_size.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_size.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code(&self, k: usize) -> Result<&[f64]> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange {
                what: "codebook",
                index: k,
                size: self.len(),
            });
        }
        Ok(&self.codes[k * self.dim..(k + 1) * self.dim])
    }

    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    pub fn cluster_sizes(&self) -> &[f64] {
        &self.cluster_size
    }

    pub fn embed_sums(&self) -> &[f64] {
        &self.embed_sum
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn set_cluster_size(&mut self, k: usize, n: f64) {
        self.cluster_size[k] = n;
    }

    /// Nearest code under Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, z: &[f64]) -> Result<(usize, &[f64])> {
        if self.is_empty() {
            return Err(Error::EmptyCodebook);
        }
        if z.len() != self.dim {
            return Err(Error::invalid(format!(
                "latent has dimension {}, codebook {}",
                z.len(),
                self.dim
            )));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.codes.chunks_exact(self.dim).enumerate() {
            let d: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        Ok((best, self.code(best)?))
    }

    pub fn quantize_all(&self, zs: &[Vec<f64>]) -> Result<Vec<usize>> {
        zs.iter().map(|z| Ok(self.quantize(z)?.0)).collect()
    }

    /// EMA update: `N_k <- mu N_k + (1-mu) n_k`, `m_k <- mu m_k + (1-mu) sum z`,
    /// then `c_k = m_k / N^_k` with Laplace-smoothed sizes `N^_k`.
    pub fn ema_update(&mut self, latents: &[Vec<f64>], assignments: &[usize], decay: f64) -> Result<()> {
        if latents.len() != assignments.len() {
            return Err(Error::LengthMismatch("latents vs assignments".into()));
        }
        let k_len = self.len();
        let d = self.dim;
        let mut counts = vec![0.0; k_len];
        let mut sums = vec![0.0; k_len * d];
        for (z, &k) in latents.iter().zip(assignments) {
            if k >= k_len {
                return Err(Error::IndexOutOfRange {
                    what: "codebook",
                    index: k,
                    size: k_len,
                });
            }
            counts[k] += 1.0;
            self.usage[k] += 1;
            for (s, v) in sums[k * d..(k + 1) * d].iter_mut().zip(z) {
                *s += v;
            }
        }
        for (c, n) in self.cluster_size.iter_mut().zip(&counts) {
            *c = decay * *c + (1.0 - decay) * n;
        }
        for (m, s) in self.embed_sum.iter_mut().zip(&sums) {
            *m = decay * *m + (1.0 - decay) * s;
        }
        let total: f64 = self.cluster_size.iter().sum();
        for k in 0..k_len {
            let smoothed = (self.cluster_size[k] + EMA_EPSILON) / (total + k_len as f64 * EMA_EPSILON) * total;
            for j in 0..d {
                self.codes[k * d + j] = self.embed_sum[k * d + j] / smoothed;
            }
        }
        Ok(())
    }

    /// Replaces every code whose EMA mass is below `threshold` with a uniformly
    /// drawn latent from `recent`, restarting its statistics at unit mass.
    /// Returns the replaced indices.
    pub fn reset_dead_codes(&mut self, recent: &[Vec<f64>], threshold: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if recent.is_empty() {
            return Vec::new();
        }
        let d = self.dim;
        let mut replaced = Vec::new();
        for k in 0..self.len() {
            if self.cluster_size[k] < threshold {
                let z = &recent[rng.random_range(0..recent.len())];
                self.codes[k * d..(k + 1) * d].copy_from_slice(z);
                self.embed_sum[k * d..(k + 1) * d].copy_from_slice(z);
                self.cluster_size[k] = 1.0;
                replaced.push(k);
            }
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        replaced
    }
}
