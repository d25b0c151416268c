//! Constrained autoregressive decoding of a follower span.

use crate::error::{Error, Result};
use crate::vocab::{Special, TokenClass, TokenId, Vocabulary};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Anything that produces next-token logits for a context.
pub trait LogitSource {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, ids: &[TokenId]) -> Result<Vec<f64>>;
}

/// `temperature <= 0` selects greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: usize,
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self { temperature: 0.0, top_k: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    /// Motion codebook indices of the follower span.
    pub codes: Vec<usize>,
    /// True when `max_tokens` was reached before `</Follower>`.
    pub truncated: bool,
}

/// Decodes follower tokens after a context ending in `<Follower>`. Only motion
/// ids and `</Follower>` can be emitted. Greedy ties go to the lowest id.
pub fn generate(
    model: &dyn LogitSource,
    vocab: &Vocabulary,
    context: &[TokenId],
    sampling: SamplingConfig,
    max_tokens: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Generation> {
    if context.last() != Some(&Special::FollowerOpen.id()) {
        return Err(Error::MalformedPrompt("generation context must end with <Follower>".into()));
    }
    if model.vocab_size() != vocab.len() {
        return Err(Error::Incompatible(format!(
            "model has {} logits, vocabulary has {} tokens",
            model.vocab_size(),
            vocab.len()
        )));
    }
    let motion = vocab.range(TokenClass::Motion);
    let close = Special::FollowerClose.id();
    let allowed: Vec<TokenId> = std::iter::once(close)
        .chain((0..motion.len as TokenId).map(|k| motion.start + k))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut ids = context.to_vec();
    let mut codes = Vec::new();
    for _ in 0..max_tokens {
        let logits = model.next_logits(&ids)?;
        let cand: Vec<(TokenId, f64)> = allowed.iter().map(|&i| (i, logits[i as usize])).collect();
        if cand.iter().any(|(_, l)| l.is_nan()) {
            return Err(Error::NonFinite { frame: ids.len() });
        }
        let pick = if sampling.temperature <= 0.0 {
            greedy(&cand)
        } else {
            sample(&cand, sampling, rng)
        };
        if pick == close {
            return Ok(Generation { codes, truncated: false });
        }
        codes.push((pick - motion.start) as usize);
        ids.push(pick);
    }
    Ok(Generation { codes, truncated: true })
}

fn greedy(cand: &[(TokenId, f64)]) -> TokenId {
    let mut best = cand[0];
    for &c in &cand[1..] {
        if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
            best = c;
        }
    }
    best.0
}

fn sample(cand: &[(TokenId, f64)], s: SamplingConfig, rng: &mut ChaCha8Rng) -> TokenId {
    let mut sorted = cand.to_vec();
    // stable sort keeps lower ids first among equal logits
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    sorted.truncate(s.top_k.max(1));
    let top = sorted[0].1;
    let weights: Vec<f64> = sorted.iter().map(|(_, l)| ((l - top) / s.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return sorted[i].0;
        }
        u -= w;
    }
    sorted[sorted.len() - 1].0
}
