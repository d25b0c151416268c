//! Deterministic beat-feature audio tokens.
//!
//! Each motion frame gets one token describing where it falls inside the
//! current beat (8 phase buckets) and the accent of that beat (4 levels).
//! Token 0 means no beat has started yet (or silence); active tokens are
//! `1 + bucket * 4 + accent`, so 32 of the `K_a` ids carry information
//! (folded modulo `K_a - 1` when fewer codes are available).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PHASE_BUCKETS: usize = 8;
pub const ACCENT_LEVELS: usize = 4;
pub const SILENCE_TOKEN: usize = 0;
pub const MIN_AUDIO_CODES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatTrack {
    pub bpm: f64,
    /// Beat onset times in seconds, strictly increasing.
    pub onsets: Vec<f64>,
    /// Accent level (0-3) per onset.
    pub accents: Vec<u8>,
    pub duration: f64,
}

impl BeatTrack {
    pub fn period(&self) -> f64 {
        60.0 / self.bpm
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bpm > 0.0) || !(self.duration >= 0.0) {
            return Err(Error::invalid("beat track needs positive tempo and duration"));
        }
        if self.accents.len() != self.onsets.len() {
            return Err(Error::invalid("one accent per onset is required"));
        }
        if self.onsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("beat onsets must be strictly increasing"));
        }
        if self.onsets.iter().any(|&t| t < 0.0 || t >= self.duration) {
            return Err(Error::invalid("beat onsets must lie within the duration"));
        }
        if self.accents.iter().any(|&a| a as usize >= ACCENT_LEVELS) {
            return Err(Error::invalid("accent levels are 0-3"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: BeatTrack = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }
}

/// Onsets at `k * 60 / bpm` inside `[0, duration)`, cycling `accents`.
pub fn synthesize_beat_track(bpm: f64, duration: f64, accents: &[u8]) -> Result<BeatTrack> {
    synthesize_beat_track_with_offset(bpm, duration, accents, 0.0)
}

/// Like [`synthesize_beat_track`] with the first onset at `offset` seconds.
pub fn synthesize_beat_track_with_offset(bpm: f64, duration: f64, accents: &[u8], offset: f64) -> Result<BeatTrack> {
    if !(bpm > 0.0) {
        return Err(Error::invalid("tempo must be positive"));
    }
    let period = 60.0 / bpm;
    let mut onsets = Vec::new();
    let mut k = 0usize;
    loop {
        let t = offset + k as f64 * period;
        if t >= duration {
            break;
        }
        onsets.push(t);
        k += 1;
    }
    let pattern: &[u8] = if accents.is_empty() { &[0] } else { accents };
    let accents = (0..onsets.len()).map(|i| pattern[i % pattern.len()]).collect();
    let track = BeatTrack {
        bpm,
        onsets,
        accents,
        duration,
    };
    track.validate()?;
    Ok(track)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTokenStream {
    pub tokens: Vec<usize>,
    pub hop: f64,
}

/// One token per hop (motion frame); stream length is `ceil(duration / hop)`.
pub fn tokenize_audio(track: &BeatTrack, hop: f64, codes: usize) -> Result<AudioTokenStream> {
    if codes < MIN_AUDIO_CODES {
        return Err(Error::invalid(format!(
            "need at least {MIN_AUDIO_CODES} audio codes, got {codes}"
        )));
    }
    if !(hop > 0.0) {
        return Err(Error::invalid("hop must be positive"));
    }
    let n = (track.duration / hop - 1e-9).ceil().max(0.0) as usize;
    let period = track.period();
    let mut tokens = Vec::with_capacity(n);
    let mut j = 0usize;
    for i in 0..n {
        let t = i as f64 * hop;
        while j + 1 < track.onsets.len() && track.onsets[j + 1] <= t + 1e-9 {
            j += 1;
        }
        if track.onsets.is_empty() || track.onsets[0] > t + 1e-9 {
            tokens.push(SILENCE_TOKEN);
            continue;
        }
        let start = track.onsets[j];
        let len = if j + 1 < track.onsets.len() {
            track.onsets[j + 1] - start
        } else {
            period
        };
        let phase = ((t - start) / len).clamp(0.0, 1.0);
        let bucket = ((phase * PHASE_BUCKETS as f64 + 1e-9).floor() as usize).min(PHASE_BUCKETS - 1);
        let accent = track.accents[j] as usize;
        // fewer than 33 codes folds the active codes onto 1..codes
        tokens.push(1 + (bucket * ACCENT_LEVELS + accent) % (codes - 1));
    }
    Ok(AudioTokenStream { tokens, hop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onsets_for_120_bpm() {
        let t = synthesize_beat_track(120.0, 2.0, &[0]).unwrap();
        assert_eq!(t.onsets, vec![0.0, 0.5, 1.0, 1.5]);
        let t = synthesize_beat_track(60.0, 1.0, &[0]).unwrap();
        assert_eq!(t.onsets, vec![0.0]);
    }

    #[test]
    fn accent_pattern_cycles() {
        let t = synthesize_beat_track(120.0, 5.0, &[2, 0, 1, 0]).unwrap();
        assert_eq!(&t.accents[..8], &[2, 0, 1, 0, 2, 0, 1, 0]);
    }

    #[test]
    fn silence_maps_to_reserved_code() {
        let t = BeatTrack { bpm: 100.0, onsets: vec![], accents: vec![], duration: 1.0 };
        let s = tokenize_audio(&t, 0.05, 512).unwrap();
        assert_eq!(s.tokens.len(), 20);
        assert!(s.tokens.iter().all(|&k| k == SILENCE_TOKEN));
    }

    #[test]
    fn period_matches_beat_at_20_fps() {
        let t = synthesize_beat_track(120.0, 6.0, &[1]).unwrap();
        let s = tokenize_audio(&t, 1.0 / 20.0, 512).unwrap();
        assert_eq!(s.tokens.len(), 120);
        for i in 0..110 {
            assert_eq!(s.tokens[i], s.tokens[i + 10], "frame {i}");
        }
        assert_ne!(s.tokens[0], s.tokens[5]);
    }

    #[test]
    fn small_code_space_folds() {
        let t = synthesize_beat_track(120.0, 2.0, &[3]).unwrap();
        let s = tokenize_audio(&t, 0.05, 8).unwrap();
        assert!(s.tokens.iter().all(|&k| k < 8));
        assert!(tokenize_audio(&t, 0.05, 7).is_err());
    }

    #[test]
    fn length_law_and_determinism() {
        let t = synthesize_beat_track(97.0, 3.33, &[3, 1]).unwrap();
        let a = tokenize_audio(&t, 0.05, 512).unwrap();
        let b = tokenize_audio(&t, 0.05, 512).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens.len(), (3.33f64 / 0.05).ceil() as usize);
        assert!(a.tokens.iter().all(|&k| k <= 32));
    }
}
