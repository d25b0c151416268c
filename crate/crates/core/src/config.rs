//! Pipeline configuration, stored as TOML.
//!
//! `vocab_size`/`text_rows`/`marker_rows` of the LM and `feature_dim`/`styles` of the
//! denoiser are derived from the data at run time; values in the file are
//! overwritten.

use crate::checkpoint::hash_json;
use crate::diffusion::DenoiserConfig;
use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::motion::feature_dim;
use crate::synth::{SynthConfig, STYLES};
use crate::vq::VqVaeConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ablation switches; each one corresponds to one ablation row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_audio: bool,
    pub no_captions: bool,
    pub no_relation: bool,
    pub no_refine: bool,
}

impl Ablations {
    /// Report row label.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_audio {
            parts.push("w/o audio");
        }
        if self.no_captions {
            parts.push("w/o captions");
        }
        if self.no_relation {
            parts.push("w/o relation");
        }
        if self.no_refine {
            parts.push("w/o refine");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(", ")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Seed of the synthetic corpus, independent of the pipeline seed.
    pub corpus_seed: u64,
    pub train_sequences: usize,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    /// Windows per prompt chunk.
    pub chunk_windows: usize,
    /// Stage-I prompts drawn per chunk.
    pub stage1_copies: usize,
    /// Text-only prompts per caption for the base stage (0 disables it).
    pub stage0_captions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Length of the evaluation segments in frames.
    pub segment_frames: usize,
    pub decoding: Decoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub vq_motion: VqVaeConfig,
    pub vq_relation: VqVaeConfig,
    pub audio_codes: usize,
    pub tasks: TaskConfig,
    pub lm: LmConfig,
    pub diffusion: DenoiserConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablations: Ablations,
}

const JOINTS: usize = 22;

impl PipelineConfig {
    /// Published sizes (VQ 512/512, LM 4x256, full schedules). Far beyond a desk CPU.
    pub fn reference() -> Self {
        let fd = feature_dim(JOINTS);
        let styles: Vec<String> = STYLES.iter().map(|s| s.to_string()).collect();
        Self {
            seed: 0,
            data: DataConfig { corpus_seed: 7, train_sequences: 56, synth: SynthConfig::desk() },
            vq_motion: VqVaeConfig::motion(fd, 3 * JOINTS),
            vq_relation: VqVaeConfig::relation(),
            audio_codes: 512,
            tasks: TaskConfig { chunk_windows: 5, stage1_copies: 1, stage0_captions: 1 },
            lm: LmConfig::standard(0, 0),
            diffusion: DenoiserConfig::standard(2 * fd, styles),
            eval: EvalConfig { segment_frames: 100, decoding: Decoding::Sample },
            ablations: Ablations::default(),
        }
    }

    /// Scaled-down sizes and schedules for one CPU core.
    pub fn desk() -> Self {
        let mut c = Self::reference();
        c.vq_motion = VqVaeConfig {
            latent_dim: 64,
            batch_size: 128,
            epochs: 40,
            lr: 1e-3,
            lr_gamma: 0.1,
            ..c.vq_motion
        };
        c.vq_relation = VqVaeConfig {
            latent_dim: 16,
            hidden: 32,
            batch_size: 128,
            epochs: 40,
            lr: 1e-3,
            lr_gamma: 0.1,
            ..c.vq_relation
        };
        c.lm = LmConfig {
            dim: 64,
            layers: 2,
            heads: 4,
            context: 256,
            lora_rank: 16,
            lora_alpha: 16.0,
            lr_stage0: 1e-3,
            lr_stage1: 1e-3,
            lr_stage2: 5e-4,
            batch_size: 8,
            epochs_stage0: 4,
            epochs_stage1: 8,
            epochs_stage2: 8,
            ..c.lm
        };
        c.diffusion = DenoiserConfig { width: 64, iterations: 1000, lr: 5e-4, velocity_weight: 10.0, ..c.diffusion };
        c
    }

    /// Desk sizes on the 8-sequence smoke corpus with short schedules.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.data = DataConfig { corpus_seed: 7, train_sequences: 6, synth: SynthConfig::smoke() };
        c.vq_motion.epochs = 10;
        c.vq_relation.epochs = 10;
        c.vq_motion.codebook_size = 64;
        c.vq_relation.codebook_size = 64;
        c.lm.epochs_stage0 = 1;
        c.lm.epochs_stage1 = 2;
        c.lm.epochs_stage2 = 2;
        c.diffusion.iterations = 40;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected reference, desk or smoke)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        if self.data.train_sequences == 0 || self.data.train_sequences >= self.data.synth.sequences {
            return Err(Error::Config("need at least one training and one test sequence".into()));
        }
        self.vq_motion.validate()?;
        self.vq_relation.validate()?;
        if self.vq_motion.window != self.vq_relation.window {
            return Err(Error::Config("motion and relation windows must have the same length".into()));
        }
        if self.tasks.chunk_windows == 0 {
            return Err(Error::Config("chunks need at least one window".into()));
        }
        if self.eval.segment_frames == 0 || !self.eval.segment_frames.is_multiple_of(self.vq_motion.window) {
            return Err(Error::Config("evaluation segments must be a whole number of windows".into()));
        }
        if self.audio_codes < crate::audio::MIN_AUDIO_CODES {
            return Err(Error::Config(format!("audio codes must be at least {}", crate::audio::MIN_AUDIO_CODES)));
        }
        self.diffusion.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Hash of the whole configuration, seed and ablations included.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash of the sections a stage depends on.
    pub fn section_hash(&self, sections: &[&str]) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let picked: serde_json::Map<String, serde_json::Value> =
            sections.iter().map(|s| (s.to_string(), v[*s].clone())).collect();
        hash_json(&serde_json::Value::Object(picked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["reference", "desk", "smoke"] {
            let c = PipelineConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn ablations_are_optional_in_the_file() {
        let c = PipelineConfig::desk();
        let text = c.to_toml().unwrap();
        let start = text.find("[ablations]").unwrap();
        let trimmed = &text[..start];
        let back = PipelineConfig::from_toml(trimmed).unwrap();
        assert_eq!(back.ablations, Ablations::default());
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut c = PipelineConfig::desk();
        c.eval.segment_frames = 30;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("seed = 1").is_err());
        assert!(PipelineConfig::preset("huge").is_err());
    }

    #[test]
    fn section_hash_ignores_other_sections() {
        let a = PipelineConfig::desk();
        let mut b = a.clone();
        b.lm.epochs_stage2 += 1;
        assert_eq!(a.section_hash(&["vq_motion"]), b.section_hash(&["vq_motion"]));
        assert_ne!(a.section_hash(&["lm"]), b.section_hash(&["lm"]));
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn labels() {
        assert_eq!(Ablations::default().label(), "full");
        let a = Ablations { no_relation: true, no_refine: true, ..Default::default() };
        assert_eq!(a.label(), "w/o relation, w/o refine");
    }
}
