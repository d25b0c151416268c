//! End-to-end workflow over a run directory.
//!
//! ```text
//! <run>/config.toml           resolved configuration
//! <run>/manifest.json         per-stage outputs and hashes
//! <run>/data/<id>.duet        synthetic duets, <id>.beats.json beat tracks, split.json
//! <run>/vq/{motion,relation}.ckpt
//! <run>/tokens/corpus.tsv     token records; vocab.json; meta.json
//! <run>/captions/captions.tsv
//! <run>/lm/model.ckpt         lm/history.json
//! <run>/gen/raw/<id>.duet     decoded follower, gen/tokens.tsv
//! <run>/diffusion/denoiser.ckpt
//! <run>/gen/refined/<id>.duet
//! <run>/eval/{ground_truth,raw,refined,final}.json
//! <run>/report.txt, report.csv
//! ```
//!
//! Every stage draws from its own generator seeded by the run seed and the
//! stage name, so stages can be re-run independently.

use crate::audio::{tokenize_audio, BeatTrack};
use crate::checkpoint::{hash_bytes, hash_json};
use crate::config::{Decoding, PipelineConfig};
use crate::describer::{default_rules, describe_window, read_caption_corpus, write_caption_corpus, CaptionRecord};
use crate::diffusion::refine::{crop_features, crop_starts, refine_sequence};
use crate::diffusion::{Denoiser, DenoiserConfig};
use crate::duet::{read_duet, write_duet, DuetSequence};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, RigidTransform2D};
use crate::lm::{generate, LmConfig, SamplingConfig, Stage, TokenLm};
use crate::metrics::{evaluate, EvalSample, MetricReport};
use crate::motion::{follower_pose_from_relation, root_poses, MotionFrame, RelationFrame, RootPose};
use crate::prompt::{assemble_prompt, build_stage1_tasks, build_stage2_tasks, text_prompt, DuetTokens, PromptSequence, TaskOptions, TaskSource};
use crate::skeleton::Skeleton;
use crate::synth::generate_corpus;
use crate::vocab::Vocabulary;
use crate::vq::model::Normalizer;
use crate::vq::{motion_window_flat, read_token_corpus, relation_window_flat, write_token_corpus, TokenRecord, TokenizerKind, VqTokenizer};
use crate::window::{invert_canonicalization, motion_windows, window_starts, MotionWindow};
use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    GenData,
    TrainVq,
    Tokenize,
    Describe,
    TrainLm,
    Generate,
    TrainDiffusion,
    Refine,
    Evaluate,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 10] = [
        StageName::GenData,
        StageName::TrainVq,
        StageName::Tokenize,
        StageName::Describe,
        StageName::TrainLm,
        StageName::Generate,
        StageName::TrainDiffusion,
        StageName::Refine,
        StageName::Evaluate,
        StageName::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::GenData => "gen-data",
            StageName::TrainVq => "train-vq",
            StageName::Tokenize => "tokenize",
            StageName::Describe => "describe",
            StageName::TrainLm => "train-lm",
            StageName::Generate => "generate",
            StageName::TrainDiffusion => "train-diffusion",
            StageName::Refine => "refine",
            StageName::Evaluate => "evaluate",
            StageName::Report => "report",
        }
    }

    /// Stages whose outputs do not depend on the ablation switches.
    pub fn is_shared(self) -> bool {
        matches!(
            self,
            StageName::GenData | StageName::TrainVq | StageName::Tokenize | StageName::Describe | StageName::TrainDiffusion
        )
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            StageName::GenData => &["data"],
            StageName::TrainVq => &["vq"],
            StageName::Tokenize => &["tokens"],
            StageName::Describe => &["captions"],
            StageName::TrainLm => &["lm"],
            StageName::Generate => &["gen/raw", "gen/tokens.tsv"],
            StageName::TrainDiffusion => &["diffusion"],
            StageName::Refine => &["gen/refined"],
            StageName::Evaluate => &["eval"],
            StageName::Report => &["report.txt", "report.csv"],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub label: String,
    /// Per stage: free-form record (output hashes, losses, counts).
    pub stages: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Token tracks of one sequence.
#[derive(Debug, Clone, Default)]
pub struct SequenceTokens {
    pub leader: Vec<usize>,
    pub follower: Vec<usize>,
    pub relation: Vec<usize>,
    pub audio: Vec<usize>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub dir: PathBuf,
    pub skel: Skeleton,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn circular_mean(angles: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = angles.fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Equal-weight blend of two ground poses (yaw on the circle).
pub fn blend_poses(a: RootPose, b: RootPose) -> RootPose {
    RootPose {
        x: 0.5 * (a.x + b.x),
        z: 0.5 * (a.z + b.z),
        yaw: wrap_angle(a.yaw + 0.5 * wrap_angle(b.yaw - a.yaw)),
    }
}

/// Places decoded canonical follower windows in the world. Window `k` is
/// anchored at `follower_pose_from_relation(leader root at its first frame,
/// relations[k])`, blended with the previous window's final follower pose.
/// A window without a relation starts where the previous one ended.
pub fn place_follower(
    decoded: &[Vec<MotionFrame>],
    starts: &[usize],
    leader_roots: &[RootPose],
    relations: &[Option<RelationFrame>],
    mut previous: Option<RootPose>,
) -> Result<(Vec<MotionFrame>, Option<RootPose>)> {
    if decoded.len() != starts.len() || decoded.len() != relations.len() {
        return Err(Error::LengthMismatch("decoded windows, starts and relations differ in count".into()));
    }
    let mut out = Vec::new();
    for ((frames, &start), rel) in decoded.iter().zip(starts).zip(relations) {
        let leader = *leader_roots
            .get(start)
            .ok_or(Error::IndexOutOfRange { what: "leader frames", index: start, size: leader_roots.len() })?;
        let pose = match (rel.map(|r| follower_pose_from_relation(leader, r)), previous) {
            (Some(anchor), Some(p)) => blend_poses(anchor, p),
            (Some(anchor), None) => anchor,
            (None, Some(p)) => p,
            (None, None) => return Err(Error::invalid("the first follower window needs a relation")),
        };
        let placed = invert_canonicalization(&MotionWindow {
            frames: frames.clone(),
            to_world: RigidTransform2D::from_pose(pose.x, pose.z, pose.yaw),
            start,
        });
        previous = root_poses(&placed).last().copied();
        out.extend(placed);
    }
    Ok((out, previous))
}

impl Pipeline {
    pub fn new(config: PipelineConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, dir: dir.into(), skel: Skeleton::smpl22() })
    }

    /// Opens an existing run directory with the configuration stored in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join("config.toml");
        if !path.exists() {
            return Err(Error::MissingInput { stage: "open".into(), path });
        }
        Self::new(PipelineConfig::load(&path)?, dir)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn require(&self, stage: StageName, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingInput { stage: stage.as_str().into(), path: p })
        }
    }

    fn mkdir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn stage_rng(&self, stage: StageName) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9e3779b97f4a7c15) ^ fnv(stage.as_str()))
    }

    /// Writes `config.toml` and an empty manifest if none exists.
    pub fn init(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        self.config.save(&self.path("config.toml"))?;
        let mut m = self.manifest().unwrap_or_default();
        m.config_hash = self.config.hash();
        m.seed = self.config.seed;
        m.label = self.config.ablations.label();
        self.save_manifest(&m)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path("manifest.json");
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    fn save_manifest(&self, m: &Manifest) -> Result<()> {
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(m)? + "\n")?;
        Ok(())
    }

    fn record(&self, stage: StageName, value: serde_json::Value) -> Result<()> {
        let mut m = self.manifest().unwrap_or_default();
        m.config_hash = self.config.hash();
        m.seed = self.config.seed;
        m.label = self.config.ablations.label();
        m.stages.insert(stage.as_str().into(), value);
        self.save_manifest(&m)
    }

    /// Hard-links (or copies) the outputs of `stages` from another run directory.
    pub fn adopt(&self, from: &Path, stages: &[StageName]) -> Result<()> {
        self.init()?;
        let theirs: Manifest = serde_json::from_str(&std::fs::read_to_string(from.join("manifest.json"))?)?;
        for &s in stages {
            for rel in s.outputs() {
                let src = from.join(rel);
                if !src.exists() {
                    return Err(Error::MissingInput { stage: s.as_str().into(), path: src });
                }
                link_tree(&src, &self.path(rel))?;
            }
            if let Some(v) = theirs.stages.get(s.as_str()) {
                self.record(s, v.clone())?;
            }
        }
        Ok(())
    }

    // ---- data ----

    pub fn gen_data(&self) -> Result<()> {
        let dir = self.mkdir("data")?;
        let cfg = &self.config.data;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.corpus_seed);
        let corpus = generate_corpus(&cfg.synth, &self.skel, &mut rng)?;
        let mut hashes = BTreeMap::new();
        for s in &corpus {
            let bytes = crate::duet::encode_duet(&s.duet, &self.skel, true)?;
            std::fs::write(dir.join(format!("{}.duet", s.id)), &bytes)?;
            s.beats.save(&dir.join(format!("{}.beats.json", s.id)))?;
            hashes.insert(s.id.clone(), hash_bytes(&bytes));
        }
        let ids: Vec<String> = corpus.iter().map(|s| s.id.clone()).collect();
        let split = Split { train: ids[..cfg.train_sequences].to_vec(), test: ids[cfg.train_sequences..].to_vec() };
        std::fs::write(dir.join("split.json"), serde_json::to_string_pretty(&split)?)?;
        self.record(StageName::GenData, serde_json::json!({ "sequences": ids.len(), "hashes": hashes }))
    }

    pub fn split(&self, stage: StageName) -> Result<Split> {
        let p = self.require(stage, "data/split.json")?;
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    pub fn load_duet(&self, stage: StageName, id: &str) -> Result<DuetSequence> {
        read_duet(&self.require(stage, &format!("data/{id}.duet"))?, &self.skel)
    }

    pub fn load_beats(&self, stage: StageName, id: &str) -> Result<BeatTrack> {
        BeatTrack::load(&self.require(stage, &format!("data/{id}.beats.json"))?)
    }

    // ---- tokenizers ----

    pub fn train_vq(&self) -> Result<()> {
        let stage = StageName::TrainVq;
        let split = self.split(stage)?;
        let tau = self.config.vq_motion.window;
        let mut motion = Vec::new();
        let mut relation = Vec::new();
        for id in &split.train {
            let d = self.load_duet(stage, id)?;
            for track in [&d.leader, &d.follower] {
                motion.extend(motion_windows(track, tau)?.iter().map(motion_window_flat));
            }
            for s in window_starts(d.len(), tau, tau) {
                relation.push(relation_window_flat(&d.relation[s..s + tau]));
            }
        }
        let mut rng = self.stage_rng(stage);
        let dir = self.mkdir("vq")?;
        let joints = self.skel.joint_count();
        let mut mvq = VqTokenizer::new(TokenizerKind::Motion, self.config.vq_motion.clone(), joints, DType::F32, &mut rng)?;
        mvq.fit_normalizer(&motion);
        let mh = mvq.train(&motion, &mut rng)?;
        let mut rvq = VqTokenizer::new(TokenizerKind::Relation, self.config.vq_relation.clone(), 0, DType::F32, &mut rng)?;
        rvq.fit_normalizer(&relation);
        let rh = rvq.train(&relation, &mut rng)?;
        let meta = serde_json::json!({ "config": self.config.section_hash(&["vq_motion", "vq_relation", "data"]) });
        let m_hash = mvq.save(&dir.join("motion.ckpt"), meta.clone())?;
        let r_hash = rvq.save(&dir.join("relation.ckpt"), meta)?;
        let m_rmse = position_rmse(&mvq, &motion, joints)?;
        self.record(
            stage,
            serde_json::json!({
                "motion": { "hash": m_hash, "windows": motion.len(), "final_loss": mh.last().map(|l| l.total), "position_rmse": m_rmse },
                "relation": { "hash": r_hash, "windows": relation.len(), "final_loss": rh.last().map(|l| l.total),
                              "recon": rvq.reconstruction_loss(&relation)? },
            }),
        )
    }

    pub fn load_vq(&self, stage: StageName, kind: TokenizerKind) -> Result<VqTokenizer> {
        let rel = match kind {
            TokenizerKind::Motion => "vq/motion.ckpt",
            TokenizerKind::Relation => "vq/relation.ckpt",
        };
        VqTokenizer::load(&self.require(stage, rel)?, kind)
    }

    fn vocabulary(&self, mvq: &VqTokenizer, rvq: &VqTokenizer) -> Result<Vocabulary> {
        Vocabulary::new(mvq.codebook.len(), rvq.codebook.len(), self.config.audio_codes)
    }

    pub fn tokenize(&self) -> Result<()> {
        let stage = StageName::Tokenize;
        let split = self.split(stage)?;
        let mvq = self.load_vq(stage, TokenizerKind::Motion)?;
        let rvq = self.load_vq(stage, TokenizerKind::Relation)?;
        let dir = self.mkdir("tokens")?;
        let mut records = Vec::new();
        for id in split.train.iter().chain(&split.test) {
            let d = self.load_duet(stage, id)?;
            let beats = self.load_beats(stage, id)?;
            let audio = tokenize_audio(&beats, 1.0 / d.fps, self.config.audio_codes)?;
            let tracks = [
                ("leader", mvq.tokenize_motion(&d.leader)?.indices),
                ("follower", mvq.tokenize_motion(&d.follower)?.indices),
                ("relation", rvq.tokenize_relation(&d.relation)?.indices),
                ("audio", audio.tokens),
            ];
            for (role, tokens) in tracks {
                records.push(TokenRecord { sequence: id.clone(), role: role.into(), tokens });
            }
        }
        write_token_corpus(&dir.join("corpus.tsv"), &records)?;
        let vocab = self.vocabulary(&mvq, &rvq)?;
        vocab.save(&dir.join("vocab.json"))?;
        let meta = serde_json::json!({
            "vq_motion": crate::checkpoint::Checkpoint::load(&self.path("vq/motion.ckpt"))?.config_hash(),
            "vq_relation": crate::checkpoint::Checkpoint::load(&self.path("vq/relation.ckpt"))?.config_hash(),
            "vocab": vocab_hash(&vocab)?,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        self.record(stage, serde_json::json!({ "records": records.len(), "meta": meta }))
    }

    pub fn load_tokens(&self, stage: StageName) -> Result<BTreeMap<String, SequenceTokens>> {
        let records = read_token_corpus(&self.require(stage, "tokens/corpus.tsv")?)?;
        let mut out: BTreeMap<String, SequenceTokens> = BTreeMap::new();
        for r in records {
            let e = out.entry(r.sequence).or_default();
            match r.role.as_str() {
                "leader" => e.leader = r.tokens,
                "follower" => e.follower = r.tokens,
                "relation" => e.relation = r.tokens,
                "audio" => e.audio = r.tokens,
                other => return Err(Error::Format(format!("unknown token role `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn load_vocab(&self, stage: StageName) -> Result<Vocabulary> {
        Vocabulary::load(&self.require(stage, "tokens/vocab.json")?)
    }

    fn token_meta(&self, stage: StageName) -> Result<serde_json::Value> {
        Ok(serde_json::from_str(&std::fs::read_to_string(self.require(stage, "tokens/meta.json")?)?)?)
    }

    // ---- captions ----

    pub fn describe(&self) -> Result<()> {
        let stage = StageName::Describe;
        let split = self.split(stage)?;
        let rules = default_rules();
        let tau = self.config.vq_motion.window;
        let mut records = Vec::new();
        for id in split.train.iter().chain(&split.test) {
            let d = self.load_duet(stage, id)?;
            for (role, track) in [("leader", &d.leader), ("follower", &d.follower)] {
                for (i, w) in motion_windows(track, tau)?.iter().enumerate() {
                    let c = describe_window(w, &self.skel, &rules, i);
                    records.push(CaptionRecord { sequence: id.clone(), role: role.into(), window: i, text: c.text() });
                }
            }
        }
        let dir = self.mkdir("captions")?;
        write_caption_corpus(&dir.join("captions.tsv"), &records)?;
        self.record(stage, serde_json::json!({ "captions": records.len() }))
    }

    fn load_captions(&self, stage: StageName) -> Result<BTreeMap<(String, String), Vec<String>>> {
        let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for r in read_caption_corpus(&self.require(stage, "captions/captions.tsv")?)? {
            let v = out.entry((r.sequence, r.role)).or_default();
            if v.len() <= r.window {
                v.resize(r.window + 1, String::new());
            }
            v[r.window] = r.text;
        }
        Ok(out)
    }

    // ---- language model ----

    pub fn task_options(&self) -> TaskOptions {
        let a = self.config.ablations;
        TaskOptions {
            use_audio: !a.no_audio,
            use_relation: !a.no_relation,
            use_captions: !a.no_captions,
            copies: self.config.tasks.stage1_copies,
        }
    }

    /// Chunks of `chunk_windows` windows of one sequence, as task sources.
    pub fn chunk_sources(&self, tokens: &SequenceTokens, captions: Option<(&[String], &[String])>) -> Vec<(usize, TaskSource)> {
        let tau = self.config.vq_motion.window;
        let cw = self.config.tasks.chunk_windows;
        let n = tokens.leader.len().min(tokens.follower.len()).min(tokens.relation.len());
        let join = |c: &[String], a: usize, b: usize| -> Option<String> {
            let parts: Vec<&str> = c.get(a..b.min(c.len()))?.iter().map(|s| s.as_str()).collect();
            (!parts.is_empty()).then(|| parts.join(" , "))
        };
        (0..n)
            .step_by(cw)
            .map(|a| {
                let b = (a + cw).min(n);
                let audio_end = (b * tau).min(tokens.audio.len());
                let audio_start = (a * tau).min(audio_end);
                let src = TaskSource {
                    audio: tokens.audio[audio_start..audio_end].to_vec(),
                    leader: tokens.leader[a..b].to_vec(),
                    relation: tokens.relation[a..b].to_vec(),
                    follower: tokens.follower[a..b].to_vec(),
                    leader_caption: captions.and_then(|(l, _)| join(l, a, b)),
                    follower_caption: captions.and_then(|(_, f)| join(f, a, b)),
                };
                (a, src)
            })
            .collect()
    }

    pub fn lm_config(&self, vocab: &Vocabulary) -> LmConfig {
        LmConfig {
            vocab_size: vocab.len(),
            text_rows: vocab.text_rows(),
            marker_rows: vocab.marker_rows(),
            ..self.config.lm.clone()
        }
    }

    pub fn train_lm(&self) -> Result<()> {
        let stage = StageName::TrainLm;
        let split = self.split(stage)?;
        let vocab = self.load_vocab(stage)?;
        let tokens = self.load_tokens(stage)?;
        let captions = self.load_captions(stage)?;
        let opts = self.task_options();
        let mut sources = Vec::new();
        for id in &split.train {
            let t = tokens
                .get(id)
                .ok_or_else(|| Error::MissingInput { stage: stage.as_str().into(), path: self.path("tokens/corpus.tsv") })?;
            let l = captions.get(&(id.clone(), "leader".into())).map(|v| v.as_slice()).unwrap_or(&[]);
            let f = captions.get(&(id.clone(), "follower".into())).map(|v| v.as_slice()).unwrap_or(&[]);
            sources.extend(self.chunk_sources(t, Some((l, f))).into_iter().map(|(_, s)| s));
        }
        let cfg = self.lm_config(&vocab);
        let fits = |p: &PromptSequence| p.len() <= cfg.context;
        let mut texts: Vec<&String> = captions.values().flatten().collect();
        texts.sort();
        texts.dedup();
        let stage0: Vec<PromptSequence> = texts
            .iter()
            .flat_map(|t| std::iter::repeat_n(*t, self.config.tasks.stage0_captions))
            .map(|t| text_prompt(&vocab, t))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(fits)
            .collect();
        let all1 = build_stage1_tasks(&vocab, &sources, &opts)?;
        let all2 = build_stage2_tasks(&vocab, &sources, &opts)?;
        let (n1, n2) = (all1.len(), all2.len());
        let stage1: Vec<PromptSequence> = all1.into_iter().filter(fits).collect();
        let stage2: Vec<PromptSequence> = all2.into_iter().filter(fits).collect();
        let mut rng = self.stage_rng(stage);
        let mut lm = TokenLm::new(cfg, DType::F32, &mut rng)?;
        let mut losses = serde_json::Map::new();
        for (s, prompts) in [(Stage::Base, &stage0), (Stage::Align, &stage1), (Stage::Follow, &stage2)] {
            if prompts.is_empty() {
                continue;
            }
            let h = lm.train_stage(s, prompts, &mut rng)?;
            losses.insert(s.label().into(), serde_json::to_value(&h)?);
            log::info!("{}: {} prompts, final loss {:?}", s.label(), prompts.len(), h.last().map(|e| e.loss));
        }
        let dir = self.mkdir("lm")?;
        let meta = serde_json::json!({ "vocab": vocab_hash(&vocab)?, "tasks": opts });
        let hash = lm.save(&dir.join("model.ckpt"), meta)?;
        std::fs::write(dir.join("history.json"), serde_json::to_string_pretty(&losses)?)?;
        self.record(
            stage,
            serde_json::json!({
                "hash": hash,
                "prompts": { "stage0": stage0.len(), "stage1": stage1.len(), "stage2": stage2.len(),
                             "dropped": (n1 - stage1.len()) + (n2 - stage2.len()) },
            }),
        )
    }

    pub fn load_lm(&self, stage: StageName, vocab: &Vocabulary) -> Result<TokenLm> {
        let path = self.require(stage, "lm/model.ckpt")?;
        let ck = crate::checkpoint::Checkpoint::load(&path)?;
        let want = vocab_hash(vocab)?;
        if ck.meta["vocab"].as_str() != Some(want.as_str()) {
            return Err(Error::Incompatible(format!("{} was trained with a different vocabulary", path.display())));
        }
        TokenLm::from_checkpoint(&ck)
    }

    // ---- generation ----

    /// Mean training relation frame (fallback placement without relation tokens).
    pub fn mean_relation(&self, stage: StageName, split: &Split) -> Result<RelationFrame> {
        let mut sx = 0.0;
        let mut sz = 0.0;
        let mut thetas = Vec::new();
        for id in &split.train {
            let d = self.load_duet(stage, id)?;
            for r in &d.relation {
                sx += r.x;
                sz += r.z;
                thetas.push(r.theta);
            }
        }
        let n = thetas.len().max(1) as f64;
        Ok(RelationFrame { x: sx / n, z: sz / n, theta: circular_mean(thetas.into_iter()) })
    }

    pub fn generate(&self) -> Result<()> {
        let stage = StageName::Generate;
        let split = self.split(stage)?;
        let vocab = self.load_vocab(stage)?;
        let lm = self.load_lm(stage, &vocab)?;
        let mvq = self.load_vq(stage, TokenizerKind::Motion)?;
        let rvq = self.load_vq(stage, TokenizerKind::Relation)?;
        let meta = self.token_meta(stage)?;
        for (kind, t) in [("vq_motion", "vq/motion.ckpt"), ("vq_relation", "vq/relation.ckpt")] {
            let h = crate::checkpoint::Checkpoint::load(&self.path(t))?.config_hash();
            if meta[kind].as_str() != Some(h.as_str()) {
                return Err(Error::Incompatible(format!("{t} does not match the tokens it should decode")));
            }
        }
        let tokens = self.load_tokens(stage)?;
        let opts = self.task_options();
        let mean_rel = if opts.use_relation { None } else { Some(self.mean_relation(stage, &split)?) };
        let sampling = match self.config.eval.decoding {
            Decoding::Greedy => SamplingConfig::greedy(),
            Decoding::Sample => lm.config.sampling(),
        };
        let tau = mvq.window();
        let mut rng = self.stage_rng(stage);
        let dir = self.mkdir("gen/raw")?;
        let mut records = Vec::new();
        let mut truncated = 0;
        let mut short = 0;
        for id in &split.test {
            let d = self.load_duet(stage, id)?;
            let t = tokens
                .get(id)
                .ok_or_else(|| Error::MissingInput { stage: stage.as_str().into(), path: self.path("tokens/corpus.tsv") })?;
            let leader_roots = root_poses(&d.leader);
            let mut follower = Vec::new();
            let mut codes_all = Vec::new();
            let mut previous = None;
            for (first, src) in self.chunk_sources(t, None) {
                let ctx = assemble_prompt(
                    &vocab,
                    &DuetTokens {
                        audio: opts.use_audio.then(|| src.audio.clone()),
                        leader: src.leader.clone(),
                        relation: opts.use_relation.then(|| vec![src.relation[0]]),
                        follower: None,
                        caption: None,
                    },
                )?;
                let want = src.leader.len();
                let g = generate(&lm, &vocab, &ctx.ids, sampling, want, &mut rng)?;
                truncated += usize::from(g.truncated);
                let mut codes = g.codes;
                if codes.len() < want {
                    short += 1;
                    let fill = codes.last().copied().unwrap_or(src.leader[0]);
                    codes.resize(want, fill);
                }
                // without relation tokens only the sequence's first window is
                // placed (at the training mean); later windows are concatenated
                let rels: Vec<Option<RelationFrame>> = match mean_rel {
                    Some(m) => (0..want).map(|k| (first + k == 0).then_some(m)).collect(),
                    None => {
                        let w = rvq.decode_relation(&src.relation[..1])?.remove(0);
                        (0..want).map(|k| Some(if k == 0 { w[0] } else { *w.last().unwrap() })).collect()
                    }
                };
                let decoded = mvq.decode_motion_windows(&codes)?;
                let starts: Vec<usize> = (0..want).map(|k| (first + k) * tau).collect();
                let (placed, last) = place_follower(&decoded, &starts, &leader_roots, &rels, previous)?;
                previous = last;
                follower.extend(placed);
                codes_all.extend(codes);
            }
            let n = follower.len();
            let gen = DuetSequence::new(d.fps, d.leader[..n].to_vec(), follower, d.style.clone(), d.beats.clone())?;
            write_duet(&dir.join(format!("{id}.duet")), &gen, &self.skel, true)?;
            records.push(TokenRecord { sequence: id.clone(), role: "follower".into(), tokens: codes_all });
        }
        write_token_corpus(&self.path("gen/tokens.tsv"), &records)?;
        self.record(
            stage,
            serde_json::json!({ "sequences": records.len(), "truncated_chunks": truncated, "short_chunks": short }),
        )
    }

    // ---- diffusion ----

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let fd = crate::motion::feature_dim(self.skel.joint_count());
        DenoiserConfig {
            feature_dim: 2 * fd,
            styles: crate::synth::STYLES.iter().map(|s| s.to_string()).collect(),
            ..self.config.diffusion.clone()
        }
    }

    pub fn train_diffusion(&self) -> Result<()> {
        let stage = StageName::TrainDiffusion;
        let split = self.split(stage)?;
        let cfg = self.denoiser_config();
        let mut rows_all: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut styles = Vec::new();
        for id in &split.train {
            let d = self.load_duet(stage, id)?;
            if d.len() < cfg.frames {
                continue;
            }
            for s in crop_starts(d.len(), cfg.frames) {
                let (rows, _) = crop_features(&d.leader[s..s + cfg.frames], &d.follower[s..s + cfg.frames])?;
                rows_all.push(rows);
                styles.push(cfg.style_index(d.style.as_deref()));
            }
        }
        if rows_all.is_empty() {
            return Err(Error::invalid("no training sequence is long enough for one diffusion crop"));
        }
        let norm = Normalizer::fit(rows_all.iter().flatten().map(|r| r.as_slice()), cfg.feature_dim);
        let crops: Vec<Vec<f32>> = rows_all
            .iter()
            .map(|rows| rows.iter().flat_map(|r| norm.normalize(r)).map(|v| v as f32).collect())
            .collect();
        let mut rng = self.stage_rng(stage);
        let mut model = Denoiser::new(cfg, DType::F32, &mut rng)?;
        model.norm = norm;
        let history = model.train(&crops, &styles, &mut rng)?;
        let dir = self.mkdir("diffusion")?;
        let tail = &history[history.len().saturating_sub(50)..];
        let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
        let hash = model.save(&dir.join("denoiser.ckpt"), serde_json::json!({ "crops": crops.len() }))?;
        self.record(stage, serde_json::json!({ "hash": hash, "crops": crops.len(), "final_loss": final_loss }))
    }

    pub fn refine(&self) -> Result<()> {
        let stage = StageName::Refine;
        let split = self.split(stage)?;
        let model = Denoiser::load(&self.require(stage, "diffusion/denoiser.ckpt")?)?;
        let mut rng = self.stage_rng(stage);
        let dir = self.mkdir("gen/refined")?;
        for id in &split.test {
            let raw = read_duet(&self.require(stage, &format!("gen/raw/{id}.duet"))?, &self.skel)?;
            let style = model.config.style_index(raw.style.as_deref());
            let follower = refine_sequence(&model, &model.norm, &raw.leader, &raw.follower, style, &self.skel, raw.fps, &mut rng)?;
            write_duet(&dir.join(format!("{id}.duet")), &raw.with_follower(follower)?, &self.skel, true)?;
        }
        self.record(stage, serde_json::json!({ "sequences": split.test.len() }))
    }

    // ---- evaluation ----

    fn segments(&self, d: &DuetSequence) -> Vec<DuetSequence> {
        let n = self.config.eval.segment_frames;
        (0..d.len() / n).map(|i| d.slice(i * n, n)).collect()
    }

    fn score(&self, generated: &[DuetSequence], reference: &[DuetSequence]) -> Result<MetricReport> {
        let samples: Vec<EvalSample> = generated
            .iter()
            .map(|d| EvalSample { duet: d, music_beats: d.beats.as_deref().unwrap_or(&[]) })
            .collect();
        let refs: Vec<&DuetSequence> = reference.iter().collect();
        evaluate(&samples, &refs, &self.skel, self.config.seed, &self.config.hash())
    }

    /// Scores ground truth, raw and (if present) refined test followers against
    /// 5-second training segments. `final.json` holds the row of this run's
    /// configuration: refined output, or raw output under `no_refine`.
    pub fn evaluate(&self) -> Result<()> {
        let stage = StageName::Evaluate;
        let split = self.split(stage)?;
        let mut reference = Vec::new();
        for id in &split.train {
            reference.extend(self.segments(&self.load_duet(stage, id)?));
        }
        let dir = self.mkdir("eval")?;
        let mut rows = Vec::new();
        let variants = [("ground_truth", None), ("raw", Some("gen/raw")), ("refined", Some("gen/refined"))];
        for (name, sub) in variants {
            if name == "refined" && (self.config.ablations.no_refine || !self.path("gen/refined").exists()) {
                continue;
            }
            let mut gen = Vec::new();
            for id in &split.test {
                let d = match sub {
                    None => self.load_duet(stage, id)?,
                    Some(s) => read_duet(&self.require(stage, &format!("{s}/{id}.duet"))?, &self.skel)?,
                };
                gen.extend(self.segments(&d));
            }
            let report = self.score(&gen, &reference)?;
            report.save(&dir.join(format!("{name}.json")))?;
            rows.push((name, report));
        }
        let final_name = if self.config.ablations.no_refine { "raw" } else { "refined" };
        let fin = rows
            .iter()
            .find(|(n, _)| *n == final_name)
            .ok_or_else(|| Error::MissingInput { stage: stage.as_str().into(), path: self.path("gen/refined") })?;
        fin.1.save(&dir.join("final.json"))?;
        self.record(stage, serde_json::json!({ "rows": rows.iter().map(|(n, _)| *n).collect::<Vec<_>>() }))
    }

    pub fn final_report(&self) -> Result<MetricReport> {
        MetricReport::load(&self.require(StageName::Report, "eval/final.json")?)
    }

    /// Writes `report.txt` / `report.csv` with the ground-truth, raw and refined rows.
    pub fn report(&self) -> Result<(String, String)> {
        let stage = StageName::Report;
        let mut rows = Vec::new();
        for name in ["ground_truth", "raw", "refined"] {
            let p = self.path(&format!("eval/{name}.json"));
            if p.exists() {
                rows.push((name.replace('_', " "), MetricReport::load(&p)?));
            }
        }
        if rows.is_empty() {
            return Err(Error::MissingInput { stage: stage.as_str().into(), path: self.path("eval") });
        }
        let refs: Vec<(&str, &MetricReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
        let table = MetricReport::table(&refs);
        let csv = MetricReport::csv(&refs);
        std::fs::write(self.path("report.txt"), &table)?;
        std::fs::write(self.path("report.csv"), &csv)?;
        Ok((table, csv))
    }

    /// Runs one stage. Its previous outputs are removed first, so files
    /// hard-linked from another run are replaced rather than written through.
    pub fn run_stage(&self, stage: StageName) -> Result<()> {
        log::info!("stage {}", stage.as_str());
        for rel in stage.outputs() {
            let p = self.path(rel);
            if p.is_dir() {
                std::fs::remove_dir_all(&p)?;
            } else if p.exists() {
                std::fs::remove_file(&p)?;
            }
        }
        match stage {
            StageName::GenData => self.gen_data(),
            StageName::TrainVq => self.train_vq(),
            StageName::Tokenize => self.tokenize(),
            StageName::Describe => self.describe(),
            StageName::TrainLm => self.train_lm(),
            StageName::Generate => self.generate(),
            StageName::TrainDiffusion => self.train_diffusion(),
            StageName::Refine => self.refine(),
            StageName::Evaluate => self.evaluate(),
            StageName::Report => self.report().map(|_| ()),
        }
    }

    /// Runs every stage in order. Stages listed in `skip` are assumed done
    /// (e.g. adopted from another run); refinement stages are skipped under
    /// `no_refine`.
    pub fn run_all(&self, skip: &[StageName]) -> Result<MetricReport> {
        self.init()?;
        for s in StageName::ALL {
            if skip.contains(&s) {
                continue;
            }
            if self.config.ablations.no_refine && matches!(s, StageName::TrainDiffusion | StageName::Refine) {
                continue;
            }
            self.run_stage(s)?;
        }
        self.final_report()
    }
}

/// Rows from several runs' `final.json`, labelled by their ablation switches.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<(String, String)> {
    let mut rows = Vec::new();
    for d in dirs {
        let p = Pipeline::open(d.clone())?;
        let label = format!("{} (seed {})", p.config.ablations.label(), p.config.seed);
        rows.push((label, p.final_report()?));
    }
    let refs: Vec<(&str, &MetricReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    Ok((MetricReport::table(&refs), MetricReport::csv(&refs)))
}

fn vocab_hash(v: &Vocabulary) -> Result<String> {
    Ok(hash_json(&serde_json::to_value(v.manifest())?))
}

fn link_tree(src: &Path, dst: &Path) -> Result<()> {
    if src.is_dir() {
        std::fs::create_dir_all(dst)?;
        let mut entries: Vec<_> = std::fs::read_dir(src)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            link_tree(&e.path(), &dst.join(e.file_name()))?;
        }
        return Ok(());
    }
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent)?;
    }
    if dst.exists() {
        std::fs::remove_file(dst)?;
    }
    if std::fs::hard_link(src, dst).is_err() {
        std::fs::copy(src, dst)?;
    }
    Ok(())
}

/// Per-joint position RMSE (metres) of windows passed through the tokenizer.
fn position_rmse(vq: &VqTokenizer, windows: &[Vec<f64>], joints: usize) -> Result<f64> {
    let idx = vq.tokenize_windows(windows)?;
    let recon = vq.decode_indices(&idx)?;
    let d = vq.config().input_dim;
    let mut sum = 0.0;
    let mut n: f64 = 0.0;
    for (a, b) in recon.iter().zip(windows) {
        for (fa, fb) in a.chunks_exact(d).zip(b.chunks_exact(d)) {
            for j in 0..joints {
                let e: f64 = (0..3).map(|c| (fa[3 * j + c] - fb[3 * j + c]).powi(2)).sum();
                sum += e;
                n += 1.0;
            }
        }
    }
    Ok((sum / n.max(1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_takes_the_short_way_round() {
        let a = RootPose { x: 0.0, z: 0.0, yaw: 3.0 };
        let b = RootPose { x: 2.0, z: 4.0, yaw: -3.0 };
        let m = blend_poses(a, b);
        assert_eq!((m.x, m.z), (1.0, 2.0));
        assert!((wrap_angle(m.yaw) - std::f64::consts::PI).abs() < 0.3 || (wrap_angle(m.yaw) + std::f64::consts::PI).abs() < 0.3);
    }

    #[test]
    fn stage_rngs_differ_by_stage_and_seed() {
        use rand::Rng;
        let p = Pipeline::new(PipelineConfig::smoke(), "/nonexistent").unwrap();
        let a: u64 = p.stage_rng(StageName::TrainVq).random();
        let b: u64 = p.stage_rng(StageName::TrainLm).random();
        assert_ne!(a, b);
        let mut c = PipelineConfig::smoke();
        c.seed = 1;
        let q = Pipeline::new(c, "/nonexistent").unwrap();
        assert_ne!(a, q.stage_rng(StageName::TrainVq).random::<u64>());
        assert_eq!(a, p.stage_rng(StageName::TrainVq).random::<u64>());
    }

    #[test]
    fn missing_inputs_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::smoke(), dir.path()).unwrap();
        p.init().unwrap();
        match p.train_vq() {
            Err(Error::MissingInput { stage, .. }) => assert_eq!(stage, "train-vq"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(p.report(), Err(Error::MissingInput { .. })));
    }
}
