//! The extended vocabulary: special markers, a closed word list, and one
//! token per motion, relation and audio code.
//!
//! Ids are laid out as `[specials | words | motion | relation | audio]`, each
//! class contiguous, so classification is a range lookup.

use crate::describer::{default_rules, phrase_set};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Special {
    Sys,
    AudioOpen,
    AudioClose,
    LeaderOpen,
    LeaderClose,
    RelationOpen,
    RelationClose,
    FollowerOpen,
    FollowerClose,
    Eos,
}

impl Special {
    pub const ALL: [Special; 10] = [
        Special::Sys,
        Special::AudioOpen,
        Special::AudioClose,
        Special::LeaderOpen,
        Special::LeaderClose,
        Special::RelationOpen,
        Special::RelationClose,
        Special::FollowerOpen,
        Special::FollowerClose,
        Special::Eos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Special::Sys => "<SYS>",
            Special::AudioOpen => "<Audio>",
            Special::AudioClose => "</Audio>",
            Special::LeaderOpen => "<Leader>",
            Special::LeaderClose => "</Leader>",
            Special::RelationOpen => "<Relation>",
            Special::RelationClose => "</Relation>",
            Special::FollowerOpen => "<Follower>",
            Special::FollowerClose => "</Follower>",
            Special::Eos => "<EOS>",
        }
    }

    pub fn id(self) -> TokenId {
        Special::ALL.iter().position(|&s| s == self).unwrap() as TokenId
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    Special,
    Text,
    Motion,
    Relation,
    Audio,
}

/// A decoded token id: its class and index within that class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Special(Special),
    Word(usize),
    Motion(usize),
    Relation(usize),
    Audio(usize),
}

pub const TEMPLATE_VERSION: &str = "v1";

/// Instruction text placed after `<SYS>` for each task.
pub fn default_templates() -> BTreeMap<String, String> {
    [
        ("leader_to_follower", "generate the follower dance for the leader and the music ."),
        ("follower_to_leader", "generate the leader dance for the follower and the music ."),
        ("role_leader", "dance as the leader to the music ."),
        ("role_follower", "dance as the follower to the music ."),
        ("completion", "continue the dance motion ."),
        ("relation", "predict the spatial relation between the partners ."),
        ("caption_to_motion", "perform the described motion :"),
        ("motion_to_caption", "describe the motion :"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Extra metadata words (style labels and their prefix).
pub fn default_metadata_words() -> Vec<String> {
    ["style", "on1", "on2", "cuban", "unknown"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Splits text into words, separating `,` `.` and `:` into their own tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            if matches!(ch, ',' | '.' | ':') {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.push(ch.to_ascii_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRange {
    pub start: TokenId,
    pub len: usize,
}

impl ClassRange {
    pub fn contains(&self, id: TokenId) -> bool {
        id >= self.start && ((id - self.start) as usize) < self.len
    }
}

/// On-disk description of a vocabulary; two runs share checkpoints only if
/// their manifests are identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabManifest {
    pub template_version: String,
    pub specials: Vec<String>,
    pub words: Vec<String>,
    pub templates: BTreeMap<String, String>,
    pub ranges: BTreeMap<String, ClassRange>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    templates: BTreeMap<String, String>,
    motion_codes: usize,
    relation_codes: usize,
    audio_codes: usize,
}

impl Vocabulary {
    /// Builds the word list from the caption phrases, the task templates and
    /// the metadata words, sorted for a stable order.
    pub fn new(motion_codes: usize, relation_codes: usize, audio_codes: usize) -> Result<Self> {
        let templates = default_templates();
        let mut words: Vec<String> = Vec::new();
        let sources = phrase_set(&default_rules())
            .into_iter()
            .chain(templates.values().cloned())
            .chain(default_metadata_words())
            .chain([",".to_string()]);
        for text in sources {
            words.extend(split_words(&text));
        }
        words.sort();
        words.dedup();
        Self::from_parts(words, templates, motion_codes, relation_codes, audio_codes)
    }

    fn from_parts(
        words: Vec<String>,
        templates: BTreeMap<String, String>,
        motion_codes: usize,
        relation_codes: usize,
        audio_codes: usize,
    ) -> Result<Self> {
        if motion_codes == 0 || relation_codes == 0 || audio_codes == 0 {
            return Err(Error::invalid("every code class needs at least one code"));
        }
        let word_ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let v = Self { words, word_ids, templates, motion_codes, relation_codes, audio_codes };
        for t in v.templates.values() {
            v.encode_text(t)?;
        }
        Ok(v)
    }

    pub fn special_count(&self) -> usize {
        Special::ALL.len()
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn motion_codes(&self) -> usize {
        self.motion_codes
    }

    pub fn relation_codes(&self) -> usize {
        self.relation_codes
    }

    pub fn audio_codes(&self) -> usize {
        self.audio_codes
    }

    pub fn len(&self) -> usize {
        self.special_count() + self.word_count() + self.motion_codes + self.relation_codes + self.audio_codes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self, class: TokenClass) -> ClassRange {
        let s = self.special_count();
        let w = self.word_count();
        let (start, len) = match class {
            TokenClass::Special => (0, s),
            TokenClass::Text => (s, w),
            TokenClass::Motion => (s + w, self.motion_codes),
            TokenClass::Relation => (s + w + self.motion_codes, self.relation_codes),
            TokenClass::Audio => (s + w + self.motion_codes + self.relation_codes, self.audio_codes),
        };
        ClassRange { start: start as TokenId, len }
    }

    /// Number of ids belonging to specials and words, which sit below every code id.
    pub fn text_rows(&self) -> usize {
        self.special_count() + self.word_count()
    }

    /// Ids of the role and modality markers (`<Audio>` through `</Follower>`),
    /// which are new tokens rather than base text.
    pub fn marker_rows(&self) -> std::ops::Range<usize> {
        Special::AudioOpen.id() as usize..Special::FollowerClose.id() as usize + 1
    }

    fn class_id(&self, class: TokenClass, index: usize, what: &'static str) -> Result<TokenId> {
        let r = self.range(class);
        if index >= r.len {
            return Err(Error::IndexOutOfRange { what, index, size: r.len });
        }
        Ok(r.start + index as TokenId)
    }

    pub fn motion_id(&self, index: usize) -> Result<TokenId> {
        self.class_id(TokenClass::Motion, index, "motion code")
    }

    pub fn relation_id(&self, index: usize) -> Result<TokenId> {
        self.class_id(TokenClass::Relation, index, "relation code")
    }

    pub fn audio_id(&self, index: usize) -> Result<TokenId> {
        self.class_id(TokenClass::Audio, index, "audio code")
    }

    pub fn word_id(&self, word: &str) -> Result<TokenId> {
        let i = self
            .word_ids
            .get(word)
            .ok_or_else(|| Error::invalid(format!("word {word:?} is not in the vocabulary")))?;
        Ok((self.special_count() + i) as TokenId)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(|s| s.as_str())
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        split_words(text).iter().map(|w| self.word_id(w)).collect()
    }

    /// Encodes text, dropping words outside the closed list.
    pub fn encode_text_lossy(&self, text: &str) -> Vec<TokenId> {
        split_words(text).iter().filter_map(|w| self.word_id(w).ok()).collect()
    }

    pub fn template(&self, task: &str) -> Result<&str> {
        self.templates
            .get(task)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::invalid(format!("no template for task {task:?}")))
    }

    pub fn templates(&self) -> &BTreeMap<String, String> {
        &self.templates
    }

    pub fn decode(&self, id: TokenId) -> Result<Token> {
        let i = id as usize;
        let s = self.special_count();
        let w = self.word_count();
        let m = self.motion_codes;
        let r = self.relation_codes;
        if i < s {
            Ok(Token::Special(Special::ALL[i]))
        } else if i < s + w {
            Ok(Token::Word(i - s))
        } else if i < s + w + m {
            Ok(Token::Motion(i - s - w))
        } else if i < s + w + m + r {
            Ok(Token::Relation(i - s - w - m))
        } else if i < self.len() {
            Ok(Token::Audio(i - s - w - m - r))
        } else {
            Err(Error::IndexOutOfRange { what: "token id", index: i, size: self.len() })
        }
    }

    pub fn class_of(&self, id: TokenId) -> Result<TokenClass> {
        Ok(match self.decode(id)? {
            Token::Special(_) => TokenClass::Special,
            Token::Word(_) => TokenClass::Text,
            Token::Motion(_) => TokenClass::Motion,
            Token::Relation(_) => TokenClass::Relation,
            Token::Audio(_) => TokenClass::Audio,
        })
    }

    /// Human-readable rendering, for debugging and prompt dumps.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| match self.decode(id) {
                Ok(Token::Special(s)) => s.as_str().to_string(),
                Ok(Token::Word(w)) => self.words[w].clone(),
                Ok(Token::Motion(k)) => format!("<M_{k}>"),
                Ok(Token::Relation(k)) => format!("<R_{k}>"),
                Ok(Token::Audio(k)) => format!("<A_{k}>"),
                Err(_) => format!("<?{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn manifest(&self) -> VocabManifest {
        let mut ranges = BTreeMap::new();
        for (name, class) in [
            ("special", TokenClass::Special),
            ("text", TokenClass::Text),
            ("motion", TokenClass::Motion),
            ("relation", TokenClass::Relation),
            ("audio", TokenClass::Audio),
        ] {
            ranges.insert(name.to_string(), self.range(class));
        }
        VocabManifest {
            template_version: TEMPLATE_VERSION.to_string(),
            specials: Special::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            words: self.words.clone(),
            templates: self.templates.clone(),
            ranges,
        }
    }

    pub fn from_manifest(m: &VocabManifest) -> Result<Self> {
        let expected: Vec<String> = Special::ALL.iter().map(|s| s.as_str().to_string()).collect();
        if m.specials != expected {
            return Err(Error::Incompatible("special tokens differ from this build".into()));
        }
        let size = |k: &str| -> Result<usize> {
            m.ranges
                .get(k)
                .map(|r| r.len)
                .ok_or_else(|| Error::Format(format!("manifest lacks the {k} range")))
        };
        let v = Self::from_parts(
            m.words.clone(),
            m.templates.clone(),
            size("motion")?,
            size("relation")?,
            size("audio")?,
        )?;
        if v.manifest() != *m {
            return Err(Error::Incompatible("vocabulary manifest is inconsistent".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: VocabManifest = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_manifest(&m)
    }
}
