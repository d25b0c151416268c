//! Prompt assembly, parsing and loss masks.
//!
//! A prompt is `<SYS>` followed by instruction words, then modality spans
//! (`<Audio>..</Audio>`, `<Leader>..</Leader>`, `<Relation>..</Relation>`,
//! `<Follower>..</Follower>`), optionally followed by output words ended by
//! `<EOS>`. The loss mask marks exactly one contiguous target region that ends
//! on a closing marker (or on `<EOS>` for text targets).

use crate::error::{Error, Result};
use crate::vocab::{Special, Token, TokenId, Vocabulary};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpanKind {
    Audio,
    Leader,
    Relation,
    Follower,
}

impl SpanKind {
    pub fn open(self) -> Special {
        match self {
            SpanKind::Audio => Special::AudioOpen,
            SpanKind::Leader => Special::LeaderOpen,
            SpanKind::Relation => Special::RelationOpen,
            SpanKind::Follower => Special::FollowerOpen,
        }
    }

    pub fn close(self) -> Special {
        match self {
            SpanKind::Audio => Special::AudioClose,
            SpanKind::Leader => Special::LeaderClose,
            SpanKind::Relation => Special::RelationClose,
            SpanKind::Follower => Special::FollowerClose,
        }
    }

    fn from_open(s: Special) -> Option<Self> {
        [SpanKind::Audio, SpanKind::Leader, SpanKind::Relation, SpanKind::Follower]
            .into_iter()
            .find(|k| k.open() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpanKind::Audio => "Audio",
            SpanKind::Leader => "Leader",
            SpanKind::Relation => "Relation",
            SpanKind::Follower => "Follower",
        }
    }

    fn token_id(self, vocab: &Vocabulary, code: usize) -> Result<TokenId> {
        match self {
            SpanKind::Audio => vocab.audio_id(code),
            SpanKind::Leader | SpanKind::Follower => vocab.motion_id(code),
            SpanKind::Relation => vocab.relation_id(code),
        }
    }

    fn code_of(self, tok: Token) -> Option<usize> {
        match (self, tok) {
            (SpanKind::Audio, Token::Audio(k)) => Some(k),
            (SpanKind::Leader | SpanKind::Follower, Token::Motion(k)) => Some(k),
            (SpanKind::Relation, Token::Relation(k)) => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub fn span(self) -> SpanKind {
        match self {
            Role::Leader => SpanKind::Leader,
            Role::Follower => SpanKind::Follower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    LeaderToFollower,
    FollowerToLeader,
    RoleGeneration(Role),
    Completion(Role),
    RelationPrediction,
    CaptionToMotion(Role),
    MotionToCaption(Role),
    /// Words only; used to pretrain the base model.
    Text,
}

impl Task {
    pub fn template_key(self) -> &'static str {
        match self {
            Task::LeaderToFollower => "leader_to_follower",
            Task::FollowerToLeader => "follower_to_leader",
            Task::RoleGeneration(Role::Leader) => "role_leader",
            Task::RoleGeneration(Role::Follower) => "role_follower",
            Task::Completion(_) => "completion",
            Task::RelationPrediction => "relation",
            Task::CaptionToMotion(_) => "caption_to_motion",
            Task::MotionToCaption(_) => "motion_to_caption",
            Task::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub kind: SpanKind,
    /// Codebook indices, not token ids.
    pub codes: Vec<usize>,
}

/// The structured content of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptFields {
    /// Words between `<SYS>` and the first span.
    pub preamble: Vec<String>,
    pub spans: Vec<Span>,
    /// A final opened span with no content yet (inference context).
    pub open: Option<SpanKind>,
    /// Words after the last span, terminated by `<EOS>`.
    pub output_text: Option<Vec<String>>,
}

impl PromptFields {
    pub fn span(&self, kind: SpanKind) -> Option<&Span> {
        self.spans.iter().find(|s| s.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    None,
    /// Every code of span `i` plus its closing marker.
    Span(usize),
    /// Codes of span `span` from index `from` on, plus its closing marker.
    SpanSuffix { span: usize, from: usize },
    /// The output words plus `<EOS>`.
    OutputText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSequence {
    pub ids: Vec<TokenId>,
    /// 1 = supervised target position.
    pub mask: Vec<u8>,
    pub task: Task,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.mask.iter().map(|&m| m as usize).sum()
    }
}

/// Serializes fields to ids and builds the mask for `target`.
pub fn encode_fields(vocab: &Vocabulary, fields: &PromptFields, target: Target) -> Result<(Vec<TokenId>, Vec<u8>)> {
    let mut ids = vec![Special::Sys.id()];
    let mut mask = vec![0u8];
    for w in &fields.preamble {
        ids.push(vocab.word_id(w)?);
        mask.push(0);
    }
    for (i, span) in fields.spans.iter().enumerate() {
        ids.push(span.kind.open().id());
        mask.push(0);
        let from = match target {
            Target::Span(t) if t == i => Some(0),
            Target::SpanSuffix { span: t, from } if t == i => Some(from.min(span.codes.len())),
            _ => None,
        };
        for (j, &c) in span.codes.iter().enumerate() {
            ids.push(span.kind.token_id(vocab, c)?);
            mask.push(u8::from(from.is_some_and(|f| j >= f)));
        }
        ids.push(span.kind.close().id());
        mask.push(u8::from(from.is_some()));
    }
    match target {
        Target::Span(t) | Target::SpanSuffix { span: t, .. } if t >= fields.spans.len() => {
            return Err(Error::invalid(format!("target span {t} does not exist")));
        }
        Target::OutputText if fields.output_text.is_none() => {
            return Err(Error::invalid("text target without output text"));
        }
        _ => {}
    }
    if let Some(kind) = fields.open {
        if fields.output_text.is_some() {
            return Err(Error::invalid("an open span cannot precede output text"));
        }
        ids.push(kind.open().id());
        mask.push(0);
    }
    if let Some(words) = &fields.output_text {
        let on = u8::from(target == Target::OutputText);
        for w in words {
            ids.push(vocab.word_id(w)?);
            mask.push(on);
        }
        ids.push(Special::Eos.id());
        mask.push(on);
    }
    Ok((ids, mask))
}

/// Recovers the structured fields from token ids.
pub fn parse_prompt(vocab: &Vocabulary, ids: &[TokenId]) -> Result<PromptFields> {
    let toks: Vec<Token> = ids.iter().map(|&id| vocab.decode(id)).collect::<Result<_>>()?;
    if toks.first() != Some(&Token::Special(Special::Sys)) {
        return Err(Error::MalformedPrompt("prompt must start with <SYS>".into()));
    }
    let word = |k: usize| vocab.word(k).unwrap_or_default().to_string();
    let mut fields = PromptFields::default();
    let mut i = 1;
    while let Some(Token::Word(k)) = toks.get(i) {
        fields.preamble.push(word(*k));
        i += 1;
    }
    if toks.get(i) == Some(&Token::Special(Special::Eos)) && i + 1 == toks.len() {
        fields.output_text = Some(std::mem::take(&mut fields.preamble));
        return Ok(fields);
    }
    while i < toks.len() {
        match toks[i] {
            Token::Special(s) => {
                let kind = SpanKind::from_open(s).ok_or_else(|| {
                    Error::MalformedPrompt(format!("unexpected {} at position {i}", s.as_str()))
                })?;
                i += 1;
                if i == toks.len() {
                    fields.open = Some(kind);
                    break;
                }
                let mut codes = Vec::new();
                loop {
                    match toks.get(i) {
                        None => return Err(Error::UnbalancedMarker { span: kind.name().into() }),
                        Some(Token::Special(c)) if *c == kind.close() => break,
                        Some(Token::Special(_)) => {
                            return Err(Error::UnbalancedMarker { span: kind.name().into() })
                        }
                        Some(&t) => {
                            let code = kind.code_of(t).ok_or_else(|| {
                                Error::MalformedPrompt(format!(
                                    "token at position {i} does not belong in a {} span",
                                    kind.name()
                                ))
                            })?;
                            codes.push(code);
                        }
                    }
                    i += 1;
                }
                fields.spans.push(Span { kind, codes });
                i += 1;
            }
            Token::Word(_) => {
                let mut words = Vec::new();
                while let Some(Token::Word(k)) = toks.get(i) {
                    words.push(word(*k));
                    i += 1;
                }
                if toks.get(i) != Some(&Token::Special(Special::Eos)) || i + 1 != toks.len() {
                    return Err(Error::UnbalancedMarker { span: "output text".into() });
                }
                fields.output_text = Some(words);
                i += 1;
            }
            _ => {
                return Err(Error::MalformedPrompt(format!("stray code token at position {i}")));
            }
        }
    }
    Ok(fields)
}

/// Token tracks for one duet chunk, as codebook indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DuetTokens {
    pub audio: Option<Vec<usize>>,
    pub leader: Vec<usize>,
    pub relation: Option<Vec<usize>>,
    /// `None` builds an inference context ending with `<Follower>`.
    pub follower: Option<Vec<usize>>,
    /// Free text placed after the instruction (caption or metadata).
    pub caption: Option<String>,
}

impl DuetTokens {
    /// Inverse of the leader-to-follower layout.
    pub fn from_fields(vocab: &Vocabulary, fields: &PromptFields) -> Result<Self> {
        let template = crate::vocab::split_words(vocab.template(Task::LeaderToFollower.template_key())?);
        if !fields.preamble.starts_with(&template) {
            return Err(Error::MalformedPrompt("not a leader-to-follower prompt".into()));
        }
        let rest = &fields.preamble[template.len()..];
        let leader = fields
            .span(SpanKind::Leader)
            .ok_or_else(|| Error::MalformedPrompt("missing leader span".into()))?;
        let follower = match (fields.span(SpanKind::Follower), fields.open) {
            (Some(f), None) => Some(f.codes.clone()),
            (None, Some(SpanKind::Follower)) => None,
            _ => return Err(Error::MalformedPrompt("missing follower span".into())),
        };
        Ok(Self {
            audio: fields.span(SpanKind::Audio).map(|s| s.codes.clone()),
            leader: leader.codes.clone(),
            relation: fields.span(SpanKind::Relation).map(|s| s.codes.clone()),
            follower,
            caption: (!rest.is_empty()).then(|| rest.join(" ")),
        })
    }
}

fn preamble(vocab: &Vocabulary, task: Task, extra: Option<&str>) -> Result<Vec<String>> {
    let mut words = crate::vocab::split_words(vocab.template(task.template_key())?);
    if let Some(text) = extra {
        words.extend(crate::vocab::split_words(text));
    }
    Ok(words)
}

/// Leader-to-follower layout. With `follower = None` the result is an
/// inference context whose mask is all zeros.
pub fn assemble_prompt(vocab: &Vocabulary, t: &DuetTokens) -> Result<PromptSequence> {
    let task = Task::LeaderToFollower;
    let mut fields = PromptFields { preamble: preamble(vocab, task, t.caption.as_deref())?, ..Default::default() };
    if let Some(a) = &t.audio {
        fields.spans.push(Span { kind: SpanKind::Audio, codes: a.clone() });
    }
    fields.spans.push(Span { kind: SpanKind::Leader, codes: t.leader.clone() });
    if let Some(r) = &t.relation {
        fields.spans.push(Span { kind: SpanKind::Relation, codes: r.clone() });
    }
    let target = match &t.follower {
        Some(f) => {
            fields.spans.push(Span { kind: SpanKind::Follower, codes: f.clone() });
            Target::Span(fields.spans.len() - 1)
        }
        None => {
            fields.open = Some(SpanKind::Follower);
            Target::None
        }
    };
    let (ids, mask) = encode_fields(vocab, &fields, target)?;
    Ok(PromptSequence { ids, mask, task })
}

/// `<SYS> words <EOS>` with every word and `<EOS>` supervised.
pub fn text_prompt(vocab: &Vocabulary, text: &str) -> Result<PromptSequence> {
    let fields = PromptFields { output_text: Some(crate::vocab::split_words(text)), ..Default::default() };
    let (ids, mask) = encode_fields(vocab, &fields, Target::OutputText)?;
    Ok(PromptSequence { ids, mask, task: Task::Text })
}

/// One chunk of a tokenized duet, with captions, used to derive training tasks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskSource {
    pub audio: Vec<usize>,
    pub leader: Vec<usize>,
    pub relation: Vec<usize>,
    pub follower: Vec<usize>,
    pub leader_caption: Option<String>,
    pub follower_caption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOptions {
    pub use_audio: bool,
    pub use_relation: bool,
    pub use_captions: bool,
    /// Tasks emitted per source chunk.
    pub copies: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self { use_audio: true, use_relation: true, use_captions: true, copies: 1 }
    }
}

/// Task families in their fixed cycling order; each family lists its variants.
pub fn task_families(opts: &TaskOptions) -> Vec<Vec<Task>> {
    let mut fams = vec![
        vec![Task::RoleGeneration(Role::Leader), Task::RoleGeneration(Role::Follower)],
        vec![Task::Completion(Role::Leader), Task::Completion(Role::Follower)],
    ];
    let mut cross = vec![Task::LeaderToFollower, Task::FollowerToLeader];
    if opts.use_relation {
        cross.push(Task::RelationPrediction);
    }
    fams.push(cross);
    if opts.use_captions {
        fams.push(vec![
            Task::CaptionToMotion(Role::Leader),
            Task::MotionToCaption(Role::Leader),
            Task::CaptionToMotion(Role::Follower),
            Task::MotionToCaption(Role::Follower),
        ]);
    }
    fams
}

fn role_codes(src: &TaskSource, role: Role) -> &Vec<usize> {
    match role {
        Role::Leader => &src.leader,
        Role::Follower => &src.follower,
    }
}

/// Builds one training prompt of `task` from a source chunk. Returns `None`
/// when the chunk lacks what the task needs (e.g. a caption).
pub fn build_task(vocab: &Vocabulary, src: &TaskSource, task: Task, opts: &TaskOptions) -> Result<Option<PromptSequence>> {
    let audio = opts.use_audio.then(|| Span { kind: SpanKind::Audio, codes: src.audio.clone() });
    let relation = opts.use_relation.then(|| Span { kind: SpanKind::Relation, codes: src.relation.clone() });
    let role_span = |r: Role| Span { kind: r.span(), codes: role_codes(src, r).clone() };
    let mut fields = PromptFields { preamble: preamble(vocab, task, None)?, ..Default::default() };
    let target = match task {
        Task::LeaderToFollower => {
            return assemble_prompt(
                vocab,
                &DuetTokens {
                    audio: opts.use_audio.then(|| src.audio.clone()),
                    leader: src.leader.clone(),
                    relation: opts.use_relation.then(|| src.relation.clone()),
                    follower: Some(src.follower.clone()),
                    caption: None,
                },
            )
            .map(Some);
        }
        Task::FollowerToLeader => {
            fields.spans.extend(audio);
            fields.spans.push(role_span(Role::Follower));
            fields.spans.extend(relation);
            fields.spans.push(role_span(Role::Leader));
            Target::Span(fields.spans.len() - 1)
        }
        Task::RoleGeneration(r) => {
            fields.spans.extend(audio);
            fields.spans.push(role_span(r));
            Target::Span(fields.spans.len() - 1)
        }
        Task::Completion(r) => {
            let codes = role_codes(src, r);
            if codes.len() < 2 {
                return Ok(None);
            }
            fields.spans.extend(audio);
            fields.spans.push(role_span(r));
            Target::SpanSuffix { span: fields.spans.len() - 1, from: codes.len() / 2 }
        }
        Task::RelationPrediction => {
            fields.spans.push(role_span(Role::Leader));
            fields.spans.push(role_span(Role::Follower));
            fields.spans.push(Span { kind: SpanKind::Relation, codes: src.relation.clone() });
            Target::Span(2)
        }
        Task::Text => return Ok(None),
        Task::CaptionToMotion(r) | Task::MotionToCaption(r) => {
            let caption = match r {
                Role::Leader => &src.leader_caption,
                Role::Follower => &src.follower_caption,
            };
            let Some(caption) = caption else { return Ok(None) };
            let words = crate::vocab::split_words(caption);
            fields.spans.push(role_span(r));
            if matches!(task, Task::CaptionToMotion(_)) {
                fields.preamble.extend(words);
                Target::Span(0)
            } else {
                fields.output_text = Some(words);
                Target::OutputText
            }
        }
    };
    let (ids, mask) = encode_fields(vocab, &fields, target)?;
    Ok(Some(PromptSequence { ids, mask, task }))
}

/// The Stage-I mixture: source `i` (copy `c`) gets family `(i*copies + c) mod F`,
/// cycling through that family's variants, so families appear equally often.
pub fn build_stage1_tasks(vocab: &Vocabulary, corpus: &[TaskSource], opts: &TaskOptions) -> Result<Vec<PromptSequence>> {
    let fams = task_families(opts);
    let copies = opts.copies.max(1);
    let mut out = Vec::new();
    for (i, src) in corpus.iter().enumerate() {
        for c in 0..copies {
            let j = i * copies + c;
            let fam = &fams[j % fams.len()];
            let task = fam[(j / fams.len()) % fam.len()];
            if let Some(p) = build_task(vocab, src, task, opts)? {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Stage-II examples: leader-to-follower only, conditioned on the chunk's
/// initial relation token, matching what is available at inference.
pub fn build_stage2_tasks(vocab: &Vocabulary, corpus: &[TaskSource], opts: &TaskOptions) -> Result<Vec<PromptSequence>> {
    corpus
        .iter()
        .map(|src| {
            assemble_prompt(
                vocab,
                &DuetTokens {
                    audio: opts.use_audio.then(|| src.audio.clone()),
                    leader: src.leader.clone(),
                    relation: if opts.use_relation { src.relation.first().map(|&r| vec![r]) } else { None },
                    follower: Some(src.follower.clone()),
                    caption: None,
                },
            )
        })
        .collect()
}

/// Checks the mask invariant: one contiguous run of ones ending on a closing
/// marker or `<EOS>` (or no ones at all).
pub fn mask_is_well_formed(p: &PromptSequence) -> bool {
    if p.mask.len() != p.ids.len() {
        return false;
    }
    let ones: Vec<usize> = p.mask.iter().enumerate().filter(|(_, &m)| m == 1).map(|(i, _)| i).collect();
    let Some((&first, &last)) = ones.first().zip(ones.last()) else { return true };
    if last - first + 1 != ones.len() {
        return false;
    }
    let closers = [
        Special::AudioClose,
        Special::LeaderClose,
        Special::RelationClose,
        Special::FollowerClose,
        Special::Eos,
    ];
    closers.iter().any(|c| c.id() == p.ids[last])
}
