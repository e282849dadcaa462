//! Dialogue data model and the line-delimited corpus format.
//!
//! Each line of a corpus file is one JSON object describing a dialogue. An
//! optional first line of the form `{"dialeval_format":1,"metadata":{...}}`
//! carries corpus-level key/value metadata. Every line carries the format key.
//!
//! Loading validates every invariant of the data model and rejects the whole
//! file on the first violation; saving writes the canonical form (fixed key
//! order, compact separators) so that `save(load(save(c)))` is byte-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const FORMAT_VERSION: u64 = 1;
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    // Declared first so that ties in start time order the system first.
    System,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Conjunction,
    Particle,
    Auxiliary,
    Interjection,
    Pronoun,
    Symbol,
    Other,
}

impl Pos {
    pub const ALL: [Pos; 11] = [
        Pos::Noun,
        Pos::Verb,
        Pos::Adjective,
        Pos::Adverb,
        Pos::Conjunction,
        Pos::Particle,
        Pos::Auxiliary,
        Pos::Interjection,
        Pos::Pronoun,
        Pos::Symbol,
        Pos::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adjective => "adjective",
            Pos::Adverb => "adverb",
            Pos::Conjunction => "conjunction",
            Pos::Particle => "particle",
            Pos::Auxiliary => "auxiliary",
            Pos::Interjection => "interjection",
            Pos::Pronoun => "pronoun",
            Pos::Symbol => "symbol",
            Pos::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Pos> {
        Pos::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// Nouns, verbs, adjectives, adverbs and conjunctions.
    pub fn is_content(self) -> bool {
        matches!(
            self,
            Pos::Noun | Pos::Verb | Pos::Adjective | Pos::Adverb | Pos::Conjunction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTag {
    Filler,
    Disfluency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentTag {
    Backchannel,
    Laugh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    AttentiveListening,
    JobInterview,
    FirstMeeting,
    Other,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::AttentiveListening => "attentive_listening",
            Task::JobInterview => "job_interview",
            Task::FirstMeeting => "first_meeting",
            Task::Other => "other",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Autonomous,
    Woz,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Token {
    pub surface: String,
    pub pos: Pos,
    pub tags: BTreeSet<TokenTag>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: Pos) -> Self {
        Token {
            surface: surface.into(),
            pos,
            tags: BTreeSet::new(),
        }
    }

    pub fn tagged(mut self, tag: TokenTag) -> Self {
        self.tags.insert(tag);
        self
    }

    pub fn is_filler(&self) -> bool {
        self.tags.contains(&TokenTag::Filler)
    }

    pub fn is_disfluency(&self) -> bool {
        self.tags.contains(&TokenTag::Disfluency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceSegment {
    pub speaker: Speaker,
    pub start_ms: i64,
    pub end_ms: i64,
    pub tokens: Vec<Token>,
    pub tags: BTreeSet<SegmentTag>,
}

impl UtteranceSegment {
    pub fn new(speaker: Speaker, start_ms: i64, end_ms: i64, tokens: Vec<Token>) -> Self {
        UtteranceSegment {
            speaker,
            start_ms,
            end_ms,
            tokens,
            tags: BTreeSet::new(),
        }
    }

    pub fn tagged(mut self, tag: SegmentTag) -> Self {
        self.tags.insert(tag);
        self
    }

    pub fn is_laugh(&self) -> bool {
        self.tags.contains(&SegmentTag::Laugh)
    }

    pub fn is_backchannel(&self) -> bool {
        self.tags.contains(&SegmentTag::Backchannel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub task: Task,
    pub setting: Setting,
    /// Groups dialogues recorded by the same person (leave-one-group-out).
    pub participant: Option<String>,
    pub session_duration_ms: Option<i64>,
    pub segments: Vec<UtteranceSegment>,
    pub item_scores: Option<Vec<f64>>,
    pub score: Option<f64>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, task: Task) -> Self {
        Dialogue {
            id: id.into(),
            task,
            setting: Setting::Unknown,
            participant: None,
            session_duration_ms: None,
            segments: Vec::new(),
            item_scores: None,
            score: None,
        }
    }

    /// Sorts segments into canonical `(start_ms, speaker)` order.
    pub fn sort_segments(&mut self) {
        self.segments
            .sort_by(|a, b| (a.start_ms, a.speaker).cmp(&(b.start_ms, b.speaker)));
    }

    /// Checks every data-model invariant. Segments must already be sorted.
    pub fn validate(&self) -> Result<()> {
        self.validate_at(None)
    }

    fn validate_at(&self, line: Option<usize>) -> Result<()> {
        let bad = |field: String, message: String| Error::invalid(line, &self.id, field, message);
        if self.id.is_empty() {
            return Err(bad("id".into(), "must be non-empty".into()));
        }
        let mut last_end: [Option<(usize, i64)>; 2] = [None, None];
        let mut prev_key: Option<(i64, Speaker)> = None;
        for (i, seg) in self.segments.iter().enumerate() {
            let field = |name: &str| format!("segments[{i}].{name}");
            if seg.start_ms < 0 {
                return Err(bad(field("start_ms"), format!("negative time {}", seg.start_ms)));
            }
            if seg.end_ms <= seg.start_ms {
                return Err(bad(
                    field("end_ms"),
                    format!("end {} is not after start {}", seg.end_ms, seg.start_ms),
                ));
            }
            // System transcripts are frequently timing-only.
            if seg.tokens.is_empty() && !seg.is_laugh() && seg.speaker == Speaker::User {
                return Err(bad(field("tokens"), "empty token list on a non-laugh segment".into()));
            }
            for (k, tok) in seg.tokens.iter().enumerate() {
                if tok.surface.is_empty() {
                    return Err(bad(format!("segments[{i}].tokens[{k}].surface"), "empty surface".into()));
                }
                if tok.is_filler() && tok.is_disfluency() {
                    return Err(bad(
                        format!("segments[{i}].tokens[{k}].tags"),
                        "token tagged both filler and disfluency".into(),
                    ));
                }
            }
            let key = (seg.start_ms, seg.speaker);
            if prev_key.is_some_and(|p| p > key) {
                return Err(bad(field("start_ms"), "segments are not sorted".into()));
            }
            prev_key = Some(key);
            let slot = &mut last_end[seg.speaker as usize];
            if let Some((j, end)) = *slot {
                if seg.start_ms < end {
                    return Err(bad(
                        field("start_ms"),
                        format!("overlaps same-speaker segments[{j}] ending at {end}"),
                    ));
                }
            }
            *slot = Some((i, seg.end_ms));
        }
        if let Some(duration) = self.session_duration_ms {
            let max_end = self.segments.iter().map(|s| s.end_ms).max().unwrap_or(0);
            if duration <= 0 || duration < max_end {
                return Err(bad(
                    "session_duration_ms".into(),
                    format!("{duration} must be positive and cover the last segment end {max_end}"),
                ));
            }
        }
        if let Some(items) = &self.item_scores {
            if items.is_empty() {
                return Err(bad("item_scores".into(), "empty list".into()));
            }
            for (k, &s) in items.iter().enumerate() {
                if !in_score_range(s) {
                    return Err(bad(format!("item_scores[{k}]"), format!("{s} outside [1, 7]")));
                }
            }
        }
        if let Some(s) = self.score {
            if !in_score_range(s) {
                return Err(bad("score".into(), format!("{s} outside [1, 7]")));
            }
        }
        Ok(())
    }

    /// The regression target: the declared score, else the mean of the item scores.
    pub fn target_score(&self) -> Result<f64> {
        match (self.score, &self.item_scores) {
            (Some(s), _) => Ok(s),
            (None, Some(items)) => aggregate_score(items),
            (None, None) => Err(Error::MissingScore(self.id.clone())),
        }
    }
}

fn in_score_range(s: f64) -> bool {
    s.is_finite() && (SCORE_MIN..=SCORE_MAX).contains(&s)
}

/// Mean of the questionnaire item ratings of one dialogue.
pub fn aggregate_score(item_scores: &[f64]) -> Result<f64> {
    if item_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(item_scores.iter().sum::<f64>() / item_scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub metadata: BTreeMap<String, String>,
}

impl Corpus {
    /// Builds a validated corpus, sorting segments into canonical order.
    pub fn new(mut dialogues: Vec<Dialogue>, metadata: BTreeMap<String, String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &mut dialogues {
            d.sort_segments();
            d.validate()?;
            if !seen.insert(d.id.clone()) {
                return Err(Error::invalid(None, &d.id, "id", "duplicate dialogue id"));
            }
        }
        Ok(Corpus { dialogues, metadata })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawToken {
    surface: String,
    pos: String,
    #[serde(default)]
    tags: Vec<TokenTag>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    speaker: Speaker,
    start_ms: i64,
    end_ms: i64,
    #[serde(default)]
    tokens: Vec<RawToken>,
    #[serde(default)]
    tags: Vec<SegmentTag>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    dialeval_format: u64,
    #[serde(default)]
    metadata: Option<BTreeMap<String, String>>,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    task: Option<Task>,
    #[serde(default)]
    setting: Option<Setting>,
    #[serde(default)]
    participant: Option<String>,
    #[serde(default)]
    session_duration_ms: Option<i64>,
    #[serde(default)]
    segments: Option<Vec<RawSegment>>,
    #[serde(default)]
    item_scores: Option<Vec<f64>>,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Serialize)]
struct MetadataLine<'a> {
    dialeval_format: u64,
    metadata: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct DialogueLine<'a> {
    dialeval_format: u64,
    id: &'a str,
    task: Task,
    setting: Setting,
    #[serde(skip_serializing_if = "Option::is_none")]
    participant: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    session_duration_ms: Option<i64>,
    segments: &'a [UtteranceSegment],
    #[serde(skip_serializing_if = "Option::is_none")]
    item_scores: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

fn convert_line(raw: RawLine, line: usize) -> Result<Dialogue> {
    let parse_err = |message: &str| Error::Parse {
        line,
        message: message.to_owned(),
    };
    let id = raw.id.ok_or_else(|| parse_err("missing field `id`"))?;
    let task = raw.task.ok_or_else(|| parse_err("missing field `task`"))?;
    let segments = raw.segments.ok_or_else(|| parse_err("missing field `segments`"))?;
    let segments = segments
        .into_iter()
        .enumerate()
        .map(|(i, seg)| {
            let tokens = seg
                .tokens
                .into_iter()
                .enumerate()
                .map(|(k, t)| {
                    let pos = Pos::parse(&t.pos).unwrap_or_else(|| {
                        log::warn!(
                            "line {line}: dialogue `{id}`: segments[{i}].tokens[{k}]: unknown POS `{}` mapped to `other`",
                            t.pos
                        );
                        Pos::Other
                    });
                    Token {
                        surface: t.surface,
                        pos,
                        tags: t.tags.into_iter().collect(),
                    }
                })
                .collect();
            UtteranceSegment {
                speaker: seg.speaker,
                start_ms: seg.start_ms,
                end_ms: seg.end_ms,
                tokens,
                tags: seg.tags.into_iter().collect(),
            }
        })
        .collect();
    let mut dialogue = Dialogue {
        id,
        task,
        setting: raw.setting.unwrap_or(Setting::Unknown),
        participant: raw.participant,
        session_duration_ms: raw.session_duration_ms,
        segments,
        item_scores: raw.item_scores,
        score: raw.score,
    };
    dialogue.sort_segments();
    dialogue.validate_at(Some(line))?;
    Ok(dialogue)
}

/// Parses a corpus from any line-oriented reader.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.dialeval_format != FORMAT_VERSION {
            return Err(Error::Version {
                what: "corpus format",
                found: raw.dialeval_format,
                expected: FORMAT_VERSION,
            });
        }
        if let Some(metadata) = raw.metadata {
            if raw.id.is_some() || !corpus.dialogues.is_empty() || !corpus.metadata.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "metadata must be a standalone first record".into(),
                });
            }
            corpus.metadata = metadata;
            continue;
        }
        let dialogue = convert_line(raw, line_no)?;
        if !seen.insert(dialogue.id.clone()) {
            return Err(Error::invalid(Some(line_no), &dialogue.id, "id", "duplicate dialogue id"));
        }
        corpus.dialogues.push(dialogue);
    }
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Writes the canonical serialization: one compact JSON object per line.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    if !corpus.metadata.is_empty() {
        serde_json::to_writer(
            &mut out,
            &MetadataLine {
                dialeval_format: FORMAT_VERSION,
                metadata: &corpus.metadata,
            },
        )?;
        out.write_all(b"\n")?;
    }
    for d in &corpus.dialogues {
        let line = DialogueLine {
            dialeval_format: FORMAT_VERSION,
            id: &d.id,
            task: d.task,
            setting: d.setting,
            participant: d.participant.as_deref(),
            session_duration_ms: d.session_duration_ms,
            segments: &d.segments,
            item_scores: d.item_scores.as_deref(),
            score: d.score,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), |w| write_corpus(corpus, w))
}
