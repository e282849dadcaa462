//! The eleven user-behavior features.
//!
//! All counts are taken over the *user* side of the dialogue only. Rates are
//! per minute of session time, where the session length is the declared
//! duration when present and the observed segment span otherwise.
//!
//! The unique-word features (f4, f6) count distinct surfaces over the whole
//! dialogue and then divide by minutes, so they are not invariant to session
//! length the way the plain counting rates are.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::corpus::{Corpus, Dialogue, Speaker, Task};
use crate::error::{Error, Result};
use crate::ipu::{floor_transitions, segment_ipus, IpuTimeline, DEFAULT_MERGE_THRESHOLD_MS};

pub const FEATURE_COUNT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    UtteranceTime,
    IpuCount,
    WordCount,
    UniqueWordCount,
    ContentWordCount,
    UniqueContentWordCount,
    BackchannelCount,
    FillerCount,
    LaughCount,
    DisfluencyCount,
    AvgSwitchPause,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::UtteranceTime,
        Feature::IpuCount,
        Feature::WordCount,
        Feature::UniqueWordCount,
        Feature::ContentWordCount,
        Feature::UniqueContentWordCount,
        Feature::BackchannelCount,
        Feature::FillerCount,
        Feature::LaughCount,
        Feature::DisfluencyCount,
        Feature::AvgSwitchPause,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Feature::ALL.get(i).copied()
    }

    /// Column key: `f1` .. `f11`.
    pub fn key(self) -> String {
        format!("f{}", self.index() + 1)
    }

    pub fn from_key(key: &str) -> Option<Feature> {
        let n: usize = key.strip_prefix('f')?.parse().ok()?;
        n.checked_sub(1).and_then(Feature::from_index)
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::UtteranceTime => "utterance_time_per_min",
            Feature::IpuCount => "ipu_count_per_min",
            Feature::WordCount => "word_count_per_min",
            Feature::UniqueWordCount => "unique_word_count_per_min",
            Feature::ContentWordCount => "content_word_count_per_min",
            Feature::UniqueContentWordCount => "unique_content_word_count_per_min",
            Feature::BackchannelCount => "backchannel_count_per_min",
            Feature::FillerCount => "filler_count_per_min",
            Feature::LaughCount => "laugh_count_per_min",
            Feature::DisfluencyCount => "disfluency_count_per_min",
            Feature::AvgSwitchPause => "avg_switch_pause_s",
        }
    }

    /// Display label used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Feature::UtteranceTime => "Utterance time / min.",
            Feature::IpuCount => "# utterances (IPU segments) / min.",
            Feature::WordCount => "# utterance words / min.",
            Feature::UniqueWordCount => "# unique utterance words / min.",
            Feature::ContentWordCount => "# utterance content words / min.",
            Feature::UniqueContentWordCount => "# unique utterance content words / min.",
            Feature::BackchannelCount => "# backchannels / min.",
            Feature::FillerCount => "# fillers / min.",
            Feature::LaughCount => "# laughs / min.",
            Feature::DisfluencyCount => "# disfluencies / min.",
            Feature::AvgSwitchPause => "Average switching pause length",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.0[f.index()] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<Feature> for FeatureVector {
    type Output = f64;
    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    pub ipu_threshold_ms: i64,
    /// Leave tokens of backchannel IPUs out of the word-based features (f3-f6).
    pub exclude_backchannel_tokens: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            ipu_threshold_ms: DEFAULT_MERGE_THRESHOLD_MS,
            exclude_backchannel_tokens: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub features: FeatureVector,
    pub transition_count: usize,
    /// Set when no system-to-user floor transition exists; f11 is then 0.
    pub no_transition: bool,
}

/// Session length in minutes used as the rate denominator.
pub fn dialogue_minutes(dialogue: &Dialogue) -> Result<f64> {
    if let Some(ms) = dialogue.session_duration_ms {
        return Ok(ms as f64 / 60_000.0);
    }
    let start = dialogue.segments.iter().map(|s| s.start_ms).min();
    let end = dialogue.segments.iter().map(|s| s.end_ms).max();
    match (start, end) {
        (Some(s), Some(e)) if e > s => Ok((e - s) as f64 / 60_000.0),
        _ => Err(Error::EmptyDialogue(dialogue.id.clone())),
    }
}

pub fn extract_features(
    dialogue: &Dialogue,
    timeline: &IpuTimeline,
    options: &ExtractOptions,
) -> Result<Extraction> {
    let minutes = dialogue_minutes(dialogue)?;

    let mut speech_ms = 0i64;
    let mut ipu_count = 0usize;
    let mut words = 0usize;
    let mut content_words = 0usize;
    let mut backchannels = 0usize;
    let mut fillers = 0usize;
    let mut laughs = 0usize;
    let mut disfluencies = 0usize;
    let mut types: HashSet<&str> = HashSet::new();
    let mut content_types: HashSet<&str> = HashSet::new();

    for ipu in timeline.speaker_ipus(Speaker::User) {
        speech_ms += ipu.duration_ms();
        ipu_count += 1;
        if ipu.is_backchannel() {
            backchannels += 1;
        }
        if ipu.is_laugh() {
            laughs += 1;
        }
        let count_words = !(options.exclude_backchannel_tokens && ipu.is_backchannel());
        for tok in &ipu.tokens {
            if tok.is_filler() {
                fillers += 1;
            }
            if tok.is_disfluency() {
                disfluencies += 1;
            }
            if count_words {
                words += 1;
                types.insert(&tok.surface);
                if tok.pos.is_content() {
                    content_words += 1;
                    content_types.insert(&tok.surface);
                }
            }
        }
    }

    let transitions = floor_transitions(timeline);
    let switch_pause = if transitions.is_empty() {
        0.0
    } else {
        // Integer milliseconds keep the sum exact.
        let total_ms: i64 = transitions.iter().map(|t| t.gap_ms()).sum();
        total_ms as f64 / 1000.0 / transitions.len() as f64
    };

    let per_min = |n: usize| n as f64 / minutes;
    let mut fv = FeatureVector::default();
    fv.set(Feature::UtteranceTime, speech_ms as f64 / 1000.0 / minutes);
    fv.set(Feature::IpuCount, per_min(ipu_count));
    fv.set(Feature::WordCount, per_min(words));
    fv.set(Feature::UniqueWordCount, per_min(types.len()));
    fv.set(Feature::ContentWordCount, per_min(content_words));
    fv.set(Feature::UniqueContentWordCount, per_min(content_types.len()));
    fv.set(Feature::BackchannelCount, per_min(backchannels));
    fv.set(Feature::FillerCount, per_min(fillers));
    fv.set(Feature::LaughCount, per_min(laughs));
    fv.set(Feature::DisfluencyCount, per_min(disfluencies));
    fv.set(Feature::AvgSwitchPause, switch_pause);

    Ok(Extraction {
        features: fv,
        transition_count: transitions.len(),
        no_transition: transitions.is_empty(),
    })
}

/// Segments and extracts in one step.
pub fn extract_dialogue(dialogue: &Dialogue, options: &ExtractOptions) -> Result<Extraction> {
    let timeline = segment_ipus(dialogue, options.ipu_threshold_ms)?;
    extract_features(dialogue, &timeline, options)
}

/// Per-dialogue features and targets, in corpus order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub tasks: Vec<Task>,
    pub participants: Vec<Option<String>>,
    pub rows: Vec<FeatureVector>,
    pub targets: Vec<f64>,
    pub no_transition: Vec<bool>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as plain vectors, the layout the models consume.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.0.to_vec()).collect()
    }

    pub fn column(&self, f: Feature) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(f)).collect()
    }
}

pub fn feature_matrix(corpus: &Corpus, options: &ExtractOptions) -> Result<FeatureTable> {
    let rows: Vec<(Extraction, f64)> = corpus
        .dialogues
        .par_iter()
        .map(|d| {
            let target = d.target_score()?;
            Ok((extract_dialogue(d, options)?, target))
        })
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::default();
    for (d, (ex, target)) in corpus.dialogues.iter().zip(rows) {
        table.ids.push(d.id.clone());
        table.tasks.push(d.task);
        table.participants.push(d.participant.clone());
        table.rows.push(ex.features);
        table.targets.push(target);
        table.no_transition.push(ex.no_transition);
    }
    Ok(table)
}
