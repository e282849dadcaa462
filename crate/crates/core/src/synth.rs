//! Seeded synthetic corpora with a known feature-to-score relation.
//!
//! Each dialogue draws latent per-minute rates from its task profile, lays out
//! alternating system and user turns over the session realizing those rates,
//! then scores itself from the features actually extracted from the layout:
//! `score = clamp(intercept + weights . features + noise, 1, 7)`.
//!
//! Dialogue `i` draws from ChaCha stream `i` of the profile seed, so output
//! is independent of scheduling and of how many dialogues are generated.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, Dialogue, Pos, SegmentTag, Setting, Speaker, Task, Token, TokenTag, UtteranceSegment,
    SCORE_MAX, SCORE_MIN,
};
use crate::error::{Error, Result};
use crate::features::{extract_dialogue, ExtractOptions, Feature, FeatureVector, FEATURE_COUNT};

/// Features whose per-minute rate a profile may target directly.
pub const TARGETABLE: [Feature; 8] = [
    Feature::IpuCount,
    Feature::WordCount,
    Feature::UniqueWordCount,
    Feature::ContentWordCount,
    Feature::BackchannelCount,
    Feature::FillerCount,
    Feature::LaughCount,
    Feature::DisfluencyCount,
];

const LEAD_MS: i64 = 500;
const TRAIL_MS: i64 = 500;
const MIN_USER_IPU_MS: i64 = 300;
const ITEM_MARGIN_MS: i64 = 250;
const MIN_SYSTEM_MS: i64 = 800;
const INTRA_PAUSE_MS: (i64, i64) = (300, 1200);
const INTER_TURN_MS: (i64, i64) = (300, 1500);
const PAUSE_JITTER_S: f64 = 0.25;

const FILLERS: [&str; 4] = ["eto", "ano", "ma", "um"];
const BACKCHANNELS: [&str; 4] = ["un", "hai", "ee", "aa"];
const CONTENT_POS: [Pos; 5] = [Pos::Noun, Pos::Verb, Pos::Adjective, Pos::Adverb, Pos::Conjunction];
const FUNCTION_POS: [Pos; 3] = [Pos::Particle, Pos::Auxiliary, Pos::Pronoun];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub name: String,
    pub task: Task,
    pub n_dialogues: usize,
    pub session_ms: i64,
    /// Fraction of the session filled by the user's floor-holding speech.
    pub user_speech_share: f64,
    /// System turns (each followed by a user turn) per minute.
    pub system_turns_per_min: f64,
    /// Latent rate means keyed by feature key (`f2`, `f3`, ...).
    pub rate_means: BTreeMap<String, f64>,
    #[serde(default)]
    pub rate_stdevs: BTreeMap<String, f64>,
    pub switch_pause_mean_s: f64,
    pub switch_pause_stdev_s: f64,
    pub score_weights: Vec<f64>,
    #[serde(default)]
    pub score_intercept: f64,
    pub score_noise_stdev: f64,
    #[serde(default)]
    pub autonomous_share: f64,
    #[serde(default = "one")]
    pub dialogues_per_participant: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl TaskProfile {
    pub fn from_toml(text: &str) -> Result<TaskProfile> {
        let p: TaskProfile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TaskProfile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TaskProfile::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    /// A bundled profile by short name: `al`, `ji` or `fmc`.
    pub fn bundled(name: &str) -> Option<TaskProfile> {
        match name {
            "al" => Some(attentive_listening()),
            "ji" => Some(job_interview()),
            "fmc" => Some(first_meeting()),
            _ => None,
        }
    }

    pub fn rate_mean(&self, f: Feature) -> Option<f64> {
        self.rate_means.get(&f.key()).copied()
    }

    pub fn rate_stdev(&self, f: Feature) -> f64 {
        self.rate_stdevs.get(&f.key()).copied().unwrap_or(0.0)
    }

    fn mean_or(&self, f: Feature, default: f64) -> f64 {
        self.rate_mean(f).unwrap_or(default)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("profile `{}`: {m}", self.name)));
        if self.n_dialogues == 0 {
            return fail("n_dialogues must be at least 1".into());
        }
        if self.session_ms <= 0 {
            return fail("session_ms must be positive".into());
        }
        if !(self.user_speech_share > 0.0 && self.user_speech_share < 1.0) {
            return fail("user_speech_share must be in (0, 1)".into());
        }
        if !(self.system_turns_per_min.is_finite() && self.system_turns_per_min > 0.0) {
            return fail("system_turns_per_min must be positive".into());
        }
        if self.score_weights.len() != FEATURE_COUNT {
            return fail(format!("score_weights needs {FEATURE_COUNT} entries"));
        }
        if self.dialogues_per_participant == 0 {
            return fail("dialogues_per_participant must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.autonomous_share) {
            return fail("autonomous_share must be in [0, 1]".into());
        }
        for (label, map) in [("rate_means", &self.rate_means), ("rate_stdevs", &self.rate_stdevs)] {
            for (k, &v) in map {
                match Feature::from_key(k) {
                    Some(f) if TARGETABLE.contains(&f) => {}
                    _ => return fail(format!("{label}: `{k}` is not a targetable rate")),
                }
                if !(v.is_finite() && v >= 0.0) {
                    return fail(format!("{label}.{k} must be finite and non-negative"));
                }
            }
        }
        let finite_nonneg = [self.switch_pause_stdev_s, self.score_noise_stdev];
        if finite_nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("standard deviations must be finite and non-negative".into());
        }
        if !self.switch_pause_mean_s.is_finite()
            || !self.score_intercept.is_finite()
            || self.score_weights.iter().any(|w| !w.is_finite())
        {
            return fail("non-finite parameter".into());
        }
        if self.rate_mean(Feature::IpuCount).is_none() || self.rate_mean(Feature::WordCount).is_none() {
            return fail("rate_means must target f2 and f3".into());
        }

        // Expected time budget per minute of session, in milliseconds.
        let turns = self.system_turns_per_min;
        let ipus = self.mean_or(Feature::IpuCount, 0.0);
        let items = self.mean_or(Feature::BackchannelCount, 0.0) + self.mean_or(Feature::LaughCount, 0.0);
        let floor_ipus = (ipus - items).max(turns);
        let needed = 60_000.0 * self.user_speech_share
            + turns * (MIN_SYSTEM_MS + 2 * ITEM_MARGIN_MS) as f64
            + turns * self.switch_pause_mean_s.max(0.0) * 1000.0
            + turns * (INTER_TURN_MS.0 + INTER_TURN_MS.1) as f64 / 2.0
            + (floor_ipus - turns) * (INTRA_PAUSE_MS.0 + INTRA_PAUSE_MS.1) as f64 / 2.0
            + items * (1000.0 + ITEM_MARGIN_MS as f64);
        if needed > 0.9 * 60_000.0 {
            return fail(format!(
                "infeasible: expected layout needs {:.0} ms per minute of session",
                needed
            ));
        }
        if floor_ipus < turns {
            return fail("fewer user utterances than system turns".into());
        }
        Ok(())
    }
}

fn rates(pairs: &[(Feature, f64, f64)]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let means = pairs.iter().map(|(f, m, _)| (f.key(), *m)).collect();
    let sds = pairs.iter().map(|(f, _, s)| (f.key(), *s)).collect();
    (means, sds)
}

fn weights(pairs: &[(Feature, f64)]) -> Vec<f64> {
    let mut w = vec![0.0; FEATURE_COUNT];
    for (f, v) in pairs {
        w[f.index()] = *v;
    }
    w
}

/// Attentive listening: user-dominant speech, few exchanges; 69 dialogues
/// of 8 minutes, 19 of them autonomous.
pub fn attentive_listening() -> TaskProfile {
    let (rate_means, rate_stdevs) = rates(&[
        (Feature::IpuCount, 12.0, 3.0),
        (Feature::WordCount, 60.0, 12.0),
        (Feature::UniqueWordCount, 22.0, 5.0),
        (Feature::ContentWordCount, 30.0, 6.0),
        (Feature::BackchannelCount, 2.0, 1.0),
        (Feature::FillerCount, 3.0, 1.5),
        (Feature::LaughCount, 0.8, 0.5),
        (Feature::DisfluencyCount, 1.0, 0.5),
    ]);
    TaskProfile {
        name: "al".into(),
        task: Task::AttentiveListening,
        n_dialogues: 69,
        session_ms: 480_000,
        user_speech_share: 0.45,
        system_turns_per_min: 2.0,
        rate_means,
        rate_stdevs,
        switch_pause_mean_s: 1.0,
        switch_pause_stdev_s: 0.4,
        score_weights: weights(&[
            (Feature::IpuCount, 0.15),
            (Feature::UniqueWordCount, 0.08),
            (Feature::DisfluencyCount, 0.8),
        ]),
        score_intercept: 0.5,
        score_noise_stdev: 0.3,
        autonomous_share: 19.0 / 69.0,
        dialogues_per_participant: 1,
        seed: 0,
    }
}

/// Job interview: explicit question/answer turns; 86 autonomous dialogues,
/// two per participant.
pub fn job_interview() -> TaskProfile {
    let (rate_means, rate_stdevs) = rates(&[
        (Feature::IpuCount, 9.0, 2.0),
        (Feature::WordCount, 55.0, 12.0),
        (Feature::UniqueWordCount, 20.0, 4.0),
        (Feature::ContentWordCount, 28.0, 6.0),
        (Feature::BackchannelCount, 0.8, 0.5),
        (Feature::FillerCount, 4.0, 2.0),
        (Feature::LaughCount, 0.3, 0.3),
        (Feature::DisfluencyCount, 1.5, 0.7),
    ]);
    TaskProfile {
        name: "ji".into(),
        task: Task::JobInterview,
        n_dialogues: 86,
        session_ms: 600_000,
        user_speech_share: 0.5,
        system_turns_per_min: 2.5,
        rate_means,
        rate_stdevs,
        switch_pause_mean_s: 1.5,
        switch_pause_stdev_s: 0.5,
        score_weights: weights(&[
            (Feature::UtteranceTime, 0.08),
            (Feature::UniqueWordCount, -0.06),
            (Feature::FillerCount, 0.15),
            (Feature::DisfluencyCount, 0.6),
        ]),
        score_intercept: 3.0,
        score_noise_stdev: 0.3,
        autonomous_share: 1.0,
        dialogues_per_participant: 2,
        seed: 0,
    }
}

/// First-meeting conversation: mixed initiative with frequent exchanges and
/// near-zero switching pauses; 50 operator-driven dialogues.
pub fn first_meeting() -> TaskProfile {
    let (rate_means, rate_stdevs) = rates(&[
        (Feature::IpuCount, 14.0, 3.0),
        (Feature::WordCount, 50.0, 10.0),
        (Feature::UniqueWordCount, 20.0, 4.0),
        (Feature::ContentWordCount, 25.0, 5.0),
        (Feature::BackchannelCount, 3.0, 1.2),
        (Feature::FillerCount, 2.5, 1.2),
        (Feature::LaughCount, 1.5, 0.8),
        (Feature::DisfluencyCount, 1.2, 0.6),
    ]);
    TaskProfile {
        name: "fmc".into(),
        task: Task::FirstMeeting,
        n_dialogues: 50,
        session_ms: 600_000,
        user_speech_share: 0.35,
        system_turns_per_min: 5.0,
        rate_means,
        rate_stdevs,
        switch_pause_mean_s: 0.3,
        switch_pause_stdev_s: 0.3,
        score_weights: weights(&[
            (Feature::IpuCount, 0.05),
            (Feature::DisfluencyCount, -0.5),
            (Feature::AvgSwitchPause, -1.0),
        ]),
        score_intercept: 5.5,
        score_noise_stdev: 0.3,
        autonomous_share: 0.0,
        dialogues_per_participant: 1,
        seed: 0,
    }
}

/// Noiseless score before clamping: intercept plus the weighted features.
pub fn ground_truth(profile: &TaskProfile, features: &FeatureVector) -> f64 {
    profile.score_intercept
        + profile
            .score_weights
            .iter()
            .zip(features.as_slice())
            .map(|(w, f)| w * f)
            .sum::<f64>()
}

pub fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_MIN, SCORE_MAX)
}

/// Generator bookkeeping for one dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub id: String,
    pub features: FeatureVector,
    pub ground_truth: f64,
    pub noise: f64,
    /// `ground_truth + noise`; the stored score is this value clamped to [1, 7].
    pub unclamped: f64,
}

pub struct SynthOutput {
    pub corpus: Corpus,
    pub records: Vec<SynthRecord>,
}

pub fn generate(profile: &TaskProfile) -> Result<Corpus> {
    generate_with_truth(profile).map(|o| o.corpus)
}

pub fn generate_with_truth(profile: &TaskProfile) -> Result<SynthOutput> {
    profile.validate()?;
    let pairs: Vec<(Dialogue, SynthRecord)> = (0..profile.n_dialogues)
        .into_par_iter()
        .map(|i| generate_one(profile, i))
        .collect::<Result<_>>()?;
    let (dialogues, records): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "dialeval synth".to_string());
    metadata.insert("profile".to_string(), profile.name.clone());
    metadata.insert("seed".to_string(), profile.seed.to_string());
    metadata.insert("n_dialogues".to_string(), profile.n_dialogues.to_string());
    let corpus = Corpus::new(dialogues, metadata)?;
    Ok(SynthOutput { corpus, records })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_rate(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    (mean + sd * normal(rng)).max(0.0)
}

/// Splits `total` items into `parts` non-empty groups at random.
fn random_partition(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    let mut cuts = rand::seq::index::sample(rng, total - 1, parts - 1).into_vec();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        sizes.push(c + 1 - prev);
        prev = c + 1;
    }
    sizes.push(total - prev);
    sizes
}

/// `count` tokens over exactly `types` distinct surfaces (each used at least once).
fn tokens_over_types(
    rng: &mut ChaCha8Rng,
    count: usize,
    types: usize,
    prefix: &str,
    pos_set: &[Pos],
    vocab_offset: &mut usize,
) -> Vec<Token> {
    if count == 0 {
        return Vec::new();
    }
    let types = types.clamp(1, count);
    let vocab: Vec<Token> = (0..types)
        .map(|k| {
            let id = *vocab_offset + k;
            Token::new(format!("{prefix}{id}"), pos_set[id % pos_set.len()])
        })
        .collect();
    *vocab_offset += types;
    let mut out = vocab.clone();
    out.extend((types..count).map(|_| vocab[rng.gen_range(0..types)].clone()));
    out
}

struct Item {
    tokens: Vec<Token>,
    tag: SegmentTag,
    duration: i64,
}

fn generate_one(profile: &TaskProfile, index: usize) -> Result<(Dialogue, SynthRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(index as u64);
    let minutes = profile.session_ms as f64 / 60_000.0;
    let rate = |rng: &mut ChaCha8Rng, f: Feature, default: f64| {
        let mean = profile.rate_mean(f).unwrap_or(default);
        draw_rate(rng, mean, profile.rate_stdev(f))
    };
    let count = |r: f64| (r * minutes).round() as usize;

    // Latent rates, drawn in a fixed order.
    let r_ipu = rate(&mut rng, Feature::IpuCount, 0.0);
    let r_words = rate(&mut rng, Feature::WordCount, 0.0);
    let r_unique = rate(&mut rng, Feature::UniqueWordCount, 0.4 * r_words);
    let r_content = rate(&mut rng, Feature::ContentWordCount, 0.5 * r_words);
    let r_bc = rate(&mut rng, Feature::BackchannelCount, 0.0);
    let r_filler = rate(&mut rng, Feature::FillerCount, 0.0);
    let r_laugh = rate(&mut rng, Feature::LaughCount, 0.0);
    let r_disfl = rate(&mut rng, Feature::DisfluencyCount, 0.0);
    let pause_mean = profile.switch_pause_mean_s + profile.switch_pause_stdev_s * normal(&mut rng);

    let n_bc = count(r_bc);
    let n_laugh = count(r_laugh);
    let n_floor = count(r_ipu).saturating_sub(n_bc + n_laugh).max(1);
    let n_turns = ((profile.system_turns_per_min * minutes).round() as usize).clamp(1, n_floor);
    let n_floor_words = count(r_words).saturating_sub(n_bc).max(n_floor);
    let n_fill = count(r_filler).min(n_floor_words);
    let n_disfl = count(r_disfl).min(n_floor_words - n_fill);
    let n_lex = n_floor_words - n_fill - n_disfl;

    // Items spoken over the system: backchannels and laughs.
    let mut items: Vec<Item> = (0..n_bc)
        .map(|_| Item {
            tokens: vec![Token::new(BACKCHANNELS[rng.gen_range(0..BACKCHANNELS.len())], Pos::Interjection)],
            tag: SegmentTag::Backchannel,
            duration: rng.gen_range(250..=500),
        })
        .collect();
    items.extend((0..n_laugh).map(|_| Item {
        tokens: Vec::new(),
        tag: SegmentTag::Laugh,
        duration: rng.gen_range(400..=1200),
    }));
    items.shuffle(&mut rng);

    // Floor vocabulary.
    let fillers: Vec<Token> = (0..n_fill)
        .map(|_| Token::new(FILLERS[rng.gen_range(0..FILLERS.len())], Pos::Interjection).tagged(TokenTag::Filler))
        .collect();
    let disfluencies: Vec<Token> = (0..n_disfl)
        .map(|_| Token::new(format!("df{}-", rng.gen_range(0..100_000)), Pos::Other).tagged(TokenTag::Disfluency))
        .collect();
    let mut other_types: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for t in items.iter().flat_map(|i| &i.tokens).chain(&fillers).chain(&disfluencies) {
        other_types.insert(&t.surface);
    }
    let lex_types = count(r_unique).saturating_sub(other_types.len()).clamp(1, n_lex.max(1));
    let n_content = count(r_content).min(n_lex);
    let content_types = if n_lex == 0 {
        0
    } else {
        let share = n_content as f64 / n_lex as f64;
        ((lex_types as f64 * share).round() as usize).min(n_content)
    };
    let function_types = lex_types.saturating_sub(content_types);
    let mut offset = rng.gen_range(0..10_000usize) * 10;
    let mut words = tokens_over_types(&mut rng, n_content, content_types, "c", &CONTENT_POS, &mut offset);
    words.extend(tokens_over_types(
        &mut rng,
        n_lex - n_content,
        function_types,
        "w",
        &FUNCTION_POS,
        &mut offset,
    ));
    words.shuffle(&mut rng);
    for tok in fillers.into_iter().chain(disfluencies) {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, tok);
    }

    // Floor IPUs grouped into turns.
    let ipu_sizes = random_partition(&mut rng, words.len(), n_floor);
    let mut chunks: Vec<Vec<Token>> = Vec::with_capacity(n_floor);
    let mut it = words.into_iter();
    for size in ipu_sizes {
        chunks.push(it.by_ref().take(size).collect());
    }
    let turn_sizes = random_partition(&mut rng, n_floor, n_turns);

    let target_user_ms = (profile.user_speech_share * profile.session_ms as f64) as i64;
    let weights: Vec<f64> = chunks.iter().map(|c| c.len() as f64 * rng.gen_range(0.7..1.3)).collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut user_ms: Vec<i64> = weights
        .iter()
        .map(|w| ((w / weight_sum) * target_user_ms as f64) as i64)
        .map(|d| d.max(MIN_USER_IPU_MS))
        .collect();

    let mut intra: Vec<i64> = (0..n_floor).map(|_| rng.gen_range(INTRA_PAUSE_MS.0..=INTRA_PAUSE_MS.1)).collect();
    let inter: Vec<i64> = (0..n_turns).map(|_| rng.gen_range(INTER_TURN_MS.0..=INTER_TURN_MS.1)).collect();
    let gaps: Vec<i64> = (0..n_turns)
        .map(|_| {
            let g = pause_mean + PAUSE_JITTER_S * normal(&mut rng);
            ((g * 1000.0).round() as i64).clamp(-1500, 8000)
        })
        .collect();
    let mut turn_items: Vec<Vec<Item>> = (0..n_turns).map(|_| Vec::new()).collect();
    for item in items {
        turn_items[rng.gen_range(0..n_turns)].push(item);
    }
    let min_system: Vec<i64> = (0..n_turns)
        .map(|t| {
            let items_ms: i64 = turn_items[t].iter().map(|i| i.duration + ITEM_MARGIN_MS).sum();
            MIN_SYSTEM_MS + 2 * ITEM_MARGIN_MS + (-gaps[t]).max(0) + items_ms
        })
        .collect();
    let system_bc_draws: Vec<f64> = (0..n_floor).map(|_| rng.gen_range(0.0..1.0)).collect();
    let extra_weights: Vec<f64> = (0..n_turns).map(|_| rng.gen_range(0.5..1.5)).collect();
    let offsets: Vec<f64> = (0..n_turns).map(|_| rng.gen_range(0.0..1.0)).collect();

    // Fit the layout into the session, shrinking user speech if needed.
    let turn_starts: Vec<usize> = turn_sizes
        .iter()
        .scan(0, |acc, s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();
    let fixed = |user_ms: &[i64], intra: &[i64]| -> i64 {
        let mut total = LEAD_MS + TRAIL_MS;
        for t in 0..n_turns {
            let (s, n) = (turn_starts[t], turn_sizes[t]);
            total += gaps[t] + user_ms[s..s + n].iter().sum::<i64>();
            total += intra[s..s + n - 1].iter().sum::<i64>();
            if t + 1 < n_turns {
                total += inter[t];
            }
        }
        total
    };
    let min_sys_total: i64 = min_system.iter().sum();
    let mut leftover = profile.session_ms - fixed(&user_ms, &intra) - min_sys_total;
    let mut attempts = 0;
    while leftover < 0 {
        attempts += 1;
        if attempts > 60 {
            return Err(Error::Config(format!(
                "profile `{}`: dialogue {index} cannot fit its sampled layout into {} ms",
                profile.name, profile.session_ms
            )));
        }
        for d in &mut user_ms {
            *d = ((*d as f64 * 0.9) as i64).max(MIN_USER_IPU_MS);
        }
        if attempts > 20 {
            for p in &mut intra {
                *p = (*p * 9 / 10).max(INTRA_PAUSE_MS.0);
            }
        }
        leftover = profile.session_ms - fixed(&user_ms, &intra) - min_sys_total;
    }
    let extra_sum: f64 = extra_weights.iter().sum();
    let system_ms: Vec<i64> = (0..n_turns)
        .map(|t| min_system[t] + (leftover as f64 * extra_weights[t] / extra_sum * 0.98) as i64)
        .collect();

    let mut segments = Vec::new();
    let mut chunks = chunks.into_iter();
    let mut cursor = LEAD_MS;
    for t in 0..n_turns {
        let sys_start = cursor;
        let sys_end = sys_start + system_ms[t];
        segments.push(UtteranceSegment::new(Speaker::System, sys_start, sys_end, Vec::new()));
        let user_start = sys_end + gaps[t];

        // Listener items inside the system turn, clear of both neighbours.
        let region_start = sys_start + ITEM_MARGIN_MS;
        let region_end = sys_end.min(user_start) - ITEM_MARGIN_MS;
        let items = std::mem::take(&mut turn_items[t]);
        if !items.is_empty() {
            let used: i64 = items.iter().map(|i| i.duration).sum::<i64>() + ITEM_MARGIN_MS * (items.len() as i64 - 1);
            let slack = (region_end - region_start - used).max(0);
            let mut at = region_start + (slack as f64 * offsets[t]) as i64;
            for item in items {
                let mut seg = UtteranceSegment::new(Speaker::User, at, at + item.duration, item.tokens);
                seg.tags.insert(item.tag);
                segments.push(seg);
                at += item.duration + ITEM_MARGIN_MS;
            }
        }

        let mut at = user_start;
        let (s, n) = (turn_starts[t], turn_sizes[t]);
        for k in s..s + n {
            let tokens = chunks.next().expect("one chunk per floor IPU");
            let end = at + user_ms[k];
            segments.push(UtteranceSegment::new(Speaker::User, at, end, tokens));
            at = end;
            if k + 1 < s + n {
                let pause = intra[k];
                if system_bc_draws[k] < 0.5 && pause >= 500 && at + 100 >= sys_end + 300 {
                    let bc_start = at + 100;
                    let bc_end = bc_start + (pause - 300).min(400);
                    segments.push(
                        UtteranceSegment::new(Speaker::System, bc_start, bc_end, Vec::new())
                            .tagged(SegmentTag::Backchannel),
                    );
                }
                at += pause;
            }
        }
        cursor = at + inter[t];
    }

    let id = format!("{}-{index:04}", profile.name);
    let mut dialogue = Dialogue::new(id.clone(), profile.task);
    dialogue.setting = if rng.gen_range(0.0..1.0) < profile.autonomous_share {
        Setting::Autonomous
    } else {
        Setting::Woz
    };
    if profile.dialogues_per_participant > 1 {
        dialogue.participant = Some(format!(
            "{}-p{:04}",
            profile.name,
            index / profile.dialogues_per_participant
        ));
    }
    dialogue.session_duration_ms = Some(profile.session_ms);
    dialogue.segments = segments;
    dialogue.sort_segments();

    let features = extract_dialogue(&dialogue, &ExtractOptions::default())?.features;
    let truth = ground_truth(profile, &features);
    let noise = profile.score_noise_stdev * normal(&mut rng);
    let unclamped = truth + noise;
    dialogue.score = Some(clamp_score(unclamped));
    dialogue.validate()?;

    Ok((
        dialogue,
        SynthRecord {
            id,
            features,
            ground_truth: truth,
            noise,
            unclamped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_to_string;

    fn small(name: &str, n: usize) -> TaskProfile {
        let mut p = TaskProfile::bundled(name).unwrap();
        p.n_dialogues = n;
        p
    }

    #[test]
    fn bundled_profiles_validate() {
        for name in ["al", "ji", "fmc"] {
            TaskProfile::bundled(name).unwrap().validate().unwrap();
        }
        assert_eq!(attentive_listening().n_dialogues, 69);
        assert_eq!(job_interview().n_dialogues, 86);
        assert_eq!(first_meeting().n_dialogues, 50);
        assert!(TaskProfile::bundled("xx").is_none());
    }

    #[test]
    fn zero_dialogues_rejected() {
        let p = small("al", 0);
        assert!(matches!(generate(&p), Err(Error::Config(_))));
    }

    #[test]
    fn infeasible_profile_rejected_up_front() {
        let mut p = small("al", 3);
        p.user_speech_share = 0.95;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("infeasible"), "{err}");
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let p = small("fmc", 6);
        let a = corpus_to_string(&generate(&p).unwrap());
        let b = corpus_to_string(&generate(&p).unwrap());
        assert_eq!(a, b);
        let longer = generate(&TaskProfile { n_dialogues: 8, ..p.clone() }).unwrap();
        let shorter = generate(&p).unwrap();
        assert_eq!(&longer.dialogues[..6], &shorter.dialogues[..]);
        let other_seed = corpus_to_string(&generate(&TaskProfile { seed: 1, ..p }).unwrap());
        assert_ne!(a, other_seed);
    }

    #[test]
    fn ground_truth_examples() {
        let mut p = small("al", 1);
        p.score_weights = vec![0.0; FEATURE_COUNT];
        p.score_intercept = 0.0;
        let fv = FeatureVector([3.0; FEATURE_COUNT]);
        assert_eq!(ground_truth(&p, &fv), 0.0);
        assert_eq!(clamp_score(ground_truth(&p, &fv)), 1.0);
        p.score_weights[Feature::IpuCount.index()] = 1.0;
        let mut fv = FeatureVector::default();
        fv.set(Feature::IpuCount, 4.0);
        assert_eq!(ground_truth(&p, &fv), 4.0);
    }

    #[test]
    fn bookkeeping_matches_stored_scores() {
        for name in ["al", "ji", "fmc"] {
            let out = generate_with_truth(&small(name, 12)).unwrap();
            for (d, r) in out.corpus.dialogues.iter().zip(&out.records) {
                assert_eq!(d.id, r.id);
                let fv = extract_dialogue(d, &ExtractOptions::default()).unwrap().features;
                assert_eq!(fv, r.features);
                let truth = ground_truth(&small(name, 12), &fv);
                assert_eq!(truth + r.noise, r.unclamped);
                assert_eq!(d.score, Some(clamp_score(r.unclamped)));
            }
        }
    }

    #[test]
    fn participants_pair_dialogues() {
        let c = generate(&small("ji", 4)).unwrap();
        let p: Vec<&str> = c.dialogues.iter().map(|d| d.participant.as_deref().unwrap()).collect();
        assert_eq!(p, vec!["ji-p0000", "ji-p0000", "ji-p0001", "ji-p0001"]);
    }

    #[test]
    fn profile_toml_round_trip() {
        let p = attentive_listening();
        let back = TaskProfile::from_toml(&p.to_toml()).unwrap();
        assert_eq!(back, p);
        assert!(TaskProfile::from_toml("name = 3").is_err());
        let mut bad = p.clone();
        bad.rate_means.insert("f1".into(), 3.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partition_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (total, parts) in [(1, 1), (5, 5), (10, 3), (100, 1)] {
            let s = random_partition(&mut rng, total, parts);
            assert_eq!(s.len(), parts);
            assert_eq!(s.iter().sum::<usize>(), total);
            assert!(s.iter().all(|&x| x >= 1));
        }
    }
}
