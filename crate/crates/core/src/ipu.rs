//! Inter-pausal unit segmentation and floor-transition detection.

use std::collections::BTreeSet;

use crate::corpus::{Dialogue, SegmentTag, Speaker, Token, UtteranceSegment};
use crate::error::{Error, Result};

pub const DEFAULT_MERGE_THRESHOLD_MS: i64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Ipu {
    pub speaker: Speaker,
    pub start_ms: i64,
    pub end_ms: i64,
    pub tokens: Vec<Token>,
    pub tags: BTreeSet<SegmentTag>,
    pub is_floor: bool,
}

impl Ipu {
    fn from_segment(seg: &UtteranceSegment) -> Self {
        let mut ipu = Ipu {
            speaker: seg.speaker,
            start_ms: seg.start_ms,
            end_ms: seg.end_ms,
            tokens: seg.tokens.clone(),
            tags: seg.tags.clone(),
            is_floor: false,
        };
        ipu.is_floor = ipu.holds_floor();
        ipu
    }

    fn absorb(&mut self, seg: &UtteranceSegment) {
        self.end_ms = self.end_ms.max(seg.end_ms);
        self.tokens.extend(seg.tokens.iter().cloned());
        self.tags.extend(seg.tags.iter().copied());
        self.is_floor = self.holds_floor();
    }

    fn holds_floor(&self) -> bool {
        !self.is_backchannel() && !self.is_laugh_only()
    }

    pub fn is_backchannel(&self) -> bool {
        self.tags.contains(&SegmentTag::Backchannel)
    }

    pub fn is_laugh(&self) -> bool {
        self.tags.contains(&SegmentTag::Laugh)
    }

    pub fn is_laugh_only(&self) -> bool {
        self.is_laugh() && self.tokens.is_empty()
    }

    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }

    pub fn to_segment(&self) -> UtteranceSegment {
        UtteranceSegment {
            speaker: self.speaker,
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            tokens: self.tokens.clone(),
            tags: self.tags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpuTimeline {
    pub ipus: Vec<Ipu>,
    pub merge_threshold_ms: i64,
}

impl IpuTimeline {
    pub fn speaker_ipus(&self, speaker: Speaker) -> impl Iterator<Item = &Ipu> {
        self.ipus.iter().filter(move |i| i.speaker == speaker)
    }

    pub fn token_count(&self) -> usize {
        self.ipus.iter().map(|i| i.tokens.len()).sum()
    }
}

/// Merges each speaker's segments whose separating silence is shorter than
/// `merge_threshold_ms`. A gap equal to the threshold starts a new unit.
pub fn segment_ipus(dialogue: &Dialogue, merge_threshold_ms: i64) -> Result<IpuTimeline> {
    merge_segments(&dialogue.segments, merge_threshold_ms)
}

pub fn merge_segments(segments: &[UtteranceSegment], merge_threshold_ms: i64) -> Result<IpuTimeline> {
    if merge_threshold_ms <= 0 {
        return Err(Error::Config(format!(
            "IPU merge threshold must be positive, got {merge_threshold_ms}"
        )));
    }
    let mut ipus = Vec::new();
    for speaker in [Speaker::System, Speaker::User] {
        let mut own: Vec<&UtteranceSegment> =
            segments.iter().filter(|s| s.speaker == speaker).collect();
        own.sort_by_key(|s| s.start_ms);
        let mut current: Option<Ipu> = None;
        for seg in own {
            match current.as_mut() {
                Some(ipu) if seg.start_ms - ipu.end_ms < merge_threshold_ms => ipu.absorb(seg),
                _ => ipus.extend(current.replace(Ipu::from_segment(seg))),
            }
        }
        ipus.extend(current);
    }
    ipus.sort_by(|a, b| (a.start_ms, a.speaker).cmp(&(b.start_ms, b.speaker)));
    Ok(IpuTimeline {
        ipus,
        merge_threshold_ms,
    })
}

/// A system floor-holding IPU immediately followed (among floor-holding
/// IPUs, in start order) by a user floor-holding IPU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorTransition<'a> {
    pub from: &'a Ipu,
    pub to: &'a Ipu,
}

impl FloorTransition<'_> {
    /// Silence between the two units; negative when the user starts early.
    pub fn gap_ms(&self) -> i64 {
        self.to.start_ms - self.from.end_ms
    }
}

pub fn floor_transitions(timeline: &IpuTimeline) -> Vec<FloorTransition<'_>> {
    let mut floor: Vec<&Ipu> = timeline.ipus.iter().filter(|i| i.is_floor).collect();
    floor.sort_by(|a, b| (a.start_ms, a.speaker).cmp(&(b.start_ms, b.speaker)));
    floor
        .windows(2)
        .filter(|w| w[0].speaker == Speaker::System && w[1].speaker == Speaker::User)
        .map(|w| FloorTransition {
            from: w[0],
            to: w[1],
        })
        .collect()
}
