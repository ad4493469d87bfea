use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataprep::Utterance;
use crate::error::{arg_err, Result};

/// Active-speech intervals per speaker, each list sorted and disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerSegments {
    pub speakers: Vec<String>,
    pub intervals: Vec<Vec<(f64, f64)>>,
}

fn merge(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

impl SpeakerSegments {
    /// Builds segments from raw intervals; overlapping or touching intervals
    /// of one speaker are merged.
    pub fn new(speakers: Vec<String>, intervals: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if speakers.len() != intervals.len() {
            return arg_err("one interval list per speaker required");
        }
        for &(s, e) in intervals.iter().flatten() {
            if !(s.is_finite() && e.is_finite() && s < e) {
                return arg_err(format!("interval [{s}, {e}] is not increasing"));
            }
        }
        Ok(Self {
            speakers,
            intervals: intervals.into_iter().map(merge).collect(),
        })
    }

    /// Speakers in id order.
    pub fn from_utterances(utts: &[Utterance]) -> Result<Self> {
        let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for u in utts {
            by.entry(&u.speaker).or_default().push((u.start, u.end));
        }
        let (speakers, intervals) = by.into_iter().map(|(s, v)| (s.to_string(), v)).unzip();
        Self::new(speakers, intervals)
    }

    /// Merged activity of all speakers.
    pub fn union(&self) -> Vec<(f64, f64)> {
        merge(self.intervals.iter().flatten().copied().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    IntraPause,
    InterSilence,
    Overlap,
    Active,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [
        Self::IntraPause,
        Self::InterSilence,
        Self::Overlap,
        Self::Active,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::IntraPause => "intra_pause",
            Self::InterSilence => "inter_silence",
            Self::Overlap => "overlap",
            Self::Active => "active",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub start: f64,
    pub end: f64,
    pub kind: EventKind,
    /// Speaker index for active speech and intra-speaker pauses.
    pub speaker: Option<usize>,
}

impl TurnEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTakingEvents {
    pub intra_pauses: Vec<TurnEvent>,
    pub inter_silences: Vec<TurnEvent>,
    pub overlaps: Vec<TurnEvent>,
    pub active: Vec<TurnEvent>,
}

impl TurnTakingEvents {
    pub fn of_kind(&self, kind: EventKind) -> &[TurnEvent] {
        match kind {
            EventKind::IntraPause => &self.intra_pauses,
            EventKind::InterSilence => &self.inter_silences,
            EventKind::Overlap => &self.overlaps,
            EventKind::Active => &self.active,
        }
    }

    pub fn total(&self, kind: EventKind) -> f64 {
        self.of_kind(kind)
            .iter()
            .map(TurnEvent::duration)
            .fold(0.0, |a, d| a + d)
    }

    pub fn active_total(&self, speaker: usize) -> f64 {
        self.active
            .iter()
            .filter(|e| e.speaker == Some(speaker))
            .map(TurnEvent::duration)
            .fold(0.0, |a, d| a + d)
    }
}

/// Classifies the silences between active regions and finds cross-speaker
/// overlaps in a two-party conversation.
///
/// A silence is an intra-speaker pause when the speech that ends right before
/// it and the speech that starts right after it belong to the same speaker, and
/// an inter-speaker silence otherwise. When two speakers end (or start) at the
/// same boundary, the lower speaker index owns it.
pub fn extract_turn_events(segs: &SpeakerSegments) -> Result<TurnTakingEvents> {
    let n = segs.speakers.len();
    if n > 2 {
        return arg_err(format!(
            "turn-taking events are defined for two speakers, got {n}"
        ));
    }
    let mut ev = TurnTakingEvents::default();
    for (s, iv) in segs.intervals.iter().enumerate() {
        ev.active.extend(iv.iter().map(|&(a, b)| TurnEvent {
            start: a,
            end: b,
            kind: EventKind::Active,
            speaker: Some(s),
        }));
    }
    if n == 2 {
        let (a, b) = (&segs.intervals[0], &segs.intervals[1]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo < hi {
                ev.overlaps.push(TurnEvent {
                    start: lo,
                    end: hi,
                    kind: EventKind::Overlap,
                    speaker: None,
                });
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    let owner_ending = |t: f64| (0..n).find(|&s| segs.intervals[s].iter().any(|iv| iv.1 == t));
    let owner_starting = |t: f64| (0..n).find(|&s| segs.intervals[s].iter().any(|iv| iv.0 == t));
    let union = segs.union();
    for w in union.windows(2) {
        let (start, end) = (w[0].1, w[1].0);
        let left = owner_ending(start).expect("region end belongs to a speaker");
        let right = owner_starting(end).expect("region start belongs to a speaker");
        if left == right {
            ev.intra_pauses.push(TurnEvent {
                start,
                end,
                kind: EventKind::IntraPause,
                speaker: Some(left),
            });
        } else {
            ev.inter_silences.push(TurnEvent {
                start,
                end,
                kind: EventKind::InterSilence,
                speaker: None,
            });
        }
    }
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Counts per bin `[edges[i], edges[i+1])`; the last bin is closed.
    pub histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnStats {
    pub edges: Vec<f64>,
    pub kinds: BTreeMap<EventKind, KindSummary>,
}

fn summarize(mut d: Vec<f64>, edges: &[f64]) -> KindSummary {
    d.sort_by(f64::total_cmp);
    let count = d.len();
    let mean = if count == 0 {
        0.0
    } else {
        d.iter().sum::<f64>() / count as f64
    };
    let median = match count {
        0 => 0.0,
        c if c % 2 == 1 => d[c / 2],
        c => 0.5 * (d[c / 2 - 1] + d[c / 2]),
    };
    let mut histogram = vec![0; edges.len().saturating_sub(1)];
    for &x in &d {
        let last = edges.len() - 1;
        if x == edges[last] {
            histogram[last - 1] += 1;
        } else if let Some(b) = (0..last).find(|&b| x >= edges[b] && x < edges[b + 1]) {
            histogram[b] += 1;
        }
    }
    KindSummary {
        count,
        mean,
        median,
        histogram,
    }
}

/// Duration distribution of every event kind across a corpus. Zero-length
/// events are left out.
pub fn turn_stats(corpus: &[TurnTakingEvents], edges: &[f64]) -> Result<TurnStats> {
    if corpus.is_empty() {
        return arg_err("no dialogues to summarise");
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return arg_err("histogram edges must be increasing with at least two entries");
    }
    let kinds = EventKind::ALL
        .iter()
        .map(|&k| {
            let d: Vec<f64> = corpus
                .iter()
                .flat_map(|e| e.of_kind(k))
                .map(TurnEvent::duration)
                .filter(|&x| x > 0.0)
                .collect();
            (k, summarize(d, edges))
        })
        .collect();
    Ok(TurnStats {
        edges: edges.to_vec(),
        kinds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaughterStats {
    pub count: usize,
    /// 0 when there is no laughter; see `defined`.
    pub mean_duration: f64,
    pub defined: bool,
}

/// Number of laughter spans and their mean duration in seconds.
pub fn laughter_stats(dialogues: &[Vec<(f64, f64)>]) -> Result<LaughterStats> {
    let spans: Vec<&(f64, f64)> = dialogues.iter().flatten().collect();
    if let Some((s, e)) = spans.iter().find(|(s, e)| !(s <= e)) {
        return arg_err(format!("laughter span [{s}, {e}] is reversed"));
    }
    let count = spans.len();
    if count == 0 {
        return Ok(LaughterStats {
            count,
            mean_duration: 0.0,
            defined: false,
        });
    }
    Ok(LaughterStats {
        count,
        mean_duration: spans.iter().map(|(s, e)| e - s).sum::<f64>() / count as f64,
        defined: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segs(a: Vec<(f64, f64)>, b: Vec<(f64, f64)>) -> SpeakerSegments {
        SpeakerSegments::new(vec!["A".into(), "B".into()], vec![a, b]).unwrap()
    }

    #[test]
    fn hand_cases() {
        let e = extract_turn_events(&segs(vec![(0.0, 2.0)], vec![(1.5, 3.0)])).unwrap();
        assert_eq!(e.overlaps.len(), 1);
        assert_eq!((e.overlaps[0].start, e.overlaps[0].end), (1.5, 2.0));
        assert_eq!(e.total(EventKind::Overlap), 0.5);

        let e = extract_turn_events(&segs(vec![(0.0, 1.0), (2.0, 3.0)], vec![])).unwrap();
        assert_eq!(e.intra_pauses.len(), 1);
        assert_eq!(e.total(EventKind::IntraPause), 1.0);
        assert!(e.inter_silences.is_empty());

        let e = extract_turn_events(&segs(vec![(0.0, 1.0)], vec![(2.0, 3.0)])).unwrap();
        assert_eq!(e.inter_silences.len(), 1);
        assert_eq!(e.total(EventKind::InterSilence), 1.0);
        assert_eq!(e.active_total(0), 1.0);
    }

    #[test]
    fn three_speakers_rejected() {
        let s = SpeakerSegments::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![], vec![], vec![]],
        )
        .unwrap();
        assert!(extract_turn_events(&s).is_err());
    }

    #[test]
    fn stats_hand_cases() {
        let one = TurnTakingEvents {
            overlaps: vec![TurnEvent {
                start: 0.0,
                end: 0.5,
                kind: EventKind::Overlap,
                speaker: None,
            }],
            ..Default::default()
        };
        let s = turn_stats(&[one], &[0.0, 1.0, 2.0]).unwrap();
        let o = &s.kinds[&EventKind::Overlap];
        assert_eq!(
            (o.mean, o.median, o.histogram.clone()),
            (0.5, 0.5, vec![1, 0])
        );
        let e = extract_turn_events(&segs(vec![(0.0, 1.0), (2.0, 4.0)], vec![(5.0, 8.0)])).unwrap();
        let a = &turn_stats(&[e], &[0.0, 5.0]).unwrap().kinds[&EventKind::Active];
        assert_eq!((a.mean, a.median), (2.0, 2.0));

        let l = laughter_stats(&[vec![(0.0, 1.0)], vec![(2.0, 4.0)]]).unwrap();
        assert_eq!((l.count, l.mean_duration), (2, 1.5));
        assert!(!laughter_stats(&[]).unwrap().defined);
    }
}
