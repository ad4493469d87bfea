use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::utterance::{chrono_cmp, Utterance};

pub const DEFAULT_MAX_DURATION: f64 = 40.0;

/// A stretch of conversation with at least two speakers, ready for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub utterances: Vec<Utterance>,
    pub serialized_text: String,
    /// Distinct speakers in id order; index = output channel.
    pub speakers: Vec<String>,
    pub start_s: f64,
    pub end_s: f64,
}

impl DialogueSample {
    pub fn from_utterances(mut utterances: Vec<Utterance>) -> Self {
        utterances.sort_by(chrono_cmp);
        let speakers: BTreeSet<String> = utterances.iter().map(|u| u.speaker.clone()).collect();
        let start_s = utterances
            .iter()
            .map(|u| u.start)
            .fold(f64::INFINITY, f64::min);
        let end_s = utterances
            .iter()
            .map(|u| u.end)
            .fold(f64::NEG_INFINITY, f64::max);
        let serialized_text = serialize_transcript(&utterances);
        Self {
            utterances,
            serialized_text,
            speakers: speakers.into_iter().collect(),
            start_s,
            end_s,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn channel_of(&self, speaker: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker)
    }
}

struct Cache {
    utts: Vec<Utterance>,
    start: f64,
    end: f64,
}

impl Cache {
    fn new(u: Utterance) -> Self {
        Self {
            start: u.start,
            end: u.end,
            utts: vec![u],
        }
    }

    fn push(&mut self, u: Utterance) {
        self.end = self.end.max(u.end);
        self.utts.push(u);
    }

    fn speakers(&self) -> usize {
        self.utts
            .iter()
            .map(|u| &u.speaker)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Cuts a recording's utterances into non-overlapping multi-speaker samples.
///
/// Utterances are visited in chronological order. An utterance that starts
/// after everything in the cache has ended closes the cache when it holds two
/// or more speakers; the closed cache is emitted only if it spans at most
/// `max_duration`, and the closing utterance starts the next cache. Otherwise a
/// cache already longer than `max_duration` is dropped together with the
/// incoming utterance, and anything else extends the cache. A cache still open
/// when the input runs out is not emitted.
pub fn prepare_dialogues(utterances: &[Utterance], max_duration: f64) -> Vec<DialogueSample> {
    let mut sorted = utterances.to_vec();
    sorted.sort_by(chrono_cmp);
    let mut out = Vec::new();
    let mut cache: Option<Cache> = None;
    for u in sorted {
        let Some(c) = cache.as_mut() else {
            cache = Some(Cache::new(u));
            continue;
        };
        if u.start > c.end && c.speakers() > 1 {
            let done = cache.replace(Cache::new(u)).unwrap();
            if done.end - done.start <= max_duration {
                out.push(DialogueSample::from_utterances(done.utts));
            }
        } else if c.end - c.start > max_duration {
            cache = None;
        } else {
            c.push(u);
        }
    }
    out
}

/// Utterance text with `[laughter]` inserted at the word position proportional
/// to where each laughter span starts.
fn render(u: &Utterance) -> String {
    let words: Vec<&str> = u.text.split_whitespace().collect();
    let mut spans = u.laughter.clone();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at: Vec<usize> = spans
        .iter()
        .map(|&(s, _)| (((s - u.start) / u.duration()) * words.len() as f64).floor() as usize)
        .map(|i| i.min(words.len()))
        .collect();
    at.reverse();
    let mut parts = Vec::with_capacity(words.len() + at.len());
    for (i, w) in words.iter().enumerate() {
        while at.last() == Some(&i) {
            parts.push("[laughter]");
            at.pop();
        }
        parts.push(w);
    }
    parts.extend(at.iter().map(|_| "[laughter]"));
    parts.join(" ")
}

/// Chronological transcript: same-speaker neighbours joined by a space,
/// speaker changes marked with `[spkchange]`.
pub fn serialize_transcript(utterances: &[Utterance]) -> String {
    let mut sorted: Vec<&Utterance> = utterances.iter().collect();
    sorted.sort_by(|a, b| chrono_cmp(a, b));
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for u in sorted {
        match prev {
            None => {}
            Some(p) if p == u.speaker => out.push(' '),
            Some(_) => out.push_str(" [spkchange] "),
        }
        out.push_str(&render(u));
        prev = Some(&u.speaker);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str, a: f64, b: f64, t: &str) -> Utterance {
        Utterance::new(s, a, b, t).unwrap()
    }

    #[test]
    fn flush_on_gap_after_two_speakers() {
        let out = prepare_dialogues(
            &[
                u("A", 0.0, 2.0, "a"),
                u("B", 1.5, 3.0, "b"),
                u("A", 5.0, 6.0, "c"),
            ],
            40.0,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].utterances.len(), 2);
        assert_eq!(out[0].serialized_text, "a [spkchange] b");
        assert_eq!(out[0].speakers, vec!["A", "B"]);
    }

    #[test]
    fn single_speaker_never_flushes() {
        let out = prepare_dialogues(
            &[
                u("A", 0.0, 1.0, "a"),
                u("A", 2.0, 3.0, "b"),
                u("A", 4.0, 5.0, "c"),
            ],
            40.0,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn over_long_cache_is_not_emitted() {
        let out = prepare_dialogues(
            &[
                u("A", 0.0, 30.0, "a"),
                u("B", 29.0, 45.0, "b"),
                u("A", 50.0, 51.0, "c"),
            ],
            40.0,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn serialization_rules() {
        assert_eq!(
            serialize_transcript(&[
                u("B", 0.5, 2.0, "i'm good"),
                u("A", 0.0, 1.0, "how are you")
            ]),
            "how are you [spkchange] i'm good"
        );
        assert_eq!(
            serialize_transcript(&[
                u("A", 0.0, 1.0, "hi"),
                u("A", 1.0, 2.0, "there"),
                u("B", 2.0, 3.0, "yo")
            ]),
            "hi there [spkchange] yo"
        );
        let laugh = Utterance {
            speaker: "B".into(),
            start: 1.0,
            end: 2.0,
            text: String::new(),
            laughter: vec![(1.0, 2.0)],
        };
        assert_eq!(
            serialize_transcript(&[u("A", 0.0, 1.0, "so"), laugh]),
            "so [spkchange] [laughter]"
        );
        let mid = u("A", 0.0, 4.0, "one two three four")
            .with_laughter(2.0, 3.0)
            .unwrap();
        assert_eq!(
            serialize_transcript(&[mid]),
            "one two [laughter] three four"
        );
        let end = u("A", 0.0, 4.0, "one two").with_laughter(4.0, 4.0).unwrap();
        assert_eq!(serialize_transcript(&[end]), "one two [laughter]");
    }
}
