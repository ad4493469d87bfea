//! Deterministic toy conversational audio: each word is a short harmonic tone
//! whose partials follow the speaker's pitch and a word-specific formant
//! pattern, laid over a steady low-level hum whose period equals one mel hop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataprep::Utterance;
use crate::dsp::Waveform;

pub const TOY_SAMPLE_RATE: u32 = 8000;

pub const LEXICON: [&str; 12] = [
    "yes", "no", "okay", "right", "hello", "sure", "maybe", "well", "really", "thanks", "great",
    "so",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpeaker {
    pub name: String,
    pub f0: f64,
    /// Per-harmonic amplitude decay.
    pub tilt: f64,
}

/// Four speakers with distinct pitch and brightness.
pub fn toy_speakers() -> Vec<ToySpeaker> {
    [
        ("alice", 210.0, 0.80),
        ("bob", 115.0, 0.90),
        ("carol", 250.0, 0.75),
        ("dave", 140.0, 0.85),
    ]
    .iter()
    .map(|&(n, f0, tilt)| ToySpeaker {
        name: n.to_string(),
        f0,
        tilt,
    })
    .collect()
}

fn word_hash(word: &str) -> u64 {
    word.bytes().fold(1469598103934665603u64, |h, b| {
        (h ^ b as u64).wrapping_mul(1099511628211)
    })
}

/// Duration of a rendered word in seconds.
pub fn word_duration(word: &str) -> f64 {
    0.16 + 0.04 * (word_hash(word) % 3) as f64
}

fn envelope(n: usize, len: usize, ramp: usize) -> f64 {
    let r = ramp.min(len / 2).max(1);
    let x = if n < r {
        n as f64 / r as f64
    } else if n + r >= len {
        (len - n) as f64 / r as f64
    } else {
        1.0
    };
    0.5 - 0.5 * (std::f64::consts::PI * x).cos()
}

/// One word as a harmonic tone with two formant peaks set by the word.
pub fn render_word(word: &str, speaker: &ToySpeaker, sample_rate: u32) -> Vec<f64> {
    let h = word_hash(word);
    let f1 = 300.0 + (h % 7) as f64 * 90.0;
    let f2 = 1200.0 + ((h >> 8) % 9) as f64 * 230.0;
    let len = (word_duration(word) * sample_rate as f64).round() as usize;
    let nyq = sample_rate as f64 / 2.0;
    let harmonics: Vec<(f64, f64)> = (1..)
        .map(|k| k as f64 * speaker.f0)
        .take_while(|&f| f < nyq - 100.0)
        .enumerate()
        .map(|(k, f)| {
            let formant =
                (-((f - f1) / 180.0).powi(2)).exp() + 0.6 * (-((f - f2) / 260.0).powi(2)).exp();
            (f, speaker.tilt.powi(k as i32) * 0.3 + formant)
        })
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();
    let w = 2.0 * std::f64::consts::PI / sample_rate as f64;
    (0..len)
        .map(|n| {
            let s: f64 = harmonics
                .iter()
                .map(|&(f, a)| a * (w * f * n as f64).sin())
                .sum();
            0.35 * s / norm * envelope(n, len, 80)
        })
        .collect()
}

/// Laughter as three pulsed bursts at a raised pitch.
pub fn render_laughter(speaker: &ToySpeaker, duration: f64, sample_rate: u32) -> Vec<f64> {
    let len = (duration * sample_rate as f64).round() as usize;
    let f = speaker.f0 * 1.6;
    let w = 2.0 * std::f64::consts::PI / sample_rate as f64;
    (0..len)
        .map(|n| {
            let pulse = (std::f64::consts::PI * 6.0 * n as f64 / len as f64)
                .sin()
                .abs();
            let s = (w * f * n as f64).sin()
                + 0.5 * (w * 2.0 * f * n as f64).sin()
                + 0.25 * (w * 3.0 * f * n as f64).sin();
            0.2 * s * pulse * envelope(n, len, 80)
        })
        .collect()
}

/// One hop-length period of the background hum (harmonics of 50 Hz).
fn hum_period(sample_rate: u32) -> Vec<f64> {
    let period = (sample_rate / 50) as usize;
    let w = 2.0 * std::f64::consts::PI / period as f64;
    (0..period)
        .map(|n| {
            (1..period / 2)
                .map(|k| {
                    let phase = std::f64::consts::PI * (k * k) as f64 / (period / 2) as f64;
                    (w * (k * n) as f64 + phase).cos()
                })
                .sum::<f64>()
                * 4e-4
        })
        .collect()
}

/// A speaker turn as text plus the times it occupies.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTurn {
    pub speaker: usize,
    pub words: Vec<String>,
    pub laugh: bool,
    pub start: f64,
}

#[derive(Clone, Debug)]
pub struct ToyRecording {
    pub name: String,
    /// Speakers in channel order (sorted by name).
    pub speakers: Vec<ToySpeaker>,
    pub utterances: Vec<Utterance>,
    pub channels: Vec<Waveform<f64>>,
}

#[derive(Clone, Debug)]
pub struct ToyConfig {
    pub recordings: usize,
    pub turns: usize,
    pub max_words: usize,
    /// Inter-turn gap range in seconds; negative values overlap.
    pub gap: (f64, f64),
    /// Chance that a gap is a long pause splitting the recording.
    pub long_pause_prob: f64,
    pub laughter_prob: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            recordings: 4,
            turns: 12,
            max_words: 3,
            gap: (-0.1, 0.3),
            long_pause_prob: 0.25,
            laughter_prob: 0.15,
            seed: 0,
        }
    }
}

fn turn_span(t: &ToyTurn) -> f64 {
    let words: f64 = t.words.iter().map(|w| word_duration(w)).sum();
    words + if t.laugh { 0.3 } else { 0.0 }
}

/// Renders alternating turns between `pair` speakers into one channel each.
pub fn render_recording(
    name: &str,
    pair: [&ToySpeaker; 2],
    turns: &[ToyTurn],
    tail: f64,
) -> ToyRecording {
    let sr = TOY_SAMPLE_RATE;
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| pair[a].name.cmp(&pair[b].name));
    let end = turns
        .iter()
        .map(|t| t.start + turn_span(t))
        .fold(0.0, f64::max)
        + tail;
    let len = (end * sr as f64).ceil() as usize + 1;
    let hum = hum_period(sr);
    let mut chans: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..len).map(|n| hum[n % hum.len()]).collect())
        .collect();
    let mut utterances = Vec::new();
    for t in turns {
        let spk = pair[t.speaker];
        let ch = order.iter().position(|&o| o == t.speaker).unwrap();
        let mut pos = (t.start * sr as f64).round() as usize;
        for w in &t.words {
            for (k, s) in render_word(w, spk, sr).into_iter().enumerate() {
                chans[ch][pos + k] += s;
            }
            pos += (word_duration(w) * sr as f64).round() as usize;
        }
        let mut u = Utterance {
            speaker: spk.name.clone(),
            start: t.start,
            end: t.start + turn_span(t),
            text: t.words.join(" "),
            laughter: Vec::new(),
        };
        if t.laugh {
            let ls = pos as f64 / sr as f64;
            for (k, s) in render_laughter(spk, 0.3, sr).into_iter().enumerate() {
                chans[ch][pos + k] += s;
            }
            u.laughter.push((ls.min(u.end), u.end));
        }
        utterances.push(u);
    }
    ToyRecording {
        name: name.to_string(),
        speakers: order.iter().map(|&o| pair[o].clone()).collect(),
        utterances,
        channels: chans
            .into_iter()
            .map(|c| Waveform {
                samples: c.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
                sample_rate: sr,
            })
            .collect(),
    }
}

/// Seeded two-party recordings drawn from the four toy speakers.
pub fn toy_corpus(cfg: &ToyConfig) -> Vec<ToyRecording> {
    let speakers = toy_speakers();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.recordings)
        .map(|r| {
            let a = r % speakers.len();
            let b = (a + 1 + r / speakers.len()) % speakers.len();
            let b = if b == a { (a + 1) % speakers.len() } else { b };
            let mut t = 0.2;
            let mut turns = Vec::new();
            for k in 0..cfg.turns {
                let n = rng.gen_range(1..=cfg.max_words.max(1));
                let words = (0..n)
                    .map(|_| LEXICON[rng.gen_range(0..LEXICON.len())].to_string())
                    .collect();
                let laugh = rng.gen::<f64>() < cfg.laughter_prob;
                let turn = ToyTurn {
                    speaker: if rng.gen::<f64>() < 0.85 {
                        k % 2
                    } else {
                        (k + 1) % 2
                    },
                    words,
                    laugh,
                    start: t,
                };
                t += turn_span(&turn);
                t += if rng.gen::<f64>() < cfg.long_pause_prob {
                    rng.gen_range(0.8..1.5)
                } else {
                    rng.gen_range(cfg.gap.0..cfg.gap.1)
                };
                t = t.max(turn.start + 0.05);
                turns.push(turn);
            }
            render_recording(
                &format!("rec{r:03}"),
                [&speakers[a], &speakers[b]],
                &turns,
                0.2,
            )
        })
        .collect()
}

/// `n` brief exchanges of three one- or two-word turns, cycling through the
/// speaker pairs; small enough to memorise.
pub fn short_dialogues(n: usize, seed: u64) -> Vec<ToyRecording> {
    let speakers = toy_speakers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|d| {
            let (a, b) = (d % speakers.len(), (d + 1) % speakers.len());
            let mut t = 0.1;
            let mut turns = Vec::new();
            for k in 0..3 {
                let n = rng.gen_range(1..=2);
                let words: Vec<String> = (0..n)
                    .map(|_| LEXICON[rng.gen_range(0..LEXICON.len())].to_string())
                    .collect();
                let turn = ToyTurn {
                    speaker: k % 2,
                    words,
                    laugh: false,
                    start: t,
                };
                t += turn_span(&turn) + rng.gen_range(0.05..0.2);
                turns.push(turn);
            }
            render_recording(
                &format!("dlg{d:03}"),
                [&speakers[a], &speakers[b]],
                &turns,
                0.1,
            )
        })
        .collect()
}
