use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dialogue::{serialize_transcript, DialogueSample};
use super::utterance::{chrono_cmp, Utterance};
use crate::error::{arg_err, Result};

/// Consecutive turns of one speaker concatenated into a single clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonologueSample {
    pub speaker: String,
    pub text: String,
    /// Source spans `(start_s, end_s)` in recording time, in playback order.
    pub segments: Vec<(f64, f64)>,
}

impl MonologueSample {
    pub fn duration_s(&self) -> f64 {
        self.segments.iter().map(|(a, b)| b - a).sum()
    }
}

/// Per speaker, concatenates that speaker's utterances in time order until the
/// clip reaches `min_duration`; a final shortfall is dropped.
pub fn slice_monologues(utterances: &[Utterance], min_duration: f64) -> Vec<MonologueSample> {
    let mut by_speaker: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        by_speaker.entry(&u.speaker).or_default().push(u);
    }
    let mut out = Vec::new();
    for (speaker, mut utts) in by_speaker {
        utts.sort_by(|a, b| chrono_cmp(a, b));
        let mut acc: Vec<Utterance> = Vec::new();
        let mut dur = 0.0;
        for u in utts {
            dur += u.duration();
            acc.push(u.clone());
            if dur >= min_duration {
                out.push(MonologueSample {
                    speaker: speaker.to_string(),
                    text: serialize_transcript(&acc),
                    segments: acc.iter().map(|u| (u.start, u.end)).collect(),
                });
                acc.clear();
                dur = 0.0;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    /// Monologues per simulated dialogue, alternating between two speakers.
    pub turns: usize,
    pub gap_min_s: f64,
    pub gap_max_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            turns: 2,
            gap_min_s: 0.2,
            gap_max_s: 1.0,
        }
    }
}

/// A dialogue assembled from monologues on a fresh timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDialogue {
    pub sample: DialogueSample,
    /// `(monologue index, offset_s)` for each turn.
    pub placements: Vec<(usize, f64)>,
}

/// Builds alternating two-speaker dialogues by concatenating monologues with
/// seeded gaps. Each monologue is used at most once.
pub fn simulate_dialogues(
    monologues: &[MonologueSample],
    seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<SimulatedDialogue>> {
    if cfg.turns < 2 || !(cfg.gap_min_s >= 0.0 && cfg.gap_min_s <= cfg.gap_max_s) {
        return arg_err("simulation needs at least two turns and 0 <= gap_min <= gap_max");
    }
    let mut pools: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in monologues.iter().enumerate() {
        pools.entry(&m.speaker).or_default().push(i);
    }
    if pools.len() < 2 {
        return arg_err("simulated dialogues need monologues from at least two speakers");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in pools.values_mut() {
        p.shuffle(&mut rng);
    }
    let mut out = Vec::new();
    loop {
        // The two speakers with the most unused monologues, ties by id.
        let mut order: Vec<(&str, usize)> = pools.iter().map(|(s, p)| (*s, p.len())).collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if order.len() < 2 || order[1].1 == 0 {
            break;
        }
        let pair = [order[0].0, order[1].0];
        let mut placements = Vec::new();
        let mut utts = Vec::new();
        let mut t = 0.0;
        for turn in 0..cfg.turns {
            let Some(idx) = pools.get_mut(pair[turn % 2]).unwrap().pop() else {
                break;
            };
            if turn > 0 {
                t += rng.gen_range(cfg.gap_min_s..=cfg.gap_max_s);
            }
            let m = &monologues[idx];
            let d = m.duration_s();
            placements.push((idx, t));
            utts.push(Utterance {
                speaker: m.speaker.clone(),
                start: t,
                end: t + d,
                text: m.text.clone(),
                laughter: Vec::new(),
            });
            t += d;
        }
        out.push(SimulatedDialogue {
            sample: DialogueSample::from_utterances(utts),
            placements,
        });
    }
    Ok(out)
}
