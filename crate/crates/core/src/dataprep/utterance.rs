use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// One speaker turn with its time span and any laughter inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub laughter: Vec<(f64, f64)>,
}

impl Utterance {
    pub fn new(
        speaker: impl Into<String>,
        start: f64,
        end: f64,
        text: impl Into<String>,
    ) -> Result<Self> {
        let u = Self {
            speaker: speaker.into(),
            start,
            end,
            text: text.into(),
            laughter: Vec::new(),
        };
        u.validate()?;
        Ok(u)
    }

    pub fn with_laughter(mut self, start: f64, end: f64) -> Result<Self> {
        self.laughter.push((start, end));
        self.validate()?;
        Ok(self)
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite()
            && self.end.is_finite()
            && self.start >= 0.0
            && self.start < self.end)
        {
            return arg_err(format!(
                "utterance span [{}, {}] is not increasing",
                self.start, self.end
            ));
        }
        for &(s, e) in &self.laughter {
            if !(s <= e && s >= self.start && e <= self.end) {
                return arg_err(format!(
                    "laughter [{s}, {e}] outside utterance [{}, {}]",
                    self.start, self.end
                ));
            }
        }
        if self.text.trim().is_empty() && self.laughter.is_empty() {
            return arg_err("utterance has neither text nor laughter");
        }
        Ok(())
    }
}

/// Order by start time, then speaker id, then end time.
pub(crate) fn chrono_cmp(a: &Utterance, b: &Utterance) -> Ordering {
    a.start
        .total_cmp(&b.start)
        .then_with(|| a.speaker.cmp(&b.speaker))
        .then_with(|| a.end.total_cmp(&b.end))
}

pub fn sort_chronological(utts: &mut [Utterance]) {
    utts.sort_by(chrono_cmp);
}

/// Reads one JSON utterance per non-blank line.
pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let located = |message: String| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let u: Utterance = serde_json::from_str(line).map_err(|e| located(e.to_string()))?;
        u.validate().map_err(|e| located(e.to_string()))?;
        out.push(u);
    }
    Ok(out)
}
