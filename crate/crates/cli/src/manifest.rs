//! JSON-lines manifests written by `prepare` and read by later commands.
//! Paths inside a manifest are relative to the work directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use covomix_core::dataprep::Utterance;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DIALOGUES: &str = "dialogues.jsonl";
pub const MONOLOGUES: &str = "monologues.jsonl";
pub const SIMULATED: &str = "simulated.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const CODEBOOK: &str = "codebook.cvmx";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    pub id: String,
    pub recording: String,
    /// Span in the source recording, seconds.
    pub start: f64,
    pub end: f64,
    /// Speakers in channel order.
    pub speakers: Vec<String>,
    pub text: String,
    /// Utterances with times relative to `start`.
    pub utterances: Vec<Utterance>,
    /// Stereo WAV of the two channels.
    pub audio: String,
    /// Per-channel mels.
    pub mels: Vec<String>,
    /// Mel of the mixed channels.
    pub mix_mel: String,
    /// Per-channel semantic tokens, filled in by `fit-codebook`.
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonologueEntry {
    pub id: String,
    pub recording: String,
    /// `long` or `short`, after the minimum duration it was cut with.
    pub kind: String,
    pub speaker: String,
    pub text: String,
    pub duration: f64,
    pub segments: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEntry {
    pub id: String,
    pub speakers: Vec<String>,
    pub text: String,
    pub duration: f64,
    /// `(monologue id, offset_s)` in playback order.
    pub placements: Vec<(String, f64)>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
