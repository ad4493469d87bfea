use std::fs;
use std::path::{Path, PathBuf};

use covomix_core::corpus::{short_dialogues, toy_corpus, ToyConfig, ToyRecording};
use covomix_core::dsp::write_wav;

use crate::error::CliResult;

/// Writes each recording as `<name>.jsonl` transcripts plus a stereo
/// `<name>.wav`, the layout `prepare` reads.
pub fn write_recordings(dir: &Path, recordings: &[ToyRecording]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for r in recordings {
        let mut lines = String::new();
        for u in &r.utterances {
            lines.push_str(&serde_json::to_string(u)?);
            lines.push('\n');
        }
        let t = dir.join(format!("{}.jsonl", r.name));
        fs::write(&t, lines)?;
        let w = dir.join(format!("{}.wav", r.name));
        let chans: Vec<_> = r.channels.iter().collect();
        write_wav(&w, &chans)?;
        files.push(t);
        files.push(w);
    }
    Ok(files)
}

/// Synthetic corpus: long multi-turn recordings, or `short` three-turn ones.
pub fn cmd_toy_corpus(
    dir: &Path,
    recordings: usize,
    seed: u64,
    short: bool,
) -> CliResult<Vec<PathBuf>> {
    let recs = if short {
        short_dialogues(recordings, seed)
    } else {
        toy_corpus(&ToyConfig {
            recordings,
            seed,
            ..Default::default()
        })
    };
    write_recordings(dir, &recs)
}
