use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use covomix_core::dataprep::{
    prepare_dialogues, read_utterances, simulate_dialogues, slice_monologues, MonologueSample,
    SimConfig, Utterance,
};
use covomix_core::dsp::{
    mel_spectrogram, mix_waveforms, read_wav, write_mel, write_wav, MelConfig, Waveform,
};
use covomix_core::tokenizer::Vocab;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{data, usage, CliError, CliResult};
use crate::manifest::{
    write_jsonl, DialogueEntry, MonologueEntry, SimulatedEntry, DIALOGUES, MONOLOGUES, SIMULATED,
    VOCAB,
};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepareReport {
    pub recordings: usize,
    pub utterances: usize,
    pub dialogues: usize,
    pub dialogue_seconds: f64,
    pub long_monologues: usize,
    pub short_monologues: usize,
    pub simulated: usize,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for PrepareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "recordings        {}", self.recordings)?;
        writeln!(f, "utterances        {}", self.utterances)?;
        writeln!(
            f,
            "dialogues         {} ({:.2} s)",
            self.dialogues, self.dialogue_seconds
        )?;
        writeln!(f, "long monologues   {}", self.long_monologues)?;
        writeln!(f, "short monologues  {}", self.short_monologues)?;
        write!(f, "simulated         {}", self.simulated)
    }
}

struct Recording {
    dialogues: Vec<DialogueEntry>,
    monologues: Vec<(MonologueEntry, MonologueSample)>,
    utterances: usize,
    warnings: Vec<String>,
}

/// Transcript files in `dir`, sorted by name.
pub fn list_transcripts(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "jsonl") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn relative(u: &Utterance, origin: f64) -> Utterance {
    Utterance {
        start: u.start - origin,
        end: u.end - origin,
        laughter: u
            .laughter
            .iter()
            .map(|(a, b)| (a - origin, b - origin))
            .collect(),
        ..u.clone()
    }
}

fn prepare_recording(path: &Path, cfg: &RunConfig, mel_cfg: &MelConfig) -> CliResult<Recording> {
    let stem = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .to_string();
    let utts = read_utterances(path).map_err(|e| CliError::Data(e.to_string()))?;
    let wav_path = path.with_extension("wav");
    if !wav_path.exists() {
        return data(format!(
            "{} has no matching {}",
            path.display(),
            wav_path.display()
        ));
    }
    let channels: Vec<Waveform<f64>> = read_wav(&wav_path)?;
    let speakers: Vec<String> = utts
        .iter()
        .map(|u| u.speaker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() > channels.len() {
        return data(format!(
            "{}: {} speakers but {} audio channels",
            stem,
            speakers.len(),
            channels.len()
        ));
    }
    let mut warnings = Vec::new();
    let mut dialogues = Vec::new();
    for (k, s) in prepare_dialogues(&utts, cfg.max_duration)
        .into_iter()
        .enumerate()
    {
        let id = format!("{stem}-{k:03}");
        if s.speakers.len() != 2 {
            warnings.push(format!(
                "{id}: {} speakers, only two-party dialogues are kept",
                s.speakers.len()
            ));
            continue;
        }
        let chans: Vec<Waveform<f64>> = s
            .speakers
            .iter()
            .map(|sp| {
                let c = speakers
                    .iter()
                    .position(|x| x == sp)
                    .expect("speaker listed");
                channels[c].slice_seconds(s.start_s, s.end_s)
            })
            .collect();
        let audio = format!("audio/{id}.wav");
        write_wav(&cfg.work(&audio), &[&chans[0], &chans[1]])?;
        let mut mels = Vec::new();
        for (c, w) in chans.iter().enumerate() {
            let rel = format!("mels/{id}.ch{c}.mel");
            write_mel(&cfg.work(&rel), &mel_spectrogram(w, mel_cfg)?.cast::<f32>())?;
            mels.push(rel);
        }
        let mix_mel = format!("mels/{id}.mix.mel");
        let mixed = mix_waveforms(&chans[0], &chans[1])?;
        write_mel(
            &cfg.work(&mix_mel),
            &mel_spectrogram(&mixed, mel_cfg)?.cast::<f32>(),
        )?;
        dialogues.push(DialogueEntry {
            recording: stem.clone(),
            start: s.start_s,
            end: s.end_s,
            speakers: s.speakers.clone(),
            text: s.serialized_text.clone(),
            utterances: s
                .utterances
                .iter()
                .map(|u| relative(u, s.start_s))
                .collect(),
            audio,
            mels,
            mix_mel,
            tokens: (0..2).map(|c| format!("tokens/{id}.ch{c}.semt")).collect(),
            id,
        });
    }
    let mut monologues = Vec::new();
    for (kind, min) in [
        ("long", cfg.min_long_monologue),
        ("short", cfg.min_short_monologue),
    ] {
        for (k, m) in slice_monologues(&utts, min).into_iter().enumerate() {
            let entry = MonologueEntry {
                id: format!("{stem}-{kind}-{k:03}"),
                recording: stem.clone(),
                kind: kind.into(),
                speaker: m.speaker.clone(),
                text: m.text.clone(),
                duration: m.duration_s(),
                segments: m.segments.clone(),
            };
            monologues.push((entry, m));
        }
    }
    Ok(Recording {
        dialogues,
        monologues,
        utterances: utts.len(),
        warnings,
    })
}

/// Segments every recording in `data_dir` into dialogues and monologues,
/// writes per-dialogue audio and mels, the manifests and the text vocabulary.
pub fn cmd_prepare(cfg: &RunConfig) -> CliResult<PrepareReport> {
    cfg.validate()?;
    if !cfg.data_dir.is_dir() {
        return usage(format!(
            "data directory {} does not exist",
            cfg.data_dir.display()
        ));
    }
    for sub in ["audio", "mels", "tokens"] {
        fs::create_dir_all(cfg.work(sub))?;
    }
    let mel_cfg = MelConfig::default();
    let files = list_transcripts(&cfg.data_dir)?;
    let recs: Vec<CliResult<Recording>> = files
        .par_iter()
        .map(|p| prepare_recording(p, cfg, &mel_cfg))
        .collect();
    let mut report = PrepareReport {
        recordings: files.len(),
        ..Default::default()
    };
    if files.is_empty() {
        report
            .warnings
            .push(format!("no transcripts in {}", cfg.data_dir.display()));
    }
    let mut dialogues = Vec::new();
    let mut monologues = Vec::new();
    for r in recs {
        let r = r?;
        report.utterances += r.utterances;
        report.warnings.extend(r.warnings);
        dialogues.extend(r.dialogues);
        monologues.extend(r.monologues);
    }
    report.dialogues = dialogues.len();
    report.dialogue_seconds = dialogues.iter().map(|d| d.end - d.start).sum();
    report.long_monologues = monologues.iter().filter(|(e, _)| e.kind == "long").count();
    report.short_monologues = monologues.len() - report.long_monologues;

    let short: Vec<&(MonologueEntry, MonologueSample)> = monologues
        .iter()
        .filter(|(e, _)| e.kind == "short")
        .collect();
    let pool: Vec<MonologueSample> = short.iter().map(|(_, m)| m.clone()).collect();
    let speakers: BTreeSet<&str> = pool.iter().map(|m| m.speaker.as_str()).collect();
    let mut simulated = Vec::new();
    if speakers.len() >= 2 {
        let sim_cfg = SimConfig {
            turns: cfg.sim_turns,
            gap_min_s: cfg.sim_gap_min,
            gap_max_s: cfg.sim_gap_max,
        };
        for (k, s) in simulate_dialogues(&pool, cfg.seed, &sim_cfg)?
            .into_iter()
            .enumerate()
        {
            simulated.push(SimulatedEntry {
                id: format!("sim-{k:03}"),
                speakers: s.sample.speakers.clone(),
                text: s.sample.serialized_text.clone(),
                duration: s.sample.duration_s(),
                placements: s
                    .placements
                    .iter()
                    .map(|&(i, t)| (short[i].0.id.clone(), t))
                    .collect(),
            });
        }
    } else if !files.is_empty() {
        report
            .warnings
            .push("fewer than two speakers: no simulated dialogues".into());
    }
    report.simulated = simulated.len();

    let texts = dialogues
        .iter()
        .map(|d| d.text.as_str())
        .chain(monologues.iter().map(|(e, _)| e.text.as_str()));
    Vocab::build(texts).save(&cfg.work(VOCAB))?;
    write_jsonl(&cfg.work(DIALOGUES), &dialogues)?;
    let mono_entries: Vec<&MonologueEntry> = monologues.iter().map(|(e, _)| e).collect();
    write_jsonl(&cfg.work(MONOLOGUES), &mono_entries)?;
    write_jsonl(&cfg.work(SIMULATED), &simulated)?;
    Ok(report)
}
