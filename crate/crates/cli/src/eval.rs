//! Paired comparison of a hypothesis directory against a reference directory.
//!
//! Files pair by name. `.mel` / `.wav` pairs are scored with MCD-DTW,
//! `.jsonl` utterance annotations yield turn-taking and laughter statistics,
//! and `.json` files holding a list of embedding vectors yield consistency
//! matrices.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use covomix_core::dataprep::read_utterances;
use covomix_core::dialmetrics::{
    consistency_matrix, extract_turn_events, laughter_stats, mcd_dtw, turn_stats, EventKind,
    SpeakerSegments, TurnTakingEvents, MCD_ORDER,
};
use covomix_core::dsp::{
    mel_spectrogram, mix_waveforms, read_mel, read_wav, MelConfig, MelSpectrogram, Waveform,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{usage, CliError, CliResult};

pub const MCD_CSV: &str = "mcd.csv";
pub const TURNS_CSV: &str = "turns.csv";
pub const LAUGHTER_CSV: &str = "laughter.csv";
pub const HIST_CSV: &str = "histograms.csv";
pub const SUMMARY: &str = "summary.json";

const SIDES: [&str; 2] = ["hyp", "ref"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pairs: usize,
    pub unpaired: Vec<String>,
    pub mean_mcd: Option<f64>,
    pub files: Vec<PathBuf>,
}

impl EvalReport {
    /// Nonzero when nothing was compared or some file had no partner.
    pub fn exit_code(&self) -> i32 {
        if self.pairs == 0 || !self.unpaired.is_empty() {
            2
        } else {
            0
        }
    }
}

fn names(dir: &Path) -> CliResult<BTreeSet<String>> {
    if !dir.is_dir() {
        return usage(format!("{} is not a directory", dir.display()));
    }
    let mut out = BTreeSet::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_file() {
            out.insert(e.file_name().to_string_lossy().to_string());
        }
    }
    Ok(out)
}

fn ext(name: &str) -> &str {
    name.rsplit_once('.').map_or("", |(_, e)| e)
}

fn load_mel(path: &Path, cfg: &MelConfig) -> CliResult<MelSpectrogram<f64>> {
    if ext(&path.to_string_lossy()) == "mel" {
        return Ok(read_mel(path)?);
    }
    let chans: Vec<Waveform<f64>> = read_wav(path)?;
    let mut w = chans[0].clone();
    for c in &chans[1..] {
        w = mix_waveforms(&w, c)?;
    }
    Ok(mel_spectrogram(&w, cfg)?)
}

fn load_embeddings(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

struct Annotated {
    events: TurnTakingEvents,
    laughter: Vec<(f64, f64)>,
}

fn load_annotation(path: &Path) -> CliResult<Annotated> {
    let utts = read_utterances(path).map_err(|e| CliError::Data(e.to_string()))?;
    let segs = SpeakerSegments::from_utterances(&utts)?;
    Ok(Annotated {
        events: extract_turn_events(&segs)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        laughter: utts
            .iter()
            .flat_map(|u| u.laughter.iter().copied())
            .collect(),
    })
}

enum Scored {
    Mcd {
        ref_frames: usize,
        hyp_frames: usize,
        mcd: f64,
    },
    Turns([Annotated; 2]),
    Consistency([Vec<Vec<f64>>; 2]),
}

fn score(name: &str, hyp: &Path, reference: &Path, mel_cfg: &MelConfig) -> CliResult<Scored> {
    match ext(name) {
        "mel" | "wav" => {
            let h = load_mel(hyp, mel_cfg)?;
            let r = load_mel(reference, mel_cfg)?;
            Ok(Scored::Mcd {
                ref_frames: r.frames(),
                hyp_frames: h.frames(),
                mcd: mcd_dtw(&r, &h, MCD_ORDER)?,
            })
        }
        "jsonl" => Ok(Scored::Turns([
            load_annotation(hyp)?,
            load_annotation(reference)?,
        ])),
        _ => Ok(Scored::Consistency([
            consistency_matrix(&load_embeddings(hyp)?)?,
            consistency_matrix(&load_embeddings(reference)?)?,
        ])),
    }
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Scores every file pair and writes the CSV and JSON reports into `out_dir`.
pub fn cmd_eval(
    cfg: &RunConfig,
    hyp_dir: &Path,
    ref_dir: &Path,
    out_dir: &Path,
) -> CliResult<EvalReport> {
    cfg.validate()?;
    let hyp = names(hyp_dir)?;
    let reference = names(ref_dir)?;
    let known = |n: &String| matches!(ext(n), "mel" | "wav" | "jsonl" | "json");
    let paired: Vec<String> = hyp
        .intersection(&reference)
        .filter(|n| known(n))
        .cloned()
        .collect();
    let unpaired: Vec<String> = hyp
        .symmetric_difference(&reference)
        .filter(|n| known(n))
        .map(|n| {
            let side = if hyp.contains(n) { "hyp" } else { "ref" };
            format!("{side}/{n}")
        })
        .collect();
    for u in &unpaired {
        eprintln!("warning: unpaired file {u} skipped");
    }
    fs::create_dir_all(out_dir)?;
    let mel_cfg = MelConfig::default();
    let scored: Vec<CliResult<Scored>> = paired
        .par_iter()
        .map(|n| score(n, &hyp_dir.join(n), &ref_dir.join(n), &mel_cfg))
        .collect();

    let mut mcd_csv = String::from("name,ref_frames,hyp_frames,mcd_dtw\n");
    let mut turns_csv = String::from("name,side,kind,count,total_s\n");
    let mut laugh_csv = String::from("name,side,count,total_s\n");
    let mut mcds = Vec::new();
    let mut events: [Vec<TurnTakingEvents>; 2] = [Vec::new(), Vec::new()];
    let mut laughs: [Vec<Vec<(f64, f64)>>; 2] = [Vec::new(), Vec::new()];
    let mut files = Vec::new();
    let mut consistency = serde_json::Map::new();
    for (name, s) in paired.iter().zip(scored) {
        match s? {
            Scored::Mcd {
                ref_frames,
                hyp_frames,
                mcd,
            } => {
                let _ = writeln!(mcd_csv, "{name},{ref_frames},{hyp_frames},{mcd}");
                mcds.push(mcd);
            }
            Scored::Turns(sides) => {
                for (k, a) in sides.into_iter().enumerate() {
                    for kind in EventKind::ALL {
                        let ev = a.events.of_kind(kind);
                        let _ = writeln!(
                            turns_csv,
                            "{name},{},{},{},{}",
                            SIDES[k],
                            kind.name(),
                            ev.len(),
                            a.events.total(kind)
                        );
                    }
                    let total: f64 = a.laughter.iter().fold(0.0, |a, (s, e)| a + (e - s));
                    let _ = writeln!(
                        laugh_csv,
                        "{name},{},{},{total}",
                        SIDES[k],
                        a.laughter.len()
                    );
                    events[k].push(a.events);
                    laughs[k].push(a.laughter);
                }
            }
            Scored::Consistency(mats) => {
                let dir = out_dir.join("consistency");
                fs::create_dir_all(&dir)?;
                let mut entry = serde_json::Map::new();
                for (k, m) in mats.iter().enumerate() {
                    let p = dir.join(format!("{name}.{}.csv", SIDES[k]));
                    fs::write(&p, matrix_csv(m))?;
                    files.push(p);
                    entry.insert(SIDES[k].into(), json!(m));
                }
                consistency.insert(name.clone(), Value::Object(entry));
            }
        }
    }

    let mut hist_csv = String::from("side,kind,bin_lo,bin_hi,count\n");
    let mut turn_summary = serde_json::Map::new();
    let mut laugh_summary = serde_json::Map::new();
    for k in 0..2 {
        if events[k].is_empty() {
            continue;
        }
        let stats = turn_stats(&events[k], &cfg.hist_edges)?;
        let mut per_kind = serde_json::Map::new();
        for (kind, s) in &stats.kinds {
            for (b, c) in s.histogram.iter().enumerate() {
                let _ = writeln!(
                    hist_csv,
                    "{},{},{},{},{c}",
                    SIDES[k],
                    kind.name(),
                    stats.edges[b],
                    stats.edges[b + 1]
                );
            }
            per_kind.insert(
                kind.name().into(),
                json!({"count": s.count, "mean": s.mean, "median": s.median, "histogram": s.histogram}),
            );
        }
        turn_summary.insert(SIDES[k].into(), Value::Object(per_kind));
        let l = laughter_stats(&laughs[k])?;
        laugh_summary.insert(
            SIDES[k].into(),
            json!({"count": l.count, "mean_duration": l.mean_duration, "defined": l.defined}),
        );
    }
    let mean_mcd = (!mcds.is_empty()).then(|| mcds.iter().sum::<f64>() / mcds.len() as f64);
    let summary = json!({
        "pairs": paired.len(),
        "unpaired": unpaired,
        "mcd_dtw": {"count": mcds.len(), "mean": mean_mcd},
        "turn_taking": turn_summary,
        "histogram_edges": cfg.hist_edges,
        "laughter": laugh_summary,
        "consistency": consistency,
    });
    for (name, body) in [
        (MCD_CSV, mcd_csv),
        (TURNS_CSV, turns_csv),
        (LAUGHTER_CSV, laugh_csv),
        (HIST_CSV, hist_csv),
        (SUMMARY, serde_json::to_string_pretty(&summary)? + "\n"),
    ] {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        files.push(p);
    }
    Ok(EvalReport {
        pairs: paired.len(),
        unpaired,
        mean_mcd,
        files,
    })
}
