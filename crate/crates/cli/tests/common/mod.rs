#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use covomix_cli::prepare::cmd_prepare;
use covomix_cli::quantize::cmd_fit_codebook;
use covomix_cli::toy::write_recordings;
use covomix_cli::RunConfig;
use covomix_core::corpus::ToyRecording;
use covomix_core::dataprep::Utterance;

/// Tiny models and short runs rooted in `root`.
pub fn small_cfg(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data_dir = root.join("data");
    cfg.work_dir = root.join("work");
    cfg.apply_overrides(&[
        "codebook_size=16".into(),
        "kmeans_iters=20".into(),
        "t2s_enc_dim=16".into(),
        "t2s_dec_dim=16".into(),
        "t2s_enc_layers=1".into(),
        "t2s_dec_layers=1".into(),
        "ac_dim=16".into(),
        "ac_layers=1".into(),
        "ac_sem_dim=8".into(),
        "ac_time_dim=8".into(),
        "epochs=2".into(),
        "lr=1e-3".into(),
        "steps=4".into(),
        "max_frames=40".into(),
        "gl_iterations=4".into(),
    ])
    .unwrap();
    cfg
}

/// Writes `recs` into the data dir, then prepares and tokenizes them.
pub fn prepared(cfg: &RunConfig, recs: &[ToyRecording]) {
    write_recordings(&cfg.data_dir, recs).unwrap();
    cmd_prepare(cfg).unwrap();
    cmd_fit_codebook(cfg).unwrap();
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// Straight-line trace of the dialogue segmentation: returns the emitted
/// (first utterance index, last utterance index) spans over the
/// chronologically sorted input.
pub fn segmentation_oracle(utts: &[Utterance], max_duration: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&utts[a], &utts[b]);
        x.start
            .partial_cmp(&y.start)
            .unwrap()
            .then(x.speaker.cmp(&y.speaker))
            .then(x.end.partial_cmp(&y.end).unwrap())
    });
    let mut out = Vec::new();
    let mut cache: Vec<usize> = Vec::new();
    for &i in &order {
        if cache.is_empty() {
            cache.push(i);
            continue;
        }
        let mut first_start = f64::INFINITY;
        let mut last_end = f64::NEG_INFINITY;
        let mut speakers: Vec<&str> = Vec::new();
        for &j in &cache {
            if utts[j].start < first_start {
                first_start = utts[j].start;
            }
            if utts[j].end > last_end {
                last_end = utts[j].end;
            }
            if !speakers.contains(&utts[j].speaker.as_str()) {
                speakers.push(&utts[j].speaker);
            }
        }
        if utts[i].start > last_end && speakers.len() > 1 {
            if last_end - first_start <= max_duration {
                out.push(cache.clone());
            }
            cache = vec![i];
        } else if last_end - first_start > max_duration {
            cache.clear();
        } else {
            cache.push(i);
        }
    }
    out
}
