use covomix_core::dsp::{read_mel, MelSpectrogram};
use covomix_core::tokenizer::{fit_codebook, speech_to_semantic, write_tokens, KMeansConfig};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{data, CliResult};
use crate::manifest::{read_jsonl, DialogueEntry, CODEBOOK, DIALOGUES};

#[derive(Clone, Debug, PartialEq)]
pub struct CodebookReport {
    pub frames: usize,
    pub size: usize,
    pub iterations: usize,
    pub objective: f64,
    pub silence_id: usize,
}

pub fn load_dialogues(cfg: &RunConfig) -> CliResult<Vec<DialogueEntry>> {
    let path = cfg.work(DIALOGUES);
    if !path.exists() {
        return data(format!("{} missing; run prepare first", path.display()));
    }
    read_jsonl(&path)
}

/// Fits the k-means codebook on every channel mel of the prepared dialogues
/// and writes each channel's token file.
pub fn cmd_fit_codebook(cfg: &RunConfig) -> CliResult<CodebookReport> {
    cfg.validate()?;
    let dialogues = load_dialogues(cfg)?;
    let paths: Vec<&String> = dialogues.iter().flat_map(|d| &d.mels).collect();
    let mels: Vec<MelSpectrogram<f32>> = paths
        .par_iter()
        .map(|p| read_mel(&cfg.work(p)))
        .collect::<Result<_, _>>()?;
    let frames: usize = mels.iter().map(MelSpectrogram::frames).sum();
    if frames < cfg.codebook_size {
        return data(format!(
            "{frames} mel frames cannot seed {} centroids",
            cfg.codebook_size
        ));
    }
    let km = KMeansConfig {
        max_iters: cfg.kmeans_iters,
        ..Default::default()
    };
    let fit = fit_codebook(&mels, cfg.codebook_size, cfg.seed, &km)?;
    fit.codebook.save(&cfg.work(CODEBOOK))?;
    let token_paths: Vec<&String> = dialogues.iter().flat_map(|d| &d.tokens).collect();
    token_paths.par_iter().zip(&mels).try_for_each(|(p, m)| {
        write_tokens(&cfg.work(p), &speech_to_semantic(m, &fit.codebook)?)
    })?;
    Ok(CodebookReport {
        frames,
        size: cfg.codebook_size,
        iterations: fit.iterations,
        objective: fit.objective.last().copied().unwrap_or(0.0),
        silence_id: fit.codebook.silence_id,
    })
}
