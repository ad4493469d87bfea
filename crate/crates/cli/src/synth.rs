use std::path::{Path, PathBuf};

use covomix_core::acoustic::{
    prompted_conditioning, voice_convert, AcousticModel, AcousticVariant, OdeOptions,
};
use covomix_core::dsp::{
    griffin_lim, mel_spectrogram, mix_waveforms, read_mel, read_wav, write_mel, write_wav,
    MelConfig, MelSpectrogram, Waveform,
};
use covomix_core::nn::ParamStore;
use covomix_core::t2s::{Sampling, T2SModel, T2SVariant};
use covomix_core::tokenizer::{
    speech_to_semantic, tokenize_text, write_tokens, Codebook, SemanticTokenStream, SPKCHANGE,
};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{data, usage, CliResult};
use crate::train::{acoustic_run_dir, derive_rng, load_codebook, load_vocab, t2s_run_dir, BEST};

const STREAM_T2S: u64 = 10;
const STREAM_ODE: u64 = 11;
const STREAM_VOCODER: u64 = 12;

fn sub_seed(seed: u64, stream: u64) -> u64 {
    derive_rng(seed, stream, 0).gen()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub frames: usize,
    pub files: Vec<PathBuf>,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_params(path: &Path, what: &str) -> CliResult<ParamStore<f32>> {
    if !path.exists() {
        return data(format!(
            "{what} checkpoint {} missing; train it first",
            path.display()
        ));
    }
    Ok(ParamStore::load(path)?)
}

fn load_acoustic(
    cfg: &RunConfig,
    variant: Option<AcousticVariant>,
) -> CliResult<AcousticModel<f32>> {
    let v = variant.unwrap_or(cfg.acoustic_variant);
    let model = AcousticModel::from_params(load_params(
        &acoustic_run_dir(cfg, v).join(BEST),
        "acoustic",
    )?)?;
    if model.cfg.variant != v {
        return usage(format!(
            "checkpoint holds a {} model, {} requested",
            model.cfg.variant.name(),
            v.name()
        ));
    }
    Ok(model)
}

/// A prompt mel from a WAV (first channel) or a mel file.
pub fn load_prompt(path: &Path, mel_cfg: &MelConfig) -> CliResult<MelSpectrogram<f32>> {
    if !path.exists() {
        return usage(format!("prompt {} does not exist", path.display()));
    }
    if path.extension().is_some_and(|e| e == "mel") {
        Ok(read_mel(path)?)
    } else {
        let chans: Vec<Waveform<f32>> = read_wav(path)?;
        Ok(mel_spectrogram(&chans[0], mel_cfg)?)
    }
}

fn ode_options(cfg: &RunConfig) -> OdeOptions {
    OdeOptions {
        steps: cfg.steps,
        alpha: cfg.alpha,
        solver: cfg.solver,
        sigma_min: cfg.sigma_min,
    }
}

fn vocode(
    cfg: &RunConfig,
    mels: &[MelSpectrogram<f32>],
    mel_cfg: &MelConfig,
) -> CliResult<Vec<Waveform<f32>>> {
    let seed = sub_seed(cfg.seed, STREAM_VOCODER);
    mels.iter()
        .enumerate()
        .map(|(c, m)| {
            Ok(griffin_lim(
                m,
                mel_cfg,
                cfg.gl_iterations,
                seed.wrapping_add(c as u64),
            )?)
        })
        .collect()
}

/// Writes mels and audio: `<prefix>.wav` always holds the mixture;
/// per-channel outputs add `.ch<c>` files.
fn write_outputs(
    prefix: &Path,
    mels: &[MelSpectrogram<f32>],
    waves: &[Waveform<f32>],
    mixed_output: bool,
) -> CliResult<Vec<PathBuf>> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut files = Vec::new();
    for (c, (m, w)) in mels.iter().zip(waves).enumerate() {
        let tag = if mixed_output {
            String::new()
        } else {
            format!(".ch{c}")
        };
        let mp = with_suffix(prefix, &format!("{tag}.mel"));
        write_mel(&mp, m)?;
        files.push(mp);
        if !mixed_output {
            let wp = with_suffix(prefix, &format!("{tag}.wav"));
            write_wav(&wp, &[w])?;
            files.push(wp);
        }
    }
    let mut mix = waves[0].clone();
    for w in &waves[1..] {
        mix = mix_waveforms(&mix, w)?;
    }
    let wp = with_suffix(prefix, ".wav");
    write_wav(&wp, &[&mix])?;
    files.push(wp);
    Ok(files)
}

/// Text to dialogue audio: text-to-semantic generation, flow-matching mel
/// synthesis around per-speaker prompts, then Griffin-Lim.
///
/// `prompts[c]` is the voice of the c-th speaker in the text; a text with a
/// speaker change needs two.
pub fn cmd_synth(
    cfg: &RunConfig,
    text: &str,
    prompts: &[PathBuf],
    out_prefix: &Path,
    variant: Option<AcousticVariant>,
) -> CliResult<SynthReport> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let ids = tokenize_text(text, &vocab).ids;
    let needed = if ids.contains(&SPKCHANGE) { 2 } else { 1 };
    if prompts.len() < needed || prompts.len() > 2 {
        let names: Vec<String> = (1..=needed).map(|i| format!("speaker {i}")).collect();
        return usage(format!(
            "missing prompt: this text needs prompts for {} (got {})",
            names.join(" and "),
            prompts.len()
        ));
    }
    let cb = load_codebook(cfg)?;
    let mel_cfg = MelConfig::default();
    let t2s = T2SModel::<f32>::from_params(load_params(
        &t2s_run_dir(cfg, cfg.t2s_variant).join(BEST),
        "t2s",
    )?)?;
    let acoustic = load_acoustic(cfg, variant)?;

    let sampling = Sampling {
        temperature: cfg.temperature,
        seed: sub_seed(cfg.seed, STREAM_T2S),
    };
    let mut streams = t2s.generate(&ids, cfg.max_frames, sampling)?;
    if t2s.cfg.variant == T2SVariant::CoSingle {
        streams = streams.with_silence_stream(cb.silence_id);
    }
    let frames = streams.frames();
    let floor = cfg_floor(&mel_cfg);
    let mut prompt_mels = Vec::new();
    for c in 0..2 {
        let pm = match prompts.get(c) {
            Some(p) => load_prompt(p, &mel_cfg)?,
            None => MelSpectrogram::constant(1, mel_cfg.n_mels, floor),
        };
        let pt = speech_to_semantic(&pm, &cb)?.ids;
        prompt_mels.push((pm, pt));
    }
    if let Some(dir) = out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut files = Vec::new();
    for (c, s) in streams.streams.iter().enumerate() {
        let p = with_suffix(out_prefix, &format!(".ch{c}.semt"));
        write_tokens(&p, &SemanticTokenStream::new(s.clone(), cb.size())?)?;
        files.push(p);
    }
    let mels = generate_mels(
        &acoustic,
        &prompt_mels,
        &streams.streams,
        &cb,
        &ode_options(cfg),
        sub_seed(cfg.seed, STREAM_ODE),
    )?;
    let waves = vocode(cfg, &mels, &mel_cfg)?;
    files.extend(write_outputs(
        out_prefix,
        &mels,
        &waves,
        acoustic.cfg.variant == AcousticVariant::Mix,
    )?);
    Ok(SynthReport { frames, files })
}

fn cfg_floor(mel_cfg: &MelConfig) -> f32 {
    mel_cfg.log_floor() as f32
}

/// Mels for two token streams, prompt frames removed. The single-speaker
/// model renders each stream on its own.
fn generate_mels(
    model: &AcousticModel<f32>,
    prompts: &[(MelSpectrogram<f32>, Vec<usize>)],
    streams: &[Vec<usize>],
    cb: &Codebook<f32>,
    opts: &OdeOptions,
    seed: u64,
) -> CliResult<Vec<MelSpectrogram<f32>>> {
    let floor = cfg_floor(&MelConfig::default());
    let run = |chans: &[usize], seed: u64| -> CliResult<Vec<MelSpectrogram<f32>>> {
        let pr: Vec<(&MelSpectrogram<f32>, &[usize])> = chans
            .iter()
            .map(|&c| (&prompts[c].0, &prompts[c].1[..]))
            .collect();
        let toks: Vec<Vec<usize>> = chans.iter().map(|&c| streams[c].clone()).collect();
        let cond = prompted_conditioning(model.cfg.variant, &pr, &toks, floor, cb.silence_id)?;
        let p = cond.mask.iter().filter(|&&m| !m).count();
        model
            .ode_sample(&cond, opts, seed)?
            .into_iter()
            .map(|m| Ok(m.slice_frames(p, m.frames())?))
            .collect()
    };
    match model.cfg.variant {
        AcousticVariant::Single => {
            let mut out = Vec::new();
            for c in 0..streams.len() {
                out.extend(run(&[c], seed.wrapping_add(c as u64))?);
            }
            Ok(out)
        }
        AcousticVariant::Mix | AcousticVariant::Stereo => run(&[0, 1], seed),
    }
}

/// Re-voices a mono or stereo recording with the given per-channel prompts;
/// `None` marks a channel that is silent throughout.
pub fn cmd_vc(
    cfg: &RunConfig,
    source: &Path,
    prompts: &[Option<PathBuf>],
    out_prefix: &Path,
    variant: Option<AcousticVariant>,
) -> CliResult<SynthReport> {
    cfg.validate()?;
    if !source.exists() {
        return usage(format!("source {} does not exist", source.display()));
    }
    let channels: Vec<Waveform<f32>> = read_wav(source)?;
    if prompts.len() != channels.len() {
        return usage(format!(
            "{} channels in the source but {} prompts given",
            channels.len(),
            prompts.len()
        ));
    }
    let mut prompt_waves = Vec::new();
    for p in prompts {
        prompt_waves.push(match p {
            Some(p) if !p.exists() => {
                return usage(format!("prompt {} does not exist", p.display()))
            }
            Some(p) => Some(read_wav::<f32>(p)?.swap_remove(0)),
            None => None,
        });
    }
    let refs: Vec<Option<&Waveform<f32>>> = prompt_waves.iter().map(Option::as_ref).collect();
    let cb = load_codebook(cfg)?;
    let model = load_acoustic(cfg, variant)?;
    let mel_cfg = MelConfig::default();
    let out = voice_convert(
        &model,
        &cb,
        &channels,
        &refs,
        &mel_cfg,
        &ode_options(cfg),
        cfg.gl_iterations,
        sub_seed(cfg.seed, STREAM_ODE),
    )?;
    let frames = out.mels[0].frames();
    let files = write_outputs(
        out_prefix,
        &out.mels,
        &out.channels,
        model.cfg.variant == AcousticVariant::Mix,
    )?;
    Ok(SynthReport { frames, files })
}
