use super::flow::OdeOptions;
use super::model::{prompted_conditioning, AcousticModel, AcousticVariant};
use crate::dsp::{
    griffin_lim, mel_spectrogram, mix_waveforms, MelConfig, MelSpectrogram, Waveform,
};
use crate::error::{arg_err, Result};
use crate::tokenizer::{speech_to_semantic, Codebook};
use crate::Scalar;

pub struct VcOutput<T> {
    /// Generated mels without the prompt frames.
    pub mels: Vec<MelSpectrogram<T>>,
    /// Per-channel waveforms (one entry for the mixed-output model).
    pub channels: Vec<Waveform<T>>,
    pub mixed: Waveform<T>,
}

/// Re-voices each source channel with the matching target prompt: the source
/// is reduced to semantic tokens and re-synthesised around the prompt mel.
///
/// The single-speaker model converts channels one at a time and mixes the
/// results; the two-speaker models convert both channels in one pass. A
/// channel that is silence throughout may omit its prompt.
#[allow(clippy::too_many_arguments)]
pub fn voice_convert<T: Scalar>(
    model: &AcousticModel<T>,
    codebook: &Codebook<T>,
    source: &[Waveform<T>],
    prompts: &[Option<&Waveform<T>>],
    mel_cfg: &MelConfig,
    opts: &OdeOptions,
    gl_iterations: usize,
    seed: u64,
) -> Result<VcOutput<T>> {
    if source.is_empty() || source.len() != prompts.len() {
        return arg_err("need one prompt slot per source channel");
    }
    let variant = model.cfg.variant;
    if variant != AcousticVariant::Single && source.len() != 2 {
        return arg_err(format!(
            "the {} model converts exactly two channels",
            variant.name()
        ));
    }
    let floor = T::lit(mel_cfg.log_floor());
    let silence = codebook.silence_id;
    let mut tokens = Vec::new();
    let mut prompt_mels = Vec::new();
    for (c, (src, prompt)) in source.iter().zip(prompts).enumerate() {
        let mel = mel_spectrogram(src, mel_cfg)?;
        let tk = speech_to_semantic(&mel, codebook)?.ids;
        let active = tk.iter().any(|&t| t != silence);
        let pm = match prompt {
            Some(p) => mel_spectrogram(p, mel_cfg)?,
            None if !active => MelSpectrogram::constant(1, mel_cfg.n_mels, floor),
            None => return arg_err(format!("channel {c} has speech but no target prompt")),
        };
        let ptk = speech_to_semantic(&pm, codebook)?.ids;
        tokens.push(tk);
        prompt_mels.push((pm, ptk));
    }
    if tokens.iter().any(|t| t.len() != tokens[0].len()) {
        return arg_err("source channels differ in length");
    }

    let mut mels = Vec::new();
    let mut run = |channels: &[usize], seed: u64| -> Result<()> {
        let prompts: Vec<(&MelSpectrogram<T>, &[usize])> = channels
            .iter()
            .map(|&c| (&prompt_mels[c].0, &prompt_mels[c].1[..]))
            .collect();
        let toks: Vec<Vec<usize>> = channels.iter().map(|&c| tokens[c].clone()).collect();
        let cond = prompted_conditioning(variant, &prompts, &toks, floor, silence)?;
        let p = cond.mask.iter().filter(|&&m| !m).count();
        for m in model.ode_sample(&cond, opts, seed)? {
            mels.push(m.slice_frames(p, m.frames())?);
        }
        Ok(())
    };
    match variant {
        AcousticVariant::Single => {
            for c in 0..source.len() {
                run(&[c], seed.wrapping_add(c as u64))?;
            }
        }
        AcousticVariant::Mix | AcousticVariant::Stereo => run(&[0, 1], seed)?,
    }
    let channels = mels
        .iter()
        .enumerate()
        .map(|(i, m)| {
            griffin_lim(
                m,
                mel_cfg,
                gl_iterations,
                seed.wrapping_add(1000 + i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mixed = channels[0].clone();
    for w in &channels[1..] {
        mixed = mix_waveforms(&mixed, w)?;
    }
    Ok(VcOutput {
        mels,
        channels,
        mixed,
    })
}
