use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MelSpectrogram, Waveform};
use crate::error::{arg_err, Error, Result};
use crate::nn::Tensor;
use crate::Scalar;

pub const MEL_MAGIC: &[u8; 4] = b"MELF";
pub const MEL_VERSION: u32 = 1;

/// Writes one or more equal-rate channels as interleaved 16-bit PCM. Shorter
/// channels are zero-padded.
pub fn write_wav<T: Scalar>(path: &Path, channels: &[&Waveform<T>]) -> Result<()> {
    let Some(first) = channels.first() else {
        return arg_err("no channels to write");
    };
    if channels.iter().any(|c| c.sample_rate != first.sample_rate) {
        return arg_err("channels have different sample rates");
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: first.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let len = channels.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut w = hound::WavWriter::create(path, spec)?;
    for i in 0..len {
        for c in channels {
            let x = c.samples.get(i).map(|x| x.to_f64_lossy()).unwrap_or(0.0);
            w.write_sample((x.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads a 16-bit PCM file into one waveform per channel.
pub fn read_wav<T: Scalar>(path: &Path) -> Result<Vec<Waveform<T>>> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let n = spec.channels as usize;
    let mut chans = vec![Vec::new(); n];
    for (i, s) in r.samples::<i16>().enumerate() {
        chans[i % n].push(T::lit(s? as f64 / 32768.0));
    }
    chans
        .into_iter()
        .map(|c| Waveform::new(c, spec.sample_rate))
        .collect()
}

pub fn write_mel<T: Scalar>(path: &Path, mel: &MelSpectrogram<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MEL_MAGIC)?;
    w.write_all(&MEL_VERSION.to_le_bytes())?;
    w.write_all(&(mel.frames() as u32).to_le_bytes())?;
    w.write_all(&(mel.n_mels() as u32).to_le_bytes())?;
    w.write_all(&mel.frame_shift_ms.to_le_bytes())?;
    for v in mel.values.data() {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mel<T: Scalar>(path: &Path) -> Result<MelSpectrogram<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != MEL_MAGIC {
        return Err(bad("not a MELF file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != MEL_VERSION {
        return Err(bad(&format!("unsupported version {}", word(4))));
    }
    let (frames, n_mels) = (word(8) as usize, word(12) as usize);
    let shift = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if bytes.len() != 20 + 4 * frames * n_mels {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let mut mel = MelSpectrogram::new(Tensor::matrix(frames, n_mels, data)?)?;
    mel.frame_shift_ms = shift;
    Ok(mel)
}
