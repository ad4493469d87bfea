//! Signal-processing front-end: log-mel extraction, mel-cepstra, mixing,
//! Griffin-Lim resynthesis and the WAV / `MELF` file formats.

mod cepstrum;
mod griffin_lim;
mod io;
mod mel;

pub use cepstrum::{dct_ortho, idct_ortho, mel_cepstra, DctBasis, MCD_SCALE};
pub use griffin_lim::griffin_lim;
pub use io::{read_mel, read_wav, write_mel, write_wav, MEL_MAGIC, MEL_VERSION};
pub use mel::{hz_to_mel, mel_filter_centers, mel_spectrogram, mel_to_hz, MelExtractor};

use crate::error::{arg_err, Result};
use crate::nn::Tensor;
use crate::Scalar;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return arg_err("sample rate must be positive");
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return arg_err("waveform holds non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![T::zero(); len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `start_s..end_s`, zero-padded past the end.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> Self {
        let sr = self.sample_rate as f64;
        let a = (start_s * sr).round().max(0.0) as usize;
        let b = (end_s * sr).round().max(0.0) as usize;
        let samples = (a..b.max(a))
            .map(|i| self.samples.get(i).copied().unwrap_or_else(T::zero))
            .collect();
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Elementwise sum of two waveforms, the shorter zero-padded, clamped to `[-1, 1]`.
pub fn mix_waveforms<T: Scalar>(a: &Waveform<T>, b: &Waveform<T>) -> Result<Waveform<T>> {
    if a.sample_rate != b.sample_rate {
        return arg_err(format!(
            "cannot mix {} Hz with {} Hz audio",
            a.sample_rate, b.sample_rate
        ));
    }
    let n = a.len().max(b.len());
    let at = |w: &Waveform<T>, i: usize| w.samples.get(i).copied().unwrap_or_else(T::zero);
    let samples = (0..n)
        .map(|i| (at(a, i) + at(b, i)).max(-T::one()).min(T::one()))
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: a.sample_rate,
    })
}

/// Feature-extraction settings. The frame shift is pinned to 20 ms so one mel
/// frame lines up with one semantic token.
#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub power_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            n_fft: 512,
            win_length: 400,
            hop: 160,
            n_mels: 80,
            f_min: 0.0,
            f_max: 4000.0,
            power_floor: 1e-10,
        }
    }
}

pub const FRAME_SHIFT_MS: f64 = 20.0;

impl MelConfig {
    pub fn frame_shift_ms(&self) -> f64 {
        self.hop as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.n_mels == 0 {
            return arg_err("sample rate, hop and mel count must be positive");
        }
        if self.hop as u64 * 1000 != FRAME_SHIFT_MS as u64 * self.sample_rate as u64 {
            return arg_err(format!(
                "hop of {} samples at {} Hz is not a 20 ms frame shift",
                self.hop, self.sample_rate
            ));
        }
        if self.win_length > self.n_fft || self.win_length < self.hop {
            return arg_err("window must fit the FFT and cover at least one hop");
        }
        if !(self.f_min >= 0.0
            && self.f_min < self.f_max
            && self.f_max <= self.sample_rate as f64 / 2.0)
        {
            return arg_err("mel band edges must satisfy 0 <= f_min < f_max <= Nyquist");
        }
        if !(self.power_floor > 0.0) {
            return arg_err("power floor must be positive");
        }
        Ok(())
    }

    pub fn log_floor(&self) -> f64 {
        self.power_floor.ln()
    }

    /// `floor((len − window) / hop) + 1`, or 0 when shorter than one window.
    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.win_length {
            0
        } else {
            (samples - self.win_length) / self.hop + 1
        }
    }

    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win_length
        }
    }
}

/// Log-mel matrix, `frames × n_mels`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram<T> {
    pub values: Tensor<T>,
    pub frame_shift_ms: f32,
}

impl<T: Scalar> MelSpectrogram<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.shape().len() != 2 {
            return arg_err("mel values must be a matrix");
        }
        if !values.is_finite() {
            return arg_err("mel values must be finite");
        }
        Ok(Self {
            values,
            frame_shift_ms: FRAME_SHIFT_MS as f32,
        })
    }

    /// `frames` copies of a constant row.
    pub fn constant(frames: usize, n_mels: usize, value: T) -> Self {
        Self {
            values: Tensor::full(&[frames, n_mels], value),
            frame_shift_ms: FRAME_SHIFT_MS as f32,
        }
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            values: self.values.slice_rows(start, end)?,
            frame_shift_ms: self.frame_shift_ms,
        })
    }

    pub fn cast<U: Scalar>(&self) -> MelSpectrogram<U> {
        MelSpectrogram {
            values: self.values.cast(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }
}

/// Log-domain approximation of the mel of a mixture:
/// `ln(exp(a) + exp(b))` per bin, exact for uncorrelated sources.
pub fn log_add_mels<T: Scalar>(
    a: &MelSpectrogram<T>,
    b: &MelSpectrogram<T>,
) -> Result<MelSpectrogram<T>> {
    if a.values.shape() != b.values.shape() {
        return crate::error::shape_err("log-add of differently shaped mels");
    }
    let data = a
        .values
        .data()
        .iter()
        .zip(b.values.data())
        .map(|(&x, &y)| {
            let m = x.max(y);
            m + ((x - m).exp() + (y - m).exp()).ln()
        })
        .collect();
    MelSpectrogram::new(Tensor::new(a.values.shape().to_vec(), data)?)
}
