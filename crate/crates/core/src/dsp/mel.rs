use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{MelConfig, MelSpectrogram, Waveform};
use crate::error::{arg_err, Result};
use crate::nn::Tensor;
use crate::Scalar;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edges in Hz: `n_mels + 2` points equally spaced on the mel scale.
fn band_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Peak frequency of each triangular filter.
pub fn mel_filter_centers(cfg: &MelConfig) -> Vec<f64> {
    band_edges(cfg)[1..=cfg.n_mels].to_vec()
}

/// Planned STFT and triangular (peak-1) mel filterbank for one configuration.
pub struct MelExtractor<T: Scalar> {
    cfg: MelConfig,
    window: Vec<T>,
    /// Per filter: first bin and weights.
    filters: Vec<(usize, Vec<T>)>,
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> MelExtractor<T> {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let window = (0..cfg.win_length)
            .map(|n| {
                let a = 2.0 * std::f64::consts::PI * n as f64 / cfg.win_length as f64;
                T::lit(0.5 - 0.5 * a.cos())
            })
            .collect();
        let edges = band_edges(cfg);
        let bins = cfg.n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let w: Vec<f64> = (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                    })
                    .collect();
                let first = w.iter().position(|&x| x > 0.0).unwrap_or(0);
                let last = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                let ws = if last >= first {
                    w[first..=last].iter().map(|&x| T::lit(x)).collect()
                } else {
                    Vec::new()
                };
                (first, ws)
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filters,
            fft: planner.plan_fft_forward(cfg.n_fft),
            ifft: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn n_bins(&self) -> usize {
        self.cfg.n_fft / 2 + 1
    }

    /// One-sided complex spectra, `frames × (n_fft/2 + 1)`.
    pub fn stft(&self, samples: &[T]) -> Vec<Vec<Complex<T>>> {
        let frames = self.cfg.frames_for(samples.len());
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.cfg.n_fft];
        (0..frames)
            .map(|i| {
                let start = i * self.cfg.hop;
                buf.iter_mut()
                    .for_each(|c| *c = Complex::new(T::zero(), T::zero()));
                for (n, &w) in self.window.iter().enumerate() {
                    buf[n].re = samples[start + n] * w;
                }
                self.fft.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Windowed overlap-add inverse of [`stft`](Self::stft); output length
    /// `(frames − 1)·hop + window`.
    pub fn istft(&self, spectra: &[Vec<Complex<T>>]) -> Vec<T> {
        let n = self.cfg.n_fft;
        let len = self.cfg.samples_for(spectra.len());
        let mut out = vec![T::zero(); len];
        let mut norm = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let scale = T::one() / T::from_usize(n).unwrap();
        for (i, spec) in spectra.iter().enumerate() {
            for k in 0..n {
                buf[k] = if k < spec.len() {
                    spec[k]
                } else {
                    spec[n - k].conj()
                };
            }
            buf[0].im = T::zero();
            buf[n / 2].im = T::zero();
            self.ifft.process(&mut buf);
            let start = i * self.cfg.hop;
            for (j, &w) in self.window.iter().enumerate() {
                out[start + j] += buf[j].re * scale * w;
                norm[start + j] += w * w;
            }
        }
        // Near the outer edges the window sum vanishes; clipping it keeps
        // arbitrary-phase input from being amplified there.
        let least = T::lit(1e-3);
        for (o, &z) in out.iter_mut().zip(&norm) {
            *o /= z.max(least);
        }
        out
    }

    /// Mel-band power of one power spectrum.
    pub fn mel_power(&self, power: &[T]) -> Vec<T> {
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Transposed filterbank applied to per-band values.
    pub fn mel_transpose(&self, bands: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_bins()];
        for ((first, w), &b) in self.filters.iter().zip(bands) {
            for (j, &x) in w.iter().enumerate() {
                out[first + j] += x * b;
            }
        }
        out
    }

    pub fn extract(&self, w: &Waveform<T>) -> Result<MelSpectrogram<T>> {
        if w.is_empty() {
            return arg_err("empty waveform");
        }
        if w.sample_rate != self.cfg.sample_rate {
            return arg_err(format!(
                "waveform at {} Hz, extractor at {} Hz",
                w.sample_rate, self.cfg.sample_rate
            ));
        }
        if w.len() < self.cfg.win_length {
            return arg_err(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                w.len(),
                self.cfg.win_length
            ));
        }
        let floor = T::lit(self.cfg.power_floor);
        let spectra = self.stft(&w.samples);
        let mut data = Vec::with_capacity(spectra.len() * self.cfg.n_mels);
        for spec in &spectra {
            let power: Vec<T> = spec.iter().map(|c| c.norm_sqr()).collect();
            data.extend(
                self.mel_power(&power)
                    .into_iter()
                    .map(|p| p.max(floor).ln()),
            );
        }
        MelSpectrogram::new(Tensor::matrix(spectra.len(), self.cfg.n_mels, data)?)
    }
}

/// Log-mel spectrogram: `ln(max(mel power, floor))` per frame and band.
pub fn mel_spectrogram<T: Scalar>(w: &Waveform<T>, cfg: &MelConfig) -> Result<MelSpectrogram<T>> {
    MelExtractor::new(cfg)?.extract(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_count_follows_window_arithmetic() {
        let cfg = MelConfig::default();
        for len in [400usize, 559, 560, 8000] {
            let w = Waveform::<f64>::silence(len, 8000);
            let m = mel_spectrogram(&w, &cfg).unwrap();
            assert_eq!(m.frames(), (len - 400) / 160 + 1);
            assert_eq!(m.n_mels(), 80);
        }
        assert!(mel_spectrogram(&Waveform::<f64>::silence(399, 8000), &cfg).is_err());
        assert!(mel_spectrogram(&Waveform::<f64>::silence(0, 8000), &cfg).is_err());
    }

    #[test]
    fn silence_sits_at_the_log_floor() {
        let cfg = MelConfig::default();
        let m = mel_spectrogram(&Waveform::<f64>::silence(2000, 8000), &cfg).unwrap();
        assert!(m.values.data().iter().all(|&v| v == (1e-10f64).ln()));
    }

    #[test]
    fn sine_at_filter_center_peaks_in_that_filter() {
        let cfg = MelConfig::default();
        let centers = mel_filter_centers(&cfg);
        for band in [10usize, 40, 70] {
            let f = centers[band];
            let w = Waveform::new(
                (0..4000)
                    .map(|n| 0.5 * (2.0 * std::f64::consts::PI * f * n as f64 / 8000.0).sin())
                    .collect(),
                8000,
            )
            .unwrap();
            let m = mel_spectrogram(&w, &cfg).unwrap();
            for i in 1..m.frames() - 1 {
                let row = m.frame(i);
                let arg = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                assert_eq!(arg, band, "frame {i}");
            }
        }
    }

    #[test]
    fn mixed_mel_is_not_sum_of_channel_logs() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Waveform::new((0..1600).map(|_| rng.gen_range(-0.3..0.3)).collect(), 8000).unwrap();
        let b = Waveform::new((0..1600).map(|_| rng.gen_range(-0.3..0.3)).collect(), 8000).unwrap();
        let mix = super::super::mix_waveforms(&a, &b).unwrap();
        let (ma, mb, mm) = (
            mel_spectrogram(&a, &cfg).unwrap(),
            mel_spectrogram(&b, &cfg).unwrap(),
            mel_spectrogram(&mix, &cfg).unwrap(),
        );
        assert_eq!(ma.values.shape(), mm.values.shape());
        let diff: f64 = mm
            .values
            .data()
            .iter()
            .zip(ma.values.data().iter().zip(mb.values.data()))
            .map(|(m, (x, y)): (&f64, (&f64, &f64))| (m - (x + y)).abs())
            .sum();
        assert!(diff > 1.0);
    }

    #[test]
    fn stft_istft_round_trip() {
        let cfg = MelConfig::default();
        let ex = MelExtractor::<f64>::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..1360).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let y = ex.istft(&ex.stft(&x));
        assert_eq!(y.len(), 1360);
        // The outermost samples sit under near-zero window values.
        for i in 25..1335 {
            assert!((x[i] - y[i]).abs() < 1e-9, "{i}");
        }
    }
}
