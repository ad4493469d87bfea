use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::{MelConfig, MelExtractor, MelSpectrogram, Waveform};
use crate::error::{shape_err, Result};
use crate::Scalar;

const NNLS_ITERS: usize = 60;

/// Least-squares linear power spectrum whose mel projection matches `bands`,
/// found with nonnegative multiplicative updates.
fn invert_filterbank<T: Scalar>(ex: &MelExtractor<T>, bands: &[T]) -> Vec<T> {
    let tiny = T::lit(1e-20);
    let target = ex.mel_transpose(bands);
    let coverage = ex.mel_transpose(&vec![T::one(); bands.len()]);
    let mut s: Vec<T> = target
        .iter()
        .zip(&coverage)
        .map(|(&t, &c)| if c > tiny { t / c } else { T::zero() })
        .collect();
    for _ in 0..NNLS_ITERS {
        let denom = ex.mel_transpose(&ex.mel_power(&s));
        for ((x, &t), &d) in s.iter_mut().zip(&target).zip(&denom) {
            if d > tiny {
                *x = *x * t / d;
            }
        }
    }
    s
}

/// Phase reconstruction from a log-mel spectrogram. The initial phase is drawn
/// from `seed`; each iteration replaces the phase with that of the STFT of the
/// current estimate while keeping the target magnitude.
pub fn griffin_lim<T: Scalar>(
    mel: &MelSpectrogram<T>,
    cfg: &MelConfig,
    iterations: usize,
    seed: u64,
) -> Result<Waveform<T>> {
    if mel.n_mels() != cfg.n_mels {
        return shape_err(format!(
            "mel has {} bands, configuration expects {}",
            mel.n_mels(),
            cfg.n_mels
        ));
    }
    let ex = MelExtractor::<T>::new(cfg)?;
    let mags: Vec<Vec<T>> = (0..mel.frames())
        .map(|i| {
            let bands: Vec<T> = mel.frame(i).iter().map(|v| v.exp()).collect();
            invert_filterbank(&ex, &bands)
                .into_iter()
                .map(|p| p.sqrt())
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let mut spectra: Vec<Vec<Complex<T>>> = mags
        .iter()
        .map(|m| {
            m.iter()
                .map(|&a| Complex::from_polar(a, two_pi * T::lit(rng.gen::<f64>())))
                .collect()
        })
        .collect();
    let tiny = T::lit(1e-12);
    for _ in 0..iterations {
        let x = ex.istft(&spectra);
        let est = ex.stft(&x);
        for ((spec, e), m) in spectra.iter_mut().zip(&est).zip(&mags) {
            for ((c, &z), &a) in spec.iter_mut().zip(e).zip(m) {
                let n = z.norm();
                if n > tiny {
                    *c = z * (a / n);
                }
            }
        }
    }
    let samples = ex
        .istft(&spectra)
        .into_iter()
        .map(|x| x.max(-T::one()).min(T::one()))
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: cfg.sample_rate,
    })
}
