use super::MelSpectrogram;
use crate::error::{arg_err, Result};
use crate::nn::Tensor;
use crate::Scalar;

/// Mel-cepstral distortion multiplier `10·√2 / ln 10` applied to the
/// Euclidean cepstral distance.
pub const MCD_SCALE: f64 = 10.0 * std::f64::consts::SQRT_2 / std::f64::consts::LN_10;

/// Orthonormal DCT-II basis, `basis[k][n] = s_k·cos(π·k·(2n+1)/(2N))`.
pub struct DctBasis<T> {
    n: usize,
    basis: Vec<T>,
}

impl<T: Scalar> DctBasis<T> {
    pub fn new(n: usize) -> Self {
        let mut basis = Vec::with_capacity(n * n);
        for k in 0..n {
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                let a = std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64;
                basis.push(T::lit(s * a.cos()));
            }
        }
        Self { n, basis }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|k| {
                self.basis[k * self.n..(k + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(&b, &v)| b * v)
                    .sum()
            })
            .collect()
    }

    /// Transpose of the forward transform, which is its inverse.
    pub fn inverse(&self, c: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (k, &ck) in c.iter().enumerate().take(self.n) {
            for (o, &b) in out
                .iter_mut()
                .zip(&self.basis[k * self.n..(k + 1) * self.n])
            {
                *o += b * ck;
            }
        }
        out
    }
}

pub fn dct_ortho<T: Scalar>(x: &[T]) -> Vec<T> {
    DctBasis::new(x.len()).forward(x)
}

pub fn idct_ortho<T: Scalar>(c: &[T]) -> Vec<T> {
    DctBasis::new(c.len()).inverse(c)
}

/// Row-wise orthonormal DCT-II of the log-mel matrix keeping coefficients
/// `1..=order` (the energy term `c0` is dropped).
pub fn mel_cepstra<T: Scalar>(mel: &MelSpectrogram<T>, order: usize) -> Result<Tensor<T>> {
    let n = mel.n_mels();
    if order < 1 {
        return arg_err("cepstral order must be at least 1");
    }
    if order >= n {
        return arg_err(format!(
            "cepstral order {order} needs more than {n} mel bands"
        ));
    }
    let dct = DctBasis::new(n);
    let mut data = Vec::with_capacity(mel.frames() * order);
    for i in 0..mel.frames() {
        let c = dct.forward(mel.frame(i));
        data.extend_from_slice(&c[1..=order]);
    }
    Tensor::matrix(mel.frames(), order, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos()
                    })
                    .sum();
                s * if k == 0 {
                    (1.0 / n).sqrt()
                } else {
                    (2.0 / n).sqrt()
                }
            })
            .collect()
    }

    #[test]
    fn constant_rows_have_no_cepstral_content() {
        let mel = MelSpectrogram::constant(3, 80, -4.2f64);
        let c = mel_cepstra(&mel, 13).unwrap();
        assert!(c.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cosine_row_excites_one_coefficient() {
        let k = 5;
        let row: Vec<f64> = (0..80)
            .map(|i| (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / 160.0).cos())
            .collect();
        let mel = MelSpectrogram::new(Tensor::matrix(1, 80, row).unwrap()).unwrap();
        let c = mel_cepstra(&mel, 13).unwrap();
        for (j, &v) in c.data().iter().enumerate() {
            if j + 1 == k {
                assert!(v.abs() > 1.0);
            } else {
                assert!(v.abs() < 1e-12, "coefficient {}", j + 1);
            }
        }
    }

    #[test]
    fn matches_naive_dct_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..24).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mel = MelSpectrogram::new(Tensor::matrix(3, 8, x.clone()).unwrap()).unwrap();
        let c = mel_cepstra(&mel, 7).unwrap();
        for r in 0..3 {
            let naive = naive_dct(&x[r * 8..(r + 1) * 8]);
            for j in 0..7 {
                assert!((c.row(r)[j] - naive[j + 1]).abs() < 1e-9);
            }
        }
        let back = idct_ortho(&dct_ortho(&x[..8]));
        for (a, b) in back.iter().zip(&x[..8]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn order_bounds_are_enforced() {
        let mel = MelSpectrogram::constant(1, 8, 0.0f64);
        assert!(mel_cepstra(&mel, 0).is_err());
        assert!(mel_cepstra(&mel, 8).is_err());
        assert!(mel_cepstra(&mel, 7).is_ok());
    }
}
