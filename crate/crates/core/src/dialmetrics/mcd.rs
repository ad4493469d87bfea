use crate::dsp::{mel_cepstra, MelSpectrogram, MCD_SCALE};
use crate::error::{arg_err, shape_err, Result};
use crate::nn::Tensor;
use crate::Scalar;

/// Cepstral coefficients compared, excluding the energy term.
pub const MCD_ORDER: usize = 13;

#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    pub total_cost: f64,
    pub path_len: usize,
}

impl DtwResult {
    pub fn mean_cost(&self) -> f64 {
        self.total_cost / self.path_len as f64
    }
}

/// Minimum-cost monotone alignment over steps (1,0), (0,1), (1,1) from
/// `(0,0)` to `(n−1, m−1)`. Equal-cost paths resolve to the longest one.
pub fn dtw(cost: &[Vec<f64>]) -> Result<DtwResult> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || cost.iter().any(|r| r.len() != m) {
        return arg_err("DTW needs a nonempty rectangular cost matrix");
    }
    let mut acc = vec![vec![(f64::INFINITY, 0usize); m]; n];
    for i in 0..n {
        for j in 0..m {
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, 0usize);
                let cands = [
                    (i > 0).then(|| acc[i - 1][j]),
                    (j > 0).then(|| acc[i][j - 1]),
                    (i > 0 && j > 0).then(|| acc[i - 1][j - 1]),
                ];
                for c in cands.into_iter().flatten() {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 > best.1) {
                        best = c;
                    }
                }
                best
            };
            acc[i][j] = (prev.0 + cost[i][j], prev.1 + 1);
        }
    }
    let (total_cost, path_len) = acc[n - 1][m - 1];
    Ok(DtwResult {
        total_cost,
        path_len,
    })
}

fn cepstra_pair<T: Scalar>(
    a: &MelSpectrogram<T>,
    b: &MelSpectrogram<T>,
    order: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if a.frames() == 0 || b.frames() == 0 {
        return arg_err("MCD of an empty spectrogram");
    }
    if a.n_mels() != b.n_mels() {
        return shape_err(format!("{} vs {} mel bands", a.n_mels(), b.n_mels()));
    }
    Ok((mel_cepstra(a, order)?, mel_cepstra(b, order)?))
}

fn frame_cost<T: Scalar>(x: &[T], y: &[T]) -> f64 {
    let d: f64 = x
        .iter()
        .zip(y)
        .map(|(&p, &q)| (p.to_f64_lossy() - q.to_f64_lossy()).powi(2))
        .sum();
    MCD_SCALE * d.sqrt()
}

/// Mean per-frame distortion in dB over a DTW alignment of the two cepstral
/// sequences, normalised by path length.
pub fn mcd_dtw<T: Scalar>(
    reference: &MelSpectrogram<T>,
    hyp: &MelSpectrogram<T>,
    order: usize,
) -> Result<f64> {
    let (a, b) = cepstra_pair(reference, hyp, order)?;
    let cost: Vec<Vec<f64>> = (0..a.rows())
        .map(|i| {
            (0..b.rows())
                .map(|j| frame_cost(a.row(i), b.row(j)))
                .collect()
        })
        .collect();
    Ok(dtw(&cost)?.mean_cost())
}

/// Frame-by-frame distortion for equal-length inputs.
pub fn mcd_aligned<T: Scalar>(
    reference: &MelSpectrogram<T>,
    hyp: &MelSpectrogram<T>,
    order: usize,
) -> Result<f64> {
    if reference.frames() != hyp.frames() {
        return shape_err("frame-aligned MCD needs equal lengths");
    }
    let (a, b) = cepstra_pair(reference, hyp, order)?;
    let total: f64 = (0..a.rows()).map(|i| frame_cost(a.row(i), b.row(i))).sum();
    Ok(total / a.rows() as f64)
}
