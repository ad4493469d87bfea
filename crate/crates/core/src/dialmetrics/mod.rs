//! Dialogue evaluation: turn-taking events, laughter statistics, speaker
//! consistency matrices and DTW-aligned mel-cepstral distortion.

mod mcd;
mod turns;

pub use mcd::{dtw, mcd_aligned, mcd_dtw, DtwResult, MCD_ORDER};
pub use turns::{
    extract_turn_events, laughter_stats, turn_stats, EventKind, KindSummary, LaughterStats,
    SpeakerSegments, TurnEvent, TurnStats, TurnTakingEvents,
};

use crate::error::{arg_err, shape_err, Result};

/// Pairwise cosine similarity of the given embeddings. The diagonal is exactly
/// 1 and entries are clamped to `[-1, 1]`.
pub fn consistency_matrix(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() < 2 {
        return arg_err("need at least two embeddings");
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return shape_err("embeddings must share a nonzero dimension");
    }
    let unit: Vec<Vec<f64>> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return arg_err(format!("embedding {i} has zero or non-finite norm"));
            }
            Ok(e.iter().map(|x| x / n).collect())
        })
        .collect::<Result<_>>()?;
    let n = unit.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = unit[i]
                .iter()
                .zip(&unit[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .clamp(-1.0, 1.0);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}
