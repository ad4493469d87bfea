use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::MelSpectrogram;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::{ParamStore, Tensor};
use crate::Scalar;

pub const TOKEN_MAGIC: &[u8; 4] = b"SEMT";
pub const TOKEN_VERSION: u32 = 1;

/// Per-frame semantic ids at the mel frame rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticTokenStream {
    pub ids: Vec<usize>,
    pub vocab_size: usize,
}

impl SemanticTokenStream {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return arg_err(format!("token {bad} outside vocabulary of {vocab_size}"));
        }
        Ok(Self { ids, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `K` centroids of mel dimension plus the id assigned to silent frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    pub centroids: Tensor<T>,
    pub silence_id: usize,
}

#[derive(Clone, Debug)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Value of every band in a silent frame, used to pick the silence id.
    pub silence_value: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            silence_value: (1e-10f64).ln(),
        }
    }
}

pub struct CodebookFit<T> {
    pub codebook: Codebook<T>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by Euclidean distance, lowest id on ties.
fn nearest<T: Scalar>(centroids: &Tensor<T>, x: &[T]) -> (usize, T) {
    let mut best = (0, sq_dist(centroids.row(0), x));
    for k in 1..centroids.rows() {
        let d = sq_dist(centroids.row(k), x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

impl<T: Scalar> Codebook<T> {
    pub fn new(centroids: Tensor<T>, silence_id: usize) -> Result<Self> {
        if centroids.shape().len() != 2 || centroids.rows() < 2 {
            return arg_err("a codebook needs at least two centroids");
        }
        if !centroids.is_finite() {
            return arg_err("codebook centroids must be finite");
        }
        if silence_id >= centroids.rows() {
            return arg_err("silence id outside codebook");
        }
        Ok(Self {
            centroids,
            silence_id,
        })
    }

    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn quantize(&self, frame: &[T]) -> usize {
        nearest(&self.centroids, frame).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = ParamStore::new();
        s.insert("centroids", self.centroids.clone())?;
        s.set_meta("silence_id", self.silence_id as f64);
        s.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = ParamStore::<T>::load(path)?;
        let c = s
            .get("centroids")
            .ok_or_else(|| Error::Format(format!("{}: no centroids entry", path.display())))?;
        Self::new(c.clone(), s.meta_usize("silence_id")?)
    }
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Lloyd's k-means over all frames of `mels`.
///
/// Initialisation works on the sorted set of distinct frames: the seed picks the
/// first centroid, the rest follow farthest-first. Repeating frames therefore
/// leaves the starting point unchanged. An emptied cluster is moved onto the
/// frame farthest from its centroid.
pub fn fit_codebook<T: Scalar>(
    mels: &[MelSpectrogram<T>],
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<CodebookFit<T>> {
    let Some(first) = mels.first() else {
        return arg_err("no mel spectrograms to cluster");
    };
    let dim = first.n_mels();
    if mels.iter().any(|m| m.n_mels() != dim) {
        return shape_err("mel spectrograms disagree on band count");
    }
    let frames: Vec<&[T]> = mels
        .iter()
        .flat_map(|m| (0..m.frames()).map(move |i| m.frame(i)))
        .collect();
    if k < 1 || k > frames.len() {
        return arg_err(format!(
            "cannot fit {k} centroids to {} frames",
            frames.len()
        ));
    }
    let mut distinct = frames.clone();
    distinct.sort_by(|a, b| lex_cmp(a, b));
    distinct.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    if distinct.len() < k {
        return arg_err(format!(
            "only {} distinct frames for {k} centroids",
            distinct.len()
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..distinct.len())];
    let mut min_d: Vec<T> = distinct
        .iter()
        .map(|f| sq_dist(f, distinct[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        chosen.push(far);
        for (m, f) in min_d.iter_mut().zip(&distinct) {
            *m = m.min(sq_dist(f, distinct[far]));
        }
    }
    let mut centroids = Tensor::from_rows(
        &chosen
            .iter()
            .map(|&i| distinct[i].to_vec())
            .collect::<Vec<_>>(),
    )?;

    let mut assign = vec![usize::MAX; frames.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![T::zero(); frames.len()];
        for (i, f) in frames.iter().enumerate() {
            let (c, d) = nearest(&centroids, f);
            changed |= assign[i] != c;
            assign[i] = c;
            dists[i] = d;
        }
        objective.push(dists.iter().map(|d| d.to_f64_lossy()).sum());
        if !changed {
            break;
        }
        let mut sums = Tensor::<T>::zeros(&[k, dim]);
        let mut counts = vec![0usize; k];
        for (f, &c) in frames.iter().zip(&assign) {
            counts[c] += 1;
            for (s, &x) in sums.row_mut(c).iter_mut().zip(*f) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = T::from_usize(counts[c]).unwrap();
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / n;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..frames.len())
                    .fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
                centroids.row_mut(c).copy_from_slice(frames[far]);
                dists[far] = T::zero();
            }
        }
    }
    let silence = vec![T::lit(cfg.silence_value); dim];
    let silence_id = nearest(&centroids, &silence).0;
    let codebook = if k >= 2 {
        Codebook::new(centroids, silence_id)?
    } else {
        Codebook {
            centroids,
            silence_id,
        }
    };
    Ok(CodebookFit {
        codebook,
        objective,
        iterations,
    })
}

/// Nearest-centroid id for every mel frame.
pub fn speech_to_semantic<T: Scalar>(
    mel: &MelSpectrogram<T>,
    cb: &Codebook<T>,
) -> Result<SemanticTokenStream> {
    if mel.n_mels() != cb.dim() {
        return shape_err(format!(
            "mel has {} bands, codebook has dimension {}",
            mel.n_mels(),
            cb.dim()
        ));
    }
    let ids = (0..mel.frames())
        .map(|i| cb.quantize(mel.frame(i)))
        .collect();
    Ok(SemanticTokenStream {
        ids,
        vocab_size: cb.size(),
    })
}

pub fn write_tokens(path: &Path, s: &SemanticTokenStream) -> Result<()> {
    if s.vocab_size > u16::MAX as usize + 1 {
        return arg_err("vocabulary too large for 16-bit token ids");
    }
    let mut b = Vec::with_capacity(16 + 2 * s.len());
    b.extend_from_slice(TOKEN_MAGIC);
    b.extend_from_slice(&TOKEN_VERSION.to_le_bytes());
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(&(s.vocab_size as u32).to_le_bytes());
    for &id in &s.ids {
        b.extend_from_slice(&(id as u16).to_le_bytes());
    }
    fs::write(path, b)?;
    Ok(())
}

pub fn read_tokens(path: &Path) -> Result<SemanticTokenStream> {
    let b = fs::read(path)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if b.len() < 16 || &b[..4] != TOKEN_MAGIC {
        return Err(bad("not a SEMT file"));
    }
    let word = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != TOKEN_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (n, vocab) = (word(8), word(12));
    if b.len() != 16 + 2 * n {
        return Err(bad("payload length does not match header"));
    }
    let ids = b[16..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    SemanticTokenStream::new(ids, vocab).map_err(|e| bad(&e.to_string()))
}
