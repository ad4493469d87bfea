//! Transformer encoder-decoder from text tokens to one or two frame-synchronous
//! semantic token streams.
//!
//! The decoder input at each frame concatenates the previous token embedding
//! of every stream and projects it to the decoder width. The decoder output is
//! split into equal contiguous chunks, one per stream, each with its own
//! vocabulary projection.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::layers::{init_block, init_linear, linear, norm, transformer_block};
use crate::nn::{BlockConfig, Graph, ParamStore, Tensor, Var};
use crate::Scalar;

/// Single-stream model versus the split-head multi-stream model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum T2SVariant {
    CoSingle,
    CoMix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct T2SConfig {
    pub variant: T2SVariant,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_dim: usize,
    pub dec_dim: usize,
    pub heads: usize,
    pub n_streams: usize,
    pub text_vocab: usize,
    pub semantic_vocab: usize,
    pub silence_id: usize,
    /// Generation stops once every stream ends in this many silence tokens.
    pub stop_run: usize,
}

impl T2SConfig {
    /// Two-layer encoder and decoder of width 128.
    pub fn desk(
        variant: T2SVariant,
        text_vocab: usize,
        semantic_vocab: usize,
        silence_id: usize,
    ) -> Self {
        Self {
            variant,
            enc_layers: 2,
            dec_layers: 2,
            enc_dim: 128,
            dec_dim: 128,
            heads: 2,
            n_streams: if variant == T2SVariant::CoSingle {
                1
            } else {
                2
            },
            text_vocab,
            semantic_vocab,
            silence_id,
            stop_run: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == T2SVariant::CoSingle && self.n_streams != 1 {
            return arg_err("the single-stream model has exactly one stream");
        }
        if !(1..=2).contains(&self.n_streams) {
            return arg_err(format!(
                "{} streams requested; 1 or 2 supported",
                self.n_streams
            ));
        }
        if self.dec_dim % self.n_streams != 0 {
            return shape_err(format!(
                "decoder width {} is not divisible by {} streams",
                self.dec_dim, self.n_streams
            ));
        }
        if self.semantic_vocab < 2 || self.silence_id >= self.semantic_vocab || self.text_vocab == 0
        {
            return arg_err("vocabularies must be nonempty and contain the silence id");
        }
        self.enc_block().validate()?;
        self.dec_block().validate()
    }

    fn enc_block(&self) -> BlockConfig {
        BlockConfig::new(self.enc_dim, self.heads)
    }

    fn dec_block(&self) -> BlockConfig {
        let mut b = BlockConfig::new(self.dec_dim, self.heads);
        b.causal = true;
        b.cross_dim = Some(self.enc_dim);
        b
    }

    /// Width of one stream's embedding and output chunk.
    pub fn chunk(&self) -> usize {
        self.dec_dim / self.n_streams
    }

    /// Embedding row used as the "previous token" at frame 0.
    pub fn bos(&self) -> usize {
        self.semantic_vocab
    }

    fn write_meta<T: Scalar>(&self, s: &mut ParamStore<T>) {
        let v = if self.variant == T2SVariant::CoMix {
            1.0
        } else {
            0.0
        };
        s.set_meta("t2s.comix", v);
        for (k, x) in [
            ("t2s.enc_layers", self.enc_layers),
            ("t2s.dec_layers", self.dec_layers),
            ("t2s.enc_dim", self.enc_dim),
            ("t2s.dec_dim", self.dec_dim),
            ("t2s.heads", self.heads),
            ("t2s.n_streams", self.n_streams),
            ("t2s.text_vocab", self.text_vocab),
            ("t2s.semantic_vocab", self.semantic_vocab),
            ("t2s.silence_id", self.silence_id),
            ("t2s.stop_run", self.stop_run),
        ] {
            s.set_meta(k, x as f64);
        }
    }

    fn read_meta<T: Scalar>(s: &ParamStore<T>) -> Result<Self> {
        let variant = match s.meta("t2s.comix") {
            Some(v) if v != 0.0 => T2SVariant::CoMix,
            Some(_) => T2SVariant::CoSingle,
            None => {
                return Err(Error::Format(
                    "checkpoint has no text-to-semantic settings".into(),
                ))
            }
        };
        let cfg = Self {
            variant,
            enc_layers: s.meta_usize("t2s.enc_layers")?,
            dec_layers: s.meta_usize("t2s.dec_layers")?,
            enc_dim: s.meta_usize("t2s.enc_dim")?,
            dec_dim: s.meta_usize("t2s.dec_dim")?,
            heads: s.meta_usize("t2s.heads")?,
            n_streams: s.meta_usize("t2s.n_streams")?,
            text_vocab: s.meta_usize("t2s.text_vocab")?,
            semantic_vocab: s.meta_usize("t2s.semantic_vocab")?,
            silence_id: s.meta_usize("t2s.silence_id")?,
            stop_run: s.meta_usize("t2s.stop_run")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `C` frame-synchronous semantic streams of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPair {
    pub streams: Vec<Vec<usize>>,
    pub vocab_size: usize,
}

impl StreamPair {
    pub fn new(streams: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        let Some(first) = streams.first() else {
            return arg_err("no streams");
        };
        if streams.iter().any(|s| s.len() != first.len()) {
            return shape_err("streams differ in length");
        }
        if streams.iter().flatten().any(|&t| t >= vocab_size) {
            return arg_err(format!("token outside vocabulary of {vocab_size}"));
        }
        Ok(Self {
            streams,
            vocab_size,
        })
    }

    pub fn frames(&self) -> usize {
        self.streams[0].len()
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    /// Appends an all-silence stream, as used when a single-stream model has to
    /// fill a second channel.
    pub fn with_silence_stream(mut self, silence_id: usize) -> Self {
        let n = self.frames();
        self.streams.push(vec![silence_id; n]);
        self
    }
}

/// One training pair: text ids (with BOS/EOS) and the target streams.
#[derive(Clone, Debug)]
pub struct T2SExample {
    pub text: Vec<usize>,
    pub streams: StreamPair,
}

#[derive(Clone, Copy, Debug)]
pub struct Sampling {
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            seed: 0,
        }
    }
}

pub struct T2SModel<T: Scalar> {
    pub cfg: T2SConfig,
    pub params: ParamStore<T>,
}

/// Index of the largest entry, lowest index on ties.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> T2SModel<T> {
    pub fn new(cfg: T2SConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let embed =
            |rows, cols, rng: &mut ChaCha8Rng| crate::nn::fan_in_uniform(&[rows, cols], 1, rng);
        s.insert("enc.emb", embed(cfg.text_vocab, cfg.enc_dim, &mut rng))?;
        for i in 0..cfg.enc_layers {
            init_block(&mut s, &mut rng, &format!("enc.{i}"), &cfg.enc_block())?;
        }
        s.insert("enc.norm.g", Tensor::full(&[1, cfg.enc_dim], T::one()))?;
        s.insert(
            "dec.emb",
            embed(cfg.semantic_vocab + 1, cfg.chunk(), &mut rng),
        )?;
        init_linear(
            &mut s,
            &mut rng,
            "dec.in",
            cfg.dec_dim,
            cfg.dec_dim,
            true,
            false,
        )?;
        for i in 0..cfg.dec_layers {
            init_block(&mut s, &mut rng, &format!("dec.{i}"), &cfg.dec_block())?;
        }
        s.insert("dec.norm.g", Tensor::full(&[1, cfg.dec_dim], T::one()))?;
        for c in 0..cfg.n_streams {
            init_linear(
                &mut s,
                &mut rng,
                &format!("head.{c}"),
                cfg.chunk(),
                cfg.semantic_vocab,
                true,
                false,
            )?;
        }
        cfg.write_meta(&mut s);
        Ok(Self { cfg, params: s })
    }

    /// Rebuilds a model from a checkpoint's parameters and stored settings.
    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let cfg = T2SConfig::read_meta(&params)?;
        let m = Self { cfg, params };
        let fresh = Self::new(m.cfg.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            match m.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint tensor {name} missing or misshaped"
                    )))
                }
            }
        }
        Ok(m)
    }

    pub fn encode(&self, g: &mut Graph<T>, text: &[usize]) -> Result<Var> {
        if text.is_empty() {
            return arg_err("empty text sequence");
        }
        if let Some(&bad) = text.iter().find(|&&t| t >= self.cfg.text_vocab) {
            return arg_err(format!(
                "text id {bad} outside vocabulary of {}",
                self.cfg.text_vocab
            ));
        }
        let emb = g.param(&self.params, "enc.emb")?;
        let mut x = g.gather(emb, text)?;
        let bc = self.cfg.enc_block();
        for i in 0..self.cfg.enc_layers {
            x = transformer_block(g, &self.params, &format!("enc.{i}"), &bc, x, None, None)?;
        }
        norm(g, &self.params, "enc.norm", x, None, bc.eps)
    }

    /// Per-stream logits `[frames × K]` for previous-token inputs `prev`
    /// (already shifted, starting with BOS).
    pub fn decode(&self, g: &mut Graph<T>, memory: Var, prev: &[Vec<usize>]) -> Result<Vec<Var>> {
        let c = self.cfg.n_streams;
        if prev.len() != c {
            return shape_err(format!("model has {c} streams, input has {}", prev.len()));
        }
        let emb = g.param(&self.params, "dec.emb")?;
        let x = match self.cfg.variant {
            T2SVariant::CoSingle => g.gather(emb, &prev[0])?,
            T2SVariant::CoMix => {
                let parts = prev
                    .iter()
                    .map(|p| g.gather(emb, p))
                    .collect::<Result<Vec<_>>>()?;
                g.concat_cols(&parts)?
            }
        };
        let mut x = linear(g, &self.params, "dec.in", x)?;
        let bc = self.cfg.dec_block();
        for i in 0..self.cfg.dec_layers {
            x = transformer_block(
                g,
                &self.params,
                &format!("dec.{i}"),
                &bc,
                x,
                None,
                Some(memory),
            )?;
        }
        let h = norm(g, &self.params, "dec.norm", x, None, bc.eps)?;
        match self.cfg.variant {
            T2SVariant::CoSingle => Ok(vec![linear(g, &self.params, "head.0", h)?]),
            T2SVariant::CoMix => (0..c)
                .map(|i| {
                    let chunk = g.slice_cols(h, i * self.cfg.chunk(), self.cfg.chunk())?;
                    linear(g, &self.params, &format!("head.{i}"), chunk)
                })
                .collect(),
        }
    }

    fn shifted(&self, streams: &StreamPair) -> Vec<Vec<usize>> {
        streams
            .streams
            .iter()
            .map(|s| {
                let mut p = Vec::with_capacity(s.len());
                p.push(self.cfg.bos());
                p.extend_from_slice(&s[..s.len() - 1]);
                p
            })
            .collect()
    }

    fn check_streams(&self, streams: &StreamPair) -> Result<()> {
        if streams.n_streams() != self.cfg.n_streams
            || streams.vocab_size != self.cfg.semantic_vocab
        {
            return shape_err(format!(
                "model expects {} streams over {} tokens, got {} over {}",
                self.cfg.n_streams,
                self.cfg.semantic_vocab,
                streams.n_streams(),
                streams.vocab_size
            ));
        }
        if streams.frames() == 0 {
            return arg_err("empty semantic streams");
        }
        Ok(())
    }

    /// Teacher-forced logits for every stream.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        text: &[usize],
        streams: &StreamPair,
    ) -> Result<Vec<Var>> {
        self.check_streams(streams)?;
        let mem = self.encode(g, text)?;
        self.decode(g, mem, &self.shifted(streams))
    }

    /// Summed negative log-likelihood over all streams and frames, and the
    /// number of target tokens it covers.
    pub fn nll(&self, g: &mut Graph<T>, ex: &T2SExample) -> Result<(Var, usize)> {
        let logits = self.forward(g, &ex.text, &ex.streams)?;
        let ones = vec![T::one(); ex.streams.frames()];
        let mut total: Option<Var> = None;
        for (l, s) in logits.iter().zip(&ex.streams.streams) {
            let ce = g.cross_entropy(*l, s, &ones)?;
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        Ok((
            total.expect("at least one stream"),
            ex.streams.frames() * ex.streams.n_streams(),
        ))
    }

    /// Mean negative log-likelihood per target token over a batch.
    pub fn batch_loss(&self, g: &mut Graph<T>, batch: &[&T2SExample]) -> Result<Var> {
        if batch.is_empty() {
            return arg_err("empty batch");
        }
        let mut total: Option<Var> = None;
        let mut count = 0;
        for ex in batch {
            let (l, n) = self.nll(g, ex)?;
            count += n;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        Ok(g.scale(total.unwrap(), T::one() / T::from_usize(count).unwrap()))
    }

    /// Teacher-forced logits as plain tensors.
    pub fn logits(&self, text: &[usize], streams: &StreamPair) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, text, streams)?;
        Ok(out.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Fraction of target tokens predicted by the teacher-forced argmax, and
    /// the number of tokens scored.
    pub fn accuracy(&self, examples: &[T2SExample]) -> Result<(f64, usize)> {
        let (mut hit, mut n) = (0usize, 0usize);
        for ex in examples {
            for (l, s) in self
                .logits(&ex.text, &ex.streams)?
                .iter()
                .zip(&ex.streams.streams)
            {
                for (i, &t) in s.iter().enumerate() {
                    hit += (argmax(l.row(i)) == t) as usize;
                    n += 1;
                }
            }
        }
        Ok((hit as f64 / n.max(1) as f64, n))
    }

    /// Autoregressive decoding with all streams advancing together.
    pub fn generate(
        &self,
        text: &[usize],
        max_frames: usize,
        sampling: Sampling,
    ) -> Result<StreamPair> {
        if max_frames == 0 {
            return arg_err("max_frames must be positive");
        }
        if !(sampling.temperature >= 0.0) {
            return arg_err("temperature must be non-negative");
        }
        let c = self.cfg.n_streams;
        let mut g = Graph::inference();
        let mem = self.encode(&mut g, text)?;
        let mem = g.value(mem).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut prev = vec![vec![self.cfg.bos()]; c];
        let mut out = vec![Vec::new(); c];
        let mut run = 0;
        while out[0].len() < max_frames {
            let mut g = Graph::inference();
            let m = g.constant(mem.clone());
            let logits = self.decode(&mut g, m, &prev)?;
            let last = out[0].len();
            let mut all_silent = true;
            for (s, &l) in logits.iter().enumerate() {
                let row = g.value(l).row(last);
                let tok = if sampling.temperature == 0.0 {
                    argmax(row)
                } else {
                    let mx = row
                        .iter()
                        .fold(T::neg_infinity(), |a, &b| a.max(b))
                        .to_f64_lossy();
                    let w: Vec<f64> = row
                        .iter()
                        .map(|x| ((x.to_f64_lossy() - mx) / sampling.temperature).exp())
                        .collect();
                    WeightedIndex::new(&w)
                        .map_err(|e| Error::Numeric(format!("sampling weights: {e}")))?
                        .sample(&mut rng)
                };
                all_silent &= tok == self.cfg.silence_id;
                out[s].push(tok);
                prev[s].push(tok);
            }
            run = if all_silent { run + 1 } else { 0 };
            if run >= self.cfg.stop_run {
                break;
            }
        }
        StreamPair::new(out, self.cfg.semantic_vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: T2SVariant, c: usize) -> T2SConfig {
        T2SConfig {
            variant,
            enc_layers: 1,
            dec_layers: 1,
            enc_dim: 8,
            dec_dim: 8,
            heads: 2,
            n_streams: c,
            text_vocab: 10,
            semantic_vocab: 6,
            silence_id: 0,
            stop_run: 3,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(T2SVariant::CoSingle, 2);
        assert!(c.validate().is_err());
        c = tiny(T2SVariant::CoMix, 2);
        c.dec_dim = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_heads_give_uniform_loss() {
        let mut m = T2SModel::<f64>::new(tiny(T2SVariant::CoMix, 2), 1).unwrap();
        for c in 0..2 {
            for suffix in ["w", "b"] {
                let p = m.params.get_mut(&format!("head.{c}.{suffix}")).unwrap();
                p.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let ex = T2SExample {
            text: vec![2, 7, 3],
            streams: StreamPair::new(vec![vec![1, 2, 3], vec![0, 0, 5]], 6).unwrap(),
        };
        let mut g = Graph::new();
        let l = m.batch_loss(&mut g, &[&ex]).unwrap();
        assert!((g.value(l).data()[0] - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generation_respects_max_frames_and_is_deterministic() {
        let m = T2SModel::<f64>::new(tiny(T2SVariant::CoMix, 2), 2).unwrap();
        assert!(m.generate(&[2, 3], 0, Sampling::default()).is_err());
        let a = m.generate(&[2, 5, 3], 10, Sampling::default()).unwrap();
        assert!(a.frames() <= 10);
        assert_eq!(a, m.generate(&[2, 5, 3], 10, Sampling::default()).unwrap());
        let t = Sampling {
            temperature: 1.0,
            seed: 3,
        };
        assert_eq!(
            m.generate(&[2, 5, 3], 10, t).unwrap(),
            m.generate(&[2, 5, 3], 10, t).unwrap()
        );
    }

    #[test]
    fn mismatched_streams_are_rejected() {
        assert!(StreamPair::new(vec![vec![1, 2], vec![1]], 6).is_err());
        let m = T2SModel::<f64>::new(tiny(T2SVariant::CoMix, 2), 2).unwrap();
        let one = StreamPair::new(vec![vec![1, 2]], 6).unwrap();
        assert!(m.logits(&[2, 3], &one).is_err());
        let single = one.clone().with_silence_stream(0);
        assert_eq!(single.streams[1], vec![0, 0]);
    }

    #[test]
    fn checkpoint_round_trip_restores_config() {
        let m = T2SModel::<f32>::new(tiny(T2SVariant::CoMix, 2), 2).unwrap();
        let back =
            T2SModel::<f32>::from_params(ParamStore::from_archive(&m.params.to_archive()).unwrap())
                .unwrap();
        assert_eq!(back.cfg, m.cfg);
    }
}
