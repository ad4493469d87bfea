use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flow::{
    flow_target, integrate, make_training_mask, sample_flow_point, standard_normal, OdeOptions,
    SIGMA_MIN,
};
use crate::dsp::{log_add_mels, MelSpectrogram};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::layers::{init_block, init_linear, linear, norm, transformer_block};
use crate::nn::{BlockConfig, Graph, ParamStore, Tensor, TimeEmbedding, Var};
use crate::Scalar;

/// Range of the training mask fraction.
pub const MASK_FRACTION: (f64, f64) = (0.7, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcousticVariant {
    /// One speaker: one context, one token stream, one output mel.
    Single,
    /// Two speakers in, the mel of their mixture out.
    Mix,
    /// Two speakers in, one mel per speaker out.
    Stereo,
}

impl AcousticVariant {
    pub fn in_channels(self) -> usize {
        match self {
            Self::Single => 1,
            Self::Mix | Self::Stereo => 2,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            Self::Single | Self::Mix => 1,
            Self::Stereo => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Mix => "mix",
            Self::Stereo => "stereo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "mix" => Ok(Self::Mix),
            "stereo" => Ok(Self::Stereo),
            _ => arg_err(format!(
                "unknown acoustic variant {s:?} (single, mix, stereo)"
            )),
        }
    }

    fn code(self) -> f64 {
        match self {
            Self::Single => 0.0,
            Self::Mix => 1.0,
            Self::Stereo => 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticConfig {
    pub variant: AcousticVariant,
    pub n_mels: usize,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub semantic_vocab: usize,
    pub sem_dim: usize,
    pub time_dim: usize,
    pub sigma_min: f64,
    pub p_uncond: f64,
    /// Global log-mel statistics; the network sees `(x − mean) / std`.
    pub mel_mean: f64,
    pub mel_std: f64,
}

impl AcousticConfig {
    pub fn desk(variant: AcousticVariant, semantic_vocab: usize) -> Self {
        Self {
            variant,
            n_mels: 80,
            layers: 3,
            dim: 128,
            heads: 2,
            semantic_vocab,
            sem_dim: 32,
            time_dim: 32,
            sigma_min: SIGMA_MIN,
            p_uncond: 0.3,
            mel_mean: 0.0,
            mel_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.semantic_vocab == 0 || self.sem_dim == 0 || self.time_dim < 2 {
            return arg_err("mel, vocabulary, embedding and time widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return arg_err(format!("p_uncond {} outside [0, 1]", self.p_uncond));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min < 1.0) {
            return arg_err("sigma_min must lie in [0, 1)");
        }
        if !(self.mel_std > 0.0 && self.mel_mean.is_finite()) {
            return arg_err("mel normalisation needs a finite mean and positive std");
        }
        self.block().validate()
    }

    /// Copy with the real-valued settings rounded to f32, the precision
    /// checkpoints store them at, so a reloaded model computes identically.
    pub fn stored_precision(&self) -> Self {
        let r = |x: f64| x as f32 as f64;
        Self {
            sigma_min: r(self.sigma_min),
            p_uncond: r(self.p_uncond),
            mel_mean: r(self.mel_mean),
            mel_std: r(self.mel_std),
            ..self.clone()
        }
    }

    fn block(&self) -> BlockConfig {
        let mut b = BlockConfig::new(self.dim, self.heads);
        b.time_dim = Some(self.time_dim);
        b
    }

    pub fn out_width(&self) -> usize {
        self.variant.out_channels() * self.n_mels
    }

    pub fn in_width(&self) -> usize {
        self.out_width() + self.variant.in_channels() * (self.n_mels + self.sem_dim)
    }

    fn write_meta<T: Scalar>(&self, s: &mut ParamStore<T>) {
        s.set_meta("ac.variant", self.variant.code());
        for (k, v) in [
            ("ac.n_mels", self.n_mels as f64),
            ("ac.layers", self.layers as f64),
            ("ac.dim", self.dim as f64),
            ("ac.heads", self.heads as f64),
            ("ac.semantic_vocab", self.semantic_vocab as f64),
            ("ac.sem_dim", self.sem_dim as f64),
            ("ac.time_dim", self.time_dim as f64),
            ("ac.sigma_min", self.sigma_min),
            ("ac.p_uncond", self.p_uncond),
            ("ac.mel_mean", self.mel_mean),
            ("ac.mel_std", self.mel_std),
        ] {
            s.set_meta(k, v);
        }
    }

    fn read_meta<T: Scalar>(s: &ParamStore<T>) -> Result<Self> {
        let get = |k: &str| {
            s.meta(k)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks acoustic setting {k}")))
        };
        let variant = match get("ac.variant")? as i64 {
            0 => AcousticVariant::Single,
            1 => AcousticVariant::Mix,
            2 => AcousticVariant::Stereo,
            v => return Err(Error::Format(format!("unknown acoustic variant code {v}"))),
        };
        let cfg = Self {
            variant,
            n_mels: s.meta_usize("ac.n_mels")?,
            layers: s.meta_usize("ac.layers")?,
            dim: s.meta_usize("ac.dim")?,
            heads: s.meta_usize("ac.heads")?,
            semantic_vocab: s.meta_usize("ac.semantic_vocab")?,
            sem_dim: s.meta_usize("ac.sem_dim")?,
            time_dim: s.meta_usize("ac.time_dim")?,
            sigma_min: get("ac.sigma_min")?,
            p_uncond: get("ac.p_uncond")?,
            mel_mean: get("ac.mel_mean")?,
            mel_std: get("ac.mel_std")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training item in raw log-mel units.
#[derive(Clone, Debug)]
pub struct AcousticExample<T> {
    /// Output channels, each `frames × n_mels`.
    pub target: Vec<Tensor<T>>,
    /// Per-speaker mels the prompt is cut from, each `frames × n_mels`.
    pub context: Vec<Tensor<T>>,
    /// Per-speaker semantic tokens, one per frame.
    pub tokens: Vec<Vec<usize>>,
}

impl<T: Scalar> AcousticExample<T> {
    pub fn frames(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    fn check(&self, cfg: &AcousticConfig) -> Result<()> {
        let v = cfg.variant;
        if self.target.len() != v.out_channels()
            || self.context.len() != v.in_channels()
            || self.tokens.len() != v.in_channels()
        {
            return shape_err(format!(
                "{} variant needs {} target and {} context channels",
                v.name(),
                v.out_channels(),
                v.in_channels()
            ));
        }
        let n = self.frames();
        if n < 2 {
            return arg_err("acoustic examples need at least two frames");
        }
        let ok = |t: &Tensor<T>| t.shape() == [n, cfg.n_mels];
        if !self.target.iter().chain(&self.context).all(ok)
            || self.tokens.iter().any(|s| s.len() != n)
        {
            return shape_err("example channels disagree on frames or mel bands");
        }
        if self
            .tokens
            .iter()
            .flatten()
            .any(|&t| t >= cfg.semantic_vocab)
        {
            return arg_err("semantic token outside vocabulary");
        }
        Ok(())
    }
}

/// Random quantities for one training example.
#[derive(Clone, Debug)]
pub struct CfmDraw<T> {
    pub t: f64,
    pub noise: Tensor<T>,
    pub mask: Vec<bool>,
    /// Drop the prompt and tokens for this example.
    pub drop: bool,
}

impl<T: Scalar> CfmDraw<T> {
    pub fn sample<R: Rng>(frames: usize, cfg: &AcousticConfig, rng: &mut R) -> Result<Self> {
        let t = rng.gen::<f64>();
        let mask = make_training_mask(frames, rng, MASK_FRACTION.0, MASK_FRACTION.1)?;
        let drop = rng.gen::<f64>() < cfg.p_uncond;
        let noise = standard_normal(&[frames, cfg.out_width()], rng);
        Ok(Self {
            t,
            noise,
            mask,
            drop,
        })
    }
}

/// Inputs for sampling, in raw log-mel units.
#[derive(Clone, Debug)]
pub struct Conditioning<T> {
    /// Per-speaker prompt mels; rows under the mask are ignored.
    pub context: Vec<Tensor<T>>,
    pub tokens: Vec<Vec<usize>>,
    /// Known output on unmasked rows, `frames × out_width`.
    pub target_context: Tensor<T>,
    /// `true` rows are generated.
    pub mask: Vec<bool>,
}

pub struct AcousticModel<T: Scalar> {
    pub cfg: AcousticConfig,
    pub params: ParamStore<T>,
}

fn hcat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let rows = parts[0].rows();
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::matrix(rows, width, data).expect("consistent widths")
}

fn split_cols<T: Scalar>(x: &Tensor<T>, parts: usize) -> Vec<Tensor<T>> {
    let w = x.cols() / parts;
    (0..parts)
        .map(|p| Tensor::from_fn(&[x.rows(), w], |i| x.row(i / w)[p * w + i % w]))
        .collect()
}

impl<T: Scalar> AcousticModel<T> {
    pub fn new(cfg: AcousticConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.stored_precision();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.insert(
            "sem.emb",
            crate::nn::fan_in_uniform(&[cfg.semantic_vocab, cfg.sem_dim], 1, &mut rng),
        )?;
        init_linear(
            &mut s,
            &mut rng,
            "time.l1",
            cfg.time_dim,
            cfg.time_dim,
            true,
            false,
        )?;
        init_linear(
            &mut s,
            &mut rng,
            "in_proj",
            cfg.in_width(),
            cfg.dim,
            true,
            false,
        )?;
        for i in 0..cfg.layers {
            init_block(&mut s, &mut rng, &format!("blk.{i}"), &cfg.block())?;
        }
        init_linear(
            &mut s,
            &mut rng,
            "out.norm.ada",
            cfg.time_dim,
            2 * cfg.dim,
            true,
            false,
        )?;
        init_linear(
            &mut s,
            &mut rng,
            "out_proj",
            cfg.dim,
            cfg.out_width(),
            true,
            true,
        )?;
        cfg.write_meta(&mut s);
        Ok(Self { cfg, params: s })
    }

    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let cfg = AcousticConfig::read_meta(&params)?;
        let fresh = Self::new(cfg.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint tensor {name} missing or misshaped"
                    )))
                }
            }
        }
        Ok(Self { cfg, params })
    }

    /// Sets the global normalisation from the mean and standard deviation of
    /// every target value.
    pub fn fit_normalization(&mut self, examples: &[AcousticExample<T>]) {
        let (mut n, mut sum, mut sq) = (0f64, 0f64, 0f64);
        for x in examples
            .iter()
            .flat_map(|e| e.target.iter())
            .flat_map(|t| t.data())
        {
            let v = x.to_f64_lossy();
            n += 1.0;
            sum += v;
            sq += v * v;
        }
        if n > 0.0 {
            let mean = sum / n;
            self.cfg.mel_mean = mean;
            self.cfg.mel_std = (sq / n - mean * mean).max(1e-12).sqrt();
            self.cfg = self.cfg.stored_precision();
            self.cfg.write_meta(&mut self.params);
        }
    }

    pub fn normalize(&self, x: &Tensor<T>) -> Tensor<T> {
        let (m, s) = (T::lit(self.cfg.mel_mean), T::lit(1.0 / self.cfg.mel_std));
        x.map(|v| (v - m) * s)
    }

    pub fn denormalize(&self, x: &Tensor<T>) -> Tensor<T> {
        let (m, s) = (T::lit(self.cfg.mel_mean), T::lit(self.cfg.mel_std));
        x.map(|v| v * s + m)
    }

    /// Velocity prediction for path point `w` (normalised units).
    ///
    /// `cond` carries normalised per-speaker context, already zeroed on
    /// generated rows, and the matching tokens; `None` is the unconditional
    /// branch where both are replaced by zeros.
    pub fn velocity(
        &self,
        g: &mut Graph<T>,
        w: Var,
        t: f64,
        cond: Option<(&[Tensor<T>], &[Vec<usize>])>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let frames = g.shape(w)[0];
        let c = cfg.variant.in_channels();
        let mut parts = vec![w];
        match cond {
            Some((ctx, toks)) => {
                if ctx.len() != c || toks.len() != c {
                    return shape_err(format!("expected {c} conditioning channels"));
                }
                for x in ctx {
                    parts.push(g.constant(x.clone()));
                }
                let emb = g.param(&self.params, "sem.emb")?;
                for tk in toks {
                    parts.push(g.gather(emb, tk)?);
                }
            }
            None => {
                for _ in 0..c {
                    parts.push(g.constant(Tensor::zeros(&[frames, cfg.n_mels])));
                }
                for _ in 0..c {
                    parts.push(g.constant(Tensor::zeros(&[frames, cfg.sem_dim])));
                }
            }
        }
        let x = g.concat_cols(&parts)?;
        let te = g.constant(TimeEmbedding::new(t, cfg.time_dim).tensor());
        let tf = linear(g, &self.params, "time.l1", te)?;
        let tf = g.silu(tf);
        let mut h = linear(g, &self.params, "in_proj", x)?;
        let bc = cfg.block();
        for i in 0..cfg.layers {
            h = transformer_block(g, &self.params, &format!("blk.{i}"), &bc, h, Some(tf), None)?;
        }
        let h = norm(g, &self.params, "out.norm", h, Some(tf), bc.eps)?;
        linear(g, &self.params, "out_proj", h)
    }

    fn masked_context(&self, ctx: &[Tensor<T>], mask: &[bool]) -> Vec<Tensor<T>> {
        ctx.iter()
            .map(|x| {
                let mut n = self.normalize(x);
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        n.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                n
            })
            .collect()
    }

    /// Masked flow-matching loss of one example, divided by the number of
    /// masked values.
    pub fn example_loss(
        &self,
        g: &mut Graph<T>,
        ex: &AcousticExample<T>,
        draw: &CfmDraw<T>,
    ) -> Result<Var> {
        ex.check(&self.cfg)?;
        let masked = draw.mask.iter().filter(|&&m| m).count();
        if masked == 0 {
            return arg_err("empty training mask");
        }
        if draw.mask.len() != ex.frames()
            || draw.noise.shape() != [ex.frames(), self.cfg.out_width()]
        {
            return shape_err("draw does not match example");
        }
        let targets: Vec<Tensor<T>> = ex.target.iter().map(|t| self.normalize(t)).collect();
        let m = hcat(&targets.iter().collect::<Vec<_>>());
        let w = sample_flow_point(&m, &draw.noise, draw.t, self.cfg.sigma_min)?;
        let u = flow_target(&m, &draw.noise, self.cfg.sigma_min)?;
        let w = g.constant(w);
        let ctx;
        let cond = if draw.drop {
            None
        } else {
            ctx = self.masked_context(&ex.context, &draw.mask);
            Some((&ctx[..], &ex.tokens[..]))
        };
        let v = self.velocity(g, w, draw.t, cond)?;
        let sse = g.masked_sq_err(v, &u, &draw.mask)?;
        Ok(g.scale(
            sse,
            T::one() / T::from_usize(masked * self.cfg.out_width()).unwrap(),
        ))
    }

    /// Mean of [`example_loss`](Self::example_loss) over a batch.
    pub fn batch_loss(
        &self,
        g: &mut Graph<T>,
        batch: &[(&AcousticExample<T>, &CfmDraw<T>)],
    ) -> Result<Var> {
        if batch.is_empty() {
            return arg_err("empty batch");
        }
        let mut total: Option<Var> = None;
        for (ex, d) in batch {
            let l = self.example_loss(g, ex, d)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        Ok(g.scale(
            total.unwrap(),
            T::one() / T::from_usize(batch.len()).unwrap(),
        ))
    }

    /// Loss value a zero velocity would score on the same draws.
    pub fn zero_field_loss(&self, batch: &[(&AcousticExample<T>, &CfmDraw<T>)]) -> Result<f64> {
        let mut total = 0.0;
        for (ex, d) in batch {
            let targets: Vec<Tensor<T>> = ex.target.iter().map(|t| self.normalize(t)).collect();
            let m = hcat(&targets.iter().collect::<Vec<_>>());
            let u = flow_target(&m, &d.noise, self.cfg.sigma_min)?;
            let mut sse = 0.0;
            let mut n = 0usize;
            for (i, &mk) in d.mask.iter().enumerate() {
                if mk {
                    sse += u
                        .row(i)
                        .iter()
                        .map(|x| x.to_f64_lossy().powi(2))
                        .sum::<f64>();
                    n += u.cols();
                }
            }
            total += sse / n as f64;
        }
        Ok(total / batch.len() as f64)
    }

    /// Generates the masked rows by integrating the guided field from seeded
    /// noise; unmasked rows of the result equal `target_context` exactly.
    pub fn ode_sample(
        &self,
        cond: &Conditioning<T>,
        opts: &OdeOptions,
        seed: u64,
    ) -> Result<Vec<MelSpectrogram<T>>> {
        let cfg = &self.cfg;
        let frames = cond.mask.len();
        if cond.target_context.shape() != [frames, cfg.out_width()] {
            return shape_err(format!(
                "target context {:?}, expected [{frames}, {}]",
                cond.target_context.shape(),
                cfg.out_width()
            ));
        }
        let probe = AcousticExample {
            target: split_cols(&cond.target_context, cfg.variant.out_channels()),
            context: cond.context.clone(),
            tokens: cond.tokens.clone(),
        };
        probe.check(cfg)?;
        let ctx = self.masked_context(&cond.context, &cond.mask);
        let field = |phi: &Tensor<T>, t: f64, conditional: bool| -> Result<Tensor<T>> {
            let mut g = Graph::inference();
            let w = g.constant(phi.clone());
            let c = conditional.then(|| (&ctx[..], &cond.tokens[..]));
            let v = self.velocity(&mut g, w, t, c)?;
            Ok(g.value(v).clone())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m0 = standard_normal(&[frames, cfg.out_width()], &mut rng);
        let known = self.normalize(&cond.target_context);
        let opts = OdeOptions {
            sigma_min: cfg.sigma_min,
            ..*opts
        };
        let out = self.denormalize(&integrate(&field, &m0, &cond.mask, &known, &opts)?);
        let mut out = split_cols(&out, cfg.variant.out_channels());
        let raw = split_cols(&cond.target_context, cfg.variant.out_channels());
        for (o, r) in out.iter_mut().zip(&raw) {
            for (i, &m) in cond.mask.iter().enumerate() {
                if !m {
                    o.row_mut(i).copy_from_slice(r.row(i));
                }
            }
        }
        out.into_iter().map(MelSpectrogram::new).collect()
    }
}

/// Conditioning with each speaker's prompt in front and `tokens` to generate
/// after it. Prompts shorter than the longest are padded with `pad_mel`
/// frames and `pad_token`.
pub fn prompted_conditioning<T: Scalar>(
    variant: AcousticVariant,
    prompts: &[(&MelSpectrogram<T>, &[usize])],
    tokens: &[Vec<usize>],
    pad_mel: T,
    pad_token: usize,
) -> Result<Conditioning<T>> {
    let c = variant.in_channels();
    if prompts.len() != c || tokens.len() != c {
        return shape_err(format!(
            "{} variant takes {c} prompts and token streams",
            variant.name()
        ));
    }
    let n_mels = prompts[0].0.n_mels();
    let p = prompts.iter().map(|(m, _)| m.frames()).max().unwrap_or(0);
    let gen = tokens[0].len();
    if tokens.iter().any(|t| t.len() != gen) || gen == 0 {
        return shape_err("token streams must be nonempty and of equal length");
    }
    let frames = p + gen;
    let mut context = Vec::new();
    let mut toks = Vec::new();
    for ((mel, ptok), gt) in prompts.iter().zip(tokens) {
        if mel.n_mels() != n_mels || ptok.len() != mel.frames() {
            return shape_err("prompt mel and prompt tokens disagree");
        }
        let mut data = Vec::with_capacity(frames * n_mels);
        data.extend_from_slice(mel.values.data());
        data.resize(frames * n_mels, pad_mel);
        let mut tk = ptok.to_vec();
        tk.resize(p, pad_token);
        tk.extend_from_slice(gt);
        let full = Tensor::matrix(frames, n_mels, data)?;
        context.push(full);
        toks.push(tk);
    }
    let known = match variant {
        AcousticVariant::Single => context[0].clone(),
        AcousticVariant::Stereo => hcat(&[&context[0], &context[1]]),
        AcousticVariant::Mix => {
            let a = MelSpectrogram::new(context[0].clone())?;
            let b = MelSpectrogram::new(context[1].clone())?;
            log_add_mels(&a, &b)?.values
        }
    };
    Ok(Conditioning {
        context,
        tokens: toks,
        target_context: known,
        mask: (0..frames).map(|i| i >= p).collect(),
    })
}
