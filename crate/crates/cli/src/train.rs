//! Resumable training loop shared by both models.
//!
//! Randomness is derived from the run seed per epoch (shuffling) and per
//! optimizer step (flow-matching draws), so a run stopped at an epoch
//! boundary and resumed reproduces an uninterrupted run exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use covomix_core::acoustic::{
    AcousticConfig, AcousticExample, AcousticModel, AcousticVariant, CfmDraw,
};
use covomix_core::dataprep::serialize_transcript;
use covomix_core::dsp::read_mel;
use covomix_core::nn::{adam_step, clip_grad_norm, AdamState, Graph, ParamStore, Var};
use covomix_core::t2s::{StreamPair, T2SConfig, T2SExample, T2SModel, T2SVariant};
use covomix_core::tokenizer::{read_tokens, tokenize_text, Codebook, Vocab};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigValue, RunConfig, Schedule};
use crate::error::{data, CliError, CliResult};
use crate::manifest::{DialogueEntry, CODEBOOK, VOCAB};
use crate::quantize::load_dialogues;

pub const LAST: &str = "last.cvmx";
pub const BEST: &str = "best.cvmx";
pub const ADAM: &str = "adam.cvmx";
pub const STATE: &str = "state.json";
pub const LOSS_LOG: &str = "loss.csv";
const LOSS_HEADER: &str = "epoch,step,lr,train_loss,val_loss\n";

const STREAM_SHUFFLE: u64 = 1;
const STREAM_STEP: u64 = 2;
const STREAM_VAL: u64 = 3;

/// Independent generator for `(seed, stream, index)`.
pub fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.set_word_pos(index as u128 * (1 << 40));
    r
}

/// A model plus its data, seen by the loop as parameters and a loss.
pub trait Objective {
    fn params(&self) -> &ParamStore<f32>;
    fn params_mut(&mut self) -> &mut ParamStore<f32>;
    /// Replaces the parameters (and any settings stored with them).
    fn set_params(&mut self, params: ParamStore<f32>) -> CliResult<()>;
    fn train_len(&self) -> usize;
    /// Mean loss of the training items `items`.
    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        items: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> CliResult<Var>;
    fn validation_loss(&self) -> CliResult<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub schedule: Schedule,
    pub warmup_steps: usize,
    pub min_lr_ratio: f64,
    pub epochs: usize,
    pub max_steps: usize,
    pub batch: usize,
    pub eval_every: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl From<&RunConfig> for TrainOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            lr: c.lr,
            schedule: c.schedule,
            warmup_steps: c.warmup_steps,
            min_lr_ratio: c.min_lr_ratio,
            epochs: c.epochs,
            max_steps: c.max_steps,
            batch: c.batch,
            eval_every: c.eval_every,
            grad_clip: c.grad_clip,
            seed: c.seed,
        }
    }
}

impl TrainOptions {
    pub fn total_steps(&self, items: usize) -> usize {
        let total = self.epochs * items.div_ceil(self.batch.max(1));
        if self.max_steps > 0 {
            total.min(self.max_steps)
        } else {
            total
        }
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
                let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
                let floor = self.lr * self.min_lr_ratio;
                floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub best_val: Option<f64>,
    /// Training loss accumulated since the last logged row.
    pub pending_loss: f64,
    pub pending_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub last_val: Option<f64>,
    /// `false` when the run stopped early on request and can be resumed.
    pub finished: bool,
}

/// Where a run keeps its checkpoints and log.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn save(
        &self,
        params: &ParamStore<f32>,
        adam: &AdamState<f32>,
        state: &TrainState,
    ) -> CliResult<()> {
        params.save(self.path(LAST))?;
        adam.save(params, self.path(ADAM))?;
        fs::write(self.path(STATE), serde_json::to_string_pretty(state)?)?;
        Ok(())
    }

    fn append_row(&self, row: &str) -> CliResult<()> {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(self.path(LOSS_LOG))?;
        f.write_all(row.as_bytes())?;
        Ok(())
    }

    /// Drops log rows past `epoch`, left behind by a run that died after
    /// logging but before its next checkpoint.
    fn truncate_log(&self, epoch: usize) -> CliResult<()> {
        let text =
            fs::read_to_string(self.path(LOSS_LOG)).unwrap_or_else(|_| LOSS_HEADER.to_string());
        let mut out = String::from(LOSS_HEADER);
        for line in text.lines().skip(1) {
            let e: usize = line
                .split(',')
                .next()
                .and_then(|x| x.parse().ok())
                .unwrap_or(usize::MAX);
            if e <= epoch {
                out.push_str(line);
                out.push('\n');
            }
        }
        fs::write(self.path(LOSS_LOG), out)?;
        Ok(())
    }
}

fn check_finite(v: f64, what: &str, step: usize) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Numeric(format!(
            "{what} is {v} at step {step}; last good checkpoint kept"
        )))
    }
}

/// Runs (or resumes) training into `dir`.
///
/// `stop_after` ends the invocation after that many epochs with a checkpoint
/// so a later `resume` can finish the run. `early_stop` is consulted after
/// each validation.
pub fn train<O: Objective>(
    obj: &mut O,
    opts: &TrainOptions,
    dir: &Path,
    resume: bool,
    stop_after: Option<usize>,
    mut early_stop: impl FnMut(&O) -> bool,
) -> CliResult<TrainOutcome> {
    let run = RunDir(dir.to_path_buf());
    fs::create_dir_all(dir)?;
    let (mut adam, mut state) = if resume && run.path(STATE).exists() {
        let params = ParamStore::<f32>::load(run.path(LAST))?;
        obj.set_params(params)?;
        let adam = AdamState::load(obj.params(), run.path(ADAM))?;
        let state: TrainState = serde_json::from_str(&fs::read_to_string(run.path(STATE))?)?;
        run.truncate_log(state.epoch)?;
        (adam, state)
    } else {
        let adam = AdamState::new(obj.params());
        let state = TrainState::default();
        fs::write(run.path(LOSS_LOG), LOSS_HEADER)?;
        run.save(obj.params(), &adam, &state)?;
        obj.params().save(run.path(BEST))?;
        (adam, state)
    };
    let n = obj.train_len();
    if n == 0 {
        return data("no training examples");
    }
    let total = opts.total_steps(n);
    let mut last_val = None;
    let mut ran = 0;
    while state.epoch < opts.epochs && state.step < total {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut derive_rng(
            opts.seed,
            STREAM_SHUFFLE,
            state.epoch as u64,
        ));
        let mut lr = opts.lr;
        for items in order.chunks(opts.batch.max(1)) {
            if state.step >= total {
                break;
            }
            let mut rng = derive_rng(opts.seed, STREAM_STEP, state.step as u64);
            let mut g = Graph::new();
            let loss = obj.batch_loss(&mut g, items, &mut rng)?;
            let value = check_finite(g.value(loss).data()[0] as f64, "training loss", state.step)?;
            let grads = g.backward(loss)?;
            let mut grads = obj.params().grads_from(&g, &grads);
            if opts.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, opts.grad_clip);
            }
            lr = opts.lr_at(state.step, total);
            adam_step(obj.params_mut(), &grads, lr, &mut adam)?;
            state.pending_loss += value;
            state.pending_steps += 1;
            state.step += 1;
        }
        state.epoch += 1;
        ran += 1;
        let done = state.epoch >= opts.epochs || state.step >= total;
        let stopping = stop_after.is_some_and(|k| ran >= k);
        if state.epoch % opts.eval_every == 0 || done {
            let v = check_finite(obj.validation_loss()?, "validation loss", state.step)?;
            last_val = Some(v);
            let train_loss = state.pending_loss / state.pending_steps.max(1) as f64;
            state.pending_loss = 0.0;
            state.pending_steps = 0;
            let improved = state.best_val.map_or(true, |b| v < b);
            if improved {
                state.best_val = Some(v);
                obj.params().save(run.path(BEST))?;
            }
            run.save(obj.params(), &adam, &state)?;
            run.append_row(&format!(
                "{},{},{},{},{}\n",
                state.epoch,
                state.step,
                lr.render(),
                train_loss.render(),
                v.render()
            ))?;
            if early_stop(obj) {
                return Ok(TrainOutcome {
                    state,
                    last_val,
                    finished: true,
                });
            }
        } else if stopping {
            run.save(obj.params(), &adam, &state)?;
        }
        if stopping && !done {
            return Ok(TrainOutcome {
                state,
                last_val,
                finished: false,
            });
        }
    }
    Ok(TrainOutcome {
        state,
        last_val,
        finished: true,
    })
}

pub struct T2SObjective {
    pub model: T2SModel<f32>,
    pub train: Vec<T2SExample>,
    pub val: Vec<T2SExample>,
}

impl Objective for T2SObjective {
    fn params(&self) -> &ParamStore<f32> {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.model.params
    }
    fn set_params(&mut self, params: ParamStore<f32>) -> CliResult<()> {
        self.model = T2SModel::from_params(params)?;
        Ok(())
    }
    fn train_len(&self) -> usize {
        self.train.len()
    }
    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        items: &[usize],
        _rng: &mut ChaCha8Rng,
    ) -> CliResult<Var> {
        let batch: Vec<&T2SExample> = items.iter().map(|&i| &self.train[i]).collect();
        Ok(self.model.batch_loss(g, &batch)?)
    }
    fn validation_loss(&self) -> CliResult<f64> {
        let batch: Vec<&T2SExample> = self.val.iter().collect();
        let mut g = Graph::inference();
        let l = self.model.batch_loss(&mut g, &batch)?;
        Ok(g.value(l).data()[0] as f64)
    }
}

pub struct AcousticObjective {
    pub model: AcousticModel<f32>,
    pub train: Vec<AcousticExample<f32>>,
    pub val: Vec<AcousticExample<f32>>,
    /// Fixed conditional draws for validation.
    pub val_draws: Vec<CfmDraw<f32>>,
}

impl AcousticObjective {
    pub fn new(
        model: AcousticModel<f32>,
        train: Vec<AcousticExample<f32>>,
        val: Vec<AcousticExample<f32>>,
        seed: u64,
    ) -> CliResult<Self> {
        let mut rng = derive_rng(seed, STREAM_VAL, 0);
        let val_draws = val
            .iter()
            .map(|e| {
                let mut d = CfmDraw::sample(e.frames(), &model.cfg, &mut rng)?;
                d.drop = false;
                Ok(d)
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            model,
            train,
            val,
            val_draws,
        })
    }

    /// Validation loss a zero velocity would score on the same draws.
    pub fn zero_field_validation(&self) -> CliResult<f64> {
        let batch: Vec<_> = self.val.iter().zip(&self.val_draws).collect();
        Ok(self.model.zero_field_loss(&batch)?)
    }
}

impl Objective for AcousticObjective {
    fn params(&self) -> &ParamStore<f32> {
        &self.model.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.model.params
    }
    fn set_params(&mut self, params: ParamStore<f32>) -> CliResult<()> {
        self.model = AcousticModel::from_params(params)?;
        Ok(())
    }
    fn train_len(&self) -> usize {
        self.train.len()
    }
    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        items: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> CliResult<Var> {
        let draws = items
            .iter()
            .map(|&i| CfmDraw::sample(self.train[i].frames(), &self.model.cfg, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let batch: Vec<_> = items.iter().map(|&i| &self.train[i]).zip(&draws).collect();
        Ok(self.model.batch_loss(g, &batch)?)
    }
    fn validation_loss(&self) -> CliResult<f64> {
        let batch: Vec<_> = self.val.iter().zip(&self.val_draws).collect();
        let mut g = Graph::inference();
        let l = self.model.batch_loss(&mut g, &batch)?;
        Ok(g.value(l).data()[0] as f64)
    }
}

/// Training and validation dialogues: the last `val_count` entries are held
/// out, or with none held out the training set is reused.
pub fn split<T: Clone>(items: &[T], val_count: usize) -> CliResult<(Vec<T>, Vec<T>)> {
    if val_count >= items.len() && !items.is_empty() {
        return data(format!(
            "val_count {val_count} leaves no training dialogues"
        ));
    }
    let cut = items.len() - val_count;
    let train = items[..cut].to_vec();
    let val = if val_count == 0 {
        train.clone()
    } else {
        items[cut..].to_vec()
    };
    Ok((train, val))
}

pub fn t2s_run_dir(cfg: &RunConfig, variant: T2SVariant) -> PathBuf {
    cfg.work(format!("t2s-{}", variant.render()))
}

pub fn acoustic_run_dir(cfg: &RunConfig, variant: AcousticVariant) -> PathBuf {
    cfg.work(format!("acoustic-{}", variant.name()))
}

fn channel_tokens(cfg: &RunConfig, d: &DialogueEntry) -> CliResult<Vec<Vec<usize>>> {
    d.tokens
        .iter()
        .map(|p| {
            let path = cfg.work(p);
            if !path.exists() {
                return data(format!(
                    "{} missing; run fit-codebook first",
                    path.display()
                ));
            }
            Ok(read_tokens(&path)?.ids)
        })
        .collect()
}

/// Text/token pairs: one two-stream example per dialogue for the
/// multi-stream model, one per channel (that speaker's words only) for the
/// single-stream model.
pub fn t2s_examples(
    cfg: &RunConfig,
    dialogues: &[DialogueEntry],
    vocab: &Vocab,
    variant: T2SVariant,
    k: usize,
) -> CliResult<Vec<T2SExample>> {
    let mut out = Vec::new();
    for d in dialogues {
        let toks = channel_tokens(cfg, d)?;
        match variant {
            T2SVariant::CoMix => out.push(T2SExample {
                text: tokenize_text(&d.text, vocab).ids,
                streams: StreamPair::new(toks, k)?,
            }),
            T2SVariant::CoSingle => {
                for (spk, t) in d.speakers.iter().zip(toks) {
                    let own: Vec<_> = d
                        .utterances
                        .iter()
                        .filter(|u| &u.speaker == spk)
                        .cloned()
                        .collect();
                    out.push(T2SExample {
                        text: tokenize_text(&serialize_transcript(&own), vocab).ids,
                        streams: StreamPair::new(vec![t], k)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Mel/token examples in the layout of `variant`.
pub fn acoustic_examples(
    cfg: &RunConfig,
    dialogues: &[DialogueEntry],
    variant: AcousticVariant,
) -> CliResult<Vec<AcousticExample<f32>>> {
    let mut out = Vec::new();
    for d in dialogues {
        let toks = channel_tokens(cfg, d)?;
        let mels = d
            .mels
            .iter()
            .map(|p| Ok(read_mel::<f32>(&cfg.work(p))?.values))
            .collect::<CliResult<Vec<_>>>()?;
        match variant {
            AcousticVariant::Mix => out.push(AcousticExample {
                target: vec![read_mel::<f32>(&cfg.work(&d.mix_mel))?.values],
                context: mels,
                tokens: toks,
            }),
            AcousticVariant::Stereo => out.push(AcousticExample {
                target: mels.clone(),
                context: mels,
                tokens: toks,
            }),
            AcousticVariant::Single => {
                for (m, t) in mels.into_iter().zip(toks) {
                    out.push(AcousticExample {
                        target: vec![m.clone()],
                        context: vec![m],
                        tokens: vec![t],
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn load_codebook(cfg: &RunConfig) -> CliResult<Codebook<f32>> {
    let path = cfg.work(CODEBOOK);
    if !path.exists() {
        return data(format!(
            "{} missing; run fit-codebook first",
            path.display()
        ));
    }
    Ok(Codebook::load(&path)?)
}

pub fn load_vocab(cfg: &RunConfig) -> CliResult<Vocab> {
    let path = cfg.work(VOCAB);
    if !path.exists() {
        return data(format!("{} missing; run prepare first", path.display()));
    }
    Ok(Vocab::load(&path)?)
}

pub fn t2s_config(cfg: &RunConfig, vocab: &Vocab, cb: &Codebook<f32>) -> T2SConfig {
    let mut c = T2SConfig::desk(cfg.t2s_variant, vocab.len(), cb.size(), cb.silence_id);
    c.enc_layers = cfg.t2s_enc_layers;
    c.dec_layers = cfg.t2s_dec_layers;
    c.enc_dim = cfg.t2s_enc_dim;
    c.dec_dim = cfg.t2s_dec_dim;
    c.heads = cfg.t2s_heads;
    c.stop_run = cfg.t2s_stop_run;
    c
}

pub fn acoustic_config(cfg: &RunConfig, cb: &Codebook<f32>) -> AcousticConfig {
    let mut c = AcousticConfig::desk(cfg.acoustic_variant, cb.size());
    c.n_mels = cb.dim();
    c.layers = cfg.ac_layers;
    c.dim = cfg.ac_dim;
    c.heads = cfg.ac_heads;
    c.sem_dim = cfg.ac_sem_dim;
    c.time_dim = cfg.ac_time_dim;
    c.sigma_min = cfg.sigma_min;
    c.p_uncond = cfg.p_uncond;
    c
}

pub fn build_t2s(cfg: &RunConfig) -> CliResult<T2SObjective> {
    let vocab = load_vocab(cfg)?;
    let cb = load_codebook(cfg)?;
    let (train, val) = split(&load_dialogues(cfg)?, cfg.val_count)?;
    let k = cb.size();
    let model = T2SModel::new(t2s_config(cfg, &vocab, &cb), cfg.seed)?;
    Ok(T2SObjective {
        model,
        train: t2s_examples(cfg, &train, &vocab, cfg.t2s_variant, k)?,
        val: t2s_examples(cfg, &val, &vocab, cfg.t2s_variant, k)?,
    })
}

pub fn build_acoustic(cfg: &RunConfig) -> CliResult<AcousticObjective> {
    let cb = load_codebook(cfg)?;
    let (train, val) = split(&load_dialogues(cfg)?, cfg.val_count)?;
    let train = acoustic_examples(cfg, &train, cfg.acoustic_variant)?;
    let val = acoustic_examples(cfg, &val, cfg.acoustic_variant)?;
    let mut model = AcousticModel::new(acoustic_config(cfg, &cb), cfg.seed)?;
    model.fit_normalization(&train);
    AcousticObjective::new(model, train, val, cfg.seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    T2S,
    Acoustic,
}

/// Trains one model from the prepared work directory.
pub fn cmd_train(
    cfg: &RunConfig,
    which: Which,
    resume: bool,
    stop_after: Option<usize>,
) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let opts = TrainOptions::from(cfg);
    match which {
        Which::T2S => {
            let mut obj = build_t2s(cfg)?;
            train(
                &mut obj,
                &opts,
                &t2s_run_dir(cfg, cfg.t2s_variant),
                resume,
                stop_after,
                |_| false,
            )
        }
        Which::Acoustic => {
            let mut obj = build_acoustic(cfg)?;
            let dir = acoustic_run_dir(cfg, cfg.acoustic_variant);
            train(&mut obj, &opts, &dir, resume, stop_after, |_| false)
        }
    }
}
