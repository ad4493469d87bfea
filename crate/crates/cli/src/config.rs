//! Flat `key = value` run settings shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use covomix_core::acoustic::{AcousticVariant, Solver};
use covomix_core::t2s::T2SVariant;

use crate::error::{usage, CliError, CliResult};

/// Learning-rate shape over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Cosine decay from `lr` to `lr · min_lr_ratio` after warmup.
    Cosine,
}

/// A value that can live in a run-config file.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{s:?} is not finite"))
        }
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse()
            .map_err(|_| format!("{s:?} is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse()
            .map_err(|_| format!("{s:?} is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("empty path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',').map(|x| f64::parse_value(x.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(f64::render).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Schedule {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            _ => Err(format!("{s:?} is not constant or cosine")),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Constant => "constant",
            Self::Cosine => "cosine",
        }
        .into()
    }
}

impl ConfigValue for T2SVariant {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "cosingle" => Ok(Self::CoSingle),
            "comix" => Ok(Self::CoMix),
            _ => Err(format!("{s:?} is not cosingle or comix")),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::CoSingle => "cosingle",
            Self::CoMix => "comix",
        }
        .into()
    }
}

impl ConfigValue for AcousticVariant {
    fn parse_value(s: &str) -> Result<Self, String> {
        Self::parse(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for Solver {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "euler" => Ok(Self::Euler),
            "midpoint" => Ok(Self::Midpoint),
            _ => Err(format!("{s:?} is not euler or midpoint")),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Euler => "euler",
            Self::Midpoint => "midpoint",
        }
        .into()
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident: $ty:ty = $default:expr;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            /// Every key, in dump order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty>::parse_value(value)
                            .map_err(|m| CliError::Usage(format!("{key}: {m}")))?;
                    })*
                    _ => return usage(format!("unknown setting {key:?}")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($key) => Some(self.$key.render()),)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    /// Directory of `<name>.jsonl` transcripts with matching `<name>.wav`.
    data_dir: PathBuf = PathBuf::from("data");
    /// Directory every artifact is written to and read from.
    work_dir: PathBuf = PathBuf::from("work");
    seed: u64 = 0;
    max_duration: f64 = 40.0;
    min_long_monologue: f64 = 10.0;
    min_short_monologue: f64 = 1.0;
    sim_turns: usize = 2;
    sim_gap_min: f64 = 0.2;
    sim_gap_max: f64 = 1.0;
    codebook_size: usize = 64;
    kmeans_iters: usize = 100;
    t2s_variant: T2SVariant = T2SVariant::CoMix;
    t2s_enc_layers: usize = 2;
    t2s_dec_layers: usize = 2;
    t2s_enc_dim: usize = 128;
    t2s_dec_dim: usize = 128;
    t2s_heads: usize = 2;
    t2s_stop_run: usize = 25;
    acoustic_variant: AcousticVariant = AcousticVariant::Mix;
    ac_layers: usize = 3;
    ac_dim: usize = 128;
    ac_heads: usize = 2;
    ac_sem_dim: usize = 32;
    ac_time_dim: usize = 32;
    lr: f64 = 1e-4;
    schedule: Schedule = Schedule::Constant;
    warmup_steps: usize = 0;
    min_lr_ratio: f64 = 0.01;
    epochs: usize = 10;
    /// Stop after this many optimizer steps; 0 means no limit.
    max_steps: usize = 0;
    batch: usize = 2;
    /// Validate and checkpoint every this many epochs.
    eval_every: usize = 1;
    /// Dialogues held out for validation from the end of the manifest; with
    /// 0 the training set doubles as validation set.
    val_count: usize = 0;
    /// Gradient norm ceiling; 0 disables clipping.
    grad_clip: f64 = 0.0;
    p_uncond: f64 = 0.3;
    alpha: f64 = 0.7;
    sigma_min: f64 = 1e-4;
    steps: usize = 32;
    solver: Solver = Solver::Euler;
    temperature: f64 = 0.0;
    max_frames: usize = 500;
    gl_iterations: usize = 60;
    hist_edges: Vec<f64> = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0, 5.0];
}

impl RunConfig {
    /// Parses `key = value` lines; blank lines and `#` comment lines are
    /// skipped. Unset keys keep their defaults.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("line {}: expected key = value", i + 1));
            };
            let k = k.trim();
            if seen.contains(&k) {
                return usage(format!("line {}: {k} set twice", i + 1));
            }
            seen.push(k);
            cfg.set(k, v.trim())
                .map_err(|e| CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                return usage(format!("override {o:?} is not key=value"));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let checks: [(bool, &str); 16] = [
            (self.max_duration > 0.0, "max_duration must be positive"),
            (
                self.min_long_monologue > 0.0 && self.min_short_monologue > 0.0,
                "monologue minimum durations must be positive",
            ),
            (
                self.sim_turns >= 2
                    && 0.0 <= self.sim_gap_min
                    && self.sim_gap_min <= self.sim_gap_max,
                "simulation needs at least 2 turns and 0 <= sim_gap_min <= sim_gap_max",
            ),
            (self.codebook_size >= 2, "codebook_size must be at least 2"),
            (self.kmeans_iters >= 1, "kmeans_iters must be at least 1"),
            (self.lr > 0.0, "lr must be positive"),
            (
                (0.0..=1.0).contains(&self.min_lr_ratio),
                "min_lr_ratio must lie in [0, 1]",
            ),
            (self.batch >= 1, "batch must be at least 1"),
            (self.eval_every >= 1, "eval_every must be at least 1"),
            (self.grad_clip >= 0.0, "grad_clip must be non-negative"),
            (
                (0.0..=1.0).contains(&self.p_uncond),
                "p_uncond must lie in [0, 1]",
            ),
            (
                (0.0..1.0).contains(&self.sigma_min),
                "sigma_min must lie in [0, 1)",
            ),
            (self.steps >= 1, "steps must be at least 1"),
            (self.temperature >= 0.0, "temperature must be non-negative"),
            (self.max_frames >= 1, "max_frames must be at least 1"),
            (
                self.hist_edges.len() >= 2 && self.hist_edges.windows(2).all(|w| w[0] < w[1]),
                "hist_edges must be increasing with at least two entries",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return usage(msg);
            }
        }
        Ok(())
    }

    pub fn work(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.work_dir.join(rel)
    }
}
