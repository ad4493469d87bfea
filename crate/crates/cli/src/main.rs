use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covomix_cli::eval::cmd_eval;
use covomix_cli::prepare::cmd_prepare;
use covomix_cli::quantize::cmd_fit_codebook;
use covomix_cli::synth::{cmd_synth, cmd_vc};
use covomix_cli::toy::cmd_toy_corpus;
use covomix_cli::train::{cmd_train, Which};
use covomix_cli::{init_threads, CliError, CliResult, RunConfig};
use covomix_core::acoustic::AcousticVariant;

#[derive(Parser)]
#[command(
    name = "covomix",
    version,
    about = "Zero-shot spoken dialogue generation at desk scale"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "COVOMIX_THREADS", default_value_t = 0, global = true)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from the last checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many epochs, leaving a resumable checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment recordings into dialogues and monologues and extract mels.
    Prepare,
    /// Fit the semantic codebook and tokenize every prepared channel.
    FitCodebook,
    /// Train the text-to-semantic model.
    TrainT2s(TrainArgs),
    /// Train the acoustic flow-matching model.
    TrainAcoustic(TrainArgs),
    /// Generate a dialogue from text with one prompt per speaker.
    Synth {
        #[arg(long)]
        text: String,
        /// Prompt audio or mel per speaker, in order of appearance.
        #[arg(long = "prompt", required = false)]
        prompts: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Re-voice a recording; pass `-` as a prompt for a silent channel.
    Vc {
        #[arg(long)]
        source: PathBuf,
        #[arg(long = "prompt")]
        prompts: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Compare generated files against references.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus of stereo recordings with transcripts.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        recordings: usize,
        /// Three-turn recordings instead of long conversations.
        #[arg(long)]
        short: bool,
    },
}

fn load_config(g: &Global) -> CliResult<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&g.overrides)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &g.work_dir {
        cfg.work_dir = d.clone();
    }
    Ok(cfg)
}

fn sampling_overrides(
    cfg: &mut RunConfig,
    steps: Option<usize>,
    alpha: Option<f64>,
    variant: Option<String>,
) -> CliResult<Option<AcousticVariant>> {
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    variant
        .map(|v| AcousticVariant::parse(&v).map_err(|e| CliError::Usage(e.to_string())))
        .transpose()
}

fn run(cli: Cli) -> CliResult<i32> {
    init_threads(cli.global.threads);
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Prepare => {
            let r = cmd_prepare(&cfg)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("{r}");
        }
        Command::FitCodebook => {
            let r = cmd_fit_codebook(&cfg)?;
            println!(
                "codebook of {} from {} frames, {} iterations, objective {:.6}, silence token {}",
                r.size, r.frames, r.iterations, r.objective, r.silence_id
            );
        }
        Command::TrainT2s(a) => report_train(cmd_train(&cfg, Which::T2S, a.resume, a.stop_after)?),
        Command::TrainAcoustic(a) => {
            report_train(cmd_train(&cfg, Which::Acoustic, a.resume, a.stop_after)?)
        }
        Command::Synth {
            text,
            prompts,
            out,
            steps,
            alpha,
            variant,
        } => {
            let v = sampling_overrides(&mut cfg, steps, alpha, variant)?;
            let r = cmd_synth(&cfg, &text, &prompts, &out, v)?;
            println!("{} frames", r.frames);
            for f in &r.files {
                println!("{}", f.display());
            }
        }
        Command::Vc {
            source,
            prompts,
            out,
            steps,
            alpha,
            variant,
        } => {
            let v = sampling_overrides(&mut cfg, steps, alpha, variant)?;
            let prompts: Vec<Option<PathBuf>> = prompts
                .iter()
                .map(|p| (p != "-").then(|| PathBuf::from(p)))
                .collect();
            let r = cmd_vc(&cfg, &source, &prompts, &out, v)?;
            println!("{} frames", r.frames);
            for f in &r.files {
                println!("{}", f.display());
            }
        }
        Command::Eval {
            hyp,
            reference,
            out,
        } => {
            let r = cmd_eval(&cfg, &hyp, &reference, &out)?;
            println!("{} pairs", r.pairs);
            if let Some(m) = r.mean_mcd {
                println!("mean MCD-DTW {m:.3} dB");
            }
            for u in &r.unpaired {
                println!("unpaired {u}");
            }
            return Ok(r.exit_code());
        }
        Command::ToyCorpus {
            out,
            recordings,
            short,
        } => {
            let files = cmd_toy_corpus(&out, recordings, cfg.seed, short)?;
            println!("{} files written to {}", files.len(), out.display());
        }
    }
    Ok(0)
}

fn report_train(o: covomix_cli::train::TrainOutcome) {
    let val = o.last_val.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let status = if o.finished { "finished" } else { "paused" };
    println!(
        "{status} after {} epochs, {} steps; validation loss {val}",
        o.state.epoch, o.state.step
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
