mod common;

use std::fs;

use common::{prepared, segmentation_oracle, small_cfg, snapshot};
use covomix_cli::manifest::{read_jsonl, DialogueEntry, DIALOGUES, MONOLOGUES, SIMULATED};
use covomix_cli::prepare::cmd_prepare;
use covomix_cli::synth::{cmd_synth, cmd_vc};
use covomix_cli::toy::write_recordings;
use covomix_cli::train::{
    build_t2s, cmd_train, t2s_run_dir, train, Objective, TrainOptions, Which, BEST, LAST, LOSS_LOG,
};
use covomix_cli::{CliError, CliResult};
use covomix_core::corpus::{short_dialogues, toy_corpus, ToyConfig};
use covomix_core::nn::{Graph, ParamStore, Tensor, Var};
use covomix_core::tokenizer::read_tokens;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

#[test]
fn empty_data_dir_gives_empty_manifests_and_a_warning() {
    let root = tempdir().unwrap();
    let cfg = small_cfg(root.path());
    fs::create_dir_all(&cfg.data_dir).unwrap();
    let r = cmd_prepare(&cfg).unwrap();
    assert_eq!(r.dialogues, 0);
    assert!(!r.warnings.is_empty());
    for m in [DIALOGUES, MONOLOGUES, SIMULATED] {
        assert_eq!(fs::read_to_string(cfg.work(m)).unwrap(), "");
    }
}

#[test]
fn malformed_transcript_reports_its_line() {
    let root = tempdir().unwrap();
    let cfg = small_cfg(root.path());
    write_recordings(&cfg.data_dir, &short_dialogues(1, 0)).unwrap();
    let t = cfg.data_dir.join("dlg000.jsonl");
    let mut text = fs::read_to_string(&t).unwrap();
    text.push_str("{\"speaker\": \"alice\", \"start\": 2.0}\n");
    fs::write(&t, text).unwrap();
    let e = cmd_prepare(&cfg).unwrap_err();
    assert!(e.to_string().contains("line 4"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let root = tempdir().unwrap();
    let cfg = small_cfg(root.path());
    assert_eq!(cmd_prepare(&cfg).unwrap_err().exit_code(), 1);
}

#[test]
fn manifest_matches_segmentation_trace() {
    let root = tempdir().unwrap();
    let cfg = small_cfg(root.path());
    let recs = toy_corpus(&ToyConfig::default());
    let speakers: std::collections::BTreeSet<&str> = recs
        .iter()
        .flat_map(|r| r.utterances.iter().map(|u| u.speaker.as_str()))
        .collect();
    assert_eq!(speakers.len(), 4);
    write_recordings(&cfg.data_dir, &recs).unwrap();
    let report = cmd_prepare(&cfg).unwrap();
    let got: Vec<DialogueEntry> = read_jsonl(&cfg.work(DIALOGUES)).unwrap();
    let mut expected = Vec::new();
    for r in &recs {
        for span in segmentation_oracle(&r.utterances, cfg.max_duration) {
            let start = span
                .iter()
                .map(|&i| r.utterances[i].start)
                .fold(f64::INFINITY, f64::min);
            let end = span
                .iter()
                .map(|&i| r.utterances[i].end)
                .fold(f64::NEG_INFINITY, f64::max);
            expected.push((r.name.clone(), span.len(), start, end));
        }
    }
    assert!(!expected.is_empty());
    assert_eq!(report.dialogues, expected.len());
    let seen: Vec<(String, usize, f64, f64)> = got
        .iter()
        .map(|d| (d.recording.clone(), d.utterances.len(), d.start, d.end))
        .collect();
    assert_eq!(seen, expected);
}

#[test]
fn prepare_and_tokenize_are_deterministic() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    for root in [&a, &b] {
        let cfg = small_cfg(root.path());
        prepared(
            &cfg,
            &toy_corpus(&ToyConfig {
                recordings: 2,
                ..Default::default()
            }),
        );
    }
    let (sa, sb) = (
        snapshot(&a.path().join("work")),
        snapshot(&b.path().join("work")),
    );
    assert!(sa.keys().any(|k| k.to_string_lossy().ends_with(".semt")));
    assert_eq!(sa, sb);
}

#[test]
fn zero_epochs_checkpoints_the_initialization() {
    let root = tempdir().unwrap();
    let mut cfg = small_cfg(root.path());
    prepared(&cfg, &short_dialogues(3, 0));
    cfg.epochs = 0;
    let out = cmd_train(&cfg, Which::T2S, false, None).unwrap();
    assert_eq!(out.state.step, 0);
    let dir = t2s_run_dir(&cfg, cfg.t2s_variant);
    let init = root.path().join("init.cvmx");
    build_t2s(&cfg).unwrap().model.params.save(&init).unwrap();
    assert_eq!(fs::read(dir.join(BEST)).unwrap(), fs::read(&init).unwrap());
    assert_eq!(
        fs::read_to_string(dir.join(LOSS_LOG))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn resumed_run_matches_straight_run() {
    for which in [Which::T2S, Which::Acoustic] {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        let mut cfgs = Vec::new();
        for root in [&a, &b] {
            let mut cfg = small_cfg(root.path());
            cfg.epochs = 3;
            prepared(&cfg, &short_dialogues(5, 1));
            cfgs.push(cfg);
        }
        let straight = cmd_train(&cfgs[0], which, false, None).unwrap();
        let first = cmd_train(&cfgs[1], which, false, Some(1)).unwrap();
        assert!(!first.finished);
        assert_eq!(first.state.epoch, 1);
        let resumed = cmd_train(&cfgs[1], which, true, None).unwrap();
        assert!(resumed.finished);
        assert_eq!(resumed.state, straight.state);
        let (sa, sb) = (
            snapshot(&a.path().join("work")),
            snapshot(&b.path().join("work")),
        );
        assert_eq!(sa, sb);
    }
}

/// Quadratic bowl whose loss turns NaN from step `poison_at` on.
struct Poisoned {
    params: ParamStore<f32>,
    poison_at: std::cell::Cell<usize>,
}

impl Objective for Poisoned {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
    fn set_params(&mut self, params: ParamStore<f32>) -> CliResult<()> {
        self.params = params;
        Ok(())
    }
    fn train_len(&self) -> usize {
        2
    }
    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        _items: &[usize],
        _rng: &mut ChaCha8Rng,
    ) -> CliResult<Var> {
        let w = g.param(&self.params, "w")?;
        let sq = g.mul(w, w)?;
        let mut l = g.sum(sq);
        let left = self.poison_at.get();
        if left == 0 {
            l = g.add_scalar(l, f32::NAN);
        } else {
            self.poison_at.set(left - 1);
        }
        Ok(l)
    }
    fn validation_loss(&self) -> CliResult<f64> {
        let w = self.params.get("w").unwrap().data();
        Ok(w.iter().map(|x| (x * x) as f64).sum())
    }
}

#[test]
fn nan_loss_aborts_and_keeps_the_last_good_checkpoint() {
    let root = tempdir().unwrap();
    let mut params = ParamStore::new();
    params
        .insert("w", Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap())
        .unwrap();
    let mut obj = Poisoned {
        params,
        poison_at: std::cell::Cell::new(3),
    };
    let mut opts = TrainOptions::from(&small_cfg(root.path()));
    opts.batch = 1;
    opts.epochs = 5;
    let dir = root.path().join("run");
    let e = train(&mut obj, &opts, &dir, false, None, |_| false).unwrap_err();
    assert!(matches!(e, CliError::Numeric(_)), "{e}");
    assert_eq!(e.exit_code(), 3);
    let kept = ParamStore::<f32>::load(dir.join(LAST)).unwrap();
    assert!(kept.get("w").unwrap().is_finite());
    let log = fs::read_to_string(dir.join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    assert!(log.lines().nth(1).unwrap().starts_with("1,2,"));
}

fn trained(root: &std::path::Path) -> covomix_cli::RunConfig {
    let cfg = small_cfg(root);
    prepared(&cfg, &short_dialogues(4, 2));
    cmd_train(&cfg, Which::T2S, false, None).unwrap();
    cmd_train(&cfg, Which::Acoustic, false, None).unwrap();
    cfg
}

#[test]
fn synth_requires_a_prompt_per_speaker() {
    let root = tempdir().unwrap();
    let cfg = trained(root.path());
    let prompt = cfg.work("mels/dlg000-000.ch0.mel");
    let e = cmd_synth(
        &cfg,
        "hello [spkchange] there",
        &[prompt.clone()],
        &root.path().join("o"),
        None,
    )
    .unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let msg = e.to_string();
    assert!(msg.contains("speaker 1 and speaker 2"), "{msg}");
    let e = cmd_synth(&cfg, "hello", &[], &root.path().join("o"), None).unwrap_err();
    assert!(e.to_string().contains("speaker 1"), "{e}");
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let root = tempdir().unwrap();
    let cfg = trained(root.path());
    let prompts = [
        cfg.work("mels/dlg000-000.ch0.mel"),
        cfg.data_dir.join("dlg001.wav"),
    ];
    let text = "well maybe [spkchange] so";
    let a = cmd_synth(&cfg, text, &prompts, &root.path().join("out/a"), None).unwrap();
    let b = cmd_synth(&cfg, text, &prompts, &root.path().join("out/b"), None).unwrap();
    assert_eq!(a.frames, b.frames);
    let wavs = |r: &covomix_cli::synth::SynthReport| -> Vec<Vec<u8>> {
        r.files
            .iter()
            .filter(|f| f.extension().is_some_and(|e| e == "wav"))
            .map(|f| fs::read(f).unwrap())
            .collect()
    };
    assert!(!wavs(&a).is_empty());
    assert_eq!(wavs(&a), wavs(&b));
    let streams: Vec<_> = a
        .files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "semt"))
        .collect();
    assert_eq!(streams.len(), 2);
    for s in streams {
        assert_eq!(read_tokens(s).unwrap().ids.len(), a.frames);
    }
}

#[test]
fn vc_rewrites_each_channel() {
    let root = tempdir().unwrap();
    let mut cfg = trained(root.path());
    cfg.acoustic_variant = covomix_core::acoustic::AcousticVariant::Stereo;
    cmd_train(&cfg, Which::Acoustic, false, None).unwrap();
    let prompts = [
        Some(cfg.data_dir.join("dlg002.wav")),
        Some(cfg.data_dir.join("dlg003.wav")),
    ];
    let src = cfg.work("audio/dlg000-000.wav");
    let r = cmd_vc(&cfg, &src, &prompts, &root.path().join("vc/x"), None).unwrap();
    let names: Vec<String> = r
        .files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().to_string())
        .collect();
    assert_eq!(
        names,
        ["x.ch0.mel", "x.ch0.wav", "x.ch1.mel", "x.ch1.wav", "x.wav"]
    );
    let e = cmd_vc(&cfg, &src, &prompts[..1], &root.path().join("vc/y"), None).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let e = cmd_vc(
        &cfg,
        &src,
        &prompts,
        &root.path().join("vc/z"),
        Some(covomix_core::acoustic::AcousticVariant::Single),
    )
    .unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}
