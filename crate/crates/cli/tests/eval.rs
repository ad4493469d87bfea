use std::fs;
use std::path::{Path, PathBuf};

use covomix_cli::eval::{cmd_eval, HIST_CSV, LAUGHTER_CSV, MCD_CSV, SUMMARY, TURNS_CSV};
use covomix_cli::RunConfig;
use covomix_core::dsp::{write_mel, write_wav, MelSpectrogram, Waveform};
use covomix_core::nn::Tensor;
use serde_json::Value;
use tempfile::tempdir;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval")
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
}

fn ramp_mel(frames: usize, offset: f64) -> MelSpectrogram<f64> {
    MelSpectrogram::new(Tensor::from_fn(&[frames, 80], |i| {
        ((i * 7919) % 97) as f64 / 13.0 - 4.0 + offset
    }))
    .unwrap()
}

/// Cell-by-cell comparison; numeric cells agree to 1e-12.
fn assert_csv_eq(got: &str, want: &str, what: &str) {
    let (g, w): (Vec<&str>, Vec<&str>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(g.len(), w.len(), "{what}: row count\n{got}");
    for (gl, wl) in g.iter().zip(&w) {
        let (gc, wc): (Vec<&str>, Vec<&str>) = (gl.split(',').collect(), wl.split(',').collect());
        assert_eq!(gc.len(), wc.len(), "{what}: {gl} vs {wl}");
        for (a, b) in gc.iter().zip(&wc) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-12, "{what}: {gl} vs {wl}"),
                _ => assert_eq!(a, b, "{what}: {gl} vs {wl}"),
            }
        }
    }
}

fn cfg() -> RunConfig {
    let mut c = RunConfig::default();
    c.set("hist_edges", "0,0.25,0.75,2").unwrap();
    c
}

#[test]
fn fixture_report_matches_golden_files() {
    let root = tempdir().unwrap();
    let (hyp, reference, out) = (
        root.path().join("hyp"),
        root.path().join("ref"),
        root.path().join("out"),
    );
    copy_dir(&fixture().join("hyp"), &hyp);
    copy_dir(&fixture().join("ref"), &reference);
    let r = cmd_eval(&cfg(), &hyp, &reference, &out).unwrap();
    assert_eq!(r.pairs, 2);
    assert_eq!(r.exit_code(), 0);
    let expected = fixture().join("expected");
    for name in [
        TURNS_CSV,
        LAUGHTER_CSV,
        HIST_CSV,
        "consistency/e.json.hyp.csv",
        "consistency/e.json.ref.csv",
    ] {
        let got = fs::read_to_string(out.join(name)).unwrap();
        let want = fs::read_to_string(expected.join(name)).unwrap();
        assert_csv_eq(&got, &want, name);
    }
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY)).unwrap()).unwrap();
    let inter = &s["turn_taking"]["ref"]["inter_silence"];
    assert_eq!(inter["count"], 2);
    assert_eq!(inter["mean"], 0.75);
    assert_eq!(inter["median"], 0.75);
    assert_eq!(s["laughter"]["ref"]["count"], 1);
    assert_eq!(s["laughter"]["ref"]["mean_duration"], 0.5);
    assert_eq!(s["laughter"]["hyp"]["defined"], false);
    assert_eq!(s["mcd_dtw"]["count"], 0);
}

#[test]
fn identical_inputs_score_zero_mcd() {
    let root = tempdir().unwrap();
    let (hyp, reference, out) = (
        root.path().join("hyp"),
        root.path().join("ref"),
        root.path().join("out"),
    );
    for d in [&hyp, &reference] {
        fs::create_dir_all(d).unwrap();
        write_mel(&d.join("a.mel"), &ramp_mel(12, 0.0)).unwrap();
        write_mel(&d.join("b.mel"), &ramp_mel(7, 1.5)).unwrap();
        let w: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        let ch = Waveform::new(w, 8000).unwrap();
        write_wav(&d.join("c.wav"), &[&ch, &Waveform::silence(4000, 8000)]).unwrap();
    }
    let r = cmd_eval(&cfg(), &hyp, &reference, &out).unwrap();
    assert_eq!(r.pairs, 3);
    assert_eq!(r.mean_mcd, Some(0.0));
    let csv = fs::read_to_string(out.join(MCD_CSV)).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(
            row.rsplit(',').next().unwrap().parse::<f64>().unwrap(),
            0.0,
            "{row}"
        );
    }
}

#[test]
fn empty_dirs_give_an_empty_report_and_nonzero_exit() {
    let root = tempdir().unwrap();
    let (hyp, reference, out) = (
        root.path().join("hyp"),
        root.path().join("ref"),
        root.path().join("out"),
    );
    fs::create_dir_all(&hyp).unwrap();
    fs::create_dir_all(&reference).unwrap();
    let r = cmd_eval(&cfg(), &hyp, &reference, &out).unwrap();
    assert_eq!(r.pairs, 0);
    assert_ne!(r.exit_code(), 0);
    assert_eq!(
        fs::read_to_string(out.join(MCD_CSV))
            .unwrap()
            .lines()
            .count(),
        1
    );
    assert!(out.join(SUMMARY).exists());
}

#[test]
fn unpaired_files_are_listed_and_skipped() {
    let root = tempdir().unwrap();
    let (hyp, reference, out) = (
        root.path().join("hyp"),
        root.path().join("ref"),
        root.path().join("out"),
    );
    copy_dir(&fixture().join("hyp"), &hyp);
    copy_dir(&fixture().join("ref"), &reference);
    write_mel(&hyp.join("only.mel"), &ramp_mel(5, 0.0)).unwrap();
    let r = cmd_eval(&cfg(), &hyp, &reference, &out).unwrap();
    assert_eq!(r.pairs, 2);
    assert_eq!(r.unpaired, vec!["hyp/only.mel".to_string()]);
    assert_eq!(r.exit_code(), 2);
}
