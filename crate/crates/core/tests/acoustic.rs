//! Flow-matching path, guidance, ODE integration, masking, the acoustic
//! model's loss gradients and voice conversion.

use covomix_core::acoustic::{
    flow_target, guided_field, integrate, make_training_mask, sample_flow_point, voice_convert,
    AcousticConfig, AcousticExample, AcousticModel, AcousticVariant, CfmDraw, Conditioning,
    OdeOptions, Solver, MASK_FRACTION, SIGMA_MIN,
};
use covomix_core::dsp::{mel_spectrogram, MelConfig, Waveform};
use covomix_core::nn::{Graph, Tensor};
use covomix_core::tokenizer::Codebook;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-3.0..3.0))
}

fn tiny(variant: AcousticVariant, n_mels: usize, dim: usize) -> AcousticConfig {
    AcousticConfig {
        variant,
        n_mels,
        layers: 1,
        dim,
        heads: 2,
        semantic_vocab: 4,
        sem_dim: 2,
        time_dim: 4,
        sigma_min: SIGMA_MIN,
        p_uncond: 0.3,
        mel_mean: -1.0,
        mel_std: 2.0,
    }
}

fn example(cfg: &AcousticConfig, frames: usize, rng: &mut ChaCha8Rng) -> AcousticExample<f64> {
    let v = cfg.variant;
    AcousticExample {
        target: (0..v.out_channels())
            .map(|_| rand_tensor(rng, frames, cfg.n_mels))
            .collect(),
        context: (0..v.in_channels())
            .map(|_| rand_tensor(rng, frames, cfg.n_mels))
            .collect(),
        tokens: (0..v.in_channels())
            .map(|_| {
                (0..frames)
                    .map(|_| rng.gen_range(0..cfg.semantic_vocab))
                    .collect()
            })
            .collect(),
    }
}

#[test]
fn path_endpoints_hold_for_random_tensors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let m = rand_tensor(&mut rng, r, c);
        let z = rand_tensor(&mut rng, r, c);
        assert_eq!(sample_flow_point(&m, &z, 0.0, SIGMA_MIN).unwrap(), z);
        let end = sample_flow_point(&m, &z, 1.0, SIGMA_MIN).unwrap();
        for ((e, x), n) in end.data().iter().zip(m.data()).zip(z.data()) {
            assert!((e - (x + SIGMA_MIN * n)).abs() < 1e-12);
        }
        // The path is linear in t with slope equal to the regression target.
        let (t0, t1) = (rng.gen_range(0.0..0.5), rng.gen_range(0.5..1.0));
        let a = sample_flow_point(&m, &z, t0, SIGMA_MIN).unwrap();
        let b = sample_flow_point(&m, &z, t1, SIGMA_MIN).unwrap();
        let u = flow_target(&m, &z, SIGMA_MIN).unwrap();
        for ((p, q), s) in a.data().iter().zip(b.data()).zip(u.data()) {
            assert!(((q - p) / (t1 - t0) - s).abs() < 1e-9);
        }
    }
}

#[test]
fn guidance_is_the_stated_affine_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let c = rand_tensor(&mut rng, 3, 4);
        let u = rand_tensor(&mut rng, 3, 4);
        let alpha = rng.gen_range(0.0..3.0);
        assert_eq!(guided_field(&c, &u, 0.0).unwrap(), c);
        let same = guided_field(&c, &c, alpha).unwrap();
        for (a, b) in same.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = guided_field(&c, &u, alpha).unwrap();
        for ((x, vc), vu) in g.data().iter().zip(c.data()).zip(u.data()) {
            assert!((x - ((1.0 + alpha) * vc - alpha * vu)).abs() < 1e-12);
        }
    }
}

fn exp_field_error(steps: usize, solver: Solver, m0: &Tensor<f64>) -> f64 {
    // dφ/dt = φ from φ(0) = m0 ends at e·m0; guidance of identical branches is a no-op.
    let f = |phi: &Tensor<f64>, _: f64, _: bool| Ok(phi.clone());
    let opts = OdeOptions {
        steps,
        alpha: 0.7,
        solver,
        sigma_min: SIGMA_MIN,
    };
    let mask = vec![true; m0.rows()];
    let out = integrate(&f, m0, &mask, &Tensor::zeros(m0.shape()), &opts).unwrap();
    out.data()
        .iter()
        .zip(m0.data())
        .map(|(o, z)| (o - std::f64::consts::E * z).abs())
        .fold(0.0, f64::max)
}

#[test]
fn euler_converges_at_first_order_on_a_linear_field() {
    let m0 = Tensor::matrix(2, 2, vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    let e256 = exp_field_error(256, Solver::Euler, &m0);
    assert!(e256 <= 1e-2 * std::f64::consts::E * 2.0, "{e256}");
    let e512 = exp_field_error(512, Solver::Euler, &m0);
    let ratio = e512 / e256;
    assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
    let mid =
        exp_field_error(64, Solver::Midpoint, &m0) / exp_field_error(32, Solver::Midpoint, &m0);
    assert!((mid - 0.25).abs() <= 0.05, "midpoint ratio {mid}");
}

#[test]
fn mask_fraction_averages_to_the_middle_of_its_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = 500;
    let draws = 2000;
    let mut total = 0.0;
    for _ in 0..draws {
        let m = make_training_mask(frames, &mut rng, MASK_FRACTION.0, MASK_FRACTION.1).unwrap();
        let n = m.iter().filter(|&&x| x).count();
        let first = m.iter().position(|&x| x).unwrap();
        assert!(
            m[first..first + n].iter().all(|&x| x),
            "mask is not one span"
        );
        assert!(n as f64 >= MASK_FRACTION.0 * frames as f64 - 1.0 && n < frames);
        total += n as f64 / frames as f64;
    }
    let mean = total / draws as f64;
    assert!((mean - 0.85).abs() <= 0.02, "mean fraction {mean}");
}

#[test]
fn loss_ignores_unmasked_target_rows() {
    for v in [
        AcousticVariant::Single,
        AcousticVariant::Mix,
        AcousticVariant::Stereo,
    ] {
        let cfg = tiny(v, 3, 4);
        let m = AcousticModel::<f64>::new(cfg.clone(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = example(&m.cfg, 8, &mut rng);
        let mut d = CfmDraw::sample(8, &m.cfg, &mut rng).unwrap();
        d.mask = (0..8).map(|i| (2..6).contains(&i)).collect();
        let loss = |ex: &AcousticExample<f64>| {
            let mut g = Graph::new();
            let l = m.batch_loss(&mut g, &[(ex, &d)]).unwrap();
            g.value(l).data()[0]
        };
        let mut moved = ex.clone();
        for t in moved.target.iter_mut() {
            for i in [0, 1, 6, 7] {
                t.row_mut(i).iter_mut().for_each(|x| *x += 5.0);
            }
        }
        assert_eq!(loss(&ex), loss(&moved));
        let mut inside = ex.clone();
        inside.target[0].row_mut(3)[0] += 1.0;
        assert_ne!(loss(&ex), loss(&inside));
    }
}

#[test]
fn squared_error_gradient_vanishes_off_the_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pred = rand_tensor(&mut rng, 5, 3);
    let target = rand_tensor(&mut rng, 5, 3);
    let mask = [false, true, true, false, true];
    let mut g = Graph::new();
    let p = g.leaf(pred.clone(), true);
    let l = g.masked_sq_err(p, &target, &mask).unwrap();
    let grads = g.backward(l).unwrap();
    let gp = grads.get(p).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let want = if mask[i] {
                2.0 * (pred.row(i)[j] - target.row(i)[j])
            } else {
                0.0
            };
            assert!((gp[i * 3 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn cfm_loss_gradients_match_finite_differences() {
    const EPS: f64 = 1e-5;
    for (v, drop) in [
        (AcousticVariant::Mix, false),
        (AcousticVariant::Stereo, true),
    ] {
        let mut m = AcousticModel::<f64>::new(tiny(v, 3, 4), 7).unwrap();
        assert!(m.params.num_values() <= 1000, "{}", m.params.num_values());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Zero-initialised projections would hide every upstream gradient.
        for t in m.params.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-0.6..0.6));
        }
        let ex = example(&m.cfg, 5, &mut rng);
        let mut d = CfmDraw::sample(5, &m.cfg, &mut rng).unwrap();
        d.drop = drop;
        d.mask = vec![false, true, true, true, false];
        let loss_at = |params: &covomix_core::nn::ParamStore<f64>| {
            let mm = AcousticModel {
                cfg: m.cfg.clone(),
                params: params.clone(),
            };
            let mut g = Graph::new();
            let l = mm.batch_loss(&mut g, &[(&ex, &d)]).unwrap();
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let l = m.batch_loss(&mut g, &[(&ex, &d)]).unwrap();
        let grads = g.backward(l).unwrap();
        let analytic = m.params.grads_from(&g, &grads);
        for (ti, (name, t)) in m.params.iter().enumerate() {
            if drop && name == "sem.emb" {
                assert!(analytic[ti].data().iter().all(|&x| x == 0.0));
                continue;
            }
            let (mut worst, mut scale) = (0.0f64, 0.0f64);
            for j in 0..t.len() {
                let mut plus = m.params.clone();
                plus.tensors_mut()[ti].data_mut()[j] += EPS;
                let mut minus = m.params.clone();
                minus.tensors_mut()[ti].data_mut()[j] -= EPS;
                let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS);
                worst = worst.max((num - analytic[ti].data()[j]).abs());
                scale = scale.max(num.abs());
            }
            let rel = worst / scale.max(1e-12);
            assert!(rel <= 1e-5, "{} {name}: relative error {rel:e}", v.name());
        }
    }
}

#[test]
fn sampling_never_alters_prompt_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = AcousticModel::<f32>::new(tiny(AcousticVariant::Stereo, 4, 8), 10).unwrap();
    for t in m.params.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    let opts = OdeOptions {
        steps: 2,
        ..Default::default()
    };
    for k in 0..100 {
        let frames = rng.gen_range(2..12);
        let ex = example(&m.cfg, frames, &mut rng);
        let mut mask: Vec<bool> = (0..frames).map(|_| rng.gen_bool(0.5)).collect();
        mask[rng.gen_range(0..frames)] = false;
        let cast = |t: &Tensor<f64>| Tensor::from_fn(t.shape(), |i| t.data()[i] as f32);
        let known: Tensor<f64> = Tensor::from_fn(&[frames, 8], |i| {
            let (r, c) = (i / 8, i % 8);
            ex.target[c / 4].row(r)[c % 4]
        });
        let cond = Conditioning {
            context: ex.context.iter().map(cast).collect(),
            tokens: ex.tokens.clone(),
            target_context: cast(&known),
            mask: mask.clone(),
        };
        let out = m.ode_sample(&cond, &opts, k).unwrap();
        for (c, mel) in out.iter().enumerate() {
            for (i, &gen) in mask.iter().enumerate() {
                if !gen {
                    let want: Vec<f32> = ex.target[c].row(i).iter().map(|&x| x as f32).collect();
                    assert_eq!(mel.frame(i), &want[..]);
                }
            }
        }
    }
}

fn sine(freq: f64, samples: usize) -> Waveform<f32> {
    let s = (0..samples)
        .map(|n| (0.3 * (2.0 * std::f64::consts::PI * freq * n as f64 / 8000.0).sin()) as f32)
        .collect();
    Waveform::new(s, 8000).unwrap()
}

fn vc_fixture(variant: AcousticVariant) -> (AcousticModel<f32>, Codebook<f32>, MelConfig) {
    let mel_cfg = MelConfig::default();
    let floor = mel_cfg.log_floor() as f32;
    let tone = mel_spectrogram(&sine(440.0, 2000), &mel_cfg).unwrap();
    let mut rows = vec![floor; 80];
    rows.extend_from_slice(tone.frame(3));
    let cb = Codebook::new(Tensor::matrix(2, 80, rows).unwrap(), 0).unwrap();
    let mut cfg = tiny(variant, 80, 8);
    cfg.semantic_vocab = 2;
    (AcousticModel::new(cfg, 11).unwrap(), cb, mel_cfg)
}

#[test]
fn voice_conversion_keeps_length_and_allows_a_silent_channel() {
    let samples = 4000;
    let source = vec![sine(440.0, samples), Waveform::silence(samples, 8000)];
    let prompt = sine(220.0, 2400);
    let opts = OdeOptions {
        steps: 2,
        ..Default::default()
    };
    for v in [
        AcousticVariant::Single,
        AcousticVariant::Mix,
        AcousticVariant::Stereo,
    ] {
        let (m, cb, mel_cfg) = vc_fixture(v);
        let frames = mel_cfg.frames_for(samples);
        let out = voice_convert(
            &m,
            &cb,
            &source,
            &[Some(&prompt), None],
            &mel_cfg,
            &opts,
            2,
            5,
        )
        .unwrap();
        let want_channels = if v == AcousticVariant::Mix { 1 } else { 2 };
        assert_eq!(out.mels.len(), want_channels, "{}", v.name());
        assert_eq!(out.channels.len(), want_channels);
        for mel in &out.mels {
            assert_eq!((mel.frames(), mel.n_mels()), (frames, 80));
        }
        for w in &out.channels {
            assert_eq!(w.len(), mel_cfg.samples_for(frames));
        }
        assert_eq!(out.mixed.len(), mel_cfg.samples_for(frames));
        // The speaking channel cannot go without a prompt.
        assert!(voice_convert(&m, &cb, &source, &[None, None], &mel_cfg, &opts, 2, 5).is_err());
    }
}

#[test]
fn two_speaker_models_reject_mono_sources() {
    let (m, cb, mel_cfg) = vc_fixture(AcousticVariant::Stereo);
    let src = vec![sine(300.0, 2000)];
    let p = sine(200.0, 2000);
    assert!(voice_convert(
        &m,
        &cb,
        &src,
        &[Some(&p)],
        &mel_cfg,
        &OdeOptions::default(),
        2,
        1
    )
    .is_err());
}
