//! Transformer block against a scalar-loop reference, plus rotary and
//! zero-init properties.

mod common;

use std::path::PathBuf;

use common::{block, time_features, M};

use covomix_core::nn::layers::{init_block, transformer_block};
use covomix_core::nn::{BlockConfig, Graph, ParamStore, Tensor, TimeEmbedding};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation of one causal, time-conditioned block.
fn reference_block(store: &ParamStore<f64>, cfg: &BlockConfig, x: &M, t: f64) -> M {
    let tf = time_features(t, cfg.time_dim.unwrap());
    block(store, "blk", cfg, x, Some(&tf), None)
}

fn fixture() -> (BlockConfig, ParamStore<f64>, M, f64) {
    let mut cfg = BlockConfig::new(8, 2);
    cfg.causal = true;
    cfg.time_dim = Some(6);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut store = ParamStore::new();
    init_block(&mut store, &mut rng, "blk", &cfg).unwrap();
    let x: M = (0..4)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (cfg, store, x, 0.37)
}

fn library_block(cfg: &BlockConfig, store: &ParamStore<f64>, x: &M, t: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_rows(x).unwrap());
    let tv = g.constant(TimeEmbedding::<f64>::new(t, cfg.time_dim.unwrap()).tensor());
    let y = transformer_block(&mut g, store, "blk", cfg, xv, Some(tv), None).unwrap();
    g.value(y).data().to_vec()
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/block_golden.txt")
}

/// The reference output, frozen once. Set `COVOMIX_BLESS=1` to rewrite it.
fn golden() -> Vec<f64> {
    let (cfg, store, x, t) = fixture();
    let reference: Vec<f64> = reference_block(&store, &cfg, &x, t).concat();
    common::golden(&golden_path(), &reference)
}

#[test]
fn block_matches_golden_reference() {
    let want = golden();
    let (cfg, store, x, t) = fixture();
    let got = library_block(&cfg, &store, &x, t);
    for (i, (a, b)) in got.iter().zip(&want).enumerate() {
        assert!(
            (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
            "element {i}: {a} vs {b}"
        );
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let (cfg, store, x, t) = fixture();
    assert_eq!(
        library_block(&cfg, &store, &x, t),
        library_block(&cfg, &store, &x, t)
    );
}

#[test]
fn zero_input_through_zeroed_outputs_stays_zero() {
    let mut cfg = BlockConfig::new(8, 2);
    cfg.zero_out = true;
    let mut store = ParamStore::new();
    init_block(&mut store, &mut ChaCha8Rng::seed_from_u64(1), "blk", &cfg).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[5, 8]));
    let y = transformer_block(&mut g, &store, "blk", &cfg, x, None, None).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rotation_at_position_zero_is_identity() {
    let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 8, row.clone()).unwrap());
    let y = g.rope(x, 2, 0, 10000.0).unwrap();
    assert_eq!(g.value(y).data(), &row[..]);
}

#[test]
fn mismatched_width_is_a_shape_error() {
    let (cfg, store, _, _) = fixture();
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[3, 6]));
    let t = g.constant(TimeEmbedding::<f64>::new(0.5, 6).tensor());
    assert!(transformer_block(&mut g, &store, "blk", &cfg, x, Some(t), None).is_err());
}

proptest! {
    #[test]
    fn rotation_preserves_norms(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 1..12),
        offset in 0usize..1000,
    ) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let y = g.rope(x, 2, offset, 10000.0).unwrap();
        let out = g.value(y);
        for (i, r) in rows.iter().enumerate() {
            for h in 0..2 {
                let n0: f64 = r[h * 4..h * 4 + 4].iter().map(|v| v * v).sum();
                let n1: f64 = out.row(i)[h * 4..h * 4 + 4].iter().map(|v| v * v).sum();
                prop_assert!((n0 - n1).abs() <= 1e-10 * (1.0 + n0));
            }
        }
    }
}
