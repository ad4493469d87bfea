//! Scalar-loop reference implementations shared by the integration tests.

#![allow(dead_code)]

use covomix_core::nn::{BlockConfig, ParamStore};

pub type M = Vec<Vec<f64>>;

pub fn p(store: &ParamStore<f64>, name: &str) -> M {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn matmul(a: &M, b: &M) -> M {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn linear(store: &ParamStore<f64>, prefix: &str, x: &M) -> M {
    let mut y = matmul(x, &p(store, &format!("{prefix}.w")));
    if let Some(b) = store.get(&format!("{prefix}.b")) {
        for row in y.iter_mut() {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    y
}

pub fn time_features(t: f64, dim: usize) -> M {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        e[i] = (1000.0 * t * freq).sin();
        e[half + i] = (1000.0 * t * freq).cos();
    }
    vec![e]
}

/// RMSNorm with a learned gain, or adaptive scale and shift from time features.
pub fn norm(store: &ParamStore<f64>, prefix: &str, x: &M, tf: Option<&M>, eps: f64) -> M {
    let d = x[0].len();
    let (scale, shift): (Vec<f64>, Vec<f64>) = match tf {
        Some(tf) => {
            let ss = linear(store, &format!("{prefix}.ada"), tf);
            (
                (0..d).map(|j| 1.0 + ss[0][j]).collect(),
                ss[0][d..].to_vec(),
            )
        }
        None => (p(store, &format!("{prefix}.g"))[0].clone(), vec![0.0; d]),
    };
    x.iter()
        .map(|row| {
            let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + eps).sqrt();
            (0..d).map(|j| row[j] * r * scale[j] + shift[j]).collect()
        })
        .collect()
}

pub fn rotate(x: &M, heads: usize, base: f64) -> M {
    let d = x[0].len();
    let hd = d / heads;
    let mut out = x.clone();
    for (pos, row) in out.iter_mut().enumerate() {
        for h in 0..heads {
            for pair in 0..hd / 2 {
                let theta = pos as f64 / base.powf(2.0 * pair as f64 / hd as f64);
                let j = h * hd + 2 * pair;
                let (a, b) = (x[pos][j], x[pos][j + 1]);
                row[j] = a * theta.cos() - b * theta.sin();
                row[j + 1] = a * theta.sin() + b * theta.cos();
            }
        }
    }
    out
}

pub fn attend(q: &M, k: &M, v: &M, heads: usize, causal: bool) -> M {
    let d = q[0].len();
    let hd = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        for i in 0..q.len() {
            let keys = if causal { i + 1 } else { k.len() };
            let mut scores = Vec::new();
            for j in 0..keys {
                let mut s = 0.0;
                for c in 0..hd {
                    s += q[i][h * hd + c] * k[j][h * hd + c];
                }
                scores.push(s / (hd as f64).sqrt());
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for j in 0..keys {
                let w = (scores[j] - mx).exp() / z;
                for c in 0..hd {
                    out[i][h * hd + c] += w * v[j][h * hd + c];
                }
            }
        }
    }
    out
}

pub fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn gather(store: &ParamStore<f64>, name: &str, ids: &[usize]) -> M {
    let t = p(store, name);
    ids.iter().map(|&i| t[i].clone()).collect()
}

/// Straight-line evaluation of one pre-norm block.
pub fn block(
    store: &ParamStore<f64>,
    prefix: &str,
    cfg: &BlockConfig,
    x: &M,
    tf: Option<&M>,
    mem: Option<&M>,
) -> M {
    let n = |name: &str, x: &M| norm(store, &format!("{prefix}.{name}"), x, tf, cfg.eps);
    let l = |name: &str, x: &M| linear(store, &format!("{prefix}.{name}"), x);
    let h = n("norm1", x);
    let q = rotate(&l("attn.wq", &h), cfg.heads, cfg.rope_base);
    let k = rotate(&l("attn.wk", &h), cfg.heads, cfg.rope_base);
    let v = l("attn.wv", &h);
    let a = l("attn.wo", &attend(&q, &k, &v, cfg.heads, cfg.causal));
    let mut x = add(x, &a);
    if let Some(mem) = mem {
        let h = n("norm_x", &x);
        let q = l("xattn.wq", &h);
        let k = l("xattn.wk", mem);
        let v = l("xattn.wv", mem);
        x = add(&x, &l("xattn.wo", &attend(&q, &k, &v, cfg.heads, false)));
    }
    let h = n("norm2", &x);
    let mut f = l("ffn.w1", &h);
    for row in f.iter_mut() {
        for v in row.iter_mut() {
            *v /= 1.0 + (-*v).exp();
        }
    }
    add(&x, &l("ffn.w2", &f))
}

/// Per-row log-softmax.
pub fn log_softmax(x: &M) -> M {
    x.iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            row.iter().map(|v| v - z).collect()
        })
        .collect()
}

/// Reads a golden file of one float per line; with `COVOMIX_BLESS` set it is
/// first rewritten from `reference`. The stored values must equal the
/// reference exactly.
pub fn golden(path: &std::path::Path, reference: &[f64]) -> Vec<f64> {
    if std::env::var_os("COVOMIX_BLESS").is_some() {
        let text: Vec<String> = reference.iter().map(|v| format!("{v:e}")).collect();
        std::fs::write(path, text.join("\n") + "\n").unwrap();
    }
    let stored: Vec<f64> = std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(stored.len(), reference.len());
    for (a, b) in stored.iter().zip(reference) {
        assert_eq!(a, b, "reference drifted from the stored golden output");
    }
    stored
}
