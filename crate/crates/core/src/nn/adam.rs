use std::path::Path;

use super::{Archive, ArchiveEntry, ParamStore, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::Scalar;

/// First/second moment estimates and step count for [`adam_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Writes the moments as `m.<param>` / `v.<param>` archive entries plus
    /// the step count. Betas and epsilon are not stored.
    pub fn save(&self, params: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
        if self.m.len() != params.len() {
            return shape_err("optimizer state does not match parameters");
        }
        let mut entries = vec![ArchiveEntry {
            name: "step".into(),
            shape: vec![4],
            data: (0..4)
                .map(|k| ((self.step >> (16 * k)) & 0xffff) as f32)
                .collect(),
        }];
        for (i, (name, t)) in params.iter().enumerate() {
            for (prefix, buf) in [("m", &self.m[i]), ("v", &self.v[i])] {
                entries.push(ArchiveEntry {
                    name: format!("{prefix}.{name}"),
                    shape: t.shape().to_vec(),
                    data: buf.iter().map(|x| x.to_f64_lossy() as f32).collect(),
                });
            }
        }
        Archive { entries }.save(path)
    }

    /// Reads state written by [`save`](Self::save) for the same parameter set.
    pub fn load(params: &ParamStore<T>, path: impl AsRef<Path>) -> Result<Self> {
        let archive = Archive::load(path)?;
        let mut state = Self::new(params);
        let step = archive
            .get("step")
            .filter(|e| e.data.len() == 4)
            .ok_or_else(|| Error::Format("optimizer state lacks a step count".into()))?;
        state.step = step
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| (x as u64) << (16 * k))
            .sum();
        for (i, (name, t)) in params.iter().enumerate() {
            for (prefix, buf) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let e = archive
                    .get(&format!("{prefix}.{name}"))
                    .filter(|e| e.shape == t.shape())
                    .ok_or_else(|| {
                        Error::Format(format!("optimizer state lacks {prefix}.{name}"))
                    })?;
                *buf = e.data.iter().map(|&x| T::lit(x as f64)).collect();
            }
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update. Fails without touching `params` when any
/// gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    lr: f64,
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return shape_err(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return shape_err(format!("adam: gradient shape for {name}"));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(state.eps));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (x, &gj)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= f);
        }
    }
    norm
}
