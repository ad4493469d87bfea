use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, shape_err, Result};
use crate::nn::Tensor;
use crate::Scalar;

pub const SIGMA_MIN: f64 = 1e-4;

/// Point on the conditional path: `(1 − (1 − σ)·t)·m0 + t·m`.
pub fn sample_flow_point<T: Scalar>(
    m: &Tensor<T>,
    m0: &Tensor<T>,
    t: f64,
    sigma_min: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&t) {
        return arg_err(format!("flow time {t} outside [0, 1]"));
    }
    if m.shape() != m0.shape() {
        return shape_err(format!("target {:?} vs noise {:?}", m.shape(), m0.shape()));
    }
    let a = T::lit(1.0 - (1.0 - sigma_min) * t);
    let tt = T::lit(t);
    let data = m
        .data()
        .iter()
        .zip(m0.data())
        .map(|(&x, &z)| a * z + tt * x)
        .collect();
    Tensor::new(m.shape().to_vec(), data)
}

/// Regression target of the path: `m − (1 − σ)·m0`.
pub fn flow_target<T: Scalar>(m: &Tensor<T>, m0: &Tensor<T>, sigma_min: f64) -> Result<Tensor<T>> {
    if m.shape() != m0.shape() {
        return shape_err(format!("target {:?} vs noise {:?}", m.shape(), m0.shape()));
    }
    let b = T::lit(1.0 - sigma_min);
    let data = m
        .data()
        .iter()
        .zip(m0.data())
        .map(|(&x, &z)| x - b * z)
        .collect();
    Tensor::new(m.shape().to_vec(), data)
}

/// Classifier-free guidance: `(1 + α)·v_cond − α·v_uncond`.
pub fn guided_field<T: Scalar>(
    v_cond: &Tensor<T>,
    v_uncond: &Tensor<T>,
    alpha: f64,
) -> Result<Tensor<T>> {
    if v_cond.shape() != v_uncond.shape() {
        return shape_err("guidance fields differ in shape");
    }
    if alpha == 0.0 {
        return Ok(v_cond.clone());
    }
    let (a1, a) = (T::lit(1.0 + alpha), T::lit(alpha));
    let data = v_cond
        .data()
        .iter()
        .zip(v_uncond.data())
        .map(|(&c, &u)| a1 * c - a * u)
        .collect();
    Tensor::new(v_cond.shape().to_vec(), data)
}

/// One contiguous masked span covering a `Uniform(lo, hi)` fraction of the
/// frames, placed uniformly. A fraction below 1 always leaves at least one
/// frame unmasked.
pub fn make_training_mask<R: Rng>(
    frames: usize,
    rng: &mut R,
    lo: f64,
    hi: f64,
) -> Result<Vec<bool>> {
    if frames < 2 {
        return arg_err("a training mask needs at least two frames");
    }
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return arg_err(format!("mask fraction range [{lo}, {hi}] invalid"));
    }
    let frac = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let mut len = ((frac * frames as f64).round() as usize).clamp(1, frames);
    if frac < 1.0 {
        len = len.min(frames - 1);
    }
    let start = rng.gen_range(0..=frames - len);
    Ok((0..frames).map(|i| i >= start && i < start + len).collect())
}

pub fn standard_normal<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Euler,
    Midpoint,
}

/// A time-dependent vector field with an optional unconditional branch.
pub trait VectorField<T: Scalar> {
    fn eval(&self, phi: &Tensor<T>, t: f64, conditional: bool) -> Result<Tensor<T>>;
}

impl<T: Scalar, F> VectorField<T> for F
where
    F: Fn(&Tensor<T>, f64, bool) -> Result<Tensor<T>>,
{
    fn eval(&self, phi: &Tensor<T>, t: f64, conditional: bool) -> Result<Tensor<T>> {
        self(phi, t, conditional)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub steps: usize,
    pub alpha: f64,
    pub solver: Solver,
    pub sigma_min: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            steps: 32,
            alpha: 0.7,
            solver: Solver::Euler,
            sigma_min: SIGMA_MIN,
        }
    }
}

fn guided<T: Scalar, F: VectorField<T>>(
    f: &F,
    phi: &Tensor<T>,
    t: f64,
    alpha: f64,
) -> Result<Tensor<T>> {
    let vc = f.eval(phi, t, true)?;
    if alpha == 0.0 {
        return Ok(vc);
    }
    let vu = f.eval(phi, t, false)?;
    guided_field(&vc, &vu, alpha)
}

fn axpy<T: Scalar>(x: &Tensor<T>, a: T, v: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(v.data())
        .map(|(&p, &q)| p + a * q)
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Integrates the guided field from `t = 0` to `1` starting at `m0`.
///
/// Rows with `mask[i] == false` are pinned to the path point of `context`
/// before every field evaluation, so the field always sees the known prompt;
/// those rows of the result are `context` itself.
pub fn integrate<T: Scalar, F: VectorField<T>>(
    field: &F,
    m0: &Tensor<T>,
    mask: &[bool],
    context: &Tensor<T>,
    opts: &OdeOptions,
) -> Result<Tensor<T>> {
    if opts.steps < 1 {
        return arg_err("ODE sampling needs at least one step");
    }
    if m0.shape() != context.shape() || m0.rows() != mask.len() {
        return shape_err(format!(
            "noise {:?}, context {:?}, mask of {}",
            m0.shape(),
            context.shape(),
            mask.len()
        ));
    }
    let pin = |phi: &mut Tensor<T>, t: f64| {
        let a = T::lit(1.0 - (1.0 - opts.sigma_min) * t);
        let tt = T::lit(t);
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                let (z, c) = (m0.row(i), context.row(i));
                for ((p, &zz), &cc) in phi.row_mut(i).iter_mut().zip(z).zip(c) {
                    *p = a * zz + tt * cc;
                }
            }
        }
    };
    let mut phi = m0.clone();
    let dt = 1.0 / opts.steps as f64;
    for k in 0..opts.steps {
        let t = k as f64 * dt;
        pin(&mut phi, t);
        let v = guided(field, &phi, t, opts.alpha)?;
        phi = match opts.solver {
            Solver::Euler => axpy(&phi, T::lit(dt), &v),
            Solver::Midpoint => {
                let mut mid = axpy(&phi, T::lit(dt / 2.0), &v);
                pin(&mut mid, t + dt / 2.0);
                let vm = guided(field, &mid, t + dt / 2.0, opts.alpha)?;
                axpy(&phi, T::lit(dt), &vm)
            }
        };
    }
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            phi.row_mut(i).copy_from_slice(context.row(i));
        }
    }
    Ok(phi)
}
