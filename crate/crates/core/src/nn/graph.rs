//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation as a node whose inputs have strictly
//! smaller indices, so the tape order is already topological and `backward`
//! is a single reverse sweep. Composite kernels (attention, RMS norm, rotary
//! embedding, cross-entropy) are single nodes with hand-written adjoints.

use std::collections::HashMap;

use super::params::ParamStore;
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Silu(Var),
    RmsNorm {
        x: Var,
        inv_rms: Vec<T>,
    },
    Rope {
        x: Var,
        heads: usize,
        offset: usize,
        base: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    MaskedSqErr {
        pred: Var,
        target: Vec<T>,
        rows: Vec<bool>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape plus the parameter bindings made during one forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: HashMap<String, Var>,
    track: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn rope_angle(pos: usize, pair: usize, head_dim: usize, base: f64) -> f64 {
    pos as f64 * base.powf(-2.0 * pair as f64 / head_dim as f64)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            track: true,
        }
    }

    /// A graph whose leaves never require gradients; used for inference.
    pub fn inference() -> Self {
        Self {
            track: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad && self.track,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown parameter {name}")))?;
        let v = self.leaf(t.clone(), true);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers an existing node as parameter `name` for later `param` calls.
    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    pub fn bound_param(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    fn row_op(&mut self, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(row).len() != c {
            return shape_err(format!(
                "row broadcast: {:?} onto {:?}",
                self.shape(row),
                self.shape(x)
            ));
        }
        let xs = self.value(x);
        let rv = self.value(row).data();
        let mut data = xs.data().to_vec();
        for i in 0..r {
            for (d, &w) in data[i * c..(i + 1) * c].iter_mut().zip(rv) {
                if mul {
                    *d *= w;
                } else {
                    *d += w;
                }
            }
        }
        let out = Tensor::new(xs.shape().to_vec(), data)?;
        let op = if mul {
            Op::MulRow(x, row)
        } else {
            Op::AddRow(x, row)
        };
        Ok(self.push(out, op, &[x, row]))
    }

    /// Adds a `[cols]` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, false)
    }

    /// Multiplies every row of `x` elementwise by a `[cols]` row vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, true)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::AddScalar(x), &[x])
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(b).len() != 2 {
            return shape_err(format!("matmul {:?} x {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            T::zero(),
            &mut out,
            n,
            1,
        );
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v / (T::one() + (-v).exp()));
        self.push(out, Op::Silu(x), &[x])
    }

    /// Row-wise `x / sqrt(mean(x²) + eps)` without a learned gain.
    pub fn rms_norm(&mut self, x: Var, eps: T) -> Var {
        let (r, c) = self.dims(x);
        let xs = self.value(x);
        let mut data = xs.data().to_vec();
        let mut inv_rms = Vec::with_capacity(r);
        let cn = T::from_usize(c).unwrap();
        for row in data.chunks_mut(c) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / cn;
            let inv = T::one() / (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
            inv_rms.push(inv);
        }
        let out = Tensor::new(xs.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::RmsNorm { x, inv_rms }, &[x])
    }

    /// Rotary position embedding over `heads` heads, interleaved pairs,
    /// rows indexed by absolute position `offset + row`.
    pub fn rope(&mut self, x: Var, heads: usize, offset: usize, base: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if heads == 0 || c % heads != 0 || (c / heads) % 2 != 0 {
            return shape_err(format!("rope: width {c} with {heads} heads"));
        }
        let hd = c / heads;
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for p in 0..hd / 2 {
                let a = rope_angle(offset + i, p, hd, base);
                let (s, co) = (T::lit(a.sin()), T::lit(a.cos()));
                for h in 0..heads {
                    let j = i * c + h * hd + 2 * p;
                    let (x0, x1) = (data[j], data[j + 1]);
                    data[j] = x0 * co - x1 * s;
                    data[j + 1] = x0 * s + x1 * co;
                }
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(
            out,
            Op::Rope {
                x,
                heads,
                offset,
                base,
            },
            &[x],
        ))
    }

    /// Exact scaled dot-product attention. `q: [T×D]`, `k, v: [S×D]`.
    /// With `causal`, query `i` attends to keys `0..=i` only.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (tq, d) = self.dims(q);
        let (s, dk) = self.dims(k);
        if dk != d || self.dims(v) != (s, d) {
            return shape_err(format!(
                "attention q {:?} k {:?} v {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            ));
        }
        if heads == 0 || d % heads != 0 {
            return shape_err(format!(
                "attention width {d} not divisible by {heads} heads"
            ));
        }
        if causal && s < tq {
            return shape_err("causal attention needs at least as many keys as queries");
        }
        let hd = d / heads;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![T::zero(); heads * tq * s];
        let mut out = vec![T::zero(); tq * d];
        for h in 0..heads {
            let off = h * hd;
            let p = &mut probs[h * tq * s..(h + 1) * tq * s];
            T::gemm(
                tq,
                hd,
                s,
                &qd[off..],
                d,
                1,
                &kd[off..],
                1,
                d,
                T::zero(),
                p,
                s,
                1,
            );
            for i in 0..tq {
                let row = &mut p[i * s..(i + 1) * s];
                let limit = if causal { i + 1 } else { s };
                let mut mx = T::neg_infinity();
                for x in row[..limit].iter_mut() {
                    *x *= scale;
                    mx = mx.max(*x);
                }
                let mut z = T::zero();
                for x in row[..limit].iter_mut() {
                    *x = (*x - mx).exp();
                    z += *x;
                }
                for x in row[..limit].iter_mut() {
                    *x /= z;
                }
                row[limit..].iter_mut().for_each(|x| *x = T::zero());
            }
            T::gemm(
                tq,
                s,
                hd,
                p,
                s,
                1,
                &vd[off..],
                d,
                1,
                T::zero(),
                &mut out[off..],
                d,
                1,
            );
        }
        let out = Tensor::matrix(tq, d, out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Row lookup: `table: [V×E]` → `[ids.len()×E]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, e) = self.dims(table);
        if ids.is_empty() {
            return shape_err("gather of zero rows");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return arg_err(format!("id {bad} outside table of {vocab} rows"));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), e, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Frame-wise concatenation along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let r = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return shape_err("concat: row counts differ");
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if width == 0 || start + width > c {
            return shape_err(format!("column slice {start}+{width} of {c}"));
        }
        let xs = self.value(x);
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&xs.row(i)[start..start + width]);
        }
        let out = Tensor::matrix(r, width, data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ_i w_i · (logsumexp(logits_i) − logits_i[target_i])`; rows with zero
    /// weight contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (r, k) = self.dims(logits);
        if targets.len() != r || weights.len() != r {
            return shape_err(format!(
                "cross entropy: {r} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return arg_err(format!("target {bad} outside {k} classes"));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); r * k];
        let mut total = T::zero();
        for i in 0..r {
            let row = lv.row(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[i * k..(i + 1) * k];
            let mut z = T::zero();
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - mx).exp();
                z += *pj;
            }
            p.iter_mut().for_each(|x| *x /= z);
            if weights[i] != T::zero() {
                total += weights[i] * (mx + z.ln() - row[targets[i]]);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `Σ_{rows with mask} Σ_j (target − pred)²`.
    pub fn masked_sq_err(&mut self, pred: Var, target: &Tensor<T>, rows: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(pred);
        if target.shape() != self.shape(pred) || rows.len() != r {
            return shape_err(format!(
                "masked squared error: pred {:?}, target {:?}, mask {}",
                self.shape(pred),
                target.shape(),
                rows.len()
            ));
        }
        let pv = self.value(pred).data();
        let mut total = T::zero();
        for i in (0..r).filter(|&i| rows[i]) {
            for j in 0..c {
                let d = target.data()[i * c + j] - pv[i * c + j];
                total += d * d;
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::MaskedSqErr {
                pred,
                target: target.data().to_vec(),
                rows: rows.to_vec(),
            },
            &[pred],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for ((x, &y), &o) in s.iter_mut().zip(g).zip(bv) {
                        *x += y * o;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((x, &y), &o) in s.iter_mut().zip(g).zip(av) {
                        *x += y * o;
                    }
                }
            }
            Op::AddRow(x, row) => {
                let c = self.value(*x).cols();
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
                if let Some(s) = self.slot(grads, *row) {
                    for chunk in g.chunks(c) {
                        s.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::MulRow(x, row) => {
                let c = self.value(*x).cols();
                let rv = self.value(*row).data();
                let xv = self.value(*x).data();
                if let Some(s) = self.slot(grads, *x) {
                    for (sc, gc) in s.chunks_mut(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            sc[j] += gc[j] * rv[j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *row) {
                    for (xc, gc) in xv.chunks(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            s[j] += gc[j] * xc[j];
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *f);
                }
            }
            Op::AddScalar(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    T::gemm(m, n, k, g, n, 1, bv, 1, n, T::one(), s, k, 1);
                }
                if let Some(s) = self.slot(grads, *b) {
                    // dB = Aᵀ · dC
                    T::gemm(k, m, n, av, 1, k, g, n, 1, T::one(), s, n, 1);
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                if let Some(s) = self.slot(grads, *x) {
                    for ((a, &gy), &v) in s.iter_mut().zip(g).zip(xv) {
                        let sig = T::one() / (T::one() + (-v).exp());
                        *a += gy * sig * (T::one() + v * (T::one() - sig));
                    }
                }
            }
            Op::RmsNorm { x, inv_rms } => {
                let c = self.value(*x).cols();
                let y = node.value.data();
                let cn = T::from_usize(c).unwrap();
                if let Some(s) = self.slot(grads, *x) {
                    for (i, &inv) in inv_rms.iter().enumerate() {
                        let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                        let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / cn;
                        for j in 0..c {
                            s[i * c + j] += (gr[j] - yr[j] * dot) * inv;
                        }
                    }
                }
            }
            Op::Rope {
                x,
                heads,
                offset,
                base,
            } => {
                let (r, c) = self.dims(*x);
                let hd = c / heads;
                if let Some(s) = self.slot(grads, *x) {
                    for i in 0..r {
                        for p in 0..hd / 2 {
                            let a = rope_angle(offset + i, p, hd, *base);
                            let (sn, co) = (T::lit(a.sin()), T::lit(a.cos()));
                            for h in 0..*heads {
                                let j = i * c + h * hd + 2 * p;
                                let (g0, g1) = (g[j], g[j + 1]);
                                s[j] += g0 * co + g1 * sn;
                                s[j + 1] += g1 * co - g0 * sn;
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, g, grads),
            Op::Gather { table, ids } => {
                let e = self.value(*table).cols();
                if let Some(s) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            s[id * e + j] += g[r * e + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(s) = self.slot(grads, p) {
                        for i in 0..rows {
                            for j in 0..w {
                                s[i * w + j] += g[i * total + start + j];
                            }
                        }
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let w = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for (i, gr) in g.chunks(w).enumerate() {
                        for j in 0..w {
                            s[i * c + start + j] += gr[j];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let k = self.value(*logits).cols();
                if let Some(s) = self.slot(grads, *logits) {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let f = g[0] * w;
                        for j in 0..k {
                            s[i * k + j] += f * probs[i * k + j];
                        }
                        s[i * k + t] -= f;
                    }
                }
            }
            Op::MaskedSqErr { pred, target, rows } => {
                let c = self.value(*pred).cols();
                let pv = self.value(*pred).data();
                let two = T::lit(2.0);
                if let Some(s) = self.slot(grads, *pred) {
                    for i in (0..rows.len()).filter(|&i| rows[i]) {
                        for j in i * c..(i + 1) * c {
                            s[j] += g[0] * two * (pv[j] - target[j]);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (tq, d) = self.dims(q);
        let s = self.dims(k).0;
        let hd = d / heads;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut dp = vec![T::zero(); tq * s];
        let mut dq = vec![T::zero(); tq * d];
        let mut dk = vec![T::zero(); s * d];
        let mut dv = vec![T::zero(); s * d];
        for h in 0..heads {
            let off = h * hd;
            let p = &probs[h * tq * s..(h + 1) * tq * s];
            // dV_h += Pᵀ·dO_h
            T::gemm(
                s,
                tq,
                hd,
                p,
                1,
                s,
                &g[off..],
                d,
                1,
                T::one(),
                &mut dv[off..],
                d,
                1,
            );
            // dP = dO_h·V_hᵀ
            T::gemm(
                tq,
                hd,
                s,
                &g[off..],
                d,
                1,
                &vd[off..],
                1,
                d,
                T::zero(),
                &mut dp,
                s,
                1,
            );
            for i in 0..tq {
                let pr = &p[i * s..(i + 1) * s];
                let dr = &mut dp[i * s..(i + 1) * s];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            T::gemm(
                tq,
                s,
                hd,
                &dp,
                s,
                1,
                &kd[off..],
                d,
                1,
                T::one(),
                &mut dq[off..],
                d,
                1,
            );
            T::gemm(
                s,
                tq,
                hd,
                &dp,
                1,
                s,
                &qd[off..],
                d,
                1,
                T::one(),
                &mut dk[off..],
                d,
                1,
            );
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(sl) = self.slot(grads, var) {
                sl.iter_mut().zip(&buf).for_each(|(a, &b)| *a += b);
            }
        }
    }
}
