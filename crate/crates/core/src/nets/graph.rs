//! Tape-based reverse-mode differentiation over a fixed set of tensor ops.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a one-element result walks the tape in reverse and
//! returns the gradient of every node.
//!
//! Layouts: 1-D signals are `[C, L]`, planes are `[C, H, W]`, convolution
//! kernels are `[Cout, Cin, K]` and `[Cout, Cin, K, K]` with odd `K` and
//! "same" zero padding.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddChannel(Var, Var),
    MulChannel(Var, Var),
    Linear(Var, Var, Var),
    Conv1d(Var, Var, usize),
    Conv2d(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    AvgPool1d(Var, usize),
    AvgPool2d(Var),
    Upsample2d(Var),
    GroupNorm(Var, usize),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Transpose2d(Var),
    Reshape(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    aux: Vec<T>,
}

#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Valid output range for a shift `off` over length `n`.
fn span(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.push_aux(op, value, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Tensor<T>, aux: Vec<T>) -> Var {
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    /// Parameter leaf, created once per name.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Uninitialized(format!("missing parameter {name}")))?
            .clone();
        let v = self.push(Op::Param, t);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let kt = T::c(k);
        let t = self.map(a, |x| x * kt);
        self.push(Op::Scale(a, k), t)
    }

    /// `x * s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.data(s).len() != 1 {
            return Err(shape_err(format!("mul_scalar by {:?}", self.shape(s))));
        }
        let k = self.data(s)[0];
        let t = self.map(x, |v| v * k);
        Ok(self.push(Op::MulScalar(x, s), t))
    }

    fn channel_check(&self, x: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let c = self.shape(x)[0];
        if self.shape(b) != [c] {
            return Err(shape_err(format!(
                "{what}: x {:?} with per-channel {:?}",
                self.shape(x),
                self.shape(b)
            )));
        }
        Ok((c, self.data(x).len() / c.max(1)))
    }

    /// Adds `b[c]` to every element of channel `c`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, inner) = self.channel_check(x, b, "add_channel")?;
        let mut t = self.value(x).clone();
        for (chunk, &bv) in t.data_mut().chunks_mut(inner).zip(self.data(b)) {
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        Ok(self.push(Op::AddChannel(x, b), t))
    }

    /// Multiplies channel `c` by `g[c]`.
    pub fn mul_channel(&mut self, x: Var, g: Var) -> Result<Var> {
        let (_, inner) = self.channel_check(x, g, "mul_channel")?;
        let mut t = self.value(x).clone();
        for (chunk, &gv) in t.data_mut().chunks_mut(inner).zip(self.data(g)) {
            chunk.iter_mut().for_each(|v| *v = *v * gv);
        }
        Ok(self.push(Op::MulChannel(x, g), t))
    }

    /// `W x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(shape_err(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n_out, n_in) = (ws[0], ws[1]);
        let xv = self.data(x);
        let wv = self.data(w);
        let out: Vec<T> = (0..n_out)
            .map(|o| dot(&wv[o * n_in..(o + 1) * n_in], xv) + self.data(b)[o])
            .collect();
        Ok(self.push(Op::Linear(x, w, b), Tensor::vector(out)))
    }

    /// Dilated 1-D convolution, `[Cin, L] * [Cout, Cin, K] -> [Cout, L]`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || ws[2] % 2 == 0 || dilation == 0 {
            return Err(shape_err(format!("conv1d: x {xs:?}, w {ws:?}, dilation {dilation}")));
        }
        let (cin, l) = (xs[0], xs[1]);
        let (cout, k) = (ws[0], ws[2]);
        let c = (k / 2) as isize;
        let xv = self.data(x);
        let wv = self.data(w);
        let mut y = vec![T::zero(); cout * l];
        for o in 0..cout {
            let yo = &mut y[o * l..(o + 1) * l];
            for i in 0..cin {
                let xi = &xv[i * l..(i + 1) * l];
                for kk in 0..k {
                    let off = (kk as isize - c) * dilation as isize;
                    let (lo, hi) = span(l, off);
                    let wt = wv[(o * cin + i) * k + kk];
                    let s = (lo as isize + off) as usize;
                    axpy(&mut yo[lo..hi], wt, &xi[s..s + hi - lo]);
                }
            }
        }
        Ok(self.push(Op::Conv1d(x, w, dilation), Tensor::new(vec![cout, l], y)?))
    }

    /// 2-D convolution, `[Cin, H, W] * [Cout, Cin, K, K] -> [Cout, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(shape_err(format!("conv2d: x {xs:?}, w {ws:?}")));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let c = (k / 2) as isize;
        let plane = h * wd;
        let xv = self.data(x);
        let wv = self.data(w);
        let mut y = vec![T::zero(); cout * plane];
        for o in 0..cout {
            let yo = &mut y[o * plane..(o + 1) * plane];
            for i in 0..cin {
                let xi = &xv[i * plane..(i + 1) * plane];
                for kh in 0..k {
                    let dh = kh as isize - c;
                    let (r0, r1) = span(h, dh);
                    for kw in 0..k {
                        let dw = kw as isize - c;
                        let (c0, c1) = span(wd, dw);
                        let wt = wv[((o * cin + i) * k + kh) * k + kw];
                        if wt == T::zero() {
                            continue;
                        }
                        for r in r0..r1 {
                            let src = (r as isize + dh) as usize * wd;
                            let s = (c0 as isize + dw) as usize;
                            axpy(&mut yo[r * wd + c0..r * wd + c1], wt, &xi[src + s..src + s + c1 - c0]);
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::Conv2d(x, w), Tensor::new(vec![cout, h, wd], y)?))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, T::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), t)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * sigmoid(x));
        self.push(Op::Silu(a), t)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.map(a, T::abs);
        self.push(Op::Abs(a), t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(Op::Square(a), t)
    }

    /// Mean of all elements, accumulated in `f64`.
    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().map(|&v| v.f()).sum::<f64>() / d.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(T::c(m)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().map(|&v| v.f()).sum::<f64>();
        self.push(Op::Sum(a), Tensor::scalar(T::c(s)))
    }

    /// Average pooling along the last axis of `[C, L]` by `factor`.
    pub fn avg_pool1d(&mut self, a: Var, factor: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || factor == 0 || s[1] % factor != 0 {
            return Err(shape_err(format!("avg_pool1d: {s:?} by {factor}")));
        }
        let (c, l) = (s[0], s[1]);
        let out: Vec<T> = self
            .data(a)
            .chunks(factor)
            .map(|ch| ch.iter().copied().sum::<T>() / T::c(factor as f64))
            .collect();
        Ok(self.push(Op::AvgPool1d(a, factor), Tensor::new(vec![c, l / factor], out)?))
    }

    /// 2x2 average pooling of `[C, H, W]`.
    pub fn avg_pool2d(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(shape_err(format!("avg_pool2d: {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (h2, w2) = (h / 2, w / 2);
        let x = self.data(a);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for r in 0..h2 {
                for col in 0..w2 {
                    let base = ch * h * w + 2 * r * w + 2 * col;
                    out[(ch * h2 + r) * w2 + col] =
                        T::c(0.25) * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        Ok(self.push(Op::AvgPool2d(a), Tensor::new(vec![c, h2, w2], out)?))
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]`.
    pub fn upsample2d(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(shape_err(format!("upsample2d: {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let x = self.data(a);
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for r in 0..2 * h {
                for col in 0..2 * w {
                    out[(ch * 2 * h + r) * 2 * w + col] = x[(ch * h + r / 2) * w + col / 2];
                }
            }
        }
        Ok(self.push(Op::Upsample2d(a), Tensor::new(vec![c, 2 * h, 2 * w], out)?))
    }

    /// Group normalisation without affine terms; channels split into
    /// `groups` equal groups.
    pub fn group_norm(&mut self, a: Var, groups: usize) -> Result<Var> {
        let s = self.shape(a);
        let c = s[0];
        if groups == 0 || c % groups != 0 {
            return Err(shape_err(format!("group_norm: {c} channels into {groups} groups")));
        }
        let n = self.data(a).len() / groups;
        let mut out = self.value(a).clone();
        let mut aux = Vec::with_capacity(groups);
        for g in out.data_mut().chunks_mut(n) {
            let mean = g.iter().map(|&v| v.f()).sum::<f64>() / n as f64;
            let var = g.iter().map(|&v| (v.f() - mean).powi(2)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + GN_EPS).sqrt();
            for v in g.iter_mut() {
                *v = T::c((v.f() - mean) * rstd);
            }
            aux.push(T::c(rstd));
        }
        Ok(self.push_aux(Op::GroupNorm(a, groups), out, aux))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let rest: Vec<usize> = self.shape(*first)[1..].to_vec();
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p)[1..] != rest[..] {
                return Err(shape_err(format!(
                    "concat: {:?} vs {:?}",
                    self.shape(p),
                    self.shape(*first)
                )));
            }
            c += self.shape(p)[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![c];
        shape.extend(rest);
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::new(shape, data)?))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if start + len > s[0] {
            return Err(shape_err(format!("slice {start}+{len} of {s:?}")));
        }
        let inner = self.data(a).len() / s[0];
        let data = self.data(a)[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        Ok(self.push(Op::SliceChannels(a, start), Tensor::new(shape, data)?))
    }

    /// `[A, B] -> [B, A]`.
    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err(format!("transpose2d: {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose2d(a), Tensor::new(vec![c, r], out)?))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), t))
    }

    /// Gradients of a one-element node with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Gradients of every parameter touched by this graph, by name.
    pub fn param_grads(&self, grads: &Grads<T>) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }

    fn backprop(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let out = node.value.data();
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data).expect("grad shape");
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, gd.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                acc(*a, like(*a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                acc(*b, like(*b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect()));
            }
            Op::Scale(a, k) => {
                let kt = T::c(*k);
                acc(*a, like(*a, gd.iter().map(|&v| v * kt).collect()))
            }
            Op::MulScalar(x, s) => {
                let k = self.data(*s)[0];
                acc(*x, like(*x, gd.iter().map(|&v| v * k).collect()));
                acc(*s, Tensor::scalar(dot(gd, self.data(*x))));
            }
            Op::AddChannel(x, b) => {
                let c = self.shape(*b)[0];
                let inner = gd.len() / c;
                acc(*x, g.clone());
                acc(*b, like(*b, gd.chunks(inner).map(|ch| ch.iter().copied().sum()).collect()));
            }
            Op::MulChannel(x, gm) => {
                let c = self.shape(*gm)[0];
                let inner = gd.len() / c;
                let gv = self.data(*gm);
                let xv = self.data(*x);
                let mut dx = gd.to_vec();
                for (ch, &k) in dx.chunks_mut(inner).zip(gv) {
                    ch.iter_mut().for_each(|v| *v = *v * k);
                }
                acc(*x, like(*x, dx));
                acc(
                    *gm,
                    like(*gm, gd.chunks(inner).zip(xv.chunks(inner)).map(|(a, b)| dot(a, b)).collect()),
                );
            }
            Op::Linear(x, w, b) => {
                let n_in = self.shape(*x)[0];
                let xv = self.data(*x);
                let wv = self.data(*w);
                let mut dx = vec![T::zero(); n_in];
                let mut dw = vec![T::zero(); wv.len()];
                for (o, &go) in gd.iter().enumerate() {
                    axpy(&mut dx, go, &wv[o * n_in..(o + 1) * n_in]);
                    axpy(&mut dw[o * n_in..(o + 1) * n_in], go, xv);
                }
                acc(*x, like(*x, dx));
                acc(*w, like(*w, dw));
                acc(*b, g.clone());
            }
            Op::Conv1d(x, w, dilation) => {
                let (cin, l) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (cout, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let c = (k / 2) as isize;
                let xv = self.data(*x);
                let wv = self.data(*w);
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                for o in 0..cout {
                    let go = &gd[o * l..(o + 1) * l];
                    for i in 0..cin {
                        let xi = &xv[i * l..(i + 1) * l];
                        for kk in 0..k {
                            let off = (kk as isize - c) * *dilation as isize;
                            let (lo, hi) = span(l, off);
                            let s = (lo as isize + off) as usize;
                            let wi = (o * cin + i) * k + kk;
                            dw[wi] = dw[wi] + dot(&go[lo..hi], &xi[s..s + hi - lo]);
                            axpy(&mut dx[i * l + s..i * l + s + hi - lo], wv[wi], &go[lo..hi]);
                        }
                    }
                }
                acc(*x, like(*x, dx));
                acc(*w, like(*w, dw));
            }
            Op::Conv2d(x, w) => {
                let (cin, h, wd) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let (cout, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let c = (k / 2) as isize;
                let plane = h * wd;
                let xv = self.data(*x);
                let wv = self.data(*w);
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                for o in 0..cout {
                    let go = &gd[o * plane..(o + 1) * plane];
                    for i in 0..cin {
                        let xi = &xv[i * plane..(i + 1) * plane];
                        let dxi = &mut dx[i * plane..(i + 1) * plane];
                        for kh in 0..k {
                            let dh = kh as isize - c;
                            let (r0, r1) = span(h, dh);
                            for kw in 0..k {
                                let dwc = kw as isize - c;
                                let (c0, c1) = span(wd, dwc);
                                let wi = ((o * cin + i) * k + kh) * k + kw;
                                let wt = wv[wi];
                                let mut accw = T::zero();
                                for r in r0..r1 {
                                    let src = (r as isize + dh) as usize * wd;
                                    let s = (c0 as isize + dwc) as usize;
                                    let gro = &go[r * wd + c0..r * wd + c1];
                                    accw = accw + dot(gro, &xi[src + s..src + s + c1 - c0]);
                                    axpy(&mut dxi[src + s..src + s + c1 - c0], wt, gro);
                                }
                                dw[wi] = dw[wi] + accw;
                            }
                        }
                    }
                }
                acc(*x, like(*x, dx));
                acc(*w, like(*w, dw));
            }
            Op::Tanh(a) => acc(*a, like(*a, gd.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)).collect())),
            Op::Sigmoid(a) => acc(*a, like(*a, gd.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)).collect())),
            Op::Silu(a) => {
                let xv = self.data(*a);
                acc(
                    *a,
                    like(
                        *a,
                        gd.iter()
                            .zip(xv)
                            .map(|(&g, &x)| {
                                let s = sigmoid(x);
                                g * (s + x * s * (T::one() - s))
                            })
                            .collect(),
                    ),
                );
            }
            Op::Abs(a) => acc(
                *a,
                like(
                    *a,
                    gd.iter()
                        .zip(self.data(*a))
                        .map(|(&g, &x)| if x == T::zero() { T::zero() } else { g * x.signum() })
                        .collect(),
                ),
            ),
            Op::Square(a) => acc(*a, like(*a, gd.iter().zip(self.data(*a)).map(|(&g, &x)| (g + g) * x).collect())),
            Op::Mean(a) => {
                let n = self.data(*a).len();
                acc(*a, Tensor::filled(self.shape(*a), gd[0] / T::c(n as f64)));
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.shape(*a), gd[0])),
            Op::AvgPool1d(a, factor) => {
                let d: Vec<T> = gd
                    .iter()
                    .flat_map(|&v| std::iter::repeat(v / T::c(*factor as f64)).take(*factor))
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::AvgPool2d(a) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (h2, w2) = (h / 2, w / 2);
                let mut d = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for r in 0..h {
                        for col in 0..w {
                            d[(ch * h + r) * w + col] = T::c(0.25) * gd[(ch * h2 + r / 2) * w2 + col / 2];
                        }
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::Upsample2d(a) => {
                let s = self.shape(*a);
                let (c, h, w) = (s[0], s[1], s[2]);
                let mut d = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for r in 0..2 * h {
                        for col in 0..2 * w {
                            let i = (ch * h + r / 2) * w + col / 2;
                            d[i] = d[i] + gd[(ch * 2 * h + r) * 2 * w + col];
                        }
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::GroupNorm(a, groups) => {
                let n = gd.len() / groups;
                let mut d = vec![T::zero(); gd.len()];
                for gi in 0..*groups {
                    let r = gi * n..(gi + 1) * n;
                    let (gg, yy) = (&gd[r.clone()], &out[r.clone()]);
                    let mg = gg.iter().map(|&v| v.f()).sum::<f64>() / n as f64;
                    let mgy = gg.iter().zip(yy).map(|(&a, &b)| a.f() * b.f()).sum::<f64>() / n as f64;
                    let rstd = node.aux[gi].f();
                    for ((dv, &gv), &yv) in d[r].iter_mut().zip(gg).zip(yy) {
                        *dv = T::c(rstd * (gv.f() - mg - yv.f() * mgy));
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.data(p).len();
                    acc(p, like(p, gd[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::SliceChannels(a, start) => {
                let inner = gd.len() / node.value.shape()[0];
                let mut d = vec![T::zero(); self.data(*a).len()];
                d[start * inner..start * inner + gd.len()].copy_from_slice(gd);
                acc(*a, like(*a, d));
            }
            Op::Transpose2d(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = gd[j * r + i];
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::Reshape(a) => acc(*a, like(*a, gd.to_vec())),
        }
    }
}
