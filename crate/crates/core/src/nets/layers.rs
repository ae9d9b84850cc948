use super::graph::{Graph, Var};
use super::params::{Init, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::Result;

pub(crate) fn linear<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    g.linear(x, w, b)
}

pub(crate) fn conv1d<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    let y = g.conv1d(x, w, dilation)?;
    g.add_channel(y, b)
}

pub(crate) fn conv2d<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    let y = g.conv2d(x, w)?;
    g.add_channel(y, b)
}

/// Sinusoidal features of `t` at geometrically spaced frequencies.
pub fn sinusoidal_embedding<T: Real>(t: f64, dim: usize) -> Tensor<T> {
    let half = (dim / 2).max(1);
    let pos = 1000.0 * t;
    let mut v = Vec::with_capacity(2 * half);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / (half.max(2) - 1) as f64).exp();
        v.push(T::c((pos * freq).sin()));
    }
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / (half.max(2) - 1) as f64).exp();
        v.push(T::c((pos * freq).cos()));
    }
    Tensor::vector(v)
}

pub(crate) fn init_time_mlp(init: &mut Init, prefix: &str, embed_dim: usize, hidden: usize) {
    init.linear(&format!("{prefix}.0"), 2 * (embed_dim / 2).max(1), hidden);
    init.linear(&format!("{prefix}.1"), hidden, hidden);
}

/// Sinusoidal embedding followed by a two-layer SiLU MLP.
pub(crate) fn time_mlp<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, t: f64, embed_dim: usize) -> Result<Var> {
    let e = g.input(sinusoidal_embedding(t, embed_dim));
    let h = linear(g, p, &format!("{prefix}.0"), e)?;
    let h = g.silu(h);
    linear(g, p, &format!("{prefix}.1"), h)
}
