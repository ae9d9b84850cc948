//! Score networks for both stages.
//!
//! Both predict the forward-process noise `eps` and report the score as
//! `-eps_hat / sigma_t`. Their input is the offset from the prior scaled to
//! unit variance, `u = (x_t - z) / sqrt(sigma^2 + alpha^2 c^2)`, where `c` is
//! the expected spread of `x0 - z`. A learnable gain times
//! `sigma / sqrt(sigma^2 + alpha^2 c^2) * u` is added to the network output;
//! that term alone is the exact noise predictor when `x0 - z ~ N(0, c^2)`, so
//! the trained layers only model the departure from it. With every
//! parameter at zero the output is zero.

use rand_chacha::ChaCha8Rng;

use super::encoders::LOG_F0_CENTER;
use super::graph::{Graph, Var};
use super::layers::{conv1d, conv2d, init_time_mlp, linear, time_mlp};
use super::params::{Init, ParamStore};
use super::style::StyleEmbedding;
use super::tensor::{Real, Tensor};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

const MEL_Z_CENTER: f64 = -6.0;
const MEL_Z_SCALE: f64 = 0.25;
const GROUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precondition {
    pub sigma: f64,
    /// Multiplies `x_t - z` to form the network input.
    pub in_scale: f64,
    /// Coefficient of the input in the analytic skip path.
    pub skip: f64,
}

pub fn precondition(sched: &NoiseSchedule, t: f64, residual_scale: f64) -> Result<Precondition> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("denoiser time {t} outside (0, 1]")));
    }
    let m = sched.marginal(t)?;
    let sigma = m.std();
    let in_scale = 1.0 / (m.variance + (m.alpha * residual_scale).powi(2)).sqrt();
    Ok(Precondition {
        sigma,
        in_scale,
        skip: sigma * in_scale,
    })
}

fn eps_to_score(eps: &Tensor<f32>, sigma: f64) -> Vec<f64> {
    eps.data().iter().map(|&e| -(e as f64) / sigma).collect()
}

/// Adds `gain * skip * u` to `out`.
fn add_skip<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, out: Var, u: Var, skip: f64) -> Result<Var> {
    let gain = g.param(p, &format!("{prefix}.skip_gain"))?;
    let su = g.scale(u, skip);
    let su = g.mul_scalar(su, gain)?;
    g.add(out, su)
}

/// WaveNet-style stack of gated dilated convolutions over a contour.
#[derive(Debug, Clone)]
pub struct PitchDenoiser {
    pub prefix: String,
    pub channels: usize,
    pub dilations: Vec<usize>,
    pub d_style: usize,
    pub time_embed_dim: usize,
    pub residual_scale: f64,
    pub sched: NoiseSchedule,
}

impl PitchDenoiser {
    fn hidden(&self) -> usize {
        2 * self.channels
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let (p, c) = (&self.prefix, self.channels);
        let mut init = Init { store, rng };
        init_time_mlp(&mut init, &format!("{p}.time"), self.time_embed_dim, self.hidden());
        init.conv1d(&format!("{p}.in"), 1, c, 1);
        for i in 0..self.dilations.len() {
            init.linear(&format!("{p}.l{i}.t"), self.hidden(), c);
            init.linear(&format!("{p}.l{i}.s"), self.d_style, 2 * c);
            init.conv1d(&format!("{p}.l{i}.dil"), c, 2 * c, 3);
            init.conv1d(&format!("{p}.l{i}.cond"), 2, 2 * c, 1);
            init.conv1d(&format!("{p}.l{i}.out"), c, 2 * c, 1);
        }
        init.conv1d(&format!("{p}.skip"), c, c, 1);
        init.zero_conv1d(&format!("{p}.final"), c, 1, 1);
        init.fill(format!("{p}.skip_gain"), &[1], 1.0);
    }

    /// Predicted noise `[1, L]` for a contour `x_t` with prior `z`.
    pub fn eps<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x_t: &[f64],
        z: &[f64],
        s: Var,
        t: f64,
    ) -> Result<(Var, Precondition)> {
        if x_t.len() != z.len() || x_t.is_empty() {
            return Err(Error::Shape(format!(
                "pitch denoiser: x_t has {} samples, prior {}",
                x_t.len(),
                z.len()
            )));
        }
        let pc = precondition(&self.sched, t, self.residual_scale)?;
        let l = x_t.len();
        let pre = &self.prefix;
        let u: Vec<T> = x_t.iter().zip(z).map(|(x, zv)| T::c((x - zv) * pc.in_scale)).collect();
        let u = g.input(Tensor::new(vec![1, l], u)?);
        let mut cond: Vec<T> = z
            .iter()
            .map(|&zv| if zv != 0.0 { T::c(zv - LOG_F0_CENTER) } else { T::zero() })
            .collect();
        cond.extend(z.iter().map(|&zv| if zv != 0.0 { T::one() } else { T::zero() }));
        let cond = g.input(Tensor::new(vec![2, l], cond)?);
        let temb = time_mlp(g, p, &format!("{pre}.time"), t, self.time_embed_dim)?;

        let h0 = conv1d(g, p, &format!("{pre}.in"), u, 1)?;
        let mut h = g.silu(h0);
        let c = self.channels;
        let mut skip_sum: Option<Var> = None;
        let res_scale = std::f64::consts::FRAC_1_SQRT_2;
        for (i, &d) in self.dilations.iter().enumerate() {
            let tp = linear(g, p, &format!("{pre}.l{i}.t"), temb)?;
            let y = g.add_channel(h, tp)?;
            let y = conv1d(g, p, &format!("{pre}.l{i}.dil"), y, d)?;
            let zc = conv1d(g, p, &format!("{pre}.l{i}.cond"), cond, 1)?;
            let y = g.add(y, zc)?;
            let sp = linear(g, p, &format!("{pre}.l{i}.s"), s)?;
            let y = g.add_channel(y, sp)?;
            let a = g.slice_channels(y, 0, c)?;
            let b = g.slice_channels(y, c, c)?;
            let a = g.tanh(a);
            let b = g.sigmoid(b);
            let gate = g.mul(a, b)?;
            let o = conv1d(g, p, &format!("{pre}.l{i}.out"), gate, 1)?;
            let res = g.slice_channels(o, 0, c)?;
            let sk = g.slice_channels(o, c, c)?;
            let hr = g.add(h, res)?;
            h = g.scale(hr, res_scale);
            skip_sum = Some(match skip_sum {
                Some(acc) => g.add(acc, sk)?,
                None => sk,
            });
        }
        let sk = skip_sum.ok_or_else(|| Error::Config("pitch denoiser has no layers".into()))?;
        let sk = g.scale(sk, 1.0 / (self.dilations.len() as f64).sqrt());
        let sk = conv1d(g, p, &format!("{pre}.skip"), sk, 1)?;
        let sk = g.silu(sk);
        let out = conv1d(g, p, &format!("{pre}.final"), sk, 1)?;
        Ok((add_skip(g, p, pre, out, u, pc.skip)?, pc))
    }

    /// Score estimate `-eps_hat / sigma_t`.
    pub fn score(&self, p: &ParamStore, x_t: &[f64], z: &[f64], s: &StyleEmbedding, t: f64) -> Result<Vec<f64>> {
        let mut g = Graph::<f32>::new();
        let sv = g.input(s.to_tensor());
        let (eps, pc) = self.eps(&mut g, p, x_t, z, sv, t)?;
        Ok(eps_to_score(g.value(eps), pc.sigma))
    }
}

/// Three-level 2-D U-Net over the `[frames, n_mels]` plane.
#[derive(Debug, Clone)]
pub struct MelDenoiser {
    pub prefix: String,
    pub channels: [usize; 3],
    pub d_style: usize,
    pub time_embed_dim: usize,
    pub residual_scale: f64,
    pub sched: NoiseSchedule,
}

impl MelDenoiser {
    fn hidden(&self) -> usize {
        2 * self.channels[0]
    }

    fn init_block(&self, init: &mut Init, name: &str, cin: usize, cout: usize) {
        init.conv2d(&format!("{name}.a"), cin, cout, 3);
        init.conv2d(&format!("{name}.b"), cout, cout, 3);
        init.linear(&format!("{name}.t"), self.hidden(), cout);
        init.linear(&format!("{name}.s"), self.d_style, cout);
        if cin != cout {
            init.conv2d(&format!("{name}.skip"), cin, cout, 1);
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let p = &self.prefix;
        let [c1, c2, c3] = self.channels;
        let mut init = Init { store, rng };
        init_time_mlp(&mut init, &format!("{p}.time"), self.time_embed_dim, self.hidden());
        init.conv2d(&format!("{p}.in"), 2, c1, 3);
        self.init_block(&mut init, &format!("{p}.d0"), c1, c1);
        self.init_block(&mut init, &format!("{p}.d1"), c1, c2);
        self.init_block(&mut init, &format!("{p}.d2"), c2, c3);
        self.init_block(&mut init, &format!("{p}.u1"), c3 + c2, c2);
        self.init_block(&mut init, &format!("{p}.u0"), c2 + c1, c1);
        init.zero_conv2d(&format!("{p}.out"), c1, 1, 3);
        init.fill(format!("{p}.skip_gain"), &[1], 1.0);
    }

    #[allow(clippy::too_many_arguments)]
    fn block<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var, temb: Var, s: Var, cin: usize, cout: usize) -> Result<Var> {
        let h = g.group_norm(x, GROUPS)?;
        let h = g.silu(h);
        let h = conv2d(g, p, &format!("{name}.a"), h)?;
        let tp = linear(g, p, &format!("{name}.t"), temb)?;
        let sp = linear(g, p, &format!("{name}.s"), s)?;
        let cond = g.add(tp, sp)?;
        let h = g.add_channel(h, cond)?;
        let h = g.group_norm(h, GROUPS)?;
        let h = g.silu(h);
        let h = conv2d(g, p, &format!("{name}.b"), h)?;
        let skip = if cin != cout { conv2d(g, p, &format!("{name}.skip"), x)? } else { x };
        g.add(h, skip)
    }

    /// Predicted noise `[1, frames, n_mels]`; `x_t` and `z` are frame-major.
    #[allow(clippy::too_many_arguments)]
    pub fn eps<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x_t: &[f64],
        z: &[f64],
        frames: usize,
        s: Var,
        t: f64,
    ) -> Result<(Var, Precondition)> {
        if frames == 0 || x_t.len() != z.len() || x_t.len() % frames != 0 {
            return Err(Error::Shape(format!(
                "mel denoiser: {} / {} values for {frames} frames",
                x_t.len(),
                z.len()
            )));
        }
        if frames % 4 != 0 {
            return Err(Error::PadRequired { frames, multiple: 4 });
        }
        let n_mels = x_t.len() / frames;
        if n_mels % 4 != 0 {
            return Err(Error::Shape(format!("{n_mels} Mel bins cannot be pooled twice")));
        }
        let pc = precondition(&self.sched, t, self.residual_scale)?;
        let pre = &self.prefix;
        let [c1, c2, c3] = self.channels;
        let mut input: Vec<T> = x_t.iter().zip(z).map(|(x, zv)| T::c((x - zv) * pc.in_scale)).collect();
        input.extend(z.iter().map(|&zv| T::c((zv - MEL_Z_CENTER) * MEL_Z_SCALE)));
        let x = g.input(Tensor::new(vec![2, frames, n_mels], input)?);
        let u = g.slice_channels(x, 0, 1)?;
        let temb = time_mlp(g, p, &format!("{pre}.time"), t, self.time_embed_dim)?;

        let h = conv2d(g, p, &format!("{pre}.in"), x)?;
        let h0 = self.block(g, p, &format!("{pre}.d0"), h, temb, s, c1, c1)?;
        let d = g.avg_pool2d(h0)?;
        let h1 = self.block(g, p, &format!("{pre}.d1"), d, temb, s, c1, c2)?;
        let d = g.avg_pool2d(h1)?;
        let h2 = self.block(g, p, &format!("{pre}.d2"), d, temb, s, c2, c3)?;
        let up = g.upsample2d(h2)?;
        let cat = g.concat(&[up, h1])?;
        let u1 = self.block(g, p, &format!("{pre}.u1"), cat, temb, s, c3 + c2, c2)?;
        let up = g.upsample2d(u1)?;
        let cat = g.concat(&[up, h0])?;
        let u0 = self.block(g, p, &format!("{pre}.u0"), cat, temb, s, c2 + c1, c1)?;
        let o = g.group_norm(u0, GROUPS)?;
        let o = g.silu(o);
        let out = conv2d(g, p, &format!("{pre}.out"), o)?;
        Ok((add_skip(g, p, pre, out, u, pc.skip)?, pc))
    }

    pub fn score(&self, p: &ParamStore, x_t: &[f64], z: &[f64], frames: usize, s: &StyleEmbedding, t: f64) -> Result<Vec<f64>> {
        let mut g = Graph::<f32>::new();
        let sv = g.input(s.to_tensor());
        let (eps, pc) = self.eps(&mut g, p, x_t, z, frames, sv, t)?;
        Ok(eps_to_score(g.value(eps), pc.sigma))
    }
}
