//! Finite-difference verification of every network's parameter gradients.
//!
//! The networks are generic over their element type; checks run them in
//! `f64` so the central differences are not swamped by `f32` rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::graph::{Graph, Var};
use super::models::{PitchModel, VoiceModel};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::diffusion::NoiseSchedule;
use crate::dsp::{ContentFeatures, MelSpectrogram};
use crate::error::Result;
use crate::oracle::finite_diff_check;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    StyleEmbedder,
    PitchEncoder,
    SourceFilterEncoder,
    PitchDenoiser,
    MelDenoiser,
}

impl NetKind {
    pub const ALL: [NetKind; 5] = [
        NetKind::StyleEmbedder,
        NetKind::PitchEncoder,
        NetKind::SourceFilterEncoder,
        NetKind::PitchDenoiser,
        NetKind::MelDenoiser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::StyleEmbedder => "style_embedder",
            NetKind::PitchEncoder => "pitch_encoder",
            NetKind::SourceFilterEncoder => "source_filter_encoder",
            NetKind::PitchDenoiser => "pitch_denoiser",
            NetKind::MelDenoiser => "mel_denoiser",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub kind: NetKind,
    pub n_tensors: usize,
    pub n_coords: usize,
    /// Largest per-tensor `||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)`.
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>>;

struct Scenario {
    params: ParamStore,
    build: Build,
}

const ABS_FLOOR: f64 = 1e-6;
const STYLE_INPUT: &str = "input.style";

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn scenario(kind: NetKind, seed: u64) -> Result<Scenario> {
    let cfg = ModelConfig::tiny();
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let frames = 8;
    let mel = MelSpectrogram::new(
        frames,
        80,
        (0..frames * 80).map(|_| rng.gen_range(-9.0f32..-1.0)).collect(),
    )?;
    let t = 0.37;
    // Downstream networks see the style embedding as an input tensor, so
    // each check covers one network plus the gradient w.r.t. its embedding.
    let style_in = Tensor::new(
        vec![cfg.d_style],
        (0..cfg.d_style).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )?;
    let scenario = match kind {
        NetKind::StyleEmbedder | NetKind::PitchEncoder | NetKind::PitchDenoiser => {
            let model = PitchModel::new(&cfg, sched, 80)?;
            let mut params = model.init(seed, None);
            params.insert(STYLE_INPUT, style_in);
            let l = 16;
            let voiced: Vec<bool> = (0..l).map(|i| i % 5 != 0).collect();
            let norm = rand_vec(&mut rng, l, -2.0, 2.0);
            let z: Vec<f64> = rand_vec(&mut rng, l, 4.5, 5.5)
                .into_iter()
                .zip(&voiced)
                .map(|(v, &on)| if on { v } else { 0.0 })
                .collect();
            let x_t: Vec<f64> = z.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
            let build: Build = match kind {
                NetKind::StyleEmbedder => Box::new(move |g, p| model.style.forward(g, p, &mel)),
                NetKind::PitchEncoder => Box::new(move |g, p| {
                    let s = g.param(p, STYLE_INPUT)?;
                    model.encoder.forward(g, p, &norm, &voiced, s)
                }),
                _ => Box::new(move |g, p| {
                    let s = g.param(p, STYLE_INPUT)?;
                    Ok(model.denoiser.eps(g, p, &x_t, &z, s, t)?.0)
                }),
            };
            Scenario { params, build }
        }
        NetKind::SourceFilterEncoder | NetKind::MelDenoiser => {
            let content_dim = 3;
            let model = VoiceModel::new(&cfg, sched, 80, content_dim)?;
            let mut params = model.init(seed, None);
            params.insert(STYLE_INPUT, style_in);
            let build: Build = if kind == NetKind::MelDenoiser {
                let z = rand_vec(&mut rng, frames * 80, -8.0, -2.0);
                let x_t: Vec<f64> = z.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
                Box::new(move |g, p| {
                    let s = g.param(p, STYLE_INPUT)?;
                    Ok(model.denoiser.eps(g, p, &x_t, &z, frames, s, t)?.0)
                })
            } else {
                let content = ContentFeatures::new(
                    frames,
                    content_dim,
                    (0..frames * content_dim).map(|_| rng.gen_range(-3.0f32..3.0)).collect(),
                )?;
                let voiced: Vec<bool> = (0..4 * frames).map(|i| i % 7 != 3).collect();
                let f0: Vec<f64> = voiced
                    .iter()
                    .map(|&v| if v { rng.gen_range(100.0..250.0) } else { 0.0 })
                    .collect();
                Box::new(move |g, p| {
                    let s = g.param(p, STYLE_INPUT)?;
                    let v = model.encoder.forward(g, p, &content, &f0, &voiced, s)?;
                    // Sum of both paths; z_m already is that sum, so
                    // scale one path to keep both visible.
                    let src2 = g.scale(v.z_src, 0.5);
                    g.add(v.z_m, src2)
                })
            };
            Scenario { params, build }
        }
    };
    Ok(scenario)
}

/// Random parameters so no path is silenced by zero-initialised layers.
fn randomize(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    params.map_values(|v| *v = rng.gen_range(-0.4f32..0.4));
}

/// Compares analytic gradients of `sum(net(...) * r)` for random fixed `r`
/// against central differences, on up to `coords_per_tensor` coordinates of
/// every parameter tensor.
pub fn gradcheck(kind: NetKind, seed: u64, step: f64, coords_per_tensor: usize) -> Result<GradCheckReport> {
    let Scenario { mut params, build } = scenario(kind, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize(&mut params, &mut rng);
    let params: ParamStore<f64> = params.cast();

    let mut g = Graph::new();
    let out = build(&mut g, &params)?;
    let shape = g.value(out).shape().to_vec();
    let r: Vec<f64> = (0..g.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rv = g.input(Tensor::new(shape, r.clone())?);
    let prod = g.mul(out, rv)?;
    let loss = g.sum(prod);
    let grads = g.backward(loss)?;
    let analytic = g.param_grads(&grads);

    let eval = |p: &ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        match build(&mut g, p) {
            Ok(o) => g.value(o).data().iter().zip(&r).map(|(a, b)| a * b).sum(),
            Err(_) => f64::NAN,
        }
    };

    let mut report = GradCheckReport {
        kind,
        n_tensors: 0,
        n_coords: 0,
        max_rel_err: 0.0,
        worst_tensor: String::new(),
    };
    for (name, a) in &analytic {
        let n = a.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > coords_per_tensor {
            for i in 0..coords_per_tensor {
                let j = rng.gen_range(i..n);
                coords.swap(i, j);
            }
            coords.truncate(coords_per_tensor);
        }
        let base: Vec<f64> = coords.iter().map(|&i| params.get(name).unwrap().data()[i]).collect();
        let mut work = params.clone();
        let numeric = finite_diff_check(
            |x| {
                let t = work.get_mut(name).unwrap();
                for (&i, &v) in coords.iter().zip(x) {
                    t.data_mut()[i] = v;
                }
                eval(&work)
            },
            &base,
            step,
        )?;
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (&i, &num) in coords.iter().zip(&numeric) {
            let an = a.data()[i];
            diff += (an - num).powi(2);
            na += an * an;
            nn += num * num;
        }
        // Some gradients vanish identically (a bias feeding a one-channel
        // group norm); the floor compares those absolutely.
        let denom = na.sqrt().max(nn.sqrt()).max(ABS_FLOOR);
        let rel = diff.sqrt() / denom;
        if std::env::var_os("GRADCHECK_DEBUG").is_some() {
            eprintln!("{:?} {name}: rel {rel:.2e} |a| {:.3e} |n| {:.3e}", kind, na.sqrt(), nn.sqrt());
        }
        report.n_tensors += 1;
        report.n_coords += coords.len();
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_tensor = name.clone();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_network_passes() {
        for kind in NetKind::ALL {
            let r = gradcheck(kind, 1, 1e-3, 6).unwrap();
            assert!(r.passed(1e-3), "{r:?}");
            assert!(r.n_tensors > 3, "{r:?}");
        }
    }
}
