//! Non-causal dilated convolution encoders producing the diffusion priors.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::layers::{conv1d, linear};
use super::params::{Init, ParamStore};
use super::style::StyleEmbedding;
use super::tensor::{Real, Tensor};
use crate::dsp::{ContentFeatures, MelSpectrogram};
use crate::error::{Error, Result};
use crate::pitch::PITCH_RATE_FACTOR;

/// `ln(151)`: log(F0 + 1) of a mid-band 150 Hz voice.
pub const LOG_F0_CENTER: f64 = 5.017279836814924;
const CONTENT_SCALE: f64 = 0.2;

/// `[cin, L] -> [cout, L]`: input conv, residual dilated blocks with an
/// additive style projection, 1x1 output conv.
#[derive(Debug, Clone)]
pub struct DilatedEncoder {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub layers: usize,
    pub d_style: usize,
}

impl DilatedEncoder {
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, out_bias: f32) {
        let p = &self.prefix;
        let mut init = Init { store, rng };
        init.conv1d(&format!("{p}.in"), self.cin, self.width, 3);
        for i in 0..self.layers {
            init.linear(&format!("{p}.l{i}.s"), self.d_style, self.width);
            init.conv1d(&format!("{p}.l{i}.conv"), self.width, self.width, 3);
        }
        init.conv1d(&format!("{p}.out"), self.width, self.cout, 1);
        init.fill(format!("{p}.out.b"), &[self.cout], out_bias);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, s: Var) -> Result<Var> {
        let pre = &self.prefix;
        let mut h = conv1d(g, p, &format!("{pre}.in"), x, 1)?;
        for i in 0..self.layers {
            let sp = linear(g, p, &format!("{pre}.l{i}.s"), s)?;
            let a = g.add_channel(h, sp)?;
            let a = g.silu(a);
            let a = conv1d(g, p, &format!("{pre}.l{i}.conv"), a, 1 << i)?;
            h = g.add(h, a)?;
        }
        let h = g.silu(h);
        conv1d(g, p, &format!("{pre}.out"), h, 1)
    }
}

/// Maps a normalised F0 contour and a style to a log(F0 + 1) prior.
#[derive(Debug, Clone)]
pub struct PitchEncoder {
    pub net: DilatedEncoder,
}

impl PitchEncoder {
    pub fn new(prefix: &str, width: usize, layers: usize, d_style: usize) -> Self {
        Self {
            net: DilatedEncoder {
                prefix: prefix.to_string(),
                cin: 2,
                cout: 1,
                width,
                layers,
                d_style,
            },
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.net.init(store, rng, LOG_F0_CENTER as f32);
    }

    /// `norm_f0` is zero at unvoiced frames; the output is masked to zero there.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        norm_f0: &[f64],
        voiced: &[bool],
        s: Var,
    ) -> Result<Var> {
        if norm_f0.len() != voiced.len() {
            return Err(Error::Shape("normalised contour and voicing differ in length".into()));
        }
        let l = norm_f0.len();
        let mut data: Vec<T> = norm_f0.iter().map(|&v| T::c(v)).collect();
        let mask: Vec<T> = voiced.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        data.extend(&mask);
        let x = g.input(Tensor::new(vec![2, l], data)?);
        let y = self.net.forward(g, p, x, s)?;
        let m = g.input(Tensor::new(vec![1, l], mask)?);
        g.mul(y, m)
    }

    pub fn encode(&self, p: &ParamStore, norm_f0: &[f64], voiced: &[bool], s: &StyleEmbedding) -> Result<Vec<f64>> {
        let mut g = Graph::<f32>::new();
        let sv = g.input(s.to_tensor());
        let y = self.forward(&mut g, p, norm_f0, voiced, sv)?;
        Ok(g.value(y).to_f64())
    }
}

/// Output of the source-filter encoder, each `[frames, n_mels]`.
#[derive(Debug, Clone)]
pub struct SourceFilterOutput {
    pub z_src: MelSpectrogram,
    pub z_ftr: MelSpectrogram,
    pub z_m: MelSpectrogram,
}

/// Graph nodes of the source-filter encoder, each `[frames, n_mels]`.
#[derive(Debug, Clone, Copy)]
pub struct SourceFilterVars {
    pub z_src: Var,
    pub z_ftr: Var,
    pub z_m: Var,
}

/// Source path from F0, filter path from content features; the prior is
/// their sum.
#[derive(Debug, Clone)]
pub struct SourceFilterEncoder {
    pub src: DilatedEncoder,
    pub ftr: DilatedEncoder,
    pub n_mels: usize,
}

impl SourceFilterEncoder {
    pub fn new(width: usize, layers: usize, d_style: usize, content_dim: usize, n_mels: usize) -> Self {
        let enc = |prefix: &str, cin| DilatedEncoder {
            prefix: prefix.to_string(),
            cin,
            cout: n_mels,
            width,
            layers,
            d_style,
        };
        Self {
            src: enc("src", 2),
            ftr: enc("ftr", content_dim),
            n_mels,
        }
    }

    /// `src_bias` seeds the source output bias, typically the per-bin mean
    /// log-Mel of the training data.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, src_bias: Option<&[f32]>) {
        self.src.init(store, rng, 0.0);
        self.ftr.init(store, rng, 0.0);
        if let Some(b) = src_bias {
            store.insert(format!("{}.out.b", self.src.prefix), Tensor::vector(b.to_vec()));
        }
    }

    /// `f0_hz` and `voiced` run at four times the frame rate of `content`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        content: &ContentFeatures,
        f0_hz: &[f64],
        voiced: &[bool],
        s: Var,
    ) -> Result<SourceFilterVars> {
        let frames = content.n_frames();
        if f0_hz.len() != PITCH_RATE_FACTOR * frames || voiced.len() != f0_hz.len() {
            return Err(Error::Shape(format!(
                "contour of {} samples for {frames} content frames",
                f0_hz.len()
            )));
        }
        let mut src_in: Vec<T> = f0_hz
            .iter()
            .zip(voiced)
            .map(|(&f, &v)| if v { T::c((f + 1.0).ln() - LOG_F0_CENTER) } else { T::zero() })
            .collect();
        src_in.extend(voiced.iter().map(|&v| if v { T::one() } else { T::zero() }));
        let x = g.input(Tensor::new(vec![2, f0_hz.len()], src_in)?);
        let x = g.avg_pool1d(x, PITCH_RATE_FACTOR)?;
        let src = self.src.forward(g, p, x, s)?;
        let z_src = g.transpose2d(src)?;

        let d = content.dim();
        let mut c_in = vec![T::zero(); d * frames];
        for f in 0..frames {
            for (k, &v) in content.frame(f).iter().enumerate() {
                c_in[k * frames + f] = T::c(v as f64 * CONTENT_SCALE);
            }
        }
        let c = g.input(Tensor::new(vec![d, frames], c_in)?);
        let ftr = self.ftr.forward(g, p, c, s)?;
        let z_ftr = g.transpose2d(ftr)?;
        let z_m = g.add(z_src, z_ftr)?;
        Ok(SourceFilterVars { z_src, z_ftr, z_m })
    }

    pub fn encode(
        &self,
        p: &ParamStore,
        content: &ContentFeatures,
        f0_hz: &[f64],
        voiced: &[bool],
        s: &StyleEmbedding,
    ) -> Result<SourceFilterOutput> {
        let mut g = Graph::<f32>::new();
        let sv = g.input(s.to_tensor());
        let v = self.forward(&mut g, p, content, f0_hz, voiced, sv)?;
        let frames = content.n_frames();
        let mel = |var| MelSpectrogram::new(frames, self.n_mels, g.value(var).data().to_vec());
        Ok(SourceFilterOutput {
            z_src: mel(v.z_src)?,
            z_ftr: mel(v.z_ftr)?,
            z_m: mel(v.z_m)?,
        })
    }
}
