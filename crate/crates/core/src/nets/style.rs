use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::layers::linear;
use super::params::{Init, ParamStore};
use super::tensor::{Real, Tensor};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

// Fixed affine on the pooled statistics so typical log-Mel values land
// near unit scale.
const MEAN_CENTER: f64 = -6.0;
const MEAN_SCALE: f64 = 0.25;
const STD_SCALE: f64 = 0.5;

/// Utterance-level speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding(pub Vec<f32>);

impl StyleEmbedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::vector(self.0.iter().map(|&v| T::c(v as f64)).collect())
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum();
        let na: f64 = self.0.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = other.0.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-30)
    }
}

/// Per-bin mean and standard deviation over frames, scaled. Each bin is
/// summed in sorted order, so the result does not depend on frame order.
pub fn pooled_stats(mel: &MelSpectrogram) -> Result<Vec<f32>> {
    let n = mel.n_frames();
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    let m = mel.n_mels();
    let mut means = Vec::with_capacity(m);
    let mut stds = Vec::with_capacity(m);
    let mut col = vec![0.0f64; n];
    for b in 0..m {
        for (f, c) in col.iter_mut().enumerate() {
            *c = mel.get(f, b) as f64;
        }
        col.sort_by(|a, b| a.total_cmp(b));
        let mean = col.iter().sum::<f64>() / n as f64;
        let mut dev: Vec<f64> = col.iter().map(|v| (v - mean).powi(2)).collect();
        dev.sort_by(|a, b| a.total_cmp(b));
        let std = (dev.iter().sum::<f64>() / n as f64).sqrt();
        means.push(((mean - MEAN_CENTER) * MEAN_SCALE) as f32);
        stds.push((std * STD_SCALE) as f32);
    }
    means.extend(stds);
    Ok(means)
}

/// Statistics pooling followed by a two-layer SiLU MLP.
#[derive(Debug, Clone)]
pub struct StyleEmbedder {
    pub prefix: String,
    pub n_mels: usize,
    pub hidden: usize,
    pub d_style: usize,
}

impl StyleEmbedder {
    pub fn new(prefix: &str, n_mels: usize, hidden: usize, d_style: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            n_mels,
            hidden,
            d_style,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let mut init = Init { store, rng };
        init.linear(&format!("{}.0", self.prefix), 2 * self.n_mels, self.hidden);
        init.linear(&format!("{}.1", self.prefix), self.hidden, self.d_style);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, mel: &MelSpectrogram) -> Result<Var> {
        if mel.n_mels() != self.n_mels {
            return Err(Error::Shape(format!(
                "style embedder expects {} Mel bins, got {}",
                self.n_mels,
                mel.n_mels()
            )));
        }
        let stats = pooled_stats(mel)?;
        let x = g.input(Tensor::vector(stats.iter().map(|&v| T::c(v as f64)).collect()));
        let h = linear(g, p, &format!("{}.0", self.prefix), x)?;
        let h = g.silu(h);
        linear(g, p, &format!("{}.1", self.prefix), h)
    }

    pub fn embed(&self, p: &ParamStore, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        let mut g = Graph::<f32>::new();
        let v = self.forward(&mut g, p, mel)?;
        Ok(StyleEmbedding(g.value(v).data().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_mel(rng: &mut ChaCha8Rng, frames: usize) -> MelSpectrogram {
        MelSpectrogram::new(frames, 80, (0..frames * 80).map(|_| rng.gen_range(-10.0f32..0.0)).collect()).unwrap()
    }

    #[test]
    fn permutation_invariant_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mel = random_mel(&mut rng, 23);
        let mut order: Vec<usize> = (0..23).collect();
        order.reverse();
        order.swap(3, 11);
        let shuffled: Vec<f32> = order.iter().flat_map(|&f| mel.frame(f).to_vec()).collect();
        let shuffled = MelSpectrogram::new(23, 80, shuffled).unwrap();
        let emb = StyleEmbedder::new("style", 80, 16, 8);
        let mut p = ParamStore::new();
        emb.init(&mut p, &mut rng);
        let a = emb.embed(&p, &mel).unwrap();
        assert_eq!(a, emb.embed(&p, &shuffled).unwrap());
        assert_eq!(a, emb.embed(&p, &mel).unwrap());
        assert_eq!(a.dim(), 8);
    }

    #[test]
    fn single_frame_rejected() {
        let emb = StyleEmbedder::new("style", 80, 4, 2);
        let mut p = ParamStore::new();
        emb.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            emb.embed(&p, &MelSpectrogram::floor(1, 80)),
            Err(Error::InsufficientFrames { needed: 2, got: 1 })
        ));
    }
}
