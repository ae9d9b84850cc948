//! Training loops for the pitch stage and the voice stage.
//!
//! Every step draws its batch from a ChaCha stream keyed by (seed, stage,
//! step), so a run resumed from a checkpoint replays the exact same updates
//! as an uninterrupted one.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Utterance};
use crate::diffusion::{apply_frequency_mask, draw_time, sample_forward_with, DiffusionPrior, NoiseSchedule};
use crate::dsp::{content_features, perturb_with, ContentFeatures, MelSpectrogram, PerturbParams, DEFAULT_CONTENT_DIM};
use crate::error::{Error, Result};
use crate::nets::{
    adam_step, clip_grad_norm, AdamConfig, AdamState, Checkpoint, Graph, ModelConfig, ParamStore, PitchModel, Tensor,
    Var, VoiceModel,
};
use crate::pitch::{compute_stats, log1p_f0, normalize_f0, PITCH_RATE_FACTOR};

pub const N_MELS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative decay per step.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; zero or negative disables it.
    pub clip_norm: f64,
    /// Contour samples per pitch training crop.
    pub pitch_crop: usize,
    /// Mel frames per voice training crop (a multiple of 4).
    pub voice_crop_frames: usize,
    pub mask_ratio: f64,
    /// Where the style reference Mel of each training sample comes from.
    pub style_source: StyleSource,
    /// Perturbed copies of each utterance's content features used in voice
    /// training; zero trains on the clean features.
    pub content_perturbations: usize,
    /// Steps between progress log lines; zero silences them.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 8,
            lr: 2e-3,
            lr_decay: 0.999f64.powf(1.0 / 8.0),
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            clip_norm: 1.0,
            pitch_crop: 128,
            voice_crop_frames: 16,
            mask_ratio: 0.3,
            style_source: StyleSource::Utterance,
            content_perturbations: 2,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            lr_decay: self.lr_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.pitch_crop == 0 || self.voice_crop_frames == 0 {
            return Err(Error::Config("batch size and crop lengths must be positive".into()));
        }
        if self.voice_crop_frames % 4 != 0 {
            return Err(Error::Config(format!(
                "voice_crop_frames must be a multiple of 4, got {}",
                self.voice_crop_frames
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} outside [0, 1)", self.mask_ratio)));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr must be positive and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSource {
    /// The sample's own utterance, as in self-conversion.
    Utterance,
    /// A random utterance of the same speaker.
    Speaker,
}

/// Everything that fixes a stage's networks and its optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub content_dim: usize,
}

impl Default for TrainSetup {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: NoiseSchedule::default(),
            train: TrainConfig::default(),
            content_dim: DEFAULT_CONTENT_DIM,
        }
    }
}

impl TrainSetup {
    pub fn pitch_model(&self) -> Result<PitchModel> {
        PitchModel::new(&self.model, self.schedule, N_MELS)
    }

    pub fn voice_model(&self) -> Result<VoiceModel> {
        VoiceModel::new(&self.model, self.schedule, N_MELS, self.content_dim)
    }

    fn to_lines(&self) -> Result<BTreeMap<String, String>> {
        let v = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = BTreeMap::new();
        flatten("setup", &v, &mut out);
        Ok(out)
    }

    fn from_lines(lines: &BTreeMap<String, String>) -> Result<Self> {
        let doc: String = lines
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("setup.").map(|k| format!("{k} = {v}\n")))
            .collect();
        toml::from_str(&doc).map_err(|e| Error::Config(format!("stored setup: {e}")))
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, x) in t {
                flatten(&format!("{prefix}.{k}"), x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pitch,
    Voice,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pitch => "pitch",
            Stage::Voice => "voice",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Stage::Pitch => 0x7069_7463_6800_0000,
            Stage::Voice => 0x766f_6963_6500_0000,
        }
    }
}

/// One step of the loss history. `recon` is the encoder L1 term, `dsm` the
/// score-matching term and `loss` their sum, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub recon: f64,
    pub dsm: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub setup: TrainSetup,
    pub params: ParamStore,
    pub adam: AdamState,
    pub history: Vec<LossRecord>,
}

impl StageState {
    pub fn step(&self) -> u64 {
        self.history.len() as u64
    }
}

/// Both stages' checkpoints and loss histories; a stage is `None` until it
/// has been trained or loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainState {
    pub pitch: Option<StageState>,
    pub voice: Option<StageState>,
}

impl TrainState {
    pub fn stage(&self, stage: Stage) -> Option<&StageState> {
        match stage {
            Stage::Pitch => self.pitch.as_ref(),
            Stage::Voice => self.voice.as_ref(),
        }
    }

    pub fn require(&self, stage: Stage) -> Result<&StageState> {
        self.stage(stage)
            .ok_or_else(|| Error::Uninitialized(format!("no trained {} stage", stage.name())))
    }

    /// Writes `<stage>.ckpt` and `<stage>_loss.csv` for each present stage
    /// plus a `train_state.toml` summary.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut summary = toml::Table::new();
        for stage in [Stage::Pitch, Stage::Voice] {
            let Some(st) = self.stage(stage) else { continue };
            let mut ck = Checkpoint::from_training(&st.params, &st.adam);
            ck.config.insert("stage".into(), stage.name().into());
            ck.config.insert("step".into(), st.step().to_string());
            ck.config.extend(st.setup.to_lines()?);
            ck.save(dir.join(format!("{}.ckpt", stage.name())))?;
            write_history(&dir.join(format!("{}_loss.csv", stage.name())), &st.history)?;
            let mut t = toml::Table::new();
            t.insert("step".into(), toml::Value::Integer(st.step() as i64));
            t.insert("seed".into(), toml::Value::Integer(st.setup.train.seed as i64));
            t.insert(
                "setup".into(),
                toml::Value::try_from(&st.setup).map_err(|e| Error::Config(e.to_string()))?,
            );
            summary.insert(stage.name().into(), toml::Value::Table(t));
        }
        let path = dir.join("train_state.toml");
        std::fs::write(&path, summary.to_string()).map_err(|e| Error::io(&path, e))
    }

    /// Loads whichever stage checkpoints exist in `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut state = TrainState::default();
        for stage in [Stage::Pitch, Stage::Voice] {
            let path = dir.join(format!("{}.ckpt", stage.name()));
            if !path.exists() {
                continue;
            }
            let ck = Checkpoint::load(&path)?;
            if ck.config.get("stage").map(String::as_str) != Some(stage.name()) {
                return Err(Error::format(&path, format!("not a {} checkpoint", stage.name())));
            }
            let setup = TrainSetup::from_lines(&ck.config)?;
            let (params, adam) = ck.to_training()?;
            let history = read_history(&dir.join(format!("{}_loss.csv", stage.name())))?;
            let step: u64 = ck.config.get("step").and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if step != history.len() as u64 || adam.step != step {
                return Err(Error::format(&path, "step counter disagrees with the loss history"));
            }
            let st = StageState {
                setup,
                params,
                adam,
                history,
            };
            match stage {
                Stage::Pitch => state.pitch = Some(st),
                Stage::Voice => state.voice = Some(st),
            }
        }
        if state.pitch.is_none() && state.voice.is_none() {
            return Err(Error::Uninitialized(format!("no checkpoints in {}", dir.display())));
        }
        Ok(state)
    }
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// `1 - mean(last window) / mean(first window)` of the total loss.
pub fn loss_reduction(history: &[LossRecord], window: usize) -> Option<f64> {
    if window == 0 || history.len() < 2 * window {
        return None;
    }
    let mean = |h: &[LossRecord]| h.iter().map(|r| r.loss).sum::<f64>() / h.len() as f64;
    Some(1.0 - mean(&history[history.len() - window..]) / mean(&history[..window]))
}

fn step_rng(seed: u64, stage: Stage, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.salt());
    rng.set_stream(step);
    rng
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (k, g) in grads {
        match acc.get_mut(&k) {
            Some(a) => a.add_assign(&g),
            None => {
                acc.insert(k, g);
            }
        }
    }
}

/// Speaker index of every utterance and the utterances of every speaker,
/// for drawing a style reference.
fn speaker_pools(corpus: &Corpus) -> (Vec<usize>, Vec<Vec<usize>>) {
    let ids = corpus.speaker_ids();
    let of: Vec<usize> = corpus
        .utterances
        .iter()
        .map(|u| ids.binary_search(&u.speaker_id).expect("id listed"))
        .collect();
    let mut pools = vec![Vec::new(); ids.len()];
    for (i, &s) in of.iter().enumerate() {
        pools[s].push(i);
    }
    (of, pools)
}

fn style_pick(source: StyleSource, own: usize, pool: &[usize], rng: &mut ChaCha8Rng) -> usize {
    match source {
        StyleSource::Utterance => own,
        StyleSource::Speaker => pool[rng.gen_range(0..pool.len())],
    }
}

fn require_nonempty(corpus: &Corpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    Ok(())
}

/// Shared step driver: sums per-sample losses built by `sample`, applies
/// the optimiser and records history until `until` steps.
fn run_steps<F>(stage: Stage, st: &mut StageState, until: u64, mut sample: F) -> Result<()>
where
    F: FnMut(&mut Graph, &ParamStore, &mut ChaCha8Rng) -> Result<(Var, Var)>,
{
    let cfg = st.setup.train.clone();
    let adam = cfg.adam();
    let b = cfg.batch_size;
    while st.step() < until {
        let step = st.step();
        let mut rng = step_rng(cfg.seed, stage, step);
        let mut acc = BTreeMap::new();
        let (mut recon, mut dsm) = (0.0, 0.0);
        for _ in 0..b {
            let mut g = Graph::new();
            let (r, d) = sample(&mut g, &st.params, &mut rng)?;
            let total = g.add(r, d)?;
            let total = g.scale(total, 1.0 / b as f64);
            recon += g.value(r).data()[0] as f64;
            dsm += g.value(d).data()[0] as f64;
            let grads = g.backward(total)?;
            accumulate(&mut acc, g.param_grads(&grads));
        }
        let (recon, dsm) = (recon / b as f64, dsm / b as f64);
        let loss = recon + dsm;
        if !loss.is_finite() || acc.values().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged {
                step: step as usize,
                loss,
            });
        }
        let grad_norm = match adam.clip_norm {
            Some(c) => clip_grad_norm(&mut acc, c),
            None => acc.values().map(|t| t.l2().powi(2)).sum::<f64>().sqrt(),
        };
        adam_step(&mut st.params, &acc, &mut st.adam, adam.lr_at(step), &adam)?;
        st.history.push(LossRecord {
            step,
            loss,
            recon,
            dsm,
            grad_norm,
        });
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            info!(
                "{} step {}: loss {loss:.4} (recon {recon:.4}, dsm {dsm:.4}) |g| {grad_norm:.3}",
                stage.name(),
                step + 1
            );
        }
    }
    Ok(())
}

/// Score-matching term in noise space: `mean((eps_hat - eps)^2)`. With the
/// loss weight equal to the marginal variance this is the weighted score
/// regression term exactly.
fn eps_mse(g: &mut Graph, eps_hat: Var, eps: &[f64]) -> Result<Var> {
    let target = g.input(Tensor::from_f64(g.value(eps_hat).shape().to_vec(), eps)?);
    let d = g.sub(eps_hat, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

fn l1(g: &mut Graph, a: Var, target: &[f64]) -> Result<Var> {
    let t = g.input(Tensor::from_f64(g.value(a).shape().to_vec(), target)?);
    let d = g.sub(a, t)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

struct PitchItem<'a> {
    idx: usize,
    utt: &'a Utterance,
    norm: Vec<f64>,
    x_p: Vec<f64>,
}

fn pitch_items(corpus: &Corpus) -> Vec<PitchItem<'_>> {
    corpus
        .utterances
        .iter()
        .enumerate()
        .filter_map(|(idx, u)| {
            let stats = compute_stats(&u.contour).ok()?;
            Some(PitchItem {
                idx,
                utt: u,
                norm: normalize_f0(&u.contour, &stats).values,
                x_p: log1p_f0(&u.contour),
            })
        })
        .collect()
}

/// Mean log(F0 + 1) over voiced frames; the pitch encoder's starting bias.
fn mean_log_f0(items: &[PitchItem]) -> f32 {
    let (s, n) = items
        .iter()
        .flat_map(|it| it.x_p.iter().zip(it.utt.contour.voiced()))
        .filter(|(_, &v)| v)
        .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
    (s / n.max(1) as f64) as f32
}

/// Trains the pitch stage from scratch for `steps` steps.
pub fn train_diffpitch(corpus: &Corpus, setup: &TrainSetup, steps: u64) -> Result<TrainState> {
    let mut state = TrainState::default();
    continue_diffpitch(&mut state, corpus, setup, steps)?;
    Ok(state)
}

/// Continues (or starts) the pitch stage of `state` until it has taken
/// `until` steps. `setup` is used only when the stage is new.
pub fn continue_diffpitch(state: &mut TrainState, corpus: &Corpus, setup: &TrainSetup, until: u64) -> Result<()> {
    require_nonempty(corpus)?;
    let items = pitch_items(corpus);
    if items.is_empty() {
        return Err(Error::NoVoicedFrames);
    }
    if state.pitch.is_none() {
        setup.train.validate()?;
        let model = setup.pitch_model()?;
        state.pitch = Some(StageState {
            setup: setup.clone(),
            params: model.init(setup.train.seed, Some(mean_log_f0(&items))),
            adam: AdamState::default(),
            history: Vec::new(),
        });
    }
    let st = state.pitch.as_mut().expect("set above");
    let model = st.setup.pitch_model()?;
    let sched = st.setup.schedule;
    let crop = st.setup.train.pitch_crop;
    let style_source = st.setup.train.style_source;
    let (of, pools) = speaker_pools(corpus);
    run_steps(Stage::Pitch, st, until, |g, p, rng| {
        let it = &items[rng.gen_range(0..items.len())];
        let style_mel = &corpus.utterances[style_pick(style_source, it.idx, &pools[of[it.idx]], rng)].mel;
        let len = it.x_p.len().min(crop);
        let start = rng.gen_range(0..=it.x_p.len() - len);
        let voiced = &it.utt.contour.voiced()[start..start + len];
        let x_p = &it.x_p[start..start + len];
        let t = draw_time(rng);
        let noise_seed: u64 = rng.gen();

        let s = model.style.forward(g, p, style_mel)?;
        let z_p = model.encoder.forward(g, p, &it.norm[start..start + len], voiced, s)?;
        let recon = l1(g, z_p, x_p)?;
        let z = g.value(z_p).to_f64();
        let prior = DiffusionPrior::new(z, vec![len])?;
        let (x_t, eps) = sample_forward_with(x_p, &prior, &sched, t, &mut ChaCha8Rng::seed_from_u64(noise_seed))?;
        let (eps_hat, _) = model.denoiser.eps(g, p, &x_t, &prior.z, s, t)?;
        let dsm = eps_mse(g, eps_hat, &eps)?;
        Ok((recon, dsm))
    })
}

struct VoiceItem<'a> {
    utt: &'a Utterance,
    contents: Vec<ContentFeatures>,
}

/// Content features of a waveform passed through random peaking filters.
/// The resampling part of the perturbation is left out: it would stretch
/// time and break the frame alignment with the Mel target.
fn perturbed_content(u: &Utterance, seed: u64, dim: usize) -> Result<ContentFeatures> {
    let mut params = PerturbParams::sample(seed);
    params.ratio = 1.0;
    let audio = perturb_with(&u.audio, &params)?;
    Ok(content_features(&audio, dim)?.with_frames(u.n_frames()))
}

fn voice_items<'a>(corpus: &'a Corpus, setup: &TrainSetup) -> Result<Vec<VoiceItem<'a>>> {
    let k = setup.train.content_perturbations;
    corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let contents = if k == 0 {
                vec![u.content.clone()]
            } else {
                (0..k)
                    .map(|j| {
                        let seed = setup.train.seed ^ ((i as u64) << 20) ^ (j as u64) ^ 0xc0de;
                        perturbed_content(u, seed, setup.content_dim)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            Ok(VoiceItem { utt: u, contents })
        })
        .collect()
}

/// Per-bin mean log-Mel; the source path's starting bias.
fn mean_mel(corpus: &Corpus) -> Vec<f32> {
    let mut sum = vec![0.0f64; N_MELS];
    let mut n = 0usize;
    for u in &corpus.utterances {
        for f in 0..u.mel.n_frames() {
            for (s, &v) in sum.iter_mut().zip(u.mel.frame(f)) {
                *s += v as f64;
            }
            n += 1;
        }
    }
    sum.iter().map(|s| (s / n.max(1) as f64) as f32).collect()
}

/// Trains the voice stage from scratch for `steps` steps with the given
/// masking ratio.
pub fn train_diffvoice(corpus: &Corpus, setup: &TrainSetup, steps: u64, mask_ratio: f64) -> Result<TrainState> {
    let mut setup = setup.clone();
    setup.train.mask_ratio = mask_ratio;
    let mut state = TrainState::default();
    continue_diffvoice(&mut state, corpus, &setup, steps)?;
    Ok(state)
}

pub fn continue_diffvoice(state: &mut TrainState, corpus: &Corpus, setup: &TrainSetup, until: u64) -> Result<()> {
    require_nonempty(corpus)?;
    if state.voice.is_none() {
        setup.train.validate()?;
        let model = setup.voice_model()?;
        state.voice = Some(StageState {
            setup: setup.clone(),
            params: model.init(setup.train.seed, Some(&mean_mel(corpus))),
            adam: AdamState::default(),
            history: Vec::new(),
        });
    }
    let st = state.voice.as_mut().expect("set above");
    let model = st.setup.voice_model()?;
    let sched = st.setup.schedule;
    let crop = st.setup.train.voice_crop_frames;
    let ratio = st.setup.train.mask_ratio;
    let style_source = st.setup.train.style_source;
    let items = voice_items(corpus, &st.setup)?;
    for it in &items {
        it.utt.check_alignment()?;
        if it.utt.content.dim() != st.setup.content_dim {
            return Err(Error::Shape(format!(
                "corpus content dim {} differs from the model's {}",
                it.utt.content.dim(),
                st.setup.content_dim
            )));
        }
    }
    let (of, pools) = speaker_pools(corpus);
    run_steps(Stage::Voice, st, until, |g, p, rng| {
        let k = rng.gen_range(0..items.len());
        let it = &items[k];
        let u = it.utt;
        let style_mel = &corpus.utterances[style_pick(style_source, k, &pools[of[k]], rng)].mel;
        let content = &it.contents[rng.gen_range(0..it.contents.len())];
        let frames = u.n_frames();
        let len = if frames >= crop { crop } else { frames - frames % 4 };
        if len == 0 {
            return Err(Error::InsufficientFrames { needed: 4, got: frames });
        }
        let start = rng.gen_range(0..=frames - len);
        let t = draw_time(rng);
        let noise_seed: u64 = rng.gen();
        let mask_seed: u64 = rng.gen();

        let mel = u.mel.slice_frames(start, len)?;
        let content = content.slice_frames(start, len)?;
        let contour = u.contour.slice(PITCH_RATE_FACTOR * start, PITCH_RATE_FACTOR * len)?;
        let x0 = mel_values(&mel);

        let s = model.style.forward(g, p, style_mel)?;
        let v = model.encoder.forward(g, p, &content, contour.f0_hz(), contour.voiced(), s)?;
        let recon = l1(g, v.z_m, &x0)?;
        let z = DiffusionPrior::new(g.value(v.z_m).to_f64(), vec![len, N_MELS])?;
        let prior = apply_frequency_mask(&z, ratio, mask_seed)?;
        let (x_t, eps) = sample_forward_with(&x0, &prior, &sched, t, &mut ChaCha8Rng::seed_from_u64(noise_seed))?;
        let (eps_hat, _) = model.denoiser.eps(g, p, &x_t, &prior.z, len, s, t)?;
        let dsm = eps_mse(g, eps_hat, &eps)?;
        Ok((recon, dsm))
    })
}

/// Mean L1 between the pitch prior and log(F0 + 1) over whole utterances,
/// each styled by its own Mel.
pub fn pitch_prior_l1(state: &TrainState, utts: &[Utterance]) -> Result<f64> {
    let st = state.require(Stage::Pitch)?;
    let model = st.setup.pitch_model()?;
    let mut total = 0.0;
    let mut n = 0;
    for u in utts {
        let Ok(stats) = compute_stats(&u.contour) else { continue };
        let norm = normalize_f0(&u.contour, &stats);
        let s = model.style.embed(&st.params, &u.mel)?;
        let z = model.encoder.encode(&st.params, &norm.values, &norm.voiced, &s)?;
        let x = log1p_f0(&u.contour);
        total += z.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoVoicedFrames);
    }
    Ok(total / n as f64)
}

/// Mean L1 between the Mel prior and the Mel over whole utterances, from
/// clean content, the analysed contour and each utterance's own style.
pub fn mel_prior_l1(state: &TrainState, utts: &[Utterance]) -> Result<f64> {
    let st = state.require(Stage::Voice)?;
    let model = st.setup.voice_model()?;
    let mut total = 0.0;
    for u in utts {
        let s = model.style.embed(&st.params, &u.mel)?;
        let out = model
            .encoder
            .encode(&st.params, &u.content, u.contour.f0_hz(), u.contour.voiced(), &s)?;
        total += out.z_m.l1(&u.mel)?;
    }
    if utts.is_empty() {
        return Err(Error::InvalidInput("no utterances to evaluate".into()));
    }
    Ok(total / utts.len() as f64)
}

pub(crate) fn mel_values(m: &MelSpectrogram) -> Vec<f64> {
    m.values().iter().map(|&v| v as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::dsm_loss;
    use crate::pipeline::corpus::generate_corpus;

    fn tiny_setup(seed: u64) -> TrainSetup {
        TrainSetup {
            model: ModelConfig::tiny(),
            train: TrainConfig {
                seed,
                batch_size: 2,
                pitch_crop: 32,
                voice_crop_frames: 8,
                content_perturbations: 1,
                log_every: 0,
                ..TrainConfig::default()
            },
            ..TrainSetup::default()
        }
    }

    #[test]
    fn setup_survives_checkpoint_lines() {
        let mut s = tiny_setup(7);
        s.train.lr = 1.0 / 3.0;
        s.model.unet_channels = vec![8, 12, 20];
        let back = TrainSetup::from_lines(&s.to_lines().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn noise_space_term_equals_weighted_score_loss() {
        // The per-sample training term must equal dsm_loss with the
        // network's score for the same time and noise seed.
        let setup = tiny_setup(1);
        let model = setup.pitch_model().unwrap();
        let mut params = model.init(3, Some(5.0));
        params.map_values(|v| *v += 0.01);
        let s = crate::nets::StyleEmbedding(vec![0.3, -0.2, 0.1]);
        let x0: Vec<f64> = (0..24).map(|i| 5.0 + 0.05 * (i as f64).sin()).collect();
        let prior = DiffusionPrior::new(x0.iter().map(|v| v - 0.07).collect(), vec![24]).unwrap();
        let sched = setup.schedule;
        for (t, seed) in [(0.05, 11u64), (0.4, 12), (0.93, 13)] {
            let reference = dsm_loss(
                |x, z, t| model.denoiser.score(&params, x, z, &s, t),
                &x0,
                &prior,
                &sched,
                &[(t, seed)],
            )
            .unwrap()
            .loss;
            let mut g = Graph::new();
            let sv = g.input(s.to_tensor());
            let (x_t, eps) = sample_forward_with(&x0, &prior, &sched, t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (e, _) = model.denoiser.eps(&mut g, &params, &x_t, &prior.z, sv, t).unwrap();
            let term = eps_mse(&mut g, e, &eps).unwrap();
            let ours = g.value(term).data()[0] as f64;
            assert!((ours - reference).abs() < 1e-4 * reference.max(1e-3), "{t}: {ours} vs {reference}");
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = generate_corpus(2, 2, 4).unwrap();
        let setup = tiny_setup(5);
        let full = train_diffpitch(&corpus, &setup, 6).unwrap();
        let mut part = train_diffpitch(&corpus, &setup, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        part.save(dir.path()).unwrap();
        part = TrainState::load(dir.path()).unwrap();
        continue_diffpitch(&mut part, &corpus, &setup, 6).unwrap();
        assert_eq!(part, full);
    }

    #[test]
    fn voice_stage_is_deterministic_and_reloads() {
        let corpus = generate_corpus(2, 2, 4).unwrap();
        let setup = tiny_setup(9);
        let a = train_diffvoice(&corpus, &setup, 3, 0.3).unwrap();
        let b = train_diffvoice(&corpus, &setup, 3, 0.3).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(TrainState::load(dir.path()).unwrap(), a);
        let h = &a.voice.as_ref().unwrap().history;
        assert!(h.iter().all(|r| r.loss.is_finite() && r.loss == r.recon + r.dsm));
    }

    #[test]
    fn loss_reduction_windows() {
        let h: Vec<LossRecord> = (0..40)
            .map(|i| LossRecord {
                step: i,
                loss: if i < 10 { 4.0 } else { 1.0 },
                recon: 0.0,
                dsm: 0.0,
                grad_norm: 0.0,
            })
            .collect();
        assert_eq!(loss_reduction(&h, 10), Some(0.75));
        assert_eq!(loss_reduction(&h, 30), None);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = Corpus {
            speakers: vec![],
            utterances: vec![],
        };
        assert!(matches!(
            train_diffpitch(&c, &tiny_setup(0), 1),
            Err(Error::InvalidInput(_))
        ));
    }
}
