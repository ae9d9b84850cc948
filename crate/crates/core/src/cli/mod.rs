//! Command-line surface. [`run`] parses arguments, runs one command and
//! returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | a verification check failed |
//! | 2 | usage, input or config error |
//! | 3 | numerical divergence |
//! | 4 | domain precondition failed |

pub mod config;
pub mod manifest;
pub mod suite;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dsp::{griffin_lim, AudioBuffer};
use crate::error::{Error, Result};
use crate::pipeline::{
    continue_diffpitch, continue_diffvoice, convert, f0_baseline_compare, generate_corpus_with, masking_sweep,
    write_sweep, Corpus, CorpusConfig, Stage, TrainState, Utterance, SWEEP_RATIOS,
};
use crate::pitch::compute_stats;
pub use config::{DspSection, RunConfig, PAPER_SEGMENT_SAMPLES};
pub use manifest::{digest_path, Manifest, MANIFEST_FILE};
pub use suite::{run_suite, CheckResult, Selection, Suite, SuiteOptions, SuiteReport};

#[derive(Debug, Parser)]
#[command(name = "hiervc", version, about = "Two-stage diffusion voice conversion at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command's random streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full-size network widths and training segment length.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pitch,
    Voice,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pitch => Stage::Pitch,
            StageArg::Voice => Stage::Voice,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a multi-speaker corpus of WAV files with analysis sidecars.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 40)]
        utterances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Analyze one 16 kHz mono WAV into Mel, F0 contour and content features.
    Extract {
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the pitch or the voice stage on a corpus directory.
    Train {
        stage: StageArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint directory; other stages already in it are kept.
        #[arg(long)]
        out: PathBuf,
        /// Total optimizer steps for the stage.
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long)]
        mask_ratio: Option<f64>,
        /// Continue the stage's checkpoint in `out` instead of restarting.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a source utterance to the voice of a target utterance.
    Convert {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse-diffusion steps for both stages.
        #[arg(long)]
        steps: Option<usize>,
        /// Also write a Griffin-Lim waveform.
        #[arg(long)]
        audio: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run verification suites: all, marginal, score, sampler, gradcheck or tracker.
    Oracle {
        #[arg(default_value = "all")]
        suite: Selection,
        /// Directory for the CSV report and manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        flip_drift_sign: bool,
    },
    /// Train the voice stage once per masking ratio and tabulate the results.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: u64,
        /// Utterances per speaker held out for scoring.
        #[arg(long, default_value_t = 1)]
        held_out: usize,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_RATIOS)]
        ratios: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::TrainingDiverged { .. } | Error::Numerical { .. } => 3,
        Error::NoVoicedFrames
        | Error::Domain(_)
        | Error::SingularTime(_)
        | Error::InsufficientFrames { .. }
        | Error::PadRequired { .. } => 4,
        Error::InvalidInput(_)
        | Error::Shape(_)
        | Error::Uninitialized(_)
        | Error::Format { .. }
        | Error::Config(_)
        | Error::Io { .. } => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::VerificationFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Corpus {
            out,
            speakers,
            utterances,
            common,
        } => cmd_corpus(&out, speakers, utterances, &common),
        Command::Extract { audio, out, common } => cmd_extract(&audio, &out, &common),
        Command::Train {
            stage,
            corpus,
            out,
            steps,
            mask_ratio,
            resume,
            common,
        } => cmd_train(stage.into(), &corpus, &out, steps, mask_ratio, resume, &common),
        Command::Convert {
            source,
            target,
            checkpoints,
            out,
            steps,
            audio,
            common,
        } => cmd_convert(&source, &target, &checkpoints, &out, steps, audio, &common),
        Command::Oracle {
            suite,
            out,
            seed,
            flip_drift_sign,
        } => cmd_oracle(suite, out.as_deref(), seed, flip_drift_sign),
        Command::Sweep {
            corpus,
            out,
            steps,
            held_out,
            ratios,
            common,
        } => cmd_sweep(&corpus, &out, steps, held_out, &ratios, &common),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(if common.paper_scale { cfg.with_paper_scale() } else { cfg })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn manifest_for(command: &str, cfg: &RunConfig, seed: u64, common: &Common) -> Result<Manifest> {
    let mut m = Manifest::new(command, cfg, seed)?;
    if let Some(p) = &common.config {
        m.input(p)?;
    }
    Ok(m)
}

pub fn cmd_corpus(out: &Path, speakers: usize, utterances: usize, common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let corpus_cfg = CorpusConfig {
        speakers,
        utterances_per: utterances,
        seed: common.seed.unwrap_or(CorpusConfig::default().seed),
        content_dim: cfg.dsp.content_dim,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus_with(&corpus_cfg)?;
    corpus.save(out)?;
    log::info!("wrote {} utterances of {} speakers to {}", corpus.len(), speakers, out.display());
    let mut m = manifest_for("corpus", &cfg, corpus_cfg.seed, common)?;
    m.args.insert("speakers".into(), speakers.to_string());
    m.args.insert("utterances".into(), utterances.to_string());
    m.write(out)?;
    Ok(Outcome::Success)
}

#[derive(serde::Serialize)]
struct ExtractStats {
    n_samples: usize,
    duration_s: f64,
    mel_frames: usize,
    contour_samples: usize,
    content_frames: usize,
    content_dim: usize,
    voiced_samples: usize,
    voiced_median_hz: Option<f64>,
    voiced_mean_hz: Option<f64>,
    voiced_std_hz: Option<f64>,
}

pub fn cmd_extract(audio: &Path, out: &Path, common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let name = audio.file_stem().map_or("audio".into(), |s| s.to_string_lossy().into_owned());
    let buf = AudioBuffer::read_wav(audio)?;
    let utt = Utterance::analyze(name, "", buf, &cfg.pitch, cfg.dsp.content_dim)?;
    utt.check_alignment()?;
    create_dir(out)?;
    utt.mel.write_csv(out.join("mel.csv"))?;
    write_raw_mel(&utt.mel, &out.join("mel.f32"))?;
    utt.contour.write_csv(out.join("contour.csv"))?;
    utt.content.write_csv(out.join("content.csv"))?;
    let stats = compute_stats(&utt.contour).ok();
    let s = ExtractStats {
        n_samples: utt.audio.len(),
        duration_s: utt.audio.duration_s(),
        mel_frames: utt.mel.n_frames(),
        contour_samples: utt.contour.len(),
        content_frames: utt.content.n_frames(),
        content_dim: utt.content.dim(),
        voiced_samples: utt.contour.n_voiced(),
        voiced_median_hz: utt.contour.voiced_median(),
        voiced_mean_hz: stats.map(|s| s.mean_hz),
        voiced_std_hz: stats.map(|s| s.std_hz),
    };
    let path = out.join("stats.toml");
    std::fs::write(&path, toml::to_string(&s).map_err(|e| Error::Config(e.to_string()))?)
        .map_err(|e| Error::io(&path, e))?;
    let mut m = manifest_for("extract", &cfg, 0, common)?;
    m.input(audio)?;
    m.write(out)?;
    Ok(Outcome::Success)
}

fn write_raw_mel(mel: &crate::dsp::MelSpectrogram, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    mel.write_raw(BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(
    stage: Stage,
    corpus_dir: &Path,
    out: &Path,
    steps: u64,
    mask_ratio: Option<f64>,
    resume: bool,
    common: &Common,
) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(r) = mask_ratio {
        cfg.train.mask_ratio = r;
    }
    cfg.validate()?;
    let setup = cfg.setup();
    let corpus = Corpus::load(corpus_dir, cfg.dsp.content_dim)?;
    let has_checkpoint = ["pitch", "voice"].iter().any(|s| out.join(format!("{s}.ckpt")).exists());
    let mut state = if has_checkpoint { TrainState::load(out)? } else { TrainState::default() };
    match (resume, state.stage(stage)) {
        (true, Some(st)) => {
            if st.setup != setup {
                return Err(Error::Config(format!(
                    "the {} checkpoint in {} was trained with a different configuration",
                    stage.name(),
                    out.display()
                )));
            }
            if st.step() > steps {
                return Err(Error::InvalidInput(format!(
                    "checkpoint is already at step {}, beyond --steps {steps}",
                    st.step()
                )));
            }
        }
        (true, None) => {
            return Err(Error::Uninitialized(format!(
                "no {} checkpoint to resume in {}",
                stage.name(),
                out.display()
            )))
        }
        (false, _) => match stage {
            Stage::Pitch => state.pitch = None,
            Stage::Voice => state.voice = None,
        },
    }
    match stage {
        Stage::Pitch => continue_diffpitch(&mut state, &corpus, &setup, steps)?,
        Stage::Voice => continue_diffvoice(&mut state, &corpus, &setup, steps)?,
    }
    state.save(out)?;
    let mut m = manifest_for(&format!("train {}", stage.name()), &cfg, cfg.train.seed, common)?;
    m.input(corpus_dir)?;
    m.args.insert("steps".into(), steps.to_string());
    m.args.insert("resume".into(), resume.to_string());
    m.write(out)?;
    Ok(Outcome::Success)
}

pub fn cmd_convert(
    source: &Path,
    target: &Path,
    checkpoints: &Path,
    out: &Path,
    steps: Option<usize>,
    audio: bool,
    common: &Common,
) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(n) = steps {
        cfg.sample.n_steps = n;
    }
    if let Some(seed) = common.seed {
        cfg.sample.seed = seed;
    }
    cfg.validate()?;
    if !checkpoints.is_dir() {
        return Err(Error::InvalidInput(format!("checkpoint directory {} not found", checkpoints.display())));
    }
    let state = TrainState::load(checkpoints)?;
    let content_dim = state.require(Stage::Voice)?.setup.content_dim;
    let analyze = |p: &Path, name: &str| Utterance::analyze(name, name, AudioBuffer::read_wav(p)?, &cfg.pitch, content_dim);
    let src = analyze(source, "source")?;
    let tgt = analyze(target, "target")?;
    let conv = convert(&src, &tgt, &state, &cfg.sample)?;
    create_dir(out)?;
    conv.mel.write_csv(out.join("converted_mel.csv"))?;
    write_raw_mel(&conv.mel, &out.join("converted_mel.f32"))?;
    conv.f0.write_csv(out.join("converted_f0.csv"))?;
    let cmp = f0_baseline_compare(&src, &tgt, &state, &cfg.sample, None)?;
    cmp.write_trajectories(out.join("f0_compare.csv"))?;
    cmp.write_summary(out.join("f0_summary.csv"))?;
    if audio {
        griffin_lim(&conv.mel, cfg.dsp.griffin_lim_iterations)?.write_wav(out.join("converted.wav"))?;
    }
    let mut m = manifest_for("convert", &cfg, cfg.sample.seed, common)?;
    m.input(source)?;
    m.input(target)?;
    m.input(checkpoints)?;
    m.args.insert("audio".into(), audio.to_string());
    m.write(out)?;
    Ok(Outcome::Success)
}

pub fn cmd_oracle(selection: Selection, out: Option<&Path>, seed: u64, flip_drift_sign: bool) -> Result<Outcome> {
    let opts = SuiteOptions { seed, flip_drift_sign };
    let mut reports = Vec::new();
    for s in selection.suites() {
        let r = run_suite(s, &opts)?;
        log::info!("suite {} finished in {:.1} s", s.name(), r.seconds);
        reports.push(r);
    }
    print!("{}", suite::format_table(&reports));
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| &r.checks)
        .filter(|c| !c.passed)
        .map(|c| format!("{}/{}", c.suite.name(), c.check))
        .collect();
    if let Some(dir) = out {
        create_dir(dir)?;
        suite::write_csv(dir.join("oracle.csv"), &reports)?;
        let mut m = Manifest::new("oracle", &RunConfig::default(), seed)?;
        m.args.insert("suite".into(), format!("{selection:?}"));
        m.args.insert("flip_drift_sign".into(), flip_drift_sign.to_string());
        m.write(dir)?;
    }
    if failed.is_empty() {
        Ok(Outcome::Success)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(Outcome::VerificationFailed)
    }
}

pub fn cmd_sweep(
    corpus_dir: &Path,
    out: &Path,
    steps: u64,
    held_out: usize,
    ratios: &[f64],
    common: &Common,
) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let corpus = Corpus::load(corpus_dir, cfg.dsp.content_dim)?;
    let (train, held) = corpus.split(held_out);
    let rows = masking_sweep(&train, &held, &cfg.setup(), steps, ratios, &cfg.sample)?;
    create_dir(out)?;
    write_sweep(out.join("sweep.csv"), &rows)?;
    for r in &rows {
        println!(
            "ratio {:.1}: final loss {:.4}, self L1 {:.4}, masked-band L1 {:.4} (prior {:.4})",
            r.mask_ratio, r.final_loss, r.self_l1, r.masked_band_l1, r.prior_band_l1
        );
    }
    let mut m = manifest_for("sweep", &cfg, cfg.train.seed, common)?;
    m.input(corpus_dir)?;
    m.args.insert("steps".into(), steps.to_string());
    m.args.insert("held_out".into(), held_out.to_string());
    let list: Vec<String> = ratios.iter().map(|r| r.to_string()).collect();
    m.args.insert("ratios".into(), list.join(","));
    m.write(out)?;
    Ok(Outcome::Success)
}
