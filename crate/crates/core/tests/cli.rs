use std::fs;
use std::path::{Path, PathBuf};

use hiervc::cli::run;
use hiervc::dsp::AudioBuffer;
use hiervc::pitch::PitchContour;

const TINY: &str = r#"
[nets]
pitch_denoiser_channels = 4
unet_channels = [4, 4, 8]
encoder_channels = 4
d_style = 3
dilation_depth = 1
time_embed_dim = 4
style_hidden = 4
encoder_layers = 1

[train]
batch_size = 1
pitch_crop = 32
voice_crop_frames = 8
content_perturbations = 0
log_every = 0
"#;

fn hv(args: &[&str]) -> i32 {
    run(std::iter::once("hiervc").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let corpus = root.join("corpus");
    assert_eq!(hv(&["corpus", "--out", s(&corpus), "--speakers", "2", "--utterances", "2", "--config", s(&config)]), 0);
    Fixture { _dir: dir, root, config, corpus }
}

fn sine(path: &Path, hz: f64, seconds: f64) {
    let n = (seconds * 16000.0) as usize;
    let x = (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / 16000.0).sin()) as f32)
        .collect();
    AudioBuffer::mono16k(x).unwrap().write_wav(path).unwrap();
}

#[test]
fn extract_sine_writes_aligned_features() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a220.wav");
    sine(&wav, 220.0, 1.0);
    let out = dir.path().join("feat");
    assert_eq!(hv(&["extract", s(&wav), "--out", s(&out)]), 0);
    let c = PitchContour::read_csv(out.join("contour.csv")).unwrap();
    assert!((c.voiced_median().unwrap() - 220.0).abs() <= 3.0);
    // Mel and content CSVs have no header; the contour CSV has one.
    let rows = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!(rows("contour.csv") - 1, 4 * rows("mel.csv"));
    assert_eq!(rows("content.csv"), rows("mel.csv"));
    assert!(out.join("stats.toml").exists() && out.join("manifest.toml").exists());
}

#[test]
fn unreadable_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.wav");
    fs::write(&empty, b"").unwrap();
    assert_eq!(hv(&["extract", s(&empty), "--out", s(&dir.path().join("o"))]), 2);
    let missing = dir.path().join("missing.wav");
    assert_eq!(hv(&["extract", s(&missing), "--out", s(&dir.path().join("o"))]), 2);
    assert_eq!(hv(&["frobnicate"]), 2);
    assert_eq!(hv(&["oracle", "nope"]), 2);
}

#[test]
fn oracle_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hv(&["oracle", "marginal", "--out", s(dir.path())]), 0);
    let csv = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert!(csv.starts_with("suite,check,statistic,threshold,passed,detail"));
    assert!(csv.contains("tabulated_marginals"));
    assert_eq!(hv(&["oracle", "sampler"]), 0);
    assert_eq!(hv(&["oracle", "sampler", "--flip-drift-sign"]), 1);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let e = hiervc::cli::RunConfig::load(&cfg).unwrap_err();
    assert!(e.to_string().contains("learnin_rate"));
    let wav = dir.path().join("a.wav");
    sine(&wav, 150.0, 0.5);
    assert_eq!(hv(&["extract", s(&wav), "--out", s(&dir.path().join("o")), "--config", s(&cfg)]), 2);
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let f = fixture();
    let full = f.root.join("full");
    let split = f.root.join("split");
    let base = ["--corpus", s(&f.corpus), "--config", s(&f.config)];
    let train = |out: &Path, stage: &str, steps: &str, extra: &[&str]| {
        let mut a = vec!["train", stage];
        a.extend_from_slice(&base);
        a.extend_from_slice(&["--out", s(out), "--steps", steps]);
        a.extend_from_slice(extra);
        hv(&a)
    };
    for stage in ["pitch", "voice"] {
        assert_eq!(train(&full, stage, "6", &[]), 0);
        assert_eq!(train(&split, stage, "3", &[]), 0);
        assert_eq!(train(&split, stage, "6", &["--resume"]), 0);
        for file in [format!("{stage}.ckpt"), format!("{stage}_loss.csv")] {
            assert_eq!(fs::read(full.join(&file)).unwrap(), fs::read(split.join(&file)).unwrap(), "{file}");
        }
    }
    let loss = fs::read_to_string(full.join("pitch_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 7);
    // Resuming with a different configuration is refused.
    assert_eq!(train(&split, "pitch", "8", &["--resume", "--seed", "99"]), 2);
    assert_eq!(train(&f.root.join("none"), "pitch", "8", &["--resume"]), 2);
}

#[test]
fn divergent_training_exits_3() {
    let f = fixture();
    let cfg = f.root.join("hot.toml");
    fs::write(&cfg, format!("{TINY}lr = 1e30\nclip_norm = 0.0\nlr_decay = 1.0\n")).unwrap();
    let out = f.root.join("hot");
    let code = hv(&["train", "pitch", "--corpus", s(&f.corpus), "--config", s(&cfg), "--out", s(&out), "--steps", "20"]);
    assert_eq!(code, 3);
}

#[test]
fn convert_is_deterministic_and_checks_inputs() {
    let f = fixture();
    let ck = f.root.join("ck");
    for stage in ["pitch", "voice"] {
        let a = ["train", stage, "--corpus", s(&f.corpus), "--config", s(&f.config), "--out", s(&ck), "--steps", "2"];
        assert_eq!(hv(&a), 0);
    }
    let src = f.corpus.join("spk00_u000.wav");
    let tgt = f.corpus.join("spk01_u001.wav");
    let conv = |out: &Path, steps: &str, extra: &[&str]| {
        let mut a = vec!["convert", s(&src), s(&tgt), "--checkpoints", s(&ck), "--out", s(out), "--steps", steps];
        a.extend_from_slice(extra);
        hv(&a)
    };
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    assert_eq!(conv(&a, "6", &["--seed", "3", "--audio"]), 0);
    assert_eq!(conv(&b, "6", &["--seed", "3", "--audio"]), 0);
    for file in ["converted_mel.csv", "converted_mel.f32", "converted_f0.csv", "f0_compare.csv", "converted.wav", "manifest.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(conv(&f.root.join("c"), "30", &[]), 0);

    let silent = f.root.join("silent.wav");
    AudioBuffer::mono16k(vec![0.0; 16000]).unwrap().write_wav(&silent).unwrap();
    let (d, nowhere) = (f.root.join("d"), f.root.join("nowhere"));
    assert_eq!(hv(&["convert", s(&silent), s(&tgt), "--checkpoints", s(&ck), "--out", s(&d)]), 4);
    assert_eq!(hv(&["convert", s(&src), s(&tgt), "--checkpoints", s(&nowhere), "--out", s(&d)]), 2);
}

#[test]
fn corpus_command_is_deterministic() {
    let f = fixture();
    let again = f.root.join("again");
    assert_eq!(hv(&["corpus", "--out", s(&again), "--speakers", "2", "--utterances", "2", "--config", s(&f.config)]), 0);
    let d1 = hiervc::cli::digest_path(&f.corpus).unwrap();
    let d2 = hiervc::cli::digest_path(&again).unwrap();
    assert_eq!(d1, d2);
}
