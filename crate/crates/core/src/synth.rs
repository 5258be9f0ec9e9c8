//! Synthetic tone-pattern "words" and noise for tests, examples and demos.
//!
//! A word is a sequence of tones. Each rendering jitters pitch, loudness,
//! duration and position, so two renderings of one word are never identical
//! but two different words stay easy to tell apart in clean conditions.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rand::seq::SliceRandom;

use crate::audio::write_clip_pcm16;
use crate::dataset::CLIP_LEN;
use crate::dsp::{DspConfig, FeatureWindow, MfccExtractor};
use crate::model::{Arch, ModelParams};
use crate::online::{run_stream, OnlineConfig, RunLog, RunMode};
use crate::seed::{derive_seed, rng_for};
use crate::stream::{build_sequential_stream, concat_with_labels, mix_noise, StreamClip, StreamConfig};
use crate::trainer::{evaluate, fit, Evaluation, TrainConfig, TrainingData};
use crate::{AudioClip, Label, Result, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct ToneWord {
    pub name: String,
    /// `(frequency in Hz, duration in seconds)` per tone.
    pub tones: Vec<(f64, f64)>,
}

impl ToneWord {
    pub fn new(name: &str, tones: &[(f64, f64)]) -> Self {
        Self {
            name: name.to_string(),
            tones: tones.to_vec(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.tones.iter().map(|t| t.1).sum()
    }
}

/// A small vocabulary with clearly different pitch contours.
pub fn vocabulary() -> Vec<ToneWord> {
    vec![
        ToneWord::new("rise", &[(500.0, 0.15), (900.0, 0.15), (1600.0, 0.15)]),
        ToneWord::new("fall", &[(1600.0, 0.15), (900.0, 0.15), (500.0, 0.15)]),
        ToneWord::new("flat", &[(1100.0, 0.45)]),
        ToneWord::new("hop", &[(700.0, 0.12), (2200.0, 0.12), (700.0, 0.12)]),
    ]
}

/// Renders one utterance of `word` into a 1 s clip.
///
/// Returns the clip and the sample range the word occupies.
pub fn render(word: &ToneWord, rng: &mut ChaCha8Rng) -> (AudioClip, (usize, usize)) {
    let sr = SAMPLE_RATE as f64;
    let pitch = rng.gen_range(0.94..1.06);
    let tempo = rng.gen_range(0.85..1.15);
    let amp = rng.gen_range(0.25..0.6);
    let len = ((word.duration() * tempo * sr) as usize).min(CLIP_LEN - 1600);
    let slack = CLIP_LEN - len;
    let start = (slack / 2) as i64 + rng.gen_range(-800..=800i64);
    let start = start.clamp(0, slack as i64) as usize;

    let mut samples = vec![0f32; CLIP_LEN];
    let fade = (0.01 * sr) as usize;
    let mut phase = 0.0;
    let mut t0 = 0usize;
    for (k, &(f, d)) in word.tones.iter().enumerate() {
        let n = if k + 1 == word.tones.len() {
            len - t0
        } else {
            ((d / word.duration()) * len as f64) as usize
        };
        for i in 0..n {
            phase += TAU * f * pitch / sr;
            let pos = t0 + i;
            let env = (pos.min(len - 1 - pos) as f64 / fade as f64).min(1.0);
            samples[start + pos] = (amp * env * phase.sin()) as f32;
        }
        t0 += n;
    }
    let clip = AudioClip::new(samples, Some(word.name.clone()), format!("synth:{}", word.name))
        .expect("rendered samples lie in [-1, 1]");
    (clip, (start, start + len))
}

/// Uniform white noise in `[-amp, amp]`.
pub fn white_noise(len: usize, amp: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-amp..=amp)).collect()
}

/// Writes a Speech Commands shaped corpus of rendered words.
///
/// Every word gets `per_word` clips; one in five goes to the validation list
/// and one in five to the test list.
pub fn write_corpus(root: &Path, words: &[ToneWord], per_word: usize, seed: u64) -> Result<()> {
    let mut validation = String::new();
    let mut testing = String::new();
    for w in words {
        let dir = root.join(&w.name);
        fs::create_dir_all(&dir)?;
        let mut rng = rng_for(seed, &format!("synth/corpus/{}", w.name));
        for i in 0..per_word {
            let (clip, _) = render(w, &mut rng);
            let rel = format!("{}/{:04}.wav", w.name, i);
            write_clip_pcm16(&clip, &root.join(&rel))?;
            match i % 5 {
                3 => validation.push_str(&format!("{rel}\n")),
                4 => testing.push_str(&format!("{rel}\n")),
                _ => {}
            }
        }
    }
    fs::write(root.join("validation_list.txt"), validation)?;
    fs::write(root.join("testing_list.txt"), testing)?;
    Ok(())
}

/// Writes a DCASE-style folder of noise recordings, one per scenario name.
pub fn write_noise_dir(dir: &Path, names: &[&str], seconds: f64, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    for name in names {
        let mut rng = rng_for(seed, &format!("synth/noise/{name}"));
        let len = (seconds * SAMPLE_RATE as f64) as usize;
        let clip = AudioClip::new(white_noise(len, 0.5, &mut rng), None, name.to_string())?;
        write_clip_pcm16(&clip, &dir.join(format!("{name}.wav")))?;
    }
    Ok(())
}

/// Settings of the desk-scale distribution-shift experiment.
///
/// The default pretraining budget is small on purpose: the base model is near
/// perfect on clean centred clips but still errs on stream windows, where
/// words sit off-centre or only partly inside the window.
#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub target: ToneWord,
    pub non_target: ToneWord,
    pub train_per_word: usize,
    pub val_per_word: usize,
    pub test_per_word: usize,
    /// Hold-out windows per class, rendered clean and centred.
    pub holdout_per_word: usize,
    pub arch: Arch,
    pub train: TrainConfig,
    pub online: OnlineConfig,
    pub stream: StreamConfig,
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        let v = vocabulary();
        Self {
            target: v[0].clone(),
            non_target: v[3].clone(),
            train_per_word: 20,
            val_per_word: 40,
            test_per_word: 40,
            holdout_per_word: 32,
            arch: Arch::cnn_one_fstride4(),
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                ..Default::default()
            },
            online: OnlineConfig::default(),
            stream: StreamConfig::default(),
            noise_snr_db: 25.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub base_validation: Evaluation,
    pub base_holdout: Evaluation,
    pub frozen: RunLog,
    pub naive: RunLog,
    pub cool: RunLog,
}

fn render_set(cfg: &DeskConfig, part: &str, n: usize) -> Vec<(AudioClip, (usize, usize), Label)> {
    let mut out = Vec::with_capacity(2 * n);
    for (w, y) in [(&cfg.target, Label::Target), (&cfg.non_target, Label::NonTarget)] {
        let mut rng = rng_for(cfg.seed, &format!("desk/{part}/{}", w.name));
        out.extend((0..n).map(|_| {
            let (c, e) = render(w, &mut rng);
            (c, e, y)
        }));
    }
    out
}

/// Pretrains on clean rendered words, then runs the frozen, naive and
/// conditional learners over a Clean, white-noise, Clean sequential stream.
pub fn desk_experiment(cfg: &DeskConfig) -> Result<DeskOutcome> {
    let dsp = DspConfig::default();
    let ex = MfccExtractor::new(&dsp)?;
    let strip = |v: Vec<(AudioClip, (usize, usize), Label)>| v.into_iter().map(|(c, _, y)| (c, y)).collect::<Vec<_>>();
    let train = strip(render_set(cfg, "train", cfg.train_per_word));
    let val = strip(render_set(cfg, "validation", cfg.val_per_word));
    let outcome = fit::<f32>(
        cfg.arch,
        &TrainingData::Clips {
            clips: &train,
            extractor: &ex,
            shift_max: cfg.train.augment_shift_max,
        },
        &TrainingData::Clips {
            clips: &val,
            extractor: &ex,
            shift_max: cfg.train.augment_shift_max,
        },
        &cfg.train,
    )?;
    let m0: ModelParams<f32> = outcome.params;
    let best = outcome.history[outcome.best_epoch.max(1) - 1];

    let holdout = render_set(cfg, "holdout", cfg.holdout_per_word)
        .into_iter()
        .map(|(c, _, y)| Ok((ex.extract(&c.samples, 0)?, y)))
        .collect::<Result<Vec<(FeatureWindow, Label)>>>()?;

    let mut test: Vec<StreamClip> = render_set(cfg, "test", cfg.test_per_word)
        .into_iter()
        .map(|(clip, word_extent, label)| StreamClip { clip, label, word_extent })
        .collect();
    test.shuffle(&mut rng_for(cfg.seed, "desk/test/order"));
    let clean = concat_with_labels(&test, &cfg.stream)?;
    let noise_len = clean.samples.len().min(10 * SAMPLE_RATE as usize);
    let noise = AudioClip::new(
        white_noise(noise_len, 0.5, &mut rng_for(cfg.seed, "desk/noise")),
        None,
        "white-noise",
    )?;
    let noisy = mix_noise(&clean, &noise, cfg.noise_snr_db, derive_seed(cfg.seed, "desk/mix"))?.stream;
    let stream = build_sequential_stream(&[
        ("Clean".to_string(), clean.clone()),
        ("WhiteNoise".to_string(), noisy),
        ("Clean".to_string(), clean),
    ])?;

    let run = |mode| run_stream(&m0, Some(&holdout), &stream, mode, &dsp, &cfg.online).map(|o| o.log);
    Ok(DeskOutcome {
        base_validation: Evaluation {
            loss: best.val_loss,
            acc: best.val_acc,
        },
        base_holdout: evaluate(&m0, &holdout)?,
        frozen: run(RunMode::Frozen)?,
        naive: run(RunMode::Naive)?,
        cool: run(RunMode::Cool)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_seeded_and_bounded() {
        let w = &vocabulary()[0];
        let (a, ea) = render(w, &mut rng_for(1, "x"));
        let (b, eb) = render(w, &mut rng_for(1, "x"));
        assert_eq!(a.samples, b.samples);
        assert_eq!(ea, eb);
        assert_eq!(a.len(), CLIP_LEN);
        assert!(ea.1 <= CLIP_LEN && ea.0 < ea.1);
        assert!(a.samples[..ea.0].iter().all(|&s| s == 0.0));
        assert!(a.samples[ea.1..].iter().all(|&s| s == 0.0));
        let (c, _) = render(w, &mut rng_for(2, "x"));
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &vocabulary()[..2], 10, 0).unwrap();
        assert!(dir.path().join("rise/0009.wav").exists());
        let v = fs::read_to_string(dir.path().join("validation_list.txt")).unwrap();
        assert_eq!(v.lines().count(), 4);
    }
}
