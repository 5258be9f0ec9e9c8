//! Mono PCM clips and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result, SAMPLE_RATE};

/// Mono audio at 16 kHz with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub word: Option<String>,
    pub source_path: String,
}

impl AudioClip {
    /// Builds a clip, checking the rate and that every amplitude is finite and in range.
    pub fn new(samples: Vec<f32>, word: Option<String>, source_path: impl Into<String>) -> Result<Self> {
        let source_path = source_path.into();
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidSample {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            samples,
            sample_rate_hz: SAMPLE_RATE,
            word,
            source_path,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Right-pads with zeros or center-crops to exactly `len` samples.
    pub fn fit_to_len(&self, len: usize) -> AudioClip {
        let n = self.samples.len();
        let samples = if n >= len {
            let start = (n - len) / 2;
            self.samples[start..start + len].to_vec()
        } else {
            let mut s = self.samples.clone();
            s.resize(len, 0.0);
            s
        };
        AudioClip {
            samples,
            ..self.clone()
        }
    }
}

/// Loads a 16-bit PCM mono 16 kHz WAV, scaling samples by 1/32768.
///
/// The clip keeps its original duration. The word is taken from the parent
/// directory name, as in Speech Commands layouts.
pub fn load_clip(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!("{}-bit {:?} samples, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(AudioClip {
        samples,
        sample_rate_hz: SAMPLE_RATE,
        word: word_of(path),
        source_path: path.display().to_string(),
    })
}

/// Loads a WAV of any integer width or 32-bit float, any channel count and
/// any rate, as mono 16 kHz.
///
/// Channels are averaged. Other rates go through an FFT resampler. Noise
/// corpora are not always 16-bit mono; this is the permissive loader for them.
pub fn load_any_mono(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::format(path, "zero channels"));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, e.to_string()))?
        }
    };
    let ch = spec.channels as usize;
    let mono: Vec<f64> = interleaved
        .chunks_exact(ch)
        .map(|f| f.iter().map(|&v| v as f64).sum::<f64>() / ch as f64)
        .collect();
    let mono = if spec.sample_rate == SAMPLE_RATE {
        mono
    } else {
        resample(&mono, spec.sample_rate, SAMPLE_RATE).map_err(|e| Error::format(path, e))?
    };
    let samples = mono.into_iter().map(|v| (v as f32).clamp(-1.0, 1.0)).collect();
    Ok(AudioClip {
        samples,
        sample_rate_hz: SAMPLE_RATE,
        word: word_of(path),
        source_path: path.display().to_string(),
    })
}

/// Band-limited resampling of a whole signal; output length is
/// `round(len * to / from)` and aligned with the input.
pub fn resample(signal: &[f64], from: u32, to: u32) -> std::result::Result<Vec<f64>, String> {
    use rubato::{FftFixedIn, Resampler};
    if from == to {
        return Ok(signal.to_vec());
    }
    let want = (signal.len() as f64 * to as f64 / from as f64).round() as usize;
    let chunk = 1024;
    let mut r = FftFixedIn::<f64>::new(from as usize, to as usize, chunk, 2, 1).map_err(|e| e.to_string())?;
    let delay = r.output_delay();
    let mut out = Vec::with_capacity(want + delay + chunk);
    let mut at = 0;
    while at + r.input_frames_next() <= signal.len() {
        let n = r.input_frames_next();
        let y = r.process(&[&signal[at..at + n]], None).map_err(|e| e.to_string())?;
        out.extend_from_slice(&y[0]);
        at += n;
    }
    // flush the remainder and the filter delay
    let rest = &signal[at..];
    let y = r.process_partial(Some(&[rest]), None).map_err(|e| e.to_string())?;
    out.extend_from_slice(&y[0]);
    while out.len() < want + delay {
        let y = r.process_partial::<&[f64]>(None, None).map_err(|e| e.to_string())?;
        if y[0].is_empty() {
            break;
        }
        out.extend_from_slice(&y[0]);
    }
    out.resize(want + delay, 0.0);
    Ok(out.split_off(delay))
}

/// Writes 16-bit PCM, rounding to the nearest code and saturating.
pub fn write_clip_pcm16(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in &clip.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}

/// Writes 32-bit float samples, which reload bit-exactly.
pub fn write_f32_wav(samples: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_f32_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Float || spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(path, "expected 32-bit float mono 16 kHz stream audio"));
    }
    reader
        .into_samples::<f32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

fn word_of(path: &Path) -> Option<String> {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        let clip = AudioClip::new(vec![0.0; 16000], None, "z").unwrap();
        write_clip_pcm16(&clip, &p).unwrap();
        let back = load_clip(&p).unwrap();
        assert_eq!(back.samples, vec![0.0; 16000]);
    }

    #[test]
    fn half_scale_code() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_clip(&p).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn sine_round_trip_within_one_code() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        let samples: Vec<f32> = (0..16000)
            .map(|n| (0.8 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin()) as f32)
            .collect();
        let clip = AudioClip::new(samples.clone(), None, "sine").unwrap();
        write_clip_pcm16(&clip, &p).unwrap();
        let back = load_clip(&p).unwrap();
        assert_eq!(back.len(), samples.len());
        let worst = samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1.0 / 32768.0, "{worst}");
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        for (name, channels, rate) in [("rate.wav", 1, 8000), ("stereo.wav", 2, 16000)] {
            let p = dir.path().join(name);
            let spec = WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: 16,
                sample_format: SampleFormat::Int,
            };
            let mut w = WavWriter::create(&p, spec).unwrap();
            for _ in 0..channels {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
            let err = load_clip(&p).unwrap_err();
            assert!(matches!(err, Error::Format { .. }));
            assert!(err.to_string().contains(name));
        }
    }

    #[test]
    fn fit_pads_and_crops() {
        let c = AudioClip::new(vec![0.5; 10], None, "c").unwrap();
        let padded = c.fit_to_len(12);
        assert_eq!(&padded.samples[10..], &[0.0, 0.0]);
        let long = AudioClip::new((0..10).map(|i| i as f32 / 10.0).collect(), None, "l").unwrap();
        assert_eq!(long.fit_to_len(4).samples, vec![0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn rejects_out_of_range_amplitude() {
        assert!(AudioClip::new(vec![0.0, 1.5], None, "x").is_err());
        assert!(AudioClip::new(vec![f32::NAN], None, "x").is_err());
    }

    #[test]
    fn stereo_44k_becomes_mono_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let sine = |n: f64, sr: f64| (0.4 * (2.0 * std::f64::consts::PI * 440.0 * n / sr).sin()) as f32;
        let mut w = WavWriter::create(&p, spec).unwrap();
        for n in 0..44100 {
            // left carries the tone twice over, right cancels half of it
            w.write_sample(2.0 * sine(n as f64, 44100.0)).unwrap();
            w.write_sample(0.0f32).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_any_mono(&p).unwrap();
        assert_eq!(clip.len(), 16000);
        let worst = (500..15500)
            .map(|n| (clip.samples[n] - sine(n as f64, 16000.0)).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "{worst}");
    }
}
