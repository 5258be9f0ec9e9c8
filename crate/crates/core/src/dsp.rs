//! MFCC features and time-shift augmentation.
//!
//! A one-second window (16 000 samples) becomes a 32×40 matrix: 32 frames of
//! 1000 samples taken every 477 samples, each Hann-windowed and zero-padded
//! to a 1024-point FFT, reduced to 40 mel energies, log-compressed with a
//! floor and decorrelated with an orthonormal DCT-II. `1000 + 31·477 = 15787`,
//! so the last 213 samples of a window never reach a frame.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{AudioClip, Error, Result, SAMPLE_RATE};

pub const N_FRAMES: usize = 32;
pub const N_COEFFS: usize = 40;
pub const WINDOW_LEN: usize = 16_000;
/// Largest time shift accepted by [`time_shift`] (100 ms).
pub const MAX_SHIFT: usize = 1600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub window_fn: WindowFn,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            frame_len: 1000,
            hop: 477,
            fft_size: 1024,
            n_mels: 40,
            n_mfcc: 40,
            fmin: 20.0,
            fmax: 8000.0,
            log_floor: 1e-6,
            window_fn: WindowFn::Hann,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let fail = |m: String| Err(Error::Config(m));
        if self.n_mels < 2 {
            return fail(format!("n_mels = {} (need at least 2)", self.n_mels));
        }
        if self.frame_len == 0 || self.frame_len > self.fft_size {
            return fail(format!("frame_len {} must be in 1..=fft_size {}", self.frame_len, self.fft_size));
        }
        if self.n_mfcc > self.n_mels {
            return fail(format!("n_mfcc {} exceeds n_mels {}", self.n_mfcc, self.n_mels));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return fail(format!("need 0 <= fmin < fmax <= {nyquist}, got {}..{}", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// One window of MFCCs, frames × coefficients in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub mfcc: Vec<f64>,
    pub origin_sample: usize,
}

impl FeatureWindow {
    pub fn new(mfcc: Vec<f64>, origin_sample: usize) -> Result<Self> {
        if mfcc.len() != N_FRAMES * N_COEFFS {
            return Err(Error::Shape(format!(
                "feature window has {} values, expected {}",
                mfcc.len(),
                N_FRAMES * N_COEFFS
            )));
        }
        Ok(Self { mfcc, origin_sample })
    }

    pub fn zeros(origin_sample: usize) -> Self {
        Self {
            mfcc: vec![0.0; N_FRAMES * N_COEFFS],
            origin_sample,
        }
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.mfcc[k * N_COEFFS..(k + 1) * N_COEFFS]
    }

    pub fn is_finite(&self) -> bool {
        self.mfcc.iter().all(|v| v.is_finite())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `fft_size/2 + 1` power-spectrum bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_bins: usize,
    /// Peak frequency of each filter, in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

/// Builds `n_mels` triangles whose corner points are evenly spaced in mel
/// between `fmin` and `fmax`; each filter's edges are its neighbours' peaks.
pub fn build_filterbank(config: &DspConfig) -> Result<MelFilterbank> {
    config.validate()?;
    let n_bins = config.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let step = (hi - lo) / (config.n_mels + 1) as f64;
    let corners: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / config.fft_size as f64;

    let mut weights = vec![0.0; config.n_mels * n_bins];
    for m in 0..config.n_mels {
        let (left, center, right) = (corners[m], corners[m + 1], corners[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[m * n_bins + k] = w;
        }
        if weights[m * n_bins..(m + 1) * n_bins].iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "mel filter {m} ({left:.1}..{right:.1} Hz) covers no FFT bin; use fewer filters or a larger fft_size"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels: config.n_mels,
        n_bins,
        centers_hz: corners[1..=config.n_mels].to_vec(),
    })
}

/// Orthonormal DCT-II basis, `n_out` rows over `n_in` inputs.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut d = vec![0.0; n_out * n_in];
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            d[k * n_in + n] = scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos();
        }
    }
    d
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reusable MFCC pipeline: precomputed window, filterbank, DCT and FFT plan.
#[derive(Clone)]
pub struct MfccExtractor {
    config: DspConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("config", &self.config).finish()
    }
}

impl MfccExtractor {
    pub fn new(config: &DspConfig) -> Result<Self> {
        config.validate()?;
        if config.n_mfcc != N_COEFFS {
            return Err(Error::Config(format!("n_mfcc must be {N_COEFFS}, got {}", config.n_mfcc)));
        }
        if (N_FRAMES - 1) * config.hop + config.frame_len > WINDOW_LEN {
            return Err(Error::Config(format!(
                "{N_FRAMES} frames of {} every {} do not fit in {WINDOW_LEN} samples",
                config.frame_len, config.hop
            )));
        }
        let filterbank = build_filterbank(config)?;
        Ok(Self {
            config: config.clone(),
            window: match config.window_fn {
                WindowFn::Hann => hann(config.frame_len),
            },
            dct: dct_matrix(config.n_mfcc, config.n_mels),
            fft: FftPlanner::new().plan_fft_forward(config.fft_size),
            filterbank,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.config
    }

    /// MFCCs for exactly one second of audio starting at `origin_sample`.
    pub fn extract(&self, samples: &[f32], origin_sample: usize) -> Result<FeatureWindow> {
        if samples.len() != WINDOW_LEN {
            return Err(Error::Shape(format!(
                "window has {} samples, expected {WINDOW_LEN}",
                samples.len()
            )));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSample {
                index,
                value: samples[index] as f64,
            });
        }
        let c = &self.config;
        let n_bins = self.filterbank.n_bins;
        let mut buf = vec![Complex::new(0.0, 0.0); c.fft_size];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; c.n_mels];
        let mut mfcc = Vec::with_capacity(N_FRAMES * N_COEFFS);

        for k in 0..N_FRAMES {
            let start = k * c.hop;
            for (i, z) in buf.iter_mut().enumerate() {
                *z = if i < c.frame_len {
                    Complex::new(samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, z) in power.iter_mut().zip(&buf) {
                *p = z.norm_sqr();
            }
            for (m, lm) in log_mel.iter_mut().enumerate() {
                let e: f64 = self.filterbank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                *lm = e.max(c.log_floor).ln();
            }
            for q in 0..c.n_mfcc {
                let row = &self.dct[q * c.n_mels..(q + 1) * c.n_mels];
                mfcc.push(row.iter().zip(&log_mel).map(|(d, x)| d * x).sum());
            }
        }
        Ok(FeatureWindow { mfcc, origin_sample })
    }
}

/// One-shot MFCC extraction. Prefer [`MfccExtractor`] when processing many windows.
pub fn mfcc_window(samples: &[f32], config: &DspConfig) -> Result<FeatureWindow> {
    MfccExtractor::new(config)?.extract(samples, 0)
}

/// Delays (`shift > 0`) or advances (`shift < 0`) a clip, zero-filling the
/// vacated samples and keeping its length.
pub fn time_shift(clip: &AudioClip, shift: i64) -> Result<AudioClip> {
    if shift.unsigned_abs() as usize > MAX_SHIFT {
        return Err(Error::Range(format!("time shift {shift} exceeds ±{MAX_SHIFT} samples")));
    }
    let n = clip.samples.len();
    let mut out = vec![0.0f32; n];
    for (i, o) in out.iter_mut().enumerate() {
        let src = i as i64 - shift;
        if (0..n as i64).contains(&src) {
            *o = clip.samples[src as usize];
        }
    }
    Ok(AudioClip {
        samples: out,
        ..clip.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sine(freq: f64, amp: f64) -> Vec<f32> {
        (0..WINDOW_LEN)
            .map(|n| (amp * (2.0 * PI * freq * n as f64 / 16000.0).sin()) as f32)
            .collect()
    }

    #[test]
    fn zeros_give_dct_of_constant_floor() {
        let f = mfcc_window(&vec![0.0; WINDOW_LEN], &DspConfig::default()).unwrap();
        let c0 = 40f64.sqrt() * 1e-6f64.ln();
        for k in 0..N_FRAMES {
            let frame = f.frame(k);
            assert!((frame[0] - c0).abs() < 1e-9 * c0.abs());
            assert!(frame[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn shape_and_errors() {
        let cfg = DspConfig::default();
        assert_eq!(mfcc_window(&sine(440.0, 0.5), &cfg).unwrap().mfcc.len(), 32 * 40);
        assert!(matches!(mfcc_window(&[0.0; 100], &cfg), Err(Error::Shape(_))));
        let mut bad = vec![0.0; WINDOW_LEN];
        bad[5] = f32::NAN;
        assert!(matches!(mfcc_window(&bad, &cfg), Err(Error::InvalidSample { index: 5, .. })));
    }

    #[test]
    fn filterbank_rows_are_unimodal_and_cover_the_band() {
        let fb = build_filterbank(&DspConfig::default()).unwrap();
        assert_eq!(fb.n_mels, 40);
        for m in 0..40 {
            let row = fb.row(m);
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        let bin_hz = 16000.0 / 1024.0;
        for k in 0..fb.n_bins {
            let f = k as f64 * bin_hz;
            if f >= fb.centers_hz[0] && f <= fb.centers_hz[39] {
                let total: f64 = (0..40).map(|m| fb.row(m)[k]).sum();
                assert!(total > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn filter_centers_follow_mel_formula() {
        let fb = build_filterbank(&DspConfig::default()).unwrap();
        let lo = 2595.0 * (1.0f64 + 20.0 / 700.0).log10();
        let hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        for (i, c) in fb.centers_hz.iter().enumerate() {
            let mel = lo + (hi - lo) * (i + 1) as f64 / 41.0;
            let expect = 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
            assert!((c - expect).abs() < 1e-9 * expect);
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn too_few_mels_rejected() {
        let cfg = DspConfig {
            n_mels: 1,
            n_mfcc: 1,
            ..DspConfig::default()
        };
        assert!(matches!(build_filterbank(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(40, 40);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..40).map(|k| (0..40).map(|n| d[k * 40 + n] * x[n]).sum()).collect();
        let back: Vec<f64> = (0..40).map(|n| (0..40).map(|k| d[k * 40 + n] * y[k]).sum()).collect();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn time_shift_bounds_and_identity() {
        let clip = AudioClip::new(sine(300.0, 0.5), None, "s").unwrap();
        assert_eq!(time_shift(&clip, 0).unwrap(), clip);
        assert!(matches!(time_shift(&clip, 16000), Err(Error::Range(_))));
        let back = time_shift(&time_shift(&clip, 100).unwrap(), -100).unwrap();
        let n = clip.len();
        assert!(back.samples[n - 100..].iter().all(|&v| v == 0.0));
        assert_eq!(&back.samples[..n - 100], &clip.samples[..n - 100]);
        let fwd = time_shift(&clip, 100).unwrap();
        assert!(fwd.samples[..100].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let cfg = DspConfig::default();
        let s = sine(1234.0, 0.3);
        let a = mfcc_window(&s, &cfg).unwrap();
        let b = mfcc_window(&s, &cfg).unwrap();
        assert!(a.mfcc.iter().zip(&b.mfcc).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
