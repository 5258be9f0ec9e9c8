#![allow(dead_code)]

use std::f64::consts::PI;

use coolkws::dsp::{FeatureWindow, N_COEFFS, N_FRAMES};
use coolkws::model::{Arch, Classifier, ModelParams};
use coolkws::{Label, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_window(rng: &mut impl Rng, scale: f64) -> FeatureWindow {
    FeatureWindow::new(
        (0..N_FRAMES * N_COEFFS).map(|_| scale * rng.gen_range(-1.0..1.0)).collect(),
        0,
    )
    .unwrap()
}

pub fn random_label(rng: &mut impl Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Target
    } else {
        Label::NonTarget
    }
}

/// Straightforward MFCC: naive DFT, filters built from the mel formula,
/// DCT-II written out per coefficient.
pub fn reference_mfcc(signal: &[f32]) -> Vec<f64> {
    let (sr, frame, hop, nfft, n_mels) = (16000.0, 1000usize, 477usize, 1024usize, 40usize);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let tri = |m: usize, f: f64| {
        let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > a && f <= b {
            (f - a) / (b - a)
        } else if f > b && f < c {
            (c - f) / (c - b)
        } else {
            0.0
        }
    };
    // Twiddle table keeps the O(N²) transform affordable.
    let cos: Vec<f64> = (0..nfft).map(|i| (2.0 * PI * i as f64 / nfft as f64).cos()).collect();
    let sin: Vec<f64> = (0..nfft).map(|i| (2.0 * PI * i as f64 / nfft as f64).sin()).collect();
    let mut out = Vec::with_capacity(32 * 40);
    for t in 0..32 {
        let x: Vec<f64> = (0..frame)
            .map(|n| {
                let w = 0.5 * (1.0 - (2.0 * PI * n as f64 / frame as f64).cos());
                signal[t * hop + n] as f64 * w
            })
            .collect();
        let power: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in x.iter().enumerate() {
                    let idx = (k * n) % nfft;
                    re += v * cos[idx];
                    im -= v * sin[idx];
                }
                re * re + im * im
            })
            .collect();
        let logmel: Vec<f64> = (0..n_mels)
            .map(|m| {
                let e: f64 = power.iter().enumerate().map(|(k, p)| p * tri(m, k as f64 * sr / nfft as f64)).sum();
                e.max(1e-6).ln()
            })
            .collect();
        for q in 0..40 {
            let a = if q == 0 { (1.0 / 40.0f64).sqrt() } else { (2.0 / 40.0f64).sqrt() };
            let s: f64 = logmel
                .iter()
                .enumerate()
                .map(|(n, v)| v * (PI * q as f64 * (n as f64 + 0.5) / 40.0).cos())
                .sum();
            out.push(a * s);
        }
    }
    out
}

/// Independently written forward pass over the flat parameter vector.
pub fn reference_forward(arch: Arch, theta: &[f64], x: &[f64]) -> [f64; 2] {
    let (m, ff, st, bn, d) = (arch.n_maps, arch.filter_freq, arch.freq_stride, arch.bottleneck, arch.dense);
    let npos = (40 - ff) / st + 1;
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &theta[at..at + n];
        at += n;
        s.to_vec()
    };
    let conv_w = take(m * 32 * ff);
    let conv_b = take(m);
    let lin_w = take(m * npos * bn);
    let dnn_w = take(bn * d);
    let dnn_b = take(d);
    let out_w = take(d * 2);
    let out_b = take(2);

    let mut h = vec![0.0; m * npos];
    for map in 0..m {
        for p in 0..npos {
            let mut z = conv_b[map];
            for t in 0..32 {
                for k in 0..ff {
                    z += conv_w[((map * 32) + t) * ff + k] * x[t * 40 + p * st + k];
                }
            }
            h[map * npos + p] = z.max(0.0);
        }
    }
    let g: Vec<f64> = (0..bn)
        .map(|j| (0..m * npos).map(|i| h[i] * lin_w[i * bn + j]).sum())
        .collect();
    let u: Vec<f64> = (0..d)
        .map(|k| (dnn_b[k] + (0..bn).map(|j| g[j] * dnn_w[j * d + k]).sum::<f64>()).max(0.0))
        .collect();
    let z: Vec<f64> = (0..2)
        .map(|c| out_b[c] + (0..d).map(|k| u[k] * out_w[k * 2 + c]).sum::<f64>())
        .collect();
    let mx = z[0].max(z[1]);
    let e0 = (z[0] - mx).exp();
    let e1 = (z[1] - mx).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

pub fn f64_model(seed: u64) -> ModelParams<f64> {
    ModelParams::init(Arch::shrunken(), seed)
}

/// Logistic regression on the first MFCC value: `p(target) = σ(w·x₀ + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Toy {
    pub w: f64,
    pub b: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Classifier for Toy {
    type Grad = (f64, f64);

    fn predict(&self, x: &FeatureWindow) -> Result<[f64; 2]> {
        let p = sigmoid(self.w * x.mfcc[0] + self.b);
        Ok([1.0 - p, p])
    }

    fn loss_and_grad(&self, batch: &[(FeatureWindow, Label)]) -> Result<(f64, (f64, f64))> {
        let n = batch.len() as f64;
        let (mut l, mut gw, mut gb) = (0.0, 0.0, 0.0);
        for (x, y) in batch {
            let p = self.predict(x)?;
            l += coolkws::model::cross_entropy(p, *y);
            let r = p[1] - y.index() as f64;
            gw += r * x.mfcc[0];
            gb += r;
        }
        Ok((l / n, (gw / n, gb / n)))
    }

    fn sgd_step(&self, g: &(f64, f64), lr: f64) -> Self {
        Toy {
            w: self.w - lr * g.0,
            b: self.b - lr * g.1,
        }
    }

    fn bitwise_eq(&self, other: &Self) -> bool {
        self.w.to_bits() == other.w.to_bits() && self.b.to_bits() == other.b.to_bits()
    }
}

pub fn scalar_window(v: f64) -> FeatureWindow {
    let mut x = FeatureWindow::zeros(0);
    x.mfcc[0] = v;
    x
}

/// Windows whose class is a linear function of a few fixed coordinates.
pub fn separable(n: usize, seed: u64) -> Vec<(FeatureWindow, Label)> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let y = if i % 2 == 0 { Label::Target } else { Label::NonTarget };
            let mut x = random_window(&mut r, 1.0);
            let s = if y == Label::Target { 1.5 } else { -1.5 };
            for t in 0..N_FRAMES {
                for q in 4..12 {
                    x.mfcc[t * N_COEFFS + q] += s;
                }
            }
            (x, y)
        })
        .collect()
}

/// A random stream layout: clips of varying length, label and word position.
pub fn random_layout(seed: u64, max_clips: usize) -> Vec<coolkws::stream::StreamClip> {
    let mut r = rng(seed);
    let n = r.gen_range(1..=max_clips);
    (0..n)
        .map(|_| {
            let len = r.gen_range(2000..=16000);
            let s = r.gen_range(0..len - 1);
            let e = r.gen_range(s + 1..=len);
            let samples = (0..len).map(|i| if i >= s && i < e { 0.1 } else { 0.0 }).collect();
            coolkws::stream::StreamClip {
                clip: coolkws::AudioClip::new(samples, None, "layout").unwrap(),
                label: random_label(&mut r),
                word_extent: (s, e),
            }
        })
        .collect()
}

/// Exhaustive window labels for the 80% rule, in integer arithmetic.
pub fn oracle_labels(clips: &[coolkws::stream::StreamClip], pad: usize, hop: usize, win: usize) -> Vec<(usize, Label)> {
    let mut words = Vec::new();
    let mut at = 0;
    for c in clips {
        at += pad;
        if c.label == Label::Target {
            words.push((at + c.word_extent.0, at + c.word_extent.1));
        }
        at += c.clip.samples.len() + pad;
    }
    let total = at.div_ceil(hop) * hop;
    let mut out = Vec::new();
    let mut o = 0;
    while o + win <= total {
        let hit = words.iter().any(|&(s, e)| {
            let ov = e.min(o + win).saturating_sub(s.max(o));
            5 * ov >= 4 * (e - s)
        });
        out.push((o, if hit { Label::Target } else { Label::NonTarget }));
        o += hop;
    }
    out
}

/// A window and label at which every ReLU pre-activation of `p` lies at least
/// `margin` from zero, so central differences never straddle a kink.
pub fn smooth_point(p: &ModelParams<f64>, rng: &mut impl Rng, margin: f64) -> (FeatureWindow, Label) {
    for _ in 0..10_000 {
        let x = random_window(rng, 1.0);
        let y = random_label(rng);
        let (_, t) = coolkws::model::forward(p, &x).unwrap();
        if t.conv_pre.iter().chain(&t.dense_pre).all(|z| z.abs() >= margin) {
            return (x, y);
        }
    }
    panic!("no input clear of the ReLU kinks");
}
