//! The `cnn-one-fstride4` keyword spotter.
//!
//! One convolution whose filters span all 32 frames and 8 MFCC coefficients,
//! sliding over frequency with stride 4, feeds a linear low-rank bottleneck,
//! a ReLU dense layer and a two-way softmax:
//!
//! ```text
//! x[32×40] ─conv 32×8 /4─▶ relu[maps×9] ─lin─▶ g[32] ─dense+relu─▶ d[128] ─out─▶ softmax[2]
//! ```
//!
//! Parameters live in one flat buffer with a fixed tensor order, which makes
//! the optimizers plain vector arithmetic and the checkpoint format trivial.

mod checkpoint;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureWindow, N_COEFFS, N_FRAMES};
use crate::seed::rng_for;
use crate::{Error, Label, Result};

/// Floating-point type the network runs in.
pub trait Scalar: Float + FromPrimitive + Sum + Default + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to any Scalar")
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of one prediction, `-ln(max(p[target], 1e-12))`.
pub fn cross_entropy(probs: [f64; 2], target: Label) -> f64 {
    -probs[target.index()].max(PROB_FLOOR).ln()
}

/// Predicted class; ties go to class 0 (non-target).
pub fn argmax(probs: [f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Target
    } else {
        Label::NonTarget
    }
}

/// Layer sizes. The input is always a 32×40 MFCC window and the conv filter
/// always spans all 32 frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub n_maps: usize,
    pub filter_freq: usize,
    pub freq_stride: usize,
    pub bottleneck: usize,
    pub dense: usize,
}

pub const N_CLASSES: usize = 2;
const N_TENSORS: usize = 7;

impl Default for Arch {
    fn default() -> Self {
        Self::cnn_one_fstride4()
    }
}

impl Arch {
    /// 186 maps, 32×8 filters with frequency stride 4, bottleneck 32, dense 128.
    pub const fn cnn_one_fstride4() -> Self {
        Self {
            n_maps: 186,
            filter_freq: 8,
            freq_stride: 4,
            bottleneck: 32,
            dense: 128,
        }
    }

    /// Same topology with 8 maps and a 16-unit dense layer, for gradient checks.
    pub const fn shrunken() -> Self {
        Self {
            n_maps: 8,
            dense: 16,
            ..Self::cnn_one_fstride4()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_maps == 0 || self.bottleneck == 0 || self.dense == 0 || self.freq_stride == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.filter_freq == 0 || self.filter_freq > N_COEFFS {
            return Err(Error::Config(format!("filter width {} not in 1..={N_COEFFS}", self.filter_freq)));
        }
        Ok(())
    }

    /// Filter positions along frequency (9 for the default layout).
    pub fn positions(&self) -> usize {
        (N_COEFFS - self.filter_freq) / self.freq_stride + 1
    }

    pub fn flat(&self) -> usize {
        self.n_maps * self.positions()
    }

    /// Tensor shapes in storage order: conv_w, conv_b, lin_w, dnn_w, dnn_b, out_w, out_b.
    pub fn shapes(&self) -> [Vec<usize>; N_TENSORS] {
        [
            vec![self.n_maps, 1, N_FRAMES, self.filter_freq],
            vec![self.n_maps],
            vec![self.flat(), self.bottleneck],
            vec![self.bottleneck, self.dense],
            vec![self.dense],
            vec![self.dense, N_CLASSES],
            vec![N_CLASSES],
        ]
    }

    fn offsets(&self) -> [usize; N_TENSORS + 1] {
        let mut o = [0; N_TENSORS + 1];
        for (i, s) in self.shapes().iter().enumerate() {
            o[i + 1] = o[i] + s.iter().product::<usize>();
        }
        o
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[N_TENSORS]
    }
}

macro_rules! tensor_views {
    ($ty:ident) => {
        impl<T: Scalar> $ty<T> {
            fn tensor(&self, i: usize) -> &[T] {
                let o = self.arch.offsets();
                &self.values[o[i]..o[i + 1]]
            }
            pub fn conv_w(&self) -> &[T] {
                self.tensor(0)
            }
            pub fn conv_b(&self) -> &[T] {
                self.tensor(1)
            }
            pub fn lin_w(&self) -> &[T] {
                self.tensor(2)
            }
            pub fn dnn_w(&self) -> &[T] {
                self.tensor(3)
            }
            pub fn dnn_b(&self) -> &[T] {
                self.tensor(4)
            }
            pub fn out_w(&self) -> &[T] {
                self.tensor(5)
            }
            pub fn out_b(&self) -> &[T] {
                self.tensor(6)
            }
            /// Mutable views of all tensors in storage order.
            pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
                let o = self.arch.offsets();
                let mut rest = self.values.as_mut_slice();
                let mut out = Vec::with_capacity(N_TENSORS);
                for i in 0..N_TENSORS {
                    let (head, tail) = rest.split_at_mut(o[i + 1] - o[i]);
                    out.push(head);
                    rest = tail;
                }
                out
            }
        }
    };
}

/// All weights and biases of one network, flat in storage order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f32> {
    pub arch: Arch,
    pub values: Vec<T>,
}

/// ∂loss/∂θ, laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub arch: Arch,
    pub values: Vec<T>,
}

tensor_views!(ModelParams);
tensor_views!(Gradients);

impl<T: Scalar> Gradients<T> {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            values: vec![T::zero(); arch.param_count()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + *b;
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(arch: Arch) -> Self {
        Self {
            arch,
            values: vec![T::zero(); arch.param_count()],
        }
    }

    /// Glorot-uniform weights and zero biases from a seed.
    ///
    /// Fan-in/fan-out follow the usual convention: for the conv layer both are
    /// scaled by the receptive field (32×8).
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let field = N_FRAMES * arch.filter_freq;
        let fans = [
            Some((field, field * arch.n_maps)),
            None,
            Some((arch.flat(), arch.bottleneck)),
            Some((arch.bottleneck, arch.dense)),
            None,
            Some((arch.dense, N_CLASSES)),
            None,
        ];
        let mut rng = rng_for(seed, "model/init");
        for (tensor, fan) in p.tensors_mut().into_iter().zip(fans) {
            if let Some((fan_in, fan_out)) = fan {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in tensor.iter_mut() {
                    *v = c(rng.gen_range(-limit..=limit));
                }
            }
        }
        p
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            values: self.values.iter().map(|v| c(v.to_f64().unwrap())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Equality of every parameter's bit pattern.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_f64().unwrap().to_bits() == b.to_f64().unwrap().to_bits())
    }

    /// Plain gradient descent: `θ − lr·∇`.
    pub fn sgd_step(&self, grads: &Gradients<T>, lr: f64) -> ModelParams<T> {
        let lr: T = c(lr);
        ModelParams {
            arch: self.arch,
            values: self
                .values
                .iter()
                .zip(&grads.values)
                .map(|(&p, &g)| p - lr * g)
                .collect(),
        }
    }
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub arch: Arch,
    pub input: Vec<T>,
    pub conv_pre: Vec<T>,
    pub conv_act: Vec<T>,
    pub bottleneck: Vec<T>,
    pub dense_pre: Vec<T>,
    pub dense_act: Vec<T>,
    pub logits: [T; N_CLASSES],
}

fn softmax<T: Scalar>(logits: [T; 2]) -> [f64; 2] {
    let l = [logits[0].to_f64().unwrap(), logits[1].to_f64().unwrap()];
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Runs the network on one window. Probabilities are computed in f64 from the
/// logits regardless of `T`.
pub fn forward<T: Scalar>(params: &ModelParams<T>, x: &FeatureWindow) -> Result<([f64; 2], ForwardTrace<T>)> {
    if x.mfcc.len() != N_FRAMES * N_COEFFS {
        return Err(Error::Shape(format!(
            "input has {} values, expected {}",
            x.mfcc.len(),
            N_FRAMES * N_COEFFS
        )));
    }
    if params.values.len() != params.arch.param_count() {
        return Err(Error::Shape("parameter buffer does not match its architecture".into()));
    }
    let a = params.arch;
    let (n_pos, ff, stride) = (a.positions(), a.filter_freq, a.freq_stride);
    let input: Vec<T> = x.mfcc.iter().map(|&v| c(v)).collect();

    let (conv_w, conv_b) = (params.conv_w(), params.conv_b());
    let mut conv_pre = vec![T::zero(); a.flat()];
    for m in 0..a.n_maps {
        let w = &conv_w[m * N_FRAMES * ff..(m + 1) * N_FRAMES * ff];
        for p in 0..n_pos {
            let mut acc = conv_b[m];
            for t in 0..N_FRAMES {
                let xr = &input[t * N_COEFFS + p * stride..t * N_COEFFS + p * stride + ff];
                let wr = &w[t * ff..(t + 1) * ff];
                for k in 0..ff {
                    acc = acc + wr[k] * xr[k];
                }
            }
            conv_pre[m * n_pos + p] = acc;
        }
    }
    let conv_act: Vec<T> = conv_pre.iter().map(|&z| z.max(T::zero())).collect();

    let lin_w = params.lin_w();
    let mut bottleneck = vec![T::zero(); a.bottleneck];
    for (i, &h) in conv_act.iter().enumerate() {
        if h != T::zero() {
            let row = &lin_w[i * a.bottleneck..(i + 1) * a.bottleneck];
            for (g, &w) in bottleneck.iter_mut().zip(row) {
                *g = *g + h * w;
            }
        }
    }

    let (dnn_w, dnn_b) = (params.dnn_w(), params.dnn_b());
    let mut dense_pre = dnn_b.to_vec();
    for (j, &g) in bottleneck.iter().enumerate() {
        let row = &dnn_w[j * a.dense..(j + 1) * a.dense];
        for (d, &w) in dense_pre.iter_mut().zip(row) {
            *d = *d + g * w;
        }
    }
    let dense_act: Vec<T> = dense_pre.iter().map(|&z| z.max(T::zero())).collect();

    let (out_w, out_b) = (params.out_w(), params.out_b());
    let mut logits = [out_b[0], out_b[1]];
    for (j, &d) in dense_act.iter().enumerate() {
        logits[0] = logits[0] + d * out_w[j * N_CLASSES];
        logits[1] = logits[1] + d * out_w[j * N_CLASSES + 1];
    }

    let probs = softmax(logits);
    Ok((
        probs,
        ForwardTrace {
            arch: a,
            input,
            conv_pre,
            conv_act,
            bottleneck,
            dense_pre,
            dense_act,
            logits,
        },
    ))
}

/// Cross-entropy loss and its exact gradient for one forward pass.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    target: Label,
    probs: [f64; 2],
) -> Result<(f64, Gradients<T>)> {
    let a = params.arch;
    if trace.arch != a
        || trace.conv_pre.len() != a.flat()
        || trace.bottleneck.len() != a.bottleneck
        || trace.dense_pre.len() != a.dense
        || trace.input.len() != N_FRAMES * N_COEFFS
    {
        return Err(Error::Trace(format!(
            "trace for {:?} used with parameters for {a:?}",
            trace.arch
        )));
    }
    let loss = cross_entropy(probs, target);
    let (n_pos, ff, stride) = (a.positions(), a.filter_freq, a.freq_stride);
    let mut grads = Gradients::zeros(a);
    let mut views = grads.tensors_mut().into_iter();
    let mut next = || views.next().expect("seven tensors");
    let (g_conv_w, g_conv_b, g_lin_w, g_dnn_w, g_dnn_b, g_out_w, g_out_b) =
        (next(), next(), next(), next(), next(), next(), next());

    let mut d_logits = [c::<T>(probs[0]), c::<T>(probs[1])];
    d_logits[target.index()] = d_logits[target.index()] - T::one();

    let out_w = params.out_w();
    g_out_b.copy_from_slice(&d_logits);
    let mut d_dense = vec![T::zero(); a.dense];
    for j in 0..a.dense {
        g_out_w[j * 2] = trace.dense_act[j] * d_logits[0];
        g_out_w[j * 2 + 1] = trace.dense_act[j] * d_logits[1];
        if trace.dense_pre[j] > T::zero() {
            d_dense[j] = out_w[j * 2] * d_logits[0] + out_w[j * 2 + 1] * d_logits[1];
        }
    }

    let dnn_w = params.dnn_w();
    g_dnn_b.copy_from_slice(&d_dense);
    let mut d_bottleneck = vec![T::zero(); a.bottleneck];
    for (i, &g) in trace.bottleneck.iter().enumerate() {
        let row = &dnn_w[i * a.dense..(i + 1) * a.dense];
        let grow = &mut g_dnn_w[i * a.dense..(i + 1) * a.dense];
        let mut acc = T::zero();
        for j in 0..a.dense {
            grow[j] = g * d_dense[j];
            acc = acc + row[j] * d_dense[j];
        }
        d_bottleneck[i] = acc;
    }

    let lin_w = params.lin_w();
    let mut d_conv = vec![T::zero(); a.flat()];
    for (i, &h) in trace.conv_act.iter().enumerate() {
        let row = &lin_w[i * a.bottleneck..(i + 1) * a.bottleneck];
        let grow = &mut g_lin_w[i * a.bottleneck..(i + 1) * a.bottleneck];
        let mut acc = T::zero();
        for j in 0..a.bottleneck {
            grow[j] = h * d_bottleneck[j];
            acc = acc + row[j] * d_bottleneck[j];
        }
        if trace.conv_pre[i] > T::zero() {
            d_conv[i] = acc;
        }
    }

    for m in 0..a.n_maps {
        let gw = &mut g_conv_w[m * N_FRAMES * ff..(m + 1) * N_FRAMES * ff];
        for p in 0..n_pos {
            let dz = d_conv[m * n_pos + p];
            if dz == T::zero() {
                continue;
            }
            g_conv_b[m] = g_conv_b[m] + dz;
            for t in 0..N_FRAMES {
                let xr = &trace.input[t * N_COEFFS + p * stride..t * N_COEFFS + p * stride + ff];
                let gr = &mut gw[t * ff..(t + 1) * ff];
                for k in 0..ff {
                    gr[k] = gr[k] + dz * xr[k];
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Samples per rayon task when reducing over a batch; fixed so the summation
/// order, and therefore every bit of the result, is independent of thread count.
const CHUNK: usize = 8;

/// A two-class model the online learners and trainer can drive.
pub trait Classifier: Clone + Send + Sync {
    type Grad: Send;

    fn predict(&self, x: &FeatureWindow) -> Result<[f64; 2]>;

    /// Mean cross-entropy over `batch` and its gradient.
    fn loss_and_grad(&self, batch: &[(FeatureWindow, Label)]) -> Result<(f64, Self::Grad)>;

    fn sgd_step(&self, grad: &Self::Grad, lr: f64) -> Self;

    fn bitwise_eq(&self, other: &Self) -> bool;

    /// Mean loss, summed in a fixed order.
    fn mean_loss(&self, batch: &[(FeatureWindow, Label)]) -> Result<f64> {
        let losses = batch
            .par_iter()
            .map(|(x, y)| Ok(cross_entropy(self.predict(x)?, *y)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(chunked_mean(&losses))
    }
}

/// Mean with the same chunked summation order [`Classifier::loss_and_grad`] uses.
pub fn chunked_mean(values: &[f64]) -> f64 {
    let total = values
        .chunks(CHUNK)
        .map(|c| c.iter().fold(0.0, |a, v| a + v))
        .fold(0.0, |a, v| a + v);
    total / values.len() as f64
}

impl<T: Scalar> Classifier for ModelParams<T> {
    type Grad = Gradients<T>;

    fn predict(&self, x: &FeatureWindow) -> Result<[f64; 2]> {
        Ok(forward(self, x)?.0)
    }

    fn loss_and_grad(&self, batch: &[(FeatureWindow, Label)]) -> Result<(f64, Gradients<T>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let partials = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut grads = Gradients::zeros(self.arch);
                for (x, y) in chunk {
                    let (probs, trace) = forward(self, x)?;
                    let (l, g) = backward(self, &trace, *y, probs)?;
                    loss += l;
                    grads.add_assign(&g);
                }
                Ok((loss, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut grads = Gradients::zeros(self.arch);
        for (l, g) in &partials {
            loss += l;
            grads.add_assign(g);
        }
        let scale: T = c(1.0 / batch.len() as f64);
        grads.values.iter_mut().for_each(|v| *v = *v * scale);
        Ok((loss / batch.len() as f64, grads))
    }

    fn sgd_step(&self, grad: &Gradients<T>, lr: f64) -> Self {
        ModelParams::sgd_step(self, grad, lr)
    }

    fn bitwise_eq(&self, other: &Self) -> bool {
        ModelParams::bitwise_eq(self, other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_window(seed: u64) -> FeatureWindow {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureWindow::new((0..N_FRAMES * N_COEFFS).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0).unwrap()
    }

    #[test]
    fn default_layout() {
        let a = Arch::cnn_one_fstride4();
        assert_eq!(a.positions(), 9);
        assert_eq!(a.flat(), 186 * 9);
        assert_eq!(a.param_count(), 186 * 256 + 186 + 1674 * 32 + 32 * 128 + 128 + 256 + 2);
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = ModelParams::<f32>::zeros(Arch::default());
        let (probs, _) = forward(&p, &random_window(1)).unwrap();
        assert_eq!(probs, [0.5, 0.5]);
        let (probs, trace) = forward(&p, &random_window(1)).unwrap();
        let (loss, _) = backward(&p, &trace, Label::Target, probs).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one() {
        for s in 0..5 {
            let p = ModelParams::<f64>::init(Arch::shrunken(), s);
            let (probs, _) = forward(&p, &random_window(s + 10)).unwrap();
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn confident_optimum_has_tiny_loss_and_gradient() {
        let mut p = ModelParams::<f64>::init(Arch::shrunken(), 4);
        let n = p.values.len();
        p.values[n - 1] = 40.0;
        p.values[n - 2] = -40.0;
        let (probs, trace) = forward(&p, &random_window(2)).unwrap();
        let (loss, g) = backward(&p, &trace, Label::Target, probs).unwrap();
        assert!(loss <= 1e-6);
        assert!(g.norm() <= 1e-4);
    }

    #[test]
    fn stale_trace_rejected() {
        let small = ModelParams::<f64>::init(Arch::shrunken(), 0);
        let big = ModelParams::<f64>::init(Arch::default(), 0);
        let (probs, trace) = forward(&small, &random_window(0)).unwrap();
        assert!(matches!(backward(&big, &trace, Label::Target, probs), Err(Error::Trace(_))));
    }

    #[test]
    fn wrong_input_shape() {
        let p = ModelParams::<f32>::zeros(Arch::shrunken());
        let x = FeatureWindow {
            mfcc: vec![0.0; 10],
            origin_sample: 0,
        };
        assert!(matches!(forward(&p, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn swapping_output_units_swaps_probabilities() {
        let p = ModelParams::<f32>::init(Arch::shrunken(), 9);
        let mut q = p.clone();
        {
            let mut t = q.tensors_mut();
            let out_w = &mut t[5];
            for j in 0..Arch::shrunken().dense {
                out_w.swap(2 * j, 2 * j + 1);
            }
            t[6].swap(0, 1);
        }
        let x = random_window(5);
        let a = forward(&p, &x).unwrap().0;
        let b = forward(&q, &x).unwrap().0;
        assert_eq!(a[0].to_bits(), b[1].to_bits());
        assert_eq!(a[1].to_bits(), b[0].to_bits());
    }

    #[test]
    fn forward_is_pure() {
        let p = ModelParams::<f32>::init(Arch::default(), 1);
        let x = random_window(3);
        let a = forward(&p, &x).unwrap().0;
        let b = forward(&p, &x).unwrap().0;
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let p = ModelParams::<f64>::init(Arch::shrunken(), 2);
        let batch: Vec<_> = (0..11)
            .map(|i| (random_window(i), if i % 2 == 0 { Label::Target } else { Label::NonTarget }))
            .collect();
        let (loss, g) = p.loss_and_grad(&batch).unwrap();
        let mut sum = vec![0.0; g.values.len()];
        let mut lsum = 0.0;
        for (x, y) in &batch {
            let (probs, tr) = forward(&p, x).unwrap();
            let (l, gi) = backward(&p, &tr, *y, probs).unwrap();
            lsum += l;
            for (s, v) in sum.iter_mut().zip(&gi.values) {
                *s += v;
            }
        }
        assert!((loss - lsum / 11.0).abs() < 1e-12);
        for (a, b) in g.values.iter().zip(&sum) {
            assert!((a - b / 11.0).abs() < 1e-12);
        }
    }
}
