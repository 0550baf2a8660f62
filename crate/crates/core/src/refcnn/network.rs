use rand::Rng;
use rayon::prelude::*;

use super::scalar::{add_assign, axpy, dot, Scalar};
use super::spec::{LayerKind, ModelSpec, Shape};
use super::ModelError;
use crate::rng::substream;

/// Examples per work unit. Gradients are summed within a chunk and then
/// across chunks in chunk order, so results do not depend on thread count.
const CHUNK: usize = 8;

/// Weights and bias of one layer; both empty for pooling and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// conv: `[out][in][3][3]`; fc: `[out][in]`
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub weight_dims: Vec<usize>,
}

impl<T: Scalar> LayerParams<T> {
    fn empty() -> Self {
        LayerParams {
            weights: Vec::new(),
            bias: Vec::new(),
            weight_dims: Vec::new(),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); self.bias.len()],
            weight_dims: self.weight_dims.clone(),
        }
    }

    fn add(&mut self, other: &Self) {
        add_assign(&mut self.weights, &other.weights);
        add_assign(&mut self.bias, &other.bias);
    }

    fn scale(&mut self, s: T) {
        for x in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *x = *x * s;
        }
    }
}

/// Network parameters, one [`LayerParams`] per layer of `spec`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub seed: u64,
    pub layers: Vec<LayerParams<T>>,
}

/// Per-layer parameter gradients, shaped like [`ModelParams::layers`].
pub type Gradients<T> = Vec<LayerParams<T>>;

impl<T: Scalar> ModelParams<T> {
    /// Xavier-uniform weights, zero biases. Layer `i` draws from substream `i`
    /// of `seed`; samples are drawn in `f64`, so `f32` and `f64` models with
    /// the same seed agree up to rounding.
    pub fn init_xavier(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let (fan_in, fan_out, dims) = match (l.kind, shapes[i]) {
                (LayerKind::Conv3x3Relu, s) => {
                    let c_in = match s {
                        Shape::Map(c, _, _) => c,
                        Shape::Flat(_) => unreachable!("validated by shapes()"),
                    };
                    (c_in * 9, l.width * 9, vec![l.width, c_in, 3, 3])
                }
                (LayerKind::FcRelu | LayerKind::FcSoftmax, s) => (s.len(), l.width, vec![l.width, s.len()]),
                _ => {
                    layers.push(LayerParams::empty());
                    continue;
                }
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = substream(seed, i as u64);
            let n: usize = dims.iter().product();
            let weights = (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
                .collect();
            layers.push(LayerParams {
                weights,
                bias: vec![T::zero(); dims[0]],
                weight_dims: dims,
            });
        }
        Ok(ModelParams {
            spec: spec.clone(),
            seed,
            layers,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers.iter().map(LayerParams::zeros_like).collect()
    }

    /// Convert to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap())).collect();
        ModelParams {
            spec: self.spec.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                    weight_dims: l.weight_dims.clone(),
                })
                .collect(),
        }
    }
}

/// Activations of one example kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExampleCache<T> {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`
    /// (logits for the final layer).
    pub acts: Vec<Vec<T>>,
    pool_argmax: Vec<Vec<u32>>,
    dropout_masks: Vec<Vec<T>>,
    pub probs: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub examples: Vec<ExampleCache<T>>,
}

#[derive(Debug, Clone)]
pub struct BackwardResult<T> {
    /// `−(1/n) Σ ln p[label]`
    pub loss: f64,
    /// Gradients of the mean loss.
    pub grads: Gradients<T>,
    /// Per-example gradients of that example's own loss `−ln p[label]` with
    /// respect to its input (CHW layout); empty unless requested.
    pub input_grads: Vec<Vec<T>>,
}

fn check_inputs<T>(spec: &ModelSpec, inputs: &[Vec<T>]) -> Result<(), ModelError> {
    let expected = spec.input_len();
    match inputs.iter().find(|x| x.len() != expected) {
        Some(x) => Err(ModelError::ShapeMismatch {
            expected,
            actual: x.len(),
        }),
        None => Ok(()),
    }
}

fn check_labels(spec: &ModelSpec, n: usize, labels: &[usize]) -> Result<(), ModelError> {
    if labels.len() != n {
        return Err(ModelError::ShapeMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    let k = spec.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(ModelError::ShapeMismatch {
            expected: k,
            actual: bad + 1,
        });
    }
    Ok(())
}

fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−ln softmax(z)[t]`, computed as log-sum-exp minus the target logit.
fn cross_entropy<T: Scalar>(z: &[T], t: usize) -> f64 {
    let z64: Vec<f64> = z.iter().map(|v| v.to_f64().unwrap()).collect();
    let max = z64.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z64.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z64[t]
}

/// Row ranges for a 3×3 tap offset `d ∈ {−1, 0, 1}` over a length-`n` axis:
/// output indices `lo..hi` read input indices `lo + d..hi + d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n - 1 } else { n };
    (lo, hi.max(lo))
}

fn conv_forward<T: Scalar>(p: &LayerParams<T>, input: &[T], c_in: usize, h: usize, w: usize) -> Vec<T> {
    let c_out = p.weight_dims[0];
    let plane = h * w;
    let mut out = vec![T::zero(); c_out * plane];
    for o in 0..c_out {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(p.bias[o]);
        for i in 0..c_in {
            let in_i = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = p.weights[((o * c_in + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_i[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        axpy(wv, src, &mut out_o[y * w + x0..y * w + x1]);
                    }
                }
            }
        }
        for v in out_o.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    out
}

/// `grad_out` is with respect to the post-ReLU output `out`.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    input: &[T],
    out: &[T],
    grad_out: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    need_input: bool,
) -> Vec<T> {
    let c_out = p.weight_dims[0];
    let plane = h * w;
    let dpre: Vec<T> = grad_out
        .iter()
        .zip(out)
        .map(|(&d, &o)| if o > T::zero() { d } else { T::zero() })
        .collect();
    let mut grad_in = if need_input {
        vec![T::zero(); c_in * plane]
    } else {
        Vec::new()
    };
    for o in 0..c_out {
        let d_o = &dpre[o * plane..(o + 1) * plane];
        g.bias[o] = g.bias[o] + d_o.iter().copied().sum::<T>();
        for i in 0..c_in {
            let in_i = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((o * c_in + i) * 3 + ky) * 3 + kx;
                    let wv = p.weights[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * w + (x0 as isize + dx) as usize;
                        let s1 = sy * w + (x1 as isize + dx) as usize;
                        let d_row = &d_o[y * w + x0..y * w + x1];
                        acc = acc + dot(d_row, &in_i[s0..s1]);
                        if need_input {
                            axpy(wv, d_row, &mut grad_in[i * plane + s0..i * plane + s1]);
                        }
                    }
                    g.weights[widx] = g.weights[widx] + acc;
                }
            }
        }
    }
    grad_in
}

fn pool_forward<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * h2 * w2);
    let mut arg = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h2 {
            for x in 0..w2 {
                let mut best = base + 2 * y * w + 2 * x;
                for idx in [
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn fc_forward<T: Scalar>(p: &LayerParams<T>, input: &[T], relu: bool) -> Vec<T> {
    let n_in = input.len();
    (0..p.bias.len())
        .map(|j| {
            let v = p.bias[j] + dot(&p.weights[j * n_in..(j + 1) * n_in], input);
            if relu && v < T::zero() {
                T::zero()
            } else {
                v
            }
        })
        .collect()
}

fn fc_backward<T: Scalar>(
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    input: &[T],
    dpre: &[T],
    need_input: bool,
) -> Vec<T> {
    let n_in = input.len();
    let mut grad_in = if need_input {
        vec![T::zero(); n_in]
    } else {
        Vec::new()
    };
    for (j, &d) in dpre.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        g.bias[j] = g.bias[j] + d;
        axpy(d, input, &mut g.weights[j * n_in..(j + 1) * n_in]);
        if need_input {
            axpy(d, &p.weights[j * n_in..(j + 1) * n_in], &mut grad_in);
        }
    }
    grad_in
}

fn forward_example<T: Scalar>(
    params: &ModelParams<T>,
    shapes: &[Shape],
    input: &[T],
    train_mode: bool,
    dropout_seed: u64,
    example_index: u64,
) -> ExampleCache<T> {
    let n_layers = params.spec.layers.len();
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(n_layers + 1);
    let mut pool_argmax = vec![Vec::new(); n_layers];
    let mut dropout_masks = vec![Vec::new(); n_layers];
    acts.push(input.to_vec());
    let mut rng = None;
    for (li, l) in params.spec.layers.iter().enumerate() {
        let x = &acts[li];
        let y = match (l.kind, shapes[li]) {
            (LayerKind::Conv3x3Relu, Shape::Map(c, h, w)) => conv_forward(&params.layers[li], x, c, h, w),
            (LayerKind::MaxPool2x2, Shape::Map(c, h, w)) => {
                let (y, arg) = pool_forward(x, c, h, w);
                pool_argmax[li] = arg;
                y
            }
            (LayerKind::FcRelu, _) => fc_forward(&params.layers[li], x, true),
            (LayerKind::FcSoftmax, _) => fc_forward(&params.layers[li], x, false),
            (LayerKind::Dropout, _) if train_mode && l.dropout_rate > 0.0 => {
                let keep = 1.0 - l.dropout_rate;
                let scale = T::from_f64_lossy(1.0 / keep);
                let rng = rng.get_or_insert_with(|| substream(dropout_seed, example_index));
                let mask: Vec<T> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let y = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                dropout_masks[li] = mask;
                y
            }
            (LayerKind::Dropout, _) => x.clone(),
            _ => unreachable!("layer chain validated by shapes()"),
        };
        acts.push(y);
    }
    let probs = softmax(acts.last().unwrap());
    ExampleCache {
        acts,
        pool_argmax,
        dropout_masks,
        probs,
    }
}

/// Adds this example's loss gradient into `grads`; returns the input
/// gradient when requested.
fn backward_example<T: Scalar>(
    params: &ModelParams<T>,
    shapes: &[Shape],
    cache: &ExampleCache<T>,
    label: usize,
    grads: &mut Gradients<T>,
    need_input: bool,
) -> Vec<T> {
    // d(−ln p_t)/dz = p − onehot(t)
    let mut delta: Vec<T> = cache.probs.clone();
    delta[label] = delta[label] - T::one();
    for li in (0..params.spec.layers.len()).rev() {
        let l = &params.spec.layers[li];
        let input = &cache.acts[li];
        let first = li == 0;
        let want_in = need_input || !first;
        delta = match (l.kind, shapes[li]) {
            (LayerKind::Conv3x3Relu, Shape::Map(c, h, w)) => {
                conv_backward(
                    &params.layers[li],
                    &mut grads[li],
                    input,
                    &cache.acts[li + 1],
                    &delta,
                    c,
                    h,
                    w,
                    want_in,
                )
            }
            (LayerKind::MaxPool2x2, _) => {
                if !want_in {
                    Vec::new()
                } else {
                    let mut gi = vec![T::zero(); input.len()];
                    for (d, &a) in delta.iter().zip(&cache.pool_argmax[li]) {
                        gi[a as usize] = gi[a as usize] + *d;
                    }
                    gi
                }
            }
            (LayerKind::FcRelu | LayerKind::FcSoftmax, _) => {
                let dpre: Vec<T> = if l.kind == LayerKind::FcRelu {
                    delta
                        .iter()
                        .zip(&cache.acts[li + 1])
                        .map(|(&d, &o)| if o > T::zero() { d } else { T::zero() })
                        .collect()
                } else {
                    delta
                };
                fc_backward(&params.layers[li], &mut grads[li], input, &dpre, want_in)
            }
            (LayerKind::Dropout, _) => {
                let mask = &cache.dropout_masks[li];
                if mask.is_empty() {
                    delta
                } else {
                    delta.iter().zip(mask).map(|(&d, &m)| d * m).collect()
                }
            }
            _ => unreachable!("layer chain validated by shapes()"),
        };
    }
    delta
}

/// Class probabilities and cached activations for a batch of CHW inputs.
/// Dropout is applied only in `train_mode`, example `k` drawing its mask
/// from substream `k` of `dropout_seed`.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[Vec<T>],
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(Vec<Vec<T>>, ForwardCache<T>), ModelError> {
    check_inputs(&params.spec, inputs)?;
    let shapes = params.spec.shapes()?;
    let examples: Vec<ExampleCache<T>> = inputs
        .par_iter()
        .enumerate()
        .map(|(k, x)| forward_example(params, &shapes, x, train_mode, dropout_seed, k as u64))
        .collect();
    let probs = examples.iter().map(|e| e.probs.clone()).collect();
    Ok((probs, ForwardCache { examples }))
}

/// Loss and exact gradients from a forward cache.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    labels: &[usize],
    need_input: bool,
) -> Result<BackwardResult<T>, ModelError> {
    let n = cache.examples.len();
    check_labels(&params.spec, n, labels)?;
    let shapes = params.spec.shapes()?;
    if n == 0 {
        return Ok(BackwardResult {
            loss: 0.0,
            grads: params.zero_grads(),
            input_grads: Vec::new(),
        });
    }
    let idx: Vec<usize> = (0..n).collect();
    let partial: Vec<(f64, Gradients<T>, Vec<Vec<T>>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = params.zero_grads();
            let mut loss = 0.0;
            let mut ig = Vec::new();
            for &k in chunk {
                let e = &cache.examples[k];
                loss += cross_entropy(e.acts.last().unwrap(), labels[k]);
                let gi = backward_example(params, &shapes, e, labels[k], &mut grads, need_input);
                if need_input {
                    ig.push(gi);
                }
            }
            (loss, grads, ig)
        })
        .collect();
    Ok(reduce(params, partial, n))
}

fn reduce<T: Scalar>(
    params: &ModelParams<T>,
    partial: Vec<(f64, Gradients<T>, Vec<Vec<T>>)>,
    n: usize,
) -> BackwardResult<T> {
    let mut grads = params.zero_grads();
    let mut loss = 0.0;
    let mut input_grads = Vec::new();
    for (l, g, ig) in partial {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.add(b);
        }
        input_grads.extend(ig);
    }
    let inv = T::one() / T::from_usize(n).unwrap();
    for g in grads.iter_mut() {
        g.scale(inv);
    }
    BackwardResult {
        loss: loss / n as f64,
        grads,
        input_grads,
    }
}

/// Fused forward + backward without retaining activations beyond one example;
/// same results as [`forward`] followed by [`backward`].
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[&[T]],
    labels: &[usize],
    train_mode: bool,
    dropout_seed: u64,
    need_input: bool,
) -> Result<BackwardResult<T>, ModelError> {
    let n = inputs.len();
    check_labels(&params.spec, n, labels)?;
    let expected = params.spec.input_len();
    if let Some(x) = inputs.iter().find(|x| x.len() != expected) {
        return Err(ModelError::ShapeMismatch {
            expected,
            actual: x.len(),
        });
    }
    let shapes = params.spec.shapes()?;
    if n == 0 {
        return Ok(BackwardResult {
            loss: 0.0,
            grads: params.zero_grads(),
            input_grads: Vec::new(),
        });
    }
    let idx: Vec<usize> = (0..n).collect();
    let partial: Vec<(f64, Gradients<T>, Vec<Vec<T>>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = params.zero_grads();
            let mut loss = 0.0;
            let mut ig = Vec::new();
            for &k in chunk {
                let e = forward_example(params, &shapes, inputs[k], train_mode, dropout_seed, k as u64);
                loss += cross_entropy(e.acts.last().unwrap(), labels[k]);
                let gi = backward_example(params, &shapes, &e, labels[k], &mut grads, need_input);
                if need_input {
                    ig.push(gi);
                }
            }
            (loss, grads, ig)
        })
        .collect();
    Ok(reduce(params, partial, n))
}

/// Inference-mode probabilities without keeping activations.
pub fn predict<T: Scalar>(params: &ModelParams<T>, inputs: &[&[T]]) -> Result<Vec<Vec<T>>, ModelError> {
    let expected = params.spec.input_len();
    if let Some(x) = inputs.iter().find(|x| x.len() != expected) {
        return Err(ModelError::ShapeMismatch {
            expected,
            actual: x.len(),
        });
    }
    let shapes = params.spec.shapes()?;
    Ok(inputs
        .par_iter()
        .map(|x| forward_example(params, &shapes, x, false, 0, 0).probs)
        .collect())
}

/// Mean loss over a batch in inference mode.
pub fn loss<T: Scalar>(params: &ModelParams<T>, inputs: &[&[T]], labels: &[usize]) -> Result<f64, ModelError> {
    check_labels(&params.spec, inputs.len(), labels)?;
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let shapes = params.spec.shapes()?;
    let per: Vec<f64> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &t)| {
            let e = forward_example(params, &shapes, x, false, 0, 0);
            cross_entropy(e.acts.last().unwrap(), t)
        })
        .collect();
    Ok(per.iter().sum::<f64>() / inputs.len() as f64)
}

/// HWC `u8` image to a CHW input in `[0, 1]`.
pub fn image_to_input<T: Scalar>(hwc: &[u8], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[ch * h * w + y * w + x] = T::from_f64_lossy(hwc[(y * w + x) * c + ch] as f64 / 255.0);
            }
        }
    }
    out
}

/// CHW tensor back to HWC order.
pub fn chw_to_hwc<T: Scalar>(chw: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w * c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + ch] = chw[ch * h * w + y * w + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec::parse("cm2 fcr4 fcs5", [4, 4, 1], 0.5).unwrap()
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let spec = ModelSpec::parse("fcr6 fcs5", [1, 1, 4], 0.0).unwrap();
        let p = ModelParams::<f64>::init_xavier(&spec, 3).unwrap();
        let bound = (6.0f64 / 10.0).sqrt();
        assert!((bound - 0.7746).abs() < 1e-4);
        assert_eq!(p.layers[0].weights.len(), 24);
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        assert_eq!(p, ModelParams::init_xavier(&spec, 3).unwrap());
        assert_ne!(p, ModelParams::init_xavier(&spec, 4).unwrap());
    }

    #[test]
    fn zero_final_layer_gives_uniform_probs_and_ln5_loss() {
        let spec = tiny();
        let mut p = ModelParams::<f64>::init_xavier(&spec, 1).unwrap();
        let last = p.layers.len() - 1;
        p.layers[last].weights.iter_mut().for_each(|w| *w = 0.0);
        let x = vec![vec![0.3; 16], vec![0.9; 16]];
        let (probs, cache) = forward(&p, &x, false, 0).unwrap();
        for row in &probs {
            for v in row {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
        let b = backward(&p, &cache, &[0, 3], false).unwrap();
        assert!((b.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_fc_logits() {
        let spec = ModelSpec::parse("fcs5", [1, 1, 5], 0.0).unwrap();
        let mut p = ModelParams::<f64>::init_xavier(&spec, 0).unwrap();
        p.layers[0].weights = (0..25).map(|k| if k % 6 == 0 { 1.0 } else { 0.0 }).collect();
        p.layers[0].bias = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        let (_, cache) = forward(&p, &[vec![1.0, 2.0, 3.0, 4.0, 5.0]], false, 0).unwrap();
        assert_eq!(cache.examples[0].acts[1], vec![1.0, 2.0, 4.0, 4.0, 5.0]);
    }

    #[test]
    fn inference_is_repeatable_and_dropout_only_in_training() {
        let spec = tiny();
        let p = ModelParams::<f32>::init_xavier(&spec, 9).unwrap();
        let x: Vec<Vec<f32>> = (0..3).map(|k| (0..16).map(|i| ((i * 7 + k) % 5) as f32 / 4.0).collect()).collect();
        let (a, _) = forward(&p, &x, false, 1).unwrap();
        let (b, _) = forward(&p, &x, false, 2).unwrap();
        assert_eq!(a, b);
        let (t, cache) = forward(&p, &x, true, 1).unwrap();
        let masks = &cache.examples[0].dropout_masks[3];
        assert!(masks.iter().all(|m| *m == 0.0 || *m == 2.0));
        let (t2, _) = forward(&p, &x, true, 1).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn fused_path_matches_cached_path() {
        let spec = tiny();
        let p = ModelParams::<f64>::init_xavier(&spec, 5).unwrap();
        let x: Vec<Vec<f64>> = (0..11).map(|k| (0..16).map(|i| ((i * 3 + k) % 7) as f64 / 6.0).collect()).collect();
        let labels: Vec<usize> = (0..11).map(|k| k % 5).collect();
        let (_, cache) = forward(&p, &x, true, 4).unwrap();
        let a = backward(&p, &cache, &labels, true).unwrap();
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let b = loss_and_gradients(&p, &refs, &labels, true, 4, true).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.input_grads, b.input_grads);
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::<f32>::init_xavier(&tiny(), 0).unwrap();
        assert!(matches!(
            forward(&p, &[vec![0.0; 15]], false, 0),
            Err(ModelError::ShapeMismatch { expected: 16, actual: 15 })
        ));
        let (_, cache) = forward(&p, &[vec![0.0; 16]], false, 0).unwrap();
        assert!(backward(&p, &cache, &[0, 1], false).is_err());
        assert!(backward(&p, &cache, &[5], false).is_err());
    }

    #[test]
    fn layout_conversions() {
        let hwc: Vec<u8> = (0..12).map(|v| v as u8 * 20).collect();
        let chw: Vec<f64> = image_to_input(&hwc, 2, 2, 3);
        assert_eq!(chw[0], 0.0);
        assert!((chw[4] - 20.0 / 255.0).abs() < 1e-15);
        let back = chw_to_hwc(&chw, 2, 2, 3);
        let expect: Vec<f64> = hwc.iter().map(|&v| v as f64 / 255.0).collect();
        assert_eq!(back, expect);
    }
}
