//! Minimal dense feed-forward networks (small CNN / MLP family) over a flat
//! parameter vector: deterministic init, forward pass, softmax cross-entropy
//! loss with exact analytic backpropagation, SGD updates, and local training.
//!
//! Everything here is a pure function of its inputs; no global state.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layout::{LayerInfo, LayerKind, LayerLayout};
use crate::params::ParamVectorG;
use crate::rng::{derive_stream, StreamPurpose};
use crate::scalar::Scalar;
use crate::tensor::TensorG;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    None,
    Max2x2,
}

/// Architecture description. Convolutions are valid (no padding), stride 1,
/// each followed by ReLU and the configured pooling; hidden fully connected
/// layers use ReLU; the final layer is the linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_shape: (usize, usize, usize),
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool: Pool,
    pub fc_widths: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// The standard 4-layer CNN: conv1 (8 ch) -> conv2 (16 ch), 5x5 kernels,
    /// 2x2 max pooling, one hidden fc of 64 units, linear classifier.
    pub fn default_cnn(num_classes: usize) -> Self {
        Self {
            input_shape: (1, 28, 28),
            conv_channels: vec![8, 16],
            kernel_size: 5,
            pool: Pool::Max2x2,
            fc_widths: vec![64],
            num_classes,
        }
    }

    /// Multinomial logistic regression: a single linear classifier over the
    /// flattened input. Convex in the parameters.
    pub fn linear(input_shape: (usize, usize, usize), num_classes: usize) -> Self {
        Self {
            input_shape,
            conv_channels: vec![],
            kernel_size: 1,
            pool: Pool::None,
            fc_widths: vec![],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        plan(self).map(|_| ())
    }

    pub fn layout(&self) -> Result<Arc<LayerLayout>> {
        Ok(plan(self)?.layout)
    }

    pub fn total_params(&self) -> Result<usize> {
        Ok(plan(self)?.layout.total_params())
    }
}

struct ConvPlan {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    conv_h: usize,
    conv_w: usize,
    pooled: bool,
    out_h: usize,
    out_w: usize,
    w_off: usize,
    b_off: usize,
}

struct FcPlan {
    in_dim: usize,
    out_dim: usize,
    relu: bool,
    w_off: usize,
    b_off: usize,
}

struct NetPlan {
    convs: Vec<ConvPlan>,
    fcs: Vec<FcPlan>,
    layout: Arc<LayerLayout>,
}

fn plan(spec: &ModelSpec) -> Result<NetPlan> {
    let (c0, h0, w0) = spec.input_shape;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(Error::InvalidSpec("input shape has a zero dimension".into()));
    }
    if spec.num_classes < 2 {
        return Err(Error::InvalidSpec("num_classes must be at least 2".into()));
    }
    if !spec.conv_channels.is_empty() && spec.kernel_size == 0 {
        return Err(Error::InvalidSpec("kernel size must be positive".into()));
    }

    let mut layers = Vec::new();
    let mut convs = Vec::new();
    let mut fcs = Vec::new();
    let mut offset = 0usize;

    let (mut c, mut h, mut w) = (c0, h0, w0);
    for (idx, &out_c) in spec.conv_channels.iter().enumerate() {
        if out_c == 0 {
            return Err(Error::InvalidSpec(format!("conv{} has zero channels", idx + 1)));
        }
        let k = spec.kernel_size;
        if h < k || w < k {
            return Err(Error::InvalidSpec(format!(
                "conv{} input {h}x{w} smaller than {k}x{k} kernel",
                idx + 1
            )));
        }
        let conv_h = h - k + 1;
        let conv_w = w - k + 1;
        let pooled = spec.pool == Pool::Max2x2;
        let (out_h, out_w) = if pooled {
            if conv_h < 2 || conv_w < 2 {
                return Err(Error::InvalidSpec(format!(
                    "conv{} output {conv_h}x{conv_w} too small for 2x2 pooling",
                    idx + 1
                )));
            }
            (conv_h / 2, conv_w / 2)
        } else {
            (conv_h, conv_w)
        };
        let w_len = out_c * c * k * k;
        convs.push(ConvPlan {
            in_c: c,
            in_h: h,
            in_w: w,
            out_c,
            k,
            conv_h,
            conv_w,
            pooled,
            out_h,
            out_w,
            w_off: offset,
            b_off: offset + w_len,
        });
        layers.push(LayerInfo {
            name: format!("conv{}", idx + 1),
            start: offset,
            end: offset + w_len + out_c,
            kind: LayerKind::Conv,
            is_classifier: false,
        });
        offset += w_len + out_c;
        c = out_c;
        h = out_h;
        w = out_w;
    }

    let mut in_dim = c * h * w;
    for (idx, &width) in spec.fc_widths.iter().enumerate() {
        if width == 0 {
            return Err(Error::InvalidSpec(format!("fc{} has zero width", idx + 1)));
        }
        let w_len = width * in_dim;
        fcs.push(FcPlan { in_dim, out_dim: width, relu: true, w_off: offset, b_off: offset + w_len });
        layers.push(LayerInfo {
            name: format!("fc{}", idx + 1),
            start: offset,
            end: offset + w_len + width,
            kind: LayerKind::Fc,
            is_classifier: false,
        });
        offset += w_len + width;
        in_dim = width;
    }

    let w_len = spec.num_classes * in_dim;
    fcs.push(FcPlan {
        in_dim,
        out_dim: spec.num_classes,
        relu: false,
        w_off: offset,
        b_off: offset + w_len,
    });
    layers.push(LayerInfo {
        name: "classifier".into(),
        start: offset,
        end: offset + w_len + spec.num_classes,
        kind: LayerKind::Fc,
        is_classifier: true,
    });

    Ok(NetPlan { convs, fcs, layout: Arc::new(LayerLayout::new(layers)?) })
}

/// Deterministic initialization: weights uniform in (-1/sqrt(fan_in),
/// 1/sqrt(fan_in)), biases exactly zero.
pub fn init_params<S: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParamVectorG<S>> {
    let net = plan(spec)?;
    let mut rng = derive_stream(seed, StreamPurpose::Init, 0, 0);
    let mut values = vec![S::zero(); net.layout.total_params()];

    for conv in &net.convs {
        let fan_in = conv.in_c * conv.k * conv.k;
        fill_uniform(&mut rng, &mut values[conv.w_off..conv.b_off], fan_in);
    }
    for fc in &net.fcs {
        fill_uniform(&mut rng, &mut values[fc.w_off..fc.b_off], fc.in_dim);
    }
    ParamVectorG::new(values, net.layout)
}

fn fill_uniform<S: Scalar>(rng: &mut ChaCha8Rng, out: &mut [S], fan_in: usize) {
    let limit = 1.0 / (fan_in as f64).sqrt();
    for v in out {
        *v = S::from_f64c(rng.gen_range(-limit..limit));
    }
}

fn check_batch<S: Scalar>(spec: &ModelSpec, batch: &TensorG<S>) -> Result<usize> {
    let (c, h, w) = spec.input_shape;
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
        return Err(Error::ShapeMismatch { expected: vec![0, c, h, w], got: shape.to_vec() });
    }
    if shape[0] == 0 {
        return Err(Error::Empty("batch"));
    }
    Ok(shape[0])
}

struct ForwardPass<S> {
    /// acts[0] is the input batch; acts[i + 1] is the output of stage i
    /// (post-ReLU, post-pool for convs; post-ReLU for hidden fcs; raw logits
    /// for the classifier).
    acts: Vec<Vec<S>>,
    /// For each pooled conv stage, the flat index into the conv output that
    /// won each pooling window (first maximum in scan order).
    pool_argmax: Vec<Vec<usize>>,
}

fn run_forward<S: Scalar>(
    net: &NetPlan,
    params: &[S],
    batch: &TensorG<S>,
    batch_size: usize,
) -> ForwardPass<S> {
    let mut acts: Vec<Vec<S>> = Vec::with_capacity(net.convs.len() + net.fcs.len() + 1);
    acts.push(batch.data().to_vec());
    let mut pool_argmax = Vec::new();

    for conv in &net.convs {
        let input = acts.last().unwrap();
        let mut out = vec![S::zero(); batch_size * conv.out_c * conv.conv_h * conv.conv_w];
        let weights = &params[conv.w_off..conv.b_off];
        let biases = &params[conv.b_off..conv.b_off + conv.out_c];
        for b in 0..batch_size {
            let in_base = b * conv.in_c * conv.in_h * conv.in_w;
            let out_base = b * conv.out_c * conv.conv_h * conv.conv_w;
            for oc in 0..conv.out_c {
                let w_base = oc * conv.in_c * conv.k * conv.k;
                for i in 0..conv.conv_h {
                    for j in 0..conv.conv_w {
                        let mut acc = biases[oc];
                        for ic in 0..conv.in_c {
                            let in_ch = in_base + ic * conv.in_h * conv.in_w;
                            let w_ch = w_base + ic * conv.k * conv.k;
                            for u in 0..conv.k {
                                let in_row = in_ch + (i + u) * conv.in_w + j;
                                let w_row = w_ch + u * conv.k;
                                for v in 0..conv.k {
                                    acc += weights[w_row + v] * input[in_row + v];
                                }
                            }
                        }
                        // ReLU
                        out[out_base + oc * conv.conv_h * conv.conv_w + i * conv.conv_w + j] =
                            if acc > S::zero() { acc } else { S::zero() };
                    }
                }
            }
        }

        if conv.pooled {
            let mut pooled = vec![S::zero(); batch_size * conv.out_c * conv.out_h * conv.out_w];
            let mut argmax = vec![0usize; pooled.len()];
            for b in 0..batch_size {
                for oc in 0..conv.out_c {
                    let src = (b * conv.out_c + oc) * conv.conv_h * conv.conv_w;
                    let dst = (b * conv.out_c + oc) * conv.out_h * conv.out_w;
                    for i in 0..conv.out_h {
                        for j in 0..conv.out_w {
                            let mut best_idx = src + (2 * i) * conv.conv_w + 2 * j;
                            let mut best = out[best_idx];
                            for (du, dv) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = src + (2 * i + du) * conv.conv_w + 2 * j + dv;
                                if out[idx] > best {
                                    best = out[idx];
                                    best_idx = idx;
                                }
                            }
                            pooled[dst + i * conv.out_w + j] = best;
                            argmax[dst + i * conv.out_w + j] = best_idx;
                        }
                    }
                }
            }
            pool_argmax.push(argmax);
            acts.push(pooled);
        } else {
            pool_argmax.push(Vec::new());
            acts.push(out);
        }
    }

    for fc in &net.fcs {
        let input = acts.last().unwrap();
        let mut out = vec![S::zero(); batch_size * fc.out_dim];
        let weights = &params[fc.w_off..fc.b_off];
        let biases = &params[fc.b_off..fc.b_off + fc.out_dim];
        for b in 0..batch_size {
            let in_base = b * fc.in_dim;
            let out_base = b * fc.out_dim;
            for o in 0..fc.out_dim {
                let mut acc = biases[o];
                let w_row = o * fc.in_dim;
                for i in 0..fc.in_dim {
                    acc += weights[w_row + i] * input[in_base + i];
                }
                out[out_base + o] = if fc.relu && acc < S::zero() { S::zero() } else { acc };
            }
        }
        acts.push(out);
    }

    ForwardPass { acts, pool_argmax }
}

/// Forward pass: logits of shape `batch_size x num_classes`.
pub fn forward<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    batch: &TensorG<S>,
) -> Result<TensorG<S>> {
    let net = plan(spec)?;
    if *params.layout() != net.layout {
        return Err(Error::LayoutMismatch("params built for a different spec".into()));
    }
    let batch_size = check_batch(spec, batch)?;
    let pass = run_forward(&net, params.values(), batch, batch_size);
    let logits = pass.acts.into_iter().last().unwrap();
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward pass"));
    }
    TensorG::new(vec![batch_size, spec.num_classes], logits)
}

/// Row-wise softmax of a `batch x classes` logit tensor.
pub fn softmax<S: Scalar>(logits: &TensorG<S>) -> TensorG<S> {
    let rows = logits.shape()[0];
    let cols = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    TensorG::new(vec![rows, cols], out).expect("softmax preserves shape")
}

/// Mean softmax cross-entropy over the batch plus its exact gradient with
/// respect to every parameter.
pub fn loss_and_grad<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    batch: &TensorG<S>,
    labels: &[usize],
) -> Result<(S, ParamVectorG<S>)> {
    let net = plan(spec)?;
    if *params.layout() != net.layout {
        return Err(Error::LayoutMismatch("params built for a different spec".into()));
    }
    let batch_size = check_batch(spec, batch)?;
    if labels.len() != batch_size {
        return Err(Error::ShapeMismatch { expected: vec![batch_size], got: vec![labels.len()] });
    }
    for &y in labels {
        if y >= spec.num_classes {
            return Err(Error::LabelOutOfRange { label: y, num_classes: spec.num_classes });
        }
    }

    let values = params.values();
    let pass = run_forward(&net, values, batch, batch_size);
    let logits = pass.acts.last().unwrap();
    let classes = spec.num_classes;

    // Loss via log-sum-exp; gradient of the mean loss w.r.t. logits is
    // (softmax - onehot) / batch_size.
    let inv_b = S::one() / S::from_f64c(batch_size as f64);
    let mut loss = S::zero();
    let mut d_out = vec![S::zero(); batch_size * classes];
    for b in 0..batch_size {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - row[labels[b]];
        for c in 0..classes {
            let p = (row[c] - lse).exp();
            d_out[b * classes + c] = p * inv_b;
        }
        d_out[b * classes + labels[b]] -= inv_b;
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }

    let mut grad = vec![S::zero(); values.len()];

    // Fully connected layers, last to first.
    for (idx, fc) in net.fcs.iter().enumerate().rev() {
        let input = &pass.acts[net.convs.len() + idx];
        let weights = &values[fc.w_off..fc.b_off];
        let mut d_in = vec![S::zero(); batch_size * fc.in_dim];
        {
            let (gw, rest) = grad[fc.w_off..].split_at_mut(fc.b_off - fc.w_off);
            let gb = &mut rest[..fc.out_dim];
            for b in 0..batch_size {
                let in_base = b * fc.in_dim;
                let out_base = b * fc.out_dim;
                for o in 0..fc.out_dim {
                    let g = d_out[out_base + o];
                    if g == S::zero() {
                        continue;
                    }
                    gb[o] += g;
                    let w_row = o * fc.in_dim;
                    for i in 0..fc.in_dim {
                        gw[w_row + i] += g * input[in_base + i];
                        d_in[in_base + i] += g * weights[w_row + i];
                    }
                }
            }
        }
        // ReLU mask of the upstream stage (post-activation values are cached).
        if idx > 0 && net.fcs[idx - 1].relu {
            for (d, &a) in d_in.iter_mut().zip(input.iter()) {
                if a <= S::zero() {
                    *d = S::zero();
                }
            }
        } else if idx == 0 && !net.convs.is_empty() {
            // Upstream is the last conv stage; ReLU already folded into the
            // cached activation, mask applied during unpooling below.
        }
        d_out = d_in;
    }

    // Convolutional layers, last to first.
    for (idx, conv) in net.convs.iter().enumerate().rev() {
        let input = &pass.acts[idx];
        let act = &pass.acts[idx + 1];
        let weights = &values[conv.w_off..conv.b_off];

        // Gradient w.r.t. the pre-pool (post-ReLU) conv output.
        let mut d_conv = vec![S::zero(); batch_size * conv.out_c * conv.conv_h * conv.conv_w];
        if conv.pooled {
            let argmax = &pass.pool_argmax[idx];
            for (cell, &src) in argmax.iter().enumerate() {
                if act[cell] > S::zero() {
                    d_conv[src] += d_out[cell];
                }
            }
        } else {
            for (i, (&g, &a)) in d_out.iter().zip(act.iter()).enumerate() {
                if a > S::zero() {
                    d_conv[i] = g;
                }
            }
        }

        let mut d_in = vec![S::zero(); batch_size * conv.in_c * conv.in_h * conv.in_w];
        {
            let (gw, rest) = grad[conv.w_off..].split_at_mut(conv.b_off - conv.w_off);
            let gb = &mut rest[..conv.out_c];
            for b in 0..batch_size {
                let in_base = b * conv.in_c * conv.in_h * conv.in_w;
                let out_base = b * conv.out_c * conv.conv_h * conv.conv_w;
                for oc in 0..conv.out_c {
                    let w_base = oc * conv.in_c * conv.k * conv.k;
                    for i in 0..conv.conv_h {
                        for j in 0..conv.conv_w {
                            let g =
                                d_conv[out_base + oc * conv.conv_h * conv.conv_w + i * conv.conv_w + j];
                            if g == S::zero() {
                                continue;
                            }
                            gb[oc] += g;
                            for ic in 0..conv.in_c {
                                let in_ch = in_base + ic * conv.in_h * conv.in_w;
                                let w_ch = w_base + ic * conv.k * conv.k;
                                for u in 0..conv.k {
                                    let in_row = in_ch + (i + u) * conv.in_w + j;
                                    let w_row = w_ch + u * conv.k;
                                    for v in 0..conv.k {
                                        gw[w_row + v] += g * input[in_row + v];
                                        d_in[in_row + v] += g * weights[w_row + v];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        d_out = d_in;
    }

    let grad = ParamVectorG::new(grad, net.layout)?;
    Ok((loss, grad))
}

/// One SGD step: `out[k] = params[k] - eta * grad[k]`.
pub fn sgd_step<S: Scalar>(
    params: &ParamVectorG<S>,
    grad: &ParamVectorG<S>,
    eta: f64,
) -> Result<ParamVectorG<S>> {
    params.check_same_layout(grad)?;
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let eta = S::from_f64c(eta);
    let values = params
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&p, &g)| p - eta * g)
        .collect();
    ParamVectorG::new(values, params.layout().clone())
}

/// Outcome of a local training call: updated parameters plus the
/// sample-weighted mean training loss across all processed batches.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub params: ParamVectorG<S>,
    pub mean_loss: f64,
}

/// Mini-batch SGD for `epochs` passes over `train_indices`. The visit order
/// is drawn only from `rng`; the final partial batch is kept. `epochs == 0`
/// returns the input unchanged with a zero loss.
#[allow(clippy::too_many_arguments)]
pub fn local_train<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    images: &TensorG<S>,
    labels: &[usize],
    train_indices: &[usize],
    eta: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome<S>> {
    if train_indices.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut current = params.clone();
    let mut order: Vec<usize> = train_indices.to_vec();
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = images.gather_rows(chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = loss_and_grad(&current, spec, &batch, &batch_labels)?;
            current = sgd_step(&current, &grad, eta)?;
            loss_sum += loss.to_f64c() * chunk.len() as f64;
            sample_count += chunk.len();
        }
    }
    let mean_loss = if sample_count == 0 { 0.0 } else { loss_sum / sample_count as f64 };
    Ok(TrainOutcome { params: current, mean_loss })
}

/// Chunk size for full-dataset passes; fixed so the accumulation order (and
/// therefore the result) never depends on caller batching choices.
const FULL_PASS_CHUNK: usize = 256;

/// Mean loss and gradient over an index set, computed in one deterministic
/// pass (fixed chunking, ascending order).
pub fn dataset_gradient<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    images: &TensorG<S>,
    labels: &[usize],
    indices: &[usize],
) -> Result<(S, ParamVectorG<S>)> {
    if indices.is_empty() {
        return Err(Error::Empty("index set"));
    }
    let total = S::from_f64c(indices.len() as f64);
    let mut loss_sum = S::zero();
    let mut grad_sum = vec![S::zero(); params.len()];
    for chunk in indices.chunks(FULL_PASS_CHUNK) {
        let batch = images.gather_rows(chunk)?;
        let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (loss, grad) = loss_and_grad(params, spec, &batch, &chunk_labels)?;
        let weight = S::from_f64c(chunk.len() as f64);
        loss_sum += loss * weight;
        for (acc, &g) in grad_sum.iter_mut().zip(grad.values()) {
            *acc += g * weight;
        }
    }
    for g in grad_sum.iter_mut() {
        *g /= total;
    }
    let grad = ParamVectorG::new(grad_sum, params.layout().clone())?;
    Ok((loss_sum / total, grad))
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax_row<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
