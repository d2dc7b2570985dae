//! Forward primitives. Each validates shapes, computes its output, records
//! the op (when gradient flow needs it), and rejects non-finite results.

use super::{Op, Result, Tape, TensorError, TensorId};

/// Output extent of a convolution/pool window sweep, or an error when the
/// window does not fit.
pub fn conv_output_extent(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(TensorError::BadArgument {
            op,
            reason: format!("kernel {kernel} and stride {stride} must be positive"),
        });
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(TensorError::BadArgument {
            op,
            reason: format!("kernel {kernel} larger than padded extent {padded}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output positions `o` with a valid source index `o * stride + k - padding`
/// inside `[0, extent_in)`, as a half-open range clamped to `extent_out`.
pub(crate) fn conv_valid_range(
    extent_in: usize,
    extent_out: usize,
    stride: usize,
    padding: usize,
    k: usize,
) -> (usize, usize) {
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    if extent_in + padding <= k {
        return (0, 0);
    }
    let hi = ((extent_in + padding - 1 - k) / stride + 1).min(extent_out);
    (lo.min(hi), hi)
}

/// One kernel position's contribution between an (h, w) plane and an
/// (oh, ow) plane. `scatter = false` accumulates input into output
/// (forward); `scatter = true` accumulates output into input (input
/// gradient). The stride-1 path runs on contiguous slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_span(
    dst: &mut [f64],
    src: &[f64],
    kv: f64,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    padding: usize,
    (ky, kx): (usize, usize),
    scatter: bool,
) {
    let (oy_lo, oy_hi) = conv_valid_range(h, oh, stride, padding, ky);
    let (ox_lo, ox_hi) = conv_valid_range(w, ow, stride, padding, kx);
    if oy_lo >= oy_hi || ox_lo >= ox_hi {
        return;
    }
    let n = ox_hi - ox_lo;
    for oy in oy_lo..oy_hi {
        let iy = oy * stride + ky - padding;
        let obase = oy * ow + ox_lo;
        let ibase = iy * w + ox_lo * stride + kx - padding;
        if stride == 1 {
            if scatter {
                for (d, s) in dst[ibase..ibase + n].iter_mut().zip(&src[obase..obase + n]) {
                    *d += kv * s;
                }
            } else {
                for (d, s) in dst[obase..obase + n].iter_mut().zip(&src[ibase..ibase + n]) {
                    *d += kv * s;
                }
            }
        } else {
            for i in 0..n {
                let (oi, ii) = (obase + i, ibase + i * stride);
                if scatter {
                    dst[ii] += kv * src[oi];
                } else {
                    dst[oi] += kv * src[ii];
                }
            }
        }
    }
}

/// Dot product of the valid overlap for one kernel position: the kernel
/// gradient `sum_o grad[o] * input[o * stride + k - padding]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_span_dot(
    grad_out: &[f64],
    input: &[f64],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    padding: usize,
    (ky, kx): (usize, usize),
) -> f64 {
    let (oy_lo, oy_hi) = conv_valid_range(h, oh, stride, padding, ky);
    let (ox_lo, ox_hi) = conv_valid_range(w, ow, stride, padding, kx);
    let mut acc = 0.0;
    if oy_lo >= oy_hi || ox_lo >= ox_hi {
        return acc;
    }
    let n = ox_hi - ox_lo;
    for oy in oy_lo..oy_hi {
        let iy = oy * stride + ky - padding;
        let obase = oy * ow + ox_lo;
        let ibase = iy * w + ox_lo * stride + kx - padding;
        if stride == 1 {
            acc += grad_out[obase..obase + n]
                .iter()
                .zip(&input[ibase..ibase + n])
                .map(|(g, x)| g * x)
                .sum::<f64>();
        } else {
            for i in 0..n {
                acc += grad_out[obase + i] * input[ibase + i * stride];
            }
        }
    }
    acc
}

fn require_rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    if shape.len() != 4 {
        return Err(TensorError::BadShape {
            op,
            shape: shape.to_vec(),
            reason: "expected a 4-D (batch, channel, height, width) tensor".into(),
        });
    }
    Ok([shape[0], shape[1], shape[2], shape[3]])
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Elementwise sum; shapes must match exactly (no broadcasting).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.node_needs_grad(a) || self.node_needs_grad(b);
        let out = self.push_result("add", data, shape, needs)?;
        if needs {
            self.record(Op::Add { a, b, out });
        }
        Ok(out)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.node_needs_grad(a) || self.node_needs_grad(b);
        let out = self.push_result("mul", data, shape, needs)?;
        if needs {
            self.record(Op::Mul { a, b, out });
        }
        Ok(out)
    }

    /// Multiply by a compile-time scalar constant.
    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        if !factor.is_finite() {
            return Err(TensorError::BadArgument {
                op: "scale",
                reason: format!("non-finite factor {factor}"),
            });
        }
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.node_needs_grad(a);
        let out = self.push_result("scale", data, shape, needs)?;
        if needs {
            self.record(Op::Scale { a, factor, out });
        }
        Ok(out)
    }

    /// 2-D matrix product: (m, k) x (k, n) -> (m, n).
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &da[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (p, &av) in row.iter().enumerate() {
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let needs = self.node_needs_grad(a) || self.node_needs_grad(b);
        let out = self.push_result("matmul", data, vec![m, n], needs)?;
        if needs {
            self.record(Op::Matmul { a, b, out });
        }
        Ok(out)
    }

    /// 2-D convolution of a (b, ci, h, w) input with a (co, ci, kh, kw) kernel.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let [bs, ci, h, w] = require_rank4("conv2d", self.value(input).shape())?;
        let [co, kci, kh, kw] = require_rank4("conv2d", self.value(kernel).shape())?;
        if kci != ci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.value(input).shape().to_vec(),
                rhs: self.value(kernel).shape().to_vec(),
            });
        }
        let oh = conv_output_extent("conv2d", h, kh, stride, padding)?;
        let ow = conv_output_extent("conv2d", w, kw, stride, padding)?;

        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut data = vec![0.0; bs * co * oh * ow];
        // Kernel-position-major loops: for a fixed (ky, kx) the valid output
        // columns form one contiguous run, so the inner loop is a strided
        // slice walk without bounds checks.
        for b in 0..bs {
            for c_out in 0..co {
                for c_in in 0..ci {
                    let xplane = &x[(b * ci + c_in) * h * w..(b * ci + c_in + 1) * h * w];
                    let kplane =
                        &k[(c_out * ci + c_in) * kh * kw..(c_out * ci + c_in + 1) * kh * kw];
                    let oplane =
                        &mut data[(b * co + c_out) * oh * ow..(b * co + c_out + 1) * oh * ow];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = kplane[ky * kw + kx];
                            if kv == 0.0 {
                                continue;
                            }
                            conv_span(
                                oplane,
                                xplane,
                                kv,
                                (h, w),
                                (oh, ow),
                                stride,
                                padding,
                                (ky, kx),
                                false,
                            );
                        }
                    }
                }
            }
        }
        let needs = self.node_needs_grad(input) || self.node_needs_grad(kernel);
        let out = self.push_result("conv2d", data, vec![bs, co, oh, ow], needs)?;
        if needs {
            self.record(Op::Conv2d {
                input,
                kernel,
                out,
                stride,
                padding,
            });
        }
        Ok(out)
    }

    pub fn relu(&mut self, input: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self
            .value(input)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.value(input).shape().to_vec();
        let needs = self.node_needs_grad(input);
        let out = self.push_result("relu", data, shape, needs)?;
        if needs {
            self.record(Op::Relu { input, out });
        }
        Ok(out)
    }

    /// Max pooling over non-padded windows. Ties break to the first cell in
    /// row-major scan order so backward routing is deterministic.
    pub fn max_pool2d(&mut self, input: TensorId, kernel: usize, stride: usize) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("max_pool2d", self.value(input).shape())?;
        let oh = conv_output_extent("max_pool2d", h, kernel, stride, 0)?;
        let ow = conv_output_extent("max_pool2d", w, kernel, stride, 0)?;
        let x = self.value(input).data();
        let mut data = vec![0.0; bs * c * oh * ow];
        let mut argmax = vec![0usize; bs * c * oh * ow];
        for plane in 0..bs * c {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        for kx in 0..kernel {
                            let ix = ox * stride + kx;
                            let v = xplane[iy * w + ix];
                            if v > best {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    data[o] = best;
                    argmax[o] = plane * h * w + best_idx;
                }
            }
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("max_pool2d", data, vec![bs, c, oh, ow], needs)?;
        if needs {
            self.record(Op::MaxPool2d { input, out, argmax });
        }
        Ok(out)
    }

    pub fn avg_pool2d(&mut self, input: TensorId, kernel: usize, stride: usize) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("avg_pool2d", self.value(input).shape())?;
        let oh = conv_output_extent("avg_pool2d", h, kernel, stride, 0)?;
        let ow = conv_output_extent("avg_pool2d", w, kernel, stride, 0)?;
        let x = self.value(input).data();
        let inv = 1.0 / (kernel * kernel) as f64;
        let mut data = vec![0.0; bs * c * oh * ow];
        for plane in 0..bs * c {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        for kx in 0..kernel {
                            acc += xplane[iy * w + ox * stride + kx];
                        }
                    }
                    data[plane * oh * ow + oy * ow + ox] = acc * inv;
                }
            }
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("avg_pool2d", data, vec![bs, c, oh, ow], needs)?;
        if needs {
            self.record(Op::AvgPool2d {
                input,
                out,
                kernel,
                stride,
            });
        }
        Ok(out)
    }

    /// Collapse all trailing axes: (b, ...) -> (b, prod(...)).
    pub fn flatten(&mut self, input: TensorId) -> Result<TensorId> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::BadShape {
                op: "flatten",
                shape,
                reason: "expected rank >= 2".into(),
            });
        }
        let b = shape[0];
        let rest: usize = shape[1..].iter().product();
        let data = self.value(input).data().to_vec();
        let needs = self.node_needs_grad(input);
        let out = self.push_result("flatten", data, vec![b, rest], needs)?;
        if needs {
            self.record(Op::Flatten { input, out });
        }
        Ok(out)
    }

    /// Per-(sample, channel) spatial mean and variance of a 4-D activation,
    /// both shaped (batch, channels). Variance is the population variance.
    pub fn channel_mean_var(&mut self, input: TensorId) -> Result<(TensorId, TensorId)> {
        let mean = self.channel_mean(input)?;
        let var = self.channel_var(input)?;
        Ok((mean, var))
    }

    pub fn channel_mean(&mut self, input: TensorId) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("channel_mean", self.value(input).shape())?;
        if h * w == 0 {
            return Err(TensorError::BadShape {
                op: "channel_mean",
                shape: self.value(input).shape().to_vec(),
                reason: "spatial extent is zero".into(),
            });
        }
        let x = self.value(input).data();
        let n = (h * w) as f64;
        let mut data = vec![0.0; bs * c];
        for (plane, slot) in data.iter_mut().enumerate() {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            *slot = xplane.iter().sum::<f64>() / n;
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("channel_mean", data, vec![bs, c], needs)?;
        if needs {
            self.record(Op::ChannelMean { input, out });
        }
        Ok(out)
    }

    pub fn channel_var(&mut self, input: TensorId) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("channel_var", self.value(input).shape())?;
        if h * w == 0 {
            return Err(TensorError::BadShape {
                op: "channel_var",
                shape: self.value(input).shape().to_vec(),
                reason: "spatial extent is zero".into(),
            });
        }
        let x = self.value(input).data();
        let n = (h * w) as f64;
        let mut data = vec![0.0; bs * c];
        for (plane, slot) in data.iter_mut().enumerate() {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            let mean = xplane.iter().sum::<f64>() / n;
            *slot = xplane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("channel_var", data, vec![bs, c], needs)?;
        if needs {
            self.record(Op::ChannelVar { input, out });
        }
        Ok(out)
    }

    /// Per-channel affine map `x * scale[c] + shift[c]`.
    ///
    /// The only broadcasting primitive: `scale` and `shift` are length-c
    /// vectors applied across a (b, c, h, w) or (b, c) input.
    pub fn affine_per_channel(
        &mut self,
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
    ) -> Result<TensorId> {
        let shape = self.value(input).shape().to_vec();
        let c = match shape.len() {
            2 | 4 => shape[1],
            _ => {
                return Err(TensorError::BadShape {
                    op: "affine_per_channel",
                    shape,
                    reason: "expected a (b, c) or (b, c, h, w) tensor".into(),
                })
            }
        };
        for (name, id) in [("scale", scale), ("shift", shift)] {
            let s = self.value(id).shape();
            if s != [c] {
                return Err(TensorError::BadShape {
                    op: "affine_per_channel",
                    shape: s.to_vec(),
                    reason: format!("{name} must be a length-{c} vector"),
                });
            }
        }
        let spatial: usize = shape[2..].iter().product::<usize>().max(1);
        let bs = shape[0];
        let x = self.value(input).data();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut data = vec![0.0; x.len()];
        for b in 0..bs {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                let (a, d) = (sc[ch], sh[ch]);
                for i in 0..spatial {
                    data[base + i] = x[base + i] * a + d;
                }
            }
        }
        let needs = self.node_needs_grad(input)
            || self.node_needs_grad(scale)
            || self.node_needs_grad(shift);
        let out = self.push_result("affine_per_channel", data, shape, needs)?;
        if needs {
            self.record(Op::AffinePerChannel {
                input,
                scale,
                shift,
                out,
            });
        }
        Ok(out)
    }

    /// Instance normalization with injected per-channel parameters:
    /// each (sample, channel) plane is standardized by its own spatial
    /// statistics (denominator `sqrt(var + eps)`) and rescaled to
    /// `sigma[c] * x_hat + mu[c]`. The backward pass differentiates through
    /// the computed statistics.
    pub fn instance_norm(
        &mut self,
        input: TensorId,
        mu: &[f64],
        sigma: &[f64],
        eps: f64,
    ) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("instance_norm", self.value(input).shape())?;
        if mu.len() != c || sigma.len() != c {
            return Err(TensorError::BadShape {
                op: "instance_norm",
                shape: vec![mu.len(), sigma.len()],
                reason: format!("parameter vectors must have length {c}"),
            });
        }
        if !(eps > 0.0) {
            return Err(TensorError::BadArgument {
                op: "instance_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        if h * w == 0 {
            return Err(TensorError::BadShape {
                op: "instance_norm",
                shape: self.value(input).shape().to_vec(),
                reason: "spatial extent is zero".into(),
            });
        }
        let x = self.value(input).data();
        let n = (h * w) as f64;
        let mut data = vec![0.0; x.len()];
        let mut means = vec![0.0; bs * c];
        let mut inv_stds = vec![0.0; bs * c];
        for b in 0..bs {
            for ch in 0..c {
                let plane = b * c + ch;
                let xs = &x[plane * h * w..(plane + 1) * h * w];
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv_std = 1.0 / (var + eps).sqrt();
                means[plane] = mean;
                inv_stds[plane] = inv_std;
                let (s, m) = (sigma[ch], mu[ch]);
                let os = &mut data[plane * h * w..(plane + 1) * h * w];
                for (o, &v) in os.iter_mut().zip(xs) {
                    *o = s * ((v - mean) * inv_std) + m;
                }
            }
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("instance_norm", data, vec![bs, c, h, w], needs)?;
        if needs {
            self.record(Op::InstanceNorm {
                input,
                out,
                sigma: sigma.to_vec(),
                mean: means,
                inv_std: inv_stds,
            });
        }
        Ok(out)
    }

    /// Mean cross-entropy between (batch, classes) logits and integer labels.
    /// Uses the log-sum-exp form; returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 {
            return Err(TensorError::BadShape {
                op: "softmax_cross_entropy",
                shape,
                reason: "expected (batch, classes) logits".into(),
            });
        }
        let (bs, k) = (shape[0], shape[1]);
        if bs == 0 || k == 0 {
            return Err(TensorError::BadShape {
                op: "softmax_cross_entropy",
                shape,
                reason: "empty batch or class axis".into(),
            });
        }
        if labels.len() != bs {
            return Err(TensorError::BadArgument {
                op: "softmax_cross_entropy",
                reason: format!("{} labels for a batch of {bs}", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::BadArgument {
                op: "softmax_cross_entropy",
                reason: format!("label {bad} out of range for {k} classes"),
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; bs * k];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[i * k + j] = e;
                sum += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= sum;
            }
            loss += sum.ln() + max - row[label];
        }
        loss /= bs as f64;
        let needs = self.node_needs_grad(logits);
        let out = self.push_result("softmax_cross_entropy", vec![loss], vec![], needs)?;
        if needs {
            self.record(Op::SoftmaxCrossEntropy {
                logits,
                out,
                labels: labels.to_vec(),
                probs,
            });
        }
        Ok(out)
    }

    /// Sum of all elements; returns a scalar.
    pub fn sum(&mut self, input: TensorId) -> Result<TensorId> {
        let total: f64 = self.value(input).data().iter().sum();
        let needs = self.node_needs_grad(input);
        let out = self.push_result("sum", vec![total], vec![], needs)?;
        if needs {
            self.record(Op::Sum { input, out });
        }
        Ok(out)
    }

    /// Nearest-neighbor spatial resize of a 4-D tensor.
    pub fn resize_nearest(&mut self, input: TensorId, oh: usize, ow: usize) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("resize_nearest", self.value(input).shape())?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(TensorError::BadArgument {
                op: "resize_nearest",
                reason: "zero spatial extent".into(),
            });
        }
        let x = self.value(input).data();
        let mut data = vec![0.0; bs * c * oh * ow];
        for plane in 0..bs * c {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            let oplane = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let iy = (oy * h) / oh;
                for ox in 0..ow {
                    let ix = (ox * w) / ow;
                    oplane[oy * ow + ox] = xplane[iy * w + ix];
                }
            }
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("resize_nearest", data, vec![bs, c, oh, ow], needs)?;
        if needs {
            self.record(Op::ResizeNearest { input, out });
        }
        Ok(out)
    }

    /// Embed a 4-D tensor in a zero canvas of (oh, ow) at offset (top, left).
    pub fn pad_zero(
        &mut self,
        input: TensorId,
        top: usize,
        left: usize,
        oh: usize,
        ow: usize,
    ) -> Result<TensorId> {
        let [bs, c, h, w] = require_rank4("pad_zero", self.value(input).shape())?;
        if top + h > oh || left + w > ow {
            return Err(TensorError::BadArgument {
                op: "pad_zero",
                reason: format!(
                    "input {h}x{w} at offset ({top}, {left}) exceeds canvas {oh}x{ow}"
                ),
            });
        }
        let x = self.value(input).data();
        let mut data = vec![0.0; bs * c * oh * ow];
        for plane in 0..bs * c {
            let xplane = &x[plane * h * w..(plane + 1) * h * w];
            let oplane = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..h {
                let orow = (top + y) * ow + left;
                oplane[orow..orow + w].copy_from_slice(&xplane[y * w..(y + 1) * w]);
            }
        }
        let needs = self.node_needs_grad(input);
        let out = self.push_result("pad_zero", data, vec![bs, c, oh, ow], needs)?;
        if needs {
            self.record(Op::PadZero {
                input,
                out,
                top,
                left,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Tape, TensorError};

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![-1.0, 0.0, 2.0], vec![3]).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0], vec![2]).unwrap();
        let b = tape.constant(vec![1.0], vec![1]).unwrap();
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn channel_mean_var_constant_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3.5; 8], vec![1, 2, 2, 2]).unwrap();
        let (mean, var) = tape.channel_mean_var(x).unwrap();
        assert_eq!(tape.value(mean).data(), &[3.5, 3.5]);
        assert_eq!(tape.value(var).data(), &[0.0, 0.0]);
    }

    #[test]
    fn channel_mean_var_zero_spatial_extent_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![], vec![1, 2, 0, 3]).unwrap();
        assert!(tape.channel_mean_var(x).is_err());
    }

    // Brute-force sliding-window oracle for conv2d.
    fn conv_oracle(
        x: &[f64],
        (bs, ci, h, w): (usize, usize, usize, usize),
        k: &[f64],
        (co, kh, kw): (usize, usize, usize),
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; bs * co * oh * ow];
        for b in 0..bs {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[((b * ci + i) * h + iy as usize) * w + ix as usize]
                                        * k[((o * ci + i) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_all_ones_kernel_sums_windows() {
        let mut tape = Tape::new();
        let x_data: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let x = tape.constant(x_data.clone(), vec![1, 1, 3, 3]).unwrap();
        let k = tape.constant(vec![1.0; 4], vec![1, 1, 2, 2]).unwrap();
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        let expected = conv_oracle(&x_data, (1, 1, 3, 3), &[1.0; 4], (1, 2, 2), 1, 0);
        assert_eq!(tape.value(y).data(), expected.as_slice());
        // Windows of the 3x3 grid 1..9: [1+2+4+5, 2+3+5+6, 4+5+7+8, 5+6+8+9].
        assert_eq!(tape.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv2d_matches_oracle_with_stride_and_padding() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let (bs, ci, h, w) = (2, 3, 5, 6);
        let (co, kh, kw) = (4, 3, 3);
        let x_data: Vec<f64> = (0..bs * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k_data: Vec<f64> = (0..co * ci * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (stride, padding) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let mut tape = Tape::new();
            let x = tape.constant(x_data.clone(), vec![bs, ci, h, w]).unwrap();
            let k = tape.constant(k_data.clone(), vec![co, ci, kh, kw]).unwrap();
            let y = tape.conv2d(x, k, stride, padding).unwrap();
            let expected = conv_oracle(
                &x_data,
                (bs, ci, h, w),
                &k_data,
                (co, kh, kw),
                stride,
                padding,
            );
            for (a, e) in tape.value(y).data().iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "conv mismatch: {a} vs {e}");
            }
        }
    }

    #[test]
    fn max_pool_ties_break_to_first_in_scan_order() {
        let mut tape = Tape::new();
        // All-equal window: gradient must route to the first cell.
        let x = tape.variable(vec![5.0; 4], vec![1, 1, 2, 2]).unwrap();
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_kernel_larger_than_input_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 4], vec![1, 1, 2, 2]).unwrap();
        assert!(tape.max_pool2d(x, 3, 1).is_err());
        assert!(tape.avg_pool2d(x, 3, 1).is_err());
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 10], vec![1, 10]).unwrap();
        let loss = tape.softmax_cross_entropy(x, &[3]).unwrap();
        assert!((tape.value(loss).item() - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 4], vec![2, 2]).unwrap();
        assert!(tape.softmax_cross_entropy(x, &[0, 2]).is_err());
    }

    #[test]
    fn instance_norm_constant_channel_zeroes_out() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![4.0; 4], vec![1, 1, 2, 2]).unwrap();
        let y = tape.instance_norm(x, &[0.0], &[1.0], 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn instance_norm_hand_computed_cell_values() {
        // 2x2 map [[1,2],[3,4]]: mean 2.5, population var 1.25.
        let mut tape = Tape::new();
        let x = tape
            .constant(vec![1.0, 2.0, 3.0, 4.0], vec![1, 1, 2, 2])
            .unwrap();
        let eps = 1e-5;
        let y = tape.instance_norm(x, &[10.0], &[2.0], eps).unwrap();
        let std = (1.25f64 + eps).sqrt();
        for (i, v) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let expect = 10.0 + 2.0 * (v - 2.5) / std;
            assert!((tape.value(y).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_and_pad_round_trip_identity() {
        let mut tape = Tape::new();
        let x_data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = tape.constant(x_data.clone(), vec![1, 1, 4, 4]).unwrap();
        let same = tape.resize_nearest(x, 4, 4).unwrap();
        assert_eq!(tape.value(same).data(), x_data.as_slice());
        let padded = tape.pad_zero(x, 0, 0, 4, 4).unwrap();
        assert_eq!(tape.value(padded).data(), x_data.as_slice());
    }

    #[test]
    fn pad_zero_rejects_overflow() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 4], vec![1, 1, 2, 2]).unwrap();
        assert!(tape.pad_zero(x, 3, 0, 4, 4).is_err());
    }
}
