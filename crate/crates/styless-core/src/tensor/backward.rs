//! Vector-Jacobian products for each recorded primitive.

use super::{accumulate, Op, Tape, TensorId};

impl Tape {
    pub(crate) fn backward_op(&self, op: &Op, grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Add { a, b, out } => {
                let Some(g) = grads[out.0].take() else { return };
                if self.node_needs_grad(*a) {
                    accumulate(&mut grads[a.0], &g);
                }
                if self.node_needs_grad(*b) {
                    accumulate(&mut grads[b.0], &g);
                }
                grads[out.0] = Some(g);
            }
            Op::Mul { a, b, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                let g = g.to_vec();
                if self.node_needs_grad(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    accumulate(&mut grads[a.0], &da);
                }
                if self.node_needs_grad(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Scale { a, factor, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if self.node_needs_grad(*a) {
                    let da: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                    accumulate(&mut grads[a.0], &da);
                }
            }
            Op::Matmul { a, b, out } => self.backward_matmul(*a, *b, *out, grads),
            Op::Conv2d {
                input,
                kernel,
                out,
                stride,
                padding,
            } => self.backward_conv2d(*input, *kernel, *out, *stride, *padding, grads),
            Op::Relu { input, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if self.node_needs_grad(*input) {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*input).data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[input.0], &dx);
                }
            }
            Op::MaxPool2d { input, out, argmax } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if self.node_needs_grad(*input) {
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for (gv, &src) in g.iter().zip(argmax) {
                        dx[src] += gv;
                    }
                    accumulate(&mut grads[input.0], &dx);
                }
            }
            Op::AvgPool2d {
                input,
                out,
                kernel,
                stride,
            } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                let ishape = self.value(*input).shape();
                let (h, w) = (ishape[2], ishape[3]);
                let oshape = self.value(*out).shape();
                let (planes, oh, ow) = (oshape[0] * oshape[1], oshape[2], oshape[3]);
                let inv = 1.0 / (kernel * kernel) as f64;
                let mut dx = vec![0.0; self.value(*input).len()];
                for plane in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[plane * oh * ow + oy * ow + ox] * inv;
                            for ky in 0..*kernel {
                                let iy = oy * stride + ky;
                                for kx in 0..*kernel {
                                    dx[plane * h * w + iy * w + ox * stride + kx] += gv;
                                }
                            }
                        }
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
            Op::Flatten { input, out } => {
                let Some(g) = grads[out.0].take() else { return };
                if self.node_needs_grad(*input) {
                    accumulate(&mut grads[input.0], &g);
                }
                grads[out.0] = Some(g);
            }
            Op::ChannelMean { input, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                let ishape = self.value(*input).shape();
                let spatial = ishape[2] * ishape[3];
                let inv = 1.0 / spatial as f64;
                let mut dx = vec![0.0; self.value(*input).len()];
                for (plane, gv) in g.iter().enumerate() {
                    let contrib = gv * inv;
                    for slot in &mut dx[plane * spatial..(plane + 1) * spatial] {
                        *slot += contrib;
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
            Op::ChannelVar { input, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                // d var / d x_i = 2 (x_i - mean) / n.
                let x = self.value(*input).data();
                let ishape = self.value(*input).shape();
                let spatial = ishape[2] * ishape[3];
                let inv = 1.0 / spatial as f64;
                let mut dx = vec![0.0; x.len()];
                for (plane, gv) in g.iter().enumerate() {
                    let xs = &x[plane * spatial..(plane + 1) * spatial];
                    let mean = xs.iter().sum::<f64>() * inv;
                    for (slot, &xv) in dx[plane * spatial..(plane + 1) * spatial]
                        .iter_mut()
                        .zip(xs)
                    {
                        *slot += gv * 2.0 * (xv - mean) * inv;
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
            Op::AffinePerChannel {
                input,
                scale,
                shift,
                out,
            } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                let g = g.to_vec();
                let shape = self.value(*input).shape();
                let (bs, c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product::<usize>().max(1);
                if self.node_needs_grad(*input) {
                    let sc = self.value(*scale).data();
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for b in 0..bs {
                        for ch in 0..c {
                            let base = (b * c + ch) * spatial;
                            let a = sc[ch];
                            for i in 0..spatial {
                                dx[base + i] = g[base + i] * a;
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], &dx);
                }
                if self.node_needs_grad(*scale) {
                    let x = self.value(*input).data();
                    let mut ds = vec![0.0; c];
                    for b in 0..bs {
                        for (ch, slot) in ds.iter_mut().enumerate() {
                            let base = (b * c + ch) * spatial;
                            for i in 0..spatial {
                                *slot += g[base + i] * x[base + i];
                            }
                        }
                    }
                    accumulate(&mut grads[scale.0], &ds);
                }
                if self.node_needs_grad(*shift) {
                    let mut dsh = vec![0.0; c];
                    for b in 0..bs {
                        for (ch, slot) in dsh.iter_mut().enumerate() {
                            let base = (b * c + ch) * spatial;
                            for i in 0..spatial {
                                *slot += g[base + i];
                            }
                        }
                    }
                    accumulate(&mut grads[shift.0], &dsh);
                }
            }
            Op::InstanceNorm {
                input,
                out,
                sigma,
                mean,
                inv_std,
            } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                // Full derivative through the spatial statistics:
                // dx = (sigma / std) * (g - mean(g) - x_hat * mean(g * x_hat)).
                let x = self.value(*input).data();
                let shape = self.value(*input).shape();
                let (bs, c) = (shape[0], shape[1]);
                let spatial = shape[2] * shape[3];
                let inv_n = 1.0 / spatial as f64;
                let mut dx = vec![0.0; x.len()];
                for b in 0..bs {
                    for ch in 0..c {
                        let plane = b * c + ch;
                        let base = plane * spatial;
                        let (m, q) = (mean[plane], inv_std[plane]);
                        let gs = &g[base..base + spatial];
                        let xs = &x[base..base + spatial];
                        let mut g_mean = 0.0;
                        let mut gx_mean = 0.0;
                        for (&gv, &xv) in gs.iter().zip(xs) {
                            g_mean += gv;
                            gx_mean += gv * ((xv - m) * q);
                        }
                        g_mean *= inv_n;
                        gx_mean *= inv_n;
                        let coeff = sigma[ch] * q;
                        for ((slot, &gv), &xv) in
                            dx[base..base + spatial].iter_mut().zip(gs).zip(xs)
                        {
                            let x_hat = (xv - m) * q;
                            *slot = coeff * (gv - g_mean - x_hat * gx_mean);
                        }
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                out,
                labels,
                probs,
            } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*logits) {
                    return;
                }
                let scale = g[0] / labels.len() as f64;
                let k = self.value(*logits).shape()[1];
                let mut dl = vec![0.0; probs.len()];
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let indicator = if j == label { 1.0 } else { 0.0 };
                        dl[i * k + j] = (probs[i * k + j] - indicator) * scale;
                    }
                }
                accumulate(&mut grads[logits.0], &dl);
            }
            Op::Sum { input, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if self.node_needs_grad(*input) {
                    let dx = vec![g[0]; self.value(*input).len()];
                    accumulate(&mut grads[input.0], &dx);
                }
            }
            Op::ResizeNearest { input, out } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                let ishape = self.value(*input).shape();
                let (h, w) = (ishape[2], ishape[3]);
                let oshape = self.value(*out).shape();
                let (planes, oh, ow) = (oshape[0] * oshape[1], oshape[2], oshape[3]);
                let mut dx = vec![0.0; self.value(*input).len()];
                for plane in 0..planes {
                    for oy in 0..oh {
                        let iy = (oy * h) / oh;
                        for ox in 0..ow {
                            let ix = (ox * w) / ow;
                            dx[plane * h * w + iy * w + ix] += g[plane * oh * ow + oy * ow + ox];
                        }
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
            Op::PadZero {
                input,
                out,
                top,
                left,
            } => {
                let Some(g) = grads[out.0].as_deref() else { return };
                if !self.node_needs_grad(*input) {
                    return;
                }
                let ishape = self.value(*input).shape();
                let (h, w) = (ishape[2], ishape[3]);
                let oshape = self.value(*out).shape();
                let (planes, oh, ow) = (oshape[0] * oshape[1], oshape[2], oshape[3]);
                let mut dx = vec![0.0; self.value(*input).len()];
                for plane in 0..planes {
                    for y in 0..h {
                        let orow = plane * oh * ow + (top + y) * ow + left;
                        let irow = plane * h * w + y * w;
                        for xcol in 0..w {
                            dx[irow + xcol] += g[orow + xcol];
                        }
                    }
                }
                accumulate(&mut grads[input.0], &dx);
            }
        }
    }

    fn backward_matmul(&self, a: TensorId, b: TensorId, out: TensorId, grads: &mut [Option<Vec<f64>>]) {
        let Some(g) = grads[out.0].as_deref() else { return };
        let g = g.to_vec();
        let sa = self.value(a).shape();
        let (m, k) = (sa[0], sa[1]);
        let n = self.value(b).shape()[1];
        if self.node_needs_grad(a) {
            // dA = g @ B^T
            let db = self.value(b).data();
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += g[i * n + j] * db[p * n + j];
                    }
                    da[i * k + p] = acc;
                }
            }
            accumulate(&mut grads[a.0], &da);
        }
        if self.node_needs_grad(b) {
            // dB = A^T @ g
            let daa = self.value(a).data();
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = daa[i * k + p];
                    for j in 0..n {
                        db[p * n + j] += av * g[i * n + j];
                    }
                }
            }
            accumulate(&mut grads[b.0], &db);
        }
    }

    fn backward_conv2d(
        &self,
        input: TensorId,
        kernel: TensorId,
        out: TensorId,
        stride: usize,
        padding: usize,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let Some(g) = grads[out.0].as_deref() else { return };
        let g = g.to_vec();
        let ishape = self.value(input).shape();
        let (bs, ci, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let kshape = self.value(kernel).shape();
        let (co, kh, kw) = (kshape[0], kshape[2], kshape[3]);
        let oshape = self.value(out).shape();
        let (oh, ow) = (oshape[2], oshape[3]);
        let x = self.value(input).data();
        let k = self.value(kernel).data();

        let needs_input = self.node_needs_grad(input);
        let needs_kernel = self.node_needs_grad(kernel);
        let mut dx = if needs_input { vec![0.0; x.len()] } else { Vec::new() };
        let mut dk = if needs_kernel { vec![0.0; k.len()] } else { Vec::new() };

        use super::ops::{conv_span, conv_span_dot};
        for b in 0..bs {
            for c_out in 0..co {
                let gplane = &g[(b * co + c_out) * oh * ow..(b * co + c_out + 1) * oh * ow];
                for c_in in 0..ci {
                    let xbase = (b * ci + c_in) * h * w;
                    let kbase = (c_out * ci + c_in) * kh * kw;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kidx = kbase + ky * kw + kx;
                            if needs_input {
                                let kv = k[kidx];
                                if kv != 0.0 {
                                    conv_span(
                                        &mut dx[xbase..xbase + h * w],
                                        gplane,
                                        kv,
                                        (h, w),
                                        (oh, ow),
                                        stride,
                                        padding,
                                        (ky, kx),
                                        true,
                                    );
                                }
                            }
                            if needs_kernel {
                                dk[kidx] += conv_span_dot(
                                    gplane,
                                    &x[xbase..xbase + h * w],
                                    (h, w),
                                    (oh, ow),
                                    stride,
                                    padding,
                                    (ky, kx),
                                );
                            }
                        }
                    }
                }
            }
        }
        if needs_input {
            accumulate(&mut grads[input.0], &dx);
        }
        if needs_kernel {
            accumulate(&mut grads[kernel.0], &dk);
        }
    }
}
