//! Differentiable tensor operations.
//!
//! Shape conventions: conv inputs are `[batch, channel, height, width]`,
//! dense kernels `[out_ch, in_ch, k, k]`, depthwise kernels `[ch, k, k]`,
//! biases `[out_ch]`.
//!
//! Reduction order inside every convolution is fixed — kernel taps in
//! row-major order within a channel, channels in ascending order — so
//! results are bit-reproducible regardless of thread count or build run.

use crate::autodiff::GradNode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial padding for [`GradNode::conv2d`].
///
/// `Same` keeps `out = ceil(in / stride)` with zero padding split
/// `floor(total/2)` before, remainder after. `Valid` applies no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn conv_geometry(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<ConvGeometry> {
    match padding {
        Padding::Same => {
            let out_h = h.div_ceil(stride);
            let out_w = w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + k).saturating_sub(h);
            let pad_w = ((out_w - 1) * stride + k).saturating_sub(w);
            Ok(ConvGeometry {
                out_h,
                out_w,
                pad_top: pad_h / 2,
                pad_left: pad_w / 2,
            })
        }
        Padding::Valid => {
            if h < k || w < k {
                return Err(Error::Contract(format!(
                    "valid padding requires input at least {k}x{k}, got {h}x{w}"
                )));
            }
            Ok(ConvGeometry {
                out_h: (h - k) / stride + 1,
                out_w: (w - k) / stride + 1,
                pad_top: 0,
                pad_left: 0,
            })
        }
    }
}

impl GradNode {
    /// 2-D cross-correlation with bias, differentiable w.r.t. input,
    /// kernel, and bias.
    pub fn conv2d(
        &self,
        kernel: &GradNode,
        bias: &GradNode,
        stride: usize,
        padding: Padding,
    ) -> Result<GradNode> {
        self.same_graph(kernel)?;
        self.same_graph(bias)?;
        let input = self.value();
        let k = kernel.value();
        let b = bias.value();
        check_conv_shapes(input.shape(), k.shape(), b.shape(), stride)?;
        let (batch, _, h, w) = dims4(input.shape());
        let (out_ch, _, ksize, _) = dims4(k.shape());
        let geom = conv_geometry(h, w, ksize, stride, padding)?;

        let out = conv2d_forward(&input, &k, &b, stride, geom);
        let out_shape = vec![batch, out_ch, geom.out_h, geom.out_w];

        let input_c = input.clone();
        let kernel_c = k.clone();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![
                need[0].then(|| conv2d_input_grad(grad, &kernel_c, input_c.shape(), stride, geom)),
                need[1].then(|| conv2d_kernel_grad(grad, &input_c, kernel_c.shape(), stride, geom)),
                need[2].then(|| conv2d_bias_grad(grad)),
            ]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(out_shape, out),
            vec![self.id(), kernel.id(), bias.id()],
            Box::new(backward),
        ))
    }

    /// Depthwise 2-D cross-correlation: one `k x k` filter per input
    /// channel, same padding, no bias.
    pub fn depthwise_conv2d(&self, kernel: &GradNode, stride: usize) -> Result<GradNode> {
        self.same_graph(kernel)?;
        let input = self.value();
        let k = kernel.value();
        check_depthwise_shapes(input.shape(), k.shape(), stride)?;
        let (batch, ch, h, w) = dims4(input.shape());
        let ksize = k.shape()[1];
        let geom = conv_geometry(h, w, ksize, stride, Padding::Same)?;

        let out = depthwise_forward(&input, &k, stride, geom);
        let out_shape = vec![batch, ch, geom.out_h, geom.out_w];

        let input_c = input.clone();
        let kernel_c = k.clone();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![
                need[0].then(|| depthwise_input_grad(grad, &kernel_c, input_c.shape(), stride, geom)),
                need[1].then(|| depthwise_kernel_grad(grad, &input_c, kernel_c.shape(), stride, geom)),
            ]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(out_shape, out),
            vec![self.id(), kernel.id()],
            Box::new(backward),
        ))
    }

    /// Depthwise spatial filtering followed by a 1x1 pointwise channel mix:
    /// the separable convolution building block. The stride applies to the
    /// depthwise pass; the pointwise kernel is `[out_ch, in_ch, 1, 1]` and
    /// carries the bias.
    pub fn separable_conv2d(
        &self,
        depthwise_kernel: &GradNode,
        pointwise_kernel: &GradNode,
        bias: &GradNode,
        stride: usize,
    ) -> Result<GradNode> {
        let pw_shape = pointwise_kernel.shape();
        if pw_shape.len() != 4 || pw_shape[2] != 1 || pw_shape[3] != 1 {
            return Err(Error::Contract(format!(
                "pointwise kernel must be [out_ch, in_ch, 1, 1], got {pw_shape:?}"
            )));
        }
        let mid = self.depthwise_conv2d(depthwise_kernel, stride)?;
        mid.conv2d(pointwise_kernel, bias, 1, Padding::Same)
    }

    /// Bilinear upsampling by 2 or 4 in both spatial dimensions, using the
    /// half-pixel-center (align-corners = false) convention: output pixel
    /// `o` samples input coordinate `(o + 0.5)/factor - 0.5`, edges clamped.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<GradNode> {
        if factor != 2 && factor != 4 {
            return Err(Error::Contract(format!(
                "upsample factor must be 2 or 4, got {factor}"
            )));
        }
        let input = self.value();
        if input.shape().len() != 4 {
            return Err(Error::Contract(format!(
                "upsample expects [b, c, h, w], got {:?}",
                input.shape()
            )));
        }
        let (batch, ch, h, w) = dims4(input.shape());
        let (oh, ow) = (h * factor, w * factor);
        let ytaps = bilinear_taps(h, oh);
        let xtaps = bilinear_taps(w, ow);

        let mut out = vec![0.0; batch * ch * oh * ow];
        let in_data = input.data();
        let out_shape = vec![batch, ch, oh, ow];
        for bc in 0..batch * ch {
            let plane = &in_data[bc * h * w..(bc + 1) * h * w];
            let out_plane = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for oy in 0..oh {
                let (y0, y1, wy) = ytaps[oy];
                for ox in 0..ow {
                    let (x0, x1, wx) = xtaps[ox];
                    let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                    let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                    out_plane[oy * ow + ox] = top * (1.0 - wy) + bottom * wy;
                }
            }
        }

        let in_shape = input.shape().to_vec();
        let backward = move |grad: &Tensor, need: &[bool]| {
            if !need[0] {
                return vec![None];
            }
            let (h, w) = (in_shape[2], in_shape[3]);
            let (oh, ow) = (h * factor, w * factor);
            let ytaps = bilinear_taps(h, oh);
            let xtaps = bilinear_taps(w, ow);
            let g = grad.data();
            let mut gin = vec![0.0; in_shape.iter().product()];
            for bc in 0..in_shape[0] * in_shape[1] {
                let g_plane = &g[bc * oh * ow..(bc + 1) * oh * ow];
                let gin_plane = &mut gin[bc * h * w..(bc + 1) * h * w];
                for oy in 0..oh {
                    let (y0, y1, wy) = ytaps[oy];
                    for ox in 0..ow {
                        let (x0, x1, wx) = xtaps[ox];
                        let go = g_plane[oy * ow + ox];
                        gin_plane[y0 * w + x0] += go * (1.0 - wy) * (1.0 - wx);
                        gin_plane[y0 * w + x1] += go * (1.0 - wy) * wx;
                        gin_plane[y1 * w + x0] += go * wy * (1.0 - wx);
                        gin_plane[y1 * w + x1] += go * wy * wx;
                    }
                }
            }
            vec![Some(Tensor::from_op(in_shape.clone(), gin))]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(out_shape, out),
            vec![self.id()],
            Box::new(backward),
        ))
    }

    /// 2x2 max pooling with stride 2. Outputs are `ceil(in/2)` so odd and
    /// unit extents survive (border windows shrink); ties route the
    /// gradient to the first maximum in row-major window order.
    pub fn max_pool2(&self) -> Result<GradNode> {
        let input = self.value();
        if input.shape().len() != 4 {
            return Err(Error::Contract(format!(
                "max_pool2 expects [b, c, h, w], got {:?}",
                input.shape()
            )));
        }
        let (batch, ch, h, w) = dims4(input.shape());
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let in_data = input.data();
        let mut out = vec![0.0; batch * ch * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for bc in 0..batch * ch {
            let plane = &in_data[bc * h * w..(bc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2usize.min(h - oy * 2) {
                        for dx in 0..2usize.min(w - ox * 2) {
                            let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = bc * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = bc * h * w + best_idx;
                }
            }
        }

        let in_shape = input.shape().to_vec();
        let backward = move |grad: &Tensor, need: &[bool]| {
            if !need[0] {
                return vec![None];
            }
            let mut gin = vec![0.0; in_shape.iter().product()];
            for (g, &src) in grad.data().iter().zip(&argmax) {
                gin[src] += g;
            }
            vec![Some(Tensor::from_op(in_shape.clone(), gin))]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(vec![batch, ch, oh, ow], out),
            vec![self.id()],
            Box::new(backward),
        ))
    }

    /// Concatenate along the channel axis; batch and spatial extents must
    /// match. The gradient splits back to the operands.
    pub fn concat_channels(&self, other: &GradNode) -> Result<GradNode> {
        self.same_graph(other)?;
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::Contract(format!(
                "concat_channels requires matching batch and spatial extents, got {sa:?} vs {sb:?}"
            )));
        }
        let (batch, ca, h, w) = dims4(&sa);
        let cb = sb[1];
        let plane = h * w;
        let mut out = Vec::with_capacity((ca + cb) * batch * plane);
        for bi in 0..batch {
            out.extend_from_slice(&a.data()[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&b.data()[bi * cb * plane..(bi + 1) * cb * plane]);
        }

        let backward = move |grad: &Tensor, need: &[bool]| {
            let g = grad.data();
            let mut ga = need[0].then(|| Vec::with_capacity(batch * ca * plane));
            let mut gb = need[1].then(|| Vec::with_capacity(batch * cb * plane));
            for bi in 0..batch {
                let base = bi * (ca + cb) * plane;
                if let Some(ga) = ga.as_mut() {
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
            }
            vec![
                ga.map(|v| Tensor::from_op(vec![batch, ca, h, w], v)),
                gb.map(|v| Tensor::from_op(vec![batch, cb, h, w], v)),
            ]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(vec![batch, ca + cb, h, w], out),
            vec![self.id(), other.id()],
            Box::new(backward),
        ))
    }

    /// Channels `[start, end)` of a `[b, c, h, w]` tensor; the gradient
    /// zero-pads back into place.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<GradNode> {
        let input = self.value();
        let shape = input.shape().to_vec();
        if shape.len() != 4 || start >= end || end > shape[1] {
            return Err(Error::Contract(format!(
                "invalid channel slice {start}..{end} of shape {shape:?}"
            )));
        }
        let (batch, ch, h, w) = dims4(&shape);
        let plane = h * w;
        let out_ch = end - start;
        let mut out = Vec::with_capacity(batch * out_ch * plane);
        for bi in 0..batch {
            let base = (bi * ch + start) * plane;
            out.extend_from_slice(&input.data()[base..base + out_ch * plane]);
        }

        let backward = move |grad: &Tensor, need: &[bool]| {
            if !need[0] {
                return vec![None];
            }
            let mut gin = vec![0.0; batch * ch * plane];
            for bi in 0..batch {
                let dst = (bi * ch + start) * plane;
                let src = bi * out_ch * plane;
                gin[dst..dst + out_ch * plane]
                    .copy_from_slice(&grad.data()[src..src + out_ch * plane]);
            }
            vec![Some(Tensor::from_op(vec![batch, ch, h, w], gin))]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(vec![batch, out_ch, h, w], out),
            vec![self.id()],
            Box::new(backward),
        ))
    }

    pub fn relu(&self) -> GradNode {
        let input = self.value();
        let out: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_op(input.shape().to_vec(), out);
        let out_c = out.clone();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![need[0].then(|| {
                // Subgradient at 0 is 0: mask on output > 0.
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(out_c.data())
                    .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::from_op(out_c.shape().to_vec(), g)
            })]
        };
        self.graph().push_op(out, vec![self.id()], Box::new(backward))
    }

    pub fn sigmoid(&self) -> GradNode {
        let input = self.value();
        let out: Vec<f64> = input.data().iter().map(|&v| stable_sigmoid(v)).collect();
        let out = Tensor::from_op(input.shape().to_vec(), out);
        let out_c = out.clone();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![need[0].then(|| {
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(out_c.data())
                    .map(|(&g, &s)| g * s * (1.0 - s))
                    .collect();
                Tensor::from_op(out_c.shape().to_vec(), g)
            })]
        };
        self.graph().push_op(out, vec![self.id()], Box::new(backward))
    }

    pub fn add(&self, other: &GradNode) -> Result<GradNode> {
        self.binary_elementwise(other, "add", |a, b| a + b, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &GradNode) -> Result<GradNode> {
        self.binary_elementwise(other, "sub", |a, b| a - b, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &GradNode) -> Result<GradNode> {
        self.binary_elementwise(other, "mul", |a, b| a * b, |g, _, b| g * b, |g, a, _| g * a)
    }

    pub fn scalar_mul(&self, scalar: f64) -> GradNode {
        let input = self.value();
        let out: Vec<f64> = input.data().iter().map(|&v| v * scalar).collect();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![need[0].then(|| {
                let g: Vec<f64> = grad.data().iter().map(|&g| g * scalar).collect();
                Tensor::from_op(grad.shape().to_vec(), g)
            })]
        };
        self.graph().push_op(
            Tensor::from_op(input.shape().to_vec(), out),
            vec![self.id()],
            Box::new(backward),
        )
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self) -> GradNode {
        let input = self.value();
        let total: f64 = input.data().iter().sum();
        let in_shape = input.shape().to_vec();
        let backward = move |grad: &Tensor, need: &[bool]| {
            vec![need[0].then(|| Tensor::full(&in_shape, grad.data()[0]))]
        };
        self.graph().push_op(
            Tensor::scalar_value(total),
            vec![self.id()],
            Box::new(backward),
        )
    }

    /// Mean of `|a - b|` over all elements (the L1 distance), as a scalar.
    /// The subgradient at `a = b` is 0.
    pub fn mean_abs(&self, other: &GradNode) -> Result<GradNode> {
        self.reduction(other, "mean_abs", |d| d.abs(), |d| signum_zero(d))
    }

    /// Mean of `(a - b)^2` over all elements (the L2 distance), as a scalar.
    pub fn mean_sq(&self, other: &GradNode) -> Result<GradNode> {
        self.reduction(other, "mean_sq", |d| d * d, |d| 2.0 * d)
    }

    fn binary_elementwise(
        &self,
        other: &GradNode,
        name: &str,
        f: fn(f64, f64) -> f64,
        df_da: fn(f64, f64, f64) -> f64,
        df_db: fn(f64, f64, f64) -> f64,
    ) -> Result<GradNode> {
        self.same_graph(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::Contract(format!(
                "{name} shape mismatch: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (ac, bc) = (a.clone(), b.clone());
        let backward = move |grad: &Tensor, need: &[bool]| {
            let ga = need[0].then(|| {
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(ac.data().iter().zip(bc.data()))
                    .map(|(&g, (&x, &y))| df_da(g, x, y))
                    .collect();
                Tensor::from_op(ac.shape().to_vec(), g)
            });
            let gb = need[1].then(|| {
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(ac.data().iter().zip(bc.data()))
                    .map(|(&g, (&x, &y))| df_db(g, x, y))
                    .collect();
                Tensor::from_op(bc.shape().to_vec(), g)
            });
            vec![ga, gb]
        };
        Ok(self.graph().push_op(
            Tensor::from_op(a.shape().to_vec(), out),
            vec![self.id(), other.id()],
            Box::new(backward),
        ))
    }

    fn reduction(
        &self,
        other: &GradNode,
        name: &str,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
    ) -> Result<GradNode> {
        self.same_graph(other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(Error::Contract(format!(
                "{name} shape mismatch: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let n = a.numel() as f64;
        let total: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x - y))
            .sum();
        let (ac, bc) = (a.clone(), b.clone());
        let backward = move |grad: &Tensor, need: &[bool]| {
            let scale = grad.data()[0] / n;
            let diffs = || ac.data().iter().zip(bc.data()).map(|(&x, &y)| x - y);
            let ga = need[0].then(|| {
                let g: Vec<f64> = diffs().map(|d| df(d) * scale).collect();
                Tensor::from_op(ac.shape().to_vec(), g)
            });
            let gb = need[1].then(|| {
                let g: Vec<f64> = diffs().map(|d| -df(d) * scale).collect();
                Tensor::from_op(bc.shape().to_vec(), g)
            });
            vec![ga, gb]
        };
        Ok(self.graph().push_op(
            Tensor::scalar_value(total / n),
            vec![self.id(), other.id()],
            Box::new(backward),
        ))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the output strictly inside (0, 1) even where the closed form
    // rounds to an endpoint (|x| ≳ 37).
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn signum_zero(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

fn check_conv_shapes(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize) -> Result<()> {
    if input.len() != 4 {
        return Err(Error::Contract(format!(
            "conv2d input must be [b, c, h, w], got {input:?}"
        )));
    }
    if kernel.len() != 4 || kernel[2] != kernel[3] || kernel[2] % 2 == 0 {
        return Err(Error::Contract(format!(
            "conv2d kernel must be [out_ch, in_ch, k, k] with k odd, got {kernel:?}"
        )));
    }
    if kernel[1] != input[1] {
        return Err(Error::Contract(format!(
            "conv2d channel mismatch: input {input:?} vs kernel {kernel:?}"
        )));
    }
    if bias.len() != 1 || bias[0] != kernel[0] {
        return Err(Error::Contract(format!(
            "conv2d bias must be [out_ch={}], got {bias:?}",
            kernel[0]
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    Ok(())
}

fn check_depthwise_shapes(input: &[usize], kernel: &[usize], stride: usize) -> Result<()> {
    if input.len() != 4 {
        return Err(Error::Contract(format!(
            "depthwise input must be [b, c, h, w], got {input:?}"
        )));
    }
    if kernel.len() != 3 || kernel[1] != kernel[2] || kernel[1] % 2 == 0 {
        return Err(Error::Contract(format!(
            "depthwise kernel must be [ch, k, k] with k odd, got {kernel:?}"
        )));
    }
    if kernel[0] != input[1] {
        return Err(Error::Contract(format!(
            "depthwise channel mismatch: input {input:?} vs kernel {kernel:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    Ok(())
}

/// Valid tap range `lo..hi` so that `o*stride + t - pad` stays in
/// `0..extent`.
#[inline]
fn tap_range(o: usize, stride: usize, pad: usize, k: usize, extent: usize) -> (usize, usize) {
    let base = o * stride;
    let lo = pad.saturating_sub(base);
    let hi = k.min(extent + pad - base);
    (lo, hi.max(lo))
}

fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, geom: ConvGeometry) -> Vec<f64> {
    let (batch, in_ch, h, w) = dims4(input.shape());
    let (out_ch, _, k, _) = dims4(kernel.shape());
    let in_data = input.data();
    let k_data = kernel.data();
    let b_data = bias.data();
    let plane = h * w;
    let out_plane = geom.out_h * geom.out_w;
    let mut out = vec![0.0; batch * out_ch * out_plane];

    // 1x1 kernels are pure channel mixing: per-plane multiply-adds with
    // the same per-element accumulation order (bias, then ascending
    // input channel) as the general path.
    if k == 1 && stride == 1 {
        for b in 0..batch {
            for oc in 0..out_ch {
                let o_base = (b * out_ch + oc) * plane;
                out[o_base..o_base + plane].fill(b_data[oc]);
                for ic in 0..in_ch {
                    let kv = k_data[oc * in_ch + ic];
                    let in_plane = &in_data[(b * in_ch + ic) * plane..(b * in_ch + ic + 1) * plane];
                    let out_slice = &mut out[o_base..o_base + plane];
                    for (o, &v) in out_slice.iter_mut().zip(in_plane) {
                        *o += kv * v;
                    }
                }
            }
        }
        return out;
    }

    // Stride 1: accumulate one kernel tap at a time with contiguous row
    // sweeps. Each output element still receives its terms in the fixed
    // (bias, in-channel, kernel-row-major) order, so the result is
    // bit-identical to the per-element loop.
    if stride == 1 {
        for b in 0..batch {
            for oc in 0..out_ch {
                let o_base = (b * out_ch + oc) * out_plane;
                out[o_base..o_base + out_plane].fill(b_data[oc]);
                for ic in 0..in_ch {
                    let in_plane = &in_data[(b * in_ch + ic) * plane..(b * in_ch + ic + 1) * plane];
                    let kplane = &k_data[(oc * in_ch + ic) * k * k..];
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = out_range(ky, 1, geom.pad_top, geom.out_h, h);
                        for kx in 0..k {
                            let kv = kplane[ky * k + kx];
                            let (ox_lo, ox_hi) = out_range(kx, 1, geom.pad_left, geom.out_w, w);
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - geom.pad_top;
                                let ix0 = ox_lo + kx - geom.pad_left;
                                let orow = &mut out
                                    [o_base + oy * geom.out_w + ox_lo..o_base + oy * geom.out_w + ox_hi];
                                let irow = &in_plane[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                                for (o, iv) in orow.iter_mut().zip(irow) {
                                    *o += kv * iv;
                                }
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    let mut o = 0;
    for b in 0..batch {
        for oc in 0..out_ch {
            for oy in 0..geom.out_h {
                let (ky_lo, ky_hi) = tap_range(oy, stride, geom.pad_top, k, h);
                for ox in 0..geom.out_w {
                    let (kx_lo, kx_hi) = tap_range(ox, stride, geom.pad_left, k, w);
                    let ix0 = ox * stride + kx_lo - geom.pad_left;
                    let mut acc = b_data[oc];
                    for ic in 0..in_ch {
                        let in_plane = &in_data[(b * in_ch + ic) * plane..];
                        let kplane = &k_data[(oc * in_ch + ic) * k * k..];
                        for ky in ky_lo..ky_hi {
                            let iy = oy * stride + ky - geom.pad_top;
                            let row = &in_plane[iy * w + ix0..iy * w + ix0 + (kx_hi - kx_lo)];
                            let krow = &kplane[ky * k + kx_lo..ky * k + kx_hi];
                            for (rv, kv) in row.iter().zip(krow) {
                                acc += rv * kv;
                            }
                        }
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
    }
    out
}

/// Valid output range `lo..hi` so that `o*stride + t - pad` stays in
/// `0..extent` for a fixed tap `t`.
#[inline]
fn out_range(t: usize, stride: usize, pad: usize, out: usize, extent: usize) -> (usize, usize) {
    let lo = (pad.saturating_sub(t)).div_ceil(stride);
    let hi = if extent + pad > t {
        ((extent + pad - t - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn conv2d_input_grad(grad: &Tensor, kernel: &Tensor, in_shape: &[usize], stride: usize, geom: ConvGeometry) -> Tensor {
    let (batch, in_ch, h, w) = dims4(in_shape);
    let (out_ch, _, k, _) = dims4(kernel.shape());
    let g = grad.data();
    let k_data = kernel.data();
    let plane = h * w;
    let out_plane = geom.out_h * geom.out_w;
    let mut gin = vec![0.0; batch * in_ch * plane];

    if k == 1 && stride == 1 {
        for b in 0..batch {
            for ic in 0..in_ch {
                let gin_plane = &mut gin[(b * in_ch + ic) * plane..(b * in_ch + ic + 1) * plane];
                for oc in 0..out_ch {
                    let kv = k_data[oc * in_ch + ic];
                    let g_plane = &g[(b * out_ch + oc) * plane..(b * out_ch + oc + 1) * plane];
                    for (gi, &gv) in gin_plane.iter_mut().zip(g_plane) {
                        *gi += kv * gv;
                    }
                }
            }
        }
        return Tensor::from_op(in_shape.to_vec(), gin);
    }

    // Stride 1: per-tap row sweeps (the transpose of the forward sweep).
    if stride == 1 {
        for b in 0..batch {
            for ic in 0..in_ch {
                let gin_plane = &mut gin[(b * in_ch + ic) * plane..(b * in_ch + ic + 1) * plane];
                for oc in 0..out_ch {
                    let g_plane = &g[(b * out_ch + oc) * out_plane..(b * out_ch + oc + 1) * out_plane];
                    let kplane = &k_data[(oc * in_ch + ic) * k * k..];
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = out_range(ky, 1, geom.pad_top, geom.out_h, h);
                        for kx in 0..k {
                            let kv = kplane[ky * k + kx];
                            let (ox_lo, ox_hi) = out_range(kx, 1, geom.pad_left, geom.out_w, w);
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - geom.pad_top;
                                let ix0 = ox_lo + kx - geom.pad_left;
                                let grow =
                                    &g_plane[oy * geom.out_w + ox_lo..oy * geom.out_w + ox_hi];
                                let girow =
                                    &mut gin_plane[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                                for (gi, gv) in girow.iter_mut().zip(grow) {
                                    *gi += kv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        return Tensor::from_op(in_shape.to_vec(), gin);
    }

    for b in 0..batch {
        for oc in 0..out_ch {
            let g_plane = &g[(b * out_ch + oc) * out_plane..(b * out_ch + oc + 1) * out_plane];
            for oy in 0..geom.out_h {
                let (ky_lo, ky_hi) = tap_range(oy, stride, geom.pad_top, k, h);
                for ox in 0..geom.out_w {
                    let go = g_plane[oy * geom.out_w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    let (kx_lo, kx_hi) = tap_range(ox, stride, geom.pad_left, k, w);
                    let ix0 = ox * stride + kx_lo - geom.pad_left;
                    for ic in 0..in_ch {
                        let gin_plane = &mut gin[(b * in_ch + ic) * plane..(b * in_ch + ic + 1) * plane];
                        let kplane = &k_data[(oc * in_ch + ic) * k * k..];
                        for ky in ky_lo..ky_hi {
                            let iy = oy * stride + ky - geom.pad_top;
                            let row = &mut gin_plane[iy * w + ix0..iy * w + ix0 + (kx_hi - kx_lo)];
                            let krow = &kplane[ky * k + kx_lo..ky * k + kx_hi];
                            for (rv, kv) in row.iter_mut().zip(krow) {
                                *rv += go * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(in_shape.to_vec(), gin)
}

fn conv2d_kernel_grad(grad: &Tensor, input: &Tensor, k_shape: &[usize], stride: usize, geom: ConvGeometry) -> Tensor {
    let (batch, in_ch, h, w) = dims4(input.shape());
    let (out_ch, _, k, _) = dims4(k_shape);
    let g = grad.data();
    let in_data = input.data();
    let plane = h * w;
    let out_plane = geom.out_h * geom.out_w;
    let mut gk = vec![0.0; out_ch * in_ch * k * k];
    for oc in 0..out_ch {
        for ic in 0..in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for b in 0..batch {
                        let g_plane = &g[(b * out_ch + oc) * out_plane..];
                        let in_plane = &in_data[(b * in_ch + ic) * plane..];
                        let (oy_lo, oy_hi) = out_range(ky, stride, geom.pad_top, geom.out_h, h);
                        let (ox_lo, ox_hi) = out_range(kx, stride, geom.pad_left, geom.out_w, w);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - geom.pad_top;
                            let g_row = &g_plane[oy * geom.out_w + ox_lo..oy * geom.out_w + ox_hi];
                            let in_row = &in_plane[iy * w..];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - geom.pad_left;
                                let in_slice = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                                for (gv, iv) in g_row.iter().zip(in_slice) {
                                    acc += gv * iv;
                                }
                            } else {
                                for (i, gv) in g_row.iter().enumerate() {
                                    let ix = (ox_lo + i) * stride + kx - geom.pad_left;
                                    acc += gv * in_row[ix];
                                }
                            }
                        }
                    }
                    gk[((oc * in_ch + ic) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    Tensor::from_op(k_shape.to_vec(), gk)
}

fn conv2d_bias_grad(grad: &Tensor) -> Tensor {
    let (batch, out_ch, oh, ow) = dims4(grad.shape());
    let g = grad.data();
    let mut gb = vec![0.0; out_ch];
    for b in 0..batch {
        for (oc, gb_oc) in gb.iter_mut().enumerate() {
            let plane = &g[(b * out_ch + oc) * oh * ow..(b * out_ch + oc + 1) * oh * ow];
            for v in plane {
                *gb_oc += v;
            }
        }
    }
    Tensor::from_op(vec![out_ch], gb)
}

fn depthwise_forward(input: &Tensor, kernel: &Tensor, stride: usize, geom: ConvGeometry) -> Vec<f64> {
    let (batch, ch, h, w) = dims4(input.shape());
    let k = kernel.shape()[1];
    let in_data = input.data();
    let k_data = kernel.data();
    let mut out = vec![0.0; batch * ch * geom.out_h * geom.out_w];
    let mut o = 0;
    for b in 0..batch {
        for c in 0..ch {
            let plane = &in_data[(b * ch + c) * h * w..];
            let kplane = &k_data[c * k * k..];
            for oy in 0..geom.out_h {
                let (ky_lo, ky_hi) = tap_range(oy, stride, geom.pad_top, k, h);
                for ox in 0..geom.out_w {
                    let (kx_lo, kx_hi) = tap_range(ox, stride, geom.pad_left, k, w);
                    let ix0 = ox * stride + kx_lo - geom.pad_left;
                    let mut acc = 0.0;
                    for ky in ky_lo..ky_hi {
                        let iy = oy * stride + ky - geom.pad_top;
                        let row = &plane[iy * w + ix0..iy * w + ix0 + (kx_hi - kx_lo)];
                        let krow = &kplane[ky * k + kx_lo..ky * k + kx_hi];
                        for (rv, kv) in row.iter().zip(krow) {
                            acc += rv * kv;
                        }
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
    }
    out
}

fn depthwise_input_grad(grad: &Tensor, kernel: &Tensor, in_shape: &[usize], stride: usize, geom: ConvGeometry) -> Tensor {
    let (batch, ch, h, w) = dims4(in_shape);
    let k = kernel.shape()[1];
    let g = grad.data();
    let k_data = kernel.data();
    let plane = h * w;
    let out_plane = geom.out_h * geom.out_w;
    let mut gin = vec![0.0; batch * ch * plane];
    for b in 0..batch {
        for c in 0..ch {
            let gin_plane = &mut gin[(b * ch + c) * plane..(b * ch + c + 1) * plane];
            let g_plane = &g[(b * ch + c) * out_plane..];
            let kplane = &k_data[c * k * k..];
            for oy in 0..geom.out_h {
                let (ky_lo, ky_hi) = tap_range(oy, stride, geom.pad_top, k, h);
                for ox in 0..geom.out_w {
                    let go = g_plane[oy * geom.out_w + ox];
                    if go == 0.0 {
                        continue;
                    }
                    let (kx_lo, kx_hi) = tap_range(ox, stride, geom.pad_left, k, w);
                    let ix0 = ox * stride + kx_lo - geom.pad_left;
                    for ky in ky_lo..ky_hi {
                        let iy = oy * stride + ky - geom.pad_top;
                        let row = &mut gin_plane[iy * w + ix0..iy * w + ix0 + (kx_hi - kx_lo)];
                        let krow = &kplane[ky * k + kx_lo..ky * k + kx_hi];
                        for (rv, kv) in row.iter_mut().zip(krow) {
                            *rv += go * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(in_shape.to_vec(), gin)
}

fn depthwise_kernel_grad(grad: &Tensor, input: &Tensor, k_shape: &[usize], stride: usize, geom: ConvGeometry) -> Tensor {
    let (batch, ch, h, w) = dims4(input.shape());
    let k = k_shape[1];
    let g = grad.data();
    let in_data = input.data();
    let plane = h * w;
    let out_plane = geom.out_h * geom.out_w;
    let mut gk = vec![0.0; ch * k * k];
    for c in 0..ch {
        for ky in 0..k {
            for kx in 0..k {
                let mut acc = 0.0;
                for b in 0..batch {
                    let g_plane = &g[(b * ch + c) * out_plane..];
                    let in_plane = &in_data[(b * ch + c) * plane..];
                    let (oy_lo, oy_hi) = out_range(ky, stride, geom.pad_top, geom.out_h, h);
                    let (ox_lo, ox_hi) = out_range(kx, stride, geom.pad_left, geom.out_w, w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - geom.pad_top;
                        let g_row = &g_plane[oy * geom.out_w + ox_lo..oy * geom.out_w + ox_hi];
                        let in_row = &in_plane[iy * w..];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - geom.pad_left;
                            let in_slice = &in_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (gv, iv) in g_row.iter().zip(in_slice) {
                                acc += gv * iv;
                            }
                        } else {
                            for (i, gv) in g_row.iter().enumerate() {
                                let ix = (ox_lo + i) * stride + kx - geom.pad_left;
                                acc += gv * in_row[ix];
                            }
                        }
                    }
                }
                gk[(c * k + ky) * k + kx] = acc;
            }
        }
    }
    Tensor::from_op(k_shape.to_vec(), gk)
}

/// `(lo index, hi index, hi weight)` per output position for one axis.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let lo_idx = (lo.max(0.0) as usize).min(n_in - 1);
            let hi_idx = ((lo + 1.0).max(0.0) as usize).min(n_in - 1);
            (lo_idx, hi_idx, frac)
        })
        .collect()
}
