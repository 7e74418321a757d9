//! Spatial primitives on [N,C,H,W] tensors: 2-D convolution with
//! stride/dilation/padding/groups, pooling, channel concatenation,
//! global average pool and per-channel batch normalization.

use super::Tensor;
use crate::error::{Error, Result};

/// Hyper-parameters of a 2-D convolution. All fields are (height, width)
/// pairs so asymmetric kernels/strides (e.g. 1x3 conv, 1x2 stride) work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn simple(kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2dSpec {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (1, 1),
            groups: 1,
        }
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let eff_h = (self.kernel.0 - 1) * self.dilation.0 + 1;
        let eff_w = (self.kernel.1 - 1) * self.dilation.1 + 1;
        let oh = (h + 2 * self.padding.0 - eff_h) / self.stride.0 + 1;
        let ow = (w + 2 * self.padding.1 - eff_w) / self.stride.1 + 1;
        (oh, ow)
    }
}

impl Tensor {
    /// 2-D convolution, no bias. x: [n, c_in, h, w], weight:
    /// [c_out, c_in/groups, kh, kw]. Depthwise = groups == c_in.
    pub fn conv2d(&self, weight: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d".into(),
                details: format!("x {xs:?}, w {ws:?}"),
            });
        }
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, c_in_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c_in % spec.groups != 0
            || c_out % spec.groups != 0
            || c_in_g != c_in / spec.groups
            || (kh, kw) != spec.kernel
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d".into(),
                details: format!("x {xs:?}, w {ws:?}, groups {}", spec.groups),
            });
        }
        let (oh, ow) = spec.out_size(h, w);
        let x = self.to_vec();
        let wv = weight.to_vec();
        let co_g = c_out / spec.groups;

        let mut out = vec![0.0; n * c_out * oh * ow];
        for b in 0..n {
            for g in 0..spec.groups {
                for oc in 0..co_g {
                    let oc_abs = g * co_g + oc;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..c_in_g {
                                let ic_abs = g * c_in_g + ic;
                                for ky in 0..kh {
                                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize
                                        - spec.padding.0 as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * spec.stride.1 + kx * spec.dilation.1)
                                            as isize
                                            - spec.padding.1 as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        acc += x[((b * c_in + ic_abs) * h + iy as usize) * w
                                            + ix as usize]
                                            * wv[((oc_abs * c_in_g + ic) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                            out[((b * c_out + oc_abs) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }

        let (tx, tw) = (self.clone(), weight.clone());
        Ok(Tensor::make(
            out,
            vec![n, c_out, oh, ow],
            vec![self.clone(), weight.clone()],
            Box::new(move |gout| {
                tx.accumulate_grad(|gx| {
                    for b in 0..n {
                        for g in 0..spec.groups {
                            for oc in 0..co_g {
                                let oc_abs = g * co_g + oc;
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let go =
                                            gout[((b * c_out + oc_abs) * oh + oy) * ow + ox];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        for ic in 0..c_in_g {
                                            let ic_abs = g * c_in_g + ic;
                                            for ky in 0..kh {
                                                let iy = (oy * spec.stride.0
                                                    + ky * spec.dilation.0)
                                                    as isize
                                                    - spec.padding.0 as isize;
                                                if iy < 0 || iy >= h as isize {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ix = (ox * spec.stride.1
                                                        + kx * spec.dilation.1)
                                                        as isize
                                                        - spec.padding.1 as isize;
                                                    if ix < 0 || ix >= w as isize {
                                                        continue;
                                                    }
                                                    gx[((b * c_in + ic_abs) * h + iy as usize)
                                                        * w
                                                        + ix as usize] += go
                                                        * wv[((oc_abs * c_in_g + ic) * kh + ky)
                                                            * kw
                                                            + kx];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                tw.accumulate_grad(|gw| {
                    for b in 0..n {
                        for g in 0..spec.groups {
                            for oc in 0..co_g {
                                let oc_abs = g * co_g + oc;
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let go =
                                            gout[((b * c_out + oc_abs) * oh + oy) * ow + ox];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        for ic in 0..c_in_g {
                                            let ic_abs = g * c_in_g + ic;
                                            for ky in 0..kh {
                                                let iy = (oy * spec.stride.0
                                                    + ky * spec.dilation.0)
                                                    as isize
                                                    - spec.padding.0 as isize;
                                                if iy < 0 || iy >= h as isize {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ix = (ox * spec.stride.1
                                                        + kx * spec.dilation.1)
                                                        as isize
                                                        - spec.padding.1 as isize;
                                                    if ix < 0 || ix >= w as isize {
                                                        continue;
                                                    }
                                                    gw[((oc_abs * c_in_g + ic) * kh + ky) * kw
                                                        + kx] += go
                                                        * x[((b * c_in + ic_abs) * h
                                                            + iy as usize)
                                                            * w
                                                            + ix as usize];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }),
        ))
    }

    /// Shift the map one pixel up and left, zero-filling the far edge.
    /// Used by factorized reduce to sample the odd-offset pixel grid.
    pub fn shift_up_left(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "shift_up_left".into(),
                details: format!("expected 4-d input, got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let x = self.to_vec();
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h - 1 {
                    for xx in 0..w - 1 {
                        out[((b * c + ch) * h + y) * w + xx] =
                            x[((b * c + ch) * h + y + 1) * w + xx + 1];
                    }
                }
            }
        }
        let t = self.clone();
        Ok(Tensor::make(
            out,
            s,
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for b in 0..n {
                        for ch in 0..c {
                            for y in 0..h - 1 {
                                for xx in 0..w - 1 {
                                    gt[((b * c + ch) * h + y + 1) * w + xx + 1] +=
                                        g[((b * c + ch) * h + y) * w + xx];
                                }
                            }
                        }
                    }
                })
            }),
        ))
    }

    /// Global average pool: [n,c,h,w] -> [n,c].
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool".into(),
                details: format!("expected 4-d input, got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = (h * w) as f64;
        let x = self.data();
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                out[b * c + ch] = x[base..base + h * w].iter().sum::<f64>() / hw;
            }
        }
        drop(x);
        let t = self.clone();
        Ok(Tensor::make(
            out,
            vec![n, c],
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for b in 0..n {
                        for ch in 0..c {
                            let gv = g[b * c + ch] / hw;
                            let base = (b * c + ch) * h * w;
                            for i in 0..h * w {
                                gt[base + i] += gv;
                            }
                        }
                    }
                })
            }),
        ))
    }

    /// Per-channel batch normalization over (N,H,W) statistics.
    /// `affine = None` during search keeps the gradient path through the
    /// architecture logits free of extra scale parameters.
    pub fn channel_norm(&self, affine: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "channel_norm".into(),
                details: format!("expected 4-d input, got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let m = (n * h * w) as f64;
        let eps = 1e-5;
        let x = self.to_vec();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let idx = move |b: usize, ch: usize, i: usize| (b * c + ch) * h * w + i;
        for ch in 0..c {
            for b in 0..n {
                for i in 0..h * w {
                    mean[ch] += x[idx(b, ch, i)];
                }
            }
            mean[ch] /= m;
            for b in 0..n {
                for i in 0..h * w {
                    let d = x[idx(b, ch, i)] - mean[ch];
                    var[ch] += d * d;
                }
            }
            var[ch] /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        for ch in 0..c {
            for b in 0..n {
                for i in 0..h * w {
                    let j = idx(b, ch, i);
                    xhat[j] = (x[j] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let (gamma, beta) = match affine {
            Some((g, bta)) => {
                if g.shape() != vec![c] || bta.shape() != vec![c] {
                    return Err(Error::ShapeMismatch {
                        op: "channel_norm".into(),
                        details: format!(
                            "affine parameters {:?}/{:?} for {c} channels",
                            g.shape(),
                            bta.shape()
                        ),
                    });
                }
                (Some(g.clone()), Some(bta.clone()))
            }
            None => (None, None),
        };
        let gamma_v: Option<Vec<f64>> = gamma.as_ref().map(|g| g.to_vec());
        let mut out = xhat.clone();
        if let (Some(gv), Some(bv)) = (&gamma_v, beta.as_ref().map(|b| b.to_vec()).as_ref()) {
            for ch in 0..c {
                for b in 0..n {
                    for i in 0..h * w {
                        let j = idx(b, ch, i);
                        out[j] = out[j] * gv[ch] + bv[ch];
                    }
                }
            }
        }
        let mut prev = vec![self.clone()];
        if let (Some(g), Some(bta)) = (&gamma, &beta) {
            prev.push(g.clone());
            prev.push(bta.clone());
        }
        let t = self.clone();
        Ok(Tensor::make(
            out,
            s,
            prev,
            Box::new(move |gout| {
                // dL/dxhat = gout * gamma (or gout without affine)
                let mut dxh = gout.to_vec();
                if let Some(gv) = &gamma_v {
                    for ch in 0..c {
                        for b in 0..n {
                            for i in 0..h * w {
                                dxh[idx(b, ch, i)] *= gv[ch];
                            }
                        }
                    }
                }
                t.accumulate_grad(|gx| {
                    for ch in 0..c {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for b in 0..n {
                            for i in 0..h * w {
                                let j = idx(b, ch, i);
                                s1 += dxh[j];
                                s2 += dxh[j] * xhat[j];
                            }
                        }
                        for b in 0..n {
                            for i in 0..h * w {
                                let j = idx(b, ch, i);
                                gx[j] += inv_std[ch] / m * (m * dxh[j] - s1 - xhat[j] * s2);
                            }
                        }
                    }
                });
                if let Some(g) = &gamma {
                    g.accumulate_grad(|gg| {
                        for ch in 0..c {
                            for b in 0..n {
                                for i in 0..h * w {
                                    let j = idx(b, ch, i);
                                    gg[ch] += gout[j] * xhat[j];
                                }
                            }
                        }
                    });
                }
                if let Some(bta) = &beta {
                    bta.accumulate_grad(|gb| {
                        for ch in 0..c {
                            for b in 0..n {
                                for i in 0..h * w {
                                    gb[ch] += gout[idx(b, ch, i)];
                                }
                            }
                        }
                    });
                }
            }),
        ))
    }
}

/// Average pool (count-include-pad): divisor is always kernel area.
pub fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "avg_pool2d".into(),
            details: format!("expected 4-d input, got {s:?}"),
        });
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let area = (kernel * kernel) as f64;
    let xv = x.to_vec();
    let mut out = vec![0.0; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += xv[((b * c + ch) * h + iy as usize) * w + ix as usize];
                        }
                    }
                    out[((b * c + ch) * oh + oy) * ow + ox] = acc / area;
                }
            }
        }
    }
    let t = x.clone();
    Ok(Tensor::make(
        out,
        vec![n, c, oh, ow],
        vec![x.clone()],
        Box::new(move |g| {
            t.accumulate_grad(|gt| {
                for b in 0..n {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[((b * c + ch) * oh + oy) * ow + ox] / area;
                                for ky in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kernel {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        gt[((b * c + ch) * h + iy as usize) * w + ix as usize] +=
                                            gv;
                                    }
                                }
                            }
                        }
                    }
                }
            })
        }),
    ))
}

/// Max pool; on ties the gradient routes to the first maximal element
/// in scan order.
pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d".into(),
            details: format!("expected 4-d input, got {s:?}"),
        });
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let xv = x.to_vec();
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let j = ((b * c + ch) * h + iy as usize) * w + ix as usize;
                            if xv[j] > best {
                                best = xv[j];
                                best_i = j;
                            }
                        }
                    }
                    let o = ((b * c + ch) * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
    }
    let t = x.clone();
    Ok(Tensor::make(
        out,
        vec![n, c, oh, ow],
        vec![x.clone()],
        Box::new(move |g| {
            t.accumulate_grad(|gt| {
                for (o, &src) in argmax.iter().enumerate() {
                    gt[src] += g[o];
                }
            })
        }),
    ))
}

/// Concatenate [n,c_i,h,w] tensors along the channel axis.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "concat_channels".into(),
            details: "no inputs".into(),
        });
    }
    let s0 = parts[0].shape();
    if s0.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "concat_channels".into(),
            details: format!("expected 4-d inputs, got {s0:?}"),
        });
    }
    let (n, h, w) = (s0[0], s0[2], s0[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels".into(),
                details: format!("{s0:?} vs {s:?}"),
            });
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let mut out = vec![0.0; n * c_total * h * w];
    let mut offset = 0;
    for (p, &cp) in parts.iter().zip(&channels) {
        let pv = p.data();
        for b in 0..n {
            for ch in 0..cp {
                let src = (b * cp + ch) * h * w;
                let dst = (b * c_total + offset + ch) * h * w;
                out[dst..dst + h * w].copy_from_slice(&pv[src..src + h * w]);
            }
        }
        offset += cp;
    }
    let handles: Vec<Tensor> = parts.to_vec();
    let channels_b = channels.clone();
    Ok(Tensor::make(
        out,
        vec![n, c_total, h, w],
        handles.clone(),
        Box::new(move |g| {
            let mut offset = 0;
            for (p, &cp) in handles.iter().zip(&channels_b) {
                p.accumulate_grad(|gp| {
                    for b in 0..n {
                        for ch in 0..cp {
                            let dst = (b * cp + ch) * h * w;
                            let src = (b * c_total + offset + ch) * h * w;
                            for i in 0..h * w {
                                gp[dst + i] += g[src + i];
                            }
                        }
                    }
                });
                offset += cp;
            }
        }),
    ))
}
