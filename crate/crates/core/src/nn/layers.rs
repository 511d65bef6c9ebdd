use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// One stage of a feed-forward stack. All stages act per example; nothing
/// couples examples within a batch, so batched results equal concatenated
/// single-example results.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// 2d convolution, square stride and symmetric zero padding.
    Conv2d { in_c: usize, out_c: usize, kh: usize, kw: usize, stride: usize, pad: usize },
    /// Per-example, per-channel normalization over spatial positions with
    /// learned affine scale and shift. Variance is biased (divides by HW).
    InstanceNorm2d { channels: usize },
    Relu,
    /// Non-overlapping average pooling; trailing rows/cols that do not fill
    /// a window are dropped.
    AvgPool2d { k: usize },
    Flatten,
    Linear { in_f: usize, out_f: usize },
    /// Per-example reshape.
    Reshape { to: Vec<usize> },
    /// Nearest-neighbor 2x spatial upsampling.
    UpsampleNearest2,
    Tanh,
}

impl Layer {
    /// Shapes of this layer's parameter tensors, in canonical order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            Layer::Conv2d { in_c, out_c, kh, kw, .. } => {
                vec![vec![*out_c, *in_c, *kh, *kw], vec![*out_c]]
            }
            Layer::InstanceNorm2d { channels } => vec![vec![*channels], vec![*channels]],
            Layer::Linear { in_f, out_f } => vec![vec![*out_f, *in_f], vec![*out_f]],
            _ => vec![],
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Error::InvalidArgument(why);
        match self {
            Layer::Conv2d { in_c, out_c, kh, kw, stride, pad } => {
                let [c, h, w] = three_d(input)?;
                if c != *in_c {
                    return Err(bad(format!("conv expects {in_c} channels, input has {c}")));
                }
                let oh = conv_extent(h, *kh, *stride, *pad)
                    .ok_or_else(|| bad(format!("conv output height collapses for input {h}")))?;
                let ow = conv_extent(w, *kw, *stride, *pad)
                    .ok_or_else(|| bad(format!("conv output width collapses for input {w}")))?;
                Ok(vec![*out_c, oh, ow])
            }
            Layer::InstanceNorm2d { channels } => {
                let [c, h, w] = three_d(input)?;
                if c != *channels {
                    return Err(bad(format!("norm expects {channels} channels, input has {c}")));
                }
                Ok(vec![c, h, w])
            }
            Layer::Relu | Layer::Tanh => Ok(input.to_vec()),
            Layer::AvgPool2d { k } => {
                let [c, h, w] = three_d(input)?;
                if h / k == 0 || w / k == 0 {
                    return Err(bad(format!("pool {k} collapses spatial dims {h}x{w}")));
                }
                Ok(vec![c, h / k, w / k])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Linear { in_f, out_f } => {
                if input != [*in_f] {
                    return Err(Error::ShapeMismatch {
                        what: "linear input".into(),
                        expected: vec![*in_f],
                        got: input.to_vec(),
                    });
                }
                Ok(vec![*out_f])
            }
            Layer::Reshape { to } => {
                let n: usize = input.iter().product();
                let m: usize = to.iter().product();
                if n != m {
                    return Err(Error::ShapeMismatch {
                        what: "reshape".into(),
                        expected: to.clone(),
                        got: input.to_vec(),
                    });
                }
                Ok(to.clone())
            }
            Layer::UpsampleNearest2 => {
                let [c, h, w] = three_d(input)?;
                Ok(vec![c, 2 * h, 2 * w])
            }
        }
    }
}

fn three_d(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            what: "spatial layer input".into(),
            expected: vec![0, 0, 0],
            got: shape.to_vec(),
        });
    }
    Ok([shape[0], shape[1], shape[2]])
}

fn conv_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        return None;
    }
    let out = (padded - k) / stride + 1;
    (out > 0).then_some(out)
}

/// Batched forward pass of one layer. `x` is `[n, ...input_shape]`.
pub fn forward<S: Scalar>(layer: &Layer, params: &[Tensor<S>], x: &Tensor<S>) -> Tensor<S> {
    let n = x.shape()[0];
    let in_shape = &x.shape()[1..];
    let out_shape = layer.output_shape(in_shape).expect("shape checked at build");
    let mut full = vec![n];
    full.extend_from_slice(&out_shape);
    let mut y = Tensor::zeros(&full);
    let in_stride: usize = in_shape.iter().product();
    let out_stride: usize = out_shape.iter().product();
    for i in 0..n {
        let xi = &x.as_slice()[i * in_stride..(i + 1) * in_stride];
        let yi = &mut y.as_mut_slice()[i * out_stride..(i + 1) * out_stride];
        forward_one(layer, params, in_shape, xi, yi);
    }
    y
}

fn forward_one<S: Scalar>(
    layer: &Layer,
    params: &[Tensor<S>],
    in_shape: &[usize],
    x: &[S],
    y: &mut [S],
) {
    match layer {
        Layer::Conv2d { in_c, out_c, kh, kw, stride, pad } => {
            let (h, w) = (in_shape[1], in_shape[2]);
            let oh = conv_extent(h, *kh, *stride, *pad).unwrap();
            let ow = conv_extent(w, *kw, *stride, *pad).unwrap();
            let k_len = in_c * kh * kw;
            let p_len = oh * ow;
            let col = im2col(x, *in_c, h, w, *kh, *kw, *stride, *pad, oh, ow);
            let wt = params[0].as_slice();
            let b = params[1].as_slice();
            for o in 0..*out_c {
                let wrow = &wt[o * k_len..(o + 1) * k_len];
                let yrow = &mut y[o * p_len..(o + 1) * p_len];
                for v in yrow.iter_mut() {
                    *v = b[o];
                }
                for k in 0..k_len {
                    let wv = wrow[k];
                    let crow = &col[k * p_len..(k + 1) * p_len];
                    for (yv, &cv) in yrow.iter_mut().zip(crow.iter()) {
                        *yv += wv * cv;
                    }
                }
            }
        }
        Layer::InstanceNorm2d { channels } => {
            let hw = in_shape[1] * in_shape[2];
            let gamma = params[0].as_slice();
            let beta = params[1].as_slice();
            let inv_m = S::from_f64(1.0 / hw as f64);
            let eps = S::from_f64(INSTANCE_NORM_EPS);
            for c in 0..*channels {
                let xs = &x[c * hw..(c + 1) * hw];
                let ys = &mut y[c * hw..(c + 1) * hw];
                let mut mean = S::ZERO;
                for &v in xs {
                    mean += v;
                }
                mean *= inv_m;
                let mut var = S::ZERO;
                for &v in xs {
                    let d = v - mean;
                    var += d * d;
                }
                var *= inv_m;
                let inv_std = S::ONE / (var + eps).sqrt();
                for (yv, &v) in ys.iter_mut().zip(xs.iter()) {
                    *yv = gamma[c] * (v - mean) * inv_std + beta[c];
                }
            }
        }
        Layer::Relu => {
            for (yv, &v) in y.iter_mut().zip(x.iter()) {
                *yv = crate::scalar::relu(v);
            }
        }
        Layer::AvgPool2d { k } => {
            let (c_n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / k, w / k);
            let inv = S::from_f64(1.0 / (k * k) as f64);
            for c in 0..c_n {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = S::ZERO;
                        for di in 0..*k {
                            for dj in 0..*k {
                                acc += x[c * h * w + (oi * k + di) * w + (oj * k + dj)];
                            }
                        }
                        y[c * oh * ow + oi * ow + oj] = acc * inv;
                    }
                }
            }
        }
        Layer::Flatten | Layer::Reshape { .. } => {
            y.copy_from_slice(x);
        }
        Layer::Linear { in_f, out_f } => {
            let wt = params[0].as_slice();
            let b = params[1].as_slice();
            for o in 0..*out_f {
                let wrow = &wt[o * in_f..(o + 1) * in_f];
                let mut acc = b[o];
                for (&wv, &xv) in wrow.iter().zip(x.iter()) {
                    acc += wv * xv;
                }
                y[o] = acc;
            }
        }
        Layer::UpsampleNearest2 => {
            let (c_n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (2 * h, 2 * w);
            for c in 0..c_n {
                for i in 0..oh {
                    for j in 0..ow {
                        y[c * oh * ow + i * ow + j] = x[c * h * w + (i / 2) * w + (j / 2)];
                    }
                }
            }
        }
        Layer::Tanh => {
            for (yv, &v) in y.iter_mut().zip(x.iter()) {
                *yv = v.tanh();
            }
        }
    }
}

/// Batched backward pass of one layer.
///
/// Adds parameter gradients (summed over the batch) into `param_grads` when
/// it is `Some` and returns the gradient with respect to the layer input.
pub fn backward<S: Scalar>(
    layer: &Layer,
    params: &[Tensor<S>],
    x: &Tensor<S>,
    dy: &Tensor<S>,
    mut param_grads: Option<&mut [Tensor<S>]>,
) -> Tensor<S> {
    let n = x.shape()[0];
    let in_shape = &x.shape()[1..];
    let out_shape: Vec<usize> = dy.shape()[1..].to_vec();
    let in_stride: usize = in_shape.iter().product();
    let out_stride: usize = out_shape.iter().product();
    let mut dx = Tensor::zeros(x.shape());
    for i in 0..n {
        let xi = &x.as_slice()[i * in_stride..(i + 1) * in_stride];
        let dyi = &dy.as_slice()[i * out_stride..(i + 1) * out_stride];
        let dxi_start = i * in_stride;
        backward_one(
            layer,
            params,
            in_shape,
            xi,
            dyi,
            &mut dx.as_mut_slice()[dxi_start..dxi_start + in_stride],
            param_grads.as_deref_mut(),
        );
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn backward_one<S: Scalar>(
    layer: &Layer,
    params: &[Tensor<S>],
    in_shape: &[usize],
    x: &[S],
    dy: &[S],
    dx: &mut [S],
    param_grads: Option<&mut [Tensor<S>]>,
) {
    match layer {
        Layer::Conv2d { in_c, out_c, kh, kw, stride, pad } => {
            let (h, w) = (in_shape[1], in_shape[2]);
            let oh = conv_extent(h, *kh, *stride, *pad).unwrap();
            let ow = conv_extent(w, *kw, *stride, *pad).unwrap();
            let k_len = in_c * kh * kw;
            let p_len = oh * ow;
            let wt = params[0].as_slice();
            // dcol = W^T dy, then scatter back to dx.
            let mut dcol = vec![S::ZERO; k_len * p_len];
            for o in 0..*out_c {
                let wrow = &wt[o * k_len..(o + 1) * k_len];
                let dyrow = &dy[o * p_len..(o + 1) * p_len];
                for k in 0..k_len {
                    let wv = wrow[k];
                    let drow = &mut dcol[k * p_len..(k + 1) * p_len];
                    for (dv, &gv) in drow.iter_mut().zip(dyrow.iter()) {
                        *dv += wv * gv;
                    }
                }
            }
            col2im(&dcol, *in_c, h, w, *kh, *kw, *stride, *pad, oh, ow, dx);
            if let Some(grads) = param_grads {
                let col = im2col(x, *in_c, h, w, *kh, *kw, *stride, *pad, oh, ow);
                let dw = grads[0].as_mut_slice();
                for o in 0..*out_c {
                    let dyrow = &dy[o * p_len..(o + 1) * p_len];
                    let dwrow = &mut dw[o * k_len..(o + 1) * k_len];
                    for k in 0..k_len {
                        let crow = &col[k * p_len..(k + 1) * p_len];
                        let mut acc = S::ZERO;
                        for (&cv, &gv) in crow.iter().zip(dyrow.iter()) {
                            acc += cv * gv;
                        }
                        dwrow[k] += acc;
                    }
                }
                let db = grads[1].as_mut_slice();
                for o in 0..*out_c {
                    let dyrow = &dy[o * p_len..(o + 1) * p_len];
                    let mut acc = S::ZERO;
                    for &gv in dyrow {
                        acc += gv;
                    }
                    db[o] += acc;
                }
            }
        }
        Layer::InstanceNorm2d { channels } => {
            let hw = in_shape[1] * in_shape[2];
            let gamma = params[0].as_slice();
            let inv_m = S::from_f64(1.0 / hw as f64);
            let eps = S::from_f64(INSTANCE_NORM_EPS);
            for c in 0..*channels {
                let xs = &x[c * hw..(c + 1) * hw];
                let dys = &dy[c * hw..(c + 1) * hw];
                let dxs = &mut dx[c * hw..(c + 1) * hw];
                let mut mean = S::ZERO;
                for &v in xs {
                    mean += v;
                }
                mean *= inv_m;
                let mut var = S::ZERO;
                for &v in xs {
                    let d = v - mean;
                    var += d * d;
                }
                var *= inv_m;
                let inv_std = S::ONE / (var + eps).sqrt();
                // dxhat aggregates with xhat recomputed on the fly.
                let mut sum_dxhat = S::ZERO;
                let mut sum_dxhat_xhat = S::ZERO;
                for (&v, &g) in xs.iter().zip(dys.iter()) {
                    let xhat = (v - mean) * inv_std;
                    let dxhat = g * gamma[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                for ((dv, &v), &g) in dxs.iter_mut().zip(xs.iter()).zip(dys.iter()) {
                    let xhat = (v - mean) * inv_std;
                    let dxhat = g * gamma[c];
                    *dv = (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) * inv_m) * inv_std;
                }
            }
            if let Some(grads) = param_grads {
                let (g0, g1) = grads.split_at_mut(1);
                let dgamma = g0[0].as_mut_slice();
                let dbeta = g1[0].as_mut_slice();
                for c in 0..*channels {
                    let xs = &x[c * hw..(c + 1) * hw];
                    let dys = &dy[c * hw..(c + 1) * hw];
                    let mut mean = S::ZERO;
                    for &v in xs {
                        mean += v;
                    }
                    mean *= inv_m;
                    let mut var = S::ZERO;
                    for &v in xs {
                        let d = v - mean;
                        var += d * d;
                    }
                    var *= inv_m;
                    let inv_std = S::ONE / (var + eps).sqrt();
                    let mut dg = S::ZERO;
                    let mut db = S::ZERO;
                    for (&v, &g) in xs.iter().zip(dys.iter()) {
                        dg += g * (v - mean) * inv_std;
                        db += g;
                    }
                    dgamma[c] += dg;
                    dbeta[c] += db;
                }
            }
        }
        Layer::Relu => {
            for ((dv, &v), &g) in dx.iter_mut().zip(x.iter()).zip(dy.iter()) {
                *dv = if v.value() > 0.0 { g } else { S::ZERO };
            }
        }
        Layer::AvgPool2d { k } => {
            let (c_n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / k, w / k);
            let inv = S::from_f64(1.0 / (k * k) as f64);
            for c in 0..c_n {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let g = dy[c * oh * ow + oi * ow + oj] * inv;
                        for di in 0..*k {
                            for dj in 0..*k {
                                dx[c * h * w + (oi * k + di) * w + (oj * k + dj)] = g;
                            }
                        }
                    }
                }
            }
        }
        Layer::Flatten | Layer::Reshape { .. } => {
            dx.copy_from_slice(dy);
        }
        Layer::Linear { in_f, out_f } => {
            let wt = params[0].as_slice();
            for o in 0..*out_f {
                let g = dy[o];
                let wrow = &wt[o * in_f..(o + 1) * in_f];
                for (dv, &wv) in dx.iter_mut().zip(wrow.iter()) {
                    *dv += wv * g;
                }
            }
            if let Some(grads) = param_grads {
                let dw = grads[0].as_mut_slice();
                for o in 0..*out_f {
                    let g = dy[o];
                    let dwrow = &mut dw[o * in_f..(o + 1) * in_f];
                    for (dv, &xv) in dwrow.iter_mut().zip(x.iter()) {
                        *dv += xv * g;
                    }
                }
                let db = grads[1].as_mut_slice();
                for o in 0..*out_f {
                    db[o] += dy[o];
                }
            }
        }
        Layer::UpsampleNearest2 => {
            let (c_n, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (2 * h, 2 * w);
            for c in 0..c_n {
                for i in 0..oh {
                    for j in 0..ow {
                        dx[c * h * w + (i / 2) * w + (j / 2)] +=
                            dy[c * oh * ow + i * ow + j];
                    }
                }
            }
        }
        Layer::Tanh => {
            for ((dv, &v), &g) in dx.iter_mut().zip(x.iter()).zip(dy.iter()) {
                let t = v.tanh();
                *dv = g * (S::ONE - t * t);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<S> {
    let p_len = oh * ow;
    let mut col = vec![S::ZERO; in_c * kh * kw * p_len];
    for c in 0..in_c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * p_len;
                for oi in 0..oh {
                    let si = (oi * stride + ki) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let sj = (oj * stride + kj) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        col[row + oi * ow + oj] = x[c * h * w + si as usize * w + sj as usize];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [S],
) {
    let p_len = oh * ow;
    for c in 0..in_c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * p_len;
                for oi in 0..oh {
                    let si = (oi * stride + ki) as isize - pad as isize;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let sj = (oj * stride + kj) as isize - pad as isize;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        dx[c * h * w + si as usize * w + sj as usize] += col[row + oi * ow + oj];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_matches_reference_cases() {
        // 3x3 stride 1 pad 1 preserves size.
        assert_eq!(conv_extent(14, 3, 1, 1), Some(14));
        // 5x5 pad 2 preserves size.
        assert_eq!(conv_extent(28, 5, 1, 2), Some(28));
        // 5x5 pad 0 shrinks by 4.
        assert_eq!(conv_extent(14, 5, 1, 0), Some(10));
        assert_eq!(conv_extent(2, 5, 1, 0), None);
    }

    #[test]
    fn linear_forward_small_case() {
        let layer = Layer::Linear { in_f: 2, out_f: 2 };
        let w = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = forward(&layer, &[w, b], &x);
        assert_eq!(y.as_slice(), &[3.5, 6.5]);
    }

    #[test]
    fn instance_norm_matches_hand_computed_case() {
        // One channel 2x2 input [1,2,3,4], gamma 1.5, beta 0.25.
        let layer = Layer::InstanceNorm2d { channels: 1 };
        let gamma = Tensor::from_vec(&[1], vec![1.5f64]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![0.25f64]).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = forward(&layer, &[gamma, beta], &x);
        let want = [
            -1.7624531299533905,
            -0.42081770998446344,
            0.9208177099844634,
            2.2624531299533905,
        ];
        for (got, want) in y.as_slice().iter().zip(want.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn avgpool_drops_partial_windows() {
        let layer = Layer::AvgPool2d { k: 2 };
        // 1 channel 3x3; only the top-left 2x2 window survives.
        let x = Tensor::from_vec(
            &[1, 1, 3, 3],
            vec![1.0f64, 2.0, 9.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0],
        )
        .unwrap();
        let y = forward(&layer, &[], &x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.as_slice(), &[2.5]);
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let up = Layer::UpsampleNearest2;
        let pool = Layer::AvgPool2d { k: 2 };
        let x =
            Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, -2.0, 0.5, 3.0]).unwrap();
        let y = forward(&up, &[], &x);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let z = forward(&pool, &[], &y);
        assert_eq!(z.as_slice(), x.as_slice());
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // 1x1 kernel with weight 1 reproduces the input.
        let layer = Layer::Conv2d { in_c: 1, out_c: 1, kh: 1, kw: 1, stride: 1, pad: 0 };
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f64]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let x = Tensor::from_vec(&[2, 1, 2, 2], (1..=8).map(|i| i as f64).collect()).unwrap();
        let y = forward(&layer, &[w, b], &x);
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn conv_padding_sums_neighborhood() {
        // 3x3 all-ones kernel on a 2x2 input with pad 1: each output equals
        // the sum of the input cells in its 3x3 window.
        let layer = Layer::Conv2d { in_c: 1, out_c: 1, kh: 3, kw: 3, stride: 1, pad: 1 };
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = forward(&layer, &[w, b], &x);
        // All four outputs see the whole input because of padding.
        assert_eq!(y.as_slice(), &[10.0, 10.0, 10.0, 10.0]);
    }
}
