use crate::error::{Error, Result};
use crate::nn::layers::{self, Layer};
use crate::scalar::{Dual, Scalar};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Examples processed per forward/backward chunk. Bounds activation memory;
/// results are independent of the chunk size because no layer couples
/// examples.
const MICRO_BATCH: usize = 32;

/// A feed-forward stack with a fixed per-example input shape.
///
/// Parameters live outside the network in a flat `Vec<Tensor>` ordered by
/// layer; [`Network::param_shapes`] fixes the layout.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    /// Per-example shape of layer inputs; entry 0 is the network input,
    /// entry i+1 the output of layer i.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "input shape must be nonempty and positive, got {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Network { layers, shapes })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Shapes of all parameter tensors in layer order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Index of the first parameter tensor of each layer.
    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += layer.param_shapes().len();
        }
        offsets
    }

    /// Kaiming-normal initialization: weights N(0, 2/fan_in), biases zero,
    /// normalization scales one and shifts zero.
    pub fn init_params<S: Scalar>(&self, rng: &mut impl Rng) -> Vec<Tensor<S>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { in_c, out_c, kh, kw, .. } => {
                    let fan_in = in_c * kh * kw;
                    out.push(gaussian_tensor(&[*out_c, *in_c, *kh, *kw], fan_in, rng));
                    out.push(Tensor::zeros(&[*out_c]));
                }
                Layer::Linear { in_f, out_f } => {
                    out.push(gaussian_tensor(&[*out_f, *in_f], *in_f, rng));
                    out.push(Tensor::zeros(&[*out_f]));
                }
                Layer::InstanceNorm2d { channels } => {
                    out.push(Tensor::full(&[*channels], S::ONE));
                    out.push(Tensor::zeros(&[*channels]));
                }
                _ => {}
            }
        }
        out
    }

    fn check_batch<S: Scalar>(&self, x: &Tensor<S>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != self.shapes[0].len() + 1 || shape[1..] != self.shapes[0][..] {
            return Err(Error::ShapeMismatch {
                what: "network input batch".into(),
                expected: self.shapes[0].clone(),
                got: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Forward pass over a whole batch, keeping every layer input for a
    /// later backward pass.
    pub fn forward_cached<S: Scalar>(
        &self,
        params: &[Tensor<S>],
        x: &Tensor<S>,
    ) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
        self.check_batch(x)?;
        let offsets = self.param_offsets();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let p = &params[offsets[li]..offsets[li] + layer.param_shapes().len()];
            let next = layers::forward(layer, p, &cur);
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, inputs))
    }

    /// Forward pass without caching, chunked to bound memory.
    pub fn forward<S: Scalar>(&self, params: &[Tensor<S>], x: &Tensor<S>) -> Result<Tensor<S>> {
        let n = self.check_batch(x)?;
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(self.output_shape());
        let mut out = Tensor::zeros(&out_shape);
        let out_stride: usize = self.output_shape().iter().product();
        for (start, chunk) in chunk_rows(x, MICRO_BATCH) {
            let (y, _) = self.forward_cached(params, &chunk)?;
            out.as_mut_slice()[start * out_stride..start * out_stride + y.numel()]
                .copy_from_slice(y.as_slice());
        }
        Ok(out)
    }

    /// Backward pass for a cached forward. Returns parameter gradients
    /// (summed over the batch) when requested, plus the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        params: &[Tensor<S>],
        inputs: &[Tensor<S>],
        dout: &Tensor<S>,
        want_param_grads: bool,
    ) -> (Option<Vec<Tensor<S>>>, Tensor<S>) {
        let offsets = self.param_offsets();
        let mut pgrads: Option<Vec<Tensor<S>>> = want_param_grads
            .then(|| self.param_shapes().iter().map(|s| Tensor::zeros(s)).collect());
        let mut grad = dout.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let n_p = layer.param_shapes().len();
            let p = &params[offsets[li]..offsets[li] + n_p];
            let slot = pgrads.as_mut().map(|g| &mut g[offsets[li]..offsets[li] + n_p]);
            grad = layers::backward(layer, p, &inputs[li], &grad, slot);
        }
        (pgrads, grad)
    }
}

fn gaussian_tensor<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::from_f64(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("constructed length matches")
}

/// Iterates row chunks of a batched tensor as owned tensors.
fn chunk_rows<S: Scalar>(x: &Tensor<S>, chunk: usize) -> Vec<(usize, Tensor<S>)> {
    let n = x.shape()[0];
    let stride: usize = x.shape()[1..].iter().product();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let mut shape = vec![len];
        shape.extend_from_slice(&x.shape()[1..]);
        let data = x.as_slice()[start * stride..(start + len) * stride].to_vec();
        out.push((start, Tensor::from_vec(&shape, data).unwrap()));
        start += len;
    }
    out
}

/// Copies selected rows of a batched tensor into a new batch.
pub fn gather_rows<S: Scalar>(x: &Tensor<S>, rows: &[usize]) -> Tensor<S> {
    let stride: usize = x.shape()[1..].iter().product();
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(&x.shape()[1..]);
    let mut data = Vec::with_capacity(rows.len() * stride);
    for &r in rows {
        data.extend_from_slice(&x.as_slice()[r * stride..(r + 1) * stride]);
    }
    Tensor::from_vec(&shape, data).expect("constructed length matches")
}

/// Softmax cross-entropy, summed over the batch (not averaged).
///
/// Returns the summed loss and the gradient of that sum with respect to the
/// logits. Callers divide by their own normalizer.
pub fn softmax_ce_sum<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "logits".into(),
            expected: vec![labels.len(), 0],
            got: shape.to_vec(),
        });
    }
    let (n, classes) = (shape[0], shape[1]);
    let mut loss = S::ZERO;
    let mut dlogits = Tensor::zeros(shape);
    for i in 0..n {
        let y = labels[i];
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let row = &logits.as_slice()[i * classes..(i + 1) * classes];
        let mut m = row[0];
        for &v in &row[1..] {
            m = m.max_by_value(v);
        }
        let mut denom = S::ZERO;
        for &v in row {
            denom += (v - m).exp();
        }
        let lse = m + denom.ln();
        loss += lse - row[y];
        let drow = &mut dlogits.as_mut_slice()[i * classes..(i + 1) * classes];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            drow[j] = if j == y { p - S::ONE } else { p };
        }
    }
    Ok((loss, dlogits))
}

/// Mean softmax cross-entropy over the batch with its logit gradient.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let (sum, mut dsum) = softmax_ce_sum(logits, labels)?;
    let inv = S::from_f64(1.0 / labels.len().max(1) as f64);
    dsum.scale(inv);
    Ok((sum * inv, dsum))
}

/// Mean cross-entropy loss over `(x, labels)` and its gradient with respect
/// to every parameter tensor. Chunked internally.
pub fn loss_and_grad<S: Scalar>(
    net: &Network,
    params: &[Tensor<S>],
    x: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Vec<Tensor<S>>)> {
    let n = labels.len();
    if x.shape()[0] != n || n == 0 {
        return Err(Error::CountMismatch { images: x.shape()[0], labels: n });
    }
    let mut total = S::ZERO;
    let mut grads: Vec<Tensor<S>> = net.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
    for (start, chunk) in chunk_rows(x, MICRO_BATCH) {
        let chunk_labels = &labels[start..start + chunk.shape()[0]];
        let (logits, cache) = net.forward_cached(params, &chunk)?;
        let (loss, dlogits) = softmax_ce_sum(&logits, chunk_labels)?;
        total += loss;
        let (pg, _) = net.backward(params, &cache, &dlogits, true);
        for (acc, g) in grads.iter_mut().zip(pg.unwrap().into_iter()) {
            acc.axpy(S::ONE, &g);
        }
    }
    let inv = S::from_f64(1.0 / n as f64);
    for g in grads.iter_mut() {
        g.scale(inv);
    }
    Ok((total * inv, grads))
}

/// Per-example cross-entropy gradients: element i is the gradient of example
/// i's own loss (not scaled by the batch size).
pub fn per_example_grads<S: Scalar>(
    net: &Network,
    params: &[Tensor<S>],
    x: &Tensor<S>,
    labels: &[usize],
) -> Result<Vec<Vec<Tensor<S>>>> {
    let n = labels.len();
    if x.shape()[0] != n {
        return Err(Error::CountMismatch { images: x.shape()[0], labels: n });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xi = gather_rows(x, &[i]);
        let (logits, cache) = net.forward_cached(params, &xi)?;
        let (_, dlogits) = softmax_ce_sum(&logits, &labels[i..i + 1])?;
        let (pg, _) = net.backward(params, &cache, &dlogits, true);
        out.push(pg.unwrap());
    }
    Ok(out)
}

/// Directional second-order pass: the gradient with respect to the input of
/// the directional derivative `<direction, grad_params(mean CE)>`.
///
/// Computed by running the forward and input-backward passes on dual
/// numbers whose parameter tangents carry `direction`; the tangent of the
/// input gradient is, by symmetry of mixed partials, the desired gradient.
pub fn input_grad_tangent<S: Scalar>(
    net: &Network,
    params: &[Tensor<S>],
    direction: &[Tensor<S>],
    x: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>> {
    let n = labels.len();
    if x.shape()[0] != n || n == 0 {
        return Err(Error::CountMismatch { images: x.shape()[0], labels: n });
    }
    if direction.len() != params.len() {
        return Err(Error::ShapeMismatch {
            what: "tangent direction tensor count".into(),
            expected: vec![params.len()],
            got: vec![direction.len()],
        });
    }
    let dual_params: Vec<Tensor<Dual<S>>> = params
        .iter()
        .zip(direction.iter())
        .map(|(p, d)| {
            assert_eq!(p.shape(), d.shape(), "direction shape mismatch");
            let data = p
                .as_slice()
                .iter()
                .zip(d.as_slice().iter())
                .map(|(&v, &t)| Dual::new(v, t))
                .collect();
            Tensor::from_vec(p.shape(), data).unwrap()
        })
        .collect();

    let mut out = Tensor::zeros(x.shape());
    let stride: usize = x.shape()[1..].iter().product();
    for (start, chunk) in chunk_rows(x, MICRO_BATCH) {
        let chunk_labels = &labels[start..start + chunk.shape()[0]];
        let dual_x = chunk.map_into_dual();
        let (logits, cache) = net.forward_cached(&dual_params, &dual_x)?;
        let (_, dlogits) = softmax_ce_sum(&logits, chunk_labels)?;
        let (_, dinput) = net.backward(&dual_params, &cache, &dlogits, false);
        let dst = &mut out.as_mut_slice()[start * stride..start * stride + dinput.numel()];
        for (o, d) in dst.iter_mut().zip(dinput.as_slice().iter()) {
            *o = d.t;
        }
    }
    // The matched gradient is of the mean loss.
    out.scale(S::from_f64(1.0 / n as f64));
    Ok(out)
}

impl<S: Scalar> Tensor<S> {
    /// Lifts to duals with zero tangent.
    fn map_into_dual(&self) -> Tensor<Dual<S>> {
        Tensor::from_vec(self.shape(), self.as_slice().iter().map(|&v| Dual::constant(v)).collect())
            .unwrap()
    }
}

/// Class predictions by logit argmax; ties resolve to the lowest index.
pub fn predict<S: Scalar>(
    net: &Network,
    params: &[Tensor<S>],
    x: &Tensor<S>,
) -> Result<Vec<usize>> {
    let logits = net.forward(params, x)?;
    let classes = net.output_shape()[0];
    Ok(logits
        .as_slice()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if v.value() > row[best].value() {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Named classifier families usable for distillation and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Convnet,
    Lenet,
    Mlp,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Convnet => "convnet",
            Arch::Lenet => "lenet",
            Arch::Mlp => "mlp",
        }
    }

    /// Builds a classifier of this family for the given per-example input
    /// shape. `conv_width` feeds the convnet; `mlp_hidden` feeds the mlp.
    pub fn build(
        self,
        input_shape: &[usize],
        classes: usize,
        conv_width: usize,
        mlp_hidden: &[usize],
    ) -> Result<Network> {
        match self {
            Arch::Convnet => convnet(input_shape, classes, conv_width),
            Arch::Lenet => lenet5(input_shape, classes),
            Arch::Mlp => mlp(input_shape, classes, mlp_hidden),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convnet" => Ok(Arch::Convnet),
            "lenet" => Ok(Arch::Lenet),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Three blocks of conv 3x3 / instance norm / relu / 2x average pool, then a
/// linear head.
pub fn convnet(input_shape: &[usize], classes: usize, width: usize) -> Result<Network> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    let [c, _, _] = match input_shape {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::ShapeMismatch {
                what: "convnet input".into(),
                expected: vec![0, 0, 0],
                got: other.to_vec(),
            })
        }
    };
    let mut layers = Vec::new();
    let mut in_c = c;
    for _ in 0..3 {
        layers.push(Layer::Conv2d { in_c, out_c: width, kh: 3, kw: 3, stride: 1, pad: 1 });
        layers.push(Layer::InstanceNorm2d { channels: width });
        layers.push(Layer::Relu);
        layers.push(Layer::AvgPool2d { k: 2 });
        in_c = width;
    }
    layers.push(Layer::Flatten);
    // Resolve the flattened width by propagating shapes.
    let probe = Network::new(input_shape.to_vec(), layers.clone())?;
    let flat = probe.output_shape()[0];
    layers.push(Layer::Linear { in_f: flat, out_f: classes });
    Network::new(input_shape.to_vec(), layers)
}

/// The classic 5-layer convnet: two 5x5 conv/pool stages and three linear
/// layers.
pub fn lenet5(input_shape: &[usize], classes: usize) -> Result<Network> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    let c = match input_shape {
        [c, _, _] => *c,
        other => {
            return Err(Error::ShapeMismatch {
                what: "lenet input".into(),
                expected: vec![0, 0, 0],
                got: other.to_vec(),
            })
        }
    };
    let mut layers = vec![
        Layer::Conv2d { in_c: c, out_c: 6, kh: 5, kw: 5, stride: 1, pad: 2 },
        Layer::Relu,
        Layer::AvgPool2d { k: 2 },
        Layer::Conv2d { in_c: 6, out_c: 16, kh: 5, kw: 5, stride: 1, pad: 0 },
        Layer::Relu,
        Layer::AvgPool2d { k: 2 },
        Layer::Flatten,
    ];
    let probe = Network::new(input_shape.to_vec(), layers.clone())?;
    let flat = probe.output_shape()[0];
    layers.extend([
        Layer::Linear { in_f: flat, out_f: 120 },
        Layer::Relu,
        Layer::Linear { in_f: 120, out_f: 84 },
        Layer::Relu,
        Layer::Linear { in_f: 84, out_f: classes },
    ]);
    Network::new(input_shape.to_vec(), layers)
}

/// Fully connected relu network; flattens any input shape.
pub fn mlp(input_shape: &[usize], classes: usize, hidden: &[usize]) -> Result<Network> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidArgument(format!(
            "hidden widths must be nonempty and positive, got {hidden:?}"
        )));
    }
    let mut layers = vec![Layer::Flatten];
    let mut in_f: usize = input_shape.iter().product();
    for &h in hidden {
        layers.push(Layer::Linear { in_f, out_f: h });
        layers.push(Layer::Relu);
        in_f = h;
    }
    layers.push(Layer::Linear { in_f, out_f: classes });
    Network::new(input_shape.to_vec(), layers)
}

/// Conditional image generator: latent and one-hot label in, image in
/// [-1, 1] out. Spatial dims of `out_shape` must be divisible by 4.
pub fn generator(
    latent_dim: usize,
    classes: usize,
    out_shape: &[usize],
    base_channels: usize,
) -> Result<Network> {
    let [c, h, w] = match out_shape {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::ShapeMismatch {
                what: "generator output".into(),
                expected: vec![0, 0, 0],
                got: other.to_vec(),
            })
        }
    };
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "generator output spatial dims must be divisible by 4, got {h}x{w}"
        )));
    }
    if base_channels % 4 != 0 || base_channels == 0 {
        return Err(Error::InvalidArgument(format!(
            "generator base channels must be a positive multiple of 4, got {base_channels}"
        )));
    }
    if latent_dim == 0 || classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "generator needs latent_dim >= 1 and classes >= 2, got {latent_dim}, {classes}"
        )));
    }
    let (h4, w4) = (h / 4, w / 4);
    let mid = base_channels / 2;
    let quarter = base_channels / 4;
    let layers = vec![
        Layer::Linear { in_f: latent_dim + classes, out_f: base_channels * h4 * w4 },
        Layer::Reshape { to: vec![base_channels, h4, w4] },
        Layer::UpsampleNearest2,
        Layer::Conv2d { in_c: base_channels, out_c: mid, kh: 3, kw: 3, stride: 1, pad: 1 },
        Layer::Relu,
        Layer::UpsampleNearest2,
        Layer::Conv2d { in_c: mid, out_c: quarter, kh: 3, kw: 3, stride: 1, pad: 1 },
        Layer::Relu,
        Layer::Conv2d { in_c: quarter, out_c: c, kh: 3, kw: 3, stride: 1, pad: 1 },
        Layer::Tanh,
    ];
    Network::new(vec![latent_dim + classes], layers)
}
