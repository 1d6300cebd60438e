//! VGG-16-topology feature extractor through `relu4_3`, with a reverse-mode
//! pass that returns gradients with respect to the input image.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, ImageTensor};
use crate::weights::ConvParams;

/// Per-channel means subtracted from `[0, 1]` RGB input.
pub const DEFAULT_MEANS: [f64; 3] = [0.485, 0.456, 0.406];

pub const CONTENT_LAYER: &str = "relu3_3";

pub const STYLE_LAYERS: [&str; 7] = [
    "relu1_2", "relu2_1", "relu2_2", "relu3_1", "relu3_3", "relu4_1", "relu4_3",
];

/// Conv layer names and output widths of VGG-16 up to `conv4_3`.
pub const VGG16_CONVS: [(&str, usize); 10] = [
    ("conv1_1", 64),
    ("conv1_2", 64),
    ("conv2_1", 128),
    ("conv2_2", 128),
    ("conv3_1", 256),
    ("conv3_2", 256),
    ("conv3_3", 256),
    ("conv4_1", 512),
    ("conv4_2", 512),
    ("conv4_3", 512),
];

/// Stride-1 cross-correlation with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// `[out][in][ky][kx]`
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv<T>),
    Relu {
        name: String,
    },
    /// 2x2 max pooling, stride 2; a trailing odd row or column is dropped.
    MaxPool {
        name: String,
    },
}

impl<T> Layer<T> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(c) => &c.name,
            Layer::Relu { name } | Layer::MaxPool { name } => name,
        }
    }
}

/// Block prefix of a `convB_I` name (`"conv3_2"` -> `Some("3")`).
fn block_of(name: &str) -> Option<&str> {
    name.strip_prefix("conv")?.split_once('_').map(|(b, _)| b)
}

fn relu_name(conv: &str) -> String {
    match conv.strip_prefix("conv") {
        Some(rest) => format!("relu{rest}"),
        None => format!("{conv}_relu"),
    }
}

#[derive(Clone, Debug)]
pub struct FeatureNet<T = f32> {
    layers: Vec<Layer<T>>,
    means: Vec<T>,
}

/// Every layer's output from one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    input_channels: usize,
    input: FeatureMap<T>,
    outputs: Vec<FeatureMap<T>>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Scalar> Trace<T> {
    /// Output of the named layer, if the pass reached it.
    pub fn get(&self, name: &str, net: &FeatureNet<T>) -> Option<&FeatureMap<T>> {
        net.layer_index(name).and_then(|i| self.outputs.get(i))
    }

    /// Hash of the piecewise-linear regime: every ReLU input sign and every
    /// max-pool argmax. Two inputs with equal patterns lie on the same linear
    /// piece of the network.
    pub fn activation_pattern(&self, net: &FeatureNet<T>) -> u64 {
        let mut h = Fnv::default();
        for (i, layer) in net.layers[..self.outputs.len()].iter().enumerate() {
            match layer {
                Layer::Relu { .. } => {
                    let input = if i == 0 {
                        &self.input
                    } else {
                        &self.outputs[i - 1]
                    };
                    input
                        .data
                        .iter()
                        .for_each(|&v| h.write(u64::from(v > T::zero())));
                }
                Layer::MaxPool { .. } => {
                    if let Some(idx) = &self.argmax[i] {
                        idx.iter().for_each(|&j| h.write(j as u64));
                    }
                }
                Layer::Conv(_) => {}
            }
        }
        h.0
    }
}

/// FNV-1a over 64-bit words.
pub(crate) struct Fnv(pub(crate) u64);

impl Default for Fnv {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub(crate) fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

impl<T: Scalar> FeatureNet<T> {
    /// Builds the layer sequence from conv parameters: each conv is followed
    /// by a ReLU (`convB_I` -> `reluB_I`), and a max-pool `poolB` is inserted
    /// wherever the block number changes between consecutive convs.
    pub fn from_conv_params(params: &[ConvParams]) -> Result<Self> {
        let first = params
            .first()
            .ok_or_else(|| Error::InvalidParam("network has no layers".into()))?;
        if first.in_channels != 1 && first.in_channels != 3 {
            return Err(Error::InvalidParam(format!(
                "first layer must take 1 or 3 channels, takes {}",
                first.in_channels
            )));
        }
        let mut layers = Vec::with_capacity(params.len() * 2 + 3);
        for (i, p) in params.iter().enumerate() {
            if p.kernel_h % 2 == 0 || p.kernel_w % 2 == 0 {
                return Err(Error::InvalidParam(format!(
                    "layer `{}` needs odd kernel sizes, has {}x{}",
                    p.name, p.kernel_h, p.kernel_w
                )));
            }
            if p.kernel.len() != p.out_channels * p.in_channels * p.kernel_h * p.kernel_w
                || p.bias.len() != p.out_channels
            {
                return Err(Error::InvalidParam(format!(
                    "layer `{}` has inconsistent parameter counts",
                    p.name
                )));
            }
            if i > 0 {
                let prev = &params[i - 1];
                if prev.out_channels != p.in_channels {
                    return Err(Error::InvalidParam(format!(
                        "`{}` outputs {} channels but `{}` expects {}",
                        prev.name, prev.out_channels, p.name, p.in_channels
                    )));
                }
                if let (Some(a), Some(b)) = (block_of(&prev.name), block_of(&p.name)) {
                    if a != b {
                        layers.push(Layer::MaxPool {
                            name: format!("pool{a}"),
                        });
                    }
                }
            }
            layers.push(Layer::Conv(Conv {
                name: p.name.clone(),
                out_channels: p.out_channels,
                in_channels: p.in_channels,
                kernel_h: p.kernel_h,
                kernel_w: p.kernel_w,
                kernel: p.kernel.iter().map(|&v| T::of(v as f64)).collect(),
                bias: p.bias.iter().map(|&v| T::of(v as f64)).collect(),
            }));
            layers.push(Layer::Relu {
                name: relu_name(&p.name),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for l in &layers {
            if !seen.insert(l.name().to_owned()) {
                return Err(Error::InvalidParam(format!(
                    "duplicate layer `{}`",
                    l.name()
                )));
            }
        }
        let means = if first.in_channels == 3 {
            DEFAULT_MEANS.iter().map(|&m| T::of(m)).collect()
        } else {
            vec![T::zero()]
        };
        Ok(Self { layers, means })
    }

    pub fn with_means(mut self, means: &[f64]) -> Result<Self> {
        if means.len() != self.input_channels() {
            return Err(Error::InvalidParam(format!(
                "expected {} means, got {}",
                self.input_channels(),
                means.len()
            )));
        }
        self.means = means.iter().map(|&m| T::of(m)).collect();
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn means(&self) -> &[T] {
        &self.means
    }

    pub fn input_channels(&self) -> usize {
        match &self.layers[0] {
            Layer::Conv(c) => c.in_channels,
            _ => unreachable!("first layer is always a conv"),
        }
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name() == name)
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.layer_index(name).is_some()
    }

    /// Conv parameters in weight-file form (scalars rounded to `f32`).
    pub fn conv_params(&self) -> Vec<ConvParams> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(ConvParams {
                    name: c.name.clone(),
                    out_channels: c.out_channels,
                    in_channels: c.in_channels,
                    kernel_h: c.kernel_h,
                    kernel_w: c.kernel_w,
                    kernel: c.kernel.iter().map(|v| v.as_f64() as f32).collect(),
                    bias: c.bias.iter().map(|v| v.as_f64() as f32).collect(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Per-channel mean subtraction; grayscale input is first replicated
    /// when the network expects color.
    pub fn preprocess(&self, img: &ImageTensor<T>) -> Result<FeatureMap<T>> {
        let img = match (img.channels(), self.input_channels()) {
            (1, 3) => img.to_rgb(),
            (a, b) if a == b => img.clone(),
            (a, b) => {
                return Err(Error::Shape(format!(
                    "network expects {b}-channel input, got {a} channels"
                )))
            }
        };
        let n = img.plane_len();
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v - self.means[i / n])
            .collect();
        Ok(FeatureMap {
            channels: img.channels(),
            height: img.height(),
            width: img.width(),
            data,
        })
    }

    fn tap_indices<'a>(&self, taps: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        taps.into_iter()
            .map(|t| {
                self.layer_index(t)
                    .ok_or_else(|| Error::UnknownTap(t.to_owned()))
            })
            .collect()
    }

    /// Smallest square input for which every layer up to `last` is non-empty.
    pub fn min_input_size(&self, last: usize) -> usize {
        let pools = self.layers[..=last]
            .iter()
            .filter(|l| matches!(l, Layer::MaxPool { .. }))
            .count();
        1 << pools
    }

    /// Runs layers `0..=last`, keeping every intermediate output.
    pub fn trace(&self, img: &ImageTensor<T>, last: usize) -> Result<Trace<T>> {
        let last = last.min(self.layers.len() - 1);
        let min = self.min_input_size(last);
        if img.height() < min || img.width() < min {
            return Err(Error::ImageTooSmall {
                height: img.height(),
                width: img.width(),
                min,
            });
        }
        let input = self.preprocess(img)?;
        let mut outputs: Vec<FeatureMap<T>> = Vec::with_capacity(last + 1);
        let mut argmax = Vec::with_capacity(last + 1);
        for layer in &self.layers[..=last] {
            let x = outputs.last().unwrap_or(&input);
            let (y, idx) = match layer {
                Layer::Conv(c) => (conv_forward(c, x), None),
                Layer::Relu { .. } => (
                    FeatureMap {
                        data: x.data.iter().map(|&v| v.max(T::zero())).collect(),
                        ..*x
                    },
                    None,
                ),
                Layer::MaxPool { .. } => {
                    let (y, idx) = pool_forward(x);
                    (y, Some(idx))
                }
            };
            outputs.push(y);
            argmax.push(idx);
        }
        Ok(Trace {
            input_channels: img.channels(),
            input,
            outputs,
            argmax,
        })
    }

    /// Activations at the requested taps.
    pub fn forward(
        &self,
        img: &ImageTensor<T>,
        taps: &[&str],
    ) -> Result<BTreeMap<String, FeatureMap<T>>> {
        let idx = self.tap_indices(taps.iter().copied())?;
        let Some(&last) = idx.iter().max() else {
            return Ok(BTreeMap::new());
        };
        let trace = self.trace(img, last)?;
        Ok(taps
            .iter()
            .zip(idx)
            .map(|(t, i)| (t.to_string(), trace.outputs[i].clone()))
            .collect())
    }

    /// Gradient of `Σ_taps <tap_grads[t], activation[t]>` with respect to
    /// the input image.
    pub fn backward(
        &self,
        img: &ImageTensor<T>,
        tap_grads: &BTreeMap<String, FeatureMap<T>>,
    ) -> Result<ImageTensor<T>> {
        let idx = self.tap_indices(tap_grads.keys().map(String::as_str))?;
        let Some(&last) = idx.iter().max() else {
            return Ok(img.zeros_like());
        };
        let trace = self.trace(img, last)?;
        self.backward_trace(&trace, tap_grads)
    }

    /// Same as [`FeatureNet::backward`], reusing a forward trace.
    pub fn backward_trace(
        &self,
        trace: &Trace<T>,
        tap_grads: &BTreeMap<String, FeatureMap<T>>,
    ) -> Result<ImageTensor<T>> {
        let mut seeds: Vec<Option<&FeatureMap<T>>> = vec![None; trace.outputs.len()];
        for (name, g) in tap_grads {
            let i = self
                .layer_index(name)
                .filter(|&i| i < trace.outputs.len())
                .ok_or_else(|| Error::UnknownTap(name.clone()))?;
            if g.shape() != trace.outputs[i].shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, activation has {:?}",
                    g.shape(),
                    trace.outputs[i].shape()
                )));
            }
            seeds[i] = Some(g);
        }
        let Some(last) = seeds.iter().rposition(Option::is_some) else {
            let i = &trace.input;
            return ImageTensor::zeros(i.height, i.width, trace.input_channels);
        };

        let (c, h, w) = trace.outputs[last].shape();
        let mut grad = FeatureMap::zeros(c, h, w);
        for i in (0..=last).rev() {
            if let Some(seed) = seeds[i] {
                for (g, s) in grad.data.iter_mut().zip(&seed.data) {
                    *g += *s;
                }
            }
            let input = if i == 0 {
                &trace.input
            } else {
                &trace.outputs[i - 1]
            };
            grad = match &self.layers[i] {
                Layer::Conv(conv) => conv_backward(conv, &grad, input),
                Layer::Relu { .. } => FeatureMap {
                    data: grad
                        .data
                        .iter()
                        .zip(&input.data)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    ..grad
                },
                Layer::MaxPool { .. } => {
                    let idx = trace.argmax[i].as_ref().expect("pool layers record argmax");
                    pool_backward(&grad, idx, input)
                }
            };
        }

        let img = ImageTensor::new(grad.height, grad.width, grad.channels, grad.data)?;
        if trace.input_channels == 1 && img.channels() == 3 {
            // Replication fan-out: sum the three channel gradients.
            let n = img.plane_len();
            let d = img.data();
            let summed = (0..n).map(|p| d[p] + d[n + p] + d[2 * n + p]).collect();
            return ImageTensor::new(img.height(), img.width(), 1, summed);
        }
        Ok(img)
    }
}

fn conv_forward<T: Scalar>(conv: &Conv<T>, x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (x.height, x.width);
    let hw = h * w;
    let (kh, kw) = (conv.kernel_h, conv.kernel_w);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![T::zero(); conv.out_channels * hw];
    par::for_each_chunk(&mut out, hw, |oc, plane| {
        plane.fill(conv.bias[oc]);
        for ic in 0..conv.in_channels {
            let src = &x.data[ic * hw..(ic + 1) * hw];
            let base = (oc * conv.in_channels + ic) * kh * kw;
            for ky in 0..kh {
                let dy = ky as isize - ph;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pw;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let k = conv.kernel[base + ky * kw + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += k * v;
                        }
                    }
                }
            }
        }
    });
    FeatureMap {
        channels: conv.out_channels,
        height: h,
        width: w,
        data: out,
    }
}

/// Output positions `[lo, hi)` whose source `pos + offset` lies in `0..n`.
#[inline]
fn valid_range(n: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

fn conv_backward<T: Scalar>(
    conv: &Conv<T>,
    grad: &FeatureMap<T>,
    input: &FeatureMap<T>,
) -> FeatureMap<T> {
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let (kh, kw) = (conv.kernel_h, conv.kernel_w);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![T::zero(); conv.in_channels * hw];
    par::for_each_chunk(&mut out, hw, |ic, plane| {
        for oc in 0..conv.out_channels {
            let g = &grad.data[oc * hw..(oc + 1) * hw];
            let base = (oc * conv.in_channels + ic) * kh * kw;
            for ky in 0..kh {
                let dy = ky as isize - ph;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pw;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let k = conv.kernel[base + ky * kw + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        let src = &g[y * w + x0..y * w + x1];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += k * v;
                        }
                    }
                }
            }
        }
    });
    FeatureMap {
        channels: conv.in_channels,
        height: h,
        width: w,
        data: out,
    }
}

fn pool_forward<T: Scalar>(x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<usize>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    let mut argmax = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let plane = x.plane(c);
        for y in 0..oh {
            for xo in 0..ow {
                let cands = [
                    (2 * y) * x.width + 2 * xo,
                    (2 * y) * x.width + 2 * xo + 1,
                    (2 * y + 1) * x.width + 2 * xo,
                    (2 * y + 1) * x.width + 2 * xo + 1,
                ];
                // Strict comparison keeps the first maximum in row-major order.
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                data.push(plane[best]);
                argmax.push(best);
            }
        }
    }
    (
        FeatureMap {
            channels: x.channels,
            height: oh,
            width: ow,
            data,
        },
        argmax,
    )
}

fn pool_backward<T: Scalar>(
    grad: &FeatureMap<T>,
    argmax: &[usize],
    input: &FeatureMap<T>,
) -> FeatureMap<T> {
    let mut out = FeatureMap::zeros(input.channels, input.height, input.width);
    let (n_out, n_in) = (grad.spatial(), input.spatial());
    for (i, (&g, &src)) in grad.data.iter().zip(argmax).enumerate() {
        out.data[(i / n_out) * n_in + src] += g;
    }
    out
}

/// Conv parameters of a VGG-16-shaped network with every width divided by
/// `scale`, drawn from a seeded normal distribution with He fan-in scaling.
pub fn test_net_params(seed: u64, scale: usize) -> Result<Vec<ConvParams>> {
    if scale == 0 || 64 % scale != 0 {
        return Err(Error::InvalidParam(format!(
            "scale must divide 64, got {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_channels = 3;
    let mut params = Vec::with_capacity(VGG16_CONVS.len());
    for (name, width) in VGG16_CONVS {
        let out_channels = width / scale;
        let fan_in = (in_channels * 9) as f64;
        let std = (2.0 / fan_in).sqrt();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let kernel = (0..out_channels * in_channels * 9)
            .map(|_| (normal() * std) as f32)
            .collect();
        let bias = (0..out_channels)
            .map(|_| (normal() * 0.01) as f32)
            .collect();
        params.push(ConvParams {
            name: name.to_owned(),
            out_channels,
            in_channels,
            kernel_h: 3,
            kernel_w: 3,
            kernel,
            bias,
        });
        in_channels = out_channels;
    }
    Ok(params)
}

/// Seeded random-weight network with VGG-16 layer names, for tests and demos.
pub fn make_test_net<T: Scalar>(seed: u64, scale: usize) -> Result<FeatureNet<T>> {
    FeatureNet::from_conv_params(&test_net_params(seed, scale)?)
}
