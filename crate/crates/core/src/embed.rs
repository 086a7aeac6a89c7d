//! The shared branch network phi: an ordered stack of conv / ReLU / max-pool
//! layers over the tensor kernel, with manual backward, deterministic
//! initialization, and a versioned binary parameter encoding.
//!
//! The reference stack mirrors the baseline fully-convolutional template
//! matcher: total stride 8, a 127x127 exemplar embeds to 6x6 and a 255x255
//! search image to 22x22, giving a 17x17 score map. The desk preset keeps
//! the same shape chain with far fewer channels for CPU-scale runs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{
    conv2d, conv2d_grad, max_pool, max_pool_grad, max_pool_values, relu, relu_grad, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
}

/// Parameters of one conv layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

/// The embedding network: layer specs, conv parameters in layer order, and
/// the scalar score bias added on top of the cross-correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNet<T = f32> {
    layers: Vec<LayerSpec>,
    conv: Vec<ConvParams<T>>,
    score_bias: T,
    in_channels: usize,
}

/// Reference architecture: conv 11x11/2 -> 96, pool 3/2, conv 5x5 -> 256,
/// pool 3/2, then three 3x3 convs (192, 192, 128), ReLU after every conv
/// except the last. Total stride 8.
pub fn reference_arch() -> Vec<LayerSpec> {
    arch_with_channels([96, 256, 192, 192, 128])
}

/// Desk preset: same layer geometry as [`reference_arch`] with small
/// channel counts (16/32/32/32/16) so training fits in CPU minutes.
pub fn desk_arch() -> Vec<LayerSpec> {
    arch_with_channels([16, 32, 32, 32, 16])
}

fn arch_with_channels(ch: [usize; 5]) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            out_channels: ch[0],
            kernel: 11,
            stride: 2,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            window: 3,
            stride: 2,
        },
        LayerSpec::Conv {
            out_channels: ch[1],
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            window: 3,
            stride: 2,
        },
        LayerSpec::Conv {
            out_channels: ch[2],
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Conv {
            out_channels: ch[3],
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Conv {
            out_channels: ch[4],
            kernel: 3,
            stride: 1,
        },
    ]
}

/// Spatial size after one layer, or None if the input is too small.
fn layer_out_len(spec: &LayerSpec, len: usize) -> Option<usize> {
    match *spec {
        LayerSpec::Conv { kernel, stride, .. } => {
            (kernel <= len && stride > 0).then(|| (len - kernel) / stride + 1)
        }
        LayerSpec::Relu => Some(len),
        LayerSpec::MaxPool { window, stride } => {
            (window <= len && stride > 0).then(|| (len - window) / stride + 1)
        }
    }
}

/// Gaussian init with std sqrt(2 / fan_in) per conv layer, zero biases,
/// zero score bias; fully determined by the seed.
///
/// The final conv layer's std is additionally divided by the square root
/// of the exemplar feature entry count. The similarity head is bilinear in
/// the two feature maps, so plain He init there produces raw scores in the
/// hundreds and no stable learning rate exists; the extra factor puts the
/// initial score scale at O(1), the role the baseline implementation gives
/// its fixed response gain.
pub fn init_params<T: Scalar>(
    specs: &[LayerSpec],
    in_channels: usize,
    seed: u64,
) -> Result<EmbedNet<T>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("empty layer spec chain".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let mut conv = Vec::new();
    let mut channels = in_channels;
    for (idx, spec) in specs.iter().enumerate() {
        match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "layer {idx}: conv fields must be positive"
                    )));
                }
                let fan_in = (channels * kernel * kernel) as f64;
                let std = math::sqrt(2.0 / fan_in);
                let kernels =
                    Tensor::from_fn([out_channels, channels, kernel, kernel], |_, _, _, _| {
                        T::from_f64(rng.gaussian() * std)
                    });
                conv.push(ConvParams {
                    kernels,
                    bias: vec![T::ZERO; out_channels],
                });
                channels = out_channels;
            }
            LayerSpec::Relu => {}
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "layer {idx}: pool fields must be positive"
                    )));
                }
            }
        }
    }
    let mut net = EmbedNet {
        layers: specs.to_vec(),
        conv,
        score_bias: T::ZERO,
        in_channels,
    };
    // The chain must shrink an exemplar-sized input and leave the search
    // feature strictly larger, otherwise cross-correlation is impossible.
    let (fc, eh, ew) = net.feature_shape(EXEMPLAR_INPUT, EXEMPLAR_INPUT)?;
    let (_, sh, _) = net.feature_shape(SEARCH_INPUT, SEARCH_INPUT)?;
    if eh >= EXEMPLAR_INPUT || sh <= eh {
        return Err(Error::InvalidArgument(format!(
            "layer chain maps {EXEMPLAR_INPUT}->{eh} and {SEARCH_INPUT}->{sh}; \
             need a shrinking exemplar and a strictly larger search feature"
        )));
    }
    let entries = (fc * eh * ew) as f64;
    let gain = T::from_f64(1.0 / math::sqrt(entries));
    if let Some(last) = net.conv.last_mut() {
        for v in last.kernels.data_mut() {
            *v *= gain;
        }
    }
    Ok(net)
}

/// Canonical exemplar / search input sizes.
pub const EXEMPLAR_INPUT: usize = 127;
pub const SEARCH_INPUT: usize = 255;

/// [`init_params`] without the 127/255 viability check, for small test and
/// verification networks that never see full-size inputs.
pub fn init_params_unchecked<T: Scalar>(
    specs: &[LayerSpec],
    in_channels: usize,
    seed: u64,
) -> EmbedNet<T> {
    let mut rng = Rng::from_seed(seed);
    let mut conv = Vec::new();
    let mut channels = in_channels;
    for spec in specs {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } = *spec
        {
            let fan_in = (channels * kernel * kernel) as f64;
            let std = math::sqrt(2.0 / fan_in);
            conv.push(ConvParams {
                kernels: Tensor::from_fn([out_channels, channels, kernel, kernel], |_, _, _, _| {
                    T::from_f64(rng.gaussian() * std)
                }),
                bias: vec![T::ZERO; out_channels],
            });
            channels = out_channels;
        }
    }
    EmbedNet {
        layers: specs.to_vec(),
        conv,
        score_bias: T::ZERO,
        in_channels,
    }
}

impl<T: Scalar> EmbedNet<T> {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }
    pub fn conv_params(&self) -> &[ConvParams<T>] {
        &self.conv
    }
    pub fn conv_params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.conv
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn score_bias(&self) -> T {
        self.score_bias
    }
    pub fn set_score_bias(&mut self, b: T) {
        self.score_bias = b;
    }

    /// Product of all layer strides.
    pub fn total_stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { stride, .. } => stride,
                LayerSpec::MaxPool { stride, .. } => stride,
                LayerSpec::Relu => 1,
            })
            .product()
    }

    /// Feature shape `(channels, h, w)` for an input of the given size.
    pub fn feature_shape(&self, in_h: usize, in_w: usize) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (in_h, in_w);
        let mut channels = self.in_channels;
        for (idx, spec) in self.layers.iter().enumerate() {
            h = layer_out_len(spec, h).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "input {in_h}x{in_w} too small at layer {idx} ({spec:?})"
                ))
            })?;
            w = layer_out_len(spec, w).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "input {in_h}x{in_w} too small at layer {idx} ({spec:?})"
                ))
            })?;
            if let LayerSpec::Conv { out_channels, .. } = spec {
                channels = *out_channels;
            }
        }
        Ok((channels, h, w))
    }

    /// Score-map side length for the canonical 127/255 input pair.
    pub fn score_map_size(&self) -> Result<usize> {
        let (_, eh, _) = self.feature_shape(EXEMPLAR_INPUT, EXEMPLAR_INPUT)?;
        let (_, sh, _) = self.feature_shape(SEARCH_INPUT, SEARCH_INPUT)?;
        Ok(sh - eh + 1)
    }

    pub fn cast<U: Scalar>(&self) -> EmbedNet<U> {
        EmbedNet {
            layers: self.layers.clone(),
            conv: self
                .conv
                .iter()
                .map(|p| ConvParams {
                    kernels: p.kernels.cast(),
                    bias: p.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
                })
                .collect(),
            score_bias: U::from_f64(self.score_bias.to_f64()),
            in_channels: self.in_channels,
        }
    }

    /// Flat view of every conv parameter (kernels then bias, layer order).
    /// Used by the gradient checker to perturb single coordinates.
    pub fn param_count(&self) -> usize {
        self.conv
            .iter()
            .map(|p| p.kernels.data().len() + p.bias.len())
            .sum()
    }

    pub fn get_param(&self, mut idx: usize) -> Option<T> {
        for p in &self.conv {
            let nk = p.kernels.data().len();
            if idx < nk {
                return Some(p.kernels.data()[idx]);
            }
            idx -= nk;
            if idx < p.bias.len() {
                return Some(p.bias[idx]);
            }
            idx -= p.bias.len();
        }
        None
    }

    pub fn set_param(&mut self, mut idx: usize, v: T) -> bool {
        for p in &mut self.conv {
            let nk = p.kernels.data().len();
            if idx < nk {
                p.kernels.data_mut()[idx] = v;
                return true;
            }
            idx -= nk;
            if idx < p.bias.len() {
                p.bias[idx] = v;
                return true;
            }
            idx -= p.bias.len();
        }
        false
    }
}

/// Per-layer inputs plus pool argmaxes kept for the backward pass.
pub struct ForwardCache<T> {
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<usize>>>,
    output_shape: [usize; 4],
    layer_count: usize,
}

impl<T> ForwardCache<T> {
    pub fn output_shape(&self) -> [usize; 4] {
        self.output_shape
    }
}

/// Inference-only forward pass: no backward cache, activations updated in
/// place where possible. Bit-identical to [`forward`]'s feature output.
pub fn forward_features<T: Scalar>(net: &EmbedNet<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    if image.channels() != net.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "forward: image has {} channels, network expects {}",
            image.channels(),
            net.in_channels
        )));
    }
    net.feature_shape(image.height(), image.width())?;
    let mut cur = image.clone();
    let mut conv_idx = 0;
    for spec in &net.layers {
        match *spec {
            LayerSpec::Conv { stride, .. } => {
                let p = &net.conv[conv_idx];
                cur = conv2d(&cur, &p.kernels, &p.bias, stride)?;
                conv_idx += 1;
            }
            LayerSpec::Relu => {
                for v in cur.data_mut() {
                    if *v < T::ZERO {
                        *v = T::ZERO;
                    }
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                cur = max_pool_values(&cur, window, stride)?;
            }
        }
    }
    Ok(cur)
}

/// Run the branch network; the cache feeds [`backward`].
pub fn forward<T: Scalar>(
    net: &EmbedNet<T>,
    image: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if image.channels() != net.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "forward: image has {} channels, network expects {}",
            image.channels(),
            net.in_channels
        )));
    }
    net.feature_shape(image.height(), image.width())?;
    let mut cur = image.clone();
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut argmax = Vec::with_capacity(net.layers.len());
    let mut conv_idx = 0;
    for spec in &net.layers {
        inputs.push(cur.clone());
        match *spec {
            LayerSpec::Conv { stride, .. } => {
                let p = &net.conv[conv_idx];
                cur = conv2d(&cur, &p.kernels, &p.bias, stride)?;
                conv_idx += 1;
                argmax.push(None);
            }
            LayerSpec::Relu => {
                cur = relu(&cur);
                argmax.push(None);
            }
            LayerSpec::MaxPool { window, stride } => {
                let (out, am) = max_pool(&cur, window, stride)?;
                cur = out;
                argmax.push(Some(am));
            }
        }
    }
    let cache = ForwardCache {
        inputs,
        argmax,
        output_shape: cur.shape(),
        layer_count: net.layers.len(),
    };
    Ok((cur, cache))
}

/// Gradients of every conv parameter, in layer order.
#[derive(Clone, Debug)]
pub struct NetGrads<T> {
    pub conv: Vec<ConvParams<T>>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn zeros_like(net: &EmbedNet<T>) -> Self {
        NetGrads {
            conv: net
                .conv
                .iter()
                .map(|p| ConvParams {
                    kernels: Tensor::zeros(p.kernels.shape()),
                    bias: vec![T::ZERO; p.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads<T>) {
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            for (x, y) in a.kernels.data_mut().iter_mut().zip(b.kernels.data()) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for p in &mut self.conv {
            for v in p.kernels.data_mut() {
                *v *= s;
            }
            for v in &mut p.bias {
                *v *= s;
            }
        }
    }

    /// Flat read in the same order as `EmbedNet::get_param`.
    pub fn get(&self, mut idx: usize) -> Option<T> {
        for p in &self.conv {
            let nk = p.kernels.data().len();
            if idx < nk {
                return Some(p.kernels.data()[idx]);
            }
            idx -= nk;
            if idx < p.bias.len() {
                return Some(p.bias[idx]);
            }
            idx -= p.bias.len();
        }
        None
    }
}

/// Backpropagate `upstream` (gradient at the feature map) through the
/// cached forward pass, accumulating conv parameter gradients.
pub fn backward<T: Scalar>(
    net: &EmbedNet<T>,
    cache: &ForwardCache<T>,
    upstream: &Tensor<T>,
) -> Result<NetGrads<T>> {
    if cache.layer_count != net.layers.len() || cache.inputs.len() != net.layers.len() {
        return Err(Error::InvalidArgument(
            "backward: cache does not match this network".into(),
        ));
    }
    if upstream.shape() != cache.output_shape {
        return Err(Error::ShapeMismatch(format!(
            "backward: upstream shape {:?} does not match cached output {:?}",
            upstream.shape(),
            cache.output_shape
        )));
    }
    let mut grads = NetGrads::zeros_like(net);
    let mut up = upstream.clone();
    let mut conv_idx = net.conv.len();
    for (li, spec) in net.layers.iter().enumerate().rev() {
        let input = &cache.inputs[li];
        match *spec {
            LayerSpec::Conv { stride, .. } => {
                conv_idx -= 1;
                let p = &net.conv[conv_idx];
                let (gi, gk, gb) = conv2d_grad(input, &p.kernels, stride, &up)?;
                grads.conv[conv_idx] = ConvParams {
                    kernels: gk,
                    bias: gb,
                };
                up = gi;
            }
            LayerSpec::Relu => {
                up = relu_grad(input, &up)?;
            }
            LayerSpec::MaxPool { window, stride } => {
                let am = cache.argmax[li].as_ref().ok_or_else(|| {
                    Error::InvalidArgument("backward: missing pool argmax in cache".into())
                })?;
                up = max_pool_grad(input, window, stride, am, &up)?;
            }
        }
    }
    Ok(grads)
}

// --- binary parameter encoding -------------------------------------------
//
// magic "QDNT", u32 version = 1, u32 layer count, one record per layer
// (kind tag + fields), then raw little-endian f32 parameter blocks in layer
// order (kernels then bias per conv layer); the score bias comes last.

const MAGIC: &[u8; 4] = b"QDNT";
const VERSION: u32 = 1;

const KIND_CONV: u32 = 0;
const KIND_RELU: u32 = 1;
const KIND_POOL: u32 = 2;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::UnexpectedEnd);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Serialize to the QDNT byte format (bit-exact round trip).
pub fn encode(net: &EmbedNet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, net.layers.len() as u32);
    for spec in &net.layers {
        match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                put_u32(&mut out, KIND_CONV);
                put_u32(&mut out, out_channels as u32);
                put_u32(&mut out, kernel as u32);
                put_u32(&mut out, stride as u32);
            }
            LayerSpec::Relu => put_u32(&mut out, KIND_RELU),
            LayerSpec::MaxPool { window, stride } => {
                put_u32(&mut out, KIND_POOL);
                put_u32(&mut out, window as u32);
                put_u32(&mut out, stride as u32);
            }
        }
    }
    put_u32(&mut out, net.in_channels as u32);
    for p in &net.conv {
        for &v in p.kernels.data() {
            put_f32(&mut out, v);
        }
        for &v in &p.bias {
            put_f32(&mut out, v);
        }
    }
    put_f32(&mut out, net.score_bias);
    out
}

/// Decode the QDNT byte format; distinct diagnostics for bad magic, an
/// unsupported version, and truncated data.
pub fn decode(bytes: &[u8]) -> Result<EmbedNet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let kind = r.u32()?;
        layers.push(match kind {
            KIND_CONV => LayerSpec::Conv {
                out_channels: r.u32()? as usize,
                kernel: r.u32()? as usize,
                stride: r.u32()? as usize,
            },
            KIND_RELU => LayerSpec::Relu,
            KIND_POOL => LayerSpec::MaxPool {
                window: r.u32()? as usize,
                stride: r.u32()? as usize,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown layer kind tag {other} in model data"
                )))
            }
        });
    }
    let in_channels = r.u32()? as usize;
    let mut conv = Vec::new();
    let mut channels = in_channels;
    for spec in &layers {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } = *spec
        {
            let n = out_channels * channels * kernel * kernel;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f32()?);
            }
            let kernels = Tensor::new([out_channels, channels, kernel, kernel], data)?;
            let mut bias = Vec::with_capacity(out_channels);
            for _ in 0..out_channels {
                bias.push(r.f32()?);
            }
            conv.push(ConvParams { kernels, bias });
            channels = out_channels;
        }
    }
    let score_bias = r.f32()?;
    if r.pos != bytes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after model data",
            bytes.len() - r.pos
        )));
    }
    Ok(EmbedNet {
        layers,
        conv,
        score_bias,
        in_channels,
    })
}
