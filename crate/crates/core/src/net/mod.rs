//! Encoder-decoder restoration network.
//!
//! Packed RAW `[1, C, H, W]` goes through `depth` encoder levels of two 3x3
//! convolutions with leaky ReLU, max-pooled between levels. Each decoder
//! level upsamples with a 2x2 stride-2 transposed convolution, concatenates
//! the matching encoder activation and applies two more 3x3 convolutions. A
//! 1x1 head produces `3 r^2` channels that a pixel shuffle turns into RGB at
//! `r` times the packed resolution. Outputs are not clamped.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{Checkpoint, LLCK_MAGIC, LLCK_VERSION};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::raw::{preprocess, Cfa, RawFrame};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub in_channels: usize,
    /// Encoder levels, including the unpooled bottleneck.
    pub depth: usize,
    /// Channels at the first level; doubled per level.
    pub base_width: usize,
    /// Pixel-shuffle factor from packed to output resolution.
    pub upsample: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposeConv,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl LayerInfo {
    pub fn kernel_shape(&self) -> [usize; 4] {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel);
        match self.kind {
            LayerKind::Conv => [o, i, k, k],
            LayerKind::TransposeConv => [i, o, k, k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
    }
}

impl NetSpec {
    /// Full-width network for `cfa`: depth 5, 32 base channels.
    pub fn full(cfa: &Cfa) -> Self {
        Self {
            in_channels: cfa.packed_channels(),
            depth: 5,
            base_width: 32,
            upsample: cfa.pack_factor(),
        }
    }

    /// Small network for CPU experiments: depth 3, 8 base channels.
    pub fn desk(cfa: &Cfa) -> Self {
        Self {
            depth: 3,
            base_width: 8,
            ..Self::full(cfa)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::arg(format!("network depth must be at least 2, got {}", self.depth)));
        }
        if self.depth > 16 || self.in_channels == 0 || self.base_width == 0 || self.upsample == 0 {
            return Err(Error::arg(format!("invalid network spec {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn out_channels_pre_shuffle(&self) -> usize {
        3 * self.upsample * self.upsample
    }

    /// Packed extents must be multiples of this.
    pub fn divisibility(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Every parameterized layer in traversal order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let conv = |name: String, i, o, k| LayerInfo {
            name,
            kind: LayerKind::Conv,
            in_channels: i,
            out_channels: o,
            kernel: k,
        };
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            let w = self.width(l);
            out.push(conv(format!("enc{l}.conv1"), cin, w, 3));
            out.push(conv(format!("enc{l}.conv2"), w, w, 3));
            cin = w;
        }
        for l in (0..self.depth - 1).rev() {
            let w = self.width(l);
            out.push(LayerInfo {
                name: format!("dec{l}.up"),
                kind: LayerKind::TransposeConv,
                in_channels: self.width(l + 1),
                out_channels: w,
                kernel: 2,
            });
            out.push(conv(format!("dec{l}.conv1"), 2 * w, w, 3));
            out.push(conv(format!("dec{l}.conv2"), w, w, 3));
        }
        out.push(conv("head".into(), self.width(0), self.out_channels_pre_shuffle(), 1));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerInfo::param_count).sum()
    }
}

/// Kernels and biases in traversal order: `[k0, b0, k1, b1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    tensors: Vec<Tensor>,
}

impl NetParams {
    /// He-normal kernels and zero biases, deterministic in `seed`.
    pub fn build(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for layer in spec.layers() {
            let fan_in = layer.in_channels * layer.kernel * layer.kernel;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::arg(e.to_string()))?;
            tensors.push(Tensor::from_fn(&layer.kernel_shape(), |_| normal.sample(&mut rng)));
            tensors.push(Tensor::zeros(&[layer.out_channels]));
        }
        Ok(Self { spec, tensors })
    }

    pub fn from_tensors(spec: NetSpec, tensors: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        if tensors.len() != 2 * layers.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                2 * layers.len(),
                tensors.len()
            )));
        }
        for (layer, pair) in layers.iter().zip(tensors.chunks_exact(2)) {
            if pair[0].shape() != layer.kernel_shape() || pair[1].shape() != [layer.out_channels] {
                return Err(Error::shape(format!(
                    "{}: expected kernel {:?}, got {:?} / {:?}",
                    layer.name,
                    layer.kernel_shape(),
                    pair[0].shape(),
                    pair[1].shape()
                )));
            }
        }
        Ok(Self { spec, tensors })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// `"<layer>.kernel"` / `"<layer>.bias"` for every tensor.
    pub fn names(&self) -> Vec<String> {
        self.spec
            .layers()
            .iter()
            .flat_map(|l| [format!("{}.kernel", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    /// Records the network on `packed` using parameter leaves from [`bind`].
    ///
    /// [`bind`]: NetParams::bind
    pub fn forward<'t>(&self, vars: &[Var<'t>], packed: Var<'t>) -> Result<Var<'t>> {
        let spec = &self.spec;
        if vars.len() != self.tensors.len() {
            return Err(Error::arg("parameter leaves do not match the network"));
        }
        let (_, c, h, w) = packed.value().dims4()?;
        let d = spec.divisibility();
        if c != spec.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {c}",
                spec.in_channels
            )));
        }
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "packed extents {h}x{w} must be nonzero multiples of {d}"
            )));
        }
        let mut p = vars.chunks_exact(2);
        let mut next = || p.next().expect("vars match the layer inventory");
        let mut skips = Vec::with_capacity(spec.depth - 1);
        let mut x = packed;
        for l in 0..spec.depth {
            for _ in 0..2 {
                let kb = next();
                x = x.conv2d(kb[0], Some(kb[1]), 1, 1)?.leaky_relu();
            }
            if l + 1 < spec.depth {
                skips.push(x);
                x = x.maxpool2()?;
            }
        }
        for skip in skips.into_iter().rev() {
            let up = next();
            x = x.transpose_conv2d(up[0], 2)?.bias_add(up[1])?.concat_channels(skip)?;
            for _ in 0..2 {
                let kb = next();
                x = x.conv2d(kb[0], Some(kb[1]), 1, 1)?.leaky_relu();
            }
        }
        let head = next();
        x.conv2d(head[0], Some(head[1]), 1, 0)?.pixel_shuffle(spec.upsample)
    }

    /// Unclamped RGB prediction for `packed: [1, C, H, W]`.
    pub fn infer(&self, packed: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = self.tensors.iter().map(|t| tape.constant(t)).collect();
        let out = self.forward(&vars, tape.constant(packed))?;
        Ok((*out.value()).clone())
    }
}

/// Replicates the last row and column until both extents are multiples of `d`.
fn pad_to_multiple(t: &Tensor, d: usize) -> Result<Tensor> {
    let (b, c, h, w) = t.dims4()?;
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = Vec::with_capacity(b * c * ph * pw);
    for p in 0..b * c {
        for y in 0..ph {
            let row = &src[p * h * w + y.min(h - 1) * w..][..w];
            out.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    Tensor::new(vec![b, c, ph, pw], out)
}

/// Restores a whole frame: preprocessing, edge padding to the required
/// divisibility, inference, cropping back to the frame and clamping.
pub fn restore_frame(params: &NetParams, raw: &RawFrame, amplification: f64) -> Result<RgbImage> {
    let spec = params.spec();
    let cfa = raw.cfa();
    if cfa.packed_channels() != spec.in_channels || cfa.pack_factor() != spec.upsample {
        return Err(Error::arg(format!(
            "network takes {} packed channels at upsample {}, but the frame is a {} mosaic ({} channels, upsample {})",
            spec.in_channels,
            spec.upsample,
            cfa.name(),
            cfa.packed_channels(),
            cfa.pack_factor()
        )));
    }
    let packed = preprocess(raw, amplification)?;
    let out = params.infer(&pad_to_multiple(&packed, spec.divisibility())?)?;
    let cropped = out.crop(0, 0, raw.height(), raw.width())?;
    Ok(RgbImage::from_tensor(cropped)?.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_has_23_conv_layers() {
        let spec = NetSpec::full(&Cfa::RGGB);
        let layers = spec.layers();
        assert_eq!(layers.len(), 23);
        assert_eq!(layers.iter().filter(|l| l.name.starts_with("enc")).count(), 10);
        assert_eq!(layers.iter().filter(|l| !l.name.starts_with("enc")).count(), 13);
        let widths: Vec<usize> = (0..5).map(|l| spec.width(l)).collect();
        assert_eq!(widths, [32, 64, 128, 256, 512]);
    }

    #[test]
    fn shallow_depth_is_rejected() {
        let spec = NetSpec {
            depth: 1,
            ..NetSpec::desk(&Cfa::RGGB)
        };
        assert!(matches!(NetParams::build(spec, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn output_shape_and_divisibility() {
        let spec = NetSpec::desk(&Cfa::XTRANS);
        let params = NetParams::build(spec, 3).unwrap();
        let out = params.infer(&Tensor::full(&[1, 9, 8, 12], 0.1)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 24, 36]);
        match params.infer(&Tensor::full(&[1, 9, 6, 8], 0.1)) {
            Err(Error::InvalidShape(msg)) => assert!(msg.contains("multiples of 4"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn restore_frame_keeps_raw_extents() {
        let raw = RawFrame::new(20, 14, vec![900; 280], Cfa::RGGB, 512, 16383, 0.1).unwrap();
        let params = NetParams::build(NetSpec::desk(&Cfa::RGGB), 1).unwrap();
        let img = restore_frame(&params, &raw, 100.0).unwrap();
        assert_eq!((img.height(), img.width()), (14, 20));
        assert!(img.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let xt = RawFrame::new(12, 12, vec![900; 144], Cfa::XTRANS, 512, 16383, 0.1).unwrap();
        assert!(matches!(restore_frame(&params, &xt, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn padding_replicates_edges() {
        let t = Tensor::new(vec![1, 1, 1, 3], vec![1., 2., 3.]).unwrap();
        let p = pad_to_multiple(&t, 2).unwrap();
        assert_eq!(p.shape(), &[1, 1, 2, 4]);
        assert_eq!(p.data(), &[1., 2., 3., 3., 1., 2., 3., 3.]);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = NetSpec::desk(&Cfa::RGGB);
        assert_eq!(NetParams::build(spec, 5).unwrap(), NetParams::build(spec, 5).unwrap());
        assert_ne!(NetParams::build(spec, 5).unwrap(), NetParams::build(spec, 6).unwrap());
    }
}
