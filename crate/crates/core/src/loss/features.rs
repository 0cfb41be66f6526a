//! Frozen convolutional feature extractor.
//!
//! Two VGG-style blocks: `conv3x3(3->64), relu, conv3x3(64->64), relu,
//! maxpool2` then `conv3x3(64->128), relu, conv3x3(128->128), relu,
//! maxpool2`. Weights enter the tape as constants, so no gradient is ever
//! formed for them.
//!
//! The LLFX weight file is little-endian: magic `b"LLFX"`, a u16 version,
//! then for each layer `out, in, kh, kw` as u32, `out*in*kh*kw` f32 kernel
//! values in `[out, in, kh, kw]` order and `out` f32 biases, until EOF.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const LLFX_MAGIC: &[u8; 4] = b"LLFX";
pub const LLFX_VERSION: u16 = 1;

/// Last extractor stage whose activations are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayer {
    /// `H/2 x W/2 x 64`.
    Block1,
    /// `H/4 x W/4 x 128`.
    #[default]
    Block2,
}

impl FeatureLayer {
    fn conv_count(self) -> usize {
        match self {
            FeatureLayer::Block1 => 2,
            FeatureLayer::Block2 => 4,
        }
    }

    /// Spatial reduction of the output relative to the input.
    pub fn stride(self) -> usize {
        match self {
            FeatureLayer::Block1 => 2,
            FeatureLayer::Block2 => 4,
        }
    }
}

const ARCH: [(usize, usize); 4] = [(3, 64), (64, 64), (64, 128), (128, 128)];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[out, in, kh, kw]`.
    pub kernel: Arc<Tensor>,
    /// `[out]`.
    pub bias: Arc<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<ConvLayer>,
}

impl FeatureExtractor {
    /// He-normal kernels and zero biases drawn from `seed`. Values are
    /// rounded to f32 so the extractor survives an LLFX round trip exactly.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = ARCH
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let kernel = Tensor::from_fn(&[cout, cin, 3, 3], |_| {
                    f64::from(normal.sample(&mut rng) as f32)
                });
                ConvLayer {
                    kernel: Arc::new(kernel),
                    bias: Arc::new(Tensor::zeros(&[cout])),
                }
            })
            .collect();
        Self { layers }
    }

    /// Validates the layer stack against the fixed architecture.
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != ARCH.len() {
            return Err(Error::arg(format!(
                "feature extractor needs {} conv layers, got {}",
                ARCH.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(cin, cout))) in layers.iter().zip(&ARCH).enumerate() {
            if layer.kernel.shape() != [cout, cin, 3, 3] || layer.bias.shape() != [cout] {
                return Err(Error::shape(format!(
                    "layer {i}: expected kernel [{cout}, {cin}, 3, 3] and bias [{cout}], got {:?} and {:?}",
                    layer.kernel.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Records the extractor on `x: [B, 3, H, W]` up to `layer`.
    pub fn forward<'t>(&self, x: Var<'t>, layer: FeatureLayer) -> Result<Var<'t>> {
        let (_, c, h, w) = x.value().dims4()?;
        let s = layer.stride();
        if c != 3 || h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!(
                "feature input must be 3-channel with extents divisible by {s}, got {:?}",
                x.shape()
            )));
        }
        let tape = x.tape();
        let mut v = x;
        for (i, l) in self.layers[..layer.conv_count()].iter().enumerate() {
            let k = tape.constant_shared(l.kernel.clone());
            let b = tape.constant_shared(l.bias.clone());
            v = v.conv2d(k, Some(b), 1, 1)?.relu();
            if i % 2 == 1 {
                v = v.maxpool2()?;
            }
        }
        Ok(v)
    }

    /// Activations of a plain tensor.
    pub fn features(&self, x: &Tensor, layer: FeatureLayer) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.forward(tape.constant(x), layer)?;
        Ok((*out.value()).clone())
    }

    pub fn write_llfx(&self, out: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(LLFX_MAGIC);
        buf.extend_from_slice(&LLFX_VERSION.to_le_bytes());
        for l in &self.layers {
            for d in l.kernel.shape() {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in l.kernel.data().iter().chain(l.bias.data()) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_llfx(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let bad = |reason: &str| Error::format("LLFX", reason.to_string());
        if bytes.len() < 6 || &bytes[..4] != LLFX_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != LLFX_VERSION {
            return Err(Error::format("LLFX", format!("unsupported version {version}")));
        }
        let mut pos: usize = 6;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let mut layers = Vec::new();
        loop {
            let header = match take(16) {
                Ok(h) => h,
                Err(_) => break,
            };
            let dims: Vec<usize> = header
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
                .collect();
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("layer extents overflow"))?;
            let floats = |s: &[u8]| -> Vec<f64> {
                s.chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect()
            };
            let kernel = floats(take(4 * count)?);
            let bias = floats(take(4 * dims[0])?);
            layers.push(ConvLayer {
                kernel: Arc::new(Tensor::new(dims.clone(), kernel)?),
                bias: Arc::new(Tensor::new(vec![dims[0]], bias)?),
            });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after the last layer"));
        }
        Self::from_layers(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_llfx(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_llfx(&mut f)?;
        f.flush()?;
        Ok(())
    }
}
