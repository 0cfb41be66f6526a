//! RAW sensor frames and their conversion into network input.
//!
//! A [`RawFrame`] is normalized by [`subtract_black_level`], rearranged by
//! [`pack`] into a multi-channel half- (Bayer) or third- (X-Trans)
//! resolution tensor, then brightened with [`amplify`].

mod format;
mod pipeline;
mod synth;

pub use format::{read_llrw, read_llrw_file, write_llrw, write_llrw_file, LLRW_MAGIC, LLRW_VERSION};
pub use pipeline::{
    bilinear_demosaic, gamma_encode, gray_world_gains, reference_pipeline, reference_pipeline_with,
    ColorMatrix, GAMMA,
};
pub use synth::{synthesize_pair, NoiseParams, REFERENCE_EXPOSURE_S};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BLACK_LEVEL: u16 = 512;
pub const DEFAULT_WHITE_LEVEL: u16 = 16383;

/// Color index stored in a CFA layout.
pub const RED: u8 = 0;
pub const GREEN: u8 = 1;
pub const BLUE: u8 = 2;

/// Color filter array layout. Entries are color indices (0 = R, 1 = G, 2 = B).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cfa {
    Bayer([[u8; 2]; 2]),
    XTrans([[u8; 6]; 6]),
}

impl Cfa {
    pub const RGGB: Cfa = Cfa::Bayer([[RED, GREEN], [GREEN, BLUE]]);

    /// The Fujifilm X-Trans layout.
    #[rustfmt::skip]
    pub const XTRANS: Cfa = Cfa::XTrans([
        [GREEN, GREEN, RED,   GREEN, GREEN, BLUE],
        [GREEN, GREEN, BLUE,  GREEN, GREEN, RED],
        [BLUE,  RED,   GREEN, RED,   BLUE,  GREEN],
        [GREEN, GREEN, BLUE,  GREEN, GREEN, RED],
        [GREEN, GREEN, RED,   GREEN, GREEN, BLUE],
        [RED,   BLUE,  GREEN, BLUE,  RED,   GREEN],
    ]);

    /// Side length of the repeating tile.
    pub fn period(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 2,
            Cfa::XTrans(_) => 6,
        }
    }

    /// Channels produced by [`pack`].
    pub fn packed_channels(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 4,
            Cfa::XTrans(_) => 9,
        }
    }

    /// Spatial reduction factor of [`pack`]; also the sub-pixel upsampling
    /// factor the network needs to return to full resolution.
    pub fn pack_factor(&self) -> usize {
        match self {
            Cfa::Bayer(_) => 2,
            Cfa::XTrans(_) => 3,
        }
    }

    pub fn color_at(&self, row: usize, col: usize) -> u8 {
        match self {
            Cfa::Bayer(p) => p[row % 2][col % 2],
            Cfa::XTrans(p) => p[row % 6][col % 6],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Cfa::Bayer(_) => "bayer",
            Cfa::XTrans(_) => "xtrans",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Cfa::Bayer(p) => p.iter().flatten().all(|&c| c <= BLUE),
            Cfa::XTrans(p) => p.iter().flatten().all(|&c| c <= BLUE),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg("CFA color indices must be 0 (R), 1 (G) or 2 (B)"))
        }
    }
}

/// Single-channel sensor readout with its acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    width: usize,
    height: usize,
    samples: Vec<u16>,
    cfa: Cfa,
    black_level: u16,
    white_level: u16,
    exposure_s: f64,
}

impl RawFrame {
    pub fn new(
        width: usize,
        height: usize,
        samples: Vec<u16>,
        cfa: Cfa,
        black_level: u16,
        white_level: u16,
        exposure_s: f64,
    ) -> Result<Self> {
        cfa.validate()?;
        if samples.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} frame needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        let p = cfa.period();
        if width == 0 || height == 0 || !width.is_multiple_of(p) || !height.is_multiple_of(p) {
            return Err(Error::shape(format!(
                "{} frame extents {width}x{height} must be positive multiples of {p}",
                cfa.name()
            )));
        }
        if black_level >= white_level {
            return Err(Error::arg(format!(
                "black level {black_level} must be below white level {white_level}"
            )));
        }
        if let Some(&s) = samples.iter().find(|&&s| s > white_level) {
            return Err(Error::arg(format!(
                "sample {s} exceeds white level {white_level}"
            )));
        }
        if !(exposure_s.is_finite() && exposure_s > 0.0) {
            return Err(Error::arg(format!("exposure {exposure_s} s must be positive")));
        }
        Ok(Self {
            width,
            height,
            samples,
            cfa,
            black_level,
            white_level,
            exposure_s,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn cfa(&self) -> Cfa {
        self.cfa
    }

    pub fn black_level(&self) -> u16 {
        self.black_level
    }

    pub fn white_level(&self) -> u16 {
        self.white_level
    }

    pub fn exposure_s(&self) -> f64 {
        self.exposure_s
    }
}

/// Packed, possibly amplified network input.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    pub tensor: Tensor,
    pub amplification: f64,
}

/// `max(sample - black, 0) / (white - black)` as a `[1, 1, H, W]` tensor.
pub fn subtract_black_level(raw: &RawFrame) -> Tensor {
    let black = f64::from(raw.black_level);
    let range = f64::from(raw.white_level) - black;
    let data = raw
        .samples
        .iter()
        .map(|&s| (f64::from(s) - black).max(0.0) / range)
        .collect();
    Tensor::from_parts_unchecked(vec![1, 1, raw.height, raw.width], data)
}

fn single_plane(t: &Tensor, period: usize) -> Result<(usize, usize)> {
    let (b, c, h, w) = t.dims4()?;
    if b != 1 || c != 1 {
        return Err(Error::shape(format!(
            "expected a [1, 1, H, W] mosaic, got {:?}",
            t.shape()
        )));
    }
    if h % period != 0 || w % period != 0 {
        return Err(Error::shape(format!(
            "mosaic extents {h}x{w} must be multiples of {period}"
        )));
    }
    Ok((h, w))
}

/// Packs a 2x2-periodic mosaic into four half-resolution channels ordered by
/// sub-lattice offset (0,0), (0,1), (1,0), (1,1).
pub fn pack_bayer(normalized: &Tensor) -> Result<Tensor> {
    let (h, w) = single_plane(normalized, 2)?;
    pack_sublattice(normalized.data(), h, w, 2)
}

pub fn unpack_bayer(packed: &Tensor) -> Result<Tensor> {
    unpack_sublattice(packed, 2)
}

/// Packs a 6x6-periodic X-Trans mosaic into nine third-resolution channels.
///
/// Every 6x6 tile is split into a 2x2 group of 3x3 cells; channel
/// `3 * i + j` holds position `(i, j)` of each cell, so output pixel
/// `(y, x)` is cell `(y, x)` of the frame.
pub fn pack_xtrans(normalized: &Tensor) -> Result<Tensor> {
    let (h, w) = single_plane(normalized, 6)?;
    pack_sublattice(normalized.data(), h, w, 3)
}

pub fn unpack_xtrans(packed: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = packed.dims4()?;
    if c == 9 && (h % 2 != 0 || w % 2 != 0) {
        return Err(Error::shape(format!(
            "X-Trans packed extents {h}x{w} must be even"
        )));
    }
    unpack_sublattice(packed, 3)
}

/// Dispatches to [`pack_bayer`] or [`pack_xtrans`].
pub fn pack(normalized: &Tensor, cfa: &Cfa) -> Result<Tensor> {
    match cfa {
        Cfa::Bayer(_) => pack_bayer(normalized),
        Cfa::XTrans(_) => pack_xtrans(normalized),
    }
}

pub fn unpack(packed: &Tensor, cfa: &Cfa) -> Result<Tensor> {
    match cfa {
        Cfa::Bayer(_) => unpack_bayer(packed),
        Cfa::XTrans(_) => unpack_xtrans(packed),
    }
}

fn pack_sublattice(src: &[f64], h: usize, w: usize, r: usize) -> Result<Tensor> {
    let (ph, pw) = (h / r, w / r);
    let mut data = vec![0.0; h * w];
    for i in 0..r {
        for j in 0..r {
            let ch = &mut data[(i * r + j) * ph * pw..(i * r + j + 1) * ph * pw];
            for y in 0..ph {
                for x in 0..pw {
                    ch[y * pw + x] = src[(y * r + i) * w + x * r + j];
                }
            }
        }
    }
    Tensor::new(vec![1, r * r, ph, pw], data)
}

fn unpack_sublattice(packed: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, ph, pw) = packed.dims4()?;
    if b != 1 || c != r * r {
        return Err(Error::shape(format!(
            "expected [1, {}, H, W] packed data, got {:?}",
            r * r,
            packed.shape()
        )));
    }
    let (h, w) = (ph * r, pw * r);
    let mut data = vec![0.0; h * w];
    let src = packed.data();
    for i in 0..r {
        for j in 0..r {
            let ch = &src[(i * r + j) * ph * pw..(i * r + j + 1) * ph * pw];
            for y in 0..ph {
                for x in 0..pw {
                    data[(y * r + i) * w + x * r + j] = ch[y * pw + x];
                }
            }
        }
    }
    Tensor::new(vec![1, 1, h, w], data)
}

/// Multiplies packed data by `factor` without clamping.
pub fn amplify(packed: &PackedRaw, factor: f64) -> Result<Tensor> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::arg(format!(
            "amplification factor must be positive, got {factor}"
        )));
    }
    Ok(packed.tensor.map(|v| v * factor))
}

/// Amplification as the ratio of reference to input exposure time.
pub fn amplification_from_exposures(reference_s: f64, input_s: f64) -> Result<f64> {
    if !(reference_s > 0.0 && input_s > 0.0) {
        return Err(Error::arg("exposure times must be positive"));
    }
    Ok(reference_s / input_s)
}

/// Full preprocessing: black level, packing, amplification.
pub fn preprocess(raw: &RawFrame, amplification: f64) -> Result<Tensor> {
    let packed = PackedRaw {
        tensor: pack(&subtract_black_level(raw), &raw.cfa)?,
        amplification: 1.0,
    };
    amplify(&packed, amplification)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(samples: Vec<u16>, w: usize, h: usize) -> RawFrame {
        RawFrame::new(w, h, samples, Cfa::RGGB, 512, 16383, 0.1).unwrap()
    }

    #[test]
    fn black_level_arithmetic() {
        let raw = frame(vec![600, 512, 16383, 100], 2, 2);
        let t = subtract_black_level(&raw);
        assert!((t.data()[0] - 88.0 / 15871.0).abs() < 1e-15);
        assert!((t.data()[0] - 0.005545).abs() < 1e-6);
        assert_eq!(t.data()[1], 0.0);
        assert_eq!(t.data()[2], 1.0);
        assert_eq!(t.data()[3], 0.0);
    }

    #[test]
    fn raw_frame_validation() {
        assert!(RawFrame::new(2, 2, vec![0; 4], Cfa::RGGB, 10, 10, 1.0).is_err());
        assert!(RawFrame::new(3, 2, vec![0; 6], Cfa::RGGB, 0, 10, 1.0).is_err());
        assert!(RawFrame::new(2, 2, vec![11; 4], Cfa::RGGB, 0, 10, 1.0).is_err());
        assert!(RawFrame::new(4, 4, vec![0; 16], Cfa::XTRANS, 0, 10, 1.0).is_err());
    }

    #[test]
    fn pack_bayer_sublattice() {
        let t = Tensor::from_fn(&[1, 1, 4, 4], |i| (10 * (i / 4) + i % 4) as f64);
        let p = pack_bayer(&t).unwrap();
        assert_eq!(p.shape(), &[1, 4, 2, 2]);
        assert_eq!(p.plane(0).unwrap(), &[0.0, 2.0, 20.0, 22.0]);
        assert_eq!(p.plane(1).unwrap(), &[1.0, 3.0, 21.0, 23.0]);
        assert_eq!(unpack_bayer(&p).unwrap(), t);
    }

    #[test]
    fn pack_constant() {
        let t = Tensor::full(&[1, 1, 12, 12], 0.3);
        assert_eq!(pack_bayer(&t).unwrap(), Tensor::full(&[1, 4, 6, 6], 0.3));
        let x = pack_xtrans(&t).unwrap();
        assert_eq!(x, Tensor::full(&[1, 9, 4, 4], 0.3));
    }

    #[test]
    fn pack_rejects_bad_extents() {
        assert!(matches!(
            pack_bayer(&Tensor::zeros(&[1, 1, 3, 4])),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            pack_xtrans(&Tensor::zeros(&[1, 1, 6, 9])),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn amplify_cases() {
        let packed = PackedRaw {
            tensor: Tensor::full(&[1, 4, 1, 1], 0.004),
            amplification: 1.0,
        };
        let out = amplify(&packed, 250.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(amplify(&packed, 1.0).unwrap(), packed.tensor);
        assert!(matches!(amplify(&packed, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(amplify(&packed, -2.0), Err(Error::InvalidArgument(_))));
        assert_eq!(amplification_from_exposures(10.0, 0.1).unwrap(), 100.0);
    }
}
