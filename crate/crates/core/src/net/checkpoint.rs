//! LLCK training checkpoints.
//!
//! Little-endian layout: magic `b"LLCK"`, u16 version, the [`NetSpec`]
//! fields `in_channels, depth, base_width, upsample` as u32, epoch u32,
//! seed u64, a 32-byte run-manifest hash, Adam `t` as u64 and `beta1,
//! beta2, eps` as f64, then every first moment, every second moment and
//! every parameter as f64 arrays in traversal order. Tensor shapes follow
//! from the spec, so none are stored.

use std::io::{Read, Write};
use std::path::Path;

use super::{NetParams, NetSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::AdamState;

pub const LLCK_MAGIC: &[u8; 4] = b"LLCK";
pub const LLCK_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    pub manifest_hash: [u8; 32],
}

impl Checkpoint {
    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        let spec = self.params.spec();
        if self.adam.m.len() != self.params.tensors().len() || self.adam.v.len() != self.adam.m.len() {
            return Err(Error::State("optimizer state does not match the network".into()));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(LLCK_MAGIC);
        buf.extend_from_slice(&LLCK_VERSION.to_le_bytes());
        for f in [spec.in_channels, spec.depth, spec.base_width, spec.upsample] {
            let f = u32::try_from(f).map_err(|_| Error::arg("spec field exceeds u32"))?;
            buf.extend_from_slice(&f.to_le_bytes());
        }
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.manifest_hash);
        buf.extend_from_slice(&self.adam.t.to_le_bytes());
        for h in [self.adam.beta1, self.adam.beta2, self.adam.eps] {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        for t in self.adam.m.iter().chain(&self.adam.v).chain(self.params.tensors()) {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(4)? != LLCK_MAGIC {
            return Err(Error::format("LLCK", "bad magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != LLCK_VERSION {
            return Err(Error::format("LLCK", format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(r.array()?) as usize;
        }
        let spec = NetSpec {
            in_channels: dims[0],
            depth: dims[1],
            base_width: dims[2],
            upsample: dims[3],
        };
        spec.validate()
            .map_err(|e| Error::format("LLCK", format!("invalid network spec: {e}")))?;
        let epoch = u32::from_le_bytes(r.array()?);
        let seed = u64::from_le_bytes(r.array()?);
        let manifest_hash: [u8; 32] = r.array()?;
        let t = u64::from_le_bytes(r.array()?);
        let beta1 = f64::from_le_bytes(r.array()?);
        let beta2 = f64::from_le_bytes(r.array()?);
        let eps = f64::from_le_bytes(r.array()?);

        let shapes: Vec<Vec<usize>> = spec
            .layers()
            .iter()
            .flat_map(|l| [l.kernel_shape().to_vec(), vec![l.out_channels]])
            .collect();
        let read_all = |r: &mut Reader<'_>| -> Result<Vec<Tensor>> {
            shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let raw = r.take(8 * n)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    Tensor::new(s.clone(), data)
                })
                .collect()
        };
        let m = read_all(&mut r)?;
        let v = read_all(&mut r)?;
        let tensors = read_all(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::format("LLCK", "trailing bytes after parameters"));
        }
        Ok(Self {
            params: NetParams::from_tensors(spec, tensors)?,
            adam: AdamState {
                t,
                beta1,
                beta2,
                eps,
                m,
                v,
            },
            epoch,
            seed,
            manifest_hash,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("LLCK", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::Cfa;

    fn sample() -> Checkpoint {
        let params = NetParams::build(NetSpec::desk(&Cfa::RGGB), 11).unwrap();
        let mut adam = AdamState::for_net(&params);
        adam.t = 17;
        adam.m[0].data_mut()[0] = -0.25;
        adam.v[3].data_mut()[1] = 1e-9;
        Checkpoint {
            params,
            adam,
            epoch: 42,
            seed: 0xDEAD_BEEF,
            manifest_hash: [7; 32],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn damage_is_rejected() {
        let mut bytes = Vec::new();
        sample().write(&mut bytes).unwrap();
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(Checkpoint::read(&mut &short[..]), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read(&mut long.as_slice()), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::read(&mut bytes.as_slice()), Err(Error::Format { .. })));
    }
}
