//! The LLRW raw container.
//!
//! Little-endian layout:
//!
//! | field            | type       |
//! |------------------|------------|
//! | magic            | `b"LLRW"`  |
//! | version          | u16        |
//! | width, height    | u32, u32   |
//! | cfa_type         | u8 (0 = Bayer, 1 = X-Trans) |
//! | cfa pattern      | 36 bytes, row-major color indices, zero padded |
//! | black_level      | u16        |
//! | white_level      | u16        |
//! | exposure_s       | f64        |
//! | samples          | width * height u16 |

use std::io::{Read, Write};

use super::{Cfa, RawFrame};
use crate::error::{Error, Result};

pub const LLRW_MAGIC: &[u8; 4] = b"LLRW";
pub const LLRW_VERSION: u16 = 1;
const HEADER_LEN: usize = 63;

pub fn write_llrw(out: &mut impl Write, raw: &RawFrame) -> Result<()> {
    let mut pattern = [0u8; 36];
    let cfa_type = match raw.cfa {
        Cfa::Bayer(p) => {
            for (i, c) in p.iter().flatten().enumerate() {
                pattern[i] = *c;
            }
            0u8
        }
        Cfa::XTrans(p) => {
            for (i, c) in p.iter().flatten().enumerate() {
                pattern[i] = *c;
            }
            1u8
        }
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 2 * raw.samples.len());
    buf.extend_from_slice(LLRW_MAGIC);
    buf.extend_from_slice(&LLRW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(raw.width as u32).to_le_bytes());
    buf.extend_from_slice(&(raw.height as u32).to_le_bytes());
    buf.push(cfa_type);
    buf.extend_from_slice(&pattern);
    buf.extend_from_slice(&raw.black_level.to_le_bytes());
    buf.extend_from_slice(&raw.white_level.to_le_bytes());
    buf.extend_from_slice(&raw.exposure_s.to_le_bytes());
    for s in &raw.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_llrw(input: &mut impl Read) -> Result<RawFrame> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::format("LLRW", "truncated header"))?;
    if &header[0..4] != LLRW_MAGIC {
        return Err(Error::format("LLRW", "bad magic"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]);
    let version = u16_at(4);
    if version != LLRW_VERSION {
        return Err(Error::format("LLRW", format!("unsupported version {version}")));
    }
    let width = u32_at(6) as usize;
    let height = u32_at(10) as usize;
    let pattern = &header[15..51];
    let cfa = match header[14] {
        0 => Cfa::Bayer([[pattern[0], pattern[1]], [pattern[2], pattern[3]]]),
        1 => {
            let mut p = [[0u8; 6]; 6];
            for (i, row) in p.iter_mut().enumerate() {
                row.copy_from_slice(&pattern[6 * i..6 * i + 6]);
            }
            Cfa::XTrans(p)
        }
        t => return Err(Error::format("LLRW", format!("unknown cfa_type {t}"))),
    };
    let black = u16_at(51);
    let white = u16_at(53);
    let exposure_s = f64::from_le_bytes(header[55..63].try_into().expect("8 bytes"));
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("LLRW", "extents overflow"))?;
    let mut bytes = vec![0u8; 2 * count];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::format("LLRW", "truncated sample data"))?;
    let samples = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    RawFrame::new(width, height, samples, cfa, black, white, exposure_s)
        .map_err(|e| Error::format("LLRW", e.to_string()))
}

pub fn read_llrw_file(path: &std::path::Path) -> Result<RawFrame> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_llrw(&mut f)
}

pub fn write_llrw_file(path: &std::path::Path, raw: &RawFrame) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_llrw(&mut f, raw)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_layouts() {
        for cfa in [Cfa::RGGB, Cfa::XTRANS] {
            let samples = (0..144u16).map(|i| i * 37 % 4000).collect();
            let raw = RawFrame::new(12, 12, samples, cfa, 512, 16383, 0.025).unwrap();
            let mut bytes = Vec::new();
            write_llrw(&mut bytes, &raw).unwrap();
            assert_eq!(bytes.len(), HEADER_LEN + 2 * 144);
            let back = read_llrw(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, raw);
            let mut again = Vec::new();
            write_llrw(&mut again, &back).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_llrw(&mut &b"NOPE"[..]).is_err());
        let raw = RawFrame::new(2, 2, vec![1, 2, 3, 4], Cfa::RGGB, 0, 100, 1.0).unwrap();
        let mut bytes = Vec::new();
        write_llrw(&mut bytes, &raw).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_llrw(&mut bytes.as_slice()), Err(Error::Format { .. })));
        bytes[0] = b'L';
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(read_llrw(&mut bytes.as_slice()), Err(Error::Format { .. })));
    }
}
