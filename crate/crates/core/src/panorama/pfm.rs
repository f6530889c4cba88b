//! Portable float map (`.pfm`): `PF` for 3 channels, `Pf` for 1, rows stored
//! bottom-to-top. A negative scale marks little-endian data.

use std::path::Path;

use super::Panorama;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Reads the next whitespace-delimited token and the single separator after it.
fn token<'a>(data: &'a [u8], pos: &mut usize) -> Result<(&'a str, usize)> {
    while *pos < data.len() && data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(start, "truncated header"));
    }
    if *pos >= data.len() {
        return Err(parse_err(*pos, "header not terminated"));
    }
    let s = std::str::from_utf8(&data[start..*pos]).map_err(|_| parse_err(start, "header is not text"))?;
    *pos += 1;
    Ok((s, start))
}

pub fn decode<T: Real>(data: &[u8]) -> Result<Panorama<T>> {
    if data.is_empty() {
        return Err(parse_err(0, "empty file"));
    }
    let mut pos = 0;
    let (magic, at) = token(data, &mut pos)?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(parse_err(at, format!("unknown signature `{magic}`"))),
    };
    let (w, at) = token(data, &mut pos)?;
    let width: usize = w.parse().map_err(|_| parse_err(at, "bad width"))?;
    let (h, at) = token(data, &mut pos)?;
    let height: usize = h.parse().map_err(|_| parse_err(at, "bad height"))?;
    let (s, at) = token(data, &mut pos)?;
    let scale: f64 = s.parse().map_err(|_| parse_err(at, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse_err(at, "scale must be nonzero"));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(at, "zero image dimension"));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let need = row_len * height * 4;
    if data.len() - pos < need {
        return Err(parse_err(
            data.len(),
            format!("payload truncated: need {need} bytes, have {}", data.len() - pos),
        ));
    }
    let mut pixels = vec![T::zero(); row_len * height];
    for file_row in 0..height {
        let y = height - 1 - file_row;
        for i in 0..row_len {
            let off = pos + (file_row * row_len + i) * 4;
            let b = [data[off], data[off + 1], data[off + 2], data[off + 3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(off, format!("value {v} is negative or non-finite")));
            }
            pixels[y * row_len + i] = T::lit(v as f64);
        }
    }
    Panorama::new(width, height, channels, pixels)
}

/// Little-endian encoding.
pub fn encode<T: Real>(pano: &Panorama<T>) -> Vec<u8> {
    let magic = if pano.channels() == 3 { "PF" } else { "Pf" };
    let header = format!("{magic}\n{} {}\n-1.0\n", pano.width(), pano.height());
    let row_len = pano.width() * pano.channels();
    let mut out = Vec::with_capacity(header.len() + pano.pixels().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..pano.height()).rev() {
        for v in &pano.pixels()[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

pub fn read<T: Real>(path: impl AsRef<Path>) -> Result<Panorama<T>> {
    decode(&std::fs::read(path)?)
}

pub fn write<T: Real>(path: impl AsRef<Path>, pano: &Panorama<T>) -> Result<()> {
    std::fs::write(path, encode(pano))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bitwise_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for channels in [1, 3] {
            let p = Panorama::from_fn(64, 32, channels, |_, _, _| rng.gen::<f32>() * 1e3).unwrap();
            let back: Panorama<f32> = decode(&encode(&p)).unwrap();
            assert_eq!(back.channels(), channels);
            for (a, b) in p.pixels().iter().zip(back.pixels()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn reads_big_endian_bottom_up() {
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let p: Panorama<f64> = decode(&bytes).unwrap();
        // First stored row is the bottom one.
        assert_eq!(p.get(0, 1, 0), 1.0);
        assert_eq!(p.get(1, 0, 0), 4.0);
    }

    #[test]
    fn malformed() {
        assert!(matches!(decode::<f32>(&[]), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            decode::<f32>(b"PX\n1 1\n-1\n"),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut short = b"PF\n2 2\n-1.0\n".to_vec();
        short.extend_from_slice(&[0; 20]);
        assert!(matches!(decode::<f32>(&short), Err(Error::Parse { .. })));
        assert!(decode::<f32>(b"PF\n2").is_err());
    }
}
