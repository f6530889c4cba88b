//! Radiance RGBE (`.hdr`) reading and writing.
//!
//! Reads flat, old-style run-length and adaptive run-length scanlines.
//! Writes adaptive run-length scanlines whenever the width allows it.

use std::path::Path;

use super::Panorama;
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

const MIN_RLE_WIDTH: usize = 8;
const MAX_RLE_WIDTH: usize = 0x7fff;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Shared-exponent encoding with round-to-nearest mantissas.
pub fn encode_rgbe(rgb: [f32; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if !(v > 1e-32) {
        return [0, 0, 0, 0];
    }
    let (_, mut e) = frexp(v);
    let mut scale = ldexp(1.0, 8 - e);
    // Rounding the largest channel can spill to 256; bump the exponent.
    if (v as f64 * scale + 0.5) >= 256.0 {
        e += 1;
        scale = ldexp(1.0, 8 - e);
    }
    let q = |c: f32| ((c.max(0.0) as f64) * scale + 0.5).floor().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (e + 128).clamp(0, 255) as u8]
}

pub fn decode_rgbe(p: [u8; 4]) -> [f32; 3] {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let f = ldexp(1.0, p[3] as i32 - (128 + 8));
    [
        (p[0] as f64 * f) as f32,
        (p[1] as f64 * f) as f32,
        (p[2] as f64 * f) as f32,
    ]
}

/// `v = m · 2^e` with `m ∈ [0.5, 1)`.
fn frexp(v: f32) -> (f64, i32) {
    let v = v as f64;
    let e = v.log2().floor() as i32 + 1;
    let m = v / 2f64.powi(e);
    // log2 can land one off near powers of two.
    if m >= 1.0 {
        (m / 2.0, e + 1)
    } else if m < 0.5 {
        (m * 2.0, e - 1)
    } else {
        (m, e)
    }
}

fn ldexp(m: f64, e: i32) -> f64 {
    m * 2f64.powi(e)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a [u8]> {
        let start = self.pos;
        match self.data[start..].iter().position(|&b| b == b'\n') {
            Some(i) => {
                self.pos = start + i + 1;
                Ok(&self.data[start..start + i])
            }
            None => Err(parse_err(start, "unterminated header line")),
        }
    }

    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| parse_err(self.pos, "unexpected end of pixel data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn quad(&mut self) -> Result<[u8; 4]> {
        if self.pos + 4 > self.data.len() {
            return Err(parse_err(self.pos, "unexpected end of pixel data"));
        }
        let q = [
            self.data[self.pos],
            self.data[self.pos + 1],
            self.data[self.pos + 2],
            self.data[self.pos + 3],
        ];
        self.pos += 4;
        Ok(q)
    }
}

/// Decodes a Radiance file held in memory into a 3-channel panorama.
pub fn decode<T: Real>(data: &[u8]) -> Result<Panorama<T>> {
    if data.is_empty() {
        return Err(parse_err(0, "empty file"));
    }
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.line()?;
    if !magic.starts_with(b"#?") {
        return Err(parse_err(0, "missing #? signature"));
    }
    loop {
        let at = cur.pos;
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix(b"FORMAT=") {
            if fmt.trim_ascii() != b"32-bit_rle_rgbe" {
                return Err(parse_err(
                    at,
                    format!("unsupported format {}", String::from_utf8_lossy(fmt)),
                ));
            }
        }
    }
    let res_at = cur.pos;
    let res = std::str::from_utf8(cur.line()?).map_err(|_| parse_err(res_at, "resolution line is not text"))?;
    let tokens: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match tokens.as_slice() {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| parse_err(res_at, "bad height"))?,
            w.parse::<usize>().map_err(|_| parse_err(res_at, "bad width"))?,
        ),
        _ => return Err(parse_err(res_at, format!("unsupported resolution line `{res}`"))),
    };
    if width == 0 || height == 0 {
        return Err(parse_err(res_at, "zero image dimension"));
    }

    let mut pixels = Vec::with_capacity(width * height * 3);
    let mut scan = vec![[0u8; 4]; width];
    for _ in 0..height {
        read_scanline(&mut cur, &mut scan)?;
        for p in &scan {
            let rgb = decode_rgbe(*p);
            pixels.extend(rgb.iter().map(|&v| T::lit(v as f64)));
        }
    }
    Panorama::new(width, height, 3, pixels).map_err(|e| parse_err(cur.pos, e.to_string()))
}

fn read_scanline(cur: &mut Cursor<'_>, scan: &mut [[u8; 4]]) -> Result<()> {
    let width = scan.len();
    let start = cur.pos;
    let first = cur.quad()?;
    let adaptive =
        (MIN_RLE_WIDTH..=MAX_RLE_WIDTH).contains(&width) && first[0] == 2 && first[1] == 2 && first[2] & 0x80 == 0;
    if adaptive {
        let len = ((first[2] as usize) << 8) | first[3] as usize;
        if len != width {
            return Err(parse_err(
                start,
                format!("scanline length {len} does not match width {width}"),
            ));
        }
        for c in 0..4 {
            let mut x = 0;
            while x < width {
                let at = cur.pos;
                let code = cur.byte()? as usize;
                if code > 128 {
                    let run = code - 128;
                    if x + run > width {
                        return Err(parse_err(at, "run overflows scanline"));
                    }
                    let v = cur.byte()?;
                    for p in &mut scan[x..x + run] {
                        p[c] = v;
                    }
                    x += run;
                } else {
                    if code == 0 || x + code > width {
                        return Err(parse_err(at, "bad literal count"));
                    }
                    for p in &mut scan[x..x + code] {
                        p[c] = cur.byte()?;
                    }
                    x += code;
                }
            }
        }
        return Ok(());
    }

    // Flat or old-style RLE: (1,1,1,n) repeats the previous pixel n << shift times.
    let mut x = 0;
    let mut shift = 0;
    let mut next = Some(first);
    while x < width {
        let at = cur.pos;
        let p = match next.take() {
            Some(p) => p,
            None => cur.quad()?,
        };
        if p[0] == 1 && p[1] == 1 && p[2] == 1 {
            if x == 0 {
                return Err(parse_err(at, "repeat marker at scanline start"));
            }
            let count = (p[3] as usize) << shift;
            if x + count > width {
                return Err(parse_err(at, "run overflows scanline"));
            }
            let prev = scan[x - 1];
            for q in &mut scan[x..x + count] {
                *q = prev;
            }
            x += count;
            shift += 8;
        } else {
            scan[x] = p;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}

/// Encodes a 3-channel panorama.
pub fn encode<T: Real>(pano: &Panorama<T>) -> Result<Vec<u8>> {
    if pano.channels() != 3 {
        return Err(invalid("radiance files hold 3-channel images"));
    }
    let (w, h) = (pano.width(), pano.height());
    let mut out = Vec::with_capacity(w * h * 4 + 128);
    out.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    out.extend_from_slice(format!("-Y {h} +X {w}\n").as_bytes());
    let mut scan = vec![[0u8; 4]; w];
    let mut chan = vec![0u8; w];
    for y in 0..h {
        for (x, q) in scan.iter_mut().enumerate() {
            *q = encode_rgbe([
                pano.get(x, y, 0).to_f64_lossy() as f32,
                pano.get(x, y, 1).to_f64_lossy() as f32,
                pano.get(x, y, 2).to_f64_lossy() as f32,
            ]);
        }
        if !(MIN_RLE_WIDTH..=MAX_RLE_WIDTH).contains(&w) {
            for q in &scan {
                out.extend_from_slice(q);
            }
            continue;
        }
        out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
        for c in 0..4 {
            for (x, q) in scan.iter().enumerate() {
                chan[x] = q[c];
            }
            write_rle_channel(&chan, &mut out);
        }
    }
    Ok(out)
}

fn write_rle_channel(data: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let n = data.len();
    let mut i = 0;
    while i < n {
        // Find the next run of at least MIN_RUN equal bytes.
        let mut run_start = i;
        let mut run_len = 0;
        while run_start < n {
            run_len = 1;
            while run_start + run_len < n && run_len < 127 && data[run_start + run_len] == data[run_start] {
                run_len += 1;
            }
            if run_len >= MIN_RUN {
                break;
            }
            run_start += run_len;
        }
        if run_start >= n {
            run_len = 0;
        }
        // Literals up to the run.
        while i < run_start {
            let count = (run_start - i).min(128);
            out.push(count as u8);
            out.extend_from_slice(&data[i..i + count]);
            i += count;
        }
        if run_len >= MIN_RUN {
            out.push((128 + run_len) as u8);
            out.push(data[run_start]);
            i = run_start + run_len;
        }
    }
}

pub fn read<T: Real>(path: impl AsRef<Path>) -> Result<Panorama<T>> {
    decode(&std::fs::read(path)?)
}

pub fn write<T: Real>(path: impl AsRef<Path>, pano: &Panorama<T>) -> Result<()> {
    std::fs::write(path, encode(pano)?)?;
    Ok(())
}
