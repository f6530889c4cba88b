//! Equirectangular rasters: the pixel/direction mapping, metrics, tone
//! handling, perspective crops and file formats.
//!
//! Mapping convention: for pixel `(x, y)` of a `width × height` raster let
//! `u = (x + 0.5) / width`, `t = (y + 0.5) / height`, `φ = 2πu − π`, `θ = πt`.
//! The direction is `(sin θ sin φ, cos θ, −sin θ cos φ)`, so the center column
//! looks down −Z and row 0 hugs the +Y pole.

mod crop;
pub mod hdr;
pub mod pfm;

pub use crop::{sample_crop, CropSpec};

use crate::error::{domain, invalid, Result};
use crate::scalar::Real;
use crate::sphere_layout::Direction;

/// Row-major, channel-interleaved linear raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama<T> {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Real> Panorama<T> {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("panorama dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("panorama needs 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(invalid(format!(
                "expected {} values, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(invalid(format!("value {i} is negative or non-finite")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a raster by evaluating `f` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> Panorama<U> {
        Panorama {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.pixels {
            *v = *v * s;
        }
        out
    }

    /// Keeps only channel `c`, as a single-channel raster.
    pub fn channel(&self, c: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels: self.pixels.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Bilinear lookup at continuous image coordinates (pixel centers at `+0.5`).
    /// Wraps horizontally and clamps vertically.
    pub fn sample_bilinear(&self, px: T, py: T, out: &mut [T]) {
        let w = self.width as isize;
        let fx = px - T::lit(0.5);
        let fy = (py - T::lit(0.5))
            .max(T::zero())
            .min(T::from_usize_exact(self.height - 1));
        let x0f = fx.floor();
        let y0f = fy.floor();
        let tx = fx - x0f;
        let ty = fy - y0f;
        let x0 = (x0f.to_f64_lossy() as isize).rem_euclid(w) as usize;
        let x1 = (x0 + 1) % self.width;
        let y0 = y0f.to_f64_lossy() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get(x0, y0, c) * (T::one() - tx) + self.get(x1, y0, c) * tx;
            let b = self.get(x0, y1, c) * (T::one() - tx) + self.get(x1, y1, c) * tx;
            *o = a * (T::one() - ty) + b * ty;
        }
    }

    /// Bilinear lookup along a direction.
    pub fn sample_direction(&self, v: Direction<T>, out: &mut [T]) {
        let (px, py) = direction_to_pixel(v, self.width, self.height);
        self.sample_bilinear(px, py, out);
    }

    /// Area-weighted box resample to `width × height`.
    pub fn resample_box(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("target dimensions must be positive"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let xw = box_weights::<T>(self.width, width);
        let yw = box_weights::<T>(self.height, height);
        let nc = self.channels;
        // Horizontal pass, then vertical.
        let mut tmp = vec![T::zero(); width * self.height * nc];
        for y in 0..self.height {
            for (ox, taps) in xw.iter().enumerate() {
                for &(ix, w) in taps {
                    for c in 0..nc {
                        let dst = &mut tmp[(y * width + ox) * nc + c];
                        *dst = *dst + w * self.get(ix, y, c);
                    }
                }
            }
        }
        let mut pixels = vec![T::zero(); width * height * nc];
        for (oy, taps) in yw.iter().enumerate() {
            for &(iy, w) in taps {
                for x in 0..width {
                    for c in 0..nc {
                        let dst = &mut pixels[(oy * width + x) * nc + c];
                        *dst = *dst + w * tmp[(iy * width + x) * nc + c];
                    }
                }
            }
        }
        for v in &mut pixels {
            *v = v.max(T::zero());
        }
        Self::new(width, height, nc, pixels)
    }

    /// Rotates content about the vertical axis: `out(φ) = in(φ + degrees)`.
    pub fn rotate_azimuth(&self, degrees: T) -> Self {
        let shift = degrees / T::lit(360.0) * T::from_usize_exact(self.width);
        let mut out = self.clone();
        let mut buf = vec![T::zero(); self.channels];
        for y in 0..self.height {
            let py = T::from_usize_exact(y) + T::lit(0.5);
            for x in 0..self.width {
                let px = T::from_usize_exact(x) + T::lit(0.5) + shift;
                self.sample_bilinear(px, py, &mut buf);
                let base = (y * self.width + x) * self.channels;
                out.pixels[base..base + self.channels].copy_from_slice(&buf);
            }
        }
        out
    }
}

fn box_weights<T: Real>(src: usize, dst: usize) -> Vec<Vec<(usize, T)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, T::lit(overlap / scale)));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Direction through the center of pixel `(x, y)`.
pub fn pixel_to_direction<T: Real>(x: usize, y: usize, width: usize, height: usize) -> Result<Direction<T>> {
    if x >= width || y >= height {
        return Err(invalid(format!("pixel ({x}, {y}) outside {width}x{height}")));
    }
    Ok(pixel_to_direction_unchecked(x, y, width, height))
}

#[inline]
pub(crate) fn pixel_to_direction_unchecked<T: Real>(x: usize, y: usize, width: usize, height: usize) -> Direction<T> {
    let u = (T::from_usize_exact(x) + T::lit(0.5)) / T::from_usize_exact(width);
    let t = (T::from_usize_exact(y) + T::lit(0.5)) / T::from_usize_exact(height);
    uv_to_direction(u, t)
}

/// Continuous form of the mapping, `u, t ∈ [0, 1]`.
#[inline]
pub fn uv_to_direction<T: Real>(u: T, t: T) -> Direction<T> {
    let phi = T::lit(2.0) * T::PI() * u - T::PI();
    let theta = T::PI() * t;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Direction::new_unchecked(st * sp, ct, -st * cp)
}

/// Inverse mapping. Returns continuous image coordinates `(x, y)` in which the
/// center of pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`; `φ` wraps to `[−π, π)`.
pub fn direction_to_pixel<T: Real>(v: Direction<T>, width: usize, height: usize) -> (T, T) {
    let theta = v.y.max(-T::one()).min(T::one()).acos();
    let mut phi = v.x.atan2(-v.z);
    if phi >= T::PI() {
        phi = phi - T::lit(2.0) * T::PI();
    }
    let u = (phi + T::PI()) / (T::lit(2.0) * T::PI());
    let t = theta / T::PI();
    (u * T::from_usize_exact(width), t * T::from_usize_exact(height))
}

/// Solid-angle weight of a pixel row relative to the equator, `sin θ`.
pub fn row_solid_angle_weight<T: Real>(y: usize, height: usize) -> T {
    (T::PI() * (T::from_usize_exact(y) + T::lit(0.5)) / T::from_usize_exact(height)).sin()
}

/// PSNR value returned when the error is negligible relative to the peak.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(peak² / MSE)` with `peak` the maximum of `reference`, over all channels.
pub fn psnr<T: Real>(test: &Panorama<T>, reference: &Panorama<T>) -> Result<T> {
    if !test.same_shape(reference) {
        return Err(invalid(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            test.width, test.height, test.channels, reference.width, reference.height, reference.channels
        )));
    }
    let peak = reference.pixels.iter().fold(T::zero(), |m, &v| m.max(v));
    if !(peak > T::zero()) {
        return Err(domain("reference image is all zero"));
    }
    let count = T::from_usize_exact(test.pixels.len());
    let mse = test
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |s, v| s + v)
        / count;
    let peak_sq = peak * peak;
    if mse < peak_sq * T::lit(10f64.powf(-9.9)) {
        return Ok(T::lit(PSNR_CAP_DB));
    }
    Ok(T::lit(10.0) * (peak_sq / mse).log10())
}

/// Filmic rational curve used to weight amplitude errors:
/// `x(2.51x + 0.03) / (x(2.43x + 0.59) + 0.14)`.
pub fn aces_weight<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero()) {
        return Err(invalid(format!("aces weight needs x >= 0, got {x}")));
    }
    Ok(aces_weight_unchecked(x))
}

#[inline]
pub(crate) fn aces_weight_unchecked<T: Real>(x: T) -> T {
    x * (T::lit(2.51) * x + T::lit(0.03)) / (x * (T::lit(2.43) * x + T::lit(0.59)) + T::lit(0.14))
}

/// Display gamma applied by [`tonemap_ldr`].
pub const LDR_GAMMA: f64 = 2.2;

/// Exposure-normalizes by the 90th-percentile luminance, clips to `[0, 1]`
/// and applies gamma `1/2.2`.
pub fn tonemap_ldr<T: Real>(pano: &Panorama<T>) -> Panorama<T> {
    let nc = pano.channels;
    let mut lum: Vec<T> = pano
        .pixels
        .chunks(nc)
        .map(|p| {
            if nc == 3 {
                T::lit(0.2126) * p[0] + T::lit(0.7152) * p[1] + T::lit(0.0722) * p[2]
            } else {
                p[0]
            }
        })
        .collect();
    let max = lum.iter().fold(T::zero(), |m, &v| m.max(v));
    lum.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((lum.len() as f64) * 0.9).ceil().max(1.0) as usize - 1;
    let mut exposure = lum[rank];
    if !(exposure > T::zero()) {
        exposure = max;
    }
    let mut out = pano.clone();
    if !(exposure > T::zero()) {
        return out;
    }
    let inv_gamma = T::lit(1.0 / LDR_GAMMA);
    for v in &mut out.pixels {
        let lin = (*v / exposure).max(T::zero()).min(T::one());
        *v = lin.powf(inv_gamma);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_and_top_pixels() {
        let (w, h) = (64, 32);
        let v: Direction<f64> = pixel_to_direction(w / 2, h / 2, w, h).unwrap();
        let fwd = Direction::new(0.0, 0.0, -1.0).unwrap();
        let pixel_angle = std::f64::consts::PI / h as f64;
        assert!(v.angle_to(fwd) < 2.0 * pixel_angle);

        let top: Direction<f64> = pixel_to_direction(5, 0, w, h).unwrap();
        let theta = top.y.acos();
        assert!((theta - std::f64::consts::PI / (2.0 * h as f64)).abs() < 1e-12);
        assert!(top.angle_to(Direction::new(0.0, 1.0, 0.0).unwrap()) < pixel_angle);
        assert!(pixel_to_direction::<f64>(w, 0, w, h).is_err());
    }

    #[test]
    fn inverse_mapping_landmarks() {
        let (x, y) = direction_to_pixel(Direction::new(0.0f64, 1.0, 0.0).unwrap(), 64, 32);
        assert!(y.abs() < 1e-12 && x.is_finite());
        let (x, y) = direction_to_pixel(Direction::new(0.0f64, 0.0, -1.0).unwrap(), 64, 32);
        assert!((x - 32.0).abs() < 1e-12 && (y - 16.0).abs() < 1e-12);
        // φ = π wraps to the left edge.
        let (x, _) = direction_to_pixel(Direction::new(0.0f64, 0.0, 1.0).unwrap(), 64, 32);
        assert!(x.abs() < 1e-12);
    }

    #[test]
    fn random_pixel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let w = rng.gen_range(2..600);
            let h = rng.gen_range(2..300);
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let v: Direction<f64> = pixel_to_direction(x, y, w, h).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
            let (px, py) = direction_to_pixel(v, w, h);
            assert!((px - 0.5 - x as f64).abs() < 0.5);
            assert!((py - 0.5 - y as f64).abs() < 0.5);
        }
    }

    fn pano(w: usize, h: usize, v: Vec<f64>) -> Panorama<f64> {
        Panorama::new(w, h, 1, v).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = pano(2, 2, vec![1.0, 0.5, 0.2, 0.0]);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let r = pano(2, 1, vec![1.0, 0.0]);
        let t = pano(2, 1, vec![0.9, 0.1]);
        assert!((psnr(&t, &r).unwrap() - 20.0).abs() < 1e-9);
        let t = pano(2, 1, vec![0.0, 1.0]);
        assert!(psnr(&t, &r).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &r).is_err());
        let z = pano(2, 1, vec![0.0, 0.0]);
        assert!(matches!(psnr(&t, &z), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = Panorama::from_fn(32, 16, 3, |_, _, _| rng.gen_range(0.2..1.0)).unwrap();
        let mut last = f64::INFINITY;
        for sigma in [0.001, 0.01, 0.05, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let noisy = Panorama::from_fn(32, 16, 3, |x, y, c| {
                (reference.get(x, y, c) + sigma * (rng.gen::<f64>() - 0.5)).max(0.0)
            })
            .unwrap();
            let p = psnr(&noisy, &reference).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn aces_values() {
        assert_eq!(aces_weight(0.0f64).unwrap(), 0.0);
        assert!((aces_weight(1.0f64).unwrap() - 2.54 / 3.16).abs() < 1e-15);
        assert!((aces_weight(10.0f64).unwrap() - 251.3 / 249.04).abs() < 1e-12);
        assert!(aces_weight(-1e-9f64).is_err());
        assert!(aces_weight(f64::NAN).is_err());
    }

    #[test]
    fn tonemap_contracts() {
        let z = Panorama::filled(8, 4, 3, 0.0f64).unwrap();
        assert!(tonemap_ldr(&z).pixels().iter().all(|&v| v == 0.0));
        let c = Panorama::filled(8, 4, 3, 3.7f64).unwrap();
        assert!(tonemap_ldr(&c).pixels().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hdr = Panorama::from_fn(16, 8, 3, |_, _, _| rng.gen::<f64>().powi(4) * 100.0).unwrap();
        assert!(tonemap_ldr(&hdr).pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn box_resample_preserves_mean_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Panorama::from_fn(30, 14, 3, |_, _, _| rng.gen::<f64>()).unwrap();
        let q = p.resample_box(12, 6).unwrap();
        let mean = |x: &Panorama<f64>| x.pixels().iter().sum::<f64>() / x.pixels().len() as f64;
        assert!((mean(&p) - mean(&q)).abs() < 1e-12);
        let c = Panorama::filled(40, 20, 1, 2.5f64)
            .unwrap()
            .resample_box(16, 8)
            .unwrap();
        assert!(c.pixels().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn integer_azimuth_rotation_is_a_column_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Panorama::from_fn(36, 18, 1, |_, _, _| rng.gen::<f64>()).unwrap();
        let r = p.rotate_azimuth(30.0);
        for y in 0..18 {
            for x in 0..36 {
                assert!((r.get(x, y, 0) - p.get((x + 3) % 36, y, 0)).abs() < 1e-12);
            }
        }
    }
}
