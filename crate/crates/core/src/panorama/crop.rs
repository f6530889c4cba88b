use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Panorama;
use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::sphere_layout::Direction;

/// Perspective view into a panorama. Angles in degrees; `fov_h` is horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub elevation: f64,
    pub azimuth: f64,
    pub fov_h: f64,
    pub out_width: usize,
    pub out_height: usize,
}

impl CropSpec {
    pub const ELEVATION_RANGE: (f64, f64) = (-20.0, 20.0);
    pub const AZIMUTH_RANGE: (f64, f64) = (-180.0, 180.0);
    pub const FOV_RANGE: (f64, f64) = (60.0, 80.0);
    pub const DEFAULT_WIDTH: usize = 360;
    pub const DEFAULT_HEIGHT: usize = 240;

    pub fn new(elevation: f64, azimuth: f64, fov_h: f64) -> Result<Self> {
        let spec = Self {
            elevation,
            azimuth,
            fov_h,
            out_width: Self::DEFAULT_WIDTH,
            out_height: Self::DEFAULT_HEIGHT,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_output(mut self, width: usize, height: usize) -> Result<Self> {
        self.out_width = width;
        self.out_height = height;
        self.validate()?;
        Ok(self)
    }

    /// Uniform draw over the sampling ranges, default output size.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        Self {
            elevation: draw(rng, Self::ELEVATION_RANGE),
            azimuth: draw(rng, Self::AZIMUTH_RANGE),
            fov_h: draw(rng, Self::FOV_RANGE),
            out_width: Self::DEFAULT_WIDTH,
            out_height: Self::DEFAULT_HEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !within(self.elevation, Self::ELEVATION_RANGE) {
            return Err(invalid(format!("elevation {} outside [-20, 20]", self.elevation)));
        }
        if !within(self.azimuth, Self::AZIMUTH_RANGE) {
            return Err(invalid(format!("azimuth {} outside [-180, 180]", self.azimuth)));
        }
        if !within(self.fov_h, Self::FOV_RANGE) {
            return Err(invalid(format!("fov {} outside [60, 80]", self.fov_h)));
        }
        if self.out_width == 0 || self.out_height == 0 {
            return Err(invalid("crop output dimensions must be positive"));
        }
        Ok(())
    }

    /// World-space ray through the center of output pixel `(i, j)`.
    ///
    /// Camera looks down −Z with +Y up; the ray is tilted by elevation about
    /// +X, then turned by azimuth about +Y so that positive azimuth moves the
    /// view toward +X.
    pub fn ray<T: Real>(&self, i: usize, j: usize) -> Direction<T> {
        let w = T::from_usize_exact(self.out_width);
        let h = T::from_usize_exact(self.out_height);
        let tan_h = (T::lit(self.fov_h.to_radians()) * T::lit(0.5)).tan();
        let tan_v = tan_h * h / w;
        let sx = (T::lit(2.0) * (T::from_usize_exact(i) + T::lit(0.5)) / w - T::one()) * tan_h;
        let sy = (T::one() - T::lit(2.0) * (T::from_usize_exact(j) + T::lit(0.5)) / h) * tan_v;
        let (x, y, z) = (sx, sy, -T::one());

        let (se, ce) = T::lit(self.elevation.to_radians()).sin_cos();
        let (y, z) = (y * ce - z * se, y * se + z * ce);

        let (sa, ca) = T::lit(self.azimuth.to_radians()).sin_cos();
        let (x, z) = (x * ca - z * sa, x * sa + z * ca);

        let norm = (x * x + y * y + z * z).sqrt();
        Direction::new_unchecked(x / norm, y / norm, z / norm)
    }
}

/// Pinhole crop of a 3-channel panorama with bilinear lookup.
pub fn sample_crop<T: Real>(pano: &Panorama<T>, spec: &CropSpec) -> Result<Panorama<T>> {
    spec.validate()?;
    if pano.channels() != 3 {
        return Err(invalid("crop sampling needs a 3-channel panorama"));
    }
    let (w, h) = (spec.out_width, spec.out_height);
    let mut pixels = vec![T::zero(); w * h * 3];
    for j in 0..h {
        for i in 0..w {
            let base = (j * w + i) * 3;
            pano.sample_direction(spec.ray(i, j), &mut pixels[base..base + 3]);
        }
    }
    Panorama::new(w, h, 3, pixels)
}
