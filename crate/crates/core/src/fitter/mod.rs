//! Ground-truth amplitude fitting: nonnegative least squares of the lobe
//! mixture against radiance and depth panoramas.

mod nnls;

pub use nnls::{nnls_normal, objective, NnlsSolution};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::panorama::{pixel_to_direction_unchecked, psnr, row_solid_angle_weight, Panorama};
use crate::scalar::Real;
use crate::sg_model::{sg_basis, DsgLight, SgAmplitude};
use crate::sphere_layout::NodeLayout;

/// Per-pixel weight in the least-squares objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every pixel counts once.
    #[default]
    None,
    /// Pixels weighted by `sin θ`, compensating equirectangular pole oversampling.
    SolidAngle,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "solid_angle" => Ok(Self::SolidAngle),
            other => Err(invalid(format!("unknown weighting `{other}`"))),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::SolidAngle => "solid_angle",
        })
    }
}

/// Minimum fitting raster, width × height.
pub const MIN_FIT_DIMS: (usize, usize) = (16, 8);
/// Default fitting raster, width × height.
pub const DEFAULT_FIT_DIMS: (usize, usize) = (256, 128);

/// `AᵀWA` and `AᵀWb` per channel, `A` the unit-amplitude lobe basis sampled at pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem<T> {
    pub n: usize,
    /// Row-major `n × n`.
    pub gram: Vec<T>,
    pub rhs: Vec<Vec<T>>,
    /// `Σ_p w_p·b_p²` per channel, so objectives can be reported in absolute terms.
    pub target_sq: Vec<T>,
    pub pixel_count: usize,
    pub warnings: Vec<String>,
}

impl<T: Real> NormalSystem<T> {
    pub fn channels(&self) -> usize {
        self.rhs.len()
    }

    pub fn objective(&self, channel: usize, x: &[T]) -> T {
        objective(&self.gram, &self.rhs[channel], self.target_sq[channel], x)
    }
}

/// Lobe basis sampled over a raster. Depends only on the layout, the raster
/// size and the weighting, so one basis serves any number of panoramas.
#[derive(Debug, Clone)]
pub struct FitBasis<T> {
    layout: NodeLayout<T>,
    width: usize,
    height: usize,
    weighting: Weighting,
    /// Pixel-major: `values[p * n + i]`.
    values: Vec<T>,
    row_weights: Vec<T>,
    gram: Vec<T>,
    warnings: Vec<String>,
}

const GRAM_BLOCK_ROWS: usize = 4;

impl<T: Real> FitBasis<T> {
    pub fn new(layout: &NodeLayout<T>, width: usize, height: usize, weighting: Weighting) -> Result<Self> {
        if width < MIN_FIT_DIMS.0 || height < MIN_FIT_DIMS.1 {
            return Err(invalid(format!(
                "fitting needs at least {}x{} pixels, got {width}x{height}",
                MIN_FIT_DIMS.0, MIN_FIT_DIMS.1
            )));
        }
        let n = layout.n();
        let mut values = vec![T::zero(); width * height * n];
        values.par_chunks_mut(width * n).enumerate().for_each(|(y, row)| {
            for x in 0..width {
                let v = pixel_to_direction_unchecked(x, y, width, height);
                for (i, axis) in layout.axes().iter().enumerate() {
                    row[x * n + i] = sg_basis(v, *axis, layout.sharpness());
                }
            }
        });
        let row_weights: Vec<T> = (0..height)
            .map(|y| match weighting {
                Weighting::None => T::one(),
                Weighting::SolidAngle => row_solid_angle_weight(y, height),
            })
            .collect();

        // Partial Gram matrices over fixed row blocks, summed in block order.
        let partials: Vec<Vec<T>> = (0..height.div_ceil(GRAM_BLOCK_ROWS))
            .into_par_iter()
            .map(|b| {
                let mut g = vec![T::zero(); n * n];
                for y in b * GRAM_BLOCK_ROWS..((b + 1) * GRAM_BLOCK_ROWS).min(height) {
                    let w = row_weights[y];
                    for x in 0..width {
                        let basis = &values[(y * width + x) * n..(y * width + x + 1) * n];
                        for i in 0..n {
                            let bi = w * basis[i];
                            let row = &mut g[i * n..i * n + n];
                            for j in i..n {
                                row[j] = row[j] + bi * basis[j];
                            }
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = vec![T::zero(); n * n];
        for g in &partials {
            for (a, b) in gram.iter_mut().zip(g) {
                *a = *a + *b;
            }
        }
        for i in 0..n {
            for j in 0..i {
                gram[i * n + j] = gram[j * n + i];
            }
        }

        let mut warnings = Vec::new();
        let axes = layout.axes();
        for i in 0..n {
            for j in (i + 1)..n {
                if axes[i].angle_to(axes[j]) <= T::lit(1e-9) {
                    warnings.push(format!(
                        "nodes {i} and {j} share an axis; the normal system is singular"
                    ));
                }
            }
        }
        if (0..n).any(|i| !(gram[i * n + i] > T::zero())) {
            warnings.push("some lobe has no pixel coverage; the normal system is singular".into());
        }
        Ok(Self {
            layout: layout.clone(),
            width,
            height,
            weighting,
            values,
            row_weights,
            gram,
            warnings,
        })
    }

    pub fn layout(&self) -> &NodeLayout<T> {
        &self.layout
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn gram(&self) -> &[T] {
        &self.gram
    }

    /// Unit-amplitude basis values at pixel `(x, y)`.
    pub fn basis_at(&self, x: usize, y: usize) -> &[T] {
        let n = self.layout.n();
        &self.values[(y * self.width + x) * n..(y * self.width + x + 1) * n]
    }

    pub fn normal_system(&self, pano: &Panorama<T>) -> Result<NormalSystem<T>> {
        if pano.width() != self.width || pano.height() != self.height {
            return Err(invalid(format!(
                "panorama is {}x{}, basis is {}x{}",
                pano.width(),
                pano.height(),
                self.width,
                self.height
            )));
        }
        let n = self.layout.n();
        let nc = pano.channels();
        let mut rhs = vec![vec![T::zero(); n]; nc];
        let mut target_sq = vec![T::zero(); nc];
        for y in 0..self.height {
            let w = self.row_weights[y];
            for x in 0..self.width {
                let basis = self.basis_at(x, y);
                for c in 0..nc {
                    let p = pano.get(x, y, c);
                    if p == T::zero() {
                        continue;
                    }
                    let wp = w * p;
                    target_sq[c] = target_sq[c] + wp * p;
                    for (r, &b) in rhs[c].iter_mut().zip(basis) {
                        *r = *r + wp * b;
                    }
                }
            }
        }
        Ok(NormalSystem {
            n,
            gram: self.gram.clone(),
            rhs,
            target_sq,
            pixel_count: self.width * self.height,
            warnings: self.warnings.clone(),
        })
    }

    /// Renders per-node amplitudes (`amps[i * nc + c]`) through the basis.
    pub fn render(&self, amps: &[T], nc: usize) -> Result<Panorama<T>> {
        let n = self.layout.n();
        let mut pixels = vec![T::zero(); self.width * self.height * nc];
        for (p, out) in pixels.chunks_mut(nc).enumerate() {
            let basis = &self.values[p * n..(p + 1) * n];
            for (i, &b) in basis.iter().enumerate() {
                for c in 0..nc {
                    out[c] = out[c] + b * amps[i * nc + c];
                }
            }
        }
        Panorama::new(self.width, self.height, nc, pixels)
    }
}

/// Builds the normal system of the weighted least-squares fit.
pub fn build_normal_system<T: Real>(
    layout: &NodeLayout<T>,
    pano: &Panorama<T>,
    weighting: Weighting,
) -> Result<NormalSystem<T>> {
    FitBasis::new(layout, pano.width(), pano.height(), weighting)?.normal_system(pano)
}

/// Active-set swap cap per unknown.
pub const SWAPS_PER_UNKNOWN: usize = 10;

/// Nonnegative amplitudes for one channel of the system.
pub fn nnls_solve<T: Real>(system: &NormalSystem<T>, channel: usize) -> Result<NnlsSolution<T>> {
    let rhs = system
        .rhs
        .get(channel)
        .ok_or_else(|| invalid(format!("channel {channel} out of range")))?;
    nnls_normal(&system.gram, rhs, SWAPS_PER_UNKNOWN * system.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub weighting: Weighting,
    /// Larger inputs are box-filtered down to this width × height.
    pub max_dims: (usize, usize),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::None,
            max_dims: DEFAULT_FIT_DIMS,
        }
    }
}

/// Summary of a fit, serialized next to the fitted light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `‖reconstruction − target‖₂` over all radiance pixels and channels at fitting resolution.
    pub residual_l2: f64,
    pub psnr_reconstruction: f64,
    pub iterations_per_channel: Vec<usize>,
    pub weighting: Weighting,
    pub fit_width: usize,
    pub fit_height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_residual_l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub light: DsgLight<T>,
    pub report: FitReport,
}

fn fit_dims(width: usize, height: usize, max: (usize, usize)) -> (usize, usize) {
    if width > max.0 || height > max.1 {
        max
    } else {
        (width, height)
    }
}

/// Fits radiance (and optionally depth) amplitudes on `layout`.
pub fn fit_light<T: Real>(
    pano: &Panorama<T>,
    depth: Option<&Panorama<T>>,
    layout: &NodeLayout<T>,
    options: FitOptions,
) -> Result<FitOutcome<T>> {
    let (w, h) = fit_dims(pano.width(), pano.height(), options.max_dims);
    let basis = FitBasis::new(layout, w, h, options.weighting)?;
    fit_with_basis(&basis, pano, depth)
}

/// Same as [`fit_light`] with a prebuilt basis; the inputs are resampled to its size.
pub fn fit_with_basis<T: Real>(
    basis: &FitBasis<T>,
    pano: &Panorama<T>,
    depth: Option<&Panorama<T>>,
) -> Result<FitOutcome<T>> {
    if pano.channels() != 3 {
        return Err(invalid("radiance panorama must have 3 channels"));
    }
    if let Some(d) = depth {
        if d.channels() != 1 {
            return Err(invalid("depth panorama must have 1 channel"));
        }
        if d.width() != pano.width() || d.height() != pano.height() {
            return Err(invalid("depth and radiance panoramas differ in size"));
        }
    }
    let (w, h) = basis.dims();
    let target = pano.resample_box(w, h)?;
    let system = basis.normal_system(&target)?;
    let n = system.n;

    let mut iterations = Vec::with_capacity(3);
    let mut rgb = vec![T::zero(); n * 3];
    for c in 0..3 {
        let sol = nnls_solve(&system, c)?;
        iterations.push(sol.swaps);
        for i in 0..n {
            rgb[i * 3 + c] = sol.x[i];
        }
    }
    let recon = basis.render(&rgb, 3)?;
    let residual_l2 = residual(&recon, &target);
    let psnr_reconstruction = if target.pixels().iter().any(|&v| v > T::zero()) {
        psnr(&recon, &target)?.to_f64_lossy()
    } else if recon.pixels().iter().all(|&v| v == T::zero()) {
        crate::panorama::PSNR_CAP_DB
    } else {
        0.0
    };

    let mut depth_amps = None;
    let mut depth_residual_l2 = None;
    if let Some(d) = depth {
        let d = d.resample_box(w, h)?;
        let dsys = basis.normal_system(&d)?;
        let sol = nnls_solve(&dsys, 0)?;
        iterations.push(sol.swaps);
        let drecon = basis.render(&sol.x, 1)?;
        depth_residual_l2 = Some(residual(&drecon, &d));
        depth_amps = Some(sol.x);
    }

    let amplitudes = (0..n)
        .map(|i| SgAmplitude {
            r: rgb[i * 3],
            g: rgb[i * 3 + 1],
            b: rgb[i * 3 + 2],
            depth: depth_amps.as_ref().map(|d| d[i]),
        })
        .collect();
    let light = DsgLight::new(basis.layout().clone(), amplitudes)?;
    Ok(FitOutcome {
        light,
        report: FitReport {
            residual_l2,
            psnr_reconstruction,
            iterations_per_channel: iterations,
            weighting: basis.weighting(),
            fit_width: w,
            fit_height: h,
            depth_residual_l2,
            warnings: system.warnings,
        },
    })
}

/// Refits new panoramas on the layout of an existing light.
///
/// Warped probes are derived data with moved axes and are refused.
pub fn refit_like<T: Real>(
    light: &DsgLight<T>,
    pano: &Panorama<T>,
    depth: Option<&Panorama<T>>,
    options: FitOptions,
) -> Result<FitOutcome<T>> {
    if light.is_warped() {
        return Err(Error::Unsupported("warped probes cannot be fitted".into()));
    }
    fit_light(pano, depth, light.layout(), options)
}

fn residual<T: Real>(a: &Panorama<T>, b: &Panorama<T>) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x - y).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}
