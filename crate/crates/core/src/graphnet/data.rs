//! Training pairs: synthetic rooms, perspective views, and target fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::train::TrainSample;
use crate::error::{invalid, Result};
use crate::fitter::{fit_with_basis, FitBasis, FitReport};
use crate::panorama::{pixel_to_direction_unchecked, sample_crop, tonemap_ldr, CropSpec, Panorama};
use crate::sg_model::{reconstruct_panorama, ChannelSet, DsgLight, SgAmplitude};
use crate::sphere_layout::NodeLayout;

/// Amplitudes as an `N × 4` (with depth) or `N × 3` tensor.
pub fn light_to_tensor(light: &DsgLight<f64>, with_depth: bool) -> Result<Tensor> {
    if with_depth && !light.has_depth() {
        return Err(invalid("light has no depth channel"));
    }
    let c = if with_depth { 4 } else { 3 };
    let data = light
        .amplitudes()
        .iter()
        .flat_map(|a| (0..c).map(move |ch| a.channel(ch)))
        .collect();
    Tensor::new(vec![light.layout().n(), c], data)
}

/// Inverse of [`light_to_tensor`] on a given layout.
pub fn tensor_to_light(t: &Tensor, layout: &NodeLayout<f64>) -> Result<DsgLight<f64>> {
    let (n, c) = t.dims2()?;
    if n != layout.n() || !(c == 3 || c == 4) {
        return Err(invalid(format!(
            "tensor {:?} does not match {} nodes",
            t.shape(),
            layout.n()
        )));
    }
    let amps = (0..n)
        .map(|i| {
            let r = &t.data()[i * c..(i + 1) * c];
            if c == 4 {
                SgAmplitude::rgbd(r[0], r[1], r[2], r[3])
            } else {
                SgAmplitude::rgb(r[0], r[1], r[2])
            }
        })
        .collect();
    DsgLight::new(layout.clone(), amps)
}

/// Row-major `h × w × 3` tensor view of an RGB panorama or crop.
pub fn image_tensor(img: &Panorama<f64>) -> Result<Tensor> {
    if img.channels() != 3 {
        return Err(invalid("image must have 3 channels"));
    }
    Tensor::new(vec![img.height(), img.width(), 3], img.pixels().to_vec())
}

const RADIUS_LO: f64 = 10.0;
const RADIUS_HI: f64 = 25.0;

/// A random box-shaped room lit by a dim ambient term and a few bright lobes.
#[derive(Debug, Clone)]
pub struct SyntheticRoom {
    pub light: DsgLight<f64>,
    pub half_extents: [f64; 3],
}

impl SyntheticRoom {
    pub fn random(layout: &NodeLayout<f64>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_extents = [
            rng.gen_range(1.5..4.0),
            rng.gen_range(1.2..1.6),
            rng.gen_range(1.5..4.0),
        ];
        let tint = [
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
        ];
        let base = rng.gen_range(0.05..0.15);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut amps: Vec<SgAmplitude<f64>> = layout
            .axes()
            .iter()
            .map(|a| {
                let level = base * (1.0 + 0.4 * a.y + 0.2 * (a.x * phase.cos() + a.z * phase.sin()));
                let d = box_depth(half_extents, [a.x, a.y, a.z]);
                SgAmplitude::rgbd(level * tint[0], level * tint[1], level * tint[2], d)
            })
            .collect();
        for _ in 0..rng.gen_range(1..=3) {
            let center = layout.axes()[rng.gen_range(0..layout.n())];
            let radius = rng.gen_range(RADIUS_LO..RADIUS_HI).to_radians();
            let power = rng.gen_range(1.0..4.0);
            let warm = rng.gen_range(0.0..1.0);
            for (a, axis) in amps.iter_mut().zip(layout.axes()) {
                let t = axis.angle_to(center) / radius;
                let p = power * (-t * t).exp();
                a.r += p;
                a.g += p * (0.85 + 0.1 * warm);
                a.b += p * (1.0 - 0.4 * warm);
            }
        }
        Ok(Self {
            light: DsgLight::new(layout.clone(), amps)?,
            half_extents,
        })
    }

    /// Radiance rendered from the light and per-pixel distance to the walls.
    pub fn render(&self, width: usize, height: usize) -> Result<(Panorama<f64>, Panorama<f64>)> {
        let rgb = reconstruct_panorama(&self.light, width, height, ChannelSet::Color)?;
        let depth = Panorama::from_fn(width, height, 1, |x, y, _| {
            let v = pixel_to_direction_unchecked::<f64>(x, y, width, height);
            box_depth(self.half_extents, [v.x, v.y, v.z])
        })?;
        Ok((rgb, depth))
    }
}

/// Distance from the center of an axis-aligned box to its boundary along `dir`.
pub fn box_depth(half: [f64; 3], dir: [f64; 3]) -> f64 {
    (0..3)
        .filter(|&i| dir[i] != 0.0)
        .map(|i| half[i] / dir[i].abs())
        .fold(f64::INFINITY, f64::min)
}

/// Builds one training pair from a panorama and a view.
///
/// The target light is fitted to the panorama turned so that the view
/// direction sits at azimuth zero, matching what the camera sees.
pub fn build_sample(
    pano: &Panorama<f64>,
    depth: Option<&Panorama<f64>>,
    spec: &CropSpec,
    basis: &FitBasis<f64>,
) -> Result<(TrainSample, DsgLight<f64>, FitReport)> {
    let crop = sample_crop(pano, spec)?;
    let image = image_tensor(&tonemap_ldr(&crop))?;
    let turned = pano.rotate_azimuth(spec.azimuth);
    let turned_depth = depth.map(|d| d.rotate_azimuth(spec.azimuth));
    let fit = fit_with_basis(basis, &turned, turned_depth.as_ref())?;
    let truth = light_to_tensor(&fit.light, depth.is_some())?;
    Ok((TrainSample { image, truth }, fit.light, fit.report))
}

/// Eight-ish small rooms, one random view each: the memorization workload.
pub fn synthetic_dataset(
    count: usize,
    layout: &NodeLayout<f64>,
    seed: u64,
    with_depth: bool,
) -> Result<Vec<TrainSample>> {
    let basis = FitBasis::new(layout, 128, 64, crate::fitter::Weighting::None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let room = SyntheticRoom::random(layout, rng.gen())?;
            let (rgb, depth) = room.render(256, 128)?;
            let spec = CropSpec::random(&mut rng);
            let d = with_depth.then_some(&depth);
            Ok(build_sample(&rgb, d, &spec, &basis)?.0)
        })
        .collect()
}
