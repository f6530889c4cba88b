//! The lighting model: spherical Gaussian lobes on fixed axes with a shared
//! sharpness and per-node RGB (plus optional depth) amplitudes.

use std::ops::{Add, Mul};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, field, invalid, Error, Result};
use crate::panorama::{pixel_to_direction_unchecked, Panorama};
use crate::scalar::Real;
use crate::sphere_layout::{bandwidth, fibonacci_directions, Direction, NodeLayout};

/// Per-node amplitude: linear RGB radiance and an optional depth in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SgAmplitude<T> {
    pub r: T,
    pub g: T,
    pub b: T,
    pub depth: Option<T>,
}

impl<T: Real> SgAmplitude<T> {
    pub fn rgb(r: T, g: T, b: T) -> Self {
        Self { r, g, b, depth: None }
    }

    pub fn rgbd(r: T, g: T, b: T, d: T) -> Self {
        Self {
            r,
            g,
            b,
            depth: Some(d),
        }
    }

    pub fn zero(with_depth: bool) -> Self {
        Self {
            r: T::zero(),
            g: T::zero(),
            b: T::zero(),
            depth: with_depth.then(T::zero),
        }
    }

    pub fn scale(self, s: T) -> Self {
        Self {
            r: self.r * s,
            g: self.g * s,
            b: self.b * s,
            depth: self.depth.map(|d| d * s),
        }
    }

    #[inline]
    pub fn channel(&self, c: usize) -> T {
        match c {
            0 => self.r,
            1 => self.g,
            2 => self.b,
            _ => self.depth.unwrap_or_else(T::zero),
        }
    }

    fn is_valid(&self) -> bool {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        ok(self.r) && ok(self.g) && ok(self.b) && self.depth.is_none_or(ok)
    }
}

impl<T: Real> Add for SgAmplitude<T> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            r: self.r + o.r,
            g: self.g + o.g,
            b: self.b + o.b,
            depth: match (self.depth, o.depth) {
                (Some(a), Some(b)) => Some(a + b),
                (a, b) => a.or(b),
            },
        }
    }
}

impl<T: Real> Mul<T> for SgAmplitude<T> {
    type Output = Self;

    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Unit-amplitude lobe value `exp(λ(v·μ − 1))`.
///
/// Uses `v·μ − 1 = −‖v − μ‖²/2`, exact for unit vectors and free of
/// cancellation near the axis.
#[inline]
pub fn sg_basis<T: Real>(v: Direction<T>, axis: Direction<T>, sharpness: T) -> T {
    let dx = v.x - axis.x;
    let dy = v.y - axis.y;
    let dz = v.z - axis.z;
    (-sharpness * T::lit(0.5) * (dx * dx + dy * dy + dz * dz)).exp()
}

/// Evaluates one lobe `a·exp(λ(v·μ − 1))` for every channel of `amplitude`.
pub fn sg_eval<T: Real>(
    v: Direction<T>,
    axis: Direction<T>,
    sharpness: T,
    amplitude: SgAmplitude<T>,
) -> Result<SgAmplitude<T>> {
    v.check_unit()?;
    axis.check_unit()?;
    if !(sharpness > T::zero()) {
        return Err(invalid("sharpness must be positive"));
    }
    Ok(amplitude.scale(sg_basis(v, axis, sharpness)))
}

/// Which part of the amplitude a panorama is rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSet {
    Color,
    Depth,
}

/// A fitted or predicted lighting model.
///
/// A warped light is a probe derived from another light at a different
/// position. Its axes are no longer the fixed layout and it may carry
/// per-node sharpness; it can be evaluated but not re-fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct DsgLight<T> {
    layout: NodeLayout<T>,
    amplitudes: Vec<SgAmplitude<T>>,
    has_depth: bool,
    warped: bool,
    per_node_sharpness: Option<Vec<T>>,
}

impl<T: Real> DsgLight<T> {
    pub fn new(layout: NodeLayout<T>, amplitudes: Vec<SgAmplitude<T>>) -> Result<Self> {
        if amplitudes.len() != layout.n() {
            return Err(invalid(format!(
                "expected {} amplitudes, got {}",
                layout.n(),
                amplitudes.len()
            )));
        }
        let has_depth = amplitudes.first().is_some_and(|a| a.depth.is_some());
        for (i, a) in amplitudes.iter().enumerate() {
            if a.depth.is_some() != has_depth {
                return Err(invalid(format!("node {i} depth presence differs from node 0")));
            }
            if !a.is_valid() {
                return Err(invalid(format!("node {i} amplitude is negative or non-finite")));
            }
        }
        Ok(Self {
            layout,
            amplitudes,
            has_depth,
            warped: false,
            per_node_sharpness: None,
        })
    }

    pub fn zeros(layout: NodeLayout<T>, with_depth: bool) -> Self {
        let n = layout.n();
        Self {
            layout,
            amplitudes: vec![SgAmplitude::zero(with_depth); n],
            has_depth: with_depth,
            warped: false,
            per_node_sharpness: None,
        }
    }

    #[inline]
    pub fn layout(&self) -> &NodeLayout<T> {
        &self.layout
    }

    #[inline]
    pub fn amplitudes(&self) -> &[SgAmplitude<T>] {
        &self.amplitudes
    }

    #[inline]
    pub fn has_depth(&self) -> bool {
        self.has_depth
    }

    #[inline]
    pub fn is_warped(&self) -> bool {
        self.warped
    }

    pub fn per_node_sharpness(&self) -> Option<&[T]> {
        self.per_node_sharpness.as_deref()
    }

    #[inline]
    pub fn sharpness_of(&self, i: usize) -> T {
        match &self.per_node_sharpness {
            Some(s) => s[i],
            None => self.layout.sharpness(),
        }
    }

    /// Same geometry, amplitudes multiplied by `s ≥ 0`.
    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for a in &mut out.amplitudes {
            *a = a.scale(s);
        }
        out
    }

    /// Drops the depth channel.
    pub fn without_depth(&self) -> Self {
        let mut out = self.clone();
        for a in &mut out.amplitudes {
            a.depth = None;
        }
        out.has_depth = false;
        out
    }

    /// Evaluates the mixture at `v` without checking that `v` is unit-norm.
    pub fn eval_unchecked(&self, v: Direction<T>) -> SgAmplitude<T> {
        let mut acc = SgAmplitude::zero(self.has_depth);
        for (i, (axis, a)) in self.layout.axes().iter().zip(&self.amplitudes).enumerate() {
            let w = sg_basis(v, *axis, self.sharpness_of(i));
            acc.r = acc.r + a.r * w;
            acc.g = acc.g + a.g * w;
            acc.b = acc.b + a.b * w;
            if let (Some(d), Some(ad)) = (acc.depth.as_mut(), a.depth) {
                *d = *d + ad * w;
            }
        }
        acc
    }

    pub fn to_json(&self) -> LightJson {
        let f = |v: T| v.to_f64_lossy();
        LightJson {
            n: self.layout.n(),
            lambda: f(self.layout.sharpness()),
            axes: self.layout.axes().iter().map(|a| a.cast::<f64>().to_array()).collect(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|a| {
                    let mut v = vec![f(a.r), f(a.g), f(a.b)];
                    if let Some(d) = a.depth {
                        v.push(f(d));
                    }
                    v
                })
                .collect(),
            has_depth: self.has_depth,
            warped: self.warped,
            per_node_lambda: self
                .per_node_sharpness
                .as_ref()
                .map(|s| s.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Validates a parsed document, naming the first offending field.
    pub fn from_json(doc: &LightJson) -> Result<Self> {
        if doc.n == 0 {
            return Err(field("n", "must be positive"));
        }
        if !(doc.lambda > 0.0) || !doc.lambda.is_finite() {
            return Err(field("lambda", "must be positive and finite"));
        }
        if doc.axes.len() != doc.n {
            return Err(field(
                "axes",
                format!("expected {} entries, got {}", doc.n, doc.axes.len()),
            ));
        }
        if doc.amplitudes.len() != doc.n {
            return Err(field(
                "amplitudes",
                format!("expected {} entries, got {}", doc.n, doc.amplitudes.len()),
            ));
        }
        let axes = doc
            .axes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                Direction::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
                    .map_err(|_| field(format!("axes[{i}]"), "not unit-norm"))
            })
            .collect::<Result<Vec<_>>>()?;
        let want = if doc.has_depth { 4 } else { 3 };
        let mut amplitudes = Vec::with_capacity(doc.n);
        for (i, a) in doc.amplitudes.iter().enumerate() {
            if a.len() != want {
                return Err(field(
                    format!("amplitudes[{i}]"),
                    format!(
                        "expected {want} channels (has_depth = {}), got {}",
                        doc.has_depth,
                        a.len()
                    ),
                ));
            }
            if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(field(
                    format!("amplitudes[{i}]"),
                    "channels must be finite and nonnegative",
                ));
            }
            let mut amp = SgAmplitude::rgb(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]));
            if doc.has_depth {
                amp.depth = Some(T::lit(a[3]));
            }
            amplitudes.push(amp);
        }
        let per_node_sharpness = match &doc.per_node_lambda {
            None => None,
            Some(s) => {
                if !doc.warped {
                    return Err(field("per_node_lambda", "only allowed on warped lights"));
                }
                if s.len() != doc.n {
                    return Err(field(
                        "per_node_lambda",
                        format!("expected {} entries, got {}", doc.n, s.len()),
                    ));
                }
                if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(field("per_node_lambda", "entries must be positive and finite"));
                }
                Some(s.iter().map(|&v| T::lit(v)).collect())
            }
        };
        let layout = NodeLayout::from_axes(axes, T::lit(doc.lambda))?;
        Ok(Self {
            layout,
            amplitudes,
            has_depth: doc.has_depth,
            warped: doc.warped,
            per_node_sharpness,
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: LightJson = serde_json::from_str(s).map_err(|e| field(json_error_field(&e), e.to_string()))?;
        Self::from_json(&doc)
    }

    /// True when this light sits on the standard layout for its node count.
    pub fn is_standard_layout(&self) -> bool {
        if self.warped {
            return false;
        }
        match NodeLayout::<T>::new(self.layout.n()) {
            Ok(std) => std == self.layout,
            Err(_) => false,
        }
    }
}

fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports "missing field `x`" / "unknown field `x`"; surface the name.
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "document".into())
}

/// On-disk JSON document for a [`DsgLight`]. Field names are part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightJson {
    pub n: usize,
    pub lambda: f64,
    pub axes: Vec<[f64; 3]>,
    pub amplitudes: Vec<Vec<f64>>,
    pub has_depth: bool,
    pub warped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node_lambda: Option<Vec<f64>>,
}

/// Mixture value `Σᵢ aᵢ·exp(λᵢ(v·μᵢ − 1))` at a unit direction.
pub fn mixture_eval<T: Real>(light: &DsgLight<T>, v: Direction<T>) -> Result<SgAmplitude<T>> {
    v.check_unit()?;
    Ok(light.eval_unchecked(v))
}

/// Renders the mixture into an equirectangular panorama, one sample per pixel center.
pub fn reconstruct_panorama<T: Real>(
    light: &DsgLight<T>,
    width: usize,
    height: usize,
    channels: ChannelSet,
) -> Result<Panorama<T>> {
    if width < 2 || height < 2 {
        return Err(invalid(format!("panorama must be at least 2x2, got {width}x{height}")));
    }
    if channels == ChannelSet::Depth && !light.has_depth() {
        return Err(Error::Unsupported("light carries no depth channel".into()));
    }
    let nc = match channels {
        ChannelSet::Color => 3,
        ChannelSet::Depth => 1,
    };
    let mut pixels = vec![T::zero(); width * height * nc];
    pixels.par_chunks_mut(width * nc).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            let v = pixel_to_direction_unchecked(x, y, width, height);
            let s = light.eval_unchecked(v);
            match channels {
                ChannelSet::Color => {
                    row[x * 3] = s.r;
                    row[x * 3 + 1] = s.g;
                    row[x * 3 + 2] = s.b;
                }
                ChannelSet::Depth => row[x] = s.depth.unwrap_or_else(T::zero),
            }
        }
    });
    Panorama::new(width, height, nc, pixels)
}

/// Options for [`warp_probe`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarpOptions {
    /// Scale each node's sharpness by `(d'/d)²`, approximating the change in
    /// solid angle of a fixed-size emitter.
    pub rescale_sharpness: bool,
}

/// Re-centers a depth-augmented light at `offset` (meters from the capture point).
///
/// Node `i` is treated as an emitter at `depthᵢ·μᵢ`; its new axis and depth
/// are taken from the vector between the offset point and that position.
/// Radiance is preserved along rays, so amplitudes are unchanged.
pub fn warp_probe<T: Real>(light: &DsgLight<T>, offset: [T; 3], opts: WarpOptions) -> Result<DsgLight<T>> {
    if !light.has_depth() {
        return Err(Error::Unsupported("probe warping needs per-node depth".into()));
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(invalid("offset must be finite"));
    }
    let mut min_depth = T::infinity();
    for (i, a) in light.amplitudes().iter().enumerate() {
        let d = a.depth.unwrap_or_else(T::zero);
        if !(d > T::zero()) {
            return Err(domain(format!("node {i} has non-positive depth")));
        }
        min_depth = min_depth.min(d);
    }
    let offset_norm = (offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2]).sqrt();
    if !(offset_norm < min_depth) {
        return Err(domain(format!(
            "offset at distance {offset_norm} is outside the node shell (min depth {min_depth})"
        )));
    }

    let n = light.layout().n();
    let mut axes = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    let mut sharp = Vec::with_capacity(n);
    for (i, (axis, a)) in light.layout().axes().iter().zip(light.amplitudes()).enumerate() {
        let d = a.depth.unwrap_or_else(T::zero);
        let (new_axis, new_depth) = if offset_norm == T::zero() {
            (*axis, d)
        } else {
            let px = d * axis.x - offset[0];
            let py = d * axis.y - offset[1];
            let pz = d * axis.z - offset[2];
            let dist = (px * px + py * py + pz * pz).sqrt();
            (Direction::new_unchecked(px / dist, py / dist, pz / dist), dist)
        };
        axes.push(new_axis);
        amplitudes.push(SgAmplitude {
            depth: Some(new_depth),
            ..*a
        });
        let ratio = new_depth / d;
        sharp.push(if opts.rescale_sharpness {
            light.sharpness_of(i) * ratio * ratio
        } else {
            light.sharpness_of(i)
        });
    }
    let per_node_sharpness = if opts.rescale_sharpness || light.per_node_sharpness.is_some() {
        Some(sharp)
    } else {
        None
    };
    Ok(DsgLight {
        layout: NodeLayout::from_axes(axes, light.layout().sharpness())?,
        amplitudes,
        has_depth: true,
        warped: true,
        per_node_sharpness,
    })
}

/// Radiance sampled once over a Fibonacci quadrature set, reusable for many normals.
#[derive(Debug, Clone)]
pub struct IrradianceEvaluator<T> {
    directions: Vec<Direction<T>>,
    radiance: Vec<[T; 3]>,
    weight: T,
}

impl<T: Real> IrradianceEvaluator<T> {
    pub fn new(light: &DsgLight<T>, samples: usize) -> Result<Self> {
        if samples < 64 {
            return Err(invalid(format!("need at least 64 quadrature samples, got {samples}")));
        }
        let directions = fibonacci_directions::<T>(samples);
        let radiance = directions
            .iter()
            .map(|&v| {
                let s = light.eval_unchecked(v);
                [s.r, s.g, s.b]
            })
            .collect();
        Ok(Self {
            directions,
            radiance,
            weight: T::lit(4.0) * T::PI() / T::from_usize_exact(samples),
        })
    }

    /// Cosine-weighted radiance integral over the hemisphere around `normal`.
    pub fn irradiance(&self, normal: Direction<T>) -> [T; 3] {
        let mut acc = [T::zero(); 3];
        for (v, l) in self.directions.iter().zip(&self.radiance) {
            let c = v.dot(normal);
            if c > T::zero() {
                for k in 0..3 {
                    acc[k] = acc[k] + l[k] * c;
                }
            }
        }
        acc.map(|v| v * self.weight)
    }

    /// Mean radiance over the quadrature set.
    pub fn mean_radiance(&self) -> [T; 3] {
        let n = T::from_usize_exact(self.radiance.len());
        let mut acc = [T::zero(); 3];
        for l in &self.radiance {
            for k in 0..3 {
                acc[k] = acc[k] + l[k];
            }
        }
        acc.map(|v| v / n)
    }
}

/// Diffuse irradiance for a surface with the given normal. Depth is ignored.
pub fn diffuse_irradiance<T: Real>(light: &DsgLight<T>, normal: Direction<T>, samples: usize) -> Result<[T; 3]> {
    normal.check_unit()?;
    Ok(IrradianceEvaluator::new(light, samples)?.irradiance(normal))
}

/// Standard layout for `n` nodes with all amplitudes zero.
pub fn empty_light<T: Real>(n: usize, with_depth: bool) -> Result<DsgLight<T>> {
    let _ = bandwidth::<T>(n)?;
    Ok(DsgLight::zeros(NodeLayout::new(n)?, with_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_layout::bandwidth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dir(x: f64, y: f64, z: f64) -> Direction<f64> {
        Direction::normalize(x, y, z).unwrap()
    }

    fn random_light(seed: u64, n: usize, depth: bool) -> DsgLight<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..n)
            .map(|_| {
                let mut a = SgAmplitude::rgb(rng.gen::<f64>(), rng.gen(), rng.gen());
                if depth {
                    a.depth = Some(1.0 + 3.0 * rng.gen::<f64>());
                }
                a
            })
            .collect();
        DsgLight::new(NodeLayout::new(n).unwrap(), amps).unwrap()
    }

    #[test]
    fn sg_eval_identity_and_orthogonal() {
        let a = SgAmplitude::rgbd(0.3, 2.0, 5.0, 1.5);
        let mu = dir(0.2, 0.3, -0.9);
        assert_eq!(sg_eval(mu, mu, 33.457, a).unwrap(), a);
        let v = dir(1.0, 0.0, 0.0);
        let up = dir(0.0, 1.0, 0.0);
        let s = sg_eval(v, up, 33.457, SgAmplitude::rgb(1.0, 1.0, 1.0)).unwrap();
        assert!((s.r - (-33.457f64).exp()).abs() < 1e-25);
        assert!((s.r - 2.95e-15).abs() < 0.01e-15);
    }

    #[test]
    fn sg_eval_at_half_spacing_is_point_six() {
        let lambda = bandwidth::<f64>(128).unwrap();
        let theta = (2.0 / 128f64.sqrt()).atan();
        let v = dir(theta.sin(), 0.0, theta.cos());
        let s = sg_eval(v, dir(0.0, 0.0, 1.0), lambda, SgAmplitude::rgb(1.0, 1.0, 1.0)).unwrap();
        assert!((s.g - 0.6).abs() < 1e-9);
    }

    #[test]
    fn sg_eval_rejects_non_unit() {
        let bad = Direction::new_unchecked(1.0, 1.0, 0.0);
        assert!(sg_eval(bad, dir(1.0, 0.0, 0.0), 1.0, SgAmplitude::rgb(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn mixture_simple_cases() {
        let layout = NodeLayout::<f64>::new(16).unwrap();
        let light = DsgLight::zeros(layout.clone(), false);
        let s = mixture_eval(&light, dir(0.0, 0.0, -1.0)).unwrap();
        assert_eq!((s.r, s.g, s.b), (0.0, 0.0, 0.0));

        let mut amps = vec![SgAmplitude::zero(false); 16];
        amps[3] = SgAmplitude::rgb(1.0, 0.0, 0.0);
        let light = DsgLight::new(layout.clone(), amps).unwrap();
        let s = mixture_eval(&light, layout.axes()[3]).unwrap();
        assert_eq!((s.r, s.g, s.b), (1.0, 0.0, 0.0));

        let pair = NodeLayout::from_axes(vec![dir(0.0, 0.0, 1.0), dir(0.0, 0.0, -1.0)], 1.744).unwrap();
        let one = SgAmplitude::rgb(1.0, 1.0, 1.0);
        let light = DsgLight::new(pair, vec![one, one]).unwrap();
        let s = mixture_eval(&light, dir(0.0, 0.0, 1.0)).unwrap();
        assert!((s.r - (1.0 + (-2.0f64 * 1.744).exp())).abs() < 1e-12);
        assert!((s.r - 1.0305).abs() < 1e-4);
    }

    #[test]
    fn mixture_linearity_and_superposition() {
        let a = random_light(1, 32, true);
        let b = random_light(2, 32, true);
        let sum = DsgLight::new(
            a.layout().clone(),
            a.amplitudes()
                .iter()
                .zip(b.amplitudes())
                .map(|(x, y)| *x + *y)
                .collect(),
        )
        .unwrap();
        for v in fibonacci_directions::<f64>(50) {
            let fa = a.eval_unchecked(v);
            let fb = b.eval_unchecked(v);
            let fs = sum.eval_unchecked(v);
            for c in 0..4 {
                assert!((fs.channel(c) - fa.channel(c) - fb.channel(c)).abs() < 1e-12);
                assert!(fa.channel(c) >= 0.0);
            }
            let f3 = a.scaled(3.0).eval_unchecked(v);
            for c in 0..4 {
                assert!((f3.channel(c) - 3.0 * fa.channel(c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_matches_point_evaluation() {
        let light = random_light(7, 32, true);
        let pano = reconstruct_panorama(&light, 24, 12, ChannelSet::Color).unwrap();
        let depth = reconstruct_panorama(&light, 24, 12, ChannelSet::Depth).unwrap();
        for y in 0..12 {
            for x in 0..24 {
                let v = crate::panorama::pixel_to_direction::<f64>(x, y, 24, 12).unwrap();
                let s = mixture_eval(&light, v).unwrap();
                assert!((pano.get(x, y, 0) - s.r).abs() < 1e-9);
                assert!((pano.get(x, y, 2) - s.b).abs() < 1e-9);
                assert!((depth.get(x, y, 0) - s.depth.unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruct_errors() {
        let light = random_light(7, 8, false);
        assert!(reconstruct_panorama(&light, 0, 4, ChannelSet::Color).is_err());
        assert!(matches!(
            reconstruct_panorama(&light, 8, 4, ChannelSet::Depth),
            Err(Error::Unsupported(_))
        ));
        let black = reconstruct_panorama(
            &DsgLight::zeros(NodeLayout::<f64>::new(8).unwrap(), false),
            8,
            4,
            ChannelSet::Color,
        )
        .unwrap();
        assert!(black.pixels().iter().all(|&v| v == 0.0));
    }

    fn single(axis: Direction<f64>, depth: f64) -> DsgLight<f64> {
        let layout = NodeLayout::from_axes(vec![axis], 10.0).unwrap();
        DsgLight::new(layout, vec![SgAmplitude::rgbd(1.0, 0.5, 0.25, depth)]).unwrap()
    }

    #[test]
    fn warp_examples() {
        let light = random_light(3, 16, true);
        let same = warp_probe(&light, [0.0; 3], WarpOptions::default()).unwrap();
        assert_eq!(same.layout().axes(), light.layout().axes());
        assert_eq!(same.amplitudes(), light.amplitudes());
        assert!(same.is_warped());

        let w = warp_probe(
            &single(dir(0.0, 0.0, 1.0), 2.0),
            [0.0, 0.0, 1.0],
            WarpOptions::default(),
        )
        .unwrap();
        let a = w.layout().axes()[0];
        assert!((w.amplitudes()[0].depth.unwrap() - 1.0).abs() < 1e-12);
        assert!((a.z - 1.0).abs() < 1e-12 && a.x.abs() < 1e-12);

        let w = warp_probe(
            &single(dir(0.0, 0.0, 1.0), 1.0),
            [0.5, 0.0, 0.0],
            WarpOptions::default(),
        )
        .unwrap();
        let a = w.layout().axes()[0];
        let expect = dir(-0.5, 0.0, 1.0);
        assert!((a.x - expect.x).abs() < 1e-12 && (a.z - expect.z).abs() < 1e-12);
        assert!((w.amplitudes()[0].depth.unwrap() - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(w.amplitudes()[0].r, 1.0);
    }

    #[test]
    fn warp_round_trip_collinear() {
        let light = single(dir(0.0, 0.6, 0.8), 3.0);
        let t = [0.0, 0.3, 0.4];
        let w = warp_probe(&light, t, WarpOptions::default()).unwrap();
        let back = warp_probe(&w, [-t[0], -t[1], -t[2]], WarpOptions::default()).unwrap();
        assert!((back.amplitudes()[0].depth.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn warp_sharpness_rescale() {
        let w = warp_probe(
            &single(dir(0.0, 0.0, 1.0), 2.0),
            [0.0, 0.0, 1.0],
            WarpOptions {
                rescale_sharpness: true,
            },
        )
        .unwrap();
        assert!((w.sharpness_of(0) - 10.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn warp_errors() {
        let light = random_light(3, 8, false);
        assert!(matches!(
            warp_probe(&light, [0.0; 3], WarpOptions::default()),
            Err(Error::Unsupported(_))
        ));
        let light = single(dir(0.0, 0.0, 1.0), 1.0);
        assert!(matches!(
            warp_probe(&light, [0.0, 0.0, 1.5], WarpOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn irradiance_basics() {
        let zero = DsgLight::zeros(NodeLayout::<f64>::new(32).unwrap(), false);
        assert_eq!(diffuse_irradiance(&zero, dir(0.0, 1.0, 0.0), 256).unwrap(), [0.0; 3]);
        assert!(diffuse_irradiance(&zero, dir(0.0, 1.0, 0.0), 63).is_err());

        let light = random_light(11, 32, false);
        let n = dir(0.3, 0.9, -0.1);
        let e1 = diffuse_irradiance(&light, n, 512).unwrap();
        let e2 = diffuse_irradiance(&light.scaled(2.0), n, 512).unwrap();
        for k in 0..3 {
            assert_eq!(e2[k], 2.0 * e1[k]);
        }
    }

    #[test]
    fn irradiance_of_near_uniform_light() {
        // All-equal amplitudes on a dense layout give an almost constant radiance.
        let layout = NodeLayout::<f64>::new(128).unwrap();
        let light = DsgLight::new(layout, vec![SgAmplitude::rgb(1.0, 2.0, 0.5); 128]).unwrap();
        let ev = IrradianceEvaluator::new(&light, 4096).unwrap();
        let c = ev.mean_radiance();
        for normal in [dir(0.0, 1.0, 0.0), dir(1.0, -1.0, 0.3), dir(0.0, 0.0, -1.0)] {
            let e = ev.irradiance(normal);
            for k in 0..3 {
                let expect = c[k] * std::f64::consts::PI;
                assert!((e[k] - expect).abs() / expect < 0.05, "{} vs {}", e[k], expect);
            }
        }
    }

    #[test]
    fn irradiance_converges() {
        let light = random_light(5, 16, false);
        let n = dir(0.1, 0.2, 0.97);
        let a = diffuse_irradiance(&light, n, 4096).unwrap();
        let b = diffuse_irradiance(&light, n, 8192).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() / b[k] < 0.01);
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let light = random_light(9, 32, true);
        let warped = warp_probe(
            &light,
            [0.1, -0.2, 0.05],
            WarpOptions {
                rescale_sharpness: true,
            },
        )
        .unwrap();
        for l in [light, warped] {
            let s = l.to_json_string().unwrap();
            let back = DsgLight::<f64>::from_json_str(&s).unwrap();
            assert_eq!(back, l);
        }
    }

    #[test]
    fn json_validation_names_fields() {
        let light = random_light(9, 4, false);
        let mut doc = light.to_json();
        doc.amplitudes[2] = vec![1.0, 2.0];
        match DsgLight::<f64>::from_json(&doc) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "amplitudes[2]"),
            other => panic!("unexpected {other:?}"),
        }
        let mut doc = light.to_json();
        doc.axes[1] = [2.0, 0.0, 0.0];
        assert!(matches!(DsgLight::<f64>::from_json(&doc), Err(Error::Validation { field, .. }) if field == "axes[1]"));
        match DsgLight::<f64>::from_json_str(r#"{"n": 1}"#) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
