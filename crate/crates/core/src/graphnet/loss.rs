use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward_in_place, relu_in_place, xavier_uniform, Conv3x3};
use super::tensor::{matmul, matmul_tn, Tensor};
use crate::error::{invalid, Result};
use crate::panorama::{aces_weight_unchecked, pixel_to_direction_unchecked};
use crate::sg_model::sg_basis;
use crate::sphere_layout::NodeLayout;

/// Default resolution `(height, width)` of the reconstruction term.
pub const DEFAULT_RECON_RES: (usize, usize) = (64, 128);

fn check_rgb_pair(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    let (n, c) = pred.dims2()?;
    if truth.shape() != pred.shape() {
        return Err(invalid(format!(
            "shapes {:?} and {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    if c < 3 {
        return Err(invalid("amplitude tensors need at least 3 columns"));
    }
    Ok((n, c))
}

/// Tone-weighted squared error over the RGB columns; depth columns are ignored.
pub fn loss_weighted_l2(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    Ok(weighted_l2(pred, truth, false)?.0)
}

pub(crate) fn weighted_l2(pred: &Tensor, truth: &Tensor, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let (n, c) = check_rgb_pair(pred, truth)?;
    if truth.data().iter().any(|&v| v < 0.0) {
        return Err(invalid("ground-truth amplitudes must be non-negative"));
    }
    let count = (3 * n) as f64;
    let mut grad = want_grad.then(|| vec![0.0; n * c]);
    let mut terms = Vec::with_capacity(3 * n);
    for i in 0..n {
        for ch in 0..3 {
            let idx = i * c + ch;
            let (p, t) = (pred.data()[idx], truth.data()[idx]);
            let w = aces_weight_unchecked(t);
            terms.push(w * (p - t) * (p - t));
            if let Some(g) = grad.as_mut() {
                g[idx] = 2.0 * w * (p - t) / count;
            }
        }
    }
    Ok((compensated_sum(terms.into_iter()) / count, grad))
}

/// Plain mean squared error on the depth column.
pub fn loss_depth(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    Ok(depth_l2(pred, truth, false)?.0)
}

pub(crate) fn depth_l2(pred: &Tensor, truth: &Tensor, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let (n, c) = check_rgb_pair(pred, truth)?;
    if c != 4 {
        return Err(invalid("depth loss needs four columns"));
    }
    let mut grad = want_grad.then(|| vec![0.0; n * c]);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let d = pred.data()[i * c + 3] - truth.data()[i * c + 3];
        terms.push(d * d);
        if let Some(g) = grad.as_mut() {
            g[i * c + 3] = 2.0 * d / n as f64;
        }
    }
    Ok((compensated_sum(terms.into_iter()) / n as f64, grad))
}

/// Pixel × node lobe matrix on an equirectangular grid.
#[derive(Debug, Clone)]
pub struct ReconBasis {
    height: usize,
    width: usize,
    n: usize,
    matrix: Vec<f64>,
}

impl ReconBasis {
    pub fn new(layout: &NodeLayout<f64>, (height, width): (usize, usize)) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid(format!("reconstruction grid {height}x{width} too small")));
        }
        let n = layout.n();
        let lambda = layout.sharpness();
        let mut matrix = Vec::with_capacity(height * width * n);
        for y in 0..height {
            for x in 0..width {
                let v = pixel_to_direction_unchecked::<f64>(x, y, width, height);
                matrix.extend(layout.axes().iter().map(|&a| sg_basis(v, a, lambda)));
            }
        }
        Ok(Self {
            height,
            width,
            n,
            matrix,
        })
    }

    pub fn res(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// RGB map `height × width × 3` from the first three amplitude columns.
    pub fn render(&self, amps: &Tensor) -> Result<Tensor> {
        let (n, c) = amps.dims2()?;
        if n != self.n || c < 3 {
            return Err(invalid(format!(
                "amplitudes {:?} do not fit {} nodes",
                amps.shape(),
                self.n
            )));
        }
        let rgb: Vec<f64> = (0..n).flat_map(|i| amps.data()[i * c..i * c + 3].to_vec()).collect();
        let p = self.height * self.width;
        Tensor::new(vec![self.height, self.width, 3], matmul(&self.matrix, &rgb, p, n, 3))
    }

    /// Pulls a map gradient back to amplitudes, laid out `n × c`.
    pub(crate) fn render_backward(&self, dmap: &[f64], c: usize) -> Vec<f64> {
        let g = matmul_tn(&self.matrix, dmap, self.height * self.width, self.n, 3);
        let mut out = vec![0.0; self.n * c];
        for i in 0..self.n {
            out[i * c..i * c + 3].copy_from_slice(&g[i * 3..i * 3 + 3]);
        }
        out
    }
}

/// Mean squared pixel difference between the two rendered maps.
pub fn loss_reconstruction(
    pred_amps: &Tensor,
    truth_amps: &Tensor,
    layout: &NodeLayout<f64>,
    res: (usize, usize),
) -> Result<f64> {
    check_rgb_pair(pred_amps, truth_amps)?;
    let basis = ReconBasis::new(layout, res)?;
    let a = basis.render(pred_amps)?;
    let b = basis.render(truth_amps)?;
    Ok(mse(a.data(), b.data()))
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))) / a.len() as f64
}

/// Deterministic differentiable map from an `h × w × 3` image to features.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, map: &Tensor) -> Result<Tensor>;
    /// Vector-Jacobian product at `map`.
    fn backward(&self, map: &Tensor, dfeatures: &[f64]) -> Result<Vec<f64>>;
    /// Sign pattern of internal ReLU inputs, empty for piecewise-smooth-free extractors.
    fn relu_pattern(&self, _map: &Tensor) -> Vec<bool> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, map: &Tensor) -> Result<Tensor> {
        Ok(map.clone())
    }

    fn backward(&self, _map: &Tensor, dfeatures: &[f64]) -> Result<Vec<f64>> {
        Ok(dfeatures.to_vec())
    }
}

/// Per-layer inputs, pre-activations and spatial sizes.
type ConvTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<(usize, usize)>);

/// Fixed, untrained three-layer ReLU conv stack (3→8→16→16 channels).
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    seed: u64,
    convs: [Conv3x3; 3],
    weights: Vec<Vec<f64>>,
}

impl RandomConvExtractor {
    pub const CHANNELS: [usize; 3] = [8, 16, 16];

    pub fn new(seed: u64) -> Self {
        let [a, b, c] = Self::CHANNELS;
        let convs = [
            Conv3x3 { cin: 3, cout: a },
            Conv3x3 { cin: a, cout: b },
            Conv3x3 { cin: b, cout: c },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = convs
            .iter()
            .map(|cv| xavier_uniform(&mut rng, cv.weight_len(), 9 * cv.cin, 9 * cv.cout))
            .collect();
        Self { seed, convs, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn run(&self, map: &Tensor) -> Result<ConvTrace> {
        let (h, w) = match map.shape() {
            [h, w, 3] => (*h, *w),
            s => return Err(invalid(format!("extractor input must be h×w×3, got {s:?}"))),
        };
        let mut dims = vec![(h, w)];
        let mut inputs = vec![map.data().to_vec()];
        let mut pres = Vec::new();
        for (i, cv) in self.convs.iter().enumerate() {
            let (hh, ww) = dims[i];
            let zero = vec![0.0; cv.cout];
            let pre = cv.forward(&inputs[i], hh, ww, &self.weights[i], &zero);
            let mut act = pre.clone();
            relu_in_place(&mut act);
            pres.push(pre);
            inputs.push(act);
            dims.push(Conv3x3::out_dims(hh, ww));
        }
        Ok((inputs, pres, dims))
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, map: &Tensor) -> Result<Tensor> {
        let (mut inputs, _, dims) = self.run(map)?;
        let (h, w) = dims[3];
        Tensor::new(vec![h, w, Self::CHANNELS[2]], inputs.pop().expect("three layers"))
    }

    fn backward(&self, map: &Tensor, dfeatures: &[f64]) -> Result<Vec<f64>> {
        let (inputs, pres, dims) = self.run(map)?;
        if dfeatures.len() != inputs[3].len() {
            return Err(invalid("feature gradient has the wrong length"));
        }
        let mut g = dfeatures.to_vec();
        for i in (0..3).rev() {
            relu_backward_in_place(&mut g, &pres[i]);
            let (h, w) = dims[i];
            let mut dw = vec![0.0; self.weights[i].len()];
            let mut db = vec![0.0; self.convs[i].cout];
            g = self.convs[i]
                .backward(&inputs[i], h, w, &self.weights[i], &g, &mut dw, &mut db, true)
                .expect("input gradient requested");
        }
        Ok(g)
    }

    fn relu_pattern(&self, map: &Tensor) -> Vec<bool> {
        self.run(map)
            .map(|(_, pres, _)| pres.iter().flatten().map(|&z| z > 0.0).collect())
            .unwrap_or_default()
    }
}

/// `(1/N_Φ)·‖Φ(a) − Φ(b)‖²`.
pub fn loss_perceptual(pred_map: &Tensor, truth_map: &Tensor, extractor: &dyn FeatureExtractor) -> Result<f64> {
    if pred_map.shape() != truth_map.shape() {
        return Err(invalid("perceptual loss needs maps of equal shape"));
    }
    let a = extractor.features(pred_map)?;
    let b = extractor.features(truth_map)?;
    Ok(mse(a.data(), b.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub weighted: f64,
    pub reconstruction: f64,
    pub perceptual: f64,
    pub depth: f64,
}

/// `L_W + α·L_R + β·L_VGG`, plus the depth term.
pub fn loss_total(c: &LossComponents, alpha: f64, beta: f64) -> f64 {
    c.weighted + alpha * c.reconstruction + beta * c.perceptual + c.depth
}

/// Full per-sample objective with cached rendering basis.
pub struct Objective {
    pub basis: ReconBasis,
    pub extractor: Box<dyn FeatureExtractor>,
    pub alpha: f64,
    pub beta: f64,
}

impl Objective {
    pub fn new(
        layout: &NodeLayout<f64>,
        res: (usize, usize),
        extractor: Box<dyn FeatureExtractor>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(Self {
            basis: ReconBasis::new(layout, res)?,
            extractor,
            alpha,
            beta,
        })
    }

    /// Loss components and, optionally, the gradient of the total w.r.t. `pred`.
    pub fn evaluate(
        &self,
        pred: &Tensor,
        truth: &Tensor,
        want_grad: bool,
    ) -> Result<(LossComponents, Option<Vec<f64>>)> {
        let (_, c) = check_rgb_pair(pred, truth)?;
        let (weighted, gw) = weighted_l2(pred, truth, want_grad)?;
        let (depth, gd) = if c == 4 {
            depth_l2(pred, truth, want_grad)?
        } else {
            (0.0, None)
        };

        let pm = self.basis.render(pred)?;
        let tm = self.basis.render(truth)?;
        let reconstruction = mse(pm.data(), tm.data());
        let fp = self.extractor.features(&pm)?;
        let ft = self.extractor.features(&tm)?;
        let perceptual = mse(fp.data(), ft.data());
        let comps = LossComponents {
            weighted,
            reconstruction,
            perceptual,
            depth,
        };
        if !want_grad {
            return Ok((comps, None));
        }

        let pixels = pm.len() as f64;
        let feats = fp.len() as f64;
        let dfeat: Vec<f64> = fp
            .data()
            .iter()
            .zip(ft.data())
            .map(|(a, b)| 2.0 * self.beta * (a - b) / feats)
            .collect();
        let mut dmap = self.extractor.backward(&pm, &dfeat)?;
        for ((g, a), b) in dmap.iter_mut().zip(pm.data()).zip(tm.data()) {
            *g += 2.0 * self.alpha * (a - b) / pixels;
        }
        let mut grad = self.basis.render_backward(&dmap, c);
        for part in [gw, gd].into_iter().flatten() {
            for (g, p) in grad.iter_mut().zip(part) {
                *g += p;
            }
        }
        Ok((comps, Some(grad)))
    }

    pub fn total(&self, c: &LossComponents) -> f64 {
        loss_total(c, self.alpha, self.beta)
    }

    /// ReLU sign pattern of the extractor on the rendering of `pred`.
    pub fn relu_pattern(&self, pred: &Tensor) -> Result<Vec<bool>> {
        Ok(self.extractor.relu_pattern(&self.basis.render(pred)?))
    }
}
