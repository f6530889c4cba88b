//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use dsglight::sg_model::SgAmplitude;
use dsglight::{DsgLight, NodeLayout};
use rand::Rng;

/// Bandwidth via `cos(atan x) = 1/√(1+x²)`, evaluated without cancellation.
pub fn bandwidth_reference(n: usize) -> f64 {
    let u = 4.0 / n as f64;
    let s = (1.0 + u).sqrt();
    let denom = -u / (s * (1.0 + s));
    0.6f64.ln() / denom
}

/// Equirectangular pixel-center direction, written out longhand.
pub fn pixel_dir(x: usize, y: usize, w: usize, h: usize) -> [f64; 3] {
    let phi = 2.0 * std::f64::consts::PI * (x as f64 + 0.5) / w as f64 - std::f64::consts::PI;
    let theta = std::f64::consts::PI * (y as f64 + 0.5) / h as f64;
    [theta.sin() * phi.sin(), theta.cos(), -theta.sin() * phi.cos()]
}

pub fn lobe(v: [f64; 3], mu: [f64; 3], lambda: f64) -> f64 {
    let d = v[0] * mu[0] + v[1] * mu[1] + v[2] * mu[2];
    (lambda * (d - 1.0)).exp()
}

/// Per-pixel loop over every node: `h × w × 3` row-major.
pub fn naive_render(light: &DsgLight, w: usize, h: usize) -> Vec<f64> {
    let lambda = light.layout().sharpness();
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let v = pixel_dir(x, y, w, h);
            for (axis, a) in light.layout().axes().iter().zip(light.amplitudes()) {
                let g = lobe(v, axis.to_array(), lambda);
                out[(y * w + x) * 3] += a.r * g;
                out[(y * w + x) * 3 + 1] += a.g * g;
                out[(y * w + x) * 3 + 2] += a.b * g;
            }
        }
    }
    out
}

pub fn random_light<R: Rng>(layout: &NodeLayout, rng: &mut R, with_depth: bool) -> DsgLight {
    let amps = (0..layout.n())
        .map(|_| {
            let (r, g, b) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            if with_depth {
                SgAmplitude::rgbd(r, g, b, rng.gen_range(1.0..4.0))
            } else {
                SgAmplitude::rgb(r, g, b)
            }
        })
        .collect();
    DsgLight::new(layout.clone(), amps).unwrap()
}

/// Accelerated projected gradient on `½xᵀGx − rᵀx` over `x ≥ 0`, with adaptive restart.
pub fn projected_gradient_nnls(gram: &[f64], rhs: &[f64], iterations: usize) -> Vec<f64> {
    let n = rhs.len();
    let step = 1.0 / power_iteration(gram, n, 500);
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| gram[i * n..(i + 1) * n].iter().zip(x).map(|(g, v)| g * v).sum::<f64>() - rhs[i])
            .collect()
    };
    let mut x = vec![0.0; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let g = grad(&y);
        let next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| (yi - step * gi).max(0.0)).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        // Restart momentum when it points uphill.
        let uphill: f64 = g.iter().zip(next.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        if uphill > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            y = next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            t = t_next;
        }
        x = next;
    }
    x
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn power_iteration(m: &[f64], n: usize, iterations: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin() * 0.5).collect();
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w: Vec<f64> = (0..n)
            .map(|i| m[i * n..(i + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    estimate
}

/// `‖Ax − b‖²` from the normal form.
pub fn quad_objective(gram: &[f64], rhs: &[f64], target_sq: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += x[i] * gram[i * n + j] * x[j];
        }
    }
    q - 2.0 * x.iter().zip(rhs).map(|(a, b)| a * b).sum::<f64>() + target_sq
}

/// Random `m × n` design with `m > n`, returned in normal form `(G, r, ‖b‖²)`.
pub fn random_normal_system<R: Rng>(rng: &mut R, m: usize, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let a: Vec<f64> = (0..m * n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.3).collect();
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for k in 0..m {
        let row = &a[k * n..(k + 1) * n];
        for i in 0..n {
            rhs[i] += row[i] * b[k];
            for j in 0..n {
                gram[i * n + j] += row[i] * row[j];
            }
        }
    }
    (gram, rhs, b.iter().map(|v| v * v).sum())
}
