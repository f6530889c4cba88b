mod common;

use dsglight::fitter::{fit_light, nnls_normal, nnls_solve, FitBasis, FitOptions, Weighting};
use dsglight::sg_model::{reconstruct_panorama, ChannelSet};
use dsglight::{NodeLayout, Panorama};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(seed: u64, w: usize, h: usize) -> Panorama {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Panorama::from_fn(w, h, 3, |x, y, c| {
        let s = ((x as f64 * 0.13 + c as f64).sin() * (y as f64 * 0.21).cos()).abs();
        s + 0.3 * rng.gen::<f64>()
    })
    .unwrap()
}

fn cholesky_ok(a: &[f64], n: usize) -> bool {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

#[test]
fn gram_matches_brute_force() {
    let layout = NodeLayout::new(128).unwrap();
    let (w, h) = (256, 128);
    let basis = FitBasis::new(&layout, w, h, Weighting::None).unwrap();
    let axes: Vec<[f64; 3]> = layout.axes().iter().map(|a| a.to_array()).collect();
    let lambda = layout.sharpness();
    let n = 128;
    let mut gram = vec![0.0; n * n];
    let mut g = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let v = common::pixel_dir(x, y, w, h);
            for i in 0..n {
                g[i] = common::lobe(v, axes[i], lambda);
            }
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += g[i] * g[j];
                }
            }
        }
    }
    let peak = gram.iter().cloned().fold(0.0, f64::max);
    for (a, b) in basis.gram().iter().zip(&gram) {
        assert!((a - b).abs() <= 1e-6 * peak.max(b.abs()));
    }
    let mut reg = gram.clone();
    for i in 0..n {
        reg[i * n + i] += 1e-12;
    }
    assert!(cholesky_ok(&reg, n), "Gram + 1e-12 I is not positive definite");
}

#[test]
fn solid_angle_weighting_scales_rows() {
    let layout = NodeLayout::new(16).unwrap();
    let (w, h) = (32, 16);
    let basis = FitBasis::new(&layout, w, h, Weighting::SolidAngle).unwrap();
    let axes: Vec<[f64; 3]> = layout.axes().iter().map(|a| a.to_array()).collect();
    let mut gram = vec![0.0; 256];
    for y in 0..h {
        let wt = (std::f64::consts::PI * (y as f64 + 0.5) / h as f64).sin();
        for x in 0..w {
            let v = common::pixel_dir(x, y, w, h);
            let g: Vec<f64> = axes.iter().map(|a| common::lobe(v, *a, layout.sharpness())).collect();
            for i in 0..16 {
                for j in 0..16 {
                    gram[i * 16 + j] += wt * g[i] * g[j];
                }
            }
        }
    }
    for (a, b) in basis.gram().iter().zip(&gram) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
}

#[test]
fn fit_is_scale_equivariant_and_deterministic() {
    let layout = NodeLayout::new(32).unwrap();
    let pano = textured(1, 64, 32);
    let base = fit_light(&pano, None, &layout, FitOptions::default()).unwrap();
    let again = fit_light(&pano, None, &layout, FitOptions::default()).unwrap();
    assert_eq!(base.light, again.light);
    assert_eq!(base.report, again.report);
    for s in [0.25, 3.0, 1e3] {
        let scaled = fit_light(&pano.scaled(s), None, &layout, FitOptions::default()).unwrap();
        for (a, b) in scaled.light.amplitudes().iter().zip(base.light.amplitudes()) {
            for (p, q) in [(a.r, b.r), (a.g, b.g), (a.b, b.b)] {
                assert!(
                    (p - s * q).abs() <= 1e-9 * (s * q).abs().max(s * 1e-3),
                    "{p} vs {}",
                    s * q
                );
            }
        }
    }
}

#[test]
fn perturbing_the_optimum_never_helps() {
    let layout = NodeLayout::new(64).unwrap();
    let basis = FitBasis::new(&layout, 128, 64, Weighting::None).unwrap();
    let system = basis.normal_system(&textured(2, 128, 64)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in 0..3 {
        let x = nnls_solve(&system, c).unwrap().x;
        let best = system.objective(c, &x);
        let slack = 1e-12 * system.target_sq[c];
        for _ in 0..20 {
            let i = rng.gen_range(0..x.len());
            for sign in [-1.0, 1.0] {
                let mut y = x.clone();
                y[i] *= 1.0 + sign * 0.01;
                assert!(system.objective(c, &y) >= best - slack);
            }
        }
    }
}

#[test]
fn channels_fit_independently() {
    let layout = NodeLayout::new(32).unwrap();
    let basis = FitBasis::new(&layout, 64, 32, Weighting::None).unwrap();
    let pano = textured(4, 64, 32);
    let joint = basis.normal_system(&pano).unwrap();
    for c in 0..3 {
        let single = basis.normal_system(&pano.channel(c)).unwrap();
        assert_eq!(single.rhs[0], joint.rhs[c]);
        assert_eq!(nnls_solve(&single, 0).unwrap().x, nnls_solve(&joint, c).unwrap().x);
    }
}

#[test]
fn nnls_agrees_with_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (gram, rhs, tsq) = common::random_normal_system(&mut rng, 60, 24);
        let x = nnls_normal(&gram, &rhs, 240).unwrap().x;
        let oracle = common::projected_gradient_nnls(&gram, &rhs, 20_000);
        let a = common::quad_objective(&gram, &rhs, tsq, &x);
        let b = common::quad_objective(&gram, &rhs, tsq, &oracle);
        assert!(a <= b * (1.0 + 1e-8), "{a} vs oracle {b}");
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn exact_content_is_recovered_at_small_scale() {
    let layout = NodeLayout::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let light = common::random_light(&layout, &mut rng, true);
    let rgb = reconstruct_panorama(&light, 128, 64, ChannelSet::Color).unwrap();
    let depth = reconstruct_panorama(&light, 128, 64, ChannelSet::Depth).unwrap();
    let fit = fit_light(&rgb, Some(&depth), &layout, FitOptions::default()).unwrap();
    for (a, b) in fit.light.amplitudes().iter().zip(light.amplitudes()) {
        assert!((a.r - b.r).abs() < 1e-6 && (a.g - b.g).abs() < 1e-6 && (a.b - b.b).abs() < 1e-6);
        assert!((a.depth.unwrap() - b.depth.unwrap()).abs() < 1e-6);
    }
    assert!(fit.report.psnr_reconstruction > 60.0);
}

#[test]
fn refuses_tiny_rasters() {
    let layout = NodeLayout::new(8).unwrap();
    assert!(FitBasis::new(&layout, 8, 4, Weighting::None).is_err());
}
