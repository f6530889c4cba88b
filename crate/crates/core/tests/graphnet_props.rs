mod common;

use dsglight::graphnet::{
    gcn_layer_forward, light_to_tensor, loss_reconstruction, Activation, Checkpoint, IdentityExtractor, ModelConfig,
    Objective, PredictorModel, Tensor, TrainConfig, TrainSample,
};
use dsglight::NodeLayout;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        n: 16,
        k: 4,
        input_height: 24,
        input_width: 36,
        conv_channels: [4, 6, 8, 8],
        hidden: 24,
        node_features: 8,
        gcn_hidden: [12, 12, 8],
        with_depth: true,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn small_dataset(config: &ModelConfig, count: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = NodeLayout::new(config.n).unwrap();
    (0..count)
        .map(|_| TrainSample {
            image: random_tensor(&mut rng, vec![config.input_height, config.input_width, 3], 0.0, 1.0),
            truth: light_to_tensor(&common::random_light(&layout, &mut rng, true), true).unwrap(),
        })
        .collect()
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let (n, c) = t.dims2().unwrap();
    let mut out = vec![0.0; n * c];
    for (i, &p) in perm.iter().enumerate() {
        out[i * c..(i + 1) * c].copy_from_slice(&t.data()[p * c..(p + 1) * c]);
    }
    Tensor::new(vec![n, c], out).unwrap()
}

fn permute_both(e: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = e.at(perm[i], perm[j]);
        }
    }
    Tensor::new(vec![n, n], out).unwrap()
}

#[test]
fn hand_sized_layers() {
    let h = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    let e = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let w = Tensor::from_rows(&[vec![2.0]]).unwrap();
    let out = gcn_layer_forward(&h, &e, &w, Activation::Relu).unwrap();
    assert_eq!(out.data(), &[3.0, 3.0]);
    let neg = Tensor::from_rows(&[vec![-2.0]]).unwrap();
    assert_eq!(
        gcn_layer_forward(&h, &e, &neg, Activation::Relu).unwrap().data(),
        &[0.0, 0.0]
    );
    assert_eq!(
        gcn_layer_forward(&h, &e, &neg, Activation::Linear).unwrap().data(),
        &[-3.0, -3.0]
    );
}

#[test]
fn default_stack_is_permutation_equivariant() {
    let model = PredictorModel::new(ModelConfig::default(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h0 = random_tensor(&mut rng, vec![128, 32], -1.0, 1.0);
    let e = model.propagation().clone();
    let base = model.gcn_stack_forward(&h0, &e).unwrap();
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..128).collect();
        perm.shuffle(&mut rng);
        let out = model
            .gcn_stack_forward(&permute_rows(&h0, &perm), &permute_both(&e, &perm))
            .unwrap();
        let expect = permute_rows(&base, &perm);
        let worst = out
            .data()
            .iter()
            .zip(expect.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9, "{worst}");
    }
}

#[test]
fn matching_prediction_has_zero_gradient() {
    let layout = NodeLayout::new(32).unwrap();
    let obj = Objective::new(&layout, (16, 32), Box::new(IdentityExtractor), 0.2, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = light_to_tensor(&common::random_light(&layout, &mut rng, true), true).unwrap();
    let (c, grad) = obj.evaluate(&truth, &truth, true).unwrap();
    assert_eq!(obj.total(&c), 0.0);
    assert!(grad.unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn single_node_difference_matches_pixel_loop() {
    let layout = NodeLayout::new(128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let light = common::random_light(&layout, &mut rng, false);
    let truth = light_to_tensor(&light, false).unwrap();
    let (node, delta) = (37, 0.75);
    let mut pred = truth.clone();
    pred.data_mut()[node * 3 + 1] += delta;
    let (h, w) = (64, 128);
    let got = loss_reconstruction(&pred, &truth, &layout, (h, w)).unwrap();
    let axis = layout.axes()[node].to_array();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let g = delta * common::lobe(common::pixel_dir(x, y, w, h), axis, layout.sharpness());
            sum += g * g;
        }
    }
    let expect = sum / (h * w * 3) as f64;
    assert!((got - expect).abs() <= 1e-9 * expect.max(1.0), "{got} vs {expect}");
}

#[test]
fn training_is_deterministic_and_finite() {
    let config = small_config();
    let data = small_dataset(&config, 6, 3);
    let tc = TrainConfig {
        epochs: 4,
        recon_res: (16, 32),
        seed: 21,
        ..TrainConfig::default()
    };
    let a = dsglight::graphnet::train(&data, &config, &tc).unwrap();
    let b = dsglight::graphnet::train(&data, &config, &tc).unwrap();
    assert_eq!(a.loss_curve.len(), 4);
    assert!(a.loss_curve.iter().all(|l| l.is_finite()));
    for (x, y) in a.loss_curve.iter().zip(&b.loss_curve) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert_eq!(a.model.params(), b.model.params());

    let other = dsglight::graphnet::train(&data, &config, &TrainConfig { seed: 22, ..tc.clone() }).unwrap();
    assert_ne!(a.model.params(), other.model.params());
}

#[test]
fn checkpoint_reloads_bitwise() {
    let config = small_config();
    let data = small_dataset(&config, 3, 5);
    let tc = TrainConfig {
        epochs: 2,
        recon_res: (16, 32),
        ..TrainConfig::default()
    };
    let model = dsglight::graphnet::train(&data, &config, &tc).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::from_model(&model, Some(&tc)).unwrap().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.train_config.as_ref(), Some(&tc));
    let back = loaded.to_model().unwrap();
    for s in &data {
        let a = model.model_forward(&s.image).unwrap();
        let b = back.model_forward(&s.image).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn outputs_are_positive() {
    let config = small_config();
    let model = PredictorModel::new(config.clone(), 1).unwrap();
    for s in small_dataset(&config, 3, 7) {
        assert!(model.model_forward(&s.image).unwrap().data().iter().all(|&v| v > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_layer_is_linear(seed in any::<u64>(), n in 1usize..12, fi in 1usize..6, fo in 1usize..6, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_tensor(&mut rng, vec![n, n], 0.0, 1.0);
        let w = random_tensor(&mut rng, vec![fi, fo], -1.0, 1.0);
        let h1 = random_tensor(&mut rng, vec![n, fi], -1.0, 1.0);
        let h2 = random_tensor(&mut rng, vec![n, fi], -1.0, 1.0);
        let mix = Tensor::new(vec![n, fi], h1.data().iter().zip(h2.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = gcn_layer_forward(&mix, &e, &w, Activation::Linear).unwrap();
        let o1 = gcn_layer_forward(&h1, &e, &w, Activation::Linear).unwrap();
        let o2 = gcn_layer_forward(&h2, &e, &w, Activation::Linear).unwrap();
        for ((l, x), y) in lhs.data().iter().zip(o1.data()).zip(o2.data()) {
            prop_assert!((l - (a * x + b * y)).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn relu_layer_is_equivariant(seed in any::<u64>(), n in 2usize..16, fi in 1usize..6, fo in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_tensor(&mut rng, vec![n, n], 0.0, 1.0);
        let w = random_tensor(&mut rng, vec![fi, fo], -1.0, 1.0);
        let h = random_tensor(&mut rng, vec![n, fi], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let out = gcn_layer_forward(&permute_rows(&h, &perm), &permute_both(&e, &perm), &w, Activation::Relu).unwrap();
        let expect = permute_rows(&gcn_layer_forward(&h, &e, &w, Activation::Relu).unwrap(), &perm);
        for (x, y) in out.data().iter().zip(expect.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
