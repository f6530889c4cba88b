use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{Objective, RandomConvExtractor, DEFAULT_RECON_RES};
use super::model::{ModelConfig, NamedTensor, PredictorModel};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::panorama::{psnr, Panorama};

/// One training pair: an LDR view and the per-node target amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub truth: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub halve_every_epochs: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// `(height, width)` of the reconstruction and perceptual terms.
    pub recon_res: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 5,
            halve_every_epochs: 40,
            epochs: 200,
            alpha: 0.2,
            beta: 0.1,
            seed: 0,
            recon_res: DEFAULT_RECON_RES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
            self.alpha,
            self.beta,
        ];
        if reals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(
                "learning rate, Adam constants and loss weights must be positive",
            ));
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(invalid("Adam decay rates must be below 1"));
        }
        if self.batch_size == 0 || self.halve_every_epochs == 0 || self.epochs == 0 {
            return Err(invalid("batch size, schedule period and epochs must be positive"));
        }
        Ok(())
    }

    /// Step size during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.halve_every_epochs) as i32)
    }

    /// Seed of the perceptual extractor, derived from the run seed.
    pub fn extractor_seed(&self) -> u64 {
        self.seed ^ 0x5eed_f00d
    }

    pub fn objective(&self, model: &PredictorModel) -> Result<Objective> {
        Objective::new(
            model.layout(),
            self.recon_res,
            Box::new(RandomConvExtractor::new(self.extractor_seed())),
            self.alpha,
            self.beta,
        )
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[NamedTensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [NamedTensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Per-epoch progress handed to training observers.
pub struct EpochInfo<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub model: &'a PredictorModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    /// Mean total loss of each completed epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(dataset: &[TrainSample], model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, model_config, config, |_| true)
}

/// Like [`train`], calling `observe` after every epoch; returning `false` stops early.
pub fn train_with<F>(
    dataset: &[TrainSample],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(EpochInfo<'_>) -> bool,
{
    if dataset.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    config.validate()?;
    let mut model = PredictorModel::new(model_config.clone(), config.seed)?;
    let want = [model_config.n, model_config.out_channels()];
    if let Some(bad) = dataset.iter().position(|s| s.truth.shape() != want) {
        return Err(invalid(format!(
            "sample {bad} target shape {:?}, expected {want:?}",
            dataset[bad].truth.shape()
        )));
    }
    let objective = config.objective(&model)?;
    let mut adam = Adam::new(
        model.params(),
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&model, &objective, &dataset[i]))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, &v) in acc.iter_mut().zip(gi) {
                        *a += scale * v;
                    }
                }
            }
            adam.step(model.params_mut(), &grads, lr);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(crate::error::domain(format!("loss became non-finite at epoch {epoch}")));
        }
        curve.push(mean);
        let keep_going = observe(EpochInfo {
            epoch,
            mean_loss: mean,
            learning_rate: lr,
            model: &model,
        });
        if !keep_going {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
    })
}

/// Total loss and parameter gradients for one sample.
pub fn sample_gradient(
    model: &PredictorModel,
    objective: &Objective,
    sample: &TrainSample,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let pass = model.forward(&sample.image)?;
    let (comps, dpred) = objective.evaluate(pass.output(), &sample.truth, true)?;
    let grads = model.backward(&pass, &dpred.expect("gradient requested"))?;
    Ok((objective.total(&comps), grads))
}

/// PSNR of each predicted map against its target map, rendered at `res`.
pub fn reconstruction_psnr(model: &PredictorModel, samples: &[TrainSample], res: (usize, usize)) -> Result<Vec<f64>> {
    let basis = super::loss::ReconBasis::new(model.layout(), res)?;
    samples
        .par_iter()
        .map(|s| {
            let pred = basis.render(&model.model_forward(&s.image)?)?;
            let truth = basis.render(&s.truth)?;
            let as_pano = |t: Tensor| Panorama::new(res.1, res.0, 3, t.into_data());
            psnr(&as_pano(pred)?, &as_pano(truth)?)
        })
        .collect()
}
