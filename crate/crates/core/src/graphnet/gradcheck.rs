use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::Objective;
use super::model::PredictorModel;
use super::train::{sample_gradient, TrainSample};
use crate::error::{invalid, Result};

/// Denominator floor of the relative error, so that two vanishing gradients compare equal.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates dropped because a ReLU changed sign inside `±ε`.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `(analytic, numeric)` at the worst coordinate.
    pub worst: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backprop against central differences on up to `per_group`
/// random coordinates of every parameter tensor (all of them when smaller).
pub fn grad_check(
    model: &PredictorModel,
    sample_pair: &TrainSample,
    objective: &Objective,
    epsilon: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(invalid(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = sample_gradient(model, objective, sample_pair)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pattern = |m: &PredictorModel| -> Result<(f64, Vec<bool>)> {
        let pass = m.forward(&sample_pair.image)?;
        let (c, _) = objective.evaluate(pass.output(), &sample_pair.truth, false)?;
        let mut signs = pass.relu_pattern();
        signs.extend(objective.relu_pattern(pass.output())?);
        Ok((objective.total(&c), signs))
    };
    let (_, base_signs) = pattern(model)?;

    let mut groups = Vec::with_capacity(model.params().len());
    for (g, grads) in analytic.iter().enumerate() {
        let len = grads.len();
        // Draw extra candidates so kink skips still leave `per_group` checks.
        let order = sample(&mut rng, len, len.min(per_group * 4)).into_vec();
        let mut check = GroupCheck {
            name: model.params()[g].name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
        };
        for idx in order {
            if check.checked == per_group {
                break;
            }
            let original = probe.params()[g].tensor.data()[idx];
            probe.params_mut()[g].tensor.data_mut()[idx] = original + epsilon;
            let (plus, plus_signs) = pattern(&probe)?;
            probe.params_mut()[g].tensor.data_mut()[idx] = original - epsilon;
            let (minus, minus_signs) = pattern(&probe)?;
            probe.params_mut()[g].tensor.data_mut()[idx] = original;
            if plus_signs != base_signs || minus_signs != base_signs {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grads[idx], numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = (grads[idx], numeric);
            }
            check.checked += 1;
        }
        groups.push(check);
    }
    Ok(GradCheckReport { epsilon, groups })
}
