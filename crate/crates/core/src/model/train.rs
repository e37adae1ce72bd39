//! Mini-batch Adam training with a deterministic shuffle. Given the same
//! seed, data, and config, two runs produce identical parameter bytes and
//! loss traces. When a validation set is supplied, the parameters of the
//! epoch with the lowest validation loss are returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Mat, Scalar};

use super::{model_grads, model_loss, FusionInput, LossWeights, ModelError, ModelGrads, ModelParams};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 10,
            seed: 42,
        }
    }
}

/// One training example: fusion input plus its target Mel matrix.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub input: FusionInput<T>,
    pub target: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Adam with bias correction; moments are kept in double precision
/// regardless of the parameter scalar.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// Apply one update over the model's flat parameter order.
    pub fn step<T: Scalar>(&mut self, params: &mut ModelParams<T>, grads: &ModelGrads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let grad_flat = grads.flatten();

        let mut offset = 0usize;
        params.for_each_slice_mut(|slice| {
            for (i, p) in slice.iter_mut().enumerate() {
                let g = grad_flat[offset + i].to_f64();
                let m = &mut self.m[offset + i];
                let v = &mut self.v[offset + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                let update = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                *p = T::from_f64(p.to_f64() - update);
            }
            offset += slice.len();
        });
    }
}

fn mean_loss<T: Scalar>(
    params: &ModelParams<T>,
    set: &[TrainSample<T>],
    weights: &LossWeights<T>,
) -> Result<f64, ModelError> {
    let mut acc = 0.0f64;
    for sample in set {
        acc += model_loss(params, &sample.input, &sample.target, weights)?.to_f64();
    }
    Ok(acc / set.len() as f64)
}

/// Run mini-batch Adam over `train_set`. Returns the selected parameters
/// (lowest validation loss when `val_set` is given, final otherwise) and
/// the per-epoch loss trace.
pub fn train<T: Scalar>(
    mut model: ModelParams<T>,
    train_set: &[TrainSample<T>],
    val_set: Option<&[TrainSample<T>]>,
    config: &TrainConfig,
    weights: &LossWeights<T>,
) -> Result<(ModelParams<T>, Vec<EpochStats>), ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.epochs == 0 {
        return Err(ModelError::ZeroEpochs);
    }
    let batch_size = config.batch_size.max(1);

    let dims = model.dims();
    for sample in train_set.iter().chain(val_set.unwrap_or(&[])) {
        if sample.target.rows() != dims.frames || sample.target.cols() != dims.bands {
            return Err(ModelError::Shape(format!(
                "target is {}x{}, model emits {}x{}",
                sample.target.rows(),
                sample.target.cols(),
                dims.frames,
                dims.bands
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate, model.n_params());
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams<T>)> = None;
    let mut step_index = 0usize;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        // Fisher-Yates with the session RNG keeps the order reproducible.
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }

        let mut loss_sum = 0.0f64;
        for batch in indices.chunks(batch_size) {
            let mut grads = ModelGrads::zeros_like(&model);
            let mut batch_loss = 0.0f64;
            for &idx in batch {
                let sample = &train_set[idx];
                let (loss, g) = model_grads(&model, &sample.input, &sample.target, weights)?;
                batch_loss += loss.to_f64();
                grads.add_assign(&g);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(ModelError::NanLoss { step: step_index });
            }
            grads.scale(T::from_f64(1.0 / batch.len() as f64));
            adam.step(&mut model, &grads);
            loss_sum += batch_loss * batch.len() as f64;
            step_index += 1;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_loss = match val_set {
            Some(set) if !set.is_empty() => {
                let v = mean_loss(&model, set, weights)?;
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                }
                Some(v)
            }
            _ => None,
        };

        trace.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
    }

    let selected = match best {
        Some((_, params)) => params,
        None => model,
    };
    Ok((selected, trace))
}
