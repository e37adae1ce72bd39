//! The trainable stage-1 model: gated residual fusion of image/text
//! embeddings, positional sequence expansion, a bidirectional LSTM decoder
//! emitting fixed-size Mel matrices, the frequency-weighted L1 loss, and a
//! deterministic Adam training loop. All gradients are analytic and checked
//! against central finite differences in the tests.

mod decoder;
mod fusion;
mod loss;
mod lstm;
mod params;
mod train;

pub use decoder::{expand_sequence, positional_table, DecoderGrads, DecoderParams};
pub use fusion::{gated_fuse, gated_fuse_grad, FusionGrads, FusionInput, FusionParams};
pub use loss::{freq_weighted_l1, freq_weighted_l1_grad, LossWeights};
pub use lstm::{BiLayerGrads, BiLstmLayer, CellGrads, LstmCell};
pub use params::{
    load_params, load_params_expecting, load_params_file, save_params, save_params_file,
    ModelDims, ModelGrads, ModelParams,
};
pub use train::{train, Adam, EpochStats, TrainConfig, TrainSample};

use thiserror::Error;

use crate::linalg::{Mat, Scalar};
use crate::mel::{MelSpectrogram, Normalization};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("spectrogram normalization tags differ")]
    NormalizationMismatch,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("training needs at least one epoch")]
    ZeroEpochs,
    #[error("non-finite loss at optimizer step {step}")]
    NanLoss { step: usize },
    #[error("malformed A2MP stream: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    fn dim(what: &str, expected: usize, actual: usize) -> Self {
        ModelError::DimMismatch {
            what: what.to_string(),
            expected,
            actual,
        }
    }
}

pub(crate) struct ForwardCache<T> {
    fusion: fusion::FusionCache<T>,
    decoder: decoder::DecoderCache<T>,
}

/// Full forward pass; returns the T x F output matrix and the activation
/// cache consumed by [`model_grads`].
pub(crate) fn model_forward<T: Scalar>(
    params: &ModelParams<T>,
    input: &FusionInput<T>,
) -> Result<(Mat<T>, ForwardCache<T>), ModelError> {
    let fusion_cache = fusion::fuse_forward(&params.fusion, input)?;
    if fusion_cache.output.len() != params.decoder.d_h() {
        return Err(ModelError::dim(
            "decoder input",
            params.decoder.d_h(),
            fusion_cache.output.len(),
        ));
    }
    let decoder_cache = decoder::decoder_forward(&params.decoder, &fusion_cache.output)?;
    let y = decoder_cache.y.clone();
    Ok((
        y,
        ForwardCache {
            fusion: fusion_cache,
            decoder: decoder_cache,
        },
    ))
}

/// Generate a min-max normalized spectrogram from one fusion input. The
/// tanh output head keeps every entry strictly inside (-1, 1).
pub fn decode_mel<T: Scalar>(
    params: &ModelParams<T>,
    input: &FusionInput<T>,
) -> Result<MelSpectrogram, ModelError> {
    let (y, _) = model_forward(params, input)?;
    let values: Vec<f32> = y.data().iter().map(|&v| v.to_f64() as f32).collect();
    Ok(MelSpectrogram::new(
        values,
        y.rows(),
        y.cols(),
        Normalization::MinmaxUnit,
    ))
}

/// Loss of one sample without keeping gradients.
pub fn model_loss<T: Scalar>(
    params: &ModelParams<T>,
    input: &FusionInput<T>,
    target: &Mat<T>,
    weights: &LossWeights<T>,
) -> Result<T, ModelError> {
    let (y, _) = model_forward(params, input)?;
    check_target(&y, target, weights)?;
    Ok(loss::weighted_l1(&y, target, weights))
}

/// Loss plus exact parameter gradients for one sample.
pub fn model_grads<T: Scalar>(
    params: &ModelParams<T>,
    input: &FusionInput<T>,
    target: &Mat<T>,
    weights: &LossWeights<T>,
) -> Result<(T, ModelGrads<T>), ModelError> {
    let (y, cache) = model_forward(params, input)?;
    check_target(&y, target, weights)?;
    let loss = loss::weighted_l1(&y, target, weights);
    let d_y = loss::weighted_l1_grad(&y, target, weights);

    let mut grads = ModelGrads::zeros_like(params);
    let d_h = decoder::decoder_backward(&params.decoder, &cache.decoder, &d_y, &mut grads.decoder);
    let fusion_grads = fusion::fuse_backward(&params.fusion, input, &cache.fusion, &d_h);
    grads.w_gate = fusion_grads.w_gate;
    grads.w_x = fusion_grads.w_x;
    grads.w_res = fusion_grads.w_res;
    Ok((loss, grads))
}

fn check_target<T: Scalar>(
    y: &Mat<T>,
    target: &Mat<T>,
    weights: &LossWeights<T>,
) -> Result<(), ModelError> {
    if y.rows() != target.rows() || y.cols() != target.cols() {
        return Err(ModelError::Shape(format!(
            "target is {}x{}, model emits {}x{}",
            target.rows(),
            target.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if weights.bands() != y.cols() {
        return Err(ModelError::dim("loss weights", y.cols(), weights.bands()));
    }
    Ok(())
}

/// Convert a stored spectrogram into a loss target matrix.
pub fn spectrogram_to_target<T: Scalar>(spec: &MelSpectrogram) -> Mat<T> {
    Mat::from_vec(
        spec.frames(),
        spec.bands(),
        spec.values().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            d_x: 5,
            d_h: 3,
            d_r: 2,
            d_in: 4,
            hidden: 3,
            frames: 4,
            bands: 3,
            layers: 2,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, dims: &ModelDims) -> FusionInput<f64> {
        FusionInput {
            x: (0..dims.d_x).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            r: (0..dims.d_r).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn decode_mel_shape_and_range() {
        let dims = tiny_dims();
        let params = ModelParams::<f64>::init(&dims, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = random_input(&mut rng, &dims);
        let spec = decode_mel(&params, &input).unwrap();
        assert_eq!(spec.frames(), dims.frames);
        assert_eq!(spec.bands(), dims.bands);
        assert!(spec.values().iter().all(|&v| v > -1.0 && v < 1.0));
        assert_eq!(spec.normalization(), Normalization::MinmaxUnit);

        // Deterministic inference.
        let again = decode_mel(&params, &input).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn expand_sequence_is_projection_plus_positions() {
        let dims = tiny_dims();
        let mut params = ModelParams::<f64>::init(&dims, 4).unwrap();
        // Zero the projection so rows equal the positional table exactly.
        params.decoder.input_proj_w = Mat::zeros(dims.d_in, dims.d_h);
        params.decoder.input_proj_b = vec![0.0; dims.d_in];
        let seq = expand_sequence(&vec![0.3; dims.d_h], &params.decoder).unwrap();
        for t in 0..dims.frames {
            for k in 0..dims.d_in {
                assert_eq!(seq[t][k], params.decoder.pos_table.get(t, k));
            }
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let dims = tiny_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let eps = 1e-5;
        for case in 0..3 {
            let params = ModelParams::<f64>::init(&dims, 100 + case).unwrap();
            let input = random_input(&mut rng, &dims);
            let target = Mat::from_vec(
                dims.frames,
                dims.bands,
                (0..dims.frames * dims.bands)
                    .map(|_| rng.gen_range(-0.9..0.9))
                    .collect(),
            );
            let weights = LossWeights::ramp(dims.bands);
            let (_, grads) = model_grads(&params, &input, &target, &weights).unwrap();
            let grad_flat = grads.flatten();
            let flat = params.flatten();

            let mut worst = 0.0f64;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += eps;
                let p_plus = ModelParams::from_flat(&dims, &plus).unwrap();
                let l_plus = model_loss(&p_plus, &input, &target, &weights).unwrap();
                let mut minus = flat.clone();
                minus[i] -= eps;
                let p_minus = ModelParams::from_flat(&dims, &minus).unwrap();
                let l_minus = model_loss(&p_minus, &input, &target, &weights).unwrap();
                let fd = (l_plus - l_minus) / (2.0 * eps);
                let denom = grad_flat[i].abs().max(fd.abs()).max(1e-6);
                worst = worst.max((grad_flat[i] - fd).abs() / denom);
            }
            assert!(worst < 1e-4, "max relative error {worst}");
        }
    }
}
