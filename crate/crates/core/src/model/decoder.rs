//! Sequence decoder: the fused vector is broadcast to a fixed-length
//! sequence through a learned input projection plus a sinusoidal positional
//! table, run through a stack of bidirectional LSTM layers, and mapped to
//! Mel bands with a tanh output projection (so every output lies in (-1, 1)).

use crate::linalg::{Mat, Scalar};

use super::lstm::{bilayer_backward, BiLayerCache, BiLayerGrads, BiLstmLayer};
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub layers: Vec<BiLstmLayer<T>>,
    /// d_in x d_h projection of the fused vector.
    pub input_proj_w: Mat<T>,
    pub input_proj_b: Vec<T>,
    /// F x 2H output projection.
    pub output_proj_w: Mat<T>,
    pub output_proj_b: Vec<T>,
    /// T x d_in sinusoidal table; deterministic, never trained.
    pub pos_table: Mat<T>,
}

impl<T: Scalar> DecoderParams<T> {
    pub fn frames(&self) -> usize {
        self.pos_table.rows()
    }

    pub fn bands(&self) -> usize {
        self.output_proj_w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn d_in(&self) -> usize {
        self.input_proj_w.rows()
    }

    pub fn d_h(&self) -> usize {
        self.input_proj_w.cols()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Shape("decoder needs at least one layer".into()));
        }
        let hidden = self.hidden();
        let d_in = self.d_in();
        if self.pos_table.cols() != d_in {
            return Err(ModelError::dim("pos_table cols", d_in, self.pos_table.cols()));
        }
        if self.input_proj_b.len() != d_in {
            return Err(ModelError::dim("input_proj_b", d_in, self.input_proj_b.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let expect_in = if l == 0 { d_in } else { 2 * hidden };
            for (cell, name) in [(&layer.fw, "fw"), (&layer.bw, "bw")] {
                if cell.hidden() != hidden {
                    return Err(ModelError::dim(
                        &format!("layer {l} {name} hidden"),
                        hidden,
                        cell.hidden(),
                    ));
                }
                if cell.input_dim() != expect_in {
                    return Err(ModelError::dim(
                        &format!("layer {l} {name} input dim"),
                        expect_in,
                        cell.input_dim(),
                    ));
                }
                if cell.w_input.rows() != 4 * hidden || cell.w_rec.rows() != 4 * hidden {
                    return Err(ModelError::Shape(format!("layer {l} {name} gate rows")));
                }
                if cell.bias.len() != 4 * hidden {
                    return Err(ModelError::dim(
                        &format!("layer {l} {name} bias"),
                        4 * hidden,
                        cell.bias.len(),
                    ));
                }
            }
        }
        if self.output_proj_w.cols() != 2 * hidden {
            return Err(ModelError::dim(
                "output_proj_w cols",
                2 * hidden,
                self.output_proj_w.cols(),
            ));
        }
        if self.output_proj_b.len() != self.bands() {
            return Err(ModelError::dim(
                "output_proj_b",
                self.bands(),
                self.output_proj_b.len(),
            ));
        }
        Ok(())
    }
}

/// Standard sinusoidal table: entry (t, 2i) = sin(t / 10000^(2i/d)) and
/// (t, 2i+1) = cos of the same angle. Row 0 is [0, 1, 0, 1, ...].
pub fn positional_table<T: Scalar>(frames: usize, d_in: usize) -> Mat<T> {
    let mut table = Mat::zeros(frames, d_in);
    for t in 0..frames {
        for k in 0..d_in {
            let pair = (k / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / d_in as f64);
            let v = if k % 2 == 0 { angle.sin() } else { angle.cos() };
            table.set(t, k, T::from_f64(v));
        }
    }
    table
}

/// Broadcast the fused vector over time: row_t = W_p h + b_p + pos[t].
pub fn expand_sequence<T: Scalar>(
    h: &[T],
    decoder: &DecoderParams<T>,
) -> Result<Vec<Vec<T>>, ModelError> {
    decoder.check()?;
    if h.len() != decoder.d_h() {
        return Err(ModelError::dim("fused vector", decoder.d_h(), h.len()));
    }
    let mut base = decoder.input_proj_w.matvec(h);
    for (b, bias) in base.iter_mut().zip(&decoder.input_proj_b) {
        *b += *bias;
    }
    let frames = decoder.frames();
    let mut seq = Vec::with_capacity(frames);
    for t in 0..frames {
        let row = decoder
            .pos_table
            .row(t)
            .iter()
            .zip(&base)
            .map(|(&p, &b)| p + b)
            .collect();
        seq.push(row);
    }
    Ok(seq)
}

pub(crate) struct DecoderCache<T> {
    /// The fused vector the sequence was expanded from.
    pub fused: Vec<T>,
    /// Inputs fed to each layer (layer_inputs[0] is the expanded sequence).
    pub layer_inputs: Vec<Vec<Vec<T>>>,
    pub layer_caches: Vec<BiLayerCache<T>>,
    /// Final layer concatenated outputs, T x 2H.
    pub top: Vec<Vec<T>>,
    /// tanh outputs, T x F.
    pub y: Mat<T>,
}

pub(crate) fn decoder_forward<T: Scalar>(
    decoder: &DecoderParams<T>,
    h: &[T],
) -> Result<DecoderCache<T>, ModelError> {
    let seq = expand_sequence(h, decoder)?;
    let mut layer_inputs = Vec::with_capacity(decoder.layers.len());
    let mut layer_caches = Vec::with_capacity(decoder.layers.len());
    let mut current = seq;
    for layer in &decoder.layers {
        let cache = layer.forward(&current);
        let outputs = layer.outputs(&cache);
        layer_inputs.push(current);
        layer_caches.push(cache);
        current = outputs;
    }
    let top = current;

    let frames = decoder.frames();
    let bands = decoder.bands();
    let mut y = Mat::zeros(frames, bands);
    for t in 0..frames {
        let mut z = decoder.output_proj_w.matvec(&top[t]);
        for (v, b) in z.iter_mut().zip(&decoder.output_proj_b) {
            *v = (*v + *b).tanh();
        }
        y.row_mut(t).copy_from_slice(&z);
    }

    Ok(DecoderCache {
        fused: h.to_vec(),
        layer_inputs,
        layer_caches,
        top,
        y,
    })
}

#[derive(Debug, Clone)]
pub struct DecoderGrads<T> {
    pub layers: Vec<BiLayerGrads<T>>,
    pub input_proj_w: Mat<T>,
    pub input_proj_b: Vec<T>,
    pub output_proj_w: Mat<T>,
    pub output_proj_b: Vec<T>,
}

impl<T: Scalar> DecoderGrads<T> {
    pub fn zeros_like(decoder: &DecoderParams<T>) -> Self {
        Self {
            layers: decoder.layers.iter().map(BiLayerGrads::zeros_like).collect(),
            input_proj_w: Mat::zeros(decoder.input_proj_w.rows(), decoder.input_proj_w.cols()),
            input_proj_b: vec![T::zero(); decoder.input_proj_b.len()],
            output_proj_w: Mat::zeros(decoder.output_proj_w.rows(), decoder.output_proj_w.cols()),
            output_proj_b: vec![T::zero(); decoder.output_proj_b.len()],
        }
    }
}

/// Backward pass through projection, stack and expansion; returns the
/// cotangent of the fused vector and accumulates parameter grads.
pub(crate) fn decoder_backward<T: Scalar>(
    decoder: &DecoderParams<T>,
    cache: &DecoderCache<T>,
    d_y: &Mat<T>,
    grads: &mut DecoderGrads<T>,
) -> Vec<T> {
    let frames = decoder.frames();
    let hidden = decoder.hidden();

    // Output projection with tanh.
    let mut d_top: Vec<Vec<T>> = vec![vec![T::zero(); 2 * hidden]; frames];
    for t in 0..frames {
        let y_row = cache.y.row(t);
        let mut dz = vec![T::zero(); decoder.bands()];
        for (j, d) in dz.iter_mut().enumerate() {
            let y = y_row[j];
            *d = d_y.get(t, j) * (T::one() - y * y);
        }
        grads.output_proj_w.add_outer(&dz, &cache.top[t]);
        for (b, d) in grads.output_proj_b.iter_mut().zip(&dz) {
            *b += *d;
        }
        d_top[t] = decoder.output_proj_w.matvec_t(&dz);
    }

    // LSTM stack, top layer first.
    let mut d_out = d_top;
    for l in (0..decoder.layers.len()).rev() {
        d_out = bilayer_backward(
            &decoder.layers[l],
            &cache.layer_inputs[l],
            &cache.layer_caches[l],
            &d_out,
            &mut grads.layers[l],
        );
    }

    // Expansion: every step shares the projected vector.
    let mut d_base = vec![T::zero(); decoder.d_in()];
    for d_row in &d_out {
        for (acc, d) in d_base.iter_mut().zip(d_row) {
            *acc += *d;
        }
    }
    // Sequence rows depend on h only through base = W_p h + b_p.
    let d_h = decoder.input_proj_w.matvec_t(&d_base);
    grads.input_proj_w.add_outer(&d_base, &cache.fused);
    for (b, d) in grads.input_proj_b.iter_mut().zip(&d_base) {
        *b += *d;
    }
    d_h
}
