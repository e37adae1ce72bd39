//! LSTM cell and bidirectional layer with hand-written backpropagation
//! through time. Gate preactivations are stacked in the order i, f, g, o:
//!
//!   z = W_in x_t + W_rec h_{t-1} + b
//!   c_t = sigmoid(z_f) * c_{t-1} + sigmoid(z_i) * tanh(z_g)
//!   h_t = sigmoid(z_o) * tanh(c_t)

use crate::linalg::{Mat, Scalar};

use super::fusion::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    /// 4H x D input weights (gate blocks i, f, g, o).
    pub w_input: Mat<T>,
    /// 4H x H recurrent weights.
    pub w_rec: Mat<T>,
    /// 4H bias.
    pub bias: Vec<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn hidden(&self) -> usize {
        self.w_rec.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepState<T> {
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

pub(crate) struct DirectionCache<T> {
    /// States in scan order (index 0 = first step scanned).
    pub states: Vec<StepState<T>>,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub struct CellGrads<T> {
    pub w_input: Mat<T>,
    pub w_rec: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> CellGrads<T> {
    pub fn zeros_like(cell: &LstmCell<T>) -> Self {
        Self {
            w_input: Mat::zeros(cell.w_input.rows(), cell.w_input.cols()),
            w_rec: Mat::zeros(cell.w_rec.rows(), cell.w_rec.cols()),
            bias: vec![T::zero(); cell.bias.len()],
        }
    }
}

fn step<T: Scalar>(cell: &LstmCell<T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> StepState<T> {
    let hidden = cell.hidden();
    let mut z = cell.w_input.matvec(x);
    let zr = cell.w_rec.matvec(h_prev);
    for (a, (b, c)) in z.iter_mut().zip(zr.iter().zip(&cell.bias)) {
        *a += *b + *c;
    }

    let mut state = StepState {
        i: vec![T::zero(); hidden],
        f: vec![T::zero(); hidden],
        g: vec![T::zero(); hidden],
        o: vec![T::zero(); hidden],
        c: vec![T::zero(); hidden],
        tanh_c: vec![T::zero(); hidden],
        h: vec![T::zero(); hidden],
    };
    for j in 0..hidden {
        state.i[j] = sigmoid(z[j]);
        state.f[j] = sigmoid(z[hidden + j]);
        state.g[j] = z[2 * hidden + j].tanh();
        state.o[j] = sigmoid(z[3 * hidden + j]);
        state.c[j] = state.f[j] * c_prev[j] + state.i[j] * state.g[j];
        state.tanh_c[j] = state.c[j].tanh();
        state.h[j] = state.o[j] * state.tanh_c[j];
    }
    state
}

/// Scan the cell over `inputs` (optionally in reverse). The returned states
/// are aligned to the original time indices regardless of direction.
pub(crate) fn run_direction<T: Scalar>(
    cell: &LstmCell<T>,
    inputs: &[Vec<T>],
    reverse: bool,
) -> DirectionCache<T> {
    let hidden = cell.hidden();
    let steps = inputs.len();
    let mut states: Vec<StepState<T>> = Vec::with_capacity(steps);
    let mut h_prev = vec![T::zero(); hidden];
    let mut c_prev = vec![T::zero(); hidden];
    for idx in 0..steps {
        let t = if reverse { steps - 1 - idx } else { idx };
        let state = step(cell, &inputs[t], &h_prev, &c_prev);
        h_prev = state.h.clone();
        c_prev = state.c.clone();
        states.push(state);
    }
    if reverse {
        states.reverse();
    }
    DirectionCache { states, reverse }
}

/// BPTT over one direction. `d_h` holds the cotangent of each step's hidden
/// output (time-aligned); returns the cotangents of the step inputs and
/// accumulates weight gradients into `grads`.
pub(crate) fn backward_direction<T: Scalar>(
    cell: &LstmCell<T>,
    inputs: &[Vec<T>],
    cache: &DirectionCache<T>,
    d_h: &[Vec<T>],
    grads: &mut CellGrads<T>,
) -> Vec<Vec<T>> {
    let hidden = cell.hidden();
    let steps = inputs.len();
    let mut d_inputs = vec![vec![T::zero(); cell.input_dim()]; steps];
    let mut dh_next = vec![T::zero(); hidden];
    let mut dc_next = vec![T::zero(); hidden];

    // Walk scan order backwards: last scanned step first.
    for idx in (0..steps).rev() {
        let t = if cache.reverse { steps - 1 - idx } else { idx };
        let state = &cache.states[t];
        let prev_t = if cache.reverse {
            if t + 1 < steps { Some(t + 1) } else { None }
        } else {
            t.checked_sub(1)
        };
        let (h_prev, c_prev): (Vec<T>, Vec<T>) = match prev_t {
            Some(p) => (cache.states[p].h.clone(), cache.states[p].c.clone()),
            None => (vec![T::zero(); hidden], vec![T::zero(); hidden]),
        };

        let mut dz = vec![T::zero(); 4 * hidden];
        let mut dc_prev = vec![T::zero(); hidden];
        for j in 0..hidden {
            let dh = d_h[t][j] + dh_next[j];
            let do_ = dh * state.tanh_c[j];
            let dc = dh * state.o[j] * (T::one() - state.tanh_c[j] * state.tanh_c[j]) + dc_next[j];
            let di = dc * state.g[j];
            let df = dc * c_prev[j];
            let dg = dc * state.i[j];
            dc_prev[j] = dc * state.f[j];

            dz[j] = di * state.i[j] * (T::one() - state.i[j]);
            dz[hidden + j] = df * state.f[j] * (T::one() - state.f[j]);
            dz[2 * hidden + j] = dg * (T::one() - state.g[j] * state.g[j]);
            dz[3 * hidden + j] = do_ * state.o[j] * (T::one() - state.o[j]);
        }

        grads.w_input.add_outer(&dz, &inputs[t]);
        grads.w_rec.add_outer(&dz, &h_prev);
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += *d;
        }

        d_inputs[t] = cell.w_input.matvec_t(&dz);
        dh_next = cell.w_rec.matvec_t(&dz);
        dc_next = dc_prev;
    }
    d_inputs
}

/// Forward + backward halves sharing the layer input; outputs are the
/// per-step concatenation [h_fw; h_bw].
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer<T> {
    pub fw: LstmCell<T>,
    pub bw: LstmCell<T>,
}

pub(crate) struct BiLayerCache<T> {
    pub fw: DirectionCache<T>,
    pub bw: DirectionCache<T>,
}

impl<T: Scalar> BiLstmLayer<T> {
    pub fn hidden(&self) -> usize {
        self.fw.hidden()
    }

    pub(crate) fn forward(&self, inputs: &[Vec<T>]) -> BiLayerCache<T> {
        BiLayerCache {
            fw: run_direction(&self.fw, inputs, false),
            bw: run_direction(&self.bw, inputs, true),
        }
    }

    pub(crate) fn outputs(&self, cache: &BiLayerCache<T>) -> Vec<Vec<T>> {
        let hidden = self.hidden();
        cache
            .fw
            .states
            .iter()
            .zip(&cache.bw.states)
            .map(|(f, b)| {
                let mut out = Vec::with_capacity(2 * hidden);
                out.extend_from_slice(&f.h);
                out.extend_from_slice(&b.h);
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BiLayerGrads<T> {
    pub fw: CellGrads<T>,
    pub bw: CellGrads<T>,
}

impl<T: Scalar> BiLayerGrads<T> {
    pub fn zeros_like(layer: &BiLstmLayer<T>) -> Self {
        Self {
            fw: CellGrads::zeros_like(&layer.fw),
            bw: CellGrads::zeros_like(&layer.bw),
        }
    }
}

pub(crate) fn bilayer_backward<T: Scalar>(
    layer: &BiLstmLayer<T>,
    inputs: &[Vec<T>],
    cache: &BiLayerCache<T>,
    d_out: &[Vec<T>],
    grads: &mut BiLayerGrads<T>,
) -> Vec<Vec<T>> {
    let hidden = layer.hidden();
    let steps = inputs.len();
    let d_fw: Vec<Vec<T>> = d_out.iter().map(|d| d[..hidden].to_vec()).collect();
    let d_bw: Vec<Vec<T>> = d_out.iter().map(|d| d[hidden..].to_vec()).collect();

    let din_fw = backward_direction(&layer.fw, inputs, &cache.fw, &d_fw, &mut grads.fw);
    let din_bw = backward_direction(&layer.bw, inputs, &cache.bw, &d_bw, &mut grads.bw);

    (0..steps)
        .map(|t| {
            din_fw[t]
                .iter()
                .zip(&din_bw[t])
                .map(|(&a, &b)| a + b)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize) -> LstmCell<f64> {
        let w_input = Mat::from_vec(
            4 * hidden,
            input_dim,
            (0..4 * hidden * input_dim)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        );
        let w_rec = Mat::from_vec(
            4 * hidden,
            hidden,
            (0..4 * hidden * hidden)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        );
        let bias = (0..4 * hidden).map(|_| rng.gen_range(-0.5..0.5)).collect();
        LstmCell {
            w_input,
            w_rec,
            bias,
        }
    }

    fn random_seq(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..steps)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn tied_weights_swap_directions_under_sequence_reversal() {
        // With fw == bw, scanning the reversed sequence forward reproduces
        // the backward states of the original sequence (L=1, hidden=3, T=5).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = random_cell(&mut rng, 4, 3);
        let layer = BiLstmLayer {
            fw: cell.clone(),
            bw: cell,
        };
        let seq = random_seq(&mut rng, 5, 4);
        let mut rev_seq = seq.clone();
        rev_seq.reverse();

        let cache = layer.forward(&seq);
        let rev_cache = layer.forward(&rev_seq);
        for t in 0..5 {
            for j in 0..3 {
                let bw_orig = cache.bw.states[t].h[j];
                let fw_rev = rev_cache.fw.states[4 - t].h[j];
                assert!(
                    (bw_orig - fw_rev).abs() < 1e-12,
                    "t={t} j={j}: {bw_orig} vs {fw_rev}"
                );
            }
        }
    }

    #[test]
    fn direction_cache_is_time_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = random_cell(&mut rng, 2, 3);
        let seq = random_seq(&mut rng, 6, 2);
        let bw = run_direction(&cell, &seq, true);
        // The backward scan's first step processes t = 5, so states[5]
        // must carry zero-initialized recurrence: recompute it directly.
        let manual = step(&cell, &seq[5], &[0.0; 3], &[0.0; 3]);
        for j in 0..3 {
            assert!((bw.states[5].h[j] - manual.h[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 1e-5;
        for _ in 0..4 {
            let layer = BiLstmLayer {
                fw: random_cell(&mut rng, 3, 4),
                bw: random_cell(&mut rng, 3, 4),
            };
            let seq = random_seq(&mut rng, 5, 3);
            // Fixed random projection of all outputs as the scalar loss.
            let probe: Vec<Vec<f64>> = random_seq(&mut rng, 5, 8);
            let loss = |l: &BiLstmLayer<f64>, s: &[Vec<f64>]| -> f64 {
                let cache = l.forward(s);
                l.outputs(&cache)
                    .iter()
                    .zip(&probe)
                    .map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                    .sum()
            };

            let cache = layer.forward(&seq);
            let mut grads = BiLayerGrads::zeros_like(&layer);
            let d_in = bilayer_backward(&layer, &seq, &cache, &probe, &mut grads);

            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let fd = (plus - minus) / (2.0 * eps);
                let denom = analytic.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-4,
                    "{what}: analytic {analytic} vs fd {fd}"
                );
            };

            // Input weight gradients, both directions.
            for (dir, get_grads) in [(0usize, &grads.fw), (1usize, &grads.bw)] {
                let cell = if dir == 0 { &layer.fw } else { &layer.bw };
                for r in 0..cell.w_input.rows() {
                    for c in 0..cell.w_input.cols() {
                        let mut l = layer.clone();
                        let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                        target.w_input.set(r, c, cell.w_input.get(r, c) + eps);
                        let plus = loss(&l, &seq);
                        let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                        target.w_input.set(r, c, cell.w_input.get(r, c) - eps);
                        let minus = loss(&l, &seq);
                        check(get_grads.w_input.get(r, c), plus, minus, "w_input");
                    }
                }
                for r in 0..cell.w_rec.rows() {
                    for c in 0..cell.w_rec.cols() {
                        let mut l = layer.clone();
                        let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                        target.w_rec.set(r, c, cell.w_rec.get(r, c) + eps);
                        let plus = loss(&l, &seq);
                        let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                        target.w_rec.set(r, c, cell.w_rec.get(r, c) - eps);
                        let minus = loss(&l, &seq);
                        check(get_grads.w_rec.get(r, c), plus, minus, "w_rec");
                    }
                }
                for j in 0..cell.bias.len() {
                    let mut l = layer.clone();
                    let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                    target.bias[j] = cell.bias[j] + eps;
                    let plus = loss(&l, &seq);
                    let target = if dir == 0 { &mut l.fw } else { &mut l.bw };
                    target.bias[j] = cell.bias[j] - eps;
                    let minus = loss(&l, &seq);
                    check(get_grads.bias[j], plus, minus, "bias");
                }
            }

            // Input cotangents.
            for t in 0..seq.len() {
                for j in 0..seq[t].len() {
                    let mut s = seq.clone();
                    s[t][j] = seq[t][j] + eps;
                    let plus = loss(&layer, &s);
                    s[t][j] = seq[t][j] - eps;
                    let minus = loss(&layer, &s);
                    check(d_in[t][j], plus, minus, "input");
                }
            }
        }
    }
}
