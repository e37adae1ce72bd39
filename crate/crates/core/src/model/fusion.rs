//! Gated residual fusion of the joint image-text embedding with the residual
//! text embedding:
//!
//!   h = sigmoid(Wg [x; r]) * (Wx x) + (1 - sigmoid(Wg [x; r])) * r
//!
//! with r first mapped through an optional Wr when its dimension differs
//! from the output dimension. Every output component is a convex combination
//! of the projected input and the residual.

use crate::linalg::{Mat, Scalar};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    /// d_h x (d_x + d_h) gate matrix applied to [x; r~].
    pub w_gate: Mat<T>,
    /// d_h x d_x projection of the joint embedding.
    pub w_x: Mat<T>,
    /// d_h x d_r residual projection, present only when d_r != d_h.
    pub w_res: Option<Mat<T>>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn d_h(&self) -> usize {
        self.w_x.rows()
    }

    pub fn d_x(&self) -> usize {
        self.w_x.cols()
    }

    pub fn d_r(&self) -> usize {
        self.w_res.as_ref().map_or(self.d_h(), Mat::cols)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let (d_h, d_x) = (self.d_h(), self.d_x());
        if self.w_gate.rows() != d_h {
            return Err(ModelError::dim("w_gate rows", d_h, self.w_gate.rows()));
        }
        if self.w_gate.cols() != d_x + d_h {
            return Err(ModelError::dim(
                "w_gate cols",
                d_x + d_h,
                self.w_gate.cols(),
            ));
        }
        if let Some(w_res) = &self.w_res {
            if w_res.rows() != d_h {
                return Err(ModelError::dim("w_res rows", d_h, w_res.rows()));
            }
            if w_res.cols() == d_h {
                return Err(ModelError::Shape(
                    "w_res present although d_r equals d_h".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One fusion input: the concatenated image+text embedding and the residual
/// text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput<T> {
    pub x: Vec<T>,
    pub r: Vec<T>,
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

pub(crate) struct FusionCache<T> {
    pub r_tilde: Vec<T>,
    pub projected: Vec<T>,
    pub gate: Vec<T>,
    pub output: Vec<T>,
}

fn check_input<T: Scalar>(params: &FusionParams<T>, input: &FusionInput<T>) -> Result<(), ModelError> {
    params.check()?;
    if input.x.len() != params.d_x() {
        return Err(ModelError::dim("fusion input x", params.d_x(), input.x.len()));
    }
    if input.r.len() != params.d_r() {
        return Err(ModelError::dim("fusion input r", params.d_r(), input.r.len()));
    }
    Ok(())
}

pub(crate) fn fuse_forward<T: Scalar>(
    params: &FusionParams<T>,
    input: &FusionInput<T>,
) -> Result<FusionCache<T>, ModelError> {
    check_input(params, input)?;
    let r_tilde = match &params.w_res {
        Some(w_res) => w_res.matvec(&input.r),
        None => input.r.clone(),
    };
    let projected = params.w_x.matvec(&input.x);

    let mut gate_in = Vec::with_capacity(input.x.len() + r_tilde.len());
    gate_in.extend_from_slice(&input.x);
    gate_in.extend_from_slice(&r_tilde);
    let gate: Vec<T> = params
        .w_gate
        .matvec(&gate_in)
        .into_iter()
        .map(sigmoid)
        .collect();

    let output = gate
        .iter()
        .zip(projected.iter().zip(&r_tilde))
        .map(|(&g, (&a, &r))| g * a + (T::one() - g) * r)
        .collect();

    Ok(FusionCache {
        r_tilde,
        projected,
        gate,
        output,
    })
}

/// h = g * (Wx x) + (1 - g) * r~ with g = sigmoid(Wg [x; r~]).
pub fn gated_fuse<T: Scalar>(
    params: &FusionParams<T>,
    input: &FusionInput<T>,
) -> Result<Vec<T>, ModelError> {
    Ok(fuse_forward(params, input)?.output)
}

#[derive(Debug, Clone)]
pub struct FusionGrads<T> {
    pub w_gate: Mat<T>,
    pub w_x: Mat<T>,
    pub w_res: Option<Mat<T>>,
    pub x: Vec<T>,
    pub r: Vec<T>,
}

/// Exact gradients of `gated_fuse` for an upstream cotangent on h.
pub fn gated_fuse_grad<T: Scalar>(
    params: &FusionParams<T>,
    input: &FusionInput<T>,
    upstream: &[T],
) -> Result<FusionGrads<T>, ModelError> {
    let cache = fuse_forward(params, input)?;
    if upstream.len() != params.d_h() {
        return Err(ModelError::dim("upstream", params.d_h(), upstream.len()));
    }
    Ok(fuse_backward(params, input, &cache, upstream))
}

pub(crate) fn fuse_backward<T: Scalar>(
    params: &FusionParams<T>,
    input: &FusionInput<T>,
    cache: &FusionCache<T>,
    upstream: &[T],
) -> FusionGrads<T> {
    let d_h = params.d_h();
    let d_x = params.d_x();

    // d/dz of sigmoid(z) = g (1 - g); the gate multiplies (projected - r~).
    let mut d_gate_pre = vec![T::zero(); d_h];
    let mut d_projected = vec![T::zero(); d_h];
    let mut d_r_tilde = vec![T::zero(); d_h];
    for i in 0..d_h {
        let g = cache.gate[i];
        let u = upstream[i];
        d_projected[i] = u * g;
        d_r_tilde[i] = u * (T::one() - g);
        d_gate_pre[i] = u * (cache.projected[i] - cache.r_tilde[i]) * g * (T::one() - g);
    }

    let mut gate_in = Vec::with_capacity(d_x + d_h);
    gate_in.extend_from_slice(&input.x);
    gate_in.extend_from_slice(&cache.r_tilde);

    let mut w_gate = Mat::zeros(d_h, d_x + d_h);
    w_gate.add_outer(&d_gate_pre, &gate_in);
    let d_gate_in = params.w_gate.matvec_t(&d_gate_pre);

    let mut w_x = Mat::zeros(d_h, d_x);
    w_x.add_outer(&d_projected, &input.x);

    let mut d_x_vec = params.w_x.matvec_t(&d_projected);
    for i in 0..d_x {
        d_x_vec[i] += d_gate_in[i];
    }
    for i in 0..d_h {
        d_r_tilde[i] += d_gate_in[d_x + i];
    }

    let (w_res, d_r) = match &params.w_res {
        Some(w_res) => {
            let mut g = Mat::zeros(d_h, w_res.cols());
            g.add_outer(&d_r_tilde, &input.r);
            (Some(g), w_res.matvec_t(&d_r_tilde))
        }
        None => (None, d_r_tilde.clone()),
    };

    FusionGrads {
        w_gate,
        w_x,
        w_res,
        x: d_x_vec,
        r: d_r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_instance(rng: &mut ChaCha8Rng, d_x: usize, d_h: usize, d_r: usize) -> (FusionParams<f64>, FusionInput<f64>) {
        let params = FusionParams {
            w_gate: random_mat(rng, d_h, d_x + d_h),
            w_x: random_mat(rng, d_h, d_x),
            w_res: if d_r == d_h {
                None
            } else {
                Some(random_mat(rng, d_h, d_r))
            },
        };
        let input = FusionInput {
            x: random_vec(rng, d_x),
            r: random_vec(rng, d_r),
        };
        (params, input)
    }

    /// Straight transliteration of the fusion formula, kept independent of
    /// the production path on purpose.
    fn straight_line_fuse(p: &FusionParams<f64>, inp: &FusionInput<f64>) -> Vec<f64> {
        let d_h = p.w_x.rows();
        let r_t: Vec<f64> = match &p.w_res {
            Some(w) => (0..d_h)
                .map(|i| (0..inp.r.len()).map(|j| w.get(i, j) * inp.r[j]).sum())
                .collect(),
            None => inp.r.clone(),
        };
        let mut h = vec![0.0; d_h];
        for i in 0..d_h {
            let mut a = 0.0;
            for j in 0..inp.x.len() {
                a += p.w_x.get(i, j) * inp.x[j];
            }
            let mut z = 0.0;
            for j in 0..inp.x.len() {
                z += p.w_gate.get(i, j) * inp.x[j];
            }
            for j in 0..d_h {
                z += p.w_gate.get(i, inp.x.len() + j) * r_t[j];
            }
            let g = 1.0 / (1.0 + (-z).exp());
            h[i] = g * a + (1.0 - g) * r_t[i];
        }
        h
    }

    #[test]
    fn zero_gate_matrix_averages_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut params, input) = random_instance(&mut rng, 6, 4, 4);
        params.w_gate = Mat::zeros(4, 10);
        let h = gated_fuse(&params, &input).unwrap();
        let a = params.w_x.matvec(&input.x);
        for i in 0..4 {
            assert!((h[i] - 0.5 * (a[i] + input.r[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_branches_pass_through() {
        // Pick x so that Wx x equals r; the gate then has no effect.
        let params = FusionParams::<f64> {
            w_gate: Mat::from_vec(2, 5, (0..10).map(|i| i as f64 * 0.1).collect()),
            w_x: Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]),
            w_res: None,
        };
        let input = FusionInput {
            x: vec![0.3, -0.7, 0.9],
            r: vec![0.3, -0.7],
        };
        let h = gated_fuse(&params, &input).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-12);
        assert!((h[1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d_r in [4usize, 3] {
            let (params, input) = random_instance(&mut rng, 6, 4, d_r);
            let got = gated_fuse(&params, &input).unwrap();
            let expect = straight_line_fuse(&params, &input);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (params, input) = random_instance(&mut rng, 6, 4, 4);
            let h = gated_fuse(&params, &input).unwrap();
            let a = params.w_x.matvec(&input.x);
            for i in 0..4 {
                let lo = a[i].min(input.r[i]) - 1e-12;
                let hi = a[i].max(input.r[i]) + 1e-12;
                assert!(h[i] >= lo && h[i] <= hi);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (params, input) = random_instance(&mut rng, 6, 4, 3);
        let g = gated_fuse_grad(&params, &input, &[0.0; 4]).unwrap();
        assert!(g.w_gate.data().iter().all(|&v| v == 0.0));
        assert!(g.w_x.data().iter().all(|&v| v == 0.0));
        assert!(g.w_res.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.x.iter().all(|&v| v == 0.0));
        assert!(g.r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_grad_vanishes_when_branches_agree() {
        // Wx x == r~ makes the loss flat in the gate direction.
        let params = FusionParams::<f64> {
            w_gate: Mat::zeros(2, 5),
            w_x: Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]),
            w_res: None,
        };
        let input = FusionInput {
            x: vec![0.3, -0.7, 0.9],
            r: vec![0.3, -0.7],
        };
        let g = gated_fuse_grad(&params, &input, &[1.0, -2.0]).unwrap();
        assert!(g.w_gate.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_reports_expected_and_actual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (params, mut input) = random_instance(&mut rng, 6, 4, 4);
        input.x.push(0.0);
        match gated_fuse(&params, &input) {
            Err(ModelError::DimMismatch {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 6);
                assert_eq!(actual, 7);
            }
            other => panic!("expected dim mismatch, got {other:?}"),
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = 1e-5;
        for case in 0..10 {
            let d_r = if case % 2 == 0 { 4 } else { 3 };
            let (params, input) = random_instance(&mut rng, 6, 4, d_r);
            let upstream = random_vec(&mut rng, 4);
            let loss = |p: &FusionParams<f64>, inp: &FusionInput<f64>| -> f64 {
                let h = gated_fuse(p, inp).unwrap();
                h.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let grads = gated_fuse_grad(&params, &input, &upstream).unwrap();

            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let fd = (plus - minus) / (2.0 * eps);
                let denom = analytic.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-4,
                    "{what}: analytic {analytic} vs fd {fd}"
                );
            };

            for r in 0..params.w_gate.rows() {
                for c in 0..params.w_gate.cols() {
                    let mut p = params.clone();
                    p.w_gate.set(r, c, params.w_gate.get(r, c) + eps);
                    let plus = loss(&p, &input);
                    p.w_gate.set(r, c, params.w_gate.get(r, c) - eps);
                    let minus = loss(&p, &input);
                    check(grads.w_gate.get(r, c), plus, minus, "w_gate");
                }
            }
            for r in 0..params.w_x.rows() {
                for c in 0..params.w_x.cols() {
                    let mut p = params.clone();
                    p.w_x.set(r, c, params.w_x.get(r, c) + eps);
                    let plus = loss(&p, &input);
                    p.w_x.set(r, c, params.w_x.get(r, c) - eps);
                    let minus = loss(&p, &input);
                    check(grads.w_x.get(r, c), plus, minus, "w_x");
                }
            }
            if let Some(w_res) = &params.w_res {
                let grad_res = grads.w_res.as_ref().unwrap();
                for r in 0..w_res.rows() {
                    for c in 0..w_res.cols() {
                        let mut p = params.clone();
                        p.w_res.as_mut().unwrap().set(r, c, w_res.get(r, c) + eps);
                        let plus = loss(&p, &input);
                        p.w_res.as_mut().unwrap().set(r, c, w_res.get(r, c) - eps);
                        let minus = loss(&p, &input);
                        check(grad_res.get(r, c), plus, minus, "w_res");
                    }
                }
            }
            for i in 0..input.x.len() {
                let mut inp = input.clone();
                inp.x[i] = input.x[i] + eps;
                let plus = loss(&params, &inp);
                inp.x[i] = input.x[i] - eps;
                let minus = loss(&params, &inp);
                check(grads.x[i], plus, minus, "x");
            }
            for i in 0..input.r.len() {
                let mut inp = input.clone();
                inp.r[i] = input.r[i] + eps;
                let plus = loss(&params, &inp);
                inp.r[i] = input.r[i] - eps;
                let minus = loss(&params, &inp);
                check(grads.r[i], plus, minus, "r");
            }
        }
    }
}
