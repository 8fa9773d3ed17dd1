//! Fully-connected layers with hand-written backward passes, LeakyReLU, the
//! Adam optimizer and an exponential learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, RngState};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// `y = weight · x + bias`, applied to every column of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out_dim × in_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        dense_forward(self, x)
    }
}

pub fn dense_forward(layer: &DenseLayer, x: &Matrix) -> Result<Matrix> {
    if x.rows() != layer.in_dim() {
        return Err(Error::shape(format!(
            "layer expects {} input rows, got {}",
            layer.in_dim(),
            x.rows()
        )));
    }
    let mut y = Matrix::zeros(layer.out_dim(), x.cols());
    gemm(1.0, &layer.weight, false, x, false, 0.0, &mut y);
    for (r, b) in layer.bias.iter().enumerate() {
        y.row_mut(r).iter_mut().for_each(|v| *v += b);
    }
    Ok(y)
}

/// Gradients of a scalar loss with respect to weight, bias and input, given
/// the upstream gradient `grad_out` of the layer output.
pub fn dense_backward(layer: &DenseLayer, x: &Matrix, grad_out: &Matrix) -> Result<DenseGrads> {
    let (weight, bias) = dense_param_grads(layer, x, grad_out)?;
    let input = dense_input_grad(layer, grad_out)?;
    Ok(DenseGrads {
        weight,
        bias,
        input,
    })
}

pub(crate) fn dense_param_grads(
    layer: &DenseLayer,
    x: &Matrix,
    grad_out: &Matrix,
) -> Result<(Matrix, Vec<f64>)> {
    check_backward_shapes(layer, x, grad_out)?;
    let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
    gemm(1.0, grad_out, false, x, true, 0.0, &mut gw);
    let gb = (0..grad_out.rows())
        .map(|r| grad_out.row(r).iter().sum())
        .collect();
    Ok((gw, gb))
}

pub(crate) fn dense_input_grad(layer: &DenseLayer, grad_out: &Matrix) -> Result<Matrix> {
    if grad_out.rows() != layer.out_dim() {
        return Err(Error::shape(format!(
            "upstream gradient has {} rows, layer has {} outputs",
            grad_out.rows(),
            layer.out_dim()
        )));
    }
    let mut gx = Matrix::zeros(layer.in_dim(), grad_out.cols());
    gemm(1.0, &layer.weight, true, grad_out, false, 0.0, &mut gx);
    Ok(gx)
}

fn check_backward_shapes(layer: &DenseLayer, x: &Matrix, grad_out: &Matrix) -> Result<()> {
    if x.rows() != layer.in_dim()
        || grad_out.rows() != layer.out_dim()
        || x.cols() != grad_out.cols()
    {
        return Err(Error::shape(format!(
            "backward through {}->{} layer with input {:?} and gradient {:?}",
            layer.in_dim(),
            layer.out_dim(),
            x.shape(),
            grad_out.shape()
        )));
    }
    Ok(())
}

/// Elementwise `max(x, slope·x)`.
pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    let mut y = x.clone();
    leaky_relu_in_place(&mut y, slope);
    y
}

pub(crate) fn leaky_relu_in_place(x: &mut Matrix, slope: f64) {
    x.as_mut_slice().iter_mut().for_each(|v| {
        if *v <= 0.0 {
            *v *= slope;
        }
    });
}

/// Multiplies `grad` by the LeakyReLU derivative at the pre-activation `pre`.
pub fn leaky_relu_backward(pre: &Matrix, grad: &mut Matrix, slope: f64) {
    assert_eq!(pre.shape(), grad.shape());
    grad.as_mut_slice()
        .iter_mut()
        .zip(pre.as_slice())
        .for_each(|(g, &p)| {
            if p <= 0.0 {
                *g *= slope;
            }
        });
}

/// Weights uniform in `±1/√in_dim`, zero bias.
pub fn init_dense(in_dim: usize, out_dim: usize, rng: &mut RngState) -> DenseLayer {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let data = (0..in_dim * out_dim)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    DenseLayer {
        weight: Matrix::from_vec(out_dim, in_dim, data).expect("sized buffer"),
        bias: vec![0.0; out_dim],
    }
}

/// First/second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(format!(
            "adam: {n} params, {} grads, state of {}",
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient {} at parameter {i}",
            grads[i]
        )));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Learning rate `initial_lr · decay_rate^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            decay_rate: 0.95,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::config(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::config(format!(
                "decay_rate must lie in (0, 1], got {}",
                self.decay_rate
            )));
        }
        Ok(())
    }
}

pub fn lr_at_epoch(sched: &LrSchedule, epoch: usize) -> f64 {
    sched.initial_lr * sched.decay_rate.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_layer(rng: &mut RngState, in_dim: usize, out_dim: usize) -> DenseLayer {
        let mut l = init_dense(in_dim, out_dim, rng);
        l.bias.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
        l
    }

    fn random_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn forward_identity_and_hand_case() {
        let layer = DenseLayer::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let x = random_matrix(&mut RngState::new(1), 3, 4);
        assert_eq!(layer.forward(&x).unwrap(), x);

        let layer = DenseLayer::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![1.0]).unwrap();
        let x = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn forward_matches_direct_recomputation() {
        let mut rng = RngState::new(2);
        let layer = random_layer(&mut rng, 5, 4);
        let x = random_matrix(&mut rng, 5, 7);
        let y = layer.forward(&x).unwrap();
        for r in 0..4 {
            for c in 0..7 {
                let mut s = layer.bias[r];
                for k in 0..5 {
                    s += layer.weight.get(r, k) * x.get(k, c);
                }
                assert!((y.get(r, c) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_mismatch() {
        let layer = DenseLayer::zeros(3, 2);
        assert!(matches!(layer.forward(&Matrix::zeros(2, 1)), Err(Error::Shape(_))));
        assert!(DenseLayer::new(Matrix::zeros(2, 3), vec![0.0]).is_err());
    }

    #[test]
    fn leaky_relu_branches() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 0.5]]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01), x);
        let x = Matrix::from_rows(&[[-1.0]]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).get(0, 0), -0.01);
        let x = Matrix::from_rows(&[[-1.0, 3.0, -0.2, 0.0]]).unwrap();
        let relu: Vec<f64> = x.as_slice().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(leaky_relu(&x, 0.0).as_slice(), relu.as_slice());
    }

    #[test]
    fn backward_zero_and_scalar() {
        let mut rng = RngState::new(3);
        let layer = random_layer(&mut rng, 3, 2);
        let x = random_matrix(&mut rng, 3, 4);
        let g = dense_backward(&layer, &x, &Matrix::zeros(2, 4)).unwrap();
        assert_eq!(g.weight.max_abs(), 0.0);
        assert!(g.bias.iter().all(|&b| b == 0.0));
        assert_eq!(g.input.max_abs(), 0.0);

        let layer = DenseLayer::new(Matrix::from_rows(&[[2.0]]).unwrap(), vec![0.0]).unwrap();
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        let g = dense_backward(&layer, &x, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.weight.get(0, 0), 3.0);
        assert_eq!(g.bias[0], 1.0);
        assert_eq!(g.input.get(0, 0), 2.0);
    }

    /// Scalar probe loss `Σ c ⊙ leaky(layer(x))` so the gradient check covers
    /// the activation too.
    fn probe_loss(layer: &DenseLayer, x: &Matrix, c: &Matrix, slope: f64) -> f64 {
        let y = leaky_relu(&layer.forward(x).unwrap(), slope);
        y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngState::new(4);
        let slope = DEFAULT_LEAKY_SLOPE;
        let layer = random_layer(&mut rng, 4, 3);
        let x = random_matrix(&mut rng, 4, 5);
        let c = random_matrix(&mut rng, 3, 5);
        let pre = layer.forward(&x).unwrap();
        assert!(pre.as_slice().iter().all(|v| v.abs() > 1e-3), "kink too close");

        let mut grad_out = c.clone();
        leaky_relu_backward(&pre, &mut grad_out, slope);
        let g = dense_backward(&layer, &x, &grad_out).unwrap();

        let h = 1e-5;
        for i in 0..layer.weight.as_slice().len() {
            let mut plus = layer.clone();
            plus.weight.as_mut_slice()[i] += h;
            let mut minus = layer.clone();
            minus.weight.as_mut_slice()[i] -= h;
            let fd = (probe_loss(&plus, &x, &c, slope) - probe_loss(&minus, &x, &c, slope)) / (2.0 * h);
            assert!(rel_err(g.weight.as_slice()[i], fd) < 1e-6, "weight {i}");
        }
        for i in 0..layer.bias.len() {
            let mut plus = layer.clone();
            plus.bias[i] += h;
            let mut minus = layer.clone();
            minus.bias[i] -= h;
            let fd = (probe_loss(&plus, &x, &c, slope) - probe_loss(&minus, &x, &c, slope)) / (2.0 * h);
            assert!(rel_err(g.bias[i], fd) < 1e-6, "bias {i}");
        }
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (probe_loss(&layer, &xp, &c, slope) - probe_loss(&layer, &xm, &c, slope)) / (2.0 * h);
            assert!(rel_err(g.input.as_slice()[i], fd) < 1e-6, "input {i}");
        }
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);

        adam_step(&mut p, &[0.3, -4.0], &mut st, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, 0.001).unwrap();
        // m̂ = 1, v̂ = 1  ->  Δ = -0.001 / (1 + 1e-8)
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let grads = [0.7, 0.7];
        let (mut p, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut params = vec![0.25];
        let mut st = AdamState::new(1);
        for g in grads {
            adam_step(&mut params, &[g], &mut st, lr).unwrap();
        }
        assert!((params[0] - p).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut st, 1e-3),
            Err(Error::Numeric(_))
        ));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn lr_schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(lr_at_epoch(&s, 0), 0.001);
        assert!((lr_at_epoch(&s, 1) - 0.00095).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 10) - 0.001 * 0.95f64.powi(10)).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 10) - 5.987e-4).abs() < 1e-7);
        assert!(LrSchedule { initial_lr: 0.0, decay_rate: 0.9 }.validate().is_err());
        assert!(LrSchedule { initial_lr: 0.1, decay_rate: 1.5 }.validate().is_err());
    }

    #[test]
    fn init_bounds_and_determinism() {
        let l = init_dense(1, 50, &mut RngState::new(1));
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= 1.0));

        let a = init_dense(8, 8, &mut RngState::new(77));
        let b = init_dense(8, 8, &mut RngState::new(77));
        assert_eq!(a, b);

        let in_dim = 100;
        let l = init_dense(in_dim, 100, &mut RngState::new(5));
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = l.weight.as_slice();
        assert!(w.iter().all(|x| x.abs() <= bound));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // uniform(-b, b) has std b/√3; 3σ of the sample mean
        let sigma_mean = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean);
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
}
