//! Building blocks of the coordinate networks and their gradients.

use super::matrix::{gemm, Matrix, Op};

/// Variance floor of the layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Fully-connected layer `y = x W + b` with `W` stored `inputs x outputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols, self.inputs, "dense input width");
        let mut y = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(x.rows, self.inputs, self.outputs, &x.data, Op::N, &self.weights, Op::N, 1.0, &mut y.data);
        y
    }

    /// Gradients of the layer given its input `x` and the upstream gradient `dy`.
    /// Returns the input gradient too unless `need_input_grad` is false.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, need_input_grad: bool) -> (DenseGrad, Option<Matrix>) {
        let mut dw = vec![0.0; self.inputs * self.outputs];
        gemm(self.inputs, x.rows, self.outputs, &x.data, Op::T, &dy.data, Op::N, 0.0, &mut dw);
        let mut db = vec![0.0; self.outputs];
        for r in 0..dy.rows {
            for (acc, g) in db.iter_mut().zip(dy.row(r)) {
                *acc += g;
            }
        }
        let dx = need_input_grad.then(|| {
            let mut dx = Matrix::zeros(x.rows, self.inputs);
            gemm(x.rows, self.outputs, self.inputs, &dy.data, Op::N, &self.weights, Op::T, 0.0, &mut dx.data);
            dx
        });
        (DenseGrad { weights: dw, bias: db }, dx)
    }
}

/// Normalizes every row to zero mean and unit variance (no affine parameters).
/// Returns the normalized rows and the per-row reciprocal standard deviation.
pub fn layer_norm(x: &Matrix) -> (Matrix, Vec<f64>) {
    let n = x.cols as f64;
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (o, v) in y.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        rstd.push(s);
    }
    (y, rstd)
}

/// Input gradient of [`layer_norm`] from its output `y`, `rstd` and upstream `dy`.
pub fn layer_norm_backward(y: &Matrix, rstd: &[f64], dy: &Matrix) -> Matrix {
    let n = y.cols as f64;
    let mut dx = Matrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let mean_dy = dyr.iter().sum::<f64>() / n;
        let mean_dy_y = dyr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / n;
        for ((o, g), v) in dx.row_mut(r).iter_mut().zip(dyr).zip(yr) {
            *o = rstd[r] * (g - mean_dy - v * mean_dy_y);
        }
    }
    dx
}

pub fn relu_in_place(x: &mut Matrix) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` where the ReLU output `y` was clamped.
pub fn relu_backward_in_place(y: &Matrix, dy: &mut Matrix) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
