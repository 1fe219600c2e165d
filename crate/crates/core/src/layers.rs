//! Layer-level forward and backward primitives.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Result};
use crate::linalg::{axpy, dot, Matrix};

/// ELU slope for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;

/// `y = W x + b` with `W` of shape `(out, in)`.
pub fn affine_forward(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len("affine_forward input", w.cols(), x.len())?;
    check_len("affine_forward bias", w.rows(), b.len())?;
    Ok(w.iter_rows().zip(b).map(|(r, bi)| dot(r, x) + bi).collect())
}

/// Gradients of an affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub input: Vec<f64>,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Backward pass of [`affine_forward`] for upstream gradient `grad_y`.
pub fn affine_backward(x: &[f64], w: &Matrix, grad_y: &[f64]) -> Result<AffineGrads> {
    check_len("affine_backward input", w.cols(), x.len())?;
    check_len("affine_backward upstream", w.rows(), grad_y.len())?;
    let mut input = vec![0.0; x.len()];
    let mut weight = Matrix::zeros(w.rows(), w.cols());
    for (o, &g) in grad_y.iter().enumerate() {
        axpy(g, w.row(o), &mut input);
        axpy(g, x, weight.row_mut(o));
    }
    Ok(AffineGrads {
        input,
        weight,
        bias: grad_y.to_vec(),
    })
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * libm::expm1(x)
    }
}

/// Derivative of [`elu`] at `x`.
#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        ELU_ALPHA * libm::exp(x)
    }
}

pub fn elu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| elu(v)).collect()
}

pub fn elu_backward(x: &[f64], grad_y: &[f64]) -> Result<Vec<f64>> {
    check_len("elu_backward", x.len(), grad_y.len())?;
    Ok(x.iter().zip(grad_y).map(|(&v, g)| g * elu_grad(v)).collect())
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| libm::tanh(v)).collect()
}

/// Takes the forward *output* `y`, since `tanh' = 1 - y²`.
pub fn tanh_backward(y: &[f64], grad_y: &[f64]) -> Result<Vec<f64>> {
    check_len("tanh_backward", y.len(), grad_y.len())?;
    Ok(y.iter().zip(grad_y).map(|(v, g)| g * (1.0 - v * v)).collect())
}

/// Elementwise nonlinearity applied after an affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Identity,
    Elu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => elu(x),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    // y = e^x - 1 with alpha = 1
                    y + ELU_ALPHA
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}
