//! Deterministic tensor arithmetic, a hand-differentiated perceptron and the
//! counter-based random stream shared by every stochastic component.

mod gradcheck;
mod mlp;
mod optim;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use mlp::{mlp_apply, mlp_grad, Activation, Layer, MlpParams, MlpTrace};
pub use optim::{clip_global_norm, Adam};
pub use rng::RngStream;
pub use tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
