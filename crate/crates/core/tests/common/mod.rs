#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacroscan::autodiff::{Tape, Tensor, Var};
use sacroscan::Result;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Like `random_tensor` but keeps every value at least `gap` away from zero,
/// so ReLU kinks stay out of reach of the finite-difference step.
pub fn random_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// Relative error with the floor used throughout the gradient checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central finite-difference check of every element of every leaf.
///
/// `build` receives a fresh tape with the leaves already bound as trainable
/// parameters and returns the scalar loss. Returns the largest relative
/// error over all elements.
pub fn max_gradient_error<F>(leaves: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars).expect("forward");
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");

    let mut worst = 0.0f64;
    let mut values = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *var);
        for i in 0..values[li].numel() {
            let orig = values[li].data()[i];
            values[li].data_mut()[i] = orig + FD_STEP;
            let up = eval(&values);
            values[li].data_mut()[i] = orig - FD_STEP;
            let down = eval(&values);
            values[li].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Contracts an arbitrary tensor to a scalar through a fixed random
/// projection, so every output element carries a distinct weight.
pub fn project_to_scalar(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n = shape[0];
    let features: usize = shape[1..].iter().product();
    let flat = tape.reshape(y, &[n, features])?;
    let mut r = rng(seed);
    let w = tape.input(random_tensor(&mut r, &[1, features], 1.0));
    let b = tape.input(Tensor::zeros(&[1]));
    let z = tape.linear(flat, w, b)?;
    Ok(tape.sum(z))
}
