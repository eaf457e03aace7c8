#![allow(dead_code)]

use docbinformer::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences of step `h`. Returns the relative error per input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Vec<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(v)).collect();

    let eval = |inputs: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).unwrap().value().item().unwrap()
    };
    let mut errors = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        let mut work = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + h;
            let up = eval(&work);
            work[i].data_mut()[j] = x - h;
            let down = eval(&work);
            work[i].data_mut()[j] = x;
            *slot = (up - down) / (2.0 * h);
        }
        errors.push(rel_err(analytic[i].data(), &numeric));
    }
    errors
}

/// `sum(y * w)` for a fixed pseudo-random `w`, turning any output into a
/// scalar whose gradient exercises every output element.
pub fn probe_sum(tape: &Tape<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let w = tape.constant(random(y.shape(), 1.0, &mut rng(seed)));
    let prod = tape.mul(y, &w)?;
    tape.sum(&prod)
}
