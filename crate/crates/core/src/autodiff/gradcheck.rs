//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compares the analytic gradient of `f` against central finite
/// differences at every coordinate. Returns the worst relative error under
/// `max(|analytic|, |numeric|, 1e-8)` normalization.
///
/// `f` builds the scalar loss on a fresh tape from parameter nodes in the
/// same order as `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    grad_check_sampled(f, params, epsilon, usize::MAX)
}

/// Like [`grad_check`] but probing at most `max_coords` evenly spaced
/// coordinates per parameter, for large tensors.
pub fn grad_check_sampled<F>(f: F, params: &[Tensor], epsilon: f64, max_coords: usize) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    assert!(epsilon > 0.0);
    assert!(max_coords > 0);
    // One analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars);
    assert!(
        tape.value(loss).is_scalar(),
        "grad_check requires a scalar-valued function"
    );
    tape.backward(loss).expect("backward failed in grad_check");
    let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |target: usize, coord: usize, delta: f64| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let mut t = q.clone();
                if j == target {
                    t.data_mut()[coord] += delta;
                }
                tape.param(t)
            })
            .collect();
        let loss = f(&tape, &vars);
        tape.value(loss).data()[0]
    };

    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let stride = n.div_ceil(max_coords.min(n)).max(1);
        let mut coord = 0;
        while coord < n {
            let numeric = (eval(pi, coord, epsilon) - eval(pi, coord, -epsilon)) / (2.0 * epsilon);
            let analytic = grads[pi].data()[coord];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
            coord += stride;
        }
    }
    worst
}
