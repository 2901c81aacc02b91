//! Central finite-difference gradient checking.

use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Compares tape gradients with central differences for every parameter.
///
/// `f` must build a scalar loss from the bound parameters and be a pure
/// function of their values. Returns, per parameter tensor,
/// `‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂)`, falling back to the
/// absolute difference when both norms are below `1e-10`.
pub fn check_gradients<F>(params: &mut [Tensor<f64>], h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |params: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut errors = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut numeric = vec![0.0; params[pi].len()];
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            params[pi].data_mut()[j] = orig + h;
            let up = eval(params)?;
            params[pi].data_mut()[j] = orig - h;
            let down = eval(params)?;
            params[pi].data_mut()[j] = orig;
            numeric[j] = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(&analytic[pi], &numeric));
    }
    Ok(errors)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}
