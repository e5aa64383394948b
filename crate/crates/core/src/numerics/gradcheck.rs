use crate::error::{Error, Result};

use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Outcome of a finite-difference sweep over an entire parameter store.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter holding the worst coordinate and its flat index.
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} scalars (worst: {}[{}])",
            self.max_rel_err, self.checked, self.worst_param, self.worst_index
        )
    }
}

/// Compares analytic gradients against central finite differences for every
/// scalar parameter in `store`.
///
/// `build_loss` receives a fresh tape and the bound parameter leaves (in
/// registration order) and must deterministically construct the scalar loss.
/// Relative error uses an absolute floor of 1e-8. Double precision only.
pub fn grad_check(
    store: &ParamStore<f64>,
    eps: f64,
    mut build_loss: impl FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    type BuildLoss<'b> = dyn FnMut(&mut Tape<f64>, &[Var]) -> Result<Var> + 'b;
    let eval = |s: &ParamStore<f64>, build: &mut BuildLoss| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..s.len())
            .map(|i| tape.leaf(s.value(ParamId(i)).clone(), false))
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    // Determinism gate: the same parameters must give bit-identical losses.
    let l0 = eval(store, &mut build_loss)?;
    let l1 = eval(store, &mut build_loss)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::NonDeterministic { a: l0, b: l1 });
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let loss = build_loss(&mut tape, &vars)?;
    tape.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(ParamId(i)).shape().to_vec()))
        })
        .collect();

    let mut scratch = store.cast::<f64>();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    #[allow(clippy::needless_range_loop)]
    for i in 0..store.len() {
        let id = ParamId(i);
        for j in 0..store.value(id).numel() {
            let orig = scratch.value(id).data()[j];
            scratch.value_mut(id).data_mut()[j] = orig + eps;
            let lp = eval(&scratch, &mut build_loss)?;
            scratch.value_mut(id).data_mut()[j] = orig - eps;
            let lm = eval(&scratch, &mut build_loss)?;
            scratch.value_mut(id).data_mut()[j] = orig;

            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Init;

    #[test]
    fn quadratic_loss_gradient_is_exact() {
        let mut store = ParamStore::<f64>::new(0);
        let id = store.register("head.theta", vec![1], Init::Zeros);
        *store.value_mut(id) = Tensor::scalar(3.0);
        let report = grad_check(&store, 1e-5, |tape, vars| {
            let sq = tape.mul(vars[0], vars[0]);
            Ok(tape.scale(sq, 0.5))
        })
        .unwrap();
        // d(theta^2/2) at 3 is 3; polynomials are exact under central diffs.
        assert!(report.max_rel_err < 1e-9, "{report}");
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut store = ParamStore::<f64>::new(0);
        store.register("head.theta", vec![1], Init::Ones);
        let mut flip = 0u32;
        let err = grad_check(&store, 1e-5, |tape, vars| {
            flip += 1;
            Ok(tape.scale(vars[0], 1.0 + f64::from(flip)))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }
}
