//! Central finite-difference check of tape gradients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is |a - n| / max(|a|, |n|, floor).
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares the tape gradient of the scalar built by `f` against central differences
/// for every entry of every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore<f64>, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    let base = tape.scalar(loss);
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(loss);

    let mut work = store.clone();
    let mut params = Vec::new();
    let mut overall = 0.0f64;
    for id in store.ids() {
        let name = store.name(id).to_string();
        let n = store.value(id).len();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; n],
        };
        let mut numeric = Vec::with_capacity(n);
        for k in 0..n {
            let orig = work.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + opts.step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - opts.step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective while perturbing {name}[{k}]")));
            }
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut worst = 0;
        for (k, (&a, &nu)) in analytic.iter().zip(&numeric).enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of {name}[{k}]")));
            }
            let abs = (a - nu).abs();
            let rel = abs / a.abs().max(nu.abs()).max(opts.floor);
            if rel > max_rel {
                max_rel = rel;
                worst = k;
            }
            max_abs = max_abs.max(abs);
        }
        overall = overall.max(max_rel);
        params.push(ParamCheck {
            name,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            worst_index: worst,
            analytic,
            numeric,
        });
    }
    Ok(GradCheckReport {
        params,
        tolerance: opts.tolerance,
        max_rel_error: overall,
        passed: overall < opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient_matches() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row_vector(&[1.0, 2.0]));
        let report = grad_check(
            &store,
            |t| {
                let v = t.param(x);
                let sq = t.mul(v, v)?;
                Ok(t.sum_all(sq))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        let p = &report.params[0];
        assert_eq!(p.analytic, vec![2.0, 4.0]);
        for (a, n) in p.analytic.iter().zip(&p.numeric) {
            assert!((a - n).abs() < 1e-8);
        }
        assert!(report.passed);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row_vector(&[0.3, -0.7, 1.1]));
        let report = grad_check(
            &store,
            |t| {
                let _ = t.param(x);
                Ok(t.constant(Tensor::filled(1, 1, 3.0)))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.params[0].analytic.iter().all(|&g| g == 0.0));
        assert!(report.params[0].numeric.iter().all(|&g| g == 0.0));
        assert!(report.passed);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row_vector(&[-1.0]));
        let err = grad_check(
            &store,
            |t| {
                let v = t.param(x);
                let p = t.powf(v, 0.5);
                Ok(t.sum_all(p))
            },
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
