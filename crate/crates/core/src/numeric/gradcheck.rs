//! Central-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Per-parameter comparison of analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct ParamDeviation {
    pub name: String,
    /// Largest relative deviation over the parameter's entries.
    pub max_rel_dev: f64,
    /// Largest absolute analytic gradient entry.
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub eps: f64,
    pub rtol: f64,
    pub params: Vec<ParamDeviation>,
}

impl GradCheckReport {
    pub fn max_deviation(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_dev).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_deviation() <= self.rtol
    }

    pub fn get(&self, name: &str) -> Option<&ParamDeviation> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Gradients smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Relative deviation between two gradient entries with an absolute floor.
pub fn relative_deviation(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every parameter in `store` (or only those listed in `only`).
///
/// `f` builds a scalar on a fresh tape from the store's current values.
pub fn finite_diff_check<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    rtol: f64,
    only: Option<&[&str]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("finite_diff_check needs eps > 0"));
    }
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    tape.backward(root)?;
    let mut analytic = store.clone();
    analytic.zero_grads();
    analytic.accumulate_grads(&tape)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = f(&mut t, s)?;
        let v = t.value(r).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_diff_check objective".into()));
        }
        Ok(v)
    };

    let names: Vec<String> = store
        .names()
        .filter(|n| only.is_none_or(|list| list.contains(n)))
        .map(str::to_string)
        .collect();
    let mut probe = store.clone();
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let grad = analytic.grad(&name)?.clone();
        let mut worst: f64 = 0.0;
        for k in 0..grad.len() {
            let original = probe.value(&name)?.as_slice()[k];
            probe.value_mut(&name)?.as_mut_slice()[k] = original + eps;
            let plus = eval(&probe)?;
            probe.value_mut(&name)?.as_mut_slice()[k] = original - eps;
            let minus = eval(&probe)?;
            probe.value_mut(&name)?.as_mut_slice()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_deviation(grad.as_slice()[k], numeric));
        }
        let max_abs_grad = grad.as_slice().iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        params.push(ParamDeviation {
            name,
            max_rel_dev: worst,
            max_abs_grad,
        });
    }
    Ok(GradCheckReport { eps, rtol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::DenseMatrix;

    #[test]
    fn linear_objective_is_exact() {
        let mut store = ParamStore::new(0);
        store
            .insert("w", DenseMatrix::from_rows(&[vec![0.5, -0.25], vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let eps = 2f64.powi(-17);
        let report = finite_diff_check(
            &store,
            |t, s| {
                let w = t.param(s, "w")?;
                t.sum(w)
            },
            eps,
            1e-4,
            None,
        )
        .unwrap();
        assert_eq!(report.max_deviation(), 0.0);
    }

    #[test]
    fn tanh_layer_within_tolerance() {
        let mut store = ParamStore::new(42);
        store.register("w", 3, 4).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.9, 0.2, -0.4]]).unwrap();
        let report = finite_diff_check(
            &store,
            |t, s| {
                let w = t.param(s, "w")?;
                let xv = t.constant(x.clone());
                let h = t.matmul(xv, w)?;
                let a = t.tanh(h)?;
                t.sum(a)
            },
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut store = ParamStore::new(5);
        store.register("used", 2, 2).unwrap();
        store.register("unused", 2, 2).unwrap();
        let report = finite_diff_check(
            &store,
            |t, s| {
                let w = t.param(s, "used")?;
                let sq = t.mul(w, w)?;
                t.sum(sq)
            },
            1e-5,
            1e-4,
            None,
        )
        .unwrap();
        let unused = report.get("unused").unwrap();
        assert_eq!(unused.max_abs_grad, 0.0);
        assert_eq!(unused.max_rel_dev, 0.0);
    }

    #[test]
    fn rejects_bad_eps() {
        let store = ParamStore::new(0);
        let res = finite_diff_check(&store, |t, _| Ok(t.constant(DenseMatrix::zeros(1, 1))), 0.0, 1e-4, None);
        assert!(res.is_err());
    }
}
