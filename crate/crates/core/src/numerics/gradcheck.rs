//! Central finite-difference verification of tape gradients.
//!
//! This is the independent oracle for every differentiable path in the
//! model: build the loss twice per perturbed element and compare the slope
//! against what the tape reports.

use crate::error::{Error, Result};
use crate::numerics::optim::ParamStore;
use crate::numerics::tape::{Tape, TensorId};
use crate::numerics::tensor::Tensor;

/// Loss builders take the current parameter values and record the loss on
/// the given tape, returning the scalar loss node.
pub trait LossFn: Fn(&ParamStore, &mut Tape) -> Result<TensorId> {}
impl<F: Fn(&ParamStore, &mut Tape) -> Result<TensorId>> LossFn for F {}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn eval_loss(store: &ParamStore, f: &impl LossFn) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    let value = v.item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Gradients from one tape forward/backward pass, in store order.
pub fn tape_gradients(store: &mut ParamStore, f: &impl LossFn) -> Result<Vec<Tensor>> {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("loss is not finite".into()));
    }
    tape.backward(loss)?;
    tape.accumulate_param_grads(store);
    Ok(store.iter().map(|p| p.gradient.clone()).collect())
}

/// Central-difference gradients with step `h`, in store order.
pub fn fd_gradients(store: &mut ParamStore, f: &impl LossFn, h: f64) -> Result<Vec<Tensor>> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let n_params = store.len();
    let mut grads = Vec::with_capacity(n_params);
    for pi in 0..n_params {
        let numel = store.get_by_index(pi).value.numel();
        let mut g = Tensor::zeros(store.get_by_index(pi).value.shape());
        for e in 0..numel {
            let orig = store.get_by_index(pi).value.data()[e];
            store.get_by_index_mut(pi).value.data_mut()[e] = orig + h;
            let plus = eval_loss(store, f)?;
            store.get_by_index_mut(pi).value.data_mut()[e] = orig - h;
            let minus = eval_loss(store, f)?;
            store.get_by_index_mut(pi).value.data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Relative error between two gradient sets:
/// `|a - n| / max(|a|, |n|, 1)` per element, maxed per parameter.
pub fn compare_gradients(
    names: &[String],
    analytic: &[Tensor],
    numeric: &[Tensor],
    tol: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut max_rel = 0.0f64;
    for ((name, a), n) in names.iter().zip(analytic).zip(numeric) {
        let mut worst = 0.0f64;
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1.0);
            worst = worst.max((av - nv).abs() / denom);
        }
        max_rel = max_rel.max(worst);
        per_param.push((name.clone(), worst));
    }
    GradCheckReport {
        per_param,
        max_rel_err: max_rel,
        tol,
    }
}

/// Run the full check: tape gradients vs central differences at step `h`,
/// passing iff the max relative error is within `tol`.
pub fn gradient_check(
    store: &mut ParamStore,
    f: impl LossFn,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = tape_gradients(store, &f)?;
    let numeric = fd_gradients(store, &f, h)?;
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    Ok(compare_gradients(&names, &analytic, &numeric, tol))
}
