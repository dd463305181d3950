use crate::error::Result;

use super::store::ParameterStore;
use super::tape::{Tape, Var};

pub struct GradcheckReport {
    /// (parameter name, max relative error over its elements)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Compare analytic gradients against central finite differences for every
/// trainable element. The builder must construct the loss from store
/// parameters via [`Tape::param`]; relative error is
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradcheck(
    store: &mut ParameterStore<f64>,
    mut build: impl FnMut(&ParameterStore<f64>, &mut Tape<f64>) -> Result<Var>,
    fd_step: f64,
) -> Result<GradcheckReport> {
    // analytic pass
    store.zero_grads();
    let mut tape = Tape::new(0, false);
    let loss = build(store, &mut tape)?;
    tape.backward(loss)?;
    tape.collect_grads(store)?;

    let names: Vec<String> = store
        .names()
        .map(|s| s.to_string())
        .filter(|n| store.is_trainable(n).unwrap_or(false))
        .collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel_err: f64 = 0.0;
    for name in names {
        let n = store.value(&name)?.numel();
        let analytic = store
            .grad(&name)?
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = orig + fd_step;
            let mut t = Tape::new(0, false);
            let lp = build(store, &mut t)?;
            let fp = t.value(lp).item();
            store.value_mut(&name)?.data_mut()[i] = orig - fd_step;
            let mut t = Tape::new(0, false);
            let lm = build(store, &mut t)?;
            let fm = t.value(lm).item();
            store.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * fd_step);
            let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
        max_rel_err = max_rel_err.max(worst);
        per_param.push((name, worst));
    }
    store.zero_grads();
    Ok(GradcheckReport {
        per_param,
        max_rel_err,
    })
}
