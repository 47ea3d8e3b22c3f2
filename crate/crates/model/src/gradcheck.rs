//! Central finite-difference comparison of analytic gradients.

use nets_core::error::Result;

use crate::model::Nets;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − n| / max(|a|, |n|, 1e-6)` over all entries.
    pub max_relative_error: f64,
    /// Parameter and entry where it occurred.
    pub worst: (String, usize),
    pub entries: usize,
}

/// Perturbs every parameter entry by `±step` and compares
/// `(L(θ+h) − L(θ−h)) / 2h` with the analytic gradient.
pub fn check(
    model: &Nets,
    step: f64,
    loss: &dyn Fn(&Nets) -> Result<(f64, Vec<Matrix>)>,
) -> Result<GradCheck> {
    let (_, analytic) = loss(model)?;
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst: (String::new(), 0),
        entries: 0,
    };
    for p in 0..model.params.values.len() {
        for i in 0..model.params.values[p].len() {
            let orig = model.params.values[p].data[i];
            probe.params.values[p].data[i] = orig + step;
            let up = loss(&probe)?.0;
            probe.params.values[p].data[i] = orig - step;
            let down = loss(&probe)?.0;
            probe.params.values[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p].data[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if err > out.max_relative_error {
                out.max_relative_error = err;
                out.worst = (model.params.names[p].clone(), i);
            }
            out.entries += 1;
        }
    }
    Ok(out)
}
