//! Central finite-difference gradient oracle.
//!
//! Deliberately independent of the layers' backward passes: it only re-runs
//! a caller-supplied forward/loss closure under parameter perturbations.

use super::GradStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Compares `analytic` against central differences of `loss` for every
/// element of every parameter the `visit_mut` closure exposes.
///
/// Relative error is |fd - an| / max(|fd|, |an|, floor).
pub fn finite_diff_check<S, M, L, V>(
    model: &mut M,
    analytic: &GradStore<S>,
    h: f64,
    floor: f64,
    mut loss: L,
    visit_names: V,
) -> GradCheckReport
where
    S: Scalar,
    L: FnMut(&M) -> f64,
    V: Fn(&mut M, &mut dyn FnMut(&str, &mut [S])),
{
    // Collect the parameter names and sizes first, then perturb one element
    // at a time through the visitor (the model must be restored between
    // evaluations, so we go name-by-name, index-by-index).
    let mut names: Vec<(String, usize)> = Vec::new();
    visit_names(model, &mut |name, p| names.push((name.to_string(), p.len())));

    let mut report =
        GradCheckReport { checked: 0, max_rel_err: 0.0, worst_param: String::new() };
    for (name, len) in &names {
        let Some(an) = analytic.get(name) else {
            panic!("no analytic gradient recorded for {name}");
        };
        assert_eq!(an.len(), *len);
        for idx in 0..*len {
            let set = |m: &mut M, val: Option<f64>| -> f64 {
                let mut orig = 0.0;
                visit_names(m, &mut |n, p| {
                    if n == name {
                        orig = p[idx].as_f64();
                        if let Some(v) = val {
                            p[idx] = S::from_f64(v);
                        }
                    }
                });
                orig
            };
            let orig = set(model, None);
            set(model, Some(orig + h));
            let lp = loss(model);
            set(model, Some(orig - h));
            let lm = loss(model);
            set(model, Some(orig));
            let fd = (lp - lm) / (2.0 * h);
            let a = an[idx].as_f64();
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!("{name}[{idx}]");
            }
        }
    }
    report
}
