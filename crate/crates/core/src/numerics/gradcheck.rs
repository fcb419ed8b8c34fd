use super::Parameterized;
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// The error per coordinate is `|analytic − numeric| / max(1, |numeric|)`.
/// `coords` restricts the check to a subset of coordinates; `None` checks all.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("point has {} coordinates, gradient has {}", point.len(), analytic.len()),
        ));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst_index = i;
            }
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks every trainable parameter tensor of `model`.
///
/// `backward` must zero and then fill the gradients at the current values;
/// `loss` evaluates the scalar objective. Returns one report per parameter,
/// in visiting order.
pub fn check_param_gradients<M, B, L>(
    model: &M,
    mut backward: B,
    mut loss: L,
    eps: f64,
) -> Result<Vec<(String, GradCheckReport)>>
where
    M: Parameterized + Clone,
    B: FnMut(&mut M) -> Result<()>,
    L: FnMut(&M) -> Result<f64>,
{
    let mut with_grads = model.clone();
    backward(&mut with_grads)?;
    let mut targets = Vec::new();
    with_grads.visit_params("", &mut |name, p| {
        if p.trainable {
            targets.push((name.to_string(), p.value.data().to_vec(), p.grad.data().to_vec()));
        }
    });
    let mut reports = Vec::with_capacity(targets.len());
    for (name, point, analytic) in targets {
        let mut probe = model.clone();
        let mut failure = None;
        let report = finite_diff_check(
            |x| {
                probe.visit_params_mut("", &mut |n, p| {
                    if n == name {
                        p.value.data_mut().copy_from_slice(x);
                    }
                });
                loss(&probe).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    f64::NAN
                })
            },
            &point,
            &analytic,
            eps,
            None,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        reports.push((name, report?));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function() {
        let r = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5, None).unwrap();
        assert!(r.max_rel_error <= 1e-8);
    }

    #[test]
    fn detects_scaled_gradient() {
        let r = finite_diff_check(
            |x| x[0] * x[0] + x[1].sin(),
            &[3.0, 0.4],
            &[12.0, 2.0 * 0.4f64.cos()],
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error >= 0.4);
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let err = finite_diff_check(
            |x| if x[1] > 0.5 { f64::NAN } else { x[0] },
            &[0.0, 0.5],
            &[1.0, 0.0],
            1e-3,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }
}
