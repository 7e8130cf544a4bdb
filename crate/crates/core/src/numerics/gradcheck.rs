use super::Real;
use crate::{Error, Result};
use alloc::format;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `loss`.
///
/// `coords` restricts the check to a subset of coordinates (useful for large
/// parameter vectors); `None` checks every coordinate. The relative error of
/// a coordinate is `|a - fd| / max(|a|, |fd|, 1e-8)`.
pub fn grad_check<F, L>(
    mut loss: L,
    params: &[F],
    analytic: &[F],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Real,
    L: FnMut(&[F]) -> Result<F>,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape {
            expected: params.len(),
            found: analytic.len(),
        });
    }
    if !(1e-5..=1e-3).contains(&h) {
        return Err(Error::Domain("finite-difference step must lie in [1e-5, 1e-3]"));
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    let all: alloc::vec::Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };

    for &i in coords {
        let original = work[i];
        work[i] = original + F::of(h);
        let plus = loss(&work)?;
        work[i] = original - F::of(h);
        let minus = loss(&work)?;
        work[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        let fd = (plus.f64() - minus.f64()) / (2.0 * h);
        let a = analytic[i].f64();
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function() {
        let r = grad_check(|x: &[f64]| Ok(x[0] * x[0]), &[3.0], &[6.0], 1e-4, None).unwrap();
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = grad_check(|x: &[f64]| Ok(x[0] * x[0]), &[3.0], &[12.0], 1e-4, None).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = grad_check(|_: &[f64]| Ok(f64::NAN), &[1.0], &[0.0], 1e-4, None);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        assert!(grad_check(|x: &[f64]| Ok(x[0]), &[1.0], &[1.0], 1e-2, None).is_err());
    }
}
