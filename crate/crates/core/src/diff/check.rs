//! Central-difference gradient verification for any scalar objective over
//! a [`ParamVector`].

use super::params::ParamVector;

/// Outcome of a finite-difference sweep: the largest relative error seen
/// and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_segment: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Sweeps every coordinate of `params`, comparing `analytic_grad` against
/// `(f(p + h e_i) - f(p - h e_i)) / 2h` with relative error
/// `|fd - an| / max(|fd| + |an|, 1e-8)`.
pub fn grad_check<F>(
    params: &ParamVector,
    analytic_grad: &ParamVector,
    step: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamVector) -> f64,
{
    assert_eq!(params.len(), analytic_grad.len(), "grad_check shape mismatch");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_segment: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + step;
        let plus = loss(&probe);
        probe.values_mut()[i] = orig - step;
        let minus = loss(&probe);
        probe.values_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let an = analytic_grad.values()[i];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_segment = params.segment_of(i).to_string();
            report.analytic = an;
            report.numeric = fd;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_params() -> ParamVector {
        let mut p = ParamVector::zeros(&[("a", vec![2]), ("b", vec![1])]);
        p.values_mut().copy_from_slice(&[1.5, -0.5, 2.0]);
        p
    }

    // L = a0^2 + 3*a1*b0 + sin(b0)
    fn quad_loss(p: &ParamVector) -> f64 {
        let v = p.values();
        v[0] * v[0] + 3.0 * v[1] * v[2] + v[2].sin()
    }

    fn quad_grad(p: &ParamVector) -> ParamVector {
        let v = p.values();
        let mut g = p.zeros_like();
        g.values_mut().copy_from_slice(&[2.0 * v[0], 3.0 * v[2], 3.0 * v[1] + v[2].cos()]);
        g
    }

    #[test]
    fn correct_gradient_passes() {
        let p = quad_params();
        let g = quad_grad(&p);
        let report = grad_check(&p, &g, 1e-5, quad_loss);
        assert!(report.passes(1e-6), "max rel {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_caught_with_location() {
        let p = quad_params();
        let mut g = quad_grad(&p);
        g.get_mut("b")[0] += 0.5;
        let report = grad_check(&p, &g, 1e-5, quad_loss);
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst_segment, "b");
        assert_eq!(report.worst_index, 2);
    }
}
