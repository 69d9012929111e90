//! Central finite-difference checks for reverse-mode gradients.

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is ~0 are compared absolutely against `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate attaining it.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Central difference of `f` along `direction` at `x`.
pub fn directional_derivative(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    direction: &[f64],
    step: f64,
) -> f64 {
    let plus: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + step * d).collect();
    let minus: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a - step * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Compares `analytic` to a per-coordinate central difference of `f`.
/// `coords` restricts the check to a subset (all coordinates when `None`).
pub fn check_coordinates(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    step: f64,
    floor: f64,
) -> FdReport {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric, floor);
        if err > report.max_rel_error || !err.is_finite() {
            report = FdReport {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_checks_out() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let x = [1.5, -2.0];
        let report = check_coordinates(&mut f, &x, &[3.0, 3.0], None, 1e-5, 1e-6);
        assert!(report.passes(1e-8), "{report:?}");
        let wrong = check_coordinates(&mut f, &x, &[3.0, 2.0], None, 1e-5, 1e-6);
        assert_eq!(wrong.worst_index, 1);
        assert!(!wrong.passes(1e-4));
    }

    #[test]
    fn directional_matches_dot_product() {
        let mut f = |x: &[f64]| x[0].sin() * x[1];
        let x = [0.4, 2.0];
        let d = [0.6, -0.8];
        let numeric = directional_derivative(&mut f, &x, &d, 1e-5);
        let analytic = 0.4f64.cos() * 2.0 * 0.6 + 0.4f64.sin() * -0.8;
        assert!(relative_error(analytic, numeric, 1e-8) < 1e-8);
    }
}
