//! Cubic B-spline basis on a clamped uniform break grid.
//!
//! The basis spans `[0, t_max]` with `dim` functions over `dim - 3` equal
//! intervals; the boundary breaks carry multiplicity four. Cubic B-splines
//! reproduce polynomials up to degree three, so affine and quadratic
//! functions have exact coefficient representations (used by the penalty
//! tests through [`SplineBasis::greville`] and
//! [`SplineBasis::quadratic_coefficients`]).

use crate::error::{Error, Result};

const DEGREE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SplineBasis {
    breaks: Vec<f64>,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Equally spaced breaks on `[0, t_max]` with `dim >= 4` basis functions.
    pub fn uniform(t_max: f64, dim: usize) -> Result<SplineBasis> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::Domain(format!(
                "spline range must be positive, got {t_max}"
            )));
        }
        if dim < 4 {
            return Err(Error::Domain(format!(
                "need at least 4 basis functions, got {dim}"
            )));
        }
        let intervals = dim - DEGREE;
        let breaks: Vec<f64> = (0..=intervals)
            .map(|i| t_max * i as f64 / intervals as f64)
            .collect();
        SplineBasis::from_breaks(breaks)
    }

    /// Builds the clamped knot vector from strictly increasing breaks.
    pub fn from_breaks(breaks: Vec<f64>) -> Result<SplineBasis> {
        if breaks.len() < 2 {
            return Err(Error::Domain("need at least 2 breakpoints".into()));
        }
        for w in breaks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(format!(
                    "breakpoints must be strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let mut knots = Vec::with_capacity(breaks.len() + 2 * DEGREE);
        knots.extend(std::iter::repeat(breaks[0]).take(DEGREE));
        knots.extend_from_slice(&breaks);
        knots.extend(std::iter::repeat(*breaks.last().unwrap()).take(DEGREE));
        Ok(SplineBasis { breaks, knots })
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.breaks.len() - 1 + DEGREE
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn t_max(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    /// Index of the break interval containing `x` (the last interval is
    /// closed on the right).
    fn interval_of(&self, x: f64) -> Result<usize> {
        if !(x >= self.breaks[0] && x <= self.t_max()) {
            return Err(Error::Domain(format!(
                "{x} outside the spline range [{}, {}]",
                self.breaks[0],
                self.t_max()
            )));
        }
        let k = self
            .breaks
            .partition_point(|&b| b <= x)
            .saturating_sub(1)
            .min(self.breaks.len() - 2);
        Ok(k)
    }

    /// The four nonzero cubic basis values at `x`: returns the first nonzero
    /// basis index and the values in order (Cox-de Boor recurrence).
    pub fn nonzero_values(&self, x: f64) -> Result<(usize, [f64; 4])> {
        let k = self.interval_of(x)?;
        let span = k + DEGREE; // knots[span] <= x < knots[span + 1]
        let t = &self.knots;
        let mut values = [0.0f64; 4];
        values[0] = 1.0;
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        for r in 1..=DEGREE {
            left[r] = x - t[span + 1 - r];
            right[r] = t[span + r] - x;
            let mut saved = 0.0;
            for q in 0..r {
                let tmp = values[q] / (right[q + 1] + left[r - q]);
                values[q] = saved + right[q + 1] * tmp;
                saved = left[r - q] * tmp;
            }
            values[r] = saved;
        }
        Ok((k, values))
    }

    /// The four second derivatives matching [`SplineBasis::nonzero_values`].
    pub fn nonzero_second_derivs(&self, x: f64) -> Result<(usize, [f64; 4])> {
        let k = self.interval_of(x)?;
        let span = k + DEGREE;
        let t = &self.knots;
        // degree-1 hat values: nonzero for indices span-1 and span
        let width = t[span + 1] - t[span];
        let b1 = |i: isize| -> f64 {
            if i == span as isize - 1 {
                (t[span + 1] - x) / width
            } else if i == span as isize {
                (x - t[span]) / width
            } else {
                0.0
            }
        };
        let safe = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
        let mut derivs = [0.0f64; 4];
        for (q, d) in derivs.iter_mut().enumerate() {
            let i = span - DEGREE + q; // cubic basis index
            let (t_i, t_i1, t_i2, t_i3, t_i4) =
                (t[i], t[i + 1], t[i + 2], t[i + 3], t[i + 4]);
            let term1 = safe(b1(i as isize), (t_i2 - t_i) * (t_i3 - t_i));
            let mid = safe(b1(i as isize + 1), t_i3 - t_i1);
            let term2 = if mid == 0.0 {
                0.0
            } else {
                mid * (safe(1.0, t_i3 - t_i) + safe(1.0, t_i4 - t_i1))
            };
            let term3 = safe(b1(i as isize + 2), (t_i4 - t_i2) * (t_i4 - t_i1));
            *d = 6.0 * (term1 - term2 + term3);
        }
        Ok((k, derivs))
    }

    /// Evaluates the spline with the given coefficients at `x`.
    pub fn value(&self, coefficients: &[f64], x: f64) -> Result<f64> {
        if coefficients.len() != self.dim() {
            return Err(Error::Domain(format!(
                "{} coefficients for a basis of dimension {}",
                coefficients.len(),
                self.dim()
            )));
        }
        let (k, values) = self.nonzero_values(x)?;
        Ok((0..4).map(|q| coefficients[k + q] * values[q]).sum())
    }

    /// Greville abscissa of basis function `i`; the coefficients `c0 + c1 *
    /// greville(i)` represent the affine function `c0 + c1 * u` exactly.
    pub fn greville(&self, i: usize) -> f64 {
        (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0
    }

    /// Coefficients representing `u^2` exactly (symmetric blossom of the
    /// quadratic monomial).
    pub fn quadratic_coefficients(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let (a, b, c) = (self.knots[i + 1], self.knots[i + 2], self.knots[i + 3]);
                (a * b + a * c + b * c) / 3.0
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn partition_of_unity() {
        let basis = SplineBasis::uniform(5.0, 9).unwrap();
        for i in 0..=100 {
            let x = 5.0 * i as f64 / 100.0;
            let (_, v) = basis.nonzero_values(x).unwrap();
            assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn affine_functions_are_reproduced() {
        let basis = SplineBasis::uniform(3.0, 7).unwrap();
        let coefs: Vec<f64> = (0..basis.dim()).map(|i| 2.0 + 3.0 * basis.greville(i)).collect();
        for i in 0..=60 {
            let x = 3.0 * i as f64 / 60.0;
            assert_abs_diff_eq!(basis.value(&coefs, x).unwrap(), 2.0 + 3.0 * x, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadratic_monomial_is_reproduced() {
        let basis = SplineBasis::uniform(2.0, 8).unwrap();
        let coefs = basis.quadratic_coefficients();
        for i in 0..=40 {
            let x = 2.0 * i as f64 / 40.0;
            assert_abs_diff_eq!(basis.value(&coefs, x).unwrap(), x * x, epsilon = 1e-10);
        }
    }

    #[test]
    fn second_derivatives_match_a_finite_difference() {
        let basis = SplineBasis::uniform(4.0, 10).unwrap();
        let m = basis.dim();
        let coefs: Vec<f64> = (0..m).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let h = 1e-5;
        for i in 1..40 {
            let x = 4.0 * i as f64 / 40.0 + 0.013; // keep away from breaks
            if x + h > 4.0 {
                continue;
            }
            let (k, d2) = basis.nonzero_second_derivs(x).unwrap();
            let analytic: f64 = (0..4).map(|q| coefs[k + q] * d2[q]).sum();
            let f = |x: f64| basis.value(&coefs, x).unwrap();
            let fd = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            assert!(
                (analytic - fd).abs() < 1e-4 * analytic.abs().max(1.0),
                "x {x}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SplineBasis::uniform(0.0, 8).is_err());
        assert!(SplineBasis::uniform(1.0, 3).is_err());
        assert!(SplineBasis::from_breaks(vec![0.0, 1.0, 1.0, 2.0]).is_err());
    }
}
