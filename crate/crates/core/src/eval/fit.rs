use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least-squares polynomial with a constant term, coefficients in
/// ascending power order.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coeffs: Vec<f64>,
    /// Euclidean norm of the residual vector.
    pub residual: f64,
}

impl FitResult {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Ordinary least squares on the Vandermonde system, solved by QR.
pub fn least_squares_fit(points: &[(f64, f64)], degree: usize) -> Result<FitResult> {
    let n = points.len();
    let cols = degree + 1;
    if n < cols {
        return Err(Error::invalid(format!(
            "degree-{degree} fit needs at least {cols} points, got {n}"
        )));
    }
    if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }
    let vander = DMatrix::from_fn(n, cols, |r, c| points[r].0.powi(c as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let qr = vander.clone().qr();
    let r = qr.r();
    let scale = (0..cols).map(|i| vander.column(i).norm()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(1.0) * n as f64;
    if (0..cols).any(|i| r[(i, i)].abs() <= tol) {
        return Err(Error::invalid(format!(
            "rank-deficient degree-{degree} fit (too few distinct time values)"
        )));
    }
    let qty = qr.q().transpose() * &y;
    let coeffs = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::invalid("singular least-squares system"))?;
    let residual = (&vander * &coeffs - &y).norm();
    Ok(FitResult {
        coeffs: coeffs.iter().copied().collect(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|t| (t as f64, 2.0 * t as f64)).collect();
        let f = least_squares_fit(&pts, 1).unwrap();
        assert!(f.coeffs[0].abs() < 1e-12 && (f.coeffs[1] - 2.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn interpolates_parabola() {
        let pts = [(1.0, 1.0), (2.0, 4.0), (3.0, 9.0)];
        let f = least_squares_fit(&pts, 2).unwrap();
        for (c, e) in f.coeffs.iter().zip([0.0, 0.0, 1.0]) {
            assert!((c - e).abs() < 1e-10, "{:?}", f.coeffs);
        }
        assert!((f.eval(4.0) - 16.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        assert!(least_squares_fit(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)], 1).is_err());
        assert!(least_squares_fit(&[(1.0, 1.0), (2.0, 2.0)], 2).is_err());
    }
}
