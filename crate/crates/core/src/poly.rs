//! Polynomial trajectories without a constant term, their positional
//! variance and the axis-wise Gaussian negative log-likelihood.
//!
//! Time `t` is measured in frames from the current step, so every
//! trajectory passes through the origin at `t = 0`.

use std::f64::consts::PI;

use crate::anchoring::AnchorSchedule;
use crate::error::{Error, Result};

/// Lower bound added to every variance before it enters the likelihood.
pub const VAR_FLOOR: f64 = 1e-6;

fn ensure_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Coefficients `a_1..a_dx` (lateral) and `b_1..b_dy` (longitudinal) with
/// independent per-coefficient standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyTrajectory {
    a: Vec<f64>,
    b: Vec<f64>,
    sigma_a: Vec<f64>,
    sigma_b: Vec<f64>,
}

impl PolyTrajectory {
    pub fn new(a: Vec<f64>, b: Vec<f64>, sigma_a: Vec<f64>, sigma_b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::invalid("polynomial degree must be >= 1 on both axes"));
        }
        if a.len() != sigma_a.len() || b.len() != sigma_b.len() {
            return Err(Error::invalid(format!(
                "coefficient/sigma count mismatch: a {} vs {}, b {} vs {}",
                a.len(),
                sigma_a.len(),
                b.len(),
                sigma_b.len()
            )));
        }
        for &v in a.iter().chain(&b).chain(&sigma_a).chain(&sigma_b) {
            ensure_finite("coefficient", v)?;
        }
        if sigma_a.iter().chain(&sigma_b).any(|&s| s < 0.0) {
            return Err(Error::invalid("standard deviations must be >= 0"));
        }
        Ok(Self { a, b, sigma_a, sigma_b })
    }

    /// Noise-free trajectory.
    pub fn exact(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let (za, zb) = (vec![0.0; a.len()], vec![0.0; b.len()]);
        Self::new(a, b, za, zb)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn sigma_a(&self) -> &[f64] {
        &self.sigma_a
    }

    pub fn sigma_b(&self) -> &[f64] {
        &self.sigma_b
    }

    pub fn degree_x(&self) -> usize {
        self.a.len()
    }

    pub fn degree_y(&self) -> usize {
        self.b.len()
    }

    /// Mean position and variance at a (possibly fractional) frame offset.
    pub fn at(&self, t: f64) -> Result<PointPrediction> {
        Ok(PointPrediction {
            t,
            x: eval_poly(&self.a, t)?,
            y: eval_poly(&self.b, t)?,
            var_x: propagate_variance(&self.sigma_a, t)?,
            var_y: propagate_variance(&self.sigma_b, t)?,
        })
    }
}

/// Mean and variance of a predicted position at offset `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrediction {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub var_x: f64,
    pub var_y: f64,
}

/// `sum_j coeffs[j-1] * t^j` for `j = 1..=d`.
pub fn eval_poly(coeffs: &[f64], t: f64) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::invalid("polynomial needs at least one coefficient"));
    }
    ensure_finite("t", t)?;
    if t < 0.0 {
        return Err(Error::invalid(format!("negative time offset {t}")));
    }
    let mut power = 1.0;
    let mut acc = 0.0;
    for &c in coeffs {
        ensure_finite("coefficient", c)?;
        power *= t;
        acc += c * power;
    }
    ensure_finite("polynomial value", acc)?;
    Ok(acc)
}

/// Variance of the polynomial value at `t` under independent coefficient
/// noise: `sum_j sigma_j^2 * (t^j)^2`.
pub fn propagate_variance(sigma: &[f64], t: f64) -> Result<f64> {
    ensure_finite("t", t)?;
    let mut power = 1.0;
    let mut acc = 0.0;
    for &s in sigma {
        ensure_finite("sigma", s)?;
        if s < 0.0 {
            return Err(Error::invalid(format!("negative standard deviation {s}")));
        }
        power *= t;
        acc += (s * power).powi(2);
    }
    Ok(acc)
}

/// One prediction per anchor offset.
pub fn eval_traj(p: &PolyTrajectory, schedule: &AnchorSchedule) -> Result<Vec<PointPrediction>> {
    schedule.offsets().iter().map(|&t| p.at(f64::from(t))).collect()
}

/// Negative log of the Gaussian density of `target` under mean `pred` and
/// variance `var + VAR_FLOOR`.
pub fn gaussian_nll(pred: f64, var: f64, target: f64) -> Result<f64> {
    ensure_finite("prediction", pred)?;
    ensure_finite("target", target)?;
    ensure_finite("variance", var)?;
    let v = var + VAR_FLOOR;
    if v <= 0.0 {
        return Err(Error::invalid(format!("variance {var} is not positive")));
    }
    let r = pred - target;
    Ok(0.5 * r * r / v + 0.5 * (2.0 * PI * v).ln())
}

/// Mean over anchors of the lateral plus longitudinal likelihood terms.
/// `truth[t]` is the observed position at offset `t` (so `truth[0]` is the
/// origin).
pub fn trajectory_loss(p: &PolyTrajectory, truth: &[[f64; 2]], schedule: &AnchorSchedule) -> Result<f64> {
    let last = schedule.last() as usize;
    if last >= truth.len() {
        return Err(Error::invalid(format!(
            "anchor offset {last} is beyond the {} ground-truth frames",
            truth.len().saturating_sub(1)
        )));
    }
    let mut total = 0.0;
    for pt in eval_traj(p, schedule)? {
        let [mx, my] = truth[pt.t as usize];
        total += gaussian_nll(pt.x, pt.var_x, mx)? + gaussian_nll(pt.y, pt.var_y, my)?;
    }
    Ok(total / schedule.len() as f64)
}
