//! Closed-form synthetic scenes with known ground truth.
//!
//! Vehicles drive along `+y` (longitudinal); `x` is lateral. Time inside a
//! scene is `k / frame_rate` seconds for frame `k`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Scene, Track};
use crate::error::{Error, Result};

/// Agent ids are `scene * AGENTS_PER_SCENE + k`.
pub const AGENTS_PER_SCENE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    ConstVel,
    ConstAcc,
    LaneChange,
    Arc,
    /// Each scene draws one of the four kinds uniformly.
    Mixed,
}

impl MotionKind {
    pub const ALL: [MotionKind; 5] = [
        MotionKind::ConstVel,
        MotionKind::ConstAcc,
        MotionKind::LaneChange,
        MotionKind::Arc,
        MotionKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::ConstVel => "const_vel",
            MotionKind::ConstAcc => "const_acc",
            MotionKind::LaneChange => "lane_change",
            MotionKind::Arc => "arc",
            MotionKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = MotionKind::ALL.iter().map(|k| k.name()).collect();
            Error::invalid(format!(
                "unknown synthetic kind `{s}`; valid kinds: {}",
                valid.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub frame_rate: f64,
    /// Frames per scene.
    pub len: usize,
    /// Scene index of the prediction origin; manoeuvres are timed around it.
    pub t0: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Lateral drift bound for constant-velocity agents, m/s.
    pub lateral_speed_max: f64,
    /// Longitudinal acceleration magnitude range, m/s^2.
    pub accel_min: f64,
    pub accel_max: f64,
    pub lane_offset: f64,
    /// Lane-change duration range, seconds.
    pub lane_change_min_s: f64,
    pub lane_change_max_s: f64,
    /// Maximum absolute curvature for arcs, 1/m.
    pub curvature_max: f64,
    /// Standard deviation of additive position noise, metres.
    pub noise_std: f64,
    pub neighbors: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            frame_rate: 10.0,
            len: 111,
            t0: 50,
            speed_min: 10.0,
            speed_max: 30.0,
            lateral_speed_max: 0.3,
            accel_min: 0.0,
            accel_max: 3.0,
            lane_offset: 3.5,
            lane_change_min_s: 3.0,
            lane_change_max_s: 6.0,
            curvature_max: 1.0 / 150.0,
            noise_std: 0.0,
            neighbors: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.len < 3 || self.t0 == 0 || self.t0 >= self.len {
            return bad(format!("scene length {} / t0 {} invalid", self.len, self.t0));
        }
        if self.frame_rate.is_nan() || self.frame_rate <= 0.0 {
            return bad(format!("frame rate {} must be positive", self.frame_rate));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max && self.speed_max <= 40.0) {
            return bad(format!(
                "speeds must satisfy 0 <= min <= max <= 40 m/s, got {}..{}",
                self.speed_min, self.speed_max
            ));
        }
        if !(0.0 <= self.accel_min && self.accel_min <= self.accel_max && self.accel_max <= 4.0) {
            return bad(format!(
                "acceleration magnitudes must satisfy 0 <= min <= max <= 4 m/s^2, got {}..{}",
                self.accel_min, self.accel_max
            ));
        }
        if !(self.lane_offset > 0.0 && self.lane_change_min_s > 0.0 && self.lane_change_min_s <= self.lane_change_max_s)
        {
            return bad("lane change offset and durations must be positive".into());
        }
        if !(self.curvature_max >= 0.0 && self.noise_std >= 0.0 && self.lateral_speed_max >= 0.0) {
            return bad("curvature, drift and noise bounds must be >= 0".into());
        }
        Ok(())
    }

    fn secs(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate
    }
}

pub fn const_vel(p0: [f64; 2], v: [f64; 2], n: usize, rate: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = k as f64 / rate;
            [p0[0] + v[0] * t, p0[1] + v[1] * t]
        })
        .collect()
}

pub fn const_acc(p0: [f64; 2], v: [f64; 2], a: [f64; 2], n: usize, rate: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = k as f64 / rate;
            [
                p0[0] + v[0] * t + 0.5 * a[0] * t * t,
                p0[1] + v[1] * t + 0.5 * a[1] * t * t,
            ]
        })
        .collect()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Lateral logistic profile rescaled to start at exactly 0 and end at
/// exactly `offset` over the `n` frames; constant longitudinal speed.
pub fn lane_change(
    p0: [f64; 2],
    speed: f64,
    offset: f64,
    mid_s: f64,
    duration_s: f64,
    n: usize,
    rate: f64,
) -> Vec<[f64; 2]> {
    let steep = 8.0 / duration_s;
    let s = |t: f64| logistic((t - mid_s) * steep);
    let (s0, s1) = (s(0.0), s((n - 1) as f64 / rate));
    (0..n)
        .map(|k| {
            let t = k as f64 / rate;
            [p0[0] + offset * (s(t) - s0) / (s1 - s0), p0[1] + speed * t]
        })
        .collect()
}

/// Constant-curvature motion; heading is measured from `+y` towards `+x`.
pub fn arc(p0: [f64; 2], speed: f64, curvature: f64, heading0: f64, n: usize, rate: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let s = speed * k as f64 / rate;
            if curvature.abs() < 1e-12 {
                return [p0[0] + s * heading0.sin(), p0[1] + s * heading0.cos()];
            }
            let h = heading0 + curvature * s;
            [
                p0[0] + (heading0.cos() - h.cos()) / curvature,
                p0[1] + (h.sin() - heading0.sin()) / curvature,
            ]
        })
        .collect()
}

fn signed<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let m = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn ego_positions<R: Rng + ?Sized>(kind: MotionKind, p: &SyntheticParams, rng: &mut R) -> Vec<[f64; 2]> {
    let n = p.len;
    let speed = rng.random_range(p.speed_min..=p.speed_max);
    let p0 = [0.0, 0.0];
    match kind {
        MotionKind::ConstVel => {
            let lat = rng.random_range(-p.lateral_speed_max..=p.lateral_speed_max);
            const_vel(p0, [lat, speed], n, p.frame_rate)
        }
        MotionKind::ConstAcc => {
            let mut a = signed(rng, p.accel_min, p.accel_max);
            let duration = p.secs(n - 1);
            // no reversing: speed stays >= 0 until the end of the scene
            a = a.max(-speed / duration);
            const_acc(p0, [0.0, speed], [0.0, a], n, p.frame_rate)
        }
        MotionKind::LaneChange => {
            let offset = if rng.random_bool(0.5) {
                p.lane_offset
            } else {
                -p.lane_offset
            };
            let duration = rng.random_range(p.lane_change_min_s..=p.lane_change_max_s);
            let mid = p.secs(p.t0) + rng.random_range(-1.0..=3.0);
            lane_change(p0, speed, offset, mid, duration, n, p.frame_rate)
        }
        MotionKind::Arc => {
            let kappa = signed(rng, 0.2 * p.curvature_max, p.curvature_max);
            arc(p0, speed, kappa, 0.0, n, p.frame_rate)
        }
        MotionKind::Mixed => unreachable!("resolved by caller"),
    }
}

/// `n` scenes of the given kind with ego ids `i * AGENTS_PER_SCENE`.
pub fn gen_synthetic<R: Rng + ?Sized>(
    kind: MotionKind,
    params: &SyntheticParams,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Scene>> {
    params.validate()?;
    if params.neighbors as u64 >= AGENTS_PER_SCENE {
        return Err(Error::invalid(format!(
            "at most {} neighbours per scene",
            AGENTS_PER_SCENE - 1
        )));
    }
    let noise = Normal::new(0.0, params.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let k = match kind {
            MotionKind::Mixed => MotionKind::ALL[rng.random_range(0..4)],
            k => k,
        };
        let mut agents = vec![ego_positions(k, params, rng)];
        for _ in 0..params.neighbors {
            let lane = rng.random_range(-2i32..=2) as f64 * params.lane_offset;
            let ahead = rng.random_range(-40.0..=40.0);
            let v = rng.random_range(params.speed_min..=params.speed_max);
            agents.push(const_vel([lane, ahead], [0.0, v], params.len, params.frame_rate));
        }
        let mut tracks = Vec::with_capacity(agents.len());
        for (j, mut pos) in agents.into_iter().enumerate() {
            if params.noise_std > 0.0 {
                for p in &mut pos {
                    p[0] += noise.sample(rng);
                    p[1] += noise.sample(rng);
                }
            }
            tracks.push(Track::new(i * AGENTS_PER_SCENE + j as u64, params.frame_rate, 0, pos)?);
        }
        let ego = tracks.remove(0);
        scenes.push(Scene::new(ego, tracks)?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn const_vel_spans_expected_distance() {
        let pts = const_vel([0.0, 0.0], [10.0, 0.0], 51, 10.0);
        assert_eq!(pts[0], [0.0, 0.0]);
        assert!((pts[50][0] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn const_acc_matches_half_a_t_squared() {
        let pts = const_acc([0.0, 0.0], [0.0, 0.0], [0.0, 1.0], 31, 10.0);
        for (k, p) in pts.iter().enumerate() {
            let t = k as f64 / 10.0;
            assert!((p[1] - 0.5 * t * t).abs() < 1e-12);
        }
    }

    #[test]
    fn lane_change_is_monotone_between_endpoints() {
        let pts = lane_change([0.0, 0.0], 20.0, 3.5, 5.0, 4.0, 101, 10.0);
        assert_eq!(pts[0][0], 0.0);
        assert!((pts[100][0] - 3.5).abs() < 1e-12);
        assert!(pts.windows(2).all(|w| w[1][0] >= w[0][0]));
    }

    #[test]
    fn arc_keeps_constant_radius() {
        let kappa = 0.01;
        let pts = arc([0.0, 0.0], 20.0, kappa, 0.0, 80, 10.0);
        let centre = [1.0 / kappa, 0.0];
        for p in &pts {
            let r = (p[0] - centre[0]).hypot(p[1] - centre[1]);
            assert!((r - 1.0 / kappa).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_kind_lists_valid_ones() {
        let err = "zigzag".parse::<MotionKind>().unwrap_err().to_string();
        assert!(err.contains("const_vel") && err.contains("arc"), "{err}");
    }

    #[test]
    fn generation_is_seeded() {
        let p = SyntheticParams {
            neighbors: 2,
            noise_std: 0.05,
            ..SyntheticParams::default()
        };
        let a = gen_synthetic(MotionKind::Mixed, &p, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_synthetic(MotionKind::Mixed, &p, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert_eq!(a[3].ego.agent_id, 3 * AGENTS_PER_SCENE);
        assert_eq!(a[3].neighbors.len(), 2);
    }

    #[test]
    fn rejects_out_of_range_params() {
        let p = SyntheticParams {
            speed_max: 55.0,
            ..SyntheticParams::default()
        };
        assert!(gen_synthetic(MotionKind::ConstVel, &p, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let p = SyntheticParams {
            accel_max: 5.0,
            ..SyntheticParams::default()
        };
        assert!(p.validate().is_err());
    }
}
