use std::cmp::Ordering;

use super::{Scene, Track};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 7;

/// Per-frame input state of one agent.
///
/// `dx`, `dy` are position increments (metres/frame), `v` speed (m/s),
/// `alpha` acceleration (m/s^2), `theta` heading (rad), and `(l, phi)` the
/// polar coordinates of the agent relative to the ego position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub dx: f64,
    pub dy: f64,
    pub v: f64,
    pub alpha: f64,
    pub theta: f64,
    pub l: f64,
    pub phi: f64,
}

impl AgentState {
    pub fn to_features(&self) -> [f64; STATE_DIM] {
        [self.dx, self.dy, self.v, self.alpha, self.theta, self.l, self.phi]
    }
}

fn increment(track: &Track, frame: i64) -> Option<[f64; 2]> {
    let p1 = track.position_at(frame)?;
    let p0 = track.position_at(frame - 1)?;
    Some([p1[0] - p0[0], p1[1] - p0[1]])
}

fn speed(track: &Track, frame: i64) -> Option<f64> {
    if let Some(v) = track.speed_at(frame) {
        return Some(v);
    }
    increment(track, frame).map(|[dx, dy]| dx.hypot(dy) * track.frame_rate)
}

fn state_of(track: &Track, frame: i64, ego_pos: [f64; 2], is_ego: bool) -> Option<AgentState> {
    let [dx, dy] = increment(track, frame)?;
    let v = speed(track, frame)?;
    let alpha = track
        .accel_at(frame)
        .or_else(|| speed(track, frame - 1).map(|v0| (v - v0) * track.frame_rate))
        .unwrap_or(0.0);
    let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    let (l, phi) = if is_ego {
        (0.0, 0.0)
    } else {
        let p = track.position_at(frame)?;
        let (ox, oy) = (p[0] - ego_pos[0], p[1] - ego_pos[1]);
        let l = ox.hypot(oy);
        (l, if l == 0.0 { 0.0 } else { oy.atan2(ox) })
    };
    Some(AgentState {
        dx,
        dy,
        v,
        alpha,
        theta,
        l,
        phi,
    })
}

/// States of every agent of the scene at scene-relative index `t` (ego
/// first). Agents without a position at `t` or `t - 1` are `None`.
pub fn compute_states(scene: &Scene, t: usize) -> Result<Vec<Option<AgentState>>> {
    if t == 0 || t >= scene.len {
        return Err(Error::invalid(format!(
            "state index {t} needs 1 <= t < {} (increments need a predecessor)",
            scene.len
        )));
    }
    let frame = scene.start_frame + t as i64;
    let ego_pos = scene
        .ego
        .position_at(frame)
        .ok_or_else(|| Error::Data(format!("ego {} has no position at frame {frame}", scene.ego.agent_id)))?;
    Ok(scene
        .agents()
        .enumerate()
        .map(|(i, track)| state_of(track, frame, ego_pos, i == 0))
        .collect())
}

/// Model input/target pair centred on the ego at the current step `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Ego agent id of the source scene.
    pub agent_id: u64,
    pub start_frame: i64,
    /// `agents[0]` is the ego (prediction target); each entry holds one
    /// state per history frame, oldest first. Absent frames are zeros.
    pub agents: Vec<Vec<[f64; STATE_DIM]>>,
    /// `future[k]` is the ego displacement `k` frames after `t0`, so
    /// `future[0]` is the origin.
    pub future: Vec<[f64; 2]>,
}

impl Sample {
    pub fn history_len(&self) -> usize {
        self.agents[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.future.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLayout {
    /// History frames fed to the encoder; `t0` sits at this scene index.
    pub history: usize,
    /// Future offsets kept as supervision.
    pub future: usize,
    pub max_neighbors: usize,
}

impl SampleLayout {
    pub fn scene_len(&self) -> usize {
        self.history + self.future + 1
    }
}

/// Neighbours present at `t0`, nearest first, at most `max` of them.
fn nearest_neighbors(states: &[Option<AgentState>], ids: &[u64], max: usize) -> Vec<usize> {
    let mut present: Vec<(usize, f64)> = states
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(i, s)| s.map(|s| (i, s.l)))
        .collect();
    present.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(Ordering::Equal)
            .then(ids[a.0].cmp(&ids[b.0]))
    });
    present.into_iter().take(max).map(|(i, _)| i).collect()
}

pub fn build_sample(scene: &Scene, layout: &SampleLayout) -> Result<Sample> {
    if layout.history == 0 {
        return Err(Error::invalid("history window must be >= 1 frame"));
    }
    if scene.len < layout.scene_len() {
        return Err(Error::Data(format!(
            "scene of agent {} has {} frames, need {}",
            scene.ego.agent_id,
            scene.len,
            layout.scene_len()
        )));
    }
    let t0 = layout.history;
    let ids: Vec<u64> = scene.agents().map(|t| t.agent_id).collect();
    let at_t0 = compute_states(scene, t0)?;
    let mut chosen = vec![0];
    chosen.extend(nearest_neighbors(&at_t0, &ids, layout.max_neighbors));

    let mut agents = vec![Vec::with_capacity(layout.history); chosen.len()];
    for t in 1..=t0 {
        let states = compute_states(scene, t)?;
        for (slot, &i) in chosen.iter().enumerate() {
            agents[slot].push(states[i].map_or([0.0; STATE_DIM], |s| s.to_features()));
        }
    }

    let origin = scene.ego.positions[t0];
    let future = scene.ego.positions[t0..=t0 + layout.future]
        .iter()
        .map(|p| [p[0] - origin[0], p[1] - origin[1]])
        .collect();
    Ok(Sample {
        agent_id: scene.ego.agent_id,
        start_frame: scene.start_frame,
        agents,
        future,
    })
}

pub fn build_samples(scenes: &[Scene], layout: &SampleLayout) -> Result<Vec<Sample>> {
    scenes.iter().map(|s| build_sample(s, layout)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: u64, pts: &[[f64; 2]]) -> Track {
        Track::new(id, 10.0, 0, pts.to_vec()).unwrap()
    }

    #[test]
    fn unit_step_at_ten_hertz() {
        let scene = Scene::new(track(1, &[[0.0, 0.0], [1.0, 0.0]]), vec![]).unwrap();
        let s = compute_states(&scene, 1).unwrap()[0].unwrap();
        assert_eq!((s.dx, s.dy, s.v, s.theta), (1.0, 0.0, 10.0, 0.0));
        assert_eq!((s.l, s.phi), (0.0, 0.0));
        assert!(compute_states(&scene, 0).is_err());
    }

    #[test]
    fn polar_offsets_to_ego() {
        let ego = track(1, &[[0.0, 0.0], [0.0, 1.0]]);
        let left_ahead = track(2, &[[-3.0, 4.0], [-3.0, 5.0]]);
        let same = track(3, &[[0.0, 0.0], [0.0, 1.0]]);
        let scene = Scene::new(ego, vec![left_ahead, same]).unwrap();
        let states = compute_states(&scene, 1).unwrap();
        let n = states[1].unwrap();
        assert!((n.l - 5.0).abs() < 1e-12);
        assert!((n.phi - 4f64.atan2(-3.0)).abs() < 1e-12);
        let s = states[2].unwrap();
        assert_eq!((s.l, s.phi), (0.0, 0.0));
    }

    #[test]
    fn absent_neighbor_is_masked() {
        let ego = track(1, &[[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]);
        let mut late = track(2, &[[3.0, 0.0], [3.0, 1.0]]);
        late.first_frame = 1;
        let scene = Scene::new(ego, vec![late]).unwrap();
        assert!(compute_states(&scene, 1).unwrap()[1].is_none());
        assert!(compute_states(&scene, 2).unwrap()[1].is_some());
    }

    #[test]
    fn acceleration_from_speed_differences() {
        let pts: Vec<[f64; 2]> = (0..4).map(|k| [0.0, 0.05 * (k * k) as f64]).collect();
        let scene = Scene::new(track(1, &pts), vec![]).unwrap();
        let s = compute_states(&scene, 3).unwrap()[0].unwrap();
        // increments 0.15 then 0.25 m/frame
        assert!((s.v - 2.5).abs() < 1e-12);
        assert!((s.alpha - 10.0).abs() < 1e-9);
    }

    #[test]
    fn sample_future_starts_at_origin() {
        let pts: Vec<[f64; 2]> = (0..12).map(|k| [1.0, 2.0 * k as f64]).collect();
        let far = track(7, &pts.iter().map(|p| [p[0] + 20.0, p[1]]).collect::<Vec<_>>());
        let near = track(8, &pts.iter().map(|p| [p[0] + 3.5, p[1]]).collect::<Vec<_>>());
        let scene = Scene::new(track(1, &pts), vec![far, near]).unwrap();
        let layout = SampleLayout {
            history: 4,
            future: 7,
            max_neighbors: 1,
        };
        let s = build_sample(&scene, &layout).unwrap();
        assert_eq!(s.future[0], [0.0, 0.0]);
        assert_eq!(s.future[7], [0.0, 14.0]);
        assert_eq!(s.agents.len(), 2);
        assert_eq!(s.history_len(), 4);
        // nearest neighbour is the one 3.5 m away
        assert!((s.agents[1][3][5] - 3.5).abs() < 1e-12);
        let too_long = SampleLayout { future: 8, ..layout };
        assert!(build_sample(&scene, &too_long).is_err());
    }
}
