use crate::error::{Error, Result};

pub const DEFAULT_FRAME_RATE: f64 = 10.0;

/// Contiguous, fixed-rate positions of one agent in a ground frame (metres).
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub agent_id: u64,
    pub frame_rate: f64,
    pub first_frame: i64,
    pub positions: Vec<[f64; 2]>,
    /// Measured speed (m/s), when the source provides it.
    pub speed: Option<Vec<f64>>,
    /// Measured acceleration (m/s^2), when the source provides it.
    pub accel: Option<Vec<f64>>,
}

impl Track {
    pub fn new(agent_id: u64, frame_rate: f64, first_frame: i64, positions: Vec<[f64; 2]>) -> Result<Self> {
        let t = Self {
            agent_id,
            frame_rate,
            first_frame,
            positions,
            speed: None,
            accel: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() < 2 {
            return Err(Error::Data(format!(
                "track of agent {} has {} frame(s), need at least 2",
                self.agent_id,
                self.positions.len()
            )));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Data(format!(
                "agent {}: bad frame rate {}",
                self.agent_id, self.frame_rate
            )));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("agent {}: non-finite coordinate", self.agent_id)));
        }
        for (name, col) in [("speed", &self.speed), ("accel", &self.accel)] {
            if let Some(c) = col {
                if c.len() != self.positions.len() {
                    return Err(Error::Data(format!(
                        "agent {}: {name} has {} values for {} frames",
                        self.agent_id,
                        c.len(),
                        self.positions.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// One past the last covered frame.
    pub fn end_frame(&self) -> i64 {
        self.first_frame + self.positions.len() as i64
    }

    fn index(&self, frame: i64) -> Option<usize> {
        (frame >= self.first_frame && frame < self.end_frame()).then(|| (frame - self.first_frame) as usize)
    }

    pub fn position_at(&self, frame: i64) -> Option<[f64; 2]> {
        self.index(frame).map(|i| self.positions[i])
    }

    pub fn speed_at(&self, frame: i64) -> Option<f64> {
        let i = self.index(frame)?;
        self.speed.as_ref().map(|s| s[i])
    }

    pub fn accel_at(&self, frame: i64) -> Option<f64> {
        let i = self.index(frame)?;
        self.accel.as_ref().map(|a| a[i])
    }

    /// The part of the track inside `[start, end)`, if at least one frame
    /// overlaps.
    pub fn clip(&self, start: i64, end: i64) -> Option<Track> {
        let lo = start.max(self.first_frame);
        let hi = end.min(self.end_frame());
        if lo >= hi {
            return None;
        }
        let (a, b) = ((lo - self.first_frame) as usize, (hi - self.first_frame) as usize);
        Some(Track {
            agent_id: self.agent_id,
            frame_rate: self.frame_rate,
            first_frame: lo,
            positions: self.positions[a..b].to_vec(),
            speed: self.speed.as_ref().map(|s| s[a..b].to_vec()),
            accel: self.accel.as_ref().map(|s| s[a..b].to_vec()),
        })
    }
}

/// An ego track plus neighbours over a common frame window
/// `[start_frame, start_frame + len)`. Neighbours may cover only part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ego: Track,
    pub neighbors: Vec<Track>,
    pub start_frame: i64,
    pub len: usize,
}

impl Scene {
    pub fn new(ego: Track, neighbors: Vec<Track>) -> Result<Self> {
        let (start_frame, len) = (ego.first_frame, ego.len());
        let end = start_frame + len as i64;
        for n in &neighbors {
            if n.first_frame < start_frame || n.end_frame() > end {
                return Err(Error::Data(format!(
                    "neighbour {} covers frames outside the scene of agent {}",
                    n.agent_id, ego.agent_id
                )));
            }
        }
        Ok(Self {
            ego,
            neighbors,
            start_frame,
            len,
        })
    }

    pub fn frame_rate(&self) -> f64 {
        self.ego.frame_rate
    }

    /// Ego first, then neighbours.
    pub fn agents(&self) -> impl Iterator<Item = &Track> {
        std::iter::once(&self.ego).chain(&self.neighbors)
    }
}
