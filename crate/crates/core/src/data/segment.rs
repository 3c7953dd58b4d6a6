use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Scene, Track};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConfig {
    pub segment_len: usize,
    /// Train:test ratio, e.g. `(3, 1)`.
    pub split: (u32, u32),
    /// Scene index at which neighbours are ranked by distance.
    pub t0: usize,
    pub max_neighbors: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            segment_len: 200,
            split: (3, 1),
            t0: 50,
            max_neighbors: 8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
    /// Tracks too short for a single segment.
    pub skipped_tracks: usize,
}

/// Number of test items for `total` items under a `train:test` ratio,
/// rounded up.
pub fn test_count(total: usize, split: (u32, u32)) -> usize {
    let parts = (split.0 + split.1) as usize;
    (total * split.1 as usize).div_ceil(parts)
}

/// Cuts every track into non-overlapping segments from its first frame and
/// splits them temporally: segments are ordered by start frame and the last
/// `ceil(total * test / (train + test))` go to the test set.
pub fn segment_and_split(tracks: &[Track], cfg: &SegmentConfig) -> Result<Split> {
    if cfg.segment_len < 2 {
        return Err(Error::invalid("segment length must be >= 2"));
    }
    if cfg.split.0 + cfg.split.1 == 0 {
        return Err(Error::invalid("split ratio must not be 0:0"));
    }
    let mut segments = Vec::new();
    let mut skipped = 0;
    for (ti, t) in tracks.iter().enumerate() {
        let n = t.len() / cfg.segment_len;
        if n == 0 {
            skipped += 1;
        }
        for k in 0..n {
            segments.push((t.first_frame + (k * cfg.segment_len) as i64, t.agent_id, ti));
        }
    }
    segments.sort();
    let n_test = test_count(segments.len(), cfg.split);
    let n_train = segments.len() - n_test;

    let index = FrameIndex::new(tracks);
    let scenes = segments
        .iter()
        .map(|&(start, _, ti)| build_scene(tracks, &index, ti, start, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut scenes = scenes.into_iter();
    Ok(Split {
        train: scenes.by_ref().take(n_train).collect(),
        test: scenes.collect(),
        skipped_tracks: skipped,
    })
}

/// Which tracks cover which frames.
struct FrameIndex {
    by_frame: HashMap<i64, Vec<usize>>,
}

impl FrameIndex {
    fn new(tracks: &[Track]) -> Self {
        let mut by_frame: HashMap<i64, Vec<usize>> = HashMap::new();
        for (i, t) in tracks.iter().enumerate() {
            for f in t.first_frame..t.end_frame() {
                by_frame.entry(f).or_default().push(i);
            }
        }
        Self { by_frame }
    }
}

fn build_scene(tracks: &[Track], index: &FrameIndex, ego_idx: usize, start: i64, cfg: &SegmentConfig) -> Result<Scene> {
    let end = start + cfg.segment_len as i64;
    let ego = tracks[ego_idx].clip(start, end).expect("segment inside track");
    let t0_frame = start + cfg.t0.min(cfg.segment_len - 1) as i64;
    let ego_pos = ego.position_at(t0_frame).expect("t0 inside segment");
    let mut candidates: Vec<(f64, u64, usize)> = index
        .by_frame
        .get(&t0_frame)
        .into_iter()
        .flatten()
        .filter(|&&i| i != ego_idx && tracks[i].agent_id != tracks[ego_idx].agent_id)
        .filter_map(|&i| {
            let p = tracks[i].position_at(t0_frame)?;
            Some(((p[0] - ego_pos[0]).hypot(p[1] - ego_pos[1]), tracks[i].agent_id, i))
        })
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let neighbors = candidates
        .into_iter()
        .take(cfg.max_neighbors)
        .filter_map(|(_, _, i)| tracks[i].clip(start, end))
        .filter(|t| t.len() >= 2)
        .collect();
    Scene::new(ego, neighbors)
}

/// Thresholds deciding whether an ego segment is straight, constant-speed
/// driving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraightCriterion {
    /// Maximum lateral (x) displacement range, metres.
    pub lateral_range: f64,
    /// Maximum speed standard deviation, m/s.
    pub speed_std: f64,
}

impl Default for StraightCriterion {
    fn default() -> Self {
        Self {
            lateral_range: 0.5,
            speed_std: 0.5,
        }
    }
}

impl StraightCriterion {
    pub fn is_straight(&self, track: &Track) -> bool {
        let xs = track.positions.iter().map(|p| p[0]);
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if hi - lo >= self.lateral_range {
            return false;
        }
        let speeds: Vec<f64> = match &track.speed {
            Some(s) => s.clone(),
            None => track
                .positions
                .windows(2)
                .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) * track.frame_rate)
                .collect(),
        };
        let n = speeds.len() as f64;
        let mean = speeds.iter().sum::<f64>() / n;
        let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() < self.speed_std
    }
}

/// Keeps `round(fraction * n_straight)` of the straight scenes, chosen at
/// random; all other scenes are kept. Order is preserved.
pub fn filter_straight<R: Rng + ?Sized>(
    scenes: Vec<Scene>,
    fraction: f64,
    criterion: &StraightCriterion,
    rng: &mut R,
) -> Result<Vec<Scene>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("straight fraction {fraction} outside [0, 1]")));
    }
    let straight: Vec<usize> = scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| criterion.is_straight(&s.ego))
        .map(|(i, _)| i)
        .collect();
    let keep = (fraction * straight.len() as f64).round() as usize;
    let mut drop = straight;
    drop.shuffle(rng);
    drop.truncate(drop.len() - keep);
    drop.sort_unstable();
    Ok(scenes
        .into_iter()
        .enumerate()
        .filter(|(i, _)| drop.binary_search(i).is_err())
        .map(|(_, s)| s)
        .collect())
}

/// One row of `scenes.csv`: which cached tracks form a scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRef {
    pub split: String,
    pub ego: u64,
    pub neighbors: Vec<u64>,
    pub start_frame: i64,
    pub len: usize,
}

impl SceneRef {
    pub fn of(scene: &Scene, split: &str) -> Self {
        Self {
            split: split.to_string(),
            ego: scene.ego.agent_id,
            neighbors: scene.neighbors.iter().map(|n| n.agent_id).collect(),
            start_frame: scene.start_frame,
            len: scene.len,
        }
    }
}

pub fn write_scene_index<W: Write>(writer: W, refs: &[SceneRef]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing scene index: {e}"));
    w.write_record(["scene", "split", "ego", "neighbors", "start_frame", "len"])
        .map_err(err)?;
    for (i, r) in refs.iter().enumerate() {
        let ns: Vec<String> = r.neighbors.iter().map(u64::to_string).collect();
        w.write_record([
            i.to_string(),
            r.split.clone(),
            r.ego.to_string(),
            ns.join(";"),
            r.start_frame.to_string(),
            r.len.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing scene index: {e}")))?;
    Ok(())
}

pub fn read_scene_index<R: Read>(reader: R) -> Result<Vec<SceneRef>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let bad = |what: &str| Error::Data(format!("scene index line {}: bad {what}", i + 2));
        let field = |k: usize| rec.get(k).unwrap_or("");
        let neighbors = if field(3).is_empty() {
            Vec::new()
        } else {
            field(3)
                .split(';')
                .map(|s| s.parse().map_err(|_| bad("neighbour id")))
                .collect::<Result<_>>()?
        };
        out.push(SceneRef {
            split: field(1).to_string(),
            ego: field(2).parse().map_err(|_| bad("ego id"))?,
            neighbors,
            start_frame: field(4).parse().map_err(|_| bad("start frame"))?,
            len: field(5).parse().map_err(|_| bad("length"))?,
        });
    }
    Ok(out)
}

/// Rebuilds scenes from cached tracks.
pub fn resolve_scenes(tracks: &[Track], refs: &[SceneRef]) -> Result<BTreeMap<String, Vec<Scene>>> {
    let mut by_agent: HashMap<u64, Vec<&Track>> = HashMap::new();
    for t in tracks {
        by_agent.entry(t.agent_id).or_default().push(t);
    }
    let end_of = |r: &SceneRef| r.start_frame + r.len as i64;
    let find = |id: u64, r: &SceneRef| -> Option<Track> {
        by_agent.get(&id)?.iter().find_map(|t| t.clip(r.start_frame, end_of(r)))
    };
    let mut out: BTreeMap<String, Vec<Scene>> = BTreeMap::new();
    for r in refs {
        let ego = find(r.ego, r)
            .filter(|t| t.first_frame == r.start_frame && t.len() == r.len)
            .ok_or_else(|| {
                Error::Data(format!(
                    "ego {} does not cover frames {}..{}",
                    r.ego,
                    r.start_frame,
                    end_of(r)
                ))
            })?;
        let neighbors = r
            .neighbors
            .iter()
            .map(|&n| find(n, r).ok_or_else(|| Error::Data(format!("neighbour {n} missing from track cache"))))
            .collect::<Result<Vec<_>>>()?;
        out.entry(r.split.clone())
            .or_default()
            .push(Scene::new(ego, neighbors)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn straight_track(id: u64, first: i64, n: usize) -> Track {
        Track::new(id, 10.0, first, (0..n).map(|k| [0.0, k as f64]).collect()).unwrap()
    }

    fn curved_track(id: u64, n: usize) -> Track {
        Track::new(
            id,
            10.0,
            0,
            (0..n).map(|k| [(k as f64 * 0.1).sin() * 3.0, k as f64]).collect(),
        )
        .unwrap()
    }

    fn cfg(segment_len: usize) -> SegmentConfig {
        SegmentConfig {
            segment_len,
            t0: 10,
            ..SegmentConfig::default()
        }
    }

    #[test]
    fn ratio_arithmetic() {
        let s = segment_and_split(&[straight_track(1, 0, 800)], &cfg(200)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 1));
        let s = segment_and_split(&[straight_track(1, 0, 199)], &cfg(200)).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.skipped_tracks), (0, 0, 1));
        let s = segment_and_split(&[straight_track(1, 0, 1000)], &cfg(200)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 2));
        assert_eq!(test_count(5, (3, 1)), 2);
    }

    #[test]
    fn split_is_temporal_and_disjoint() {
        let tracks = vec![
            straight_track(1, 0, 1000),
            straight_track(2, 100, 900),
            straight_track(3, 40, 500),
        ];
        let s = segment_and_split(&tracks, &cfg(200)).unwrap();
        let last_train = s.train.iter().map(|x| x.start_frame).max().unwrap();
        let first_test = s.test.iter().map(|x| x.start_frame).min().unwrap();
        assert!(last_train <= first_test);
        for tr in &s.train {
            for te in &s.test {
                if tr.ego.agent_id == te.ego.agent_id {
                    assert!(tr.start_frame + tr.len as i64 <= te.start_frame);
                }
            }
        }
    }

    #[test]
    fn neighbors_are_nearest_at_t0() {
        let tracks: Vec<Track> = (0..12)
            .map(|i| Track::new(i, 10.0, 0, (0..200).map(|k| [i as f64 * 3.5, k as f64]).collect()).unwrap())
            .collect();
        let mut c = cfg(200);
        c.max_neighbors = 3;
        let s = segment_and_split(&tracks, &c).unwrap();
        let scene = s.train.iter().find(|x| x.ego.agent_id == 0).unwrap();
        assert_eq!(
            scene.neighbors.iter().map(|n| n.agent_id).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn straight_filter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let crit = StraightCriterion::default();
        let curved: Vec<Scene> = (0..10)
            .map(|i| Scene::new(curved_track(i, 50), vec![]).unwrap())
            .collect();
        let out = filter_straight(curved.clone(), 0.5, &crit, &mut rng).unwrap();
        assert_eq!(out, curved);

        let straight: Vec<Scene> = (0..100)
            .map(|i| Scene::new(straight_track(i, 0, 50), vec![]).unwrap())
            .collect();
        assert_eq!(
            filter_straight(straight.clone(), 0.5, &crit, &mut rng).unwrap().len(),
            50
        );

        let mixed: Vec<Scene> = straight.into_iter().chain(curved).collect();
        let out = filter_straight(mixed, 0.3, &crit, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|s| !crit.is_straight(&s.ego)).count(), 10);
        assert_eq!(out.len(), 40);
        assert!(filter_straight(vec![], 1.5, &crit, &mut rng).is_err());
    }

    #[test]
    fn scene_index_round_trip() {
        let tracks = vec![straight_track(1, 0, 400), straight_track(2, 0, 400)];
        let s = segment_and_split(&tracks, &cfg(200)).unwrap();
        let refs: Vec<SceneRef> = s
            .train
            .iter()
            .map(|x| SceneRef::of(x, "train"))
            .chain(s.test.iter().map(|x| SceneRef::of(x, "test")))
            .collect();
        let mut buf = Vec::new();
        write_scene_index(&mut buf, &refs).unwrap();
        let back = read_scene_index(buf.as_slice()).unwrap();
        assert_eq!(back, refs);
        let scenes = resolve_scenes(&tracks, &back).unwrap();
        assert_eq!(scenes["train"], s.train);
        assert_eq!(scenes["test"], s.test);
    }
}
