//! Tracks, scenes and samples: NGSim ingestion, synthetic generation,
//! segmentation, filtering and the on-disk dataset cache.

mod features;
mod io;
mod segment;
mod synthetic;
mod track;

use std::collections::BTreeMap;
use std::path::Path;

pub use features::{build_sample, build_samples, compute_states, AgentState, Sample, SampleLayout, STATE_DIM};
pub use io::{ingest_ngsim, ingest_ngsim_reader, load_tracks, read_tracks, save_tracks, write_tracks, FEET_TO_METRES};
pub use segment::{
    filter_straight, read_scene_index, resolve_scenes, segment_and_split, test_count, write_scene_index, SceneRef,
    SegmentConfig, Split, StraightCriterion,
};
pub use synthetic::{
    arc, const_acc, const_vel, gen_synthetic, lane_change, MotionKind, SyntheticParams, AGENTS_PER_SCENE,
};
pub use track::{Scene, Track, DEFAULT_FRAME_RATE};

use crate::error::{Error, Result};

pub const TRACKS_FILE: &str = "tracks.csv";
pub const SCENES_FILE: &str = "scenes.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Train and test scenes plus free-form provenance (`key = value`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
    pub manifest: BTreeMap<String, String>,
}

impl Dataset {
    pub fn frame_rate(&self) -> f64 {
        self.train
            .first()
            .or(self.test.first())
            .map_or(DEFAULT_FRAME_RATE, Scene::frame_rate)
    }

    /// Writes `tracks.csv`, `scenes.csv` and `manifest.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tracks: BTreeMap<(u64, i64), Track> = BTreeMap::new();
        for scene in self.train.iter().chain(&self.test) {
            for t in scene.agents() {
                merge_track(&mut tracks, t);
            }
        }
        let tracks: Vec<Track> = tracks.into_values().collect();
        save_tracks(&dir.join(TRACKS_FILE), &tracks)?;

        let refs: Vec<SceneRef> = self
            .train
            .iter()
            .map(|s| SceneRef::of(s, "train"))
            .chain(self.test.iter().map(|s| SceneRef::of(s, "test")))
            .collect();
        let path = dir.join(SCENES_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_scene_index(std::io::BufWriter::new(file), &refs)?;

        let mut manifest = self.manifest.clone();
        manifest.insert("frame_rate".into(), self.frame_rate().to_string());
        manifest.insert("train_scenes".into(), self.train.len().to_string());
        manifest.insert("test_scenes".into(), self.test.len().to_string());
        manifest.insert("scenes".into(), (self.train.len() + self.test.len()).to_string());
        let text: String = manifest.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BTreeMap<String, String> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        let rate = manifest
            .get("frame_rate")
            .map(|r| {
                r.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad frame_rate `{r}` in manifest")))
            })
            .transpose()?
            .unwrap_or(DEFAULT_FRAME_RATE);
        let tracks = load_tracks(&dir.join(TRACKS_FILE), rate)?;
        let path = dir.join(SCENES_FILE);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let refs = read_scene_index(std::io::BufReader::new(file))?;
        let mut scenes = resolve_scenes(&tracks, &refs)?;
        Ok(Self {
            train: scenes.remove("train").unwrap_or_default(),
            test: scenes.remove("test").unwrap_or_default(),
            manifest,
        })
    }
}

/// Tracks of the same agent that touch or overlap are stored once.
fn merge_track(tracks: &mut BTreeMap<(u64, i64), Track>, t: &Track) {
    let overlapping: Vec<(u64, i64)> = tracks
        .range((t.agent_id, i64::MIN)..=(t.agent_id, i64::MAX))
        .filter(|(_, e)| e.first_frame <= t.end_frame() && t.first_frame <= e.end_frame())
        .map(|(k, _)| *k)
        .collect();
    let mut merged = t.clone();
    for key in overlapping {
        let other = tracks.remove(&key).expect("present");
        let start = merged.first_frame.min(other.first_frame);
        let end = merged.end_frame().max(other.end_frame());
        let pick = |f: i64| {
            if merged.position_at(f).is_some() {
                &merged
            } else {
                &other
            }
        };
        let frames = start..end;
        let positions = frames
            .clone()
            .map(|f| pick(f).position_at(f).expect("covered"))
            .collect();
        let speed = frames.clone().map(|f| pick(f).speed_at(f)).collect::<Option<Vec<_>>>();
        let accel = frames.map(|f| pick(f).accel_at(f)).collect::<Option<Vec<_>>>();
        merged = Track {
            agent_id: t.agent_id,
            frame_rate: t.frame_rate,
            first_frame: start,
            positions,
            speed,
            accel,
        };
    }
    tracks.insert((merged.agent_id, merged.first_frame), merged);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dataset_directory_round_trip() {
        let params = SyntheticParams {
            len: 40,
            t0: 10,
            neighbors: 2,
            noise_std: 0.1,
            ..SyntheticParams::default()
        };
        let scenes = gen_synthetic(MotionKind::Mixed, &params, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ds = Dataset {
            train: scenes[..4].to_vec(),
            test: scenes[4..].to_vec(),
            manifest: BTreeMap::from([("seed".to_string(), "1".to_string())]),
        };
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.manifest["scenes"], "6");
        assert_eq!(back.manifest["seed"], "1");
    }

    #[test]
    fn overlapping_segments_merge_into_one_track() {
        let t = Track::new(3, 10.0, 0, (0..10).map(|k| [0.0, k as f64]).collect()).unwrap();
        let mut map = BTreeMap::new();
        merge_track(&mut map, &t.clip(0, 6).unwrap());
        merge_track(&mut map, &t.clip(4, 10).unwrap());
        assert_eq!(map.len(), 1);
        assert_eq!(map.values().next().unwrap(), &t);
    }
}
