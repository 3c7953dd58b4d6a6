//! Flat `key = value` run configuration with defaults for every key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::anchoring::{fixed_schedule, AnchorSource};
use crate::data::{MotionKind, SampleLayout, SegmentConfig, StraightCriterion, SyntheticParams};
use crate::error::{Error, Result};
use crate::eval::fingerprint;
use crate::model::{HeadKind, ModelConfig, OptimizerKind, TrainConfig};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "seed from which every random stream is derived"),
    ("run.out_dir", "out", "directory for checkpoints, curves and reports"),
    ("data.source", "synthetic", "synthetic | ngsim"),
    ("data.path", "", "NGSim trajectory CSV (data.source = ngsim)"),
    ("data.dir", "", "dataset cache directory (empty: <run.out_dir>/data)"),
    ("data.segment_len", "200", "frames per NGSim segment"),
    ("data.split_ratio", "3:1", "temporal train:test ratio"),
    ("data.t0", "50", "scene index of the current step"),
    ("data.history", "50", "history frames fed to the encoder (<= data.t0)"),
    ("data.future", "60", "future frames kept as supervision"),
    ("data.neighbors", "8", "nearest neighbours kept per sample"),
    (
        "data.straight.lateral_range",
        "0.5",
        "straight segment: max lateral range (m)",
    ),
    (
        "data.straight.speed_std",
        "0.5",
        "straight segment: max speed std (m/s)",
    ),
    (
        "data.straight.fraction",
        "0.5",
        "fraction of straight training segments kept",
    ),
    (
        "synthetic.kind",
        "mixed",
        "const_vel | const_acc | lane_change | arc | mixed",
    ),
    ("synthetic.n", "400", "number of synthetic scenes (train + test)"),
    ("synthetic.len", "111", "frames per synthetic scene"),
    ("synthetic.speed_min", "10", "minimum speed (m/s)"),
    ("synthetic.speed_max", "30", "maximum speed (m/s)"),
    (
        "synthetic.accel_min",
        "0",
        "minimum |acceleration| for const_acc (m/s^2)",
    ),
    (
        "synthetic.accel_max",
        "3",
        "maximum |acceleration| for const_acc (m/s^2)",
    ),
    ("synthetic.lane_offset", "3.5", "lateral offset of a lane change (m)"),
    (
        "synthetic.curvature_max",
        "0.006666666666666667",
        "maximum arc curvature (1/m)",
    ),
    ("synthetic.noise", "0", "std of additive position noise (m)"),
    ("synthetic.neighbors", "2", "neighbour vehicles per scene"),
    ("anchors.mode", "fixed", "fixed | random"),
    ("anchors.count", "25", "anchor points per sample"),
    ("anchors.min", "35", "random anchoring: smallest final offset"),
    ("anchors.max", "55", "random anchoring: largest final offset"),
    ("horizon_frames", "50", "prediction horizon (frames)"),
    ("model.head", "polynomial", "polynomial | coordinates"),
    ("model.units", "32", "units per GRU layer"),
    ("model.d_x", "3", "lateral polynomial degree"),
    ("model.d_y", "3", "longitudinal polynomial degree"),
    ("model.decoder_steps", "5", "decoder steps on the constant input"),
    (
        "model.skip",
        "true",
        "also feed the target's latest input state to the output layer",
    ),
    ("train.seed", "", "initialisation/shuffling seed (empty: run.seed)"),
    ("train.lr", "0.01", "initial learning rate"),
    (
        "train.lr_final",
        "0.001",
        "final learning rate as a fraction of train.lr (cosine)",
    ),
    ("train.epochs", "20", "passes over the training set"),
    ("train.batch", "32", "samples per step"),
    ("train.optimizer", "adam", "adam | sgd"),
    ("train.clip", "1", "elementwise gradient clamp (<= 0 disables)"),
    ("eval.offsets", "10,20,30,40,50", "evaluation offsets (frames)"),
    (
        "eval.checkpoint",
        "",
        "checkpoint to evaluate (empty: <run.out_dir>/model.ckpt)",
    ),
];

/// Keys that name locations only and are left out of the fingerprint.
const PATH_KEYS: [&str; 3] = ["run.out_dir", "data.dir", "eval.checkpoint"];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d)
}

/// Explicitly set values; everything else falls back to [`KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Builder-style [`RunConfig::set`].
    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, value.to_string())?;
        Ok(self)
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides on top of the current values.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| default_of(key))
            .unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("`{key}` has invalid value `{raw}`")))
    }

    /// Every key with its effective value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|(k, _, _)| (k.to_string(), self.get(k).to_string()))
            .collect()
    }

    /// Text form listing every effective value.
    pub fn to_text(&self) -> String {
        self.resolved().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Fingerprint of the effective values, ignoring output locations.
    pub fn fingerprint(&self) -> String {
        let mut map = self.resolved();
        for k in PATH_KEYS {
            map.remove(k);
        }
        fingerprint(&map)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_key("run.seed")
    }

    pub fn train_seed(&self) -> Result<u64> {
        if self.get("train.seed").is_empty() {
            self.seed()
        } else {
            self.parse_key("train.seed")
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("run.out_dir"))
    }

    pub fn data_dir(&self) -> PathBuf {
        match self.get("data.dir") {
            "" => self.out_dir().join("data"),
            d => PathBuf::from(d),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("eval.checkpoint") {
            "" => self.out_dir().join("model.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn frame_rate(&self) -> f64 {
        crate::data::DEFAULT_FRAME_RATE
    }

    pub fn split_ratio(&self) -> Result<(u32, u32)> {
        let raw = self.get("data.split_ratio");
        let bad = || Error::Config(format!("`data.split_ratio` must look like `3:1`, got `{raw}`"));
        let (a, b) = raw.split_once(':').ok_or_else(bad)?;
        let ratio = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if ratio.0 + ratio.1 == 0 {
            return Err(bad());
        }
        Ok(ratio)
    }

    pub fn layout(&self) -> Result<SampleLayout> {
        let layout = SampleLayout {
            history: self.parse_key("data.history")?,
            future: self.parse_key("data.future")?,
            max_neighbors: self.parse_key("data.neighbors")?,
        };
        let t0: usize = self.parse_key("data.t0")?;
        if layout.history == 0 || layout.history > t0 {
            return Err(Error::Config(format!(
                "data.history must be in 1..={t0} (data.t0), got {}",
                layout.history
            )));
        }
        Ok(layout)
    }

    pub fn t0(&self) -> Result<usize> {
        self.parse_key("data.t0")
    }

    pub fn segment_config(&self) -> Result<SegmentConfig> {
        Ok(SegmentConfig {
            segment_len: self.parse_key("data.segment_len")?,
            split: self.split_ratio()?,
            t0: self.t0()?,
            max_neighbors: self.parse_key("data.neighbors")?,
        })
    }

    pub fn straight(&self) -> Result<(StraightCriterion, f64)> {
        Ok((
            StraightCriterion {
                lateral_range: self.parse_key("data.straight.lateral_range")?,
                speed_std: self.parse_key("data.straight.speed_std")?,
            },
            self.parse_key("data.straight.fraction")?,
        ))
    }

    pub fn synthetic_kind(&self) -> Result<MotionKind> {
        self.get("synthetic.kind").parse()
    }

    pub fn synthetic_params(&self) -> Result<SyntheticParams> {
        let p = SyntheticParams {
            frame_rate: self.frame_rate(),
            len: self.parse_key("synthetic.len")?,
            t0: self.t0()?,
            speed_min: self.parse_key("synthetic.speed_min")?,
            speed_max: self.parse_key("synthetic.speed_max")?,
            accel_min: self.parse_key("synthetic.accel_min")?,
            accel_max: self.parse_key("synthetic.accel_max")?,
            lane_offset: self.parse_key("synthetic.lane_offset")?,
            curvature_max: self.parse_key("synthetic.curvature_max")?,
            noise_std: self.parse_key("synthetic.noise")?,
            neighbors: self.parse_key("synthetic.neighbors")?,
            ..SyntheticParams::default()
        };
        p.validate().map_err(Error::into_config)?;
        Ok(p)
    }

    pub fn horizon(&self) -> Result<u32> {
        self.parse_key("horizon_frames")
    }

    pub fn anchor_source(&self) -> Result<AnchorSource> {
        let count: u32 = self.parse_key("anchors.count")?;
        let cfg_err = Error::into_config;
        match self.get("anchors.mode") {
            "fixed" => AnchorSource::fixed(count, self.horizon()?).map_err(cfg_err),
            "random" => AnchorSource::random(count, self.parse_key("anchors.min")?, self.parse_key("anchors.max")?)
                .map_err(cfg_err),
            other => Err(Error::Config(format!(
                "anchors.mode must be `fixed` or `random`, got `{other}`"
            ))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let head: HeadKind = self.get("model.head").parse().map_err(Error::into_config)?;
        let coord_offsets = match head {
            HeadKind::Polynomial => Vec::new(),
            HeadKind::Coordinates => {
                if self.get("anchors.mode") != "fixed" {
                    return Err(Error::Config(
                        "the coordinate head predicts fixed offsets; set anchors.mode = fixed".into(),
                    ));
                }
                fixed_schedule(self.parse_key("anchors.count")?, self.horizon()?)
                    .map_err(Error::into_config)?
                    .offsets()
                    .to_vec()
            }
        };
        let cfg = ModelConfig {
            head,
            units: self.parse_key("model.units")?,
            d_x: self.parse_key("model.d_x")?,
            d_y: self.parse_key("model.d_y")?,
            decoder_steps: self.parse_key("model.decoder_steps")?,
            horizon_frames: self.horizon()?,
            coord_offsets,
            skip: self.parse_key("model.skip")?,
            ..ModelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer: OptimizerKind = self.get("train.optimizer").parse().map_err(Error::into_config)?;
        let cfg = TrainConfig {
            seed: self.train_seed()?,
            lr: self.parse_key("train.lr")?,
            lr_final: self.parse_key("train.lr_final")?,
            epochs: self.parse_key("train.epochs")?,
            batch: self.parse_key("train.batch")?,
            optimizer,
            clip: self.parse_key("train.clip")?,
        };
        if cfg.batch == 0 {
            return Err(Error::Config("train.batch must be >= 1".into()));
        }
        if !cfg.lr.is_finite() || cfg.lr < 0.0 || cfg.lr_final.is_nan() || cfg.lr_final < 0.0 {
            return Err(Error::Config("train.lr and train.lr_final must be >= 0".into()));
        }
        Ok(cfg)
    }

    pub fn eval_offsets(&self) -> Result<Vec<u32>> {
        let raw = self.get("eval.offsets");
        let offsets: Vec<u32> = raw
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("`eval.offsets` must be a comma list of frames, got `{raw}`")))?;
        if offsets.is_empty() || offsets[0] == 0 || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "`eval.offsets` must be increasing and >= 1, got `{raw}`"
            )));
        }
        Ok(offsets)
    }

    /// Checks every typed value and the cross-key constraints.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.train_seed()?;
        let layout = self.layout()?;
        self.segment_config()?;
        let (_, fraction) = self.straight()?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config("data.straight.fraction must be in [0, 1]".into()));
        }
        let anchors = self.anchor_source()?;
        let model = self.model_config()?;
        self.train_config()?;
        let offsets = self.eval_offsets()?;
        let t0 = self.t0()?;
        let scene_len: usize = match self.get("data.source") {
            "synthetic" => {
                self.synthetic_kind().map_err(Error::into_config)?;
                self.synthetic_params()?;
                self.parse_key("synthetic.len")?
            }
            "ngsim" => {
                if self.get("data.path").is_empty() {
                    return Err(Error::Config("data.source = ngsim needs data.path".into()));
                }
                self.parse_key("data.segment_len")?
            }
            other => {
                return Err(Error::Config(format!(
                    "data.source must be `synthetic` or `ngsim`, got `{other}`"
                )))
            }
        };
        if t0 + layout.future >= scene_len {
            return Err(Error::Config(format!(
                "data.t0 + data.future = {} must be below the scene length {scene_len}",
                t0 + layout.future
            )));
        }
        let need = match model.head {
            HeadKind::Polynomial => anchors.max_offset(),
            HeadKind::Coordinates => *model.coord_offsets.last().expect("validated"),
        };
        if need as usize > layout.future {
            return Err(Error::Config(format!(
                "anchors reach offset {need} but data.future is {}",
                layout.future
            )));
        }
        if *offsets.last().unwrap() as usize > layout.future {
            return Err(Error::Config(format!(
                "eval.offsets reach {} but data.future is {}",
                offsets.last().unwrap(),
                layout.future
            )));
        }
        Ok(())
    }
}

/// Help text listing every key, its default and meaning.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|(k, d, h)| {
            let d = if d.is_empty() { "\"\"" } else { d };
            format!("  {k:<width$}  default {d}  {h}\n")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::new().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("model.layers = 4\n").is_err());
        assert!(RunConfig::new().with("nope", 1).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let mut cfg = RunConfig::parse("# comment\nmodel.units = 8  # trailing\n\ntrain.lr=0.5\n").unwrap();
        cfg.apply_overrides(&["model.units=16"]).unwrap();
        assert_eq!(cfg.get("model.units"), "16");
        assert_eq!(cfg.get("train.lr"), "0.5");
        assert_eq!(cfg.get("model.d_x"), "3");
    }

    #[test]
    fn fingerprint_ignores_paths() {
        let a = RunConfig::new().with("run.out_dir", "/tmp/a").unwrap();
        let b = RunConfig::new().with("run.out_dir", "/tmp/b").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = RunConfig::new().with("run.seed", 1).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn coordinate_head_takes_fixed_offsets() {
        let cfg = RunConfig::new()
            .with("model.head", "coordinates")
            .unwrap()
            .with("anchors.count", 2)
            .unwrap();
        assert_eq!(cfg.model_config().unwrap().coord_offsets, vec![25, 50]);
        let random = cfg.with("anchors.mode", "random").unwrap();
        assert!(random.model_config().is_err());
    }

    #[test]
    fn cross_key_checks() {
        let too_far = RunConfig::new().with("eval.offsets", "10,70").unwrap();
        assert!(too_far.validate().is_err());
        let long_history = RunConfig::new().with("data.history", 51).unwrap();
        assert!(long_history.validate().is_err());
        let bad_kind = RunConfig::new().with("synthetic.kind", "zigzag").unwrap();
        let err = bad_kind.validate().unwrap_err().to_string();
        assert!(err.contains("const_vel"), "{err}");
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for (k, _, _) in KEYS {
            assert!(help.contains(k));
        }
    }
}
