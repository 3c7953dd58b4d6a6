//! End-to-end steps shared by the command line and the tests: dataset
//! construction, training, evaluation and the comparison studies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{
    build_samples, filter_straight, gen_synthetic, ingest_ngsim, segment_and_split, test_count, Dataset, Sample,
    SampleLayout, Scene,
};
use crate::error::{Error, Result};
use crate::eval::{ade_curve, fingerprint, rmse_at_offsets, table1, EvalReport, Extrapolated, StudyReport};
use crate::model::{train, HeadKind, LossPoint, Model, Normalizer};

const DATA_STREAM: u64 = 10;
const FILTER_STREAM: u64 = 11;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Builds the train/test scenes described by the `data.*` and
/// `synthetic.*` keys.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let mut manifest = BTreeMap::new();
    manifest.insert("seed".to_string(), seed.to_string());
    manifest.insert("source".to_string(), cfg.get("data.source").to_string());
    let (train, test) = match cfg.get("data.source") {
        "ngsim" => {
            let path = std::path::PathBuf::from(cfg.get("data.path"));
            let tracks = ingest_ngsim(&path)?;
            let split = segment_and_split(&tracks, &cfg.segment_config()?)?;
            let (criterion, fraction) = cfg.straight()?;
            let before = split.train.len();
            let train = filter_straight(split.train, fraction, &criterion, &mut stream(seed, FILTER_STREAM))?;
            manifest.insert("tracks".into(), tracks.len().to_string());
            manifest.insert("skipped_tracks".into(), split.skipped_tracks.to_string());
            manifest.insert("straight_dropped".into(), (before - train.len()).to_string());
            (train, split.test)
        }
        _ => {
            let kind = cfg.synthetic_kind()?;
            let n: usize = cfg.parse_key("synthetic.n")?;
            let mut scenes = gen_synthetic(kind, &cfg.synthetic_params()?, n, &mut stream(seed, DATA_STREAM))?;
            let n_test = test_count(n, cfg.split_ratio()?);
            let test = scenes.split_off(n - n_test);
            manifest.insert("synthetic.kind".into(), kind.to_string());
            (scenes, test)
        }
    };
    Ok(Dataset { train, test, manifest })
}

/// Builds the dataset and writes it to the configured data directory. The
/// directory is checked for writability before any work.
pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let probe = dir.join(".write-test");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    let _ = std::fs::remove_file(&probe);
    let ds = build_dataset(cfg)?;
    ds.save(&dir)?;
    Ok(ds)
}

/// The sample window `[t0 - history, t0 + future]` of a scene.
fn window(scene: &Scene, t0: usize, layout: &SampleLayout) -> Result<Scene> {
    let start = scene.start_frame + (t0 - layout.history) as i64;
    let end = scene.start_frame + (t0 + layout.future + 1) as i64;
    let ego = scene
        .ego
        .clip(start, end)
        .filter(|e| e.len() as i64 == end - start)
        .ok_or_else(|| {
            Error::Data(format!(
                "scene of agent {} ({} frames) is too short for t0 {t0} + {} future frames",
                scene.ego.agent_id, scene.len, layout.future
            ))
        })?;
    let neighbors = scene
        .neighbors
        .iter()
        .filter_map(|n| n.clip(start, end))
        .filter(|n| n.len() >= 2)
        .collect();
    Scene::new(ego, neighbors)
}

pub fn samples_of(cfg: &RunConfig, scenes: &[Scene]) -> Result<Vec<Sample>> {
    let layout = cfg.layout()?;
    let t0 = cfg.t0()?;
    let windows = scenes
        .iter()
        .map(|s| window(s, t0, &layout))
        .collect::<Result<Vec<_>>>()?;
    build_samples(&windows, &layout)
}

/// Fresh model (normalizer fitted on `train_set`) trained per the config.
pub fn train_model(cfg: &RunConfig, train_set: &[Sample]) -> Result<(Model, Vec<LossPoint>)> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let norm = Normalizer::fit(train_set, model_cfg.horizon_frames)?;
    let tc = cfg.train_config()?;
    let mut model = Model::new(model_cfg, &norm, tc.seed)?;
    let curve = train(&mut model, train_set, &cfg.anchor_source()?, &tc)?;
    Ok((model, curve))
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("step,epoch,lr,loss\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{}\n", p.step, p.epoch, p.lr, p.loss));
    }
    s
}

/// RMSE/ADE report at `eval.offsets`.
pub fn evaluate(cfg: &RunConfig, model: &Model, test: &[Sample]) -> Result<EvalReport> {
    let mut r = rmse_at_offsets(model, test, &cfg.eval_offsets()?, cfg.frame_rate())?;
    r.fingerprint = cfg.fingerprint();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Fixed-2 vs fixed-25 vs random-2 polynomial models.
    Anchoring,
    /// Both heads with 5 and 25 anchors.
    AnchorCount,
    /// Beyond-horizon evaluation against least-squares fits.
    Extrapolation,
    /// Coordinate vs polynomial RMSE table at 1..5 s.
    Table1,
}

impl Study {
    pub const ALL: [Study; 4] = [
        Study::Anchoring,
        Study::AnchorCount,
        Study::Extrapolation,
        Study::Table1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Anchoring => "anchoring",
            Study::AnchorCount => "anchor_count",
            Study::Extrapolation => "extrapolation",
            Study::Table1 => "table1",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Study::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown study `{s}`; valid studies: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub report: StudyReport,
    /// Markdown table (table1 study only).
    pub table: Option<String>,
    /// Per-model RMSE reports (table1 study only).
    pub evals: Vec<(String, EvalReport)>,
}

fn even_offsets(max: u32) -> Vec<u32> {
    (1..=max / 2).map(|k| 2 * k).collect()
}

fn variants(study: Study, cfg: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let v = |pairs: &[(&str, String)]| -> Result<RunConfig> {
        let mut c = cfg.clone();
        for (k, val) in pairs {
            c.set(k, val.clone())?;
        }
        Ok(c)
    };
    let s = |x: &str| x.to_string();
    Ok(match study {
        Study::Anchoring => vec![
            (
                s("fixed-2"),
                v(&[
                    ("model.head", s("polynomial")),
                    ("anchors.mode", s("fixed")),
                    ("anchors.count", s("2")),
                ])?,
            ),
            (
                s("fixed-25"),
                v(&[
                    ("model.head", s("polynomial")),
                    ("anchors.mode", s("fixed")),
                    ("anchors.count", s("25")),
                ])?,
            ),
            (
                s("random-2"),
                v(&[
                    ("model.head", s("polynomial")),
                    ("anchors.mode", s("random")),
                    ("anchors.count", s("2")),
                ])?,
            ),
        ],
        Study::AnchorCount => {
            let mut out = Vec::new();
            for (head, tag) in [("polynomial", "poly"), ("coordinates", "coord")] {
                for count in [5, 25] {
                    out.push((
                        format!("{tag}-{count}"),
                        v(&[
                            ("model.head", s(head)),
                            ("anchors.mode", s("fixed")),
                            ("anchors.count", count.to_string()),
                        ])?,
                    ));
                }
            }
            out
        }
        Study::Extrapolation => {
            let base = [
                ("horizon_frames", s("40")),
                ("anchors.mode", s("fixed")),
                ("anchors.count", s("4")),
            ];
            let with = |head: &str| {
                let mut p = base.to_vec();
                p.push(("model.head", s(head)));
                v(&p)
            };
            vec![(s("poly"), with("polynomial")?), (s("coord"), with("coordinates")?)]
        }
        Study::Table1 => vec![
            (
                s("coords"),
                v(&[("model.head", s("coordinates")), ("anchors.mode", s("fixed"))])?,
            ),
            (
                s("poly"),
                v(&[("model.head", s("polynomial")), ("anchors.mode", s("random"))])?,
            ),
        ],
    })
}

/// Trains every model variant of the study (in parallel, each run
/// single-threaded and seeded) on `dataset` and evaluates them.
pub fn run_study_on(study: Study, cfg: &RunConfig, dataset: &Dataset) -> Result<StudyOutcome> {
    let runs = variants(study, cfg)?;
    for (_, c) in &runs {
        c.validate()?;
    }
    let train_set = samples_of(cfg, &dataset.train)?;
    let test_set = samples_of(cfg, &dataset.test)?;
    let models: Vec<(String, Model)> = runs
        .par_iter()
        .map(|(name, c)| train_model(c, &train_set).map(|(m, _)| (name.clone(), m)))
        .collect::<Result<_>>()?;

    let mut fp = cfg.resolved();
    for k in ["run.out_dir", "data.dir", "eval.checkpoint"] {
        fp.remove(k);
    }
    fp.insert("study".into(), study.name().into());
    let mut report = StudyReport {
        study: study.name().into(),
        fingerprint: fingerprint(&fp),
        frame_rate: cfg.frame_rate(),
        curves: Vec::new(),
        skipped: 0,
    };
    let mut table = None;
    let mut evals = Vec::new();
    match study {
        Study::Anchoring | Study::AnchorCount => {
            let mut offsets = even_offsets(cfg.horizon()?);
            if study == Study::Anchoring && !offsets.contains(&25) {
                offsets.push(25);
                offsets.sort_unstable();
            }
            for (name, m) in &models {
                let (curve, skipped) = ade_curve(m, &test_set, &offsets, name)?;
                report.skipped = report.skipped.max(skipped);
                report.curves.push(curve);
            }
        }
        Study::Extrapolation => {
            let offsets = even_offsets(60);
            let poly = &models[0].1;
            let coord = &models[1].1;
            let d = poly.config().d_x;
            let (c, skipped) = ade_curve(poly, &test_set, &offsets, "poly")?;
            report.skipped = skipped;
            report.curves.push(c);
            for degree in [1, d] {
                let p = Extrapolated { model: coord, degree };
                let (c, _) = ade_curve(&p, &test_set, &offsets, &format!("coord-fit-{degree}"))?;
                report.curves.push(c);
            }
        }
        Study::Table1 => {
            let offsets = cfg.eval_offsets()?;
            for (name, m) in &models {
                let mut r = rmse_at_offsets(m, &test_set, &offsets, cfg.frame_rate())?;
                r.fingerprint = report.fingerprint.clone();
                let (curve, _) = ade_curve(m, &test_set, &offsets, name)?;
                report.curves.push(curve);
                evals.push((name.clone(), r));
            }
            table = Some(table1(Some(&evals[0].1), Some(&evals[1].1)));
        }
    }
    Ok(StudyOutcome { report, table, evals })
}

pub fn run_study(study: Study, cfg: &RunConfig) -> Result<StudyOutcome> {
    let ds = build_dataset(cfg)?;
    run_study_on(study, cfg, &ds)
}

/// Whether a checkpointed model matches the configured head.
pub fn check_head(cfg: &RunConfig, model: &Model) -> Result<()> {
    let want: HeadKind = cfg.get("model.head").parse().map_err(Error::into_config)?;
    if model.config().head != want {
        return Err(Error::Config(format!(
            "checkpoint holds a {} head but model.head = {want}",
            model.config().head
        )));
    }
    Ok(())
}
