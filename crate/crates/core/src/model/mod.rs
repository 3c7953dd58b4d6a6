//! GRU encoder, attention over agents and GRU decoder with either a
//! fixed-offset coordinate head or a polynomial head.

mod attention;
mod gru;
mod head;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use attention::{attend, attention, masked_attention};
pub use gru::{gru_cell, GruParams, GruWeights};
pub use head::{CoordPrediction, ModelOutput};
pub use train::{train, LossPoint, OptimizerKind, TrainConfig};

use crate::data::{Sample, STATE_DIM};
use crate::error::{Error, Result};
use crate::tensor::{Array, Checkpoint, Graph, ParamId, ParamStore, Var};

/// `U(-1/sqrt(rows), 1/sqrt(rows))`, rows being the fan-in.
pub(crate) fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array {
    let limit = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Array::new(&[rows, cols], data).expect("shape matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Coordinates,
    Polynomial,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Coordinates => "coordinates",
            HeadKind::Polynomial => "polynomial",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinates" | "coord" => Ok(HeadKind::Coordinates),
            "polynomial" | "poly" => Ok(HeadKind::Polynomial),
            _ => Err(Error::invalid(format!(
                "unknown head `{s}`; expected `coordinates` or `polynomial`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub units: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Decoder steps unrolled on the learned constant input.
    pub decoder_steps: usize,
    pub d_x: usize,
    pub d_y: usize,
    /// Time scale (frames) for the polynomial coefficients.
    pub horizon_frames: u32,
    /// Offsets predicted by the coordinate head.
    pub coord_offsets: Vec<u32>,
    /// Feed the target's most recent input state straight to the output
    /// layer next to the decoder state.
    pub skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Polynomial,
            units: 32,
            encoder_layers: 2,
            decoder_layers: 3,
            decoder_steps: 5,
            d_x: 3,
            d_y: 3,
            horizon_frames: 50,
            coord_offsets: Vec::new(),
            skip: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.units", self.units),
            ("model.encoder_layers", self.encoder_layers),
            ("model.decoder_layers", self.decoder_layers),
            ("model.decoder_steps", self.decoder_steps),
            ("model.d_x", self.d_x),
            ("model.d_y", self.d_y),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be >= 1")));
            }
        }
        if self.horizon_frames == 0 {
            return Err(Error::Config("horizon_frames must be >= 1".into()));
        }
        if self.head == HeadKind::Coordinates {
            if self.coord_offsets.is_empty() {
                return Err(Error::Config("coordinate head needs at least one offset".into()));
            }
            crate::anchoring::AnchorSchedule::new(self.coord_offsets.clone())?;
        }
        Ok(())
    }

    /// Raw output width: `4T` for coordinates, `2(d_x + d_y)` for polynomials.
    pub fn output_width(&self) -> usize {
        match self.head {
            HeadKind::Coordinates => 4 * self.coord_offsets.len(),
            HeadKind::Polynomial => 2 * (self.d_x + self.d_y),
        }
    }

    fn to_meta(&self) -> BTreeMap<String, String> {
        let offsets: Vec<String> = self.coord_offsets.iter().map(u32::to_string).collect();
        [
            ("model.head", self.head.to_string()),
            ("model.units", self.units.to_string()),
            ("model.encoder_layers", self.encoder_layers.to_string()),
            ("model.decoder_layers", self.decoder_layers.to_string()),
            ("model.decoder_steps", self.decoder_steps.to_string()),
            ("model.d_x", self.d_x.to_string()),
            ("model.d_y", self.d_y.to_string()),
            ("model.skip", self.skip.to_string()),
            (
                "model.coord_offsets",
                if offsets.is_empty() {
                    "-".into()
                } else {
                    offsets.join(",")
                },
            ),
            ("horizon_frames", self.horizon_frames.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = meta
                .get(key)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Data(format!("checkpoint `{key}` has bad value `{raw}`")))
        }
        let offsets: String = get(meta, "model.coord_offsets")?;
        let coord_offsets = if offsets == "-" {
            Vec::new()
        } else {
            offsets
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Data(format!("bad coordinate offset `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        let cfg = Self {
            head: get(meta, "model.head")?,
            units: get(meta, "model.units")?,
            encoder_layers: get(meta, "model.encoder_layers")?,
            decoder_layers: get(meta, "model.decoder_layers")?,
            decoder_steps: get(meta, "model.decoder_steps")?,
            d_x: get(meta, "model.d_x")?,
            d_y: get(meta, "model.d_y")?,
            horizon_frames: get(meta, "horizon_frames")?,
            coord_offsets,
            skip: get(meta, "model.skip")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Input standardisation and output scale, fitted on training data and
/// stored with the model as frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; STATE_DIM],
    pub std: [f64; STATE_DIM],
    /// Metres corresponding to one raw output unit.
    pub scale: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; STATE_DIM],
            std: [1.0; STATE_DIM],
            scale: 1.0,
        }
    }

    /// Feature moments over every present (non-masked) agent frame; the
    /// scale is the RMS ego displacement at `horizon` (or the last future
    /// frame when shorter), at least 1 m.
    pub fn fit(samples: &[Sample], horizon: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot fit a normalizer on an empty sample set".into()));
        }
        let mut n = 0usize;
        let mut sum = [0.0; STATE_DIM];
        let mut sq = [0.0; STATE_DIM];
        for s in samples {
            for frame in s.agents.iter().flatten() {
                if frame.iter().all(|&v| v == 0.0) {
                    continue;
                }
                n += 1;
                for k in 0..STATE_DIM {
                    sum[k] += frame[k];
                    sq[k] += frame[k] * frame[k];
                }
            }
        }
        let mut norm = Self::identity();
        if n > 0 {
            for k in 0..STATE_DIM {
                let mean = sum[k] / n as f64;
                let var = (sq[k] / n as f64 - mean * mean).max(0.0);
                norm.mean[k] = mean;
                norm.std[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
            }
        }
        let ms: f64 = samples
            .iter()
            .map(|s| {
                let p = s.future[(horizon as usize).min(s.future.len() - 1)];
                p[0] * p[0] + p[1] * p[1]
            })
            .sum::<f64>()
            / samples.len() as f64;
        norm.scale = ms.sqrt().max(1.0);
        Ok(norm)
    }
}

#[derive(Debug, Clone)]
struct ParamIds {
    norm_mean: ParamId,
    norm_std: ParamId,
    norm_scale: ParamId,
    encoder: Vec<GruParams>,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bridge: Vec<(ParamId, ParamId)>,
    dec_input: ParamId,
    decoder: Vec<GruParams>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Parameters plus wiring of the encoder-attention-decoder.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

impl Model {
    pub fn new(config: ModelConfig, normalizer: &Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = config.units;
        let mut store = ParamStore::new();
        let norm_mean = store.insert_frozen("norm.mean", Array::row(&normalizer.mean))?;
        let norm_std = store.insert_frozen("norm.std", Array::row(&normalizer.std))?;
        let norm_scale = store.insert_frozen("norm.scale", Array::scalar(normalizer.scale))?;
        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let input = if l == 0 { STATE_DIM } else { u };
            encoder.push(GruParams::register(
                &mut store,
                &format!("enc.{l}"),
                input,
                u,
                &mut rng,
            )?);
        }
        let wq = store.insert("att.wq", init_uniform(u, u, &mut rng))?;
        let wk = store.insert("att.wk", init_uniform(u, u, &mut rng))?;
        let wv = store.insert("att.wv", init_uniform(u, u, &mut rng))?;
        let mut bridge = Vec::new();
        for l in 0..config.decoder_layers {
            let w = store.insert(format!("bridge.{l}.w"), init_uniform(2 * u, u, &mut rng))?;
            let b = store.insert(format!("bridge.{l}.b"), Array::zeros(&[1, u]))?;
            bridge.push((w, b));
        }
        let dec_input = store.insert("dec.input", init_uniform(u, 1, &mut rng).reshape(&[1, u])?)?;
        let mut decoder = Vec::new();
        for l in 0..config.decoder_layers {
            decoder.push(GruParams::register(&mut store, &format!("dec.{l}"), u, u, &mut rng)?);
        }
        let head_in = u + if config.skip { STATE_DIM } else { 0 };
        let head_w = store.insert("head.w", init_uniform(head_in, config.output_width(), &mut rng))?;
        let head_b = store.insert("head.b", Array::zeros(&[1, config.output_width()]))?;
        Ok(Self {
            config,
            params: store,
            ids: ParamIds {
                norm_mean,
                norm_std,
                norm_scale,
                encoder,
                wq,
                wk,
                wv,
                bridge,
                dec_input,
                decoder,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Metres per raw output unit.
    pub fn output_scale(&self) -> f64 {
        self.params.value(self.ids.norm_scale).data()[0]
    }

    /// Sets the output layer to zero so every prediction is the origin.
    pub fn zero_head(&mut self) {
        self.params.get_mut(self.ids.head_w).value.fill(0.0);
        self.params.get_mut(self.ids.head_b).value.fill(0.0);
    }

    fn normalized_inputs(&self, samples: &[&Sample]) -> Result<(Vec<Array>, Vec<usize>)> {
        let hist = samples[0].history_len();
        if hist == 0 {
            return Err(Error::invalid("empty history: need at least one frame"));
        }
        let mut offsets = Vec::with_capacity(samples.len() + 1);
        offsets.push(0);
        for s in samples {
            if s.agents.is_empty() {
                return Err(Error::invalid(format!(
                    "sample of agent {} has no target agent",
                    s.agent_id
                )));
            }
            if s.agents.iter().any(|a| a.len() != hist) {
                return Err(Error::invalid(format!(
                    "batch mixes history lengths (expected {hist} frames, agent {})",
                    s.agent_id
                )));
            }
            offsets.push(offsets.last().unwrap() + s.agents.len());
        }
        let rows = *offsets.last().unwrap();
        let mean = self.params.value(self.ids.norm_mean).data();
        let std = self.params.value(self.ids.norm_std).data();
        let mut steps = Vec::with_capacity(hist);
        for k in 0..hist {
            let mut data = Vec::with_capacity(rows * STATE_DIM);
            for s in samples {
                for agent in &s.agents {
                    data.extend((0..STATE_DIM).map(|j| (agent[k][j] - mean[j]) / std[j]));
                }
            }
            steps.push(Array::new(&[rows, STATE_DIM], data)?);
        }
        Ok((steps, offsets))
    }

    /// Raw head outputs, one row per sample (`B x output_width`).
    pub fn forward_graph(&self, g: &mut Graph, samples: &[&Sample]) -> Result<Var> {
        if samples.is_empty() {
            return Err(Error::invalid("forward on an empty batch"));
        }
        let u = self.config.units;
        let (steps, offsets) = self.normalized_inputs(samples)?;
        let rows = *offsets.last().unwrap();
        let enc: Vec<GruWeights> = self.ids.encoder.iter().map(|p| p.bind(g, &self.params)).collect();
        let mut h: Vec<Var> = (0..enc.len()).map(|_| g.input(Array::zeros(&[rows, u]))).collect();
        let mut last_input = None;
        for x in steps {
            let mut input = g.input(x);
            last_input = Some(input);
            for (l, w) in enc.iter().enumerate() {
                h[l] = gru_cell(g, w, input, h[l])?;
                input = h[l];
            }
        }
        let states = *h.last().unwrap();
        let last_input = last_input.expect("history is non-empty");

        let pick_targets = |g: &mut Graph, v: Var| -> Result<Var> {
            let parts = offsets[..samples.len()]
                .iter()
                .map(|&o| g.slice_rows(v, o, o + 1))
                .collect::<Result<Vec<_>>>()?;
            g.concat_rows(&parts)
        };
        let target = pick_targets(g, states)?;

        let (wq, wk, wv) = (
            g.param(&self.params, self.ids.wq),
            g.param(&self.params, self.ids.wk),
            g.param(&self.params, self.ids.wv),
        );
        let q = g.matmul(target, wq)?;
        let k = g.matmul(states, wk)?;
        let v = g.matmul(states, wv)?;
        let ctx = masked_attention(g, q, k, v, &offsets)?;
        let joined = g.concat_cols(&[target, ctx])?;

        let mut dh = Vec::with_capacity(self.ids.bridge.len());
        for &(w, b) in &self.ids.bridge {
            let (w, b) = (g.param(&self.params, w), g.param(&self.params, b));
            let z = g.affine(joined, w, b)?;
            dh.push(g.tanh(z)?);
        }
        let dec: Vec<GruWeights> = self.ids.decoder.iter().map(|p| p.bind(g, &self.params)).collect();
        let zeros = g.input(Array::zeros(&[samples.len(), u]));
        let dec_in = g.param(&self.params, self.ids.dec_input);
        let dec_in = g.add(zeros, dec_in)?;
        for _ in 0..self.config.decoder_steps {
            let mut input = dec_in;
            for (l, w) in dec.iter().enumerate() {
                dh[l] = gru_cell(g, w, input, dh[l])?;
                input = dh[l];
            }
        }
        let mut features = *dh.last().unwrap();
        if self.config.skip {
            let recent = pick_targets(g, last_input)?;
            features = g.concat_cols(&[features, recent])?;
        }
        let (hw, hb) = (
            g.param(&self.params, self.ids.head_w),
            g.param(&self.params, self.ids.head_b),
        );
        g.affine(features, hw, hb)
    }

    /// Prediction for a single sample.
    pub fn forward(&self, sample: &Sample) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let raw = self.forward_graph(&mut g, &[sample])?;
        Ok(self.decode(g.value(raw))?.remove(0))
    }

    /// Batched, parallel inference. Output order follows `samples`.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<ModelOutput>> {
        const CHUNK: usize = 64;
        let chunks: Vec<Vec<ModelOutput>> = samples
            .par_chunks(CHUNK)
            .map(|chunk| {
                let refs: Vec<&Sample> = chunk.iter().collect();
                let uniform = refs.iter().all(|s| s.history_len() == refs[0].history_len());
                if !uniform {
                    return refs.iter().map(|s| self.forward(s)).collect();
                }
                let mut g = Graph::new();
                let raw = self.forward_graph(&mut g, &refs)?;
                self.decode(g.value(raw))
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: self.config.to_meta(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ckpt.meta)?;
        let mut model = Self::new(config, &Normalizer::identity(), 0)?;
        model.params.load_values(&ckpt.params)?;
        Ok(model)
    }
}
