use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HeadKind, Model};
use crate::anchoring::AnchorSource;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Adam, Graph, Optimizer, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::invalid(format!(
                "unknown optimizer `{s}`; expected `sgd` or `adam`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay);
    /// 1 keeps it constant.
    pub lr_final: f64,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    /// Elementwise gradient clamp, `<= 0` disables.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 3e-3,
            lr_final: 0.05,
            epochs: 20,
            batch: 32,
            optimizer: OptimizerKind::Adam,
            clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

fn cosine_lr(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return cfg.lr;
    }
    let frac = step as f64 / (total - 1) as f64;
    let lo = cfg.lr * cfg.lr_final;
    lo + 0.5 * (cfg.lr - lo) * (1.0 + (PI * frac).cos())
}

/// Finds the first sample of a failed batch that fails on its own.
fn blame(model: &Model, batch: &[&Sample], offsets: &[Vec<u32>], cause: Error) -> Error {
    for (s, offs) in batch.iter().zip(offsets) {
        let mut g = Graph::new();
        let res = model
            .forward_graph(&mut g, &[s])
            .and_then(|raw| model.loss_graph(&mut g, raw, &[s], std::slice::from_ref(offs)))
            .and_then(|loss| g.backward(loss).map(|_| ()));
        if let Err(e) = res {
            return Error::NonFinite(format!(
                "sample agent {} start_frame {}: {e}",
                s.agent_id, s.start_frame
            ));
        }
    }
    Error::NonFinite(format!(
        "batch with agents {:?}: {cause}",
        batch.iter().map(|s| s.agent_id).collect::<Vec<_>>()
    ))
}

/// Minibatch training. Shuffling and anchor draws use separate seeded
/// streams, so a degenerate random distribution `U{c,c}` trains exactly
/// like the fixed schedule ending at `c`.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    anchors: &AnchorSource,
    cfg: &TrainConfig,
) -> Result<Vec<LossPoint>> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("train.batch must be >= 1".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!(
            "train.lr must be a finite value >= 0, got {}",
            cfg.lr
        )));
    }
    let need = match model.config().head {
        HeadKind::Coordinates => *model.config().coord_offsets.last().expect("validated"),
        HeadKind::Polynomial => anchors.max_offset(),
    };
    if let Some(s) = samples.iter().find(|s| s.horizon() < need as usize) {
        return Err(Error::Data(format!(
            "sample of agent {} has a {}-frame future, supervision needs {need}",
            s.agent_id,
            s.horizon()
        )));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut anchor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    anchor_rng.set_stream(2);
    let mut opt: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.lr, cfg.clip)),
        OptimizerKind::Adam => Box::new(Adam::new(cfg.lr, cfg.clip)),
    };

    let per_epoch = samples.len().div_ceil(cfg.batch);
    let total = per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(total);
    let mut step = 0;
    model.params_mut().zero_grads();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let offsets: Vec<Vec<u32>> = match model.config().head {
                HeadKind::Coordinates => vec![model.config().coord_offsets.clone(); batch.len()],
                HeadKind::Polynomial => batch
                    .iter()
                    .map(|_| anchors.draw(&mut anchor_rng).map(|s| s.offsets().to_vec()))
                    .collect::<Result<_>>()?,
            };
            let mut g = Graph::new();
            let loss = model
                .forward_graph(&mut g, &batch)
                .and_then(|raw| model.loss_graph(&mut g, raw, &batch, &offsets));
            let loss = match loss {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => return Err(blame(model, &batch, &offsets, e)),
                Err(e) => return Err(e),
            };
            let value = g.value(loss).item().expect("scalar loss");
            match g.backward(loss) {
                Ok(grads) => grads.accumulate_into(model.params_mut()),
                Err(e @ Error::NonFinite(_)) => return Err(blame(model, &batch, &offsets, e)),
                Err(e) => return Err(e),
            }
            let lr = cosine_lr(cfg, step, total);
            opt.set_learning_rate(lr);
            opt.step(model.params_mut())?;
            curve.push(LossPoint {
                step,
                epoch,
                lr,
                loss: value,
            });
            step += 1;
        }
    }
    Ok(curve)
}
