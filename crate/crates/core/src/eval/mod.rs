//! Displacement metrics, least-squares extrapolation and report output.

mod fit;
mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use fit::{least_squares_fit, FitResult};
pub use report::{table1, Curve, StudyReport, TABLE1_REFERENCE};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model, ModelOutput};

/// Anything that maps samples to positions at (fractional) frame offsets.
pub trait Predictor: Sync {
    /// `out[i][k]` is the position of sample `i` at `offsets[k]`.
    fn positions(&self, samples: &[Sample], offsets: &[f64]) -> Result<Vec<Vec<[f64; 2]>>>;
}

impl Predictor for Model {
    fn positions(&self, samples: &[Sample], offsets: &[f64]) -> Result<Vec<Vec<[f64; 2]>>> {
        self.predict(samples)?
            .iter()
            .map(|out| offsets.iter().map(|&t| out.position_at(t)).collect())
            .collect()
    }
}

/// A coordinate-head model whose outputs (plus the origin) are fitted per
/// axis by a degree-`degree` least-squares polynomial and evaluated at
/// arbitrary offsets.
#[derive(Debug, Clone, Copy)]
pub struct Extrapolated<'a> {
    pub model: &'a Model,
    pub degree: usize,
}

impl Extrapolated<'_> {
    pub fn fit(&self, out: &ModelOutput) -> Result<[FitResult; 2]> {
        let ModelOutput::Coordinates(c) = out else {
            return Err(Error::invalid("extrapolation by fitting needs a coordinate-head model"));
        };
        let axis = |a: usize| -> Result<FitResult> {
            let mut pts = vec![(0.0, 0.0)];
            pts.extend(c.offsets.iter().zip(&c.points).map(|(&t, p)| (t as f64, p[a])));
            least_squares_fit(&pts, self.degree)
        };
        Ok([axis(0)?, axis(1)?])
    }
}

impl Predictor for Extrapolated<'_> {
    fn positions(&self, samples: &[Sample], offsets: &[f64]) -> Result<Vec<Vec<[f64; 2]>>> {
        if self.model.config().head != HeadKind::Coordinates {
            return Err(Error::invalid("extrapolation by fitting needs a coordinate-head model"));
        }
        self.model
            .predict(samples)?
            .iter()
            .map(|out| {
                let [fx, fy] = self.fit(out)?;
                Ok(offsets.iter().map(|&t| [fx.eval(t), fy.eval(t)]).collect())
            })
            .collect()
    }
}

/// Mean Euclidean displacement between paired positions.
pub fn ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "ade: {} predictions for {} ground-truth points",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("ade of an empty sequence"));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Per-offset error aggregates over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Frame offsets, ascending.
    pub offsets: Vec<u32>,
    /// Root-mean-square Euclidean displacement per offset (metres).
    pub rmse: Vec<f64>,
    /// Mean Euclidean displacement per offset (metres).
    pub ade: Vec<f64>,
    pub samples: usize,
    pub frame_rate: f64,
    pub fingerprint: String,
}

impl EvalReport {
    /// Mean of the per-offset displacement curve.
    pub fn mean_ade(&self) -> f64 {
        self.ade.iter().sum::<f64>() / self.ade.len() as f64
    }

    pub fn to_csv(&self, method: &str) -> String {
        let mut out = String::from("method,offset_frames,offset_s,rmse_m,ade_m\n");
        for k in 0..self.offsets.len() {
            out.push_str(&format!(
                "{method},{},{},{},{}\n",
                self.offsets[k],
                self.offsets[k] as f64 / self.frame_rate,
                self.rmse[k],
                self.ade[k]
            ));
        }
        out
    }
}

fn check_offsets(offsets: &[u32]) -> Result<()> {
    if offsets.is_empty() {
        return Err(Error::invalid("no evaluation offsets"));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "evaluation offsets must be strictly increasing: {offsets:?}"
        )));
    }
    Ok(())
}

/// Euclidean displacement per sample and offset.
pub fn displacements<P: Predictor + ?Sized>(p: &P, samples: &[Sample], offsets: &[u32]) -> Result<Vec<Vec<f64>>> {
    let max = *offsets.last().expect("checked by caller") as usize;
    if let Some(s) = samples.iter().find(|s| s.horizon() < max) {
        return Err(Error::Data(format!(
            "sample of agent {} has a {}-frame future, evaluation needs {max}",
            s.agent_id,
            s.horizon()
        )));
    }
    let ts: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    let preds = p.positions(samples, &ts)?;
    Ok(preds
        .par_iter()
        .zip(samples)
        .map(|(pred, s)| {
            pred.iter()
                .zip(offsets)
                .map(|(p, &o)| {
                    let q = s.future[o as usize];
                    (p[0] - q[0]).hypot(p[1] - q[1])
                })
                .collect()
        })
        .collect())
}

/// RMSE and mean displacement at every offset.
pub fn rmse_at_offsets<P: Predictor + ?Sized>(
    p: &P,
    samples: &[Sample],
    offsets: &[u32],
    frame_rate: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation on an empty test set".into()));
    }
    check_offsets(offsets)?;
    let d = displacements(p, samples, offsets)?;
    let n = samples.len() as f64;
    let mut rmse = vec![0.0; offsets.len()];
    let mut mean = vec![0.0; offsets.len()];
    for row in &d {
        for (k, &e) in row.iter().enumerate() {
            rmse[k] += e * e;
            mean[k] += e;
        }
    }
    Ok(EvalReport {
        offsets: offsets.to_vec(),
        rmse: rmse.iter().map(|s| (s / n).sqrt()).collect(),
        ade: mean.iter().map(|s| s / n).collect(),
        samples: samples.len(),
        frame_rate,
        fingerprint: String::new(),
    })
}

/// Mean displacement per offset over the samples whose future reaches the
/// last offset; the rest are skipped and counted.
pub fn ade_curve<P: Predictor + ?Sized>(
    p: &P,
    samples: &[Sample],
    offsets: &[u32],
    method: &str,
) -> Result<(Curve, usize)> {
    check_offsets(offsets)?;
    let max = *offsets.last().unwrap() as usize;
    let usable: Vec<Sample> = samples.iter().filter(|s| s.horizon() >= max).cloned().collect();
    let skipped = samples.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Data(format!("no sample reaches offset {max}")));
    }
    let d = displacements(p, &usable, offsets)?;
    let n = usable.len() as f64;
    let ade = (0..offsets.len())
        .map(|k| d.iter().map(|row| row[k]).sum::<f64>() / n)
        .collect();
    Ok((
        Curve {
            method: method.to_string(),
            offsets: offsets.to_vec(),
            ade,
        },
        skipped,
    ))
}

/// First 12 hex digits of SHA-256 over the sorted `key=value` lines.
pub fn fingerprint(entries: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in entries {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..12].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Perfect;

    impl Predictor for Perfect {
        fn positions(&self, samples: &[Sample], offsets: &[f64]) -> Result<Vec<Vec<[f64; 2]>>> {
            Ok(samples
                .iter()
                .map(|s| offsets.iter().map(|&t| s.future[t as usize]).collect())
                .collect())
        }
    }

    /// Always predicts a fixed point.
    struct Constant([f64; 2]);

    impl Predictor for Constant {
        fn positions(&self, samples: &[Sample], offsets: &[f64]) -> Result<Vec<Vec<[f64; 2]>>> {
            Ok(vec![vec![self.0; offsets.len()]; samples.len()])
        }
    }

    fn sample(future: Vec<[f64; 2]>) -> Sample {
        Sample {
            agent_id: 0,
            start_frame: 0,
            agents: vec![vec![[0.0; 7]]],
            future,
        }
    }

    #[test]
    fn ade_examples() {
        let a = [[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(ade(&a, &a).unwrap(), 0.0);
        assert_eq!(ade(&[[1.0, 2.0], [4.0, 4.0]], &[[0.0, 2.0], [3.0, 4.0]]).unwrap(), 1.0);
        assert_eq!(ade(&[[3.0, 4.0]], &[[0.0, 0.0]]).unwrap(), 5.0);
        assert!(ade(&a, &a[..1]).is_err());
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let s = vec![sample((0..=50).map(|k| [k as f64, 0.5 * k as f64]).collect()); 3];
        let r = rmse_at_offsets(&Perfect, &s, &[10, 20, 30, 40, 50], 10.0).unwrap();
        assert!(r.rmse.iter().chain(&r.ade).all(|&v| v == 0.0));
        assert_eq!(r.samples, 3);
    }

    #[test]
    fn single_sample_single_offset_is_the_displacement() {
        let s = vec![sample(vec![[0.0, 0.0], [3.0, 4.0]])];
        let r = rmse_at_offsets(&Constant([0.0, 0.0]), &s, &[1], 10.0).unwrap();
        assert_eq!((r.rmse[0], r.ade[0]), (5.0, 5.0));
    }

    #[test]
    fn empty_set_and_short_futures_fail() {
        assert!(rmse_at_offsets(&Perfect, &[], &[1], 10.0).is_err());
        let s = vec![sample(vec![[0.0, 0.0]; 5])];
        assert!(rmse_at_offsets(&Perfect, &s, &[10], 10.0).is_err());
        let (_, skipped) = ade_curve(&Perfect, &[s[0].clone(), sample(vec![[0.0; 2]; 12])], &[10], "p").unwrap();
        assert_eq!(skipped, 1);
    }

    #[test]
    fn fingerprint_is_order_independent_and_short() {
        let mut a = BTreeMap::new();
        a.insert("b".to_string(), "2".to_string());
        a.insert("a".to_string(), "1".to_string());
        let f = fingerprint(&a);
        assert_eq!(f.len(), 12);
        a.insert("a".to_string(), "3".to_string());
        assert_ne!(f, fingerprint(&a));
    }
}
