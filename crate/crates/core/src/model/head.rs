use std::f64::consts::PI;

use super::{HeadKind, Model};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::poly::{PolyTrajectory, VAR_FLOOR};
use crate::tensor::{Array, Graph, Var};

/// Positions (metres) and variances at the coordinate head's offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordPrediction {
    pub offsets: Vec<u32>,
    pub points: Vec<[f64; 2]>,
    pub vars: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput {
    Coordinates(CoordPrediction),
    Polynomial(PolyTrajectory),
}

impl ModelOutput {
    /// Predicted position `t` frames ahead. Coordinate outputs are linearly
    /// interpolated between their offsets (and the origin at `t = 0`) and
    /// are undefined past the last offset.
    pub fn position_at(&self, t: f64) -> Result<[f64; 2]> {
        match self {
            ModelOutput::Polynomial(p) => {
                let at = p.at(t)?;
                Ok([at.x, at.y])
            }
            ModelOutput::Coordinates(c) => {
                if t.is_nan() || t < 0.0 {
                    return Err(Error::invalid(format!("negative time offset {t}")));
                }
                let mut prev_t = 0.0;
                let mut prev = [0.0, 0.0];
                for (&o, &p) in c.offsets.iter().zip(&c.points) {
                    let ot = o as f64;
                    if t <= ot {
                        let w = (t - prev_t) / (ot - prev_t);
                        return Ok([prev[0] + w * (p[0] - prev[0]), prev[1] + w * (p[1] - prev[1])]);
                    }
                    prev_t = ot;
                    prev = p;
                }
                Err(Error::invalid(format!(
                    "offset {t} lies beyond the coordinate head's last offset {prev_t}"
                )))
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            ModelOutput::Coordinates(_) => HeadKind::Coordinates,
            ModelOutput::Polynomial(_) => HeadKind::Polynomial,
        }
    }
}

/// `0.5 r^2 / v + 0.5 ln(2 pi v)` elementwise with `v = var + VAR_FLOOR`.
fn nll(g: &mut Graph, mean: Var, var: Var, target: Var) -> Result<Var> {
    let floor = g.input(Array::scalar(VAR_FLOOR));
    let v = g.add(var, floor)?;
    let r = g.sub(mean, target)?;
    let r2 = g.mul(r, r)?;
    let quad = g.div(r2, v)?;
    let two_pi_v = g.scale(v, 2.0 * PI)?;
    let log = g.log(two_pi_v)?;
    let sum = g.add(quad, log)?;
    g.scale(sum, 0.5)
}

impl Model {
    /// Splits raw head rows into trajectories or coordinate sets (metres).
    pub fn decode(&self, raw: &Array) -> Result<Vec<ModelOutput>> {
        let (rows, cols) = raw.dims2()?;
        if cols != self.config.output_width() {
            return Err(Error::Shape {
                op: "decode",
                lhs: raw.shape().to_vec(),
                rhs: vec![rows, self.config.output_width()],
            });
        }
        let s = self.output_scale();
        let h = self.config.horizon_frames as f64;
        (0..rows)
            .map(|r| {
                let row = raw.row_slice(r);
                match self.config.head {
                    HeadKind::Polynomial => {
                        let (dx, dy) = (self.config.d_x, self.config.d_y);
                        let coef = |vals: &[f64]| -> Vec<f64> {
                            vals.iter()
                                .enumerate()
                                .map(|(j, v)| v * s / h.powi(j as i32 + 1))
                                .collect()
                        };
                        let sig = |vals: &[f64]| -> Vec<f64> {
                            vals.iter()
                                .enumerate()
                                .map(|(j, v)| v.exp() * s / h.powi(j as i32 + 1))
                                .collect()
                        };
                        Ok(ModelOutput::Polynomial(PolyTrajectory::new(
                            coef(&row[..dx]),
                            coef(&row[dx..dx + dy]),
                            sig(&row[dx + dy..2 * dx + dy]),
                            sig(&row[2 * dx + dy..]),
                        )?))
                    }
                    HeadKind::Coordinates => {
                        let t = self.config.coord_offsets.len();
                        let points = (0..t).map(|k| [row[k] * s, row[t + k] * s]).collect();
                        let vars = (0..t)
                            .map(|k| [(row[2 * t + k].exp() * s).powi(2), (row[3 * t + k].exp() * s).powi(2)])
                            .collect();
                        Ok(ModelOutput::Coordinates(CoordPrediction {
                            offsets: self.config.coord_offsets.clone(),
                            points,
                            vars,
                        }))
                    }
                }
            })
            .collect()
    }

    /// Mean over samples of the per-sample trajectory NLL. `offsets[b]`
    /// are the supervised offsets of sample `b`; every sample needs the
    /// same count. The coordinate head only accepts its own offsets.
    pub fn loss_graph(&self, g: &mut Graph, raw: Var, samples: &[&Sample], offsets: &[Vec<u32>]) -> Result<Var> {
        let b = samples.len();
        if offsets.len() != b || b == 0 {
            return Err(Error::invalid(format!("{} offset sets for {b} samples", offsets.len())));
        }
        let t = offsets[0].len();
        if t == 0 || offsets.iter().any(|o| o.len() != t) {
            return Err(Error::invalid("every sample needs the same non-zero anchor count"));
        }
        let mut mu = [Vec::with_capacity(b * t), Vec::with_capacity(b * t)];
        for (s, offs) in samples.iter().zip(offsets) {
            for &o in offs {
                let p = s.future.get(o as usize).ok_or_else(|| {
                    Error::Data(format!(
                        "anchor offset {o} beyond the {}-frame future of agent {}",
                        s.horizon(),
                        s.agent_id
                    ))
                })?;
                mu[0].push(p[0]);
                mu[1].push(p[1]);
            }
        }
        let s = self.output_scale();
        let (means, vars) = match self.config.head {
            HeadKind::Coordinates => {
                if offsets.iter().any(|o| *o != self.config.coord_offsets) {
                    return Err(Error::invalid("coordinate head is supervised only at its own offsets"));
                }
                let mut means = Vec::new();
                let mut vars = Vec::new();
                for axis in 0..2 {
                    let m = g.slice_cols(raw, axis * t, (axis + 1) * t)?;
                    means.push(g.scale(m, s)?);
                    let ls = g.slice_cols(raw, (2 + axis) * t, (3 + axis) * t)?;
                    let ls2 = g.scale(ls, 2.0)?;
                    let e = g.exp(ls2)?;
                    vars.push(g.scale(e, s * s)?);
                }
                (means, vars)
            }
            HeadKind::Polynomial => {
                let h = self.config.horizon_frames as f64;
                let degrees = [self.config.d_x, self.config.d_y];
                let mut means = Vec::new();
                let mut vars = Vec::new();
                let mut col = 0;
                let mut sig_col = self.config.d_x + self.config.d_y;
                for &d in &degrees {
                    let mut mean: Option<Var> = None;
                    let mut var: Option<Var> = None;
                    for j in 1..=d {
                        let basis: Vec<f64> = offsets
                            .iter()
                            .flatten()
                            .map(|&o| (o as f64 / h).powi(j as i32))
                            .collect();
                        let sq: Vec<f64> = basis.iter().map(|v| v * v * s * s).collect();
                        let basis = g.input(Array::new(&[b, t], basis.iter().map(|v| v * s).collect())?);
                        let sq = g.input(Array::new(&[b, t], sq)?);
                        let c = g.slice_cols(raw, col, col + 1)?;
                        let term = g.mul(c, basis)?;
                        mean = Some(match mean {
                            Some(m) => g.add(m, term)?,
                            None => term,
                        });
                        let ls = g.slice_cols(raw, sig_col, sig_col + 1)?;
                        let ls2 = g.scale(ls, 2.0)?;
                        let e = g.exp(ls2)?;
                        let vt = g.mul(e, sq)?;
                        var = Some(match var {
                            Some(v) => g.add(v, vt)?,
                            None => vt,
                        });
                        col += 1;
                        sig_col += 1;
                    }
                    means.push(mean.expect("degree >= 1"));
                    vars.push(var.expect("degree >= 1"));
                }
                (means, vars)
            }
        };
        let [mx, my] = mu;
        let tx = g.input(Array::new(&[b, t], mx)?);
        let ty = g.input(Array::new(&[b, t], my)?);
        let lx = nll(g, means[0], vars[0], tx)?;
        let ly = nll(g, means[1], vars[1], ty)?;
        let total = g.add(lx, ly)?;
        g.mean(total)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_sample;
    use super::super::{ModelConfig, Normalizer};
    use super::*;
    use crate::anchoring::AnchorSchedule;
    use crate::poly::trajectory_loss;

    fn model(head: HeadKind, scale: f64) -> Model {
        let cfg = ModelConfig {
            head,
            units: 5,
            d_x: 2,
            d_y: 3,
            coord_offsets: vec![10, 20, 30],
            ..ModelConfig::default()
        };
        let norm = Normalizer {
            scale,
            ..Normalizer::identity()
        };
        Model::new(cfg, &norm, 21).unwrap()
    }

    #[test]
    fn graph_loss_matches_trajectory_loss() {
        let m = model(HeadKind::Polynomial, 30.0);
        let samples: Vec<Sample> = (0..3).map(|i| tiny_sample(i, 1, 4, i + 10)).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let offsets = vec![vec![5, 10, 21], vec![3, 40, 55], vec![1, 2, 60]];
        let mut g = Graph::new();
        let raw = m.forward_graph(&mut g, &refs).unwrap();
        let loss = m.loss_graph(&mut g, raw, &refs, &offsets).unwrap();
        let outs = m.decode(g.value(raw)).unwrap();
        let mut expected = 0.0;
        for ((out, s), offs) in outs.iter().zip(&samples).zip(&offsets) {
            let ModelOutput::Polynomial(p) = out else { panic!() };
            let sched = AnchorSchedule::new(offs.clone()).unwrap();
            expected += trajectory_loss(p, &s.future, &sched).unwrap();
        }
        expected /= 3.0;
        let got = g.value(loss).item().unwrap();
        assert!(
            (got - expected).abs() < 1e-9 * expected.abs().max(1.0),
            "{got} vs {expected}"
        );
    }

    #[test]
    fn coordinate_loss_uses_decoded_points() {
        let m = model(HeadKind::Coordinates, 7.0);
        let s = tiny_sample(0, 2, 3, 1);
        let mut g = Graph::new();
        let raw = m.forward_graph(&mut g, &[&s]).unwrap();
        let loss = m.loss_graph(&mut g, raw, &[&s], &[vec![10, 20, 30]]).unwrap();
        let ModelOutput::Coordinates(c) = m.decode(g.value(raw)).unwrap().remove(0) else {
            panic!()
        };
        let mut expected = 0.0;
        for k in 0..3 {
            let truth = s.future[c.offsets[k] as usize];
            for (axis, &y) in truth.iter().enumerate() {
                expected += crate::poly::gaussian_nll(c.points[k][axis], c.vars[k][axis], y).unwrap();
            }
        }
        expected /= 3.0;
        let got = g.value(loss).item().unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!(m.loss_graph(&mut g, raw, &[&s], &[vec![10, 20, 40]]).is_err());
    }

    #[test]
    fn anchor_beyond_future_is_an_error() {
        let m = model(HeadKind::Polynomial, 1.0);
        let s = tiny_sample(0, 0, 2, 0);
        let mut g = Graph::new();
        let raw = m.forward_graph(&mut g, &[&s]).unwrap();
        let err = m.loss_graph(&mut g, raw, &[&s], &[vec![61]]).unwrap_err().to_string();
        assert!(err.contains("61"), "{err}");
    }

    #[test]
    fn coordinate_interpolation() {
        let out = ModelOutput::Coordinates(CoordPrediction {
            offsets: vec![10, 20],
            points: vec![[1.0, 10.0], [3.0, 30.0]],
            vars: vec![[0.0; 2]; 2],
        });
        assert_eq!(out.position_at(0.0).unwrap(), [0.0, 0.0]);
        assert_eq!(out.position_at(5.0).unwrap(), [0.5, 5.0]);
        assert_eq!(out.position_at(15.0).unwrap(), [2.0, 20.0]);
        assert_eq!(out.position_at(20.0).unwrap(), [3.0, 30.0]);
        assert!(out.position_at(21.0).is_err());
    }
}
