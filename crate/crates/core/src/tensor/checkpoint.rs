//! Plain-text parameter checkpoints.
//!
//! ```text
//! polytraj-checkpoint 1
//! meta <key> <value>
//! param <name> <trainable 0|1> <dims comma separated, `-` for scalar>
//! <values separated by spaces>
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same bits, so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Array, ParamStore};
use crate::error::{Error, Result};

const MAGIC: &str = "polytraj-checkpoint 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for p in self.params.iter() {
            let dims = if p.value.shape().is_empty() {
                "-".to_string()
            } else {
                p.value
                    .shape()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(out, "param {} {} {dims}", p.name, u8::from(p.trainable)).unwrap();
            let values: Vec<String> = p.value.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Data(format!("checkpoint line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == MAGIC => {}
            _ => return Err(bad(1, "missing checkpoint header")),
        }
        let mut ckpt = Checkpoint::default();
        while let Some((ln, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            match parts.next() {
                Some("meta") => {
                    let rest = parts.next().ok_or_else(|| bad(ln, "empty meta"))?;
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                Some("param") => {
                    let rest = parts.next().ok_or_else(|| bad(ln, "empty param header"))?;
                    let fields: Vec<&str> = rest.split(' ').collect();
                    let [name, trainable, dims] = fields[..] else {
                        return Err(bad(ln, "param header needs name, flag and dims"));
                    };
                    let shape: Vec<usize> = if dims == "-" {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(|d| d.parse().map_err(|_| bad(ln, "bad dimension")))
                            .collect::<Result<_>>()?
                    };
                    let (vln, values) = lines.next().ok_or_else(|| bad(ln, "missing values"))?;
                    let values: Vec<f64> = values
                        .split_ascii_whitespace()
                        .map(|v| v.parse().map_err(|_| bad(vln, "bad value")))
                        .collect::<Result<_>>()?;
                    let value = Array::new(&shape, values).map_err(|e| bad(vln, &e.to_string()))?;
                    match trainable {
                        "1" => ckpt.params.insert(name, value)?,
                        "0" => ckpt.params.insert_frozen(name, value)?,
                        _ => return Err(bad(ln, "trainable flag must be 0 or 1")),
                    };
                }
                _ => return Err(bad(ln, "expected `meta` or `param`")),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
