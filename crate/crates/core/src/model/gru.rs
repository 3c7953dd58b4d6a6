use rand::Rng;

use super::init_uniform;
use crate::error::Result;
use crate::tensor::{Array, Graph, ParamId, ParamStore, Var};

/// Parameter handles of one GRU layer (update `z`, reset `r`, candidate `h`).
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
}

/// The same weights bound on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wh: Var,
    pub uh: Var,
    pub bh: Var,
}

impl GruParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        units: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, rows: usize| store.insert(format!("{prefix}.{name}"), init_uniform(rows, units, rng));
        let (wz, uz) = (w("wz", input)?, w("uz", units)?);
        let (wr, ur) = (w("wr", input)?, w("ur", units)?);
        let (wh, uh) = (w("wh", input)?, w("uh", units)?);
        let mut b = |name: &str| store.insert(format!("{prefix}.{name}"), Array::zeros(&[1, units]));
        Ok(Self {
            wz,
            uz,
            bz: b("bz")?,
            wr,
            ur,
            br: b("br")?,
            wh,
            uh,
            bh: b("bh")?,
        })
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> GruWeights {
        GruWeights {
            wz: g.param(store, self.wz),
            uz: g.param(store, self.uz),
            bz: g.param(store, self.bz),
            wr: g.param(store, self.wr),
            ur: g.param(store, self.ur),
            br: g.param(store, self.br),
            wh: g.param(store, self.wh),
            uh: g.param(store, self.uh),
            bh: g.param(store, self.bh),
        }
    }
}

/// One GRU step on a batch of rows, reset gate applied before the
/// candidate's recurrent product:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r * h) Uh + bh)
/// h' = z * h + (1 - z) * h~
/// ```
pub fn gru_cell(g: &mut Graph, w: &GruWeights, x: Var, h: Var) -> Result<Var> {
    let gate = |g: &mut Graph, wx: Var, uh: Var, b: Var, h_in: Var| -> Result<Var> {
        let xw = g.matmul(x, wx)?;
        let hu = g.matmul(h_in, uh)?;
        let s = g.add(xw, hu)?;
        g.add(s, b)
    };
    let z = gate(g, w.wz, w.uz, w.bz, h)?;
    let z = g.sigmoid(z)?;
    let r = gate(g, w.wr, w.ur, w.br, h)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let cand = gate(g, w.wh, w.uh, w.bh, rh)?;
    let cand = g.tanh(cand)?;
    // z*h + (1-z)*cand == cand + z*(h - cand)
    let diff = g.sub(h, cand)?;
    let keep = g.mul(z, diff)?;
    g.add(cand, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParamStore, input: usize, units: usize, seed: u64) -> GruParams {
        GruParams::register(store, "gru", input, units, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn all_zero_weights_keep_zero_state() {
        let mut store = ParamStore::new();
        let p = layer(&mut store, 3, 4, 0);
        for param in store.iter_mut() {
            param.value.fill(0.0);
        }
        let mut g = Graph::new();
        let w = p.bind(&mut g, &store);
        let x = g.constant(Array::filled(&[2, 3], 0.7));
        let h = g.constant(Array::zeros(&[2, 4]));
        let out = gru_cell(&mut g, &w, x, h).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_update_gate_passes_state_through() {
        let mut store = ParamStore::new();
        let p = layer(&mut store, 3, 4, 1);
        store.get_mut(p.bz).value.fill(50.0);
        let mut g = Graph::new();
        let w = p.bind(&mut g, &store);
        let x = g.constant(Array::filled(&[1, 3], 0.3));
        let h0 = Array::row(&[0.5, -0.2, 0.9, -0.7]);
        let h = g.constant(h0.clone());
        let out = gru_cell(&mut g, &w, x, h).unwrap();
        for (a, b) in g.value(out).data().iter().zip(h0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let p = layer(&mut store, 3, 4, 2);
        let mut g = Graph::new();
        let w = p.bind(&mut g, &store);
        let x = g.constant(Array::zeros(&[1, 5]));
        let h = g.constant(Array::zeros(&[1, 4]));
        assert!(gru_cell(&mut g, &w, x, h).is_err());
    }
}
